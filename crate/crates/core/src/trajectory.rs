use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose2D};

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("timestamps must be strictly increasing (sample {index}: {prev} then {next})")]
    NotIncreasing { index: usize, prev: f64, next: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2D,
}

/// Timestamped pose sequence with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(samples: Vec<TimedPose>) -> Result<Self, TrajectoryError> {
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.pose.is_finite()) {
                return Err(TrajectoryError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(TrajectoryError::NotIncreasing {
                    index: i,
                    prev: samples[i - 1].t,
                    next: s.t,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TimedPose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&TimedPose> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TimedPose> {
        self.samples.last()
    }

    /// `[t_first, t_last]`, or `None` when empty.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Linearly interpolated position at `t`; `None` outside the span.
    pub fn position_at(&self, t: f64) -> Option<Point2> {
        let (t0, t1) = self.span()?;
        if t < t0 || t > t1 {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t < t);
        let b = &self.samples[i];
        if b.t == t || i == 0 {
            return Some(b.pose.position());
        }
        let a = &self.samples[i - 1];
        let s = (t - a.t) / (b.t - a.t);
        Some(a.pose.position().lerp(b.pose.position(), s))
    }

    /// Applies a rigid translation to every pose.
    pub fn translated(&self, offset: Point2) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TimedPose {
                    t: s.t,
                    pose: Pose2D::new(s.pose.x + offset.x, s.pose.y + offset.y, s.pose.theta),
                })
                .collect(),
        }
    }
}
