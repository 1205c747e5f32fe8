//! Synthetic floors, access point placement and ground-truth motion.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, normalize_angle, Point2, Pose2D};
use crate::grid::{CellState, GridError, GridGeometry, OccupancyGrid};
use crate::rng::rng_from_seed;
use crate::trajectory::{TimedPose, Trajectory};

pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("corridor {width} m is narrower than 3 cells at {resolution} m/cell")]
    CorridorTooNarrow { width: f64, resolution: f64 },
    #[error("outer rectangle leaves no inner block (needs more than {needed} m per side)")]
    NoInnerBlock { needed: f64 },
    #[error("path needs at least two waypoints")]
    TooFewWaypoints,
    #[error("waypoint {index} at ({x:.3}, {y:.3}) is not in free space")]
    WaypointBlocked { index: usize, x: f64, y: f64 },
    #[error("segment {index} from ({:.3}, {:.3}) to ({:.3}, {:.3}) crosses a wall", from.x, from.y, to.x, to.y)]
    SegmentBlocked {
        index: usize,
        from: Point2,
        to: Point2,
    },
    #[error("segment {index} has zero length")]
    DegenerateSegment { index: usize },
    #[error("access point count must be at least 1")]
    NoAccessPoints,
    #[error("requested {requested} access points but only {available} cells are available")]
    TooManyAccessPoints { requested: usize, available: usize },
    #[error("path loss exponent range [{0}, {1}] is outside [1.5, 6.0]")]
    BadPathLossExponent(f64, f64),
    #[error("grid has no free cells")]
    NoFreeSpace,
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn positive(field: &'static str, value: f64) -> Result<f64, WorldError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(WorldError::NonPositive { field, value })
    }
}

/// A rectangular ring corridor: outer walls, a loop of free space, and a
/// solid inner block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSpec {
    pub outer_width: f64,
    pub outer_height: f64,
    pub corridor_width: f64,
    pub wall_thickness: f64,
}

impl CorridorSpec {
    /// Corridor centerline as a closed loop starting at the lower-left corner
    /// and running counter-clockwise. The last waypoint repeats the first.
    pub fn centerline(&self) -> Vec<Point2> {
        let inset = self.wall_thickness + 0.5 * self.corridor_width;
        let (x0, y0) = (inset, inset);
        let (x1, y1) = (self.outer_width - inset, self.outer_height - inset);
        vec![
            Point2::new(x0, y0),
            Point2::new(x1, y0),
            Point2::new(x1, y1),
            Point2::new(x0, y1),
            Point2::new(x0, y0),
        ]
    }
}

pub fn build_floor(spec: &CorridorSpec, resolution: f64) -> Result<OccupancyGrid, WorldError> {
    let res = positive("resolution", resolution)?;
    let w = positive("outer_width", spec.outer_width)?;
    let h = positive("outer_height", spec.outer_height)?;
    let c = positive("corridor_width", spec.corridor_width)?;
    let t = positive("wall_thickness", spec.wall_thickness)?;
    if c < 3.0 * res - 1e-12 {
        return Err(WorldError::CorridorTooNarrow {
            width: c,
            resolution: res,
        });
    }
    let needed = 2.0 * (t + c);
    if w <= needed || h <= needed {
        return Err(WorldError::NoInnerBlock { needed });
    }
    let geometry = GridGeometry::new(
        (w / res).round() as usize,
        (h / res).round() as usize,
        res,
        Point2::default(),
    )?;
    let inside = |v: f64, lo: f64, hi: f64| v > lo && v < hi;
    let mut grid = OccupancyGrid::filled(geometry, CellState::Wall);
    for iy in 0..geometry.height_cells {
        for ix in 0..geometry.width_cells {
            let p = geometry.cell_center(ix, iy);
            let in_outer = inside(p.x, t, w - t) && inside(p.y, t, h - t);
            let in_inner = inside(p.x, t + c, w - t - c) && inside(p.y, t + c, h - t - c);
            if in_outer && !in_inner {
                grid.set(ix, iy, CellState::Free);
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: usize,
    pub position: Point2,
    /// Received power at the 1 m reference distance.
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApLayout {
    Perimeter,
    UniformRandom,
}

/// Ranges the per-AP radio parameters are drawn from (uniformly).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioRanges {
    pub tx_power_dbm: [f64; 2],
    pub path_loss_exponent: [f64; 2],
}

impl Default for RadioRanges {
    fn default() -> Self {
        Self {
            tx_power_dbm: [-40.0, -40.0],
            path_loss_exponent: [2.5, 2.5],
        }
    }
}

fn draw(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

pub fn place_aps(
    grid: &OccupancyGrid,
    count: usize,
    layout: ApLayout,
    radio: &RadioRanges,
    seed: u64,
) -> Result<Vec<AccessPoint>, WorldError> {
    if count == 0 {
        return Err(WorldError::NoAccessPoints);
    }
    let [n_lo, n_hi] = radio.path_loss_exponent;
    if n_lo < 1.5 || n_hi > 6.0 || n_lo > n_hi {
        return Err(WorldError::BadPathLossExponent(n_lo, n_hi));
    }
    let mut rng = rng_from_seed(seed);
    let g = &grid.geometry;
    let positions = match layout {
        ApLayout::Perimeter => {
            let (lo, hi) = free_bounding_box(grid).ok_or(WorldError::NoFreeSpace)?;
            // midway between the grid border and the free-space boundary
            let x0 = 0.5 * (g.origin.x + lo.x);
            let y0 = 0.5 * (g.origin.y + lo.y);
            let x1 = 0.5 * (g.origin.x + g.width_m() + hi.x);
            let y1 = 0.5 * (g.origin.y + g.height_m() + hi.y);
            let (w, h) = (x1 - x0, y1 - y0);
            let perimeter = 2.0 * (w + h);
            let available = (perimeter / g.resolution).floor() as usize;
            if count > available {
                return Err(WorldError::TooManyAccessPoints {
                    requested: count,
                    available,
                });
            }
            (0..count)
                .map(|k| {
                    let s = (k as f64 + 0.5) * perimeter / count as f64;
                    if s < w {
                        Point2::new(x0 + s, y0)
                    } else if s < w + h {
                        Point2::new(x1, y0 + (s - w))
                    } else if s < 2.0 * w + h {
                        Point2::new(x1 - (s - w - h), y1)
                    } else {
                        Point2::new(x0, y1 - (s - 2.0 * w - h))
                    }
                })
                .collect::<Vec<_>>()
        }
        ApLayout::UniformRandom => {
            let free: Vec<usize> = grid
                .cells()
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == CellState::Free)
                .map(|(i, _)| i)
                .collect();
            if count > free.len() {
                return Err(WorldError::TooManyAccessPoints {
                    requested: count,
                    available: free.len(),
                });
            }
            let mut picks = index::sample(&mut rng, free.len(), count).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|k| {
                    let i = free[k];
                    g.cell_center(i % g.width_cells, i / g.width_cells)
                })
                .collect()
        }
    };
    Ok(positions
        .into_iter()
        .enumerate()
        .map(|(id, position)| AccessPoint {
            id,
            position,
            tx_power_dbm: draw(&mut rng, radio.tx_power_dbm),
            path_loss_exponent: draw(&mut rng, radio.path_loss_exponent),
        })
        .collect())
}

/// Lower-left corner of the lowest free cell and upper-right corner of the highest.
fn free_bounding_box(grid: &OccupancyGrid) -> Option<(Point2, Point2)> {
    let g = &grid.geometry;
    let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
    let mut any = false;
    for (ix, iy, c) in grid.iter_cells() {
        if c == CellState::Free {
            any = true;
            lo = (lo.0.min(ix), lo.1.min(iy));
            hi = (hi.0.max(ix), hi.1.max(iy));
        }
    }
    any.then(|| {
        let r = g.resolution;
        (
            Point2::new(g.origin.x + lo.0 as f64 * r, g.origin.y + lo.1 as f64 * r),
            Point2::new(
                g.origin.x + (hi.0 + 1) as f64 * r,
                g.origin.y + (hi.1 + 1) as f64 * r,
            ),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub t: f64,
    pub pose: Pose2D,
    /// Signed linear speed along the heading.
    pub v: f64,
    pub omega: f64,
    /// Tangential acceleration.
    pub a: f64,
}

pub fn truth_trajectory(samples: &[GroundTruthSample]) -> Trajectory {
    Trajectory::new(
        samples
            .iter()
            .map(|s| TimedPose { t: s.t, pose: s.pose })
            .collect(),
    )
    .expect("ground truth timestamps are strictly increasing")
}

/// Speed profile of the simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionProfile {
    pub cruise_speed: f64,
    pub accel_limit: f64,
    /// Rotate-in-place rate at corners (rad/s).
    pub turn_rate: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            cruise_speed: 0.5,
            accel_limit: 0.5,
            turn_rate: std::f64::consts::FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Straight {
        start: Point2,
        end: Point2,
        heading: f64,
        length: f64,
        t_acc: f64,
        t_cruise: f64,
        v_peak: f64,
        accel: f64,
    },
    Rotate {
        at: Point2,
        theta0: f64,
        rate: f64,
    },
}

struct TimedPhase {
    start: f64,
    duration: f64,
    phase: Phase,
}

impl Phase {
    fn sample(&self, tau: f64, duration: f64) -> (Pose2D, f64, f64, f64) {
        match *self {
            Phase::Straight {
                start,
                end,
                heading,
                length,
                t_acc,
                t_cruise,
                v_peak,
                accel,
            } => {
                let d_acc = 0.5 * accel * t_acc * t_acc;
                let (s, v, a) = if tau < t_acc {
                    (0.5 * accel * tau * tau, accel * tau, accel)
                } else if tau < t_acc + t_cruise {
                    (d_acc + v_peak * (tau - t_acc), v_peak, 0.0)
                } else if tau < duration {
                    let td = tau - t_acc - t_cruise;
                    (
                        d_acc + v_peak * t_cruise + v_peak * td - 0.5 * accel * td * td,
                        v_peak - accel * td,
                        -accel,
                    )
                } else {
                    (length, 0.0, 0.0)
                };
                let p = if s >= length {
                    end
                } else {
                    start.lerp(end, s / length)
                };
                (Pose2D::new(p.x, p.y, heading), v, 0.0, a)
            }
            Phase::Rotate { at, theta0, rate } => (
                Pose2D::new(at.x, at.y, theta0 + rate * tau),
                0.0,
                rate,
                0.0,
            ),
        }
    }
}

/// Piecewise-linear drive through `waypoints`: trapezoidal speed on each
/// straight segment (stopping at its end), rotate-in-place at corners, sampled
/// every `dt` seconds.
pub fn generate_path(
    grid: &OccupancyGrid,
    waypoints: &[Point2],
    profile: &MotionProfile,
    dt: f64,
) -> Result<Vec<GroundTruthSample>, WorldError> {
    let dt = positive("dt", dt)?;
    let cruise = positive("cruise_speed", profile.cruise_speed)?;
    let accel = positive("accel_limit", profile.accel_limit)?;
    let turn_rate = positive("turn_rate", profile.turn_rate)?;
    if waypoints.len() < 2 {
        return Err(WorldError::TooFewWaypoints);
    }
    for (index, w) in waypoints.iter().enumerate() {
        if !grid.is_free(*w) {
            return Err(WorldError::WaypointBlocked {
                index,
                x: w.x,
                y: w.y,
            });
        }
    }

    let mut phases: Vec<TimedPhase> = Vec::new();
    let mut clock = 0.0;
    let mut prev_heading: Option<f64> = None;
    for (index, pair) in waypoints.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        let length = from.distance(to);
        if length == 0.0 {
            return Err(WorldError::DegenerateSegment { index });
        }
        if grid.segment_hits_wall(from, to) {
            return Err(WorldError::SegmentBlocked { index, from, to });
        }
        let d = to - from;
        let heading = d.y.atan2(d.x);
        if let Some(h0) = prev_heading {
            let turn = angle_diff(heading, h0);
            if turn.abs() > 1e-12 {
                let duration = turn.abs() / turn_rate;
                phases.push(TimedPhase {
                    start: clock,
                    duration,
                    phase: Phase::Rotate {
                        at: from,
                        theta0: h0,
                        rate: turn.signum() * turn_rate,
                    },
                });
                clock += duration;
            }
        }
        let (v_peak, t_cruise) = if length >= cruise * cruise / accel {
            (cruise, (length - cruise * cruise / accel) / cruise)
        } else {
            ((length * accel).sqrt(), 0.0)
        };
        let t_acc = v_peak / accel;
        let duration = 2.0 * t_acc + t_cruise;
        phases.push(TimedPhase {
            start: clock,
            duration,
            phase: Phase::Straight {
                start: from,
                end: to,
                heading,
                length,
                t_acc,
                t_cruise,
                v_peak,
                accel,
            },
        });
        clock += duration;
        prev_heading = Some(heading);
    }

    let total = clock;
    let final_heading = prev_heading.expect("at least one segment");
    let last = *waypoints.last().expect("at least two waypoints");
    let steps = (total / dt - 1e-9).ceil().max(0.0) as usize;
    let mut cursor = 0;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        while cursor < phases.len() && t >= phases[cursor].start + phases[cursor].duration {
            cursor += 1;
        }
        let (pose, v, omega, a) = match phases.get(cursor) {
            Some(p) if k < steps => p.phase.sample(t - p.start, p.duration),
            _ => (Pose2D::new(last.x, last.y, final_heading), 0.0, 0.0, 0.0),
        };
        out.push(GroundTruthSample {
            t,
            pose: Pose2D::new(pose.x, pose.y, normalize_angle(pose.theta)),
            v,
            omega,
            a,
        });
    }
    Ok(out)
}

/// Total length of a waypoint polyline.
pub fn polyline_length(waypoints: &[Point2]) -> f64 {
    waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
}
