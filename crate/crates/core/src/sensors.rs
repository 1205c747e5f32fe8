//! Simulated Wi-Fi RSSI, IMU and 2D LiDAR measurements.
//!
//! All functions take an explicit random stream and consume a fixed number of
//! draws per call regardless of outcomes, so streams stay aligned across
//! configurations.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Pose2D};
use crate::grid::{CellState, OccupancyGrid};
use crate::world::{AccessPoint, GroundTruthSample};

/// Reading used for an AP that is not heard.
pub const MISSING_RSSI: f64 = -110.0;
/// Readings below this level are reported as [`MISSING_RSSI`].
pub const DETECTION_FLOOR_DBM: f64 = -105.0;
pub const REFERENCE_DISTANCE_M: f64 = 1.0;
const MIN_DISTANCE_M: f64 = 0.1;
const MAX_READING_DBM: f64 = -1.0;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    PoseNotFree { x: f64, y: f64 },
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("a scan needs at least 2 beams, got {0}")]
    TooFewBeams(usize),
    #[error("{0} must be a probability")]
    BadProbability(&'static str),
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

fn require_free(grid: &OccupancyGrid, pose: &Pose2D) -> Result<(), SensorError> {
    if grid.state_at(pose.position()) == CellState::Wall || !pose.is_finite() {
        return Err(SensorError::PoseNotFree {
            x: pose.x,
            y: pose.y,
        });
    }
    Ok(())
}

/// One RSSI scan over all APs, dBm, with [`MISSING_RSSI`] for unheard APs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiVector(pub Vec<f64>);

impl RssiVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn heard(&self) -> usize {
        self.0.iter().filter(|&&v| v != MISSING_RSSI).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RssiParams {
    /// Log-normal shadowing standard deviation (dB).
    pub shadowing_sigma: f64,
    /// Attenuation per wall crossed (dB).
    pub wall_loss_db: f64,
    pub dropout_prob: f64,
}

impl Default for RssiParams {
    fn default() -> Self {
        Self {
            shadowing_sigma: 4.0,
            wall_loss_db: 6.0,
            dropout_prob: 0.02,
        }
    }
}

/// Noise-free log-distance path loss for one AP, before the detection floor.
pub fn mean_rssi(ap: &AccessPoint, grid: &OccupancyGrid, at: Point2, wall_loss_db: f64) -> f64 {
    let d = at.distance(ap.position).max(MIN_DISTANCE_M);
    let walls = grid.walls_crossed(at, ap.position) as f64;
    ap.tx_power_dbm
        - 10.0 * ap.path_loss_exponent * (d / REFERENCE_DISTANCE_M).log10()
        - wall_loss_db * walls
}

pub fn simulate_rssi(
    aps: &[AccessPoint],
    grid: &OccupancyGrid,
    pose: &Pose2D,
    params: &RssiParams,
    rng: &mut impl Rng,
) -> Result<RssiVector, SensorError> {
    require_free(grid, pose)?;
    if !(0.0..=1.0).contains(&params.dropout_prob) {
        return Err(SensorError::BadProbability("dropout_prob"));
    }
    let at = pose.position();
    Ok(RssiVector(
        aps.iter()
            .map(|ap| {
                let noise = gaussian(rng, params.shadowing_sigma);
                let dropped = rng.random::<f64>() < params.dropout_prob;
                let value = mean_rssi(ap, grid, at, params.wall_loss_db) + noise;
                if dropped || value < DETECTION_FLOOR_DBM {
                    MISSING_RSSI
                } else {
                    value.min(MAX_READING_DBM)
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in the body frame (x forward), m/s^2.
    pub accel: [f64; 3],
    /// Angular rate in the body frame, rad/s.
    pub gyro: [f64; 3],
}

/// Additive bias and white-noise model: `m = m_true + b + n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuErrorModel {
    pub bias_accel: [f64; 3],
    pub bias_gyro: [f64; 3],
    pub sigma_accel: f64,
    pub sigma_gyro: f64,
}

/// Resamples truth to `f_imu` and applies the error model. The planar motion
/// maps onto body-x acceleration and body-z yaw rate.
pub fn simulate_imu(
    truth: &[GroundTruthSample],
    model: &ImuErrorModel,
    f_imu: f64,
    rng: &mut impl Rng,
) -> Result<Vec<ImuSample>, SensorError> {
    let (first, last) = match (truth.first(), truth.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(SensorError::EmptyTruth),
    };
    if !(f_imu > 0.0 && f_imu.is_finite()) {
        return Err(SensorError::NonPositive {
            field: "f_imu",
            value: f_imu,
        });
    }
    let t0 = first.t;
    let n = ((last.t - t0) * f_imu - 1e-9).ceil().max(0.0) as usize;
    let mut cursor = 0;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = t0 + k as f64 / f_imu;
        while cursor + 1 < truth.len() && truth[cursor + 1].t <= t {
            cursor += 1;
        }
        let (a_true, w_true) = match truth.get(cursor + 1) {
            Some(next) if t > truth[cursor].t => {
                let cur = &truth[cursor];
                let s = (t - cur.t) / (next.t - cur.t);
                (
                    cur.a + (next.a - cur.a) * s,
                    cur.omega + (next.omega - cur.omega) * s,
                )
            }
            _ => (truth[cursor].a, truth[cursor].omega),
        };
        let truth_accel = [a_true, 0.0, 0.0];
        let truth_gyro = [0.0, 0.0, w_true];
        let mut accel = [0.0; 3];
        let mut gyro = [0.0; 3];
        for i in 0..3 {
            accel[i] = truth_accel[i] + model.bias_accel[i] + gaussian(rng, model.sigma_accel);
        }
        for i in 0..3 {
            gyro[i] = truth_gyro[i] + model.bias_gyro[i] + gaussian(rng, model.sigma_gyro);
        }
        out.push(ImuSample { t, accel, gyro });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub t: f64,
    /// Beam angles in the sensor frame, strictly increasing.
    pub angles: Vec<f64>,
    /// Ranges in `(0, max_range]`; `max_range` means no return.
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn is_hit(&self, beam: usize) -> bool {
        self.ranges[beam] < self.max_range
    }

    pub fn hits(&self) -> usize {
        (0..self.ranges.len()).filter(|&i| self.is_hit(i)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub beams: usize,
    /// Field of view (rad); a full turn spaces beams over `[-pi, pi)`.
    pub fov: f64,
    pub max_range: f64,
    pub range_sigma: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beams: 360,
            fov: 2.0 * PI,
            max_range: 3.5,
            range_sigma: 0.01,
        }
    }
}

impl LidarConfig {
    pub fn beam_angles(&self) -> Vec<f64> {
        let k = self.beams;
        if self.fov >= 2.0 * PI - 1e-12 {
            (0..k)
                .map(|i| -PI + 2.0 * PI * i as f64 / k as f64)
                .collect()
        } else {
            (0..k)
                .map(|i| -0.5 * self.fov + self.fov * i as f64 / (k - 1) as f64)
                .collect()
        }
    }
}

/// Casts every beam through `grid` from `pose`. Beams that find no wall within
/// `max_range` report exactly `max_range`; returns get Gaussian noise and are
/// clamped into `(0, max_range]`.
pub fn simulate_lidar(
    grid: &OccupancyGrid,
    pose: &Pose2D,
    config: &LidarConfig,
    t: f64,
    rng: &mut impl Rng,
) -> Result<LidarScan, SensorError> {
    require_free(grid, pose)?;
    if config.beams < 2 {
        return Err(SensorError::TooFewBeams(config.beams));
    }
    if !(config.max_range > 0.0) {
        return Err(SensorError::NonPositive {
            field: "max_range",
            value: config.max_range,
        });
    }
    if !(config.fov > 0.0 && config.fov <= 2.0 * PI + 1e-12) {
        return Err(SensorError::NonPositive {
            field: "fov",
            value: config.fov,
        });
    }
    let angles = config.beam_angles();
    let origin = pose.position();
    let floor = 1e-3_f64.min(config.max_range);
    let ranges = angles
        .iter()
        .map(|&a| {
            let noise = gaussian(rng, config.range_sigma);
            match grid.cast_ray(origin, pose.theta + a, config.max_range) {
                Some(r) => (r + noise).clamp(floor, config.max_range),
                None => config.max_range,
            }
        })
        .collect();
    Ok(LidarScan {
        t,
        angles,
        ranges,
        max_range: config.max_range,
    })
}
