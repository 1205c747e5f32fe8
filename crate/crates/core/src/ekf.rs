//! Extended Kalman filter over `[x, y, theta, v, omega]` with IMU-driven
//! prediction and planar position updates.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::sensors::ImuSample;
use crate::trajectory::{TimedPose, Trajectory, TrajectoryError};

pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type Vector5 = SVector<f64, 5>;
type Matrix2x5 = SMatrix<f64, 2, 5>;

/// Chi-square 99% quantile with two degrees of freedom.
pub const DEFAULT_GATE: f64 = 9.21;

#[derive(Debug, Error)]
pub enum EkfError {
    #[error("non-finite {0} passed to the filter")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("innovation covariance is singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("IMU stream is empty")]
    EmptyImu,
    #[error("IMU timestamps out of order at sample {0}")]
    ImuOutOfOrder(usize),
    #[error("observation {0} is out of time order")]
    ObservationOutOfOrder(usize),
    #[error("observation at t = {t} lies outside the IMU span [{start}, {end}]")]
    ObservationOutsideImu { t: f64, start: f64, end: f64 },
    #[error("IMU rate must be positive, got {0}")]
    BadRate(f64),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl StateVector {
    pub fn new(x: f64, y: f64, theta: f64, v: f64, omega: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
            v,
            omega,
        }
    }

    pub fn to_vector(self) -> Vector5 {
        Vector5::new(self.x, self.y, self.theta, self.v, self.omega)
    }

    pub fn from_vector(v: &Vector5) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Body-x linear acceleration (m/s^2).
    pub a: f64,
    /// Measured yaw rate (rad/s).
    pub omega_meas: f64,
}

impl ControlInput {
    pub fn from_imu(sample: &ImuSample) -> Self {
        Self {
            a: sample.accel[0],
            omega_meas: sample.gyro[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Process noise per second; scaled by `dt` at each prediction.
    pub q: Matrix5,
    /// Position observation covariance.
    pub r: Matrix2<f64>,
}

impl NoiseConfig {
    pub fn diagonal(q_diag: [f64; 5], sigma_obs: f64) -> Self {
        Self {
            q: Matrix5::from_diagonal(&Vector5::from(q_diag)),
            r: Matrix2::identity() * (sigma_obs * sigma_obs),
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::diagonal([1e-4, 1e-4, 1e-5, 1e-2, 1e-3], 0.8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationSource {
    Wifi,
    ScanMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionObservation {
    pub t: f64,
    pub z: Point2,
    pub source: ObservationSource,
}

fn symmetrize(p: &Matrix5) -> Matrix5 {
    (p + p.transpose()) * 0.5
}

/// The motion model: constant acceleration over `dt`, yaw rate replaced by
/// the measurement.
pub fn transition(state: &StateVector, u: &ControlInput, dt: f64) -> StateVector {
    let (s, c) = state.theta.sin_cos();
    StateVector::new(
        state.x + state.v * dt * c,
        state.y + state.v * dt * s,
        state.theta + state.omega * dt,
        state.v + u.a * dt,
        u.omega_meas,
    )
}

/// Jacobian of [`transition`] with respect to the state.
pub fn jacobian_f(state: &StateVector, dt: f64) -> Matrix5 {
    let (s, c) = state.theta.sin_cos();
    let v = state.v;
    #[rustfmt::skip]
    let f = Matrix5::new(
        1.0, 0.0, -v * dt * s, dt * c, 0.0,
        0.0, 1.0,  v * dt * c, dt * s, 0.0,
        0.0, 0.0, 1.0,         0.0,    dt,
        0.0, 0.0, 0.0,         1.0,    0.0,
        0.0, 0.0, 0.0,         0.0,    0.0,
    );
    f
}

pub fn predict(
    state: &StateVector,
    p: &Matrix5,
    u: &ControlInput,
    dt: f64,
    q: &Matrix5,
) -> Result<(StateVector, Matrix5), EkfError> {
    if !state.is_finite() {
        return Err(EkfError::NonFinite("state"));
    }
    if !(u.a.is_finite() && u.omega_meas.is_finite()) {
        return Err(EkfError::NonFinite("control input"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EkfError::BadTimeStep(dt));
    }
    let f = jacobian_f(state, dt);
    let p_next = symmetrize(&(f * p * f.transpose() + q * dt));
    Ok((transition(state, u, dt), p_next))
}

fn observation_matrix() -> Matrix2x5 {
    Matrix2x5::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub state: StateVector,
    pub p: Matrix5,
    pub innovation: Vector2<f64>,
    /// Squared Mahalanobis distance of the innovation.
    pub mahalanobis: f64,
    pub accepted: bool,
}

/// Position update. With `gate` set, observations whose squared Mahalanobis
/// distance exceeds it are rejected and the state is returned unchanged.
pub fn update(
    state: &StateVector,
    p: &Matrix5,
    obs: &PositionObservation,
    r: &Matrix2<f64>,
    gate: Option<f64>,
) -> Result<UpdateOutcome, EkfError> {
    if !obs.z.is_finite() {
        return Err(EkfError::NonFinite("observation"));
    }
    let h = observation_matrix();
    let x = state.to_vector();
    let innovation = Vector2::new(obs.z.x, obs.z.y) - h * x;
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse().filter(|m| m.iter().all(|v| v.is_finite()));
    let Some(s_inv) = s_inv else {
        let sv = s.singular_values();
        return Err(EkfError::SingularInnovation {
            condition: sv.max() / sv.min(),
        });
    };
    let mahalanobis = (innovation.transpose() * s_inv * innovation)[0];
    if gate.is_some_and(|g| mahalanobis > g) {
        return Ok(UpdateOutcome {
            state: *state,
            p: *p,
            innovation,
            mahalanobis,
            accepted: false,
        });
    }
    let k = p * h.transpose() * s_inv;
    let x_new = x + k * innovation;
    let p_new = symmetrize(&((Matrix5::identity() - k * h) * p));
    Ok(UpdateOutcome {
        state: StateVector::from_vector(&x_new),
        p: p_new,
        innovation,
        mahalanobis,
        accepted: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedSample {
    pub t: f64,
    pub state: StateVector,
    pub p_xx: f64,
    pub p_yy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum FilterEvent {
    Update {
        t: f64,
        obs_t: f64,
        source: ObservationSource,
        innovation_norm: f64,
        mahalanobis: f64,
        accepted: bool,
    },
    ImuGap {
        t: f64,
        gap: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub samples: Vec<FusedSample>,
    pub events: Vec<FilterEvent>,
}

impl FusionOutput {
    pub fn trajectory(&self) -> Result<Trajectory, TrajectoryError> {
        Trajectory::new(
            self.samples
                .iter()
                .map(|s| TimedPose {
                    t: s.t,
                    pose: s.state.pose(),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub noise: NoiseConfig,
    pub f_imu: f64,
    pub gate: Option<f64>,
}

/// Predicts at every IMU sample and applies each observation once its
/// timestamp is reached (within half an IMU period). Emits the posterior
/// state at every IMU timestamp.
pub fn fuse_run(
    imu: &[ImuSample],
    observations: &[PositionObservation],
    init: StateVector,
    init_p: Matrix5,
    config: &FusionConfig,
) -> Result<FusionOutput, EkfError> {
    if !(config.f_imu > 0.0 && config.f_imu.is_finite()) {
        return Err(EkfError::BadRate(config.f_imu));
    }
    let (first, last) = match (imu.first(), imu.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(EkfError::EmptyImu),
    };
    if let Some(k) = (1..imu.len()).find(|&k| imu[k].t <= imu[k - 1].t) {
        return Err(EkfError::ImuOutOfOrder(k));
    }
    let half_period = 0.5 / config.f_imu;
    for (i, o) in observations.iter().enumerate() {
        if i > 0 && o.t < observations[i - 1].t {
            return Err(EkfError::ObservationOutOfOrder(i));
        }
        if o.t < first.t - half_period || o.t > last.t + half_period {
            return Err(EkfError::ObservationOutsideImu {
                t: o.t,
                start: first.t,
                end: last.t,
            });
        }
    }

    let gap_limit = 10.0 / config.f_imu;
    let mut state = init;
    let mut p = init_p;
    let mut samples = Vec::with_capacity(imu.len());
    let mut events = Vec::new();
    let mut next_obs = 0;
    for k in 0..imu.len() {
        let t = imu[k].t;
        if k > 0 {
            let dt = t - imu[k - 1].t;
            if dt > gap_limit {
                events.push(FilterEvent::ImuGap { t, gap: dt });
            }
            (state, p) = predict(&state, &p, &ControlInput::from_imu(&imu[k - 1]), dt, &config.noise.q)?;
        }
        while let Some(obs) = observations.get(next_obs).filter(|o| o.t <= t + half_period) {
            let out = update(&state, &p, obs, &config.noise.r, config.gate)?;
            events.push(FilterEvent::Update {
                t,
                obs_t: obs.t,
                source: obs.source,
                innovation_norm: out.innovation.norm(),
                mahalanobis: out.mahalanobis,
                accepted: out.accepted,
            });
            state = out.state;
            p = out.p;
            next_obs += 1;
        }
        samples.push(FusedSample {
            t,
            state,
            p_xx: p[(0, 0)],
            p_yy: p[(1, 1)],
        });
    }
    Ok(FusionOutput { samples, events })
}
