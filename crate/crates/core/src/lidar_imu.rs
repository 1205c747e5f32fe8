//! LiDAR/IMU positioning: inertial dead reckoning, log-odds occupancy
//! mapping, and coarse-to-fine grid-search scan matching.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Point2, Pose2D};
use crate::grid::{CellState, GridGeometry, OccupancyGrid};
use crate::sensors::{ImuSample, LidarScan};
use crate::trajectory::{TimedPose, Trajectory, TrajectoryError};

/// Beam endpoints are pushed this far past the measured range so that a
/// return at a cell boundary lands in the cell that produced it.
const ENDPOINT_NUDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LidarImuError {
    #[error("IMU stream is empty")]
    EmptyImu,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("scan at t = {scan_t} lies outside the IMU span [{start}, {end}]")]
    ScanOutsideImu { scan_t: f64, start: f64, end: f64 },
    #[error("scan timestamps must be increasing (scan {index})")]
    ScansOutOfOrder { index: usize },
    #[error("invalid scan matcher config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeadReckonState {
    pub pose: Pose2D,
    pub v: f64,
    pub t: f64,
}

impl DeadReckonState {
    /// Integrates one IMU interval ending at `t` using the reading taken at
    /// the start of the interval.
    pub fn step(&mut self, reading: &ImuSample, t: f64) {
        let dt = t - self.t;
        let theta = normalize_angle(self.pose.theta + reading.gyro[2] * dt);
        self.v += reading.accel[0] * dt;
        let (s, c) = theta.sin_cos();
        self.pose = Pose2D {
            x: self.pose.x + self.v * dt * c,
            y: self.pose.y + self.v * dt * s,
            theta,
        };
        self.t = t;
    }
}

/// One pose per IMU sample. The first pose is `initial` placed at the first
/// sample's timestamp; later poses integrate the preceding sample.
pub fn dead_reckon(
    imu: &[ImuSample],
    initial: DeadReckonState,
) -> Result<Trajectory, LidarImuError> {
    let first = imu.first().ok_or(LidarImuError::EmptyImu)?;
    let mut state = DeadReckonState {
        t: first.t,
        ..initial
    };
    let mut out = Vec::with_capacity(imu.len());
    out.push(TimedPose {
        t: state.t,
        pose: state.pose,
    });
    for w in imu.windows(2) {
        state.step(&w[0], w[1].t);
        out.push(TimedPose {
            t: state.t,
            pose: state.pose,
        });
    }
    Ok(Trajectory::new(out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogOddsParams {
    pub l_occ: f64,
    pub l_free: f64,
    pub l_max: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        Self {
            l_occ: 0.85,
            l_free: -0.4,
            l_max: 10.0,
        }
    }
}

/// Occupancy export thresholds on cell probability.
pub const OCCUPIED_THRESHOLD: f64 = 0.65;
pub const FREE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOddsMap {
    pub geometry: GridGeometry,
    pub params: LogOddsParams,
    log_odds: Vec<f64>,
}

impl LogOddsMap {
    pub fn new(geometry: GridGeometry, params: LogOddsParams) -> Self {
        Self {
            geometry,
            params,
            log_odds: vec![0.0; geometry.len()],
        }
    }

    pub fn log_odds(&self, ix: usize, iy: usize) -> f64 {
        self.log_odds[self.geometry.index(ix, iy)]
    }

    pub fn probability(&self, ix: usize, iy: usize) -> f64 {
        logistic(self.log_odds(ix, iy))
    }

    /// Cell probability at a world point; off-map points are unknown (0.5).
    pub fn probability_at(&self, p: Point2) -> f64 {
        match self.geometry.world_to_cell(p) {
            Some((ix, iy)) => self.probability(ix, iy),
            None => 0.5,
        }
    }

    pub fn observed_cells(&self) -> usize {
        self.log_odds.iter().filter(|&&l| l != 0.0).count()
    }

    fn add(&mut self, ix: usize, iy: usize, delta: f64) {
        let i = self.geometry.index(ix, iy);
        let l_max = self.params.l_max;
        self.log_odds[i] = (self.log_odds[i] + delta).clamp(-l_max, l_max);
    }

    /// Inverse sensor model: cells pierced by each beam become freer, the
    /// endpoint cell of a return becomes more occupied.
    pub fn update(&mut self, pose: &Pose2D, scan: &LidarScan) {
        let origin = pose.position();
        let geometry = self.geometry;
        let mut ray_cells = Vec::new();
        for (beam, (&angle, &range)) in scan.angles.iter().zip(&scan.ranges).enumerate() {
            let (s, c) = (pose.theta + angle).sin_cos();
            let end = origin + Point2::new(c, s) * (range + ENDPOINT_NUDGE);
            let end_cell = geometry.world_to_cell(end);
            ray_cells.clear();
            geometry.traverse(origin, end, |cell, _| {
                if Some(cell) != end_cell {
                    ray_cells.push(cell);
                }
                ControlFlow::<()>::Continue(())
            });
            for &(ix, iy) in &ray_cells {
                self.add(ix, iy, self.params.l_free);
            }
            if let (Some((ix, iy)), true) = (end_cell, scan.is_hit(beam)) {
                self.add(ix, iy, self.params.l_occ);
            }
        }
    }

    /// Thresholded occupancy grid for export.
    pub fn to_occupancy(&self) -> OccupancyGrid {
        let cells = self
            .log_odds
            .iter()
            .map(|&l| {
                let p = logistic(l);
                if p > OCCUPIED_THRESHOLD {
                    CellState::Wall
                } else if p < FREE_THRESHOLD {
                    CellState::Free
                } else {
                    CellState::Unknown
                }
            })
            .collect();
        OccupancyGrid::new(self.geometry, cells).expect("cell count matches geometry")
    }
}

fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

pub fn update_map(map: &mut LogOddsMap, pose: &Pose2D, scan: &LidarScan) {
    map.update(pose, scan);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanMatchConfig {
    /// Half-width of the translational search window (m).
    pub window_xy: f64,
    /// Half-width of the rotational search window (rad).
    pub window_theta: f64,
    /// Lattice spacing of the first (exhaustive) level.
    pub coarse_step_xy: f64,
    pub coarse_step_theta: f64,
    /// Number of levels; each level after the first halves the steps and
    /// searches the 3x3x3 neighbourhood of the current best.
    pub levels: usize,
    /// Use every `beam_stride`-th beam when scoring.
    pub beam_stride: usize,
    /// Converged when the best score exceeds this fraction of scored beams.
    pub min_score_fraction: f64,
    /// Candidates within this much of the best score count as equally good;
    /// the one closest to the guess wins.
    pub score_margin: f64,
}

impl Default for ScanMatchConfig {
    fn default() -> Self {
        Self {
            window_xy: 0.5,
            window_theta: 10f64.to_radians(),
            coarse_step_xy: 0.05,
            coarse_step_theta: 1f64.to_radians(),
            levels: 3,
            beam_stride: 1,
            min_score_fraction: 0.6,
            score_margin: 0.1,
        }
    }
}

impl ScanMatchConfig {
    pub fn validate(&self) -> Result<(), LidarImuError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.window_xy >= 0.0 && self.window_theta >= 0.0) {
            return Err(LidarImuError::BadConfig("search window must be non-negative"));
        }
        if !positive(self.coarse_step_xy) || !positive(self.coarse_step_theta) {
            return Err(LidarImuError::BadConfig("lattice steps must be positive"));
        }
        if !(self.score_margin >= 0.0) {
            return Err(LidarImuError::BadConfig("score_margin must be non-negative"));
        }
        if self.levels == 0 || self.beam_stride == 0 {
            return Err(LidarImuError::BadConfig("levels and beam_stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMatchResult {
    pub pose: Pose2D,
    pub score: f64,
    pub converged: bool,
}

/// Beam endpoints of a scan in the sensor frame, returns only.
pub fn scan_endpoints(scan: &LidarScan, stride: usize) -> Vec<Point2> {
    (0..scan.ranges.len())
        .step_by(stride.max(1))
        .filter(|&i| scan.is_hit(i))
        .map(|i| {
            let r = scan.ranges[i] + ENDPOINT_NUDGE;
            let (s, c) = scan.angles[i].sin_cos();
            Point2::new(r * c, r * s)
        })
        .collect()
}

/// Sum of map probabilities at the endpoints placed by `pose`.
pub fn match_score(map: &LogOddsMap, endpoints: &[Point2], pose: &Pose2D) -> f64 {
    endpoints
        .iter()
        .map(|&p| map.probability_at(pose.transform(p)))
        .sum()
}

/// Orders candidate offsets: closest to the guess first, then lowest
/// `(dtheta, dy, dx)`.
fn tie_key(o: [f64; 3]) -> [f64; 6] {
    [o[2].abs(), o[1].abs(), o[0].abs(), o[2], o[1], o[0]]
}

fn key_less(a: [f64; 3], b: [f64; 3]) -> bool {
    let (a, b) = (tie_key(a), tie_key(b));
    a.iter()
        .zip(&b)
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

/// Among candidates scoring within `margin` of the best, the one closest to
/// the guess.
fn select(candidates: &[(f64, [f64; 3])], margin: f64) -> (f64, [f64; 3]) {
    let top = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(f64, [f64; 3])> = None;
    for &c in candidates.iter().filter(|c| c.0 >= top - margin) {
        if best.is_none_or(|b| key_less(c.1, b.1)) {
            best = Some(c);
        }
    }
    best.expect("at least one candidate")
}

fn lattice(half_width: f64, step: f64) -> Vec<f64> {
    let n = (half_width / step + 1e-9).floor() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

pub fn scan_match(
    map: &LogOddsMap,
    scan: &LidarScan,
    guess: &Pose2D,
    config: &ScanMatchConfig,
) -> Result<ScanMatchResult, LidarImuError> {
    config.validate()?;
    let endpoints = scan_endpoints(scan, config.beam_stride);
    let not_converged = ScanMatchResult {
        pose: *guess,
        score: 0.0,
        converged: false,
    };
    if map.observed_cells() == 0 || endpoints.is_empty() {
        return Ok(not_converged);
    }
    let score_at = |o: [f64; 3]| match_score(map, &endpoints, &guess.offset(o[0], o[1], o[2]));
    let inside = |o: [f64; 3]| {
        o[0].abs() <= config.window_xy + 1e-12
            && o[1].abs() <= config.window_xy + 1e-12
            && o[2].abs() <= config.window_theta + 1e-12
    };

    let xy = lattice(config.window_xy, config.coarse_step_xy);
    let mut candidates = Vec::new();
    for &dth in &lattice(config.window_theta, config.coarse_step_theta) {
        for &dy in &xy {
            for &dx in &xy {
                let o = [dx, dy, dth];
                candidates.push((score_at(o), o));
            }
        }
    }
    let mut best = select(&candidates, config.score_margin);
    let (mut step_xy, mut step_th) = (config.coarse_step_xy, config.coarse_step_theta);
    for _ in 1..config.levels {
        step_xy *= 0.5;
        step_th *= 0.5;
        let center = best.1;
        candidates.clear();
        candidates.push(best);
        for j in -1..=1 {
            for i in -1..=1 {
                for h in -1..=1 {
                    if (h, i, j) == (0, 0, 0) {
                        continue;
                    }
                    let o = [
                        center[0] + h as f64 * step_xy,
                        center[1] + i as f64 * step_xy,
                        center[2] + j as f64 * step_th,
                    ];
                    if inside(o) {
                        candidates.push((score_at(o), o));
                    }
                }
            }
        }
        best = select(&candidates, config.score_margin);
    }
    let (score, o) = best;
    Ok(ScanMatchResult {
        pose: guess.offset(o[0], o[1], o[2]),
        score,
        converged: score > config.min_score_fraction * endpoints.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlamConfig {
    pub matcher: ScanMatchConfig,
    pub log_odds: LogOddsParams,
    /// Fraction of the scan-match correction along the heading, per second
    /// of scan interval, folded back into the speed estimate.
    pub velocity_gain: f64,
    /// Consecutive non-converged scans that raise a divergence flag.
    pub divergence_scans: usize,
    /// When false, scans are ignored and the output is pure dead reckoning.
    pub use_scans: bool,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            matcher: ScanMatchConfig {
                window_xy: 0.1,
                window_theta: 2f64.to_radians(),
                coarse_step_xy: 0.05,
                coarse_step_theta: 1f64.to_radians(),
                levels: 3,
                beam_stride: 4,
                min_score_fraction: 0.6,
                score_margin: 2.0,
            },
            log_odds: LogOddsParams::default(),
            velocity_gain: 0.02,
            divergence_scans: 10,
            use_scans: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPose {
    pub t: f64,
    pub pose: Pose2D,
    pub score: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlamOutput {
    /// Pose at every IMU timestamp.
    pub trajectory: Trajectory,
    /// Pose adopted at each scan timestamp.
    pub scan_poses: Vec<ScanPose>,
    /// Timestamps at which a divergence streak was flagged.
    pub divergences: Vec<f64>,
    pub map: LogOddsMap,
}

/// Dead reckoning between scans; each scan is matched against the map
/// built so far, the match is adopted when converged, and the map is
/// updated from the adopted pose.
pub fn slam_pipeline(
    imu: &[ImuSample],
    scans: &[LidarScan],
    initial: DeadReckonState,
    map_geometry: GridGeometry,
    config: &SlamConfig,
) -> Result<SlamOutput, LidarImuError> {
    config.matcher.validate()?;
    let (first, last) = match (imu.first(), imu.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(LidarImuError::EmptyImu),
    };
    let half_period = if imu.len() > 1 {
        0.5 * (imu[1].t - imu[0].t)
    } else {
        0.0
    };
    let scans: &[LidarScan] = if config.use_scans { scans } else { &[] };
    for (i, s) in scans.iter().enumerate() {
        if s.t < first.t - half_period || s.t > last.t + half_period {
            return Err(LidarImuError::ScanOutsideImu {
                scan_t: s.t,
                start: first.t,
                end: last.t,
            });
        }
        if i > 0 && s.t <= scans[i - 1].t {
            return Err(LidarImuError::ScansOutOfOrder { index: i });
        }
    }

    let mut map = LogOddsMap::new(map_geometry, config.log_odds);
    let mut state = DeadReckonState {
        t: first.t,
        ..initial
    };
    let mut out = Vec::with_capacity(imu.len());
    let mut scan_poses = Vec::with_capacity(scans.len());
    let mut divergences = Vec::new();
    let mut next_scan = 0;
    let mut misses = 0;
    let mut last_scan_t: Option<f64> = None;
    for k in 0..imu.len() {
        if k > 0 {
            state.step(&imu[k - 1], imu[k].t);
        }
        while let Some(scan) = scans.get(next_scan).filter(|s| s.t <= imu[k].t + half_period) {
            let result = scan_match(&map, scan, &state.pose, &config.matcher)?;
            if result.converged {
                misses = 0;
                if let Some(prev) = last_scan_t {
                    let dt = scan.t - prev;
                    if dt > 0.0 {
                        let (s, c) = state.pose.theta.sin_cos();
                        let along = (result.pose.x - state.pose.x) * c
                            + (result.pose.y - state.pose.y) * s;
                        state.v += config.velocity_gain * along / dt;
                    }
                }
                state.pose = result.pose;
            } else {
                misses += 1;
                if misses == config.divergence_scans {
                    divergences.push(scan.t);
                }
            }
            map.update(&state.pose, scan);
            scan_poses.push(ScanPose {
                t: scan.t,
                pose: state.pose,
                score: result.score,
                converged: result.converged,
            });
            last_scan_t = Some(scan.t);
            next_scan += 1;
        }
        out.push(TimedPose {
            t: state.t,
            pose: state.pose,
        });
    }
    Ok(SlamOutput {
        trajectory: Trajectory::new(out)?,
        scan_poses,
        divergences,
        map,
    })
}
