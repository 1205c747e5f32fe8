//! Experiment protocol: floors, per-run sensor simulation, the three
//! localization pipelines, and their evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::{
    fuse_run, EkfError, FusionConfig, FusionOutput, Matrix5, NoiseConfig, ObservationSource,
    PositionObservation, StateVector, Vector5,
};
use crate::eval::{compare_methods, Comparison, EvalError, Method};
use crate::fingerprint::{
    collect_database, predict, preprocess, train_mlp, FingerprintDatabase, FingerprintError,
    MlpModel, Normalization, TrainConfig, TrainReport,
};
use crate::geometry::{Point2, Pose2D};
use crate::grid::{GridGeometry, OccupancyGrid};
use crate::lidar_imu::{slam_pipeline, DeadReckonState, LidarImuError, SlamConfig, SlamOutput};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sensors::{
    simulate_imu, simulate_lidar, simulate_rssi, ImuErrorModel, ImuSample, LidarConfig, LidarScan,
    RssiParams, RssiVector, SensorError,
};
use crate::trajectory::{TimedPose, Trajectory, TrajectoryError};
use crate::world::{
    build_floor, generate_path, place_aps, AccessPoint, ApLayout, CorridorSpec, GroundTruthSample,
    MotionProfile, RadioRanges, WorldError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    LidarImu(#[from] LidarImuError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl ExperimentError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ExperimentError::Fingerprint(FingerprintError::NonFiniteLoss { .. })
                | ExperimentError::Ekf(EkfError::SingularInnovation { .. })
                | ExperimentError::Ekf(EkfError::NonFinite(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Clockwise around the loop.
    Forward,
    /// Counter-clockwise around the loop.
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    fn index(self) -> u64 {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorConfig {
    pub name: String,
    pub outer_width: f64,
    pub outer_height: f64,
    pub corridor_width: f64,
    pub wall_thickness: f64,
}

impl FloorConfig {
    pub fn spec(&self) -> CorridorSpec {
        CorridorSpec {
            outer_width: self.outer_width,
            outer_height: self.outer_height,
            corridor_width: self.corridor_width,
            wall_thickness: self.wall_thickness,
        }
    }

    fn loop_floor(name: &str, w: f64, h: f64) -> Self {
        Self {
            name: name.to_string(),
            outer_width: w,
            outer_height: h,
            corridor_width: 2.0,
            wall_thickness: 0.2,
        }
    }
}

/// Three floors whose corridor centerlines are all 40 m loops.
pub fn default_floors() -> Vec<FloorConfig> {
    vec![
        FloorConfig::loop_floor("floor1", 12.4, 12.4),
        FloorConfig::loop_floor("floor2", 14.4, 10.4),
        FloorConfig::loop_floor("floor3", 16.4, 8.4),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub ap_count: usize,
    pub layout: ApLayout,
    pub ranges: RadioRanges,
    pub rssi: RssiParams,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            ap_count: 12,
            layout: ApLayout::Perimeter,
            ranges: RadioRanges {
                tx_power_dbm: [-45.0, -35.0],
                path_loss_exponent: [2.2, 2.8],
            },
            rssi: RssiParams {
                shadowing_sigma: 3.0,
                ..RssiParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRates {
    pub imu_hz: f64,
    pub lidar_hz: f64,
    pub wifi_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            imu_hz: 100.0,
            lidar_hz: 10.0,
            wifi_hz: 1.0,
        }
    }
}

impl SensorRates {
    /// IMU samples per sample of a slower stream.
    fn decimation(&self, rate: f64, field: &str) -> Result<usize, ExperimentError> {
        let ratio = self.imu_hz / rate;
        let n = ratio.round();
        if !(rate > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(ExperimentError::Config(format!(
                "rates.{field} must divide rates.imu_hz"
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintConfig {
    pub rp_spacing: f64,
    pub samples_per_rp: usize,
    pub train: TrainConfig,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            rp_spacing: 0.5,
            samples_per_rp: 8,
            train: TrainConfig {
                epochs: 50,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfSettings {
    /// Process noise spectral densities for `[x, y, theta, v, omega]`.
    pub q_diag: [f64; 5],
    /// Standard deviation of a Wi-Fi position fix (m).
    pub sigma_wifi: f64,
    pub init_p_diag: [f64; 5],
    /// Squared-Mahalanobis gate; `None` disables gating.
    pub gate: Option<f64>,
}

impl Default for EkfSettings {
    fn default() -> Self {
        Self {
            q_diag: [1e-6, 1e-6, 1e-5, 1e-4, 1e-4],
            sigma_wifi: 1.0,
            init_p_diag: [1.0, 1.0, 1e-4, 1e-4, 1e-4],
            gate: None,
        }
    }
}

impl EkfSettings {
    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig::diagonal(self.q_diag, self.sigma_wifi)
    }

    pub fn init_p(&self) -> Matrix5 {
        Matrix5::from_diagonal(&Vector5::from(self.init_p_diag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Grid resolution (m/cell) of every floor.
    pub resolution: f64,
    pub floors: Vec<FloorConfig>,
    pub directions: Vec<Direction>,
    pub methods: Vec<Method>,
    pub motion: MotionProfile,
    pub radio: RadioConfig,
    pub rates: SensorRates,
    pub imu: ImuErrorModel,
    pub lidar: LidarConfig,
    pub slam: SlamConfig,
    pub fingerprint: FingerprintConfig,
    pub ekf: EkfSettings,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            resolution: 0.05,
            floors: default_floors(),
            directions: vec![Direction::Forward, Direction::Backward],
            methods: Method::ALL.to_vec(),
            motion: MotionProfile::default(),
            radio: RadioConfig::default(),
            rates: SensorRates::default(),
            imu: ImuErrorModel {
                bias_accel: [0.002, 0.0, 0.0],
                bias_gyro: [0.0, 0.0, 0.0002],
                sigma_accel: 0.02,
                sigma_gyro: 0.002,
            },
            lidar: LidarConfig::default(),
            // The comparison run keeps the IMU bias uncorrected.
            slam: SlamConfig {
                velocity_gain: 0.0,
                ..SlamConfig::default()
            },
            fingerprint: FingerprintConfig::default(),
            ekf: EkfSettings::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.floors.is_empty() {
            return bad("floors must not be empty");
        }
        if self.directions.is_empty() || self.methods.is_empty() {
            return bad("directions and methods must not be empty");
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if !(self.rates.imu_hz > 0.0) {
            return bad("rates.imu_hz must be positive");
        }
        self.rates.decimation(self.rates.lidar_hz, "lidar_hz")?;
        self.rates.decimation(self.rates.wifi_hz, "wifi_hz")?;
        if self.imu.sigma_accel < 0.0 || self.imu.sigma_gyro < 0.0 {
            return bad("imu sigmas must be non-negative");
        }
        if self.fingerprint.samples_per_rp == 0 {
            return bad("fingerprint.samples_per_rp must be at least 1");
        }
        if !(self.ekf.sigma_wifi > 0.0) {
            return bad("ekf.sigma_wifi must be positive");
        }
        if self.ekf.q_diag.iter().chain(&self.ekf.init_p_diag).any(|v| !(*v >= 0.0)) {
            return bad("ekf covariance diagonals must be non-negative");
        }
        self.fingerprint
            .train
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.slam
            .matcher
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn floor_seed(&self, floor: usize) -> u64 {
        derive_seed(self.master_seed, &[floor as u64])
    }

    pub fn run_seed(&self, floor: usize, direction: Direction) -> u64 {
        derive_seed(self.floor_seed(floor), &[100 + direction.index()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorWorld {
    pub index: usize,
    pub name: String,
    pub spec: CorridorSpec,
    pub grid: OccupancyGrid,
    pub aps: Vec<AccessPoint>,
}

pub fn build_world(cfg: &ExperimentConfig, floor: usize) -> Result<FloorWorld, ExperimentError> {
    let fc = cfg
        .floors
        .get(floor)
        .ok_or_else(|| ExperimentError::Config(format!("no floor with index {floor}")))?;
    let spec = fc.spec();
    let grid = build_floor(&spec, cfg.resolution)?;
    let aps = place_aps(
        &grid,
        cfg.radio.ap_count,
        cfg.radio.layout,
        &cfg.radio.ranges,
        derive_seed(cfg.floor_seed(floor), &[stream::ACCESS_POINTS]),
    )?;
    Ok(FloorWorld {
        index: floor,
        name: fc.name.clone(),
        spec,
        grid,
        aps,
    })
}

pub fn collect_fingerprints(
    cfg: &ExperimentConfig,
    world: &FloorWorld,
) -> Result<FingerprintDatabase, ExperimentError> {
    let mut rng = rng_from_seed(derive_seed(cfg.floor_seed(world.index), &[stream::FINGERPRINT_DB]));
    Ok(collect_database(
        &world.grid,
        &world.aps,
        cfg.fingerprint.rp_spacing,
        cfg.fingerprint.samples_per_rp,
        &cfg.radio.rssi,
        &mut rng,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFingerprint {
    pub model: MlpModel,
    pub normalization: Normalization,
    pub report: TrainReport,
    /// Held-out records mapped with the training normalization.
    pub test: FingerprintDatabase,
}

impl TrainedFingerprint {
    /// Mean 2D error of the regressor on the held-out records.
    pub fn holdout_error(&self) -> Option<f64> {
        if self.test.is_empty() {
            return None;
        }
        let sum: f64 = self
            .test
            .records
            .iter()
            .map(|r| self.model.predict_features(&r.rssi).distance(r.position))
            .sum();
        Some(sum / self.test.len() as f64)
    }
}

/// Training and held-out halves of a survey, preprocessed with statistics of
/// the training half only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSplit {
    pub train: FingerprintDatabase,
    pub test: FingerprintDatabase,
    /// Held-out records before normalization.
    pub test_raw: FingerprintDatabase,
    pub normalization: Normalization,
    /// Training config with the floor's derived seed.
    pub train_config: TrainConfig,
}

pub fn split_for_training(
    cfg: &ExperimentConfig,
    floor: usize,
    raw: &FingerprintDatabase,
) -> Result<TrainingSplit, ExperimentError> {
    let floor_seed = cfg.floor_seed(floor);
    let train_config = TrainConfig {
        seed: derive_seed(floor_seed, &[stream::TRAINING, cfg.fingerprint.train.seed]),
        ..cfg.fingerprint.train
    };
    let mut split_rng = rng_from_seed(derive_seed(floor_seed, &[stream::SPLIT]));
    let (train_raw, test_raw) = raw.split(train_config.train_ratio, &mut split_rng);
    let train = preprocess(&train_raw)?;
    let normalization = train.normalization.clone().expect("preprocessed");
    let test = test_raw.normalized_with(&normalization);
    Ok(TrainingSplit {
        train,
        test,
        test_raw,
        normalization,
        train_config,
    })
}

/// Splits the raw database, fits preprocessing on the training part only,
/// and trains the regressor.
pub fn train_fingerprint(
    cfg: &ExperimentConfig,
    floor: usize,
    raw: &FingerprintDatabase,
) -> Result<TrainedFingerprint, ExperimentError> {
    let split = split_for_training(cfg, floor, raw)?;
    let (model, report) = train_mlp(&split.train, &split.train_config)?;
    Ok(TrainedFingerprint {
        model,
        normalization: split.normalization,
        report,
        test: split.test,
    })
}

/// Everything the sensors record on one drive around a floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLogs {
    pub truth: Vec<GroundTruthSample>,
    pub imu: Vec<ImuSample>,
    pub scans: Vec<LidarScan>,
    pub rssi: Vec<(f64, RssiVector)>,
    /// Known starting pose (first waypoint, first segment heading).
    pub start: Pose2D,
}

impl SensorLogs {
    pub fn truth_trajectory(&self) -> Trajectory {
        crate::world::truth_trajectory(&self.truth)
    }
}

pub fn waypoints(spec: &CorridorSpec, direction: Direction) -> Vec<Point2> {
    let mut w = spec.centerline();
    if direction == Direction::Forward {
        w.reverse();
    }
    w
}

/// Start pose implied by the route: first waypoint facing the second.
pub fn start_pose(route: &[Point2]) -> Pose2D {
    let d = route[1] - route[0];
    Pose2D::new(route[0].x, route[0].y, d.y.atan2(d.x))
}

pub fn simulate_run(
    cfg: &ExperimentConfig,
    world: &FloorWorld,
    direction: Direction,
) -> Result<SensorLogs, ExperimentError> {
    let run_seed = cfg.run_seed(world.index, direction);
    let route = waypoints(&world.spec, direction);
    let truth = generate_path(&world.grid, &route, &cfg.motion, 1.0 / cfg.rates.imu_hz)?;
    let mut imu_rng = rng_from_seed(derive_seed(run_seed, &[stream::IMU]));
    let imu = simulate_imu(&truth, &cfg.imu, cfg.rates.imu_hz, &mut imu_rng)?;

    let n = truth.len().min(imu.len());
    let lidar_every = cfg.rates.decimation(cfg.rates.lidar_hz, "lidar_hz")?;
    let wifi_every = cfg.rates.decimation(cfg.rates.wifi_hz, "wifi_hz")?;
    let mut lidar_rng = rng_from_seed(derive_seed(run_seed, &[stream::LIDAR]));
    let scans = (0..n)
        .step_by(lidar_every)
        .map(|k| simulate_lidar(&world.grid, &truth[k].pose, &cfg.lidar, imu[k].t, &mut lidar_rng))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rssi_rng = rng_from_seed(derive_seed(run_seed, &[stream::RSSI]));
    let rssi = (0..n)
        .step_by(wifi_every)
        .map(|k| {
            simulate_rssi(&world.aps, &world.grid, &truth[k].pose, &cfg.radio.rssi, &mut rssi_rng)
                .map(|v| (imu[k].t, v))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SensorLogs {
        start: start_pose(&route),
        truth,
        imu,
        scans,
        rssi,
    })
}

/// Wi-Fi fixes as a trajectory; heading is not observed and reported as 0.
pub fn run_wifi(
    model: &MlpModel,
    normalization: &Normalization,
    rssi: &[(f64, RssiVector)],
) -> Result<Trajectory, ExperimentError> {
    let samples = rssi
        .iter()
        .map(|(t, v)| {
            let p = predict(model, v, normalization)?.position;
            Ok(TimedPose {
                t: *t,
                pose: Pose2D::new(p.x, p.y, 0.0),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(Trajectory::new(samples)?)
}

pub fn run_lidar_imu(
    cfg: &ExperimentConfig,
    geometry: GridGeometry,
    imu: &[ImuSample],
    scans: &[LidarScan],
    start: Pose2D,
) -> Result<SlamOutput, ExperimentError> {
    let initial = DeadReckonState {
        pose: start,
        v: 0.0,
        t: 0.0,
    };
    Ok(slam_pipeline(imu, scans, initial, geometry, &cfg.slam)?)
}

/// EKF over the IMU stream with the Wi-Fi fixes as position observations.
/// The state starts at the first fix with the route's start heading.
pub fn run_ekf(
    cfg: &ExperimentConfig,
    imu: &[ImuSample],
    wifi: &Trajectory,
    start_heading: f64,
) -> Result<FusionOutput, ExperimentError> {
    let first = wifi
        .first()
        .ok_or_else(|| ExperimentError::Config("no Wi-Fi fixes to initialise the filter".into()))?;
    let init = StateVector::new(first.pose.x, first.pose.y, start_heading, 0.0, 0.0);
    let observations: Vec<PositionObservation> = wifi
        .samples()
        .iter()
        .map(|s| PositionObservation {
            t: s.t,
            z: s.pose.position(),
            source: ObservationSource::Wifi,
        })
        .collect();
    let config = FusionConfig {
        noise: cfg.ekf.noise(),
        f_imu: cfg.rates.imu_hz,
        gate: cfg.ekf.gate,
    };
    Ok(fuse_run(imu, &observations, init, cfg.ekf.init_p(), &config)?)
}

/// Times at which the vehicle starts turning at a corner.
pub fn segment_breaks(truth: &[GroundTruthSample]) -> Vec<f64> {
    truth
        .windows(2)
        .filter(|w| w[0].omega == 0.0 && w[1].omega != 0.0)
        .map(|w| w[1].t)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub floor: usize,
    pub direction: Direction,
    pub estimates: BTreeMap<Method, Trajectory>,
    pub comparison: Comparison,
}

impl RunResult {
    pub fn mean_error(&self, method: Method) -> Option<f64> {
        self.comparison
            .reports
            .iter()
            .find(|r| r.method == method.name())
            .map(|r| r.stats.mean)
    }
}

/// Runs the configured methods on one simulated drive.
pub fn run_methods(
    cfg: &ExperimentConfig,
    world: &FloorWorld,
    fingerprint: &TrainedFingerprint,
    direction: Direction,
) -> Result<RunResult, ExperimentError> {
    let logs = simulate_run(cfg, world, direction)?;
    let truth = logs.truth_trajectory();
    let mut estimates = BTreeMap::new();
    let wants = |m: Method| cfg.methods.contains(&m);
    let wifi = run_wifi(&fingerprint.model, &fingerprint.normalization, &logs.rssi)?;
    if wants(Method::LidarImu) {
        let out = run_lidar_imu(cfg, world.grid.geometry, &logs.imu, &logs.scans, logs.start)?;
        estimates.insert(Method::LidarImu, out.trajectory);
    }
    if wants(Method::Ekf) {
        let out = run_ekf(cfg, &logs.imu, &wifi, logs.start.theta)?;
        estimates.insert(Method::Ekf, out.trajectory()?);
    }
    if wants(Method::Wifi) {
        estimates.insert(Method::Wifi, wifi);
    }
    let named = estimates
        .iter()
        .map(|(m, t)| (m.name().to_string(), t.clone()))
        .collect();
    let comparison = compare_methods(&truth, &named, &segment_breaks(&logs.truth))?;
    Ok(RunResult {
        floor: world.index,
        direction,
        estimates,
        comparison,
    })
}

/// Builds, trains and runs every configured direction on one floor.
pub fn run_floor(cfg: &ExperimentConfig, floor: usize) -> Result<Vec<RunResult>, ExperimentError> {
    cfg.validate()?;
    let world = build_world(cfg, floor)?;
    let raw = collect_fingerprints(cfg, &world)?;
    let fp = train_fingerprint(cfg, floor, &raw)?;
    cfg.directions
        .iter()
        .map(|&d| run_methods(cfg, &world, &fp, d))
        .collect()
}
