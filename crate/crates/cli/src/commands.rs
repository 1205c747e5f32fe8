//! Pipeline stages. Each stage reads its inputs from the output directory,
//! writes its artifacts there, and returns what it wrote.

use std::path::Path;

use fuselocate::eval::Method;
use fuselocate::experiment::{
    build_world, collect_fingerprints, run_ekf, run_lidar_imu, run_wifi, simulate_run,
    split_for_training, start_pose, train_fingerprint, waypoints, Direction, ExperimentConfig,
    ExperimentError, FloorWorld,
};
use fuselocate::fingerprint::{knn_predict, predict, MlpModel, ModelFile, Normalization};
use fuselocate::world::AccessPoint;
use fuselocate::Pose2D;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::formats::{self, fmt9, read_json, Sink};
use crate::layout::Layout;

pub type Artifacts = Vec<(String, String)>;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
}

impl Context {
    fn floors(&self) -> Vec<usize> {
        (0..self.cfg.floors.len()).collect()
    }

    /// Every (floor, direction) pair of the run matrix.
    pub fn runs(&self) -> Vec<(usize, Direction)> {
        self.floors()
            .into_iter()
            .flat_map(|f| self.cfg.directions.iter().map(move |&d| (f, d)))
            .collect()
    }

    fn sink(&self) -> Sink {
        Sink::new(&self.layout.root)
    }

    fn start(&self, floor: usize, dir: Direction) -> Pose2D {
        start_pose(&waypoints(&self.cfg.floors[floor].spec(), dir))
    }

    fn load_world(&self, floor: usize) -> Result<FloorWorld> {
        let grid = formats::read_map(&self.layout.map(floor), "generate")?;
        let aps: Vec<AccessPoint> = read_json(&self.layout.aps(floor), "generate")?;
        Ok(FloorWorld {
            index: floor,
            name: self.cfg.floors[floor].name.clone(),
            spec: self.cfg.floors[floor].spec(),
            grid,
            aps,
        })
    }

    fn load_model(&self, floor: usize) -> Result<(MlpModel, Normalization)> {
        let path = self.layout.model(floor);
        let file: ModelFile = read_json(&path, "fingerprint train")?;
        file.into_model().map_err(|e| CliError::malformed(&path, e))
    }
}

/// Runs `f` on every item on the current rayon pool, keeping input order.
fn par_collect<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_iter().map(f).collect()
}

fn flatten(parts: Vec<Artifacts>) -> Artifacts {
    parts.into_iter().flatten().collect()
}

pub fn generate(ctx: &Context) -> Result<Artifacts> {
    let (cfg, layout) = (&ctx.cfg, &ctx.layout);
    let maps = par_collect(&ctx.floors(), |&floor| {
        let mut sink = ctx.sink();
        let world = build_world(cfg, floor)?;
        formats::write_map(&mut sink, &layout.map(floor), &world.grid)?;
        sink.write_json(&layout.aps(floor), &world.aps)?;
        Ok(sink.written)
    })?;
    let logs = par_collect(&ctx.runs(), |&(floor, dir)| {
        let mut sink = ctx.sink();
        let world = build_world(cfg, floor)?;
        let logs = simulate_run(cfg, &world, dir)?;
        sink.write(&layout.truth(floor, dir), &formats::truth_csv(&logs.truth))?;
        sink.write(&layout.imu(floor, dir), &formats::imu_csv(&logs.imu))?;
        sink.write(&layout.rssi(floor, dir), &formats::rssi_csv(&logs.rssi))?;
        sink.write(&layout.scans(floor, dir), &formats::scan_csv(&logs.scans))?;
        Ok(sink.written)
    })?;
    Ok(flatten(maps.into_iter().chain(logs).collect()))
}

pub fn fingerprint_collect(ctx: &Context) -> Result<Artifacts> {
    let parts = par_collect(&ctx.floors(), |&floor| {
        let mut sink = ctx.sink();
        let world = ctx.load_world(floor)?;
        let db = collect_fingerprints(&ctx.cfg, &world)?;
        sink.write(&ctx.layout.db(floor), &formats::db_csv(&db))?;
        Ok(sink.written)
    })?;
    Ok(flatten(parts))
}

pub fn fingerprint_train(ctx: &Context) -> Result<Artifacts> {
    let parts = par_collect(&ctx.floors(), |&floor| {
        let mut sink = ctx.sink();
        let raw = formats::read_db(&ctx.layout.db(floor))?;
        let trained = train_fingerprint(&ctx.cfg, floor, &raw)?;
        sink.write_json(&ctx.layout.model(floor), &trained.model.to_file(&trained.normalization))?;
        sink.write_json(&ctx.layout.train_report(floor), &trained.report)?;
        Ok(sink.written)
    })?;
    Ok(flatten(parts))
}

pub fn fingerprint_predict(ctx: &Context) -> Result<Artifacts> {
    let parts = par_collect(&ctx.runs(), |&(floor, dir)| {
        let mut sink = ctx.sink();
        let (model, norm) = ctx.load_model(floor)?;
        let fixes = formats::read_rssi(&ctx.layout.rssi(floor, dir))?;
        let rows = fixes
            .iter()
            .map(|(t, v)| {
                let p = predict(&model, v, &norm).map_err(ExperimentError::from)?;
                Ok(vec![
                    fmt9(*t),
                    fmt9(p.position.x),
                    fmt9(p.position.y),
                    u8::from(p.low_confidence).to_string(),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let header = ["t", "x", "y", "low_confidence"].map(String::from);
        sink.write(&ctx.layout.predictions(floor, dir), &formats::csv_bytes(&header, rows))?;
        Ok(sink.written)
    })?;
    Ok(flatten(parts))
}

#[derive(Debug, Serialize)]
struct FingerprintEval {
    records: usize,
    train_records: usize,
    test_records: usize,
    mlp_mean_error: f64,
    knn_k: usize,
    knn_mean_error: f64,
}

pub const EVAL_KNN_K: usize = 5;

pub fn fingerprint_eval(ctx: &Context) -> Result<Artifacts> {
    let parts = par_collect(&ctx.floors(), |&floor| {
        let mut sink = ctx.sink();
        let raw = formats::read_db(&ctx.layout.db(floor))?;
        let (model, norm) = ctx.load_model(floor)?;
        let split = split_for_training(&ctx.cfg, floor, &raw)?;
        let k = EVAL_KNN_K.min(split.train.len());
        let (mut mlp, mut knn) = (0.0, 0.0);
        for r in &split.test_raw.records {
            let v = fuselocate::sensors::RssiVector(r.rssi.clone());
            let p = predict(&model, &v, &norm).map_err(ExperimentError::from)?;
            mlp += p.position.distance(r.position);
            let q = knn_predict(&split.train, &v, k).map_err(ExperimentError::from)?;
            knn += q.distance(r.position);
        }
        let n = split.test_raw.len().max(1) as f64;
        let report = FingerprintEval {
            records: raw.len(),
            train_records: split.train.len(),
            test_records: split.test_raw.len(),
            mlp_mean_error: mlp / n,
            knn_k: k,
            knn_mean_error: knn / n,
        };
        sink.write_json(&ctx.layout.fingerprint_eval(floor), &report)?;
        Ok(sink.written)
    })?;
    Ok(flatten(parts))
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum WifiEvent {
    Fix { t: f64, heard: usize, low_confidence: bool },
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SlamEvent {
    Scan {
        t: f64,
        x: f64,
        y: f64,
        theta: f64,
        score: f64,
        converged: bool,
    },
    Divergence {
        t: f64,
    },
}

fn run_one(ctx: &Context, floor: usize, dir: Direction, method: Method) -> Result<Artifacts> {
    let (cfg, layout) = (&ctx.cfg, &ctx.layout);
    let mut sink = ctx.sink();
    let start = ctx.start(floor, dir);
    match method {
        Method::Wifi => {
            let (model, norm) = ctx.load_model(floor)?;
            let fixes = formats::read_rssi(&layout.rssi(floor, dir))?;
            let traj = run_wifi(&model, &norm, &fixes)?;
            let events: Vec<WifiEvent> = fixes
                .iter()
                .map(|(t, v)| WifiEvent::Fix {
                    t: *t,
                    heard: v.heard(),
                    low_confidence: v.heard() < fuselocate::fingerprint::MIN_HEARD_APS,
                })
                .collect();
            sink.write(&layout.trajectory(floor, dir, method), &formats::trajectory_csv(&traj))?;
            sink.write(&layout.events(floor, dir, method), &formats::jsonl_bytes(&events))?;
        }
        Method::LidarImu => {
            let geometry = formats::read_map(&layout.map(floor), "generate")?.geometry;
            let imu = formats::read_imu(&layout.imu(floor, dir))?;
            let scans = formats::read_scans(&layout.scans(floor, dir), cfg.lidar.max_range)?;
            let out = run_lidar_imu(cfg, geometry, &imu, &scans, start)?;
            let mut events: Vec<SlamEvent> = out
                .scan_poses
                .iter()
                .map(|s| SlamEvent::Scan {
                    t: s.t,
                    x: s.pose.x,
                    y: s.pose.y,
                    theta: s.pose.theta,
                    score: s.score,
                    converged: s.converged,
                })
                .collect();
            events.extend(out.divergences.iter().map(|&t| SlamEvent::Divergence { t }));
            sink.write(&layout.trajectory(floor, dir, method), &formats::trajectory_csv(&out.trajectory))?;
            sink.write(&layout.events(floor, dir, method), &formats::jsonl_bytes(&events))?;
            formats::write_map(&mut sink, &layout.slam_map(floor, dir), &out.map.to_occupancy())?;
        }
        Method::Ekf => {
            let (model, norm) = ctx.load_model(floor)?;
            let fixes = formats::read_rssi(&layout.rssi(floor, dir))?;
            let imu = formats::read_imu(&layout.imu(floor, dir))?;
            let wifi = run_wifi(&model, &norm, &fixes)?;
            let out = run_ekf(cfg, &imu, &wifi, start.theta)?;
            let traj = out.trajectory().map_err(ExperimentError::from)?;
            sink.write(&layout.trajectory(floor, dir, method), &formats::trajectory_csv(&traj))?;
            sink.write(&layout.fused(floor, dir), &formats::fused_csv(&out.samples))?;
            sink.write(&layout.events(floor, dir, method), &formats::jsonl_bytes(&out.events))?;
        }
    }
    Ok(sink.written)
}

/// Runs each method over the whole run matrix; artifacts are grouped per
/// method in the order given.
pub fn run(ctx: &Context, methods: &[Method]) -> Result<Vec<(Method, Artifacts)>> {
    let units: Vec<(usize, Direction, Method)> = methods
        .iter()
        .flat_map(|&m| ctx.runs().into_iter().map(move |(f, d)| (f, d, m)))
        .collect();
    let parts = par_collect(&units, |&(f, d, m)| run_one(ctx, f, d, m))?;
    Ok(methods
        .iter()
        .map(|&m| {
            let files = units
                .iter()
                .zip(&parts)
                .filter(|(u, _)| u.2 == m)
                .flat_map(|(_, a)| a.iter().cloned())
                .collect();
            (m, files)
        })
        .collect())
}

pub fn ensure_root(root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| CliError::io("create", root, e))
}
