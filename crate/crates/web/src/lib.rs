//! Browser demo: one simulated floor, an access-point heatmap, a full
//! Wi-Fi / LiDAR-IMU / EKF run with adjustable noise, and a scan viewer.
//!
//! Wi-Fi fixes come from k-nearest-neighbour matching so the page needs no
//! training step.

use fuselocate::eval::{align, mean_2d_error};
use fuselocate::experiment::{
    build_world, collect_fingerprints, run_ekf, run_lidar_imu, simulate_run, Direction, ExperimentConfig,
    FloorWorld,
};
use fuselocate::fingerprint::{knn_predict, preprocess, FingerprintDatabase};
use fuselocate::lidar_imu::ScanPose;
use fuselocate::sensors::{mean_rssi, LidarScan, MISSING_RSSI};
use fuselocate::{CellState, OccupancyGrid, Point2, Pose2D, TimedPose, Trajectory};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Every n-th IMU-rate pose is sent to the page.
const PLOT_STRIDE: usize = 10;

fn cell_codes(grid: &OccupancyGrid) -> Vec<u8> {
    grid.cells()
        .iter()
        .map(|c| match c {
            CellState::Free => 0,
            CellState::Wall => 1,
            CellState::Unknown => 2,
        })
        .collect()
}

fn points(traj: &Trajectory, stride: usize) -> Vec<[f64; 2]> {
    traj.samples().iter().step_by(stride).map(|s| [s.pose.x, s.pose.y]).collect()
}

fn mean_error(truth: &Trajectory, est: &Trajectory) -> Result<f64, String> {
    let a = align(truth, est).map_err(|e| e.to_string())?;
    mean_2d_error(&a.pairs).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Errors {
    pub wifi: f64,
    pub lidar_imu: f64,
    pub ekf: f64,
}

#[derive(Debug, Serialize)]
pub struct RunView {
    pub truth: Vec<[f64; 2]>,
    pub wifi: Vec<[f64; 2]>,
    pub lidar_imu: Vec<[f64; 2]>,
    pub ekf: Vec<[f64; 2]>,
    pub errors: Errors,
    pub scans: usize,
}

#[derive(Debug, Serialize)]
pub struct ScanView {
    pub t: f64,
    pub estimate: [f64; 3],
    pub truth: [f64; 3],
    pub converged: bool,
    /// Beam endpoints placed with the estimated pose.
    pub hits: Vec<[f64; 2]>,
}

struct LastRun {
    scans: Vec<LidarScan>,
    scan_poses: Vec<ScanPose>,
    truth: Trajectory,
    slam_map: OccupancyGrid,
}

#[wasm_bindgen]
pub struct Demo {
    cfg: ExperimentConfig,
    world: FloorWorld,
    db: FingerprintDatabase,
    last: Option<LastRun>,
}

impl Demo {
    pub fn create(seed: u64, floor: usize) -> Result<Demo, String> {
        let cfg = ExperimentConfig {
            master_seed: seed,
            ..ExperimentConfig::default()
        };
        let world = build_world(&cfg, floor).map_err(|e| e.to_string())?;
        let raw = collect_fingerprints(&cfg, &world).map_err(|e| e.to_string())?;
        let db = preprocess(&raw).map_err(|e| e.to_string())?;
        Ok(Demo {
            cfg,
            world,
            db,
            last: None,
        })
    }

    /// Noise-free RSSI of one access point at every `stride`-th cell centre,
    /// row by row from the bottom; NaN outside free space.
    pub fn heatmap_values(&self, ap: usize, stride: usize) -> Result<Vec<f32>, String> {
        let ap = self.world.aps.get(ap).ok_or_else(|| format!("no access point {ap}"))?;
        let g = self.world.grid.geometry;
        let stride = stride.max(1);
        let mut out = Vec::new();
        for iy in (0..g.height_cells).step_by(stride) {
            for ix in (0..g.width_cells).step_by(stride) {
                let v = if self.world.grid.get(ix, iy) == CellState::Free {
                    let at = g.cell_center(ix, iy);
                    mean_rssi(ap, &self.world.grid, at, self.cfg.radio.rssi.wall_loss_db).max(MISSING_RSSI) as f32
                } else {
                    f32::NAN
                };
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Simulates one drive with the given shadowing (dB) and gyro bias
    /// (deg/s) and runs all three estimators.
    pub fn run_view(&mut self, direction: &str, shadowing_db: f64, gyro_bias_deg_s: f64, k: usize) -> Result<RunView, String> {
        let direction = match direction {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            other => return Err(format!("unknown direction `{other}`")),
        };
        let mut cfg = self.cfg.clone();
        cfg.radio.rssi.shadowing_sigma = shadowing_db;
        cfg.imu.bias_gyro[2] = gyro_bias_deg_s.to_radians();
        cfg.validate().map_err(|e| e.to_string())?;
        let logs = simulate_run(&cfg, &self.world, direction).map_err(|e| e.to_string())?;
        let truth = logs.truth_trajectory();

        let k = k.clamp(1, self.db.len());
        let fixes = logs
            .rssi
            .iter()
            .map(|(t, v)| {
                let p = knn_predict(&self.db, v, k).map_err(|e| e.to_string())?;
                Ok(TimedPose {
                    t: *t,
                    pose: Pose2D::new(p.x, p.y, 0.0),
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let wifi = Trajectory::new(fixes).map_err(|e| e.to_string())?;
        let slam = run_lidar_imu(&cfg, self.world.grid.geometry, &logs.imu, &logs.scans, logs.start)
            .map_err(|e| e.to_string())?;
        let ekf = run_ekf(&cfg, &logs.imu, &wifi, logs.start.theta)
            .and_then(|o| Ok(o.trajectory()?))
            .map_err(|e| e.to_string())?;

        let view = RunView {
            truth: points(&truth, PLOT_STRIDE),
            wifi: points(&wifi, 1),
            lidar_imu: points(&slam.trajectory, PLOT_STRIDE),
            ekf: points(&ekf, PLOT_STRIDE),
            errors: Errors {
                wifi: mean_error(&truth, &wifi)?,
                lidar_imu: mean_error(&truth, &slam.trajectory)?,
                ekf: mean_error(&truth, &ekf)?,
            },
            scans: logs.scans.len(),
        };
        self.last = Some(LastRun {
            scans: logs.scans,
            scan_poses: slam.scan_poses,
            truth,
            slam_map: slam.map.to_occupancy(),
        });
        Ok(view)
    }

    fn last(&self) -> Result<&LastRun, String> {
        self.last.as_ref().ok_or_else(|| "no run yet".to_string())
    }

    pub fn scan_view(&self, index: usize) -> Result<ScanView, String> {
        let last = self.last()?;
        let scan = last.scans.get(index).ok_or_else(|| format!("no scan {index}"))?;
        let sp = &last.scan_poses[index];
        let truth = last
            .truth
            .samples()
            .iter()
            .min_by(|a, b| (a.t - scan.t).abs().total_cmp(&(b.t - scan.t).abs()))
            .map(|s| s.pose)
            .ok_or("empty ground truth")?;
        let hits = (0..scan.ranges.len())
            .filter(|&b| scan.is_hit(b))
            .map(|b| {
                let (s, c) = scan.angles[b].sin_cos();
                let p = sp.pose.transform(Point2::new(c * scan.ranges[b], s * scan.ranges[b]));
                [p.x, p.y]
            })
            .collect();
        Ok(ScanView {
            t: scan.t,
            estimate: [sp.pose.x, sp.pose.y, sp.pose.theta],
            truth: [truth.x, truth.y, truth.theta],
            converged: sp.converged,
            hits,
        })
    }
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, floor: usize) -> Result<Demo, JsError> {
        js(Demo::create(seed, floor))
    }

    pub fn width(&self) -> usize {
        self.world.grid.geometry.width_cells
    }

    pub fn height(&self) -> usize {
        self.world.grid.geometry.height_cells
    }

    pub fn resolution(&self) -> f64 {
        self.world.grid.geometry.resolution
    }

    pub fn origin_x(&self) -> f64 {
        self.world.grid.geometry.origin.x
    }

    pub fn origin_y(&self) -> f64 {
        self.world.grid.geometry.origin.y
    }

    pub fn access_point_count(&self) -> usize {
        self.world.aps.len()
    }

    /// Cell codes row by row from the bottom: 0 free, 1 wall, 2 unknown.
    pub fn cells(&self) -> Vec<u8> {
        cell_codes(&self.world.grid)
    }

    /// `[[x, y], ...]` of the access points.
    pub fn access_points(&self) -> Result<String, JsError> {
        json(&self.world.aps.iter().map(|a| [a.position.x, a.position.y]).collect::<Vec<_>>())
    }

    pub fn heatmap(&self, ap: usize, stride: usize) -> Result<Vec<f32>, JsError> {
        js(self.heatmap_values(ap, stride))
    }

    pub fn run(&mut self, direction: &str, shadowing_db: f64, gyro_bias_deg_s: f64, k: usize) -> Result<String, JsError> {
        let view = js(self.run_view(direction, shadowing_db, gyro_bias_deg_s, k))?;
        json(&view)
    }

    pub fn scan(&self, index: usize) -> Result<String, JsError> {
        let view = js(self.scan_view(index))?;
        json(&view)
    }

    /// The last run's LiDAR map as cell codes, same layout as `cells`.
    pub fn slam_map(&self) -> Result<Vec<u8>, JsError> {
        js(self.last().map(|l| cell_codes(&l.slam_map)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_is_strongest_next_to_its_access_point() {
        let demo = Demo::create(3, 0).unwrap();
        let g = demo.world.grid.geometry;
        let values = demo.heatmap_values(0, 1).unwrap();
        assert_eq!(values.len(), g.width_cells * g.height_cells);
        let ap = demo.world.aps[0].position;
        let (best, _) = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let at = g.cell_center(best % g.width_cells, best / g.width_cells);
        assert!(at.distance(ap) < 1.0, "peak {at:?} vs ap {ap:?}");
        assert!(demo.heatmap_values(99, 1).is_err());
    }

    #[test]
    fn run_then_scan() {
        let mut demo = Demo::create(3, 0).unwrap();
        assert!(demo.scan_view(0).is_err());
        let view = demo.run_view("backward", 4.0, 0.01, 3).unwrap();
        assert!(view.errors.ekf < view.errors.wifi, "{:?}", view.errors);
        assert!(view.scans > 100);
        let scan = demo.scan_view(view.scans / 2).unwrap();
        assert!(!scan.hits.is_empty());
        let e = Point2::new(scan.estimate[0], scan.estimate[1]);
        assert!(e.distance(Point2::new(scan.truth[0], scan.truth[1])) < 1.0);
        assert!(demo.run_view("sideways", 4.0, 0.0, 3).is_err());
    }
}
