//! Where each artifact lives under the output directory.
//!
//! ```text
//! OUT/config.resolved.json, OUT/manifest.json
//! OUT/<floor>/map.pgm|json, aps.json
//! OUT/<floor>/fingerprint/db.csv, model.json, train_report.json, eval.json, predict_<dir>.csv
//! OUT/<floor>/<dir>/truth.csv, imu.csv, rssi.csv, scan.csv
//! OUT/<floor>/<dir>/<method>/trajectory.csv, events.jsonl (+ fused.csv, map.pgm|json)
//! OUT/report/report.csv, floors.csv, directions.csv, summary.json, <run>.svg, cdf_<run>_<method>.csv
//! ```

use std::path::{Path, PathBuf};

use fuselocate::eval::Method;
use fuselocate::experiment::{Direction, ExperimentConfig};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    floor_names: Vec<String>,
}

impl Layout {
    pub fn new(root: &Path, cfg: &ExperimentConfig) -> Self {
        Self {
            root: root.to_path_buf(),
            floor_names: cfg.floors.iter().map(|f| f.name.clone()).collect(),
        }
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn floor_name(&self, floor: usize) -> &str {
        &self.floor_names[floor]
    }

    pub fn floor_dir(&self, floor: usize) -> PathBuf {
        self.root.join(self.floor_name(floor))
    }

    pub fn map(&self, floor: usize) -> PathBuf {
        self.floor_dir(floor).join("map.pgm")
    }

    pub fn aps(&self, floor: usize) -> PathBuf {
        self.floor_dir(floor).join("aps.json")
    }

    fn fingerprint_dir(&self, floor: usize) -> PathBuf {
        self.floor_dir(floor).join("fingerprint")
    }

    pub fn db(&self, floor: usize) -> PathBuf {
        self.fingerprint_dir(floor).join("db.csv")
    }

    pub fn model(&self, floor: usize) -> PathBuf {
        self.fingerprint_dir(floor).join("model.json")
    }

    pub fn train_report(&self, floor: usize) -> PathBuf {
        self.fingerprint_dir(floor).join("train_report.json")
    }

    pub fn fingerprint_eval(&self, floor: usize) -> PathBuf {
        self.fingerprint_dir(floor).join("eval.json")
    }

    pub fn predictions(&self, floor: usize, dir: Direction) -> PathBuf {
        self.fingerprint_dir(floor).join(format!("predict_{}.csv", dir.name()))
    }

    pub fn run_dir(&self, floor: usize, dir: Direction) -> PathBuf {
        self.floor_dir(floor).join(dir.name())
    }

    pub fn truth(&self, floor: usize, dir: Direction) -> PathBuf {
        self.run_dir(floor, dir).join("truth.csv")
    }

    pub fn imu(&self, floor: usize, dir: Direction) -> PathBuf {
        self.run_dir(floor, dir).join("imu.csv")
    }

    pub fn rssi(&self, floor: usize, dir: Direction) -> PathBuf {
        self.run_dir(floor, dir).join("rssi.csv")
    }

    pub fn scans(&self, floor: usize, dir: Direction) -> PathBuf {
        self.run_dir(floor, dir).join("scan.csv")
    }

    pub fn method_dir(&self, floor: usize, dir: Direction, method: Method) -> PathBuf {
        self.run_dir(floor, dir).join(method.name())
    }

    pub fn trajectory(&self, floor: usize, dir: Direction, method: Method) -> PathBuf {
        self.method_dir(floor, dir, method).join("trajectory.csv")
    }

    pub fn events(&self, floor: usize, dir: Direction, method: Method) -> PathBuf {
        self.method_dir(floor, dir, method).join("events.jsonl")
    }

    pub fn fused(&self, floor: usize, dir: Direction) -> PathBuf {
        self.method_dir(floor, dir, Method::Ekf).join("fused.csv")
    }

    pub fn slam_map(&self, floor: usize, dir: Direction) -> PathBuf {
        self.method_dir(floor, dir, Method::LidarImu).join("map.pgm")
    }

    pub fn run_id(&self, floor: usize, dir: Direction) -> String {
        format!("{}_{}", self.floor_name(floor), dir.name())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}
