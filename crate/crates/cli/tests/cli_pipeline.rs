use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use fuselocate::fingerprint::ModelFile;
use fuselocate_cli::manifest::Manifest;
use tempfile::TempDir;

const FLOORS: [&str; 3] = ["floor1", "floor2", "floor3"];
const DIRECTIONS: [&str; 2] = ["forward", "backward"];
const METHODS: [&str; 3] = ["wifi", "lidar_imu", "ekf"];
const REPORT_HEADER: &str = "run_id,floor,direction,method,mean,median,p95,max,n_samples";

/// A short survey and training schedule keeps each full pipeline to seconds.
const QUICK: [&str; 6] = [
    "--set",
    "fingerprint.train.epochs=3",
    "--set",
    "fingerprint.samples_per_rp=2",
    "--set",
    "fingerprint.rp_spacing=1.0",
];

fn cli(args: &[&str]) -> i32 {
    fuselocate_cli::main_with_args(std::iter::once("fuselocate").chain(args.iter().copied()))
}

fn quick(out: &Path, args: &[&str]) -> i32 {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(QUICK);
    all.extend(["--out", out.to_str().unwrap()]);
    cli(&all)
}

/// One full pipeline with seed 5, shared by the read-only tests.
fn shared() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        assert_eq!(quick(dir.path(), &["all", "--seed", "5"]), 0);
        dir
    })
    .path()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = read(path);
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn manifest(root: &Path) -> Manifest {
    serde_json::from_str(&read(&root.join("manifest.json"))).unwrap()
}

fn artifact_hashes(m: &Manifest) -> BTreeMap<String, BTreeMap<String, String>> {
    m.stages.iter().map(|(k, s)| (k.clone(), s.artifacts.clone())).collect()
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[test]
fn every_floor_and_direction_gets_its_logs() {
    let root = shared();
    let mut runs = 0;
    for floor in FLOORS {
        assert!(root.join(floor).join("map.pgm").is_file());
        assert!(root.join(floor).join("map.json").is_file());
        for dir in DIRECTIONS {
            let run = root.join(floor).join(dir);
            for log in ["truth.csv", "imu.csv", "rssi.csv", "scan.csv"] {
                assert!(run.join(log).is_file(), "{}", run.join(log).display());
            }
            for m in METHODS {
                assert!(run.join(m).join("trajectory.csv").is_file());
                assert!(run.join(m).join("events.jsonl").is_file());
            }
            runs += 1;
        }
    }
    assert_eq!(runs, 6);
}

#[test]
fn evaluate_tables_have_one_row_per_group() {
    let report = shared().join("report");
    let rows = |name: &str| {
        let text = read(&report.join(name));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        lines.map(|l| l.split(',').map(String::from).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    let floors = rows("floors.csv");
    assert_eq!(floors.len(), 9);
    for floor in FLOORS {
        let methods: Vec<&str> = floors.iter().filter(|r| r[1] == floor).map(|r| r[3].as_str()).collect();
        assert_eq!(methods.len(), 3, "{floor}");
    }
    let directions = rows("directions.csv");
    assert_eq!(directions.len(), 6);
    assert!(directions.iter().all(|r| r[1] == "all"));
    let per_run = rows("report.csv");
    assert_eq!(per_run.len(), 18);
    for r in per_run.iter().chain(&floors).chain(&directions) {
        let stats: Vec<f64> = r[4..8].iter().map(|v| v.parse().unwrap()).collect();
        assert!(stats[0] >= 0.0 && stats[1] <= stats[2] && stats[2] <= stats[3], "{r:?}");
        assert!(r[8].parse::<usize>().unwrap() > 0);
    }
    for run in ["floor1_forward", "floor3_backward"] {
        assert!(read(&report.join(format!("{run}.svg"))).contains("<svg xmlns"));
        for m in METHODS {
            assert!(report.join(format!("cdf_{run}_{m}.csv")).is_file());
        }
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&report.join("summary.json"))).unwrap();
    assert_eq!(summary["incomplete"], false);
}

#[test]
fn evaluating_an_empty_directory_writes_a_header_only_report() {
    let dir = TempDir::new().unwrap();
    assert_eq!(cli(&["evaluate", "--out", dir.path().to_str().unwrap()]), 0);
    let report = read(&dir.path().join("report/report.csv"));
    assert_eq!(report.trim_end(), REPORT_HEADER);
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join("report/summary.json"))).unwrap();
    assert_eq!(summary["incomplete"], true);
}

#[test]
fn logs_and_estimates_keep_their_rates() {
    let run = shared().join("floor2/backward");
    let steps = |ts: &[f64], dt: f64| ts.windows(2).all(|w| (w[1] - w[0] - dt).abs() < 1e-6);
    let rssi = column(&run.join("rssi.csv"), "t");
    assert!(rssi.len() > 30 && steps(&rssi, 1.0));
    let wifi = column(&run.join("wifi/trajectory.csv"), "t");
    assert_eq!(wifi, rssi);
    let imu = column(&run.join("imu.csv"), "t");
    let fused = column(&run.join("ekf/fused.csv"), "t");
    assert!(steps(&fused, 0.01));
    assert_eq!(fused, imu);
    let truth = column(&run.join("truth.csv"), "t");
    assert_eq!(truth.len(), imu.len());
}

#[test]
fn logs_use_nine_significant_digits() {
    let text = read(&shared().join("floor1/forward/imu.csv"));
    for field in text.lines().skip(1).take(200).flat_map(|l| l.split(',')) {
        let digits = field
            .split(['e', 'E'])
            .next()
            .unwrap()
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 9, "{field}");
    }
}

#[test]
fn maps_are_trinary_pgm_with_sidecar() {
    let root = shared();
    for path in [root.join("floor1/map.pgm"), root.join("floor1/forward/lidar_imu/map.pgm")] {
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let meta: serde_json::Value =
            serde_json::from_str(&read(&path.with_extension("json"))).unwrap();
        let (w, h) = (meta["width"].as_u64().unwrap() as usize, meta["height"].as_u64().unwrap() as usize);
        let pixels = &bytes[bytes.len() - w * h..];
        assert!(pixels.iter().all(|p| [0, 205, 254].contains(p)));
        assert!(pixels.contains(&0) && pixels.contains(&254));
    }
}

#[test]
fn model_json_round_trips_bit_exactly() {
    let path = shared().join("floor1/fingerprint/model.json");
    let text = read(&path);
    let file: ModelFile = serde_json::from_str(&text).unwrap();
    let (model, norm) = file.into_model().unwrap();
    let again = serde_json::to_string_pretty(&model.to_file(&norm)).unwrap() + "\n";
    assert_eq!(again, text);
}

#[test]
fn manifest_matches_the_files_on_disk() {
    let root = shared();
    let m = manifest(root);
    for stage in [
        "generate",
        "fingerprint.collect",
        "fingerprint.train",
        "fingerprint.predict",
        "fingerprint.eval",
        "run.wifi",
        "run.lidar_imu",
        "run.ekf",
        "evaluate",
    ] {
        assert!(m.stages.contains_key(stage), "{stage}");
    }
    assert!(m.stale_artifacts(root).is_empty());
    let resolved = std::fs::read(root.join("config.resolved.json")).unwrap();
    assert_eq!(fuselocate_cli::formats::sha256_hex(&resolved), m.config_hash);
    assert!(m.config_hash.starts_with(&m.run_id));
}

#[test]
fn same_seed_reproduces_every_artifact() {
    let dir = TempDir::new().unwrap();
    assert_eq!(quick(dir.path(), &["all", "--seed", "5", "--jobs", "2"]), 0);
    let (a, b) = (manifest(shared()), manifest(dir.path()));
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(artifact_hashes(&a), artifact_hashes(&b));
}

#[test]
fn another_seed_changes_the_logs() {
    let dir = TempDir::new().unwrap();
    assert_eq!(quick(dir.path(), &["generate", "--seed", "6"]), 0);
    let rel = "floor1/forward/rssi.csv";
    let (a, b) = (manifest(shared()), manifest(dir.path()));
    assert_ne!(a.config_hash, b.config_hash);
    assert_ne!(a.stages["generate"].artifacts[rel], b.stages["generate"].artifacts[rel]);
}

#[test]
fn rerunning_a_stage_restores_its_outputs() {
    let dir = TempDir::new().unwrap();
    copy_tree(shared(), dir.path());
    let lost = dir.path().join("floor3/forward/wifi/trajectory.csv");
    std::fs::remove_file(&lost).unwrap();
    assert_eq!(manifest(dir.path()).stale_artifacts(dir.path()), vec!["floor3/forward/wifi/trajectory.csv"]);
    assert_eq!(quick(dir.path(), &["run", "--method", "wifi", "--seed", "5"]), 0);
    assert_eq!(read(&lost), read(&shared().join("floor3/forward/wifi/trajectory.csv")));
    let m = manifest(dir.path());
    assert!(m.stale_artifacts(dir.path()).is_empty());
    assert_eq!(artifact_hashes(&m), artifact_hashes(&manifest(shared())));
}

#[test]
fn a_new_config_starts_a_new_manifest() {
    let dir = TempDir::new().unwrap();
    copy_tree(shared(), dir.path());
    assert_eq!(quick(dir.path(), &["evaluate", "--seed", "9"]), 0);
    let m = manifest(dir.path());
    assert_ne!(m.config_hash, manifest(shared()).config_hash);
    assert_eq!(m.stages.keys().collect::<Vec<_>>(), vec!["evaluate"]);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["generate", "--out", out, "--set", "ekf.no_such_key=1"]), 2);
    assert_eq!(cli(&["generate", "--out", out, "--set", "ekf.sigma_wifi=-1"]), 2);
    assert_eq!(cli(&["generate", "--out", out, "--jobs", "0"]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"ekf": {"sigma_wifi": "loud"}}"#).unwrap();
    assert_eq!(cli(&["generate", "--out", out, "--config", bad.to_str().unwrap()]), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(cli(&["generate", "--out", out, "--config", bad.to_str().unwrap()]), 2);
    assert!(!dir.path().join("floor1").exists());
}

#[test]
fn io_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, "x").unwrap();
    let under_file = file.join("out");
    assert_eq!(cli(&["evaluate", "--out", under_file.to_str().unwrap()]), 3);
    let missing = dir.path().join("absent.json");
    assert_eq!(cli(&["evaluate", "--config", missing.to_str().unwrap()]), 3);

    let copy = dir.path().join("copy");
    copy_tree(shared(), &copy);
    std::fs::write(copy.join("floor1/forward/rssi.csv"), "t,rssi_0\nnot-a-number,1\n").unwrap();
    assert_eq!(quick(&copy, &["run", "--method", "wifi", "--seed", "5"]), 3);
}

#[test]
fn missing_upstream_artifacts_exit_4() {
    let dir = TempDir::new().unwrap();
    assert_eq!(quick(dir.path(), &["run"]), 4);
    assert_eq!(quick(dir.path(), &["run", "--method", "lidar_imu"]), 4);
    assert_eq!(quick(dir.path(), &["fingerprint", "collect"]), 4);
    assert_eq!(quick(dir.path(), &["fingerprint", "train"]), 4);
}

#[test]
fn non_finite_filter_state_exits_5() {
    let dir = TempDir::new().unwrap();
    copy_tree(shared(), dir.path());
    let imu = dir.path().join("floor1/forward/imu.csv");
    let text = read(&imu);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
    fields[1] = "1e308".to_string();
    lines[5] = fields.join(",");
    std::fs::write(&imu, lines.join("\n") + "\n").unwrap();
    assert_eq!(quick(dir.path(), &["run", "--method", "ekf", "--seed", "5"]), 5);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fuselocate"))
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let from_env = dir.path().join("env-out");
    let status = binary()
        .args(["evaluate"])
        .env("FUSELOCATE_OUT", &from_env)
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(from_env.join("report/report.csv").is_file());

    let flag: PathBuf = dir.path().join("flag-out");
    let status = binary()
        .args(["evaluate", "--out", flag.to_str().unwrap()])
        .env("FUSELOCATE_OUT", dir.path().join("unused"))
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(flag.join("manifest.json").is_file());
    assert!(!dir.path().join("unused").exists());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"output_dir": "cfg-out"}"#).unwrap();
    let status = binary()
        .args(["evaluate", "--config", cfg.to_str().unwrap()])
        .env_remove("FUSELOCATE_OUT")
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("cfg-out/manifest.json").is_file());
}

#[test]
fn help_exits_0() {
    let out = binary().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["generate", "fingerprint", "run", "evaluate", "all"] {
        assert!(text.contains(sub), "{sub}");
    }
}
