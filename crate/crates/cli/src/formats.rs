//! On-disk artifact encodings. Floats in CSV files carry 9 significant digits.

use std::path::{Path, PathBuf};

use fuselocate::ekf::FusedSample;
use fuselocate::fingerprint::{FingerprintDatabase, FingerprintRecord};
use fuselocate::grid::MapMetadata;
use fuselocate::sensors::{ImuSample, LidarScan, RssiVector};
use fuselocate::world::GroundTruthSample;
use fuselocate::{OccupancyGrid, Point2, Pose2D, TimedPose, Trajectory};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// `%.9g`: 9 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-5, 1e9)`.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        trim_zeros(format!("{:.*}", (8 - exp).max(0) as usize, x))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes artifacts under an output root and remembers their hashes.
#[derive(Debug)]
pub struct Sink {
    root: PathBuf,
    pub written: Vec<(String, String)>,
}

impl Sink {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io("create", parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| CliError::io("write", path, e))?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.written.push((rel.to_string_lossy().replace('\\', "/"), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        self.write(path, &json_bytes(value))
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// Fails with a missing-dependency error naming `stage` when `path` is absent.
pub fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing {
            path: path.to_path_buf(),
            stage,
        })
    }
}

pub fn read_input(path: &Path, stage: &'static str) -> Result<Vec<u8>> {
    require(path, stage)?;
    std::fs::read(path).map_err(|e| CliError::io("read", path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    let bytes = read_input(path, stage)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::malformed(path, e))
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable");
        out.push(b'\n');
    }
    out
}

pub fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn indexed_header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    let mut h = header(fixed);
    h.extend((0..n).map(|i| format!("{prefix}{i}")));
    h
}

fn nums(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(fmt9).collect()
}

/// Numeric CSV table with its header.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path, stage: &'static str, expected_prefix: &[&str]) -> Result<Table> {
    let bytes = read_input(path, stage)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::malformed(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < expected_prefix.len()
        || header.iter().zip(expected_prefix).any(|(a, b)| a != b)
    {
        return Err(CliError::malformed(
            path,
            format!("header must start with {}", expected_prefix.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::malformed(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::malformed(path, format!("row {}: {e}", i + 2)))?;
        if row.len() != header.len() {
            return Err(CliError::malformed(path, format!("row {} has {} fields", i + 2, row.len())));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

const TRUTH_HEADER: [&str; 7] = ["t", "x", "y", "theta", "v", "omega", "a"];

pub fn truth_csv(samples: &[GroundTruthSample]) -> Vec<u8> {
    csv_bytes(
        &header(&TRUTH_HEADER),
        samples.iter().map(|s| nums([s.t, s.pose.x, s.pose.y, s.pose.theta, s.v, s.omega, s.a])),
    )
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthSample>> {
    let table = read_table(path, "generate", &TRUTH_HEADER)?;
    Ok(table
        .rows
        .iter()
        .map(|r| GroundTruthSample {
            t: r[0],
            pose: Pose2D::new(r[1], r[2], r[3]),
            v: r[4],
            omega: r[5],
            a: r[6],
        })
        .collect())
}

const IMU_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];

pub fn imu_csv(samples: &[ImuSample]) -> Vec<u8> {
    csv_bytes(
        &header(&IMU_HEADER),
        samples.iter().map(|s| {
            nums(std::iter::once(s.t).chain(s.accel).chain(s.gyro))
        }),
    )
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    let table = read_table(path, "generate", &IMU_HEADER)?;
    Ok(table
        .rows
        .iter()
        .map(|r| ImuSample {
            t: r[0],
            accel: [r[1], r[2], r[3]],
            gyro: [r[4], r[5], r[6]],
        })
        .collect())
}

pub fn rssi_csv(fixes: &[(f64, RssiVector)]) -> Vec<u8> {
    let m = fixes.first().map_or(0, |f| f.1.len());
    csv_bytes(
        &indexed_header(&["t"], "rssi_", m),
        fixes.iter().map(|(t, v)| nums(std::iter::once(*t).chain(v.0.iter().copied()))),
    )
}

pub fn read_rssi(path: &Path) -> Result<Vec<(f64, RssiVector)>> {
    let table = read_table(path, "generate", &["t"])?;
    Ok(table
        .rows
        .into_iter()
        .map(|r| (r[0], RssiVector(r[1..].to_vec())))
        .collect())
}

const SCAN_HEADER: [&str; 4] = ["t", "beam_index", "angle", "range"];

pub fn scan_csv(scans: &[LidarScan]) -> Vec<u8> {
    csv_bytes(
        &header(&SCAN_HEADER),
        scans.iter().flat_map(|s| {
            s.angles.iter().zip(&s.ranges).enumerate().map(move |(i, (a, r))| {
                vec![fmt9(s.t), i.to_string(), fmt9(*a), fmt9(*r)]
            })
        }),
    )
}

/// Groups beam rows back into scans; rows of one scan are consecutive.
pub fn read_scans(path: &Path, max_range: f64) -> Result<Vec<LidarScan>> {
    let table = read_table(path, "generate", &SCAN_HEADER)?;
    let mut scans: Vec<LidarScan> = Vec::new();
    for r in &table.rows {
        let beam = r[1] as usize;
        let start_new = scans.last().is_none_or(|s| s.t != r[0]);
        if start_new {
            if beam != 0 {
                return Err(CliError::malformed(path, format!("scan at t = {} starts at beam {beam}", r[0])));
            }
            scans.push(LidarScan {
                t: r[0],
                angles: Vec::new(),
                ranges: Vec::new(),
                max_range,
            });
        }
        let scan = scans.last_mut().expect("pushed above");
        if beam != scan.angles.len() {
            return Err(CliError::malformed(path, format!("beam {beam} out of order at t = {}", r[0])));
        }
        scan.angles.push(r[2]);
        scan.ranges.push(r[3].min(max_range));
    }
    Ok(scans)
}

pub fn db_csv(db: &FingerprintDatabase) -> Vec<u8> {
    csv_bytes(
        &indexed_header(&["x", "y"], "rssi_", db.ap_count),
        db.records
            .iter()
            .map(|r| nums([r.position.x, r.position.y].into_iter().chain(r.rssi.iter().copied()))),
    )
}

pub fn read_db(path: &Path) -> Result<FingerprintDatabase> {
    let table = read_table(path, "fingerprint collect", &["x", "y"])?;
    let m = table.header.len() - 2;
    let records = table
        .rows
        .into_iter()
        .map(|r| FingerprintRecord {
            position: Point2::new(r[0], r[1]),
            rssi: r[2..].to_vec(),
        })
        .collect();
    FingerprintDatabase::new(records, m).map_err(|e| CliError::malformed(path, e))
}

const TRAJECTORY_HEADER: [&str; 4] = ["t", "x", "y", "theta"];

pub fn trajectory_csv(traj: &Trajectory) -> Vec<u8> {
    csv_bytes(
        &header(&TRAJECTORY_HEADER),
        traj.samples()
            .iter()
            .map(|s| nums([s.t, s.pose.x, s.pose.y, s.pose.theta])),
    )
}

pub fn read_trajectory(path: &Path, stage: &'static str) -> Result<Trajectory> {
    let table = read_table(path, stage, &TRAJECTORY_HEADER)?;
    let samples = table
        .rows
        .iter()
        .map(|r| TimedPose {
            t: r[0],
            pose: Pose2D::new(r[1], r[2], r[3]),
        })
        .collect();
    Trajectory::new(samples).map_err(|e| CliError::malformed(path, e))
}

pub fn fused_csv(samples: &[FusedSample]) -> Vec<u8> {
    csv_bytes(
        &header(&["t", "x", "y", "theta", "v", "omega", "p_xx", "p_yy"]),
        samples.iter().map(|s| {
            let x = &s.state;
            nums([s.t, x.x, x.y, x.theta, x.v, x.omega, s.p_xx, s.p_yy])
        }),
    )
}

/// PGM image plus its JSON sidecar, written next to each other.
pub fn write_map(sink: &mut Sink, pgm_path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let image = pgm_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    sink.write(pgm_path, &grid.to_pgm())?;
    sink.write_json(&pgm_path.with_extension("json"), &grid.metadata(&image))
}

pub fn read_map(pgm_path: &Path, stage: &'static str) -> Result<OccupancyGrid> {
    let meta: MapMetadata = read_json(&pgm_path.with_extension("json"), stage)?;
    let bytes = read_input(pgm_path, stage)?;
    OccupancyGrid::from_pgm(&bytes, &meta).map_err(|e| CliError::malformed(pgm_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(-0.0), "0");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(0.1), "0.1");
        assert_eq!(fmt9(-110.0), "-110");
        assert_eq!(fmt9(std::f64::consts::PI), "3.14159265");
        assert_eq!(fmt9(123456.789012), "123456.789");
        assert_eq!(fmt9(9.9999999999), "10");
        assert_eq!(fmt9(1.5e-7), "1.5e-7");
        assert_eq!(fmt9(2.5e12), "2.5e12");
        assert_eq!(fmt9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn formatted_values_keep_nine_digits() {
        for x in [1.0 / 3.0, -2.0 / 7.0, 1e-3 / 3.0, 12345.678901234, 7.0e10 / 3.0] {
            let back: f64 = fmt9(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 5e-9, "{x} -> {}", fmt9(x));
        }
    }
}
