//! Trajectory evaluation: time alignment, mean 2D error, per-method
//! comparison, overlay plots, and error CDFs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::grid::{CellState, OccupancyGrid};
use crate::trajectory::Trajectory;

/// Default plotting decimation: every 10th sample.
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("trajectories do not overlap in time")]
    NoOverlap,
    #[error("no estimate could be evaluated")]
    NoEstimates,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub t: f64,
    pub truth: Point2,
    pub pred: Point2,
}

impl AlignedPair {
    pub fn error(&self) -> f64 {
        let dx = self.pred.x - self.truth.x;
        let dy = self.pred.y - self.truth.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// `(1/N) * sum_i |pred_i - truth_i|`, summed in input order.
pub fn mean_2d_error(pairs: &[AlignedPair]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += p.error();
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    /// Truth samples outside the prediction's time span.
    pub dropped: usize,
}

/// Interpolates `pred` at every truth timestamp inside its span.
pub fn align(truth: &Trajectory, pred: &Trajectory) -> Result<Alignment, EvalError> {
    let mut pairs = Vec::with_capacity(truth.len());
    let mut dropped = 0;
    for s in truth.samples() {
        match pred.position_at(s.t) {
            Some(p) => pairs.push(AlignedPair {
                t: s.t,
                truth: s.pose.position(),
                pred: p,
            }),
            None => dropped += 1,
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(Alignment { pairs, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wifi,
    LidarImu,
    Ekf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Wifi, Method::LidarImu, Method::Ekf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wifi => "wifi",
            Method::LidarImu => "lidar_imu",
            Method::Ekf => "ekf",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Wifi => "Wi-Fi",
            Method::LidarImu => "LiDAR/IMU",
            Method::Ekf => "EKF",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub n_samples: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn error_stats(pairs: &[AlignedPair]) -> Result<ErrorStats, EvalError> {
    let mean = mean_2d_error(pairs)?;
    let mut errors: Vec<f64> = pairs.iter().map(AlignedPair::error).collect();
    errors.sort_by(f64::total_cmp);
    Ok(ErrorStats {
        mean,
        median: quantile(&errors, 0.5),
        p95: quantile(&errors, 0.95),
        max: *errors.last().expect("nonempty"),
        n_samples: errors.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub stats: ErrorStats,
    pub dropped: usize,
    /// Mean error between consecutive segment break times.
    pub segment_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sorted by mean error, then method name.
    pub reports: Vec<MethodReport>,
    /// `(metric, method)` for mean, median, p95 and max.
    pub winners: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn segment_errors(pairs: &[AlignedPair], breaks: &[f64]) -> Vec<f64> {
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend_from_slice(breaks);
    bounds.push(f64::INFINITY);
    bounds
        .windows(2)
        .filter_map(|w| {
            let seg: Vec<AlignedPair> = pairs
                .iter()
                .filter(|p| p.t >= w[0] && p.t < w[1])
                .copied()
                .collect();
            mean_2d_error(&seg).ok()
        })
        .collect()
}

type Metric = fn(&ErrorStats) -> f64;

/// Evaluates each named estimate against `truth`. Estimates that cannot be
/// aligned are skipped with a warning.
pub fn compare_methods(
    truth: &Trajectory,
    estimates: &BTreeMap<String, Trajectory>,
    segment_breaks: &[f64],
) -> Result<Comparison, EvalError> {
    let mut reports = Vec::new();
    let mut warnings = Vec::new();
    for (name, est) in estimates {
        match align(truth, est) {
            Ok(a) => reports.push(MethodReport {
                method: name.clone(),
                stats: error_stats(&a.pairs)?,
                dropped: a.dropped,
                segment_errors: segment_errors(&a.pairs, segment_breaks),
            }),
            Err(e) => warnings.push(format!("{name}: {e}")),
        }
    }
    if reports.is_empty() {
        return Err(EvalError::NoEstimates);
    }
    reports.sort_by(|a, b| {
        a.stats
            .mean
            .total_cmp(&b.stats.mean)
            .then_with(|| a.method.cmp(&b.method))
    });
    let metrics: [(&str, Metric); 4] = [
        ("mean", |s| s.mean),
        ("median", |s| s.median),
        ("p95", |s| s.p95),
        ("max", |s| s.max),
    ];
    let winners = metrics
        .iter()
        .map(|(metric, get)| {
            let best = reports
                .iter()
                .min_by(|a, b| get(&a.stats).total_cmp(&get(&b.stats)).then_with(|| a.method.cmp(&b.method)))
                .expect("nonempty");
            (metric.to_string(), best.method.clone())
        })
        .collect();
    Ok(Comparison {
        reports,
        winners,
        warnings,
    })
}

/// Cumulative error distribution: each distinct error with the fraction of
/// samples at or below it.
pub fn error_cdf(pairs: &[AlignedPair]) -> Result<Vec<(f64, f64)>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut errors: Vec<f64> = pairs.iter().map(AlignedPair::error).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in errors.iter().enumerate() {
        let frac = (i + 1) as f64 / n as f64;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    Ok(out)
}

const PX_PER_M: f64 = 40.0;
const MARGIN_PX: f64 = 20.0;
const LEGEND_PX: f64 = 22.0;
const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Indices kept when plotting every `stride`-th sample; the last sample is
/// always included.
pub fn decimated_indices(len: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

/// Standalone SVG with walls, the truth path, and each estimate dashed.
pub fn render_overlay(
    grid: &OccupancyGrid,
    truth: &Trajectory,
    estimates: &[(String, &Trajectory)],
    stride: usize,
) -> Result<String, EvalError> {
    if truth.is_empty() || estimates.iter().any(|(_, t)| t.is_empty()) {
        return Err(EvalError::Empty);
    }
    let g = &grid.geometry;
    let width = g.width_m() * PX_PER_M + 2.0 * MARGIN_PX;
    let map_height = g.height_m() * PX_PER_M + 2.0 * MARGIN_PX;
    let height = map_height + LEGEND_PX * (estimates.len() + 1) as f64;
    let to_px = |p: Point2| {
        (
            MARGIN_PX + (p.x - g.origin.x) * PX_PER_M,
            MARGIN_PX + (g.origin.y + g.height_m() - p.y) * PX_PER_M,
        )
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.3}" height="{height:.3}" viewBox="0 0 {width:.3} {height:.3}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r##"<g id="walls" fill="#555555">"##);
    let cell = g.resolution * PX_PER_M;
    for iy in 0..g.height_cells {
        let mut ix = 0;
        while ix < g.width_cells {
            if grid.get(ix, iy) != CellState::Wall {
                ix += 1;
                continue;
            }
            let start = ix;
            while ix < g.width_cells && grid.get(ix, iy) == CellState::Wall {
                ix += 1;
            }
            let corner = Point2::new(
                g.origin.x + start as f64 * g.resolution,
                g.origin.y + (iy + 1) as f64 * g.resolution,
            );
            let (x, y) = to_px(corner);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{cell:.3}"/>"#,
                (ix - start) as f64 * cell
            );
        }
    }
    let _ = writeln!(svg, "</g>");

    let polyline = |svg: &mut String, id: &str, traj: &Trajectory, color: &str, dash: Option<&str>| {
        let samples = traj.samples();
        let points: Vec<String> = decimated_indices(samples.len(), stride)
            .into_iter()
            .map(|i| {
                let (x, y) = to_px(samples[i].pose.position());
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            svg,
            r#"<polyline id="{id}" data-samples="{}" data-stride="{}" fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            samples.len(),
            stride.max(1),
            points.join(" ")
        );
    };
    polyline(&mut svg, "truth", truth, "#000000", None);
    for (i, (name, traj)) in estimates.iter().enumerate() {
        polyline(&mut svg, name, traj, COLORS[i % COLORS.len()], Some("6,4"));
    }

    let _ = writeln!(svg, r#"<g id="legend" font-family="sans-serif" font-size="13">"#);
    let mut entries = vec![("truth".to_string(), "#000000", None)];
    for (i, (name, _)) in estimates.iter().enumerate() {
        entries.push((name.clone(), COLORS[i % COLORS.len()], Some("6,4")));
    }
    for (i, (name, color, dash)) in entries.iter().enumerate() {
        let y = map_height + LEGEND_PX * i as f64 + 0.5 * LEGEND_PX;
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            svg,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="{color}" stroke-width="2"{dash}/>"#,
            MARGIN_PX,
            MARGIN_PX + 30.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}">{}</text>"#,
            MARGIN_PX + 38.0,
            y + 4.0,
            escape(name)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_overlay(path: &Path, svg: &str) -> Result<(), EvalError> {
    std::fs::write(path, svg).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::grid::GridGeometry;
    use crate::trajectory::TimedPose;

    fn line(n: usize, dt: f64, speed: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|k| TimedPose {
                    t: k as f64 * dt,
                    pose: Pose2D::new(speed * k as f64 * dt, 1.0, 0.0),
                })
                .collect(),
        )
        .unwrap()
    }

    fn pair(dx: f64, dy: f64) -> AlignedPair {
        AlignedPair {
            t: 0.0,
            truth: Point2::new(1.0, 1.0),
            pred: Point2::new(1.0 + dx, 1.0 + dy),
        }
    }

    #[test]
    fn mean_error_arithmetic() {
        assert_eq!(mean_2d_error(&[pair(3.0, 4.0), pair(0.0, 0.0)]).unwrap(), 2.5);
        assert_eq!(mean_2d_error(&[pair(0.0, 0.0)]).unwrap(), 0.0);
        assert!(matches!(mean_2d_error(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn align_identical_grids_zips() {
        let t = line(20, 0.1, 1.0);
        let a = align(&t, &t).unwrap();
        assert_eq!(a.pairs.len(), 20);
        assert_eq!(a.dropped, 0);
        assert!(a.pairs.iter().all(|p| p.truth == p.pred));
    }

    #[test]
    fn align_half_rate_is_exact_for_linear_motion() {
        let truth = line(21, 0.05, 2.0);
        let pred = line(11, 0.1, 2.0);
        let a = align(&truth, &pred).unwrap();
        assert_eq!(a.pairs.len(), 21);
        for p in &a.pairs {
            assert!((p.pred.x - p.truth.x).abs() < 1e-12);
        }
    }

    #[test]
    fn align_drops_outside_and_rejects_disjoint() {
        let truth = line(30, 0.1, 1.0);
        let pred = Trajectory::new(truth.samples()[5..15].to_vec()).unwrap();
        let a = align(&truth, &pred).unwrap();
        assert_eq!(a.pairs.len(), 10);
        assert_eq!(a.dropped, 20);
        let later = Trajectory::new(
            truth
                .samples()
                .iter()
                .map(|s| TimedPose { t: s.t + 100.0, ..*s })
                .collect(),
        )
        .unwrap();
        assert!(matches!(align(&truth, &later), Err(EvalError::NoOverlap)));
    }

    #[test]
    fn compare_orders_and_breaks_ties_by_name() {
        let truth = line(50, 0.1, 1.0);
        let off = truth.translated(Point2::new(0.0, 0.3));
        let far = truth.translated(Point2::new(0.0, 0.9));
        let mut est = BTreeMap::new();
        est.insert("wifi".to_string(), far.clone());
        est.insert("lidar_imu".to_string(), off.clone());
        est.insert("ekf".to_string(), off.clone());
        let c = compare_methods(&truth, &est, &[2.5]).unwrap();
        let names: Vec<&str> = c.reports.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["ekf", "lidar_imu", "wifi"]);
        assert_eq!(c.reports[0].stats, c.reports[1].stats);
        assert!(c.winners.iter().all(|(_, m)| m == "ekf"));
        assert_eq!(c.reports[2].segment_errors.len(), 2);

        let mut single = BTreeMap::new();
        single.insert("wifi".to_string(), far);
        let c = compare_methods(&truth, &single, &[]).unwrap();
        assert_eq!(c.reports.len(), 1);
        assert!(c.winners.iter().all(|(_, m)| m == "wifi"));
    }

    #[test]
    fn compare_skips_unalignable() {
        let truth = line(10, 0.1, 1.0);
        let mut est = BTreeMap::new();
        est.insert("ekf".to_string(), truth.clone());
        let shifted = Trajectory::new(
            truth
                .samples()
                .iter()
                .map(|s| TimedPose { t: s.t + 50.0, ..*s })
                .collect(),
        )
        .unwrap();
        est.insert("wifi".to_string(), shifted);
        let c = compare_methods(&truth, &est, &[]).unwrap();
        assert_eq!(c.reports.len(), 1);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn cdf_steps() {
        let zeros = vec![pair(0.0, 0.0); 4];
        assert_eq!(error_cdf(&zeros).unwrap(), vec![(0.0, 1.0)]);
        let pairs: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&d| pair(d, 0.0)).collect();
        let cdf = error_cdf(&pairs).unwrap();
        assert_eq!(cdf[1], (2.0, 0.5));
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    }

    #[test]
    fn stats_ordering() {
        let pairs: Vec<_> = (0..100).map(|i| pair(i as f64 * 0.01, 0.0)).collect();
        let s = error_stats(&pairs).unwrap();
        assert!(s.p95 >= s.median);
        assert_eq!(s.max, 0.99);
        assert_eq!(s.n_samples, 100);
    }

    #[test]
    fn decimation_keeps_last() {
        assert_eq!(decimated_indices(25, 10), vec![0, 10, 20, 24]);
        assert_eq!(decimated_indices(21, 10), vec![0, 10, 20]);
        assert_eq!(decimated_indices(0, 10), Vec::<usize>::new());
    }

    #[test]
    fn overlay_truth_only_and_deterministic() {
        let g = GridGeometry::new(40, 20, 0.1, Point2::new(0.0, 0.0)).unwrap();
        let mut grid = OccupancyGrid::filled(g, CellState::Free);
        for ix in 0..40 {
            grid.set(ix, 0, CellState::Wall);
        }
        let truth = line(25, 0.1, 1.0);
        let a = render_overlay(&grid, &truth, &[], 10).unwrap();
        assert_eq!(a.matches("<polyline").count(), 1);
        assert_eq!(a.matches("<rect").count(), 2);
        let b = render_overlay(&grid, &truth, &[], 10).unwrap();
        assert_eq!(a, b);
    }
}
