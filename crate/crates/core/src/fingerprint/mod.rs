//! RSSI fingerprint database, preprocessing, and position regression.

mod mlp;

pub use mlp::{
    train_mlp, Dense, Gradients, MlpModel, ModelFile, TrainConfig, TrainReport, HIDDEN_WIDTHS,
    MODEL_FILE_VERSION,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::grid::{CellState, OccupancyGrid};
use crate::sensors::{simulate_rssi, RssiParams, RssiVector, SensorError, MISSING_RSSI};
use crate::world::AccessPoint;

/// Fewer heard APs than this marks a prediction as low confidence.
pub const MIN_HEARD_APS: usize = 3;
const OUTLIER_IQR_FACTOR: f64 = 3.0;
const MIN_OUTLIER_SAMPLES: usize = 4;

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("database is empty")]
    EmptyDatabase,
    #[error("no free cells on the reference point lattice")]
    NoReferencePoints,
    #[error("rp spacing {spacing} m is finer than the grid resolution {resolution} m")]
    SpacingTooFine { spacing: f64, resolution: f64 },
    #[error("expected an RSSI vector of length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("k = {k} must be in 1..={records}")]
    BadK { k: usize, records: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("unsupported model file version {0}")]
    ModelVersion(u32),
    #[error("model file is inconsistent: {0}")]
    BadModelFile(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub position: Point2,
    pub rssi: Vec<f64>,
}

/// Per-feature min-max scaling, `(value - offset) * scale`, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn fit(records: &[FingerprintRecord], ap_count: usize) -> Self {
        let mut lo = vec![f64::INFINITY; ap_count];
        let mut hi = vec![f64::NEG_INFINITY; ap_count];
        for r in records {
            for (j, &v) in r.rssi.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| if h > l { 1.0 / (h - l) } else { 0.0 })
            .collect();
        let offset = lo.into_iter().map(|l| if l.is_finite() { l } else { 0.0 }).collect();
        Self { offset, scale }
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    /// Scales a raw dBm vector; missing entries are already the dense sentinel.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(&v, (&o, &s))| ((v - o) * s).clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintDatabase {
    pub records: Vec<FingerprintRecord>,
    pub ap_count: usize,
    /// Present once the database has been preprocessed; records then hold
    /// scaled features.
    pub normalization: Option<Normalization>,
}

impl FingerprintDatabase {
    pub fn new(records: Vec<FingerprintRecord>, ap_count: usize) -> Result<Self, FingerprintError> {
        for r in &records {
            if r.rssi.len() != ap_count {
                return Err(FingerprintError::LengthMismatch {
                    expected: ap_count,
                    actual: r.rssi.len(),
                });
            }
        }
        Ok(Self {
            records,
            ap_count,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.normalization.is_some()
    }

    /// Distinct reference point positions, in first-seen order.
    pub fn reference_points(&self) -> Vec<Point2> {
        let mut seen = BTreeMap::new();
        for r in &self.records {
            let n = seen.len();
            seen.entry(position_key(r.position)).or_insert((n, r.position));
        }
        let mut rps: Vec<_> = seen.into_values().collect();
        rps.sort_by_key(|(order, _)| *order);
        rps.into_iter().map(|(_, p)| p).collect()
    }

    /// Maps a raw RSSI vector into this database's feature space.
    pub fn features(&self, rssi: &RssiVector) -> Result<Vec<f64>, FingerprintError> {
        if rssi.len() != self.ap_count {
            return Err(FingerprintError::LengthMismatch {
                expected: self.ap_count,
                actual: rssi.len(),
            });
        }
        Ok(match &self.normalization {
            Some(n) => n.apply(&rssi.0),
            None => rssi.0.clone(),
        })
    }

    /// Random record-level split; both halves keep at least one record.
    pub fn split(&self, train_ratio: f64, rng: &mut impl Rng) -> (Self, Self) {
        let n = self.records.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = ((train_ratio * n as f64).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1.min(n)));
        let pick = |ids: &[usize]| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            Self {
                records: ids.iter().map(|&i| self.records[i].clone()).collect(),
                ap_count: self.ap_count,
                normalization: self.normalization.clone(),
            }
        };
        (pick(&idx[..n_train]), pick(&idx[n_train..]))
    }

    /// Applies `normalization` to a raw database.
    pub fn normalized_with(&self, normalization: &Normalization) -> Self {
        Self {
            records: self
                .records
                .iter()
                .map(|r| FingerprintRecord {
                    position: r.position,
                    rssi: normalization.apply(&r.rssi),
                })
                .collect(),
            ap_count: self.ap_count,
            normalization: Some(normalization.clone()),
        }
    }
}

fn position_key(p: Point2) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

/// Reference points on a square lattice (cell-centred offsets of
/// `rp_spacing / 2`) restricted to free space.
pub fn reference_lattice(grid: &OccupancyGrid, rp_spacing: f64) -> Vec<Point2> {
    let g = &grid.geometry;
    let nx = (g.width_m() / rp_spacing).floor() as usize;
    let ny = (g.height_m() / rp_spacing).floor() as usize;
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let p = Point2::new(
                g.origin.x + (i as f64 + 0.5) * rp_spacing,
                g.origin.y + (j as f64 + 0.5) * rp_spacing,
            );
            if grid.state_at(p) == CellState::Free {
                out.push(p);
            }
        }
    }
    out
}

pub fn collect_database(
    grid: &OccupancyGrid,
    aps: &[AccessPoint],
    rp_spacing: f64,
    samples_per_rp: usize,
    params: &RssiParams,
    rng: &mut impl Rng,
) -> Result<FingerprintDatabase, FingerprintError> {
    if !(rp_spacing >= grid.geometry.resolution) {
        return Err(FingerprintError::SpacingTooFine {
            spacing: rp_spacing,
            resolution: grid.geometry.resolution,
        });
    }
    let rps = reference_lattice(grid, rp_spacing);
    if rps.is_empty() {
        return Err(FingerprintError::NoReferencePoints);
    }
    let mut records = Vec::with_capacity(rps.len() * samples_per_rp);
    for p in rps {
        let pose = crate::geometry::Pose2D::new(p.x, p.y, 0.0);
        for _ in 0..samples_per_rp {
            let rssi = simulate_rssi(aps, grid, &pose, params, rng)?;
            records.push(FingerprintRecord {
                position: p,
                rssi: rssi.0,
            });
        }
    }
    FingerprintDatabase::new(records, aps.len())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices of records flagged by the per-RP `3 x IQR` rule.
fn outlier_records(db: &FingerprintDatabase) -> Vec<bool> {
    let mut groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in db.records.iter().enumerate() {
        groups.entry(position_key(r.position)).or_default().push(i);
    }
    let mut flagged = vec![false; db.records.len()];
    for members in groups.values() {
        for j in 0..db.ap_count {
            let mut values: Vec<(usize, f64)> = members
                .iter()
                .map(|&i| (i, db.records[i].rssi[j]))
                .filter(|&(_, v)| v != MISSING_RSSI)
                .collect();
            if values.len() < MIN_OUTLIER_SAMPLES {
                continue;
            }
            let mut sorted: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
            sorted.sort_by(f64::total_cmp);
            let median = quantile(&sorted, 0.5);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            values.retain(|&(_, v)| (v - median).abs() > OUTLIER_IQR_FACTOR * iqr);
            for (i, _) in values {
                flagged[i] = true;
            }
        }
    }
    flagged
}

/// Outlier removal followed by min-max scaling fitted on `db` itself.
///
/// Missing readings are already the dense `-110 dBm` sentinel. Preprocessing
/// an already preprocessed database returns it unchanged.
pub fn preprocess(db: &FingerprintDatabase) -> Result<FingerprintDatabase, FingerprintError> {
    if db.is_empty() {
        return Err(FingerprintError::EmptyDatabase);
    }
    if db.is_preprocessed() {
        return Ok(db.clone());
    }
    let flagged = outlier_records(db);
    let kept: Vec<FingerprintRecord> = db
        .records
        .iter()
        .zip(&flagged)
        .filter(|(_, &f)| !f)
        .map(|(r, _)| r.clone())
        .collect();
    if kept.is_empty() {
        return Err(FingerprintError::EmptyDatabase);
    }
    let normalization = Normalization::fit(&kept, db.ap_count);
    let raw = FingerprintDatabase {
        records: kept,
        ap_count: db.ap_count,
        normalization: None,
    };
    Ok(raw.normalized_with(&normalization))
}

/// Mean position of the `k` nearest records in feature space; ties go to
/// the lower record index.
pub fn knn_predict(
    db: &FingerprintDatabase,
    rssi: &RssiVector,
    k: usize,
) -> Result<Point2, FingerprintError> {
    if db.is_empty() {
        return Err(FingerprintError::EmptyDatabase);
    }
    if k == 0 || k > db.len() {
        return Err(FingerprintError::BadK {
            k,
            records: db.len(),
        });
    }
    let query = db.features(rssi)?;
    let mut dist: Vec<(f64, usize)> = db
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d2: f64 = r.rssi.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_distance);
    }
    let sum = dist[..k]
        .iter()
        .fold(Point2::default(), |acc, &(_, i)| acc + db.records[i].position);
    Ok(sum * (1.0 / k as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub position: Point2,
    /// Set when fewer than [`MIN_HEARD_APS`] APs were heard.
    pub low_confidence: bool,
}

/// Runs the regressor on a raw RSSI vector.
pub fn predict(
    model: &MlpModel,
    rssi: &RssiVector,
    normalization: &Normalization,
) -> Result<Prediction, FingerprintError> {
    if rssi.len() != model.input_dim() || rssi.len() != normalization.len() {
        return Err(FingerprintError::LengthMismatch {
            expected: model.input_dim(),
            actual: rssi.len(),
        });
    }
    let features = normalization.apply(&rssi.0);
    Ok(Prediction {
        position: model.predict_features(&features),
        low_confidence: rssi.heard() < MIN_HEARD_APS,
    })
}
