use fuselocate::experiment::{build_world, ExperimentConfig};
use fuselocate::fingerprint::{
    collect_database, knn_predict, predict, preprocess, reference_lattice, train_mlp,
    FingerprintDatabase, FingerprintRecord, MlpModel, TrainConfig,
};
use fuselocate::rng::rng_from_seed;
use fuselocate::sensors::{RssiParams, RssiVector};
use fuselocate::Point2;
use rand::Rng;

const NOISE_FREE: RssiParams = RssiParams {
    shadowing_sigma: 0.0,
    wall_loss_db: 6.0,
    dropout_prob: 0.0,
};

/// About fifty reference points on the standard floor, one noise-free draw each.
fn noise_free_db(spacing: f64) -> FingerprintDatabase {
    let cfg = ExperimentConfig::default();
    let world = build_world(&cfg, 0).unwrap();
    let mut rng = rng_from_seed(1);
    collect_database(&world.grid, &world.aps, spacing, 1, &NOISE_FREE, &mut rng).unwrap()
}

fn toy_db(n: usize, m: usize, seed: u64) -> FingerprintDatabase {
    let mut rng = rng_from_seed(seed);
    let records = (0..n)
        .map(|_| FingerprintRecord {
            position: Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..5.0)),
            rssi: (0..m).map(|_| rng.random_range(0.0..1.0)).collect(),
        })
        .collect();
    FingerprintDatabase::new(records, m).unwrap()
}

fn param(model: &mut MlpModel, layer: usize, i: usize) -> &mut f64 {
    let d = &mut model.layers_mut()[layer];
    let n_w = d.weights.len();
    if i < n_w {
        &mut d.weights[i]
    } else {
        &mut d.bias[i - n_w]
    }
}

#[test]
fn backprop_matches_finite_differences() {
    let db = toy_db(10, 6, 4);
    let mut rng = rng_from_seed(9);
    let mut model = MlpModel::new(6, 0.2, &mut rng);
    model.set_target_standardization([5.0, 2.5], [3.0, 1.5]);
    let inputs: Vec<&[f64]> = db.records.iter().map(|r| r.rssi.as_slice()).collect();
    let targets: Vec<[f64; 2]> = db.records.iter().map(|r| model.standardize_target(r.position)).collect();
    let (_, grads) = model.loss_and_gradient(&inputs, &targets, None);

    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for l in 0..model.layers().len() {
        let n_w = model.layers()[l].weights.len();
        let n_b = model.layers()[l].bias.len();
        for i in 0..n_w + n_b {
            let orig = *param(&mut model, l, i);
            *param(&mut model, l, i) = orig + eps;
            let up = model.mse(&inputs, &targets);
            *param(&mut model, l, i) = orig - eps;
            let down = model.mse(&inputs, &targets);
            *param(&mut model, l, i) = orig;
            let fd = (up - down) / (2.0 * eps);
            let g = if i < n_w {
                grads.layers[l].weights[i]
            } else {
                grads.layers[l].bias[i - n_w]
            };
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert_eq!(checked, model.parameter_count());
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn knn_matches_exhaustive_scan() {
    let cfg = ExperimentConfig::default();
    let world = build_world(&cfg, 0).unwrap();
    let mut rng = rng_from_seed(3);
    let raw = collect_database(&world.grid, &world.aps, 1.0, 3, &cfg.radio.rssi, &mut rng).unwrap();
    let db = preprocess(&raw).unwrap();
    let norm = db.normalization.clone().unwrap();
    for q in 0..50 {
        let query = RssiVector(
            (0..db.ap_count)
                .map(|_| rng.random_range(-110.0..-40.0))
                .collect(),
        );
        let scaled = norm.apply(&query.0);
        let mut all: Vec<(f64, usize)> = db
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut d = 0.0;
                for (a, b) in r.rssi.iter().zip(&scaled) {
                    d += (a - b) * (a - b);
                }
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for k in [1, 2, 3, 7] {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for &(_, i) in &all[..k] {
                sx += db.records[i].position.x;
                sy += db.records[i].position.y;
            }
            let got = knn_predict(&db, &query, k).unwrap();
            assert!((got.x - sx / k as f64).abs() < 1e-12, "query {q} k {k}");
            assert!((got.y - sy / k as f64).abs() < 1e-12, "query {q} k {k}");
        }
    }
}

#[test]
fn knn_exact_fingerprint_returns_its_reference_point() {
    let db = noise_free_db(1.0);
    for r in db.records.iter().step_by(7) {
        let p = knn_predict(&db, &RssiVector(r.rssi.clone()), 1).unwrap();
        assert_eq!(p, r.position);
    }
}

/// Long small-batch training without dropout, so the network can interpolate
/// its survey; dropout keeps the default model from fitting training points
/// to sub-metre accuracy.
fn to_convergence() -> TrainConfig {
    TrainConfig {
        epochs: 1000,
        batch_size: 8,
        dropout_rate: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_tenfold_on_a_noise_free_survey() {
    let raw = noise_free_db(1.2);
    let rps = raw.len();
    assert!((40..=60).contains(&rps), "{rps} reference points");
    let db = preprocess(&raw).unwrap();
    let (_, report) = train_mlp(&db, &TrainConfig::default()).unwrap();
    assert_eq!(report.epoch_losses.len(), 200);
    assert!(
        report.final_mse < 0.1 * report.initial_mse,
        "{} vs {}",
        report.final_mse,
        report.initial_mse
    );
}

#[test]
fn converged_model_recovers_training_points() {
    let raw = noise_free_db(1.2);
    let db = preprocess(&raw).unwrap();
    let (model, _) = train_mlp(&db, &to_convergence()).unwrap();
    let norm = db.normalization.as_ref().unwrap();
    let mut worst = 0.0f64;
    for r in &raw.records {
        let p = predict(&model, &RssiVector(r.rssi.clone()), norm).unwrap();
        worst = worst.max(p.position.distance(r.position));
    }
    assert!(worst < 0.5, "worst training-point error {worst}");
}

#[test]
fn mlp_is_within_twice_knn_on_held_out_noise_free_points() {
    let raw = noise_free_db(1.0);
    let db = preprocess(&raw).unwrap();
    let norm = db.normalization.as_ref().unwrap();
    let (model, _) = train_mlp(&db, &to_convergence()).unwrap();
    let cfg = ExperimentConfig::default();
    let world = build_world(&cfg, 0).unwrap();
    // the lattice shifted by half a spacing never coincides with a surveyed point
    let mut rng = rng_from_seed(4);
    let mut held_out = Vec::new();
    for p in reference_lattice(&world.grid, 1.0) {
        let q = Point2::new(p.x + 0.5, p.y + 0.25);
        if world.grid.is_free(q) {
            held_out.push(q);
        }
    }
    let (mut mlp, mut knn) = (0.0, 0.0);
    for q in &held_out {
        let pose = fuselocate::Pose2D::new(q.x, q.y, 0.0);
        let rssi = fuselocate::sensors::simulate_rssi(&world.aps, &world.grid, &pose, &NOISE_FREE, &mut rng).unwrap();
        mlp += predict(&model, &rssi, norm).unwrap().position.distance(*q);
        knn += knn_predict(&db, &rssi, 3).unwrap().distance(*q);
    }
    let n = held_out.len() as f64;
    assert!(mlp / n <= 2.0 * knn / n, "mlp {} knn {}", mlp / n, knn / n);
}

#[test]
fn preprocess_is_idempotent_and_bounded() {
    let cfg = ExperimentConfig::default();
    let world = build_world(&cfg, 1).unwrap();
    let mut rng = rng_from_seed(8);
    let raw = collect_database(&world.grid, &world.aps, 1.0, 4, &cfg.radio.rssi, &mut rng).unwrap();
    let once = preprocess(&raw).unwrap();
    assert_eq!(preprocess(&once).unwrap(), once);
    assert!(once
        .records
        .iter()
        .all(|r| r.rssi.iter().all(|v| (0.0..=1.0).contains(v))));
}
