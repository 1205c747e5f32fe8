mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::{noiseless_config, standard_run, wall_faces};
use fuselocate::experiment::{run_lidar_imu, Direction, ExperimentConfig, FloorWorld, SensorLogs};
use fuselocate::lidar_imu::{
    dead_reckon, match_score, scan_endpoints, scan_match, slam_pipeline, DeadReckonState,
    LogOddsMap, LogOddsParams, ScanMatchConfig, SlamConfig,
};
use fuselocate::rng::rng_from_seed;
use fuselocate::sensors::{simulate_lidar, ImuSample, LidarConfig, LidarScan};
use fuselocate::{Point2, Pose2D};
use proptest::prelude::*;
use rand::Rng;

fn constant_imu(n: usize, dt: f64, accel: f64, gyro: f64) -> Vec<ImuSample> {
    (0..n)
        .map(|k| ImuSample {
            t: k as f64 * dt,
            accel: [accel, 0.0, 0.0],
            gyro: [0.0, 0.0, gyro],
        })
        .collect()
}

/// Least-squares `c` in `e(t) = c t^2`.
fn quadratic_coefficient(samples: &[(f64, f64)]) -> f64 {
    let num: f64 = samples.iter().map(|(t, e)| e * t * t).sum();
    let den: f64 = samples.iter().map(|(t, _)| t.powi(4)).sum();
    num / den
}

#[test]
fn accel_bias_drift_grows_quadratically() {
    let b = 0.01;
    let imu = constant_imu(1001, 0.01, b, 0.0);
    let start = DeadReckonState {
        pose: Pose2D::new(0.0, 0.0, 0.0),
        v: 1.0,
        t: 0.0,
    };
    let traj = dead_reckon(&imu, start).unwrap();
    let errs: Vec<(f64, f64)> = traj.samples().iter().map(|s| (s.t, s.pose.x - s.t)).collect();
    let c = quadratic_coefficient(&errs);
    let expected = 0.5 * b;
    assert!((c - expected).abs() < 0.1 * expected, "c = {c}, expected {expected}");
}

#[test]
fn gyro_bias_drift_grows_quadratically() {
    let b = 0.01;
    let imu = constant_imu(1001, 0.01, 0.0, b);
    let start = DeadReckonState {
        pose: Pose2D::new(0.0, 0.0, 0.0),
        v: 1.0,
        t: 0.0,
    };
    let traj = dead_reckon(&imu, start).unwrap();
    let errs: Vec<(f64, f64)> = traj.samples().iter().map(|s| (s.t, s.pose.y)).collect();
    let c = quadratic_coefficient(&errs);
    let expected = 0.5 * b;
    assert!((c - expected).abs() < 0.1 * expected, "c = {c}, expected {expected}");
    let last = traj.last().unwrap();
    assert!((last.pose.theta - b * 10.0).abs() < 1e-9);
}

/// Map from noiseless scans at every `every`-th truth pose of a run.
fn truth_map(world: &FloorWorld, logs: &SensorLogs, every: usize) -> LogOddsMap {
    let lidar = LidarConfig {
        range_sigma: 0.0,
        ..LidarConfig::default()
    };
    let mut rng = rng_from_seed(0);
    let mut map = LogOddsMap::new(world.grid.geometry, LogOddsParams::default());
    for s in logs.truth.iter().step_by(every) {
        let scan = simulate_lidar(&world.grid, &s.pose, &lidar, s.t, &mut rng).unwrap();
        map.update(&s.pose, &scan);
    }
    map
}

fn noiseless_scan(world: &FloorWorld, pose: &Pose2D) -> LidarScan {
    let lidar = LidarConfig {
        range_sigma: 0.0,
        ..LidarConfig::default()
    };
    simulate_lidar(&world.grid, pose, &lidar, 0.0, &mut rng_from_seed(0)).unwrap()
}

/// Truth poses within `radius` of a corridor corner, evenly subsampled to `n`.
fn poses_near_corners(world: &FloorWorld, logs: &SensorLogs, radius: f64, n: usize) -> Vec<Pose2D> {
    let corners = world.spec.centerline();
    let near: Vec<Pose2D> = logs
        .truth
        .iter()
        .map(|s| s.pose)
        .filter(|p| corners.iter().any(|c| c.distance(p.position()) < radius))
        .collect();
    assert!(near.len() >= n, "{} poses near corners", near.len());
    (0..n).map(|i| near[i * near.len() / n]).collect()
}

/// Exhaustive lattice search with the same acceptance rule: best score,
/// then among candidates within the margin the one nearest the guess.
fn brute_force(map: &LogOddsMap, scan: &LidarScan, guess: &Pose2D, cfg: &ScanMatchConfig) -> (f64, Pose2D) {
    let endpoints = scan_endpoints(scan, cfg.beam_stride);
    let nxy = (cfg.window_xy / cfg.coarse_step_xy + 1e-9).floor() as i64;
    let nth = (cfg.window_theta / cfg.coarse_step_theta + 1e-9).floor() as i64;
    let mut all = Vec::new();
    for k in -nth..=nth {
        for j in -nxy..=nxy {
            for i in -nxy..=nxy {
                let o = (
                    i as f64 * cfg.coarse_step_xy,
                    j as f64 * cfg.coarse_step_xy,
                    k as f64 * cfg.coarse_step_theta,
                );
                all.push((match_score(map, &endpoints, &guess.offset(o.0, o.1, o.2)), o));
            }
        }
    }
    let top = all.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut near: Vec<_> = all.into_iter().filter(|c| c.0 >= top - cfg.score_margin).collect();
    near.sort_by(|a, b| {
        let ka = [a.1 .2.abs(), a.1 .1.abs(), a.1 .0.abs(), a.1 .2, a.1 .1, a.1 .0];
        let kb = [b.1 .2.abs(), b.1 .1.abs(), b.1 .0.abs(), b.1 .2, b.1 .1, b.1 .0];
        ka.partial_cmp(&kb).unwrap()
    });
    let (score, o) = near[0];
    (score, guess.offset(o.0, o.1, o.2))
}

#[test]
fn single_level_match_equals_brute_force() {
    let cfg = noiseless_config();
    let (world, logs) = standard_run(&cfg, Direction::Forward);
    let map = truth_map(&world, &logs, 50);
    let matcher = ScanMatchConfig {
        window_xy: 0.2,
        window_theta: 4f64.to_radians(),
        levels: 1,
        ..ScanMatchConfig::default()
    };
    let mut rng = rng_from_seed(3);
    for pose in poses_near_corners(&world, &logs, 1.5, 10) {
        let scan = noiseless_scan(&world, &pose);
        let guess = pose.offset(
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.05..0.05),
        );
        let got = scan_match(&map, &scan, &guess, &matcher).unwrap();
        let (score, want) = brute_force(&map, &scan, &guess, &matcher);
        assert_eq!(got.score, score);
        assert_eq!(got.pose, want);
    }
}

#[test]
fn multi_level_refinement_never_loses_score() {
    let cfg = noiseless_config();
    let (world, logs) = standard_run(&cfg, Direction::Backward);
    let map = truth_map(&world, &logs, 50);
    let coarse = ScanMatchConfig {
        window_xy: 0.2,
        window_theta: 4f64.to_radians(),
        levels: 1,
        score_margin: 0.0,
        ..ScanMatchConfig::default()
    };
    let fine = ScanMatchConfig { levels: 3, ..coarse };
    let mut rng = rng_from_seed(4);
    for pose in poses_near_corners(&world, &logs, 1.5, 10) {
        let scan = noiseless_scan(&world, &pose);
        let guess = pose.offset(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), 0.03);
        let a = scan_match(&map, &scan, &guess, &coarse).unwrap();
        let b = scan_match(&map, &scan, &guess, &fine).unwrap();
        assert!(b.score >= a.score, "{} < {}", b.score, a.score);
    }
}

#[test]
fn matcher_recovers_offset_poses_near_corners() {
    let started = Instant::now();
    let cfg = noiseless_config();
    let (world, logs) = standard_run(&cfg, Direction::Forward);
    let map = truth_map(&world, &logs, 10);
    let matcher = ScanMatchConfig::default();
    let res = world.grid.geometry.resolution;
    let mut recovered = 0;
    let mut worst = (0.0f64, 0.0f64);
    for pose in poses_near_corners(&world, &logs, 1.5, 100) {
        let scan = noiseless_scan(&world, &pose);
        let guess = pose.offset(0.2, 0.2, 5f64.to_radians());
        let r = scan_match(&map, &scan, &guess, &matcher).unwrap();
        let dxy = r.pose.position().distance(pose.position());
        let dth = (r.pose.theta - pose.theta).abs();
        worst = (worst.0.max(dxy), worst.1.max(dth));
        if r.converged && dxy <= res && dth <= 1f64.to_radians() {
            recovered += 1;
        }
    }
    assert_eq!(recovered, 100, "worst {worst:?}");
    eprintln!("recovery: {:.2?}", started.elapsed());
}

#[test]
fn fifty_truth_scans_map_the_visible_walls() {
    let cfg = noiseless_config();
    let (world, logs) = standard_run(&cfg, Direction::Forward);
    let every = logs.truth.len() / 50;
    let poses: Vec<Pose2D> = logs.truth.iter().step_by(every).take(50).map(|s| s.pose).collect();
    assert_eq!(poses.len(), 50);
    let lidar = LidarConfig {
        range_sigma: 0.0,
        ..LidarConfig::default()
    };
    let mut map = LogOddsMap::new(world.grid.geometry, LogOddsParams::default());
    let mut rng = rng_from_seed(0);
    for p in &poses {
        let scan = simulate_lidar(&world.grid, p, &lidar, 0.0, &mut rng).unwrap();
        map.update(p, &scan);
    }

    // A face is in range when its centre lies within the sensor range of some
    // pose and the straight line to a point just short of it crosses no wall.
    let g = world.grid.geometry;
    let in_range = |c: Point2| {
        poses.iter().any(|p| {
            let d = c.distance(p.position());
            if d > lidar.max_range - g.resolution {
                return false;
            }
            let short = p.position().lerp(c, 1.0 - g.resolution / d);
            !world.grid.segment_hits_wall(p.position(), short)
        })
    };
    let faces: Vec<_> = wall_faces(&world.grid)
        .into_iter()
        .filter(|&(ix, iy)| in_range(g.cell_center(ix, iy)))
        .collect();
    assert!(faces.len() > 200, "{} faces", faces.len());
    let occupied = faces.iter().filter(|&&(ix, iy)| map.probability(ix, iy) > 0.7).count();
    let fraction = occupied as f64 / faces.len() as f64;
    assert!(fraction >= 0.9, "{occupied}/{} = {fraction}", faces.len());
}

#[test]
fn noise_free_pipeline_stays_within_a_decimetre() {
    let cfg = noiseless_config();
    for direction in [Direction::Forward, Direction::Backward] {
        let (world, logs) = standard_run(&cfg, direction);
        let out = run_lidar_imu(&cfg, world.grid.geometry, &logs.imu, &logs.scans, logs.start).unwrap();
        assert!(out.divergences.is_empty());
        let mut worst = 0.0f64;
        for (est, truth) in out.trajectory.samples().iter().zip(&logs.truth) {
            assert!((est.t - truth.t).abs() < 1e-9);
            worst = worst.max(est.pose.position().distance(truth.pose.position()));
        }
        assert!(worst <= 0.1, "{direction:?}: worst {worst}");
    }
}

#[test]
fn imu_only_pipeline_is_dead_reckoning() {
    let cfg = ExperimentConfig::default();
    let (world, logs) = standard_run(&cfg, Direction::Forward);
    let initial = DeadReckonState {
        pose: logs.start,
        v: 0.0,
        t: 0.0,
    };
    let slam_cfg = SlamConfig {
        use_scans: false,
        ..cfg.slam
    };
    let out = slam_pipeline(&logs.imu, &logs.scans, initial, world.grid.geometry, &slam_cfg).unwrap();
    let dr = dead_reckon(&logs.imu, initial).unwrap();
    assert_eq!(out.trajectory, dr);
    assert!(out.scan_poses.is_empty());
}

#[test]
fn scans_beat_biased_dead_reckoning() {
    let cfg = ExperimentConfig::default();
    assert!(cfg.imu.bias_accel[0] != 0.0 && cfg.imu.bias_gyro[2] != 0.0);
    let (world, logs) = standard_run(&cfg, Direction::Forward);
    let initial = DeadReckonState {
        pose: logs.start,
        v: 0.0,
        t: 0.0,
    };
    let slam = slam_pipeline(&logs.imu, &logs.scans, initial, world.grid.geometry, &SlamConfig::default()).unwrap();
    let dr = dead_reckon(&logs.imu, initial).unwrap();
    let truth = logs.truth.last().unwrap().pose.position();
    let slam_err = slam.trajectory.last().unwrap().pose.position().distance(truth);
    let dr_err = dr.last().unwrap().pose.position().distance(truth);
    assert!(slam_err < dr_err, "slam {slam_err} vs dead reckoning {dr_err}");
}

fn probe_world() -> &'static (FloorWorld, SensorLogs, LogOddsMap) {
    static CELL: OnceLock<(FloorWorld, SensorLogs, LogOddsMap)> = OnceLock::new();
    CELL.get_or_init(|| {
        let (world, logs) = standard_run(&noiseless_config(), Direction::Forward);
        let map = truth_map(&world, &logs, 200);
        (world, logs, map)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn match_stays_inside_the_search_window(
        k in 0usize..4000,
        dx in -0.3f64..0.3,
        dy in -0.3f64..0.3,
        dth in -0.1f64..0.1,
        wxy in 0.0f64..0.2,
        wth in 0.0f64..0.06,
    ) {
        let (world, logs, map) = probe_world();
        let pose = logs.truth[k % logs.truth.len()].pose;
        let scan = noiseless_scan(world, &pose);
        let guess = pose.offset(dx, dy, dth);
        let cfg = ScanMatchConfig {
            window_xy: wxy,
            window_theta: wth,
            beam_stride: 6,
            ..ScanMatchConfig::default()
        };
        let r = scan_match(map, &scan, &guess, &cfg).unwrap();
        prop_assert!((r.pose.x - guess.x).abs() <= wxy + 1e-9);
        prop_assert!((r.pose.y - guess.y).abs() <= wxy + 1e-9);
        prop_assert!(fuselocate::geometry::angle_diff(r.pose.theta, guess.theta).abs() <= wth + 1e-9);
    }

    #[test]
    fn cell_probabilities_stay_open_interval(
        updates in prop::collection::vec((0usize..4000, -0.2f64..0.2, -0.2f64..0.2), 1..30),
    ) {
        let (world, logs, _) = probe_world();
        let mut map = LogOddsMap::new(world.grid.geometry, LogOddsParams::default());
        for (k, dx, dy) in updates {
            let truth = logs.truth[k % logs.truth.len()].pose;
            let scan = noiseless_scan(world, &truth);
            map.update(&truth.offset(dx, dy, 0.0), &scan);
        }
        let g = world.grid.geometry;
        for iy in 0..g.height_cells {
            for ix in 0..g.width_cells {
                let p = map.probability(ix, iy);
                prop_assert!(p > 0.0 && p < 1.0);
                prop_assert!(map.log_odds(ix, iy).abs() <= 10.0);
            }
        }
    }
}
