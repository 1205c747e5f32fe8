#![allow(dead_code)]

use fuselocate::experiment::{build_world, simulate_run, Direction, ExperimentConfig, FloorWorld, SensorLogs};
use fuselocate::sensors::ImuErrorModel;
use fuselocate::{CellState, OccupancyGrid, Point2};

pub fn noiseless_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        imu: ImuErrorModel::default(),
        ..ExperimentConfig::default()
    };
    cfg.lidar.range_sigma = 0.0;
    cfg.radio.rssi.shadowing_sigma = 0.0;
    cfg.radio.rssi.dropout_prob = 0.0;
    cfg
}

pub fn standard_run(cfg: &ExperimentConfig, direction: Direction) -> (FloorWorld, SensorLogs) {
    let world = build_world(cfg, 0).unwrap();
    let logs = simulate_run(cfg, &world, direction).unwrap();
    (world, logs)
}

/// Wall cells with at least one 4-neighbour in free space.
pub fn wall_faces(grid: &OccupancyGrid) -> Vec<(usize, usize)> {
    let g = grid.geometry;
    let mut out = Vec::new();
    for (ix, iy, c) in grid.iter_cells() {
        if c != CellState::Wall {
            continue;
        }
        let free_neighbour = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
            let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
            g.contains_cell(nx, ny) && grid.get(nx as usize, ny as usize) == CellState::Free
        });
        if free_neighbour {
            out.push((ix, iy));
        }
    }
    out
}

pub fn cell_center(grid: &OccupancyGrid, c: (usize, usize)) -> Point2 {
    grid.geometry.cell_center(c.0, c.1)
}
