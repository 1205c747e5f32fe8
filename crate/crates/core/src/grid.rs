//! Rasterized floor maps and grid ray traversal.
//!
//! Cell `(ix, iy)` covers `[origin.x + ix*res, origin.x + (ix+1)*res)` by
//! `[origin.y + iy*res, origin.y + (iy+1)*res)`. Cells are stored row-major
//! with `iy` as the row index.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

pub const PGM_WALL: u8 = 0;
pub const PGM_FREE: u8 = 254;
pub const PGM_UNKNOWN: u8 = 205;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("grid must have at least one cell, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("cell buffer holds {actual} entries, expected {expected}")]
    CellCount { expected: usize, actual: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Wall,
    Unknown,
}

/// Shape and placement of a grid, shared by the truth map and estimated maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width_cells: usize,
    pub height_cells: usize,
    pub resolution: f64,
    pub origin: Point2,
}

impl GridGeometry {
    pub fn new(
        width_cells: usize,
        height_cells: usize,
        resolution: f64,
        origin: Point2,
    ) -> Result<Self, GridError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::BadResolution(resolution));
        }
        if width_cells == 0 || height_cells == 0 {
            return Err(GridError::Empty {
                width: width_cells,
                height: height_cells,
            });
        }
        Ok(Self {
            width_cells,
            height_cells,
            resolution,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.width_cells * self.height_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width_cells + ix
    }

    pub fn contains_cell(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width_cells && (iy as usize) < self.height_cells
    }

    /// Unbounded cell coordinates of a world point.
    pub fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn world_to_cell(&self, p: Point2) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_of(p);
        self.contains_cell(ix, iy)
            .then_some((ix as usize, iy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn width_m(&self) -> f64 {
        self.width_cells as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.height_cells as f64 * self.resolution
    }

    /// Walks every cell pierced by the segment `start -> end` in order.
    ///
    /// `visit` receives in-grid cells with the distance from `start` at which
    /// the segment enters them (0 for the starting cell). Out-of-grid cells
    /// are stepped through silently. Returns the value passed to `Break`.
    pub fn traverse<B>(
        &self,
        start: Point2,
        end: Point2,
        mut visit: impl FnMut((usize, usize), f64) -> ControlFlow<B>,
    ) -> Option<B> {
        let delta = end - start;
        let length = delta.norm();
        let (mut ix, mut iy) = self.cell_of(start);
        let mut emit = |ix: i64, iy: i64, t: f64| {
            if self.contains_cell(ix, iy) {
                visit((ix as usize, iy as usize), t)
            } else {
                ControlFlow::Continue(())
            }
        };
        if let ControlFlow::Break(b) = emit(ix, iy, 0.0) {
            return Some(b);
        }
        if length == 0.0 {
            return None;
        }
        let dir = delta * (1.0 / length);
        let res = self.resolution;
        let axis = |d: f64, cell: i64, origin: f64, pos: f64| -> (i64, f64, f64) {
            if d > 0.0 {
                let boundary = origin + (cell + 1) as f64 * res;
                (1, (boundary - pos) / d, res / d)
            } else if d < 0.0 {
                let boundary = origin + cell as f64 * res;
                (-1, (boundary - pos) / d, -res / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_x, mut t_max_x, t_delta_x) = axis(dir.x, ix, self.origin.x, start.x);
        let (step_y, mut t_max_y, t_delta_y) = axis(dir.y, iy, self.origin.y, start.y);
        loop {
            let t = if t_max_x < t_max_y {
                ix += step_x;
                let t = t_max_x;
                t_max_x += t_delta_x;
                t
            } else {
                iy += step_y;
                let t = t_max_y;
                t_max_y += t_delta_y;
                t
            };
            if t > length {
                return None;
            }
            if let ControlFlow::Break(b) = emit(ix, iy, t) {
                return Some(b);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub geometry: GridGeometry,
    cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn new(geometry: GridGeometry, cells: Vec<CellState>) -> Result<Self, GridError> {
        if cells.len() != geometry.len() {
            return Err(GridError::CellCount {
                expected: geometry.len(),
                actual: cells.len(),
            });
        }
        Ok(Self { geometry, cells })
    }

    pub fn filled(geometry: GridGeometry, state: CellState) -> Self {
        Self {
            cells: vec![state; geometry.len()],
            geometry,
        }
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn get(&self, ix: usize, iy: usize) -> CellState {
        self.cells[self.geometry.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, state: CellState) {
        let i = self.geometry.index(ix, iy);
        self.cells[i] = state;
    }

    /// State at a world point; points off the grid read as `Unknown`.
    pub fn state_at(&self, p: Point2) -> CellState {
        self.geometry
            .world_to_cell(p)
            .map_or(CellState::Unknown, |(ix, iy)| self.get(ix, iy))
    }

    pub fn is_free(&self, p: Point2) -> bool {
        self.state_at(p) == CellState::Free
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    /// Iterator over `(ix, iy, state)`.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, CellState)> + '_ {
        let w = self.geometry.width_cells;
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i % w, i / w, c))
    }

    /// Distance along `start -> direction` to the first Wall cell, if within `max_range`.
    pub fn cast_ray(&self, start: Point2, angle: f64, max_range: f64) -> Option<f64> {
        let (s, c) = angle.sin_cos();
        let end = start + Point2::new(c, s) * max_range;
        self.geometry.traverse(start, end, |(ix, iy), t| {
            if self.get(ix, iy) == CellState::Wall {
                ControlFlow::Break(t)
            } else {
                ControlFlow::Continue(())
            }
        })
    }

    /// True when the segment touches any Wall cell.
    pub fn segment_hits_wall(&self, from: Point2, to: Point2) -> bool {
        self.geometry
            .traverse(from, to, |(ix, iy), _| {
                if self.get(ix, iy) == CellState::Wall {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .is_some()
    }

    /// Number of distinct Wall runs crossed between two points. A run still
    /// open when the segment ends (the endpoint sits inside a wall) is not
    /// counted, so wall-mounted transmitters do not attenuate themselves.
    pub fn walls_crossed(&self, from: Point2, to: Point2) -> usize {
        let mut runs = 0;
        let mut inside = false;
        self.geometry.traverse(from, to, |(ix, iy), _| {
            let wall = self.get(ix, iy) == CellState::Wall;
            if inside && !wall {
                runs += 1;
            }
            inside = wall;
            ControlFlow::<()>::Continue(())
        });
        runs
    }

    /// Encodes as binary PGM (P5); the image's top row is the grid's highest `iy`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = format!("P5\n{} {}\n255\n", g.width_cells, g.height_cells).into_bytes();
        for iy in (0..g.height_cells).rev() {
            out.extend((0..g.width_cells).map(|ix| match self.get(ix, iy) {
                CellState::Wall => PGM_WALL,
                CellState::Free => PGM_FREE,
                CellState::Unknown => PGM_UNKNOWN,
            }));
        }
        out
    }

    pub fn from_pgm(bytes: &[u8], meta: &MapMetadata) -> Result<Self, GridError> {
        let (width, height, pixels) = parse_pgm(bytes)?;
        if width != meta.width || height != meta.height {
            return Err(GridError::Pgm(format!(
                "image is {width}x{height} but metadata says {}x{}",
                meta.width, meta.height
            )));
        }
        let geometry = GridGeometry::new(
            width,
            height,
            meta.resolution,
            Point2::new(meta.origin[0], meta.origin[1]),
        )?;
        let mut grid = OccupancyGrid::filled(geometry, CellState::Unknown);
        for (row, chunk) in pixels.chunks(width).enumerate() {
            let iy = height - 1 - row;
            for (ix, &px) in chunk.iter().enumerate() {
                let state = match px {
                    PGM_WALL => CellState::Wall,
                    PGM_FREE => CellState::Free,
                    _ => CellState::Unknown,
                };
                grid.set(ix, iy, state);
            }
        }
        Ok(grid)
    }

    pub fn metadata(&self, image: &str) -> MapMetadata {
        MapMetadata::new(image, &self.geometry)
    }
}

/// JSON sidecar accompanying a PGM map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMetadata {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    /// Lower-left corner `[x, y, yaw]` in meters.
    pub origin: [f64; 3],
    pub occupied_value: u8,
    pub free_value: u8,
    pub unknown_value: u8,
}

impl MapMetadata {
    pub fn new(image: &str, g: &GridGeometry) -> Self {
        Self {
            image: image.to_string(),
            width: g.width_cells,
            height: g.height_cells,
            resolution: g.resolution,
            origin: [g.origin.x, g.origin.y, 0.0],
            occupied_value: PGM_WALL,
            free_value: PGM_FREE,
            unknown_value: PGM_UNKNOWN,
        }
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8]), GridError> {
    let mut pos = 0;
    let mut token = || -> Result<String, GridError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GridError::Pgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(GridError::Pgm("expected P5 magic".into()));
    }
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| GridError::Pgm(format!("bad header field {s:?}")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(GridError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[pos + 1..];
    if data.len() != width * height {
        return Err(GridError::Pgm(format!(
            "raster has {} bytes, expected {}",
            data.len(),
            width * height
        )));
    }
    Ok((width, height, data))
}
