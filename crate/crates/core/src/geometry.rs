//! Tile-grid selection, coordinate rescaling and grid normalization.
//!
//! Frames are resized onto a grid of `i × j` blocks of 448 px before being fed
//! to the model, and fixation coordinates follow the same resize. Coordinates
//! are then expressed on a resolution-independent `[0, 1000]²` grid.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Side length of one tile block in pixels.
pub const BASE_TILE: u32 = 448;
/// Upper bound on the number of blocks in a tile grid.
pub const MAX_BLOCKS: u32 = 12;
/// Extent of the normalized coordinate grid on each axis.
pub const GRID_EXTENT: f64 = 1000.0;

/// A tile layout of `cols × rows` blocks of [`BASE_TILE`] pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileGrid {
    pub cols: u32,
    pub rows: u32,
}

impl TileGrid {
    pub fn blocks(&self) -> u32 {
        self.cols * self.rows
    }

    pub fn target_width(&self) -> u32 {
        BASE_TILE * self.cols
    }

    pub fn target_height(&self) -> u32 {
        BASE_TILE * self.rows
    }

    pub fn target_area(&self) -> u64 {
        u64::from(self.target_width()) * u64::from(self.target_height())
    }

    fn aspect(&self) -> f64 {
        f64::from(self.cols) / f64::from(self.rows)
    }
}

/// A point on the normalized `[0, 1000]²` grid.
///
/// Values produced by [`normalize_to_grid`] are integral; cluster centroids
/// may carry fractional parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gx: f64,
    pub gy: f64,
}

impl GridPoint {
    pub fn new(gx: f64, gy: f64) -> Self {
        Self { gx, gy }
    }

    pub fn in_range(&self) -> bool {
        (0.0..=GRID_EXTENT).contains(&self.gx) && (0.0..=GRID_EXTENT).contains(&self.gy)
    }

    /// Squared Euclidean distance in grid units.
    pub fn dist2(&self, other: &GridPoint) -> f64 {
        let dx = self.gx - other.gx;
        let dy = self.gy - other.gy;
        dx * dx + dy * dy
    }
}

/// All `(cols, rows)` layouts with at most [`MAX_BLOCKS`] blocks, ordered by
/// ascending `cols` then `rows`. There are exactly 35 of them.
pub fn candidate_grids() -> Vec<TileGrid> {
    (1..=MAX_BLOCKS)
        .flat_map(|cols| {
            (1..=MAX_BLOCKS / cols).map(move |rows| TileGrid { cols, rows })
        })
        .collect()
}

/// Picks the tile layout whose aspect ratio best matches `width / height`.
///
/// Candidates whose target area exceeds twice the original area are
/// discarded first; if none survive, the full candidate set is used. Ties on
/// the ratio distance go to fewer blocks, then to fewer columns.
pub fn select_tile_grid(width: u32, height: u32) -> Result<TileGrid> {
    if width == 0 || height == 0 {
        return Err(Error::validation(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    let ratio = f64::from(width) / f64::from(height);
    let area_cap = 2 * u64::from(width) * u64::from(height);

    let all = candidate_grids();
    let mut pool: Vec<TileGrid> = all
        .iter()
        .copied()
        .filter(|g| g.target_area() <= area_cap)
        .collect();
    if pool.is_empty() {
        pool = all;
    }

    let best = pool
        .into_iter()
        .min_by(|a, b| {
            let da = (ratio - a.aspect()).abs();
            let db = (ratio - b.aspect()).abs();
            da.total_cmp(&db)
                .then(a.blocks().cmp(&b.blocks()))
                .then(a.cols.cmp(&b.cols))
        })
        .expect("candidate set is never empty");
    Ok(best)
}

/// Rescales a pixel coordinate from a `width × height` frame onto a
/// `new_width × new_height` frame.
pub fn rescale_point(
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    new_width: f64,
    new_height: f64,
) -> Result<(f64, f64)> {
    if width == 0.0 || height == 0.0 {
        return Err(Error::validation("source dimensions must be nonzero"));
    }
    Ok((x / width * new_width, y / height * new_height))
}

/// Maps a pixel coordinate on a `width × height` frame onto the integer grid.
pub fn normalize_to_grid(x: f64, y: f64, width: f64, height: f64) -> Result<GridPoint> {
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::validation("frame dimensions must be positive"));
    }
    if !(0.0..=width).contains(&x) || !(0.0..=height).contains(&y) {
        return Err(Error::validation(format!(
            "point ({x}, {y}) outside frame {width}x{height}"
        )));
    }
    Ok(GridPoint {
        gx: (GRID_EXTENT * x / width).round(),
        gy: (GRID_EXTENT * y / height).round(),
    })
}

/// Inverse of [`normalize_to_grid`]: grid units back to pixels.
pub fn denormalize_from_grid(p: GridPoint, width: f64, height: f64) -> Result<(f64, f64)> {
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::validation("frame dimensions must be positive"));
    }
    if !p.in_range() {
        return Err(Error::validation(format!(
            "grid point ({}, {}) outside [0, 1000]",
            p.gx, p.gy
        )));
    }
    Ok((p.gx / GRID_EXTENT * width, p.gy / GRID_EXTENT * height))
}

/// Full pixel-to-grid path: rescale onto the selected tile grid, then
/// normalize. Equivalent to normalizing directly up to float rounding.
pub fn pixel_to_grid(x: f64, y: f64, width: u32, height: u32) -> Result<GridPoint> {
    let tiles = select_tile_grid(width, height)?;
    let (tw, th) = (
        f64::from(tiles.target_width()),
        f64::from(tiles.target_height()),
    );
    let (xr, yr) = rescale_point(x, y, f64::from(width), f64::from(height), tw, th)?;
    normalize_to_grid(xr.min(tw), yr.min(th), tw, th)
}
