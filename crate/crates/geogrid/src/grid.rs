//! Region tiling.

use crate::types::{CellSkeleton, RegionBounds};
use crate::Result;

/// Tiles the bounding box into `ceil(width/res) × ceil(height/res)` cells.
/// Edge cells are clipped to the box, so the footprints partition it.
pub fn tile_region(bounds: &RegionBounds) -> Result<Vec<CellSkeleton>> {
    bounds.validate()?;
    let (rows, cols) = (bounds.n_rows(), bounds.n_cols());
    let mut cells = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            cells.push(CellSkeleton {
                row,
                col,
                footprint: bounds.footprint(row, col),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(w: f64, h: f64, res: f64) -> RegionBounds {
        RegionBounds {
            min_x: 0.0,
            min_y: 0.0,
            max_x: w,
            max_y: h,
            resolution_m: res,
        }
    }

    #[test]
    fn four_km_box_at_1km_gives_16_cells() {
        assert_eq!(tile_region(&bounds(4000.0, 4000.0, 1000.0)).unwrap().len(), 16);
    }

    #[test]
    fn four_km_box_at_2km_gives_4_cells() {
        assert_eq!(tile_region(&bounds(4000.0, 4000.0, 2000.0)).unwrap().len(), 4);
    }

    #[test]
    fn nonpositive_resolution_is_rejected() {
        assert!(tile_region(&bounds(1000.0, 1000.0, 0.0)).is_err());
        assert!(tile_region(&bounds(1000.0, 1000.0, -5.0)).is_err());
    }
}
