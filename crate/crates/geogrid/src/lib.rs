//! Geospatial grid data model.
//!
//! A region is a rectangle in projected planar meters, tiled into square
//! cells. Each cell carries an emission target, an image tile, and a
//! rasterized POI count tensor. This crate owns tiling, POI rasterization,
//! neighborhood extraction, resolution aggregation, dataset splits, the
//! on-disk dataset layout, and a synthetic-region generator whose ground
//! truth doubles as the test oracle for the model crates.
//!
//! Coordinates are assumed pre-projected; row 0 sits on the `min_y` edge
//! and row indices grow with `y`.

pub mod aggregate;
pub mod grid;
pub mod io;
pub mod raster;
pub mod split;
pub mod synth;
pub mod types;

pub use aggregate::aggregate_resolution;
pub use grid::tile_region;
pub use raster::{rasterize_pois, RasterReport};
pub use split::{split_dataset, RegionalAssignment, SplitMode};
pub use synth::{synth_region, SynthSpec, SynthTruth};
pub use types::{
    CellSkeleton, GridCell, POIRecord, Rect, RegionBounds, RegionDataset, Split,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid region bounds: {0}")]
    InvalidBounds(String),
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("neighborhood size must be odd and ≥ 1, got {0}")]
    EvenNeighborhood(usize),
    #[error("aggregation factor must be ≥ 2, got {0}")]
    InvalidFactor(usize),
    #[error("region of {rows}x{cols} cells has no full {factor}x{factor} block")]
    RegionTooSmall {
        rows: usize,
        cols: usize,
        factor: usize,
    },
    #[error("split '{0}' ended up empty")]
    EmptySplit(&'static str),
    #[error("split fractions must be nonnegative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("region tag '{0}' is not assigned to any split")]
    UnassignedTag(String),
    #[error("region tag '{0}' is assigned to more than one split")]
    DuplicateTag(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("cell ({row}, {col}) is missing from the dataset")]
    MissingCell { row: usize, col: usize },
    #[error("dataset is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error for {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("json error for {path}: {detail}")]
    Json { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Prediction-target transform: `ln(1 + emission)`. Defined at zero and
/// invertible, unlike a plain logarithm.
pub fn log_target_from_emission(emission_t: f64) -> f64 {
    emission_t.ln_1p()
}

/// Inverse of [`log_target_from_emission`].
pub fn emission_from_log_target(log_target: f64) -> f64 {
    log_target.exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_transform_is_invertible_and_defined_at_zero() {
        assert_eq!(log_target_from_emission(0.0), 0.0);
        for e in [0.0, 0.5, 10.0, 12345.0] {
            let back = emission_from_log_target(log_target_from_emission(e));
            assert!((back - e).abs() < 1e-9 * (1.0 + e));
        }
    }
}
