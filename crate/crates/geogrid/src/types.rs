//! Core domain types.

use crate::{log_target_from_emission, GridError, Result};
use numcore::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

/// Axis-aligned rectangle in projected meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Inclusive on all edges; points exactly on the max edge belong to
    /// this rectangle (and bin to the last pixel).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// A rectangular region plus the square cell edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub resolution_m: f64,
}

impl RegionBounds {
    pub fn validate(&self) -> Result<()> {
        if !self.resolution_m.is_finite() || self.resolution_m <= 0.0 {
            return Err(GridError::InvalidResolution(self.resolution_m));
        }
        if !(self.max_x > self.min_x && self.max_y > self.min_y) {
            return Err(GridError::InvalidBounds(format!(
                "x [{}, {}], y [{}, {}]",
                self.min_x, self.max_x, self.min_y, self.max_y
            )));
        }
        Ok(())
    }

    pub fn n_cols(&self) -> usize {
        ((self.max_x - self.min_x) / self.resolution_m).ceil() as usize
    }

    pub fn n_rows(&self) -> usize {
        ((self.max_y - self.min_y) / self.resolution_m).ceil() as usize
    }

    /// Footprint of the cell at `(row, col)`, clipped to the bounds so
    /// that the cells partition the region exactly.
    pub fn footprint(&self, row: usize, col: usize) -> Rect {
        let x0 = self.min_x + col as f64 * self.resolution_m;
        let y0 = self.min_y + row as f64 * self.resolution_m;
        Rect {
            min_x: x0,
            min_y: y0,
            max_x: (x0 + self.resolution_m).min(self.max_x),
            max_y: (y0 + self.resolution_m).min(self.max_y),
        }
    }
}

/// Dataset split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    None,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::None => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            other => Err(GridError::Malformed(format!("unknown split '{other}'"))),
        }
    }
}

/// A geo-tagged facility record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct POIRecord {
    pub x: f64,
    pub y: f64,
    pub category: usize,
}

/// Cell position and footprint before any data is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSkeleton {
    pub row: usize,
    pub col: usize,
    pub footprint: Rect,
}

/// One grid cell with its target and both modality tensors.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    /// Yearly emission in tonnes, ≥ 0.
    pub emission_t: f64,
    /// `ln(1 + emission_t)`, the training target.
    pub log_target: f64,
    /// `[H, W, 3]` in `[0, 1]`.
    pub image: Tensor,
    /// `[H', W', C]` nonnegative counts.
    pub poi: Tensor,
    pub region_tag: String,
    pub split: Split,
}

impl GridCell {
    pub fn new(
        row: usize,
        col: usize,
        emission_t: f64,
        image: Tensor,
        poi: Tensor,
        region_tag: String,
    ) -> Result<Self> {
        if !(emission_t.is_finite() && emission_t >= 0.0) {
            return Err(GridError::Malformed(format!(
                "cell ({row}, {col}): emission must be finite and ≥ 0, got {emission_t}"
            )));
        }
        Ok(Self {
            row,
            col,
            emission_t,
            log_target: log_target_from_emission(emission_t),
            image,
            poi,
            region_tag,
            split: Split::None,
        })
    }
}

/// A full region: bounds, category dictionary, and cells ordered by
/// `(row, col)`.
#[derive(Debug, Clone)]
pub struct RegionDataset {
    pub bounds: RegionBounds,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_categories: usize,
    pub category_names: Vec<String>,
    pub cells: Vec<GridCell>,
    pub pois: Vec<POIRecord>,
    index: HashMap<(usize, usize), usize>,
}

impl RegionDataset {
    pub fn new(
        bounds: RegionBounds,
        n_categories: usize,
        category_names: Vec<String>,
        mut cells: Vec<GridCell>,
        pois: Vec<POIRecord>,
    ) -> Result<Self> {
        bounds.validate()?;
        if category_names.len() != n_categories {
            return Err(GridError::Malformed(format!(
                "{} category names for {} categories",
                category_names.len(),
                n_categories
            )));
        }
        cells.sort_by_key(|c| (c.row, c.col));
        let mut index = HashMap::with_capacity(cells.len());
        for (i, c) in cells.iter().enumerate() {
            if index.insert((c.row, c.col), i).is_some() {
                return Err(GridError::Malformed(format!(
                    "duplicate cell ({}, {})",
                    c.row, c.col
                )));
            }
        }
        Ok(Self {
            n_rows: bounds.n_rows(),
            n_cols: bounds.n_cols(),
            bounds,
            n_categories,
            category_names,
            cells,
            pois,
            index,
        })
    }

    pub fn cell_index(&self, row: usize, col: usize) -> Option<usize> {
        self.index.get(&(row, col)).copied()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&GridCell> {
        self.cell_index(row, col).map(|i| &self.cells[i])
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct region tags in first-appearance order over `(row, col)`.
    pub fn region_tags(&self) -> Vec<String> {
        let mut tags = Vec::new();
        for c in &self.cells {
            if !tags.contains(&c.region_tag) {
                tags.push(c.region_tag.clone());
            }
        }
        tags
    }

    /// The `M×M` neighborhood centered at `(row, col)`, in row-major block
    /// order. `None` marks out-of-region slots; the validity mask of the
    /// block is exactly the `is_some` pattern.
    pub fn neighborhood(&self, row: usize, col: usize, m: usize) -> Result<Vec<Option<usize>>> {
        if m % 2 == 0 || m == 0 {
            return Err(GridError::EvenNeighborhood(m));
        }
        let half = (m / 2) as isize;
        let mut block = Vec::with_capacity(m * m);
        for dr in -half..=half {
            for dc in -half..=half {
                let r = row as isize + dr;
                let c = col as isize + dc;
                if r < 0 || c < 0 {
                    block.push(None);
                } else {
                    block.push(self.cell_index(r as usize, c as usize));
                }
            }
        }
        Ok(block)
    }
}
