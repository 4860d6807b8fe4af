//! POI rasterization.

use crate::types::{POIRecord, Rect};
use crate::{GridError, Result};
use numcore::Tensor;

/// What happened to the input records during rasterization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterReport {
    pub accepted: usize,
    pub skipped_outside: usize,
    /// `(input index, offending category)` for records with category ≥ C.
    pub rejected: Vec<(usize, usize)>,
}

/// Bins POIs into an `[H', W', C]` count tensor over the footprint.
///
/// A record bins to pixel `(i, j)` via `floor((coord − min) / pixel_size)`,
/// with coordinates exactly on the max edge assigned to the last bin.
/// Records outside the footprint are skipped and counted; records with a
/// category out of range are rejected with an error entry.
pub fn rasterize_pois(
    pois: &[POIRecord],
    footprint: &Rect,
    height: usize,
    width: usize,
    n_categories: usize,
) -> Result<(Tensor, RasterReport)> {
    if height == 0 || width == 0 || n_categories == 0 {
        return Err(GridError::Malformed(format!(
            "raster dimensions must be positive, got {height}x{width}x{n_categories}"
        )));
    }
    if footprint.width() <= 0.0 || footprint.height() <= 0.0 {
        return Err(GridError::InvalidBounds(format!("{footprint:?}")));
    }
    let px = footprint.width() / width as f64;
    let py = footprint.height() / height as f64;
    let mut data = vec![0.0; height * width * n_categories];
    let mut report = RasterReport::default();
    for (idx, poi) in pois.iter().enumerate() {
        if !footprint.contains(poi.x, poi.y) {
            report.skipped_outside += 1;
            continue;
        }
        if poi.category >= n_categories {
            report.rejected.push((idx, poi.category));
            continue;
        }
        let i = (((poi.y - footprint.min_y) / py) as usize).min(height - 1);
        let j = (((poi.x - footprint.min_x) / px) as usize).min(width - 1);
        data[(i * width + j) * n_categories + poi.category] += 1.0;
        report.accepted += 1;
    }
    let tensor = Tensor::new(vec![height, width, n_categories], data)?;
    Ok((tensor, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_footprint() -> Rect {
        Rect {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 100.0,
            max_y: 100.0,
        }
    }

    #[test]
    fn empty_input_yields_zero_tensor() {
        let (t, report) = rasterize_pois(&[], &unit_footprint(), 4, 4, 3).unwrap();
        assert!(t.data().iter().all(|v| *v == 0.0));
        assert_eq!(report, RasterReport::default());
    }

    #[test]
    fn center_bins_to_upper_right_by_the_floor_rule() {
        let pois = vec![
            POIRecord { x: 50.0, y: 50.0, category: 0 };
            3
        ];
        let (t, report) = rasterize_pois(&pois, &unit_footprint(), 2, 2, 2).unwrap();
        assert_eq!(report.accepted, 3);
        // Element (1, 1, 0) holds all three; everything else is zero.
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..2 {
                    let v = t.data()[(i * 2 + j) * 2 + c];
                    let want = if (i, j, c) == (1, 1, 0) { 3.0 } else { 0.0 };
                    assert_eq!(v, want, "({i},{j},{c})");
                }
            }
        }
    }

    #[test]
    fn max_edge_goes_to_last_bin() {
        let pois = vec![POIRecord {
            x: 100.0,
            y: 100.0,
            category: 1,
        }];
        let (t, report) = rasterize_pois(&pois, &unit_footprint(), 4, 4, 2).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(t.data()[(3 * 4 + 3) * 2 + 1], 1.0);
    }

    #[test]
    fn outside_records_are_skipped_and_counted() {
        let pois = vec![
            POIRecord { x: -1.0, y: 50.0, category: 0 },
            POIRecord { x: 50.0, y: 101.0, category: 0 },
            POIRecord { x: 10.0, y: 10.0, category: 0 },
        ];
        let (_, report) = rasterize_pois(&pois, &unit_footprint(), 2, 2, 1).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.skipped_outside, 2);
    }

    #[test]
    fn bad_category_is_rejected_with_entry() {
        let pois = vec![
            POIRecord { x: 50.0, y: 50.0, category: 5 },
            POIRecord { x: 50.0, y: 50.0, category: 0 },
        ];
        let (_, report) = rasterize_pois(&pois, &unit_footprint(), 2, 2, 2).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected, vec![(0, 5)]);
    }

    #[test]
    fn counts_match_point_in_rectangle_oracle() {
        use numcore::rng::rng_for;
        use rand::Rng;
        let mut rng = rng_for(3, "raster-oracle");
        let fp = unit_footprint();
        let (h, w, c) = (5, 7, 3);
        let pois: Vec<POIRecord> = (0..100)
            .map(|_| POIRecord {
                x: rng.gen_range(0.0..100.0),
                y: rng.gen_range(0.0..100.0),
                category: rng.gen_range(0..c),
            })
            .collect();
        let (t, report) = rasterize_pois(&pois, &fp, h, w, c).unwrap();
        assert_eq!(report.accepted, 100);
        // Independent oracle: count points inside each pixel rectangle,
        // half-open except along the footprint's max edges.
        let px = fp.width() / w as f64;
        let py = fp.height() / h as f64;
        for i in 0..h {
            for j in 0..w {
                for cat in 0..c {
                    let (x0, x1) = (fp.min_x + j as f64 * px, fp.min_x + (j + 1) as f64 * px);
                    let (y0, y1) = (fp.min_y + i as f64 * py, fp.min_y + (i + 1) as f64 * py);
                    let count = pois
                        .iter()
                        .filter(|p| p.category == cat)
                        .filter(|p| {
                            let in_x = p.x >= x0 && (p.x < x1 || (j == w - 1 && p.x <= fp.max_x));
                            let in_y = p.y >= y0 && (p.y < y1 || (i == h - 1 && p.y <= fp.max_y));
                            in_x && in_y
                        })
                        .count() as f64;
                    assert_eq!(t.data()[(i * w + j) * c + cat], count, "({i},{j},{cat})");
                }
            }
        }
    }
}
