//! Conservative per-tile candidate lists from spherical-cap bounds.

use std::f64::consts::{PI, TAU};

use crate::camera::{cap_bounds, CapBounds, ErpCamera, LonRange};

use super::Prepared;

/// One candidate in a tile list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TileEntry {
    pub id: u32,
    /// Camera-center-to-mean distance.
    pub key: f64,
}

/// Per-tile candidate lists, each sorted by ascending key (ties by id).
#[derive(Clone, Debug)]
pub struct TileIndex {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<TileEntry>>,
}

impl TileIndex {
    pub fn list(&self, tx: usize, ty: usize) -> &[TileEntry] {
        &self.lists[ty * self.tiles_x + tx]
    }

    /// Candidate list for the tile containing pixel `(u, v)`.
    pub fn candidates_for_pixel(&self, u: usize, v: usize) -> &[TileEntry] {
        self.list(u / self.tile_size, v / self.tile_size)
    }

    pub fn contains(&self, u: usize, v: usize, id: u32) -> bool {
        self.candidates_for_pixel(u, v).iter().any(|e| e.id == id)
    }

    /// Total number of (tile, Gaussian) pairs.
    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Inclusive pixel rectangle(s) covered by a cap; columns may come in two
/// segments when the longitude range wraps.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelSpan {
    pub rows: (usize, usize),
    pub cols: Vec<(usize, usize)>,
}

/// Pixels whose centers may fall inside `bounds`, with a one-pixel margin
/// against rounding.
pub fn cap_to_pixels(bounds: &CapBounds, width: usize, height: usize) -> PixelSpan {
    let w = width as f64;
    let h = height as f64;
    if bounds.full_sphere {
        return PixelSpan {
            rows: (0, height - 1),
            cols: vec![(0, width - 1)],
        };
    }
    let v_top = h / 2.0 - h / PI * bounds.lat_range.1;
    let v_bot = h / 2.0 - h / PI * bounds.lat_range.0;
    let clamp_row = |x: f64| x.max(0.0).min(h - 1.0) as usize;
    let rows = (
        clamp_row((v_top - 0.5).floor() - 1.0),
        clamp_row((v_bot - 0.5).ceil() + 1.0),
    );
    let cols = match bounds.lon_range {
        LonRange::Full => vec![(0, width - 1)],
        LonRange::Interval { lo, hi } => {
            let hi = if lo > hi { hi + TAU } else { hi };
            let u_lo = w / TAU * lo + w / 2.0;
            let u_hi = w / TAU * hi + w / 2.0;
            let c_lo = (u_lo - 0.5).floor() as i64 - 1;
            let c_hi = (u_hi - 0.5).ceil() as i64 + 1;
            col_segments(c_lo, c_hi, width as i64)
        }
    };
    PixelSpan { rows, cols }
}

/// Splits the unwrapped inclusive column interval `[lo, hi]` into segments of `[0, w)`.
fn col_segments(lo: i64, hi: i64, w: i64) -> Vec<(usize, usize)> {
    if hi - lo + 1 >= w {
        return vec![(0, (w - 1) as usize)];
    }
    let shift = lo.div_euclid(w) * w;
    let (lo, hi) = (lo - shift, hi - shift);
    if hi < w {
        vec![(lo as usize, hi as usize)]
    } else {
        vec![(lo as usize, (w - 1) as usize), (0, (hi - w) as usize)]
    }
}

pub(crate) fn build(prepared: &[Prepared], cam: &ErpCamera, tile_size: usize, sigmas: f64) -> TileIndex {
    let (w, h) = (cam.width(), cam.height());
    let tiles_x = w.div_ceil(tile_size);
    let tiles_y = h.div_ceil(tile_size);
    let mut lists: Vec<Vec<TileEntry>> = vec![Vec::new(); tiles_x * tiles_y];
    for (id, p) in prepared.iter().enumerate() {
        if !p.active {
            continue;
        }
        let radius = sigmas * p.max_scale;
        let bounds = cap_bounds(&p.mean_cam, p.key, radius).unwrap_or_else(|_| CapBounds::everything());
        let span = cap_to_pixels(&bounds, w, h);
        let (ty0, ty1) = (span.rows.0 / tile_size, span.rows.1 / tile_size);
        for &(c0, c1) in &span.cols {
            for tx in (c0 / tile_size)..=(c1 / tile_size) {
                for ty in ty0..=ty1 {
                    lists[ty * tiles_x + tx].push(TileEntry {
                        id: id as u32,
                        key: p.key,
                    });
                }
            }
        }
    }
    for list in &mut lists {
        list.sort_by(|a, b| a.key.total_cmp(&b.key).then(a.id.cmp(&b.id)));
        // wrapped segments can both touch the same tile column
        list.dedup_by_key(|e| e.id);
    }
    TileIndex {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn segments() {
        assert_eq!(col_segments(3, 7, 10), vec![(3, 7)]);
        assert_eq!(col_segments(-2, 1, 10), vec![(8, 9), (0, 1)]);
        assert_eq!(col_segments(8, 11, 10), vec![(8, 9), (0, 1)]);
        assert_eq!(col_segments(-5, 5, 10), vec![(0, 9)]);
    }

    #[test]
    fn equatorial_cap_maps_to_centered_rectangle() {
        let b = cap_bounds(&Vector3::new(0.0, 0.0, 2.0), 2.0, 1.0).unwrap();
        let span = cap_to_pixels(&b, 1024, 512);
        // +-30 degrees: rows 256 -+ 85.3, cols 512 -+ 85.3
        assert!(span.rows.0 <= 170 && span.rows.0 >= 168);
        assert!(span.rows.1 >= 341 && span.rows.1 <= 343);
        assert_eq!(span.cols.len(), 1);
        let (c0, c1) = span.cols[0];
        assert!(c0 <= 426 && c0 >= 424);
        assert!(c1 >= 597 && c1 <= 599);
    }

    #[test]
    fn full_sphere_covers_image() {
        let span = cap_to_pixels(&CapBounds::everything(), 64, 32);
        assert_eq!(span.rows, (0, 31));
        assert_eq!(span.cols, vec![(0, 63)]);
    }
}
