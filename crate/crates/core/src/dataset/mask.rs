use crate::geodata::{GeoTransform, PolygonAnnotation};
use crate::grid::Mask;

/// Burns polygons into a binary mask by testing pixel centres (even-odd rule,
/// holes subtract, union across polygons).
pub fn rasterize_mask(polygons: &[PolygonAnnotation], transform: &GeoTransform, width: usize, height: usize) -> Mask {
    let mut mask = Mask::filled(width, height, 0);
    let mut xs: Vec<f64> = Vec::new();
    for poly in polygons {
        let [_, min_y, _, max_y] = poly.bbox();
        let row_lo = (((transform.origin_y - max_y) / transform.pixel_height).floor() as i64 - 1).max(0);
        let row_hi = (((transform.origin_y - min_y) / transform.pixel_height).ceil() as i64 + 1).min(height as i64);
        for row in row_lo..row_hi {
            let (_, cy) = transform.cell_center(0, row);
            xs.clear();
            for ring in std::iter::once(&poly.exterior).chain(&poly.holes) {
                collect_crossings(ring, cy, &mut xs);
            }
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(|a, b| a.total_cmp(b));
            for pair in xs.chunks_exact(2) {
                let (lo, hi) = (
                    first_col_at_or_after(transform, pair[0]),
                    first_col_at_or_after(transform, pair[1]),
                );
                let lo = lo.clamp(0, width as i64);
                let hi = hi.clamp(0, width as i64);
                for col in lo..hi {
                    mask.set(row as usize, col as usize, 1);
                }
            }
        }
    }
    mask
}

fn collect_crossings(ring: &[[f64; 2]], y: f64, out: &mut Vec<f64>) {
    let n = ring.len();
    if n < 2 {
        return;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (ring[i][0], ring[i][1]);
        let (xj, yj) = (ring[j][0], ring[j][1]);
        if (yi > y) != (yj > y) {
            out.push((xj - xi) * (y - yi) / (yj - yi) + xi);
        }
        j = i;
    }
}

/// Smallest column whose centre x is >= `x`.
fn first_col_at_or_after(t: &GeoTransform, x: f64) -> i64 {
    let mut c = ((x - t.origin_x) / t.pixel_width - 0.5).ceil() as i64;
    while t.cell_center(c - 1, 0).0 >= x {
        c -= 1;
    }
    while t.cell_center(c, 0).0 < x {
        c += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GeoTransform {
        GeoTransform::new(0.0, 40.0, 10.0, 10.0).unwrap()
    }

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    }

    #[test]
    fn empty_list_gives_zero_mask() {
        let m = rasterize_mask(&[], &grid(), 4, 4);
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn rectangle_covering_two_by_two_pixels() {
        // cols 0..=1, rows 0..=1 span x 0..20, y 20..40
        let p = PolygonAnnotation::new(rect(0.0, 20.0, 20.0, 40.0), vec![], "dump").unwrap();
        let m = rasterize_mask(&[p], &grid(), 4, 4);
        assert_eq!(m.count_ones(), 4);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(m.get(r, c), 1);
        }
    }

    #[test]
    fn hole_clears_middle_pixel() {
        let p =
            PolygonAnnotation::new(rect(0.0, 10.0, 30.0, 40.0), vec![rect(10.0, 20.0, 20.0, 30.0)], "dump").unwrap();
        let m = rasterize_mask(&[p], &grid(), 4, 4);
        assert_eq!(m.count_ones(), 8);
        assert_eq!(m.get(1, 1), 0);
    }

    #[test]
    fn polygon_partly_outside_is_clipped() {
        let p = PolygonAnnotation::new(rect(-100.0, -100.0, 15.0, 100.0), vec![], "dump").unwrap();
        let m = rasterize_mask(&[p], &grid(), 4, 4);
        // only column 0 has centre x = 5 < 15
        assert_eq!(m.count_ones(), 4);
    }
}
