use crate::raster::Raster;

use super::{EpisodeError, Stroke};

/// Renders strokes onto a blank `canvas x canvas` raster.
pub fn rasterize(strokes: &[Stroke], canvas: usize) -> Result<Raster, EpisodeError> {
    if canvas < 32 {
        return Err(EpisodeError::CanvasTooSmall(canvas));
    }
    let mut raster = Raster::blank(canvas, canvas);
    for s in strokes {
        draw_stroke(&mut raster, s)?;
    }
    Ok(raster)
}

/// Admissible `t` in [0, 1] for which `|center - (start + t * delta)| <= r`.
fn axis_interval(center: f64, start: f64, delta: f64, r: f64) -> Option<(f64, f64)> {
    if delta == 0.0 {
        return ((center - start).abs() <= r).then_some((0.0, 1.0));
    }
    let a = (center - r - start) / delta;
    let b = (center + r - start) / delta;
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (lo, hi) = (lo.max(0.0), hi.min(1.0));
    (lo <= hi).then_some((lo, hi))
}

/// Max-composites one stroke with full ink. A pixel is inked when its
/// center lies inside the square brush swept along some segment, i.e.
/// within Chebyshev distance `width / 2` of the polyline.
pub fn draw_stroke(raster: &mut Raster, stroke: &Stroke) -> Result<(), EpisodeError> {
    stroke.validate()?;
    let (w, h) = (raster.width(), raster.height());
    let r = stroke.width / 2.0;
    let to_px = |(x, y): (f64, f64)| (x * w as f64, y * h as f64);
    for seg in stroke.points.windows(2) {
        let (x0, y0) = to_px(seg[0]);
        let (x1, y1) = to_px(seg[1]);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let col_lo = ((x0.min(x1) - r - 0.5).ceil().max(0.0)) as usize;
        let col_hi = ((x0.max(x1) + r - 0.5).floor().min(w as f64 - 1.0)) as isize;
        let row_lo = ((y0.min(y1) - r - 0.5).ceil().max(0.0)) as usize;
        let row_hi = ((y0.max(y1) + r - 0.5).floor().min(h as f64 - 1.0)) as isize;
        if col_hi < 0 || row_hi < 0 {
            continue;
        }
        for row in row_lo..=row_hi as usize {
            let Some((ty0, ty1)) = axis_interval(row as f64 + 0.5, y0, dy, r) else {
                continue;
            };
            for col in col_lo..=col_hi as usize {
                if let Some((tx0, tx1)) = axis_interval(col as f64 + 0.5, x0, dx, r) {
                    if tx0.max(ty0) <= tx1.min(ty1) {
                        raster.ink(row, col, 1.0);
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_canvas() {
        let r = rasterize(&[], 64).unwrap();
        assert_eq!(r.inked_count(), 0);
        assert!(matches!(
            rasterize(&[], 16),
            Err(EpisodeError::CanvasTooSmall(16))
        ));
    }

    #[test]
    fn horizontal_band() {
        let s = Stroke::new(vec![(0.25, 0.5), (0.75, 0.5)], 2.0).unwrap();
        let r = rasterize(&[s], 64).unwrap();
        let rows: Vec<usize> = (0..64)
            .filter(|&y| (0..64).any(|x| r.get(y, x) > 0.5))
            .collect();
        assert_eq!(rows, vec![31, 32]);
        let cols = (0..64).filter(|&x| r.get(31, x) > 0.5).count();
        assert_eq!(cols, 34);
    }

    #[test]
    fn redraw_is_idempotent() {
        let a = Stroke::new(vec![(0.1, 0.1), (0.8, 0.6), (0.3, 0.9)], 3.0).unwrap();
        let b = Stroke::new(vec![(0.5, 0.1), (0.5, 0.9)], 2.0).unwrap();
        let mut over = rasterize(&[a.clone(), b.clone()], 64).unwrap();
        draw_stroke(&mut over, &a).unwrap();
        assert_eq!(over, rasterize(&[a, b], 64).unwrap());
    }
}
