use crate::types::Grid;

/// Source coordinate and blend weight for each output index under
/// center alignment: output `o` samples source `(o + 0.5)·n/m − 0.5`,
/// clamped to the valid range (edge replication beyond the outer centers).
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a row-major `h × w` plane to `oh × ow`.
pub fn resize_plane(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w);
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let ys = taps(h, oh);
    let xs = taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + fx * (r0[x1] - r0[x0]);
            let bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
            out.push(top + fy * (bottom - top));
        }
    }
    out
}

/// Bilinear, center-aligned resize of a score grid.
pub fn resize_bilinear(grid: &Grid<f64>, shape: (usize, usize)) -> Grid<f64> {
    let data = resize_plane(grid.as_slice(), grid.shape(), shape);
    Grid::new(shape.0, shape.1, data).expect("resize produces the requested shape")
}

/// Place `inner` centered in a `frame`-sized grid, replicating its edges
/// into the border.
pub fn embed_replicate(inner: &Grid<f64>, frame: (usize, usize)) -> Grid<f64> {
    let (ih, iw) = inner.shape();
    let top = frame.0.saturating_sub(ih) / 2;
    let left = frame.1.saturating_sub(iw) / 2;
    Grid::from_fn(frame.0, frame.1, |y, x| {
        let sy = y.saturating_sub(top).min(ih - 1);
        let sx = x.saturating_sub(left).min(iw - 1);
        inner.get(sy, sx)
    })
}
