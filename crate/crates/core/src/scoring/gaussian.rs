use crate::types::Grid;

/// Normalized 1-D Gaussian sampled on `[-r, r]`, `r = ⌈4σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid for
/// any offset, including ones wider than the axis.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(src: &[f64], out: &mut [f64], len: usize, stride: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    for i in 0..len {
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let j = reflect_index(i as isize + t as isize - r, len);
            acc += w * src[j * stride];
        }
        out[i * stride] = acc;
    }
}

/// Separable Gaussian blur with reflect borders. `sigma = 0` is the identity.
pub fn smooth(map: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return map.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (h, w) = map.shape();
    let src = map.as_slice();
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        convolve_axis(&src[y * w..], &mut rows[y * w..], w, 1, &kernel);
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        convolve_axis(&rows[x..], &mut out[x..], h, w, &kernel);
    }
    Grid::new(h, w, out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(4.0);
        assert_eq!(k.len(), 33);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..16 {
            assert_eq!(k[i], k[32 - i]);
        }
        assert_eq!(gaussian_kernel(0.3).len(), 5);
    }

    #[test]
    fn reflection() {
        let got: Vec<_> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn constant_unchanged_and_zero_sigma_identity() {
        let g = Grid::filled(7, 5, 2.5);
        let s = smooth(&g, 4.0);
        for &v in s.as_slice() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let g = Grid::from_fn(3, 4, |y, x| (y * 4 + x) as f64);
        assert_eq!(smooth(&g, 0.0), g);
    }
}
