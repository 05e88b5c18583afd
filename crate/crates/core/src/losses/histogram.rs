//! Parzen-window joint histograms and mutual information.
//!
//! Bins are `B` equal cells over `[0, 1]` with centers `(k + 0.5) / B`.
//! Each intensity spreads unit mass over nearby bins with a Gaussian kernel
//! truncated at three standard deviations and renormalized. A kernel width
//! of zero selects hard binning.

use crate::error::{Error, Result};
use crate::image::{check_same, Image2D};

/// Cells with less joint mass than this are left out of the log terms.
pub const MASS_FLOOR: f64 = 1e-12;

/// Per-pixel kernel weights over a sliding window of bins.
pub(crate) struct KernelWeights {
    stride: usize,
    start: Vec<usize>,
    len: Vec<usize>,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl KernelWeights {
    pub(crate) fn compute(values: &[f64], bins: usize, sigma: f64, with_grad: bool) -> Self {
        let hard = sigma == 0.0;
        let stride = if hard {
            1
        } else {
            (6.0 * sigma * bins as f64).floor() as usize + 2
        };
        let n = values.len();
        let mut out = Self {
            stride,
            start: vec![0; n],
            len: vec![0; n],
            w: vec![0.0; n * stride],
            dw: if with_grad { vec![0.0; n * stride] } else { Vec::new() },
        };
        let bf = bins as f64;
        let inv_s2 = if hard { 0.0 } else { 1.0 / (sigma * sigma) };
        for (p, &raw) in values.iter().enumerate() {
            let x = raw.clamp(0.0, 1.0);
            let inside = (0.0..=1.0).contains(&raw);
            if hard {
                out.start[p] = ((x * bf).floor() as usize).min(bins - 1);
                out.len[p] = 1;
                out.w[p] = 1.0;
                continue;
            }
            let reach = 3.0 * sigma;
            let lo = ((x - reach) * bf - 0.5).ceil().max(0.0) as usize;
            let hi = (((x + reach) * bf - 0.5).floor() as i64).min(bins as i64 - 1);
            let lo = lo.min(bins - 1);
            let hi = (hi.max(lo as i64)) as usize;
            let len = (hi - lo + 1).min(stride);
            out.start[p] = lo;
            out.len[p] = len;
            let ws = &mut out.w[p * stride..p * stride + len];
            let mut total = 0.0;
            for (k, wk) in ws.iter_mut().enumerate() {
                let c = (lo + k) as f64 / bf + 0.5 / bf;
                let d = x - c;
                *wk = if d.abs() <= reach {
                    (-0.5 * d * d * inv_s2).exp()
                } else {
                    0.0
                };
                total += *wk;
            }
            if total <= 0.0 {
                // Only reachable for tiny kernels far from every center.
                let k = ((x * bf).floor() as usize).min(bins - 1);
                out.start[p] = k;
                out.len[p] = 1;
                out.w[p * stride] = 1.0;
                for extra in &mut out.w[p * stride + 1..p * stride + stride] {
                    *extra = 0.0;
                }
                continue;
            }
            for wk in ws.iter_mut() {
                *wk /= total;
            }
            if with_grad && inside {
                // d w_j / dx = w_j * (-(x - c_j) + sum_k w_k (x - c_k)) / sigma^2
                let mut mean_d = 0.0;
                for (k, &wk) in ws.iter().enumerate() {
                    let c = (lo + k) as f64 / bf + 0.5 / bf;
                    mean_d += wk * (x - c);
                }
                let dws = &mut out.dw[p * stride..p * stride + len];
                for (k, dwk) in dws.iter_mut().enumerate() {
                    let c = (lo + k) as f64 / bf + 0.5 / bf;
                    *dwk = out.w[p * stride + k] * (mean_d - (x - c)) * inv_s2;
                }
            }
        }
        out
    }

    #[inline]
    fn row(&self, p: usize) -> (usize, &[f64]) {
        let s = p * self.stride;
        (self.start[p], &self.w[s..s + self.len[p]])
    }

    #[inline]
    fn drow(&self, p: usize) -> &[f64] {
        let s = p * self.stride;
        &self.dw[s..s + self.len[p]]
    }
}

/// Normalized joint intensity distribution of two images.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    pub bins: usize,
    pub kernel_sigma: f64,
    /// `bins x bins`, row index from the first image, column from the second.
    pub joint: Vec<f64>,
    pub marginal_a: Vec<f64>,
    pub marginal_b: Vec<f64>,
}

fn validate(a: &Image2D, b: &Image2D, bins: usize, kernel_sigma: f64) -> Result<()> {
    check_same(a.dims(), b.dims())?;
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    if !(kernel_sigma >= 0.0 && kernel_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("kernel sigma {kernel_sigma}")));
    }
    Ok(())
}

impl JointHistogram {
    pub fn new(a: &Image2D, b: &Image2D, bins: usize, kernel_sigma: f64) -> Result<Self> {
        validate(a, b, bins, kernel_sigma)?;
        let ka = KernelWeights::compute(a.data(), bins, kernel_sigma, false);
        let kb = KernelWeights::compute(b.data(), bins, kernel_sigma, false);
        Ok(Self::accumulate(&ka, &kb, a.len(), bins, kernel_sigma))
    }

    fn accumulate(ka: &KernelWeights, kb: &KernelWeights, n: usize, bins: usize, kernel_sigma: f64) -> Self {
        let mut joint = vec![0.0; bins * bins];
        let mut ma = vec![0.0; bins];
        let mut mb = vec![0.0; bins];
        for p in 0..n {
            let (sa, wa) = ka.row(p);
            let (sb, wb) = kb.row(p);
            for (i, &x) in wa.iter().enumerate() {
                ma[sa + i] += x;
                let row = &mut joint[(sa + i) * bins + sb..(sa + i) * bins + sb + wb.len()];
                for (cell, &y) in row.iter_mut().zip(wb) {
                    *cell += x * y;
                }
            }
            for (j, &y) in wb.iter().enumerate() {
                mb[sb + j] += y;
            }
        }
        let inv = 1.0 / n as f64;
        for v in joint.iter_mut().chain(ma.iter_mut()).chain(mb.iter_mut()) {
            *v *= inv;
        }
        Self {
            bins,
            kernel_sigma,
            joint,
            marginal_a: ma,
            marginal_b: mb,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.joint.iter().sum()
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.bins + j]
    }

    /// `sum P log(P / (pa pb))` in nats over cells above [`MASS_FLOOR`].
    pub fn mutual_information(&self) -> f64 {
        let b = self.bins;
        let mut mi = 0.0;
        for i in 0..b {
            let pa = self.marginal_a[i];
            for j in 0..b {
                let p = self.joint[i * b + j];
                if p >= MASS_FLOOR {
                    mi += p * (p / (pa * self.marginal_b[j])).ln();
                }
            }
        }
        mi
    }
}

/// Mutual information of two images in nats.
pub fn mutual_information(a: &Image2D, b: &Image2D, bins: usize, kernel_sigma: f64) -> Result<f64> {
    Ok(JointHistogram::new(a, b, bins, kernel_sigma)?.mutual_information())
}

/// Negated mutual information and its gradient with respect to `b`.
pub fn mi_loss(a: &Image2D, b: &Image2D, bins: usize, kernel_sigma: f64) -> Result<super::LossValue> {
    validate(a, b, bins, kernel_sigma)?;
    let n = a.len();
    let ka = KernelWeights::compute(a.data(), bins, kernel_sigma, false);
    let kb = KernelWeights::compute(b.data(), bins, kernel_sigma, true);
    let hist = JointHistogram::accumulate(&ka, &kb, n, bins, kernel_sigma);
    let value = -hist.mutual_information();
    if kernel_sigma == 0.0 {
        return Ok(super::LossValue {
            value,
            grad: vec![0.0; n],
        });
    }
    let safe_ln = |p: f64| if p >= MASS_FLOOR { p.ln() } else { 0.0 };
    let log_joint: Vec<f64> = hist.joint.iter().map(|&p| safe_ln(p)).collect();
    let log_mb: Vec<f64> = hist.marginal_b.iter().map(|&p| safe_ln(p)).collect();
    // dMI/db_p = (1/N) sum_j w'_j(b_p) [ sum_i w_i(a_p) ln P_ij - ln pb_j ];
    // the +1 terms vanish because the kernel weights of b_p sum to one.
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; n];
    for (p, g) in grad.iter_mut().enumerate() {
        let (sa, wa) = ka.row(p);
        let (sb, _) = kb.row(p);
        let dwb = kb.drow(p);
        let mut acc = 0.0;
        for (j, &dw) in dwb.iter().enumerate() {
            if dw == 0.0 {
                continue;
            }
            let col = sb + j;
            let mut s = -log_mb[col];
            for (i, &x) in wa.iter().enumerate() {
                s += x * log_joint[(sa + i) * bins + col];
            }
            acc += dw * s;
        }
        *g = -acc * inv;
    }
    Ok(super::LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, h: usize, w: usize) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2D::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn point_mass_in_hard_mode() {
        let a = Image2D::filled(4, 4, 0.5).unwrap();
        let h = JointHistogram::new(&a, &a, 8, 0.0).unwrap();
        assert_eq!(h.cell(4, 4), 1.0);
        assert_eq!(h.joint.iter().filter(|&&p| p > 0.0).count(), 1);
    }

    #[test]
    fn marginals_match_joint_sums() {
        let a = noise(1, 16, 16);
        let b = noise(2, 16, 16);
        for sigma in [0.0, 1.0 / 32.0, 0.1] {
            let h = JointHistogram::new(&a, &b, 32, sigma).unwrap();
            assert!((h.total_mass() - 1.0).abs() < 1e-9);
            for i in 0..32 {
                let row: f64 = (0..32).map(|j| h.cell(i, j)).sum();
                let col: f64 = (0..32).map(|j| h.cell(j, i)).sum();
                assert!((row - h.marginal_a[i]).abs() < 1e-9);
                assert!((col - h.marginal_b[i]).abs() < 1e-9);
            }
            // Marginals equal the single-image histogram.
            let solo = JointHistogram::new(&a, &a, 32, sigma).unwrap();
            for (x, y) in solo.marginal_a.iter().zip(&h.marginal_a) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn checkerboards_of_different_frequency_are_independent() {
        // Pixel checkerboard against a checkerboard with half the horizontal
        // frequency: every level pair occurs equally often.
        let n = 32;
        let board = Image2D::from_fn(n, n, |y, x| if (x + y) % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
        let other = Image2D::from_fn(n, n, |y, x| if (x / 2 + y) % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
        let h = JointHistogram::new(&board, &other, 8, 1.0 / 8.0).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                worst = worst.max((h.cell(i, j) - h.marginal_a[i] * h.marginal_b[j]).abs());
            }
        }
        assert!(worst < 0.02, "max deviation {worst}");
    }

    #[test]
    fn self_information_of_binary_image_is_ln2() {
        let img = Image2D::from_fn(8, 8, |y, _| if y < 4 { 0.0 } else { 1.0 }).unwrap();
        let mi = mutual_information(&img, &img, 32, 0.0).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
        let loss = mi_loss(&img, &img, 2, 0.0).unwrap();
        assert!((loss.value + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_has_small_mi() {
        let a = noise(11, 64, 64);
        let b = noise(12, 64, 64);
        let v = mi_loss(&a, &b, 8, 1.0 / 8.0).unwrap().value;
        assert!(v.abs() < 0.05, "{v}");
        assert!(v <= 1e-6);
    }

    #[test]
    fn symmetric_value() {
        let a = noise(3, 20, 20);
        let b = a.map(|v| (v * v + 0.1 * (7.0 * v).sin()).clamp(0.0, 1.0)).unwrap();
        let ab = mutual_information(&a, &b, 32, 1.0 / 32.0).unwrap();
        let ba = mutual_information(&b, &a, 32, 1.0 / 32.0).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = noise(21, 8, 8);
        let b = noise(22, 8, 8).map(|v| 0.05 + 0.9 * v).unwrap();
        let (bins, sigma) = (16, 1.0 / 16.0);
        let g = mi_loss(&a, &b, bins, sigma).unwrap().grad;
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for p in 0..64 {
            let mut bp = b.data().to_vec();
            let mut bm = b.data().to_vec();
            bp[p] += step;
            bm[p] -= step;
            let lp = mi_loss(&a, &Image2D::new(8, 8, bp).unwrap(), bins, sigma)
                .unwrap()
                .value;
            let lm = mi_loss(&a, &Image2D::new(8, 8, bm).unwrap(), bins, sigma)
                .unwrap()
                .value;
            let fd = (lp - lm) / (2.0 * step);
            let rel = (fd - g[p]).abs() / fd.abs().max(g[p].abs()).max(1e-6 * scale);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = noise(1, 4, 4);
        let b = noise(2, 4, 5);
        assert!(JointHistogram::new(&a, &b, 8, 0.1).is_err());
        assert!(JointHistogram::new(&a, &a, 1, 0.1).is_err());
    }
}
