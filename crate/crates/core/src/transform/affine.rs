use serde::{Deserialize, Serialize};

use super::DisplacementField;
use crate::error::{Error, Result};
use crate::image::{check_dims, MIN_SIDE};

/// Six-parameter affine map acting on normalized coordinates in `[-1, 1]`:
///
/// ```text
/// x' = t[0] * x + t[1] * y + t[2]
/// y' = t[3] * x + t[4] * y + t[5]
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub theta: [f64; 6],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

    pub fn identity() -> Self {
        Self { theta: Self::IDENTITY }
    }

    pub fn new(theta: [f64; 6]) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine parameters"));
        }
        let a = Self { theta };
        if a.determinant() == 0.0 {
            log::warn!("affine parameters have a singular linear part: {theta:?}");
        }
        Ok(a)
    }

    /// Rotation by `angle` radians, isotropic `scale`, and translation given
    /// in pixels, all about the image center.
    ///
    /// Rotation in pixel space maps to a non-orthogonal matrix in normalized
    /// coordinates when the image is not square; the aspect ratio is folded in
    /// here.
    pub fn from_similarity(angle: f64, scale: f64, tx_px: f64, ty_px: f64, height: usize, width: usize) -> Self {
        let sx = (width - 1) as f64 / 2.0;
        let sy = (height - 1) as f64 / 2.0;
        let (s, c) = angle.sin_cos();
        Self {
            theta: [
                scale * c,
                -scale * s * sy / sx,
                tx_px / sx,
                scale * s * sx / sy,
                scale * c,
                ty_px / sy,
            ],
        }
    }

    pub fn determinant(&self) -> f64 {
        let t = &self.theta;
        t[0] * t[4] - t[1] * t[3]
    }

    pub fn is_identity(&self) -> bool {
        self.theta == Self::IDENTITY
    }

    /// Maps a normalized point.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let t = &self.theta;
        (t[0] * x + t[1] * y + t[2], t[3] * x + t[4] * y + t[5])
    }

    /// Exact inverse map, or `None` for a singular linear part.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let t = &self.theta;
        let (a, b, c, d) = (t[4] / det, -t[1] / det, -t[3] / det, t[0] / det);
        Some(Self {
            theta: [a, b, -(a * t[2] + b * t[5]), c, d, -(c * t[2] + d * t[5])],
        })
    }

    /// Dense pixel-unit displacement equivalent of this transform.
    ///
    /// The offset is formed directly as `(A - I) p_hat` rescaled to pixels,
    /// so identity parameters give exact zeros.
    pub fn to_field(&self, height: usize, width: usize) -> Result<DisplacementField> {
        check_dims("affine target grid", height, width, MIN_SIDE)?;
        let t = &self.theta;
        let hx = (width - 1) as f64 / 2.0;
        let hy = (height - 1) as f64 / 2.0;
        let n = height * width;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            let yn = y as f64 / hy - 1.0;
            for x in 0..width {
                let xn = x as f64 / hx - 1.0;
                u.push(((t[0] - 1.0) * xn + t[1] * yn + t[2]) * hx);
                v.push((t[3] * xn + (t[4] - 1.0) * yn + t[5]) * hy);
            }
        }
        DisplacementField::new(height, width, u, v)
    }

    /// Chain rule from a field gradient to the six parameters:
    /// `dL/dtheta = sum_p dL/dphi(p) * dphi(p)/dtheta`.
    pub fn grad_from_field(field_grad: &DisplacementField) -> [f64; 6] {
        let (height, width) = field_grad.dims();
        let hx = (width - 1) as f64 / 2.0;
        let hy = (height - 1) as f64 / 2.0;
        let mut g = [0.0; 6];
        for y in 0..height {
            let yn = y as f64 / hy - 1.0;
            for x in 0..width {
                let xn = x as f64 / hx - 1.0;
                let i = y * width + x;
                let gu = field_grad.u()[i] * hx;
                let gv = field_grad.v()[i] * hy;
                g[0] += gu * xn;
                g[1] += gu * yn;
                g[2] += gu;
                g[3] += gv * xn;
                g[4] += gv * yn;
                g[5] += gv;
            }
        }
        g
    }

    /// Mean pixel distance between the images of the grid under two transforms.
    pub fn mean_endpoint_error(&self, other: &Self, height: usize, width: usize) -> Result<f64> {
        let a = self.to_field(height, width)?;
        let b = other.to_field(height, width)?;
        let total: f64 = a
            .u()
            .iter()
            .zip(a.v())
            .zip(b.u().iter().zip(b.v()))
            .map(|((au, av), (bu, bv))| ((au - bu).powi(2) + (av - bv).powi(2)).sqrt())
            .sum();
        Ok(total / a.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact_zero_field() {
        let f = AffineParams::identity().to_field(7, 5).unwrap();
        assert!(f.u().iter().chain(f.v()).all(|&d| d == 0.0));
    }

    #[test]
    fn translation_by_one_pixel() {
        let mut a = AffineParams::identity();
        a.theta[2] = 2.0 / 4.0;
        let f = a.to_field(5, 5).unwrap();
        for (&u, &v) in f.u().iter().zip(f.v()) {
            assert!((u - 1.0).abs() < 1e-12);
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn x_flip_offsets() {
        let mut a = AffineParams::identity();
        a.theta[0] = -1.0;
        let f = a.to_field(5, 5).unwrap();
        for y in 0..5 {
            assert_eq!(f.u_at(y, 0), 4.0);
            assert_eq!(f.u_at(y, 2), 0.0);
            assert_eq!(f.u_at(y, 4), -4.0);
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        let a = AffineParams::from_similarity(0.1, 1.05, 3.0, -2.0, 40, 60);
        let inv = a.inverse().unwrap();
        for &(x, y) in &[(0.3, -0.2), (-1.0, 1.0), (0.0, 0.0)] {
            let (x1, y1) = a.apply(x, y);
            let (x2, y2) = inv.apply(x1, y1);
            assert!((x2 - x).abs() < 1e-14 && (y2 - y).abs() < 1e-14);
        }
        assert!(AffineParams {
            theta: [1.0, 2.0, 0.0, 2.0, 4.0, 0.0]
        }
        .inverse()
        .is_none());
    }

    #[test]
    fn similarity_rotates_in_pixel_space() {
        // 90 degrees about the center of a non-square grid keeps pixel distances.
        let a = AffineParams::from_similarity(std::f64::consts::FRAC_PI_2, 1.0, 0.0, 0.0, 11, 21);
        let f = a.to_field(11, 21).unwrap();
        // pixel (row 5, col 15) is 5 px right of center (5, 10); rotated it lands 5 px below.
        let i = 5 * 21 + 15;
        assert!((f.u()[i] - (-5.0)).abs() < 1e-12);
        assert!((f.v()[i] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        // L(theta) = sum_p w_u(p) u(p) + w_v(p) v(p) is linear in theta.
        let (h, w) = (6, 9);
        let wu: Vec<f64> = (0..h * w).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let wv: Vec<f64> = (0..h * w).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let gfield = DisplacementField::new(h, w, wu.clone(), wv.clone()).unwrap();
        let g = AffineParams::grad_from_field(&gfield);
        let loss = |a: &AffineParams| {
            let f = a.to_field(h, w).unwrap();
            f.u().iter().zip(&wu).map(|(a, b)| a * b).sum::<f64>()
                + f.v().iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>()
        };
        let base = AffineParams::from_similarity(0.05, 1.0, 1.0, 0.5, h, w);
        for (k, &gk) in g.iter().enumerate() {
            let mut p = base;
            let mut m = base;
            p.theta[k] += 1e-5;
            m.theta[k] -= 1e-5;
            let fd = (loss(&p) - loss(&m)) / 2e-5;
            assert!((fd - gk).abs() <= 1e-6 * gk.abs().max(1.0), "k={k} fd={fd} g={gk}");
        }
    }
}
