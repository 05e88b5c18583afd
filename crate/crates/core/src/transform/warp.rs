//! Backward bilinear warping and its two adjoints.
//!
//! `warp(img, phi)(p)` samples `img` at `p + phi(p)` with the tent weights
//! `prod_d (1 - |p_d - q_d|)` over the (up to) four surrounding grid points.
//! [`warp_grad`] differentiates the output with respect to the sample
//! coordinates and [`warp_adjoint`] with respect to the image values.

use serde::{Deserialize, Serialize};

use super::DisplacementField;
use crate::error::Result;
use crate::image::{check_same, Image2D};

/// What the sampler sees outside the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderMode {
    /// Out-of-grid neighbors contribute zero.
    #[default]
    Zero,
    /// Coordinates are clamped onto the grid before interpolation.
    Clamp,
}

/// Continuous sampling location (column `x`, row `y`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
}

impl SamplePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Neighbor indices with interpolation weights and their coordinate
/// derivatives. Absent neighbors (zero border) carry `usize::MAX`.
struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
    dx: [f64; 4],
    dy: [f64; 4],
}

const ABSENT: usize = usize::MAX;

#[inline]
fn stencil(x: f64, y: f64, height: usize, width: usize, border: BorderMode) -> Stencil {
    let (xs, ys, ax, ay) = match border {
        BorderMode::Zero => (x, y, 1.0, 1.0),
        BorderMode::Clamp => {
            let xmax = (width - 1) as f64;
            let ymax = (height - 1) as f64;
            let ax = if (0.0..=xmax).contains(&x) { 1.0 } else { 0.0 };
            let ay = if (0.0..=ymax).contains(&y) { 1.0 } else { 0.0 };
            (x.clamp(0.0, xmax), y.clamp(0.0, ymax), ax, ay)
        }
    };
    let x0f = xs.floor();
    let y0f = ys.floor();
    let fx = xs - x0f;
    let fy = ys - y0f;
    let x0 = x0f as i64;
    let y0 = y0f as i64;
    let (w, h) = (width as i64, height as i64);
    let index = |xi: i64, yi: i64| -> usize {
        match border {
            BorderMode::Zero => {
                if xi < 0 || yi < 0 || xi >= w || yi >= h {
                    ABSENT
                } else {
                    (yi * w + xi) as usize
                }
            }
            BorderMode::Clamp => (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)) as usize,
        }
    };
    Stencil {
        idx: [
            index(x0, y0),
            index(x0 + 1, y0),
            index(x0, y0 + 1),
            index(x0 + 1, y0 + 1),
        ],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        dx: [-(1.0 - fy) * ax, (1.0 - fy) * ax, -fy * ax, fy * ax],
        dy: [-(1.0 - fx) * ay, -fx * ay, (1.0 - fx) * ay, fx * ay],
    }
}

#[inline]
fn sample_slice(data: &[f64], height: usize, width: usize, x: f64, y: f64, border: BorderMode) -> f64 {
    let s = stencil(x, y, height, width, border);
    let mut acc = 0.0;
    for k in 0..4 {
        if s.idx[k] != ABSENT {
            acc += s.w[k] * data[s.idx[k]];
        }
    }
    acc
}

/// Interpolated value and its `(d/dx, d/dy)` at a continuous location.
#[inline]
pub(crate) fn sample_slice_grad(
    data: &[f64],
    height: usize,
    width: usize,
    x: f64,
    y: f64,
    border: BorderMode,
) -> (f64, f64, f64) {
    let s = stencil(x, y, height, width, border);
    let (mut val, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for k in 0..4 {
        if s.idx[k] != ABSENT {
            let d = data[s.idx[k]];
            val += s.w[k] * d;
            gx += s.dx[k] * d;
            gy += s.dy[k] * d;
        }
    }
    (val, gx, gy)
}

/// Bilinear value of `img` at a continuous location.
pub fn sample(img: &Image2D, x: f64, y: f64, border: BorderMode) -> f64 {
    sample_slice(img.data(), img.height(), img.width(), x, y, border)
}

pub fn sample_at(img: &Image2D, p: SamplePoint, border: BorderMode) -> f64 {
    sample(img, p.x, p.y, border)
}

/// Sample locations `p + sign * phi(p)` for every pixel, row-major.
pub(crate) fn sample_points(field: &DisplacementField, sign: f64) -> Vec<SamplePoint> {
    let w = field.width();
    field
        .u()
        .iter()
        .zip(field.v())
        .enumerate()
        .map(|(i, (&u, &v))| SamplePoint::new((i % w) as f64 + sign * u, (i / w) as f64 + sign * v))
        .collect()
}

pub(crate) fn warp_slice(
    data: &[f64],
    height: usize,
    width: usize,
    pts: &[SamplePoint],
    border: BorderMode,
) -> Vec<f64> {
    pts.iter()
        .map(|p| sample_slice(data, height, width, p.x, p.y, border))
        .collect()
}

/// `upstream(p) * d(sample)/d(point)` for every pixel.
pub(crate) fn warp_grad_slice(
    data: &[f64],
    height: usize,
    width: usize,
    pts: &[SamplePoint],
    upstream: &[f64],
    border: BorderMode,
) -> (Vec<f64>, Vec<f64>) {
    pts.iter()
        .zip(upstream)
        .map(|(p, &g)| {
            if g == 0.0 {
                return (0.0, 0.0);
            }
            let (_, gx, gy) = sample_slice_grad(data, height, width, p.x, p.y, border);
            (g * gx, g * gy)
        })
        .unzip()
}

/// Transpose of the sampling operator: scatters `upstream` back onto the grid.
pub(crate) fn warp_adjoint_slice(
    height: usize,
    width: usize,
    pts: &[SamplePoint],
    upstream: &[f64],
    border: BorderMode,
) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for (p, &g) in pts.iter().zip(upstream) {
        if g == 0.0 {
            continue;
        }
        let s = stencil(p.x, p.y, height, width, border);
        for k in 0..4 {
            if s.idx[k] != ABSENT {
                out[s.idx[k]] += g * s.w[k];
            }
        }
    }
    out
}

/// Backward warp: `out(p) = img(p + phi(p))`.
pub fn warp(img: &Image2D, field: &DisplacementField, border: BorderMode) -> Result<Image2D> {
    check_same(img.dims(), field.dims())?;
    let pts = sample_points(field, 1.0);
    Ok(Image2D::from_raw(
        img.height(),
        img.width(),
        warp_slice(img.data(), img.height(), img.width(), &pts, border),
    ))
}

/// Gradient of `sum_p upstream(p) * warp(img, phi)(p)` with respect to `phi`.
///
/// At exactly integer sample coordinates the right-sided kernel branch is used.
pub fn warp_grad(
    img: &Image2D,
    field: &DisplacementField,
    upstream: &[f64],
    border: BorderMode,
) -> Result<DisplacementField> {
    check_same(img.dims(), field.dims())?;
    if upstream.len() != img.len() {
        return Err(crate::Error::BadLength {
            height: img.height(),
            width: img.width(),
            got: upstream.len(),
        });
    }
    let pts = sample_points(field, 1.0);
    let (gu, gv) = warp_grad_slice(img.data(), img.height(), img.width(), &pts, upstream, border);
    Ok(DisplacementField::from_raw(img.height(), img.width(), gu, gv))
}

/// Gradient of `sum_p upstream(p) * warp(img, phi)(p)` with respect to `img`.
pub fn warp_adjoint(field: &DisplacementField, upstream: &[f64], border: BorderMode) -> Result<Image2D> {
    if upstream.len() != field.len() {
        return Err(crate::Error::BadLength {
            height: field.height(),
            width: field.width(),
            got: upstream.len(),
        });
    }
    let pts = sample_points(field, 1.0);
    Ok(Image2D::from_raw(
        field.height(),
        field.width(),
        warp_adjoint_slice(field.height(), field.width(), &pts, upstream, border),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows3(vals: [f64; 3]) -> Image2D {
        Image2D::from_fn(2, 3, |_, x| vals[x]).unwrap()
    }

    #[test]
    fn zero_field_is_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image2D::from_fn(5, 7, |_, _| rng.random::<f64>()).unwrap();
        let z = DisplacementField::zeros(5, 7).unwrap();
        assert_eq!(warp(&img, &z, BorderMode::Zero).unwrap(), img);
        assert_eq!(warp(&img, &z, BorderMode::Clamp).unwrap(), img);
    }

    #[test]
    fn integer_shift_with_zero_fill() {
        let img = rows3([0.2, 0.5, 0.9]);
        let f = DisplacementField::constant(2, 3, 1.0, 0.0).unwrap();
        let out = warp(&img, &f, BorderMode::Zero).unwrap();
        for y in 0..2 {
            assert_eq!([out.get(y, 0), out.get(y, 1), out.get(y, 2)], [0.5, 0.9, 0.0]);
        }
        let clamped = warp(&img, &f, BorderMode::Clamp).unwrap();
        assert_eq!(clamped.get(0, 2), 0.9);
    }

    #[test]
    fn half_pixel_shift() {
        let img = rows3([0.0, 1.0, 0.0]);
        let f = DisplacementField::constant(2, 3, 0.5, 0.0).unwrap();
        let out = warp(&img, &f, BorderMode::Zero).unwrap();
        assert_eq!([out.get(1, 0), out.get(1, 1), out.get(1, 2)], [0.5, 0.5, 0.0]);
    }

    #[test]
    fn grad_zero_upstream_and_flat_image() {
        let img = Image2D::filled(6, 6, 0.4).unwrap();
        let f = DisplacementField::constant(6, 6, 0.3, -0.2).unwrap();
        let up = vec![1.0; 36];
        let g = warp_grad(&img, &f, &up, BorderMode::Zero).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                assert!(g.u_at(y, x).abs() < 1e-12);
                assert!(g.v_at(y, x).abs() < 1e-12);
            }
        }
        let g0 = warp_grad(&img, &f, &[0.0; 36], BorderMode::Zero).unwrap();
        assert!(g0.u().iter().chain(g0.v()).all(|&v| v == 0.0));
    }

    fn random_fractional_field(rng: &mut ChaCha8Rng, h: usize, w: usize, amp: f64) -> DisplacementField {
        // Keep fractional parts in [0.05, 0.95] so no sample sits on a kink.
        let mut draw = || {
            let whole = rng.random_range(-amp..amp).round();
            whole + rng.random_range(0.05..0.95)
        };
        let u = (0..h * w).map(|_| draw()).collect();
        let v = (0..h * w).map(|_| draw()).collect();
        DisplacementField::new(h, w, u, v).unwrap()
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, w) = (4, 4);
        let img = Image2D::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap();
        let field = random_fractional_field(&mut rng, h, w, 1.0);
        let up: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        for border in [BorderMode::Zero, BorderMode::Clamp] {
            let g = warp_grad(&img, &field, &up, border).unwrap();
            let loss = |f: &DisplacementField| -> f64 {
                warp(&img, f, border)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&up)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let step = 1e-5;
            for i in 0..h * w {
                for comp in 0..2 {
                    let mut fp = field.clone();
                    let mut fm = field.clone();
                    fp.component_mut(comp)[i] += step;
                    fm.component_mut(comp)[i] -= step;
                    let fd = (loss(&fp) - loss(&fm)) / (2.0 * step);
                    let an = if comp == 0 { g.u()[i] } else { g.v()[i] };
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / denom < 1e-6,
                        "{border:?} i={i} c={comp}: fd={fd} an={an}"
                    );
                }
            }
        }
    }

    #[test]
    fn adjoint_is_transpose_of_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (5, 6);
        let img = Image2D::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap();
        let field = random_fractional_field(&mut rng, h, w, 2.0);
        let up: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        for border in [BorderMode::Zero, BorderMode::Clamp] {
            let lhs: f64 = warp(&img, &field, border)
                .unwrap()
                .data()
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum();
            let adj = warp_adjoint(&field, &up, border).unwrap();
            let rhs: f64 = adj.data().iter().zip(img.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let img = Image2D::zeros(4, 4).unwrap();
        let f = DisplacementField::zeros(4, 5).unwrap();
        assert!(warp(&img, &f, BorderMode::Zero).is_err());
    }
}
