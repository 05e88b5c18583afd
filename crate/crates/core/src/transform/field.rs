use super::warp::{sample_points, warp_adjoint_slice, warp_grad_slice, warp_slice, BorderMode};
use crate::error::{Error, Result};
use crate::image::{check_dims, check_same, Image2D, MIN_SIDE};

/// Dense per-pixel offsets in pixel units. `u` is horizontal (column) and
/// `v` vertical (row).
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl DisplacementField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dims("field", height, width, MIN_SIDE)?;
        for comp in [&u, &v] {
            if comp.len() != height * width {
                return Err(Error::BadLength {
                    height,
                    width,
                    got: comp.len(),
                });
            }
        }
        if u.iter().chain(&v).any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("displacement field"));
        }
        Ok(Self { height, width, u, v })
    }

    pub(crate) fn from_raw(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Self {
        debug_assert_eq!(u.len(), height * width);
        debug_assert_eq!(v.len(), height * width);
        Self { height, width, u, v }
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, du: f64, dv: f64) -> Result<Self> {
        let n = height * width;
        Self::new(height, width, vec![du; n], vec![dv; n])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Result<Self> {
        let n = height * width;
        let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(height, width, u, v)
    }

    /// Builds a field from two component images.
    pub fn from_components(u: &Image2D, v: &Image2D) -> Result<Self> {
        check_same(u.dims(), v.dims())?;
        Self::new(u.height(), u.width(), u.data().to_vec(), v.data().to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Component 0 is `u`, component 1 is `v`.
    pub fn component(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.u
        } else {
            &self.v
        }
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        if c == 0 {
            &mut self.u
        } else {
            &mut self.v
        }
    }

    pub fn u_at(&self, row: usize, col: usize) -> f64 {
        self.u[row * self.width + col]
    }

    pub fn v_at(&self, row: usize, col: usize) -> f64 {
        self.v[row * self.width + col]
    }

    pub fn u_image(&self) -> Image2D {
        Image2D::from_raw(self.height, self.width, self.u.clone())
    }

    pub fn v_image(&self) -> Image2D {
        Image2D::from_raw(self.height, self.width, self.v.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|d| d.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(
            self.height,
            self.width,
            self.u.iter().map(|d| d * s).collect(),
            self.v.iter().map(|d| d * s).collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(self.dims(), other.dims())?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect(),
        ))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += b;
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            *a += b;
        }
    }

    /// Per-pixel vector lengths.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    /// Mean vector length over pixels at least `margin` away from every edge.
    pub fn mean_magnitude_interior(&self, margin: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let i = y * self.width + x;
                sum += self.u[i].hypot(self.v[i]);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Resamples a field estimated on a grid `ratio` times coarser onto a
    /// `height x width` grid, scaling offsets by `ratio`.
    ///
    /// Pixel centers follow the block-averaging pyramid: fine pixel `y` sits
    /// at coarse coordinate `(y + 0.5) / ratio - 0.5`.
    pub fn upsample(&self, height: usize, width: usize, ratio: f64) -> Result<Self> {
        check_dims("upsample target", height, width, MIN_SIDE)?;
        let n = height * width;
        let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            let cy = (y as f64 + 0.5) / ratio - 0.5;
            for x in 0..width {
                let cx = (x as f64 + 0.5) / ratio - 0.5;
                let pt = [super::SamplePoint::new(cx, cy)];
                u.push(ratio * warp_slice(&self.u, self.height, self.width, &pt, BorderMode::Clamp)[0]);
                v.push(ratio * warp_slice(&self.v, self.height, self.width, &pt, BorderMode::Clamp)[0]);
            }
        }
        Self::new(height, width, u, v)
    }
}

/// Samples both components of `field` at the given points (clamped border).
fn sample_field(field: &DisplacementField, pts: &[super::SamplePoint]) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = field.dims();
    (
        warp_slice(&field.u, h, w, pts, BorderMode::Clamp),
        warp_slice(&field.v, h, w, pts, BorderMode::Clamp),
    )
}

/// Closed-form inverse extrapolation.
///
/// The field is split into its horizontal and vertical offset maps, each map
/// is carried along the field's own motion (sampled at `q - phi(q)`, which is
/// where a pixel pushed forward by `phi` lands under backward sampling), the
/// two carried maps are recombined and the result negated:
///
/// ```text
/// phi_inv(q) = -phi(q - phi(q))
/// ```
///
/// Component maps are sampled with a clamped border so constant fields invert
/// exactly.
pub fn invert_field(phi: &DisplacementField) -> DisplacementField {
    let pts = sample_points(phi, -1.0);
    let (u, v) = sample_field(phi, &pts);
    DisplacementField::from_raw(
        phi.height,
        phi.width,
        u.into_iter().map(|d| -d).collect(),
        v.into_iter().map(|d| -d).collect(),
    )
}

/// Vector-Jacobian product of [`invert_field`]: maps `dL/dphi_inv` to the
/// `dL/dphi` contribution flowing through both the sampled values and the
/// sampling locations.
pub(crate) fn invert_field_vjp(phi: &DisplacementField, upstream: &DisplacementField) -> DisplacementField {
    let (h, w) = phi.dims();
    let pts = sample_points(phi, -1.0);
    let mut out = DisplacementField::from_raw(h, w, vec![0.0; h * w], vec![0.0; h * w]);
    for c in 0..2 {
        let comp = phi.component(c);
        let g = upstream.component(c);
        // phi_inv_c = -S(phi_c, q - phi(q)): value path.
        let adj = warp_adjoint_slice(h, w, &pts, g, BorderMode::Clamp);
        for (o, a) in out.component_mut(c).iter_mut().zip(adj) {
            *o -= a;
        }
        // Location path: the two sign flips cancel.
        let (gx, gy) = warp_grad_slice(comp, h, w, &pts, g, BorderMode::Clamp);
        for (o, a) in out.u.iter_mut().zip(gx) {
            *o += a;
        }
        for (o, a) in out.v.iter_mut().zip(gy) {
            *o += a;
        }
    }
    out
}

/// Fixed-point inverse `psi <- -phi(q + psi(q))`, iterated from zero.
/// Converges for fields whose Jacobian deviates modestly from identity.
pub fn invert_field_iterative(phi: &DisplacementField, iterations: usize) -> DisplacementField {
    let (h, w) = phi.dims();
    let mut psi = DisplacementField::from_raw(h, w, vec![0.0; h * w], vec![0.0; h * w]);
    for _ in 0..iterations {
        let pts = sample_points(&psi, 1.0);
        let (u, v) = sample_field(phi, &pts);
        psi = DisplacementField::from_raw(
            h,
            w,
            u.into_iter().map(|d| -d).collect(),
            v.into_iter().map(|d| -d).collect(),
        );
    }
    psi
}

/// Displacement of the map `p -> T_outer(T_inner(p))`:
/// `result(p) = inner(p) + outer(p + inner(p))`.
///
/// Warping an image by the result matches warping first by `outer` and then
/// warping that output by `inner`, up to one extra interpolation.
pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    check_same(outer.dims(), inner.dims())?;
    let pts = sample_points(inner, 1.0);
    let (u, v) = sample_field(outer, &pts);
    Ok(DisplacementField::from_raw(
        inner.height,
        inner.width,
        u.iter().zip(&inner.u).map(|(a, b)| a + b).collect(),
        v.iter().zip(&inner.v).map(|(a, b)| a + b).collect(),
    ))
}
