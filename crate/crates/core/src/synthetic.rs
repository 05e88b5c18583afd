//! Multi-contrast phantom pairs with known ground-truth transforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Mask2D};
use crate::transform::{compose, invert_field_iterative, warp, AffineParams, BorderMode, DisplacementField};

/// Monotone piecewise-linear intensity map on `[0, 1]` with `map(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastMap {
    /// `(input, output)` knots with strictly increasing inputs from 0 to 1.
    pub knots: Vec<(f64, f64)>,
}

impl Default for ContrastMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl ContrastMap {
    pub fn identity() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    /// `0 -> 0`, `knee_in -> knee_out`, `1 -> 1`.
    pub fn two_segment(knee_in: f64, knee_out: f64) -> Result<Self> {
        let m = Self {
            knots: vec![(0.0, 0.0), (knee_in, knee_out), (1.0, 1.0)],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("contrast map: {msg} ({k:?})")));
        if k.len() < 2 {
            return bad("needs at least two knots");
        }
        if k.iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite() || !(0.0..=1.0).contains(y))
        {
            return bad("outputs must lie in [0, 1]");
        }
        if k[0] != (0.0, 0.0) {
            return bad("must start at (0, 0)");
        }
        if k[k.len() - 1].0 != 1.0 {
            return bad("last input must be 1");
        }
        if k.windows(2).any(|p| p[1].0 <= p[0].0) {
            return bad("inputs must be strictly increasing");
        }
        if k.windows(2).any(|p| p[1].1 < p[0].1) {
            return bad("outputs must be non-decreasing");
        }
        Ok(())
    }

    /// Evaluates the map; inputs are clamped to `[0, 1]`.
    pub fn apply(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let seg = self
            .knots
            .windows(2)
            .find(|p| v <= p[1].0)
            .unwrap_or(&self.knots[self.knots.len() - 2..]);
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }
}

/// Pixelwise intensity remap.
pub fn contrast_remap(img: &Image2D, map: &ContrastMap) -> Result<Image2D> {
    map.validate()?;
    img.map(|v| map.apply(v))
}

/// Phantom generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// Side length in pixels.
    pub size: usize,
    pub n_blobs: usize,
    pub lesion_radius: f64,
    /// Standard deviation of Gaussian noise added inside the head.
    pub noise_sigma: f64,
    pub contrast_map: ContrastMap,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_blobs: 6,
            lesion_radius: 6.0,
            noise_sigma: 0.0,
            contrast_map: ContrastMap::identity(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::InvalidParameter(format!(
                "phantom size must be >= 32, got {}",
                self.size
            )));
        }
        if !(0.0..=0.1).contains(&self.noise_sigma) {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must lie in [0, 0.1], got {}",
                self.noise_sigma
            )));
        }
        // The lesion must fit inside the brain region of the smallest head.
        let max_r = 0.25 * self.size as f64;
        if !(self.lesion_radius >= 1.0 && self.lesion_radius <= max_r) {
            return Err(Error::InvalidParameter(format!(
                "lesion_radius must lie in [1, {max_r}], got {}",
                self.lesion_radius
            )));
        }
        self.contrast_map.validate()
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Skull-like phantom and its lesion mask.
///
/// The head is an ellipse with a bright rim; outside it the image is exactly
/// 0. Inside are smooth tissue blobs and a bright lesion disc whose mask is
/// the set of pixel centers within `lesion_radius` of its center. Noise, if
/// any, is added inside the head only. `spec.contrast_map` is
/// applied last.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Image2D, Mask2D)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.size;
    let s = n as f64;
    let c = (s - 1.0) / 2.0;
    let cx = c + rng.random_range(-0.03..0.03) * s;
    let cy = c + rng.random_range(-0.03..0.03) * s;
    let a = rng.random_range(0.38..0.44) * s;
    let b = rng.random_range(0.34..0.40) * s;
    let tilt: f64 = rng.random_range(-0.3..0.3);
    let (st, ct) = tilt.sin_cos();
    let radial = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        let (rx, ry) = (ct * dx + st * dy, -st * dx + ct * dy);
        ((rx / a).powi(2) + (ry / b).powi(2)).sqrt()
    };

    let blobs: Vec<(f64, f64, f64, f64)> = (0..spec.n_blobs)
        .map(|_| {
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(0.0..0.6);
            (
                cx + r * a * ang.cos(),
                cy + r * b * ang.sin(),
                rng.random_range(0.06..0.14) * s,
                rng.random_range(-0.25..0.3),
            )
        })
        .collect();

    // Lesion inside the inner 60% of the head.
    let ang = rng.random_range(0.0..std::f64::consts::TAU);
    let reach = (0.6 - spec.lesion_radius / b).max(0.0);
    let r = rng.random_range(0.0..=reach);
    let (lx, ly) = (cx + r * a * ang.cos(), cy + r * b * ang.sin());
    let lr = spec.lesion_radius;

    let mut img = Vec::with_capacity(n * n);
    let mut mask = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f64, y as f64);
            let d = radial(xf, yf);
            let tissue: f64 = blobs
                .iter()
                .map(|&(bx, by, bs, amp)| amp * (-((xf - bx).powi(2) + (yf - by).powi(2)) / (2.0 * bs * bs)).exp())
                .sum::<f64>();
            let brain = (0.4 + tissue).clamp(0.15, 0.75);
            let skull = 0.8;
            // brain -> skull across d in [0.76, 0.86], skull -> 0 across [0.9, 1.0]
            let mut v = brain + (skull - brain) * smoothstep(0.76, 0.86, d);
            v *= 1.0 - smoothstep(0.9, 1.0, d);
            let ld = ((xf - lx).powi(2) + (yf - ly).powi(2)).sqrt();
            let t = 1.0 - smoothstep(lr, lr + 2.5, ld);
            v += (0.95 - v) * t;
            img.push(if d >= 1.0 { 0.0 } else { v });
            mask.push(ld <= lr);
        }
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for (i, v) in img.iter_mut().enumerate() {
            let (y, x) = (i / n, i % n);
            let e = noise.sample(&mut rng);
            if radial(x as f64, y as f64) < 1.0 {
                *v = (*v + e).clamp(0.0, 1.0);
            }
        }
    }

    let img = Image2D::new(n, n, img)?;
    let img = contrast_remap(&img, &spec.contrast_map)?;
    Ok((img, Mask2D::new(n, n, mask)?))
}

fn gaussian_blur_1d(data: &mut [f64], h: usize, w: usize, sigma: f64, horizontal: bool) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let src = data.to_vec();
    let (len, count) = if horizontal { (w, h) } else { (h, w) };
    for line in 0..count {
        for i in 0..len {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let j = (i as isize + k as isize - radius).clamp(0, len as isize - 1) as usize;
                let idx = if horizontal { line * w + j } else { j * w + line };
                acc += kv * src[idx];
            }
            let idx = if horizontal { line * w + i } else { i * w + line };
            data[idx] = acc / norm;
        }
    }
}

/// White noise per component, Gaussian-smoothed with `smoothness_sigma`
/// pixels, rescaled so the largest displacement magnitude is `max_disp`.
pub fn random_smooth_field(
    height: usize,
    width: usize,
    max_disp: f64,
    smoothness_sigma: f64,
    seed: u64,
) -> Result<DisplacementField> {
    if !(max_disp >= 0.0 && max_disp.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "max_disp must be >= 0, got {max_disp}"
        )));
    }
    if !(smoothness_sigma > 0.0 && smoothness_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothness_sigma must be > 0, got {smoothness_sigma}"
        )));
    }
    if max_disp == 0.0 {
        return DisplacementField::zeros(height, width);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = height * width;
    let mut comps = [vec![0.0; n], vec![0.0; n]];
    for comp in comps.iter_mut() {
        for v in comp.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        gaussian_blur_1d(comp, height, width, smoothness_sigma, true);
        gaussian_blur_1d(comp, height, width, smoothness_sigma, false);
    }
    let [u, v] = comps;
    let field = DisplacementField::new(height, width, u, v)?;
    let peak = field.max_magnitude();
    if peak == 0.0 {
        return DisplacementField::zeros(height, width);
    }
    Ok(field.scaled(max_disp / peak))
}

/// A fixed/moving pair and the transforms that relate them.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub fixed: Image2D,
    pub fixed_mask: Mask2D,
    pub moving: Image2D,
    pub moving_mask: Mask2D,
    pub affine_gt: AffineParams,
    pub field_gt: DisplacementField,
    /// Single field equivalent to applying `affine_gt` then `field_gt` as the
    /// registration pipeline does.
    pub forward_gt: DisplacementField,
}

/// Warps a mask through `field` with bilinear weights and keeps values
/// strictly above 0.5.
fn warp_mask_field(mask: &Mask2D, field: &DisplacementField) -> Result<Mask2D> {
    let warped = warp(&mask.to_image(), field, BorderMode::Zero)?;
    Ok(Mask2D::from_image_threshold(&warped, 0.5))
}

/// Builds a pair whose correct registration is `affine_gt` followed by
/// `field_gt`.
///
/// The fixed image is the phantom of `spec`. The moving image is the phantom
/// warped by the inverse of that composite transform and then passed through
/// `moving_map`, so that warping the moving image by `affine_gt` and then by
/// `field_gt` restores the fixed geometry.
pub fn make_pair(
    spec: &PhantomSpec,
    moving_map: &ContrastMap,
    affine_gt: &AffineParams,
    field_gt: &DisplacementField,
) -> Result<SyntheticPair> {
    let (fixed, fixed_mask) = make_phantom(spec)?;
    let (h, w) = fixed.dims();
    if field_gt.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: (h, w),
            got: field_gt.dims(),
        });
    }
    let affine_field = affine_gt.to_field(h, w)?;
    let inverse_affine = affine_gt
        .inverse()
        .ok_or_else(|| Error::InvalidParameter("ground-truth affine is singular".into()))?
        .to_field(h, w)?;
    let field_inverse = invert_field_iterative(field_gt, 50);
    let backward = compose(&field_inverse, &inverse_affine)?;
    let forward_gt = compose(&affine_field, field_gt)?;

    let moving = contrast_remap(&warp(&fixed, &backward, BorderMode::Zero)?, moving_map)?;
    let moving_mask = warp_mask_field(&fixed_mask, &backward)?;
    Ok(SyntheticPair {
        fixed,
        fixed_mask,
        moving,
        moving_mask,
        affine_gt: *affine_gt,
        field_gt: field_gt.clone(),
        forward_gt,
    })
}

/// Settings for a suite of random pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub pairs: usize,
    pub size: usize,
    pub seed: u64,
    pub n_blobs: usize,
    pub lesion_radius: f64,
    pub noise_sigma: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_disp: f64,
    pub smoothness_sigma: f64,
    /// Range of the remap knee output for a knee input of 0.5.
    pub remap_knee_min: f64,
    pub remap_knee_max: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            pairs: 20,
            size: 64,
            seed: 7,
            n_blobs: 6,
            lesion_radius: 6.0,
            noise_sigma: 0.01,
            max_rotation_deg: 5.0,
            max_translation: 3.0,
            scale_min: 0.95,
            scale_max: 1.05,
            max_disp: 4.0,
            smoothness_sigma: 8.0,
            remap_knee_min: 0.25,
            remap_knee_max: 0.8,
        }
    }
}

impl SuiteConfig {
    /// Affine-only misalignment: rotation up to 10 degrees, translation up
    /// to 5 px, scale in `[0.95, 1.1]`, no dense field.
    pub fn affine_only() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation: 5.0,
            scale_min: 0.95,
            scale_max: 1.1,
            max_disp: 0.0,
            ..Self::default()
        }
    }
}

/// One member of a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteMember {
    pub index: usize,
    pub phantom: PhantomSpec,
    pub moving_map: ContrastMap,
    pub pair: SyntheticPair,
}

fn suite_member(cfg: &SuiteConfig, index: usize) -> Result<SuiteMember> {
    let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phantom = PhantomSpec {
        size: cfg.size,
        n_blobs: cfg.n_blobs,
        lesion_radius: cfg.lesion_radius,
        noise_sigma: cfg.noise_sigma,
        contrast_map: ContrastMap::identity(),
        seed: rng.random(),
    };
    let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let angle = sym(&mut rng, cfg.max_rotation_deg).to_radians();
    let scale = if cfg.scale_max > cfg.scale_min {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let (tx, ty) = loop {
        let (tx, ty) = (sym(&mut rng, cfg.max_translation), sym(&mut rng, cfg.max_translation));
        if tx.hypot(ty) <= cfg.max_translation {
            break (tx, ty);
        }
    };
    let affine = AffineParams::from_similarity(angle, scale, tx, ty, cfg.size, cfg.size);
    let field = random_smooth_field(cfg.size, cfg.size, cfg.max_disp, cfg.smoothness_sigma, rng.random())?;
    let knee = if cfg.remap_knee_max > cfg.remap_knee_min {
        rng.random_range(cfg.remap_knee_min..=cfg.remap_knee_max)
    } else {
        cfg.remap_knee_min
    };
    let moving_map = ContrastMap::two_segment(0.5, knee)?;
    let pair = make_pair(&phantom, &moving_map, &affine, &field)?;
    Ok(SuiteMember {
        index,
        phantom,
        moving_map,
        pair,
    })
}

/// Generates `cfg.pairs` pairs in parallel; each pair depends only on the
/// suite seed and its index.
pub fn make_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteMember>> {
    if cfg.scale_min <= 0.0 || cfg.scale_max < cfg.scale_min {
        return Err(Error::InvalidParameter(format!(
            "scale range [{}, {}] is invalid",
            cfg.scale_min, cfg.scale_max
        )));
    }
    (0..cfg.pairs).into_par_iter().map(|i| suite_member(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::folding_count;

    #[test]
    fn contrast_map_examples() {
        let img = Image2D::from_fn(4, 4, |y, x| (y * 4 + x) as f64 / 15.0).unwrap();
        assert_eq!(contrast_remap(&img, &ContrastMap::identity()).unwrap(), img);
        let inv = ContrastMap {
            knots: vec![(0.0, 1.0), (1.0, 0.0)],
        };
        assert!(contrast_remap(&img, &inv).is_err());
        let m = ContrastMap::two_segment(0.5, 0.8).unwrap();
        assert!((m.apply(0.25) - 0.4).abs() < 1e-15);
        assert_eq!(m.apply(0.0), 0.0);
        assert!((m.apply(0.75) - 0.9).abs() < 1e-15);
        assert_eq!(m.apply(1.0), 1.0);
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec {
            noise_sigma: 0.05,
            seed: 11,
            ..PhantomSpec::default()
        };
        assert_eq!(make_phantom(&spec).unwrap(), make_phantom(&spec).unwrap());
    }

    #[test]
    fn phantom_background_and_lesion() {
        for seed in 0..10 {
            let spec = PhantomSpec {
                size: 96,
                lesion_radius: 8.0,
                seed,
                ..PhantomSpec::default()
            };
            let (img, mask) = make_phantom(&spec).unwrap();
            // Border ring is outside every head.
            for i in 0..96 {
                for (y, x) in [(0, i), (95, i), (i, 0), (i, 95)] {
                    assert_eq!(img.get(y, x), 0.0);
                }
            }
            let area = std::f64::consts::PI * 64.0;
            assert!((mask.count() as f64 - area).abs() < 0.1 * area, "area {}", mask.count());
            for (v, m) in img.data().iter().zip(mask.data()) {
                if *m {
                    assert!(*v > 0.9);
                }
            }
        }
    }

    #[test]
    fn phantom_spec_validation() {
        for spec in [
            PhantomSpec {
                size: 31,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                noise_sigma: 0.2,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                lesion_radius: 20.0,
                ..PhantomSpec::default()
            },
        ] {
            assert!(make_phantom(&spec).is_err());
        }
    }

    #[test]
    fn smooth_field_examples() {
        let z = random_smooth_field(32, 32, 0.0, 4.0, 1).unwrap();
        assert_eq!(z, DisplacementField::zeros(32, 32).unwrap());
        let f = random_smooth_field(48, 40, 0.3, 4.0, 1).unwrap();
        assert!((f.max_magnitude() - 0.3).abs() < 1e-12);
        assert_eq!(folding_count(&f).unwrap().count, 0);
        assert_eq!(f, random_smooth_field(48, 40, 0.3, 4.0, 1).unwrap());
        assert_ne!(f, random_smooth_field(48, 40, 0.3, 4.0, 2).unwrap());
    }

    #[test]
    fn identity_pair() {
        let spec = PhantomSpec::default();
        let p = make_pair(
            &spec,
            &ContrastMap::identity(),
            &AffineParams::identity(),
            &DisplacementField::zeros(64, 64).unwrap(),
        )
        .unwrap();
        assert_eq!(p.moving, p.fixed);
        assert_eq!(p.moving_mask, p.fixed_mask);
    }

    #[test]
    fn ground_truth_round_trip() {
        for seed in 0..6 {
            let spec = PhantomSpec {
                seed,
                ..PhantomSpec::default()
            };
            let affine = AffineParams::from_similarity(4f64.to_radians(), 1.03, 2.0, -1.5, 64, 64);
            let field = random_smooth_field(64, 64, 3.0, 8.0, seed + 100).unwrap();
            let p = make_pair(&spec, &ContrastMap::identity(), &affine, &field).unwrap();
            let restored = warp(&p.moving, &p.forward_gt, BorderMode::Zero).unwrap();
            let diffs: Vec<f64> = p
                .fixed
                .data()
                .iter()
                .zip(restored.data())
                .filter(|(f, _)| **f > 0.0)
                .map(|(f, r)| (f - r).abs())
                .collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            assert!(mean < 0.02, "seed {seed}: mean foreground error {mean}");
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let cfg = SuiteConfig {
            pairs: 3,
            ..SuiteConfig::default()
        };
        let a = make_suite(&cfg).unwrap();
        let b = make_suite(&cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].pair.fixed, a[1].pair.fixed);
    }
}
