//! Grayscale rasters and binary masks.

use crate::error::{Error, Result};

/// Smallest admissible side length for images, masks and fields.
pub const MIN_SIDE: usize = 2;

pub(crate) fn check_dims(what: &'static str, height: usize, width: usize, min: usize) -> Result<()> {
    if height < min || width < min {
        return Err(Error::TooSmall {
            what,
            height,
            width,
            min,
        });
    }
    Ok(())
}

pub(crate) fn check_same(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Row-major grayscale image with `f64` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims("image", height, width, MIN_SIDE)?;
        if data.len() != height * width {
            return Err(Error::BadLength {
                height,
                width,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Internal constructor for buffers produced by this crate's own kernels.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
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
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Min-max rescale into `[0, 1]`.
    ///
    /// A constant image has no spread to rescale; it maps to all zeros and the
    /// outcome is flagged as degenerate.
    pub fn normalize(&self) -> Normalized {
        let (lo, hi) = self.min_max();
        if hi > lo {
            let span = hi - lo;
            let data = self.data.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
            Normalized {
                image: Self::from_raw(self.height, self.width, data),
                degenerate: false,
            }
        } else {
            log::warn!("normalize: constant image ({lo}), returning zeros");
            Normalized {
                image: Self::from_raw(self.height, self.width, vec![0.0; self.data.len()]),
                degenerate: true,
            }
        }
    }

    /// Halves both dimensions (rounding up) by averaging 2x2 blocks.
    /// Blocks cut by an odd edge average only the pixels they contain.
    pub fn downsample_half(&self) -> Result<Self> {
        check_dims("image for downsampling", self.height, self.width, 4)?;
        let oh = self.height.div_ceil(2);
        let ow = self.width.div_ceil(2);
        let mut out = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                let mut n = 0usize;
                for y in (2 * oy)..(2 * oy + 2).min(self.height) {
                    for x in (2 * ox)..(2 * ox + 2).min(self.width) {
                        sum += self.get(y, x);
                        n += 1;
                    }
                }
                out.push(sum / n as f64);
            }
        }
        Ok(Self::from_raw(oh, ow, out))
    }

    /// Bilinear resize with corner pixels mapped onto corner pixels.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        check_dims("resize target", height, width, MIN_SIDE)?;
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let sy = (self.height - 1) as f64 / (height - 1) as f64;
        let sx = (self.width - 1) as f64 / (width - 1) as f64;
        Self::from_fn(height, width, |y, x| {
            crate::transform::warp::sample(self, x as f64 * sx, y as f64 * sy, crate::transform::BorderMode::Clamp)
        })
    }
}

/// Result of [`Image2D::normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub image: Image2D,
    /// Set when the input was constant and could not be rescaled.
    pub degenerate: bool,
}

/// How raw file intensities are brought into `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IntensityMode {
    /// Per-image min-max rescaling after loading.
    #[default]
    MinMax,
    /// Division by the file format's maximum value only.
    Raw,
}

impl std::str::FromStr for IntensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Self::MinMax),
            "raw" => Ok(Self::Raw),
            other => Err(Error::InvalidParameter(format!("intensity mode {other:?}"))),
        }
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask2D {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask2D {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_dims("mask", height, width, MIN_SIDE)?;
        if data.len() != height * width {
            return Err(Error::BadLength {
                height,
                width,
                got: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Mask as a `{0, 1}` intensity image.
    pub fn to_image(&self) -> Image2D {
        Image2D::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    /// Pixels strictly above `threshold` become foreground.
    pub fn from_image_threshold(img: &Image2D, threshold: f64) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| v > threshold).collect(),
        }
    }
}
