use crate::error::Result;
use crate::image::Image2D;

/// Smallest side a pyramid level may have.
pub const MIN_LEVEL_SIDE: usize = 8;

/// Downsampled copies of `img`, one per factor in `levels` (powers of two).
/// Levels that would fall below [`MIN_LEVEL_SIDE`] are dropped; factor 1 is
/// always kept.
pub fn build_pyramid(img: &Image2D, levels: &[usize]) -> Result<Vec<(usize, Image2D)>> {
    let mut out = Vec::with_capacity(levels.len());
    for &f in levels {
        let mut cur = img.clone();
        let mut k = 1;
        let mut ok = true;
        while k < f {
            if cur.height().div_ceil(2) < MIN_LEVEL_SIDE || cur.width().div_ceil(2) < MIN_LEVEL_SIDE {
                ok = false;
                break;
            }
            cur = cur.downsample_half()?;
            k *= 2;
        }
        if ok {
            out.push((f, cur));
        } else {
            log::debug!(
                "pyramid: skipping factor {f} for {}x{} input",
                img.height(),
                img.width()
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes() {
        let img = Image2D::zeros(64, 50).unwrap();
        let p = build_pyramid(&img, &[4, 2, 1]).unwrap();
        let dims: Vec<_> = p.iter().map(|(f, i)| (*f, i.dims())).collect();
        assert_eq!(dims, vec![(4, (16, 13)), (2, (32, 25)), (1, (64, 50))]);
    }

    #[test]
    fn small_inputs_drop_coarse_levels() {
        let img = Image2D::zeros(12, 12).unwrap();
        let p = build_pyramid(&img, &[4, 2, 1]).unwrap();
        assert_eq!(p.iter().map(|(f, _)| *f).collect::<Vec<_>>(), vec![1]);
    }
}
