use super::DisplacementField;
use crate::error::Result;
use crate::image::check_dims;

/// Jacobian determinant diagnostics of `p -> p + phi(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Folding {
    /// Interior pixels with a negative determinant.
    pub count: usize,
    /// Determinants on the `(H-2) x (W-2)` interior, row-major.
    pub determinant: Vec<f64>,
    pub interior_height: usize,
    pub interior_width: usize,
}

impl Folding {
    pub fn min_determinant(&self) -> f64 {
        self.determinant.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Counts interior pixels where the central-difference Jacobian
/// determinant is negative. Edge pixels are excluded.
pub fn folding_count(phi: &DisplacementField) -> Result<Folding> {
    let (h, w) = phi.dims();
    check_dims("field for Jacobian", h, w, 3)?;
    let (u, v) = (phi.u(), phi.v());
    let (ih, iw) = (h - 2, w - 2);
    let mut det = Vec::with_capacity(ih * iw);
    let mut count = 0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let ux = (u[i + 1] - u[i - 1]) / 2.0;
            let uy = (u[i + w] - u[i - w]) / 2.0;
            let vx = (v[i + 1] - v[i - 1]) / 2.0;
            let vy = (v[i + w] - v[i - w]) / 2.0;
            let j = (1.0 + ux) * (1.0 + vy) - uy * vx;
            if j < 0.0 {
                count += 1;
            }
            det.push(j);
        }
    }
    Ok(Folding {
        count,
        determinant: det,
        interior_height: ih,
        interior_width: iw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_determinant() {
        let f = folding_count(&DisplacementField::zeros(5, 6).unwrap()).unwrap();
        assert_eq!(f.count, 0);
        assert_eq!(f.determinant.len(), 12);
        assert!(f.determinant.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn reflection_folds_everywhere() {
        let phi = DisplacementField::from_fn(6, 7, |_, x| (-2.0 * x as f64, 0.0)).unwrap();
        let f = folding_count(&phi).unwrap();
        assert_eq!(f.count, 4 * 5);
        assert!(f.determinant.iter().all(|&d| d == -1.0));
    }

    #[test]
    fn translation_invariant() {
        let phi =
            DisplacementField::from_fn(8, 8, |y, x| ((x as f64 * 0.7).sin() * 1.5, (y as f64 * 0.9).cos())).unwrap();
        let shifted = phi.add(&DisplacementField::constant(8, 8, 3.0, -2.0).unwrap()).unwrap();
        assert_eq!(
            folding_count(&phi).unwrap().count,
            folding_count(&shifted).unwrap().count
        );
    }

    #[test]
    fn too_small() {
        assert!(folding_count(&DisplacementField::zeros(2, 5).unwrap()).is_err());
    }
}
