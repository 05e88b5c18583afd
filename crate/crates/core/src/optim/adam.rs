use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
///
/// A non-finite gradient leaves both `params` and `state` untouched and
/// returns an error.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::InvalidParameter(format!(
            "adam: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        log::warn!("adam: non-finite gradient at index {i} (step {})", state.t + 1);
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hp.step_size * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HP: AdamParams = AdamParams {
        step_size: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, &HP).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_is_step_size_times_sign() {
        let g = [0.3, -5.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, &HP).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m_hat = g, v_hat = g^2 after bias correction.
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15, "{pi} vs {expected}");
        }
    }

    #[test]
    fn repeated_gradient_does_not_grow_the_step() {
        let g = [0.7];
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &g, &mut s, &HP).unwrap();
        let first = p[0].abs();
        let before = p[0];
        adam_step(&mut p, &g, &mut s, &HP).unwrap();
        let second = (p[0] - before).abs();
        // With bias correction both moments are exactly g and g^2 again.
        assert!(second <= first * (1.0 + 1e-12));
        assert!((second - first).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.1, f64::NAN], &mut s, &HP).is_err());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s, AdamState::new(2));
    }
}
