use mcreg::losses::{ConsistencyMetric, InverseGradient, LossOptions, LossWeights};
use mcreg::optim::gradcheck;

fn weights(l: [f64; 4]) -> LossWeights {
    LossWeights::new(l[0], l[1], l[2], l[3], 0.1).unwrap()
}

fn worst(l: [f64; 4], size: usize, opts: &LossOptions) -> f64 {
    (0..3)
        .map(|seed| gradcheck(size, &weights(l), opts, seed).unwrap().max_rel_error)
        .fold(0.0, f64::max)
}

#[test]
fn each_term_matches_finite_differences() {
    let opts = LossOptions::default();
    assert!(worst([0.0, 1.0, 0.0, 0.0], 8, &opts) < 1e-3);
    assert!(worst([1.0, 0.0, 0.0, 0.0], 12, &opts) < 1e-8);
    assert!(worst([0.0, 0.0, 1.0, 0.0], 12, &opts) < 1e-3);
    assert!(worst([0.0, 0.0, 0.0, 1.0], 12, &opts) < 1e-3);
}

#[test]
fn default_weights_match_finite_differences() {
    assert!(worst([1.0, 4.0, 100.0, 100.0], 12, &LossOptions::default()) < 1e-3);
}

#[test]
fn ncc_consistency_matches_finite_differences() {
    let opts = LossOptions {
        consistency: ConsistencyMetric::Ncc,
        ..LossOptions::default()
    };
    assert!(worst([0.0, 0.0, 0.0, 1.0], 10, &opts) < 1e-3);
}

#[test]
fn frozen_inverse_drops_a_gradient_path() {
    let frozen = LossOptions {
        inverse_gradient: InverseGradient::Frozen,
        ..LossOptions::default()
    };
    assert!(worst([0.0, 0.0, 0.0, 1.0], 12, &frozen) > 1e-2);
}

#[test]
fn rejects_out_of_range_sizes() {
    let opts = LossOptions::default();
    assert!(gradcheck(2, &weights([1.0; 4]), &opts, 0).is_err());
    assert!(gradcheck(17, &weights([1.0; 4]), &opts, 0).is_err());
}
