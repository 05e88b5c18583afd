use mcreg::eval::{overlap, warp_mask};
use mcreg::losses::total_loss;
use mcreg::optim::{register_affine, register_deformable, register_pipeline, OptimConfig};
use mcreg::synthetic::{make_pair, make_phantom, random_smooth_field, ContrastMap, PhantomSpec};
use mcreg::transform::{invert_field, warp, AffineParams, BorderMode, DisplacementField};

fn phantom(seed: u64) -> mcreg::Image2D {
    make_phantom(&PhantomSpec {
        seed,
        size: 32,
        lesion_radius: 4.0,
        ..PhantomSpec::default()
    })
    .unwrap()
    .0
}

fn quick() -> OptimConfig {
    let mut cfg = OptimConfig::default();
    cfg.set("affine_iters", "60").unwrap();
    cfg.set("field_iters", "60").unwrap();
    cfg
}

#[test]
fn identical_images_stay_at_identity() {
    let img = phantom(1);
    let out = register_affine(&img, &img, &quick()).unwrap();
    for (a, b) in out.params.theta.iter().zip(AffineParams::identity().theta) {
        assert!((a - b).abs() < 1e-2, "{:?}", out.params.theta);
    }
    assert!(out.best_loss <= out.initial_loss);
}

#[test]
fn zero_iterations_return_identity() {
    let fixed = phantom(2);
    let moving = phantom(3);
    let mut cfg = quick();
    cfg.set("affine_iters", "0").unwrap();
    cfg.set("field_iters", "0").unwrap();
    let r = register_pipeline(&fixed, &moving, &cfg).unwrap();
    assert!(r.affine.is_identity());
    assert_eq!(r.m_affine, moving);
    assert!(r.field.u().iter().chain(r.field.v()).all(|&d| d == 0.0));
    assert_eq!(r.m_registered, moving);
}

#[test]
fn returned_losses_never_exceed_the_start() {
    let spec = PhantomSpec {
        seed: 4,
        size: 32,
        lesion_radius: 4.0,
        ..PhantomSpec::default()
    };
    let a = AffineParams::from_similarity(0.05, 1.02, 1.5, -1.0, 32, 32);
    let f = random_smooth_field(32, 32, 1.5, 5.0, 9).unwrap();
    let p = make_pair(&spec, &ContrastMap::two_segment(0.4, 0.7).unwrap(), &a, &f).unwrap();
    let cfg = quick();
    let aff = register_affine(&p.fixed, &p.moving, &cfg).unwrap();
    assert!(aff.best_loss <= aff.initial_loss);
    assert!(!aff.diverged);
    let def = register_deformable(&p.fixed, &aff.m_affine, &cfg).unwrap();
    assert!(def.best.total <= def.initial.total);
}

#[test]
fn pipeline_outputs_are_consistent() {
    let fixed = phantom(5);
    let moving = phantom(6);
    let r = register_pipeline(&fixed, &moving, &quick()).unwrap();
    let (h, w) = fixed.dims();
    assert_eq!(
        r.m_affine,
        warp(&moving, &r.affine.to_field(h, w).unwrap(), BorderMode::Zero).unwrap()
    );
    assert_eq!(r.m_registered, warp(&r.m_affine, &r.field, BorderMode::Zero).unwrap());
    assert_eq!(
        r.m_inverse,
        warp(&r.m_registered, &invert_field(&r.field), BorderMode::Zero).unwrap()
    );
    assert!(r.final_loss.is_finite());
    let cfg = quick();
    let again = total_loss(&fixed, &r.m_affine, &r.field, &cfg.weights, &cfg.loss_options()).unwrap();
    assert_eq!(r.final_loss, again.breakdown);
}

#[test]
fn deformable_stage_leaves_the_affine_untouched() {
    let fixed = phantom(7);
    let moving = phantom(8);
    let cfg = quick();
    let aff = register_affine(&fixed, &moving, &cfg).unwrap();
    let r = register_pipeline(&fixed, &moving, &cfg).unwrap();
    assert_eq!(r.affine, aff.params);
}

#[test]
fn runs_are_bit_identical() {
    let fixed = phantom(9);
    let moving = phantom(10);
    let a = register_pipeline(&fixed, &moving, &quick()).unwrap();
    let b = register_pipeline(&fixed, &moving, &quick()).unwrap();
    assert_eq!(a.field, b.field);
    assert_eq!(a.affine, b.affine);
}

#[test]
fn unregistered_dice_falls_with_deformation() {
    let mut last = f64::INFINITY;
    for max_disp in [0.0, 2.0, 4.0, 8.0] {
        let mut sum = 0.0;
        for seed in 0..6 {
            let spec = PhantomSpec {
                seed,
                lesion_radius: 6.0,
                ..PhantomSpec::default()
            };
            let f = random_smooth_field(64, 64, max_disp, 6.0, 20 + seed).unwrap();
            let p = make_pair(&spec, &ContrastMap::identity(), &AffineParams::identity(), &f).unwrap();
            sum += overlap(&p.moving_mask, &p.fixed_mask).unwrap().dice;
        }
        let dice = sum / 6.0;
        assert!(dice < last, "mean dice {dice} at {max_disp}, previous {last}");
        last = dice;
    }
}

#[test]
fn warped_masks_follow_the_recovered_transform() {
    let m = mcreg::Mask2D::from_fn(16, 16, |y, x| (5..9).contains(&y) && (6..10).contains(&x)).unwrap();
    let shift = DisplacementField::constant(16, 16, -2.0, 0.0).unwrap();
    let moved = warp_mask(&m, &AffineParams::identity(), &shift).unwrap();
    assert_eq!(moved.count(), m.count());
    assert!(moved.get(5, 8) && !moved.get(5, 6));
}
