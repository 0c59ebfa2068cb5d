//! Analytic gradients against central finite differences of the same loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volrig_core::exec::Sequential;
use volrig_core::fit::{backward, CharacterRig, FitParams, LossWeights, TrainingFrame};
use volrig_core::render::{Camera, Intrinsics, MarchSettings};
use volrig_core::{GridBox, Pose, Skeleton, Vec3};

struct Setup {
    rig: CharacterRig,
    params: FitParams,
    frame: TrainingFrame,
    march: MarchSettings,
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skel = Skeleton::new(
        vec![None, Some(0)],
        vec![Vec3::new(0.0, 0.0, -0.25), Vec3::new(0.0, 0.0, 0.5)],
        vec![0.25, 0.25],
    )
    .unwrap();
    let canonical = Pose::rest(&skel);
    let cbox = GridBox::new(Vec3::splat(-0.6), Vec3::splat(0.6), [6, 6, 6]).unwrap();
    let wbox = cbox.with_dims([4, 4, 4]).unwrap();
    let rig = CharacterRig::new(skel.clone(), canonical, wbox).unwrap();
    let mut params = rig.initial_params(cbox);
    for (i, v) in params.raw_canonical.values_mut().iter_mut().enumerate() {
        // α stays well below the clamp
        *v = if i % 4 == 3 {
            rng.gen_range(-2.5..-0.8)
        } else {
            rng.gen_range(-1.5..1.5)
        };
    }
    for v in params.delta_w.values_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let angles = vec![
        Vec3::new(0.0, 0.0, rng.gen_range(-0.3..0.3)),
        Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
    ];
    let pose = Pose::from_angles(&skel, angles).unwrap();
    let eye = Vec3::new(1.6, rng.gen_range(-0.6..0.6), rng.gen_range(-0.4..0.4));
    let mut k = Intrinsics::centered(8, 8);
    k.fx = 9.0;
    k.fy = 9.0;
    let camera = Camera::look_at(eye, Vec3::ZERO, Vec3::Z, k).unwrap();
    let n = 64;
    let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let rgb: Vec<f64> = (0..3 * n).map(|i| alpha[i / 3] * rng.gen_range(0.0..1.0)).collect();
    let mask: Vec<bool> = alpha.iter().map(|a| *a > 0.4).collect();
    let frame = TrainingFrame {
        pose,
        camera,
        rgb,
        alpha,
        mask,
    };
    let march = MarchSettings::for_grid(&cbox);
    Setup {
        rig,
        params,
        frame,
        march,
    }
}

fn loss_and_grad(s: &Setup, p: &FitParams, loss: &LossWeights) -> (f64, FitParams) {
    let bg = [0.2, 0.5, 0.8];
    backward(&s.rig, p, &[(&s.frame, bg)], &s.march, loss, 3, &Sequential).unwrap()
}

fn check(loss: LossWeights) {
    let h = 1e-4;
    let mut checked = 0;
    for seed in 0..5 {
        let s = setup(seed);
        let (_, grad) = loss_and_grad(&s, &s.params, &loss);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for which in 0..2 {
            let len = if which == 0 {
                s.params.raw_canonical.values().len()
            } else {
                s.params.delta_w.values().len()
            };
            // bias selection toward parameters that actually matter
            let mut picked = 0;
            let mut tries = 0;
            while picked < 25 && tries < 400 {
                tries += 1;
                let i = rng.gen_range(0..len);
                let an = if which == 0 {
                    grad.raw_canonical.values()[i]
                } else {
                    grad.delta_w.values()[i]
                };
                if an.abs() < 1e-6 && tries < 300 {
                    continue;
                }
                let eval = |d: f64| {
                    let mut p = s.params.clone();
                    if which == 0 {
                        p.raw_canonical.values_mut()[i] += d;
                    } else {
                        p.delta_w.values_mut()[i] += d;
                    }
                    loss_and_grad(&s, &p, &loss).0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (fd - an).abs();
                let scale = fd.abs().max(an.abs());
                assert!(
                    err <= 1e-4 * scale + 1e-8,
                    "seed {seed} {} #{i}: analytic {an} vs fd {fd}",
                    if which == 0 { "canonical" } else { "logit" }
                );
                picked += 1;
                checked += 1;
            }
        }
    }
    assert!(checked >= 200, "only {checked} parameters checked");
}

#[test]
fn squared_error_gradient_matches_finite_differences() {
    check(LossWeights::L2_ONLY);
}

#[test]
fn combined_loss_gradient_matches_finite_differences() {
    check(LossWeights::default());
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let mut s = setup(3);
    let bg = [0.0; 3];
    // render the current parameters as ground truth
    let canonical = s.params.canonical();
    let weights = s.params.weights(&s.rig.prior);
    let bases = volrig_core::kinematics::motion_bases(&s.rig.skeleton, &s.rig.canonical_pose, &s.frame.pose).unwrap();
    let view = volrig_core::deform::PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
    let img = volrig_core::render::render_image(&view, &s.frame.camera, &s.march.differentiable(), &Sequential);
    s.frame.rgb = img.rgb;
    s.frame.alpha = img.alpha;
    let (loss, grad) = backward(&s.rig, &s.params, &[(&s.frame, bg)], &s.march, &LossWeights::default(), 2, &Sequential).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.raw_canonical.values().iter().all(|g| *g == 0.0));
    assert!(grad.delta_w.values().iter().all(|g| *g == 0.0));
}

#[test]
fn doubling_residual_doubles_squared_error_gradient() {
    let s = setup(4);
    let bg = [0.0; 3];
    let canonical = s.params.canonical();
    let weights = s.params.weights(&s.rig.prior);
    let bases = volrig_core::kinematics::motion_bases(&s.rig.skeleton, &s.rig.canonical_pose, &s.frame.pose).unwrap();
    let view = volrig_core::deform::PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
    let img = volrig_core::render::render_image(&view, &s.frame.camera, &s.march.differentiable(), &Sequential);
    let mut f1 = s.frame.clone();
    let mut f2 = s.frame.clone();
    f1.alpha = img.alpha.clone();
    f2.alpha = img.alpha.clone();
    for i in 0..img.rgb.len() {
        let r = s.frame.rgb[i] - img.rgb[i];
        f1.rgb[i] = img.rgb[i] + 0.5 * r;
        f2.rgb[i] = img.rgb[i] + r;
    }
    let run = |f: &TrainingFrame| backward(&s.rig, &s.params, &[(f, bg)], &s.march, &LossWeights::L2_ONLY, 2, &Sequential).unwrap().1;
    let (g1, g2) = (run(&f1), run(&f2));
    for (a, b) in g1.raw_canonical.values().iter().zip(g2.raw_canonical.values()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn tiling_does_not_change_the_result() {
    let s = setup(2);
    let bg = [0.3; 3];
    let loss = LossWeights::default();
    let a = backward(&s.rig, &s.params, &[(&s.frame, bg)], &s.march, &loss, 1, &Sequential).unwrap();
    let b = backward(&s.rig, &s.params, &[(&s.frame, bg)], &s.march, &loss, 8, &Sequential).unwrap();
    assert!((a.0 - b.0).abs() < 1e-12);
    for (x, y) in a.1.raw_canonical.values().iter().zip(b.1.raw_canonical.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}
