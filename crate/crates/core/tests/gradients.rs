//! Whole-model gradient against central finite differences.

mod common;

use common::*;
use protoasnet::affine::Affine;
use protoasnet::model::{Model, Sample};

fn run(uncertainty: bool, augment: bool, seed: u64) -> FdStats {
    let mut config = tiny_config(seed);
    config.uncertainty = uncertainty;
    config.lambdas.trns = 0.5;
    config.lambdas.norm = 0.1;
    let mut rng = seeded(seed + 100);
    let mut model = Model::init(&config).unwrap();
    // Jitter every parameter: zero biases on rectified zero inputs sit exactly
    // on a kink, and the norm term needs off-class head weights.
    let jittered: Vec<f64> = flat_params(&model)
        .into_iter()
        .map(|v| v + 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0))
        .collect();
    set_params(&mut model, &jittered);
    let clips: Vec<_> = (0..2).map(|_| random_clip(&mut rng, 8, 8, 4)).collect();
    let affines = [
        Affine { rotation_deg: 9.0, scale: 0.85, shift: [0.05, -0.1] },
        Affine { rotation_deg: -12.0, scale: 0.75, shift: [-0.2, 0.1] },
    ];
    let samples: Vec<Sample> = clips
        .iter()
        .zip(affines)
        .enumerate()
        .map(|(i, (clip, affine))| Sample { clip, label: i % 3, affine, augment })
        .collect();
    let (_, grads) = batch_objective(&model, &samples, &config);
    let analytic = flat_grads(&grads);
    let x = flat_params(&model);
    let f = |p: &[f64]| {
        let mut m = model.clone();
        set_params(&mut m, p);
        batch_objective(&m, &samples, &config).0
    };
    let stats = check_gradient(&f, &x, &analytic);
    set_params(&mut model, &x);
    stats
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    for (uncertainty, augment) in [(true, true), (true, false), (false, true)] {
        for seed in 0..3 {
            let stats = run(uncertainty, augment, seed);
            assert!(stats.checked > 100, "{stats:?}");
            assert!(stats.max_rel_err < FD_REL_TOL, "uncertainty={uncertainty} augment={augment} seed={seed}: {stats:?}");
        }
    }
}
