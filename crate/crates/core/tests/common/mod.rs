#![allow(dead_code)]

pub mod naive;

use ndarray::Array4;
use protoasnet::config::RunConfig;
use protoasnet::encoder::StageConfig;
use protoasnet::model::{Grads, Model, Sample};
use protoasnet::types::Clip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum relative error between analytic and numerical gradients.
pub const FD_REL_TOL: f64 = 1e-3;
/// Gradients below this magnitude are compared on an absolute scale; central
/// differences at `FD_STEP` cannot resolve them more finely.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct FdStats {
    pub checked: usize,
    pub kinks_skipped: usize,
    pub max_rel_err: f64,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.checked += o.checked;
        self.kinks_skipped += o.kinks_skipped;
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_SCALE_FLOOR)
}

/// Compares `analytic[i]` with the central difference of `f` along every
/// coordinate. Coordinates where the one-sided differences disagree sit on a
/// kink (rectifier, absolute value or max switch) and are skipped.
pub fn check_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> FdStats {
    let mut stats = FdStats::default();
    let f0 = f(x);
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let fwd = (up - f0) / FD_STEP;
        let bwd = (f0 - down) / FD_STEP;
        if rel_err(fwd, bwd) > 1e-2 && (fwd - bwd).abs() > 1e-4 {
            stats.kinks_skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        stats.checked += 1;
        stats.max_rel_err = stats.max_rel_err.max(rel_err(analytic[i], numeric));
    }
    stats
}

/// A deliberately tiny model: 8x8x4 single-channel input, one stage of two
/// channels, D = 4, one prototype per class.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.protos_per_class = 1;
    c.feature_dim = 4;
    c.stages = vec![StageConfig {
        width: 2,
        spatial_kernel: 3,
        spatial_stride: 2,
        temporal_kernel: 3,
        temporal_stride: 2,
    }];
    c.data.generator.height = 8;
    c.data.generator.width = 8;
    c.data.generator.clip_len = 4;
    c
}

pub fn random_clip(rng: &mut ChaCha8Rng, h: usize, w: usize, t: usize) -> Clip {
    Clip {
        voxels: Array4::from_shape_fn((h, w, t, 1), |_| rng.random_range(0.0f32..1.0)),
        frame_rate: t as f64,
    }
}

pub fn flat_params(model: &Model) -> Vec<f64> {
    let mut m = model.clone();
    m.param_slices_mut().into_iter().flat_map(|s| s.to_vec()).collect()
}

pub fn set_params(model: &mut Model, flat: &[f64]) {
    let mut i = 0;
    for s in model.param_slices_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[i..i + n]);
        i += n;
    }
}

pub fn flat_grads(g: &Grads) -> Vec<f64> {
    g.slices().into_iter().flat_map(|s| s.to_vec()).collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Batch objective: mean per-sample terms plus the parameter-only terms.
pub fn batch_objective(model: &Model, samples: &[Sample], config: &RunConfig) -> (f64, Grads) {
    let l = &config.lambdas;
    let mut grads = Grads::zeros_like(model);
    let mut total = 0.0;
    for s in samples {
        let (t, g, _) = model.sample_objective(s, l).unwrap();
        total += t.abs + l.clst * t.clst + l.sep * t.sep + l.trns * t.trns;
        grads.add_assign(&g);
    }
    let n = samples.len() as f64;
    total /= n;
    grads.scale(1.0 / n);
    let (orth, norm, _) = model.regularizers(l, &mut grads);
    (total + l.orth * orth + l.norm * norm, grads)
}

/// A quick end-to-end configuration: 32x32x8 clips from 24 studies split
/// evenly enough that every split sees every class.
pub fn small_run_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.protos_per_class = 3;
    c.feature_dim = 16;
    c.epochs = 3;
    c.push_period = 2;
    c.batch_size = 4;
    let g = &mut c.data.generator;
    g.height = 32;
    g.width = 32;
    g.clip_len = 8;
    g.studies = 24;
    g.cines_per_study = 1;
    g.clips_per_cine = 2;
    g.split_ratios = [0.5, 0.25, 0.25];
    c
}
