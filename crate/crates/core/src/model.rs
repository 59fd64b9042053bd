//! The full classifier `h(g(f(x)))` with its training gradients.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affine::{Affine, WarpPlan};
use crate::config::{Lambdas, RunConfig};
use crate::encoder::{Encoder, EncoderConfig, EncoderGrads, EncoderPass};
use crate::error::Result;
use crate::losses::{
    abstention_from_logits, cluster_sep_grad, cluster_sep_losses, cross_entropy_from_logits,
    head_norm_grad, head_norm_loss, orthogonality_grad, orthogonality_loss, transformation_loss,
};
use crate::proto::{head_forward, init_head, pool_backward, pool_cells, similarities, similarity_grad};
use crate::synth::apply_affine;
use crate::types::{
    normalize_outputs, BankLayout, Clip, Diagnostics, HeadWeights, ModelOutput, PrototypeBank,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layout: BankLayout,
    pub encoder: Encoder,
    pub bank: PrototypeBank,
    pub head: HeadWeights,
}

/// Everything a forward pass produced, kept for explanation and backprop.
#[derive(Clone, Debug)]
pub struct Trace {
    pub pass: EncoderPass,
    /// `[P, D]`
    pub pooled: Array2<f64>,
    pub output: ModelOutput,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub encoder: EncoderGrads,
    pub bank: Array2<f64>,
    pub head: Array2<f64>,
}

impl Grads {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            encoder: EncoderGrads::zeros_like(&model.encoder),
            bank: Array2::zeros(model.bank.vectors.raw_dim()),
            head: Array2::zeros(model.head.weights.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        self.encoder.add_assign(&other.encoder);
        self.bank += &other.bank;
        self.head += &other.head;
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slices_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flat views in the same order as [`Model::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in self.encoder.layers() {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out.push(self.bank.as_slice().expect("standard layout"));
        out.push(self.head.as_slice().expect("standard layout"));
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self
            .encoder
            .trunk
            .iter_mut()
            .chain(self.encoder.feature_head.iter_mut())
            .chain(self.encoder.roi_head.iter_mut())
        {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.bank.as_slice_mut().expect("standard layout"));
        out.push(self.head.as_slice_mut().expect("standard layout"));
        out
    }
}

/// One training example as seen by the objective.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub clip: &'a Clip,
    pub label: usize,
    /// Transform shared by augmentation and the consistency term.
    pub affine: Affine,
    /// Feed the transformed clip to the classifier instead of the original.
    pub augment: bool,
}

/// Per-sample terms (the parameter-only terms are added per batch).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleTerms {
    pub abs: f64,
    pub clst: f64,
    pub sep: f64,
    pub trns: f64,
}

impl Model {
    pub fn init(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = BankLayout::from_config(config);
        let encoder = Encoder::init(EncoderConfig::from_run(config), &mut rng);
        let vectors = Array2::from_shape_fn((layout.num_prototypes(), config.feature_dim), |_| {
            StandardNormal.sample(&mut rng)
        });
        let bank = PrototypeBank::new(vectors, &layout)?;
        Ok(Self {
            layout,
            encoder,
            head: init_head(&layout),
            bank,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.layout.num_classes
    }

    pub fn trace(&self, clip: &Clip) -> Result<Trace> {
        let pass = self.encoder.forward(self.encoder.input_act(clip)?);
        self.trace_from_pass(pass)
    }

    fn trace_from_pass(&self, pass: EncoderPass) -> Result<Trace> {
        let pooled = pool_cells(&pass.features.data, &pass.maps.data);
        let (sims, degenerate) = similarities(&pooled, &self.bank);
        let logits = head_forward(&sims, &self.head);
        let n = normalize_outputs(logits.as_slice().expect("contiguous"), self.layout.num_classes)?;
        let output = ModelOutput {
            similarities: sims,
            logits,
            class_probs: n.class_probs,
            joint_probs: n.joint_probs,
            alpha: n.alpha,
        };
        Ok(Trace {
            pass,
            pooled,
            output,
            diagnostics: Diagnostics {
                zero_norm_similarities: degenerate,
                ..Diagnostics::default()
            },
        })
    }

    /// Extract, pool, compare, weigh and normalize.
    pub fn forward(&self, clip: &Clip) -> Result<ModelOutput> {
        Ok(self.trace(clip)?.output)
    }

    /// Pooled feature of every prototype for one clip, `[P, D]`.
    pub fn pooled_features(&self, clip: &Clip) -> Result<Array2<f64>> {
        let pass = self.encoder.forward(self.encoder.input_act(clip)?);
        Ok(pool_cells(&pass.features.data, &pass.maps.data))
    }

    /// Loss terms of one sample and the gradient of
    /// `abs + l_clst clst + l_sep sep + l_trns trns`.
    pub fn sample_objective(&self, sample: &Sample, lambdas: &Lambdas) -> Result<(SampleTerms, Grads, Diagnostics)> {
        let input = if sample.augment {
            apply_affine(sample.clip, &sample.affine)
        } else {
            sample.clip.clone()
        };
        let trace = self.trace(&input)?;
        let mut diagnostics = trace.diagnostics.clone();
        let sims = &trace.output.similarities;
        let logits = trace.output.logits.as_slice().expect("contiguous");

        let (abs, d_logits) = if self.layout.uncertainty {
            let (loss, grad, saturated) = abstention_from_logits(logits, sample.label, lambdas.abs);
            diagnostics.alpha_saturations += u64::from(saturated);
            (loss, grad)
        } else {
            cross_entropy_from_logits(logits, sample.label)
        };
        let tags = &self.bank.assignment;
        let (clst, sep, argmax) = cluster_sep_losses(sims.as_slice().expect("contiguous"), sample.label, tags);

        let mut grads = Grads::zeros_like(self);
        grads.head = outer(&d_logits, sims);
        let d_sims = self.head.weights.t().dot(&d_logits) + cluster_sep_grad(sims.len(), argmax, lambdas.clst, lambdas.sep);

        let mut d_pooled = Array2::zeros(trace.pooled.raw_dim());
        for (p, &dg) in d_sims.iter().enumerate() {
            if dg == 0.0 {
                continue;
            }
            let (df, dp) = similarity_grad(trace.pooled.row(p), self.bank.vectors.row(p));
            d_pooled.row_mut(p).scaled_add(dg, &df);
            grads.bank.row_mut(p).scaled_add(dg, &dp);
        }
        let pass = &trace.pass;
        let (d_features, mut d_maps) = pool_backward(&pass.features.data, &pass.maps.data, &d_pooled);

        let mut trns = 0.0;
        if lambdas.trns > 0.0 && !sample.affine.is_identity() {
            let [mh, mw, _] = pass.maps.dims;
            let plan = WarpPlan::new(&sample.affine, mh, mw);
            // The main pass already covers one side of the pair.
            let other_input = if sample.augment {
                sample.clip.clone()
            } else {
                apply_affine(sample.clip, &sample.affine)
            };
            let other = self.encoder.forward(self.encoder.input_act(&other_input)?);
            let (of_transformed, of_original) = if sample.augment { (pass, &other) } else { (&other, pass) };
            let warped = plan.apply(&of_original.maps.data, of_original.maps.dims);
            let (loss, d_a, d_b) = transformation_loss(&of_transformed.maps.data, &warped);
            trns = loss;
            let d_transformed = d_a * lambdas.trns;
            let d_original = plan.apply_adjoint(&d_b, of_original.maps.dims) * lambdas.trns;
            let (main_extra, other_grad) = if sample.augment {
                (d_transformed, d_original)
            } else {
                (d_original, d_transformed)
            };
            d_maps += &main_extra;
            self.encoder.backward(&other, None, Some(&other_grad), &mut grads.encoder);
        }
        self.encoder.backward(pass, Some(&d_features), Some(&d_maps), &mut grads.encoder);

        Ok((SampleTerms { abs, clst, sep, trns }, grads, diagnostics))
    }

    /// Loss terms of an untransformed clip, without gradients.
    pub fn sample_terms(&self, clip: &Clip, label: usize, lambdas: &Lambdas) -> Result<SampleTerms> {
        let out = self.forward(clip)?;
        let logits = out.logits.as_slice().expect("contiguous");
        let abs = if self.layout.uncertainty {
            abstention_from_logits(logits, label, lambdas.abs).0
        } else {
            cross_entropy_from_logits(logits, label).0
        };
        let sims = out.similarities.as_slice().expect("contiguous");
        let (clst, sep, _) = cluster_sep_losses(sims, label, &self.bank.assignment);
        Ok(SampleTerms { abs, clst, sep, trns: 0.0 })
    }

    /// Parameter-only terms `(orth, norm)` with the gradient of
    /// `l_orth orth + l_norm norm` added into `grads`.
    pub fn regularizers(&self, lambdas: &Lambdas, grads: &mut Grads) -> (f64, f64, u64) {
        let (orth, skipped) = orthogonality_loss(&self.bank.vectors);
        let norm = head_norm_loss(&self.head, &self.layout);
        if lambdas.orth > 0.0 {
            grads.bank.scaled_add(lambdas.orth, &orthogonality_grad(&self.bank.vectors));
        }
        if lambdas.norm > 0.0 {
            grads.head.scaled_add(lambdas.norm, &head_norm_grad(&self.head, &self.layout));
        }
        (orth, norm, skipped)
    }

    /// Flat mutable parameter views; order matches [`Grads::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.encoder.layers_mut() {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.bank.vectors.as_slice_mut().expect("standard layout"));
        out.push(self.head.weights.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.encoder
            .layers()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.bank.vectors.len()
            + self.head.weights.len()
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}
