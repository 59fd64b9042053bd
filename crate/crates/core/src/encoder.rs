//! Spatio-temporal feature extractor: a factorized convolutional trunk feeding
//! a feature head `F(x)` and an ROI head producing one occurrence map per
//! prototype.

use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_inplace, Act, Conv3d, ConvGeometry, ConvGrad};
use crate::types::{Clip, FeatureVolume, OccurrenceVolume};

/// One trunk stage: a per-frame spatial convolution followed by a temporal
/// convolution, each rectified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub width: usize,
    pub spatial_kernel: usize,
    pub spatial_stride: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
}

impl StageConfig {
    /// 8x spatial and 4x temporal downsampling; widths 16/32/32.
    pub fn default_trunk() -> Vec<StageConfig> {
        vec![
            StageConfig { width: 16, spatial_kernel: 4, spatial_stride: 4, temporal_kernel: 3, temporal_stride: 2 },
            StageConfig { width: 32, spatial_kernel: 3, spatial_stride: 2, temporal_kernel: 3, temporal_stride: 2 },
            StageConfig { width: 32, spatial_kernel: 3, spatial_stride: 1, temporal_kernel: 3, temporal_stride: 1 },
        ]
    }

    fn pad(kernel: usize, stride: usize) -> usize {
        kernel.saturating_sub(stride).div_ceil(2)
    }

    pub fn spatial_geometry(&self) -> ConvGeometry {
        let (k, s) = (self.spatial_kernel, self.spatial_stride);
        let p = Self::pad(k, s);
        ConvGeometry { kernel: [k, k, 1], stride: [s, s, 1], padding: [p, p, 0] }
    }

    pub fn temporal_geometry(&self) -> ConvGeometry {
        let (k, s) = (self.temporal_kernel, self.temporal_stride);
        ConvGeometry { kernel: [1, 1, k], stride: [1, 1, s], padding: [0, 0, Self::pad(k, s)] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stages: Vec<StageConfig>,
    /// Feature depth `D`.
    pub feature_dim: usize,
    /// Occurrence map count `P`.
    pub num_maps: usize,
}

impl EncoderConfig {
    pub fn from_run(config: &RunConfig) -> Self {
        Self {
            in_channels: config.data.generator.channels,
            stages: config.stages.clone(),
            feature_dim: config.feature_dim,
            num_maps: config.num_prototypes(),
        }
    }

    /// Overall `(spatial, temporal)` downsampling factor.
    pub fn downsampling(&self) -> (usize, usize) {
        self.stages.iter().fold((1, 1), |(s, t), st| {
            (s * st.spatial_stride, t * st.temporal_stride)
        })
    }

    /// Checks that every stage divides its input exactly and returns the
    /// `(H, W, T)` of the encoder outputs.
    pub fn validate_input(&self, height: usize, width: usize, frames: usize) -> Result<[usize; 3]> {
        let (fs, ft) = self.downsampling();
        let expected = [height / fs.max(1), width / fs.max(1), frames / ft.max(1)];
        let mut dims = [height, width, frames];
        for stage in &self.stages {
            for g in [stage.spatial_geometry(), stage.temporal_geometry()] {
                dims = g.output_dims(dims).ok_or_else(|| {
                    Error::shape("encoder input", format!("{expected:?}"), format!("kernel larger than {dims:?}"))
                })?;
            }
        }
        if !height.is_multiple_of(fs) || !width.is_multiple_of(fs) || !frames.is_multiple_of(ft) || dims != expected || dims.contains(&0) {
            return Err(Error::shape(
                "encoder output (H, W, T)",
                format!("{expected:?} from input {:?} with downsampling {fs}x{fs}x{ft}", [height, width, frames]),
                format!("{dims:?}"),
            ));
        }
        Ok(dims)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub trunk: Vec<Conv3d>,
    pub feature_head: Vec<Conv3d>,
    pub roi_head: Vec<Conv3d>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub trunk: Vec<ConvGrad>,
    pub feature_head: Vec<ConvGrad>,
    pub roi_head: Vec<ConvGrad>,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &Encoder) -> Self {
        let z = |layers: &[Conv3d]| layers.iter().map(ConvGrad::zeros_like).collect();
        Self {
            trunk: z(&enc.trunk),
            feature_head: z(&enc.feature_head),
            roi_head: z(&enc.roi_head),
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.add_assign(b);
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvGrad> {
        self.trunk.iter().chain(&self.feature_head).chain(&self.roi_head)
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvGrad> {
        self.trunk
            .iter_mut()
            .chain(self.feature_head.iter_mut())
            .chain(self.roi_head.iter_mut())
            .collect()
    }
}

/// Per-layer record kept by the forward pass for backpropagation.
#[derive(Clone, Debug)]
struct LayerTrace {
    input_dims: [usize; 3],
    cols: Array2<f64>,
    output: Array2<f64>,
    rectified: bool,
}

#[derive(Clone, Debug)]
pub struct EncoderPass {
    /// `[cells, D]`
    pub features: Act,
    /// `[cells, P]`
    pub maps: Act,
    trunk: Vec<LayerTrace>,
    feature_head: Vec<LayerTrace>,
    roi_head: Vec<LayerTrace>,
}

impl EncoderPass {
    pub fn feature_volume(&self) -> FeatureVolume {
        let [h, w, t] = self.features.dims;
        let d = self.features.channels();
        FeatureVolume {
            values: self.features.data.clone().into_shape_with_order((h, w, t, d)).expect("cells match dims"),
        }
    }

    pub fn occurrence_volume(&self) -> OccurrenceVolume {
        let [h, w, t] = self.maps.dims;
        let p = self.maps.channels();
        let by_cell = self.maps.data.t().to_owned();
        OccurrenceVolume {
            values: by_cell
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((p, h, w, t))
                .expect("cells match dims"),
        }
    }
}

fn run_chain(layers: &[Conv3d], input: Act, traces: &mut Vec<LayerTrace>) -> Act {
    let mut x = input;
    let last = layers.len().saturating_sub(1);
    for (i, conv) in layers.iter().enumerate() {
        let rectified = i != last;
        let (mut y, cols) = conv.forward(&x);
        if rectified {
            relu_inplace(&mut y.data);
        }
        traces.push(LayerTrace {
            input_dims: x.dims,
            cols,
            output: y.data.clone(),
            rectified,
        });
        x = y;
    }
    x
}

fn run_trunk(layers: &[Conv3d], input: Act, traces: &mut Vec<LayerTrace>) -> Act {
    let mut x = input;
    for conv in layers {
        let (mut y, cols) = conv.forward(&x);
        relu_inplace(&mut y.data);
        traces.push(LayerTrace {
            input_dims: x.dims,
            cols,
            output: y.data.clone(),
            rectified: true,
        });
        x = y;
    }
    x
}

fn backprop_chain(
    layers: &[Conv3d],
    traces: &[LayerTrace],
    grads: &mut [ConvGrad],
    mut d_out: Array2<f64>,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    for i in (0..layers.len()).rev() {
        let tr = &traces[i];
        if tr.rectified {
            relu_backward(&tr.output, &mut d_out);
        }
        let want = i > 0 || need_input_grad;
        {
            let d = layers[i].backward(tr.input_dims, &tr.cols, &d_out, &mut grads[i], want)?;
            d_out = d
        }
    }
    Some(d_out)
}

impl Encoder {
    pub fn init<R: Rng>(config: EncoderConfig, rng: &mut R) -> Self {
        let mut trunk = Vec::new();
        let mut ch = config.in_channels;
        for stage in &config.stages {
            trunk.push(Conv3d::init(stage.spatial_geometry(), ch, stage.width, true, rng));
            trunk.push(Conv3d::init(stage.temporal_geometry(), stage.width, stage.width, true, rng));
            ch = stage.width;
        }
        let d = config.feature_dim;
        let pw = ConvGeometry::pointwise();
        let feature_head = vec![
            Conv3d::init(pw, ch, d, true, rng),
            Conv3d::init(pw, d, d, false, rng),
        ];
        let roi_head = vec![
            Conv3d::init(pw, ch, d, true, rng),
            Conv3d::init(pw, d, d / 2, true, rng),
            Conv3d::init(pw, d / 2, config.num_maps, false, rng),
        ];
        Self {
            config,
            trunk,
            feature_head,
            roi_head,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv3d> {
        self.trunk.iter().chain(&self.feature_head).chain(&self.roi_head)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv3d> {
        self.trunk
            .iter_mut()
            .chain(self.feature_head.iter_mut())
            .chain(self.roi_head.iter_mut())
    }

    /// Converts a clip to the channels-last activation layout.
    pub fn input_act(&self, clip: &Clip) -> Result<Act> {
        let (h, w, t, ch) = clip.dims();
        if ch != self.config.in_channels {
            return Err(Error::shape("clip channels", self.config.in_channels, ch));
        }
        self.config.validate_input(h, w, t)?;
        let data = clip
            .voxels
            .mapv(f64::from)
            .into_shape_with_order((h * w * t, ch))
            .expect("contiguous clip");
        Ok(Act { dims: [h, w, t], data })
    }

    pub fn forward(&self, input: Act) -> EncoderPass {
        let mut trunk = Vec::new();
        let z = run_trunk(&self.trunk, input, &mut trunk);
        let mut feature_head = Vec::new();
        let features = run_chain(&self.feature_head, z.clone(), &mut feature_head);
        let mut roi_head = Vec::new();
        let maps = run_chain(&self.roi_head, z, &mut roi_head);
        EncoderPass {
            features,
            maps,
            trunk,
            feature_head,
            roi_head,
        }
    }

    /// Feature field and occurrence maps for one clip.
    pub fn extract(&self, clip: &Clip) -> Result<(FeatureVolume, OccurrenceVolume)> {
        let pass = self.forward(self.input_act(clip)?);
        Ok((pass.feature_volume(), pass.occurrence_volume()))
    }

    /// Accumulates parameter gradients given upstream gradients on the
    /// feature field and/or the occurrence maps (both `[cells, channels]`).
    pub fn backward(
        &self,
        pass: &EncoderPass,
        d_features: Option<&Array2<f64>>,
        d_maps: Option<&Array2<f64>>,
        grads: &mut EncoderGrads,
    ) {
        let mut d_trunk: Option<Array2<f64>> = None;
        let mut accumulate = |d: Array2<f64>| match d_trunk.as_mut() {
            Some(acc) => *acc += &d,
            None => d_trunk = Some(d),
        };
        if let Some(d) = d_features {
            if let Some(dz) = backprop_chain(&self.feature_head, &pass.feature_head, &mut grads.feature_head, d.clone(), true) {
                accumulate(dz);
            }
        }
        if let Some(d) = d_maps {
            if let Some(dz) = backprop_chain(&self.roi_head, &pass.roi_head, &mut grads.roi_head, d.clone(), true) {
                accumulate(dz);
            }
        }
        if let Some(dz) = d_trunk {
            // The trunk applies a rectifier after every layer, including the last.
            backprop_chain(&self.trunk, &pass.trunk, &mut grads.trunk, dz, false);
        }
    }
}

/// Reshapes a `[P, H, W, T]` occurrence volume into `[cells, P]`.
pub fn maps_to_cells(m: &Array4<f64>) -> Array2<f64> {
    let (p, h, w, t) = m.dim();
    m.to_owned()
        .into_shape_with_order((p, h * w * t))
        .expect("contiguous")
        .t()
        .as_standard_layout()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(h: usize, w: usize, t: usize, ch: usize, seed: u64) -> Clip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Clip {
            voxels: Array4::from_shape_fn((h, w, t, ch), |_| rng.random_range(0.0f32..1.0)),
            frame_rate: t as f64,
        }
    }

    fn config(p: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels: 1,
            stages: StageConfig::default_trunk(),
            feature_dim: 16,
            num_maps: p,
        }
    }

    #[test]
    fn default_strides_give_8x8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::init(config(40), &mut rng);
        let (f, m) = enc.extract(&clip(64, 64, 32, 1, 1)).unwrap();
        assert_eq!(f.values.dim(), (8, 8, 8, 16));
        assert_eq!(m.values.dim(), (40, 8, 8, 8));
    }

    #[test]
    fn extraction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::init(config(40), &mut rng);
        let c = clip(64, 64, 32, 1, 9);
        assert_eq!(enc.extract(&c).unwrap(), enc.extract(&c).unwrap());
    }

    #[test]
    fn incompatible_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::init(config(4), &mut rng);
        let err = enc.extract(&clip(60, 64, 32, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        let err = enc.extract(&clip(64, 64, 32, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn occurrence_volume_matches_cell_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::init(config(5), &mut rng);
        let pass = enc.forward(enc.input_act(&clip(16, 16, 8, 1, 2)).unwrap());
        let vol = pass.occurrence_volume();
        assert_eq!(maps_to_cells(&vol.values), pass.maps.data);
        let t = pass.maps.dims[2];
        assert_eq!(vol.values[[3, 0, 1, 1]], pass.maps.data[[t + 1, 3]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_shape_follows_stride_arithmetic(hm in 1usize..5, wm in 1usize..5, tm in 1usize..5) {
            let cfg = config(7);
            let (fs, ft) = cfg.downsampling();
            let (h, w, t) = (hm * fs, wm * fs, tm * ft);
            let dims = cfg.validate_input(h, w, t).unwrap();
            prop_assert_eq!(dims, [hm, wm, tm]);
        }
    }
}
