//! Channels-last activations and a 3-D convolution with explicit backward.
//!
//! An [`Act`] stores a `[H, W, T, C]` volume as a `[H*W*T, C]` matrix with
//! cells in row-major `(h, w, t)` order, so it reshapes to and from the
//! public 4-D tensors without copying.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct Act {
    pub dims: [usize; 3],
    pub data: Array2<f64>,
}

impl Act {
    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

#[inline]
pub(crate) fn cell_index(dims: [usize; 3], h: usize, w: usize, t: usize) -> usize {
    (h * dims[1] + w) * dims[2] + t
}

/// Kernel, stride and padding along `(h, w, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn pointwise() -> Self {
        Self {
            kernel: [1; 3],
            stride: [1; 3],
            padding: [0; 3],
        }
    }

    pub fn is_pointwise(&self) -> bool {
        *self == Self::pointwise()
    }

    /// Output extent along each axis, or `None` when the kernel does not fit.
    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.padding[a];
            if span < self.kernel[a] || self.stride[a] == 0 {
                return None;
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    fn volume(&self) -> usize {
        self.kernel.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3d {
    pub geometry: ConvGeometry,
    /// `[kernel volume * in_channels, out_channels]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv3d) -> Self {
        Self {
            weight: Array2::zeros(conv.weight.raw_dim()),
            bias: Array1::zeros(conv.bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

impl Conv3d {
    /// He-normal init for layers followed by a rectifier, unit-gain
    /// (`1/fan_in` variance) for linear output layers.
    pub fn init<R: Rng>(
        geometry: ConvGeometry,
        in_channels: usize,
        out_channels: usize,
        rectified: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = geometry.volume() * in_channels;
        let gain = if rectified { 2.0 } else { 1.0 };
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_fn((fan_in, out_channels), |_| normal.sample(rng));
        Self {
            geometry,
            weight,
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / self.geometry.volume()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }

    /// Returns the output together with the unfolded input needed by
    /// [`Conv3d::backward`]. Pointwise layers reuse the input directly.
    pub fn forward(&self, input: &Act) -> (Act, Array2<f64>) {
        let out_dims = self
            .geometry
            .output_dims(input.dims)
            .expect("geometry validated by the encoder config");
        let cols = if self.geometry.is_pointwise() {
            input.data.clone()
        } else {
            im2col(input, &self.geometry, out_dims)
        };
        let mut data = cols.dot(&self.weight);
        data += &self.bias;
        (Act { dims: out_dims, data }, cols)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(
        &self,
        input_dims: [usize; 3],
        cols: &Array2<f64>,
        d_out: &Array2<f64>,
        grad: &mut ConvGrad,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &cols.t().dot(d_out);
        grad.bias += &d_out.sum_axis(Axis(0));
        if !need_input_grad {
            return None;
        }
        let d_cols = d_out.dot(&self.weight.t());
        if self.geometry.is_pointwise() {
            return Some(d_cols);
        }
        let out_dims = self.geometry.output_dims(input_dims).expect("validated");
        Some(col2im(&d_cols, &self.geometry, input_dims, out_dims, self.in_channels()))
    }
}

fn im2col(input: &Act, g: &ConvGeometry, out_dims: [usize; 3]) -> Array2<f64> {
    let ch = input.channels();
    let [kh, kw, kt] = g.kernel;
    let mut cols = Array2::zeros((out_dims.iter().product(), g.volume() * ch));
    let src = input.data.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    let row_len = g.volume() * ch;
    for oh in 0..out_dims[0] {
        for ow in 0..out_dims[1] {
            for ot in 0..out_dims[2] {
                let row = cell_index(out_dims, oh, ow, ot) * row_len;
                for i in 0..kh {
                    let Some(h) = (oh * g.stride[0] + i).checked_sub(g.padding[0]) else {
                        continue;
                    };
                    if h >= input.dims[0] {
                        continue;
                    }
                    for j in 0..kw {
                        let Some(w) = (ow * g.stride[1] + j).checked_sub(g.padding[1]) else {
                            continue;
                        };
                        if w >= input.dims[1] {
                            continue;
                        }
                        for k in 0..kt {
                            let Some(t) = (ot * g.stride[2] + k).checked_sub(g.padding[2]) else {
                                continue;
                            };
                            if t >= input.dims[2] {
                                continue;
                            }
                            let s = cell_index(input.dims, h, w, t) * ch;
                            let d = row + ((i * kw + j) * kt + k) * ch;
                            dst[d..d + ch].copy_from_slice(&src[s..s + ch]);
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    d_cols: &Array2<f64>,
    g: &ConvGeometry,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    ch: usize,
) -> Array2<f64> {
    let [kh, kw, kt] = g.kernel;
    let mut d_in = Array2::zeros((in_dims.iter().product(), ch));
    let src = d_cols.as_slice().expect("standard layout");
    let dst = d_in.as_slice_mut().expect("standard layout");
    let row_len = g.volume() * ch;
    for oh in 0..out_dims[0] {
        for ow in 0..out_dims[1] {
            for ot in 0..out_dims[2] {
                let row = cell_index(out_dims, oh, ow, ot) * row_len;
                for i in 0..kh {
                    let Some(h) = (oh * g.stride[0] + i).checked_sub(g.padding[0]) else {
                        continue;
                    };
                    if h >= in_dims[0] {
                        continue;
                    }
                    for j in 0..kw {
                        let Some(w) = (ow * g.stride[1] + j).checked_sub(g.padding[1]) else {
                            continue;
                        };
                        if w >= in_dims[1] {
                            continue;
                        }
                        for k in 0..kt {
                            let Some(t) = (ot * g.stride[2] + k).checked_sub(g.padding[2]) else {
                                continue;
                            };
                            if t >= in_dims[2] {
                                continue;
                            }
                            let d = cell_index(in_dims, h, w, t) * ch;
                            let s = row + ((i * kw + j) * kt + k) * ch;
                            for c in 0..ch {
                                dst[d + c] += src[s + c];
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

pub fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Masks `grad` where the rectified output was not positive.
pub fn relu_backward(output: &Array2<f64>, grad: &mut Array2<f64>) {
    ndarray::Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}
