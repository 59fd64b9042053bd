//! Per-frame affine warps (rotation plus resized crop) in normalized
//! coordinates, so one transform applies at any spatial resolution.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::cell_index;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub rotation_deg: f64,
    /// Side of the crop window relative to the frame, in `(0, 1]`.
    pub scale: f64,
    /// Crop centre offset in normalized `[-1, 1]` coordinates.
    pub shift: [f64; 2],
}

impl Affine {
    pub const MAX_ROTATION_DEG: f64 = 15.0;
    pub const MIN_SCALE: f64 = 0.7;

    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            shift: [0.0, 0.0],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let rotation_deg = rng.random_range(-Self::MAX_ROTATION_DEG..=Self::MAX_ROTATION_DEG);
        let scale = rng.random_range(Self::MIN_SCALE..=1.0);
        let slack = 1.0 - scale;
        let shift = if slack > 0.0 {
            [rng.random_range(-slack..=slack), rng.random_range(-slack..=slack)]
        } else {
            [0.0, 0.0]
        };
        Self {
            rotation_deg,
            scale,
            shift,
        }
    }

    /// Source position (normalized `(x, y)`) sampled by output position `(u, v)`.
    fn source(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (
            self.scale * (c * u - s * v) + self.shift[0],
            self.scale * (s * u + c * v) + self.shift[1],
        )
    }
}

/// Bilinear taps of every output pixel on an `h x w` grid: up to four
/// `(source pixel, weight)` pairs, zero padding outside the frame.
#[derive(Clone, Debug)]
pub struct WarpPlan {
    pub height: usize,
    pub width: usize,
    taps: Vec<Vec<(usize, f64)>>,
    identity: bool,
}

impl WarpPlan {
    pub fn new(affine: &Affine, height: usize, width: usize) -> Self {
        let identity = affine.is_identity();
        let mut taps = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                if identity {
                    taps.push(vec![(i * width + j, 1.0)]);
                    continue;
                }
                let u = (2 * j + 1) as f64 / width as f64 - 1.0;
                let v = (2 * i + 1) as f64 / height as f64 - 1.0;
                let (us, vs) = affine.source(u, v);
                let x = ((us + 1.0) * width as f64 - 1.0) / 2.0;
                let y = ((vs + 1.0) * height as f64 - 1.0) / 2.0;
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let mut t = Vec::with_capacity(4);
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let (sy, sx) = (y0 + dy, x0 + dx);
                        let weight = wy * wx;
                        if weight == 0.0 || sy < 0.0 || sx < 0.0 {
                            continue;
                        }
                        let (sy, sx) = (sy as usize, sx as usize);
                        if sy < height && sx < width {
                            t.push((sy * width + sx, weight));
                        }
                    }
                }
                taps.push(t);
            }
        }
        Self {
            height,
            width,
            taps,
            identity,
        }
    }

    /// Warps every frame and channel of a `[h*w*t, ch]` volume.
    pub fn apply(&self, data: &Array2<f64>, dims: [usize; 3]) -> Array2<f64> {
        assert_eq!([dims[0], dims[1]], [self.height, self.width], "warp grid mismatch");
        if self.identity {
            return data.clone();
        }
        let ch = data.ncols();
        let mut out = Array2::zeros(data.raw_dim());
        let src = data.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("standard layout");
        for (pix, taps) in self.taps.iter().enumerate() {
            let (i, j) = (pix / self.width, pix % self.width);
            for t in 0..dims[2] {
                let o = cell_index(dims, i, j, t) * ch;
                for &(sp, w) in taps {
                    let s = cell_index(dims, sp / self.width, sp % self.width, t) * ch;
                    for c in 0..ch {
                        dst[o + c] += w * src[s + c];
                    }
                }
            }
        }
        out
    }

    /// Transpose of [`WarpPlan::apply`], used to backpropagate through it.
    pub fn apply_adjoint(&self, grad: &Array2<f64>, dims: [usize; 3]) -> Array2<f64> {
        if self.identity {
            return grad.clone();
        }
        let ch = grad.ncols();
        let mut out = Array2::zeros(grad.raw_dim());
        let src = grad.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("standard layout");
        for (pix, taps) in self.taps.iter().enumerate() {
            let (i, j) = (pix / self.width, pix % self.width);
            for t in 0..dims[2] {
                let o = cell_index(dims, i, j, t) * ch;
                for &(sp, w) in taps {
                    let s = cell_index(dims, sp / self.width, sp % self.width, t) * ch;
                    for c in 0..ch {
                        dst[s + c] += w * src[o + c];
                    }
                }
            }
        }
        out
    }
}
