//! Per-rod convolutional regressor with a (shift, cos, sin) head.
//!
//! The backbone is a compact from-scratch stack: three 3×3 convolution blocks
//! (channels 1→8→16→32, stride 1, zero padding), each followed by a rectifier
//! and a 2×2 max-pool, then a global average pool and a linear head with
//! output dimension three and no activation. Forward and backward passes are
//! written here directly; the only external numeric machinery is the matrix
//! multiply behind the im2col convolutions.
//!
//! Everything is generic over f32/f64: training runs in f32, the
//! finite-difference gradient oracle in f64.

mod batch;
mod gradcheck;
mod model_io;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use model_io::{load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use train::{split_indices, train, EpochStats, TrainConfig, TrainSample};

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::angles::{decode_angle, denormalize_shift, AngleEncoding, AngleError};
use crate::rods::RodId;
use crate::state::RodState;
use crate::table::RodConfig;

pub(crate) use batch::forward_batch;

/// Channel progression of the conv stack, input included.
pub const CONV_CHANNELS: [usize; 4] = [1, 8, 16, 32];
pub const KERNEL: usize = 3;
pub const HEAD_OUT: usize = 3;
/// Default regressor input size (along-rod × across-rod pixels).
pub const DEFAULT_INPUT_W: usize = 256;
pub const DEFAULT_INPUT_H: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("input shape (h={got_h}, w={got_w}) does not match model input (h={want_h}, w={want_w})")]
    ShapeMismatch { want_h: usize, want_w: usize, got_h: usize, got_w: usize },
    #[error("input dimensions must be divisible by 8 for the three pool stages, got {0}x{1}")]
    NotPoolable(usize, usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Angle(#[from] AngleError),
    #[error("model file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_c, in_c, 3, 3]`
    pub weight: Array4<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Raw head output for one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub s_norm: f64,
    pub cos_v: f64,
    pub sin_v: f64,
}

impl Prediction {
    pub fn as_array(&self) -> [f64; 3] {
        [self.s_norm, self.cos_v, self.sin_v]
    }
}

/// Mean squared error over the three prediction components.
pub fn loss(pred: &Prediction, target: &Prediction) -> f64 {
    let p = pred.as_array();
    let t = target.as_array();
    p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel<T: Scalar> {
    pub rod: RodId,
    pub input_w: usize,
    pub input_h: usize,
    pub convs: Vec<Conv2d<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> RegressorModel<T> {
    /// Fresh model with He-uniform weights drawn deterministically from
    /// `seed`. Values are drawn in f64 so f32 and f64 models initialized from
    /// the same seed agree to rounding.
    pub fn init(rod: RodId, input_w: usize, input_h: usize, seed: u64) -> Result<Self, NnError> {
        if input_w % 8 != 0 || input_h % 8 != 0 || input_w == 0 || input_h == 0 {
            return Err(NnError::NotPoolable(input_h, input_w));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            T::from_f64(rng.random_range(-limit..limit))
        };
        let convs = (0..CONV_CHANNELS.len() - 1)
            .map(|l| {
                let (in_c, out_c) = (CONV_CHANNELS[l], CONV_CHANNELS[l + 1]);
                let fan_in = in_c * KERNEL * KERNEL;
                Conv2d {
                    weight: Array4::from_shape_simple_fn((out_c, in_c, KERNEL, KERNEL), || draw(fan_in)),
                    bias: Array1::zeros(out_c),
                }
            })
            .collect();
        let head_in = *CONV_CHANNELS.last().unwrap();
        let head = Linear {
            weight: Array2::from_shape_simple_fn((HEAD_OUT, head_in), || draw(head_in)),
            bias: Array1::zeros(HEAD_OUT),
        };
        Ok(RegressorModel { rod, input_w, input_h, convs, head })
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter tensors as flat slices in the canonical order
    /// (conv1 w, conv1 b, ..., head w, head b). All arrays are standard
    /// layout, so the slices are the raw parameter data.
    pub(crate) fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.convs.len() * 2 + 2);
        for c in &self.convs {
            out.push(c.weight.as_slice().unwrap());
            out.push(c.bias.as_slice().unwrap());
        }
        out.push(self.head.weight.as_slice().unwrap());
        out.push(self.head.bias.as_slice().unwrap());
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.convs.len() * 2 + 2);
        for c in &mut self.convs {
            out.push(c.weight.as_slice_mut().unwrap());
            out.push(c.bias.as_slice_mut().unwrap());
        }
        out.push(self.head.weight.as_slice_mut().unwrap());
        out.push(self.head.bias.as_slice_mut().unwrap());
        out
    }

    pub(crate) fn param_get(&self, flat: usize) -> T {
        let mut rest = flat;
        for s in self.param_slices() {
            if rest < s.len() {
                return s[rest];
            }
            rest -= s.len();
        }
        panic!("flat parameter index {flat} out of range");
    }

    pub(crate) fn param_set(&mut self, flat: usize, v: T) {
        let mut rest = flat;
        for s in self.param_slices_mut() {
            if rest < s.len() {
                s[rest] = v;
                return;
            }
            rest -= s.len();
        }
        panic!("flat parameter index {flat} out of range");
    }

    /// Convert parameters to another precision (used to lift trained f32
    /// models into the f64 gradient-check mode).
    pub fn convert<U: Scalar>(&self) -> RegressorModel<U> {
        RegressorModel {
            rod: self.rod,
            input_w: self.input_w,
            input_h: self.input_h,
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    weight: c.weight.mapv(|v| U::from_f64(v.to_f64())),
                    bias: c.bias.mapv(|v| U::from_f64(v.to_f64())),
                })
                .collect(),
            head: Linear {
                weight: self.head.weight.mapv(|v| U::from_f64(v.to_f64())),
                bias: self.head.bias.mapv(|v| U::from_f64(v.to_f64())),
            },
        }
    }

    /// Deterministic single-image forward pass.
    pub fn forward(&self, cutout: &Array2<T>) -> Result<Prediction, NnError> {
        let (h, w) = cutout.dim();
        if (h, w) != (self.input_h, self.input_w) {
            return Err(NnError::ShapeMismatch {
                want_h: self.input_h,
                want_w: self.input_w,
                got_h: h,
                got_w: w,
            });
        }
        let input = cutout
            .view()
            .into_shape_with_order((1, h * w))
            .expect("contiguous cutout")
            .to_owned();
        let (pred, _) = forward_batch(self, &input, 1, false);
        Ok(Prediction {
            s_norm: pred[(0, 0)].to_f64(),
            cos_v: pred[(1, 0)].to_f64(),
            sin_v: pred[(2, 0)].to_f64(),
        })
    }
}

/// Decode a head output into a rod state: clamp-and-denormalize the shift,
/// full-quadrant decode of the angle pair.
pub fn predict_rod_state<T: Scalar>(
    model: &RegressorModel<T>,
    cutout: &Array2<T>,
    rod: &RodConfig,
) -> Result<RodState, NnError> {
    let pred = model.forward(cutout)?;
    let shift_mm = denormalize_shift(pred.s_norm, rod.shift_half_range_mm)?;
    let rotation_deg = decode_angle(AngleEncoding { cos_v: pred.cos_v, sin_v: pred.sin_v })?;
    Ok(RodState { shift_mm, rotation_deg })
}
