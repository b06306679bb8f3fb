//! Training loop: MSE loss, Adam, deterministic shuffled 80/20 split.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{backward_batch_ws, forward_batch_ws, Grads, Workspace};
use super::{NnError, RegressorModel};
use crate::rods::RodId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

/// One input/target pair: a [0, 1]-scaled cutout and the
/// (normalized shift, cos, sin) target vector.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Array2<f32>,
    pub target: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Deterministic shuffled train/validation index partition: the first
/// ⌈ratio·n⌉ shuffled indices train, the remaining ⌊(1-ratio)·n⌋ validate.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (ratio * n as f64).ceil().min(n as f64) as usize;
    let val = idx.split_off(n_train);
    (idx, val)
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(model: &RegressorModel<f32>, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    fn step(&mut self, model: &mut RegressorModel<f32>, grads: &Grads<f32>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = self.lr as f32;
        let eps = self.epsilon as f32;
        let (bc1, bc2) = (bc1 as f32, bc2 as f32);
        for (((params, grad), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grads.tensors.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            debug_assert_eq!(params.len(), grad.len());
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn gather_batch(data: &[TrainSample], idx: &[usize], input_len: usize) -> (Array2<f32>, Array2<f32>) {
    let b = idx.len();
    let mut input = Array2::<f32>::zeros((1, b * input_len));
    let mut target = Array2::<f32>::zeros((3, b));
    {
        let dst = input.row_mut(0);
        let mut dst = dst;
        let dst = dst.as_slice_mut().unwrap();
        for (k, &i) in idx.iter().enumerate() {
            let src = data[i].input.as_slice().expect("contiguous sample");
            dst[k * input_len..(k + 1) * input_len].copy_from_slice(src);
            for c in 0..3 {
                target[(c, k)] = data[i].target[c];
            }
        }
    }
    (input, target)
}

/// Mean squared error over components and batch, plus its head-output
/// gradient.
fn mse_and_grad(pred: &Array2<f32>, target: &Array2<f32>) -> (f64, Array2<f32>) {
    let n = (pred.len()) as f64;
    let mut grad = pred.clone();
    grad -= target;
    let loss = grad.iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / n;
    grad.mapv_inplace(|d| d * (2.0 / n as f32));
    (loss, grad)
}

fn dataset_loss(
    model: &RegressorModel<f32>,
    data: &[TrainSample],
    idx: &[usize],
    batch_size: usize,
    ws: &mut Workspace<f32>,
) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    let input_len = model.input_h * model.input_w;
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let (input, target) = gather_batch(data, chunk, input_len);
        let (pred, _) = forward_batch_ws(model, &input, chunk.len(), false, ws);
        let diff = &pred - &target;
        total += diff.iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / 3.0;
    }
    total / idx.len() as f64
}

/// Train one rod's regressor. The dataset is split 80/20 by shuffled index
/// with `cfg.seed` (the same partition [`split_indices`] hands to callers);
/// the model trains for exactly `cfg.epochs` passes and the returned history
/// has one entry per epoch. Two runs with the same configuration produce
/// bit-identical models and histories.
pub fn train(
    rod: RodId,
    input_w: usize,
    input_h: usize,
    data: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(RegressorModel<f32>, Vec<EpochStats>), NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let input_len = input_h * input_w;
    for s in data {
        let (h, w) = s.input.dim();
        if (h, w) != (input_h, input_w) {
            return Err(NnError::ShapeMismatch { want_h: input_h, want_w: input_w, got_h: h, got_w: w });
        }
    }
    let (train_idx, val_idx) = split_indices(data.len(), cfg.split_ratio, cfg.seed);
    let mut model = RegressorModel::<f32>::init(rod, input_w, input_h, cfg.seed)?;
    let mut adam = Adam::new(&model, cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    let mut ws = Workspace::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let (input, target) = gather_batch(data, chunk, input_len);
            let (pred, cache) = forward_batch_ws(&model, &input, chunk.len(), true, &mut ws);
            let cache = cache.unwrap();
            let (loss, dout) = mse_and_grad(&pred, &target);
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: batch_no });
            }
            epoch_loss += loss * chunk.len() as f64;
            let grads = backward_batch_ws(&model, &cache, &dout, &mut ws);
            ws.recycle(cache);
            adam.step(&mut model, &grads);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            dataset_loss(&model, data, &val_idx, cfg.batch_size.max(1), &mut ws)
        };
        history.push(EpochStats { epoch, train_loss, val_loss });
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rods::{Role, Team};
    use ndarray::Array2;

    fn rod() -> RodId {
        RodId::new(Team::Black, Role::Goal)
    }

    fn constant_target_data(n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| TrainSample {
                input: Array2::from_shape_fn((16, 32), |(r, c)| ((r * 31 + c * 7 + i) % 11) as f32 / 11.0),
                target: [0.3, -0.6, 0.5],
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        for (n, ratio) in [(500usize, 0.8), (10, 0.8), (1, 0.8), (7, 0.5)] {
            let (tr, va) = split_indices(n, ratio, 9);
            assert_eq!(tr.len(), (ratio * n as f64).ceil() as usize);
            assert_eq!(tr.len() + va.len(), n);
            let mut all: Vec<usize> = tr.iter().chain(va.iter()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(split_indices(500, 0.8, 3).0.len(), 400);
        assert_eq!(split_indices(500, 0.8, 3).1.len(), 100);
        // determinism
        assert_eq!(split_indices(100, 0.8, 5), split_indices(100, 0.8, 5));
        assert_ne!(split_indices(100, 0.8, 5), split_indices(100, 0.8, 6));
    }

    #[test]
    fn constant_target_is_learned_within_fifty_epochs() {
        let data = constant_target_data(10);
        let cfg = TrainConfig { batch_size: 4, ..Default::default() };
        let (_, history) = train(rod(), 32, 16, &data, &cfg).unwrap();
        assert_eq!(history.len(), cfg.epochs);
        let last = history.last().unwrap();
        assert!(last.train_loss < 1e-3, "final train loss {}", last.train_loss);
    }

    #[test]
    fn same_seed_same_history() {
        let data = constant_target_data(8);
        let cfg = TrainConfig { epochs: 5, batch_size: 4, seed: 11, ..Default::default() };
        let (m1, h1) = train(rod(), 32, 16, &data, &cfg).unwrap();
        let (m2, h2) = train(rod(), 32, 16, &data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn tiny_learning_rate_barely_moves_the_loss() {
        let data = constant_target_data(8);
        let cfg = TrainConfig { epochs: 2, learning_rate: 1e-6, batch_size: 8, seed: 2, ..Default::default() };
        let (_, history) = train(rod(), 32, 16, &data, &cfg).unwrap();
        assert!(
            (history[1].train_loss - history[0].train_loss).abs() < 1e-3,
            "losses {:?}",
            history
        );
    }

    #[test]
    fn empty_dataset_and_nonfinite_loss_are_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(rod(), 32, 16, &[], &cfg), Err(NnError::EmptyDataset)));

        let mut data = constant_target_data(4);
        data[0].target = [f32::NAN, 0.0, 0.0];
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
        assert!(matches!(
            train(rod(), 32, 16, &data, &cfg),
            Err(NnError::NonFiniteLoss { .. })
        ));
    }
}
