//! Finite-difference oracle for the hand-written backward pass.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{backward_batch, forward_batch};
use super::RegressorModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Parameters excluded because ±ε straddled a rectifier or pool tie.
    pub skipped_ties: usize,
    pub max_rel_err: f64,
    pub epsilon: f64,
}

fn loss_and_signature(model: &RegressorModel<f64>, input: &Array2<f64>, target: &[f64; 3]) -> (f64, u64) {
    let (pred, cache) = forward_batch(model, input, 1, true);
    let loss = (0..3).map(|k| (pred[(k, 0)] - target[k]).powi(2)).sum::<f64>() / 3.0;
    (loss, cache.unwrap().decision_signature())
}

/// Compare analytic gradients against central finite differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` on `n_samples` randomly chosen parameters
/// (all parameters if the model is smaller than that). Runs in f64.
///
/// A parameter whose ±ε evaluations make different discrete decisions
/// (rectifier sign or pool argmax) sits within ε of a non-differentiable tie
/// and is skipped. Relative error uses `|ga − gfd| / max(|ga|, |gfd|, 1e-6)`.
pub fn gradient_check(
    model: &RegressorModel<f64>,
    cutout: &Array2<f64>,
    target: [f64; 3],
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> GradCheckReport {
    let (h, w) = cutout.dim();
    assert_eq!((h, w), (model.input_h, model.input_w), "input must match model dims");
    let input = cutout
        .view()
        .into_shape_with_order((1, h * w))
        .expect("contiguous cutout")
        .to_owned();

    // analytic gradient
    let (pred, cache) = forward_batch(model, &input, 1, true);
    let mut dout = Array2::<f64>::zeros((3, 1));
    for k in 0..3 {
        dout[(k, 0)] = 2.0 * (pred[(k, 0)] - target[k]) / 3.0;
    }
    let grads = backward_batch(model, cache.as_ref().unwrap(), &dout);
    let flat_grads: Vec<f64> = grads.tensors.iter().flat_map(|t| t.iter().copied()).collect();

    let total = model.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n_samples >= total {
        (0..total).collect()
    } else {
        sample(&mut rng, total, n_samples).into_iter().collect()
    };

    let mut probe = model.clone();
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut max_rel = 0.0f64;
    for idx in picks {
        let orig = probe.param_get(idx);
        probe.param_set(idx, orig + epsilon);
        let (lp, sig_p) = loss_and_signature(&probe, &input, &target);
        probe.param_set(idx, orig - epsilon);
        let (lm, sig_m) = loss_and_signature(&probe, &input, &target);
        probe.param_set(idx, orig);
        if sig_p != sig_m {
            skipped += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * epsilon);
        let ga = flat_grads[idx];
        let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
        checked += 1;
    }
    GradCheckReport { checked, skipped_ties: skipped, max_rel_err: max_rel, epsilon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rods::{Role, RodId, Team};

    fn sample_input(h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(i, j)| (((i * 131 + j * 37) % 251) as f64) / 251.0)
    }

    #[test]
    fn linear_head_gradients_are_exact() {
        // zero conv weights freeze the backbone at zero features, leaving a
        // model exactly linear in the head parameters
        let rod = RodId::new(Team::Black, Role::Striker);
        let mut model: RegressorModel<f64> = RegressorModel::init(rod, 32, 16, 3).unwrap();
        for c in &mut model.convs {
            c.weight.fill(0.0);
            c.bias.fill(0.0);
        }
        let input = sample_input(16, 32);
        let report = gradient_check(&model, &input, [0.4, -0.2, 0.9], 1e-6, 4000, 1);
        // only head params have nonzero grads but every check must agree
        assert!(report.max_rel_err <= 1e-8, "{report:?}");
    }

    #[test]
    fn full_model_small_input_gradients_match() {
        let rod = RodId::new(Team::White, Role::Defense);
        let model: RegressorModel<f64> = RegressorModel::init(rod, 32, 16, 17).unwrap();
        let input = sample_input(16, 32);
        let report = gradient_check(&model, &input, [0.1, 0.7, -0.7], 1e-5, 250, 2);
        assert!(report.checked >= 200, "{report:?}");
        assert!(report.max_rel_err <= 1e-5, "{report:?}");
    }

    #[test]
    fn zero_image_zeroes_first_layer_weight_gradients() {
        let rod = RodId::new(Team::Black, Role::Goal);
        let model: RegressorModel<f64> = RegressorModel::init(rod, 32, 16, 5).unwrap();
        let input = Array2::<f64>::zeros((16, 32));
        let flat = input.view().into_shape_with_order((1, 16 * 32)).unwrap().to_owned();
        let (pred, cache) = forward_batch(&model, &flat, 1, true);
        let mut dout = Array2::<f64>::zeros((3, 1));
        for k in 0..3 {
            dout[(k, 0)] = 2.0 * (pred[(k, 0)] - 0.5) / 3.0;
        }
        let grads = backward_batch(&model, cache.as_ref().unwrap(), &dout);
        assert!(grads.tensors[0].iter().all(|&g| g == 0.0));
    }
}
