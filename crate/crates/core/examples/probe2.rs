// Temporary phase-timing probe; not part of the deliverable.
use std::time::Instant;

use foostate_core::nn::{RegressorModel, TrainConfig, TrainSample};
use foostate_core::rods::{Role, RodId, Team};
use ndarray::Array2;

fn main() {
    let b = 16usize;
    let data: Vec<TrainSample> = (0..b)
        .map(|i| TrainSample {
            input: Array2::from_shape_fn((64, 256), |(r, c)| ((r * 31 + c * 7 + i) % 255) as f32 / 255.0),
            target: [0.1, 0.2, 0.3],
        })
        .collect();
    // one batch forward+backward through the training entry point, many reps
    let cfg = TrainConfig { epochs: 20, batch_size: b, split_ratio: 1.0, seed: 1, ..Default::default() };
    let t = Instant::now();
    let (_m, h) = foostate_core::nn::train(RodId::new(Team::Black, Role::Goal), 256, 64, &data, &cfg).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("20 fwd+bwd batches of {b}: {:.3}s -> {:.1} ms/batch (last loss {:.4})", dt, dt / 20.0 * 1000.0, h.last().unwrap().train_loss);

    // forward-only timing via the public single forward
    let m = RegressorModel::<f32>::init(RodId::new(Team::Black, Role::Goal), 256, 64, 1).unwrap();
    let img = &data[0].input;
    let t = Instant::now();
    for _ in 0..64 {
        let _ = m.forward(img).unwrap();
    }
    println!("single forward: {:.2} ms", t.elapsed().as_secs_f64() / 64.0 * 1000.0);
}
