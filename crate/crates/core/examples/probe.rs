// Temporary learnability/performance probe; not part of the deliverable.
use std::time::Instant;

use foostate_core::angles::{circular_distance, encode_angle, normalize_shift, tilt_from_accel, to_reported};
use foostate_core::cv;
use foostate_core::nn::{predict_rod_state, train, TrainConfig, TrainSample};
use foostate_core::rods::{Role, RodId, Team};
use foostate_core::sim::{
    extract_cutout, random_state, render_frame, simulate_accel, AccelNoiseModel, RenderOptions,
    WhiteRotationBias,
};
use foostate_core::table::default_table_geometry;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let geometry = default_table_geometry();
    let noise = AccelNoiseModel::default();
    let bias = WhiteRotationBias::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    let rods = [
        RodId::new(Team::Black, Role::Defense),
        RodId::new(Team::White, Role::Goal),
        RodId::new(Team::White, Role::Midfield),
    ];

    let t0 = Instant::now();
    let mut samples: Vec<Vec<TrainSample>> = vec![Vec::new(); rods.len()];
    let mut labels: Vec<Vec<(f64, f64)>> = vec![Vec::new(); rods.len()];
    for i in 0..n {
        let gt = random_state(&geometry, &mut rng, Some(&bias));
        let opts = RenderOptions { seed: 42 ^ i as u64, ..Default::default() };
        let img = render_frame(&geometry, &gt, &opts).unwrap();
        for (k, &rid) in rods.iter().enumerate() {
            let cfg = geometry.rod(rid);
            let cvs = cv::detect_shift(&img, cfg, &geometry.calibration, 100, 3).unwrap();
            let reading = simulate_accel(gt.rod(rid).rotation_deg, &noise, &mut rng);
            let rot = to_reported(tilt_from_accel(reading).unwrap());
            let enc = encode_angle(rot);
            let s = normalize_shift(cvs, cfg.shift_half_range_mm).unwrap();
            let input = extract_cutout(&img, cfg, 256, 64);
            samples[k].push(TrainSample { input, target: [s as f32, enc.cos_v as f32, enc.sin_v as f32] });
            labels[k].push((cvs, rot));
        }
    }
    println!("capture+prep {n} frames: {:.1}s", t0.elapsed().as_secs_f64());

    for (k, &rid) in rods.iter().enumerate() {
        let cfg = TrainConfig { epochs, seed: 7, ..Default::default() };
        let t1 = Instant::now();
        let (model, hist) = train(rid, 256, 64, &samples[k], &cfg).unwrap();
        let dt = t1.elapsed().as_secs_f64();
        let (_, val_idx) = foostate_core::nn::split_indices(samples[k].len(), 0.8, 7);
        let rc = geometry.rod(rid);
        let mut s_mae = 0.0;
        let mut r_mae = 0.0;
        for &i in &val_idx {
            let inp: Array2<f32> = samples[k][i].input.clone();
            let st = predict_rod_state(&model, &inp, rc).unwrap();
            s_mae += (st.shift_mm - labels[k][i].0).abs();
            r_mae += circular_distance(st.rotation_deg, labels[k][i].1);
        }
        s_mae /= val_idx.len() as f64;
        r_mae /= val_idx.len() as f64;
        println!(
            "{rid}: train {dt:.1}s ({:.2}s/epoch) | loss e0 {:.4} -> {:.5} (val {:.5}) | val shift MAE {s_mae:.2} mm | val rot MAE {r_mae:.2} deg",
            dt / epochs as f64,
            hist[0].train_loss,
            hist.last().unwrap().train_loss,
            hist.last().unwrap().val_loss,
        );
    }
}
