//! Quantitative evaluation: per-rod MAE tables, the acceptance gate, and the
//! inference-latency benchmark.
//!
//! The three thresholds are the system requirements the detector is gated
//! against; the gate is monotone (improving any error never turns a pass
//! into a fail).

use std::sync::Mutex;
use std::time::Instant;

use image::GrayImage;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angles::circular_distance;
use crate::dataset::Dataset;
use crate::nn::{predict_rod_state, NnError, RegressorModel};
use crate::rods::RodId;
use crate::sim::extract_cutout;
use crate::state::RodState;
use crate::table::TableGeometry;

/// Criterion a: a figure foot is 22 mm wide, so a ±11 mm shift error still
/// meets the ball.
pub const SHIFT_MAE_LIMIT_MM: f64 = 11.0;
/// Criterion b: a vertically predicted figure still blocks up to ±42°.
pub const ROTATION_MAE_LIMIT_DEG: f64 = 42.0;
/// Criterion c: one 60 FPS camera frame, evaluated on the per-rod median
/// under the per-rod parallelization argument.
pub const REALTIME_LATENCY_LIMIT_MS: f64 = 16.6;

pub const MIN_BENCH_REPETITIONS: usize = 30;
pub const MIN_BENCH_WARMUP: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("paired lists must be nonempty and of equal length ({0} vs {1})")]
    BadPairing(usize, usize),
    #[error("report has no per-rod entries")]
    EmptyReport,
    #[error("expected one model per rod in canonical order, got {0}")]
    BadModelSet(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("json: {0}")]
    Json(String),
}

/// Mean absolute shift error in mm.
pub fn shift_mae(preds: &[f64], gts: &[f64]) -> Result<f64, EvalError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(EvalError::BadPairing(preds.len(), gts.len()));
    }
    Ok(preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}

/// Mean shortest-arc rotation error in degrees.
pub fn rotation_mae(preds: &[f64], gts: &[f64]) -> Result<f64, EvalError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(EvalError::BadPairing(preds.len(), gts.len()));
    }
    Ok(preds.iter().zip(gts).map(|(p, g)| circular_distance(*p, *g)).sum::<f64>() / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodErrors {
    pub rod: String,
    pub shift_mae_mm: f64,
    pub rotation_mae_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// true when the 8 rods were fanned out across threads
    pub parallel: bool,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub per_rod_mean_ms: f64,
    pub per_rod_median_ms: f64,
    pub fps_mean: f64,
    pub fps_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub shift_pass: bool,
    pub rotation_pass: bool,
    /// None when the report carries no latency block; the gate then covers
    /// the two error criteria only.
    pub latency_pass: Option<bool>,
    pub pass: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub per_rod: Vec<RodErrors>,
    pub average_shift_mae_mm: f64,
    pub average_rotation_mae_deg: f64,
    /// Absent when the evaluation skipped the latency benchmark (timings are
    /// wall-clock and would break byte-level report reproducibility).
    pub latency: Option<LatencyStats>,
    pub gate: GateResult,
}

/// Apply the three criteria. Boundary semantics follow their definitions:
/// the MAE limits are inclusive ("should not exceed"), the latency limit is
/// strict ("lower than").
pub fn acceptance_gate(per_rod: &[RodErrors], latency: Option<&LatencyStats>) -> GateResult {
    let mut failures = Vec::new();
    let mut shift_pass = true;
    let mut rotation_pass = true;
    for rod in per_rod {
        if rod.shift_mae_mm > SHIFT_MAE_LIMIT_MM {
            shift_pass = false;
            failures.push(format!(
                "{}: shift MAE {:.2} mm exceeds {SHIFT_MAE_LIMIT_MM} mm",
                rod.rod, rod.shift_mae_mm
            ));
        }
        if rod.rotation_mae_deg > ROTATION_MAE_LIMIT_DEG {
            rotation_pass = false;
            failures.push(format!(
                "{}: rotation MAE {:.2} deg exceeds {ROTATION_MAE_LIMIT_DEG} deg",
                rod.rod, rod.rotation_mae_deg
            ));
        }
    }
    let latency_pass = latency.map(|l| l.per_rod_median_ms < REALTIME_LATENCY_LIMIT_MS);
    if latency_pass == Some(false) {
        failures.push(format!(
            "per-rod median inference {:.2} ms not below {REALTIME_LATENCY_LIMIT_MS} ms",
            latency.unwrap().per_rod_median_ms
        ));
    }
    let pass = shift_pass && rotation_pass && latency_pass.unwrap_or(true);
    GateResult { shift_pass, rotation_pass, latency_pass, pass, failures }
}

/// Assemble the full report from per-rod errors and a latency block.
pub fn build_report(
    model: &str,
    per_rod: Vec<RodErrors>,
    latency: Option<LatencyStats>,
) -> Result<EvalReport, EvalError> {
    if per_rod.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let n = per_rod.len() as f64;
    let average_shift_mae_mm = per_rod.iter().map(|r| r.shift_mae_mm).sum::<f64>() / n;
    let average_rotation_mae_deg = per_rod.iter().map(|r| r.rotation_mae_deg).sum::<f64>() / n;
    let gate = acceptance_gate(&per_rod, latency.as_ref());
    Ok(EvalReport {
        model: model.to_string(),
        per_rod,
        average_shift_mae_mm,
        average_rotation_mae_deg,
        latency,
        gate,
    })
}

/// Per-rod prediction errors of eight trained models on the given record
/// indices (typically the validation split), measured against the
/// sensor-derived labels (CV shift, accelerometer rotation).
pub fn evaluate_models(
    dataset: &Dataset,
    models: &[RegressorModel<f32>],
    indices: &[usize],
) -> Result<Vec<RodErrors>, EvalError> {
    check_model_set(models)?;
    if indices.is_empty() {
        return Err(EvalError::BadPairing(0, 0));
    }
    let mut per_rod = Vec::with_capacity(8);
    for id in RodId::ALL {
        let model = &models[id.index()];
        let cfg = dataset.geometry.rod(id);
        let mut pred_shift = Vec::with_capacity(indices.len());
        let mut pred_rot = Vec::with_capacity(indices.len());
        let mut label_shift = Vec::with_capacity(indices.len());
        let mut label_rot = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = &dataset.records[i];
            let input = crate::dataset::rod_input(dataset, rec.frame_id, id)
                .map_err(|e| EvalError::BadModelSet(e.to_string()))?;
            let state = predict_rod_state(model, &input, cfg)?;
            pred_shift.push(state.shift_mm);
            pred_rot.push(state.rotation_deg);
            label_shift.push(rec.rods[id.index()].cv_shift_mm);
            label_rot.push(rec.rods[id.index()].accel_rotation_deg);
        }
        per_rod.push(RodErrors {
            rod: id.label(),
            shift_mae_mm: shift_mae(&pred_shift, &label_shift)?,
            rotation_mae_deg: rotation_mae(&pred_rot, &label_rot)?,
        });
    }
    Ok(per_rod)
}

fn check_model_set(models: &[RegressorModel<f32>]) -> Result<(), EvalError> {
    if models.len() != 8 {
        return Err(EvalError::BadModelSet(format!("{} models", models.len())));
    }
    for (model, id) in models.iter().zip(RodId::ALL.iter()) {
        if model.rod != *id {
            return Err(EvalError::BadModelSet(format!("model for {} found where {} expected", model.rod, id)));
        }
    }
    Ok(())
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn summarize_latency(mut overall_ms: Vec<f64>, mut rod_ms: Vec<f64>, parallel: bool) -> LatencyStats {
    let mean_ms = overall_ms.iter().sum::<f64>() / overall_ms.len() as f64;
    let per_rod_mean_ms = rod_ms.iter().sum::<f64>() / rod_ms.len() as f64;
    let median_ms = median(&mut overall_ms);
    let per_rod_median_ms = median(&mut rod_ms);
    LatencyStats {
        parallel,
        mean_ms,
        median_ms,
        per_rod_mean_ms,
        per_rod_median_ms,
        fps_mean: 1000.0 / mean_ms,
        fps_median: 1000.0 / median_ms,
    }
}

/// Wall-clock inference benchmark over full frames: per repetition, all eight
/// rods are inferred (cutout extraction included, model load excluded) either
/// sequentially or fanned out per rod. Monotonic clock; at least
/// [`MIN_BENCH_WARMUP`] warm-up iterations and [`MIN_BENCH_REPETITIONS`]
/// measured repetitions are enforced.
pub fn latency_bench(
    models: &[RegressorModel<f32>],
    geometry: &TableGeometry,
    frames: &[GrayImage],
    warmup: usize,
    repetitions: usize,
    parallel: bool,
) -> Result<LatencyStats, EvalError> {
    check_model_set(models)?;
    if frames.is_empty() {
        return Err(EvalError::BadPairing(0, 0));
    }
    let warmup = warmup.max(MIN_BENCH_WARMUP);
    let repetitions = repetitions.max(MIN_BENCH_REPETITIONS);
    let (out_w, out_h) = (models[0].input_w, models[0].input_h);

    let run_rod = |id: RodId, frame: &GrayImage| -> (f64, RodState) {
        let t = Instant::now();
        let cfg = geometry.rod(id);
        let input: Array2<f32> = extract_cutout(frame, cfg, out_w, out_h);
        let state = predict_rod_state(&models[id.index()], &input, cfg)
            .unwrap_or(RodState { shift_mm: 0.0, rotation_deg: 180.0 });
        (t.elapsed().as_secs_f64() * 1000.0, state)
    };

    let mut overall_ms = Vec::with_capacity(repetitions);
    let rod_ms = Mutex::new(Vec::with_capacity(repetitions * 8));
    for rep in 0..warmup + repetitions {
        let frame = &frames[rep % frames.len()];
        let t = Instant::now();
        let mut rep_rod_ms = [0.0f64; 8];
        if parallel {
            let times: Vec<(usize, f64)> = RodId::ALL
                .par_iter()
                .map(|&id| (id.index(), run_rod(id, frame).0))
                .collect();
            for (i, ms) in times {
                rep_rod_ms[i] = ms;
            }
        } else {
            for id in RodId::ALL {
                rep_rod_ms[id.index()] = run_rod(id, frame).0;
            }
        }
        let elapsed = t.elapsed().as_secs_f64() * 1000.0;
        if rep >= warmup {
            overall_ms.push(elapsed);
            rod_ms.lock().unwrap().extend_from_slice(&rep_rod_ms);
        }
    }
    Ok(summarize_latency(overall_ms, rod_ms.into_inner().unwrap(), parallel))
}

fn format_mae_table(title: &str, model: &str, values: &[f64; 8], average: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!("{title}\n"));
    out.push_str(
        "Model    | Black Rods                        | White Rods                        | Average\n",
    );
    out.push_str(
        "         | Goal    Defense Midfld  Striker   | Goal    Defense Midfld  Striker   |\n",
    );
    out.push_str(&format!("{model:<8} |"));
    for (i, v) in values.iter().enumerate() {
        if i == 4 {
            out.push_str(" |");
        }
        out.push_str(&format!(" {v:>7.2}"));
    }
    out.push_str(&format!(" | {average:>7.2}\n"));
    out
}

/// Plain-text tables (shift MAE, rotation MAE, inference time) plus the gate
/// verdict. Byte-stable for a fixed report.
pub fn render_report(report: &EvalReport) -> Result<String, EvalError> {
    if report.per_rod.len() != 8 {
        return Err(EvalError::EmptyReport);
    }
    let shifts: [f64; 8] = core::array::from_fn(|i| report.per_rod[i].shift_mae_mm);
    let rots: [f64; 8] = core::array::from_fn(|i| report.per_rod[i].rotation_mae_deg);
    let mut out = String::new();
    out.push_str(&format_mae_table("Shift MAE (mm)", &report.model, &shifts, report.average_shift_mae_mm));
    out.push('\n');
    out.push_str(&format_mae_table(
        "Rotation MAE (deg)",
        &report.model,
        &rots,
        report.average_rotation_mae_deg,
    ));
    out.push('\n');
    if let Some(l) = &report.latency {
        out.push_str("Inference Time\n");
        out.push_str("Model    | Mode       | Mean (ms) | Median (ms) | Rod Mean | Rod Median | FPS Mean | FPS Median\n");
        out.push_str(&format!(
            "{:<8} | {:<10} | {:>9.2} | {:>11.2} | {:>8.2} | {:>10.2} | {:>8.2} | {:>10.2}\n",
            report.model,
            if l.parallel { "parallel" } else { "sequential" },
            l.mean_ms,
            l.median_ms,
            l.per_rod_mean_ms,
            l.per_rod_median_ms,
            l.fps_mean,
            l.fps_median,
        ));
        out.push('\n');
    }
    let g = &report.gate;
    out.push_str("Acceptance\n");
    out.push_str(&format!(
        "a) shift MAE <= {SHIFT_MAE_LIMIT_MM} mm per rod: {}\n",
        if g.shift_pass { "PASS" } else { "FAIL" }
    ));
    out.push_str(&format!(
        "b) rotation MAE <= {ROTATION_MAE_LIMIT_DEG} deg per rod: {}\n",
        if g.rotation_pass { "PASS" } else { "FAIL" }
    ));
    match (&report.latency, g.latency_pass) {
        (Some(l), Some(ok)) => out.push_str(&format!(
            "c) per-rod median inference < {REALTIME_LATENCY_LIMIT_MS} ms: {} ({:.2} ms)\n",
            if ok { "PASS" } else { "FAIL" },
            l.per_rod_median_ms
        )),
        _ => out.push_str(&format!(
            "c) per-rod median inference < {REALTIME_LATENCY_LIMIT_MS} ms: SKIPPED (not benchmarked)\n"
        )),
    }
    for failure in &g.failures {
        out.push_str(&format!("   - {failure}\n"));
    }
    out.push_str(&format!("overall: {}\n", if g.pass { "PASS" } else { "FAIL" }));
    Ok(out)
}

pub fn report_to_json(report: &EvalReport) -> Result<String, EvalError> {
    serde_json::to_string_pretty(report).map_err(|e| EvalError::Json(e.to_string()))
}

pub fn report_from_json(text: &str) -> Result<EvalReport, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Json(e.to_string()))
}

#[cfg(test)]
pub(crate) fn fixed_report() -> EvalReport {
    let shifts = [2.94, 4.02, 1.23, 1.6, 2.94, 7.42, 2.2, 8.68];
    let rots = [1.23, 1.47, 0.88, 1.38, 12.64, 13.93, 4.96, 10.93];
    let per_rod: Vec<RodErrors> = RodId::ALL
        .iter()
        .enumerate()
        .map(|(i, id)| RodErrors {
            rod: id.label(),
            shift_mae_mm: shifts[i],
            rotation_mae_deg: rots[i],
        })
        .collect();
    let latency = LatencyStats {
        parallel: false,
        mean_ms: 25.125,
        median_ms: 24.5,
        per_rod_mean_ms: 3.140625,
        per_rod_median_ms: 3.0625,
        fps_mean: 1000.0 / 25.125,
        fps_median: 1000.0 / 24.5,
    };
    build_report("compact", per_rod, Some(latency)).unwrap()
}
