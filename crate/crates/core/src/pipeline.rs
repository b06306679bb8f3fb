//! The live detection loop: acquire a frame, infer all eight rods, publish.
//!
//! The frame source is either the simulator (fresh random states) or a
//! recorded dataset replayed in order; a real camera would slot in as a third
//! source. Per-rod inference runs sequentially by default; the per-rod
//! parallel mode changes timing only, never payload bytes.

use std::path::Path;
use std::time::{Duration, Instant, SystemTime};

use image::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, DatasetError, FRAME_PERIOD_US};
use crate::nn::{load_model, predict_rod_state, NnError, RegressorModel};
use crate::pubsub::{PubStats, Publisher};
use crate::rods::RodId;
use crate::sim::{random_state, render_frame, RenderOptions, SimError, WhiteRotationBias};
use crate::state::RodState;
use crate::table::TableGeometry;
use crate::wire::{encode_message, GameStateMessage};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model set does not match geometry: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("endpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("target_fps must be positive, got {0}")]
    BadFps(f64),
}

/// Where frames come from.
pub enum FrameSource {
    /// Fresh random states rendered on the fly; `frames = None` runs until
    /// interrupted.
    Simulator {
        render: RenderOptions,
        white_bias: WhiteRotationBias,
        seed: u64,
        frames: Option<u64>,
    },
    /// Replay a captured dataset in frame order, then exit cleanly.
    Replay { dataset: Dataset },
}

pub struct ServeConfig {
    pub geometry: TableGeometry,
    /// One trained model per rod, canonical order.
    pub models: Vec<RegressorModel<f32>>,
    pub endpoint: String,
    pub stats_endpoint: Option<String>,
    pub source: FrameSource,
    pub parallel_rods: bool,
    pub target_fps: f64,
    /// Timestamps derived from the frame id and inference_ms published as
    /// 0.000, so payload bytes reproduce across runs and modes.
    pub deterministic_timing: bool,
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeSummary {
    pub frames_published: u64,
    pub frames_skipped: u64,
    pub overrun_ticks: u64,
    pub final_stats: PubStats,
}

/// Load the eight per-rod model files `{team}_{role}.fsrm` from a directory.
pub fn load_model_set(dir: &Path) -> Result<Vec<RegressorModel<f32>>, NnError> {
    RodId::ALL
        .iter()
        .map(|id| {
            let path = dir.join(format!("{}.fsrm", id.label()));
            let model = load_model(&path)?;
            if model.rod != *id {
                return Err(NnError::BadModelFile(format!(
                    "{} holds a model for {}, expected {}",
                    path.display(),
                    model.rod,
                    id
                )));
            }
            Ok(model)
        })
        .collect()
}

pub fn model_file_name(id: RodId) -> String {
    format!("{}.fsrm", id.label())
}

fn check_models(models: &[RegressorModel<f32>], geometry: &TableGeometry) -> Result<(), PipelineError> {
    if models.len() != 8 {
        return Err(PipelineError::ModelMismatch(format!("{} models, expected 8", models.len())));
    }
    let (w0, h0) = (models[0].input_w, models[0].input_h);
    for (model, id) in models.iter().zip(RodId::ALL.iter()) {
        if model.rod != *id {
            return Err(PipelineError::ModelMismatch(format!("model order: {} where {} expected", model.rod, id)));
        }
        if (model.input_w, model.input_h) != (w0, h0) {
            return Err(PipelineError::ModelMismatch(format!("{} input dims differ from the set", id)));
        }
        let cutout = geometry.rod(*id).cutout;
        if cutout.w == 0 || cutout.h == 0 {
            return Err(PipelineError::ModelMismatch(format!("{} has an empty cutout", id)));
        }
    }
    Ok(())
}

fn wall_clock_us() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

struct SourceIter {
    source: FrameSource,
    geometry: TableGeometry,
    next_id: u64,
}

impl SourceIter {
    fn next_frame(&mut self) -> Result<Option<(u64, GrayImage)>, PipelineError> {
        match &mut self.source {
            FrameSource::Simulator { render, white_bias, seed, frames } => {
                if let Some(limit) = frames {
                    if self.next_id >= *limit {
                        return Ok(None);
                    }
                }
                let id = self.next_id;
                self.next_id += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id));
                let mut gt = random_state(&self.geometry, &mut rng, Some(white_bias));
                gt.frame_id = id;
                gt.timestamp_us = id * FRAME_PERIOD_US;
                let opts = RenderOptions { seed: *seed ^ id, ..*render };
                let img = render_frame(&self.geometry, &gt, &opts)?;
                Ok(Some((id, img)))
            }
            FrameSource::Replay { dataset } => {
                if self.next_id >= dataset.records.len() as u64 {
                    return Ok(None);
                }
                let id = self.next_id;
                self.next_id += 1;
                let img = crate::dataset::load_frame_image(dataset, dataset.records[id as usize].frame_id)?;
                Ok(Some((id, img)))
            }
        }
    }
}

/// Detect all eight rods in one frame. Any per-rod failure aborts the whole
/// frame (the caller logs and skips it).
pub fn detect_frame(
    geometry: &TableGeometry,
    models: &[RegressorModel<f32>],
    frame: &GrayImage,
    parallel: bool,
) -> Result<[RodState; 8], NnError> {
    let (w, h) = (models[0].input_w, models[0].input_h);
    let run = |id: RodId| -> Result<RodState, NnError> {
        let cfg = geometry.rod(id);
        let input = crate::sim::extract_cutout(frame, cfg, w, h);
        predict_rod_state(&models[id.index()], &input, cfg)
    };
    let mut rods = [RodState { shift_mm: 0.0, rotation_deg: 180.0 }; 8];
    if parallel {
        let results: Vec<(usize, Result<RodState, NnError>)> =
            RodId::ALL.par_iter().map(|&id| (id.index(), run(id))).collect();
        for (i, r) in results {
            rods[i] = r?;
        }
    } else {
        for id in RodId::ALL {
            rods[id.index()] = run(id)?;
        }
    }
    Ok(rods)
}

/// Run the detection loop until the source is exhausted (or forever for an
/// unbounded simulator source). Maintains `target_fps` by sleeping the tick
/// remainder; overruns are counted and the loop keeps pace without sleeping.
pub fn serve(cfg: ServeConfig) -> Result<ServeSummary, PipelineError> {
    let mut publisher = Publisher::bind(cfg.endpoint.as_str())?;
    if let Some(stats_ep) = &cfg.stats_endpoint {
        publisher.bind_stats(stats_ep.as_str())?;
    }
    serve_with(cfg, publisher)
}

/// [`serve`] against an already-bound publisher, so callers can register
/// subscribers before the first frame goes out.
pub fn serve_with(cfg: ServeConfig, mut publisher: Publisher) -> Result<ServeSummary, PipelineError> {
    if cfg.target_fps <= 0.0 {
        return Err(PipelineError::BadFps(cfg.target_fps));
    }
    check_models(&cfg.models, &cfg.geometry)?;
    if cfg.verbose {
        eprintln!("serving on {} ({} mode)", publisher.local_addr(), if cfg.parallel_rods { "parallel" } else { "sequential" });
    }

    let tick_budget = Duration::from_secs_f64(1.0 / cfg.target_fps);
    let mut source = SourceIter { source: cfg.source, geometry: cfg.geometry.clone(), next_id: 0 };
    let mut published = 0u64;
    let mut skipped = 0u64;
    let mut overruns = 0u64;

    while let Some((frame_id, frame)) = source.next_frame()? {
        let tick_start = Instant::now();
        let infer_start = Instant::now();
        match detect_frame(&cfg.geometry, &cfg.models, &frame, cfg.parallel_rods) {
            Ok(rods) => {
                let inference_ms = infer_start.elapsed().as_secs_f64() * 1000.0;
                let msg = GameStateMessage {
                    frame_id,
                    timestamp_us: if cfg.deterministic_timing {
                        frame_id * FRAME_PERIOD_US
                    } else {
                        wall_clock_us()
                    },
                    rods,
                    inference_ms: if cfg.deterministic_timing { 0.0 } else { inference_ms },
                };
                publisher.publish_bytes(&std::sync::Arc::new(encode_message(&msg)));
                published += 1;
            }
            Err(e) => {
                skipped += 1;
                eprintln!("frame {frame_id}: inference failed ({e}), skipping");
            }
        }
        let elapsed = tick_start.elapsed();
        if elapsed < tick_budget {
            std::thread::sleep(tick_budget - elapsed);
        } else {
            overruns += 1;
            if cfg.verbose {
                eprintln!("frame {frame_id}: tick overran budget ({elapsed:?} > {tick_budget:?})");
            }
        }
    }
    let final_stats = publisher.stats();
    publisher.shutdown();
    Ok(ServeSummary { frames_published: published, frames_skipped: skipped, overrun_ticks: overruns, final_stats })
}
