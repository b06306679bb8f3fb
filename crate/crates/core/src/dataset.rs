//! Dataset capture, persistence and ground-truth validation.
//!
//! One capture iteration produces one labeled frame: draw a random commanded
//! state, settle (black rods may still be in flight when the shutter fires),
//! read the simulated sensors, render, run the shift detector, persist. The
//! on-disk layout, all versioned:
//!
//! ```text
//! out_dir/
//!   manifest.txt           # version, counts, frame dims, seed
//!   geometry.toml          # the geometry the capture ran with
//!   capture_options.toml   # render/noise/bias options
//!   frames/frame_%06d.png  # lossless 8-bit grayscale full frames
//!   labels.csv             # one row per frame, columns per rod (see below)
//!   noise_debug.csv        # injected accel error and in-flight flags
//! ```
//!
//! `labels.csv` columns: `frame_id`, then for each rod in canonical order
//! `{team}_{role}_gt_shift, {team}_{role}_gt_rot, {team}_{role}_accel_rot,
//! {team}_{role}_motor_shift, {team}_{role}_motor_rot, {team}_{role}_cv_shift`
//! with empty cells where a column does not apply (motor columns on white
//! rods). Decimal point, three decimals, UTF-8, LF line endings.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::GrayImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angles::{encode_angle, normalize_shift, tilt_from_accel, to_reported};
use crate::cv;
use crate::nn::TrainSample;
use crate::rods::{RodId, Team};
use crate::sim::{
    extract_cutout, random_state, render_frame, simulate_accel_detailed, simulate_motor_report,
    AccelNoiseModel, RenderOptions, SimError, WhiteRotationBias,
};
use crate::state::GameState;
use crate::table::TableGeometry;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
/// Sensors with a systematic bias beyond this are rejected before capture.
pub const MAX_CALIBRATION_BIAS_DEG: f64 = 3.0;
/// Synthetic capture clock: one frame every 1/60 s.
pub const FRAME_PERIOD_US: u64 = 16_667;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {1}: {0}")]
    Image(image::ImageError, String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("shift detector failed on frame {frame_id}, rod {rod}: {source}")]
    Cv {
        frame_id: u64,
        rod: RodId,
        #[source]
        source: cv::CvError,
    },
    #[error("accelerometer bias {0} deg exceeds the {MAX_CALIBRATION_BIAS_DEG} deg calibration gate, sensor rejected")]
    SensorRejected(f64),
    #[error("capture needs at least one frame")]
    EmptyCapture,
    #[error("malformed manifest: {0}")]
    BadManifest(String),
    #[error("malformed csv at {path} line {line}: {reason}")]
    BadCsv { path: String, line: usize, reason: String },
    #[error("dataset inconsistent: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

/// Everything the capture loop needs besides the geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureOptions {
    pub render: RenderOptions,
    pub noise: AccelNoiseModel,
    pub white_bias: WhiteRotationBias,
    /// Probability that a black rod is still in flight at capture time, so
    /// the rendered state differs from the motor report.
    pub p_still_moving: f64,
    pub cv_threshold: u16,
    pub cv_min_run: usize,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions {
            render: RenderOptions::default(),
            noise: AccelNoiseModel::default(),
            white_bias: WhiteRotationBias::default(),
            p_still_moving: 0.05,
            cv_threshold: cv::DEFAULT_THRESHOLD,
            cv_min_run: cv::DEFAULT_MIN_RUN,
        }
    }
}

pub fn load_capture_options(path: &Path) -> Result<CaptureOptions, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| DatasetError::BadManifest(e.to_string()))
}

pub fn save_capture_options(opts: &CaptureOptions, path: &Path) -> Result<(), DatasetError> {
    let text = toml::to_string(opts).map_err(|e| DatasetError::BadManifest(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

/// Per-rod labels of one captured frame. Motor columns are only present for
/// the motor-driven black rods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodRecord {
    pub gt_shift_mm: f64,
    pub gt_rotation_deg: f64,
    pub accel_rotation_deg: f64,
    pub motor_shift_mm: Option<f64>,
    pub motor_rotation_deg: Option<f64>,
    pub cv_shift_mm: f64,
}

const EMPTY_ROD_RECORD: RodRecord = RodRecord {
    gt_shift_mm: 0.0,
    gt_rotation_deg: 0.0,
    accel_rotation_deg: 0.0,
    motor_shift_mm: None,
    motor_rotation_deg: None,
    cv_shift_mm: 0.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub frame_id: u64,
    pub timestamp_us: u64,
    pub rods: [RodRecord; 8],
}

/// Noise sidecar row: the exact injected accel error per rod plus the
/// in-flight flags the validator is checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDebugRecord {
    pub frame_id: u64,
    pub accel_eps_deg: [f64; 8],
    pub in_flight: [bool; 8],
}

#[derive(Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub geometry: TableGeometry,
    pub options: CaptureOptions,
    pub records: Vec<CaptureRecord>,
    pub noise_debug: Vec<NoiseDebugRecord>,
}

fn fmt3(v: f64) -> String {
    format!("{:.3}", v + 0.0)
}

pub fn labels_csv_header() -> String {
    let mut cols = vec!["frame_id".to_string()];
    for id in RodId::ALL {
        let label = id.label();
        for suffix in ["gt_shift", "gt_rot", "accel_rot", "motor_shift", "motor_rot", "cv_shift"] {
            cols.push(format!("{label}_{suffix}"));
        }
    }
    cols.join(",")
}

fn labels_csv_row(rec: &CaptureRecord) -> String {
    let mut cols = vec![rec.frame_id.to_string()];
    for rod in &rec.rods {
        cols.push(fmt3(rod.gt_shift_mm));
        cols.push(fmt3(rod.gt_rotation_deg));
        cols.push(fmt3(rod.accel_rotation_deg));
        cols.push(rod.motor_shift_mm.map(fmt3).unwrap_or_default());
        cols.push(rod.motor_rotation_deg.map(fmt3).unwrap_or_default());
        cols.push(fmt3(rod.cv_shift_mm));
    }
    cols.join(",")
}

pub fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:06}.png")
}

/// Reject sensors whose calibration bias exceeds the gate, mirroring the
/// pre-capture sensor check.
pub fn check_noise_model(noise: &AccelNoiseModel) -> Result<(), DatasetError> {
    noise.validate()?;
    if noise.calibration_bias_deg.abs() > MAX_CALIBRATION_BIAS_DEG {
        return Err(DatasetError::SensorRejected(noise.calibration_bias_deg));
    }
    Ok(())
}

/// Displace an in-flight rod from its commanded shift: the rod is captured
/// 8-40 mm short of (or past) its target, kept in range by flipping the
/// direction rather than truncating, so the offset always exceeds the
/// validation tolerance.
fn inflight_shift<R: Rng>(commanded_mm: f64, half_range_mm: f64, rng: &mut R) -> f64 {
    let magnitude = rng.random_range(8.0..40.0);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let candidate = commanded_mm + sign * magnitude;
    if candidate.abs() <= half_range_mm {
        candidate
    } else {
        commanded_mm - sign * magnitude
    }
}

/// Run the capture loop for `n` frames, persisting as it goes. Returns the
/// in-memory dataset that [`load`] reproduces from disk.
pub fn capture(
    n: usize,
    geometry: &TableGeometry,
    options: &CaptureOptions,
    seed: u64,
    out_dir: &Path,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::EmptyCapture);
    }
    check_noise_model(&options.noise)?;
    options.render.validate()?;

    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;

    let labels_path = out_dir.join("labels.csv");
    let mut labels = BufWriter::new(fs::File::create(&labels_path).map_err(io_err(&labels_path))?);
    writeln!(labels, "{}", labels_csv_header()).map_err(io_err(&labels_path))?;

    let noise_path = out_dir.join("noise_debug.csv");
    let mut noise_csv = BufWriter::new(fs::File::create(&noise_path).map_err(io_err(&noise_path))?);
    let mut noise_header = vec!["frame_id".to_string()];
    for id in RodId::ALL {
        noise_header.push(format!("{}_accel_eps", id.label()));
    }
    for id in RodId::ALL {
        noise_header.push(format!("{}_in_flight", id.label()));
    }
    writeln!(noise_csv, "{}", noise_header.join(",")).map_err(io_err(&noise_path))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut noise_debug = Vec::with_capacity(n);

    for frame_id in 0..n as u64 {
        // 1. move: draw the commanded state
        let commanded = random_state(geometry, &mut rng, Some(&options.white_bias));
        // 2. settle: black rods may still be in flight at the shutter
        let mut actual = commanded.clone();
        let mut in_flight = [false; 8];
        for id in RodId::ALL.iter().filter(|id| id.team == Team::Black) {
            if options.p_still_moving > 0.0 && rng.random::<f64>() < options.p_still_moving {
                in_flight[id.index()] = true;
                let cfg = geometry.rod(*id);
                actual.rod_mut(*id).shift_mm =
                    inflight_shift(commanded.rod(*id).shift_mm, cfg.shift_half_range_mm, &mut rng);
            }
        }
        let actual = GameState::new(frame_id, frame_id * FRAME_PERIOD_US, *actual.rods());

        // 3. measure: sensors and camera
        let mut accel_eps = [0.0f64; 8];
        let mut rods = [EMPTY_ROD_RECORD; 8];
        let render_opts = RenderOptions { seed: options.render.seed ^ frame_id, ..options.render };
        let image = render_frame(geometry, &actual, &render_opts)?;

        for id in RodId::ALL {
            let i = id.index();
            let state = actual.rod(id);
            let (reading, eps) = simulate_accel_detailed(state.rotation_deg, &options.noise, &mut rng);
            accel_eps[i] = eps;
            let accel_rotation_deg =
                to_reported(tilt_from_accel(reading).expect("simulated reading is never zero"));
            let cv_shift_mm = cv::detect_shift(
                &image,
                geometry.rod(id),
                &geometry.calibration,
                options.cv_threshold,
                options.cv_min_run,
            )
            .map_err(|source| DatasetError::Cv { frame_id, rod: id, source })?;
            let motor =
                (id.team == Team::Black).then(|| simulate_motor_report(commanded.rod(id), state));
            rods[i] = RodRecord {
                gt_shift_mm: state.shift_mm,
                gt_rotation_deg: state.rotation_deg,
                accel_rotation_deg,
                motor_shift_mm: motor.map(|m| m.shift_mm),
                motor_rotation_deg: motor.map(|m| m.rotation_deg),
                cv_shift_mm,
            };
        }

        // 4. record: image, label row, noise sidecar
        let frame_path = frames_dir.join(frame_file_name(frame_id));
        image
            .save(&frame_path)
            .map_err(|e| DatasetError::Image(e, frame_path.display().to_string()))?;
        let record = CaptureRecord { frame_id, timestamp_us: frame_id * FRAME_PERIOD_US, rods };
        writeln!(labels, "{}", labels_csv_row(&record)).map_err(io_err(&labels_path))?;
        let mut noise_cols = vec![frame_id.to_string()];
        noise_cols.extend(accel_eps.iter().map(|&e| format!("{e:.6}")));
        noise_cols.extend(in_flight.iter().map(|&f| u8::from(f).to_string()));
        writeln!(noise_csv, "{}", noise_cols.join(",")).map_err(io_err(&noise_path))?;
        records.push(record);
        noise_debug.push(NoiseDebugRecord { frame_id, accel_eps_deg: accel_eps, in_flight });
    }
    labels.flush().map_err(io_err(&labels_path))?;
    noise_csv.flush().map_err(io_err(&noise_path))?;

    let manifest_path = out_dir.join("manifest.txt");
    let manifest = format!(
        "version = {MANIFEST_FORMAT_VERSION}\nframes = {n}\nframe_width = {}\nframe_height = {}\nseed = {seed}\nimage_format = png\n",
        geometry.frame_width, geometry.frame_height
    );
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;
    save_capture_options(options, &out_dir.join("capture_options.toml"))?;
    crate::table::save_geometry(geometry, &out_dir.join("geometry.toml"))
        .map_err(|e| DatasetError::BadManifest(e.to_string()))?;

    Ok(Dataset {
        dir: out_dir.to_path_buf(),
        geometry: geometry.clone(),
        options: options.clone(),
        records,
        noise_debug,
    })
}

fn parse_manifest(path: &Path) -> Result<(u32, usize), DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut version = None;
    let mut frames = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let value = value.trim();
        match key.trim() {
            "version" => version = value.parse().ok(),
            "frames" => frames = value.parse().ok(),
            _ => {}
        }
    }
    match (version, frames) {
        (Some(v), Some(f)) => Ok((v, f)),
        _ => Err(DatasetError::BadManifest("missing version or frame count".into())),
    }
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64, DatasetError> {
    field.parse().map_err(|_| DatasetError::BadCsv {
        path: path.display().to_string(),
        line,
        reason: format!("bad number `{field}`"),
    })
}

fn parse_opt_f64(field: &str, path: &Path, line: usize) -> Result<Option<f64>, DatasetError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, path, line).map(Some)
    }
}

/// Load a captured dataset back from disk, checking manifest/row/image
/// consistency.
pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
    let (version, n) = parse_manifest(&dir.join("manifest.txt"))?;
    if version != MANIFEST_FORMAT_VERSION {
        return Err(DatasetError::BadManifest(format!("unsupported version {version}")));
    }
    let geometry = crate::table::load_geometry(&dir.join("geometry.toml"))
        .map_err(|e| DatasetError::BadManifest(e.to_string()))?;
    let options = load_capture_options(&dir.join("capture_options.toml"))?;

    let labels_path = dir.join("labels.csv");
    let text = fs::read_to_string(&labels_path).map_err(io_err(&labels_path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == labels_csv_header() => {}
        Some((_, header)) => {
            return Err(DatasetError::BadCsv {
                path: labels_path.display().to_string(),
                line: 1,
                reason: format!("unexpected header `{header}`"),
            })
        }
        None => {
            return Err(DatasetError::BadCsv {
                path: labels_path.display().to_string(),
                line: 1,
                reason: "empty file".into(),
            })
        }
    }

    let mut records = Vec::with_capacity(n);
    for (lineno, line) in lines {
        let line_h = lineno + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + 8 * 6 {
            return Err(DatasetError::BadCsv {
                path: labels_path.display().to_string(),
                line: line_h,
                reason: format!("{} fields, expected {}", fields.len(), 1 + 8 * 6),
            });
        }
        let frame_id: u64 = fields[0].parse().map_err(|_| DatasetError::BadCsv {
            path: labels_path.display().to_string(),
            line: line_h,
            reason: format!("bad frame_id `{}`", fields[0]),
        })?;
        let mut rods = [EMPTY_ROD_RECORD; 8];
        for (i, id) in RodId::ALL.iter().enumerate() {
            let base = 1 + i * 6;
            let motor_shift_mm = parse_opt_f64(fields[base + 3], &labels_path, line_h)?;
            let motor_rotation_deg = parse_opt_f64(fields[base + 4], &labels_path, line_h)?;
            if (id.team == Team::White) != motor_shift_mm.is_none() {
                return Err(DatasetError::BadCsv {
                    path: labels_path.display().to_string(),
                    line: line_h,
                    reason: format!("motor column presence does not match team for {id}"),
                });
            }
            rods[i] = RodRecord {
                gt_shift_mm: parse_f64(fields[base], &labels_path, line_h)?,
                gt_rotation_deg: parse_f64(fields[base + 1], &labels_path, line_h)?,
                accel_rotation_deg: parse_f64(fields[base + 2], &labels_path, line_h)?,
                motor_shift_mm,
                motor_rotation_deg,
                cv_shift_mm: parse_f64(fields[base + 5], &labels_path, line_h)?,
            };
        }
        records.push(CaptureRecord { frame_id, timestamp_us: frame_id * FRAME_PERIOD_US, rods });
    }
    if records.len() != n {
        return Err(DatasetError::Inconsistent(format!(
            "manifest says {n} frames, labels.csv has {}",
            records.len()
        )));
    }
    for rec in &records {
        let path = dir.join("frames").join(frame_file_name(rec.frame_id));
        if !path.is_file() {
            return Err(DatasetError::Inconsistent(format!("missing image {}", path.display())));
        }
    }

    let noise_path = dir.join("noise_debug.csv");
    let mut noise_debug = Vec::with_capacity(n);
    if noise_path.is_file() {
        let text = fs::read_to_string(&noise_path).map_err(io_err(&noise_path))?;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + 16 {
                return Err(DatasetError::BadCsv {
                    path: noise_path.display().to_string(),
                    line: lineno + 1,
                    reason: format!("{} fields, expected 17", fields.len()),
                });
            }
            let frame_id = fields[0].parse().map_err(|_| DatasetError::BadCsv {
                path: noise_path.display().to_string(),
                line: lineno + 1,
                reason: "bad frame_id".into(),
            })?;
            let mut rec = NoiseDebugRecord { frame_id, accel_eps_deg: [0.0; 8], in_flight: [false; 8] };
            for i in 0..8 {
                rec.accel_eps_deg[i] = parse_f64(fields[1 + i], &noise_path, lineno + 1)?;
                rec.in_flight[i] = fields[9 + i] == "1";
            }
            noise_debug.push(rec);
        }
    }

    Ok(Dataset { dir: dir.to_path_buf(), geometry, options, records, noise_debug })
}

/// Frames where any black rod's motor report disagrees with the detected
/// shift by more than `tolerance_mm`. Flagged frames stay in the dataset;
/// the CV value is the ground truth.
pub fn validate_shifts(dataset: &Dataset, tolerance_mm: f64) -> Vec<u64> {
    dataset
        .records
        .iter()
        .filter(|rec| {
            rec.rods.iter().any(|rod| {
                rod.motor_shift_mm
                    .map(|motor| (motor - rod.cv_shift_mm).abs() > tolerance_mm)
                    .unwrap_or(false)
            })
        })
        .map(|rec| rec.frame_id)
        .collect()
}

/// Deterministic train/validation split of record indices; the same
/// partition the trainer uses internally.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    crate::nn::split_indices(dataset.records.len(), ratio, seed)
}

pub fn load_frame_image(dataset: &Dataset, frame_id: u64) -> Result<GrayImage, DatasetError> {
    let path = dataset.dir.join("frames").join(frame_file_name(frame_id));
    let img = image::open(&path)
        .map_err(|e| DatasetError::Image(e, path.display().to_string()))?
        .into_luma8();
    Ok(img)
}

/// Regressor input for one rod of one stored frame.
pub fn rod_input(dataset: &Dataset, frame_id: u64, rod: RodId) -> Result<Array2<f32>, DatasetError> {
    let img = load_frame_image(dataset, frame_id)?;
    Ok(extract_cutout(
        &img,
        dataset.geometry.rod(rod),
        dataset.options.render.cutout_w as usize,
        dataset.options.render.cutout_h as usize,
    ))
}

/// Build one rod's training set: inputs are the stored frames' cutouts,
/// targets are (normalized CV shift, cos, sin of the accel rotation) — the
/// sensor-derived ground truth, not the simulator's hidden state.
pub fn rod_training_samples(dataset: &Dataset, rod: RodId) -> Result<Vec<TrainSample>, DatasetError> {
    let cfg = dataset.geometry.rod(rod);
    let mut out = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let input = rod_input(dataset, rec.frame_id, rod)?;
        let r = rec.rods[rod.index()];
        let s = normalize_shift(r.cv_shift_mm, cfg.shift_half_range_mm)
            .map_err(|e| DatasetError::Inconsistent(e.to_string()))?;
        let enc = encode_angle(r.accel_rotation_deg);
        out.push(TrainSample { input, target: [s as f32, enc.cos_v as f32, enc.sin_v as f32] });
    }
    Ok(out)
}
