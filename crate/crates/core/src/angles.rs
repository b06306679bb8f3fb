//! Tilt sensing, angle encoding/decoding and circular metrics.
//!
//! Two angle conventions exist in the system. The *measurement* convention
//! places 0° at the figure standing vertically head-up; it is what a two-axis
//! accelerometer naturally reports. The *reported* convention places that same
//! pose at 180° (the motor convention) and is used everywhere downstream of
//! measurement. [`to_reported`] converts between the two and is its own
//! inverse.
//!
//! All public angles are degrees; radians never cross an API boundary.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum AngleError {
    #[error("accelerometer reading is the zero vector (sensor fault)")]
    ZeroAccelVector,
    #[error("(cos, sin) pair is the zero vector (degenerate prediction)")]
    ZeroEncodingVector,
    #[error("shift half-range must be positive, got {0}")]
    NonPositiveHalfRange(f64),
}

/// Raw two-axis accelerometer sample, in units of g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelReading {
    pub ax_g: f64,
    pub ay_g: f64,
}

/// An angle as the (cos, sin) regression target pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleEncoding {
    pub cos_v: f64,
    pub sin_v: f64,
}

/// Normalize any finite angle into [0, 360).
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs (e.g. -1e-14).
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Static tilt from gravity on two orthogonal axes, in the measurement
/// convention (0° = vertical). Full-quadrant arctangent, so the result
/// covers [0, 360).
pub fn tilt_from_accel(r: AccelReading) -> Result<f64, AngleError> {
    if r.ax_g == 0.0 && r.ay_g == 0.0 {
        return Err(AngleError::ZeroAccelVector);
    }
    Ok(normalize_deg(r.ax_g.atan2(r.ay_g).to_degrees()))
}

/// Convert between the measurement convention (0° = vertical) and the
/// reported convention (180° = vertical). The shift by half a turn is its
/// own inverse, so the same function maps both directions.
pub fn to_reported(measured_deg: f64) -> f64 {
    normalize_deg(measured_deg + 180.0)
}

/// Encode an angle as its (cos, sin) pair.
pub fn encode_angle(deg: f64) -> AngleEncoding {
    let rad = deg.to_radians();
    AngleEncoding {
        cos_v: rad.cos(),
        sin_v: rad.sin(),
    }
}

/// Decode a (cos, sin) pair back to degrees in [0, 360). Scale-invariant:
/// non-unit pairs (raw regression outputs) decode without renormalization.
pub fn decode_angle(e: AngleEncoding) -> Result<f64, AngleError> {
    if e.cos_v == 0.0 && e.sin_v == 0.0 {
        return Err(AngleError::ZeroEncodingVector);
    }
    Ok(normalize_deg(e.sin_v.atan2(e.cos_v).to_degrees()))
}

/// Shortest-arc distance between two angles, in [0, 180].
pub fn circular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Scale a shift in mm to the [-1, 1] regression range.
pub fn normalize_shift(shift_mm: f64, half_range_mm: f64) -> Result<f64, AngleError> {
    if half_range_mm <= 0.0 {
        return Err(AngleError::NonPositiveHalfRange(half_range_mm));
    }
    Ok(shift_mm / half_range_mm)
}

/// Inverse of [`normalize_shift`]. The input is clamped to [-1, 1] first:
/// an unconstrained linear head can predict slightly outside the range.
pub fn denormalize_shift(norm: f64, half_range_mm: f64) -> Result<f64, AngleError> {
    if half_range_mm <= 0.0 {
        return Err(AngleError::NonPositiveHalfRange(half_range_mm));
    }
    Ok(norm.clamp(-1.0, 1.0) * half_range_mm)
}
