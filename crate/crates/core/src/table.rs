//! Table geometry: per-rod configuration, pixel calibration, config file I/O.
//!
//! Geometry is persisted as a versioned TOML file (`version = 1`) and loaded
//! by every CLI subcommand via `--geometry <path>`. The defaults below are a
//! self-consistent synthetic table: a 1280×720 top-down frame with the eight
//! rods vertical in image coordinates, 160 px apart, calibrated at 2 px/mm
//! along the rod axis.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rods::{Role, RodId, Team};
use crate::state::GameState;

pub const GEOMETRY_FORMAT_VERSION: u32 = 1;

/// Rotation limits of the motor-driven black rods, degrees in the reported
/// convention. White rods rotate freely.
pub const BLACK_ROTATION_MIN_DEG: f64 = 120.0;
pub const BLACK_ROTATION_MAX_DEG: f64 = 240.0;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported geometry format version {0}")]
    Version(u32),
    #[error("geometry must list all 8 rods exactly once, {0} found")]
    RodCount(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Pixel-to-millimeter calibration along the rod axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub px_per_mm: f64,
    /// Pixel coordinate of the table center along the rod axis.
    pub table_center_px: f64,
}

/// Axis-aligned rectangle in full-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoutRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Static configuration of one rod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RodConfig {
    pub id: RodId,
    pub figure_count: u32,
    pub shift_half_range_mm: f64,
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    /// Frame-coordinate region handed to this rod's regressor.
    pub cutout: CutoutRect,
    /// Pixel column of the rod axis in the full frame.
    pub center_column_x: u32,
}

impl RodConfig {
    /// True if `rotation_deg` (reported convention, [0, 360)) lies within
    /// this rod's limits. A full-circle rod accepts everything.
    pub fn rotation_allowed(&self, rotation_deg: f64) -> bool {
        if self.full_circle() {
            return true;
        }
        rotation_deg >= self.rotation_min_deg && rotation_deg <= self.rotation_max_deg
    }

    pub fn full_circle(&self) -> bool {
        (self.rotation_max_deg - self.rotation_min_deg) >= 360.0
    }
}

/// The whole table: frame dimensions, calibration and the eight rods in
/// canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGeometry {
    pub version: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub calibration: Calibration,
    pub rods: Vec<RodConfig>,
}

impl TableGeometry {
    pub fn rod(&self, id: RodId) -> &RodConfig {
        &self.rods[id.index()]
    }

    /// Checks every structural invariant; called on load and after edits.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.version != GEOMETRY_FORMAT_VERSION {
            return Err(GeometryError::Version(self.version));
        }
        if self.rods.len() != 8 {
            return Err(GeometryError::RodCount(self.rods.len()));
        }
        for (i, id) in RodId::ALL.iter().enumerate() {
            if self.rods[i].id != *id {
                return Err(GeometryError::Invalid(format!(
                    "rod {} out of canonical order (found {})",
                    i,
                    self.rods[i].id
                )));
            }
        }
        if self.calibration.px_per_mm <= 0.0 {
            return Err(GeometryError::Invalid("px_per_mm must be > 0".into()));
        }
        for rod in &self.rods {
            if rod.figure_count == 0 {
                return Err(GeometryError::Invalid(format!("{}: figure_count must be >= 1", rod.id)));
            }
            if rod.shift_half_range_mm <= 0.0 {
                return Err(GeometryError::Invalid(format!("{}: shift_half_range must be > 0", rod.id)));
            }
            match rod.id.team {
                Team::Black => {
                    if rod.rotation_min_deg != BLACK_ROTATION_MIN_DEG
                        || rod.rotation_max_deg != BLACK_ROTATION_MAX_DEG
                    {
                        return Err(GeometryError::Invalid(format!(
                            "{}: black rods are limited to [{}, {}] deg",
                            rod.id, BLACK_ROTATION_MIN_DEG, BLACK_ROTATION_MAX_DEG
                        )));
                    }
                }
                Team::White => {
                    if !rod.full_circle() || rod.rotation_min_deg != 0.0 {
                        return Err(GeometryError::Invalid(format!(
                            "{}: white rods must cover the full circle [0, 360)",
                            rod.id
                        )));
                    }
                }
            }
            let c = rod.cutout;
            if c.w == 0
                || c.h == 0
                || c.x.checked_add(c.w).map_or(true, |r| r > self.frame_width)
                || c.y.checked_add(c.h).map_or(true, |b| b > self.frame_height)
            {
                return Err(GeometryError::Invalid(format!("{}: cutout outside frame bounds", rod.id)));
            }
            if rod.center_column_x >= self.frame_width {
                return Err(GeometryError::Invalid(format!("{}: center column outside frame", rod.id)));
            }
        }
        Ok(())
    }

    /// True when every rod state lies within this geometry's limits.
    pub fn state_within_limits(&self, state: &GameState) -> bool {
        RodId::ALL.iter().all(|&id| {
            let cfg = self.rod(id);
            let s = state.rod(id);
            s.shift_mm.abs() <= cfg.shift_half_range_mm + 1e-9 && cfg.rotation_allowed(s.rotation_deg)
        })
    }
}

/// Default synthetic table.
///
/// Only the defense and midfield half-ranges are anchored to the 11 mm shift
/// bound (11 / 0.085 ≈ 129.4 mm and 11 / 0.20 = 55 mm); goal and striker
/// half-ranges and all pixel positions are plain configuration defaults.
pub fn default_table_geometry() -> TableGeometry {
    const FRAME_W: u32 = 1280;
    const FRAME_H: u32 = 720;
    const CUTOUT_W: u32 = 96;

    // Physical rod order across the table, with the motorized black team
    // defending the left goal.
    let columns: [(RodId, u32); 8] = [
        (RodId::new(Team::Black, Role::Goal), 80),
        (RodId::new(Team::Black, Role::Defense), 240),
        (RodId::new(Team::White, Role::Striker), 400),
        (RodId::new(Team::Black, Role::Midfield), 560),
        (RodId::new(Team::White, Role::Midfield), 720),
        (RodId::new(Team::Black, Role::Striker), 880),
        (RodId::new(Team::White, Role::Defense), 1040),
        (RodId::new(Team::White, Role::Goal), 1200),
    ];

    let mut rods: Vec<RodConfig> = RodId::ALL
        .iter()
        .map(|&id| {
            let center_column_x = columns.iter().find(|(cid, _)| *cid == id).unwrap().1;
            let (figure_count, shift_half_range_mm) = match id.role {
                Role::Goal => (1, 120.0),
                Role::Defense => (2, 129.4),
                Role::Midfield => (5, 55.0),
                Role::Striker => (3, 105.0),
            };
            let (rotation_min_deg, rotation_max_deg) = match id.team {
                Team::Black => (BLACK_ROTATION_MIN_DEG, BLACK_ROTATION_MAX_DEG),
                Team::White => (0.0, 360.0),
            };
            RodConfig {
                id,
                figure_count,
                shift_half_range_mm,
                rotation_min_deg,
                rotation_max_deg,
                cutout: CutoutRect { x: center_column_x - CUTOUT_W / 2, y: 8, w: CUTOUT_W, h: 704 },
                center_column_x,
            }
        })
        .collect();
    rods.sort_by_key(|r| r.id.index());

    let geometry = TableGeometry {
        version: GEOMETRY_FORMAT_VERSION,
        frame_width: FRAME_W,
        frame_height: FRAME_H,
        calibration: Calibration { px_per_mm: 2.0, table_center_px: 360.0 },
        rods,
    };
    debug_assert!(geometry.validate().is_ok());
    geometry
}

pub fn save_geometry(geometry: &TableGeometry, path: &Path) -> Result<(), GeometryError> {
    let text = toml::to_string(geometry).map_err(|e| GeometryError::Parse(e.to_string()))?;
    fs::write(path, text).map_err(|source| GeometryError::Io { path: path.display().to_string(), source })
}

pub fn load_geometry(path: &Path) -> Result<TableGeometry, GeometryError> {
    let text = fs::read_to_string(path)
        .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
    let geometry: TableGeometry = toml::from_str(&text).map_err(|e| GeometryError::Parse(e.to_string()))?;
    geometry.validate()?;
    Ok(geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let g = default_table_geometry();
        g.validate().unwrap();
        assert_eq!(g.rods.len(), 8);
        let defense = g.rod(RodId::new(Team::Black, Role::Defense));
        assert!((defense.shift_half_range_mm - 129.4).abs() < 1e-12);
        let midfield = g.rod(RodId::new(Team::Black, Role::Midfield));
        assert_eq!(midfield.shift_half_range_mm, 55.0);
        let goal = g.rod(RodId::new(Team::Black, Role::Goal));
        assert_eq!((goal.rotation_min_deg, goal.rotation_max_deg), (120.0, 240.0));
    }

    #[test]
    fn config_file_round_trips_bit_exact() {
        let g = default_table_geometry();
        let dir = std::env::temp_dir().join(format!("foostate-geom-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("geometry.toml");
        save_geometry(&g, &path).unwrap();
        let loaded = load_geometry(&path).unwrap();
        assert_eq!(loaded, g);
        // serialize again: identical bytes
        let a = toml::to_string(&g).unwrap();
        let b = toml::to_string(&loaded).unwrap();
        assert_eq!(a, b);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut g = default_table_geometry();
        g.rods[0].rotation_min_deg = 90.0;
        assert!(g.validate().is_err());

        let mut g = default_table_geometry();
        g.rods[3].cutout.x = 4000;
        assert!(g.validate().is_err());

        let mut g = default_table_geometry();
        g.calibration.px_per_mm = 0.0;
        assert!(g.validate().is_err());

        let mut g = default_table_geometry();
        g.rods.swap(0, 1);
        assert!(g.validate().is_err());
    }
}
