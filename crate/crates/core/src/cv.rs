//! Column-threshold shift detector.
//!
//! A one-pixel-wide column at the rod axis is thresholded; the rubber
//! stoppers at the rod ends appear as the outermost dark runs, their midpoint
//! is the rod center, and the offset from the table center converts to mm
//! through the calibration. Figure silhouettes crossing the column form runs
//! strictly between the stoppers and never affect the result.

use image::GrayImage;

use crate::table::{Calibration, RodConfig};

pub const DEFAULT_THRESHOLD: u16 = 100;
pub const DEFAULT_MIN_RUN: usize = 3;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CvError {
    #[error("column {x} outside image width {width}")]
    ColumnOutOfBounds { x: u32, width: u32 },
    #[error("fewer than two dark runs in the rod column, stoppers not found")]
    StopperNotFound,
    #[error("stopper runs overlap, column is degenerate")]
    DegenerateColumn,
}

/// Maximal run of dark pixels in a binarized column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub length: usize,
}

impl Run {
    pub fn center(&self) -> f64 {
        self.start as f64 + (self.length as f64 - 1.0) / 2.0
    }

    pub fn end_exclusive(&self) -> usize {
        self.start + self.length
    }
}

/// The full-height intensity vector at column `x`.
pub fn extract_column(image: &GrayImage, x: u32) -> Result<Vec<u8>, CvError> {
    if x >= image.width() {
        return Err(CvError::ColumnOutOfBounds { x, width: image.width() });
    }
    let w = image.width() as usize;
    let raw = image.as_raw();
    Ok((0..image.height() as usize).map(|y| raw[y * w + x as usize]).collect())
}

/// Element-wise `intensity < threshold`. The threshold is a u16 so that 256
/// expresses "everything dark".
pub fn binarize(column: &[u8], threshold: u16) -> Vec<bool> {
    column.iter().map(|&v| (v as u16) < threshold).collect()
}

/// Maximal true-runs of length ≥ `min_len`, ascending by start index.
pub fn find_runs(bits: &[bool], min_len: usize) -> Vec<Run> {
    assert!(min_len >= 1, "min_len must be at least 1");
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    runs.push(Run { start: s, length: i - s });
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if bits.len() - s >= min_len {
            runs.push(Run { start: s, length: bits.len() - s });
        }
    }
    runs
}

/// Detect one rod's shift in mm from a full frame.
///
/// The stoppers are the outermost qualifying runs from each column end; any
/// runs between them are figure silhouettes and are ignored.
pub fn detect_shift(
    image: &GrayImage,
    rod: &RodConfig,
    calib: &Calibration,
    threshold: u16,
    min_len: usize,
) -> Result<f64, CvError> {
    let column = extract_column(image, rod.center_column_x)?;
    let runs = find_runs(&binarize(&column, threshold), min_len);
    if runs.len() < 2 {
        return Err(CvError::StopperNotFound);
    }
    let top = runs.first().unwrap();
    let bottom = runs.last().unwrap();
    if top.end_exclusive() > bottom.start {
        return Err(CvError::DegenerateColumn);
    }
    let rod_center_px = (top.center() + bottom.center()) / 2.0;
    Ok((rod_center_px - calib.table_center_px) / calib.px_per_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rods::{RodId, Role, Team};
    use crate::sim::{render_frame, RenderOptions};
    use crate::state::{GameState, RodState};
    use crate::table::default_table_geometry;

    #[test]
    fn uniform_white_column() {
        let img = GrayImage::from_pixel(16, 9, image::Luma([255u8]));
        let col = extract_column(&img, 3).unwrap();
        assert_eq!(col, vec![255u8; 9]);
        assert!(matches!(
            extract_column(&img, 16),
            Err(CvError::ColumnOutOfBounds { x: 16, width: 16 })
        ));
    }

    #[test]
    fn binarize_extremes() {
        let col = [0u8, 50, 100, 200, 255];
        assert!(binarize(&col, 0).iter().all(|&b| !b));
        assert!(binarize(&col, 256).iter().all(|&b| b));
        let got = binarize(&col, 100);
        assert_eq!(got, vec![true, true, false, false, false]);
    }

    #[test]
    fn find_runs_cases() {
        assert!(find_runs(&[false; 10], 1).is_empty());
        let mut bits = vec![false; 30];
        for b in &mut bits[10..20] {
            *b = true;
        }
        assert_eq!(find_runs(&bits, 1), vec![Run { start: 10, length: 10 }]);
        let alternating: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert!(find_runs(&alternating, 2).is_empty());
        // run reaching the end of the column
        let mut bits = vec![false; 8];
        bits[5..8].iter_mut().for_each(|b| *b = true);
        assert_eq!(find_runs(&bits, 3), vec![Run { start: 5, length: 3 }]);
    }

    #[test]
    fn blank_image_has_no_stoppers() {
        let g = default_table_geometry();
        let img = GrayImage::from_pixel(g.frame_width, g.frame_height, image::Luma([255u8]));
        let err = detect_shift(&img, &g.rods[0], &g.calibration, DEFAULT_THRESHOLD, DEFAULT_MIN_RUN);
        assert_eq!(err, Err(CvError::StopperNotFound));
    }

    #[test]
    fn render_then_detect_round_trip_at_zero_and_thirty() {
        let g = default_table_geometry();
        let opts = RenderOptions::default();
        let tol = 1.0 / g.calibration.px_per_mm;
        for shift in [0.0, 30.0, -30.0] {
            let state = GameState::new(0, 0, [RodState::new(shift, 180.0); 8]);
            let img = render_frame(&g, &state, &opts).unwrap();
            for cfg in &g.rods {
                let got = detect_shift(&img, cfg, &g.calibration, DEFAULT_THRESHOLD, DEFAULT_MIN_RUN).unwrap();
                assert!(
                    (got - shift).abs() <= tol,
                    "rod {} shift {shift}: detected {got}",
                    cfg.id
                );
            }
        }
    }

    #[test]
    fn interior_runs_do_not_disturb_detection() {
        // figures at wild rotations put extra runs between the stoppers;
        // detection must agree with the plain vertical pose
        let g = default_table_geometry();
        let opts = RenderOptions { render_ball: false, ..Default::default() };
        let rod = RodId::new(Team::White, Role::Midfield);
        for rot in [0.0, 45.0, 90.0, 135.0, 270.0] {
            let mut state = GameState::new(0, 0, [RodState::new(12.5, 180.0); 8]);
            state.rod_mut(rod).rotation_deg = rot;
            let img = render_frame(&g, &state, &opts).unwrap();
            let got =
                detect_shift(&img, g.rod(rod), &g.calibration, DEFAULT_THRESHOLD, DEFAULT_MIN_RUN).unwrap();
            assert!((got - 12.5).abs() <= 0.5, "rot {rot}: detected {got}");
        }
    }

    #[test]
    fn shift_equivariance_on_synthetic_column() {
        // translating the stopper pattern by k px moves the result by k/px_per_mm
        let g = default_table_geometry();
        let mut img = GrayImage::from_pixel(64, 720, image::Luma([230u8]));
        let mut rod = g.rods[0].clone();
        rod.center_column_x = 32;
        let draw = |img: &mut GrayImage, y0: u32| {
            for dy in 0..13 {
                for x in 26..39 {
                    img.put_pixel(x, y0 + dy, image::Luma([20u8]));
                }
            }
        };
        draw(&mut img, 100);
        draw(&mut img, 500);
        let base = detect_shift(&img, &rod, &g.calibration, DEFAULT_THRESHOLD, DEFAULT_MIN_RUN).unwrap();
        for k in [1u32, 5, 17] {
            let mut shifted = GrayImage::from_pixel(64, 720, image::Luma([230u8]));
            draw(&mut shifted, 100 + k);
            draw(&mut shifted, 500 + k);
            let got = detect_shift(&shifted, &rod, &g.calibration, DEFAULT_THRESHOLD, DEFAULT_MIN_RUN).unwrap();
            assert!((got - base - k as f64 / g.calibration.px_per_mm).abs() < 1e-9);
        }
    }
}
