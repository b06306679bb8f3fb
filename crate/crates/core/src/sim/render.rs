//! Top-down renderer for the synthetic table.
//!
//! Rods run vertically in image coordinates; shifting a rod slides its
//! stoppers and figures along the image y axis. Rasterization is integer-only
//! so frame bytes are hash-stable across runs.
//!
//! The figure silhouette is a deliberately simple foot-projection model. With
//! the measurement-convention angle θ (0 = vertical head-up):
//!
//! * the foot lobe extends sideways by `FOOT_LEN_PX·sin θ` (side = sign of
//!   sin, extent ∝ |sin|), the head lobe mirrors it at a shorter reach;
//! * the body's along-rod width and its gray level vary with cos θ, the way
//!   the lit top surface of an upright figure differs from its underside.
//!
//! The playfield carries a fixed along-rod lighting gradient, so the absolute
//! position of the dark features (stoppers, figures) is recoverable from
//! global image statistics, not only from where the pixels sit.

use image::GrayImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RenderOptions, SimError};
use crate::rods::RodId;
use crate::state::GameState;
use crate::table::{RodConfig, TableGeometry};

const RAMP_HALF_SPAN: i32 = 55;

const ROD_HALF_COLS: i64 = 2;
const ROD_GRAY: u8 = 200;

/// Sleeve rails flanking the rod outside the stoppers; their visible length
/// tracks the shift the way a telescoping rod slides through the table wall.
/// The rail band sits clear of the body band so position and rotation cues
/// occupy distinct across-rod offsets.
const RAIL_COL_LO: i64 = 13;
const RAIL_COL_HI: i64 = 27;
const RAIL_GRAY: u8 = 108;

const STOPPER_HALF_COLS: i64 = 8;
const STOPPER_HALF_ROWS: i64 = 9;
const STOPPER_GRAY: u8 = 18;

const BODY_HALF_COLS: i64 = 12;
const BODY_MIN_HALF_ROWS: f64 = 14.0;
const BODY_EXTRA_HALF_ROWS: f64 = 10.0;

const FOOT_START_COLS: i64 = 24;
const FOOT_LEN_PX: f64 = 22.0;
const FOOT_HALF_ROWS: i64 = 14;
const FOOT_GRAY: u8 = 40;

const HEAD_LEN_PX: f64 = 14.0;
const HEAD_HALF_ROWS: i64 = 8;
const HEAD_GRAY: u8 = 75;

const BALL_RADIUS: i64 = 9;
const BALL_GRAY: u8 = 55;
const BALL_ROD_CLEARANCE: i64 = 64;

const FRAME_MARGIN_PX: f64 = 16.0;
const SEP_HALF_CAP_PX: f64 = 200.0;
/// stopper half-height + white gap + maximum body half-width
const FIGURE_CLEARANCE_PX: f64 = 42.0;

/// Derived per-rod drawing layout: where the stoppers sit relative to the rod
/// center and where the figures are mounted on the rod.
#[derive(Debug, Clone, PartialEq)]
pub struct RodLayout {
    /// Distance from the rod center to each stopper center, px.
    pub sep_half_px: f64,
    /// Figure mount positions relative to the rod center, px.
    pub figure_offsets_px: Vec<f64>,
}

/// Compute the drawing layout for one rod. Stoppers are placed as far out as
/// the frame allows at full travel (capped), figures evenly between them.
pub fn rod_layout(geometry: &TableGeometry, cfg: &RodConfig) -> Result<RodLayout, SimError> {
    let ppm = geometry.calibration.px_per_mm;
    let travel_px = cfg.shift_half_range_mm * ppm;
    let sep_half_px =
        ((geometry.frame_height as f64 / 2.0) - FRAME_MARGIN_PX - travel_px).min(SEP_HALF_CAP_PX);
    if sep_half_px < FIGURE_CLEARANCE_PX + 4.0 {
        return Err(SimError::LayoutOverflow(format!(
            "{}: shift range {} mm leaves no room for stoppers",
            cfg.id, cfg.shift_half_range_mm
        )));
    }
    let fig_half = sep_half_px - FIGURE_CLEARANCE_PX;
    let n = cfg.figure_count as usize;
    let figure_offsets_px = if n == 1 {
        vec![0.0]
    } else {
        (0..n)
            .map(|k| -fig_half + 2.0 * fig_half * k as f64 / (n as f64 - 1.0))
            .collect()
    };
    Ok(RodLayout { sep_half_px, figure_offsets_px })
}

fn fill_rect(buf: &mut [u8], w: i64, h: i64, x0: i64, x1: i64, y0: i64, y1: i64, gray: u8) {
    let xa = x0.max(0);
    let xb = (x1 + 1).min(w);
    let ya = y0.max(0);
    let yb = (y1 + 1).min(h);
    for y in ya..yb {
        let row = &mut buf[(y * w) as usize..(y * w + w) as usize];
        for px in &mut row[xa as usize..xb.max(xa) as usize] {
            *px = gray;
        }
    }
}

/// Render a full frame for one game state. Deterministic for fixed
/// (geometry, state, options): the only randomness, the ball position, is
/// derived from `opts.seed`.
pub fn render_frame(
    geometry: &TableGeometry,
    gt: &GameState,
    opts: &RenderOptions,
) -> Result<GrayImage, SimError> {
    opts.validate()?;
    if !geometry.state_within_limits(gt) {
        return Err(SimError::StateOutOfLimits(format!("frame {}", gt.frame_id)));
    }
    let w = geometry.frame_width as i64;
    let h = geometry.frame_height as i64;
    let mut buf = vec![0u8; (w * h) as usize];

    // playfield with along-rod lighting gradient
    for y in 0..h {
        let ramp = -RAMP_HALF_SPAN + ((2 * RAMP_HALF_SPAN * y as i32) + (h as i32 - 1) / 2) / (h as i32 - 1);
        let g = (opts.background_gray as i32 + ramp).clamp(0, 255) as u8;
        buf[(y * w) as usize..((y + 1) * w) as usize].fill(g);
    }

    if opts.render_ball {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut bx = 0i64;
        for _ in 0..1024 {
            bx = rng.random_range(BALL_RADIUS..w - BALL_RADIUS);
            let clear = geometry
                .rods
                .iter()
                .all(|r| (bx - r.center_column_x as i64).abs() >= BALL_ROD_CLEARANCE);
            if clear {
                break;
            }
        }
        let by = rng.random_range(30..h - 30);
        for dy in -BALL_RADIUS..=BALL_RADIUS {
            let half = ((BALL_RADIUS * BALL_RADIUS - dy * dy) as f64).sqrt().floor() as i64;
            fill_rect(&mut buf, w, h, bx - half, bx + half, by + dy, by + dy, BALL_GRAY);
        }
    }

    for id in RodId::ALL {
        let cfg = geometry.rod(id);
        let layout = rod_layout(geometry, cfg)?;
        let state = gt.rod(id);
        let cx = cfg.center_column_x as i64;
        let center_y = geometry.calibration.table_center_px + state.shift_mm * geometry.calibration.px_per_mm;

        fill_rect(&mut buf, w, h, cx - ROD_HALF_COLS, cx + ROD_HALF_COLS, 0, h - 1, ROD_GRAY);

        // sleeve rails from the frame edges up to the stopper outer edges;
        // they straddle the rod without touching its center column
        let yc_top = (center_y - layout.sep_half_px).round() as i64;
        let yc_bot = (center_y + layout.sep_half_px).round() as i64;
        for (xa, xb) in [(cx - RAIL_COL_HI, cx - RAIL_COL_LO), (cx + RAIL_COL_LO, cx + RAIL_COL_HI)] {
            fill_rect(&mut buf, w, h, xa, xb, 0, yc_top - STOPPER_HALF_ROWS - 1, RAIL_GRAY);
            fill_rect(&mut buf, w, h, xa, xb, yc_bot + STOPPER_HALF_ROWS + 1, h - 1, RAIL_GRAY);
        }

        for yc in [yc_top, yc_bot] {
            fill_rect(
                &mut buf,
                w,
                h,
                cx - STOPPER_HALF_COLS,
                cx + STOPPER_HALF_COLS,
                yc - STOPPER_HALF_ROWS,
                yc + STOPPER_HALF_ROWS,
                STOPPER_GRAY,
            );
        }

        let theta = (state.rotation_deg - 180.0).to_radians();
        let (sin_t, cos_t) = (theta.sin(), theta.cos());
        let upright = (1.0 + cos_t) / 2.0;
        let body_half_rows = (BODY_MIN_HALF_ROWS + BODY_EXTRA_HALF_ROWS * upright).round() as i64;
        let body_gray = (30.0 + 55.0 * (1.0 - upright)).round() as u8;

        for &off in &layout.figure_offsets_px {
            let yc = (center_y + off).round() as i64;
            fill_rect(
                &mut buf,
                w,
                h,
                cx - BODY_HALF_COLS,
                cx + BODY_HALF_COLS,
                yc - body_half_rows,
                yc + body_half_rows,
                body_gray,
            );
            let foot = FOOT_LEN_PX * sin_t;
            if foot.abs() >= 1.0 {
                let dir = if foot > 0.0 { 1i64 } else { -1 };
                let reach = FOOT_START_COLS + foot.abs().round() as i64;
                let (xa, xb) = if dir > 0 { (cx + FOOT_START_COLS, cx + reach) } else { (cx - reach, cx - FOOT_START_COLS) };
                fill_rect(&mut buf, w, h, xa, xb, yc - FOOT_HALF_ROWS, yc + FOOT_HALF_ROWS, FOOT_GRAY);

                let head = HEAD_LEN_PX * sin_t.abs();
                if head >= 1.0 {
                    let reach = FOOT_START_COLS + head.round() as i64;
                    let (xa, xb) = if dir > 0 { (cx - reach, cx - FOOT_START_COLS) } else { (cx + FOOT_START_COLS, cx + reach) };
                    fill_rect(&mut buf, w, h, xa, xb, yc - HEAD_HALF_ROWS, yc + HEAD_HALF_ROWS, HEAD_GRAY);
                }
            }
        }
    }

    if opts.brightness_offset != 0 {
        for px in &mut buf {
            *px = (*px as i32 + opts.brightness_offset as i32).clamp(0, 255) as u8;
        }
    }

    if opts.blur_radius > 0 {
        let r = opts.blur_radius as i64;
        let n = 2 * r + 1;
        let mut blurred = vec![0u8; buf.len()];
        for x in 0..w {
            for y in 0..h {
                let mut sum: i64 = 0;
                for dy in -r..=r {
                    let yy = (y + dy).clamp(0, h - 1);
                    sum += buf[(yy * w + x) as usize] as i64;
                }
                blurred[(y * w + x) as usize] = ((sum + n / 2) / n) as u8;
            }
        }
        buf = blurred;
    }

    Ok(GrayImage::from_raw(geometry.frame_width, geometry.frame_height, buf).expect("buffer sized to frame"))
}

/// Weights mapping `n_in` source pixels onto `n_out` destination pixels by
/// exact box (area) overlap.
fn resample_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|k| {
            let lo = k as f64 * scale;
            let hi = (k + 1) as f64 * scale;
            let mut ws = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let seg_lo = (i as f64).max(lo);
                let seg_hi = ((i + 1) as f64).min(hi);
                if seg_hi > seg_lo {
                    ws.push((i, ((seg_hi - seg_lo) / scale) as f32));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

/// Extract one rod's regressor input from a full frame: crop the configured
/// cutout, rotate it so the rod axis runs along the output width, box-resample
/// to `out_w`×`out_h`, and scale intensities to [0, 1].
///
/// Output shape is `(out_h, out_w)` = (across-rod, along-rod).
pub fn extract_cutout(image: &GrayImage, cfg: &RodConfig, out_w: usize, out_h: usize) -> Array2<f32> {
    let (fx, fy, cw, ch) =
        (cfg.cutout.x as usize, cfg.cutout.y as usize, cfg.cutout.w as usize, cfg.cutout.h as usize);
    let stride = image.width() as usize;
    let raw = image.as_raw();

    let along_w = resample_weights(ch, out_w);
    let across_w = resample_weights(cw, out_h);

    // first pass: pool frame rows (along the rod) into out_w bins per column
    let mut pooled = Array2::<f32>::zeros((out_w, cw));
    for (j, ws) in along_w.iter().enumerate() {
        for &(r, wr) in ws {
            let row = &raw[(fy + r) * stride + fx..(fy + r) * stride + fx + cw];
            let mut dst = pooled.row_mut(j);
            for (c, &px) in row.iter().enumerate() {
                dst[c] += wr * px as f32;
            }
        }
    }

    // second pass: pool the across-rod columns and normalize to [0, 1]
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for (i, ws) in across_w.iter().enumerate() {
        for j in 0..out_w {
            let mut acc = 0.0f32;
            for &(c, wc) in ws {
                acc += wc * pooled[(j, c)];
            }
            out[(i, j)] = acc / 255.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rods::{Role, Team};
    use crate::state::RodState;
    use crate::table::default_table_geometry;

    fn centered_state(rot: f64) -> GameState {
        GameState::new(0, 0, [RodState::new(0.0, rot); 8])
    }

    #[test]
    fn rendering_is_deterministic() {
        let g = default_table_geometry();
        let opts = RenderOptions { seed: 99, ..Default::default() };
        let s = centered_state(180.0);
        let a = render_frame(&g, &s, &opts).unwrap();
        let b = render_frame(&g, &s, &opts).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn out_of_limits_state_is_rejected() {
        let g = default_table_geometry();
        let mut s = centered_state(180.0);
        s.rod_mut(RodId::new(Team::Black, Role::Midfield)).shift_mm = 500.0;
        assert!(render_frame(&g, &s, &RenderOptions::default()).is_err());

        let mut s = centered_state(180.0);
        s.rod_mut(RodId::new(Team::Black, Role::Goal)).rotation_deg = 10.0; // outside [120, 240]
        assert!(render_frame(&g, &s, &RenderOptions::default()).is_err());
    }

    #[test]
    fn mirrored_rotations_mirror_about_the_rod_axis() {
        let g = default_table_geometry();
        let opts = RenderOptions { render_ball: false, ..Default::default() };
        let a = render_frame(&g, &centered_state(170.0), &opts).unwrap();
        let b = render_frame(&g, &centered_state(190.0), &opts).unwrap();
        for id in RodId::ALL {
            let cx = g.rod(id).center_column_x as i64;
            for dy in 0..g.frame_height {
                for dx in 0..=47i64 {
                    let pa = a.get_pixel((cx + dx) as u32, dy)[0];
                    let pb = b.get_pixel((cx - dx) as u32, dy)[0];
                    assert_eq!(pa, pb, "rod {id} dx={dx} y={dy}");
                }
            }
        }
    }

    #[test]
    fn cutout_shape_and_range() {
        let g = default_table_geometry();
        let img = render_frame(&g, &centered_state(200.0), &RenderOptions::default()).unwrap();
        let cfg = g.rod(RodId::new(Team::White, Role::Midfield));
        let cut = extract_cutout(&img, cfg, 256, 64);
        assert_eq!(cut.dim(), (64, 256));
        for &v in cut.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
        // dark features present somewhere
        assert!(cut.iter().cloned().fold(f32::INFINITY, f32::min) < 0.3);
    }

    #[test]
    fn resample_weights_partition_unity() {
        for (n_in, n_out) in [(704, 256), (64, 64), (10, 3)] {
            let ws = resample_weights(n_in, n_out);
            assert_eq!(ws.len(), n_out);
            for bin in &ws {
                let total: f32 = bin.iter().map(|&(_, w)| w).sum();
                assert!((total - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ball_stays_clear_of_rod_columns() {
        let g = default_table_geometry();
        for seed in 0..50u64 {
            let opts = RenderOptions { seed, ..Default::default() };
            let with = render_frame(&g, &centered_state(180.0), &opts).unwrap();
            let without =
                render_frame(&g, &centered_state(180.0), &RenderOptions { render_ball: false, ..opts }).unwrap();
            for cfg in &g.rods {
                let c = cfg.cutout;
                for y in c.y..c.y + c.h {
                    for x in c.x..c.x + c.w {
                        assert_eq!(with.get_pixel(x, y)[0], without.get_pixel(x, y)[0]);
                    }
                }
            }
        }
    }
}
