//! Game state: per-rod shift/rotation at one instant, plus derived velocities.

use serde::{Deserialize, Serialize};

use crate::angles::normalize_deg;
use crate::rods::RodId;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum StateError {
    #[error("timestamps not strictly increasing: prev={prev} cur={cur}")]
    NonPositiveDt { prev: u64, cur: u64 },
}

/// Shift (mm, signed, 0 = rod centered) and rotation (deg in [0, 360),
/// reported convention: 180 = figure vertical head-up) of one rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodState {
    pub shift_mm: f64,
    pub rotation_deg: f64,
}

impl RodState {
    pub fn new(shift_mm: f64, rotation_deg: f64) -> Self {
        RodState { shift_mm, rotation_deg: normalize_deg(rotation_deg) }
    }
}

/// Snapshot of all eight rods. Rod states are stored in canonical order
/// (see [`RodId::ALL`]), so every rod is present by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub frame_id: u64,
    pub timestamp_us: u64,
    rods: [RodState; 8],
}

impl GameState {
    pub fn new(frame_id: u64, timestamp_us: u64, rods: [RodState; 8]) -> Self {
        GameState { frame_id, timestamp_us, rods }
    }

    pub fn rod(&self, id: RodId) -> RodState {
        self.rods[id.index()]
    }

    pub fn rod_mut(&mut self, id: RodId) -> &mut RodState {
        &mut self.rods[id.index()]
    }

    /// States in canonical rod order.
    pub fn rods(&self) -> &[RodState; 8] {
        &self.rods
    }

    pub fn iter(&self) -> impl Iterator<Item = (RodId, RodState)> + '_ {
        RodId::ALL.iter().map(move |&id| (id, self.rods[id.index()]))
    }
}

/// Rod velocity derived from two consecutive states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodVelocity {
    pub shift_mm_per_s: f64,
    pub rotation_deg_per_s: f64,
}

/// Wrap an angle difference onto the shortest signed arc (-180, 180].
/// A tie at exactly ±180 resolves to +180.
pub fn wrap_signed_arc(delta_deg: f64) -> f64 {
    let mut d = delta_deg.rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Per-rod velocities between two consecutive states, canonical rod order.
/// The angular component uses the shortest signed arc, so a rotation passing
/// through 0° yields the small wrap-around rate rather than a ~360°/s spike.
pub fn velocity(prev: &GameState, cur: &GameState) -> Result<[RodVelocity; 8], StateError> {
    if cur.timestamp_us <= prev.timestamp_us {
        return Err(StateError::NonPositiveDt { prev: prev.timestamp_us, cur: cur.timestamp_us });
    }
    let dt_s = (cur.timestamp_us - prev.timestamp_us) as f64 / 1e6;
    let mut out = [RodVelocity { shift_mm_per_s: 0.0, rotation_deg_per_s: 0.0 }; 8];
    for id in RodId::ALL {
        let a = prev.rod(id);
        let b = cur.rod(id);
        out[id.index()] = RodVelocity {
            shift_mm_per_s: (b.shift_mm - a.shift_mm) / dt_s,
            rotation_deg_per_s: wrap_signed_arc(b.rotation_deg - a.rotation_deg) / dt_s,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rods::{Role, Team};

    fn uniform_state(frame_id: u64, ts: u64, shift: f64, rot: f64) -> GameState {
        GameState::new(frame_id, ts, [RodState::new(shift, rot); 8])
    }

    #[test]
    fn shift_velocity_example() {
        let a = uniform_state(0, 0, 10.0, 180.0);
        let b = uniform_state(1, 100_000, 20.0, 180.0);
        let v = velocity(&a, &b).unwrap();
        for rv in v {
            assert!((rv.shift_mm_per_s - 100.0).abs() < 1e-9);
            assert!(rv.rotation_deg_per_s.abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_wraps_through_zero() {
        let a = uniform_state(0, 0, 0.0, 350.0);
        let b = uniform_state(1, 100_000, 0.0, 10.0);
        let v = velocity(&a, &b).unwrap();
        assert!((v[0].rotation_deg_per_s - 200.0).abs() < 1e-9);
    }

    #[test]
    fn identical_states_zero_velocity() {
        let a = uniform_state(0, 0, -3.0, 200.0);
        let b = uniform_state(1, 50_000, -3.0, 200.0);
        for rv in velocity(&a, &b).unwrap() {
            assert_eq!(rv.shift_mm_per_s, 0.0);
            assert_eq!(rv.rotation_deg_per_s, 0.0);
        }
    }

    #[test]
    fn zero_dt_is_an_error() {
        let a = uniform_state(0, 5, 0.0, 180.0);
        let b = uniform_state(1, 5, 1.0, 180.0);
        assert!(velocity(&a, &b).is_err());
        assert!(velocity(&b, &a).is_err());
    }

    #[test]
    fn half_turn_tie_resolves_positive() {
        let a = uniform_state(0, 0, 0.0, 0.0);
        let b = uniform_state(1, 1_000_000, 0.0, 180.0);
        let v = velocity(&a, &b).unwrap();
        assert_eq!(v[0].rotation_deg_per_s, 180.0);
        // and the reverse direction is also +180 (tie-break, not negation)
        let v = velocity(&b, &uniform_state(2, 2_000_000, 0.0, 0.0)).unwrap();
        assert_eq!(v[0].rotation_deg_per_s, 180.0);
    }

    #[test]
    fn velocity_antisymmetry_off_tie() {
        let mut a = uniform_state(0, 0, 4.0, 30.0);
        let mut b = uniform_state(1, 250_000, -6.0, 80.0);
        *a.rod_mut(RodId::new(Team::White, Role::Striker)) = RodState::new(12.0, 300.0);
        *b.rod_mut(RodId::new(Team::White, Role::Striker)) = RodState::new(-12.0, 10.0);
        let fwd = velocity(&a, &b).unwrap();
        let mut b2 = b.clone();
        let mut a2 = a.clone();
        b2.timestamp_us = 0;
        a2.timestamp_us = 250_000;
        let bwd = velocity(&b2, &a2).unwrap();
        for (f, r) in fwd.iter().zip(bwd.iter()) {
            assert!((f.shift_mm_per_s + r.shift_mm_per_s).abs() < 1e-9);
            assert!((f.rotation_deg_per_s + r.rotation_deg_per_s).abs() < 1e-9);
        }
    }
}
