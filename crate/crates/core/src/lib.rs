//! foostate-core — game-state detection for a table-football (foosball) table,
//! validated against a deterministic synthetic stand-in for the physical rig.
//!
//! The pipeline stages are:
//!
//! 1. **table / state** – rod identities, geometry, calibration, game state.
//! 2. **angles** – tilt sensing, sine/cosine angle encoding, circular metrics.
//! 3. **sim** – deterministic renderer plus accelerometer/motor sensor models.
//! 4. **cv** – column-threshold shift detector used to label ground truth.
//! 5. **nn** – per-rod convolutional regressor with a (shift, cos, sin) head,
//!    trained from scratch with Adam on the captured dataset.
//! 6. **dataset** – capture loop, on-disk layout, ground-truth validation.
//! 7. **wire / pubsub** – JSON game-state messages fanned out over TCP.
//! 8. **eval** – per-rod MAE tables, acceptance gate, latency benchmark.
//! 9. **pipeline** – the live detection loop wiring source → models → publisher.

pub mod angles;
pub mod cv;
pub mod dataset;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod pubsub;
pub mod rods;
pub mod sim;
pub mod state;
pub mod table;
pub mod wire;

pub use rods::{Role, RodId, Team};
pub use state::{GameState, RodState};
pub use table::{Calibration, RodConfig, TableGeometry};
