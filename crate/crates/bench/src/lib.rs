//! Shared fixtures for the criterion benches.

use evitrack_core::world_model::{simulate, Trajectory, WorldModelParams};

/// A default-parameter trajectory of length `len`.
pub fn trajectory(len: usize, seed: u64) -> (WorldModelParams, Trajectory) {
    let p = WorldModelParams {
        length: len,
        ..WorldModelParams::default()
    };
    let tr = simulate(&p, seed);
    (p, tr)
}
