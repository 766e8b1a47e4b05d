//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use kslab_core::{sample_initial, Grid, PPState, Preset};

/// A mass-`0.9 * 4 pi` bump on the `n x n` square `(0, pi)^2`, with `v`
/// consistent for relaxation time `lambda`.
pub fn bump_state(n: usize, lambda: f64) -> PPState {
    let pi = std::f64::consts::PI;
    let grid = Arc::new(Grid::rectangle(pi, pi, n, n).expect("valid grid"));
    let u =
        sample_initial(&Preset::GaussianBump { center: (1.3, 1.7), width: 0.8, target_mass: 0.9 * 4.0 * pi }, &grid)
            .expect("valid preset");
    PPState::consistent(u, lambda, 1.0, 1e-10).expect("consistent state")
}
