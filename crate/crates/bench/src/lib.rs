//! Shared inputs for the benchmarks.

use caloric_core::data;
use caloric_core::energy_space::LpResolution;
use caloric_core::grid::{self, Grid2D, MapField, TangentField};
use caloric_core::wave_map::WaveState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(n: usize) -> Grid2D {
    Grid2D::new(n, 8.0).expect("power-of-two grid")
}

pub fn map(n: usize) -> MapField {
    data::generic_gaussian(grid(n), 2, 1.0, 0.8).expect("valid data")
}

pub fn moving_state(n: usize) -> WaveState {
    let phi = map(n);
    let v = grid::diff(phi.field(), 0).scaled(0.5);
    let v = TangentField::projected(&phi, v).expect("same grid").into_field();
    WaveState::new(0.0, phi, v).expect("tangent velocity")
}

pub fn random_resolution(n: usize, m: usize, rungs: usize, seed: u64) -> LpResolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ladder: Vec<f64> = (0..rungs).map(|j| 0.01 * 1.5f64.powi(j as i32)).collect();
    let mut r = LpResolution::zero(grid(n), m, ladder);
    for f in r.psi_s.iter_mut().chain(std::iter::once(&mut r.psi_t0)) {
        for x in f.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    r
}
