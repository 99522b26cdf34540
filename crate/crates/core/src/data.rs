//! Synthetic data families used by the tests, the CLI recipes and the benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::grid::{self, Field, Grid2D, MapField};
use crate::hyperbolic::{kernel, HPoint, MAX_SYNTHETIC_DISTANCE};

/// Smooth bump `exp(1 - 1/(1 - r^2))` on `r < 1`, zero outside; equals 1 at 0.
pub fn bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// `exp_o(sum_k v_k e_k)` for a field `v` of `m` spatial components at the origin.
pub fn exp_from_origin(v: &Field) -> Result<MapField> {
    let m = v.ncomp();
    let grid = *v.grid();
    let d = m + 1;
    let mut data = vec![0.0; grid.len() * d];
    let o = HPoint::origin(m);
    let mut amb = vec![0.0; d];
    for (idx, node) in data.chunks_mut(d).enumerate() {
        amb[0] = 0.0;
        amb[1..].copy_from_slice(v.node(idx));
        let r = kernel::mink(&amb, &amb).sqrt();
        if r > MAX_SYNTHETIC_DISTANCE {
            return Err(invalid(format!(
                "synthetic data reaches distance {r} from the basepoint"
            )));
        }
        kernel::exp(o.coords(), &amb, node);
        kernel::normalize_point(node);
    }
    MapField::new(Field::from_vec(grid, d, data)?, o)
}

/// `exp_o(f e_axis)`: a map into the geodesic through `o` along `e_axis`.
pub fn geodesic_map(f: &Field, m: usize, axis: usize) -> Result<MapField> {
    if axis == 0 || axis > m || f.ncomp() != 1 {
        return Err(invalid("geodesic axis must be a spatial axis and f scalar"));
    }
    let v = Field::from_fn(*f.grid(), m, |_, _, _| {});
    let mut v = v;
    for (idx, x) in f.data().iter().enumerate() {
        v.node_mut(idx)[axis - 1] = *x;
    }
    exp_from_origin(&v)
}

/// Velocity of `t -> exp_o(f(t) e_axis)` given `f` and `f_t`.
pub fn geodesic_velocity(f: &Field, ft: &Field, m: usize, axis: usize) -> Field {
    let d = m + 1;
    let mut out = Field::zeros(*f.grid(), d);
    for (idx, (x, xt)) in f.data().iter().zip(ft.data()).enumerate() {
        let node = out.node_mut(idx);
        node[0] = xt * x.sinh();
        node[axis] = xt * x.cosh();
    }
    out
}

/// `A exp(-|x|^2 / (2 w^2))`.
pub fn gaussian(grid: Grid2D, amplitude: f64, width: f64) -> Field {
    Field::scalar_from_fn(grid, |x, y| amplitude * (-(x * x + y * y) / (2.0 * width * width)).exp())
}

/// `A bump(|x - c| / R)`.
pub fn compact_bump(grid: Grid2D, amplitude: f64, radius: f64, center: (f64, f64)) -> Field {
    Field::scalar_from_fn(grid, |x, y| {
        amplitude * bump((x - center.0).hypot(y - center.1) / radius)
    })
}

/// A compactly supported map with rank-2 differential (for `m >= 2`):
/// `exp_o(v)` with `v_1 = A bump(|x - c_1|/R)`, `v_2 = A (x_1/R) bump(|x - c_2|/R)`
/// and, for `m >= 3`, `v_3 = A/2 (x_2/R) bump(|x|/R)`.
pub fn generic_bump(grid: Grid2D, m: usize, amplitude: f64, radius: f64) -> Result<MapField> {
    if m == 0 {
        return Err(invalid("target dimension must be at least 1"));
    }
    let v = Field::from_fn(grid, m, |x, y, out| {
        let b1 = bump((x - 0.15 * radius).hypot(y) / radius);
        let b2 = bump((x + 0.1 * radius).hypot(y - 0.2 * radius) / radius);
        out[0] = amplitude * b1;
        if m >= 2 {
            out[1] = amplitude * (x / radius) * b2;
        }
        if m >= 3 {
            out[2] = 0.5 * amplitude * (y / radius) * bump(x.hypot(y) / radius);
        }
    });
    let support = 1.25 * radius;
    let map = exp_from_origin(&v)?;
    if support <= 0.5 * grid.half_width() {
        map.with_support(support, 0.0)
    } else {
        Ok(map)
    }
}

/// Smooth counterpart of [`generic_bump`] with Gaussian profiles of width `w`:
/// `v_1 = A g(x - c_1)`, `v_2 = A (x_1/w) g(x - c_2)`, `v_3 = A/2 (x_2/w) g(x)`.
pub fn generic_gaussian(grid: Grid2D, m: usize, amplitude: f64, width: f64) -> Result<MapField> {
    if m == 0 {
        return Err(invalid("target dimension must be at least 1"));
    }
    let g = |x: f64, y: f64| (-(x * x + y * y) / (2.0 * width * width)).exp();
    let v = Field::from_fn(grid, m, |x, y, out| {
        out[0] = amplitude * g(x - 0.15 * width, y);
        if m >= 2 {
            out[1] = amplitude * (x / width) * g(x + 0.1 * width, y - 0.2 * width);
        }
        if m >= 3 {
            out[2] = 0.5 * amplitude * (y / width) * g(x, y);
        }
    });
    exp_from_origin(&v)
}

/// Geodesic-valued Gaussian bump `exp_o(A exp(-|x|^2/2w^2) e_1)`.
pub fn geodesic_gaussian(grid: Grid2D, m: usize, amplitude: f64, width: f64) -> Result<MapField> {
    geodesic_map(&gaussian(grid, amplitude, width), m, 1)
}

/// Random trigonometric polynomial with wavenumbers `|k|_inf <= kmax`
/// (in units of `pi / L`) and coefficients decaying like `1/(1+|k|^2)`.
pub fn random_band_limited(grid: Grid2D, kmax: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.half_width();
    let mut modes = Vec::new();
    let k = kmax as i64;
    for k1 in -k..=k {
        for k2 in 0..=k {
            if k2 == 0 && k1 <= 0 {
                continue;
            }
            let amp: f64 = rng.gen_range(-1.0..1.0) / (1.0 + (k1 * k1 + k2 * k2) as f64);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            modes.push((k1 as f64, k2 as f64, amp, phase));
        }
    }
    let w = std::f64::consts::PI / l;
    Field::scalar_from_fn(grid, |x, y| {
        modes
            .iter()
            .map(|(a, b, amp, ph)| amp * (w * (a * x + b * y) + ph).cos())
            .sum()
    })
}

/// `exp_o(v)` where each component of `v` is a random band-limited field
/// times `A bump(|x|/R)`, normalised so that `sup |v| = A`.
pub fn random_map(grid: Grid2D, m: usize, amplitude: f64, radius: f64, kmax: usize, seed: u64) -> Result<MapField> {
    let parts: Vec<Field> = (0..m)
        .map(|c| random_band_limited(grid, kmax, seed.wrapping_mul(31).wrapping_add(c as u64)))
        .collect();
    let window = compact_bump(grid, 1.0, radius, (0.0, 0.0));
    let mut v = Field::zeros(grid, m);
    for idx in 0..grid.len() {
        for c in 0..m {
            v.node_mut(idx)[c] = parts[c].data()[idx] * window.data()[idx];
        }
    }
    let sup = v.sup();
    if sup == 0.0 {
        return Err(invalid("random map came out identically zero"));
    }
    let v = v.scaled(amplitude / sup);
    exp_from_origin(&v)
}

/// `P(x - v t)` for `P = generic_bump`-style profile centred at the origin.
pub fn travelling(grid: Grid2D, m: usize, amplitude: f64, radius: f64, vel: (f64, f64), t: f64) -> Result<MapField> {
    let v = Field::from_fn(grid, m, |x, y, out| {
        let (a, b) = (x - vel.0 * t, y - vel.1 * t);
        profile(a, b, amplitude, radius, m, out);
    });
    exp_from_origin(&v)
}

fn profile(x: f64, y: f64, amplitude: f64, radius: f64, m: usize, out: &mut [f64]) {
    let b1 = bump((x - 0.15 * radius).hypot(y) / radius);
    out[0] = amplitude * b1;
    if m >= 2 {
        out[1] = amplitude * (x / radius) * bump((x + 0.1 * radius).hypot(y - 0.2 * radius) / radius);
    }
    for o in out.iter_mut().skip(2) {
        *o = 0.0;
    }
}

/// Self-similar sample `P(x / t)` with `P(y) = exp_o(A b(|y|/0.9) (1, y_1, ...))`,
/// which is constant for `|y| >= 0.9`.
pub fn self_similar(grid: Grid2D, m: usize, amplitude: f64, t: f64) -> Result<MapField> {
    if t == 0.0 {
        return Err(invalid("self-similar sample is singular at t = 0"));
    }
    let v = Field::from_fn(grid, m, |x, y, out| {
        let (a, b) = (x / t, y / t);
        let w = amplitude * bump(a.hypot(b) / 0.9);
        out[0] = w;
        if m >= 2 {
            out[1] = w * (a + 0.5 * b);
        }
        for o in out.iter_mut().skip(2) {
            *o = 0.0;
        }
    });
    exp_from_origin(&v)
}

/// The anisotropic family `phi_0 = exp_o(n^{-1/2} eta(x_1, x_2/n) e_1)` with
/// `phi_1 = -d_1 phi_0` (centred differences), `eta = bump` of radius `radius`.
pub fn anisotropic(grid: Grid2D, m: usize, n: f64, radius: f64) -> Result<(MapField, Field)> {
    let f = Field::scalar_from_fn(grid, |x, y| n.powf(-0.5) * bump(x.hypot(y / n) / radius));
    let phi0 = geodesic_map(&f, m, 1)?;
    let mut phi1 = grid::diff(phi0.field(), 0).scaled(-1.0);
    let d = m + 1;
    for (v, p) in phi1.data_mut().chunks_mut(d).zip(phi0.field().data().chunks(d)) {
        kernel::tangent_project(p, v);
    }
    Ok((phi0, phi1))
}

/// d'Alembert solution `f(t, x) = (g(x_1 - t) + g(x_1 + t))/2` with
/// `g = A bump(x_1 / R)`, returned with `f_t`.
pub fn plane_wave(grid: Grid2D, amplitude: f64, radius: f64, t: f64) -> (Field, Field) {
    let l = grid.half_width();
    // periodic extension in x_1
    let g = |x: f64| {
        let y = (x + l).rem_euclid(2.0 * l) - l;
        amplitude * bump(y / radius)
    };
    let dg = |x: f64| {
        let eps = 1e-5 * radius;
        (g(x + eps) - g(x - eps)) / (2.0 * eps)
    };
    let f = Field::scalar_from_fn(grid, |x, _| 0.5 * (g(x - t) + g(x + t)));
    let ft = Field::scalar_from_fn(grid, |x, _| 0.5 * (-dg(x - t) + dg(x + t)));
    (f, ft)
}

/// d'Alembert solution with a periodically wrapped Gaussian profile
/// `g = A exp(-x_1^2 / (2 w^2))`, returned with `f_t`.
pub fn plane_wave_gaussian(grid: Grid2D, amplitude: f64, width: f64, t: f64) -> (Field, Field) {
    let l = grid.half_width();
    let wrap = |x: f64| (x + l).rem_euclid(2.0 * l) - l;
    let g = |x: f64| {
        let y = wrap(x) / width;
        amplitude * (-0.5 * y * y).exp()
    };
    let dg = |x: f64| {
        let y = wrap(x) / width;
        -amplitude * y / width * (-0.5 * y * y).exp()
    };
    let f = Field::scalar_from_fn(grid, |x, _| 0.5 * (g(x - t) + g(x + t)));
    let ft = Field::scalar_from_fn(grid, |x, _| 0.5 * (-dg(x - t) + dg(x + t)));
    (f, ft)
}

/// Two opposite fronts `f = A/2 (erf((x_1 - c)/(w sqrt 2)) - erf((x_1 + c)/(w sqrt 2)))`,
/// so `d_1 f` is a positive Gaussian at `x_1 = c` and a negative one at `-c`.
/// With `c = L/2` the fronts sit as far apart as the periodic box allows.
pub fn opposed_fronts(grid: Grid2D, amplitude: f64, width: f64, centre: f64) -> Field {
    let k = 1.0 / (width * std::f64::consts::SQRT_2);
    Field::scalar_from_fn(grid, |x, _| 0.5 * amplitude * (libm::erf((x - centre) * k) - libm::erf((x + centre) * k)))
}

/// Exact derivative of [`bump`].
pub fn bump_derivative(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - r * r;
        bump(r) * (-2.0 * r / (q * q))
    }
}
