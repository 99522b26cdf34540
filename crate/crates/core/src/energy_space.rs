//! Classical data, the Gram and stress-energy algebra, the nonlinear
//! Littlewood-Paley resolution and the rotation-quotient metric on it.
//!
//! Gram and stress fields store a symmetric 3x3 matrix per node, row-major
//! (9 components), indexed by `alpha, beta in {0, 1, 2}` with `d_0 phi_0 := phi_1`.

use serde::{Deserialize, Serialize};

use crate::align;
use crate::error::{invalid, Error, Result};
use crate::gauge::{self, build_caloric_gauge, CaloricGauge, GaugeConfig};
use crate::grid::{self, Field, Grid2D, MapField, TangentField};
use crate::heat_flow::HeatFlowConfig;
use crate::hyperbolic::{kernel, HPoint, OrthoFrame};

/// Minkowski metric of the base, signature `(-, +, +)`.
const MINK3: [f64; 3] = [-1.0, 1.0, 1.0];

pub type GramField = Field;
pub type StressField = Field;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalData {
    pub phi0: MapField,
    pub phi1: TangentField,
}

impl ClassicalData {
    pub fn new(phi0: MapField, phi1: Field) -> Result<Self> {
        let phi1 = TangentField::new(&phi0, phi1)?;
        Ok(Self { phi0, phi1 })
    }

    pub fn at_rest(phi0: MapField) -> Self {
        let phi1 = TangentField::zeros(&phi0);
        Self { phi0, phi1 }
    }

    pub fn grid(&self) -> &Grid2D {
        self.phi0.grid()
    }

    pub fn m(&self) -> usize {
        self.phi0.m()
    }
}

/// `Gamma_{ab} = <d_a phi_0, d_b phi_0>` with centred spatial differences,
/// tangent-projected at each node.
pub fn gram(data: &ClassicalData) -> GramField {
    let phi = data.phi0.field();
    let d = phi.ncomp();
    let g = grid::grad(phi);
    let grid = *phi.grid();
    let mut out = Field::zeros(grid, 9);
    let mut vecs = vec![vec![0.0; d]; 3];
    for idx in 0..grid.len() {
        let p = phi.node(idx);
        vecs[0].copy_from_slice(data.phi1.field().node(idx));
        vecs[1].copy_from_slice(g[0].node(idx));
        vecs[2].copy_from_slice(g[1].node(idx));
        for v in vecs.iter_mut().skip(1) {
            kernel::tangent_project(p, v);
        }
        let o = out.node_mut(idx);
        for a in 0..3 {
            for b in a..3 {
                let x = kernel::mink(&vecs[a], &vecs[b]);
                o[a * 3 + b] = x;
                o[b * 3 + a] = x;
            }
        }
    }
    out
}

fn trace_g(m: &[f64]) -> f64 {
    (0..3).map(|a| MINK3[a] * m[a * 3 + a]).sum()
}

/// `T = Gamma - g tr_g(Gamma) / 2` per node.
pub fn stress_of_gram(gram: &GramField) -> StressField {
    let mut out = gram.clone();
    for node in out.data_mut().chunks_mut(9) {
        let t = trace_g(node);
        for a in 0..3 {
            node[a * 3 + a] -= 0.5 * MINK3[a] * t;
        }
    }
    out
}

pub fn stress(data: &ClassicalData) -> StressField {
    stress_of_gram(&gram(data))
}

/// Inverse of [`stress_of_gram`]: in three dimensions `tr_g T = -tr_g(Gamma)/2`,
/// so `Gamma = T - g tr_g T`.
pub fn destress(t: &StressField) -> GramField {
    let mut out = t.clone();
    for node in out.data_mut().chunks_mut(9) {
        let tr = trace_g(node);
        for a in 0..3 {
            node[a * 3 + a] -= MINK3[a] * tr;
        }
    }
    out
}

/// `E = int T_00 = (1/2) int |grad phi_0|^2 + |phi_1|^2`.
pub fn energy(data: &ClassicalData) -> f64 {
    stress(data).component(0).integral()
}

// ---------------------------------------------------------------------------
// Littlewood-Paley resolution

/// `psi_s` on a heat-time ladder and `psi_t` at `s = 0`, all in frame components.
#[derive(Debug, Clone, PartialEq)]
pub struct LpResolution {
    pub ladder: Vec<f64>,
    pub psi_s: Vec<Field>,
    pub psi_t0: Field,
}

impl LpResolution {
    pub fn zero(grid: Grid2D, m: usize, ladder: Vec<f64>) -> Self {
        let psi_s = ladder.iter().map(|_| Field::zeros(grid, m)).collect();
        Self {
            ladder,
            psi_s,
            psi_t0: Field::zeros(grid, m),
        }
    }

    /// Reads the resolution off a built gauge.
    pub fn from_gauge(g: &CaloricGauge, phi1: &Field) -> Result<Self> {
        let psi_s = (0..g.len())
            .map(|j| g.state(j).map(|s| s.psi_s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ladder: g.trace.ladder(),
            psi_s,
            psi_t0: g.psi_t0(phi1),
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.psi_t0.grid()
    }

    pub fn m(&self) -> usize {
        self.psi_t0.ncomp()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            ladder: self.ladder.clone(),
            psi_s: self.psi_s.iter().map(|f| f.scaled(c)).collect(),
            psi_t0: self.psi_t0.scaled(c),
        }
    }

    /// Every component rotated by the row-major `m x m` matrix `u`.
    pub fn rotated(&self, u: &[f64]) -> Self {
        let rot = |f: &Field| {
            let m = f.ncomp();
            let mut out = f.clone();
            for (o, v) in out.data_mut().chunks_mut(m).zip(f.data().chunks(m)) {
                align::apply(u, v, o);
            }
            out
        };
        Self {
            ladder: self.ladder.clone(),
            psi_s: self.psi_s.iter().map(rot).collect(),
            psi_t0: rot(&self.psi_t0),
        }
    }

    /// Ladder quadrature weights (trapezoid in `log s`).
    pub fn weights(&self) -> Vec<f64> {
        grid::ladder_weights(&self.ladder)
    }
}

/// Heat flow, caloric gauge and resolution of `data`.
pub fn lp_embed(
    data: &ClassicalData,
    flow: &HeatFlowConfig,
    gauge_cfg: &GaugeConfig,
    e_inf: &OrthoFrame,
) -> Result<(LpResolution, CaloricGauge)> {
    let g = build_caloric_gauge(&data.phi0, flow, e_inf, gauge_cfg, None)?;
    let r = LpResolution::from_gauge(&g, data.phi1.field())?;
    Ok((r, g))
}

/// [`lp_embed`] with the seeded frame at `phi(infinity)`.
pub fn lp_embed_default(data: &ClassicalData, flow: &HeatFlowConfig, gauge_cfg: &GaugeConfig) -> Result<LpResolution> {
    let e_inf = gauge::boundary_frame(data.phi0.at_infinity(), None);
    lp_embed(data, flow, gauge_cfg, &e_inf).map(|(r, _)| r)
}

fn inner(a: &Field, b: &Field) -> f64 {
    a.grid().cell_area() * a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
}

/// `int b a^T`, row-major `m x m`.
fn cross(a: &Field, b: &Field) -> Vec<f64> {
    let m = a.ncomp();
    let mut out = vec![0.0; m * m];
    for (va, vb) in a.data().chunks(m).zip(b.data().chunks(m)) {
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] += vb[i] * va[j];
            }
        }
    }
    let area = a.grid().cell_area();
    out.iter_mut().for_each(|x| *x *= area);
    out
}

pub fn lp_norm_sq(r: &LpResolution) -> f64 {
    let w = r.weights();
    let heat: f64 = r.psi_s.iter().zip(&w).map(|(f, w)| w * f.l2_sq()).sum();
    heat + 0.5 * r.psi_t0.l2_sq()
}

pub fn lp_norm(r: &LpResolution) -> f64 {
    lp_norm_sq(r).sqrt()
}

/// Common ladder of two resolutions: one must extend the other. Missing rungs
/// of the shorter one count as zero.
fn common_ladder<'a>(a: &'a LpResolution, b: &'a LpResolution) -> Result<&'a [f64]> {
    let (short, long) = if a.ladder.len() <= b.ladder.len() {
        (&a.ladder, &b.ladder)
    } else {
        (&b.ladder, &a.ladder)
    };
    for (x, y) in short.iter().zip(long.iter()) {
        if (x - y).abs() > 1e-9 * y.abs().max(1e-300) {
            return Err(invalid("resolutions live on different heat-time ladders"));
        }
    }
    Ok(long)
}

/// `min_U |U a - b|_L` over `U in SO(m)`, with the minimiser.
pub fn lp_distance_with_rotation(a: &LpResolution, b: &LpResolution) -> Result<(f64, Vec<f64>)> {
    a.grid().check_same(b.grid())?;
    if a.m() != b.m() {
        return Err(Error::DimensionMismatch {
            expected: a.m(),
            got: b.m(),
        });
    }
    let m = a.m();
    let ladder = common_ladder(a, b)?;
    let w = grid::ladder_weights(ladder);
    let mut k = vec![0.0; m * m];
    for (j, wj) in w.iter().enumerate() {
        if let (Some(fa), Some(fb)) = (a.psi_s.get(j), b.psi_s.get(j)) {
            for (x, y) in k.iter_mut().zip(cross(fa, fb)) {
                *x += wj * y;
            }
        }
    }
    for (x, y) in k.iter_mut().zip(cross(&a.psi_t0, &b.psi_t0)) {
        *x += 0.5 * y;
    }
    let (u, _) = align::polar_rotation(&k, m);
    // evaluate |U a - b| directly; the closed form loses half the digits near 0
    let gap = |fa: Option<&Field>, fb: Option<&Field>| -> f64 {
        let mut ua = vec![0.0; m];
        let zero = vec![0.0; m];
        let area = a.grid().cell_area();
        let len = a.grid().len();
        (0..len)
            .map(|idx| {
                let va = fa.map_or(&zero[..], |f| f.node(idx));
                let vb = fb.map_or(&zero[..], |f| f.node(idx));
                align::apply(&u, va, &mut ua);
                ua.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .sum::<f64>()
            * area
    };
    let mut total = 0.5 * gap(Some(&a.psi_t0), Some(&b.psi_t0));
    for (j, wj) in w.iter().enumerate() {
        total += wj * gap(a.psi_s.get(j), b.psi_s.get(j));
    }
    Ok((total.sqrt(), u))
}

pub fn lp_distance(a: &LpResolution, b: &LpResolution) -> Result<f64> {
    lp_distance_with_rotation(a, b).map(|(d, _)| d)
}

// ---------------------------------------------------------------------------
// symmetries

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Shift by whole cells.
    Translate { di: isize, dj: isize },
    /// `(phi_0, phi_1) -> (phi_0, -phi_1)`.
    Reverse,
    /// Action of a row-major `SO(m,1)` matrix on the target.
    Rotate { matrix: Vec<f64> },
    /// `phi(x / lambda)` with `lambda = 2^k`, on the same nodes of a grid scaled by `lambda`.
    Dilate { log2: i32 },
}

fn check_lorentz(u: &[f64], d: usize) -> Result<()> {
    if u.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: u.len(),
        });
    }
    for a in 0..d {
        for b in 0..d {
            let g: f64 = (0..d)
                .map(|k| if k == 0 { -1.0 } else { 1.0 } * u[k * d + a] * u[k * d + b])
                .sum();
            let want = if a != b {
                0.0
            } else if a == 0 {
                -1.0
            } else {
                1.0
            };
            if (g - want).abs() > 1e-10 {
                return Err(invalid("matrix does not preserve the Minkowski form"));
            }
        }
    }
    if u[0] <= 0.0 {
        return Err(invalid("matrix reverses time orientation"));
    }
    let det = nalgebra::DMatrix::from_row_slice(d, d, u).determinant();
    if det <= 0.0 {
        return Err(invalid("matrix reverses orientation"));
    }
    Ok(())
}

fn transform_field(f: &Field, u: &[f64]) -> Field {
    let d = f.ncomp();
    let mut out = f.clone();
    for (o, v) in out.data_mut().chunks_mut(d).zip(f.data().chunks(d)) {
        align::apply(u, v, o);
    }
    out
}

pub fn apply_symmetry(data: &ClassicalData, which: &Symmetry) -> Result<ClassicalData> {
    let phi0 = &data.phi0;
    let phi1 = data.phi1.field();
    match which {
        Symmetry::Translate { di, dj } => {
            let p0 = MapField::new(phi0.field().translated(*di, *dj), phi0.at_infinity().clone())?;
            ClassicalData::new(p0, phi1.translated(*di, *dj))
        }
        Symmetry::Reverse => ClassicalData::new(phi0.clone(), phi1.scaled(-1.0)),
        Symmetry::Rotate { matrix } => {
            let d = phi0.m() + 1;
            check_lorentz(matrix, d)?;
            let f = transform_field(phi0.field(), matrix);
            let inf = phi0.at_infinity().transformed(matrix);
            ClassicalData::new(MapField::new(f, inf)?, transform_field(phi1, matrix))
        }
        Symmetry::Dilate { log2 } => {
            if log2.unsigned_abs() > 30 {
                return Err(invalid("dilation exponent out of range"));
            }
            let lambda = 2f64.powi(*log2);
            let p0 = MapField::new(phi0.field().dilated(lambda)?, phi0.at_infinity().clone())?;
            ClassicalData::new(p0, phi1.dilated(lambda)?.scaled(1.0 / lambda))
        }
    }
}

// ---------------------------------------------------------------------------
// degeneracy and continuity diagnostics

/// L1 masses of `|phi_1 + v . grad phi_0|^2` and `|w . grad phi_0|^2`, `w = v^perp`.
pub fn degeneracy_functionals(data: &ClassicalData, v: [f64; 2]) -> Result<(f64, f64)> {
    if ((v[0] * v[0] + v[1] * v[1]).sqrt() - 1.0).abs() > 1e-12 {
        return Err(invalid("direction must be a unit vector"));
    }
    let w = [-v[1], v[0]];
    let phi = data.phi0.field();
    let d = phi.ncomp();
    let g = grid::grad(phi);
    let grid = *phi.grid();
    let (mut along, mut across) = (0.0, 0.0);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for idx in 0..grid.len() {
        let p = phi.node(idx);
        let (g0, g1, p1) = (g[0].node(idx), g[1].node(idx), data.phi1.field().node(idx));
        for c in 0..d {
            a[c] = v[0] * g0[c] + v[1] * g1[c];
            b[c] = w[0] * g0[c] + w[1] * g1[c];
        }
        kernel::tangent_project(p, &mut a);
        kernel::tangent_project(p, &mut b);
        for c in 0..d {
            a[c] += p1[c];
        }
        along += kernel::mink(&a, &a).max(0.0);
        across += kernel::mink(&b, &b).max(0.0);
    }
    let area = grid.cell_area();
    Ok((along * area, across * area))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityPair {
    pub i: usize,
    pub j: usize,
    pub lp_distance: f64,
    /// `int |Gamma_i - Gamma_j|` with the Frobenius norm per node.
    pub gram_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub pairs: Vec<ContinuityPair>,
    /// Largest `gram_l1 / lp_distance` over pairs at positive distance.
    pub max_ratio: f64,
}

pub fn gram_l1_distance(a: &ClassicalData, b: &ClassicalData) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    let (ga, gb) = (gram(a), gram(b));
    let total: f64 = ga
        .data()
        .chunks(9)
        .zip(gb.data().chunks(9))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum();
    Ok(total * a.grid().cell_area())
}

/// Pairwise resolution distances against Gram-field distances.
pub fn gram_continuity_probe(
    seq: &[ClassicalData],
    flow: &HeatFlowConfig,
    gauge_cfg: &GaugeConfig,
) -> Result<ContinuityReport> {
    if seq.len() < 2 {
        return Err(invalid("continuity probe needs at least two data"));
    }
    let res = seq
        .iter()
        .map(|d| lp_embed_default(d, flow, gauge_cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            let lp = lp_distance(&res[i], &res[j])?;
            let gl = gram_l1_distance(&seq[i], &seq[j])?;
            if lp > 0.0 {
                max_ratio = max_ratio.max(gl / lp);
            }
            pairs.push(ContinuityPair {
                i,
                j,
                lp_distance: lp,
                gram_l1: gl,
            });
        }
    }
    Ok(ContinuityReport { pairs, max_ratio })
}

/// Inner product on the resolution space.
pub fn lp_inner(a: &LpResolution, b: &LpResolution) -> Result<f64> {
    let ladder = common_ladder(a, b)?;
    let w = grid::ladder_weights(ladder);
    let heat: f64 = a
        .psi_s
        .iter()
        .zip(&b.psi_s)
        .zip(&w)
        .map(|((x, y), w)| w * inner(x, y))
        .sum();
    Ok(heat + 0.5 * inner(&a.psi_t0, &b.psi_t0))
}

/// A point at infinity shared by `data`, checked.
pub fn common_infinity(data: &[ClassicalData]) -> Result<HPoint> {
    let first = data.first().ok_or_else(|| invalid("no data"))?.phi0.at_infinity().clone();
    for d in data {
        let p = d.phi0.at_infinity();
        if p.coords().iter().zip(first.coords()).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::BaseMismatch);
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::hyperbolic::boost;

    fn sample() -> ClassicalData {
        let g = Grid2D::new(16, 4.0).unwrap();
        let phi0 = data::generic_gaussian(g, 2, 0.8, 0.8).unwrap();
        let v = Field::from_fn(g, 3, |x, y, o| {
            o[0] = 0.0;
            o[1] = (-(x * x + y * y)).exp();
            o[2] = 0.3 * x * (-(x * x + y * y)).exp();
        });
        let phi1 = TangentField::projected(&phi0, v).unwrap();
        ClassicalData::new(phi0, phi1.into_field()).unwrap()
    }

    #[test]
    fn constant_data_has_no_energy() {
        let g = Grid2D::new(8, 2.0).unwrap();
        let d = ClassicalData::at_rest(MapField::constant(g, &HPoint::lift(&[0.3, -1.0])));
        assert_eq!(gram(&d).sup(), 0.0);
        assert_eq!(energy(&d), 0.0);
    }

    #[test]
    fn stress_round_trip() {
        let d = sample();
        let gm = gram(&d);
        let back = destress(&stress_of_gram(&gm));
        assert!(back.sub(&gm).unwrap().sup() < 1e-14 * gm.sup().max(1.0));
    }

    #[test]
    fn energy_is_half_the_gram_trace() {
        let d = sample();
        let gm = gram(&d);
        let tr: f64 = gm.data().chunks(9).map(|n| n[0] + n[4] + n[8]).sum::<f64>() * d.grid().cell_area();
        assert!((energy(&d) - 0.5 * tr).abs() < 1e-12);
    }

    #[test]
    fn lorentz_action_preserves_gram() {
        let d = sample();
        let u = boost(2, 1, 0.4);
        let r = apply_symmetry(&d, &Symmetry::Rotate { matrix: u }).unwrap();
        assert!(gram(&r).sub(&gram(&d)).unwrap().sup() < 1e-12);
        let bad = vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0];
        assert!(apply_symmetry(&d, &Symmetry::Rotate { matrix: bad }).is_err());
    }

    #[test]
    fn reversal_is_an_involution() {
        let d = sample();
        let r = apply_symmetry(&apply_symmetry(&d, &Symmetry::Reverse).unwrap(), &Symmetry::Reverse).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn degeneracy_rejects_non_unit_direction() {
        assert!(degeneracy_functionals(&sample(), [1.0, 1.0]).is_err());
    }

    #[test]
    fn distance_to_zero_is_the_norm() {
        let g = Grid2D::new(8, 2.0).unwrap();
        let ladder = vec![0.0, 0.25, 0.5];
        let mut a = LpResolution::zero(g, 2, ladder.clone());
        a.psi_s[1] = data::random_band_limited(g, 2, 3).scaled(1.0);
        a.psi_s[1] = Field::from_components(&[a.psi_s[1].clone(), data::random_band_limited(g, 2, 4)]).unwrap();
        a.psi_t0 = Field::from_components(&[data::random_band_limited(g, 1, 5), data::random_band_limited(g, 1, 6)]).unwrap();
        let z = LpResolution::zero(g, 2, ladder);
        assert!((lp_distance(&a, &z).unwrap() - lp_norm(&a)).abs() < 1e-12);
        let u = align::plane_rotation(2, 0, 1, 1.1);
        assert!(lp_distance(&a.rotated(&u), &a).unwrap() < 1e-10);
        assert!((lp_inner(&a, &a).unwrap() - lp_norm_sq(&a)).abs() < 1e-12);
    }
}
