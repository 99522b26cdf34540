//! Wave maps into the hyperboloid, their heat extensions and the wave-tension,
//! travelling and self-similar diagnostics.
//!
//! The evolution is the extrinsic form
//! `d_t^2 phi = Delta phi + (|phi_t|^2 - |d_x phi|^2) phi`, integrated by a
//! projected velocity Verlet scheme: half kick with the tangential force
//! `P(Delta_h phi)`, drift and renormalisation, half kick, re-projection of
//! the velocity onto the new tangent plane.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy_space::{self, ClassicalData};
use crate::error::{invalid, Error, Result};
use crate::gauge;
use crate::grid::{self, Field, Grid2D, MapField, ScalarField, Spectral, TangentField};
use crate::heat_flow::{self, probe_derivative, HeatFlowConfig, HeatFlowTrace};
use crate::hyperbolic::kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    /// `dt = dt_factor h`.
    pub dt_factor: f64,
    /// Declared relative energy drift; runs abort at ten times this.
    pub energy_budget: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            dt_factor: 0.25,
            energy_budget: 1e-3,
        }
    }
}

impl WaveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_factor > 0.0 && self.dt_factor <= 0.5) {
            return Err(invalid("wave.dt_factor must lie in (0, 1/2]"));
        }
        if !(self.energy_budget > 0.0 && self.energy_budget.is_finite()) {
            return Err(invalid("wave.energy_budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub t: f64,
    pub phi: MapField,
    /// Ambient `d_t phi`, tangent at every node.
    pub phi_t: Field,
}

impl WaveState {
    pub fn new(t: f64, phi: MapField, phi_t: Field) -> Result<Self> {
        let phi_t = TangentField::new(&phi, phi_t)?.into_field();
        Ok(Self { t, phi, phi_t })
    }

    pub fn at_rest(t: f64, phi: MapField) -> Self {
        let phi_t = Field::zeros(*phi.grid(), phi.m() + 1);
        Self { t, phi, phi_t }
    }

    /// State at the midpoint of two samples: the renormalised mean with the
    /// projected difference quotient as velocity.
    pub fn from_samples(before: &MapField, after: &MapField, t_before: f64, t_after: f64) -> Result<Self> {
        before.grid().check_same(after.grid())?;
        let dt = t_after - t_before;
        if !(dt > 0.0) {
            return Err(invalid("samples must be ordered in time"));
        }
        let d = before.m() + 1;
        let mut mid = before.field().add(after.field())?.scaled(0.5);
        for p in mid.data_mut().chunks_mut(d) {
            kernel::normalize_point(p);
        }
        let mut vel = after.field().sub(before.field())?.scaled(1.0 / dt);
        for (v, p) in vel.data_mut().chunks_mut(d).zip(mid.data().chunks(d)) {
            kernel::tangent_project(p, v);
        }
        let phi = MapField::new(mid, before.at_infinity().clone())?;
        Ok(Self {
            t: 0.5 * (t_before + t_after),
            phi,
            phi_t: vel,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.phi.grid()
    }

    pub fn to_data(&self) -> Result<ClassicalData> {
        ClassicalData::new(self.phi.clone(), self.phi_t.clone())
    }
}

/// `(1/2) int |phi_t|^2` plus the forward-difference Dirichlet energy, the
/// quantity the scheme conserves.
pub fn wave_energy(state: &WaveState) -> f64 {
    let d = state.phi.m() + 1;
    let kinetic: f64 = state.phi_t.data().chunks(d).map(|v| kernel::mink(v, v)).sum::<f64>() * state.grid().cell_area();
    0.5 * kinetic + heat_flow::dirichlet_energy(&state.phi)
}

fn check_cfl(grid: &Grid2D, dt: f64) -> Result<()> {
    let limit = 0.5 * grid.h();
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { ds: dt, limit });
    }
    Ok(())
}

/// One step on raw buffers; `force` holds `P(Delta_h phi)` on entry and is
/// updated to the new map.
fn step_raw(grid: &Grid2D, d: usize, phi: &mut [f64], vel: &mut [f64], force: &mut [f64], dt: f64) {
    phi.par_chunks_mut(d)
        .zip(vel.par_chunks_mut(d))
        .zip(force.par_chunks(d))
        .for_each(|((p, v), f)| {
            for c in 0..d {
                v[c] += 0.5 * dt * f[c];
            }
            // p + dt v + mu p lies on the hyperboloid
            let a = dt * dt * kernel::mink(v, v);
            let mu = a / (1.0 + (1.0 + a).sqrt());
            for c in 0..d {
                v[c] += mu / dt * p[c];
                p[c] += dt * v[c];
            }
            kernel::normalize_point(p);
        });
    heat_flow::tension_raw(grid, d, phi, force);
    vel.par_chunks_mut(d)
        .zip(force.par_chunks(d))
        .zip(phi.par_chunks(d))
        .for_each(|((v, f), p)| {
            for c in 0..d {
                v[c] += 0.5 * dt * f[c];
            }
            kernel::tangent_project(p, v);
        });
}

pub fn wave_step(state: &WaveState, dt: f64) -> Result<WaveState> {
    let grid = *state.grid();
    check_cfl(&grid, dt)?;
    let d = state.phi.m() + 1;
    let mut phi = state.phi.field().data().to_vec();
    let mut vel = state.phi_t.data().to_vec();
    let mut force = vec![0.0; phi.len()];
    heat_flow::tension_raw(&grid, d, &phi, &mut force);
    step_raw(&grid, d, &mut phi, &mut vel, &mut force, dt);
    Ok(WaveState {
        t: state.t + dt,
        phi: MapField::from_parts(Field::from_vec_unchecked(grid, d, phi), state.phi.at_infinity().clone()),
        phi_t: Field::from_vec_unchecked(grid, d, vel),
    })
}

#[derive(Debug, Clone)]
pub struct WaveTrace {
    pub config: WaveConfig,
    pub dt: f64,
    /// Recorded states, `record_every` steps apart.
    pub states: Vec<WaveState>,
    /// Energy after every step, starting with the initial one.
    pub energies: Vec<f64>,
    pub max_relative_drift: f64,
}

impl WaveTrace {
    pub fn spacing(&self) -> f64 {
        if self.states.len() >= 2 {
            self.states[1].t - self.states[0].t
        } else {
            self.dt
        }
    }

    pub fn final_drift(&self) -> f64 {
        let e0 = self.energies[0];
        let e1 = *self.energies.last().expect("nonempty");
        if e0 > 0.0 {
            (e1 - e0).abs() / e0
        } else {
            (e1 - e0).abs()
        }
    }
}

/// Steps size `dt <= dt_factor h`, adjusted to land exactly on `t_end`.
pub fn evolve(initial: &WaveState, cfg: &WaveConfig, t_end: f64, record_every: usize) -> Result<WaveTrace> {
    cfg.validate()?;
    if record_every == 0 {
        return Err(invalid("record_every must be positive"));
    }
    let span = t_end - initial.t;
    if !(span > 0.0) {
        return Err(invalid("t_end must exceed the initial time"));
    }
    let grid = *initial.grid();
    let steps = (span / (cfg.dt_factor * grid.h()) - 1e-9).ceil().max(1.0) as usize;
    let dt = span / steps as f64;
    check_cfl(&grid, dt)?;
    let d = initial.phi.m() + 1;
    let mut phi = initial.phi.field().data().to_vec();
    let mut vel = initial.phi_t.data().to_vec();
    let mut force = vec![0.0; phi.len()];
    heat_flow::tension_raw(&grid, d, &phi, &mut force);
    let e0 = wave_energy(initial);
    let mut trace = WaveTrace {
        config: cfg.clone(),
        dt,
        states: vec![initial.clone()],
        energies: vec![e0],
        max_relative_drift: 0.0,
    };
    let inf = initial.phi.at_infinity().clone();
    let area = grid.cell_area();
    for k in 1..=steps {
        step_raw(&grid, d, &mut phi, &mut vel, &mut force, dt);
        let kinetic: f64 = vel.chunks(d).map(|v| kernel::mink(v, v)).sum::<f64>() * area;
        let e = 0.5 * kinetic + heat_flow::energy_raw(&grid, d, &phi);
        let drift = if e0 > 0.0 { (e - e0).abs() / e0 } else { (e - e0).abs() };
        trace.max_relative_drift = trace.max_relative_drift.max(drift);
        trace.energies.push(e);
        if drift > 10.0 * cfg.energy_budget {
            return Err(Error::EnergyDrift {
                drift,
                limit: 10.0 * cfg.energy_budget,
            });
        }
        if k % record_every == 0 || k == steps {
            trace.states.push(WaveState {
                t: initial.t + k as f64 * dt,
                phi: MapField::from_parts(Field::from_vec_unchecked(grid, d, phi.clone()), inf.clone()),
                phi_t: Field::from_vec_unchecked(grid, d, vel.clone()),
            });
        }
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// stress-energy conservation

/// `int |div T|` at recorded state `k`, with `div_b T = -d_t T_0b + d_i T_ib`
/// by centred differences in `t` (recorded spacing) and `x`.
pub fn stress_divergence(trace: &WaveTrace, k: usize) -> Result<f64> {
    let len = trace.states.len();
    if k == 0 || k + 1 >= len {
        return Err(Error::Boundary { index: k, len });
    }
    let spacing = [
        trace.states[k].t - trace.states[k - 1].t,
        trace.states[k + 1].t - trace.states[k].t,
    ];
    if (spacing[0] - spacing[1]).abs() > 1e-9 * spacing[0] {
        return Err(invalid("stress divergence needs evenly recorded states"));
    }
    let tdt = 2.0 * spacing[0];
    let before = energy_space::stress(&trace.states[k - 1].to_data()?);
    let after = energy_space::stress(&trace.states[k + 1].to_data()?);
    let now = energy_space::stress(&trace.states[k].to_data()?);
    let grid = *now.grid();
    let dx = [grid::diff(&now, 0), grid::diff(&now, 1)];
    let mut total = 0.0;
    for idx in 0..grid.len() {
        let (b, a) = (before.node(idx), after.node(idx));
        let mut sq = 0.0;
        for beta in 0..3 {
            let dt_term = (a[beta] - b[beta]) / tdt;
            let div = -dt_term + dx[0].node(idx)[3 + beta] + dx[1].node(idx)[6 + beta];
            sq += div * div;
        }
        total += sq.sqrt();
    }
    Ok(total * grid.cell_area())
}

// ---------------------------------------------------------------------------
// wave tension

/// Heat extensions of three consecutive wave states and the wave-tension
/// field `W = -P d_t^2 phi + tau(phi)` per rung, as an ambient tangent field
/// at the middle state. `|W|` equals the frame norm `|w|` in any gauge.
#[derive(Debug, Clone)]
pub struct TensionSlab {
    pub t: f64,
    pub dt: f64,
    pub flows: [HeatFlowTrace; 3],
    pub ladder: Vec<f64>,
    pub w: Vec<Field>,
    pub l1: Vec<f64>,
}

impl TensionSlab {
    pub fn len(&self) -> usize {
        self.ladder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ladder.is_empty()
    }

    pub fn sup_l1(&self) -> f64 {
        self.l1.iter().cloned().fold(0.0, f64::max)
    }
}

fn wave_tension_from(maps: [&Field; 3], dt: f64) -> Field {
    let grid = *maps[1].grid();
    let d = maps[1].ncomp();
    let mut tens = vec![0.0; maps[1].data().len()];
    heat_flow::tension_raw(&grid, d, maps[1].data(), &mut tens);
    let inv = 1.0 / (dt * dt);
    let mut acc = vec![0.0; d];
    for idx in 0..grid.len() {
        let (a, p, b) = (maps[0].node(idx), maps[1].node(idx), maps[2].node(idx));
        for c in 0..d {
            acc[c] = (a[c] - 2.0 * p[c] + b[c]) * inv;
        }
        kernel::tangent_project(p, &mut acc);
        for c in 0..d {
            tens[idx * d + c] -= acc[c];
        }
    }
    Field::from_vec_unchecked(grid, d, tens)
}

fn tangent_l1(f: &Field) -> f64 {
    let d = f.ncomp();
    f.data().chunks(d).map(|v| kernel::mink(v, v).max(0.0).sqrt()).sum::<f64>() * f.grid().cell_area()
}

fn check_triple(states: [&WaveState; 3]) -> Result<f64> {
    let dt = states[1].t - states[0].t;
    let dt2 = states[2].t - states[1].t;
    if !(dt > 0.0) || (dt - dt2).abs() > 1e-9 * dt {
        return Err(invalid("wave states must be evenly spaced and increasing in t"));
    }
    states[0].grid().check_same(states[1].grid())?;
    states[1].grid().check_same(states[2].grid())?;
    Ok(dt)
}

pub fn wave_tension(states: [&WaveState; 3], flow: &HeatFlowConfig) -> Result<TensionSlab> {
    let dt = check_triple(states)?;
    let flows = [
        heat_flow::run(&states[0].phi, flow)?,
        heat_flow::run(&states[1].phi, flow)?,
        heat_flow::run(&states[2].phi, flow)?,
    ];
    let len = flows.iter().map(|f| f.rungs.len()).min().unwrap_or(0);
    let ladder: Vec<f64> = flows[1].ladder().into_iter().take(len).collect();
    let w: Vec<Field> = (0..len)
        .map(|j| wave_tension_from([&flows[0].rungs[j].phi, &flows[1].rungs[j].phi, &flows[2].rungs[j].phi], dt))
        .collect();
    let l1 = w.iter().map(tangent_l1).collect();
    Ok(TensionSlab {
        t: states[1].t,
        dt,
        flows,
        ladder,
        w,
        l1,
    })
}

/// Frame components of the wave tension at rung `j` in a gauge built on the
/// middle flow.
pub fn wave_tension_in_frame(slab: &TensionSlab, g: &gauge::CaloricGauge, j: usize) -> Result<Field> {
    let frames = g.frames.get(j).ok_or(Error::Boundary { index: j, len: g.len() })?;
    let w = slab.w.get(j).ok_or(Error::Boundary { index: j, len: slab.len() })?;
    Ok(gauge::pullback(frames, w))
}

fn project_all(phi: &Field, v: &mut Field) {
    let d = phi.ncomp();
    for (x, p) in v.data_mut().chunks_mut(d).zip(phi.data().chunks(d)) {
        kernel::tangent_project(p, x);
    }
}

/// `(u ^ v) z = u <v, z> - v <u, z>` nodewise, accumulated with weight `c`.
fn add_wedge(out: &mut Field, c: f64, u: &Field, v: &Field, z: &Field) {
    let d = out.ncomp();
    for idx in 0..out.grid().len() {
        let (a, b, x) = (u.node(idx), v.node(idx), z.node(idx));
        let (bx, ax) = (kernel::mink(b, x), kernel::mink(a, x));
        let o = out.node_mut(idx);
        for k in 0..d {
            o[k] += c * (a[k] * bx - b[k] * ax);
        }
    }
}

/// L1 norm of `d_s w - D_i D_i w + (w ^ psi_i) psi_i - 4 (psi_t ^ psi_i) D_t psi_i`
/// at rung `j`, computed extrinsically at the middle flow: all terms are
/// tangent fields and covariant derivatives are projected ambient ones.
///
/// The forcing coefficient is the one obtained by collecting the three
/// cubic terms with the first Bianchi identity.
pub fn wave_tension_evolution_residual(slab: &TensionSlab, j: usize) -> Result<f64> {
    evolution_residual(slab, j, 4.0)
}

/// Same residual with forcing `-2 (psi_t ^ psi_i) D_t psi_i`, for comparison.
pub fn wave_tension_evolution_residual_stated(slab: &TensionSlab, j: usize) -> Result<f64> {
    evolution_residual(slab, j, -2.0)
}

fn evolution_residual(slab: &TensionSlab, j: usize, forcing: f64) -> Result<f64> {
    let len = slab.len();
    if j == 0 || j >= len {
        return Err(Error::Boundary { index: j, len });
    }
    let probes: Vec<&[Field; 4]> = slab
        .flows
        .iter()
        .map(|f| f.probes(j))
        .collect::<Result<Vec<_>>>()?;
    let ds = slab.flows[1].ds;
    let w_probe: Vec<Field> = (0..4)
        .map(|k| wave_tension_from([&probes[0][k], &probes[1][k], &probes[2][k]], slab.dt))
        .collect();
    let phi = &slab.flows[1].rungs[j].phi;
    let mut res = probe_derivative([&w_probe[0], &w_probe[1], &w_probe[2], &w_probe[3]], ds)?;
    project_all(phi, &mut res);
    let w = &slab.w[j];
    let psi = grid::grad(phi);
    let vel = slab.flows[2].rungs[j].phi.sub(&slab.flows[0].rungs[j].phi)?.scaled(0.5 / slab.dt);
    let mut psi_t = vel.clone();
    project_all(phi, &mut psi_t);
    // D_i D_i w = P(Delta w) - <w, d_i phi> d_i phi for tangent w
    let mut lap = grid::laplacian(w);
    project_all(phi, &mut lap);
    let d = phi.ncomp();
    for idx in 0..phi.grid().len() {
        let wn = w.node(idx);
        let (a, b) = (psi[0].node(idx), psi[1].node(idx));
        let (wa, wb) = (kernel::mink(wn, a), kernel::mink(wn, b));
        let l = lap.node_mut(idx);
        for c in 0..d {
            l[c] -= wa * a[c] + wb * b[c];
        }
    }
    res.axpy(-1.0, &lap)?;
    let mut psi_p = psi.clone();
    for p in psi_p.iter_mut() {
        project_all(phi, p);
    }
    for i in 0..2 {
        let mut dt_psi = grid::diff(&vel, i);
        project_all(phi, &mut dt_psi);
        add_wedge(&mut res, 1.0, w, &psi_p[i], &psi_p[i]);
        add_wedge(&mut res, -forcing, &psi_t, &psi_p[i], &dt_psi);
    }
    Ok(tangent_l1(&res))
}

// ---------------------------------------------------------------------------
// travelling and self-similar diagnostics

fn spectral_grad(spec: &Spectral, f: &Field) -> Result<[Field; 2]> {
    Ok([spec.derivative(f, 0)?, spec.derivative(f, 1)?])
}

/// `|phi_t + v . d_x phi|` in `L^2`, spatial derivatives spectral.
pub fn travelling_diag(state: &WaveState, v: [f64; 2]) -> Result<f64> {
    let phi = state.phi.field();
    let spec = Spectral::new(*phi.grid());
    let g = spectral_grad(&spec, phi)?;
    let d = phi.ncomp();
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    for idx in 0..phi.grid().len() {
        let (a, b, vt) = (g[0].node(idx), g[1].node(idx), state.phi_t.node(idx));
        for c in 0..d {
            x[c] = v[0] * a[c] + v[1] * b[c];
        }
        kernel::tangent_project(phi.node(idx), &mut x);
        for c in 0..d {
            x[c] += vt[c];
        }
        total += kernel::mink(&x, &x).max(0.0);
    }
    Ok((total * phi.grid().cell_area()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimRow {
    pub s: f64,
    /// `|t psi_t + x . psi_x + 2 s psi_s|` in `L^2(|x| <= radius)`.
    pub psi_x_norm: f64,
}

fn selfsim_field(maps: [&Field; 3], t: f64, dt: f64, s: f64, spec: &Spectral) -> Result<Field> {
    let phi = maps[1];
    let grid = *phi.grid();
    let d = phi.ncomp();
    let g = spectral_grad(spec, phi)?;
    let mut tens = vec![0.0; phi.data().len()];
    heat_flow::tension_raw(&grid, d, phi.data(), &mut tens);
    let mut out = Field::zeros(grid, d);
    for idx in 0..grid.len() {
        let (x, y) = grid.position(idx);
        let (a, b, p) = (maps[0].node(idx), maps[2].node(idx), phi.node(idx));
        let o = out.node_mut(idx);
        for c in 0..d {
            o[c] = t * (b[c] - a[c]) / (2.0 * dt) + x * g[0].node(idx)[c] + y * g[1].node(idx)[c] + 2.0 * s * tens[idx * d + c];
        }
        kernel::tangent_project(p, o);
    }
    Ok(out)
}

fn disk_l2(f: &Field, radius: f64) -> f64 {
    let grid = *f.grid();
    let mut total = 0.0;
    for idx in 0..grid.len() {
        let (x, y) = grid.position(idx);
        if x.hypot(y) <= radius {
            let v = f.node(idx);
            total += kernel::mink(v, v).max(0.0);
        }
    }
    (total * grid.cell_area()).sqrt()
}

/// `|psi_X(s)|` on `|x| <= radius` for the heat extension of three wave-time
/// samples, at `s = 0` and every rung.
pub fn selfsim_diag(states: [&WaveState; 3], flow: &HeatFlowConfig, radius: f64) -> Result<Vec<SelfSimRow>> {
    let dt = check_triple(states)?;
    let t = states[1].t;
    let spec = Spectral::new(*states[1].grid());
    let flows = [
        heat_flow::run(&states[0].phi, flow)?,
        heat_flow::run(&states[1].phi, flow)?,
        heat_flow::run(&states[2].phi, flow)?,
    ];
    let len = flows.iter().map(|f| f.rungs.len()).min().unwrap_or(0);
    (0..len)
        .map(|j| {
            let s = flows[1].rungs[j].s;
            let f = selfsim_field([&flows[0].rungs[j].phi, &flows[1].rungs[j].phi, &flows[2].rungs[j].phi], t, dt, s, &spec)?;
            Ok(SelfSimRow {
                s,
                psi_x_norm: disk_l2(&f, radius),
            })
        })
        .collect()
}

/// `|t phi_t + x . d_x phi|` on `|x| <= radius` for one state.
pub fn selfsim_at_rest_time(state: &WaveState, radius: f64) -> Result<f64> {
    let phi = state.phi.field();
    let spec = Spectral::new(*phi.grid());
    let g = spectral_grad(&spec, phi)?;
    let grid = *phi.grid();
    let d = phi.ncomp();
    let mut out = Field::zeros(grid, d);
    for idx in 0..grid.len() {
        let (x, y) = grid.position(idx);
        let o = out.node_mut(idx);
        for c in 0..d {
            o[c] = state.t * state.phi_t.node(idx)[c] + x * g[0].node(idx)[c] + y * g[1].node(idx)[c];
        }
        kernel::tangent_project(phi.node(idx), o);
    }
    Ok(disk_l2(&out, radius))
}

// ---------------------------------------------------------------------------
// Hopf quantities

#[derive(Debug, Clone)]
pub struct HopfReport {
    /// `G` inside the light cone, zero outside and at the origin.
    pub g: ScalarField,
    /// `(r_k, F(r_k))` on rings `r_k = k h < |t|`.
    pub f_profile: Vec<(f64, f64)>,
    /// `int |x_i T_0i + t T_ii - <phi_t, t phi_t + r phi_r>|`.
    pub identity_residual: f64,
    /// `r^2 T_00 + t x_i T_0i + G/2` inside the cone.
    pub selfsim_defect: ScalarField,
}

impl HopfReport {
    pub fn selfsim_defect_sup(&self) -> f64 {
        self.selfsim_defect.sup()
    }
}

/// Periodic bilinear interpolation of a scalar field.
pub fn sample_bilinear(f: &Field, x: f64, y: f64) -> f64 {
    let grid = f.grid();
    let n = grid.n() as isize;
    let h = grid.h();
    let u = (x + grid.half_width()) / h;
    let v = (y + grid.half_width()) / h;
    let (i0, j0) = (u.floor(), v.floor());
    let (fx, fy) = (u - i0, v - j0);
    let at = |i: isize, j: isize| {
        let idx = grid.index(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize);
        f.node(idx)[0]
    };
    let (i0, j0) = (i0 as isize, j0 as isize);
    (1.0 - fx) * (1.0 - fy) * at(i0, j0)
        + fx * (1.0 - fy) * at(i0 + 1, j0)
        + (1.0 - fx) * fy * at(i0, j0 + 1)
        + fx * fy * at(i0 + 1, j0 + 1)
}

pub fn hopf_quantities(state: &WaveState) -> Result<HopfReport> {
    let t = state.t;
    if !(t < 0.0) {
        return Err(invalid("Hopf quantities are defined for t < 0"));
    }
    let grid = *state.grid();
    if t.abs() > grid.half_width() {
        return Err(invalid("light cone leaves the grid"));
    }
    let phi = state.phi.field();
    let d = phi.ncomp();
    let g = grid::grad(phi);
    let mut gfield = Field::zeros(grid, 1);
    let mut defect = Field::zeros(grid, 1);
    let mut resid = 0.0;
    let (mut dr, mut dth, mut d1, mut d2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for idx in 0..grid.len() {
        let (x, y) = grid.position(idx);
        let r = x.hypot(y);
        let p = phi.node(idx);
        d1.copy_from_slice(g[0].node(idx));
        d2.copy_from_slice(g[1].node(idx));
        kernel::tangent_project(p, &mut d1);
        kernel::tangent_project(p, &mut d2);
        let vt = state.phi_t.node(idx);
        for c in 0..d {
            // r phi_r and phi_theta
            dr[c] = x * d1[c] + y * d2[c];
            dth[c] = x * d2[c] - y * d1[c];
        }
        let t00 = 0.5 * (kernel::mink(vt, vt) + kernel::mink(&d1, &d1) + kernel::mink(&d2, &d2));
        let xt0 = kernel::mink(vt, &dr);
        // T_ii = Gamma_00 in two space dimensions
        let tii = kernel::mink(vt, vt);
        let rhs = t * kernel::mink(vt, vt) + kernel::mink(vt, &dr);
        resid += (xt0 + t * tii - rhs).abs();
        if r > 0.0 && r < t.abs() {
            let rr2 = kernel::mink(&dr, &dr);
            let gv = (t * t - r * r) / (t * t) * rr2 - kernel::mink(&dth, &dth);
            gfield.node_mut(idx)[0] = gv;
            defect.node_mut(idx)[0] = r * r * t00 + t * xt0 + 0.5 * gv;
        }
    }
    let h = grid.h();
    let mut f_profile = Vec::new();
    let mut k = 1;
    while (k as f64) * h < t.abs() {
        let r = k as f64 * h;
        let samples = 8 * (r / h).ceil() as usize;
        let step = std::f64::consts::TAU / samples as f64;
        let total: f64 = (0..samples)
            .map(|q| {
                let th = q as f64 * step;
                sample_bilinear(&gfield, r * th.cos(), r * th.sin())
            })
            .sum();
        f_profile.push((r, total * step));
        k += 1;
    }
    Ok(HopfReport {
        g: gfield,
        f_profile,
        identity_residual: resid * grid.cell_area(),
        selfsim_defect: defect,
    })
}

/// `int_{t in [-2,-1]} int_{|t|-2 eps <= |x| <= |t|-eps} |d_theta phi|^2 dx dt`
/// by the trapezoid rule over the recorded states, with its ratio to `eps E`.
pub fn angular_energy_shell(trace: &WaveTrace, eps: f64) -> Result<(f64, f64)> {
    let first = trace.states.first().ok_or_else(|| invalid("empty wave trace"))?;
    let grid = *first.grid();
    if eps < 2.0 * grid.h() {
        return Err(invalid("shell is thinner than two cells"));
    }
    let inside: Vec<&WaveState> = trace
        .states
        .iter()
        .filter(|s| s.t >= -2.0 - 1e-12 && s.t <= -1.0 + 1e-12)
        .collect();
    if inside.len() < 2 || inside[0].t > -2.0 + 1e-9 || inside[inside.len() - 1].t < -1.0 - 1e-9 {
        return Err(invalid("trace must span t in [-2, -1]"));
    }
    let shell = |st: &WaveState| -> f64 {
        let phi = st.phi.field();
        let d = phi.ncomp();
        let g = grid::grad(phi);
        let mut th = vec![0.0; d];
        let mut total = 0.0;
        for idx in 0..grid.len() {
            let (x, y) = grid.position(idx);
            let r = x.hypot(y);
            let a = st.t.abs();
            if r >= a - 2.0 * eps && r <= a - eps {
                for c in 0..d {
                    th[c] = x * g[1].node(idx)[c] - y * g[0].node(idx)[c];
                }
                kernel::tangent_project(phi.node(idx), &mut th);
                total += kernel::mink(&th, &th).max(0.0);
            }
        }
        total * grid.cell_area()
    };
    let vals: Vec<(f64, f64)> = inside.iter().map(|s| (s.t, shell(s))).collect();
    let integral: f64 = vals.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let e = wave_energy(first);
    let ratio = if e > 0.0 { integral / (eps * e) } else { 0.0 };
    Ok((integral, ratio))
}
