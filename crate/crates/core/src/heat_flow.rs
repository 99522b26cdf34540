//! The harmonic map heat flow `d_s phi = Delta phi - |d_x phi|^2 phi` into H^m.
//!
//! The default integrator is explicit Euler on the 5-point Laplacian followed
//! by renormalisation onto the hyperboloid. Results are recorded on a
//! geometric ladder of heat times; each rung also gets probe samples at
//! `s +- ds` and `s +- 2 ds` so that `d_s` of derived quantities can be taken
//! by differencing at a spacing that refines with the grid.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{self, Field, Grid2D, MapField, Spectral, TangentField};
use crate::hyperbolic::{kernel, HPoint};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitProjected,
    DuhamelPicard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderSpec {
    /// First positive rung in units of `h^2`.
    pub s_min_factor: f64,
    pub ratio: f64,
    /// Rungs up to this heat time keep their probe samples.
    pub probe_until: f64,
}

impl Default for LadderSpec {
    fn default() -> Self {
        Self {
            s_min_factor: 1.0,
            ratio: 2f64.powf(0.25),
            probe_until: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatFlowConfig {
    /// `ds = ds_factor * h^2`.
    pub ds_factor: f64,
    pub s_max: f64,
    /// Stop once `sup |d_x phi|` falls below this fraction of its initial value.
    pub tail_eps_rel: f64,
    pub ladder: LadderSpec,
    pub scheme: Scheme,
    /// Growth of `sup |d_x phi|` between rungs treated as a blow-up.
    pub blowup_factor: f64,
}

impl Default for HeatFlowConfig {
    fn default() -> Self {
        Self {
            ds_factor: 0.125,
            s_max: 256.0,
            tail_eps_rel: 1e-6,
            ladder: LadderSpec::default(),
            scheme: Scheme::ExplicitProjected,
            blowup_factor: 10.0,
        }
    }
}

impl HeatFlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ds_factor > 0.0 && self.ds_factor <= 0.25) {
            return Err(invalid(format!(
                "ds_factor must lie in (0, 1/4], got {}",
                self.ds_factor
            )));
        }
        if !(self.tail_eps_rel > 0.0) {
            return Err(invalid("tail_eps_rel must be positive"));
        }
        if !(self.s_max > 0.0) {
            return Err(invalid("s_max must be positive"));
        }
        if !(self.ladder.s_min_factor >= 4.0 * self.ds_factor) {
            return Err(invalid("the first rung must leave room for two probe steps"));
        }
        if !(self.ladder.ratio > 1.0) {
            return Err(invalid("ladder ratio must exceed 1"));
        }
        if !(self.blowup_factor > 1.0) {
            return Err(invalid("blowup_factor must exceed 1"));
        }
        Ok(())
    }
}

/// Offsets, in steps, of the probe samples around each rung.
pub const PROBE_OFFSETS: [i8; 4] = [-2, -1, 1, 2];

/// One-sided samples after `s = 0`, in steps.
pub const START_OFFSETS: [i8; 6] = [1, 2, 3, 4, 5, 6];

/// Identifies why the driver stopped at a heat time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleTag {
    pub rung: usize,
    /// Distance from the rung in units of `ds`; 0 for the rung itself.
    pub offset: i8,
}

/// Hooks into the heat-flow driver, used to carry frames along with `phi`.
pub trait FlowObserver {
    /// Called after every step of size `ds` with the node data before and after.
    fn on_step(&mut self, _prev: &[f64], _next: &[f64], _ds: f64) -> Result<()> {
        Ok(())
    }

    /// Called at every sample time, including `s = 0`.
    fn on_sample(&mut self, _s: f64, _tags: &[SampleTag], _phi: &[f64]) -> Result<()> {
        Ok(())
    }
}

struct NoObserver;

impl FlowObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct Rung {
    pub s: f64,
    pub phi: Field,
    pub energy: f64,
    pub sup_grad: f64,
    /// `phi` at `s + k ds` for `k` in [`PROBE_OFFSETS`].
    pub probes: Option<Box<[Field; 4]>>,
}

#[derive(Debug, Clone)]
pub struct HeatFlowTrace {
    pub config: HeatFlowConfig,
    pub grid: Grid2D,
    pub at_infinity: HPoint,
    pub ds: f64,
    pub rungs: Vec<Rung>,
    pub steps: usize,
    /// Largest `E(s + ds) - E(s)` over all steps.
    pub max_energy_increase: f64,
    /// `sum ds |tension|_2^2` over all steps.
    pub dissipation: f64,
    pub max_pre_projection_violation: f64,
    pub tail_threshold: f64,
    pub tail_met: bool,
}

impl HeatFlowTrace {
    pub fn m(&self) -> usize {
        self.at_infinity.m()
    }

    pub fn ladder(&self) -> Vec<f64> {
        self.rungs.iter().map(|r| r.s).collect()
    }

    pub fn map_at(&self, rung: usize) -> MapField {
        MapField::from_parts(self.rungs[rung].phi.clone(), self.at_infinity.clone())
    }

    pub fn initial_energy(&self) -> f64 {
        self.rungs[0].energy
    }

    pub fn final_s(&self) -> f64 {
        self.rungs.last().map(|r| r.s).unwrap_or(0.0)
    }

    /// Rungs with probe samples, i.e. where `d_s` can be differenced.
    pub fn probed_rungs(&self) -> Vec<usize> {
        (0..self.rungs.len())
            .filter(|&j| self.rungs[j].probes.is_some())
            .collect()
    }

    pub fn probes(&self, rung: usize) -> Result<&[Field; 4]> {
        self.rungs
            .get(rung)
            .and_then(|r| r.probes.as_deref())
            .ok_or(Error::Boundary {
                index: rung,
                len: self.rungs.len(),
            })
    }

    /// Index of the rung closest to `s`.
    pub fn rung_near(&self, s: f64) -> usize {
        let mut best = 0;
        for (j, r) in self.rungs.iter().enumerate() {
            if (r.s - s).abs() < (self.rungs[best].s - s).abs() {
                best = j;
            }
        }
        best
    }
}

/// Five-point centred derivative from probe values at `-2, -1, +1, +2` steps.
pub fn probe_derivative(values: [&Field; 4], ds: f64) -> Result<Field> {
    let mut out = values[3].sub(values[0])?;
    out = out.scaled(-1.0);
    out.axpy(8.0, values[2])?;
    out.axpy(-8.0, values[1])?;
    Ok(out.scaled(1.0 / (12.0 * ds)))
}

#[inline(always)]
fn node_tension(d: usize, p: &[f64], nb: [&[f64]; 4], inv_h2: f64, out: &mut [f64]) {
    for c in 0..d {
        out[c] = (nb[0][c] + nb[1][c] + nb[2][c] + nb[3][c] - 4.0 * p[c]) * inv_h2;
    }
    kernel::tangent_project(p, out);
}

#[inline(always)]
fn neighbours(phi: &[f64], d: usize, n: usize, i: usize, j: usize) -> [&[f64]; 4] {
    let ip = if i + 1 == n { 0 } else { i + 1 };
    let im = if i == 0 { n - 1 } else { i - 1 };
    let jp = if j + 1 == n { 0 } else { j + 1 };
    let jm = if j == 0 { n - 1 } else { j - 1 };
    let at = |a: usize, b: usize| &phi[(b * n + a) * d..(b * n + a + 1) * d];
    [at(ip, j), at(im, j), at(i, jp), at(i, jm)]
}

/// Raw tension kernel: writes `P(Delta_5 phi)` into `out`.
pub(crate) fn tension_raw(grid: &Grid2D, d: usize, phi: &[f64], out: &mut [f64]) {
    match d {
        2 => tension_impl::<2>(grid, 2, phi, out),
        3 => tension_impl::<3>(grid, 3, phi, out),
        4 => tension_impl::<4>(grid, 4, phi, out),
        _ => tension_impl::<0>(grid, d, phi, out),
    }
}

fn tension_impl<const D: usize>(grid: &Grid2D, dyn_d: usize, phi: &[f64], out: &mut [f64]) {
    let d = if D == 0 { dyn_d } else { D };
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    out.par_chunks_mut(n * d).enumerate().for_each(|(j, row)| {
        for i in 0..n {
            let c = (j * n + i) * d;
            node_tension(d, &phi[c..c + d], neighbours(phi, d, n, i, j), inv_h2, &mut row[i * d..(i + 1) * d]);
        }
    });
}

/// One explicit projected step; returns `(h^2 sum |tension|^2, max pre-projection violation)`.
pub(crate) fn explicit_step_raw(grid: &Grid2D, d: usize, phi: &[f64], out: &mut [f64], ds: f64) -> (f64, f64) {
    match d {
        2 => explicit_impl::<2>(grid, 2, phi, out, ds),
        3 => explicit_impl::<3>(grid, 3, phi, out, ds),
        4 => explicit_impl::<4>(grid, 4, phi, out, ds),
        _ => explicit_impl::<0>(grid, d, phi, out, ds),
    }
}

fn explicit_impl<const D: usize>(
    grid: &Grid2D,
    dyn_d: usize,
    phi: &[f64],
    out: &mut [f64],
    ds: f64,
) -> (f64, f64) {
    let d = if D == 0 { dyn_d } else { D };
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let rows: Vec<(f64, f64)> = out
        .par_chunks_mut(n * d)
        .enumerate()
        .map(|(j, row)| {
            let mut t2 = 0.0;
            let mut viol: f64 = 0.0;
            for i in 0..n {
                let c = (j * n + i) * d;
                let p = &phi[c..c + d];
                let o = &mut row[i * d..(i + 1) * d];
                node_tension(d, p, neighbours(phi, d, n, i, j), inv_h2, o);
                t2 += kernel::mink(o, o);
                for q in 0..d {
                    o[q] = p[q] + ds * o[q];
                }
                viol = viol.max((kernel::mink(o, o) + 1.0).abs());
                kernel::normalize_point(o);
            }
            (t2, viol)
        })
        .collect();
    let h2 = grid.h() * grid.h();
    rows.iter()
        .fold((0.0, 0.0), |(a, b), (t, v)| (a + h2 * t, f64::max(b, *v)))
}

/// Forward-difference Dirichlet energy `1/2 sum h^2 |D^+ phi|^2`; the
/// discrete gradient of this functional is the 5-point tension.
pub(crate) fn energy_raw(grid: &Grid2D, d: usize, phi: &[f64]) -> f64 {
    let n = grid.n();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let jp = (j + 1) % n;
            let mut acc = 0.0;
            for i in 0..n {
                let ip = (i + 1) % n;
                let p = &phi[(j * n + i) * d..(j * n + i + 1) * d];
                for nb in [(j * n + ip), (jp * n + i)] {
                    let q = &phi[nb * d..(nb + 1) * d];
                    // |q - p|^2 in the Minkowski form, without forming <p,q>
                    let mut e = -(q[0] - p[0]) * (q[0] - p[0]);
                    for c in 1..d {
                        e += (q[c] - p[c]) * (q[c] - p[c]);
                    }
                    acc += 0.5 * e;
                }
            }
            acc
        })
        .collect();
    rows.iter().sum()
}

/// `sup |d_x phi|` with centred differences.
pub(crate) fn sup_grad_raw(grid: &Grid2D, d: usize, phi: &[f64]) -> f64 {
    let n = grid.n();
    let inv = 0.5 / grid.h();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut best: f64 = 0.0;
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            for i in 0..n {
                let p = &phi[(j * n + i) * d..(j * n + i + 1) * d];
                let nb = neighbours(phi, d, n, i, j);
                for c in 0..d {
                    a[c] = (nb[0][c] - nb[1][c]) * inv;
                    b[c] = (nb[2][c] - nb[3][c]) * inv;
                }
                kernel::tangent_project(p, &mut a);
                kernel::tangent_project(p, &mut b);
                best = best.max(kernel::mink(&a, &a) + kernel::mink(&b, &b));
            }
            best
        })
        .collect();
    rows.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt()
}

/// `P(Delta phi)`: the tension field with the 5-point Laplacian.
pub fn tension(phi: &MapField) -> TangentField {
    let d = phi.m() + 1;
    let mut out = vec![0.0; phi.field().data().len()];
    tension_raw(phi.grid(), d, phi.field().data(), &mut out);
    TangentField::from_field_unchecked(Field::from_vec_unchecked(*phi.grid(), d, out))
}

/// Forward-difference Dirichlet energy of a map.
pub fn dirichlet_energy(phi: &MapField) -> f64 {
    energy_raw(phi.grid(), phi.m() + 1, phi.field().data())
}

/// One explicit projected Euler step. Rejects `ds > h^2/4`.
pub fn step(phi: &MapField, ds: f64) -> Result<MapField> {
    let limit = 0.25 * phi.grid().cell_area();
    if !(ds > 0.0) || ds > limit {
        return Err(Error::Cfl { ds, limit });
    }
    let d = phi.m() + 1;
    let mut out = vec![0.0; phi.field().data().len()];
    explicit_step_raw(phi.grid(), d, phi.field().data(), &mut out, ds);
    Ok(phi.with_field(Field::from_vec_unchecked(*phi.grid(), d, out)))
}

struct PicardStepper {
    spec: Spectral,
    d: usize,
}

impl PicardStepper {
    /// `-|d_x phi|^2 phi` with spectral derivatives.
    fn nonlinearity(&self, phi: &Field) -> Result<Field> {
        let d = self.d;
        let g1 = self.spec.derivative(phi, 0)?;
        let g2 = self.spec.derivative(phi, 1)?;
        let mut out = phi.clone();
        for ((o, a), b) in out
            .data_mut()
            .chunks_mut(d)
            .zip(g1.data().chunks(d))
            .zip(g2.data().chunks(d))
        {
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            kernel::tangent_project(o, &mut a);
            kernel::tangent_project(o, &mut b);
            let e = kernel::mink(&a, &a) + kernel::mink(&b, &b);
            for x in o.iter_mut() {
                *x *= -e;
            }
        }
        Ok(out)
    }

    fn step(&self, phi: &Field, ds: f64) -> Result<(Field, f64)> {
        let lin = self.spec.heat(phi, ds)?;
        let n0 = self.spec.heat(&self.nonlinearity(phi)?, ds)?;
        let mut guess = lin.clone();
        guess.axpy(ds, &n0)?;
        let mut viol: f64 = 0.0;
        normalize_all(&mut guess, self.d, &mut viol);
        for _ in 0..2 {
            let n1 = self.nonlinearity(&guess)?;
            let mut next = lin.clone();
            next.axpy(0.5 * ds, &n0)?;
            next.axpy(0.5 * ds, &n1)?;
            viol = 0.0;
            normalize_all(&mut next, self.d, &mut viol);
            guess = next;
        }
        Ok((guess, viol))
    }
}

fn normalize_all(f: &mut Field, d: usize, viol: &mut f64) {
    for p in f.data_mut().chunks_mut(d) {
        *viol = viol.max((kernel::mink(p, p) + 1.0).abs());
        kernel::normalize_point(p);
    }
}

/// Sample schedule: every rung with its probes, sorted and merged.
fn schedule(rungs: &[f64], ds: f64) -> Vec<(f64, Vec<SampleTag>)> {
    let mut raw: Vec<(f64, SampleTag)> = vec![(0.0, SampleTag { rung: 0, offset: 0 })];
    for off in START_OFFSETS {
        raw.push((off as f64 * ds, SampleTag { rung: 0, offset: off }));
    }
    for (j, &s) in rungs.iter().enumerate().skip(1) {
        raw.push((s, SampleTag { rung: j, offset: 0 }));
        for off in PROBE_OFFSETS {
            raw.push((s + off as f64 * ds, SampleTag { rung: j, offset: off }));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tol = 1e-6 * ds;
    let mut out: Vec<(f64, Vec<SampleTag>)> = Vec::new();
    for (s, tag) in raw {
        match out.last_mut() {
            Some((s0, tags)) if (s - *s0).abs() <= tol => tags.push(tag),
            _ => out.push((s, vec![tag])),
        }
    }
    out
}

/// Heat times of the ladder rungs: `0` followed by the geometric ladder with
/// every rung rounded to a whole number of steps, so that all steps have
/// size `ds`.
pub fn rung_times(grid: &Grid2D, cfg: &HeatFlowConfig) -> Result<Vec<f64>> {
    let h2 = grid.cell_area();
    let ds = cfg.ds_factor * h2;
    let mut out = vec![0.0];
    for s in grid::geometric_ladder(cfg.ladder.s_min_factor * h2, cfg.ladder.ratio, cfg.s_max)? {
        let snapped = (s / ds).round() * ds;
        if snapped > *out.last().expect("nonempty") + 2.5 * ds {
            out.push(snapped);
        }
    }
    Ok(out)
}

pub fn run(phi0: &MapField, cfg: &HeatFlowConfig) -> Result<HeatFlowTrace> {
    run_observed(phi0, cfg, &mut NoObserver)
}

pub fn run_observed(
    phi0: &MapField,
    cfg: &HeatFlowConfig,
    observer: &mut dyn FlowObserver,
) -> Result<HeatFlowTrace> {
    cfg.validate()?;
    let grid = *phi0.grid();
    let d = phi0.m() + 1;
    let h2 = grid.cell_area();
    let ds = cfg.ds_factor * h2;
    let rung_s = rung_times(&grid, cfg)?;
    let plan = schedule(&rung_s, ds);
    let picard = match cfg.scheme {
        Scheme::DuhamelPicard => Some(PicardStepper {
            spec: Spectral::new(grid),
            d,
        }),
        Scheme::ExplicitProjected => None,
    };

    let mut phi = phi0.field().data().to_vec();
    let mut next = vec![0.0; phi.len()];
    let mut tens = vec![0.0; phi.len()];
    let mut energy = energy_raw(&grid, d, &phi);
    let sup0 = sup_grad_raw(&grid, d, &phi);
    let tail_threshold = cfg.tail_eps_rel * sup0;

    let mut trace = HeatFlowTrace {
        config: cfg.clone(),
        grid,
        at_infinity: phi0.at_infinity().clone(),
        ds,
        rungs: Vec::new(),
        steps: 0,
        max_energy_increase: f64::NEG_INFINITY,
        dissipation: 0.0,
        max_pre_projection_violation: 0.0,
        tail_threshold,
        tail_met: false,
    };
    let mut pending: BTreeMap<usize, [Option<Field>; 4]> = BTreeMap::new();
    let mut stop_rung: Option<usize> = None;
    let mut s = 0.0;
    let tol = 1e-6 * ds;

    for (target, tags) in plan {
        let tags: Vec<SampleTag> = match stop_rung {
            Some(last) => tags.into_iter().filter(|t| t.rung <= last).collect(),
            None => tags,
        };
        if tags.is_empty() {
            continue;
        }
        while s < target - tol {
            let mut dt = ds.min(target - s);
            if target - (s + dt) <= tol {
                dt = target - s;
            }
            let viol = match &picard {
                None => {
                    let (t2, v) = explicit_step_raw(&grid, d, &phi, &mut next, dt);
                    trace.dissipation += dt * t2;
                    v
                }
                Some(p) => {
                    tension_raw(&grid, d, &phi, &mut tens);
                    let t2: f64 = tens.chunks(d).map(|t| kernel::mink(t, t)).sum::<f64>() * h2;
                    trace.dissipation += dt * t2;
                    let f = Field::from_vec_unchecked(grid, d, phi.clone());
                    let (out, v) = p.step(&f, dt)?;
                    next.copy_from_slice(out.data());
                    v
                }
            };
            trace.max_pre_projection_violation = trace.max_pre_projection_violation.max(viol);
            observer.on_step(&phi, &next, dt)?;
            std::mem::swap(&mut phi, &mut next);
            let e_new = energy_raw(&grid, d, &phi);
            trace.max_energy_increase = trace.max_energy_increase.max(e_new - energy);
            energy = e_new;
            trace.steps += 1;
            s += dt;
        }
        s = target;
        for tag in &tags {
            if tag.offset == 0 {
                let sup_grad = sup_grad_raw(&grid, d, &phi);
                if let Some(prev) = trace.rungs.last() {
                    if tag.rung >= 2 && prev.sup_grad > 0.0 && sup_grad > cfg.blowup_factor * prev.sup_grad {
                        return Err(Error::BlowUp {
                            s,
                            before: prev.sup_grad,
                            after: sup_grad,
                        });
                    }
                }
                trace.rungs.push(Rung {
                    s,
                    phi: Field::from_vec_unchecked(grid, d, phi.clone()),
                    energy,
                    sup_grad,
                    probes: None,
                });
                if tag.rung >= 1 && stop_rung.is_none() && sup_grad <= tail_threshold {
                    stop_rung = Some(tag.rung);
                    trace.tail_met = true;
                }
            } else if tag.rung >= 1 && rung_s[tag.rung] <= cfg.ladder.probe_until {
                let slot = PROBE_OFFSETS.iter().position(|&o| o == tag.offset).expect("probe offset");
                pending.entry(tag.rung).or_insert_with(Default::default)[slot] =
                    Some(Field::from_vec_unchecked(grid, d, phi.clone()));
            }
        }
        observer.on_sample(s, &tags, &phi)?;
    }

    for (rung, slots) in pending {
        if rung < trace.rungs.len() && slots.iter().all(Option::is_some) {
            let [a, b, c, e] = slots.map(|f| f.expect("checked"));
            trace.rungs[rung].probes = Some(Box::new([a, b, c, e]));
        }
    }
    if trace.steps == 0 {
        trace.max_energy_increase = 0.0;
    }
    Ok(trace)
}

/// `P D_axis v` at every node: the pulled-back covariant derivative of a
/// tangent field, or of `phi` itself when `v == phi`.
pub fn covariant_diff(phi: &Field, v: &Field, axis: usize) -> Field {
    let mut out = grid::diff(v, axis);
    let d = phi.ncomp();
    for (o, p) in out.data_mut().chunks_mut(d).zip(phi.data().chunks(d)) {
        kernel::tangent_project(p, o);
    }
    out
}

/// `(phi^* nabla)_x^{k-1} d_x phi` as the list of all index orderings,
/// each an ambient field of `d = m+1` components.
fn covariant_tower(phi: &Field, k: usize) -> Vec<Field> {
    let mut layer: Vec<Field> = vec![covariant_diff(phi, phi, 0), covariant_diff(phi, phi, 1)];
    for _ in 1..k {
        layer = layer
            .iter()
            .flat_map(|v| [covariant_diff(phi, v, 0), covariant_diff(phi, v, 1)])
            .collect();
    }
    layer
}

/// `e_k = |(phi^* nabla)_x^{k-1} d_x phi|^2` for a single map.
pub fn energy_density_of(phi: &Field, k: usize) -> Result<Field> {
    if !(1..=3).contains(&k) {
        return Err(invalid(format!("energy density order must be 1, 2 or 3, got {k}")));
    }
    let grid = *phi.grid();
    let d = phi.ncomp();
    let mut out = vec![0.0; grid.len()];
    for v in covariant_tower(phi, k) {
        for (o, x) in out.iter_mut().zip(v.data().chunks(d)) {
            *o += kernel::mink(x, x).max(0.0);
        }
    }
    Ok(Field::from_vec_unchecked(grid, 1, out))
}

/// `e_k` on every rung of a trace.
pub fn energy_density(trace: &HeatFlowTrace, k: usize) -> Result<Vec<Field>> {
    trace
        .rungs
        .iter()
        .map(|r| energy_density_of(&r.phi, k))
        .collect()
}

/// `|d_x phi ^ d_x phi|^2`, the Hilbert-Schmidt norm summed over `i, j`.
pub fn wedge_density(phi: &Field) -> Field {
    let d = phi.ncomp();
    let a = covariant_diff(phi, phi, 0);
    let b = covariant_diff(phi, phi, 1);
    let out = a
        .data()
        .chunks(d)
        .zip(b.data().chunks(d))
        .map(|(x, y)| {
            let xx = kernel::mink(x, x);
            let yy = kernel::mink(y, y);
            let xy = kernel::mink(x, y);
            // |X^Y|_HS^2 = 2(|X|^2|Y|^2 - <X,Y>^2), counted for (1,2) and (2,1)
            4.0 * (xx * yy - xy * xy).max(0.0)
        })
        .collect();
    Field::from_vec_unchecked(*phi.grid(), 1, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BochnerResidual {
    pub s: f64,
    pub k: usize,
    /// `|| d_s e_k - Delta e_k + 2 e_{k+1} (+ wedge term for k = 1) ||_2`.
    pub residual_l2: f64,
    /// `|| d_s e_k ||_2`, for scale.
    pub ds_l2: f64,
    /// For k = 2: `|| residual ||_2 / || sum_{a+b+c=4} (e_a e_b e_c e_2)^{1/2} ||_2`.
    pub envelope_constant: Option<f64>,
    /// For k = 1: `|| |d_x phi ^ d_x phi|^2 ||_2`.
    pub wedge_l2: Option<f64>,
}

/// Residual of the Bochner-Weitzenbock identity at a probed rung.
pub fn bochner_residual(trace: &HeatFlowTrace, rung: usize, k: usize) -> Result<BochnerResidual> {
    if !(1..=2).contains(&k) {
        return Err(invalid(format!("Bochner residual is available for k = 1, 2, got {k}")));
    }
    let probes = trace.probes(rung)?;
    let phi = &trace.rungs[rung].phi;
    let ek: Vec<Field> = probes
        .iter()
        .map(|p| energy_density_of(p, k))
        .collect::<Result<_>>()?;
    let dse = probe_derivative([&ek[0], &ek[1], &ek[2], &ek[3]], trace.ds)?;
    let e_k = energy_density_of(phi, k)?;
    let e_next = energy_density_of(phi, k + 1)?;
    let mut resid = dse.sub(&grid::laplacian(&e_k))?;
    resid.axpy(2.0, &e_next)?;
    let (envelope_constant, wedge_l2) = if k == 1 {
        let w = wedge_density(phi);
        resid.axpy(1.0, &w)?;
        (None, Some(w.l2_sq().sqrt()))
    } else {
        let e1 = energy_density_of(phi, 1)?;
        let env_data: Vec<f64> = e1
            .data()
            .iter()
            .zip(e_k.data())
            .map(|(a, b)| 3.0 * a * b)
            .collect();
        let env = Field::from_vec_unchecked(*phi.grid(), 1, env_data).l2_sq().sqrt();
        let r = resid.l2_sq().sqrt();
        (Some(if env > 0.0 { r / env } else { 0.0 }), None)
    };
    Ok(BochnerResidual {
        s: trace.rungs[rung].s,
        k,
        residual_l2: resid.l2_sq().sqrt(),
        ds_l2: dse.l2_sq().sqrt(),
        envelope_constant,
        wedge_l2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `max_x (|d_x phi(s)| - e^{s Delta}|d_x phi(0)|)_+` per rung.
    pub violation: Vec<f64>,
    /// `max_x (e^{s Delta}|d_x phi(0)| - |d_x phi(s)|)_+` per rung.
    pub slack: Vec<f64>,
    pub max_violation: f64,
}

/// Comparison of `|d_x phi(s)|` with the free heat evolution of `|d_x phi(0)|`.
pub fn comparison_check(trace: &HeatFlowTrace) -> Result<ComparisonReport> {
    let spec = Spectral::new(trace.grid);
    let mag0 = energy_density_of(&trace.rungs[0].phi, 1)?.map(f64::sqrt);
    let mut violation = Vec::with_capacity(trace.rungs.len());
    let mut slack = Vec::with_capacity(trace.rungs.len());
    for r in &trace.rungs {
        let bound = spec.heat(&mag0, r.s)?;
        let mag = energy_density_of(&r.phi, 1)?.map(f64::sqrt);
        let mut v: f64 = 0.0;
        let mut sl: f64 = 0.0;
        for (a, b) in mag.data().iter().zip(bound.data()) {
            v = v.max(a - b);
            sl = sl.max(b - a);
        }
        violation.push(v.max(0.0));
        slack.push(sl.max(0.0));
    }
    let max_violation = violation.iter().copied().fold(0.0, f64::max);
    Ok(ComparisonReport {
        violation,
        slack,
        max_violation,
    })
}

/// Both sides of the nonlinear Poincare inequality:
/// `(|| |eta^{ij} (phi^* nabla)_i d_j phi| ||_{L1loc}, || |d_x phi| ||_{L1loc})`.
pub fn near_harmonicity(phi: &MapField, eta: [[f64; 2]; 2]) -> Result<(f64, f64)> {
    let det = eta[0][0] * eta[1][1] - eta[0][1] * eta[1][0];
    if (eta[0][1] - eta[1][0]).abs() > 1e-12 || !(eta[0][0] > 0.0) || !(det > 0.0) {
        return Err(invalid("eta must be symmetric positive definite"));
    }
    let inv = [
        [eta[1][1] / det, -eta[0][1] / det],
        [-eta[1][0] / det, eta[0][0] / det],
    ];
    let f = phi.field();
    let d = f.ncomp();
    let mut acc = Field::zeros(*f.grid(), d);
    for a in 0..2 {
        for b in 0..2 {
            if inv[a][b] != 0.0 {
                acc.axpy(inv[a][b], &grid::second_diff(f, a, b))?;
            }
        }
    }
    let mut mag = vec![0.0; f.grid().len()];
    for ((m, v), p) in mag.iter_mut().zip(acc.data_mut().chunks_mut(d)).zip(f.data().chunks(d)) {
        kernel::tangent_project(p, v);
        *m = kernel::mink(v, v).max(0.0).sqrt();
    }
    let lhs = grid::l1loc(&Field::from_vec_unchecked(*f.grid(), 1, mag), 1.0);
    let rhs = grid::l1loc(&energy_density_of(f, 1)?.map(f64::sqrt), 1.0);
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `log sup|d_x phi|` against `log s`.
    pub slope: f64,
    /// `max s^{1/2} sup|d_x phi(s)|` over the window.
    pub max_scaled: f64,
    pub rungs_used: usize,
}

pub fn decay_fit(trace: &HeatFlowTrace, s_lo: f64, s_hi: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = trace
        .rungs
        .iter()
        .filter(|r| r.s >= s_lo * (1.0 - 1e-9) && r.s <= s_hi * (1.0 + 1e-9) && r.sup_grad > 0.0)
        .map(|r| (r.s.ln(), r.sup_grad.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate(format!(
            "fewer than two rungs with nonzero gradient in [{s_lo}, {s_hi}]"
        )));
    }
    let max_scaled = trace
        .rungs
        .iter()
        .filter(|r| r.s >= s_lo * (1.0 - 1e-9) && r.s <= s_hi * (1.0 + 1e-9))
        .map(|r| r.s.sqrt() * r.sup_grad)
        .fold(0.0, f64::max);
    Ok(DecayFit {
        slope: least_squares_slope(&pts),
        max_scaled,
        rungs_used: pts.len(),
    })
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Relative error between the differenced `dE/ds` and `-||d_s phi||_2^2` at
/// each probed rung with nonzero dissipation.
pub fn dissipation_rate_errors(trace: &HeatFlowTrace) -> Result<Vec<(f64, f64)>> {
    let d = trace.m() + 1;
    let mut out = Vec::new();
    for j in trace.probed_rungs() {
        let probes = trace.probes(j)?;
        let e: Vec<f64> = probes.iter().map(|p| energy_raw(&trace.grid, d, p.data())).collect();
        let de = (-e[3] + 8.0 * e[2] - 8.0 * e[1] + e[0]) / (12.0 * trace.ds);
        let t = tension(&trace.map_at(j));
        let rate = t.norm_sq_density().integral();
        if rate > 0.0 {
            out.push((trace.rungs[j].s, (de + rate).abs() / rate));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceManifest {
    pub ladder: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: Vec<f64>,
    pub sup_grad: Vec<f64>,
    pub files: Vec<String>,
    pub ds: f64,
    pub tail_met: bool,
    pub config: HeatFlowConfig,
}

/// One field file per rung plus `manifest.json`.
pub fn export_trace(trace: &HeatFlowTrace, dir: &Path) -> Result<TraceManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (j, r) in trace.rungs.iter().enumerate() {
        let name = format!("phi_{j:04}");
        io::write_field(&dir.join(&name), &r.phi, Some(trace.at_infinity.coords()))?;
        files.push(name);
    }
    let manifest = TraceManifest {
        ladder: trace.ladder(),
        energy: trace.rungs.iter().map(|r| r.energy).collect(),
        sup_grad: trace.rungs.iter().map(|r| r.sup_grad).collect(),
        files,
        ds: trace.ds,
        tail_met: trace.tail_met,
        config: trace.config.clone(),
    };
    io::write_json_atomic(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn small_cfg(s_max: f64) -> HeatFlowConfig {
        HeatFlowConfig {
            s_max,
            ..Default::default()
        }
    }

    #[test]
    fn constant_map_is_stationary() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let p = HPoint::lift(&[0.3, -0.4]);
        let phi = MapField::constant(g, &p);
        assert!(tension(&phi).field().sup() < 1e-12);
        let next = step(&phi, 0.1 * g.cell_area()).unwrap();
        assert!(next.field().sub(phi.field()).unwrap().sup() < 1e-14);
        let tr = run(&phi, &small_cfg(1.0)).unwrap();
        assert!(tr.tail_met);
        assert!(tr.rungs.iter().all(|r| r.energy == 0.0));
    }

    #[test]
    fn step_rejects_cfl_violation() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let phi = MapField::constant(g, &HPoint::origin(2));
        assert!(matches!(step(&phi, g.cell_area()), Err(Error::Cfl { .. })));
    }

    #[test]
    fn schedule_merges_and_orders() {
        let ds = 0.125;
        let plan = schedule(&[0.0, 1.0, 1.19], ds);
        assert!(plan.windows(2).all(|w| w[0].0 < w[1].0));
        let count: usize = plan.iter().map(|p| p.1.len()).sum();
        assert_eq!(count, 17);
    }

    #[test]
    fn energy_decreases_and_constraints_hold() {
        let g = Grid2D::new(32, 8.0).unwrap();
        let phi = data::generic_bump(g, 2, 1.0, 1.5).unwrap();
        let tr = run(&phi, &small_cfg(1.0)).unwrap();
        assert!(tr.max_energy_increase <= 1e-10);
        for r in &tr.rungs {
            let m = MapField::from_parts(r.phi.clone(), tr.at_infinity.clone());
            assert!(m.constraint_violation() < 1e-10);
        }
        assert!(tr.rungs.last().unwrap().energy < tr.rungs[0].energy);
    }

    #[test]
    fn energy_density_of_constant_vanishes() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let phi = MapField::constant(g, &HPoint::lift(&[1.0, 2.0]));
        for k in 1..=3 {
            assert!(energy_density_of(phi.field(), k).unwrap().sup() < 1e-20);
        }
        assert!(energy_density_of(phi.field(), 4).is_err());
    }

    #[test]
    fn near_harmonicity_rejects_bad_eta() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let phi = MapField::constant(g, &HPoint::origin(2));
        assert_eq!(near_harmonicity(&phi, [[1.0, 0.0], [0.0, 1.0]]).unwrap(), (0.0, 0.0));
        assert!(near_harmonicity(&phi, [[1.0, 2.0], [2.0, 1.0]]).is_err());
    }
}
