//! Caloric gauge: orthonormal frames carried along the heat flow by parallel
//! transport and rotated, independently of `s`, onto a fixed frame at infinity.
//!
//! Frame fields store `m` ambient columns per node (`m (m+1)` components).
//! Connection matrices are stored row-major per node with the convention
//! `(A_i)_{ab} = <D_i e_b, e_a>`, so that `D_i = d_i + A_i` on frame components.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align;
use crate::error::{invalid, Error, Result};
use crate::grid::{self, Field, Grid2D, MapField, ScalarField, Spectral, TangentField};
use crate::heat_flow::{
    self, probe_derivative, FlowObserver, HeatFlowConfig, HeatFlowTrace, SampleTag, Scheme,
    PROBE_OFFSETS,
};
use crate::hyperbolic::{kernel, reorthonormalize, seed_frame, HPoint, OrthoFrame};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaugeConfig {
    /// Bound on the alignment defect plus the spread of the final map.
    pub frame_tail_tol: f64,
    /// Largest tolerated loss of orthonormality in a single step.
    pub drift_tol: f64,
    /// Bound on `sup |A_s|` used by the reports.
    pub a_s_tol: f64,
    /// Size of the data perturbation used for `t`-derivatives.
    pub twin_eps: f64,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self {
            frame_tail_tol: 1e-4,
            drift_tol: 1e-8,
            a_s_tol: 1e-6,
            twin_eps: 1e-5,
        }
    }
}

impl GaugeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_tail_tol", self.frame_tail_tol),
            ("drift_tol", self.drift_tol),
            ("a_s_tol", self.a_s_tol),
            ("twin_eps", self.twin_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("gauge.{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// nodewise kernels

/// Transport every frame column from `prev` to `next`, correct it by the
/// holonomy of the chord against the curve, then re-orthonormalise; returns
/// the largest drift seen.
///
/// `bend` holds `ds^2 phi''` at the midpoint of the step. The chord transport
/// alone leaves an `O(ds^2)` rotation per unit heat time.
fn transport_frames(grid: &Grid2D, d: usize, prev: &[f64], next: &[f64], bend: &[f64], frames: &mut [f64]) -> f64 {
    let m = d - 1;
    let n = grid.n();
    let w = m * d;
    frames
        .par_chunks_mut(n * w)
        .enumerate()
        .map(|(j, row)| {
            let mut drift: f64 = 0.0;
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            for i in 0..n {
                let idx = j * n + i;
                let p = &prev[idx * d..(idx + 1) * d];
                let q = &next[idx * d..(idx + 1) * d];
                for c in 0..d {
                    x[c] = q[c] - p[c];
                    y[c] = bend[idx * d + c];
                }
                kernel::tangent_project(q, &mut x);
                kernel::tangent_project(q, &mut y);
                let fr = &mut row[i * w..(i + 1) * w];
                for col in fr.chunks_mut(d) {
                    kernel::transport(p, q, col);
                    // exp(K) to second order, K e = (X <Y,e> - Y <X,e>) / 12
                    let (xe, ye) = (kernel::mink(&x, col), kernel::mink(&y, col));
                    let (xy, xx, yy) = (kernel::mink(&x, &y), kernel::mink(&x, &x), kernel::mink(&y, &y));
                    // xk = <Y, K e>, yk = <X, K e>
                    let (xk, yk) = ((xy * ye - yy * xe) / 12.0, (xx * ye - xy * xe) / 12.0);
                    for c in 0..d {
                        col[c] += (x[c] * ye - y[c] * xe) / 12.0 + 0.5 * (x[c] * xk - y[c] * yk) / 12.0;
                    }
                }
                drift = drift.max(reorthonormalize(q, fr));
            }
            drift
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Recent maps of one flow, enough for a four-point second difference at
/// every step midpoint.
#[derive(Default)]
struct History {
    steps: usize,
    older: Vec<f64>,
    old: Vec<f64>,
    ahead: Vec<f64>,
    bend: Vec<f64>,
}

impl History {
    /// Fills `self.bend` for the step `prev -> next` and advances.
    fn advance(&mut self, grid: &Grid2D, d: usize, prev: &[f64], next: &[f64], ds: f64) {
        let len = prev.len();
        self.bend.resize(len, 0.0);
        match self.steps {
            0 => {
                let mut two = vec![0.0; len];
                let mut three = vec![0.0; len];
                heat_flow::explicit_step_raw(grid, d, next, &mut two, ds);
                heat_flow::explicit_step_raw(grid, d, &two, &mut three, ds);
                for k in 0..len {
                    self.bend[k] = 1.5 * prev[k] - 3.5 * next[k] + 2.5 * two[k] - 0.5 * three[k];
                }
                self.ahead = three;
            }
            1 => {
                for k in 0..len {
                    self.bend[k] = 0.5 * (self.old[k] - prev[k] - next[k] + self.ahead[k]);
                }
                self.ahead = Vec::new();
            }
            _ => {
                for k in 0..len {
                    self.bend[k] = -0.5 * self.older[k] + 2.5 * self.old[k] - 3.5 * prev[k] + 1.5 * next[k];
                }
            }
        }
        std::mem::swap(&mut self.older, &mut self.old);
        self.old.clear();
        self.old.extend_from_slice(prev);
        self.steps += 1;
    }
}

fn seed_frames(phi: &Field) -> Vec<f64> {
    let d = phi.ncomp();
    let m = d - 1;
    let mut out = vec![0.0; phi.grid().len() * m * d];
    for (idx, fr) in out.chunks_mut(m * d).enumerate() {
        seed_frame(phi.node(idx), fr);
    }
    out
}

/// `e^* v`: frame components of an ambient field.
pub fn pullback(frames: &Field, v: &Field) -> Field {
    let d = v.ncomp();
    let m = frames.ncomp() / d;
    let mut out = Field::zeros(*v.grid(), m);
    for idx in 0..v.grid().len() {
        let fr = frames.node(idx);
        let x = v.node(idx);
        let o = out.node_mut(idx);
        for a in 0..m {
            o[a] = kernel::mink(&fr[a * d..(a + 1) * d], x);
        }
    }
    out
}

/// `e u`: ambient vector with frame components `u`.
pub fn pushforward(frames: &Field, u: &Field, d: usize) -> Field {
    let m = u.ncomp();
    let mut out = Field::zeros(*u.grid(), d);
    for idx in 0..u.grid().len() {
        let fr = frames.node(idx);
        let x = u.node(idx);
        let o = out.node_mut(idx);
        for a in 0..m {
            for c in 0..d {
                o[c] += x[a] * fr[a * d + c];
            }
        }
    }
    out
}

/// Antisymmetrised `(A)_{ab} = <de_b, e_a>` given the frame and a derivative of it.
fn connection_from(frames: &Field, dframes: &Field, d: usize) -> Field {
    let m = frames.ncomp() / d;
    let mut out = Field::zeros(*frames.grid(), m * m);
    for idx in 0..frames.grid().len() {
        let e = frames.node(idx);
        let de = dframes.node(idx);
        let o = out.node_mut(idx);
        for a in 0..m {
            for b in 0..m {
                let ab = kernel::mink(&de[b * d..(b + 1) * d], &e[a * d..(a + 1) * d]);
                let ba = kernel::mink(&de[a * d..(a + 1) * d], &e[b * d..(b + 1) * d]);
                o[a * m + b] = 0.5 * (ab - ba);
            }
        }
    }
    out
}

/// Spatial connection `A_axis` from centred differences of the frame.
pub fn connection(frames: &Field, d: usize, axis: usize) -> Field {
    connection_from(frames, &grid::diff(frames, axis), d)
}

/// Pointwise Hilbert-Schmidt norm of a matrix field.
pub fn hs_norm(a: &Field) -> ScalarField {
    a.magnitude()
}

/// `A u` nodewise.
pub fn mat_vec(a: &Field, u: &Field) -> Field {
    let m = u.ncomp();
    let mut out = Field::zeros(*u.grid(), m);
    for idx in 0..u.grid().len() {
        let am = a.node(idx);
        let x = u.node(idx);
        align::apply(am, x, out.node_mut(idx));
    }
    out
}

/// `[A, B]` nodewise.
pub fn commutator(a: &Field, b: &Field) -> Field {
    let mm = a.ncomp();
    let m = (mm as f64).sqrt().round() as usize;
    let mut out = Field::zeros(*a.grid(), mm);
    for idx in 0..a.grid().len() {
        let (x, y) = (a.node(idx), b.node(idx));
        let o = out.node_mut(idx);
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += x[i * m + k] * y[k * m + j] - y[i * m + k] * x[k * m + j];
                }
                o[i * m + j] = acc;
            }
        }
    }
    out
}

/// The matrix `u v^T - v u^T` nodewise.
pub fn wedge_matrix(u: &Field, v: &Field) -> Field {
    let m = u.ncomp();
    let mut out = Field::zeros(*u.grid(), m * m);
    for idx in 0..u.grid().len() {
        let (x, y) = (u.node(idx), v.node(idx));
        let o = out.node_mut(idx);
        for i in 0..m {
            for j in 0..m {
                o[i * m + j] = x[i] * y[j] - y[i] * x[j];
            }
        }
    }
    out
}

/// `(u ^ v) w = u (v.w) - v (u.w)` nodewise.
pub fn wedge_apply(u: &Field, v: &Field, w: &Field) -> Field {
    let m = u.ncomp();
    let mut out = Field::zeros(*u.grid(), m);
    for idx in 0..u.grid().len() {
        let (x, y, z) = (u.node(idx), v.node(idx), w.node(idx));
        let vw: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
        let uw: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
        let o = out.node_mut(idx);
        for i in 0..m {
            o[i] = x[i] * vw - y[i] * uw;
        }
    }
    out
}

/// `D_axis u = d_axis u + A_axis u`.
pub fn cov(u: &Field, a: &Field, axis: usize) -> Field {
    let mut out = grid::diff(u, axis);
    out.axpy(1.0, &mat_vec(a, u)).expect("same grid");
    out
}

/// `sum_i D_i D_i u`.
pub fn cov_laplacian(u: &Field, a_x: &[Field; 2]) -> Field {
    let mut out = Field::zeros(*u.grid(), u.ncomp());
    for i in 0..2 {
        let du = cov(u, &a_x[i], i);
        out.axpy(1.0, &cov(&du, &a_x[i], i)).expect("same grid");
    }
    out
}

/// `sum_i (u ^ psi_i) psi_i`.
pub fn curvature_term(u: &Field, psi_x: &[Field; 2]) -> Field {
    let mut out = wedge_apply(u, &psi_x[0], &psi_x[0]);
    out.axpy(1.0, &wedge_apply(u, &psi_x[1], &psi_x[1])).expect("same grid");
    out
}

/// Weighted derivative of a window of frames, folded into `A_s`.
fn a_s_from_window(window: &[Vec<f64>], weights: &[f64], centre: usize, grid: Grid2D, d: usize, ds: f64) -> ScalarField {
    let w = window[0].len() / grid.len();
    let mut de = vec![0.0; window[0].len()];
    for (k, fr) in window.iter().enumerate() {
        if weights[k] != 0.0 {
            for (o, x) in de.iter_mut().zip(fr) {
                *o += weights[k] * x / ds;
            }
        }
    }
    let frames = Field::from_vec_unchecked(grid, w, window[centre].clone());
    let dframes = Field::from_vec_unchecked(grid, w, de);
    hs_norm(&connection_from(&frames, &dframes, d))
}

const CENTRED5: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const FORWARD7: [f64; 7] = [-49.0 / 20.0, 6.0, -7.5, 20.0 / 3.0, -3.75, 1.2, -1.0 / 6.0];

// ---------------------------------------------------------------------------
// observer carrying frames along the flow

type ProbeSlot = Option<(Field, Option<Field>)>;

struct Carrier {
    frames: Vec<f64>,
    /// Twins evolve their own map.
    phi: Option<Vec<f64>>,
    scratch: Vec<f64>,
    rung_frames: Vec<Field>,
    rung_phi: Vec<Field>,
    window: BTreeMap<usize, Vec<Option<Vec<f64>>>>,
    kept: BTreeMap<usize, [ProbeSlot; 4]>,
    a_s: BTreeMap<usize, ScalarField>,
    measure_a_s: bool,
    max_drift: f64,
    history: History,
}

impl Carrier {
    fn new(phi0: &Field, own: bool, measure_a_s: bool) -> Self {
        Self {
            frames: seed_frames(phi0),
            phi: own.then(|| phi0.data().to_vec()),
            scratch: if own { vec![0.0; phi0.data().len()] } else { Vec::new() },
            rung_frames: Vec::new(),
            rung_phi: Vec::new(),
            window: BTreeMap::new(),
            kept: BTreeMap::new(),
            a_s: BTreeMap::new(),
            measure_a_s,
            max_drift: 0.0,
            history: History::default(),
        }
    }
}

struct GaugeObserver {
    grid: Grid2D,
    d: usize,
    ds: f64,
    rung_s: Vec<f64>,
    probe_until: f64,
    drift_tol: f64,
    main: Carrier,
    twins: Vec<Carrier>,
}

impl GaugeObserver {
    fn record(&mut self, tag: SampleTag, main_phi: &[f64]) {
        let grid = self.grid;
        let d = self.d;
        let w = (d - 1) * d;
        let keep = tag.rung >= 1 && tag.offset != 0 && self.rung_s[tag.rung] <= self.probe_until;
        let pslot = PROBE_OFFSETS.iter().position(|&o| o == tag.offset);
        let ds = self.ds;
        let carriers = std::iter::once(&mut self.main).chain(self.twins.iter_mut());
        for c in carriers {
            let phi_now: &[f64] = c.phi.as_deref().unwrap_or(main_phi);
            if tag.offset == 0 {
                c.rung_frames.push(Field::from_vec_unchecked(grid, w, c.frames.clone()));
                if c.phi.is_some() {
                    c.rung_phi.push(Field::from_vec_unchecked(grid, d, phi_now.to_vec()));
                }
            }
            if keep {
                if let Some(k) = pslot {
                    let phi_copy = c.phi.as_ref().map(|p| Field::from_vec_unchecked(grid, d, p.clone()));
                    c.kept.entry(tag.rung).or_insert_with(Default::default)[k] =
                        Some((Field::from_vec_unchecked(grid, w, c.frames.clone()), phi_copy));
                }
            }
            if c.measure_a_s {
                let slot = if tag.rung == 0 {
                    tag.offset as isize
                } else {
                    tag.offset as isize + 2
                };
                let (weights, centre): (&[f64], usize) = if tag.rung == 0 { (&FORWARD7, 0) } else { (&CENTRED5, 2) };
                if (0..weights.len() as isize).contains(&slot) {
                    let win = c.window.entry(tag.rung).or_insert_with(|| vec![None; weights.len()]);
                    win[slot as usize] = Some(c.frames.clone());
                    if win.iter().all(Option::is_some) {
                        let win = c.window.remove(&tag.rung).expect("present");
                        let full: Vec<Vec<f64>> = win.into_iter().map(|f| f.expect("checked")).collect();
                        c.a_s.insert(tag.rung, a_s_from_window(&full, weights, centre, grid, d, ds));
                    }
                }
            }
        }
    }
}

impl FlowObserver for GaugeObserver {
    fn on_step(&mut self, prev: &[f64], next: &[f64], ds: f64) -> Result<()> {
        let grid = self.grid;
        let d = self.d;
        if (ds - self.ds).abs() > 1e-9 * self.ds {
            return Err(invalid("frame transport needs uniform heat steps"));
        }
        let main = &mut self.main;
        main.history.advance(&grid, d, prev, next, ds);
        let drift = transport_frames(&grid, d, prev, next, &main.history.bend, &mut main.frames);
        main.max_drift = main.max_drift.max(drift);
        for t in self.twins.iter_mut() {
            let phi = t.phi.as_mut().expect("twin map");
            heat_flow::explicit_step_raw(&grid, d, phi, &mut t.scratch, ds);
            t.history.advance(&grid, d, phi, &t.scratch, ds);
            let drift = transport_frames(&grid, d, phi, &t.scratch, &t.history.bend, &mut t.frames);
            std::mem::swap(phi, &mut t.scratch);
            t.max_drift = t.max_drift.max(drift);
        }
        let worst = std::iter::once(&self.main)
            .chain(self.twins.iter())
            .map(|c| c.max_drift)
            .fold(0.0, f64::max);
        if worst > self.drift_tol {
            return Err(Error::FrameDrift {
                drift: worst,
                limit: self.drift_tol,
            });
        }
        Ok(())
    }

    fn on_sample(&mut self, _s: f64, tags: &[SampleTag], phi: &[f64]) -> Result<()> {
        for &tag in tags {
            self.record(tag, phi);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// the gauge

/// Derivative fields read in a frame.
#[derive(Debug, Clone)]
pub struct GaugeState {
    pub s: f64,
    pub psi_x: [Field; 2],
    pub psi_s: Field,
    pub a_x: [Field; 2],
    /// Hilbert-Schmidt norm of `A_s`, when measured at this heat time.
    pub a_s_norm: Option<ScalarField>,
    pub psi_t: Option<Field>,
    pub a_t: Option<Field>,
}

/// `t`-derivative information carried by two perturbed flows.
#[derive(Debug, Clone)]
pub struct DynamicPart {
    pub eps: f64,
    /// Ambient `d_t phi` per rung.
    pub phi_t: Vec<Field>,
    /// `A_t` per rung measured from the perturbed frames.
    pub a_t: Vec<Field>,
    probe_phi_t: BTreeMap<usize, Box<[Field; 4]>>,
    probe_a_t: BTreeMap<usize, Box<[Field; 4]>>,
}

#[derive(Debug, Clone)]
pub struct CaloricGauge {
    pub trace: HeatFlowTrace,
    pub e_inf: OrthoFrame,
    pub config: GaugeConfig,
    /// Frame per rung, already rotated by `U(x)`.
    pub frames: Vec<Field>,
    probe_frames: BTreeMap<usize, Box<[Field; 4]>>,
    /// `|A_s|` per rung.
    pub a_s: Vec<ScalarField>,
    /// `U(x)`, row-major `m x m` per node.
    pub rotation: Field,
    pub max_drift: f64,
    /// Largest `|e~ U - e_inf|` after alignment at infinity.
    pub alignment_residual: f64,
    /// Largest distance between final map values.
    pub limit_spread: f64,
    pub dynamic: Option<DynamicPart>,
}

/// Rotation `U(x)` aligning frames at `phi_last` (transported to `p_inf`) to `e_inf`,
/// plus the alignment residual.
fn align_at_infinity(phi_last: &Field, frames: &Field, e_inf: &OrthoFrame) -> (Field, f64) {
    let d = phi_last.ncomp();
    let m = d - 1;
    let grid = *phi_last.grid();
    let p_inf = e_inf.base().coords();
    let target = e_inf.raw();
    let mut rot = Field::zeros(grid, m * m);
    let mut worst: f64 = 0.0;
    let mut moved = vec![0.0; m * d];
    let mut k = vec![0.0; m * m];
    for idx in 0..grid.len() {
        let p = phi_last.node(idx);
        moved.copy_from_slice(frames.node(idx));
        for col in moved.chunks_mut(d) {
            kernel::transport(p, p_inf, col);
            kernel::tangent_project(p_inf, col);
        }
        for a in 0..m {
            for b in 0..m {
                k[a * m + b] = kernel::mink(&moved[a * d..(a + 1) * d], &target[b * d..(b + 1) * d]);
            }
        }
        let (u, _) = align::polar_rotation(&k, m);
        for b in 0..m {
            let mut r2 = 0.0;
            for c in 0..d {
                let v: f64 = (0..m).map(|a| moved[a * d + c] * u[a * m + b]).sum();
                r2 += (v - target[b * d + c]).powi(2);
            }
            worst = worst.max(r2.sqrt());
        }
        rot.node_mut(idx).copy_from_slice(&u);
    }
    (rot, worst)
}

/// The frame `e U` nodewise.
pub fn rotate_frames(frames: &Field, rot: &Field, d: usize) -> Field {
    let m = frames.ncomp() / d;
    let mut out = Field::zeros(*frames.grid(), m * d);
    for idx in 0..frames.grid().len() {
        let e = frames.node(idx);
        let u = rot.node(idx);
        let o = out.node_mut(idx);
        for b in 0..m {
            for a in 0..m {
                let c = u[a * m + b];
                for q in 0..d {
                    o[b * d + q] += e[a * d + q] * c;
                }
            }
        }
    }
    out
}

fn finish_carrier(c: &mut Carrier, last: usize, phi_last: &Field, e_inf: &OrthoFrame, d: usize) -> Result<(Field, f64)> {
    if c.rung_frames.len() <= last {
        return Err(invalid("frame ladder is shorter than the heat-flow ladder"));
    }
    c.rung_frames.truncate(last + 1);
    let (rot, resid) = align_at_infinity(phi_last, &c.rung_frames[last], e_inf);
    for f in c.rung_frames.iter_mut() {
        *f = rotate_frames(f, &rot, d);
    }
    for slots in c.kept.values_mut() {
        for (f, _) in slots.iter_mut().flatten() {
            *f = rotate_frames(f, &rot, d);
        }
    }
    Ok((rot, resid))
}

fn take_probes(c: &mut Carrier, rungs: &[usize]) -> BTreeMap<usize, Box<[(Field, Option<Field>); 4]>> {
    let mut out = BTreeMap::new();
    for &j in rungs {
        if let Some(slots) = c.kept.remove(&j) {
            if slots.iter().all(Option::is_some) {
                let [a, b, e, f] = slots.map(|x| x.expect("checked"));
                out.insert(j, Box::new([a, b, e, f]));
            }
        }
    }
    out
}

/// Ambient `d_t phi ~ P (phi_+ - phi_-) / 2 eps` at base `phi`.
fn twin_velocity(phi: &Field, plus: &Field, minus: &Field, eps: f64) -> Field {
    let d = phi.ncomp();
    let mut out = plus.sub(minus).expect("same grid").scaled(0.5 / eps);
    for (v, p) in out.data_mut().chunks_mut(d).zip(phi.data().chunks(d)) {
        kernel::tangent_project(p, v);
    }
    out
}

/// `A_t` from the perturbed frames, read in the main frame.
fn twin_connection(frames: &Field, plus: &Field, minus: &Field, d: usize, eps: f64) -> Field {
    let de = plus.sub(minus).expect("same grid").scaled(0.5 / eps);
    connection_from(frames, &de, d)
}

/// Build the caloric gauge of the heat flow of `phi0` with boundary frame
/// `e_inf` at `phi0`'s value at infinity.
///
/// Frames are seeded at `s = 0`, parallel transported along each step and
/// finally rotated by the `s`-independent `U(x)` that aligns them with
/// `e_inf` once transported to the point at infinity. When `phi_t` is given,
/// two flows of `exp(+-eps phi_t)` are carried alongside to obtain `psi_t`
/// and `A_t`.
pub fn build_caloric_gauge(
    phi0: &MapField,
    flow: &HeatFlowConfig,
    e_inf: &OrthoFrame,
    cfg: &GaugeConfig,
    phi_t: Option<&TangentField>,
) -> Result<CaloricGauge> {
    cfg.validate()?;
    flow.validate()?;
    let grid = *phi0.grid();
    let d = phi0.m() + 1;
    if e_inf.base().m() != phi0.m() {
        return Err(Error::DimensionMismatch {
            expected: phi0.m(),
            got: e_inf.base().m(),
        });
    }
    if kernel::dist(e_inf.base().coords(), phi0.at_infinity().coords()) > 1e-12 {
        return Err(Error::BaseMismatch);
    }
    if flow.scheme != Scheme::ExplicitProjected {
        return Err(invalid("the caloric gauge is built on the explicit scheme"));
    }
    let ds = flow.ds_factor * grid.cell_area();
    let rung_s = heat_flow::rung_times(&grid, flow)?;

    let mut twins = Vec::new();
    if let Some(v) = phi_t {
        grid.check_same(v.grid())?;
        for sign in [1.0, -1.0] {
            let mut data = phi0.field().data().to_vec();
            for (p, t) in data.chunks_mut(d).zip(v.field().data().chunks(d)) {
                let step: Vec<f64> = t.iter().map(|x| sign * cfg.twin_eps * x).collect();
                let base = p.to_vec();
                kernel::exp(&base, &step, p);
                kernel::normalize_point(p);
            }
            twins.push(Carrier::new(&Field::from_vec_unchecked(grid, d, data), true, false));
        }
    }
    let mut obs = GaugeObserver {
        grid,
        d,
        ds,
        rung_s,
        probe_until: flow.ladder.probe_until,
        drift_tol: cfg.drift_tol,
        main: Carrier::new(phi0.field(), false, true),
        twins,
    };
    let trace = heat_flow::run_observed(phi0, flow, &mut obs)?;
    if !trace.tail_met {
        return Err(Error::TailUnmet {
            s: trace.final_s(),
            detail: format!(
                "sup |d_x phi| stayed above {:e}; raise s_max",
                trace.tail_threshold
            ),
        });
    }
    let last = trace.rungs.len() - 1;
    let probed = trace.probed_rungs();

    let (rotation, alignment_residual) =
        finish_carrier(&mut obs.main, last, &trace.rungs[last].phi, e_inf, d)?;
    let phi_last = &trace.rungs[last].phi;
    let ref_point = phi_last.node(0);
    let limit_spread = (0..grid.len())
        .map(|idx| kernel::dist(phi_last.node(idx), ref_point))
        .fold(0.0, f64::max);
    if alignment_residual + limit_spread > cfg.frame_tail_tol {
        return Err(Error::TailUnmet {
            s: trace.final_s(),
            detail: format!(
                "frame at s_max deviates from e_inf by {:e}; raise s_max",
                alignment_residual + limit_spread
            ),
        });
    }
    let main_probes = take_probes(&mut obs.main, &probed);
    let probe_frames: BTreeMap<usize, Box<[Field; 4]>> = main_probes
        .into_iter()
        .map(|(j, b)| {
            let [a, b2, c, e] = *b;
            (j, Box::new([a.0, b2.0, c.0, e.0]))
        })
        .collect();

    let mut max_drift = obs.main.max_drift;
    let dynamic = if obs.twins.is_empty() {
        None
    } else {
        let eps = cfg.twin_eps;
        let mut tw = std::mem::take(&mut obs.twins);
        let mut parts = Vec::new();
        for t in tw.iter_mut() {
            if t.rung_phi.len() <= last {
                return Err(invalid("perturbed flow stopped early"));
            }
            t.rung_phi.truncate(last + 1);
            let phi_l = t.rung_phi[last].clone();
            finish_carrier(t, last, &phi_l, e_inf, d)?;
            max_drift = max_drift.max(t.max_drift);
            parts.push(take_probes(t, &probed));
        }
        let (plus, minus) = (&tw[0], &tw[1]);
        let frames_main = &obs.main.rung_frames;
        let phi_t: Vec<Field> = (0..=last)
            .map(|j| twin_velocity(&trace.rungs[j].phi, &plus.rung_phi[j], &minus.rung_phi[j], eps))
            .collect();
        let a_t: Vec<Field> = (0..=last)
            .map(|j| twin_connection(&frames_main[j], &plus.rung_frames[j], &minus.rung_frames[j], d, eps))
            .collect();
        let mut probe_phi_t = BTreeMap::new();
        let mut probe_a_t = BTreeMap::new();
        for (&j, pf) in probe_frames.iter() {
            let (Some(pp), Some(pm)) = (parts[0].get(&j), parts[1].get(&j)) else {
                continue;
            };
            let base = trace.probes(j)?;
            let vt: [Field; 4] = std::array::from_fn(|k| {
                twin_velocity(
                    &base[k],
                    pp[k].1.as_ref().expect("twin map"),
                    pm[k].1.as_ref().expect("twin map"),
                    eps,
                )
            });
            let at: [Field; 4] = std::array::from_fn(|k| twin_connection(&pf[k], &pp[k].0, &pm[k].0, d, eps));
            probe_phi_t.insert(j, Box::new(vt));
            probe_a_t.insert(j, Box::new(at));
        }
        Some(DynamicPart {
            eps,
            phi_t,
            a_t,
            probe_phi_t,
            probe_a_t,
        })
    };

    let a_s: Vec<ScalarField> = (0..=last)
        .map(|j| obs.main.a_s.remove(&j).ok_or_else(|| invalid(format!("A_s missing at rung {j}"))))
        .collect::<Result<_>>()?;
    Ok(CaloricGauge {
        trace,
        e_inf: e_inf.clone(),
        config: cfg.clone(),
        frames: std::mem::take(&mut obs.main.rung_frames),
        probe_frames,
        a_s,
        rotation,
        max_drift,
        alignment_residual,
        limit_spread,
        dynamic,
    })
}

/// Frame-read fields of one map sample.
#[derive(Debug, Clone)]
pub struct FrameFields {
    pub psi_x: [Field; 2],
    pub psi_s: Field,
    pub a_x: [Field; 2],
}

/// `psi_x`, `psi_s` (from the tension) and `A_x` for a map and its frame.
pub fn frame_fields(phi: &Field, frames: &Field) -> FrameFields {
    let d = phi.ncomp();
    let grid = *phi.grid();
    let dphi = grid::grad(phi);
    let mut tens = vec![0.0; phi.data().len()];
    heat_flow::tension_raw(&grid, d, phi.data(), &mut tens);
    let tens = Field::from_vec_unchecked(grid, d, tens);
    FrameFields {
        psi_x: [pullback(frames, &dphi[0]), pullback(frames, &dphi[1])],
        psi_s: pullback(frames, &tens),
        a_x: [connection(frames, d, 0), connection(frames, d, 1)],
    }
}

impl CaloricGauge {
    pub fn m(&self) -> usize {
        self.trace.m()
    }

    pub fn d(&self) -> usize {
        self.m() + 1
    }

    pub fn grid(&self) -> &Grid2D {
        &self.trace.grid
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sup_a_s(&self) -> f64 {
        self.a_s.iter().map(|f| f.sup()).fold(0.0, f64::max)
    }

    pub fn state(&self, rung: usize) -> Result<GaugeState> {
        let r = self.trace.rungs.get(rung).ok_or(Error::Boundary {
            index: rung,
            len: self.trace.rungs.len(),
        })?;
        let ff = frame_fields(&r.phi, &self.frames[rung]);
        let (psi_t, a_t) = match &self.dynamic {
            Some(dy) => (
                Some(pullback(&self.frames[rung], &dy.phi_t[rung])),
                Some(dy.a_t[rung].clone()),
            ),
            None => (None, None),
        };
        Ok(GaugeState {
            s: r.s,
            psi_x: ff.psi_x,
            psi_s: ff.psi_s,
            a_x: ff.a_x,
            a_s_norm: Some(self.a_s[rung].clone()),
            psi_t,
            a_t,
        })
    }

    /// Rungs where probe frames exist.
    pub fn probed_rungs(&self) -> Vec<usize> {
        self.probe_frames.keys().copied().collect()
    }

    /// Frame-read fields at the four probe samples around `rung`.
    pub fn probe_states(&self, rung: usize) -> Result<[GaugeState; 4]> {
        let frames = self.probe_frames.get(&rung).ok_or(Error::Boundary {
            index: rung,
            len: self.len(),
        })?;
        let phis = self.trace.probes(rung)?;
        let s0 = self.trace.rungs[rung].s;
        let ds = self.trace.ds;
        Ok(std::array::from_fn(|k| {
            let ff = frame_fields(&phis[k], &frames[k]);
            let (psi_t, a_t) = match &self.dynamic {
                Some(dy) => (
                    dy.probe_phi_t.get(&rung).map(|v| pullback(&frames[k], &v[k])),
                    dy.probe_a_t.get(&rung).map(|v| v[k].clone()),
                ),
                None => (None, None),
            };
            GaugeState {
                s: s0 + PROBE_OFFSETS[k] as f64 * ds,
                psi_x: ff.psi_x,
                psi_s: ff.psi_s,
                a_x: ff.a_x,
                a_s_norm: None,
                psi_t,
                a_t,
            }
        }))
    }

    /// `e^* d_s phi` at `rung`, with `d_s` from the probe samples.
    pub fn psi_s_differenced(&self, rung: usize) -> Result<Field> {
        let p = self.trace.probes(rung)?;
        let dphi = probe_derivative([&p[0], &p[1], &p[2], &p[3]], self.trace.ds)?;
        Ok(pullback(&self.frames[rung], &dphi))
    }

    /// Frame components of `phi_1` at `s = 0`.
    pub fn psi_t0(&self, phi1: &Field) -> Field {
        pullback(&self.frames[0], phi1)
    }
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    pub s: f64,
    pub zerotor_l2: f64,
    pub curv_l2: f64,
    /// Only at rungs with probe samples.
    pub ps_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub rows: Vec<StructureRow>,
}

impl StructureReport {
    pub fn row_near(&self, s: f64) -> &StructureRow {
        self.rows
            .iter()
            .min_by(|a, b| (a.s - s).abs().total_cmp(&(b.s - s).abs()))
            .expect("nonempty report")
    }

    pub fn max_zerotor(&self) -> f64 {
        self.rows.iter().map(|r| r.zerotor_l2).fold(0.0, f64::max)
    }

    pub fn max_curv(&self) -> f64 {
        self.rows.iter().map(|r| r.curv_l2).fold(0.0, f64::max)
    }

    pub fn max_ps(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.ps_l2).fold(0.0, f64::max)
    }
}

/// Residuals of `D_1 psi_2 = D_2 psi_1`, of
/// `d_1 A_2 - d_2 A_1 + [A_1, A_2] = -psi_1 ^ psi_2` and of `psi_s = D_i psi_i`.
pub fn structure_rows(phi: &Field, frames: &Field, psi_s_diff: Option<&Field>) -> (f64, f64, Option<f64>) {
    let ff = frame_fields(phi, frames);
    let [p1, p2] = &ff.psi_x;
    let [a1, a2] = &ff.a_x;
    let zt = cov(p2, a1, 0).sub(&cov(p1, a2, 1)).expect("grid");
    let mut curv = grid::diff(a2, 0).sub(&grid::diff(a1, 1)).expect("grid");
    curv.axpy(1.0, &commutator(a1, a2)).expect("grid");
    curv.axpy(1.0, &wedge_matrix(p1, p2)).expect("grid");
    let ps = psi_s_diff.map(|ps| {
        let mut r = ps.clone();
        r.axpy(-1.0, &cov(p1, a1, 0)).expect("grid");
        r.axpy(-1.0, &cov(p2, a2, 1)).expect("grid");
        r.l2_sq().sqrt()
    });
    (zt.l2_sq().sqrt(), curv.l2_sq().sqrt(), ps)
}

pub fn structure_residuals(g: &CaloricGauge) -> Result<StructureReport> {
    let mut rows = Vec::with_capacity(g.len());
    for j in 0..g.len() {
        let ps = if g.probe_frames.contains_key(&j) {
            Some(g.psi_s_differenced(j)?)
        } else {
            None
        };
        let (zerotor_l2, curv_l2, ps_l2) = structure_rows(&g.trace.rungs[j].phi, &g.frames[j], ps.as_ref());
        rows.push(StructureRow {
            s: g.trace.rungs[j].s,
            zerotor_l2,
            curv_l2,
            ps_l2,
        });
    }
    Ok(StructureReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRow {
    pub s: f64,
    pub psi_evolve_l2: f64,
    pub sax_l2: f64,
    pub psix_heat_l2: f64,
    pub psis_heat_l2: f64,
    pub dst_l2: Option<f64>,
    pub ast_l2: Option<f64>,
    /// Scale of the terms, `|d_s psi_x|_2`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub rows: Vec<EvolutionRow>,
    /// `max (|psi_s(s)| - e^{s Delta}|psi_s(0)|)_+` over rungs and nodes.
    pub psis_comparison_violation: f64,
}

fn l2(f: &Field) -> f64 {
    f.l2_sq().sqrt()
}

fn deriv<F: Fn(&GaugeState) -> Field>(states: &[GaugeState; 4], ds: f64, get: F) -> Result<Field> {
    let v: [Field; 4] = std::array::from_fn(|k| get(&states[k]));
    probe_derivative([&v[0], &v[1], &v[2], &v[3]], ds)
}

/// `s`-evolution identities at every probed rung, with `d_s` by five-point
/// differencing of the probe samples.
pub fn evolution_residuals(g: &CaloricGauge) -> Result<EvolutionReport> {
    if g.len() < 3 {
        return Err(invalid("evolution residuals need at least three rungs"));
    }
    let ds = g.trace.ds;
    let mut rows = Vec::new();
    for j in g.probed_rungs() {
        let st = g.state(j)?;
        let pr = g.probe_states(j)?;
        let psi_s = g.psi_s_differenced(j)?;
        let mut worst = [0.0f64; 4];
        let mut scale = 0.0;
        for i in 0..2 {
            let dpsi = deriv(&pr, ds, |x| x.psi_x[i].clone())?;
            scale += dpsi.l2_sq();
            let r1 = dpsi.sub(&cov(&psi_s, &st.a_x[i], i))?;
            worst[0] += r1.l2_sq();
            let da = deriv(&pr, ds, |x| x.a_x[i].clone())?;
            let r2 = da.add(&wedge_matrix(&psi_s, &st.psi_x[i]))?;
            worst[1] += r2.l2_sq();
            let mut r3 = dpsi.sub(&cov_laplacian(&st.psi_x[i], &st.a_x))?;
            r3.axpy(1.0, &wedge_apply(&st.psi_x[i], &st.psi_x[0], &st.psi_x[0]))?;
            r3.axpy(1.0, &wedge_apply(&st.psi_x[i], &st.psi_x[1], &st.psi_x[1]))?;
            worst[2] += r3.l2_sq();
        }
        let dps = deriv(&pr, ds, |x| x.psi_s.clone())?;
        let mut r4 = dps.sub(&cov_laplacian(&st.psi_s, &st.a_x))?;
        r4.axpy(1.0, &curvature_term(&st.psi_s, &st.psi_x))?;
        let (dst_l2, ast_l2) = match (&st.psi_t, pr.iter().all(|p| p.psi_t.is_some() && p.a_t.is_some())) {
            (Some(pt), true) => {
                let dpt = deriv(&pr, ds, |x| x.psi_t.clone().expect("checked"))?;
                let mut r5 = dpt.sub(&cov_laplacian(pt, &st.a_x))?;
                r5.axpy(1.0, &curvature_term(pt, &st.psi_x))?;
                let dat = deriv(&pr, ds, |x| x.a_t.clone().expect("checked"))?;
                let r6 = dat.add(&wedge_matrix(&psi_s, pt))?;
                (Some(l2(&r5)), Some(l2(&r6)))
            }
            _ => (None, None),
        };
        rows.push(EvolutionRow {
            s: st.s,
            psi_evolve_l2: worst[0].sqrt(),
            sax_l2: worst[1].sqrt(),
            psix_heat_l2: worst[2].sqrt(),
            psis_heat_l2: l2(&r4),
            dst_l2,
            ast_l2,
            scale: scale.sqrt(),
        });
    }
    let spec = Spectral::new(*g.grid());
    let mag0 = g.state(0)?.psi_s.magnitude();
    let mut violation: f64 = 0.0;
    for j in 0..g.len() {
        let mag = g.state(j)?.psi_s.magnitude();
        let bound = spec.heat(&mag0, g.trace.rungs[j].s)?;
        for (a, b) in mag.data().iter().zip(bound.data()) {
            violation = violation.max(a - b);
        }
    }
    Ok(EvolutionReport {
        rows,
        psis_comparison_violation: violation.max(0.0),
    })
}

/// `int_{s_j}^{s_last} f ds` for every rung `j`: linear trapezoid on the
/// first interval when it starts at zero, trapezoid in `log s` above.
pub fn tail_integrals(s: &[f64], values: &[Field]) -> Result<Vec<Field>> {
    if s.len() != values.len() || s.is_empty() {
        return Err(invalid("ladder and values differ in length"));
    }
    let n = s.len();
    let mut out = vec![Field::zeros(*values[0].grid(), values[0].ncomp()); n];
    for j in (0..n - 1).rev() {
        let mut acc = out[j + 1].clone();
        if s[j] == 0.0 {
            let w = 0.5 * (s[j + 1] - s[j]);
            acc.axpy(w, &values[j])?;
            acc.axpy(w, &values[j + 1])?;
        } else {
            let dl = 0.5 * (s[j + 1] / s[j]).ln();
            acc.axpy(dl * s[j], &values[j])?;
            acc.axpy(dl * s[j + 1], &values[j + 1])?;
        }
        out[j] = acc;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionRow {
    pub s: f64,
    pub a_x_linf: f64,
    pub a_x_l2: f64,
    /// `|A_x(s) - int_s^inf psi_s ^ psi_x|_2`.
    pub reconstruction_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionBounds {
    pub rows: Vec<ConnectionRow>,
    /// `sup_s s^{1/2} |A_x(s)|_inf` over rungs with `s > 0`.
    pub sup_scaled_linf: f64,
    pub sup_l2: f64,
    pub max_reconstruction_l2: f64,
}

fn pair_norms(a: &[Field; 2]) -> (f64, f64) {
    let l2 = (a[0].l2_sq() + a[1].l2_sq()).sqrt();
    let mut linf: f64 = 0.0;
    for idx in 0..a[0].grid().len() {
        let v: f64 = a.iter().map(|f| f.node(idx).iter().map(|x| x * x).sum::<f64>()).sum();
        linf = linf.max(v.sqrt());
    }
    (linf, l2)
}

pub fn connection_bound_scan(g: &CaloricGauge) -> Result<ConnectionBounds> {
    let s: Vec<f64> = g.trace.ladder();
    let mut a_x = Vec::with_capacity(g.len());
    let mut integrand: [Vec<Field>; 2] = [Vec::new(), Vec::new()];
    for j in 0..g.len() {
        let st = g.state(j)?;
        for i in 0..2 {
            integrand[i].push(wedge_matrix(&st.psi_s, &st.psi_x[i]));
        }
        a_x.push(st.a_x);
    }
    let recon = [tail_integrals(&s, &integrand[0])?, tail_integrals(&s, &integrand[1])?];
    let mut rows = Vec::new();
    let (mut sup_scaled, mut sup_l2, mut max_rec) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..g.len() {
        let (linf, l2v) = pair_norms(&a_x[j]);
        let rec = (a_x[j][0].sub(&recon[0][j])?.l2_sq() + a_x[j][1].sub(&recon[1][j])?.l2_sq()).sqrt();
        if s[j] > 0.0 {
            sup_scaled = sup_scaled.max(s[j].sqrt() * linf);
        }
        sup_l2 = sup_l2.max(l2v);
        max_rec = max_rec.max(rec);
        rows.push(ConnectionRow {
            s: s[j],
            a_x_linf: linf,
            a_x_l2: l2v,
            reconstruction_l2: rec,
        });
    }
    Ok(ConnectionBounds {
        rows,
        sup_scaled_linf: sup_scaled,
        sup_l2,
        max_reconstruction_l2: max_rec,
    })
}

// ---------------------------------------------------------------------------
// covariant heat equation in a frozen background

#[derive(Debug, Clone)]
pub struct CovariantHeatReport {
    pub snapshots: Vec<(f64, Field)>,
    /// Largest `|u_{k+1}|^2 - |u_k|^2 + 2 ds |D^+ u_k|^2 - ds^2 |(u_{k+1}-u_k)/ds|^2`.
    pub max_energy_excess: f64,
    /// `max (|u| - H)_+` against the same-step five-point heat flow `H` of `|u_0|`.
    pub max_pointwise_violation: f64,
    /// The same against the spectral heat semigroup.
    pub max_spectral_violation: f64,
}

/// Solve `d_s u = D_i D_i u - (u ^ psi_i) psi_i` by explicit Euler with the
/// background frozen at `rung`. The covariant Laplacian uses link rotations
/// between neighbouring frames, so it is negative semidefinite.
pub fn covariant_heat_solve(u0: &Field, g: &CaloricGauge, rung: usize, s_end: f64, snapshots: usize) -> Result<CovariantHeatReport> {
    let grid = *g.grid();
    grid.check_same(u0.grid())?;
    let m = g.m();
    let d = g.d();
    if u0.ncomp() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: u0.ncomp(),
        });
    }
    let st = g.state(rung)?;
    let phi = &g.trace.rungs[rung].phi;
    let frames = &g.frames[rung];
    let n = grid.n();
    let h2 = grid.cell_area();
    let ds = g.trace.ds;
    let psi2 = (0..grid.len())
        .map(|idx| st.psi_x.iter().map(|p| p.node(idx).iter().map(|x| x * x).sum::<f64>()).sum::<f64>())
        .fold(0.0, f64::max);
    if ds > 0.25 * h2 || ds * psi2 > 1.0 {
        return Err(Error::Cfl {
            ds,
            limit: (0.25 * h2).min(1.0 / psi2.max(1e-300)),
        });
    }
    // links[axis][idx] maps components at idx + e_axis to components at idx
    let mut links = [vec![0.0; grid.len() * m * m], vec![0.0; grid.len() * m * m]];
    let mut moved = vec![0.0; d];
    for axis in 0..2 {
        for idx in 0..grid.len() {
            let nb = if axis == 0 { grid.shifted(idx, 1, 0) } else { grid.shifted(idx, 0, 1) };
            let (p, q) = (phi.node(idx), phi.node(nb));
            let (e, f) = (frames.node(idx), frames.node(nb));
            for b in 0..m {
                moved.copy_from_slice(&f[b * d..(b + 1) * d]);
                kernel::transport(q, p, &mut moved);
                for a in 0..m {
                    links[axis][idx * m * m + a * m + b] = kernel::mink(&e[a * d..(a + 1) * d], &moved);
                }
            }
        }
    }
    let r = ds / h2;
    let mut u = u0.clone();
    let mut heat = u0.magnitude();
    let spec = Spectral::new(grid);
    let mag0 = heat.clone();
    let steps = (s_end / ds).ceil() as usize;
    let every = (steps / snapshots.max(1)).max(1);
    let mut report = CovariantHeatReport {
        snapshots: vec![(0.0, u0.clone())],
        max_energy_excess: f64::NEG_INFINITY,
        max_pointwise_violation: 0.0,
        max_spectral_violation: 0.0,
    };
    let mut tmp = vec![0.0; m];
    for k in 1..=steps {
        let mut next = Field::zeros(grid, m);
        let mut grad2 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let idx = grid.index(i, j);
                let uc = u.node(idx);
                let o = next.node_mut(idx);
                for a in 0..m {
                    o[a] = -4.0 * uc[a];
                }
                for axis in 0..2 {
                    let (fwd, bwd) = if axis == 0 {
                        (grid.shifted(idx, 1, 0), grid.shifted(idx, -1, 0))
                    } else {
                        (grid.shifted(idx, 0, 1), grid.shifted(idx, 0, -1))
                    };
                    let lf = &links[axis][idx * m * m..(idx + 1) * m * m];
                    align::apply(lf, u.node(fwd), &mut tmp);
                    for a in 0..m {
                        o[a] += tmp[a];
                        grad2 += (tmp[a] - uc[a]).powi(2);
                    }
                    let lb = &links[axis][bwd * m * m..(bwd + 1) * m * m];
                    align::apply_transpose(lb, u.node(bwd), &mut tmp);
                    for a in 0..m {
                        o[a] += tmp[a];
                    }
                }
                for a in 0..m {
                    o[a] = uc[a] + r * o[a];
                }
                for p in st.psi_x.iter() {
                    let pv = p.node(idx);
                    let pp: f64 = pv.iter().map(|x| x * x).sum();
                    let pu: f64 = pv.iter().zip(uc).map(|(x, y)| x * y).sum();
                    for a in 0..m {
                        o[a] -= ds * (uc[a] * pp - pv[a] * pu);
                    }
                }
            }
        }
        let diff = next.sub(&u)?;
        let excess = next.l2_sq() - u.l2_sq() + 2.0 * ds * grad2 - diff.l2_sq();
        report.max_energy_excess = report.max_energy_excess.max(excess);
        heat = {
            let lap = grid::laplacian(&heat);
            let mut hn = heat.clone();
            hn.axpy(ds, &lap)?;
            hn
        };
        u = next;
        let mag = u.magnitude();
        for (a, b) in mag.data().iter().zip(heat.data()) {
            report.max_pointwise_violation = report.max_pointwise_violation.max(a - b);
        }
        if k % every == 0 || k == steps {
            let s = k as f64 * ds;
            let exact = spec.heat(&mag0, s)?;
            for (a, b) in mag.data().iter().zip(exact.data()) {
                report.max_spectral_violation = report.max_spectral_violation.max(a - b);
            }
            report.snapshots.push((s, u.clone()));
        }
    }
    if steps == 0 {
        report.max_energy_excess = 0.0;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// export

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeManifest {
    pub ladder: Vec<f64>,
    pub sup_a_s: Vec<f64>,
    pub files: Vec<String>,
    pub alignment_residual: f64,
    pub limit_spread: f64,
    pub max_drift: f64,
    pub structure: Option<StructureReport>,
}

/// Per-rung `psi_1`, `psi_2`, `psi_s`, `A_1`, `A_2` files plus `gauge_manifest.json`.
pub fn export_gauge(g: &CaloricGauge, structure: Option<&StructureReport>, dir: &Path) -> Result<GaugeManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for j in 0..g.len() {
        let st = g.state(j)?;
        let [p1, p2] = &st.psi_x;
        let [a1, a2] = &st.a_x;
        for (name, f) in [("psi_1", p1), ("psi_2", p2), ("psi_s", &st.psi_s), ("a_1", a1), ("a_2", a2)] {
            let stem = format!("gauge_{name}_{j:03}");
            io::write_field(&dir.join(&stem), f, None)?;
            files.push(stem);
        }
    }
    let manifest = GaugeManifest {
        ladder: g.trace.ladder(),
        sup_a_s: g.a_s.iter().map(|f| f.sup()).collect(),
        files,
        alignment_residual: g.alignment_residual,
        limit_spread: g.limit_spread,
        max_drift: g.max_drift,
        structure: structure.cloned(),
    };
    io::write_json_atomic(&dir.join("gauge_manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A constant frame at `p`, rotated by `r` in SO(m): `e_inf R`.
pub fn boundary_frame(p: &HPoint, r: Option<&[f64]>) -> OrthoFrame {
    let f = OrthoFrame::seeded(p);
    match r {
        Some(u) => f.rotated(u),
        None => f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::heat_flow::LadderSpec;

    fn cfg(s_max: f64) -> HeatFlowConfig {
        HeatFlowConfig {
            s_max,
            ladder: LadderSpec {
                probe_until: 1.0,
                ..LadderSpec::default()
            },
            ..HeatFlowConfig::default()
        }
    }

    #[test]
    fn constant_map_gives_trivial_gauge() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let p = HPoint::lift(&[0.3, -0.2]);
        let phi = MapField::constant(g, &p);
        let e_inf = boundary_frame(&p, None);
        let gauge = build_caloric_gauge(&phi, &cfg(4.0), &e_inf, &GaugeConfig::default(), None).unwrap();
        let want = e_inf.raw();
        for f in &gauge.frames {
            for idx in 0..g.len() {
                for (a, b) in f.node(idx).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let st = gauge.state(1).unwrap();
        assert_eq!(st.psi_x[0].sup(), 0.0);
        assert!(st.a_x[0].sup() < 1e-12);
        assert!(gauge.sup_a_s() < 1e-12);
    }

    #[test]
    fn tail_is_required() {
        let g = Grid2D::new(16, 8.0).unwrap();
        let phi = data::generic_bump(g, 2, 0.5, 1.5).unwrap();
        let e_inf = boundary_frame(phi.at_infinity(), None);
        let err = build_caloric_gauge(&phi, &cfg(2.0), &e_inf, &GaugeConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::TailUnmet { .. }), "{err:?}");
    }

    #[test]
    fn wedge_helpers_agree_with_matrix_form() {
        let g = Grid2D::new(4, 1.0).unwrap();
        let u = Field::from_fn(g, 3, |x, y, o| o.copy_from_slice(&[x, y, 1.0]));
        let v = Field::from_fn(g, 3, |x, y, o| o.copy_from_slice(&[y, -1.0, x * y]));
        let w = Field::from_fn(g, 3, |x, _, o| o.copy_from_slice(&[0.5, x, 2.0]));
        let direct = wedge_apply(&u, &v, &w);
        let via = mat_vec(&wedge_matrix(&u, &v), &w);
        assert!(direct.sub(&via).unwrap().sup() < 1e-14);
    }

    #[test]
    fn tail_integrals_of_constant() {
        let g = Grid2D::new(4, 1.0).unwrap();
        let s = [0.0, 1.0, 2.0, 4.0];
        let vals: Vec<Field> = s.iter().map(|_| Field::scalar_from_fn(g, |_, _| 1.0)).collect();
        let t = tail_integrals(&s, &vals).unwrap();
        // log-trapezoid of a constant over [1, 4]
        let want = 0.5 * 2f64.ln() * 3.0 + 0.5 * 2f64.ln() * 6.0;
        assert!((t[1].data()[0] - want).abs() < 1e-12);
        assert!((t[0].data()[0] - 1.0 - want).abs() < 1e-12);
    }
}
