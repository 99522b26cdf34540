//! One function per subcommand. Each writes its artifacts under the
//! configured output directory and returns the report.

use std::path::Path;

use caloric_core::align;
use caloric_core::data;
use caloric_core::energy_space::{self, ClassicalData, LpResolution};
use caloric_core::gauge::{self, CaloricGauge, StructureReport};
use caloric_core::grid::{self, Field, Grid2D, Spectral};
use caloric_core::heat_flow::{self, HeatFlowConfig, HeatFlowTrace};
use caloric_core::hyperbolic::kernel;
use caloric_core::io;
use caloric_core::wave_map::{self, WaveState, WaveTrace};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind, Profile};
use crate::report::{self, num, Csv, OrderRow, OrderTable, RunReport};
use crate::CliError;

/// Dispatches `kind`; `check` overrides `converge.check`.
pub fn run(kind: Kind, cfg: &ExperimentConfig, check: Option<&str>) -> Result<RunReport, CliError> {
    if let Some(declared) = cfg.experiment {
        if declared != kind {
            return Err(CliError::Config(format!(
                "config declares experiment `{}` but `{}` was requested",
                declared.name(),
                kind.name()
            )));
        }
    }
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir)?;
    let report = match kind {
        Kind::Heatflow => cmd_heatflow(cfg, dir)?,
        Kind::Gauge => cmd_gauge(cfg, dir)?,
        Kind::Energyspace => cmd_energyspace(cfg, dir)?,
        Kind::Wavemap => cmd_wavemap(cfg, dir)?,
        Kind::Verify => cmd_verify_all(cfg, dir)?,
        Kind::Converge => {
            let name = check
                .map(str::to_string)
                .or_else(|| cfg.converge.check.clone())
                .ok_or_else(|| CliError::Config("converge needs a check name (--check or converge.check)".into()))?;
            cmd_convergence(cfg, &name, dir)?
        }
    };
    report.write(dir)?;
    Ok(report)
}

fn h2(g: &Grid2D) -> f64 {
    g.cell_area()
}

// ---------------------------------------------------------------------------
// heat flow

pub fn cmd_heatflow(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport, CliError> {
    let mut rep = RunReport::new("heatflow", cfg);
    let d = cfg.data_at(cfg.grid_at(cfg.grid.n)?)?;
    let trace = rep.timed("heat flow", || heat_flow::run(&d.phi0, &cfg.flow))?;
    heatflow_checks(&mut rep, cfg, &trace, dir)?;
    Ok(rep)
}

fn heatflow_checks(rep: &mut RunReport, cfg: &ExperimentConfig, trace: &HeatFlowTrace, dir: &Path) -> Result<(), CliError> {
    let comp = heat_flow::comparison_check(trace)?;
    let mut csv = Csv::new(&["rung", "s", "energy", "sup_grad", "comparison_violation", "comparison_slack"]);
    for (j, r) in trace.rungs.iter().enumerate() {
        csv.row([j.to_string(), num(r.s), num(r.energy), num(r.sup_grad), num(comp.violation[j]), num(comp.slack[j])]);
    }
    csv.write(&dir.join("heatflow.csv"))?;
    heat_flow::export_trace(trace, &dir.join("trace"))?;

    let hyper = trace
        .rungs
        .iter()
        .flat_map(|r| r.phi.data().chunks(trace.m() + 1))
        .map(|p| (kernel::mink(p, p) + 1.0).abs() / (p[0] * p[0]))
        .fold(0.0, f64::max);
    rep.at_most("energy nonincreasing per step", "energy-ineq", trace.max_energy_increase, cfg.checks.energy_increase);
    rep.at_least("tail criterion met", "Decay", f64::from(u8::from(trace.tail_met)), 1.0);
    rep.at_most("maps stay on the hyperboloid", "hyperdef", hyper, cfg.checks.constraint);
    rep.at_most(
        "comparison principle",
        "psix-compar",
        comp.max_violation,
        1e-6 + cfg.checks.comparison_c * h2(&trace.grid),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// caloric gauge

fn build_gauge(rep: &mut RunReport, cfg: &ExperimentConfig, d: &ClassicalData) -> Result<CaloricGauge, CliError> {
    let e_inf = gauge::boundary_frame(d.phi0.at_infinity(), None);
    Ok(rep.timed("caloric gauge", || gauge::build_caloric_gauge(&d.phi0, &cfg.flow, &e_inf, &cfg.gauge, None))?)
}

pub fn cmd_gauge(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport, CliError> {
    let mut rep = RunReport::new("gauge", cfg);
    let d = cfg.data_at(cfg.grid_at(cfg.grid.n)?)?;
    let g = build_gauge(&mut rep, cfg, &d)?;
    gauge_checks(&mut rep, cfg, &g, dir)?;
    Ok(rep)
}

fn gauge_checks(rep: &mut RunReport, cfg: &ExperimentConfig, g: &CaloricGauge, dir: &Path) -> Result<(), CliError> {
    let st: StructureReport = rep.timed("structure residuals", || gauge::structure_residuals(g))?;
    let mut csv = Csv::new(&["rung", "s", "sup_a_s", "zerotor_l2", "curv_l2", "ps_l2"]);
    for (j, row) in st.rows.iter().enumerate() {
        csv.row([
            j.to_string(),
            num(row.s),
            num(g.a_s[j].sup()),
            num(row.zerotor_l2),
            num(row.curv_l2),
            row.ps_l2.map(num).unwrap_or_default(),
        ]);
    }
    csv.write(&dir.join("gauge.csv"))?;
    gauge::export_gauge(g, Some(&st), &dir.join("gauge"))?;

    let bound = cfg.checks.structure_c * h2(g.grid());
    rep.at_most("caloric condition A_s = 0", "ass", g.sup_a_s(), cfg.gauge.a_s_tol);
    rep.at_most("frame orthonormality drift", "phin", g.max_drift, cfg.gauge.drift_tol);
    rep.at_most(
        "frames align with e(infinity)",
        "esx",
        g.alignment_residual + g.limit_spread,
        cfg.gauge.frame_tail_tol,
    );
    let s_eval = cfg.checks.structure_s;
    let row = st.row_near(s_eval);
    let ps = st
        .rows
        .iter()
        .filter_map(|r| r.ps_l2.map(|v| (r.s, v)))
        .min_by(|a, b| (a.0 - s_eval).abs().total_cmp(&(b.0 - s_eval).abs()))
        .map_or(0.0, |(_, v)| v);
    rep.at_most("torsion-free structure equation", "zerotor-frame", row.zerotor_l2, bound);
    rep.at_most("curvature structure equation", "curv-frame", row.curv_l2, bound);
    rep.at_most("psi_s = D_i psi_i", "ps-frame", ps, bound);
    Ok(())
}

// ---------------------------------------------------------------------------
// energy space

#[derive(Serialize)]
struct EnergySummary {
    #[serde(rename = "E")]
    energy: f64,
    lp_norm: f64,
    residuals: EnergyResiduals,
}

#[derive(Serialize)]
struct EnergyResiduals {
    energy_identity_rel: f64,
    rotation: f64,
    zero_distance: f64,
    destress: f64,
}

pub fn cmd_energyspace(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport, CliError> {
    let mut rep = RunReport::new("energyspace", cfg);
    let d = cfg.data_at(cfg.grid_at(cfg.grid.n)?)?;
    let g = build_gauge(&mut rep, cfg, &d)?;
    energy_checks(&mut rep, cfg, &d, &g, dir)?;
    Ok(rep)
}

fn energy_checks(rep: &mut RunReport, cfg: &ExperimentConfig, d: &ClassicalData, g: &CaloricGauge, dir: &Path) -> Result<(), CliError> {
    let r = LpResolution::from_gauge(g, d.phi1.field())?;
    let e = energy_space::energy(d);
    let norm = energy_space::lp_norm(&r);
    let rel = if e > 0.0 { (norm * norm - e).abs() / e } else { norm * norm };

    let m = r.m();
    let u = if m >= 2 {
        align::plane_rotation(m, 0, 1, 0.7)
    } else {
        vec![1.0]
    };
    let rotation = energy_space::lp_distance(&r, &r.rotated(&u))?;
    let zero = LpResolution::zero(*r.grid(), m, r.ladder.clone());
    let zero_distance = (energy_space::lp_distance(&r, &zero)? - norm).abs();
    let gram = energy_space::gram(d);
    let destress = gram.sub(&energy_space::destress(&energy_space::stress(d)))?.sup();

    let w = r.weights();
    let mut csv = Csv::new(&["rung", "s", "weight", "psi_s_l2_sq"]);
    let res_dir = dir.join("resolution");
    for (j, (s, f)) in r.ladder.iter().zip(&r.psi_s).enumerate() {
        csv.row([j.to_string(), num(*s), num(w[j]), num(f.l2_sq())]);
        io::write_field(&res_dir.join(format!("psi_s_{j:03}")), f, None)?;
    }
    io::write_field(&res_dir.join("psi_t0"), &r.psi_t0, None)?;
    csv.write(&dir.join("energyspace.csv"))?;

    let tol = cfg.checks.roundoff;
    let summary = EnergySummary {
        energy: e,
        lp_norm: norm,
        residuals: EnergyResiduals {
            energy_identity_rel: rel,
            rotation,
            zero_distance,
            destress,
        },
    };
    io::write_json_atomic(&dir.join("energyspace_summary.json"), &summary)?;

    rep.at_most("energy identity |iota(Phi)|^2 = E", "energy-ident", rel, cfg.checks.energy_identity_rel);
    rep.at_least("heat-flow tail reached", "Decay", f64::from(u8::from(g.trace.tail_met)), 1.0);
    rep.at_most("distance invariant under SO(m)", "ldef", rotation, tol * (1.0 + norm));
    rep.at_most("distance to zero equals the norm", "l-def", zero_distance, tol * (1.0 + norm));
    rep.at_most("stress tensor recovers the Gram matrix", "destress", destress, tol * (1.0 + gram.sup()));
    Ok(())
}

// ---------------------------------------------------------------------------
// wave maps

fn wave_initial(cfg: &ExperimentConfig, grid: Grid2D) -> Result<WaveState, CliError> {
    let d = cfg.data_at(grid)?;
    Ok(WaveState::new(0.0, d.phi0, d.phi1.into_field())?)
}

/// Three consecutive time steps centred one step after `state`.
fn triple(state: &WaveState, dt: f64) -> Result<[WaveState; 3], CliError> {
    let b = wave_map::wave_step(state, dt)?;
    let c = wave_map::wave_step(&b, dt)?;
    Ok([state.clone(), b, c])
}

pub fn cmd_wavemap(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport, CliError> {
    let mut rep = RunReport::new("wavemap", cfg);
    let grid = cfg.grid_at(cfg.grid.n)?;
    let init = wave_initial(cfg, grid)?;
    let trace: WaveTrace = rep.timed("wave evolution", || {
        wave_map::evolve(&init, &cfg.wave.config(), cfg.wave.t_end, cfg.wave.record_every)
    })?;
    if trace.states.len() < 3 {
        return Err(CliError::Config(format!(
            "wave.t_end = {} records fewer than 3 states; lower wave.record_every or raise t_end",
            cfg.wave.t_end
        )));
    }

    let e0 = trace.energies[0];
    let mut energy = report::wave_csv();
    for (s, e) in trace.states.iter().zip(&trace.energies) {
        energy.row([num(s.t), num(0.0), "energy".into(), num(*e)]);
        let drift = if e0 > 0.0 { (e - e0).abs() / e0 } else { (e - e0).abs() };
        energy.row([num(s.t), num(0.0), "relative_drift".into(), num(drift)]);
    }
    energy.write(&dir.join("wave_energy.csv"))?;

    let mut stress = report::wave_csv();
    let mut worst_stress: f64 = 0.0;
    for k in 1..trace.states.len() - 1 {
        let v = wave_map::stress_divergence(&trace, k)?;
        worst_stress = worst_stress.max(v);
        stress.row([num(trace.states[k].t), num(0.0), "div_T_l1".into(), num(v)]);
    }
    stress.write(&dir.join("wave_stress.csv"))?;

    let mid = &trace.states[trace.states.len() / 2];
    let [a, b, c] = triple(mid, trace.dt)?;
    let slab = rep.timed("wave tension", || wave_map::wave_tension([&a, &b, &c], &cfg.flow))?;
    let mut tension = report::wave_csv();
    for (s, l1) in slab.ladder.iter().zip(&slab.l1) {
        tension.row([num(slab.t), num(*s), "w_l1".into(), num(*l1)]);
    }
    tension.write(&dir.join("wave_tension.csv"))?;

    let last = trace.states.last().expect("nonempty trace");
    let d = last.phi.m() + 1;
    let constraint = last
        .phi
        .field()
        .data()
        .chunks(d)
        .zip(last.phi_t.data().chunks(d))
        .map(|(p, v)| {
            let scale = p[0] * p[0];
            ((kernel::mink(p, p) + 1.0).abs() / scale).max(kernel::mink(p, v).abs() / (scale * (1.0 + v.iter().map(|x| x.abs()).fold(0.0, f64::max))))
        })
        .fold(0.0, f64::max);
    let wave_dir = dir.join("wave");
    io::write_field(&wave_dir.join("phi"), last.phi.field(), Some(last.phi.at_infinity().coords()))?;
    io::write_field(&wave_dir.join("phi_t"), &last.phi_t, None)?;

    let boundary = slab.l1.get(1).copied().unwrap_or(0.0);
    rep.at_most("wave energy drift", "energy-def", trace.max_relative_drift, cfg.wave.energy_budget);
    rep.at_most("hyperboloid and tangency constraints", "hyperdef", constraint, cfg.checks.constraint);
    rep.at_most("stress-energy divergence", "stress-cons", worst_stress, cfg.checks.stress_divergence_c * h2(&grid));
    rep.at_most("wave tension vanishes at s = 0", "wn0", boundary, cfg.checks.wave_tension_c * h2(&grid));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// verify

pub fn cmd_verify_all(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport, CliError> {
    let mut rep = RunReport::new("verify", cfg);
    let d = cfg.data_at(cfg.grid_at(cfg.grid.n)?)?;
    let g = build_gauge(&mut rep, cfg, &d)?;
    heatflow_checks(&mut rep, cfg, &g.trace, dir)?;
    gauge_checks(&mut rep, cfg, &g, dir)?;
    energy_checks(&mut rep, cfg, &d, &g, dir)?;
    let wave = cmd_wavemap(cfg, dir)?;
    rep.absorb(wave);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// convergence

pub const CONVERGENCE_CHECKS: [&str; 6] = [
    "laplacian",
    "geodesic-heat",
    "comparison",
    "stress-divergence",
    "dalembert",
    "wave-tension",
];

/// Least-squares slope of `ln residual` against `ln h`; infinite when every
/// residual is exactly zero.
pub fn order(rows: &[OrderRow]) -> f64 {
    if rows.iter().all(|r| r.residual == 0.0) {
        return f64::INFINITY;
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h.ln(), r.residual.ln())).collect();
    heat_flow::least_squares_slope(&pts)
}

fn geodesic_profile(cfg: &ExperimentConfig, check: &str) -> Result<(f64, f64), CliError> {
    match cfg.data.profile {
        Profile::GeodesicGaussian { amplitude, width } => Ok((amplitude, width)),
        _ => Err(CliError::Config(format!("check `{check}` needs the geodesic_gaussian data family"))),
    }
}

fn residual_at(cfg: &ExperimentConfig, check: &str, grid: Grid2D) -> Result<f64, CliError> {
    match check {
        "laplacian" => {
            let w = match cfg.data.profile {
                Profile::GeodesicGaussian { width, .. } | Profile::GenericGaussian { width, .. } => width,
                _ => 1.0,
            };
            let f = data::gaussian(grid, 1.0, w);
            let w2 = w * w;
            let exact = Field::scalar_from_fn(grid, |x, y| {
                let r2 = x * x + y * y;
                (-r2 / (2.0 * w2)).exp() * (r2 / (w2 * w2) - 2.0 / w2)
            });
            Ok(grid::laplacian(&f).sub(&exact)?.sup())
        }
        "geodesic-heat" => {
            let (a, w) = geodesic_profile(cfg, check)?;
            let f = data::gaussian(grid, a, w);
            let phi = data::geodesic_map(&f, cfg.m, 1)?;
            let tr = heat_flow::run(&phi, &cfg.flow)?;
            let last = tr.rungs.last().expect("nonempty trace");
            let exact = data::geodesic_map(&Spectral::new(grid).heat(&f, last.s)?, cfg.m, 1)?;
            Ok(last.phi.sub(exact.field())?.sup())
        }
        "comparison" => {
            let d = cfg.data_at(grid)?;
            let tr = heat_flow::run(&d.phi0, &cfg.flow)?;
            Ok(heat_flow::comparison_check(&tr)?.max_violation)
        }
        "stress-divergence" => {
            let tr = wave_map::evolve(&wave_initial(cfg, grid)?, &cfg.wave.config(), cfg.wave.t_end, 1)?;
            let half = 0.5 * cfg.wave.t_end;
            let k = (1..tr.states.len().saturating_sub(1))
                .min_by(|&i, &j| (tr.states[i].t - half).abs().total_cmp(&(tr.states[j].t - half).abs()))
                .ok_or_else(|| CliError::Config("wave.t_end is too short for a centred difference".into()))?;
            Ok(wave_map::stress_divergence(&tr, k)?)
        }
        "dalembert" => {
            let (a, w) = geodesic_profile(cfg, check)?;
            let (f0, ft0) = data::plane_wave_gaussian(grid, a, w, 0.0);
            let phi = data::geodesic_map(&f0, cfg.m, 1)?;
            let v = data::geodesic_velocity(&f0, &ft0, cfg.m, 1);
            let s = WaveState::new(0.0, phi, v)?;
            let tr = wave_map::evolve(&s, &cfg.wave.config(), cfg.wave.t_end, usize::MAX)?;
            let last = tr.states.last().expect("nonempty trace");
            let (f1, _) = data::plane_wave_gaussian(grid, a, w, last.t);
            let exact = data::geodesic_map(&f1, cfg.m, 1)?;
            Ok(last.phi.field().sub(exact.field())?.sup())
        }
        "wave-tension" => {
            let tr = wave_map::evolve(&wave_initial(cfg, grid)?, &cfg.wave.config(), cfg.wave.t_end, usize::MAX)?;
            let last = tr.states.last().expect("nonempty trace");
            let [a, b, c] = triple(last, tr.dt)?;
            let flow = HeatFlowConfig {
                s_max: 1.01 * h2(&grid),
                ..cfg.flow.clone()
            };
            let slab = wave_map::wave_tension([&a, &b, &c], &flow)?;
            Ok(slab.l1.get(1).copied().unwrap_or(0.0))
        }
        other => Err(CliError::Config(format!(
            "unknown convergence check `{other}`; expected one of {CONVERGENCE_CHECKS:?}"
        ))),
    }
}

/// `(floor, anchor)` per check; the Laplacian also has a ceiling.
fn floor_of(check: &str) -> (f64, &'static str) {
    match check {
        "laplacian" => (1.8, "laplacian"),
        "geodesic-heat" => (1.5, "pars"),
        "comparison" => (1.5, "psix-compar"),
        "stress-divergence" => (0.9, "stress-cons"),
        "dalembert" => (1.8, "cov"),
        _ => (1.5, "wn0"),
    }
}

pub fn cmd_convergence(cfg: &ExperimentConfig, check: &str, dir: &Path) -> Result<RunReport, CliError> {
    if !CONVERGENCE_CHECKS.contains(&check) {
        return Err(CliError::Config(format!(
            "unknown convergence check `{check}`; expected one of {CONVERGENCE_CHECKS:?}"
        )));
    }
    let ns = &cfg.converge.resolutions;
    if ns.len() < 3 {
        return Err(CliError::Config(format!(
            "convergence needs at least 3 resolutions, got {}",
            ns.len()
        )));
    }
    let mut rep = RunReport::new("converge", cfg);
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let grid = cfg.grid_at(n)?;
        let residual = rep.timed(&format!("{check} n={n}"), || residual_at(cfg, check, grid))?;
        rows.push(OrderRow { n, h: grid.h(), residual });
    }
    let p = order(&rows);
    let (floor, anchor) = floor_of(check);

    let mut csv = Csv::new(&["n", "h", "residual"]);
    for r in &rows {
        csv.row([r.n.to_string(), num(r.h), num(r.residual)]);
    }
    csv.write(&dir.join(format!("convergence_{check}.csv")))?;

    rep.at_least(&format!("{check} convergence order"), anchor, p, floor);
    if check == "laplacian" {
        rep.at_most("laplacian convergence order ceiling", anchor, p, 2.2);
    }
    rep.convergence = Some(OrderTable {
        check: check.to_string(),
        rows,
        order: p,
        floor,
    });
    Ok(rep)
}
