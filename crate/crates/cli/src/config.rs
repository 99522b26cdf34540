//! Experiment configuration: JSON, versioned, validated before any compute.

use std::path::{Path, PathBuf};

use caloric_core::data;
use caloric_core::energy_space::ClassicalData;
use caloric_core::gauge::GaugeConfig;
use caloric_core::grid::{self, Grid2D, MapField, TangentField};
use caloric_core::heat_flow::HeatFlowConfig;
use caloric_core::hyperbolic::HPoint;
use caloric_core::wave_map::WaveConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// The schema file shipped with the crate.
pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Heatflow,
    Gauge,
    Energyspace,
    Wavemap,
    Verify,
    Converge,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Heatflow => "heatflow",
            Kind::Gauge => "gauge",
            Kind::Energyspace => "energyspace",
            Kind::Wavemap => "wavemap",
            Kind::Verify => "verify",
            Kind::Converge => "converge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub experiment: Option<Kind>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub flow: HeatFlowConfig,
    #[serde(default)]
    pub gauge: GaugeConfig,
    #[serde(default)]
    pub wave: WaveRun,
    pub data: DataConfig,
    #[serde(default)]
    pub checks: Thresholds,
    #[serde(default)]
    pub converge: ConvergeConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_m() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "R_support")]
    pub support_radius: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 64,
            half_width: 8.0,
            support_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveRun {
    pub dt_factor: f64,
    pub energy_budget: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for WaveRun {
    fn default() -> Self {
        let w = WaveConfig::default();
        Self {
            dt_factor: w.dt_factor,
            energy_budget: w.energy_budget,
            t_end: 1.0,
            record_every: 1,
        }
    }
}

impl WaveRun {
    pub fn config(&self) -> WaveConfig {
        WaveConfig {
            dt_factor: self.dt_factor,
            energy_budget: self.energy_budget,
        }
    }
}

/// Named synthetic data families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// The constant map at `lift(point)`; an empty point means the origin.
    Constant {
        #[serde(default)]
        point: Vec<f64>,
    },
    GeodesicGaussian { amplitude: f64, width: f64 },
    GenericGaussian { amplitude: f64, width: f64 },
    GenericBump { amplitude: f64, radius: f64 },
    RandomMap { amplitude: f64, radius: f64, kmax: usize },
}

/// `phi_1 = P(scale * d_axis phi_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Velocity {
    pub axis: usize,
    pub scale: f64,
}

impl Default for Velocity {
    fn default() -> Self {
        Self { axis: 0, scale: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub profile: Profile,
    #[serde(default)]
    pub velocity: Velocity,
}

/// Pass thresholds. Entries named `*_c` multiply `h^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub energy_increase: f64,
    pub comparison_c: f64,
    pub energy_identity_rel: f64,
    pub structure_c: f64,
    /// Heat time at which the structure equations are checked.
    pub structure_s: f64,
    pub roundoff: f64,
    pub constraint: f64,
    pub stress_divergence_c: f64,
    pub wave_tension_c: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            energy_increase: 1e-10,
            comparison_c: 1.0,
            energy_identity_rel: 0.02,
            structure_c: 4.0,
            structure_s: 0.25,
            roundoff: 1e-10,
            constraint: 1e-9,
            stress_divergence_c: 32.0,
            wave_tension_c: 32.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub check: Option<String>,
    pub resolutions: Vec<usize>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            check: None,
            resolutions: vec![64, 128, 256],
        }
    }
}

fn schema_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Applies `key.path=value` overrides; values parse as JSON when they can,
/// otherwise as strings. Missing objects along the path are created, so
/// unknown keys surface as deserialization errors.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for raw in overrides {
        let body = raw.strip_prefix("--").unwrap_or(raw);
        let (path, text) = body
            .split_once('=')
            .ok_or_else(|| schema_err(format!("override `{raw}` is not of the form --key.path=value")))?;
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(schema_err(format!("override `{raw}` has an empty key")));
        }
        let value = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
        let mut node = &mut *root;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| schema_err(format!("override `{path}`: `{}` is not an object", keys[..i].join("."))))?;
            if i + 1 == keys.len() {
                obj.insert(key.to_string(), value);
                break;
            }
            node = obj
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        let version = v.get("schema_version").and_then(Value::as_u64);
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(schema_err(format!(
                "schema_version must be {SCHEMA_VERSION}, found {}",
                v.get("schema_version").map_or("nothing".to_string(), |x| x.to_string())
            )));
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| schema_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| schema_err(format!("cannot read {}: {e}", path.display())))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| schema_err(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut v, overrides)?;
        Self::from_value(v)
    }

    pub fn grid_at(&self, n: usize) -> Result<Grid2D, CliError> {
        Grid2D::new(n, self.grid.half_width).map_err(|e| schema_err(format!("grid: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.m == 0 {
            return Err(schema_err("m must be at least 1"));
        }
        if !(self.grid.half_width >= 8.0 && self.grid.half_width.is_finite()) {
            return Err(schema_err(format!("grid.L must be at least 8, got {}", self.grid.half_width)));
        }
        if let Some(r) = self.grid.support_radius {
            if !(r > 0.0 && r <= 0.25 * self.grid.half_width) {
                return Err(schema_err(format!("grid.R_support must lie in (0, L/4], got {r}")));
            }
        }
        self.flow.validate().map_err(|e| schema_err(format!("flow: {e}")))?;
        self.gauge.validate().map_err(|e| schema_err(format!("gauge: {e}")))?;
        self.wave.config().validate().map_err(|e| schema_err(format!("wave: {e}")))?;
        if !(self.wave.t_end > 0.0 && self.wave.t_end.is_finite()) {
            return Err(schema_err("wave.t_end must be positive"));
        }
        if self.wave.record_every == 0 {
            return Err(schema_err("wave.record_every must be at least 1"));
        }
        if self.data.velocity.axis > 1 || !self.data.velocity.scale.is_finite() {
            return Err(schema_err("data.velocity.axis must be 0 or 1 with a finite scale"));
        }
        let t = &self.checks;
        for (name, v) in [
            ("energy_increase", t.energy_increase),
            ("comparison_c", t.comparison_c),
            ("energy_identity_rel", t.energy_identity_rel),
            ("structure_c", t.structure_c),
            ("structure_s", t.structure_s),
            ("roundoff", t.roundoff),
            ("constraint", t.constraint),
            ("stress_divergence_c", t.stress_divergence_c),
            ("wave_tension_c", t.wave_tension_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(schema_err(format!("checks.{name} must be positive and finite")));
            }
        }
        if self.converge.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(schema_err("converge.resolutions must be strictly increasing"));
        }
        for &n in &self.converge.resolutions {
            self.grid_at(n)?;
        }
        // builds the data once so that recipe errors surface before compute
        self.data_at(self.grid_at(self.grid.n)?)?;
        Ok(())
    }

    /// The configured initial data on `grid`.
    pub fn data_at(&self, grid: Grid2D) -> Result<ClassicalData, CliError> {
        let bad = |e: caloric_core::Error| schema_err(format!("data: {e}"));
        let m = self.m;
        let phi0 = match &self.data.profile {
            Profile::Constant { point } => {
                let x = if point.is_empty() { vec![0.0; m] } else { point.clone() };
                if x.len() != m {
                    return Err(schema_err(format!("data.profile.point needs {m} coordinates, got {}", x.len())));
                }
                MapField::constant(grid, &HPoint::lift(&x))
            }
            Profile::GeodesicGaussian { amplitude, width } => {
                positive("width", *width)?;
                data::geodesic_gaussian(grid, m, *amplitude, *width).map_err(bad)?
            }
            Profile::GenericGaussian { amplitude, width } => {
                positive("width", *width)?;
                data::generic_gaussian(grid, m, *amplitude, *width).map_err(bad)?
            }
            Profile::GenericBump { amplitude, radius } => {
                positive("radius", *radius)?;
                data::generic_bump(grid, m, *amplitude, *radius).map_err(bad)?
            }
            Profile::RandomMap { amplitude, radius, kmax } => {
                positive("radius", *radius)?;
                data::random_map(grid, m, *amplitude, *radius, *kmax, self.seed).map_err(bad)?
            }
        };
        let phi0 = match self.grid.support_radius {
            Some(r) => phi0.with_support(r, 1e-12).map_err(bad)?,
            None => phi0,
        };
        let v = grid::diff(phi0.field(), self.data.velocity.axis).scaled(self.data.velocity.scale);
        let phi1 = TangentField::projected(&phi0, v).map_err(bad)?.into_field();
        ClassicalData::new(phi0, phi1).map_err(bad)
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema_err(format!("data.profile.{name} must be positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "schema_version": 1,
            "data": {"profile": {"family": "constant"}},
            "output_dir": "out"
        })
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(cfg.grid, GridConfig::default());
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.flow, HeatFlowConfig::default());
    }

    #[test]
    fn overrides_set_nested_keys() {
        let mut v = base();
        apply_overrides(&mut v, &["--grid.n=128".into(), "--data.profile.point=[0.5,0.1]".into(), "--output_dir=elsewhere".into()]).unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.grid.n, 128);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.data.profile, Profile::Constant { point: vec![0.5, 0.1] });
    }

    #[test]
    fn unknown_keys_and_bad_values_are_schema_errors() {
        for o in ["--grid.size=3", "--grid.n=100", "--flow.ds_factor=0.5", "--schema_version=2", "--wave.t_end=-1", "grid.n"] {
            let mut v = base();
            let r = apply_overrides(&mut v, &[o.to_string()]).and_then(|_| ExperimentConfig::from_value(v));
            assert!(matches!(r, Err(CliError::Config(_))), "{o} accepted");
        }
    }

    #[test]
    fn schema_lists_every_top_level_key() {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let cfg = serde_json::to_value(ExperimentConfig::from_value(base()).unwrap()).unwrap();
        for key in cfg.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "schema misses {key}");
        }
        for section in ["grid", "flow", "gauge", "wave", "checks", "converge"] {
            let sp = props[section]["properties"].as_object().unwrap();
            for key in cfg[section].as_object().unwrap().keys() {
                assert!(sp.contains_key(key), "schema misses {section}.{key}");
            }
        }
    }
}
