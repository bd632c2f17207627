//! Run configuration: flat JSON with a schema version.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::DegreeBound;
use crate::models::{ModelKind, ModelSpec, ProblemSpec};

pub const SCHEMA_VERSION: u32 = 1;

fn default_gain() -> f64 {
    0.0
}
fn default_basis_n() -> usize {
    10
}
fn default_degree() -> usize {
    5
}
fn default_kind() -> String {
    DegreeBound::MaxDegree.tag().into()
}
fn default_z_grid() -> usize {
    20
}
fn default_control_grid() -> usize {
    33
}
fn default_nodes() -> usize {
    256
}
fn default_dt() -> f64 {
    1e-3
}
fn default_event_tol() -> f64 {
    1e-10
}
fn default_exchange_tol() -> f64 {
    1e-6
}
fn default_max_iterations() -> usize {
    500
}
fn default_cuts() -> usize {
    4
}
fn default_horizon() -> f64 {
    80.0
}
fn default_sweep_horizon() -> f64 {
    40.0
}
fn default_eps_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// `rotation_example1` or `lotka_volterra_example2`.
    pub model: String,
    #[serde(default = "default_gain")]
    pub perturbation_gain: f64,
    #[serde(default)]
    pub u_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub u_hi: Option<Vec<f64>>,
    pub epsilon: f64,
    pub discount: f64,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    #[serde(default)]
    pub stop_level: Option<f64>,
    #[serde(default = "default_basis_n")]
    pub basis_n: usize,
    #[serde(default = "default_degree")]
    pub basis_y_degree: usize,
    /// `max_degree` or `total_degree`.
    #[serde(default = "default_kind")]
    pub basis_y_kind: String,
    #[serde(default = "default_z_grid")]
    pub z_grid_size: usize,
    #[serde(default = "default_control_grid")]
    pub control_grid_size: usize,
    #[serde(default = "default_nodes")]
    pub orbit_nodes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_event_tol")]
    pub event_refine_tol: f64,
    #[serde(default = "default_exchange_tol")]
    pub exchange_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_cuts")]
    pub cuts_per_level: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sweep_horizon")]
    pub sweep_horizon: f64,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Validation { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        self.model_spec()?;
        self.problem()?;
        self.degree_bound()?;
        let positive = |field: &str, v: f64| if v > 0.0 { Ok(()) } else { Err(invalid(field, format!("must be positive, got {v}"))) };
        positive("dt", self.dt)?;
        positive("event_refine_tol", self.event_refine_tol)?;
        positive("exchange_tol", self.exchange_tol)?;
        positive("horizon", self.horizon)?;
        positive("sweep_horizon", self.sweep_horizon)?;
        if !(1..=30).contains(&self.basis_n) {
            return Err(invalid("basis_n", "must be in 1..=30"));
        }
        if self.basis_y_degree > 12 {
            return Err(invalid("basis_y_degree", "must be at most 12"));
        }
        if self.z_grid_size < 2 {
            return Err(invalid("z_grid_size", "need at least 2 levels"));
        }
        if self.control_grid_size < 2 {
            return Err(invalid("control_grid_size", "need at least 2 points per axis"));
        }
        if self.orbit_nodes < 64 {
            return Err(invalid("orbit_nodes", "need at least 64 nodes"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be positive"));
        }
        if self.cuts_per_level == 0 {
            return Err(invalid("cuts_per_level", "must be positive"));
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(invalid("eps_list", "entries must lie in (0, 1)"));
        }
        if self.eps_list.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(invalid("eps_list", "must be strictly descending"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let kind = ModelKind::from_tag(&self.model).ok_or_else(|| invalid("model", format!("unknown model {:?}", self.model)))?;
        let mut model = ModelSpec::from_kind(kind).with_perturbation_gain(self.perturbation_gain);
        if self.u_lo.is_some() || self.u_hi.is_some() {
            let lo = self.u_lo.clone().unwrap_or_else(|| model.u_lo.clone());
            let hi = self.u_hi.clone().unwrap_or_else(|| model.u_hi.clone());
            model = model.with_control_box(lo, hi).map_err(|e| invalid("u_lo", e.to_string()))?;
        }
        model.validate().map_err(|e| invalid("model", e.to_string()))?;
        Ok(model)
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(
            self.model_spec()?,
            self.epsilon,
            self.discount,
            self.y0.clone(),
            self.z0.clone(),
            self.z_lo.clone(),
            self.z_hi.clone(),
            self.stop_level,
        )
        .map_err(|e| match e {
            Error::Validation { .. } => e,
            other => invalid("problem", other.to_string()),
        })
    }

    pub fn degree_bound(&self) -> Result<DegreeBound> {
        DegreeBound::from_tag(&self.basis_y_kind)
            .ok_or_else(|| invalid("basis_y_kind", format!("unknown degree bound {:?}", self.basis_y_kind)))
    }

    /// Bundled configuration for the Lotka-Volterra problem.
    pub fn example2() -> Self {
        Self::from_json(include_str!("../configs/example2.json")).expect("bundled config is valid")
    }

    /// Bundled configuration for the rotation problem.
    pub fn example1() -> Self {
        Self::from_json(include_str!("../configs/example1.json")).expect("bundled config is valid")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}
