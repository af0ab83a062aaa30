//! Versioned JSON run configurations, one per subcommand.

use std::path::Path;

use rigidhom::approx::ApproxParams;
use rigidhom::cellsolve::{Method, SolverConfig};
use rigidhom::counterex::GapSearch;
use rigidhom::env::{SamplePlan, SurfaceDensity};
use rigidhom::homog::RMap;
use rigidhom::Vec2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

fn two() -> usize {
    2
}

fn four() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

fn kappa() -> f64 {
    0.1
}

fn origin() -> Vec2 {
    Vec2::zeros()
}

fn e1() -> Vec2 {
    Vec2::new(1.0, 0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhomConfig {
    pub schema_version: u32,
    pub density: SurfaceDensity,
    pub zetas: Vec<Vec2>,
    pub nus: Vec<Vec2>,
    pub t_schedule: Vec<f64>,
    #[serde(default = "two")]
    pub omega_count: usize,
    #[serde(default)]
    pub seed: u64,
    pub solver: SolverConfig,
    #[serde(default)]
    pub r_map: RMap,
    #[serde(default = "origin")]
    pub base_point: Vec2,
    /// Also estimate every (-zeta, -nu).
    #[serde(default)]
    pub antipodes: bool,
    /// Run the structural checks on the table; a failed check exits with status 1.
    #[serde(default)]
    pub check_axioms: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub schema_version: u32,
    pub density: SurfaceDensity,
    #[serde(default = "origin")]
    pub center: Vec2,
    pub side: f64,
    pub nu: Vec2,
    pub zeta: Vec2,
    /// Defaults to the cube centre.
    #[serde(default)]
    pub datum_point: Option<Vec2>,
    #[serde(default = "one")]
    pub epsilon: f64,
    pub solver: SolverConfig,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub gradient_cap: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub schema_version: u32,
    pub density: SurfaceDensity,
    #[serde(default)]
    pub plan: SamplePlan,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApproxInput {
    /// y(x) = R(k delta^beta x1) x on an n x n raster of the unit square.
    Bending {
        n: usize,
        #[serde(default = "ten")]
        k: f64,
    },
    /// Displacement u in header + raster form (paths relative to the config file); y = x + u.
    Labels { header: String, raster: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxConfig {
    pub schema_version: u32,
    pub params: ApproxParams,
    /// One run per delta; empty means `params.delta` only.
    #[serde(default)]
    pub deltas: Vec<f64>,
    pub input: ApproxInput,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normal {
    E1,
    #[default]
    E2,
}

/// A single straight interface through the unit square: 0 on the minus side,
/// skew(m) x + zeta on the plus side.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    #[serde(default = "e1")]
    pub zeta: Vec2,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub normal: Normal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FhomSource {
    Value {
        value: f64,
    },
    Estimate {
        t_schedule: Vec<f64>,
        #[serde(default = "two")]
        omega_count: usize,
        solver: SolverConfig,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub schema_version: u32,
    pub density: SurfaceDensity,
    #[serde(default = "default_interface")]
    pub interface: InterfaceSpec,
    pub epsilons: Vec<f64>,
    pub eta: f64,
    pub rho: f64,
    #[serde(default = "four")]
    pub t: usize,
    pub cell_h: f64,
    #[serde(default = "kappa")]
    pub kappa: f64,
    pub fhom: FhomSource,
}

fn default_interface() -> InterfaceSpec {
    InterfaceSpec { zeta: e1(), skew: 0.0, normal: Normal::E2 }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub schema_version: u32,
    pub a: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub h: f64,
    #[serde(default)]
    pub delta_alpha_bound: Option<f64>,
    #[serde(default)]
    pub search: GapSearch,
    /// Epsilons for the extrapolated upper bound; empty skips it.
    #[serde(default)]
    pub extrapolation: Vec<f64>,
}

/// Solver method echoed in results rows.
pub fn method_name(m: &Method) -> &'static str {
    match m {
        Method::MinCut => "mincut",
        Method::Local { .. } => "local",
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Failure::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
        None => return Err(Failure::Config("missing schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| Failure::Config(e.to_string()))
}
