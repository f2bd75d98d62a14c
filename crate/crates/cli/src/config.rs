//! JSON run configuration.

use serde::Deserialize;

use refracted_occupation::diffusion::{
    make_brownian, refraction_from_tax, DiffusionSpec, RefractionSet, TaxRate, Weight, Window,
};
use refracted_occupation::func::{Func, LinearTable};
use refracted_occupation::inversion::{InversionConfig, InversionMethod};
use refracted_occupation::occupation::Operation;
use refracted_occupation::scenarios::{self, ScenarioKind, ScenarioSpec};
use refracted_occupation::simulator::PathConfig;

use crate::CliError;

/// A coefficient given either as a constant or as `[[x, value], ...]`
/// interpolated linearly.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

impl Coefficient {
    fn to_func(&self, what: &str) -> Result<Func, CliError> {
        match self {
            Coefficient::Constant(c) => Ok(Func::constant(*c)),
            Coefficient::Table(t) => Ok(table(t, what)?.into_func()),
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Table(_) => None,
        }
    }
}

fn table(points: &[[f64; 2]], what: &str) -> Result<LinearTable, CliError> {
    LinearTable::new(&points.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

/// Tax rate: `"constant:<c>"` or a `[[u, γ(u)], ...]` table.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TaxConfig {
    Text(String),
    Table(Vec<[f64; 2]>),
}

impl TaxConfig {
    pub fn to_rate(&self) -> Result<TaxRate, CliError> {
        match self {
            TaxConfig::Text(s) => {
                let c = s
                    .strip_prefix("constant:")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| CliError::Config(format!("tax '{s}' is not of the form constant:<c>")))?;
                Ok(TaxRate::Constant(c))
            }
            TaxConfig::Table(t) => Ok(TaxRate::Table(table(t, "tax table")?)),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model")]
    pub model: String,
    pub mu: Coefficient,
    pub sigma: Coefficient,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub tax: Option<TaxConfig>,
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Constant occupation weight `b` for the weighted operation.
    #[serde(default)]
    pub weight: Option<f64>,
}

fn default_model() -> String {
    "brownian".into()
}

impl ModelConfig {
    pub fn spec(&self) -> Result<DiffusionSpec, CliError> {
        let spec = match self.model.as_str() {
            "brownian" => {
                let (mu, sigma) = match (self.mu.constant(), self.sigma.constant()) {
                    (Some(m), Some(s)) => (m, s),
                    _ => return Err(CliError::Config("brownian model needs constant mu and sigma".into())),
                };
                make_brownian(mu, sigma, self.x0).map_err(CliError::from_config)?
            }
            "custom" => {
                let w = self.window.unwrap_or([self.x0 - 30.0, self.x0 + 60.0]);
                let window = Window::new(w[0], w[1]).map_err(CliError::from_config)?;
                DiffusionSpec::custom(self.mu.to_func("mu")?, self.sigma.to_func("sigma")?, self.x0, window)
                    .map_err(CliError::from_config)?
            }
            other => return Err(CliError::Config(format!("unknown model '{other}'"))),
        };
        match (self.model.as_str(), self.window) {
            ("brownian", Some(w)) => {
                let window = Window::new(w[0], w[1]).map_err(CliError::from_config)?;
                spec.with_window(window).map_err(CliError::from_config)
            }
            _ => Ok(spec),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub y: Vec<f64>,
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub omega: Vec<f64>,
    /// Constant tax rates; each replaces the model's tax.
    #[serde(default)]
    pub c: Vec<f64>,
    /// Levels for `occupation_below_level_exp`.
    #[serde(default)]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Quadrature,
    Montecarlo,
    Both,
}

impl Engine {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "quadrature" => Ok(Engine::Quadrature),
            "montecarlo" => Ok(Engine::Montecarlo),
            "both" => Ok(Engine::Both),
            _ => Err(CliError::Config(format!("unknown engine '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub bridge: bool,
    #[serde(default = "default_true")]
    pub adaptive: bool,
    /// Shift added to `y` in the simulator only; a negative-control fixture.
    #[serde(default)]
    pub y_shift: f64,
    /// Number of paths to dump as traces by `simulate`.
    #[serde(default)]
    pub trace_paths: usize,
    #[serde(default)]
    pub trace_out: Option<String>,
}

fn default_paths() -> usize {
    10_000
}
fn default_dt() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: default_paths(),
            dt: default_dt(),
            horizon: None,
            bridge: false,
            adaptive: true,
            y_shift: 0.0,
            trace_paths: 0,
            trace_out: None,
        }
    }
}

impl McConfig {
    pub fn path_config(&self, spec: &DiffusionSpec, seed: u64) -> PathConfig {
        let mut c = PathConfig::new(
            self.dt,
            self.horizon.unwrap_or_else(|| PathConfig::default_horizon(spec)),
            self.n_paths,
            seed,
        );
        c.bridge_correction = self.bridge;
        c.adaptive = self.adaptive;
        c
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InversionBlock {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub order: Option<usize>,
    /// Replace the model transform by `"exponential:<λ>"`.
    #[serde(default)]
    pub test_transform: Option<String>,
}

fn default_method() -> String {
    "gaver_stehfest".into()
}

impl Default for InversionBlock {
    fn default() -> Self {
        InversionBlock { method: default_method(), order: None, test_transform: None }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default = "default_obs")]
    pub n_obs: usize,
    #[serde(default = "default_wgrid")]
    pub wronskian_points: usize,
}

fn default_obs() -> usize {
    50
}
fn default_wgrid() -> usize {
    60
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig { n_obs: default_obs(), wronskian_points: default_wgrid() }
    }
}

/// One explicit query record.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub op: String,
    #[serde(default)]
    pub y: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_one")]
    pub q: f64,
    #[serde(default = "default_one")]
    pub p: f64,
    #[serde(default = "default_one")]
    pub omega: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: Option<f64>,
}

fn default_a() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default = "default_operation")]
    pub operation: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub queries: Vec<QueryRecord>,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_zmax")]
    pub z_max: f64,
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub inversion: InversionBlock,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

fn default_operation() -> String {
    "occupation_until_hitting".into()
}
fn default_zmax() -> f64 {
    4.0
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))
    }

    pub fn operation(&self) -> Result<Operation, CliError> {
        Operation::parse(&self.operation).map_err(CliError::from_config)
    }

    pub fn inversion_config(&self) -> Result<InversionConfig, CliError> {
        let t_grid = self.t_grid.clone().ok_or_else(|| CliError::Config("missing t_grid".into()))?;
        let method = InversionMethod::parse(&self.inversion.method).map_err(CliError::from_config)?;
        let mut cfg = InversionConfig::new(method, t_grid);
        if let Some(o) = self.inversion.order {
            cfg.order = o;
        }
        cfg.validate().map_err(CliError::from_config)?;
        Ok(cfg)
    }
}

/// A refraction with the levels a scenario may fix.
#[derive(Debug, Clone)]
pub struct Setting {
    /// Tax rate from the `c` grid, if any.
    pub c: Option<f64>,
    pub refr: RefractionSet,
    pub y: Option<f64>,
    pub a: Option<f64>,
    pub weight: Weight,
}

/// Refractions to run: one per `c` grid entry, the model tax, or the
/// scenario bundle.
pub fn settings(cfg: &RunConfig, spec: &DiffusionSpec) -> Result<Vec<Setting>, CliError> {
    let x0 = spec.x0;
    let base_weight = cfg.model.weight.map(Weight::Constant).unwrap_or_default();
    if let Some(sc) = &cfg.scenario {
        let kind = ScenarioKind::parse(&sc.kind).map_err(CliError::from_config)?;
        let mut s = ScenarioSpec::new(kind);
        if let Some(v) = sc.alpha {
            s.alpha = v;
        }
        if let Some(v) = sc.beta {
            s.beta = v;
        }
        if let Some(v) = sc.y {
            s.y_raw = v;
        }
        if let Some(v) = sc.a {
            s.a_raw = v;
        }
        s.weight = base_weight;
        let taxes: Vec<Option<f64>> = if cfg.grid.c.is_empty() { vec![None] } else { cfg.grid.c.iter().map(|c| Some(*c)).collect() };
        return taxes
            .into_iter()
            .map(|c| {
                let mut s = s.clone();
                match c {
                    Some(c) => s.tax = TaxRate::Constant(c),
                    None => {
                        if let Some(t) = &cfg.model.tax {
                            s.tax = t.to_rate()?;
                        }
                    }
                }
                let b = scenarios::build(&s, x0).map_err(CliError::from_config)?;
                Ok(Setting { c, refr: b.refr, y: Some(b.y), a: Some(b.a), weight: b.weight })
            })
            .collect();
    }
    if !cfg.grid.c.is_empty() {
        return cfg
            .grid
            .c
            .iter()
            .map(|&c| {
                let refr = refraction_from_tax(TaxRate::Constant(c), x0).map_err(CliError::from_config)?;
                Ok(Setting { c: Some(c), refr, y: None, a: None, weight: base_weight.clone() })
            })
            .collect();
    }
    let (c, refr) = match &cfg.model.tax {
        Some(t) => {
            let rate = t.to_rate()?;
            let c = match rate {
                TaxRate::Constant(c) => Some(c),
                _ => None,
            };
            (c, refraction_from_tax(rate, x0).map_err(CliError::from_config)?)
        }
        None => (Some(0.0), refraction_from_tax(TaxRate::Constant(0.0), x0).map_err(CliError::from_config)?),
    };
    Ok(vec![Setting { c, refr, y: None, a: None, weight: base_weight }])
}
