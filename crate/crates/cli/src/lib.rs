//! Config-driven front end: evaluates transforms over a parameter grid,
//! cross-checks them by simulation, inverts bankruptcy transforms and runs
//! model diagnostics. Every command renders a single CSV table.

pub mod config;

use std::fmt::Write as _;

use clap::{Parser, Subcommand};
use thiserror::Error;

use refracted_occupation::diffusion::{DiffusionSpec, OccupationQuery, RefractionSet, Weight};
use refracted_occupation::eigen::{eigenpair, w_functions};
use refracted_occupation::inversion::{invert_cdf, InversionOutput};
use refracted_occupation::occupation::{BatchQuery, Evaluator, Operation};
use refracted_occupation::simulator::{
    last_passage_diagnostic, simulate_bankruptcy_cdf, simulate_transform, trace_paths, traces_csv, PathConfig,
    SimEstimate, Target,
};

pub use config::{Engine, RunConfig};
use config::Setting;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Eval(_) => 1,
        }
    }

    pub(crate) fn from_config(e: refracted_occupation::Error) -> Self {
        CliError::Config(e.to_string())
    }

    fn eval(e: refracted_occupation::Error) -> Self {
        CliError::Eval(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "refocc", version, about = "Occupation-time transforms of refracted diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON configuration file.
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    pub out: Option<String>,
    /// quadrature, montecarlo or both.
    #[arg(long)]
    pub engine: Option<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Evaluate the configured operation over the query grid.
    Transform(Common),
    /// Quadrature against Monte Carlo with z-scores.
    Compare(Common),
    /// Distribution function of the bankruptcy time.
    Invert(Common),
    /// Monte Carlo estimates only, with optional path traces.
    Simulate(Common),
    /// Wronskian residuals and the supermartingale check.
    Diagnose(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Transform(c)
            | Command::Compare(c)
            | Command::Invert(c)
            | Command::Simulate(c)
            | Command::Diagnose(c) => c,
        }
    }
}

/// Result of a command: the CSV table, diagnostics for standard error and
/// the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub warnings: Vec<String>,
    pub exit_code: i32,
    /// File the CSV was written to, if any.
    pub written_to: Option<String>,
}

impl Report {
    fn ok(csv: String, warnings: Vec<String>) -> Self {
        Report { csv, warnings, exit_code: 0, written_to: None }
    }
}

/// Load the configuration, apply the flag overrides and run `cmd`.
pub fn run_command(cmd: &Command) -> Result<Report, CliError> {
    let common = cmd.common();
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config)))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    if let Some(e) = &common.engine {
        cfg.engine = Engine::parse(e)?;
    }
    let mut report = match cmd {
        Command::Transform(_) => cmd_transform(&cfg)?,
        Command::Compare(_) => cmd_compare(&cfg)?,
        Command::Invert(_) => cmd_invert(&cfg)?,
        Command::Simulate(_) => cmd_simulate(&cfg)?,
        Command::Diagnose(_) => cmd_diagnose(&cfg)?,
    };
    if let Some(path) = &cfg.output {
        std::fs::write(path, &report.csv).map_err(|e| CliError::Eval(format!("cannot write {path}: {e}")))?;
        report.written_to = Some(path.clone());
    }
    Ok(report)
}

/// One grid point.
#[derive(Debug, Clone)]
struct Point {
    op: Operation,
    setting: usize,
    y: Option<f64>,
    a: Option<f64>,
    q: f64,
    p: Option<f64>,
    omega: Option<f64>,
    b: Option<f64>,
}

struct Needs {
    y: bool,
    a: bool,
    p: bool,
    omega: bool,
    b: bool,
}

fn needs(op: Operation) -> Needs {
    use Operation::*;
    Needs {
        y: !matches!(op, HittingTime | OccupationBelowLevelExp),
        a: matches!(op, OccupationUntilHitting | HittingTime | WeightedOccupation | OccupationBmTax),
        p: matches!(op, OccupationUntilExp | OccupationBelowLevelExp),
        omega: matches!(op, BankruptcyTax | BankruptcyBmTax),
        b: matches!(op, OccupationBelowLevelExp),
    }
}

fn axis(name: &str, needed: bool, fixed: Option<f64>, grid: &[f64]) -> Result<Vec<Option<f64>>, CliError> {
    if !needed {
        return Ok(vec![None]);
    }
    if let Some(v) = fixed {
        return Ok(vec![Some(v)]);
    }
    if grid.is_empty() {
        return Err(CliError::Config(format!("empty grid: no values for '{name}'")));
    }
    Ok(grid.iter().map(|v| Some(*v)).collect())
}

fn points(cfg: &RunConfig, settings: &[Setting]) -> Result<Vec<Point>, CliError> {
    let mut out = Vec::new();
    if !cfg.queries.is_empty() {
        for r in &cfg.queries {
            let op = Operation::parse(&r.op).map_err(CliError::from_config)?;
            let setting = match r.c {
                Some(c) => settings
                    .iter()
                    .position(|s| s.c == Some(c))
                    .ok_or_else(|| CliError::Config(format!("query tax c = {c} is not in the c grid")))?,
                None => 0,
            };
            let n = needs(op);
            out.push(Point {
                op,
                setting,
                y: n.y.then_some(r.y),
                a: n.a.then_some(r.a),
                q: r.q,
                p: n.p.then_some(r.p),
                omega: n.omega.then_some(r.omega),
                b: n.b.then_some(r.b),
            });
        }
        return Ok(out);
    }
    let op = cfg.operation()?;
    let n = needs(op);
    let g = &cfg.grid;
    if g.q.is_empty() {
        return Err(CliError::Config("empty grid: no values for 'q'".into()));
    }
    for (si, s) in settings.iter().enumerate() {
        for y in axis("y", n.y, s.y, &g.y)? {
            for a in axis("a", n.a, s.a, &g.a)? {
                for &q in &g.q {
                    for p in axis("p", n.p, None, &g.p)? {
                        for omega in axis("omega", n.omega, None, &g.omega)? {
                            for b in axis("b", n.b, None, &g.b)? {
                                out.push(Point { op, setting: si, y, a, q, p, omega, b });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn query_of(pt: &Point, weight: &Weight, y_shift: f64) -> OccupationQuery {
    OccupationQuery {
        y: pt.y.unwrap_or(0.0) + y_shift,
        a: pt.a.unwrap_or(1.0),
        q: pt.q,
        p: pt.p.unwrap_or(1.0),
        omega: pt.omega.unwrap_or(1.0),
        b: weight.clone(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.11e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

const PARAM_HEADER: &str = "op,c,y,a,q,p,omega,b";

fn params(pt: &Point, s: &Setting) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        pt.op.name(),
        opt(s.c),
        opt(pt.y),
        opt(pt.a),
        num(pt.q),
        opt(pt.p),
        opt(pt.omega),
        opt(pt.b)
    )
}

struct Setup {
    spec: DiffusionSpec,
    settings: Vec<Setting>,
    evaluators: Vec<Evaluator>,
    warnings: Vec<String>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let spec = cfg.model.spec()?;
    let settings = config::settings(cfg, &spec)?;
    let evaluators = settings
        .iter()
        .map(|s| Evaluator::new(spec.clone(), s.refr.clone()).map_err(CliError::from_config))
        .collect::<Result<Vec<_>, _>>()?;
    let warnings = spec.warnings();
    Ok(Setup { spec, settings, evaluators, warnings })
}

fn quadrature(setup: &Setup, pts: &[Point]) -> Result<Vec<refracted_occupation::occupation::TransformResult>, CliError> {
    let jobs: Vec<(usize, BatchQuery)> = pts
        .iter()
        .map(|pt| {
            let s = &setup.settings[pt.setting];
            (pt.setting, BatchQuery { op: pt.op, query: query_of(pt, &s.weight, 0.0), level: pt.b.unwrap_or(0.0) })
        })
        .collect();
    let mut out = Vec::with_capacity(jobs.len());
    for (i, (si, bq)) in jobs.iter().enumerate() {
        let r = setup.evaluators[*si].evaluate(bq).map_err(|e| {
            CliError::Eval(format!("evaluation failed at {}: {e}", params(&pts[i], &setup.settings[*si])))
        })?;
        out.push(r);
    }
    Ok(out)
}

/// Deterministic per-point seed.
fn point_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn target_of(op: Operation) -> Target {
    use Operation::*;
    match op {
        OccupationUntilHitting | OccupationBmTax => Target::HittingOccupation,
        HittingTime => Target::HittingTime,
        OccupationUntilExp | OccupationBelowLevelExp => Target::ExpClockOccupation,
        BankruptcyTax | BankruptcyBmTax => Target::BankruptcyTime,
        WeightedOccupation => Target::WeightedOccupation,
    }
}

fn monte_carlo(cfg: &RunConfig, setup: &Setup, pts: &[Point]) -> Result<Vec<SimEstimate>, CliError> {
    let mut out = Vec::with_capacity(pts.len());
    for (i, pt) in pts.iter().enumerate() {
        let s = &setup.settings[pt.setting];
        let pc = cfg.mc.path_config(&setup.spec, point_seed(cfg.seed, i));
        let (refr, query) = if pt.op == Operation::OccupationBelowLevelExp {
            // occupation of X itself below b
            let mut q = query_of(pt, &s.weight, cfg.mc.y_shift);
            q.y = -pt.b.unwrap_or(0.0) + cfg.mc.y_shift;
            (RefractionSet::zero(setup.spec.x0), q)
        } else {
            (s.refr.clone(), query_of(pt, &s.weight, cfg.mc.y_shift))
        };
        let e = simulate_transform(&setup.spec, &refr, &query, target_of(pt.op), &pc).map_err(|e| {
            CliError::Eval(format!("simulation failed at {}: {e}", params(pt, s)))
        })?;
        out.push(e);
    }
    Ok(out)
}

fn z_score(mc: &SimEstimate, quad: f64) -> f64 {
    let d = mc.mean - quad;
    if mc.std_error > 0.0 {
        d / mc.std_error
    } else if d == 0.0 {
        0.0
    } else {
        d.signum() * f64::INFINITY
    }
}

fn sim_warnings(pts: &[Point], setup: &Setup, mc: &[SimEstimate], warnings: &mut Vec<String>) {
    for (pt, e) in pts.iter().zip(mc) {
        for w in &e.warnings {
            warnings.push(format!("{}: {w}", params(pt, &setup.settings[pt.setting])));
        }
    }
}

struct Table {
    csv: String,
    warnings: Vec<String>,
    max_abs_z: f64,
}

fn grid_table(cfg: &RunConfig, engine: Engine) -> Result<Table, CliError> {
    let setup = setup(cfg)?;
    let pts = points(cfg, &setup.settings)?;
    let mut warnings = setup.warnings.clone();
    let mut csv = String::from(PARAM_HEADER);
    let mut max_abs_z = 0.0f64;
    match engine {
        Engine::Quadrature => {
            csv.push_str(",value,abs_err,backend,n_evals\n");
            let res = quadrature(&setup, &pts)?;
            for (pt, r) in pts.iter().zip(&res) {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    params(pt, &setup.settings[pt.setting]),
                    num(r.value),
                    num(r.abs_err_estimate),
                    r.backend.as_str(),
                    r.n_evals
                );
            }
        }
        Engine::Montecarlo => {
            csv.push_str(",mc_mean,mc_se,n_censored,n_paths\n");
            let mc = monte_carlo(cfg, &setup, &pts)?;
            sim_warnings(&pts, &setup, &mc, &mut warnings);
            for (pt, e) in pts.iter().zip(&mc) {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    params(pt, &setup.settings[pt.setting]),
                    num(e.mean),
                    num(e.std_error),
                    e.n_censored,
                    e.n_paths
                );
            }
        }
        Engine::Both => {
            csv.push_str(",quadrature,mc_mean,mc_se,z_score\n");
            let res = quadrature(&setup, &pts)?;
            let mc = monte_carlo(cfg, &setup, &pts)?;
            sim_warnings(&pts, &setup, &mc, &mut warnings);
            for ((pt, r), e) in pts.iter().zip(&res).zip(&mc) {
                let z = z_score(e, r.value);
                max_abs_z = max_abs_z.max(z.abs());
                if z.abs() > cfg.z_max {
                    warnings.push(format!(
                        "{}: |z| = {:.3} exceeds z_max = {}",
                        params(pt, &setup.settings[pt.setting]),
                        z.abs(),
                        cfg.z_max
                    ));
                }
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    params(pt, &setup.settings[pt.setting]),
                    num(r.value),
                    num(e.mean),
                    num(e.std_error),
                    num(z)
                );
            }
        }
    }
    Ok(Table { csv, warnings, max_abs_z })
}

pub fn cmd_transform(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = grid_table(cfg, cfg.engine)?;
    Ok(Report::ok(t.csv, t.warnings))
}

/// Both engines on the grid; exit code 1 when any `|z|` exceeds `z_max`.
pub fn cmd_compare(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = grid_table(cfg, Engine::Both)?;
    let exit_code = if t.max_abs_z > cfg.z_max { 1 } else { 0 };
    Ok(Report { csv: t.csv, warnings: t.warnings, exit_code, written_to: None })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = grid_table(cfg, Engine::Montecarlo)?;
    let mut warnings = t.warnings;
    if cfg.mc.trace_paths > 0 {
        let path = cfg
            .mc
            .trace_out
            .clone()
            .ok_or_else(|| CliError::Config("mc.trace_paths needs mc.trace_out".into()))?;
        let setup = setup(cfg)?;
        let pts = points(cfg, &setup.settings)?;
        let pt = &pts[0];
        let s = &setup.settings[pt.setting];
        let pc = cfg.mc.path_config(&setup.spec, point_seed(cfg.seed, 0));
        let tr = trace_paths(&setup.spec, &s.refr, &query_of(pt, &s.weight, cfg.mc.y_shift), target_of(pt.op), &pc, cfg.mc.trace_paths)
            .map_err(CliError::eval)?;
        std::fs::write(&path, traces_csv(&tr)).map_err(|e| CliError::Eval(format!("cannot write {path}: {e}")))?;
        warnings.push(format!("wrote {} path trace(s) to {path}", tr.len()));
    }
    Ok(Report::ok(t.csv, warnings))
}

fn exponential_fixture(spec: &str) -> Result<f64, CliError> {
    spec.strip_prefix("exponential:")
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|l| *l > 0.0)
        .ok_or_else(|| CliError::Config(format!("test_transform '{spec}' is not of the form exponential:<rate>")))
}

/// Bankruptcy-time distribution function by numerical inversion. With
/// `engine = both` the simulator's empirical distribution is appended.
pub fn cmd_invert(cfg: &RunConfig) -> Result<Report, CliError> {
    let icfg = cfg.inversion_config()?;
    if let Some(fx) = &cfg.inversion.test_transform {
        let lambda = exponential_fixture(fx)?;
        let out = invert_cdf(|q| Ok(lambda / (lambda + q)), &icfg).map_err(CliError::eval)?;
        return Ok(Report::ok(out.csv(), out.warnings));
    }
    let op = cfg.operation()?;
    if !matches!(op, Operation::BankruptcyTax | Operation::BankruptcyBmTax) {
        return Err(CliError::Config(format!("invert needs a bankruptcy operation, got '{}'", op.name())));
    }
    let setup = setup(cfg)?;
    let mut warnings = setup.warnings.clone();
    let with_mc = cfg.engine == Engine::Both;
    let mut csv = String::from("c,y,omega,t,F,method,order");
    csv.push_str(if with_mc { ",mc_F,mc_se,z_score\n" } else { "\n" });
    let mut k = 0usize;
    for (si, s) in setup.settings.iter().enumerate() {
        let ys = axis("y", true, s.y, &cfg.grid.y)?;
        let omegas = axis("omega", true, None, &cfg.grid.omega)?;
        for y in ys.iter().flatten() {
            for omega in omegas.iter().flatten() {
                let ev = &setup.evaluators[si];
                let out: InversionOutput = invert_cdf(
                    |q| {
                        ev.evaluate(&BatchQuery { op, query: OccupationQuery::bankruptcy(*y, q, *omega), level: 0.0 })
                            .map(|r| r.value)
                    },
                    &icfg,
                )
                .map_err(CliError::eval)?;
                warnings.extend(out.warnings.iter().cloned());
                let mc = if with_mc {
                    let pc = cfg.mc.path_config(&setup.spec, point_seed(cfg.seed, k));
                    Some(
                        simulate_bankruptcy_cdf(&setup.spec, &s.refr, *y + cfg.mc.y_shift, *omega, &icfg.t_grid, &pc)
                            .map_err(CliError::eval)?,
                    )
                } else {
                    None
                };
                k += 1;
                for (i, p) in out.points.iter().enumerate() {
                    let _ = write!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        opt(s.c),
                        num(*y),
                        num(*omega),
                        num(p.t),
                        num(p.f),
                        out.method.name(),
                        out.order
                    );
                    match &mc {
                        Some(m) => {
                            let e = &m[i];
                            let _ = writeln!(csv, ",{},{},{}", num(e.mean), num(e.std_error), num(z_score(e, p.f)));
                        }
                        None => csv.push('\n'),
                    }
                }
            }
        }
    }
    Ok(Report::ok(csv, warnings))
}

/// Largest Wronskian residual the diagnostic accepts.
pub const WRONSKIAN_TOL: f64 = 1e-6;
/// Largest mean of `Y` one step before `τ` the diagnostic accepts.
pub const Y_AT_TAU_TOL: f64 = 0.05;
/// Largest standardized mean increment of `Y` the diagnostic accepts.
pub const INCREMENT_Z_TOL: f64 = 3.0;

/// Numerical-backend Wronskian residuals for each `q` and the
/// supermartingale check on the refracted barrier. One row per check with
/// its threshold; exit code 1 if any fails.
pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Report, CliError> {
    let setup = setup(cfg)?;
    let mut warnings = setup.warnings.clone();
    let mut csv = String::from("check,parameter,value,threshold,pass\n");
    let mut all = true;
    let mut row = |csv: &mut String, check: &str, param: String, value: f64, thr: f64, pass: bool| {
        all &= pass;
        let _ = writeln!(csv, "{check},{param},{},{},{}", num(value), num(thr), pass);
    };
    let numeric = setup.spec.as_numeric();
    let sc = refracted_occupation::diffusion::scale(&numeric).map_err(CliError::eval)?;
    let qs = if cfg.grid.q.is_empty() { vec![1.0] } else { cfg.grid.q.clone() };
    let x0 = setup.spec.x0;
    for &q in &qs {
        let wfs = w_functions(eigenpair(&numeric, q).map_err(CliError::eval)?, sc.clone());
        let d = wfs.domain();
        let (lo, hi) = ((x0 - 3.0).max(d.lo), (x0 + 3.0).min(d.hi));
        let worst = wfs
            .wronskian_table(lo, hi, cfg.diagnose.wronskian_points)
            .iter()
            .map(|r| r[3].abs())
            .fold(0.0, f64::max);
        row(&mut csv, "wronskian_residual", format!("q={q}"), worst, WRONSKIAN_TOL, worst <= WRONSKIAN_TOL);
    }
    let s = &setup.settings[0];
    let a = s.a.or(cfg.grid.a.first().copied()).ok_or_else(|| CliError::Config("empty grid: no values for 'a'".into()))?;
    let mut pc: PathConfig = cfg.mc.path_config(&setup.spec, cfg.seed);
    pc.censor_warning = 1.0;
    let r = last_passage_diagnostic(&setup.spec, &setup.evaluators[0].scale, &s.refr, a, &pc, cfg.diagnose.n_obs)
        .map_err(CliError::eval)?;
    let pa = format!("a={a}");
    row(&mut csv, "y0", pa.clone(), r.y0, 1.0, r.y0 == 1.0);
    row(&mut csv, "min_y", pa.clone(), r.min_y, 0.0, r.min_y >= 0.0);
    row(&mut csv, "max_y", pa.clone(), r.max_y, 1.0, r.max_y <= 1.0);
    row(&mut csv, "max_increment_z", pa.clone(), r.max_increment_z, INCREMENT_Z_TOL, r.max_increment_z <= INCREMENT_Z_TOL);
    row(&mut csv, "mean_y_before_tau", pa.clone(), r.mean_y_before_tau, Y_AT_TAU_TOL, r.mean_y_before_tau <= Y_AT_TAU_TOL);
    let _ = writeln!(csv, "mean_y_at_tau,{pa},{},,", num(r.mean_y_at_tau));
    let _ = writeln!(csv, "n_hit,{pa},{},,", r.n_hit);
    if r.n_hit == 0 {
        warnings.push("no path reached the barrier; the boundary check is vacuous".into());
    }
    Ok(Report { csv, warnings, exit_code: if all { 0 } else { 1 }, written_to: None })
}
