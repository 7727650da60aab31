//! Run configuration, pipelines and on-disk artifacts.
//!
//! A [`RunConfig`] is a TOML document:
//!
//! ```toml
//! seed = 7
//! output = "out/ou1d-rvi"
//!
//! [problem]
//! name = "ou1d"
//! coefficients = { payoff_shift = 0.0 }
//!
//! [grid]
//! radius = 6.0
//! n = 241
//!
//! [solver]
//! method = "rvi"      # discounted | vanishing_discount | vi | rvi |
//!                     # risk_game | risk_multiplicative | simulate | check
//! t_end = 20.0
//!
//! [solver.tolerances]
//! elliptic_tol = 0.05
//!
//! [sim]
//! n_paths = 64
//! horizon = 100.0
//! ```
//!
//! [`run`] validates the whole configuration before touching the disk, then
//! writes CSV fields, `report.json`, `residuals.csv` and `manifest.toml` (the
//! configuration echo plus provenance) into the output directory. Exit codes:
//! 0 success, 1 invalid input, 2 convergence failure or failed check.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ergodic::{
    self, default_alphas, extract_selectors, DiagnosticReport, Method, SolveReport, SolverConfig, StrategyField,
};
use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, DiscreteGame, DriftScheme, Grid, ValueField};
use crate::problem::{check_flatness, check_lyapunov, CertificateReport, CheckConfig, GameProblem};
use crate::registry::{self, Benchmark};
use crate::risk::{self, AdversaryBall, RiskProblem};
use crate::sim::{self, BiasEstimate, PayoffEstimate, SamplingMode, SimConfig};

const MODULE: &str = "cli_io";

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "ERGODIC_GAMES_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub radius: f64,
    pub n: usize,
    pub core_fraction: f64,
    pub scheme: DriftScheme,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            radius: 6.0,
            n: 241,
            core_fraction: Grid::DEFAULT_CORE_FRACTION,
            scheme: DriftScheme::Hybrid,
        }
    }
}

/// One method name, or a list (rejected unless it has exactly one entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodSelection {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    Solve(Method),
    Simulate,
    Check,
}

impl Pipeline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pipeline::Solve(m) => m.as_str(),
            Pipeline::Simulate => "simulate",
            Pipeline::Check => "check",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Pipeline::Simulate),
            "check" => Ok(Pipeline::Check),
            other => other.parse().map(Pipeline::Solve),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: MethodSelection,
    /// Discount for `discounted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Schedule for `vanishing_discount`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    /// Time step of the marchers; defaults to the stability limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Offset for `vi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub tolerances: SolverConfig,
}

fn default_t_end() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub burn_in: f64,
    pub mode: SamplingMode,
    pub batches: usize,
    /// Start of the average-payoff paths; the origin when empty.
    pub x0: Vec<f64>,
    /// Solver that produces the strategies (`rvi` or `vanishing_discount`).
    pub strategy_method: Method,
    /// Start point of the bias estimate; skipped when empty.
    pub bias_x0: Vec<f64>,
    pub r_small: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt: s.dt,
            horizon: s.horizon,
            n_paths: s.n_paths,
            burn_in: s.burn_in,
            mode: s.mode,
            batches: s.batches,
            x0: Vec::new(),
            strategy_method: Method::Rvi,
            bias_x0: Vec::new(),
            r_small: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub sim: SimSection,
}

impl RunConfig {
    /// Minimal configuration for `problem` and `method` with all defaults.
    pub fn new(problem: &str, method: &str) -> Self {
        Self {
            seed: 0,
            output: None,
            problem: ProblemConfig {
                name: problem.into(),
                coefficients: BTreeMap::new(),
            },
            grid: GridConfig::default(),
            solver: SolverSection {
                method: MethodSelection::One(method.into()),
                alpha: None,
                alphas: None,
                dt: None,
                t_end: default_t_end(),
                beta: None,
                tolerances: SolverConfig::default(),
            },
            sim: SimSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads a configuration file or a manifest written by [`run`].
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if value.contains_key("run") {
            Ok(Manifest::from_toml(&text)?.run)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        match &self.solver.method {
            MethodSelection::One(m) => m.parse(),
            MethodSelection::Many(v) if v.len() == 1 => v[0].parse(),
            MethodSelection::Many(v) => Err(Error::invalid(
                MODULE,
                format!("exactly one method per run, got {}", v.len()),
            )),
        }
    }

    /// Output directory: the configured one, else `$ERGODIC_GAMES_OUT`, else
    /// `ergodic-games-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ergodic-games-out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_name: String,
    pub crate_version: String,
    pub wall_clock_secs: f64,
}

/// Configuration echo plus provenance; enough to re-run the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunConfig,
    pub provenance: Provenance,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub solver_beta: f64,
    pub estimate: PayoffEstimate,
    /// Estimate within `max(CI, 3%)` of the solver value.
    pub agrees: bool,
    pub bias: Option<BiasEstimate>,
    pub drift_bound: Option<DiagnosticReport>,
    /// Unilateral pure deviations; absent when neither player has a choice.
    pub saddle: Option<DiagnosticReport>,
    pub projections: usize,
    pub paths_projected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub passed: bool,
    pub lyapunov: Option<CertificateReport>,
    pub flatness: Option<CertificateReport>,
    pub adversary: Option<AdversaryBall>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub coefficients: BTreeMap<String, f64>,
    pub pipeline: String,
    pub grid: Grid,
    pub beta: Option<f64>,
    /// File name of the value field, relative to the report.
    pub value_csv: Option<String>,
    pub solve: Option<SolveReport>,
    pub adversary: Option<AdversaryBall>,
    pub simulation: Option<SimulationSummary>,
    pub check: Option<CheckSummary>,
}

impl RunReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// What [`run`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub message: String,
}

/// Fully validated run, before anything is written.
struct Prepared {
    pipeline: Pipeline,
    benchmark: Benchmark,
    grid: Grid,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let pipeline = config.pipeline()?;
    let benchmark = registry::build(&config.problem.name, &config.problem.coefficients, config.grid.radius)?;
    let dim = match &benchmark {
        Benchmark::Game(p) => p.dim(),
        Benchmark::Risk(p) => crate::problem::ControlledDynamics::dim(p),
    };
    let boundary = match pipeline {
        Pipeline::Solve(Method::Discounted | Method::VanishingDiscount) => BoundaryPolicy::DirichletZero,
        Pipeline::Simulate if config.sim.strategy_method == Method::VanishingDiscount => BoundaryPolicy::DirichletZero,
        _ => BoundaryPolicy::OneSided,
    };
    let grid = Grid::new(dim, config.grid.radius, config.grid.n, boundary)?
        .with_core_fraction(config.grid.core_fraction)?
        .with_scheme(config.grid.scheme);

    let is_risk = matches!(benchmark, Benchmark::Risk(_));
    let risk_method = matches!(pipeline, Pipeline::Solve(Method::RiskGame | Method::RiskMultiplicative));
    if let Pipeline::Solve(m) = pipeline {
        if is_risk != risk_method {
            return Err(Error::invalid(
                MODULE,
                format!("method '{}' does not apply to problem '{}'", m.as_str(), config.problem.name),
            ));
        }
    }
    let s = &config.solver;
    match pipeline {
        Pipeline::Solve(Method::Discounted) if s.alpha.is_none_or(|a| !(a > 0.0)) => {
            return Err(Error::invalid(MODULE, "method 'discounted' needs solver.alpha > 0"));
        }
        Pipeline::Solve(Method::Vi) if s.beta.is_none_or(|b| !b.is_finite()) => {
            return Err(Error::invalid(MODULE, "method 'vi' needs a finite solver.beta"));
        }
        Pipeline::Simulate => {
            if is_risk {
                return Err(Error::invalid(MODULE, "Monte Carlo simulation is only provided for games"));
            }
            if !matches!(config.sim.strategy_method, Method::Rvi | Method::VanishingDiscount) {
                return Err(Error::invalid(MODULE, "sim.strategy_method must be rvi or vanishing_discount"));
            }
            sim_config(config).validate()?;
            for x in [&config.sim.x0, &config.sim.bias_x0] {
                if !x.is_empty() && (x.len() != dim || x.iter().any(|v| v.abs() > config.grid.radius)) {
                    return Err(Error::invalid(MODULE, format!("start point {x:?} is not in the grid box")));
                }
            }
        }
        _ => {}
    }
    if let Some(dt) = s.dt {
        if !(dt > 0.0) {
            return Err(Error::invalid(MODULE, "solver.dt must be positive"));
        }
    }
    if !(s.t_end > 0.0) {
        return Err(Error::invalid(MODULE, "solver.t_end must be positive"));
    }
    Ok(Prepared {
        pipeline,
        benchmark,
        grid,
    })
}

fn sim_config(config: &RunConfig) -> SimConfig {
    let s = &config.sim;
    SimConfig {
        dt: s.dt,
        horizon: s.horizon,
        n_paths: s.n_paths,
        burn_in: s.burn_in,
        seed: config.seed,
        mode: s.mode,
        batches: s.batches,
    }
}

/// Artifacts produced by a pipeline before they are written.
struct Output {
    report: RunReport,
    files: Vec<(String, String)>,
}

fn game_dt(problem: &GameProblem, grid: &Grid, dt: Option<f64>) -> Result<f64> {
    match dt {
        Some(dt) => Ok(dt),
        None => Ok(DiscreteGame::new(problem, grid)?.cfl_limit()),
    }
}

fn base_report(config: &RunConfig, prepared: &Prepared) -> RunReport {
    RunReport {
        problem: config.problem.name.clone(),
        coefficients: config.problem.coefficients.clone(),
        pipeline: prepared.pipeline.as_str().into(),
        grid: prepared.grid,
        beta: None,
        value_csv: None,
        solve: None,
        adversary: None,
        simulation: None,
        check: None,
    }
}

fn solve_game(
    config: &RunConfig,
    problem: &GameProblem,
    grid: &Grid,
    method: Method,
) -> Result<(f64, ValueField, StrategyField, SolveReport)> {
    let s = &config.solver;
    let tol = &s.tolerances;
    Ok(match method {
        Method::Discounted => {
            let alpha = s.alpha.expect("validated");
            let (psi, strat, rep) = ergodic::solve_discounted(problem, grid, alpha, tol)?;
            (alpha * psi.at_origin(), psi, strat, rep)
        }
        Method::VanishingDiscount => {
            let alphas = s.alphas.clone().unwrap_or_else(default_alphas);
            let sol = ergodic::vanishing_discount(problem, grid, &alphas, tol)?;
            (sol.beta, sol.phi_star, sol.selectors, sol.report)
        }
        Method::Vi => {
            let beta = s.beta.expect("validated");
            let dt = game_dt(problem, grid, s.dt)?;
            let (phi, rep) = ergodic::vi_march(problem, grid, &ValueField::constant(*grid, 0.0), beta, dt, s.t_end, tol)?;
            let strat = extract_selectors(problem, grid, &phi)?;
            (beta, phi, strat, rep)
        }
        Method::Rvi => {
            let dt = game_dt(problem, grid, s.dt)?;
            let sol = ergodic::solve_rvi(problem, grid, &ValueField::constant(*grid, 0.0), dt, s.t_end, tol)?;
            (sol.beta, sol.phi_star, sol.selectors, sol.report)
        }
        Method::RiskGame | Method::RiskMultiplicative => unreachable!("validated"),
    })
}

fn solve_risk(config: &RunConfig, problem: &RiskProblem, grid: &Grid, method: Method) -> Result<Output> {
    let s = &config.solver;
    let ball = risk::compute_adversary_ball(&problem.flatness)?;
    let dt = match s.dt {
        Some(dt) => dt,
        None => risk::cfl_limit(problem, grid, &ball)?,
    };
    let mut files = Vec::new();
    let (beta, field, report) = if method == Method::RiskGame {
        let sol = risk::solve_risk_game_with_ball(problem, grid, &ValueField::constant(*grid, 0.0), dt, s.t_end, &ball, &s.tolerances)?;
        files.push(("selectors.csv".to_string(), sol.selector_csv()));
        (sol.beta, sol.phi_star, sol.report)
    } else {
        let (psi, rep) = risk::rvi_multiplicative(problem, grid, &ValueField::constant(*grid, 1.0), dt, s.t_end, &s.tolerances)?;
        (rep.beta.expect("set by the marcher"), psi, rep)
    };
    files.push(("value.csv".to_string(), field.to_csv()));
    files.push(("residuals.csv".to_string(), report.residual_csv()));
    Ok(Output {
        report: RunReport {
            beta: Some(beta),
            value_csv: Some("value.csv".into()),
            solve: Some(report),
            adversary: Some(ball),
            ..RunReport {
                problem: String::new(),
                coefficients: BTreeMap::new(),
                pipeline: String::new(),
                grid: *grid,
                beta: None,
                value_csv: None,
                solve: None,
                adversary: None,
                simulation: None,
                check: None,
            }
        },
        files,
    })
}

fn execute(config: &RunConfig, prepared: &Prepared) -> Result<Output> {
    let grid = &prepared.grid;
    let base = base_report(config, prepared);
    match (prepared.pipeline, &prepared.benchmark) {
        (Pipeline::Solve(method), Benchmark::Game(problem)) => {
            let (beta, field, strat, rep) = solve_game(config, problem, grid, method)?;
            Ok(Output {
                files: vec![
                    ("value.csv".into(), field.to_csv()),
                    ("strategies.csv".into(), strat.to_csv()),
                    ("residuals.csv".into(), rep.residual_csv()),
                ],
                report: RunReport {
                    beta: Some(beta),
                    value_csv: Some("value.csv".into()),
                    solve: Some(rep),
                    ..base
                },
            })
        }
        (Pipeline::Solve(method), Benchmark::Risk(problem)) => {
            let out = solve_risk(config, problem, grid, method)?;
            Ok(Output {
                report: RunReport {
                    beta: out.report.beta,
                    value_csv: out.report.value_csv,
                    solve: out.report.solve,
                    adversary: out.report.adversary,
                    ..base
                },
                files: out.files,
            })
        }
        (Pipeline::Simulate, Benchmark::Game(problem)) => {
            let (beta, phi, strat, rep) = solve_game(config, problem, grid, config.sim.strategy_method)?;
            let sc = sim_config(config);
            let origin = vec![0.0; grid.dim()];
            let x0 = if config.sim.x0.is_empty() { &origin } else { &config.sim.x0 };
            let estimate = sim::estimate_beta(problem, &strat, &sc, x0)?;
            let ensemble = sim::simulate_paths(problem, &strat, &sc, x0)?;
            let bias = if config.sim.bias_x0.is_empty() {
                None
            } else {
                Some(sim::estimate_bias(problem, &strat, &sc, &config.sim.bias_x0, beta, config.sim.r_small, Some(&phi))?)
            };
            let drift_bound = match &problem.lyapunov {
                Some(_) => {
                    let checkpoints: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]
                        .into_iter()
                        .filter(|t| *t <= sc.horizon)
                        .collect();
                    Some(sim::check_drift_bound(problem, &strat, &sc, x0, &checkpoints)?)
                }
                None => None,
            };
            let saddle = if problem.u1().len() > 1 || problem.u2().len() > 1 {
                Some(sim::check_saddle(problem, &strat, &sc, x0)?)
            } else {
                None
            };
            Ok(Output {
                files: vec![
                    ("value.csv".into(), phi.to_csv()),
                    ("strategies.csv".into(), strat.to_csv()),
                    ("trace.csv".into(), ensemble.trace_csv()),
                    ("residuals.csv".into(), rep.residual_csv()),
                ],
                report: RunReport {
                    beta: Some(beta),
                    value_csv: Some("value.csv".into()),
                    solve: Some(rep),
                    simulation: Some(SimulationSummary {
                        solver_beta: beta,
                        agrees: estimate.agrees_with(beta, 0.03),
                        estimate,
                        bias,
                        drift_bound,
                        saddle,
                        projections: ensemble.projections,
                        paths_projected: ensemble.paths_projected,
                    }),
                    ..base
                },
            })
        }
        (Pipeline::Check, benchmark) => {
            let points: Vec<Vec<f64>> = (0..grid.len()).map(|k| grid.coords(k)).collect();
            let cc = CheckConfig::default();
            let summary = match benchmark {
                Benchmark::Game(p) => {
                    let lyapunov = check_lyapunov(p, &points, &cc)?;
                    let flatness = match &p.flatness {
                        Some(cert) => Some(check_flatness(p, cert, &sample_pairs(&points), &cc)?),
                        None => None,
                    };
                    CheckSummary {
                        passed: lyapunov.passed && flatness.as_ref().is_none_or(|f| f.passed),
                        lyapunov: Some(lyapunov),
                        flatness,
                        adversary: None,
                    }
                }
                Benchmark::Risk(p) => {
                    let flatness = check_flatness(p, &p.flatness, &sample_pairs(&points), &cc)?;
                    let ball = risk::compute_adversary_ball(&p.flatness);
                    CheckSummary {
                        passed: flatness.passed && ball.is_ok(),
                        lyapunov: None,
                        flatness: Some(flatness),
                        adversary: ball.ok(),
                    }
                }
            };
            Ok(Output {
                files: Vec::new(),
                report: RunReport {
                    check: Some(summary),
                    ..base
                },
            })
        }
        (Pipeline::Simulate, Benchmark::Risk(_)) => unreachable!("validated"),
    }
}

/// Pairs of sample points for the flatness audit (a strided subsample).
fn sample_pairs(points: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let stride = (points.len() / 40).max(1);
    let sub: Vec<&Vec<f64>> = points.iter().step_by(stride).collect();
    let mut pairs = Vec::new();
    for (i, x) in sub.iter().enumerate() {
        for y in &sub[i + 1..] {
            pairs.push(((*x).clone(), (*y).clone()));
        }
    }
    pairs
}

fn exit_code_for(err: &Error) -> i32 {
    if err.is_convergence_failure() {
        2
    } else {
        1
    }
}

/// Runs one configured pipeline and writes its artifacts.
pub fn run(config: &RunConfig) -> RunOutcome {
    let start = Instant::now();
    let prepared = match prepare(config) {
        Ok(p) => p,
        Err(e) => {
            return RunOutcome {
                exit_code: 1,
                out_dir: None,
                artifacts: Vec::new(),
                message: e.to_string(),
            }
        }
    };
    let out_dir = config.output_dir();
    let result = execute(config, &prepared);
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(output) => match write_artifacts(config, &out_dir, output, wall) {
            Ok((artifacts, message, passed)) => RunOutcome {
                exit_code: if passed { 0 } else { 2 },
                out_dir: Some(out_dir),
                artifacts,
                message,
            },
            Err(e) => RunOutcome {
                exit_code: 1,
                out_dir: Some(out_dir),
                artifacts: Vec::new(),
                message: e.to_string(),
            },
        },
        Err(e) => {
            let code = exit_code_for(&e);
            let mut artifacts = Vec::new();
            if code == 2 {
                // Keep the residual history of a failed solve for diagnosis.
                if let Error::Convergence { residual_history, .. } = &e {
                    let text = serde_json::json!({
                        "error": e.to_string(),
                        "residual_history": residual_history,
                    });
                    if fs::create_dir_all(&out_dir).is_ok() {
                        let path = out_dir.join("failure.json");
                        if fs::write(&path, text.to_string()).is_ok() {
                            artifacts.push(path);
                        }
                    }
                }
            }
            RunOutcome {
                exit_code: code,
                out_dir: Some(out_dir),
                artifacts,
                message: e.to_string(),
            }
        }
    }
}

fn write_artifacts(config: &RunConfig, out_dir: &Path, output: Output, wall: f64) -> Result<(Vec<PathBuf>, String, bool)> {
    fs::create_dir_all(out_dir)?;
    let mut artifacts = Vec::new();
    for (name, content) in &output.files {
        let path = out_dir.join(name);
        fs::write(&path, content)?;
        artifacts.push(path);
    }
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&output.report).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&report_path, json)?;
    artifacts.push(report_path);
    let manifest = Manifest {
        run: config.clone(),
        provenance: Provenance {
            crate_name: env!("CARGO_PKG_NAME").into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_secs: wall,
        },
    };
    let manifest_path = out_dir.join("manifest.toml");
    fs::write(&manifest_path, toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?)?;
    artifacts.push(manifest_path);

    let r = &output.report;
    let (passed, message) = if let Some(c) = &r.check {
        (c.passed, format!("check {}: {}", r.problem, if c.passed { "pass" } else { "FAIL" }))
    } else if let Some(s) = &r.simulation {
        (
            true,
            format!(
                "simulate {}: estimate {:.6} ± {:.6} vs solver β {:.6} ({}){}",
                r.problem,
                s.estimate.mean,
                s.estimate.half_width,
                s.solver_beta,
                if s.agrees { "agree" } else { "disagree" },
                match &s.saddle {
                    Some(d) if d.passed => "; no profitable deviation",
                    Some(_) => "; a deviation is profitable",
                    None => "",
                }
            ),
        )
    } else {
        (true, format!("{} {}: beta = {:.8}", r.pipeline, r.problem, r.beta.unwrap_or(f64::NAN)))
    };
    let mut message = message;
    for w in r.solve.iter().flat_map(|s| &s.warnings) {
        message.push_str("\nwarning: ");
        message.push_str(w);
    }
    Ok((artifacts, message, passed))
}

/// Differences between two solve reports on the same problem and grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub delta_beta: f64,
    /// Over core nodes, after subtracting each field's origin value.
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    pub nodes: usize,
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("report.json")
    } else {
        p.to_path_buf()
    }
}

/// Compares two runs given their `report.json` files or output directories.
///
/// The grids must have the same nodes; the boundary policy may differ, so a
/// vanishing-discount run can be compared with an RVI run.
pub fn compare(a: &Path, b: &Path) -> Result<CompareSummary> {
    let (pa, pb) = (report_path(a), report_path(b));
    let (ra, rb) = (RunReport::read(&pa)?, RunReport::read(&pb)?);
    if ra.problem != rb.problem || ra.coefficients != rb.coefficients {
        return Err(Error::invalid(
            MODULE,
            format!("reports refer to different problems ('{}' vs '{}')", ra.problem, rb.problem),
        ));
    }
    if !ra.grid.same_nodes(&rb.grid) {
        return Err(Error::invalid(MODULE, "reports use different grids"));
    }
    let field = |r: &RunReport, p: &Path| -> Result<ValueField> {
        let name = r
            .value_csv
            .as_ref()
            .ok_or_else(|| Error::invalid(MODULE, "report has no value field"))?;
        let dir = p.parent().unwrap_or(Path::new("."));
        Ok(ValueField::read_csv(r.grid, &dir.join(name))?.normalized_at_origin())
    };
    let (fa, fb) = (field(&ra, &pa)?, field(&rb, &pb)?);
    let core = ra.grid.core_nodes();
    let diffs: Vec<f64> = core.iter().map(|&k| (fa.values()[k] - fb.values()[k]).abs()).collect();
    let delta_beta = match (ra.beta, rb.beta) {
        (Some(x), Some(y)) => (x - y).abs(),
        _ => f64::NAN,
    };
    Ok(CompareSummary {
        delta_beta,
        max_abs_diff: diffs.iter().copied().fold(0.0, f64::max),
        mean_abs_diff: crate::linalg::pairwise_sum(&diffs) / diffs.len().max(1) as f64,
        nodes: diffs.len(),
    })
}
