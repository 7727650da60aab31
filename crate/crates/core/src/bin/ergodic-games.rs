use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ergodic_games::io::{self, MethodSelection, RunConfig, OUTPUT_ENV};
use ergodic_games::registry;

/// Ergodic stochastic differential games on bounded grids.
#[derive(Parser)]
#[command(name = "ergodic-games", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the ergodic problem with one method.
    Solve(RunArgs),
    /// Solve, then estimate the long-run payoff by Monte Carlo.
    Simulate(RunArgs),
    /// Audit the problem's certificates on the grid nodes.
    Check(RunArgs),
    /// Compare two runs (report.json files or output directories).
    Compare { a: PathBuf, b: PathBuf },
    /// List the shipped benchmark problems.
    ListProblems,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    problem: Option<String>,
    /// Problem coefficient, e.g. `--coef delta=0.5`.
    #[arg(long = "coef", value_parser = parse_coef)]
    coefficients: Vec<(String, f64)>,
    /// discounted, vanishing_discount, vi, rvi, risk_game, risk_multiplicative.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
}

fn parse_coef(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let v: f64 = v.parse().map_err(|e| format!("{v}: {e}"))?;
    Ok((k.to_string(), v))
}

impl RunArgs {
    fn into_config(self, pipeline: Option<&str>) -> ergodic_games::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => {
                let problem = self.problem.clone().expect("required by clap");
                RunConfig::new(&problem, "rvi")
            }
        };
        if let Some(p) = self.problem {
            c.problem.name = p;
        }
        if !self.coefficients.is_empty() {
            c.problem.coefficients = self.coefficients.into_iter().collect::<BTreeMap<_, _>>();
        }
        match pipeline {
            Some(p) => {
                if let Some(m) = self.method {
                    c.sim.strategy_method = m.parse()?;
                }
                c.solver.method = MethodSelection::One(p.into());
            }
            None => {
                if let Some(m) = self.method {
                    c.solver.method = MethodSelection::One(m);
                }
            }
        }
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(c.grid.radius, self.radius);
        set!(c.grid.n, self.n);
        set!(c.seed, self.seed);
        set!(c.solver.t_end, self.t_end);
        set!(c.sim.n_paths, self.paths);
        set!(c.sim.horizon, self.horizon);
        if self.alpha.is_some() {
            c.solver.alpha = self.alpha;
        }
        if self.beta.is_some() {
            c.solver.beta = self.beta;
        }
        if self.dt.is_some() {
            c.solver.dt = self.dt;
        }
        if self.out.is_some() {
            c.output = self.out;
        }
        Ok(c)
    }
}

fn execute(args: RunArgs, pipeline: Option<&str>) -> ExitCode {
    let config = match args.into_config(pipeline) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let outcome = io::run(&config);
    if outcome.exit_code == 0 {
        println!("{}", outcome.message);
        if let Some(dir) = &outcome.out_dir {
            println!("artifacts in {}", dir.display());
        }
    } else {
        eprintln!("error: {}", outcome.message);
    }
    ExitCode::from(outcome.exit_code as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Solve(args) => execute(args, None),
        Command::Simulate(args) => execute(args, Some("simulate")),
        Command::Check(args) => execute(args, Some("check")),
        Command::Compare { a, b } => match io::compare(&a, &b) {
            Ok(s) => {
                println!(
                    "|Δβ| = {:.3e}  max|Δφ| = {:.3e}  mean|Δφ| = {:.3e}  over {} core nodes",
                    s.delta_beta, s.max_abs_diff, s.mean_abs_diff, s.nodes
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::ListProblems => {
            for b in registry::list() {
                let coefs: Vec<String> = b.coefficients.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{:<18} {:<5} dim={}  [{}]  {}", b.name, b.kind, b.dim, coefs.join(", "), b.description);
            }
            ExitCode::SUCCESS
        }
    }
}
