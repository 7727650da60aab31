//! Ergodic Isaacs solvers.
//!
//! Two independent routes to the game value `β` and the bias `φ*`:
//!
//! * **Vanishing discount**: solve the discounted Isaacs equation
//!   `α ψ = min max [L̄ψ + h̄]` by policy iteration for a decreasing sequence of
//!   discounts, then read off `β ≈ α ψ_α(0)` and `φ* ≈ ψ_α − ψ_α(0)`.
//! * **Relative value iteration**: march `∂φ/∂t = min max [L̄φ + h̄] − φ(t, 0)`
//!   explicitly in time; `φ(t, ·)` converges to `φ* + β`.
//!
//! The plain value iteration `∂φ̄/∂t = min max [L̄φ̄ + h̄] − β` is also
//! provided, together with diagnostics that check its coupling identities with
//! the relative iteration and its contraction estimate.

mod diagnostics;
mod discounted;
mod march;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiscreteGame, Grid, ValueField};
use crate::matrix_game::MixedStrategy;
use crate::problem::GameProblem;

pub use diagnostics::{
    check_contraction, check_coupling, elliptic_residual, coupling_residuals, truncation_diagnostic,
    DiagnosticReport, DiagnosticRow, TruncationDiagnostic,
};
pub use discounted::{solve_discounted, solve_discounted_from, vanishing_discount};
pub(crate) use march::{march, MarchSpec, Offset};
pub use march::{rvi_march, rvi_march_observed, solve_rvi, vi_march, vi_march_observed, MarchOutput};

const MODULE: &str = "ergodic_solver";

/// Numerical knobs shared by the ergodic solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Policy iteration stops when `‖ψₖ₊₁ − ψₖ‖∞ ≤ pi_tol · max(1, ‖ψₖ₊₁‖∞)`.
    pub pi_tol: f64,
    pub pi_max_sweeps: usize,
    /// Gauss–Seidel tolerance for the 2D policy-evaluation systems.
    pub linear_tol: f64,
    pub linear_max_sweeps: usize,
    /// Elliptic residual must satisfy `sup_core |minmax[Lφ*+h] − β| ≤ elliptic_tol · (1 + |β|)`.
    pub elliptic_tol: f64,
    /// A march counts as converged when its last per-step residual is below this.
    pub march_tol: f64,
    /// Fraction of the horizon over which `φ(t, 0)` is averaged to estimate `β`.
    pub beta_window: f64,
    /// Tolerance for the vanishing-discount trend monotonicity warning.
    pub trend_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pi_tol: 1e-11,
            pi_max_sweeps: 200,
            linear_tol: 1e-10,
            linear_max_sweeps: 500_000,
            elliptic_tol: 0.05,
            march_tol: 1e-5,
            beta_window: 0.1,
            trend_tol: 1e-6,
        }
    }
}

/// Default vanishing-discount schedule `αₙ = 0.5 · 2⁻ⁿ`, `n = 0..7`.
pub fn default_alphas() -> Vec<f64> {
    (0..8).map(|n| 0.5 * 0.5f64.powi(n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Discounted,
    VanishingDiscount,
    Vi,
    Rvi,
    RiskGame,
    RiskMultiplicative,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Discounted => "discounted",
            Method::VanishingDiscount => "vanishing_discount",
            Method::Vi => "vi",
            Method::Rvi => "rvi",
            Method::RiskGame => "risk_game",
            Method::RiskMultiplicative => "risk_multiplicative",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "discounted" => Method::Discounted,
            "vanishing_discount" | "vd" => Method::VanishingDiscount,
            "vi" => Method::Vi,
            "rvi" => Method::Rvi,
            "risk_game" => Method::RiskGame,
            "risk_multiplicative" => Method::RiskMultiplicative,
            other => return Err(Error::invalid("cli_io", format!("unknown method '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub step: usize,
    pub time: f64,
    pub residual: f64,
    /// Value at the origin node at the start of the step.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaTrendRow {
    pub alpha: f64,
    pub beta_hat: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    pub residual_history: Vec<ResidualRecord>,
    pub wall_clock_secs: f64,
    pub truncation: Option<TruncationDiagnostic>,
    pub converged: bool,
    pub beta: Option<f64>,
    pub beta_trend: Vec<BetaTrendRow>,
    pub elliptic_residual: Option<f64>,
    pub warnings: Vec<String>,
    /// Method-specific numbers (step sizes, adversary constants, ...).
    pub details: BTreeMap<String, f64>,
}

impl SolveReport {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            iterations: 0,
            residual_history: Vec::new(),
            wall_clock_secs: 0.0,
            truncation: None,
            converged: false,
            beta: None,
            beta_trend: Vec::new(),
            elliptic_residual: None,
            warnings: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.residual_history.last().map(|r| r.residual)
    }

    pub fn residual_csv(&self) -> String {
        let mut s = String::from("step,time,residual,offset\n");
        for r in &self.residual_history {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.time, r.residual, r.offset);
        }
        s
    }

    pub(crate) fn convergence_error(&self, message: impl Into<String>) -> Error {
        Error::Convergence {
            module: MODULE,
            iterations: self.iterations,
            last_residual: self.last_residual().unwrap_or(f64::NAN),
            residual_history: self.residual_history.iter().map(|r| r.residual).collect(),
            message: message.into(),
        }
    }
}

/// Per-node stationary Markov strategies of both players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyField {
    grid: Grid,
    player1: Vec<MixedStrategy>,
    player2: Vec<MixedStrategy>,
}

impl StrategyField {
    pub fn new(grid: Grid, player1: Vec<MixedStrategy>, player2: Vec<MixedStrategy>) -> Result<Self> {
        if player1.len() != grid.len() || player2.len() != grid.len() {
            return Err(Error::invalid(MODULE, "strategy field size does not match the grid"));
        }
        let uniform_len = |v: &[MixedStrategy]| v.iter().all(|s| s.len() == v[0].len());
        if !uniform_len(&player1) || !uniform_len(&player2) {
            return Err(Error::invalid(MODULE, "strategy lengths vary across nodes"));
        }
        Ok(Self { grid, player1, player2 })
    }

    /// The same pair of mixed strategies at every node.
    pub fn constant(grid: Grid, v1: MixedStrategy, v2: MixedStrategy) -> Self {
        Self {
            grid,
            player1: vec![v1; grid.len()],
            player2: vec![v2; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn player1(&self) -> &[MixedStrategy] {
        &self.player1
    }

    pub fn player2(&self) -> &[MixedStrategy] {
        &self.player2
    }

    pub fn with_player1(&self, player1: Vec<MixedStrategy>) -> Result<Self> {
        Self::new(self.grid, player1, self.player2.clone())
    }

    pub fn with_player2(&self, player2: Vec<MixedStrategy>) -> Result<Self> {
        Self::new(self.grid, self.player1.clone(), player2)
    }

    /// Multilinearly interpolated weights of both players at `x`.
    pub fn interpolate_into(&self, x: &[f64], w1: &mut [f64], w2: &mut [f64]) {
        w1.iter_mut().for_each(|w| *w = 0.0);
        w2.iter_mut().for_each(|w| *w = 0.0);
        for (node, lam) in self.grid.interpolation_weights(x) {
            if lam == 0.0 {
                continue;
            }
            for (o, s) in w1.iter_mut().zip(self.player1[node].weights()) {
                *o += lam * s;
            }
            for (o, s) in w2.iter_mut().zip(self.player2[node].weights()) {
                *o += lam * s;
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.grid.dim() {
            let _ = write!(s, "x{a},");
        }
        let n1 = self.player1[0].len();
        let n2 = self.player2[0].len();
        let cols: Vec<String> = (0..n1)
            .map(|i| format!("p1_{i}"))
            .chain((0..n2).map(|j| format!("p2_{j}")))
            .collect();
        s.push_str(&cols.join(","));
        s.push('\n');
        for k in 0..self.grid.len() {
            for c in self.grid.coords(k) {
                let _ = write!(s, "{c},");
            }
            let ws: Vec<String> = self.player1[k]
                .weights()
                .iter()
                .chain(self.player2[k].weights())
                .map(|w| w.to_string())
                .collect();
            s.push_str(&ws.join(","));
            s.push('\n');
        }
        s
    }

    pub fn read_csv(grid: Grid, n1: usize, n2: usize, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let mut p1 = Vec::with_capacity(grid.len());
        let mut p2 = Vec::with_capacity(grid.len());
        let d = grid.dim();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != d + n1 + n2 {
                return Err(Error::Parse(format!("strategy CSV row {k} has {} columns", rec.len())));
            }
            let nums: Vec<f64> = rec
                .iter()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {k}: {e}")))?;
            p1.push(MixedStrategy::normalized(nums[d..d + n1].to_vec()));
            p2.push(MixedStrategy::normalized(nums[d + n1..].to_vec()));
        }
        Self::new(grid, p1, p2)
    }
}

/// `(β, φ*)` with saddle-point selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    pub beta: f64,
    /// Bias, pinned to zero at the origin node.
    pub phi_star: ValueField,
    pub selectors: StrategyField,
    pub report: SolveReport,
}

/// Per-node saddle strategies of the Hamiltonian matrix built from `phi`.
///
/// Dirichlet boundary nodes carry no game; they receive the strategies of
/// the nearest interior node so that the field can be interpolated anywhere
/// in the box.
pub fn extract_selectors(problem: &GameProblem, grid: &Grid, phi: &ValueField) -> Result<StrategyField> {
    let dg = DiscreteGame::new(problem, grid)?;
    extract_selectors_with(&dg, phi.values())
}

pub(crate) fn extract_selectors_with(dg: &DiscreteGame, phi: &[f64]) -> Result<StrategyField> {
    let grid = *dg.grid();
    let mut p1 = Vec::with_capacity(grid.len());
    let mut p2 = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let source = if grid.is_active(node) {
            node
        } else {
            nearest_interior(&grid, node)
        };
        let sol = dg.solve_node(phi, source)?;
        p1.push(sol.v1);
        p2.push(sol.v2);
    }
    StrategyField::new(grid, p1, p2)
}

fn nearest_interior(grid: &Grid, node: usize) -> usize {
    let n = grid.points_per_axis();
    let mut mi = grid.multi_index(node);
    for k in mi.iter_mut().take(grid.dim()) {
        *k = (*k).clamp(1, n - 2);
    }
    grid.node_at(mi)
}

pub(crate) fn require_one_sided(grid: &Grid, what: &str) -> Result<()> {
    if grid.boundary() != crate::grid::BoundaryPolicy::OneSided {
        return Err(Error::invalid(
            MODULE,
            format!("{what} needs a grid with the one-sided boundary policy"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryPolicy;
    use crate::registry;

    #[test]
    fn trivial_controls_give_point_masses() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let p = registry::ou1d();
        let phi = ValueField::from_fn(grid, |x| x[0] * x[0] / 2.0).unwrap();
        let s = extract_selectors(&p, &grid, &phi).unwrap();
        assert!(s.player1().iter().all(|v| v.weights() == [1.0]));
        assert!(s.player2().iter().all(|v| v.weights() == [1.0]));
    }

    #[test]
    fn dominant_row_is_selected_everywhere() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        // Row 1 of the payoff exceeds row 0 by 10 while the drift terms are O(1).
        let p = registry::ou_game_1d().with_payoff(|x, u1, _| x[0] * x[0] + 10.0 * (u1[0] + 0.5));
        let phi = ValueField::from_fn(grid, |x| x[0] * x[0] / 8.0).unwrap();
        let s = extract_selectors(&p, &grid, &phi).unwrap();
        assert!(s.player1().iter().all(|v| v.weights() == [0.0, 1.0]));
    }

    #[test]
    fn matching_pennies_node_is_mixed() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let p = registry::ou_game_1d();
        // φ ≡ 0 leaves only the payoff, x² + 1 + 2u₁u₂: matching pennies at every node.
        let phi = ValueField::constant(grid, 0.0);
        let s = extract_selectors(&p, &grid, &phi).unwrap();
        let o = grid.origin();
        for w in s.player1()[o].weights().iter().chain(s.player2()[o].weights()) {
            assert!((w - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_csv_roundtrip() {
        let grid = Grid::new(1, 1.0, 5, BoundaryPolicy::OneSided).unwrap();
        let s = StrategyField::constant(grid, MixedStrategy::new(vec![0.25, 0.75]).unwrap(), MixedStrategy::uniform(3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, s.to_csv()).unwrap();
        let back = StrategyField::read_csv(grid, 2, 3, &path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("vanishing-discount".parse::<Method>().unwrap(), Method::VanishingDiscount);
        assert!("foo".parse::<Method>().is_err());
    }
}
