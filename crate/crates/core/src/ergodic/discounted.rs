//! Discounted Isaacs equation on a Dirichlet-truncated box, and the
//! vanishing-discount extraction of `(β, φ*)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, DiscreteGame, FieldMeta, Grid, ValueField};
use crate::linalg::solve_tridiagonal;
use crate::matrix_game::MixedStrategy;
use crate::problem::GameProblem;

use super::diagnostics::elliptic_residual_with;
use super::{
    extract_selectors_with, BetaTrendRow, ErgodicSolution, Method, ResidualRecord, SolveReport,
    SolverConfig, StrategyField, MODULE,
};

/// Solves `α ψ = value(G(ψ, x))` at interior nodes with `ψ = 0` on the box
/// boundary, starting from `ψ ≡ 0`.
pub fn solve_discounted(
    problem: &GameProblem,
    grid: &Grid,
    alpha: f64,
    config: &SolverConfig,
) -> Result<(ValueField, StrategyField, SolveReport)> {
    solve_discounted_from(problem, grid, alpha, None, config)
}

/// [`solve_discounted`] with an optional initial guess.
///
/// Policy iteration in the Pollatschek–Avi-Itzhak form: (a) fix `ψ` and solve
/// the matrix game at every node; (b) fix both mixed strategies and solve the
/// linear Markov-chain equation `α ψ − L̄_{v₁v₂} ψ = h_{v₁v₂}`.
pub fn solve_discounted_from(
    problem: &GameProblem,
    grid: &Grid,
    alpha: f64,
    initial: Option<&ValueField>,
    config: &SolverConfig,
) -> Result<(ValueField, StrategyField, SolveReport)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(MODULE, format!("discount must be positive, got {alpha}")));
    }
    if grid.boundary() != BoundaryPolicy::DirichletZero {
        return Err(Error::invalid(MODULE, "discounted solves need the dirichlet_zero boundary policy"));
    }
    let start = Instant::now();
    let dg = DiscreteGame::new(problem, grid)?;
    let mut report = SolveReport::new(Method::Discounted);
    report.details.insert("alpha".into(), alpha);

    let mut psi = match initial {
        Some(f) if f.grid().same_nodes(grid) => {
            let mut v = f.values().to_vec();
            for (k, val) in v.iter_mut().enumerate() {
                if !grid.is_active(k) {
                    *val = 0.0;
                }
            }
            v
        }
        Some(_) => return Err(Error::invalid(MODULE, "initial guess lives on a different grid")),
        None => vec![0.0; grid.len()],
    };

    let mut converged = false;
    let mut last_strategies: Option<Vec<Option<(MixedStrategy, MixedStrategy)>>> = None;
    for sweep in 1..=config.pi_max_sweeps {
        let strategies = node_strategies(&dg, &psi)?;
        // A policy that reproduces itself has already been evaluated.
        if last_strategies.as_ref().is_some_and(|last| same_policy(last, &strategies)) {
            converged = true;
            break;
        }
        let next = evaluate_policy(&dg, alpha, &strategies, &psi, config)?;
        let delta = next
            .iter()
            .zip(&psi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = next.iter().map(|v| v.abs()).fold(1.0, f64::max);
        psi = next;
        last_strategies = Some(strategies);
        report.iterations = sweep;
        report.residual_history.push(ResidualRecord {
            step: sweep,
            time: 0.0,
            residual: delta,
            offset: psi[grid.origin()],
        });
        if !psi.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                module: MODULE,
                step: sweep,
                time: 0.0,
                message: "policy evaluation produced non-finite values".into(),
            });
        }
        if delta <= config.pi_tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(report.convergence_error(format!(
            "policy iteration for alpha = {alpha} did not settle in {} sweeps",
            config.pi_max_sweeps
        )));
    }
    report.converged = true;
    let selectors = extract_selectors_with(&dg, &psi)?;
    let field = ValueField::new(*grid, psi, FieldMeta::Discounted { alpha })?;
    report.beta = Some(alpha * field.at_origin());
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((field, selectors, report))
}

fn same_policy(a: &[Option<(MixedStrategy, MixedStrategy)>], b: &[Option<(MixedStrategy, MixedStrategy)>]) -> bool {
    let close = |x: &MixedStrategy, y: &MixedStrategy| x.weights().iter().zip(y.weights()).all(|(p, q)| (p - q).abs() <= 1e-14);
    a.iter().zip(b).all(|(s, t)| match (s, t) {
        (Some((a1, a2)), Some((b1, b2))) => close(a1, b1) && close(a2, b2),
        (None, None) => true,
        _ => false,
    })
}

fn node_strategies(dg: &DiscreteGame, psi: &[f64]) -> Result<Vec<Option<(MixedStrategy, MixedStrategy)>>> {
    let grid = dg.grid();
    let (n1, n2) = dg.control_counts();
    (0..grid.len())
        .map(|node| {
            if !grid.is_active(node) {
                return Ok(None);
            }
            if n1 == 1 && n2 == 1 {
                return Ok(Some((MixedStrategy::pure(1, 0), MixedStrategy::pure(1, 0))));
            }
            let sol = dg.solve_node(psi, node)?;
            Ok(Some((sol.v1, sol.v2)))
        })
        .collect()
}

/// One row of `(α + Σw̄) ψ_x − Σ w̄_k ψ_k = h̄` under fixed mixed strategies.
struct Row {
    diag: f64,
    off: Vec<(usize, f64)>,
    rhs: f64,
}

fn assemble_rows(
    dg: &DiscreteGame,
    alpha: f64,
    strategies: &[Option<(MixedStrategy, MixedStrategy)>],
) -> Vec<Option<Row>> {
    let grid = dg.grid();
    strategies
        .iter()
        .enumerate()
        .map(|(node, s)| {
            let (v1, v2) = s.as_ref()?;
            let mut off: Vec<(usize, f64)> = Vec::with_capacity(8);
            let mut rhs = 0.0;
            for (i, &p) in v1.weights().iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (j, &q) in v2.weights().iter().enumerate() {
                    let pq = p * q;
                    if pq == 0.0 {
                        continue;
                    }
                    rhs += pq * dg.payoff(node, i, j);
                    for &(k, w) in dg.stencil(node, i, j) {
                        let k = k as usize;
                        match off.iter_mut().find(|e| e.0 == k) {
                            Some(e) => e.1 += pq * w,
                            None => off.push((k, pq * w)),
                        }
                    }
                }
            }
            let diag = alpha + off.iter().map(|e| e.1).sum::<f64>();
            // Dirichlet neighbours contribute ψ = 0.
            off.retain(|e| grid.is_active(e.0));
            Some(Row { diag, off, rhs })
        })
        .collect()
}

fn evaluate_policy(
    dg: &DiscreteGame,
    alpha: f64,
    strategies: &[Option<(MixedStrategy, MixedStrategy)>],
    warm: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let grid = dg.grid();
    let rows = assemble_rows(dg, alpha, strategies);
    if grid.dim() == 1 {
        let active: Vec<usize> = (0..grid.len()).filter(|&k| grid.is_active(k)).collect();
        let m = active.len();
        let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let first = active[0];
        for (r, &node) in active.iter().enumerate() {
            let row = rows[node].as_ref().expect("active node has a row");
            di[r] = row.diag;
            rhs[r] = row.rhs;
            for &(k, w) in &row.off {
                if k + 1 == node {
                    lo[r] = -w;
                } else if k == node + 1 {
                    up[r] = -w;
                } else {
                    unreachable!("1D stencils only couple nearest neighbours");
                }
            }
        }
        let sol = solve_tridiagonal(&lo, &di, &up, &rhs);
        let mut psi = vec![0.0; grid.len()];
        for (r, v) in sol.into_iter().enumerate() {
            psi[first + r] = v;
        }
        Ok(psi)
    } else {
        gauss_seidel(&rows, warm, config)
    }
}

/// Forward Gauss–Seidel in node order (axis 0 fastest).
///
/// Stops on the a-posteriori error estimate `δ ρ/(1 − ρ)`, with the
/// contraction factor `ρ` estimated from successive updates; for small
/// discounts `ρ` is close to 1 and the raw update badly understates the error.
fn gauss_seidel(rows: &[Option<Row>], warm: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
    let mut x = warm.to_vec();
    for (k, r) in rows.iter().enumerate() {
        if r.is_none() {
            x[k] = 0.0;
        }
    }
    let mut previous = f64::INFINITY;
    for sweep in 0..config.linear_max_sweeps {
        let mut delta: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for (k, row) in rows.iter().enumerate() {
            let Some(row) = row else { continue };
            let s: f64 = row.off.iter().map(|&(j, w)| w * x[j]).sum();
            let v = (row.rhs + s) / row.diag;
            delta = delta.max((v - x[k]).abs());
            scale = scale.max(v.abs());
            x[k] = v;
        }
        let rho = if previous.is_finite() && previous > 0.0 { (delta / previous).min(0.999_999) } else { 0.0 };
        previous = delta;
        if delta == 0.0 || (sweep > 0 && delta * rho / (1.0 - rho) <= config.linear_tol * scale) {
            return Ok(x);
        }
        if !delta.is_finite() {
            return Err(Error::Divergence {
                module: MODULE,
                step: sweep,
                time: 0.0,
                message: "Gauss–Seidel diverged".into(),
            });
        }
    }
    Err(Error::Convergence {
        module: MODULE,
        iterations: config.linear_max_sweeps,
        last_residual: f64::NAN,
        residual_history: Vec::new(),
        message: "Gauss–Seidel did not reach the linear tolerance".into(),
    })
}

/// Runs the discounted solve over a strictly decreasing discount schedule and
/// returns `β = α_min ψ(0)`, `φ* = ψ − ψ(0)` at the smallest discount, with
/// the `α ψ_α(0)` trend table in the report.
pub fn vanishing_discount(
    problem: &GameProblem,
    grid: &Grid,
    alphas: &[f64],
    config: &SolverConfig,
) -> Result<ErgodicSolution> {
    if alphas.is_empty() {
        return Err(Error::invalid(MODULE, "empty discount schedule"));
    }
    if alphas.windows(2).any(|w| !(w[1] < w[0])) || !(alphas[alphas.len() - 1] > 0.0) {
        return Err(Error::invalid(MODULE, "discounts must be strictly decreasing and positive"));
    }
    let start = Instant::now();
    let mut report = SolveReport::new(Method::VanishingDiscount);
    // Warm start: previous bias plus the value level β̂/α at the new discount.
    let mut warm: Option<(ValueField, f64)> = None;
    let mut last: Option<(ValueField, StrategyField, f64)> = None;

    for &alpha in alphas {
        let guess = match &warm {
            Some((bias, beta_hat)) => Some(bias.map(|v| v + beta_hat / alpha)?),
            None => None,
        };
        let (psi, selectors, sub) = solve_discounted_from(problem, grid, alpha, guess.as_ref(), config)?;
        let beta_hat = alpha * psi.at_origin();
        for r in &sub.residual_history {
            let step = report.residual_history.len() + 1;
            report.residual_history.push(ResidualRecord { step, ..*r });
        }
        report.iterations += sub.iterations;
        report.beta_trend.push(BetaTrendRow {
            alpha,
            beta_hat,
            iterations: sub.iterations,
        });
        warm = Some((psi.normalized_at_origin(), beta_hat));
        last = Some((psi, selectors, alpha));
    }

    let trend: Vec<f64> = report.beta_trend.iter().map(|r| r.beta_hat).collect();
    let diffs: Vec<f64> = trend.windows(2).map(|w| w[1] - w[0]).collect();
    let ups = diffs.iter().any(|d| *d > config.trend_tol);
    let downs = diffs.iter().any(|d| *d < -config.trend_tol);
    if ups && downs {
        report
            .warnings
            .push(format!("α ψ_α(0) trend is not monotone: {trend:?}"));
    }

    let (psi, selectors, alpha_min) = last.expect("nonempty schedule");
    let beta = alpha_min * psi.at_origin();
    let phi_star = psi.normalized_at_origin().with_meta(FieldMeta::Ergodic);
    let dg = DiscreteGame::new(problem, grid)?;
    let residual = elliptic_residual_with(&dg, &phi_star, beta)?;
    report.elliptic_residual = Some(residual);
    report.beta = Some(beta);
    report.details.insert("alpha_min".into(), alpha_min);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if residual > config.elliptic_tol * (1.0 + beta.abs()) {
        return Err(report.convergence_error(format!(
            "elliptic residual {residual:e} exceeds tolerance at alpha_min = {alpha_min}; extend the schedule"
        )));
    }
    report.converged = true;
    Ok(ErgodicSolution {
        beta,
        phi_star,
        selectors,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn dirichlet(radius: f64, n: usize) -> Grid {
        Grid::new(1, radius, n, BoundaryPolicy::DirichletZero).unwrap()
    }

    #[test]
    fn zero_payoff_gives_zero() {
        let p = registry::ou1d().with_payoff(|_, _, _| 0.0);
        let grid = dirichlet(4.0, 41);
        let (psi, _, rep) = solve_discounted(&p, &grid, 1.0, &SolverConfig::default()).unwrap();
        assert!(psi.values().iter().all(|&v| v == 0.0));
        assert!(rep.converged);
    }

    #[test]
    fn ou_matches_quadratic_ansatz() {
        // αψ = −xψ′ + ψ″ + x²  ⇒  ψ = x²/(α+2) + 2/(α(α+2)).
        let p = registry::ou1d();
        let grid = dirichlet(6.0, 241);
        let alpha = 2.0;
        let (psi, _, _) = solve_discounted(&p, &grid, alpha, &SolverConfig::default()).unwrap();
        for node in grid.core_nodes() {
            let x = grid.coords(node)[0];
            if x.abs() > 3.0 {
                continue;
            }
            let exact = x * x / (alpha + 2.0) + 2.0 / (alpha * (alpha + 2.0));
            assert!((psi.values()[node] - exact).abs() < 2e-3, "x = {x}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = registry::ou1d();
        let g = dirichlet(2.0, 21);
        assert!(solve_discounted(&p, &g, 0.0, &SolverConfig::default()).is_err());
        let one_sided = g.with_boundary(BoundaryPolicy::OneSided);
        assert!(solve_discounted(&p, &one_sided, 1.0, &SolverConfig::default()).is_err());
        assert!(vanishing_discount(&p, &g, &[0.5, 0.5], &SolverConfig::default()).is_err());
    }

    #[test]
    fn constant_payoff_game() {
        let p = registry::ou1d().with_payoff(|_, _, _| 3.0);
        let grid = dirichlet(6.0, 121);
        let sol = vanishing_discount(&p, &grid, &[0.05, 0.02, 0.01], &SolverConfig::default()).unwrap();
        // Killing at the box boundary costs O(1e-5) from the centre of a 6σ box.
        assert!((sol.beta - 3.0).abs() < 1e-4, "beta {}", sol.beta);
        // The Dirichlet truncation leaves a boundary layer of depth
        // c·P(exit)/α, which is large near the box edge when α is small.
        for node in grid.core_nodes() {
            if grid.coords(node)[0].abs() <= 2.0 {
                assert!(sol.phi_star.values()[node].abs() < 1e-4);
            }
        }
    }

    #[test]
    fn two_dimensional_policy_iteration() {
        let p = registry::ou2d(0.5);
        let grid = Grid::new(2, 4.0, 21, BoundaryPolicy::DirichletZero).unwrap();
        let alpha = 1.0;
        let (psi, _, _) = solve_discounted(&p, &grid, alpha, &SolverConfig::default()).unwrap();
        // ψ = |x|²/(α+2) + tr(a)/(α(α+2)), tr a = 4.
        let exact0 = 4.0 / (alpha * (alpha + 2.0));
        assert!((psi.at_origin() - exact0).abs() < 0.02, "{}", psi.at_origin());
    }
}
