//! Recovers the ergodic constant of the OU benchmark from a decreasing
//! sequence of discounted problems.

use ergodic_games::ergodic::{default_alphas, solve_discounted, vanishing_discount, SolverConfig};
use ergodic_games::grid::{BoundaryPolicy, Grid};
use ergodic_games::registry;

fn main() -> ergodic_games::Result<()> {
    let problem = registry::ou1d();
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::DirichletZero)?;
    let config = SolverConfig::default();

    let (psi, _, report) = solve_discounted(&problem, &grid, 1.0, &config)?;
    println!(
        "alpha = 1: psi(0) = {:.6} (exact {:.6}), {} policy iterations",
        psi.at_origin(),
        2.0 / 3.0,
        report.iterations
    );

    let sol = vanishing_discount(&problem, &grid, &default_alphas(), &config)?;
    println!("{:>10} {:>12} {:>12}", "alpha", "alpha*psi(0)", "exact");
    for row in &sol.report.beta_trend {
        println!("{:>10.5} {:>12.6} {:>12.6}", row.alpha, row.beta_hat, 2.0 / (row.alpha + 2.0));
    }
    println!("beta = {:.6}, elliptic residual {:.3e}", sol.beta, sol.report.elliptic_residual.unwrap_or(f64::NAN));
    for w in &sol.report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
