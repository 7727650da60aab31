//! Relative value iteration on the OU benchmark, compared with the closed
//! form `β = 1`, `φ* = x²/2`.

use ergodic_games::ergodic::{solve_rvi, SolverConfig};
use ergodic_games::grid::{BoundaryPolicy, DiscreteGame, Grid, ValueField};
use ergodic_games::registry;

fn main() -> ergodic_games::Result<()> {
    let problem = registry::ou1d();
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided)?;
    let dt = DiscreteGame::new(&problem, &grid)?.cfl_limit();
    let sol = solve_rvi(&problem, &grid, &ValueField::constant(grid, 0.0), dt, 20.0, &SolverConfig::default())?;

    let exact = ValueField::from_fn(grid, |x| x[0] * x[0] / 2.0)?;
    println!("dt = {dt:.3e}, {} steps", sol.report.iterations);
    println!("beta = {:.8}", sol.beta);
    println!(
        "sup |phi* - x^2/2| over the core = {:.3e} (field size {:.2})",
        sol.phi_star.core_distance(&exact),
        exact.core_sup()
    );
    println!("final residual {:.3e}", sol.report.last_residual().unwrap_or(f64::NAN));
    for x in [0.0, 1.0, 2.0, 3.0] {
        println!("  phi*({x}) = {:.5}   exact {:.5}", sol.phi_star.interpolate(&[x]), x * x / 2.0);
    }
    Ok(())
}
