//! Simulates the closed loop under the computed saddle strategies and
//! compares the long-run average payoff with the solver's constant.

use ergodic_games::ergodic::{solve_rvi, SolverConfig};
use ergodic_games::grid::{BoundaryPolicy, DiscreteGame, Grid, ValueField};
use ergodic_games::registry;
use ergodic_games::sim::{check_drift_bound, estimate_beta, estimate_bias, SimConfig};

fn main() -> ergodic_games::Result<()> {
    let problem = registry::ou_game_1d();
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided)?;
    let dt = DiscreteGame::new(&problem, &grid)?.cfl_limit();
    let sol = solve_rvi(&problem, &grid, &ValueField::constant(grid, 0.0), dt, 20.0, &SolverConfig::default())?;

    let sim = SimConfig {
        n_paths: 64,
        horizon: 100.0,
        seed: 11,
        ..SimConfig::default()
    };
    let est = estimate_beta(&problem, &sol.selectors, &sim, &[0.0])?;
    println!(
        "solver beta {:.5}; Monte Carlo {:.5} ± {:.5} ({} effective samples)",
        sol.beta, est.mean, est.half_width, est.n_effective
    );

    let bias = estimate_bias(
        &problem,
        &sol.selectors,
        &SimConfig { horizon: 40.0, ..sim.clone() },
        &[1.5],
        sol.beta,
        0.05,
        Some(&sol.phi_star),
    )?;
    println!(
        "bias at x = 1.5: {:.4} ± {:.4} (grid {:.4}), unfinished paths {:.1}%",
        bias.estimate.mean,
        bias.estimate.half_width,
        bias.grid_value.unwrap_or(f64::NAN),
        100.0 * bias.failure_fraction
    );

    let drift = check_drift_bound(&problem, &sol.selectors, &sim, &[2.0], &[0.0, 0.5, 1.0, 2.0, 4.0])?;
    for row in &drift.rows {
        println!("  t = {:.1}: E V(X_t) = {:.4} <= {:.4}", row.time, row.lhs, row.rhs);
    }
    Ok(())
}
