//! Risk-sensitive OU control: the transformed game with an adversary, and
//! the multiplicative iteration for the principal eigenfunction.

use ergodic_games::ergodic::SolverConfig;
use ergodic_games::grid::{BoundaryPolicy, Grid, ValueField};
use ergodic_games::registry;
use ergodic_games::risk::{compute_adversary_ball, rvi_multiplicative, solve_risk_game};

fn main() -> ergodic_games::Result<()> {
    let theta = 3.0 / 16.0;
    let problem = registry::risk_ou_1d(theta, 6.0);
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided)?;
    let config = SolverConfig::default();

    let ball = compute_adversary_ball(&problem.flatness)?;
    println!("adversary ball radius {:.4}, K = {:.4}", ball.radius, ball.k);

    let sol = solve_risk_game(&problem, &grid, &ValueField::constant(grid, 0.0), 5e-4, 30.0, &config)?;
    let exact_beta = (1.0 - (1.0 - 4.0 * theta).sqrt()) / 2.0;
    println!("game: beta = {:.6} (exact {exact_beta:.6})", sol.beta);
    for x in [0.0, 1.0, 2.0] {
        let k = grid.find_node(&[x]).expect("grid node");
        println!(
            "  x = {x}: phi* = {:.5} (exact {:.5}), adversary w = {:.4} (exact {:.4})",
            sol.phi_star.values()[k] - sol.phi_star.at_origin(),
            x * x / 8.0,
            sol.adversary[k][0],
            x / 2.0
        );
    }

    let (psi, report) = rvi_multiplicative(&problem, &grid, &ValueField::constant(grid, 1.0), 5e-4, 30.0, &config)?;
    println!("multiplicative: ln psi(0) rate = {:.6}", report.beta.unwrap_or(f64::NAN));
    let worst = grid
        .core_nodes()
        .into_iter()
        .map(|k| (psi.values()[k] / sol.phi_star.values()[k].exp() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("sup |psi / exp(phi*) - 1| over the core = {worst:.3e}");
    Ok(())
}
