//! A genuine two-player ergodic game: both solvers agree on the value and
//! the saddle strategies are read off the discrete Hamiltonian.

use ergodic_games::ergodic::{default_alphas, solve_rvi, vanishing_discount, SolverConfig};
use ergodic_games::grid::{BoundaryPolicy, DiscreteGame, Grid, ValueField};
use ergodic_games::registry;

fn main() -> ergodic_games::Result<()> {
    let problem = registry::ou_game_1d();
    let config = SolverConfig::default();
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided)?;
    let dt = DiscreteGame::new(&problem, &grid)?.cfl_limit();

    let rvi = solve_rvi(&problem, &grid, &ValueField::constant(grid, 0.0), dt, 20.0, &config)?;
    let vd = vanishing_discount(&problem, &grid.with_boundary(BoundaryPolicy::DirichletZero), &default_alphas(), &config)?;
    println!("beta: rvi {:.6}, vanishing discount {:.6}", rvi.beta, vd.beta);

    println!("{:>6} {:>10} {:>22} {:>22}", "x", "phi*", "maximizer (-½, +½)", "minimizer (-½, +½)");
    for x in [-2.0, -1.0, -0.1, 0.0, 0.1, 1.0, 2.0] {
        let k = grid.find_node(&[x]).expect("grid node");
        let v1 = rvi.selectors.player1()[k].weights();
        let v2 = rvi.selectors.player2()[k].weights();
        println!(
            "{x:>6.2} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            rvi.phi_star.values()[k],
            v1[0],
            v1[1],
            v2[0],
            v2[1]
        );
    }
    Ok(())
}
