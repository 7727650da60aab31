//! Marches value iteration and relative value iteration side by side and
//! checks the identities that tie them together.

use ergodic_games::ergodic::{check_coupling, SolverConfig};
use ergodic_games::grid::{BoundaryPolicy, Grid, ValueField};
use ergodic_games::registry;

fn main() -> ergodic_games::Result<()> {
    let problem = registry::ou1d();
    let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided)?;
    let checkpoints = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let report = check_coupling(
        &problem,
        &grid,
        &ValueField::constant(grid, 0.0),
        1.0,
        1e-4,
        5.0,
        &checkpoints,
        5e-3,
        &SolverConfig::default(),
    )?;
    println!("{:<8} {:>6} {:>12}", "identity", "t", "residual");
    for row in &report.rows {
        println!("{:<8} {:>6.2} {:>12.3e}", row.label, row.time, row.lhs);
    }
    println!("passed: {}", report.passed);
    Ok(())
}
