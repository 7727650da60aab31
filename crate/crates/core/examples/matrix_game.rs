//! Solves a few zero-sum matrix games and compares the exact solver with
//! fictitious play.

use ergodic_games::linalg::Mat;
use ergodic_games::matrix_game::{fictitious_play, pure_saddle, solve_matrix_game};

fn main() -> ergodic_games::Result<()> {
    let games = [
        ("matching pennies", Mat::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]])),
        ("saddle point", Mat::from_rows(&[vec![3.0, 1.0, 4.0], vec![2.0, 0.0, 1.0]])),
        (
            "rock-paper-scissors",
            Mat::from_rows(&[vec![0.0, -1.0, 1.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]]),
        ),
    ];
    for (name, g) in &games {
        let exact = solve_matrix_game(g)?;
        let fp = fictitious_play(g, 20_000)?;
        let (lo, hi) = exact.bounds(g);
        println!("{name}");
        println!("  value {:.6}  bounds [{lo:.6}, {hi:.6}]  pure saddle {:?}", exact.value, pure_saddle(g));
        println!("  maximizer {:?}", exact.v1.weights());
        println!("  minimizer {:?}", exact.v2.weights());
        println!("  fictitious play value {:.4} (gap {:.2e})", fp.value, fp.gap);
    }
    Ok(())
}
