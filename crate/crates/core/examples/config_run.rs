//! Drives the pipeline from a TOML configuration, writes the artifacts and
//! compares two runs, the way the command-line tool does.

use ergodic_games::io::{compare, run, RunConfig};

const CONFIG: &str = r#"
seed = 3

[problem]
name = "ou-controlled-1d"
coefficients = { delta = 0.5 }

[grid]
radius = 6.0
n = 241

[solver]
method = "rvi"
t_end = 20.0
"#;

fn main() -> ergodic_games::Result<()> {
    let dir = std::env::temp_dir().join("ergodic-games-example");
    let mut rvi = RunConfig::from_toml(CONFIG)?;
    rvi.output = Some(dir.join("rvi"));
    let outcome = run(&rvi);
    println!("[exit {}] {}", outcome.exit_code, outcome.message);
    for a in &outcome.artifacts {
        println!("  wrote {}", a.display());
    }

    let mut vd = rvi.clone();
    vd.solver.method = ergodic_games::io::MethodSelection::One("vanishing_discount".into());
    vd.output = Some(dir.join("vd"));
    let outcome = run(&vd);
    println!("[exit {}] {}", outcome.exit_code, outcome.message);

    let diff = compare(&dir.join("rvi"), &dir.join("vd"))?;
    println!(
        "|Δβ| = {:.3e}, max |Δφ| = {:.3e}, mean |Δφ| = {:.3e} over {} core nodes",
        diff.delta_beta, diff.max_abs_diff, diff.mean_abs_diff, diff.nodes
    );
    Ok(())
}
