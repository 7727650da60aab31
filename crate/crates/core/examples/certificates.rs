//! Audits Lyapunov and flatness certificates on sample points, including a
//! deliberately wrong certificate.

use ergodic_games::problem::{check_flatness, check_lyapunov, CheckConfig, LyapunovCertificate};
use ergodic_games::registry;
use ergodic_games::risk::compute_adversary_ball;

fn main() -> ergodic_games::Result<()> {
    let points: Vec<Vec<f64>> = (0..=120).map(|k| vec![-6.0 + 0.1 * k as f64]).collect();
    let config = CheckConfig::default();

    let good = registry::ou_game_1d();
    let report = check_lyapunov(&good, &points, &config)?;
    println!("ou-game-1d: passed = {}", report.passed);
    for c in &report.conditions {
        println!("  {:<16} worst margin {:+.4e}", c.name, c.worst_margin);
    }

    // Claims a faster drift than the process has.
    let cert = LyapunovCertificate::a3(|x| 1.0 + x[0] * x[0], 4.0, 3.0, 1.0)?;
    let bad = registry::ou1d().with_lyapunov(cert);
    let report = check_lyapunov(&bad, &points, &config)?;
    println!("overstated certificate: passed = {}, {} violations", report.passed, report.violations.len());
    if let Some(v) = report.violations.first() {
        println!("  first: {} at {:?}, margin {:+.3}", v.condition, v.point, v.margin);
    }

    let risk = registry::risk_ou_1d(3.0 / 16.0, 6.0);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = points
        .iter()
        .step_by(6)
        .flat_map(|x| points.iter().step_by(7).map(move |y| (x.clone(), y.clone())))
        .collect();
    let report = check_flatness(&risk, &risk.flatness, &pairs, &config)?;
    let ball = compute_adversary_ball(&risk.flatness)?;
    println!("risk-ou-1d flatness: passed = {}, adversary radius {:.3}", report.passed, ball.radius);
    Ok(())
}
