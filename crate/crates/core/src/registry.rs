//! Shipped benchmark problems.
//!
//! | name | dynamics | payoff | known answer |
//! |---|---|---|---|
//! | `ou1d` | `dX = −X dt + √2 dW` | `x²` | `β = 1`, `φ* = x²/2` |
//! | `ou-controlled-1d` | `dX = (−X + u) dt + √2 dW`, `u ∈ {±δ}` (maximizer) | `x²` | — |
//! | `ou-game-1d` | `dX = (−X + u₁ − u₂) dt + √2 dW`, `uᵢ ∈ {±½}` | `x² + 1 + 2u₁u₂` | — |
//! | `ou2d` | `dX = −X dt + σ dW`, `σσᵀ = [[2, a₀₁], [a₀₁, 2]]` | `‖x‖²` | `β = 2`, `φ* = ‖x‖²/2` |
//! | `risk-ou-1d` | `dX = −X dt + √2 dW` | `θx²` | `β = (1 − √(1 − 4θ))/2` |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::problem::{ControlSet, FlatnessCertificate, GameProblem, LyapunovCertificate, Player};
use crate::risk::RiskProblem;

const MODULE: &str = "cli_io";

fn sqrt2() -> Mat {
    Mat::from_rows(&[vec![2f64.sqrt()]])
}

fn one_plus_norm2(x: &[f64]) -> f64 {
    1.0 + x.iter().map(|v| v * v).sum::<f64>()
}

/// Uncontrolled Ornstein–Uhlenbeck process with payoff `x²`.
pub fn ou1d() -> GameProblem {
    GameProblem::new(
        1,
        ControlSet::trivial(Player::One),
        ControlSet::trivial(Player::Two),
        |x, _, _, out| out[0] = -x[0],
        |_| sqrt2(),
        |x, _, _| x[0] * x[0],
    )
    .expect("valid benchmark")
    // L V = −2x² + 2 = 4 − 2(1 + x²)
    .with_lyapunov(LyapunovCertificate::a3(one_plus_norm2, 4.0, 1.0, 1.0).expect("valid constants"))
    .with_name("ou1d")
}

/// OU process steered by a maximizer with controls `{−δ, δ}`.
pub fn ou_controlled_1d(delta: f64) -> GameProblem {
    GameProblem::new(
        1,
        ControlSet::scalar(&[-delta, delta], Player::One).expect("distinct controls"),
        ControlSet::trivial(Player::Two),
        |x, u, _, out| out[0] = -x[0] + u[0],
        |_| sqrt2(),
        |x, _, _| x[0] * x[0],
    )
    .expect("valid benchmark")
    // L V ≤ −2x² + 2δ|x| + 2 ≤ (3 + δ²) − (1 + x²)
    .with_lyapunov(LyapunovCertificate::a3(one_plus_norm2, 3.0 + delta * delta, 0.5, 1.0).expect("valid constants"))
    .with_name("ou-controlled-1d")
}

/// Two-player OU game with a matching-pennies payoff component.
pub fn ou_game_1d() -> GameProblem {
    GameProblem::new(
        1,
        ControlSet::scalar(&[-0.5, 0.5], Player::One).expect("distinct controls"),
        ControlSet::scalar(&[-0.5, 0.5], Player::Two).expect("distinct controls"),
        |x, u1, u2, out| out[0] = -x[0] + u1[0] - u2[0],
        |_| sqrt2(),
        |x, u1, u2| x[0] * x[0] + 1.0 + 2.0 * u1[0] * u2[0],
    )
    .expect("valid benchmark")
    // L V ≤ −2x² + 2|x| + 2 ≤ 4 − (1 + x²);  h̄ ≤ x² + 3/2 ≤ 1.5 V
    .with_lyapunov(LyapunovCertificate::a3(one_plus_norm2, 4.0, 0.5, 1.5).expect("valid constants"))
    .with_name("ou-game-1d")
}

/// Two-dimensional OU process with correlated noise.
///
/// `|a01| ≤ 2` is needed for a positive-definite diffusion; the grid scheme
/// additionally needs diagonal dominance, which holds for the same range.
pub fn ou2d(a01: f64) -> GameProblem {
    let a = Mat::from_rows(&[vec![2.0, a01], vec![a01, 2.0]]);
    let sigma = a.cholesky().unwrap_or_else(|| Mat::identity(2));
    GameProblem::new(
        2,
        ControlSet::trivial(Player::One),
        ControlSet::trivial(Player::Two),
        |x, _, _, out| {
            out[0] = -x[0];
            out[1] = -x[1];
        },
        move |_| sigma.clone(),
        |x, _, _| x[0] * x[0] + x[1] * x[1],
    )
    .expect("valid benchmark")
    // L V = −2‖x‖² + tr a = 6 − 2(1 + ‖x‖²)
    .with_lyapunov(LyapunovCertificate::a3(one_plus_norm2, 6.0, 1.0, 1.0).expect("valid constants"))
    .with_name("ou2d")
}

/// Risk-sensitive OU with payoff `θx²`, certified on `[−radius, radius]`.
///
/// The flatness certificate uses `Q = 1` and `c = 1/4`: the contraction
/// `2(b(x) − b(y))(x − y) = −2(x − y)²` leaves ample room, and the small `c`
/// makes the adversary ball `R_w = Lip(h)/c = 8θ·radius` large enough that
/// it does not bind on the computational box.
pub fn risk_ou_1d(theta: f64, radius: f64) -> RiskProblem {
    let lip_h = 2.0 * theta.abs() * radius;
    let cert = FlatnessCertificate::new(Mat::identity(1), 0.25, lip_h, 0.0, 2.0).expect("valid certificate");
    RiskProblem::new(
        1,
        ControlSet::trivial(Player::Two),
        |x, _, out| out[0] = -x[0],
        |_| sqrt2(),
        move |x, _| theta * x[0] * x[0],
        cert,
    )
    .expect("valid benchmark")
    .with_name("risk-ou-1d")
}

/// A benchmark as built for the command line.
#[derive(Debug, Clone)]
pub enum Benchmark {
    Game(GameProblem),
    Risk(RiskProblem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub dim: usize,
    /// Tunable coefficients and their defaults.
    pub coefficients: Vec<(&'static str, f64)>,
    pub description: &'static str,
}

pub fn list() -> Vec<BenchmarkInfo> {
    vec![
        BenchmarkInfo {
            name: "ou1d",
            kind: "game",
            dim: 1,
            coefficients: vec![("payoff_shift", 0.0)],
            description: "uncontrolled OU, payoff x²; β = 1, φ* = x²/2",
        },
        BenchmarkInfo {
            name: "ou-controlled-1d",
            kind: "game",
            dim: 1,
            coefficients: vec![("delta", 0.5), ("payoff_shift", 0.0)],
            description: "OU steered by a maximizer with controls ±δ, payoff x²",
        },
        BenchmarkInfo {
            name: "ou-game-1d",
            kind: "game",
            dim: 1,
            coefficients: vec![("payoff_shift", 0.0)],
            description: "two-player OU game, drift −x + u₁ − u₂, payoff x² + 1 + 2u₁u₂",
        },
        BenchmarkInfo {
            name: "ou2d",
            kind: "game",
            dim: 2,
            coefficients: vec![("a01", 0.5), ("payoff_shift", 0.0)],
            description: "2D OU with correlated noise, payoff ‖x‖²; β = 2, φ* = ‖x‖²/2",
        },
        BenchmarkInfo {
            name: "risk-ou-1d",
            kind: "risk",
            dim: 1,
            coefficients: vec![("theta", 0.1875), ("payoff_shift", 0.0)],
            description: "risk-sensitive OU, payoff θx²; β = (1 − √(1 − 4θ))/2",
        },
    ]
}

/// Builds a benchmark by name. Unknown coefficient names are rejected.
/// `radius` is the computational box, used where certificates depend on it.
pub fn build(name: &str, coefficients: &BTreeMap<String, f64>, radius: f64) -> Result<Benchmark> {
    let info = list()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::invalid(MODULE, format!("unknown problem '{name}' (see list-problems)")))?;
    for key in coefficients.keys() {
        if !info.coefficients.iter().any(|(k, _)| k == key) {
            return Err(Error::invalid(MODULE, format!("problem '{name}' has no coefficient '{key}'")));
        }
    }
    let get = |key: &str| {
        coefficients.get(key).copied().unwrap_or_else(|| {
            info.coefficients
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        })
    };
    let shift = get("payoff_shift");
    if !(shift >= 0.0) {
        return Err(Error::invalid(MODULE, "payoff_shift must be nonnegative"));
    }
    let game = |p: GameProblem| {
        Benchmark::Game(if shift != 0.0 { p.with_payoff_shift(shift) } else { p })
    };
    Ok(match name {
        "ou1d" => game(ou1d()),
        "ou-controlled-1d" => game(ou_controlled_1d(get("delta"))),
        "ou-game-1d" => game(ou_game_1d()),
        "ou2d" => {
            let a01 = get("a01");
            if a01.abs() > 2.0 {
                return Err(Error::invalid(MODULE, "ou2d needs |a01| ≤ 2"));
            }
            game(ou2d(a01))
        }
        "risk-ou-1d" => {
            let theta = get("theta");
            if !(theta > 0.0 && theta < 0.25) {
                return Err(Error::invalid(MODULE, "risk-ou-1d needs 0 < θ < 1/4"));
            }
            let p = risk_ou_1d(theta, radius);
            Benchmark::Risk(if shift != 0.0 { p.with_payoff_shift(shift) } else { p })
        }
        _ => unreachable!("names come from list()"),
    })
}
