//! Finite zero-sum matrix games over mixed strategies.
//!
//! The row player maximizes and the column player minimizes. Every grid node
//! of the Isaacs solvers reduces to one of these games: relaxing the controls
//! to probability vectors makes the payoff bilinear, so von Neumann's minimax
//! theorem applies and the value is computed exactly by linear programming.
//!
//! The LP is the classical one: shift the matrix so every entry is at least
//! one, then
//!
//! ```text
//! maximize  Σ y    subject to  M y ≤ 1,  y ≥ 0
//! ```
//!
//! whose optimum is `1 / value(M)`. The optimal `y` rescaled gives the
//! minimizer's strategy and the dual prices give the maximizer's strategy.
//! A dense tableau simplex with Bland's rule keeps pivoting deterministic, so
//! selectors extracted on a grid are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

const MODULE: &str = "matrix_game";
const SIMPLEX_EPS: f64 = 1e-12;

/// Probability vector over one player's finite control set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    weights: Vec<f64>,
}

impl MixedStrategy {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid(MODULE, "empty mixed strategy"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                MODULE,
                format!("mixed strategy has negative or non-finite weights: {weights:?}"),
            ));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::invalid(
                MODULE,
                format!("mixed strategy weights sum to {s}, not 1"),
            ));
        }
        Ok(Self { weights })
    }

    /// Clips tiny negative round-off and renormalizes. Used on solver output.
    pub(crate) fn normalized(mut weights: Vec<f64>) -> Self {
        for w in &mut weights {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let s: f64 = weights.iter().sum();
        if s > 0.0 {
            for w in &mut weights {
                *w /= s;
            }
        } else {
            let n = weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = 1.0 / n);
        }
        Self { weights }
    }

    pub fn pure(len: usize, index: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[index] = 1.0;
        Self { weights }
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_pure(&self) -> bool {
        self.weights.iter().filter(|&&w| w > 0.0).count() == 1
    }

    /// Convex combination `λ self + (1 − λ) other`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.len() != other.len() || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(MODULE, "incompatible strategy mixture"));
        }
        Ok(Self::normalized(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect(),
        ))
    }
}

/// Solution of a matrix game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub value: f64,
    /// Maximizing (row) player.
    pub v1: MixedStrategy,
    /// Minimizing (column) player.
    pub v2: MixedStrategy,
    /// Residual duality gap of the returned strategy pair.
    pub gap: f64,
}

impl GameSolution {
    /// Guaranteed payoff interval `[min_j (v1ᵀG)_j, max_i (G v2)_i]`.
    pub fn bounds(&self, g: &Mat) -> (f64, f64) {
        let lower = g
            .vec_mul(self.v1.weights())
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let upper = g
            .mul_vec(self.v2.weights())
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower, upper)
    }
}

fn validate(g: &Mat) -> Result<()> {
    if g.rows() == 0 || g.cols() == 0 {
        return Err(Error::invalid(MODULE, "payoff matrix must be at least 1x1"));
    }
    if let Some(bad) = g.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(
            MODULE,
            format!("payoff matrix has a non-finite entry ({bad})"),
        ));
    }
    Ok(())
}

/// Pure-strategy saddle point, if one exists: `(row, col)` with
/// `max_i min_j G = min_j max_i G`.
pub fn pure_saddle(g: &Mat) -> Option<(usize, usize)> {
    let (m, n) = (g.rows(), g.cols());
    let mut best_row = 0;
    let mut maxmin = f64::NEG_INFINITY;
    for i in 0..m {
        let row_min = g.row(i).iter().copied().fold(f64::INFINITY, f64::min);
        if row_min > maxmin {
            maxmin = row_min;
            best_row = i;
        }
    }
    let mut best_col = 0;
    let mut minmax = f64::INFINITY;
    for j in 0..n {
        let col_max = (0..m).map(|i| g[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        if col_max < minmax {
            minmax = col_max;
            best_col = j;
        }
    }
    (maxmin == minmax).then_some((best_row, best_col))
}

/// Exact value and optimal mixed strategies of the zero-sum game `g`
/// (rows maximize, columns minimize).
pub fn solve_matrix_game(g: &Mat) -> Result<GameSolution> {
    validate(g)?;
    let (m, n) = (g.rows(), g.cols());

    if let Some((i, j)) = pure_saddle(g) {
        return Ok(GameSolution {
            value: g[(i, j)],
            v1: MixedStrategy::pure(m, i),
            v2: MixedStrategy::pure(n, j),
            gap: 0.0,
        });
    }

    let shift = 1.0 - g.min();
    let (y, x) = simplex_value_lp(&g.map(|v| v + shift));
    let sum_y: f64 = y.iter().sum();
    let v1 = MixedStrategy::normalized(x);
    let v2 = MixedStrategy::normalized(y);
    let raw_value = 1.0 / sum_y - shift;

    let mut sol = GameSolution {
        value: raw_value.clamp(g.min(), g.max()),
        v1,
        v2,
        gap: 0.0,
    };
    let (lower, upper) = sol.bounds(g);
    sol.gap = (upper - sol.value).max(sol.value - lower).max(0.0);
    Ok(sol)
}

/// Game value only; avoids building strategies when the caller does not need
/// them.
pub(crate) fn game_value(g: &Mat) -> Result<f64> {
    if g.rows() == 1 && g.cols() == 1 {
        let v = g[(0, 0)];
        if !v.is_finite() {
            return Err(Error::invalid(MODULE, "non-finite 1x1 game"));
        }
        return Ok(v);
    }
    Ok(solve_matrix_game(g)?.value)
}

/// Solves `max Σy s.t. M y ≤ 1, y ≥ 0` for a strictly positive `M`.
/// Returns the primal `y` and the dual prices `x` (one per row of `M`).
fn simplex_value_lp(mat: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (mat.rows(), mat.cols());
    let width = n + m + 1; // structural, slack, rhs
    let rhs = n + m;
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        for j in 0..n {
            t[i * width + j] = mat[(i, j)];
        }
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = 1.0;
    }
    // Objective row holds reduced costs `c_j − z_j`; maximize while any is positive.
    let obj = m * width;
    for j in 0..n {
        t[obj + j] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Bland's rule terminates; the bound is a guard against NaN input slipping through.
    let max_pivots = 50 * (m + n + 10) * (m + n + 10);
    for _ in 0..max_pivots {
        let Some(enter) = (0..n + m).find(|&j| t[obj + j] > SIMPLEX_EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..m {
            let a = t[r * width + enter];
            if a > SIMPLEX_EPS {
                let ratio = t[r * width + rhs] / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - SIMPLEX_EPS
                            || (ratio <= best_ratio + SIMPLEX_EPS && basis[r] < basis[l])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        // With M > 0 every column has a positive entry, so the LP is bounded.
        let Some(pr) = leave else { break };
        let piv = t[pr * width + enter];
        for c in 0..width {
            t[pr * width + c] /= piv;
        }
        for r in 0..=m {
            if r == pr {
                continue;
            }
            let factor = t[r * width + enter];
            if factor != 0.0 {
                for c in 0..width {
                    t[r * width + c] -= factor * t[pr * width + c];
                }
            }
        }
        basis[pr] = enter;
    }

    let mut y = vec![0.0; n];
    for (r, &b) in basis.iter().enumerate() {
        if b < n {
            y[b] = t[r * width + rhs];
        }
    }
    let x = (0..m).map(|i| -t[obj + n + i]).collect();
    (y, x)
}

/// Brown–Robinson fictitious play, used as an independent cross-check of the
/// LP solver. Each round both players best-respond to the opponent's
/// empirical mixture; the value estimate is the midpoint of the resulting
/// upper and lower bounds, and `gap` is their width.
pub fn fictitious_play(g: &Mat, iters: usize) -> Result<GameSolution> {
    fictitious_play_until(g, iters, 0.0)
}

/// Fictitious play that stops early once the certified bound width drops to
/// `target_gap` (checked every 256 rounds).
pub fn fictitious_play_until(g: &Mat, max_iters: usize, target_gap: f64) -> Result<GameSolution> {
    validate(g)?;
    if max_iters == 0 {
        return Err(Error::invalid(MODULE, "fictitious play needs at least one iteration"));
    }
    let (m, n) = (g.rows(), g.cols());
    let mut row_counts = vec![0u64; m];
    let mut col_counts = vec![0u64; n];
    // Cumulative payoff of each pure row against the column player's history, and vice versa.
    let mut row_payoff = vec![0.0; m];
    let mut col_payoff = vec![0.0; n];

    let argmax = |v: &[f64]| {
        let mut b = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[b] {
                b = i;
            }
        }
        b
    };
    let argmin = |v: &[f64]| {
        let mut b = 0;
        for (i, &x) in v.iter().enumerate() {
            if x < v[b] {
                b = i;
            }
        }
        b
    };

    let mut i_play = 0usize;
    let mut j_play = 0usize;
    let mut t = 0usize;
    let bounds = |row_payoff: &[f64], col_payoff: &[f64], t: usize| {
        let tf = t as f64;
        let upper = row_payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tf;
        let lower = col_payoff.iter().copied().fold(f64::INFINITY, f64::min) / tf;
        (lower, upper)
    };
    while t < max_iters {
        row_counts[i_play] += 1;
        col_counts[j_play] += 1;
        for (r, p) in row_payoff.iter_mut().enumerate() {
            *p += g[(r, j_play)];
        }
        for (c, p) in col_payoff.iter_mut().enumerate() {
            *p += g[(i_play, c)];
        }
        t += 1;
        i_play = argmax(&row_payoff);
        j_play = argmin(&col_payoff);
        if target_gap > 0.0 && t.is_multiple_of(256) {
            let (lo, hi) = bounds(&row_payoff, &col_payoff, t);
            if hi - lo <= target_gap {
                break;
            }
        }
    }
    let (lower, upper) = bounds(&row_payoff, &col_payoff, t);
    let tf = t as f64;
    Ok(GameSolution {
        value: 0.5 * (lower + upper),
        v1: MixedStrategy::normalized(row_counts.iter().map(|&c| c as f64 / tf).collect()),
        v2: MixedStrategy::normalized(col_counts.iter().map(|&c| c as f64 / tf).collect()),
        gap: (upper - lower).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force value of a 2×2 game by scanning the row player's simplex.
    fn brute_force_2x2(g: &Mat, steps: usize) -> f64 {
        (0..=steps)
            .map(|k| {
                let p = k as f64 / steps as f64;
                (0..2)
                    .map(|j| p * g[(0, j)] + (1.0 - p) * g[(1, j)])
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn one_by_one() {
        let g = Mat::from_rows(&[vec![4.5]]);
        let s = solve_matrix_game(&g).unwrap();
        assert_eq!(s.value, 4.5);
        assert_eq!(s.v1.weights(), &[1.0]);
        assert_eq!(s.v2.weights(), &[1.0]);
        let fp = fictitious_play(&g, 1).unwrap();
        assert_eq!(fp.value, 4.5);
    }

    #[test]
    fn matching_pennies() {
        let g = Mat::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let s = solve_matrix_game(&g).unwrap();
        assert!(s.value.abs() < 1e-12);
        for w in s.v1.weights().iter().chain(s.v2.weights()) {
            assert!((w - 0.5).abs() < 1e-12);
        }
        let fp = fictitious_play(&g, 100_000).unwrap();
        assert!(fp.value.abs() < 1e-2);
    }

    #[test]
    fn worked_two_by_two() {
        let g = Mat::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]);
        let oracle = brute_force_2x2(&g, 100_000);
        assert!((oracle - 1.5).abs() < 1e-4);
        let s = solve_matrix_game(&g).unwrap();
        assert!((s.value - 1.5).abs() < 1e-12);
        assert!((s.v1.weights()[0] - 0.5).abs() < 1e-12);
        assert!((s.v2.weights()[0] - 0.25).abs() < 1e-12);
        assert!((s.v2.weights()[1] - 0.75).abs() < 1e-12);
        assert!(s.gap < 1e-12);
        let fp = fictitious_play(&g, 1_000_000).unwrap();
        assert!((fp.value - 1.5).abs() < 1e-2);
    }

    #[test]
    fn pure_saddle_is_detected() {
        let g = Mat::from_rows(&[vec![2.0, 3.0], vec![1.0, 0.0]]);
        assert_eq!(pure_saddle(&g), Some((0, 0)));
        let s = solve_matrix_game(&g).unwrap();
        assert_eq!(s.value, 2.0);
        assert!(s.v1.is_pure() && s.v2.is_pure());
    }

    #[test]
    fn non_finite_rejected() {
        let g = Mat::from_rows(&[vec![1.0, f64::NAN]]);
        assert!(matches!(
            solve_matrix_game(&g),
            Err(Error::InvalidInput { .. })
        ));
        assert!(fictitious_play(&Mat::from_rows(&[vec![1.0]]), 0).is_err());
    }

    #[test]
    fn mixed_strategy_validation() {
        assert!(MixedStrategy::new(vec![0.5, 0.5]).is_ok());
        assert!(MixedStrategy::new(vec![0.6, 0.5]).is_err());
        assert!(MixedStrategy::new(vec![-0.1, 1.1]).is_err());
        assert!(MixedStrategy::new(vec![]).is_err());
    }

    #[test]
    fn rock_paper_scissors_variant() {
        // Known value 1/12 for this asymmetric rock-paper-scissors variant.
        let g = Mat::from_rows(&[
            vec![0.0, 2.0, -1.0],
            vec![-1.0, 0.0, 1.0],
            vec![1.0, -1.0, 0.0],
        ]);
        let s = solve_matrix_game(&g).unwrap();
        assert!((s.value - 1.0 / 12.0).abs() < 1e-12);
        assert!(s.gap < 1e-12);
    }
}
