//! Monte Carlo validation by Euler–Maruyama simulation under stationary
//! Markov strategy fields.
//!
//! Path `p` draws its noise from the ChaCha8 stream `p` of the configured
//! seed, so results are bitwise reproducible and independent of the number
//! of worker threads. Per-path results are reduced in path order with
//! pairwise summation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::ergodic::{DiagnosticReport, DiagnosticRow, StrategyField};
use crate::error::{Error, Result};
use crate::grid::ValueField;
use crate::linalg::{norm2, pairwise_sum};
use crate::problem::GameProblem;

const MODULE: &str = "sim_mc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw a pure control from each player's mixed strategy at every step.
    #[default]
    SamplePure,
    /// Average drift and payoff under the mixed strategies.
    MeanDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    /// Fraction of the horizon discarded before averaging.
    pub burn_in: f64,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Number of batches for the batch-means confidence interval.
    pub batches: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 100.0,
            n_paths: 64,
            burn_in: 0.1,
            seed: 0,
            mode: SamplingMode::SamplePure,
            batches: 30,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(MODULE, "dt must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(MODULE, "horizon must be positive"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid(MODULE, "burn_in must lie in [0, 1)"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid(MODULE, "need at least one path"));
        }
        if self.batches < 2 {
            return Err(Error::invalid(MODULE, "need at least two batches"));
        }
        if self.steps() == 0 {
            return Err(Error::invalid(MODULE, "horizon is shorter than one step"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in * self.steps() as f64).floor() as usize
    }
}

/// Mean with a 95% batch-means confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub n_effective: usize,
}

impl PayoffEstimate {
    /// Whether `value` lies within `max(half_width, rel · |value|)` of the mean.
    pub fn agrees_with(&self, value: f64, rel: f64) -> bool {
        (self.mean - value).abs() <= self.half_width.max(rel * value.abs())
    }
}

/// Batch means over consecutive groups of `samples`.
fn batch_means(samples: &[f64], batches: usize) -> PayoffEstimate {
    let n = samples.len();
    let mean = pairwise_sum(samples) / n as f64;
    let b = batches.min(n);
    if b < 2 {
        return PayoffEstimate {
            mean,
            half_width: f64::INFINITY,
            n_effective: n,
        };
    }
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let chunk = &samples[k * n / b..(k + 1) * n / b];
            pairwise_sum(chunk) / chunk.len() as f64
        })
        .collect();
    let half_width = if means.iter().all(|m| *m == means[0]) {
        0.0
    } else {
        let grand = pairwise_sum(&means) / b as f64;
        let dev: Vec<f64> = means.iter().map(|m| (m - grand) * (m - grand)).collect();
        let var = pairwise_sum(&dev) / (b - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        t * (var / b as f64).sqrt()
    };
    PayoffEstimate {
        mean,
        half_width,
        n_effective: n,
    }
}

/// Resolved controls for one step.
struct StepInput {
    drift: Vec<f64>,
    payoff: f64,
}

struct PathSim<'a> {
    problem: &'a GameProblem,
    strategies: &'a StrategyField,
    config: &'a SimConfig,
    radius: f64,
}

impl PathSim<'_> {
    fn new<'a>(problem: &'a GameProblem, strategies: &'a StrategyField, config: &'a SimConfig) -> Result<PathSim<'a>> {
        config.validate()?;
        let grid = strategies.grid();
        if grid.dim() != problem.dim() {
            return Err(Error::invalid(MODULE, "strategy grid and problem dimensions differ"));
        }
        if strategies.player1()[0].len() != problem.u1().len() || strategies.player2()[0].len() != problem.u2().len() {
            return Err(Error::invalid(MODULE, "strategy sizes do not match the control sets"));
        }
        Ok(PathSim {
            problem,
            strategies,
            config,
            radius: grid.radius(),
        })
    }

    fn check_start(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.problem.dim() || x0.iter().any(|v| !(v.abs() <= self.radius)) {
            return Err(Error::invalid(MODULE, format!("x0 = {x0:?} is outside the grid box")));
        }
        Ok(())
    }

    fn controls(&self, x: &[f64], w1: &mut [f64], w2: &mut [f64], rng: &mut ChaCha8Rng) -> StepInput {
        self.strategies.interpolate_into(x, w1, w2);
        let (u1, u2) = (self.problem.u1().points(), self.problem.u2().points());
        match self.config.mode {
            SamplingMode::SamplePure => {
                let i = sample_index(w1, rng);
                let j = sample_index(w2, rng);
                StepInput {
                    drift: self.problem.drift(x, &u1[i], &u2[j]),
                    payoff: self.problem.payoff(x, &u1[i], &u2[j]),
                }
            }
            SamplingMode::MeanDrift => {
                let mut drift = vec![0.0; x.len()];
                let mut payoff = 0.0;
                let mut tmp = vec![0.0; x.len()];
                for (i, &p) in w1.iter().enumerate() {
                    for (j, &q) in w2.iter().enumerate() {
                        let pq = p * q;
                        if pq == 0.0 {
                            continue;
                        }
                        self.problem.drift_into(x, &u1[i], &u2[j], &mut tmp);
                        for (d, t) in drift.iter_mut().zip(&tmp) {
                            *d += pq * t;
                        }
                        payoff += pq * self.problem.payoff(x, &u1[i], &u2[j]);
                    }
                }
                StepInput { drift, payoff }
            }
        }
    }

    /// Runs path `path` from `x0` for at most `steps` steps. `visit` sees
    /// `(step, x_before, x_after, payoff_at_x_before)` and may stop the path
    /// by returning `false`. Returns the number of box projections.
    fn run(
        &self,
        path: usize,
        x0: &[f64],
        steps: usize,
        mut visit: impl FnMut(usize, &[f64], &[f64], f64) -> bool,
    ) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(path as u64);
        let d = x0.len();
        let (n1, n2) = (self.problem.u1().len(), self.problem.u2().len());
        let (mut w1, mut w2) = (vec![0.0; n1], vec![0.0; n2]);
        let mut x = x0.to_vec();
        let mut next = vec![0.0; d];
        let sqdt = self.config.dt.sqrt();
        let mut projections = 0;
        for k in 0..steps {
            let input = self.controls(&x, &mut w1, &mut w2, &mut rng);
            let sigma = self.problem.sigma(&x);
            let dw: Vec<f64> = (0..sigma.cols()).map(|_| rng.sample::<f64, _>(StandardNormal) * sqdt).collect();
            let noise = sigma.mul_vec(&dw);
            let mut projected = false;
            for a in 0..d {
                next[a] = x[a] + input.drift[a] * self.config.dt + noise[a];
                if next[a].abs() > self.radius {
                    next[a] = next[a].clamp(-self.radius, self.radius);
                    projected = true;
                }
            }
            projections += projected as usize;
            let go_on = visit(k, &x, &next, input.payoff);
            std::mem::swap(&mut x, &mut next);
            if !go_on {
                break;
            }
        }
        projections
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Round-off: the weights sum to slightly less than one.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Aggregate output of [`simulate_paths`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsembleSummary {
    /// Trace times (every `trace_stride` steps, including 0 and the horizon).
    pub times: Vec<f64>,
    /// `E‖X(t)‖²` across paths.
    pub mean_sq_norm: Vec<f64>,
    /// Ensemble mean of `(1/t) ∫₀ᵗ h̄ ds`.
    pub running_average: Vec<f64>,
    /// `∫₀ᵀ h̄ dt` per path.
    pub payoff_integrals: Vec<f64>,
    pub final_states: Vec<Vec<f64>>,
    /// Number of steps at which a path was projected back into the box.
    pub projections: usize,
    pub paths_projected: usize,
}

impl PathEnsembleSummary {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("time,mean_sq_norm,running_average\n");
        for k in 0..self.times.len() {
            let _ = writeln!(s, "{},{},{}", self.times[k], self.mean_sq_norm[k], self.running_average[k]);
        }
        s
    }
}

struct PathTrace {
    sq_norm: Vec<f64>,
    running: Vec<f64>,
    integral: f64,
    final_state: Vec<f64>,
    projections: usize,
}

/// Simulates `n_paths` Euler–Maruyama paths from `x0` under `strategies`.
pub fn simulate_paths(
    problem: &GameProblem,
    strategies: &StrategyField,
    config: &SimConfig,
    x0: &[f64],
) -> Result<PathEnsembleSummary> {
    let sim = PathSim::new(problem, strategies, config)?;
    sim.check_start(x0)?;
    let steps = config.steps();
    let stride = steps.div_ceil(200).max(1);
    let mut trace_steps: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *trace_steps.last().expect("nonempty") != steps {
        trace_steps.push(steps);
    }
    let dt = config.dt;
    let traces: Vec<PathTrace> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut sq_norm = vec![x0.iter().map(|v| v * v).sum::<f64>()];
            let mut running = vec![0.0];
            let mut integral = 0.0;
            let mut final_state = x0.to_vec();
            let mut cursor = 1;
            let projections = sim.run(p, x0, steps, |k, _, x, h| {
                integral += h * dt;
                if cursor < trace_steps.len() && trace_steps[cursor] == k + 1 {
                    sq_norm.push(x.iter().map(|v| v * v).sum());
                    running.push(integral / ((k + 1) as f64 * dt));
                    cursor += 1;
                }
                if k + 1 == steps {
                    final_state = x.to_vec();
                }
                true
            });
            // Running average at t = 0 is the payoff rate at x0, by convention 0.
            PathTrace {
                sq_norm,
                running,
                integral,
                final_state,
                projections,
            }
        })
        .collect();
    let reduce = |f: &dyn Fn(&PathTrace) -> f64| {
        let v: Vec<f64> = traces.iter().map(f).collect();
        pairwise_sum(&v) / v.len() as f64
    };
    let mean_sq_norm = (0..trace_steps.len()).map(|k| reduce(&|t| t.sq_norm[k])).collect();
    let running_average = (0..trace_steps.len()).map(|k| reduce(&|t| t.running[k])).collect();
    Ok(PathEnsembleSummary {
        times: trace_steps.iter().map(|&k| k as f64 * dt).collect(),
        mean_sq_norm,
        running_average,
        payoff_integrals: traces.iter().map(|t| t.integral).collect(),
        final_states: traces.iter().map(|t| t.final_state.clone()).collect(),
        projections: traces.iter().map(|t| t.projections).sum(),
        paths_projected: traces.iter().filter(|t| t.projections > 0).count(),
    })
}

/// Long-run average payoff after burn-in, with a batch-means interval:
/// batches group whole paths when there are at least two paths, and
/// consecutive time windows of the single path otherwise.
pub fn estimate_beta(
    problem: &GameProblem,
    strategies: &StrategyField,
    config: &SimConfig,
    x0: &[f64],
) -> Result<PayoffEstimate> {
    let sim = PathSim::new(problem, strategies, config)?;
    sim.check_start(x0)?;
    let steps = config.steps();
    let burn = config.burn_steps();
    if config.n_paths == 1 {
        let mut samples = Vec::with_capacity(steps - burn);
        sim.run(0, x0, steps, |k, _, _, h| {
            if k >= burn {
                samples.push(h);
            }
            true
        });
        return Ok(batch_means(&samples, config.batches));
    }
    let averages: Vec<f64> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut samples = Vec::with_capacity(steps - burn);
            sim.run(p, x0, steps, |k, _, _, h| {
                if k >= burn {
                    samples.push(h);
                }
                true
            });
            pairwise_sum(&samples) / samples.len() as f64
        })
        .collect();
    Ok(batch_means(&averages, config.batches))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    /// Over the paths that reached the small ball.
    pub estimate: PayoffEstimate,
    pub r_small: f64,
    pub failures: usize,
    pub failure_fraction: f64,
    /// More than 1% of the paths did not reach the ball within the horizon.
    pub flagged: bool,
    /// `φ*(x0)` interpolated from a grid solution, when supplied.
    pub grid_value: Option<f64>,
}

/// Estimates `E_x0 ∫₀^τ (h̄ − β) dt`, `τ` the first time the path meets the
/// closed ball of radius `r_small` (checked on each Euler segment, so
/// crossings between steps are caught). No bridge correction is applied.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bias(
    problem: &GameProblem,
    strategies: &StrategyField,
    config: &SimConfig,
    x0: &[f64],
    beta: f64,
    r_small: f64,
    phi_star: Option<&ValueField>,
) -> Result<BiasEstimate> {
    let sim = PathSim::new(problem, strategies, config)?;
    sim.check_start(x0)?;
    if !(r_small > 0.0) {
        return Err(Error::invalid(MODULE, "r_small must be positive"));
    }
    let grid_value = phi_star.map(|f| f.interpolate(x0));
    if norm2(x0) <= r_small {
        return Ok(BiasEstimate {
            estimate: PayoffEstimate {
                mean: 0.0,
                half_width: 0.0,
                n_effective: config.n_paths,
            },
            r_small,
            failures: 0,
            failure_fraction: 0.0,
            flagged: false,
            grid_value,
        });
    }
    let dt = config.dt;
    let results: Vec<Option<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut total = 0.0;
            let mut hit = false;
            sim.run(p, x0, config.steps(), |_, a, b, h| {
                total += (h - beta) * dt;
                hit = segment_meets_ball(a, b, r_small);
                !hit
            });
            hit.then_some(total)
        })
        .collect();
    let hits: Vec<f64> = results.iter().flatten().copied().collect();
    let failures = results.len() - hits.len();
    let failure_fraction = failures as f64 / results.len() as f64;
    let estimate = if hits.is_empty() {
        PayoffEstimate {
            mean: f64::NAN,
            half_width: f64::INFINITY,
            n_effective: 0,
        }
    } else {
        batch_means(&hits, config.batches)
    };
    Ok(BiasEstimate {
        estimate,
        r_small,
        failures,
        failure_fraction,
        flagged: failure_fraction > 0.01,
        grid_value,
    })
}

/// Distance from the origin to the segment `[a, b]` is at most `r`.
fn segment_meets_ball(a: &[f64], b: &[f64], r: f64) -> bool {
    let d: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
    let dd: f64 = d.iter().map(|v| v * v).sum();
    let s = if dd == 0.0 {
        0.0
    } else {
        (-a.iter().zip(&d).map(|(a, d)| a * d).sum::<f64>() / dd).clamp(0.0, 1.0)
    };
    let closest: Vec<f64> = a.iter().zip(&d).map(|(a, d)| a + s * d).collect();
    norm2(&closest) <= r
}

/// Checks `E[V(X_t)] − CI ≤ k₀/(2k₁) + V(x0) e^{−2k₁t}` at `checkpoints`.
pub fn check_drift_bound(
    problem: &GameProblem,
    strategies: &StrategyField,
    config: &SimConfig,
    x0: &[f64],
    checkpoints: &[f64],
) -> Result<DiagnosticReport> {
    let cert = problem
        .lyapunov
        .as_ref()
        .ok_or_else(|| Error::config(MODULE, "the drift-bound check needs a Lyapunov certificate"))?;
    let sim = PathSim::new(problem, strategies, config)?;
    sim.check_start(x0)?;
    if checkpoints.iter().any(|&t| !(0.0..=config.horizon).contains(&t)) {
        return Err(Error::invalid(MODULE, "checkpoints must lie in [0, horizon]"));
    }
    let dt = config.dt;
    let check_steps: Vec<usize> = checkpoints.iter().map(|&t| (t / dt).round() as usize).collect();
    let last = check_steps.iter().copied().max().unwrap_or(0);
    let per_path: Vec<Vec<f64>> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut values = vec![0.0; check_steps.len()];
            for (c, &s) in check_steps.iter().enumerate() {
                if s == 0 {
                    values[c] = cert.v(x0);
                }
            }
            if last > 0 {
                sim.run(p, x0, last, |k, _, x, _| {
                    for (c, &s) in check_steps.iter().enumerate() {
                        if s == k + 1 {
                            values[c] = cert.v(x);
                        }
                    }
                    true
                });
            }
            values
        })
        .collect();
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| {
            let samples: Vec<f64> = per_path.iter().map(|v| v[c]).collect();
            let est = batch_means(&samples, config.batches);
            let half = if est.half_width.is_finite() { est.half_width } else { 0.0 };
            let bound = cert.moment_bound(x0, t);
            DiagnosticRow {
                label: "E[V(X_t)]".into(),
                time: t,
                lhs: est.mean,
                rhs: bound,
                passed: est.mean - half <= bound,
            }
        })
        .collect();
    Ok(DiagnosticReport::from_rows("drift_bound", rows))
}

/// Unilateral-deviation check of a saddle pair: each player in turn
/// switches to every constant pure control while the other keeps its field.
///
/// A row's `lhs` is the deviator's gain (increase of the average payoff for
/// player 1, decrease for player 2) and `rhs` the sum of both confidence
/// half-widths; the row passes when the gain stays within it. All estimates
/// share the seed, so they use common random numbers.
pub fn check_saddle(
    problem: &GameProblem,
    strategies: &StrategyField,
    config: &SimConfig,
    x0: &[f64],
) -> Result<DiagnosticReport> {
    let base = estimate_beta(problem, strategies, config, x0)?;
    let grid = *strategies.grid();
    let mut rows = Vec::new();
    for (player, n) in [(1, problem.u1().len()), (2, problem.u2().len())] {
        if n < 2 {
            continue;
        }
        for i in 0..n {
            let pure = vec![crate::matrix_game::MixedStrategy::pure(n, i); grid.len()];
            let deviated = if player == 1 {
                strategies.with_player1(pure)?
            } else {
                strategies.with_player2(pure)?
            };
            let est = estimate_beta(problem, &deviated, config, x0)?;
            let gain = if player == 1 { est.mean - base.mean } else { base.mean - est.mean };
            let band = base.half_width + est.half_width;
            rows.push(DiagnosticRow {
                label: format!("player{player} pure {i}"),
                time: config.horizon,
                lhs: gain,
                rhs: band,
                passed: gain <= band,
            });
        }
    }
    Ok(DiagnosticReport::from_rows("saddle_deviation", rows))
}
