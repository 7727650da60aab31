//! Game instances and numerical audits of their standing assumptions.
//!
//! A [`GameProblem`] bundles the controlled dynamics
//! `dX = b̄(X, u₁, u₂) dt + σ(X) dW`, the running payoff `h̄ ≥ 0` and the two
//! finite control sets. Player 1 maximizes the long-run average payoff,
//! player 2 minimizes it. Optional certificates carry the constants of the
//! Lyapunov drift condition and the asymptotic flatness condition; the
//! `check_*` functions verify them on sample points. A pass is evidence on
//! the sampled set, not a proof over all of ℝᵈ.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::matrix_game::MixedStrategy;

const MODULE: &str = "problem";

pub type GameDriftFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type GamePayoffFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type SigmaFn = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Player {
    /// Maximizer.
    One,
    /// Minimizer.
    Two,
}

/// Finite discretization of one player's compact control space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
    player: Player,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>, player: Player) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid(MODULE, "control set must be nonempty"));
        }
        let width = points[0].len();
        if points.iter().any(|p| p.len() != width) {
            return Err(Error::invalid(MODULE, "control points have differing dimension"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(MODULE, format!("control point {i} is not finite")));
            }
            if points[..i].contains(p) {
                return Err(Error::invalid(
                    MODULE,
                    format!("control point {p:?} appears more than once"),
                ));
            }
        }
        Ok(Self { points, player })
    }

    /// Scalar controls, the common case.
    pub fn scalar(values: &[f64], player: Player) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), player)
    }

    /// The single control `0`, i.e. an inactive player.
    pub fn trivial(player: Player) -> Self {
        Self {
            points: vec![vec![0.0]],
            player,
        }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn player(&self) -> Player {
        self.player
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LyapunovMode {
    /// `L̄V ≤ k₀ − 2k₁V`, `max h̄ ≤ k₂V`.
    A3,
    /// `L̄V ≤ k₀ − g`, `max h̄ ≤ k₂g`, `max h̄ / g → 0` at infinity.
    A3Prime,
}

#[derive(Clone)]
pub struct LyapunovCertificate {
    v: ScalarFn,
    g: Option<ScalarFn>,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub mode: LyapunovMode,
}

impl LyapunovCertificate {
    pub fn a3(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        k0: f64,
        k1: f64,
        k2: f64,
    ) -> Result<Self> {
        Self::validate_constants(k0, k1, k2)?;
        Ok(Self {
            v: Arc::new(v),
            g: None,
            k0,
            k1,
            k2,
            mode: LyapunovMode::A3,
        })
    }

    pub fn a3_prime(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        k0: f64,
        k1: f64,
        k2: f64,
    ) -> Result<Self> {
        Self::validate_constants(k0, k1, k2)?;
        Ok(Self {
            v: Arc::new(v),
            g: Some(Arc::new(g)),
            k0,
            k1,
            k2,
            mode: LyapunovMode::A3Prime,
        })
    }

    fn validate_constants(k0: f64, k1: f64, k2: f64) -> Result<()> {
        if [k0, k1, k2].iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::invalid(
                MODULE,
                format!("Lyapunov constants must be positive, got ({k0}, {k1}, {k2})"),
            ));
        }
        Ok(())
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn g(&self, x: &[f64]) -> Option<f64> {
        self.g.as_ref().map(|g| g(x))
    }

    /// Same certificate with different constants.
    pub fn with_constants(&self, k0: f64, k1: f64, k2: f64) -> Result<Self> {
        Self::validate_constants(k0, k1, k2)?;
        Ok(Self {
            k0,
            k1,
            k2,
            ..self.clone()
        })
    }

    /// Moment bound `k₀/(2k₁) + V(x) e^{−2k₁ t}`.
    pub fn moment_bound(&self, x: &[f64], t: f64) -> f64 {
        self.k0 / (2.0 * self.k1) + self.v(x) * (-2.0 * self.k1 * t).exp()
    }
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("k0", &self.k0)
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

/// Constants of the asymptotic flatness hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessCertificate {
    pub q: Mat,
    pub c: f64,
    pub lip_h: f64,
    pub lip_ainv: f64,
    /// `‖σσᵀ‖∞`
    pub sigma_sup: f64,
}

impl FlatnessCertificate {
    pub fn new(q: Mat, c: f64, lip_h: f64, lip_ainv: f64, sigma_sup: f64) -> Result<Self> {
        if !q.is_symmetric(1e-12) || q.cholesky().is_none() {
            return Err(Error::invalid(MODULE, "flatness matrix Q must be symmetric positive definite"));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(MODULE, format!("flatness constant c must be positive, got {c}")));
        }
        if [lip_h, lip_ainv, sigma_sup].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(MODULE, "Lipschitz constants and ‖σσᵀ‖∞ must be nonnegative"));
        }
        Ok(Self {
            q,
            c,
            lip_h,
            lip_ainv,
            sigma_sup,
        })
    }

    /// Left side minus right side of `2‖σσᵀ‖²∞ Lip(h) Lip(a⁻¹) ≤ c²`.
    pub fn constant_condition_margin(&self) -> f64 {
        2.0 * self.sigma_sup * self.sigma_sup * self.lip_h * self.lip_ainv - self.c * self.c
    }
}

/// Anything with a state-dependent diffusion and finitely many drift choices.
/// Used by the flatness audit, which treats game control pairs and
/// single-controller actions alike.
pub trait ControlledDynamics {
    fn dim(&self) -> usize;
    fn control_count(&self) -> usize;
    fn drift_into(&self, x: &[f64], control: usize, out: &mut [f64]);
    fn sigma(&self, x: &[f64]) -> Mat;
}

/// A zero-sum ergodic stochastic differential game.
#[derive(Clone)]
pub struct GameProblem {
    dim: usize,
    drift: GameDriftFn,
    sigma: SigmaFn,
    payoff: GamePayoffFn,
    u1: ControlSet,
    u2: ControlSet,
    pub lyapunov: Option<LyapunovCertificate>,
    pub flatness: Option<FlatnessCertificate>,
    pub name: String,
}

impl fmt::Debug for GameProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("u1", &self.u1)
            .field("u2", &self.u2)
            .field("lyapunov", &self.lyapunov)
            .field("flatness", &self.flatness)
            .finish_non_exhaustive()
    }
}

impl GameProblem {
    pub fn new(
        dim: usize,
        u1: ControlSet,
        u2: ControlSet,
        drift: impl Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma: impl Fn(&[f64]) -> Mat + Send + Sync + 'static,
        payoff: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid(MODULE, "state dimension must be positive"));
        }
        if u1.player() != Player::One || u2.player() != Player::Two {
            return Err(Error::invalid(MODULE, "control sets must be labelled player 1 then player 2"));
        }
        Ok(Self {
            dim,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            payoff: Arc::new(payoff),
            u1,
            u2,
            lyapunov: None,
            flatness: None,
            name: String::from("custom"),
        })
    }

    pub fn with_lyapunov(mut self, cert: LyapunovCertificate) -> Self {
        self.lyapunov = Some(cert);
        self
    }

    pub fn with_flatness(mut self, cert: FlatnessCertificate) -> Self {
        self.flatness = Some(cert);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same problem with the payoff replaced by `h̄ + c`.
    pub fn with_payoff_shift(&self, c: f64) -> Self {
        let inner = self.payoff.clone();
        Self {
            payoff: Arc::new(move |x, u1, u2| inner(x, u1, u2) + c),
            ..self.clone()
        }
    }

    /// Same dynamics with a different payoff.
    pub fn with_payoff(
        &self,
        payoff: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            payoff: Arc::new(payoff),
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn u1(&self) -> &ControlSet {
        &self.u1
    }

    pub fn u2(&self) -> &ControlSet {
        &self.u2
    }

    pub fn drift_into(&self, x: &[f64], u1: &[f64], u2: &[f64], out: &mut [f64]) {
        (self.drift)(x, u1, u2, out)
    }

    pub fn drift(&self, x: &[f64], u1: &[f64], u2: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, u1, u2, &mut out);
        out
    }

    pub fn sigma(&self, x: &[f64]) -> Mat {
        (self.sigma)(x)
    }

    /// `a(x) = σ(x) σ(x)ᵀ`
    pub fn diffusion(&self, x: &[f64]) -> Mat {
        self.sigma(x).gram()
    }

    pub fn payoff(&self, x: &[f64], u1: &[f64], u2: &[f64]) -> f64 {
        (self.payoff)(x, u1, u2)
    }

    /// Payoff by control indices.
    pub fn payoff_at(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.payoff(x, &self.u1.points[i], &self.u2.points[j])
    }

    /// Checks `h̄ ≥ 0` and `σσᵀ ≻ 0` at every given point.
    pub fn validate_at<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        for x in points {
            if x.len() != self.dim {
                return Err(Error::invalid(MODULE, "sample point has wrong dimension"));
            }
            let a = self.diffusion(x);
            if a.rows() != self.dim || a.cols() != self.dim {
                return Err(Error::problem(MODULE, format!("σ(x) is not {0}x{0} at {x:?}", self.dim)));
            }
            if !a.is_spd() {
                return Err(Error::problem(
                    MODULE,
                    format!("σσᵀ is not positive definite at {x:?}"),
                ));
            }
            for i in 0..self.u1.len() {
                for j in 0..self.u2.len() {
                    let h = self.payoff_at(x, i, j);
                    if !(h >= 0.0) {
                        return Err(Error::problem(
                            MODULE,
                            format!("payoff {h} is negative or NaN at {x:?}, controls ({i}, {j})"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

impl ControlledDynamics for GameProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn control_count(&self) -> usize {
        self.u1.len() * self.u2.len()
    }

    fn drift_into(&self, x: &[f64], control: usize, out: &mut [f64]) {
        let (i, j) = (control / self.u2.len(), control % self.u2.len());
        GameProblem::drift_into(self, x, &self.u1.points[i], &self.u2.points[j], out)
    }

    fn sigma(&self, x: &[f64]) -> Mat {
        GameProblem::sigma(self, x)
    }
}

/// Relaxed running payoff `h(x, v₁, v₂) = Σᵢⱼ h̄(x, u₁ᵢ, u₂ⱼ) v₁ᵢ v₂ⱼ`.
pub fn relax_payoff(
    problem: &GameProblem,
    x: &[f64],
    v1: &MixedStrategy,
    v2: &MixedStrategy,
) -> Result<f64> {
    if v1.len() != problem.u1.len() || v2.len() != problem.u2.len() {
        return Err(Error::invalid(
            MODULE,
            format!(
                "strategy sizes ({}, {}) do not match control sets ({}, {})",
                v1.len(),
                v2.len(),
                problem.u1.len(),
                problem.u2.len()
            ),
        ));
    }
    let mut total = 0.0;
    for (i, &w1) in v1.weights().iter().enumerate() {
        if w1 == 0.0 {
            continue;
        }
        for (j, &w2) in v2.weights().iter().enumerate() {
            if w2 != 0.0 {
                total += w1 * w2 * problem.payoff_at(x, i, j);
            }
        }
    }
    Ok(total)
}

/// Tolerances for the certificate audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Finite-difference step is `fd_step · (1 + ‖x‖)`.
    pub fd_step: f64,
    /// Must cover the `O(ε_mach / fd_step²)` round-off of the finite-difference Hessian.
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Number of radial shells in the decay trend table.
    pub shells: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            abs_tol: 1e-6,
            rel_tol: 1e-6,
            shells: 5,
        }
    }
}

impl CheckConfig {
    fn tolerance(&self, lhs: f64, rhs: f64) -> f64 {
        self.abs_tol + self.rel_tol * lhs.abs().max(rhs.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub point: Vec<f64>,
    pub other_point: Option<Vec<f64>>,
    pub control: Option<usize>,
    /// Positive means violated by this much.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub name: String,
    /// Largest `lhs − rhs` seen; `≤ 0` (up to tolerance) means the condition holds.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellTrend {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
    /// `max over the shell of (max_u h̄) / g`
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub certificate: String,
    pub passed: bool,
    pub checked: usize,
    pub conditions: Vec<ConditionSummary>,
    /// First violations found (at most [`CertificateReport::MAX_LISTED`]).
    pub violations: Vec<Violation>,
    pub decay_trend: Vec<ShellTrend>,
    pub warnings: Vec<String>,
}

impl CertificateReport {
    pub const MAX_LISTED: usize = 50;

    fn new(certificate: &str, names: &[&str]) -> Self {
        Self {
            certificate: certificate.to_string(),
            passed: true,
            checked: 0,
            conditions: names
                .iter()
                .map(|n| ConditionSummary {
                    name: n.to_string(),
                    worst_margin: f64::NEG_INFINITY,
                    worst_point: Vec::new(),
                    violations: 0,
                })
                .collect(),
            violations: Vec::new(),
            decay_trend: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn record(
        &mut self,
        cond: usize,
        point: &[f64],
        other: Option<&[f64]>,
        control: Option<usize>,
        margin: f64,
        tol: f64,
    ) {
        let summary = &mut self.conditions[cond];
        if margin > summary.worst_margin || summary.worst_point.is_empty() {
            summary.worst_margin = margin;
            summary.worst_point = point.to_vec();
        }
        if !(margin <= tol) {
            summary.violations += 1;
            self.passed = false;
            if self.violations.len() < Self::MAX_LISTED {
                self.violations.push(Violation {
                    condition: summary.name.clone(),
                    point: point.to_vec(),
                    other_point: other.map(<[f64]>::to_vec),
                    control,
                    margin,
                });
            }
        }
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Gradient and Hessian of `f` at `x` by centered differences.
pub(crate) fn fd_derivatives(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> (Vec<f64>, Mat) {
    let d = x.len();
    let f0 = f(x);
    let mut grad = vec![0.0; d];
    let mut hess = Mat::zeros(d, d);
    let mut y = x.to_vec();
    for i in 0..d {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                y[i] = x[i] + si * h;
                y[j] = x[j] + sj * h;
                let v = f(&y);
                y[i] = x[i];
                y[j] = x[j];
                v
            };
            let mixed = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h * h);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    (grad, hess)
}

/// Audits the Lyapunov certificate of `problem` on `sample`.
///
/// For every sampled state and every pure control pair this checks
/// `L̄V ≤ k₀ − 2k₁V` (mode A3) or `L̄V ≤ k₀ − g` (mode A3′), together with
/// the payoff growth bound. In mode A3′ the report also carries the ratio
/// `max h̄ / g` per radial shell, since its decay at infinity can only be
/// observed as a trend on a bounded sample.
pub fn check_lyapunov(
    problem: &GameProblem,
    sample: &[Vec<f64>],
    config: &CheckConfig,
) -> Result<CertificateReport> {
    let cert = problem
        .lyapunov
        .as_ref()
        .ok_or_else(|| Error::config(MODULE, "problem has no Lyapunov certificate"))?;
    let (label, names): (&str, [&str; 3]) = match cert.mode {
        LyapunovMode::A3 => ("A3", ["drift", "payoff_growth", "V_at_least_one"]),
        LyapunovMode::A3Prime => ("A3prime", ["drift", "payoff_growth", "V_at_least_one"]),
    };
    let mut report = CertificateReport::new(label, &names);
    let mut ratios: Vec<(f64, f64)> = Vec::new();
    let mut g_below_one = 0usize;
    let v_fn = |y: &[f64]| cert.v(y);
    let mut drift = vec![0.0; problem.dim()];

    for x in sample {
        if x.len() != problem.dim() {
            return Err(Error::invalid(MODULE, "sample point has wrong dimension"));
        }
        report.checked += 1;
        let v = cert.v(x);
        report.record(2, x, None, None, 1.0 - v, config.abs_tol);

        let norm = crate::linalg::norm2(x);
        let h = config.fd_step * (1.0 + norm);
        let (grad, hess) = fd_derivatives(&v_fn, x, h);
        let a = problem.diffusion(x);
        let second = 0.5 * a.mul(&hess).trace();

        let bound_fn = match cert.mode {
            LyapunovMode::A3 => v,
            LyapunovMode::A3Prime => {
                let g = cert.g(x).unwrap_or(f64::NAN);
                if !(g >= 1.0) {
                    g_below_one += 1;
                }
                g
            }
        };
        let rhs = match cert.mode {
            LyapunovMode::A3 => cert.k0 - 2.0 * cert.k1 * v,
            LyapunovMode::A3Prime => cert.k0 - bound_fn,
        };

        let mut max_h = f64::NEG_INFINITY;
        for i in 0..problem.u1().len() {
            for j in 0..problem.u2().len() {
                problem.drift_into(x, &problem.u1().points()[i], &problem.u2().points()[j], &mut drift);
                let lv = dot(&drift, &grad) + second;
                let control = i * problem.u2().len() + j;
                report.record(0, x, None, Some(control), lv - rhs, config.tolerance(lv, rhs));
                max_h = max_h.max(problem.payoff_at(x, i, j));
            }
        }
        let growth = cert.k2 * bound_fn;
        report.record(1, x, None, None, max_h - growth, config.tolerance(max_h, growth));
        if cert.mode == LyapunovMode::A3Prime {
            ratios.push((norm, max_h / bound_fn));
        }
    }

    if g_below_one > 0 {
        report.passed = false;
        report
            .warnings
            .push(format!("g < 1 at {g_below_one} sampled points"));
    }
    if cert.mode == LyapunovMode::A3Prime && !ratios.is_empty() {
        report.decay_trend = shell_trend(&ratios, config.shells.max(1));
        let trend = &report.decay_trend;
        if trend.len() >= 2 && trend[trend.len() - 1].max_ratio > trend[0].max_ratio {
            report
                .warnings
                .push("max h̄ / g does not decrease towards the outer shell".into());
        }
    }
    Ok(report)
}

fn shell_trend(ratios: &[(f64, f64)], shells: usize) -> Vec<ShellTrend> {
    let r_max = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let width = if r_max > 0.0 { r_max / shells as f64 } else { 1.0 };
    let mut out: Vec<ShellTrend> = (0..shells)
        .map(|k| ShellTrend {
            r_min: k as f64 * width,
            r_max: (k + 1) as f64 * width,
            points: 0,
            max_ratio: f64::NEG_INFINITY,
        })
        .collect();
    for &(r, ratio) in ratios {
        let k = ((r / width) as usize).min(shells - 1);
        out[k].points += 1;
        out[k].max_ratio = out[k].max_ratio.max(ratio);
    }
    out.retain(|s| s.points > 0);
    out
}

/// Left side of the flatness inequality for one control:
/// `2(b(x)−b(y))ᵀQ(x−y) + tr((σx−σy)(σx−σy)ᵀQ) − ‖(σx−σy)ᵀQ(x−y)‖² / ((x−y)ᵀQ(x−y))`.
pub fn flatness_lhs(
    dynamics: &dyn ControlledDynamics,
    q: &Mat,
    x: &[f64],
    y: &[f64],
    control: usize,
) -> f64 {
    let d = dynamics.dim();
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    dynamics.drift_into(x, control, &mut bx);
    dynamics.drift_into(y, control, &mut by);
    let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
    let q_dx = q.mul_vec(&dx);
    let drift_term = 2.0 * dot(&db, &q_dx);

    let sx = dynamics.sigma(x);
    let sy = dynamics.sigma(y);
    let ds = Mat::from_fn(sx.rows(), sx.cols(), |i, j| sx[(i, j)] - sy[(i, j)]);
    let trace_term = ds.gram().mul(q).trace();
    let proj = ds.transpose().mul_vec(&q_dx);
    let quad = dot(&dx, &q_dx);
    drift_term + trace_term - dot(&proj, &proj) / quad
}

/// Audits the asymptotic flatness certificate on pairs of states.
pub fn check_flatness(
    dynamics: &dyn ControlledDynamics,
    cert: &FlatnessCertificate,
    pairs: &[(Vec<f64>, Vec<f64>)],
    config: &CheckConfig,
) -> Result<CertificateReport> {
    if cert.q.rows() != dynamics.dim() {
        return Err(Error::invalid(MODULE, "flatness matrix Q has wrong dimension"));
    }
    let mut report = CertificateReport::new("B3", &["contraction", "constants"]);
    let mut skipped = 0usize;
    for (x, y) in pairs {
        if x.len() != dynamics.dim() || y.len() != dynamics.dim() {
            return Err(Error::invalid(MODULE, "sample pair has wrong dimension"));
        }
        if x == y {
            skipped += 1;
            continue;
        }
        report.checked += 1;
        let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        for k in 0..dynamics.control_count() {
            let lhs = flatness_lhs(dynamics, &cert.q, x, y, k);
            let rhs = -cert.c * dist2;
            report.record(0, x, Some(y), Some(k), lhs - rhs, config.tolerance(lhs, rhs));
        }
    }
    if skipped > 0 {
        report
            .warnings
            .push(format!("skipped {skipped} pairs with x = y"));
    }
    let margin = cert.constant_condition_margin();
    report.record(1, &[], None, None, margin, config.tolerance(margin + cert.c * cert.c, cert.c * cert.c));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn sample_1d(r: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| vec![-r + 2.0 * r * k as f64 / (n - 1) as f64])
            .collect()
    }

    fn sign_game() -> GameProblem {
        GameProblem::new(
            1,
            ControlSet::scalar(&[-1.0, 1.0], Player::One).unwrap(),
            ControlSet::scalar(&[-1.0, 1.0], Player::Two).unwrap(),
            |x, _, _, out| out[0] = -x[0],
            |_| Mat::identity(1),
            |_, u1, u2| u1[0] * u2[0] + 1.0,
        )
        .unwrap()
    }

    #[test]
    fn relax_payoff_examples() {
        let p = registry::ou1d().with_payoff(|_, _, _| 5.0);
        let v = MixedStrategy::uniform(1);
        assert_eq!(relax_payoff(&p, &[0.3], &v, &v).unwrap(), 5.0);

        let g = sign_game();
        let half = MixedStrategy::uniform(2);
        // u₁u₂ on {−1,1}² averages to (1 − 1 − 1 + 1)/4 = 0; only the +1 remains.
        let r = relax_payoff(&g, &[0.0], &half, &half).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let dirac = relax_payoff(&g, &[0.0], &MixedStrategy::pure(2, 0), &MixedStrategy::pure(2, 1)).unwrap();
        assert_eq!(dirac, g.payoff_at(&[0.0], 0, 1));
        assert!(relax_payoff(&g, &[0.0], &MixedStrategy::uniform(3), &half).is_err());
    }

    #[test]
    fn ou_certificate_passes_with_zero_margin() {
        let p = registry::ou1d();
        let report = check_lyapunov(&p, &sample_1d(6.0, 121), &CheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
        let drift = report.condition("drift").unwrap();
        assert!(drift.worst_margin.abs() < 1e-5, "margin {}", drift.worst_margin);
    }

    #[test]
    fn ou_certificate_fails_with_small_k0() {
        let mut p = registry::ou1d();
        p.lyapunov = Some(p.lyapunov.unwrap().with_constants(1.0, 1.0, 1.0).unwrap());
        let report = check_lyapunov(&p, &[vec![0.0]], &CheckConfig::default()).unwrap();
        assert!(!report.passed);
        assert_eq!(report.violations[0].condition, "drift");
        assert!((report.violations[0].margin - 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_payoff_growth_passes_trivially() {
        let p = registry::ou1d().with_payoff(|_, _, _| 0.0);
        let report = check_lyapunov(&p, &sample_1d(3.0, 31), &CheckConfig::default()).unwrap();
        assert_eq!(report.condition("payoff_growth").unwrap().violations, 0);
    }

    #[test]
    fn missing_certificate_is_configuration_error() {
        let g = sign_game();
        assert!(matches!(
            check_lyapunov(&g, &[vec![0.0]], &CheckConfig::default()),
            Err(Error::Configuration { .. })
        ));
    }

    #[test]
    fn a3_prime_reports_decay_trend() {
        let p = registry::ou1d();
        let cert = LyapunovCertificate::a3_prime(
            |x: &[f64]| 1.0 + x[0] * x[0] * x[0] * x[0],
            |x: &[f64]| 1.0 + x[0].powi(4),
            100.0,
            1.0,
            1.0,
        )
        .unwrap();
        let p = p.with_lyapunov(cert);
        let report = check_lyapunov(&p, &sample_1d(5.0, 101), &CheckConfig::default()).unwrap();
        assert!(!report.decay_trend.is_empty());
        let first = report.decay_trend.first().unwrap().max_ratio;
        let last = report.decay_trend.last().unwrap().max_ratio;
        assert!(last < first);
    }

    #[test]
    fn flatness_on_ou_and_constant_drift() {
        let ou = registry::ou_controlled_1d(0.5);
        let cert = FlatnessCertificate::new(Mat::identity(1), 2.0, 1.0, 0.0, 2.0).unwrap();
        let pairs: Vec<_> = sample_1d(3.0, 13)
            .into_iter()
            .zip(sample_1d(2.0, 13).into_iter().rev())
            .collect();
        for (x, y) in &pairs {
            if x != y {
                let lhs = flatness_lhs(&ou, &cert.q, x, y, 0);
                assert!((lhs + 2.0 * (x[0] - y[0]).powi(2)).abs() < 1e-12);
            }
        }
        let report = check_flatness(&ou, &cert, &pairs, &CheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");

        let constant = GameProblem::new(
            1,
            ControlSet::scalar(&[0.5], Player::One).unwrap(),
            ControlSet::trivial(Player::Two),
            |_, u1, _, out| out[0] = u1[0],
            |_| Mat::identity(1),
            |_, _, _| 0.0,
        )
        .unwrap();
        let small = FlatnessCertificate::new(Mat::identity(1), 1e-3, 0.0, 0.0, 1.0).unwrap();
        let report = check_flatness(&constant, &small, &pairs, &CheckConfig::default()).unwrap();
        assert!(!report.passed);
        assert_eq!(report.condition("constants").unwrap().violations, 0);
    }

    #[test]
    fn flatness_skips_equal_pairs() {
        let ou = registry::ou_controlled_1d(0.5);
        let cert = FlatnessCertificate::new(Mat::identity(1), 2.0, 0.0, 0.0, 2.0).unwrap();
        let report =
            check_flatness(&ou, &cert, &[(vec![1.0], vec![1.0])], &CheckConfig::default()).unwrap();
        assert_eq!(report.checked, 0);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn flatness_constant_condition() {
        let ok = FlatnessCertificate::new(Mat::identity(1), 0.5, 3.0, 0.0, 2.0).unwrap();
        assert!(ok.constant_condition_margin() <= 0.0);
        let bad = FlatnessCertificate::new(Mat::identity(1), 0.5, 3.0, 1.0, 2.0).unwrap();
        assert!(bad.constant_condition_margin() > 0.0);
        assert!(FlatnessCertificate::new(Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]), 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn validation_catches_negative_payoff_and_degenerate_sigma() {
        let p = registry::ou1d().with_payoff(|x, _, _| x[0]);
        assert!(p.validate_at([[-1.0].as_slice()]).is_err());
        let degenerate = GameProblem::new(
            1,
            ControlSet::trivial(Player::One),
            ControlSet::trivial(Player::Two),
            |_, _, _, out| out[0] = 0.0,
            |_| Mat::zeros(1, 1),
            |_, _, _| 1.0,
        )
        .unwrap();
        assert!(degenerate.validate_at([[0.0].as_slice()]).is_err());
    }

    #[test]
    fn control_set_invariants() {
        assert!(ControlSet::scalar(&[], Player::One).is_err());
        assert!(ControlSet::scalar(&[1.0, 1.0], Player::One).is_err());
        assert!(GameProblem::new(
            1,
            ControlSet::trivial(Player::Two),
            ControlSet::trivial(Player::Two),
            |_, _, _, out| out[0] = 0.0,
            |_| Mat::identity(1),
            |_, _, _| 1.0,
        )
        .is_err());
    }
}
