//! Risk-sensitive ergodic control and its game formulation.
//!
//! The controller minimizes the exponential growth rate
//! `limsup (1/T) ln E[exp ∫₀ᵀ h(X, v) dt]`. The logarithmic transform
//! `φ = ln ψ` of the multiplicative eigen-equation `min_v [Lψ + hψ] = e^β…`
//! turns the problem into an ergodic game against an adversary that adds a
//! drift `w` at quadratic cost `½ wᵀa⁻¹w`:
//!
//! `β = min_v max_{|w| ≤ R_w} [(b + w)·∇φ + ½ tr(a∇²φ) + h − ½ wᵀa⁻¹w]`.
//!
//! Under the asymptotic flatness certificate the adversary can be confined
//! to a ball whose radius [`compute_adversary_ball`] derives from the
//! certificate constants.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{march, require_one_sided, MarchSpec, Method, Offset, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{build_with_gradient, AxisRule, FieldMeta, Grid, Stencil, ValueField};
use crate::linalg::{dot, norm2, Mat};
use crate::problem::{ControlSet, ControlledDynamics, FlatnessCertificate, SigmaFn};

const MODULE: &str = "risk_sensitive";

/// Maximum number of upwind re-evaluations before the direction is frozen.
const MAX_UPWIND_PASSES: usize = 3;

pub type RiskDriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RiskPayoffFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Parameters of `V(x) = (xᵀQx)^{1+α} / (ε + (xᵀQx)^{1/2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskLyapunov {
    pub eps: f64,
    pub alpha: f64,
}

/// A single-controller risk-sensitive problem.
#[derive(Clone)]
pub struct RiskProblem {
    dim: usize,
    drift: RiskDriftFn,
    sigma: SigmaFn,
    payoff: RiskPayoffFn,
    controls: ControlSet,
    pub flatness: FlatnessCertificate,
    pub lyapunov: RiskLyapunov,
    pub name: String,
}

impl std::fmt::Debug for RiskProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiskProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("controls", &self.controls)
            .field("flatness", &self.flatness)
            .field("lyapunov", &self.lyapunov)
            .finish_non_exhaustive()
    }
}

impl RiskProblem {
    pub fn new(
        dim: usize,
        controls: ControlSet,
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma: impl Fn(&[f64]) -> Mat + Send + Sync + 'static,
        payoff: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        flatness: FlatnessCertificate,
    ) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::invalid(MODULE, "risk-sensitive problems support dimension 1 or 2"));
        }
        if flatness.q.rows() != dim {
            return Err(Error::invalid(MODULE, "flatness matrix Q has wrong dimension"));
        }
        Ok(Self {
            dim,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            payoff: Arc::new(payoff),
            controls,
            flatness,
            lyapunov: RiskLyapunov { eps: 1.0, alpha: 0.5 },
            name: "custom".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_lyapunov(mut self, eps: f64, alpha: f64) -> Result<Self> {
        if !(eps > 0.0 && alpha > 0.0) {
            return Err(Error::invalid(MODULE, "Lyapunov parameters ε and α must be positive"));
        }
        self.lyapunov = RiskLyapunov { eps, alpha };
        Ok(self)
    }

    /// Same problem with `h + c`.
    pub fn with_payoff_shift(&self, c: f64) -> Self {
        let inner = self.payoff.clone();
        Self {
            payoff: Arc::new(move |x, u| inner(x, u) + c),
            ..self.clone()
        }
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(x, u, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64]) -> Mat {
        (self.sigma)(x).gram()
    }

    pub fn payoff(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.payoff)(x, u)
    }

    /// `(xᵀQx)^{1+α} / (ε + (xᵀQx)^{1/2})`
    pub fn lyapunov_v(&self, x: &[f64]) -> f64 {
        let q = self.flatness.q.quad(x);
        q.powf(1.0 + self.lyapunov.alpha) / (self.lyapunov.eps + q.sqrt())
    }
}

impl ControlledDynamics for RiskProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn control_count(&self) -> usize {
        self.controls.len()
    }

    fn drift_into(&self, x: &[f64], control: usize, out: &mut [f64]) {
        (self.drift)(x, &self.controls.points()[control], out)
    }

    fn sigma(&self, x: &[f64]) -> Mat {
        (self.sigma)(x)
    }
}

/// The closed ball the adversary's drift is confined to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBall {
    pub radius: f64,
    /// Smallest positive root of `A x² − B x + C = 0`.
    pub k: f64,
    /// `(A, B, C)`.
    pub coefficients: [f64; 3],
}

impl AdversaryBall {
    /// `|A K² − B K + C|`
    pub fn root_residual(&self) -> f64 {
        let [a, b, c] = self.coefficients;
        (a * self.k * self.k - b * self.k + c).abs()
    }
}

/// Solves `(√c/2)‖σσᵀ‖∞ Lip(a⁻¹) K² − c^{5/4} K + Lip(h)‖σσᵀ‖∞ = 0` for its
/// smallest positive root and sets `R_w = Lip(h)/c + Lip(a⁻¹) K² / (2√c)`.
pub fn compute_adversary_ball(cert: &FlatnessCertificate) -> Result<AdversaryBall> {
    let c = cert.c;
    let a = 0.5 * c.sqrt() * cert.sigma_sup * cert.lip_ainv;
    let b = c.powf(1.25);
    let cc = cert.lip_h * cert.sigma_sup;
    let k = if cc == 0.0 {
        0.0
    } else if a == 0.0 {
        cc / b
    } else {
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return Err(Error::CertificateViolation {
                module: MODULE,
                message: format!(
                    "adversary-ball quadratic has no real root (discriminant {disc:e}); \
                     the flatness constants violate 2‖σσᵀ‖²∞ Lip(h) Lip(a⁻¹) ≤ c²"
                ),
            });
        }
        // Smaller root in the cancellation-free form 2C / (B + √disc).
        2.0 * cc / (b + disc.sqrt())
    };
    let radius = cert.lip_h / c + cert.lip_ainv * k * k / (2.0 * c.sqrt());
    Ok(AdversaryBall {
        radius,
        k,
        coefficients: [a, b, cc],
    })
}

/// Maximizer of `w·p − ½ wᵀa⁻¹w` over `|w| ≤ radius` by radial projection of
/// the unconstrained maximizer `a p`; returns `(w, value, clipped)`.
///
/// Exact when `a` is a multiple of the identity, an approximation otherwise.
pub fn adversary_response(a: &Mat, p: &[f64], radius: f64) -> (Vec<f64>, f64, bool) {
    let ap = a.mul_vec(p);
    let pap = dot(p, &ap);
    let norm = norm2(&ap);
    if norm <= radius {
        return (ap, 0.5 * pap, false);
    }
    let s = radius / norm;
    let w = ap.iter().map(|v| s * v).collect();
    (w, s * pap - 0.5 * s * s * pap, true)
}

/// Per-node result of the risk-sensitive Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskNodeValue {
    pub value: f64,
    pub control: usize,
    pub w: Vec<f64>,
    /// The adversary hit the ball boundary for the selected control.
    pub clipped: bool,
    /// The upwind direction had not settled after the allowed passes.
    pub frozen: bool,
}

/// Discrete gradient consistent with the per-axis difference rules.
fn gradient(grid: &Grid, f: &[f64], node: usize, rules: &[AxisRule; 2]) -> Vec<f64> {
    let h = grid.spacing();
    let stride = [1, grid.points_per_axis()];
    (0..grid.dim())
        .map(|ax| {
            let s = stride[ax];
            match rules[ax] {
                AxisRule::Central => (f[node + s] - f[node - s]) / (2.0 * h),
                AxisRule::Forward => (f[node + s] - f[node]) / h,
                AxisRule::Backward => (f[node] - f[node - s]) / h,
                AxisRule::None => 0.0,
            }
        })
        .collect()
}

/// Axes along which the node sits on the box boundary; the adversary gets no
/// gradient information there.
fn boundary_axes(grid: &Grid, node: usize) -> [bool; 2] {
    let mi = grid.multi_index(node);
    let n = grid.points_per_axis();
    let mut out = [false; 2];
    for (ax, o) in out.iter_mut().enumerate().take(grid.dim()) {
        *o = mi[ax] == 0 || mi[ax] == n - 1;
    }
    out
}

/// `min_v max_{|w| ≤ R_w} [(b + w)·∇f + ½tr(a∇²f) + h − ½wᵀa⁻¹w]` at `node`.
pub fn risk_hamiltonian(
    grid: &Grid,
    f: &ValueField,
    node: usize,
    problem: &RiskProblem,
    ball: &AdversaryBall,
) -> Result<RiskNodeValue> {
    if !f.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "field is defined on a different grid"));
    }
    risk_node(grid, f.values(), node, problem, ball)
}

fn risk_node(grid: &Grid, f: &[f64], node: usize, problem: &RiskProblem, ball: &AdversaryBall) -> Result<RiskNodeValue> {
    let x = grid.coords(node);
    let a = problem.diffusion(&x);
    if a.cholesky().is_none() {
        return Err(Error::problem(MODULE, format!("a(x) is singular at {x:?}")));
    }
    let on_boundary = boundary_axes(grid, node);
    let mut best: Option<RiskNodeValue> = None;
    for (ci, u) in problem.controls().points().iter().enumerate() {
        let b = problem.drift(&x, u);
        let (mut stencil, mut rules) = build_with_gradient(grid, node, &b, &a)?;
        let mut w = vec![0.0; grid.dim()];
        let mut gain = 0.0;
        let mut clipped = false;
        let mut frozen = true;
        for _ in 0..MAX_UPWIND_PASSES {
            let mut p = gradient(grid, f, node, &rules);
            for (ax, pa) in p.iter_mut().enumerate() {
                if on_boundary[ax] {
                    *pa = 0.0;
                }
            }
            let (w_new, g, c) = adversary_response(&a, &p, ball.radius);
            // The bracket is assembled with the stencil of b + w, so the gain
            // must be expressed with that stencil's gradient: w·p − ½wᵀa⁻¹w.
            let bw: Vec<f64> = b.iter().zip(&w_new).map(|(u, v)| u + v).collect();
            let (st, r) = build_with_gradient(grid, node, &bw, &a)?;
            (w, gain, clipped) = (w_new, g, c);
            let settled = r == rules;
            stencil = st;
            rules = r;
            if settled {
                frozen = false;
                break;
            }
        }
        // (b + w)·p + diffusion via the stencil, minus the w·p it contains,
        // plus the adversary's net gain.
        let p = {
            let mut p = gradient(grid, f, node, &rules);
            for (ax, pa) in p.iter_mut().enumerate() {
                if on_boundary[ax] {
                    *pa = 0.0;
                }
            }
            p
        };
        let value = stencil.apply(f, node) - dot(&w, &p) + gain + problem.payoff(&x, u);
        let better = best.as_ref().is_none_or(|cur| value < cur.value);
        if better {
            best = Some(RiskNodeValue {
                value,
                control: ci,
                w,
                clipped,
                frozen,
            });
        }
    }
    Ok(best.expect("control set is nonempty"))
}

/// Largest stencil weight sum over all drifts `b + w` with `|w| ≤ R_w`:
/// every axis is pushed to `|b_i| + R_w` in both directions.
pub fn cfl_limit(problem: &RiskProblem, grid: &Grid, ball: &AdversaryBall) -> Result<f64> {
    let d = grid.dim();
    let mut worst: f64 = 0.0;
    for node in 0..grid.len() {
        let x = grid.coords(node);
        let a = problem.diffusion(&x);
        for u in problem.controls().points() {
            let b = problem.drift(&x, u);
            for signs in 0..(1usize << d) {
                let pushed: Vec<f64> = (0..d)
                    .map(|ax| {
                        let m = b[ax].abs() + ball.radius;
                        if signs >> ax & 1 == 1 { m } else { -m }
                    })
                    .collect();
                worst = worst.max(Stencil::build(grid, node, &pushed, &a)?.weight_sum());
            }
        }
    }
    Ok(Grid::cfl_limit(worst))
}

/// Limit of the log-domain relative value iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSolution {
    pub beta: f64,
    /// Normalized so that `φ*(0) = 0`.
    pub phi_star: ValueField,
    /// Minimizing control index per node.
    pub controls: Vec<usize>,
    /// Adversary drift per node at the limit.
    pub adversary: Vec<Vec<f64>>,
    pub ball: AdversaryBall,
    pub report: SolveReport,
}

impl RiskSolution {
    /// `x…, control, w…` per node.
    pub fn selector_csv(&self) -> String {
        use std::fmt::Write as _;
        let grid = self.phi_star.grid();
        let d = grid.dim();
        let mut s = String::new();
        let head: Vec<String> = (0..d)
            .map(|a| format!("x{a}"))
            .chain(std::iter::once("control".to_string()))
            .chain((0..d).map(|a| format!("w{a}")))
            .collect();
        s.push_str(&head.join(","));
        s.push('\n');
        for k in 0..grid.len() {
            let row: Vec<String> = grid
                .coords(k)
                .iter()
                .map(|v| v.to_string())
                .chain(std::iter::once(self.controls[k].to_string()))
                .chain(self.adversary[k].iter().map(|v| v.to_string()))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

fn risk_values(grid: &Grid, f: &[f64], problem: &RiskProblem, ball: &AdversaryBall) -> Result<Vec<RiskNodeValue>> {
    if grid.len() * problem.controls().len() >= 2048 {
        (0..grid.len())
            .into_par_iter()
            .map(|node| risk_node(grid, f, node, problem, ball))
            .collect()
    } else {
        (0..grid.len()).map(|node| risk_node(grid, f, node, problem, ball)).collect()
    }
}

/// Relative value iteration for the risk-sensitive game,
/// `∂φ/∂t = H_risk(φ) − φ(t, 0)`, with the ball from the problem's flatness
/// certificate. `β` is the tail mean of `φ(t, 0)`.
pub fn solve_risk_game(
    problem: &RiskProblem,
    grid: &Grid,
    phi0: &ValueField,
    dt: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<RiskSolution> {
    let ball = compute_adversary_ball(&problem.flatness)?;
    solve_risk_game_with_ball(problem, grid, phi0, dt, t_end, &ball, config)
}

/// [`solve_risk_game`] with an explicit adversary ball.
pub fn solve_risk_game_with_ball(
    problem: &RiskProblem,
    grid: &Grid,
    phi0: &ValueField,
    dt: f64,
    t_end: f64,
    ball: &AdversaryBall,
    config: &SolverConfig,
) -> Result<RiskSolution> {
    require_one_sided(grid, "the risk-sensitive march")?;
    if grid.dim() != problem.dim {
        return Err(Error::invalid(MODULE, "problem and grid dimensions differ"));
    }
    let cfl = cfl_limit(problem, grid, ball)?;
    let spec = MarchSpec {
        method: Method::RiskGame,
        offset: Offset::Origin,
        dt,
        t_end,
        checkpoints: &[],
        cfl,
    };
    let out = march(grid, phi0, &spec, config, |phi| {
        Ok(risk_values(grid, phi, problem, ball)?.into_iter().map(|r| r.value).collect())
    })?;
    let beta = out.tail_origin_mean(config.beta_window);
    let phi_star = out.field.normalized_at_origin().with_meta(FieldMeta::Risk);
    let mut report = out.report;
    report.beta = Some(beta);

    let limit = risk_values(grid, phi_star.values(), problem, ball)?;
    let residual = grid
        .core_nodes()
        .into_iter()
        .map(|k| (limit[k].value - beta).abs())
        .fold(0.0, f64::max);
    report.elliptic_residual = Some(residual);
    let clipped = limit.iter().filter(|r| r.clipped).count();
    let frozen = limit.iter().filter(|r| r.frozen).count();
    report.details.insert("ball_radius".into(), ball.radius);
    report.details.insert("ball_k".into(), ball.k);
    report.details.insert("quadratic_a".into(), ball.coefficients[0]);
    report.details.insert("quadratic_b".into(), ball.coefficients[1]);
    report.details.insert("quadratic_c".into(), ball.coefficients[2]);
    report.details.insert("lip_h".into(), problem.flatness.lip_h);
    report.details.insert("ball_active_nodes".into(), clipped as f64);
    report.details.insert("frozen_upwind_nodes".into(), frozen as f64);
    if clipped > 0 {
        report
            .warnings
            .push(format!("adversary constrained by the ball at {clipped} nodes"));
    }
    if frozen > 0 {
        report
            .warnings
            .push(format!("upwind direction frozen after {MAX_UPWIND_PASSES} passes at {frozen} nodes"));
    }
    let a0 = problem.diffusion(&grid.coords(grid.origin()));
    if grid.dim() == 2 && (a0[(0, 1)] != 0.0 || a0[(0, 0)] != a0[(1, 1)]) {
        report
            .warnings
            .push("a(x) is not isotropic: radial projection of the adversary is approximate".into());
    }
    if residual > config.elliptic_tol * (1.0 + beta.abs()) {
        return Err(report.convergence_error(format!(
            "risk elliptic residual {residual:e} at t_end = {t_end}; march longer"
        )));
    }
    report.converged = true;
    Ok(RiskSolution {
        beta,
        phi_star,
        controls: limit.iter().map(|r| r.control).collect(),
        adversary: limit.into_iter().map(|r| r.w).collect(),
        ball: *ball,
        report,
    })
}

/// Multiplicative relative value iteration
/// `∂ψ/∂t = min_v [L_v ψ + (h − ln ψ(t, 0)) ψ]`, explicit in time.
///
/// Returns the field at `t_end` normalized so that `ψ(0) = 1`; the report's
/// `beta` is `ln ψ(t_end, 0)` before normalization.
pub fn rvi_multiplicative(
    problem: &RiskProblem,
    grid: &Grid,
    psi0: &ValueField,
    dt: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<(ValueField, SolveReport)> {
    require_one_sided(grid, "the multiplicative march")?;
    if !psi0.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "initial field is defined on a different grid"));
    }
    if psi0.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid(MODULE, "initial field must be strictly positive"));
    }
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::invalid(MODULE, "dt and t_end must be positive"));
    }
    let start = Instant::now();
    let n_ctrl = problem.controls().len();
    // Per node and control: stencil and payoff.
    let mut stencils = Vec::with_capacity(grid.len() * n_ctrl);
    let mut payoff = Vec::with_capacity(grid.len() * n_ctrl);
    let mut max_w: f64 = 0.0;
    let mut max_h: f64 = 0.0;
    for node in 0..grid.len() {
        let x = grid.coords(node);
        let a = problem.diffusion(&x);
        for u in problem.controls().points() {
            let st = Stencil::build(grid, node, &problem.drift(&x, u), &a)?;
            max_w = max_w.max(st.weight_sum());
            let h = problem.payoff(&x, u);
            max_h = max_h.max(h);
            stencils.push(st);
            payoff.push(h);
        }
    }
    let cfl = Grid::cfl_limit(max_w);
    if dt > cfl * (1.0 + 1e-12) {
        return Err(Error::invalid(MODULE, format!("dt = {dt} exceeds the stability limit {cfl:.6e}")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let origin = grid.origin();
    let core = grid.core_nodes();
    let mut psi = psi0.values().to_vec();
    let mut next = psi.clone();
    let mut report = SolveReport::new(Method::RiskMultiplicative);
    for k in 1..=steps {
        let offset = psi[origin].ln();
        let mut change: f64 = 0.0;
        for node in 0..grid.len() {
            let rate = (0..n_ctrl)
                .map(|c| {
                    let i = node * n_ctrl + c;
                    stencils[i].apply(&psi, node) + (payoff[i] - offset) * psi[node]
                })
                .fold(f64::INFINITY, f64::min);
            next[node] = psi[node] + dt * rate;
            if !(next[node] > 0.0) || !next[node].is_finite() {
                return Err(Error::Divergence {
                    module: MODULE,
                    step: k,
                    time: k as f64 * dt,
                    message: format!(
                        "ψ lost positivity at node {node} (x = {:?}); reduce dt or use the log-domain solver",
                        grid.coords(node)
                    ),
                });
            }
        }
        for &node in &core {
            // Relative change: ψ spans exponential scales.
            change = change.max(((next[node] - psi[node]) / psi[node]).abs());
        }
        std::mem::swap(&mut psi, &mut next);
        report.residual_history.push(crate::ergodic::ResidualRecord {
            step: k,
            time: k as f64 * dt,
            residual: change / dt,
            offset,
        });
    }
    let beta = psi[origin].ln();
    let o = psi[origin];
    let normalized: Vec<f64> = psi.iter().map(|v| v / o).collect();
    report.iterations = steps;
    report.beta = Some(beta);
    report.converged = report.last_residual().is_some_and(|r| r <= config.march_tol);
    report.details.insert("dt".into(), dt);
    report.details.insert("t_end".into(), t_end);
    report.details.insert("cfl_limit".into(), cfl);
    report.details.insert("max_payoff".into(), max_h);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((ValueField::new(*grid, normalized, FieldMeta::Multiplicative { t: t_end })?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryPolicy;
    use crate::problem::Player;
    use crate::registry;

    fn cert(c: f64, lip_h: f64, lip_ainv: f64, sigma_sup: f64) -> FlatnessCertificate {
        FlatnessCertificate::new(Mat::identity(1), c, lip_h, lip_ainv, sigma_sup).unwrap()
    }

    #[test]
    fn ball_degenerate_linear_case() {
        let b = compute_adversary_ball(&cert(2.0, 3.0, 0.0, 1.5)).unwrap();
        assert_eq!(b.k, 3.0 * 1.5 / 2f64.powf(1.25));
        assert_eq!(b.radius, 1.5);
    }

    #[test]
    fn ball_zero_lipschitz_payoff() {
        let b = compute_adversary_ball(&cert(1.0, 0.0, 1.0, 1.0)).unwrap();
        assert_eq!((b.k, b.radius), (0.0, 0.0));
    }

    #[test]
    fn ball_general_quadratic() {
        let b = compute_adversary_ball(&cert(1.0, 0.125, 1.0, 1.0)).unwrap();
        let k = 1.0 - 0.75f64.sqrt();
        assert!((b.k - k).abs() < 1e-15);
        assert!((b.radius - (0.125 + k * k / 2.0)).abs() < 1e-15);
        assert!(b.root_residual() < 1e-15);
    }

    #[test]
    fn ball_negative_discriminant() {
        let err = compute_adversary_ball(&cert(0.1, 10.0, 10.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::CertificateViolation { .. }));
    }

    #[test]
    fn adversary_unconstrained_and_clipped() {
        let a = Mat::from_rows(&[vec![2.0]]);
        let (w, v, c) = adversary_response(&a, &[1.0], 10.0);
        assert_eq!((w[0], v, c), (2.0, 1.0, false));
        let (w, v, c) = adversary_response(&a, &[1.0], 1.0);
        // w = 1: 1·1 − ½·1·½·1 = 0.75
        assert_eq!((w[0], v, c), (1.0, 0.75, true));
        let (w, v, _) = adversary_response(&a, &[1.0], 0.0);
        assert_eq!((w[0], v), (0.0, 0.0));
    }

    #[test]
    fn constant_field_gives_min_payoff() {
        let p = RiskProblem::new(
            1,
            ControlSet::scalar(&[0.0, 1.0], Player::Two).unwrap(),
            |x, u, out| out[0] = -x[0] + u[0],
            |_| Mat::from_rows(&[vec![2f64.sqrt()]]),
            |x, u| x[0] * x[0] + 1.0 + u[0],
            cert(1.0, 1.0, 0.0, 2.0),
        )
        .unwrap();
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let ball = compute_adversary_ball(&p.flatness).unwrap();
        let f = ValueField::constant(grid, 3.0);
        let node = grid.find_node(&[1.0]).unwrap();
        let r = risk_hamiltonian(&grid, &f, node, &p, &ball).unwrap();
        assert_eq!(r.control, 0);
        assert!((r.value - 2.0).abs() < 1e-12);
        assert_eq!(r.w, vec![0.0]);
    }

    #[test]
    fn eigenfunction_is_stationary() {
        // φ = x²/8 solves min/max[...] = 1/4 for b = −x, a = 2, h = 3x²/16.
        let p = registry::risk_ou_1d(3.0 / 16.0, 6.0);
        let grid = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided).unwrap();
        let ball = compute_adversary_ball(&p.flatness).unwrap();
        let f = ValueField::from_fn(grid, |x| x[0] * x[0] / 8.0).unwrap();
        for node in grid.core_nodes() {
            let r = risk_hamiltonian(&grid, &f, node, &p, &ball).unwrap();
            assert!((r.value - 0.25).abs() < 1e-3, "node {node}: {}", r.value);
            assert!(!r.clipped);
        }
    }

    #[test]
    fn zero_ball_is_plain_generator() {
        let p = registry::risk_ou_1d(3.0 / 16.0, 6.0);
        let grid = Grid::new(1, 4.0, 81, BoundaryPolicy::OneSided).unwrap();
        let ball = AdversaryBall {
            radius: 0.0,
            k: 0.0,
            coefficients: [0.0, 1.0, 0.0],
        };
        let f = ValueField::from_fn(grid, |x| x[0].cos()).unwrap();
        let node = grid.find_node(&[0.5]).unwrap();
        let r = risk_hamiltonian(&grid, &f, node, &p, &ball).unwrap();
        let x = [0.5];
        let st = Stencil::build(&grid, node, &p.drift(&x, &[0.0]), &p.diffusion(&x)).unwrap();
        assert!((r.value - st.apply(f.values(), node) - p.payoff(&x, &[0.0])).abs() < 1e-12);
    }

    #[test]
    fn multiplicative_rejects_nonpositive_start() {
        let p = registry::risk_ou_1d(0.1, 4.0);
        let grid = Grid::new(1, 4.0, 41, BoundaryPolicy::OneSided).unwrap();
        let psi0 = ValueField::constant(grid, 0.0);
        assert!(rvi_multiplicative(&p, &grid, &psi0, 1e-4, 1.0, &SolverConfig::default()).is_err());
    }
}
