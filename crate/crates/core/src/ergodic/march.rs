//! Explicit time marching of the parabolic value iteration and relative
//! value iteration flows.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{DiscreteGame, FieldMeta, Grid, ValueField};
use crate::problem::GameProblem;

use super::diagnostics::elliptic_residual_with;
use super::{
    extract_selectors_with, require_one_sided, ErgodicSolution, Method, ResidualRecord, SolveReport,
    SolverConfig, MODULE,
};

/// What is subtracted from the Hamiltonian at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Offset {
    /// Known constant `β` (value iteration).
    Fixed(f64),
    /// `φ(t, 0)` at the start of the step (relative value iteration).
    Origin,
}

pub(crate) struct MarchSpec<'a> {
    pub method: Method,
    pub offset: Offset,
    pub dt: f64,
    pub t_end: f64,
    pub checkpoints: &'a [f64],
    /// Largest admissible `dt`.
    pub cfl: f64,
}

/// Everything a march produces, including what the coupling diagnostics need.
#[derive(Debug, Clone)]
pub struct MarchOutput {
    pub initial: ValueField,
    pub field: ValueField,
    pub report: SolveReport,
    /// Step actually used: `t_end / steps`, at most the requested step.
    pub dt: f64,
    pub steps: usize,
    pub t_end: f64,
    /// `φ(t_k, 0)` for `k = 0..=steps`.
    pub origin_trace: Vec<f64>,
    /// Fields at the requested checkpoint times, each snapped to the nearest step.
    pub snapshots: Vec<(f64, ValueField)>,
}

impl MarchOutput {
    /// Mean of `φ(t, 0)` over the last `window` fraction of the horizon.
    pub fn tail_origin_mean(&self, window: f64) -> f64 {
        let first = (((1.0 - window) * self.steps as f64).floor() as usize).min(self.steps);
        let tail = &self.origin_trace[first..];
        crate::linalg::pairwise_sum(tail) / tail.len() as f64
    }
}

/// Generic explicit marcher: `φ ← φ + dt (H(φ) − offset)` at every active node,
/// where `hamiltonian` returns the per-node values of `H(φ)`.
pub(crate) fn march(
    grid: &Grid,
    phi0: &ValueField,
    spec: &MarchSpec<'_>,
    config: &SolverConfig,
    mut hamiltonian: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<MarchOutput> {
    if !phi0.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "initial field is defined on a different grid"));
    }
    if !(spec.dt.is_finite() && spec.dt > 0.0) || !(spec.t_end.is_finite() && spec.t_end > 0.0) {
        return Err(Error::invalid(MODULE, "dt and t_end must be positive"));
    }
    if spec.dt > spec.cfl * (1.0 + 1e-12) {
        return Err(Error::invalid(
            MODULE,
            format!("dt = {} exceeds the stability limit {:.6e}", spec.dt, spec.cfl),
        ));
    }
    if let Offset::Fixed(b) = spec.offset {
        if !b.is_finite() {
            return Err(Error::invalid(MODULE, "beta must be finite"));
        }
    }
    if spec.checkpoints.iter().any(|&t| !(0.0..=spec.t_end).contains(&t)) {
        return Err(Error::invalid(MODULE, "checkpoints must lie in [0, t_end]"));
    }
    let start = Instant::now();
    let steps = (spec.t_end / spec.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = spec.t_end / steps as f64;
    let snap_steps: Vec<usize> = spec
        .checkpoints
        .iter()
        .map(|&t| ((t / dt).round() as usize).min(steps))
        .collect();

    let origin = grid.origin();
    let core = grid.core_nodes();
    let mut phi = phi0.values().to_vec();
    let mut report = SolveReport::new(spec.method);
    report.residual_history.reserve(steps);
    let mut origin_trace = Vec::with_capacity(steps + 1);
    origin_trace.push(phi[origin]);
    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let snapshot = |k: usize, phi: &[f64]| -> Result<(f64, ValueField)> {
        let t = k as f64 * dt;
        Ok((t, ValueField::new(*grid, phi.to_vec(), FieldMeta::Parabolic { t })?))
    };
    for (c, &k) in snap_steps.iter().enumerate() {
        if k == 0 {
            snapshots.push((c, snapshot(0, &phi)?));
        }
    }

    for k in 1..=steps {
        let offset = match spec.offset {
            Offset::Fixed(b) => b,
            Offset::Origin => phi[origin],
        };
        let h = hamiltonian(&phi)?;
        let mut change: f64 = 0.0;
        for node in 0..grid.len() {
            if !grid.is_active(node) {
                continue;
            }
            let delta = dt * (h[node] - offset);
            phi[node] += delta;
            if !phi[node].is_finite() || phi[node].abs() > 1e200 {
                return Err(Error::Divergence {
                    module: MODULE,
                    step: k,
                    time: k as f64 * dt,
                    message: format!(
                        "value at node {node} (x = {:?}) became {}; reduce dt",
                        grid.coords(node),
                        phi[node]
                    ),
                });
            }
        }
        for &node in &core {
            change = change.max((dt * (h[node] - offset)).abs());
        }
        report.residual_history.push(ResidualRecord {
            step: k,
            time: k as f64 * dt,
            residual: change / dt,
            offset,
        });
        origin_trace.push(phi[origin]);
        for (c, &s) in snap_steps.iter().enumerate() {
            if s == k {
                snapshots.push((c, snapshot(k, &phi)?));
            }
        }
    }
    snapshots.sort_by_key(|(c, _)| *c);
    report.iterations = steps;
    report.converged = report.last_residual().is_some_and(|r| r <= config.march_tol);
    report.details.insert("dt".into(), dt);
    report.details.insert("t_end".into(), spec.t_end);
    report.details.insert("cfl_limit".into(), spec.cfl);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(MarchOutput {
        initial: phi0.clone(),
        field: ValueField::new(*grid, phi, FieldMeta::Parabolic { t: spec.t_end })?,
        report,
        dt,
        steps,
        t_end: spec.t_end,
        origin_trace,
        snapshots: snapshots.into_iter().map(|(_, s)| s).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn game_march(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    offset: Offset,
    method: Method,
    dt: f64,
    t_end: f64,
    checkpoints: &[f64],
    config: &SolverConfig,
) -> Result<(DiscreteGame, MarchOutput)> {
    require_one_sided(grid, "time marching")?;
    let dg = DiscreteGame::new(problem, grid)?;
    let spec = MarchSpec {
        method,
        offset,
        dt,
        t_end,
        checkpoints,
        cfl: dg.cfl_limit(),
    };
    let out = march(grid, phi0, &spec, config, |phi| dg.values(phi))?;
    Ok((dg, out))
}

/// Value iteration `∂φ̄/∂t = minmax[L̄φ̄ + h̄] − β` by explicit Euler.
pub fn vi_march(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    beta: f64,
    dt: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<(ValueField, SolveReport)> {
    let out = vi_march_observed(problem, grid, phi0, beta, dt, t_end, &[], config)?;
    Ok((out.field, out.report))
}

/// [`vi_march`] keeping snapshots at `checkpoints` and the origin trace.
#[allow(clippy::too_many_arguments)]
pub fn vi_march_observed(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    beta: f64,
    dt: f64,
    t_end: f64,
    checkpoints: &[f64],
    config: &SolverConfig,
) -> Result<MarchOutput> {
    let (_, mut out) = game_march(problem, grid, phi0, Offset::Fixed(beta), Method::Vi, dt, t_end, checkpoints, config)?;
    out.report.details.insert("beta".into(), beta);
    Ok(out)
}

/// Relative value iteration `∂φ/∂t = minmax[L̄φ + h̄] − φ(t, 0)` by explicit
/// Euler, the offset taken from the start of each step.
pub fn rvi_march(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    dt: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<(ValueField, SolveReport)> {
    let out = rvi_march_observed(problem, grid, phi0, dt, t_end, &[], config)?;
    Ok((out.field, out.report))
}

/// [`rvi_march`] keeping snapshots at `checkpoints` and the origin trace.
pub fn rvi_march_observed(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    dt: f64,
    t_end: f64,
    checkpoints: &[f64],
    config: &SolverConfig,
) -> Result<MarchOutput> {
    let (_, mut out) = game_march(problem, grid, phi0, Offset::Origin, Method::Rvi, dt, t_end, checkpoints, config)?;
    let beta = out.tail_origin_mean(config.beta_window);
    out.report.beta = Some(beta);
    Ok(out)
}

/// Runs RVI to `t_end` and packages `(β, φ*, selectors)`.
///
/// `β` is the mean of `φ(t, 0)` over the last `beta_window` of the horizon and
/// `φ* = φ(t_end) − φ(t_end, 0)`. Fails with a convergence error when the
/// elliptic residual of the limit exceeds the configured tolerance.
pub fn solve_rvi(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    dt: f64,
    t_end: f64,
    config: &SolverConfig,
) -> Result<ErgodicSolution> {
    let (dg, out) = game_march(problem, grid, phi0, Offset::Origin, Method::Rvi, dt, t_end, &[], config)?;
    let beta = out.tail_origin_mean(config.beta_window);
    let phi_star = out.field.normalized_at_origin().with_meta(FieldMeta::Ergodic);
    let mut report = out.report;
    report.beta = Some(beta);
    let residual = elliptic_residual_with(&dg, &phi_star, beta)?;
    report.elliptic_residual = Some(residual);
    if residual > config.elliptic_tol * (1.0 + beta.abs()) {
        return Err(report.convergence_error(format!(
            "elliptic residual {residual:e} at t_end = {t_end}; march longer"
        )));
    }
    if !report.converged {
        report.warnings.push(format!(
            "last per-step residual {:e} is above march_tol {:e}",
            report.last_residual().unwrap_or(f64::NAN),
            config.march_tol
        ));
    }
    let selectors = extract_selectors_with(&dg, phi_star.values())?;
    Ok(ErgodicSolution {
        beta,
        phi_star,
        selectors,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryPolicy;
    use crate::registry;

    fn grid(radius: f64, n: usize) -> Grid {
        Grid::new(1, radius, n, BoundaryPolicy::OneSided).unwrap()
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = grid(4.0, 81);
        let p = registry::ou1d();
        let phi0 = ValueField::constant(g, 0.0);
        let err = rvi_march(&p, &g, &phi0, 1.0, 1.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput { .. }));
    }

    #[test]
    fn dirichlet_grid_is_rejected() {
        let g = grid(4.0, 81).with_boundary(BoundaryPolicy::DirichletZero);
        let p = registry::ou1d();
        let phi0 = ValueField::constant(g, 0.0);
        assert!(rvi_march(&p, &g, &phi0, 1e-4, 1.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn step_is_shrunk_to_divide_horizon() {
        let g = grid(3.0, 31);
        let p = registry::ou1d();
        let phi0 = ValueField::constant(g, 0.0);
        let out = rvi_march_observed(&p, &g, &phi0, 0.003, 0.1, &[0.0, 0.05, 0.1], &SolverConfig::default()).unwrap();
        assert_eq!(out.steps, 34);
        assert!((out.dt * 34.0 - 0.1).abs() < 1e-15);
        assert_eq!(out.origin_trace.len(), 35);
        assert_eq!(out.snapshots.len(), 3);
        assert_eq!(out.snapshots[0].1.values(), phi0.values());
    }

    #[test]
    fn vi_offset_drift_is_linear() {
        let g = grid(4.0, 81);
        let p = registry::ou1d();
        let phi0 = ValueField::from_fn(g, |x| x[0] * x[0] / 2.0).unwrap();
        let dt = 0.5 * DiscreteGame::new(&p, &g).unwrap().cfl_limit();
        let cfg = SolverConfig::default();
        let (a, _) = vi_march(&p, &g, &phi0, 1.0, dt, 2.0, &cfg).unwrap();
        let (b, _) = vi_march(&p, &g, &phi0, 1.1, dt, 2.0, &cfg).unwrap();
        // H(f + c) = H(f), so the two runs differ by exactly −0.1 t.
        for k in 0..g.len() {
            assert!((a.values()[k] - b.values()[k] - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_offset_is_forgotten() {
        let g = grid(4.0, 81);
        let p = registry::ou1d();
        let cfg = SolverConfig::default();
        let dt = DiscreteGame::new(&p, &g).unwrap().cfl_limit();
        let (a, _) = rvi_march(&p, &g, &ValueField::constant(g, 0.0), dt, 15.0, &cfg).unwrap();
        let (b, _) = rvi_march(&p, &g, &ValueField::constant(g, 5.0), dt, 15.0, &cfg).unwrap();
        // The offset decays like 5 e^{−t}.
        assert!(a.core_distance(&b) < 5.0 * (-14.0f64).exp());
    }
}
