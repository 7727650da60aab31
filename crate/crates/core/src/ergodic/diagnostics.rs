//! Consistency diagnostics: VI/RVI coupling identities, the contraction
//! estimate for value iteration, elliptic residuals and truncation checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiscreteGame, Grid, ValueField};
use crate::problem::{GameProblem, LyapunovMode};

use super::march::{rvi_march_observed, vi_march_observed, MarchOutput};
use super::{SolverConfig, MODULE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub label: String,
    pub time: f64,
    /// Measured quantity (a residual, or the left side of an inequality).
    pub lhs: f64,
    /// Bound it is compared with.
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub passed: bool,
    /// Largest `lhs − rhs` over all rows (negative when every row has slack).
    pub worst_margin: f64,
    pub rows: Vec<DiagnosticRow>,
    pub warnings: Vec<String>,
}

impl DiagnosticReport {
    pub fn from_rows(name: impl Into<String>, rows: Vec<DiagnosticRow>) -> Self {
        let worst_margin = rows.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
        Self {
            name: name.into(),
            passed: rows.iter().all(|r| r.passed),
            worst_margin,
            rows,
            warnings: Vec::new(),
        }
    }

    /// Largest measured value among rows whose label starts with `prefix`.
    pub fn max_lhs(&self, prefix: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.label.starts_with(prefix))
            .map(|r| r.lhs)
            .fold(0.0, f64::max)
    }
}

/// `sup_core |minmax[L̄φ + h̄] − β|`.
pub fn elliptic_residual(problem: &GameProblem, grid: &Grid, phi: &ValueField, beta: f64) -> Result<f64> {
    if !phi.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "field is defined on a different grid"));
    }
    let dg = DiscreteGame::new(problem, grid)?;
    elliptic_residual_with(&dg, phi, beta)
}

pub(crate) fn elliptic_residual_with(dg: &DiscreteGame, phi: &ValueField, beta: f64) -> Result<f64> {
    let grid = dg.grid();
    let mut worst: f64 = 0.0;
    for node in grid.core_nodes() {
        if grid.is_active(node) {
            worst = worst.max((dg.value(phi.values(), node)? - beta).abs());
        }
    }
    Ok(worst)
}

/// Residuals of the two coupling identities between relative value iteration
/// `φ` and value iteration `φ̄` started from the same data:
///
/// * `first`:  `(φ(t,x) − φ(t,0)) − (φ̄(t,x) − φ̄(t,0))`
/// * `second`: `φ(t,x) − φ̄(t,x) + e^{−t}∫₀ᵗ eˢ φ̄(s,0) ds − β(1 − e^{−t})`
///
/// Sup over core nodes at every checkpoint; the integral uses the trapezoid
/// rule on the stored `φ̄(s, 0)` trace.
pub fn coupling_residuals(vi: &MarchOutput, rvi: &MarchOutput, beta: f64) -> Result<Vec<DiagnosticRow>> {
    if vi.steps != rvi.steps || vi.dt != rvi.dt || vi.t_end != rvi.t_end {
        return Err(Error::invalid(MODULE, "the two marches use different steps or horizons"));
    }
    if vi.initial.values() != rvi.initial.values() || !vi.initial.grid().same_nodes(rvi.initial.grid()) {
        return Err(Error::invalid(MODULE, "the two marches start from different data"));
    }
    if vi.snapshots.len() != rvi.snapshots.len()
        || vi.snapshots.iter().zip(&rvi.snapshots).any(|(a, b)| a.0 != b.0)
    {
        return Err(Error::invalid(MODULE, "the two marches were observed at different checkpoints"));
    }
    let grid = *vi.field.grid();
    let core = grid.core_nodes();
    let dt = vi.dt;

    // Running trapezoid integral of eˢ φ̄(s,0), sampled at every step.
    let mut integral = Vec::with_capacity(vi.steps + 1);
    integral.push(0.0);
    for k in 1..=vi.steps {
        let (s0, s1) = ((k - 1) as f64 * dt, k as f64 * dt);
        let inc = 0.5 * dt * (s0.exp() * vi.origin_trace[k - 1] + s1.exp() * vi.origin_trace[k]);
        integral.push(integral[k - 1] + inc);
    }

    let mut rows = Vec::with_capacity(2 * vi.snapshots.len());
    for ((t, bar), (_, rel)) in vi.snapshots.iter().zip(&rvi.snapshots) {
        let k = (t / dt).round() as usize;
        let (fb, fr) = (bar.values(), rel.values());
        let o = grid.origin();
        let correction = (-t).exp() * integral[k] - beta * (1.0 - (-t).exp());
        let mut first: f64 = 0.0;
        let mut second: f64 = 0.0;
        for &x in &core {
            first = first.max(((fr[x] - fr[o]) - (fb[x] - fb[o])).abs());
            second = second.max((fr[x] - fb[x] + correction).abs());
        }
        rows.push(DiagnosticRow {
            label: "first".into(),
            time: *t,
            lhs: first,
            rhs: 0.0,
            passed: true,
        });
        rows.push(DiagnosticRow {
            label: "second".into(),
            time: *t,
            lhs: second,
            rhs: 0.0,
            passed: true,
        });
    }
    Ok(rows)
}

/// Runs value iteration (with `beta`) and relative value iteration from
/// `phi0` with the same step and checks both coupling identities against
/// `tol` at `checkpoints`.
#[allow(clippy::too_many_arguments)]
pub fn check_coupling(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    beta: f64,
    dt: f64,
    t_end: f64,
    checkpoints: &[f64],
    tol: f64,
    config: &SolverConfig,
) -> Result<DiagnosticReport> {
    let vi = vi_march_observed(problem, grid, phi0, beta, dt, t_end, checkpoints, config)?;
    let rvi = rvi_march_observed(problem, grid, phi0, dt, t_end, checkpoints, config)?;
    let rows = coupling_residuals(&vi, &rvi, beta)?
        .into_iter()
        .map(|mut r| {
            r.rhs = tol;
            r.passed = r.lhs <= tol;
            r
        })
        .collect();
    Ok(DiagnosticReport::from_rows("vi_rvi_coupling", rows))
}

/// Checks `|φ̄(t,x) − φ*(x)| ≤ ‖φ̄(s,·) − φ*‖_V (k₀/(2k₁) + V(x) e^{−2k₁(t−s)})`
/// for every checkpoint pair `s ≤ t`, over core nodes. The weighted norm is
/// taken over all grid nodes. A small absolute slack `1e-6` absorbs round-off.
#[allow(clippy::too_many_arguments)]
pub fn check_contraction(
    problem: &GameProblem,
    grid: &Grid,
    phi0: &ValueField,
    phi_star: &ValueField,
    beta: f64,
    dt: f64,
    checkpoints: &[f64],
    config: &SolverConfig,
) -> Result<DiagnosticReport> {
    const SLACK: f64 = 1e-6;
    let cert = match &problem.lyapunov {
        Some(c) if c.mode == LyapunovMode::A3 => c,
        _ => return Err(Error::config(MODULE, "the contraction check needs an A3 Lyapunov certificate")),
    };
    if !phi_star.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "φ* is defined on a different grid"));
    }
    let mut times: Vec<f64> = checkpoints.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_end = *times.last().ok_or_else(|| Error::invalid(MODULE, "no checkpoints"))?;
    if t_end <= 0.0 {
        return Err(Error::invalid(MODULE, "need at least one positive checkpoint"));
    }
    let out = vi_march_observed(problem, grid, phi0, beta, dt, t_end, &times, config)?;
    let star = phi_star.values();
    let v: Vec<f64> = (0..grid.len()).map(|k| cert.v(&grid.coords(k))).collect();
    let core = grid.core_nodes();

    let v_norm = |f: &ValueField| {
        f.values()
            .iter()
            .zip(star)
            .zip(&v)
            .map(|((a, b), w)| (a - b).abs() / w)
            .fold(0.0, f64::max)
    };
    let mut rows = Vec::new();
    for (i, (s, fs)) in out.snapshots.iter().enumerate() {
        let ns = v_norm(fs);
        for (t, ft) in &out.snapshots[i..] {
            let decay = (-2.0 * cert.k1 * (t - s)).exp();
            let mut worst_margin = f64::NEG_INFINITY;
            let mut worst = (0.0, 0.0);
            for &x in &core {
                let lhs = (ft.values()[x] - star[x]).abs();
                let rhs = ns * (cert.k0 / (2.0 * cert.k1) + v[x] * decay);
                if lhs - rhs > worst_margin {
                    worst_margin = lhs - rhs;
                    worst = (lhs, rhs);
                }
            }
            rows.push(DiagnosticRow {
                label: format!("s={s}"),
                time: *t,
                lhs: worst.0,
                rhs: worst.1,
                passed: worst.0 <= worst.1 + SLACK,
            });
        }
    }
    Ok(DiagnosticReport::from_rows("contraction", rows))
}

/// Difference between two solutions on the nodes they share, compared over
/// the core of the smaller domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationDiagnostic {
    pub radius_small: f64,
    pub radius_large: f64,
    pub compared_nodes: usize,
    pub max_abs_diff: f64,
    /// `min (large − small)`; nonnegative when the larger domain dominates.
    pub min_diff: f64,
}

/// Compares two fields on grids with equal spacing and different radii.
pub fn truncation_diagnostic(small: &ValueField, large: &ValueField) -> Result<TruncationDiagnostic> {
    let (gs, gl) = (small.grid(), large.grid());
    if gs.dim() != gl.dim() || (gs.spacing() - gl.spacing()).abs() > 1e-12 * gs.spacing() {
        return Err(Error::invalid(MODULE, "truncation comparison needs equal spacing and dimension"));
    }
    if gs.radius() > gl.radius() {
        return truncation_diagnostic(large, small);
    }
    let mut max_abs_diff: f64 = 0.0;
    let mut min_diff = f64::INFINITY;
    let mut compared = 0;
    for k in gs.core_nodes() {
        let Some(j) = gl.find_node(&gs.coords(k)) else {
            return Err(Error::invalid(MODULE, "grids do not share nodes"));
        };
        let d = large.values()[j] - small.values()[k];
        max_abs_diff = max_abs_diff.max(d.abs());
        min_diff = min_diff.min(d);
        compared += 1;
    }
    Ok(TruncationDiagnostic {
        radius_small: gs.radius(),
        radius_large: gl.radius(),
        compared_nodes: compared,
        max_abs_diff,
        min_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryPolicy;
    use crate::registry;

    #[test]
    fn identities_hold_at_time_zero() {
        let g = Grid::new(1, 4.0, 41, BoundaryPolicy::OneSided).unwrap();
        let p = registry::ou1d();
        let phi0 = ValueField::from_fn(g, |x| x[0].sin()).unwrap();
        let rep = check_coupling(&p, &g, &phi0, 1.0, 1e-3, 0.5, &[0.0, 0.5], 1e-3, &SolverConfig::default()).unwrap();
        assert_eq!(rep.rows[0].lhs, 0.0);
        assert_eq!(rep.rows[1].lhs, 0.0);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn mismatched_marches_are_rejected() {
        let g = Grid::new(1, 4.0, 41, BoundaryPolicy::OneSided).unwrap();
        let p = registry::ou1d();
        let phi0 = ValueField::constant(g, 0.0);
        let cfg = SolverConfig::default();
        let a = vi_march_observed(&p, &g, &phi0, 1.0, 1e-3, 0.1, &[0.1], &cfg).unwrap();
        let b = rvi_march_observed(&p, &g, &phi0, 2e-3, 0.1, &[0.1], &cfg).unwrap();
        assert!(coupling_residuals(&a, &b, 1.0).is_err());
    }

    #[test]
    fn exact_elliptic_solution_has_small_residual() {
        let g = Grid::new(1, 6.0, 241, BoundaryPolicy::OneSided).unwrap();
        let p = registry::ou1d();
        let phi = ValueField::from_fn(g, |x| x[0] * x[0] / 2.0).unwrap();
        // Central differences are exact on quadratics.
        assert!(elliptic_residual(&p, &g, &phi, 1.0).unwrap() < 1e-10);
    }

    #[test]
    fn truncation_requires_matching_spacing() {
        let a = ValueField::constant(Grid::new(1, 4.0, 41, BoundaryPolicy::DirichletZero).unwrap(), 1.0);
        let b = ValueField::constant(Grid::new(1, 6.0, 61, BoundaryPolicy::DirichletZero).unwrap(), 2.0);
        let c = ValueField::constant(Grid::new(1, 6.0, 41, BoundaryPolicy::DirichletZero).unwrap(), 2.0);
        let d = truncation_diagnostic(&a, &b).unwrap();
        assert_eq!(d.min_diff, 1.0);
        assert!(truncation_diagnostic(&a, &c).is_err());
    }
}
