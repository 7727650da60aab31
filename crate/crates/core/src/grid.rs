//! Truncated rectangular grids and the monotone discretization of the
//! controlled generator `L̄f = b̄·∇f + ½ tr(a ∇²f)`.
//!
//! Every stencil produced here is of positive type: all off-diagonal weights
//! are nonnegative, and the diagonal is minus their sum. The discrete
//! generator is therefore the rate matrix of a controlled continuous-time
//! Markov chain on the grid (the Kushner–Dupuis construction), which is what
//! makes policy iteration, value iteration and explicit time marching
//! convergent at the discrete level.
//!
//! Drift terms use central differences wherever the diffusion weight on that
//! axis is large enough to keep both neighbour weights nonnegative, and
//! upwind differences otherwise ([`DriftScheme::Hybrid`], the default).
//! [`DriftScheme::Upwind`] upwinds unconditionally. Off-diagonal diffusion
//! entries use the seven-point positive cross stencil, which requires the
//! diffusion matrix to be diagonally dominant at every node.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::matrix_game::{self, GameSolution};
use crate::problem::GameProblem;

const MODULE: &str = "grid_fd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Values pinned to zero on the box boundary (discounted truncation).
    DirichletZero,
    /// First-order one-sided drift, second differences dropped; outward
    /// drift is discarded, which acts as a reflecting boundary.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    Upwind,
    #[default]
    Hybrid,
}

/// Uniform grid on `[−radius, radius]^dim`, axis 0 varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    radius: f64,
    n: usize,
    spacing: f64,
    boundary: BoundaryPolicy,
    core_fraction: f64,
    scheme: DriftScheme,
}

impl Grid {
    pub const DEFAULT_CORE_FRACTION: f64 = 0.8;

    pub fn new(dim: usize, radius: f64, n: usize, boundary: BoundaryPolicy) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(MODULE, format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::invalid(
                MODULE,
                format!("points per axis must be odd and at least 3 (got {n}) so the origin is a node"),
            ));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(MODULE, format!("radius must be positive, got {radius}")));
        }
        Ok(Self {
            dim,
            radius,
            n,
            spacing: 2.0 * radius / (n - 1) as f64,
            boundary,
            core_fraction: Self::DEFAULT_CORE_FRACTION,
            scheme: DriftScheme::Hybrid,
        })
    }

    pub fn with_core_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(MODULE, format!("core fraction must lie in (0, 1], got {fraction}")));
        }
        self.core_fraction = fraction;
        Ok(self)
    }

    pub fn with_scheme(mut self, scheme: DriftScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn boundary(&self) -> BoundaryPolicy {
        self.boundary
    }

    pub fn core_fraction(&self) -> f64 {
        self.core_fraction
    }

    pub fn scheme(&self) -> DriftScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same node set (dimension, radius and resolution); boundary policy and
    /// scheme may differ.
    pub fn same_nodes(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.radius == other.radius
    }

    fn axis_index(&self, node: usize, axis: usize) -> usize {
        match axis {
            0 => node % self.n,
            _ => node / self.n,
        }
    }

    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        [self.axis_index(node, 0), if self.dim == 2 { self.axis_index(node, 1) } else { 0 }]
    }

    pub fn node_at(&self, idx: [usize; 2]) -> usize {
        idx[0] + if self.dim == 2 { idx[1] * self.n } else { 0 }
    }

    fn axis_coord(&self, k: usize) -> f64 {
        let mid = (self.n - 1) / 2;
        (k as f64 - mid as f64) * self.spacing
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|a| self.axis_coord(self.axis_index(node, a)))
            .collect()
    }

    pub fn origin(&self) -> usize {
        let mid = (self.n - 1) / 2;
        self.node_at([mid, mid])
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        (0..self.dim).any(|a| {
            let k = self.axis_index(node, a);
            k == 0 || k == self.n - 1
        })
    }

    /// Nodes whose values are unknowns (everything except Dirichlet boundary nodes).
    pub fn is_active(&self, node: usize) -> bool {
        self.boundary == BoundaryPolicy::OneSided || !self.is_boundary(node)
    }

    pub fn is_core(&self, node: usize) -> bool {
        let lim = self.core_fraction * self.radius + 1e-9 * self.spacing;
        (0..self.dim).all(|a| self.axis_coord(self.axis_index(node, a)).abs() <= lim)
    }

    pub fn core_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_core(k)).collect()
    }

    /// Node with exactly these coordinates (up to round-off), if any.
    pub fn find_node(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let mut idx = [0usize; 2];
        for (a, &xa) in x.iter().enumerate() {
            let k = (xa + self.radius) / self.spacing;
            let kr = k.round();
            if (k - kr).abs() > 1e-6 || kr < 0.0 || kr as usize >= self.n {
                return None;
            }
            idx[a] = kr as usize;
        }
        Some(self.node_at(idx))
    }

    /// Multilinear interpolation weights at `x` (clamped to the box).
    pub fn interpolation_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..self.dim {
            let s = ((x[a] + self.radius) / self.spacing).clamp(0.0, (self.n - 1) as f64);
            let k = (s.floor() as usize).min(self.n - 2);
            base[a] = k;
            frac[a] = s - k as f64;
        }
        match self.dim {
            1 => vec![
                (self.node_at([base[0], 0]), 1.0 - frac[0]),
                (self.node_at([base[0] + 1, 0]), frac[0]),
            ],
            _ => {
                let mut out = Vec::with_capacity(4);
                for (dj, wj) in [(0, 1.0 - frac[1]), (1, frac[1])] {
                    for (di, wi) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                        out.push((self.node_at([base[0] + di, base[1] + dj]), wi * wj));
                    }
                }
                out
            }
        }
    }

    /// Largest step `dt` allowed by the explicit marchers for a given maximal
    /// stencil weight sum.
    pub fn cfl_limit(max_weight_sum: f64) -> f64 {
        0.9 / (max_weight_sum + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldMeta {
    Initial,
    Discounted { alpha: f64 },
    Parabolic { t: f64 },
    Ergodic,
    Risk,
    Multiplicative { t: f64 },
}

/// Scalar field on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    grid: Grid,
    values: Vec<f64>,
    pub meta: FieldMeta,
}

impl ValueField {
    pub fn new(grid: Grid, values: Vec<f64>, meta: FieldMeta) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(
                MODULE,
                format!("field has {} values for a grid of {} nodes", values.len(), grid.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, format!("field value at node {k} is not finite")));
        }
        Ok(Self { grid, values, meta })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            meta: FieldMeta::Initial,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(&grid.coords(k))).collect();
        Self::new(grid, values, FieldMeta::Initial)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin()]
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid
            .interpolation_weights(x)
            .into_iter()
            .map(|(k, w)| w * self.values[k])
            .sum()
    }

    /// `self − self(origin)`
    pub fn normalized_at_origin(&self) -> ValueField {
        let o = self.at_origin();
        ValueField {
            grid: self.grid,
            values: self.values.iter().map(|v| v - o).collect(),
            meta: self.meta,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ValueField> {
        ValueField::new(self.grid, self.values.iter().map(|&v| f(v)).collect(), self.meta)
    }

    pub fn with_meta(mut self, meta: FieldMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Sup-norm of `self − other` over the core region.
    pub fn core_distance(&self, other: &ValueField) -> f64 {
        self.grid
            .core_nodes()
            .into_iter()
            .map(|k| (self.values[k] - other.values[k]).abs())
            .fold(0.0, f64::max)
    }

    pub fn core_sup(&self) -> f64 {
        self.grid
            .core_nodes()
            .into_iter()
            .map(|k| self.values[k].abs())
            .fold(0.0, f64::max)
    }

    /// CSV with one row per node: coordinates then value, shortest
    /// round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..self.grid.dim {
            let _ = write!(s, "x{a},");
        }
        s.push_str("value\n");
        for k in 0..self.grid.len() {
            for c in self.grid.coords(k) {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{}", self.values[k]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Reads the values column of a CSV written by [`ValueField::to_csv`].
    pub fn read_csv(grid: Grid, path: &Path) -> Result<ValueField> {
        let mut reader = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let mut values = Vec::with_capacity(grid.len());
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != grid.dim + 1 {
                return Err(Error::Parse(format!("row {k}: expected {} columns", grid.dim + 1)));
            }
            let coords: Vec<f64> = (0..grid.dim)
                .map(|a| rec[a].parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {k}: {e}")))?;
            if k >= grid.len() || grid.coords(k).iter().zip(&coords).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(Error::invalid(MODULE, format!("CSV row {k} does not match the grid")));
            }
            values.push(
                rec[grid.dim]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {k}: {e}")))?,
            );
        }
        ValueField::new(grid, values, FieldMeta::Initial)
    }
}

/// Positive-type stencil of the discrete generator at one node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stencil {
    entries: Vec<(usize, f64)>,
}

impl Stencil {
    /// Off-diagonal `(neighbour, weight)` pairs; the diagonal weight is minus
    /// their sum.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn weight_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn diagonal(&self) -> f64 {
        -self.weight_sum()
    }

    /// `Σ w (f[k] − f[node])`
    pub fn apply(&self, f: &[f64], node: usize) -> f64 {
        let f0 = f[node];
        self.entries.iter().map(|&(k, w)| w * (f[k] - f0)).sum()
    }

    /// Discretizes `drift · ∇ + ½ tr(a ∇²)` at `node`.
    pub fn build(grid: &Grid, node: usize, drift: &[f64], a: &Mat) -> Result<Stencil> {
        Ok(build_with_gradient(grid, node, drift, a)?.0)
    }
}

/// Per-axis first-difference rule the stencil used, kept so that callers can
/// reproduce the gradient consistent with the drift discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AxisRule {
    Central,
    Forward,
    Backward,
    /// One-sided boundary where the drift points outward: no drift term.
    None,
}

fn check_dominance(grid: &Grid, node: usize, a: &Mat) -> Result<()> {
    let d = grid.dim;
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        let tol = 1e-12 * a[(i, i)].abs().max(1.0);
        if a[(i, i)] - off < -tol {
            return Err(Error::Monotonicity {
                node,
                coords: grid.coords(node),
                message: format!(
                    "diffusion matrix is not diagonally dominant in row {i} (a_ii = {}, Σ|a_ij| = {off})",
                    a[(i, i)]
                ),
            });
        }
    }
    Ok(())
}

pub(crate) fn build_with_gradient(
    grid: &Grid,
    node: usize,
    drift: &[f64],
    a: &Mat,
) -> Result<(Stencil, [AxisRule; 2])> {
    let d = grid.dim;
    if drift.len() != d || a.rows() != d || a.cols() != d {
        return Err(Error::invalid(MODULE, "drift or diffusion has the wrong dimension"));
    }
    if !grid.is_active(node) {
        return Err(Error::invalid(
            MODULE,
            format!("node {node} is a Dirichlet boundary node; its value is fixed at 0"),
        ));
    }
    check_dominance(grid, node, a)?;

    let h = grid.spacing;
    let h2 = h * h;
    let n = grid.n;
    let mi = grid.multi_index(node);
    let interior: Vec<bool> = (0..d).map(|ax| mi[ax] > 0 && mi[ax] < n - 1).collect();

    // Weights indexed by offset (di, dj) ∈ {−1,0,1}², slot = (di+1) + 3(dj+1).
    let mut w = [0.0f64; 9];
    let slot = |off: [i32; 2]| ((off[0] + 1) + 3 * (off[1] + 1)) as usize;
    let unit = |ax: usize, s: i32| {
        let mut o = [0i32; 2];
        o[ax] = s;
        o
    };

    // Cross terms, only where both axes are interior.
    let mut cross_reduction = [0.0f64; 2];
    if d == 2 && interior[0] && interior[1] {
        let aij = a[(0, 1)];
        let c = aij.abs() / (2.0 * h2);
        if aij > 0.0 {
            w[slot([1, 1])] += c;
            w[slot([-1, -1])] += c;
        } else if aij < 0.0 {
            w[slot([1, -1])] += c;
            w[slot([-1, 1])] += c;
        }
        cross_reduction = [c, c];
    }

    let mut rules = [AxisRule::None; 2];
    for ax in 0..d {
        let b = drift[ax];
        if interior[ax] {
            let base = a[(ax, ax)] / (2.0 * h2) - cross_reduction[ax];
            let central_ok = grid.scheme == DriftScheme::Hybrid && b.abs() / (2.0 * h) <= base;
            let (plus, minus) = if central_ok {
                rules[ax] = AxisRule::Central;
                (base + b / (2.0 * h), base - b / (2.0 * h))
            } else {
                rules[ax] = if b >= 0.0 { AxisRule::Forward } else { AxisRule::Backward };
                (base + b.max(0.0) / h, base + (-b).max(0.0) / h)
            };
            w[slot(unit(ax, 1))] += plus;
            w[slot(unit(ax, -1))] += minus;
        } else if mi[ax] == 0 {
            if b > 0.0 {
                rules[ax] = AxisRule::Forward;
                w[slot(unit(ax, 1))] += b / h;
            }
        } else if b < 0.0 {
            rules[ax] = AxisRule::Backward;
            w[slot(unit(ax, -1))] += -b / h;
        }
    }

    let scale = w.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mut entries = Vec::with_capacity(8);
    for dj in -1i32..=1 {
        for di in -1i32..=1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let mut wt = w[slot([di, dj])];
            if wt < 0.0 {
                if wt < -1e-12 * scale {
                    return Err(Error::Monotonicity {
                        node,
                        coords: grid.coords(node),
                        message: format!("negative stencil weight {wt} at offset ({di}, {dj})"),
                    });
                }
                wt = 0.0;
            }
            if wt != 0.0 {
                let target = [mi[0] as i64 + di as i64, mi[1] as i64 + dj as i64];
                let k = grid.node_at([target[0] as usize, target[1] as usize]);
                entries.push((k, wt));
            }
        }
    }
    Ok((Stencil { entries }, rules))
}

/// Discrete `L̄f` at `node` under the pure control pair `(u1, u2)` (indices
/// into the control sets).
pub fn apply_generator(
    problem: &GameProblem,
    grid: &Grid,
    f: &ValueField,
    node: usize,
    u1: usize,
    u2: usize,
) -> Result<f64> {
    if !f.grid().same_nodes(grid) {
        return Err(Error::invalid(MODULE, "field is defined on a different grid"));
    }
    let x = grid.coords(node);
    let drift = problem.drift(&x, &problem.u1().points()[u1], &problem.u2().points()[u2]);
    let a = problem.diffusion(&x);
    Ok(Stencil::build(grid, node, &drift, &a)?.apply(f.values(), node))
}

/// `G[i][j] = L̄f(x, u₁ᵢ, u₂ⱼ) + h̄(x, u₁ᵢ, u₂ⱼ)` at `node`.
pub fn hamiltonian_matrix(
    problem: &GameProblem,
    grid: &Grid,
    f: &ValueField,
    node: usize,
) -> Result<Mat> {
    let (n1, n2) = (problem.u1().len(), problem.u2().len());
    let mut g = Mat::zeros(n1, n2);
    let x = grid.coords(node);
    for i in 0..n1 {
        for j in 0..n2 {
            g[(i, j)] = apply_generator(problem, grid, f, node, i, j)? + problem.payoff_at(&x, i, j);
        }
    }
    Ok(g)
}

/// Precomputed discretization of a game on a grid: one stencil and one
/// payoff value per (node, pure control pair). This is the controlled Markov
/// chain the solvers iterate on.
#[derive(Debug, Clone)]
pub struct DiscreteGame {
    grid: Grid,
    n1: usize,
    n2: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    payoff: Vec<f64>,
    max_weight_sum: f64,
}

impl DiscreteGame {
    pub fn new(problem: &GameProblem, grid: &Grid) -> Result<Self> {
        if problem.dim() != grid.dim() {
            return Err(Error::invalid(
                MODULE,
                format!("problem dimension {} differs from grid dimension {}", problem.dim(), grid.dim()),
            ));
        }
        let (n1, n2) = (problem.u1().len(), problem.u2().len());
        let pairs = n1 * n2;
        let per_node: Vec<Result<Vec<(Stencil, f64)>>> = (0..grid.len())
            .into_par_iter()
            .map(|node| {
                let x = grid.coords(node);
                problem.validate_at([x.as_slice()])?;
                let a = problem.diffusion(&x);
                check_dominance(grid, node, &a)?;
                if !grid.is_active(node) {
                    return Ok(Vec::new());
                }
                let mut out = Vec::with_capacity(pairs);
                for i in 0..n1 {
                    for j in 0..n2 {
                        let drift = problem.drift(&x, &problem.u1().points()[i], &problem.u2().points()[j]);
                        if drift.iter().any(|v| !v.is_finite()) {
                            return Err(Error::problem(MODULE, format!("non-finite drift at {x:?}")));
                        }
                        let st = Stencil::build(grid, node, &drift, &a)?;
                        out.push((st, problem.payoff_at(&x, i, j)));
                    }
                }
                Ok(out)
            })
            .collect();

        let mut offsets = Vec::with_capacity(grid.len() * pairs + 1);
        let mut entries = Vec::new();
        let mut payoff = Vec::with_capacity(grid.len() * pairs);
        let mut max_weight_sum: f64 = 0.0;
        offsets.push(0);
        for node_result in per_node {
            let node_data = node_result?;
            if node_data.is_empty() {
                for _ in 0..pairs {
                    offsets.push(entries.len());
                    payoff.push(0.0);
                }
                continue;
            }
            for (st, h) in node_data {
                max_weight_sum = max_weight_sum.max(st.weight_sum());
                entries.extend(st.entries.iter().map(|&(k, w)| (k as u32, w)));
                offsets.push(entries.len());
                payoff.push(h);
            }
        }
        Ok(Self {
            grid: *grid,
            n1,
            n2,
            offsets,
            entries,
            payoff,
            max_weight_sum,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn control_counts(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Largest off-diagonal weight sum over all nodes and control pairs.
    pub fn max_weight_sum(&self) -> f64 {
        self.max_weight_sum
    }

    pub fn cfl_limit(&self) -> f64 {
        Grid::cfl_limit(self.max_weight_sum)
    }

    fn pair_index(&self, node: usize, i: usize, j: usize) -> usize {
        node * self.n1 * self.n2 + i * self.n2 + j
    }

    /// Stencil entries for `(node, u₁ᵢ, u₂ⱼ)`; empty on Dirichlet boundary nodes.
    pub fn stencil(&self, node: usize, i: usize, j: usize) -> &[(u32, f64)] {
        let p = self.pair_index(node, i, j);
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn payoff(&self, node: usize, i: usize, j: usize) -> f64 {
        self.payoff[self.pair_index(node, i, j)]
    }

    pub fn generator(&self, f: &[f64], node: usize, i: usize, j: usize) -> f64 {
        let f0 = f[node];
        self.stencil(node, i, j)
            .iter()
            .map(|&(k, w)| w * (f[k as usize] - f0))
            .sum()
    }

    pub fn matrix(&self, f: &[f64], node: usize) -> Mat {
        Mat::from_fn(self.n1, self.n2, |i, j| self.generator(f, node, i, j) + self.payoff(node, i, j))
    }

    /// Game value of the per-node Hamiltonian.
    pub fn value(&self, f: &[f64], node: usize) -> Result<f64> {
        if self.n1 == 1 && self.n2 == 1 {
            return Ok(self.generator(f, node, 0, 0) + self.payoff(node, 0, 0));
        }
        matrix_game::game_value(&self.matrix(f, node)).map_err(|e| node_error(&self.grid, node, e))
    }

    pub fn solve_node(&self, f: &[f64], node: usize) -> Result<GameSolution> {
        matrix_game::solve_matrix_game(&self.matrix(f, node)).map_err(|e| node_error(&self.grid, node, e))
    }

    /// Game values at every active node (zero elsewhere).
    pub fn values(&self, f: &[f64]) -> Result<Vec<f64>> {
        let eval = |node: usize| {
            if self.grid.is_active(node) {
                self.value(f, node)
            } else {
                Ok(0.0)
            }
        };
        if self.grid.len() * self.n1 * self.n2 >= 4096 {
            (0..self.grid.len()).into_par_iter().map(eval).collect()
        } else {
            (0..self.grid.len()).map(eval).collect()
        }
    }
}

fn node_error(grid: &Grid, node: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput { message, .. } => Error::InvalidInput {
            module: "matrix_game",
            message: format!("at node {node} {:?}: {message}", grid.coords(node)),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ControlSet, Player};

    fn scalar_problem(b: f64, a: f64) -> GameProblem {
        GameProblem::new(
            1,
            ControlSet::trivial(Player::One),
            ControlSet::trivial(Player::Two),
            move |_, _, _, out| out[0] = b,
            move |_| Mat::from_rows(&[vec![a.sqrt()]]),
            |_, _, _| 0.0,
        )
        .unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(1, 1.0, 4, BoundaryPolicy::OneSided).is_err());
        assert!(Grid::new(1, 1.0, 1, BoundaryPolicy::OneSided).is_err());
        assert!(Grid::new(3, 1.0, 5, BoundaryPolicy::OneSided).is_err());
        let g = Grid::new(2, 2.0, 5, BoundaryPolicy::OneSided).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.coords(g.origin()), vec![0.0, 0.0]);
        assert_eq!(g.coords(1), vec![-1.0, -2.0]);
        assert_eq!(g.find_node(&[1.0, -1.0]), Some(g.node_at([3, 1])));
    }

    #[test]
    fn generator_kills_constants() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let p = crate::registry::ou_game_1d();
        let f = ValueField::constant(grid, 7.5);
        for node in 0..grid.len() {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(apply_generator(&p, &grid, &f, node, i, j).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn second_difference_exact_on_quadratics() {
        let grid = Grid::new(1, 2.0, 21, BoundaryPolicy::OneSided).unwrap();
        let p = scalar_problem(0.0, 2.0);
        let f = ValueField::from_fn(grid, |x| x[0] * x[0]).unwrap();
        for node in 1..grid.len() - 1 {
            let v = apply_generator(&p, &grid, &f, node, 0, 0).unwrap();
            assert!((v - 2.0).abs() < 1e-12, "node {node}: {v}");
        }
    }

    #[test]
    fn upwind_exact_on_affine() {
        for scheme in [DriftScheme::Upwind, DriftScheme::Hybrid] {
            let grid = Grid::new(1, 2.0, 21, BoundaryPolicy::OneSided)
                .unwrap()
                .with_scheme(scheme);
            let p = scalar_problem(1.0, 0.0);
            let f = ValueField::from_fn(grid, |x| x[0]).unwrap();
            for node in 1..grid.len() - 1 {
                let v = apply_generator(&p, &grid, &f, node, 0, 0).unwrap();
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_boundary_is_not_applicable() {
        let grid = Grid::new(1, 2.0, 21, BoundaryPolicy::DirichletZero).unwrap();
        let p = scalar_problem(1.0, 1.0);
        let f = ValueField::constant(grid, 0.0);
        assert!(matches!(
            apply_generator(&p, &grid, &f, 0, 0, 0),
            Err(Error::InvalidInput { .. })
        ));
    }

    #[test]
    fn one_sided_boundary_drops_outward_drift() {
        let grid = Grid::new(1, 1.0, 5, BoundaryPolicy::OneSided).unwrap();
        let outward = Stencil::build(&grid, grid.len() - 1, &[3.0], &Mat::identity(1)).unwrap();
        assert!(outward.entries().is_empty());
        let inward = Stencil::build(&grid, grid.len() - 1, &[-3.0], &Mat::identity(1)).unwrap();
        assert_eq!(inward.entries(), &[(grid.len() - 2, 3.0 / grid.spacing())]);
    }

    #[test]
    fn cross_stencil_is_exact_on_bilinear() {
        let grid = Grid::new(2, 2.0, 9, BoundaryPolicy::OneSided).unwrap();
        let a = Mat::from_rows(&[vec![2.0, 0.7], vec![0.7, 1.5]]);
        let f = ValueField::from_fn(grid, |x| x[0] * x[1] + x[0] * x[0] - 0.5 * x[1] * x[1]).unwrap();
        // ½ tr(a ∇²f) = ½(2·2 + 2·0.7·1 + 1.5·(−1))
        let expected = 0.5 * (2.0 * 2.0 + 2.0 * 0.7 - 1.5);
        for node in 0..grid.len() {
            if grid.is_boundary(node) {
                continue;
            }
            let st = Stencil::build(&grid, node, &[0.0, 0.0], &a).unwrap();
            assert!(st.entries().iter().all(|e| e.1 >= 0.0));
            assert!((st.apply(f.values(), node) - expected).abs() < 1e-12);
        }
        let negative = Mat::from_rows(&[vec![2.0, -0.7], vec![-0.7, 1.5]]);
        let st = Stencil::build(&grid, grid.origin(), &[0.0, 0.0], &negative).unwrap();
        let exp_neg = 0.5 * (2.0 * 2.0 - 2.0 * 0.7 - 1.5);
        assert!((st.apply(f.values(), grid.origin()) - exp_neg).abs() < 1e-12);
    }

    #[test]
    fn non_dominant_diffusion_rejected() {
        let grid = Grid::new(2, 2.0, 9, BoundaryPolicy::OneSided).unwrap();
        let a = Mat::from_rows(&[vec![1.0, 0.9], vec![0.9, 0.85]]);
        let err = Stencil::build(&grid, grid.origin(), &[0.0, 0.0], &a).unwrap_err();
        assert!(matches!(err, Error::Monotonicity { .. }));
    }

    #[test]
    fn hamiltonian_matrix_degenerate_cases() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let ou = crate::registry::ou1d();
        let f = ValueField::from_fn(grid, |x| x[0] * x[0] / 2.0).unwrap();
        let node = grid.find_node(&[1.0]).unwrap();
        let g = hamiltonian_matrix(&ou, &grid, &f, node).unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 1));
        let direct = apply_generator(&ou, &grid, &f, node, 0, 0).unwrap() + 1.0;
        assert!((g[(0, 0)] - direct).abs() < 1e-15);

        let game = crate::registry::ou_game_1d();
        let zero = ValueField::constant(grid, 0.0);
        let g = hamiltonian_matrix(&game, &grid, &zero, node).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g[(i, j)], game.payoff_at(&[1.0], i, j));
            }
        }
    }

    #[test]
    fn discrete_game_matches_direct_assembly() {
        let grid = Grid::new(1, 3.0, 31, BoundaryPolicy::OneSided).unwrap();
        let game = crate::registry::ou_game_1d();
        let dg = DiscreteGame::new(&game, &grid).unwrap();
        let f = ValueField::from_fn(grid, |x| (x[0] - 0.3).powi(2) + x[0].sin()).unwrap();
        for node in 0..grid.len() {
            let direct = hamiltonian_matrix(&game, &grid, &f, node).unwrap();
            let cached = dg.matrix(f.values(), node);
            for (a, b) in direct.as_slice().iter().zip(cached.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_roundtrip() {
        let grid = Grid::new(2, 1.0, 5, BoundaryPolicy::OneSided).unwrap();
        let f = ValueField::from_fn(grid, |x| x[0] * 0.1 + x[1] / 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        f.write_csv(&path).unwrap();
        let back = ValueField::read_csv(grid, &path).unwrap();
        assert_eq!(back.values(), f.values());
        assert!(f.to_csv().starts_with("x0,x1,value\n-1,-1,"));
    }

    #[test]
    fn interpolation_reproduces_affine() {
        let grid = Grid::new(2, 2.0, 9, BoundaryPolicy::OneSided).unwrap();
        let f = ValueField::from_fn(grid, |x| 1.0 + 2.0 * x[0] - x[1]).unwrap();
        for x in [[0.13, -1.7], [1.99, 0.5], [-2.0, 2.0]] {
            assert!((f.interpolate(&x) - (1.0 + 2.0 * x[0] - x[1])).abs() < 1e-12);
        }
    }
}
