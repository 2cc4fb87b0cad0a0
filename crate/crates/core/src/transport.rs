//! Discrete optimal transport for the cost `c = d²/2`: measures, cost
//! matrices, c-transforms, an exact network simplex, log-domain Sinkhorn,
//! Monge maps and displacement interpolation along gradient flows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geodesic::{
    descent_velocity, exp_map, flow_jacobian, hessian_endomorphism, CompiledPotential, DistanceSolver,
};
use crate::linalg::{generalized_eigenvalues, Vec2};
use crate::math;
use crate::metric::MetricSource;

/// Default support cap for the exact solver.
pub const DEFAULT_CAP: usize = 4096;

/// Which volume form a measure's density is taken against.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ReferenceVolume {
    /// The Riemannian volume of the metric in use.
    Metric,
    /// The volume of the metric mollified at scale `eps`.
    Smoothed { eps: f64 },
}

/// Finitely supported probability measure on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Vec2>,
    weights: Vec<f64>,
    /// Density against `reference` at each support point, for measures that
    /// discretize an absolutely continuous one.
    density: Option<Vec<f64>>,
    reference: ReferenceVolume,
}

impl DiscreteMeasure {
    /// Weights must be non-negative and sum to one within 1e−12 per
    /// thousand points (summation error grows with the count).
    pub fn new(points: Vec<Vec2>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("empty measure".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        let tol = 1e-12 * (1.0 + weights.len() as f64 / 1000.0);
        if math::abs(total - 1.0) > tol {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure {
            points,
            weights,
            density: None,
            reference: ReferenceVolume::Metric,
        })
    }

    /// Rescale non-negative masses to total one.
    pub fn normalized(points: Vec<Vec2>, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput("total mass must be positive and finite".into()));
        }
        let weights = masses.iter().map(|m| m / total).collect();
        Self::new(points, weights)
    }

    pub fn dirac(p: Vec2) -> Self {
        DiscreteMeasure {
            points: vec![p],
            weights: vec![1.0],
            density: None,
            reference: ReferenceVolume::Metric,
        }
    }

    pub fn uniform(points: Vec<Vec2>) -> Result<Self> {
        let n = points.len();
        Self::normalized(points, vec![1.0; n])
    }

    /// Discretize `density · dvol_g` on the nodes of an `n × n` grid, keeping
    /// nodes where the density is positive. The density is renormalized so
    /// that the grid quadrature has unit mass.
    pub fn on_grid(metric: &dyn MetricSource, n: usize, density: impl Fn(Vec2) -> f64) -> Result<Self> {
        let h = 1.0 / n as f64;
        let mut points = Vec::new();
        let mut dens = Vec::new();
        let mut masses = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let p = [i as f64 * h, j as f64 * h];
                let d = density(p);
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidInput(format!("density {d} at {p:?}")));
                }
                if d > 0.0 {
                    let vol = math::sqrt(metric.metric_at(p)?.det()) * h * h;
                    points.push(p);
                    dens.push(d);
                    masses.push(d * vol);
                }
            }
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("density vanishes on the grid".into()));
        }
        let mut m = Self::normalized(points, masses)?;
        m.density = Some(dens.iter().map(|d| d / total).collect());
        Ok(m)
    }

    pub fn with_density(mut self, density: Vec<f64>, reference: ReferenceVolume) -> Result<Self> {
        if density.len() != self.points.len() {
            return Err(Error::InvalidInput("density length differs from support".into()));
        }
        self.density = Some(density);
        self.reference = reference;
        Ok(self)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    pub fn reference(&self) -> ReferenceVolume {
        self.reference
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Dense `rows × cols` cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidInput("cost matrix size mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
        }
        Ok(CostMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values)
    }

    /// `c_ij = d(x_i, y_j)² / 2`.
    pub fn half_squared_distance(solver: &DistanceSolver<'_>, sources: &[Vec2], targets: &[Vec2]) -> Result<Self> {
        let mut values = Vec::with_capacity(sources.len() * targets.len());
        for x in sources {
            for y in targets {
                let d = solver.distance(*x, *y)?.value;
                values.push(0.5 * d * d);
            }
        }
        Self::new(sources.len(), targets.len(), values)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| math::abs(*v)).fold(0.0, math::max)
    }
}

/// `ψ^c(y_j) = min_i (c_ij − ψ_i)`, nudged down by roundoff where needed so
/// that `ψ_i + ψ^c_j ≤ c_ij` holds exactly in floating point.
pub fn c_transform(psi: &[f64], cost: &CostMatrix) -> Vec<f64> {
    assert_eq!(psi.len(), cost.rows, "potential length must equal cost rows");
    (0..cost.cols)
        .map(|j| {
            let mut m = (0..cost.rows)
                .map(|i| cost.get(i, j) - psi[i])
                .fold(f64::INFINITY, math::min);
            while let Some(i) = (0..cost.rows).find(|&i| psi[i] + m > cost.get(i, j)) {
                m = next_down(m.min(cost.get(i, j) - psi[i]));
            }
            m
        })
        .collect()
}

/// The transform in the other direction, `φ^c(x_i) = min_j (c_ij − φ_j)`.
pub fn c_transform_back(phi: &[f64], cost: &CostMatrix) -> Vec<f64> {
    assert_eq!(phi.len(), cost.cols, "potential length must equal cost columns");
    (0..cost.rows)
        .map(|i| {
            let mut m = (0..cost.cols)
                .map(|j| cost.get(i, j) - phi[j])
                .fold(f64::INFINITY, math::min);
            while let Some(j) = (0..cost.cols).find(|&j| phi[j] + m > cost.get(i, j)) {
                m = next_down(m.min(cost.get(i, j) - phi[j]));
            }
            m
        })
        .collect()
}

fn next_down(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityCheck {
    pub c_concave: bool,
    /// `max |ψ^{cc} − ψ|` over the source support.
    pub residual: f64,
}

/// `ψ` is c-concave on the support when `ψ^{cc} = ψ`; flagged within 1e−9.
pub fn is_c_concave(psi: &[f64], cost: &CostMatrix) -> ConcavityCheck {
    let psi_cc = c_transform_back(&c_transform(psi, cost), cost);
    let residual = psi
        .iter()
        .zip(&psi_cc)
        .map(|(a, b)| math::abs(a - b))
        .fold(0.0, math::max);
    ConcavityCheck {
        c_concave: residual <= 1e-9,
        residual,
    }
}

/// Sparse coupling `π(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// `(i, j, weight)` with positive weight, sorted by `(i, j)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `Σ π_ij c_ij`.
    pub cost: f64,
}

impl TransportPlan {
    fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>, cost: &CostMatrix) -> Self {
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by_key(|a| (a.0, a.1));
        let total = entries.iter().map(|&(i, j, w)| w * cost.get(i, j)).sum();
        TransportPlan {
            rows,
            cols,
            entries,
            cost: total,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.rows];
        for &(i, _, w) in &self.entries {
            r[i] += w;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.cols];
        for &(_, j, w) in &self.entries {
            c[j] += w;
        }
        c
    }

    /// Largest deviation of either marginal from the given weights.
    pub fn marginal_error(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(mu)
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, math::max);
        let c = self
            .col_sums()
            .iter()
            .zip(nu)
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, math::max);
        math::max(r, c)
    }
}

/// Kantorovich potentials: `psi` on the sources, `psi_c` on the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub psi: Vec<f64>,
    pub psi_c: Vec<f64>,
}

impl Potential {
    /// `Σ μ_i ψ_i + Σ ν_j ψ^c_j`.
    pub fn dual_value(&self, mu: &[f64], nu: &[f64]) -> f64 {
        self.psi.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>()
            + self.psi_c.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest violation of `ψ_i + ψ^c_j ≤ c_ij` (zero when feasible).
    pub fn max_violation(&self, cost: &CostMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.psi.iter().enumerate() {
            for (j, b) in self.psi_c.iter().enumerate() {
                worst = math::max(worst, a + b - cost.get(i, j));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    pub potential: Potential,
    pub dual_value: f64,
    pub duality_gap: f64,
    pub pivots: usize,
}

fn check_problem(mu: &[f64], nu: &[f64], cost: &CostMatrix, cap: usize) -> Result<()> {
    if mu.len() != cost.rows || nu.len() != cost.cols {
        return Err(Error::InvalidInput(format!(
            "cost is {}×{} but measures have {} and {} points",
            cost.rows,
            cost.cols,
            mu.len(),
            nu.len()
        )));
    }
    if mu.len() > cap || nu.len() > cap {
        return Err(Error::CapacityExceeded {
            sources: mu.len(),
            targets: nu.len(),
            cap,
        });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidInput("empty measure".into()));
    }
    if mu.iter().chain(nu).any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("negative or NaN weight".into()));
    }
    let (a, b): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if math::abs(a - b) > 1e-9 {
        return Err(Error::Infeasible(format!("total masses differ: {a} vs {b}")));
    }
    Ok(())
}

/// Spanning-tree basis of the transportation problem. Nodes `0..n` are
/// sources, `n..n+m` targets; every basic arc joins a source to a target.
struct Basis {
    n: usize,
    m: usize,
    arcs: Vec<(usize, usize)>,
    flow: Vec<f64>,
    adj: Vec<Vec<usize>>,
    parent_arc: Vec<usize>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Basis {
    /// North-west corner start: exactly `n + m − 1` arcs, some possibly with
    /// zero flow.
    fn north_west(mu: &[f64], nu: &[f64]) -> Self {
        let (n, m) = (mu.len(), nu.len());
        let mut arcs = Vec::with_capacity(n + m - 1);
        let mut flow = Vec::with_capacity(n + m - 1);
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (mu[0], nu[0]);
        loop {
            let f = math::max(math::min(ra, rb), 0.0);
            arcs.push((i, j));
            flow.push(f);
            if i == n - 1 && j == m - 1 {
                break;
            }
            if (ra <= rb && i < n - 1) || j == m - 1 {
                i += 1;
                rb -= f;
                ra = mu[i];
            } else {
                j += 1;
                ra -= f;
                rb = nu[j];
            }
        }
        let mut adj = vec![Vec::new(); n + m];
        for (k, &(i, j)) in arcs.iter().enumerate() {
            adj[i].push(k);
            adj[n + j].push(k);
        }
        Basis {
            n,
            m,
            arcs,
            flow,
            adj,
            parent_arc: vec![usize::MAX; n + m],
            parent: vec![usize::MAX; n + m],
            depth: vec![0; n + m],
            u: vec![0.0; n],
            v: vec![0.0; m],
        }
    }

    fn other(&self, arc: usize, node: usize) -> usize {
        let (i, j) = self.arcs[arc];
        if node == i {
            self.n + j
        } else {
            i
        }
    }

    /// Rebuild parents, depths and potentials `u_i + v_j = c_ij` on the tree.
    fn refresh(&mut self, cost: &CostMatrix) {
        let total = self.n + self.m;
        self.parent[0] = usize::MAX;
        self.parent_arc[0] = usize::MAX;
        self.depth[0] = 0;
        self.u[0] = 0.0;
        let mut seen = vec![false; total];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for idx in 0..self.adj[node].len() {
                let arc = self.adj[node][idx];
                let next = self.other(arc, node);
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                self.parent[next] = node;
                self.parent_arc[next] = arc;
                self.depth[next] = self.depth[node] + 1;
                let (i, j) = self.arcs[arc];
                if next >= self.n {
                    self.v[j] = cost.get(i, j) - self.u[i];
                } else {
                    self.u[i] = cost.get(i, j) - self.v[j];
                }
                stack.push(next);
            }
        }
    }

    /// Tree path between target `j` and source `i`, as arcs ordered from
    /// the target end.
    fn cycle_path(&self, i: usize, j: usize) -> Vec<usize> {
        let mut a = self.n + j;
        let mut b = i;
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] {
                from_a.push(self.parent_arc[a]);
                a = self.parent[a];
            } else {
                from_b.push(self.parent_arc[b]);
                b = self.parent[b];
            }
        }
        from_b.reverse();
        from_a.extend(from_b);
        from_a
    }

    fn replace(&mut self, leave: usize, i: usize, j: usize, flow: f64) {
        let (oi, oj) = self.arcs[leave];
        let n = self.n;
        self.adj[oi].retain(|&a| a != leave);
        self.adj[n + oj].retain(|&a| a != leave);
        self.arcs[leave] = (i, j);
        self.flow[leave] = flow;
        self.adj[i].push(leave);
        self.adj[n + j].push(leave);
    }
}

/// Exact optimal plan by the network simplex method on the transportation
/// problem, with block pricing. Potentials are `ψ = u` and `ψ^c` its exact
/// c-transform.
pub fn solve_exact(mu: &[f64], nu: &[f64], cost: &CostMatrix) -> Result<ExactSolution> {
    solve_exact_capped(mu, nu, cost, DEFAULT_CAP)
}

pub fn solve_exact_capped(mu: &[f64], nu: &[f64], cost: &CostMatrix, cap: usize) -> Result<ExactSolution> {
    check_problem(mu, nu, cost, cap)?;
    let (n, m) = (mu.len(), nu.len());
    let mut basis = Basis::north_west(mu, nu);
    let tol = 1e-13 * (1.0 + cost.max_abs());
    let cells = n * m;
    let block = math::max(math::sqrt(cells as f64), 16.0) as usize;
    let max_pivots = 50 * (n + m) * (1 + (math::ln((n + m) as f64) as usize)) + 1000;
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    loop {
        basis.refresh(cost);
        // Block pricing: most negative reduced cost within the first block
        // that has one, scanning cyclically.
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        while scanned < cells {
            let end = (scanned + block).min(cells) - scanned;
            for _ in 0..end {
                let (i, j) = (cursor / m, cursor % m);
                let r = cost.get(i, j) - basis.u[i] - basis.v[j];
                if r < -tol && best.is_none_or(|b| r < b.1) {
                    best = Some((cursor, r));
                }
                cursor = (cursor + 1) % cells;
            }
            scanned += end;
            if best.is_some() {
                break;
            }
        }
        let Some((cell, _)) = best else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NoConvergence {
                what: "network simplex".into(),
                residual: pivots as f64,
            });
        }
        let (i, j) = (cell / m, cell % m);
        let path = basis.cycle_path(i, j);
        // Signs alternate −, +, −, ... starting at the target end.
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &arc) in path.iter().enumerate() {
            if k % 2 == 0 && basis.flow[arc] < theta {
                theta = basis.flow[arc];
                leave = arc;
            }
        }
        for (k, &arc) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[arc] -= theta;
            } else {
                basis.flow[arc] += theta;
            }
        }
        basis.replace(leave, i, j, theta);
    }
    let entries: Vec<(usize, usize, f64)> = basis
        .arcs
        .iter()
        .zip(&basis.flow)
        .map(|(&(i, j), &f)| (i, j, math::max(f, 0.0)))
        .collect();
    let plan = TransportPlan::from_entries(n, m, entries, cost);
    let psi = basis.u.clone();
    let psi_c = c_transform(&psi, cost);
    let potential = Potential { psi, psi_c };
    let dual_value = potential.dual_value(mu, nu);
    Ok(ExactSolution {
        duality_gap: math::abs(dual_value - plan.cost),
        plan,
        potential,
        dual_value,
        pivots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    /// Log-domain dual potentials.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    /// Sum of absolute deviations of the row marginal after the last sweep.
    pub marginal_error: f64,
    pub converged: bool,
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, math::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + math::ln(vals.map(|v| math::exp(v - mx)).sum::<f64>())
}

/// Entropically regularized plan by log-domain Sinkhorn iterations, stopped
/// when the marginal violation is at most `1e−8` or after `max_iterations`.
pub fn solve_sinkhorn(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    reg: f64,
    max_iterations: usize,
) -> Result<SinkhornSolution> {
    check_problem(mu, nu, cost, usize::MAX)?;
    if !(reg > 0.0) {
        return Err(Error::InvalidInput(format!(
            "regularization must be positive, got {reg}"
        )));
    }
    let (n, m) = (mu.len(), nu.len());
    let log_mu: Vec<f64> = mu
        .iter()
        .map(|w| if *w > 0.0 { math::ln(*w) } else { f64::NEG_INFINITY })
        .collect();
    let log_nu: Vec<f64> = nu
        .iter()
        .map(|w| if *w > 0.0 { math::ln(*w) } else { f64::NEG_INFINITY })
        .collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        for i in 0..n {
            f[i] = -reg * log_sum_exp((0..m).map(|j| (g[j] - cost.get(i, j)) / reg + log_nu[j]));
        }
        for j in 0..m {
            g[j] = -reg * log_sum_exp((0..n).map(|i| (f[i] - cost.get(i, j)) / reg + log_mu[i]));
        }
        err = 0.0;
        for i in 0..n {
            if mu[i] == 0.0 {
                continue;
            }
            let row: f64 = (0..m)
                .map(|j| math::exp((f[i] + g[j] - cost.get(i, j)) / reg + log_mu[i] + log_nu[j]))
                .sum();
            err += math::abs(row - mu[i]);
        }
        if err <= 1e-8 {
            break;
        }
    }
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let w = math::exp((f[i] + g[j] - cost.get(i, j)) / reg + log_mu[i] + log_nu[j]);
            if w > 0.0 {
                entries.push((i, j, w));
            }
        }
    }
    Ok(SinkhornSolution {
        plan: TransportPlan::from_entries(n, m, entries, cost),
        f,
        g,
        iterations,
        marginal_error: err,
        converged: err <= 1e-8,
    })
}

/// `W₂(μ, ν) = √(2 · optimal cost)` for `c = d²/2`.
pub fn wasserstein2(mu: &DiscreteMeasure, nu: &DiscreteMeasure, solver: &DistanceSolver<'_>) -> Result<f64> {
    let cost = CostMatrix::half_squared_distance(solver, mu.points(), nu.points())?;
    let sol = solve_exact(mu.weights(), nu.weights(), &cost)?;
    Ok(math::sqrt(2.0 * math::max(sol.plan.cost, 0.0)))
}

/// `T(x) = exp_x(−∇ψ(x))` at each point, wrapped into the unit square.
pub fn monge_map(
    metric: &dyn MetricSource,
    psi: &CompiledPotential,
    points: &[Vec2],
    steps: usize,
) -> Result<Vec<Vec2>> {
    points
        .iter()
        .map(|&x| {
            let w = descent_velocity(metric, psi, x)?;
            let p = exp_map(metric, x, w, steps)?;
            Ok([math::modulo_one(p[0]), math::modulo_one(p[1])])
        })
        .collect()
}

/// Result of the gradient/Hessian smallness test for c-concavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallnessCheck {
    pub holds: bool,
    /// `sup |∇φ|_g` over the grid.
    pub grad_sup: f64,
    /// `min(ε / (3 K diam), C*)`, or `C*` when `K ≤ 0`.
    pub grad_bound: f64,
    /// Largest eigenvalue of `Hess φ` relative to `g` over the grid.
    pub hess_max: f64,
    pub hess_bound: f64,
}

/// Sufficient condition for c-concavity: `‖∇φ‖∞ ≤ min(ε/(3 K diam), C*)` and
/// `Hess φ ≤ (1 − ε) g`, checked at the nodes of an `n × n` grid. `k_upper`
/// is an upper sectional curvature bound and `diam` the diameter.
pub fn smallness_check(
    metric: &dyn MetricSource,
    phi: &CompiledPotential,
    eps: f64,
    c_star: Option<f64>,
    k_upper: f64,
    diam: f64,
    n: usize,
) -> Result<SmallnessCheck> {
    let c_star = c_star.ok_or_else(|| Error::InvalidInput("the gradient constant C* must be supplied".into()))?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1), got {eps}")));
    }
    let grad_bound = if k_upper > 0.0 {
        math::min(eps / (3.0 * k_upper * diam), c_star)
    } else {
        c_star
    };
    let h = 1.0 / n as f64;
    let mut grad_sup: f64 = 0.0;
    let mut hess_max = f64::NEG_INFINITY;
    for j in 0..n {
        for i in 0..n {
            let p = [i as f64 * h, j as f64 * h];
            let g = metric.metric_at(p)?;
            let w = descent_velocity(metric, phi, p)?;
            grad_sup = math::max(grad_sup, math::sqrt(g.quad(w)));
            // Lower the Hessian endomorphism to a symmetric bilinear form.
            let cov = g * hessian_endomorphism(metric, phi, p)?;
            let off = 0.5 * (cov.0[0][1] + cov.0[1][0]);
            let sym = crate::linalg::Mat2::symmetric(cov.0[0][0], off, cov.0[1][1]);
            hess_max = math::max(hess_max, generalized_eigenvalues(&sym, &g)[1]);
        }
    }
    let hess_bound = 1.0 - eps;
    Ok(SmallnessCheck {
        holds: grad_sup <= grad_bound && hess_max <= hess_bound,
        grad_sup,
        grad_bound,
        hess_max,
        hess_bound,
    })
}

/// One time slice `μ_t = (F_t)_# μ₀` of a displacement interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedMeasure {
    pub t: f64,
    pub measure: DiscreteMeasure,
    /// Riemannian log-Jacobian of `F_t` at each source point.
    pub log_jacobian: Vec<f64>,
    /// `Σ density · J_t · (source cell volume)`, which must stay 1.
    pub mass: f64,
}

/// Push a grid measure with density forward along `F_t(y) = exp_y(−t∇φ(y))`.
/// Densities follow the change of variables `ξ_t(F_t y) = ξ₀(y) / J_t(y)`.
pub fn displacement_interpolation(
    metric: &dyn MetricSource,
    phi: &CompiledPotential,
    mu0: &DiscreteMeasure,
    t_list: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<InterpolatedMeasure>> {
    let dens0 = mu0
        .density()
        .ok_or_else(|| Error::InvalidInput("displacement interpolation needs a density".into()))?;
    let mut order: Vec<usize> = (0..t_list.len()).collect();
    order.sort_by(|a, b| {
        t_list[*a]
            .partial_cmp(&t_list[*b])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let sorted: Vec<f64> = order.iter().map(|&k| t_list[k]).collect();
    let mut flows = Vec::with_capacity(mu0.len());
    for &y in mu0.points() {
        flows.push(flow_jacobian(metric, phi, y, &sorted, steps_per_unit)?);
    }
    let mut out = vec![None; t_list.len()];
    for (slot, &orig) in order.iter().enumerate() {
        let mut points = Vec::with_capacity(mu0.len());
        let mut density = Vec::with_capacity(mu0.len());
        let mut log_jac = Vec::with_capacity(mu0.len());
        let mut mass = 0.0;
        for (k, f) in flows.iter().enumerate() {
            let p = f.geodesic.positions[slot];
            let lj = f.log_det[slot];
            points.push([math::modulo_one(p[0]), math::modulo_one(p[1])]);
            let d = dens0[k] / math::exp(lj);
            density.push(d);
            log_jac.push(lj);
            // Source cell volume is weight / density at t = 0.
            let cell = if dens0[k] > 0.0 {
                mu0.weights()[k] / dens0[k]
            } else {
                0.0
            };
            mass += d * math::exp(lj) * cell;
        }
        let measure = DiscreteMeasure {
            points,
            weights: mu0.weights().to_vec(),
            density: Some(density),
            reference: mu0.reference(),
        };
        out[orig] = Some(InterpolatedMeasure {
            t: t_list[orig],
            measure,
            log_jacobian: log_jac,
            mass,
        });
    }
    let out: Vec<InterpolatedMeasure> = out.into_iter().map(|m| m.expect("every slot filled")).collect();
    if let Some(bad) = out.iter().find(|m| math::abs(m.mass - 1.0) > 1e-6) {
        return Err(Error::InvalidInput(format!(
            "mass {} at t = {} after pushforward",
            bad.mass, bad.t
        )));
    }
    Ok(out)
}

/// `W₂²` from the Lagrangian identity `∫ |∇φ|²_g dμ₀`.
pub fn lagrangian_w2_squared(metric: &dyn MetricSource, phi: &CompiledPotential, mu0: &DiscreteMeasure) -> Result<f64> {
    let mut acc = 0.0;
    for (p, w) in mu0.points().iter().zip(mu0.weights()) {
        let v = descent_velocity(metric, phi, *p)?;
        acc += w * metric.metric_at(*p)?.quad(v);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::ShootingOptions;
    use crate::linalg::periodic_distance;
    use crate::metric::Flat;

    fn flat_cost(xs: &[Vec2], ys: &[Vec2]) -> CostMatrix {
        CostMatrix::from_fn(xs.len(), ys.len(), |i, j| {
            let d = periodic_distance(xs[i], ys[j]);
            0.5 * d * d
        })
        .unwrap()
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![[0.0, 0.0]], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![[0.0, 0.0], [0.5, 0.5]], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::uniform(vec![[0.0, 0.0], [0.5, 0.5]]).is_ok());
    }

    #[test]
    fn zero_potential_transform() {
        let pts = [[0.1, 0.1], [0.4, 0.7], [0.8, 0.3]];
        let c = flat_cost(&pts, &pts);
        assert!(c_transform(&[0.0; 3], &c).iter().all(|v| *v == 0.0));
        let chk = is_c_concave(&[0.0; 3], &c);
        assert!(chk.c_concave && chk.residual == 0.0);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let pts = vec![[0.1, 0.1], [0.4, 0.7], [0.8, 0.3], [0.6, 0.6]];
        let mu = [0.1, 0.2, 0.3, 0.4];
        let c = flat_cost(&pts, &pts);
        let sol = solve_exact(&mu, &mu, &c).unwrap();
        assert!(sol.plan.cost.abs() < 1e-15);
        for &(i, j, _) in &sol.plan.entries {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn dirac_pair() {
        let c = flat_cost(&[[0.1, 0.2]], &[[0.4, 0.6]]);
        let sol = solve_exact(&[1.0], &[1.0], &c).unwrap();
        assert!((sol.plan.cost - 0.125).abs() < 1e-15);
        let s = solve_sinkhorn(&[1.0], &[1.0], &c, 0.1, 100).unwrap();
        assert!((s.plan.cost - 0.125).abs() < 1e-15);
        let solver = DistanceSolver::new(&Flat, ShootingOptions::default()).unwrap();
        let w = wasserstein2(
            &DiscreteMeasure::dirac([0.1, 0.2]),
            &DiscreteMeasure::dirac([0.4, 0.6]),
            &solver,
        )
        .unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors_on_mismatch_and_cap() {
        let c = flat_cost(&[[0.0, 0.0]], &[[0.5, 0.5]]);
        assert!(matches!(solve_exact(&[1.0], &[0.5], &c), Err(Error::Infeasible(_))));
        let c = flat_cost(&[[0.0, 0.0], [0.1, 0.0]], &[[0.5, 0.5]]);
        assert!(matches!(
            solve_exact_capped(&[0.5, 0.5], &[1.0], &c, 1),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn translation_is_optimal_on_flat_torus() {
        let pts: Vec<Vec2> = (0..5)
            .flat_map(|i| (0..5).map(move |j| [0.3 + 0.02 * i as f64, 0.4 + 0.02 * j as f64]))
            .collect();
        let shift = [0.07, -0.03];
        let moved: Vec<Vec2> = pts.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let mu = DiscreteMeasure::uniform(pts.clone()).unwrap();
        let nu = DiscreteMeasure::uniform(moved).unwrap();
        let solver = DistanceSolver::new(&Flat, ShootingOptions::default()).unwrap();
        let w = wasserstein2(&mu, &nu, &solver).unwrap();
        assert!((w - (0.07f64.powi(2) + 0.03f64.powi(2)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flat_translation_interpolation() {
        let phi = CompiledPotential::new(&crate::expr::FieldExpr::parse("-0.05*x - 0.02*y").unwrap());
        let mu0 = DiscreteMeasure::on_grid(&Flat, 32, |p| {
            let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
            if r2 < 0.01 {
                1.0 - r2 / 0.01
            } else {
                0.0
            }
        })
        .unwrap();
        let fam = displacement_interpolation(&Flat, &phi, &mu0, &[0.0, 0.5, 1.0], 32).unwrap();
        assert_eq!(fam[0].measure.points(), mu0.points());
        for m in &fam {
            assert!((m.mass - 1.0).abs() < 1e-12);
            for (a, b) in m.measure.density().unwrap().iter().zip(mu0.density().unwrap()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let p = fam[2].measure.points()[0];
        let q = mu0.points()[0];
        assert!((p[0] - q[0] - 0.05).abs() < 1e-12 && (p[1] - q[1] - 0.02).abs() < 1e-12);
        let w2 = lagrangian_w2_squared(&Flat, &phi, &mu0).unwrap();
        assert!((w2 - (0.05f64.powi(2) + 0.02f64.powi(2))).abs() < 1e-15);
    }

    #[test]
    fn smallness_check_basics() {
        let zero = CompiledPotential::new(&crate::expr::FieldExpr::constant(0.0));
        let r = smallness_check(&Flat, &zero, 0.05, Some(1.0), 0.0, 0.7, 16).unwrap();
        assert!(r.holds);
        assert!(smallness_check(&Flat, &zero, 0.05, None, 0.0, 0.7, 16).is_err());
        // Hessian eigenvalue 0.9 under the flat metric.
        let phi = CompiledPotential::new(&crate::expr::FieldExpr::parse("0.9/(8*pi^2)*(1 - cos(2*pi*x))*2").unwrap());
        let r = smallness_check(&Flat, &phi, 0.05, Some(10.0), 0.0, 0.7, 64).unwrap();
        assert!((r.hess_max - 0.9).abs() < 1e-12 && r.holds);
    }
}
