//! Geodesic flow with its linearization, exponential and logarithm maps,
//! Riemannian distance on the torus, flow Jacobians of gradient flows, and
//! the Riccati comparison envelopes.
//!
//! Trajectories live in the universal cover: coordinates are never wrapped
//! during integration, so a winding class is just a lattice shift of the
//! target.

use alloc::collections::BinaryHeap;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::curvature::{Christoffel, PointGeometry};
use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Program};
use crate::linalg::{mat4_blocks, mat4_identity, norm, orthonormal_frame, periodic_delta, sub, Mat2, Mat4, Vec2};
use crate::math;
use crate::metric::{MetricModel, MetricSource, SmoothedMetric};

pub const MIN_STEPS: usize = 16;
pub const DEFAULT_STEPS: usize = 256;

/// Trajectory of `γ̈^k + Γ^k_ij γ̇^i γ̇^j = 0` from `γ(0) = y`, `γ̇(0) = w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSolution {
    pub y: Vec2,
    pub w: Vec2,
    pub times: Vec<f64>,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    /// `∂(γ, γ̇)(t) / ∂(y, w)`, rows and columns ordered (x, y, ẋ, ẏ).
    pub variation: Vec<Mat4>,
    /// Parallel g-orthonormal frame; columns are the frame vectors.
    pub frames: Vec<Mat2>,
    /// `g(γ̇, γ̇)` at each time.
    pub energy: Vec<f64>,
}

impl GeodesicSolution {
    /// `∂γ(t)/∂y` with `w` held fixed; the identity at `t = 0`.
    pub fn jacobi(&self, k: usize) -> Mat2 {
        mat4_blocks(&self.variation[k]).0
    }

    /// `∂γ(t)/∂w`.
    pub fn velocity_jacobian(&self, k: usize) -> Mat2 {
        mat4_blocks(&self.variation[k]).1
    }

    pub fn end(&self) -> Vec2 {
        *self.positions.last().expect("non-empty trajectory")
    }

    pub fn end_velocity(&self) -> Vec2 {
        *self.velocities.last().expect("non-empty trajectory")
    }

    /// Largest relative deviation of the energy from its initial value
    /// (absolute when the initial energy vanishes).
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = if e0 > 0.0 { e0 } else { 1.0 };
        self.energy
            .iter()
            .map(|e| math::abs(e - e0) / scale)
            .fold(0.0, math::max)
    }

    /// Length of the curve on `[0, t_last]`, from the conserved speed.
    pub fn length(&self) -> f64 {
        let t = self.times.last().copied().unwrap_or(0.0) - self.times[0];
        math::sqrt(self.energy[0]) * t
    }
}

#[derive(Clone, Copy)]
struct State {
    p: Vec2,
    v: Vec2,
    phi: Mat4,
    frame: Mat2,
}

impl State {
    fn start(y: Vec2, w: Vec2, frame: Mat2) -> Self {
        State {
            p: y,
            v: w,
            phi: mat4_identity(),
            frame,
        }
    }

    fn axpy(&self, h: f64, d: &State) -> State {
        let mut out = *self;
        for i in 0..2 {
            out.p[i] += h * d.p[i];
            out.v[i] += h * d.v[i];
            for j in 0..2 {
                out.frame.0[i][j] += h * d.frame.0[i][j];
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                out.phi[i][j] += h * d.phi[i][j];
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
            && self.phi.iter().flatten().all(|x| x.is_finite())
            && self.frame.is_finite()
    }
}

struct Connection {
    g: Mat2,
    gamma: Christoffel,
    dgamma: [Christoffel; 2],
}

fn connection(metric: &dyn MetricSource, p: Vec2) -> Result<Connection> {
    if metric.is_flat() {
        return Ok(Connection {
            g: Mat2::IDENTITY,
            gamma: [[[0.0; 2]; 2]; 2],
            dgamma: [[[[0.0; 2]; 2]; 2]; 2],
        });
    }
    let geo = PointGeometry::from_jet(&metric.jet(p)?)?;
    Ok(Connection {
        g: geo.g,
        gamma: geo.gamma,
        dgamma: geo.dgamma,
    })
}

/// Right-hand side of the coupled geodesic, variational and parallel
/// transport system, and the metric at the current point.
fn deriv(metric: &dyn MetricSource, s: &State) -> Result<(State, Mat2)> {
    let c = connection(metric, s.p)?;
    let v = s.v;
    let mut acc = [0.0; 2];
    // Linearization blocks: δv̇ = mx δp + mv δv.
    let mut mx = Mat2::ZERO;
    let mut mv = Mat2::ZERO;
    let mut frame_dot = Mat2::ZERO;
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let q = v[i] * v[j];
                acc[k] -= c.gamma[k][i][j] * q;
                for l in 0..2 {
                    mx.0[k][l] -= c.dgamma[l][k][i][j] * q;
                }
                mv.0[k][j] -= 2.0 * c.gamma[k][i][j] * v[i];
                for col in 0..2 {
                    frame_dot.0[k][col] -= c.gamma[k][i][j] * v[i] * s.frame.0[j][col];
                }
            }
        }
    }
    let mut phi_dot = [[0.0; 4]; 4];
    for col in 0..4 {
        for k in 0..2 {
            phi_dot[k][col] = s.phi[2 + k][col];
            phi_dot[2 + k][col] = mx.0[k][0] * s.phi[0][col]
                + mx.0[k][1] * s.phi[1][col]
                + mv.0[k][0] * s.phi[2][col]
                + mv.0[k][1] * s.phi[3][col];
        }
    }
    Ok((
        State {
            p: v,
            v: acc,
            phi: phi_dot,
            frame: frame_dot,
        },
        c.g,
    ))
}

fn rk4_step(metric: &dyn MetricSource, s: &State, h: f64) -> Result<(State, Mat2)> {
    let (k1, g) = deriv(metric, s)?;
    let (k2, _) = deriv(metric, &s.axpy(0.5 * h, &k1))?;
    let (k3, _) = deriv(metric, &s.axpy(0.5 * h, &k2))?;
    let (k4, _) = deriv(metric, &s.axpy(h, &k3))?;
    let mut out = s.axpy(h / 6.0, &k1);
    out = out.axpy(h / 3.0, &k2);
    out = out.axpy(h / 3.0, &k3);
    out = out.axpy(h / 6.0, &k4);
    Ok((out, g))
}

fn initial_frame(metric: &dyn MetricSource, y: Vec2) -> Result<Mat2> {
    let g = metric.metric_at(y)?;
    if !(g.det() > 0.0 && g.0[0][0] > 0.0) {
        return Err(Error::Singular {
            what: "metric at geodesic base point".into(),
        });
    }
    Ok(orthonormal_frame(&g))
}

/// Integrate from `t = 0` and record the state at each entry of `times`
/// (non-decreasing, starting at 0 or later) using `steps_per_unit` RK4
/// steps per unit time.
pub fn integrate_at(
    metric: &dyn MetricSource,
    y: Vec2,
    w: Vec2,
    times: &[f64],
    steps_per_unit: usize,
) -> Result<GeodesicSolution> {
    if steps_per_unit < MIN_STEPS {
        return Err(Error::InvalidInput(alloc::format!(
            "at least {MIN_STEPS} steps per unit time required, got {steps_per_unit}"
        )));
    }
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidInput(
            "times must be non-negative and non-decreasing".into(),
        ));
    }
    let mut s = State::start(y, w, initial_frame(metric, y)?);
    let mut t = 0.0;
    let mut sol = GeodesicSolution {
        y,
        w,
        times: Vec::with_capacity(times.len()),
        positions: Vec::with_capacity(times.len()),
        velocities: Vec::with_capacity(times.len()),
        variation: Vec::with_capacity(times.len()),
        frames: Vec::with_capacity(times.len()),
        energy: Vec::with_capacity(times.len()),
    };
    for &target in times {
        let span = target - t;
        let n = if span > 0.0 {
            let n = math::ceil(span * steps_per_unit as f64 - 1e-9) as usize;
            n.max(1)
        } else {
            0
        };
        for _ in 0..n {
            let h = span / n as f64;
            s = rk4_step(metric, &s, h)?.0;
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "geodesic".into(),
                    t,
                });
            }
        }
        t = target;
        let g = if metric.is_flat() {
            Mat2::IDENTITY
        } else {
            metric.metric_at(s.p)?
        };
        sol.times.push(t);
        sol.positions.push(s.p);
        sol.velocities.push(s.v);
        sol.variation.push(s.phi);
        sol.frames.push(s.frame);
        sol.energy.push(g.quad(s.v));
    }
    Ok(sol)
}

/// Geodesic on `[0, 1]` sampled at the `steps + 1` RK4 nodes.
pub fn integrate_geodesic(metric: &dyn MetricSource, y: Vec2, w: Vec2, steps: usize) -> Result<GeodesicSolution> {
    if steps < MIN_STEPS {
        return Err(Error::InvalidInput(alloc::format!(
            "at least {MIN_STEPS} steps required, got {steps}"
        )));
    }
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    integrate_at(metric, y, w, &times, steps)
}

/// End state only, without storing the trajectory.
fn shoot_once(metric: &dyn MetricSource, y: Vec2, w: Vec2, steps: usize) -> Result<State> {
    if metric.is_flat() {
        let mut s = State::start(y, w, Mat2::IDENTITY);
        s.p = [y[0] + w[0], y[1] + w[1]];
        s.phi[0][2] = 1.0;
        s.phi[1][3] = 1.0;
        return Ok(s);
    }
    let mut s = State::start(y, w, Mat2::IDENTITY);
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        s = rk4_step(metric, &s, h)?.0;
        if !s.is_finite() {
            return Err(Error::NonFinite {
                what: "geodesic".into(),
                t: k as f64 * h,
            });
        }
    }
    Ok(s)
}

/// `γ(1)` for the geodesic with `γ(0) = y`, `γ̇(0) = v`, in cover coordinates.
pub fn exp_map(metric: &dyn MetricSource, y: Vec2, v: Vec2, steps: usize) -> Result<Vec2> {
    if steps < MIN_STEPS {
        return Err(Error::InvalidInput(alloc::format!(
            "at least {MIN_STEPS} steps required"
        )));
    }
    Ok(shoot_once(metric, y, v, steps)?.p)
}

/// Settings for the shooting solver behind `log_map` and `distance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    pub steps: usize,
    pub max_iterations: usize,
    /// Accepted end-point residual.
    pub tolerance: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            steps: DEFAULT_STEPS,
            max_iterations: 50,
            tolerance: 1e-9,
        }
    }
}

/// A converged shot from `y` to a lifted target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shot {
    pub velocity: Vec2,
    pub end_velocity: Vec2,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Gauss–Newton on `v ↦ exp_y(v) − target` with the variational
/// Jacobian `∂γ(1)/∂w`.
pub fn shoot(metric: &dyn MetricSource, y: Vec2, target: Vec2, v0: Vec2, opts: &ShootingOptions) -> Result<Shot> {
    if opts.steps < MIN_STEPS {
        return Err(Error::InvalidInput(alloc::format!(
            "at least {MIN_STEPS} steps required"
        )));
    }
    let mut v = v0;
    let mut s = shoot_once(metric, y, v, opts.steps)?;
    let mut res = norm(sub(s.p, target));
    let mut iterations = 0;
    while iterations < opts.max_iterations && res > 1e-15 {
        iterations += 1;
        let r = sub(s.p, target);
        let jac = mat4_blocks(&s.phi).1;
        let inv = jac.inverse().ok_or_else(|| Error::NoConvergence {
            what: "log_map (conjugate point)".into(),
            residual: res,
        })?;
        let dv = inv.apply(r);
        let mut lam = 1.0;
        let mut accepted = false;
        while lam > 1e-6 {
            let cand = [v[0] - lam * dv[0], v[1] - lam * dv[1]];
            if let Ok(cs) = shoot_once(metric, y, cand, opts.steps) {
                let cres = norm(sub(cs.p, target));
                if cres < res {
                    v = cand;
                    s = cs;
                    res = cres;
                    accepted = true;
                    break;
                }
            }
            if res < 1e-11 {
                // Already at roundoff; a failed full step means no progress is possible.
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(res <= opts.tolerance) {
        return Err(Error::NoConvergence {
            what: "log_map".into(),
            residual: res,
        });
    }
    Ok(Shot {
        velocity: v,
        end_velocity: s.v,
        residual: res,
        iterations,
    })
}

/// Initial velocity of the geodesic from `y` to `x` in the winding class of
/// the shortest flat displacement.
pub fn log_map(metric: &dyn MetricSource, y: Vec2, x: Vec2, opts: &ShootingOptions) -> Result<Vec2> {
    let d = periodic_delta(y, x);
    if metric.is_flat() {
        return Ok(d);
    }
    Ok(shoot(metric, y, [y[0] + d[0], y[1] + d[1]], d, opts)?.velocity)
}

/// How a distance value was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMethod {
    /// Converged shooting in the winding class `(kx, ky)` relative to the
    /// shortest flat displacement.
    Shooting { class: [i8; 2] },
    /// Shortest path on a 16-neighbour grid graph with the given spacing;
    /// accurate only to a few percent.
    Graph { spacing: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub method: DistanceMethod,
    /// `γ̇(0)` and `γ̇(1)` of the minimizing geodesic (shooting only).
    pub start_velocity: Option<Vec2>,
    pub end_velocity: Option<Vec2>,
}

impl Distance {
    pub fn is_exact(&self) -> bool {
        matches!(self.method, DistanceMethod::Shooting { .. })
    }
}

/// Distance computations against one metric, with the eigenvalue band used
/// to prune winding classes.
pub struct DistanceSolver<'a> {
    metric: &'a dyn MetricSource,
    opts: ShootingOptions,
    /// Square roots of the smallest and largest metric eigenvalues seen on a
    /// sample grid.
    speed_band: (f64, f64),
    graph_resolution: usize,
}

impl<'a> DistanceSolver<'a> {
    pub fn new(metric: &'a dyn MetricSource, opts: ShootingOptions) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        if metric.is_flat() {
            lo = 1.0;
            hi = 1.0;
        } else {
            let m = 32;
            for j in 0..m {
                for i in 0..m {
                    let g = metric.metric_at([i as f64 / m as f64, j as f64 / m as f64])?;
                    let ev = g.sym_eigenvalues();
                    if !(ev[0] > 0.0) {
                        return Err(Error::Singular {
                            what: "metric sample".into(),
                        });
                    }
                    lo = math::min(lo, ev[0]);
                    hi = math::max(hi, ev[1]);
                }
            }
            lo = math::sqrt(lo);
            hi = math::sqrt(hi);
        }
        Ok(DistanceSolver {
            metric,
            opts,
            speed_band: (lo, hi),
            graph_resolution: 64,
        })
    }

    pub fn with_graph_resolution(mut self, m: usize) -> Self {
        self.graph_resolution = m.max(8);
        self
    }

    pub fn speed_band(&self) -> (f64, f64) {
        self.speed_band
    }

    pub fn options(&self) -> &ShootingOptions {
        &self.opts
    }

    /// Minimizing geodesic from `y` to `x` over the nine winding classes
    /// around the shortest flat displacement, falling back to a graph
    /// estimate when no class converges.
    pub fn distance(&self, y: Vec2, x: Vec2) -> Result<Distance> {
        let d0 = periodic_delta(y, x);
        if self.metric.is_flat() {
            return Ok(Distance {
                value: norm(d0),
                method: DistanceMethod::Shooting { class: [0, 0] },
                start_velocity: Some(d0),
                end_velocity: Some(d0),
            });
        }
        if norm(d0) == 0.0 {
            return Ok(Distance {
                value: 0.0,
                method: DistanceMethod::Shooting { class: [0, 0] },
                start_velocity: Some([0.0, 0.0]),
                end_velocity: Some([0.0, 0.0]),
            });
        }
        let mut classes: Vec<([i8; 2], Vec2)> = Vec::with_capacity(9);
        for ky in -1i8..=1 {
            for kx in -1i8..=1 {
                classes.push(([kx, ky], [d0[0] + kx as f64, d0[1] + ky as f64]));
            }
        }
        classes.sort_by(|a, b| norm(a.1).partial_cmp(&norm(b.1)).unwrap_or(Ordering::Equal));
        let g_y = self.metric.metric_at(y)?;
        let mut best: Option<Distance> = None;
        // Margin on the sampled band, which is not a rigorous bound between samples.
        let lower = 0.95 * self.speed_band.0;
        for (class, disp) in classes {
            if let Some(b) = &best {
                if lower * norm(disp) >= b.value {
                    continue;
                }
            }
            let target = [y[0] + disp[0], y[1] + disp[1]];
            let Ok(shot) = shoot(self.metric, y, target, disp, &self.opts) else {
                continue;
            };
            let len = math::sqrt(g_y.quad(shot.velocity));
            if best.as_ref().is_none_or(|b| len < b.value) {
                best = Some(Distance {
                    value: len,
                    method: DistanceMethod::Shooting { class },
                    start_velocity: Some(shot.velocity),
                    end_velocity: Some(shot.end_velocity),
                });
            }
        }
        match best {
            Some(b) => Ok(b),
            None => Ok(Distance {
                value: graph_distance(self.metric, y, x, self.graph_resolution)?,
                method: DistanceMethod::Graph {
                    spacing: 1.0 / self.graph_resolution as f64,
                },
                start_velocity: None,
                end_velocity: None,
            }),
        }
    }

    /// Gradient of `x ↦ d²(x, y)/2`: the final velocity of the minimizing
    /// geodesic from `y` to `x`.
    pub fn grad_half_dist_sq(&self, y: Vec2, x: Vec2) -> Result<Vec2> {
        let d = self.distance(y, x)?;
        d.end_velocity.ok_or_else(|| Error::NoConvergence {
            what: "geodesic shooting".into(),
            residual: f64::NAN,
        })
    }
}

pub fn distance(metric: &dyn MetricSource, x: Vec2, y: Vec2) -> Result<f64> {
    Ok(DistanceSolver::new(metric, ShootingOptions::default())?
        .distance(x, y)?
        .value)
}

pub fn grad_half_dist_sq(metric: &dyn MetricSource, y: Vec2, x: Vec2) -> Result<Vec2> {
    DistanceSolver::new(metric, ShootingOptions::default())?.grad_half_dist_sq(y, x)
}

/// Symmetric matrix of pairwise distances, row-major, and the number of
/// entries that needed the graph fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
    pub graph_fallbacks: usize,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, math::max)
    }

    /// Assemble from upper-triangle entries `(i, j, distance)`, `i < j`.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize, Distance)>) -> Self {
        let mut values = vec![0.0; n * n];
        let mut graph_fallbacks = 0;
        for (i, j, d) in pairs {
            values[i * n + j] = d.value;
            values[j * n + i] = d.value;
            if !d.is_exact() {
                graph_fallbacks += 1;
            }
        }
        DistanceMatrix {
            n,
            values,
            graph_fallbacks,
        }
    }
}

pub fn distance_matrix(metric: &dyn MetricSource, points: &[Vec2], opts: ShootingOptions) -> Result<DistanceMatrix> {
    let solver = DistanceSolver::new(metric, opts)?;
    let n = points.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j, solver.distance(points[i], points[j])?));
        }
    }
    Ok(DistanceMatrix::from_pairs(n, pairs))
}

#[derive(PartialEq)]
struct Node(f64, usize);

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties by index for determinism.
        other
            .0
            .partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then(other.1.cmp(&self.1))
    }
}

/// Dijkstra on an `m × m` periodic grid with the 16 neighbours
/// `(±1,0), (0,±1), (±1,±1), (±1,±2), (±2,±1)`; edge lengths by the
/// midpoint rule. End points snap to their nearest nodes.
pub fn graph_distance(metric: &dyn MetricSource, y: Vec2, x: Vec2, m: usize) -> Result<f64> {
    const OFFSETS: [(i32, i32); 16] = [
        (1, 0),
        (-1, 0),
        (0, 1),
        (0, -1),
        (1, 1),
        (1, -1),
        (-1, 1),
        (-1, -1),
        (1, 2),
        (1, -2),
        (-1, 2),
        (-1, -2),
        (2, 1),
        (2, -1),
        (-2, 1),
        (-2, -1),
    ];
    let h = 1.0 / m as f64;
    let snap = |p: Vec2| -> usize {
        let i = (math::floor(math::modulo_one(p[0]) * m as f64 + 0.5) as usize) % m;
        let j = (math::floor(math::modulo_one(p[1]) * m as f64 + 0.5) as usize) % m;
        j * m + i
    };
    let (src, dst) = (snap(y), snap(x));
    let mut dist = vec![f64::INFINITY; m * m];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Node(0.0, src));
    while let Some(Node(d, u)) = heap.pop() {
        if u == dst {
            return Ok(d);
        }
        if d > dist[u] {
            continue;
        }
        let (ui, uj) = ((u % m) as i32, (u / m) as i32);
        for (di, dj) in OFFSETS {
            let step = [di as f64 * h, dj as f64 * h];
            let mid = [(ui as f64 + 0.5 * di as f64) * h, (uj as f64 + 0.5 * dj as f64) * h];
            let len = math::sqrt(metric.metric_at(mid)?.quad(step));
            let vi = (ui + di).rem_euclid(m as i32) as usize;
            let vj = (uj + dj).rem_euclid(m as i32) as usize;
            let v = vj * m + vi;
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Node(nd, v));
            }
        }
    }
    Ok(dist[dst])
}

/// Jacobian of `F_t(y) = exp_y(−t ∇φ(y))` along the flow line from `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowJacobian {
    pub geodesic: GeodesicSolution,
    /// `DF_t(y)` in coordinates.
    pub jacobians: Vec<Mat2>,
    /// Riemannian log-determinant
    /// `log det DF_t + ½ log det g(F_t y) − ½ log det g(y)`.
    pub log_det: Vec<f64>,
}

impl FlowJacobian {
    pub fn times(&self) -> &[f64] {
        &self.geodesic.times
    }

    /// `DF_t` in the parallel orthonormal frames at `y` and `F_t(y)`.
    pub fn frame_jacobian(&self, k: usize) -> Mat2 {
        let e = self.geodesic.frames[k];
        let e0 = self.geodesic.frames[0];
        e.inverse().expect("frame is invertible") * self.jacobians[k] * e0
    }
}

/// A scalar potential with its coordinate gradient and Hessian compiled for
/// repeated point evaluation.
#[derive(Clone)]
pub struct CompiledPotential {
    expr: FieldExpr,
    program: Arc<Program>,
}

impl CompiledPotential {
    pub fn new(phi: &FieldExpr) -> Self {
        let (dx, dy) = (phi.dx(), phi.dy());
        let (dxx, dxy, dyy) = (dx.dx(), dx.dy(), dy.dy());
        let program = Program::new(&[phi, &dx, &dy, &dxx, &dxy, &dyy]);
        CompiledPotential {
            expr: phi.clone(),
            program: Arc::new(program),
        }
    }

    pub fn expr(&self) -> &FieldExpr {
        &self.expr
    }

    /// Value, coordinate gradient and coordinate Hessian at `p`.
    pub fn eval(&self, p: Vec2) -> Result<(f64, Vec2, Mat2)> {
        let mut scratch = self.program.scratch();
        let mut out = [0.0; 6];
        self.program.eval_into(p[0], p[1], &mut scratch, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                expr: self.expr.to_string(),
                x: p[0],
                y: p[1],
            });
        }
        Ok((out[0], [out[1], out[2]], Mat2::symmetric(out[3], out[4], out[5])))
    }
}

impl core::fmt::Debug for CompiledPotential {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "CompiledPotential({})", self.expr)
    }
}

/// The velocity field `w = −g⁻¹ dφ` and its coordinate derivative at `p`.
fn gradient_flow_data(metric: &dyn MetricSource, phi: &CompiledPotential, p: Vec2) -> Result<(Vec2, Mat2)> {
    let jet = if metric.is_flat() {
        crate::metric::MetricJet::FLAT
    } else {
        metric.jet(p)?
    };
    let ginv = jet
        .g
        .inverse()
        .ok_or_else(|| Error::Singular { what: "metric".into() })?;
    let (_, dphi, hess) = phi.eval(p)?;
    let w = ginv.apply(dphi);
    let w = [-w[0], -w[1]];
    // ∂_l w = g⁻¹ (∂_l g) g⁻¹ dφ − g⁻¹ ∂_l dφ
    let mut dw = Mat2::ZERO;
    for l in 0..2 {
        let a = (ginv * jet.dg[l] * ginv).apply(dphi);
        let b = ginv.apply([hess.0[0][l], hess.0[1][l]]);
        dw.0[0][l] = a[0] - b[0];
        dw.0[1][l] = a[1] - b[1];
    }
    Ok((w, dw))
}

/// `−∇φ(p) = −g⁻¹ dφ(p)`, the initial velocity of the flow line from `p`.
pub fn descent_velocity(metric: &dyn MetricSource, phi: &CompiledPotential, p: Vec2) -> Result<Vec2> {
    Ok(gradient_flow_data(metric, phi, p)?.0)
}

/// Flow Jacobian at the requested times (non-decreasing, from 0).
pub fn flow_jacobian(
    metric: &dyn MetricSource,
    phi: &CompiledPotential,
    y: Vec2,
    t_grid: &[f64],
    steps_per_unit: usize,
) -> Result<FlowJacobian> {
    let (w, dw) = gradient_flow_data(metric, phi, y)?;
    let sol = integrate_at(metric, y, w, t_grid, steps_per_unit)?;
    let g0 = metric.metric_at(y)?;
    let half_log_g0 = 0.5 * math::ln(g0.det());
    let mut jacobians = Vec::with_capacity(sol.times.len());
    let mut log_det = Vec::with_capacity(sol.times.len());
    for k in 0..sol.times.len() {
        let (pp, pv) = mat4_blocks(&sol.variation[k]);
        let df = pp + pv * dw;
        let det = df.det();
        if !(det > 0.0) {
            return Err(Error::NonInvertibleFlow { t: sol.times[k] });
        }
        let gk = metric.metric_at(sol.positions[k])?;
        log_det.push(math::ln(det) + 0.5 * math::ln(gk.det()) - half_log_g0);
        jacobians.push(df);
    }
    Ok(FlowJacobian {
        geodesic: sol,
        jacobians,
        log_det,
    })
}

/// Riemannian Hessian of `φ` at `p` as an endomorphism:
/// `H^k_l = g^{km}(∂_m ∂_l φ − Γ^s_ml ∂_s φ)`.
pub fn hessian_endomorphism(metric: &dyn MetricSource, phi: &CompiledPotential, p: Vec2) -> Result<Mat2> {
    let c = connection(metric, p)?;
    let ginv = c.g.inverse().ok_or_else(|| Error::Singular { what: "metric".into() })?;
    let (_, grad, hess) = phi.eval(p)?;
    let mut cov = hess;
    for m in 0..2 {
        for l in 0..2 {
            for (s, gs) in grad.iter().enumerate() {
                cov.0[m][l] -= c.gamma[s][m][l] * gs;
            }
        }
    }
    Ok(ginv * cov)
}

/// `K_ij(t) = g(R(e_i, γ̇)γ̇, e_j)` in the parallel frame carried by the
/// solution.
pub fn jacobi_curvature(metric: &dyn MetricSource, sol: &GeodesicSolution) -> Result<Vec<Mat2>> {
    let mut out = Vec::with_capacity(sol.times.len());
    for k in 0..sol.times.len() {
        if metric.is_flat() {
            out.push(Mat2::ZERO);
            continue;
        }
        let geo = PointGeometry::from_jet(&metric.jet(sol.positions[k])?)?;
        let v = sol.velocities[k];
        let e = sol.frames[k];
        let cols = [[e.0[0][0], e.0[1][0]], [e.0[0][1], e.0[1][1]]];
        let mut kmat = Mat2::ZERO;
        for i in 0..2 {
            let r = geo.riemann_apply(cols[i], v, v);
            for j in 0..2 {
                kmat.0[i][j] = geo.g.bilinear(r, cols[j]);
            }
        }
        let off = 0.5 * (kmat.0[0][1] + kmat.0[1][0]);
        out.push(Mat2::symmetric(kmat.0[0][0], off, kmat.0[1][1]));
    }
    Ok(out)
}

/// `s' + s² + H = 0` (lower branch) from `s(0) = s0`, written in a form
/// that stays accurate as `H → 0`.
pub fn riccati_lower(h: f64, s0: f64, t: f64) -> f64 {
    let r = math::sqrt(h);
    let (a, b) = if r == 0.0 {
        (0.0, t)
    } else {
        let tn = math::tan(t * r);
        (r * tn, tn / r)
    };
    (s0 - a) / (1.0 + s0 * b)
}

/// `s' + s² − H = 0` (upper branch) from `s(0) = s0`.
pub fn riccati_upper(h: f64, s0: f64, t: f64) -> f64 {
    let r = math::sqrt(h);
    let (a, b) = if r == 0.0 {
        (0.0, t)
    } else {
        let th = math::tanh(t * r);
        (r * th, th / r)
    };
    (s0 + a) / (1.0 + s0 * b)
}

/// First time the lower branch leaves every bound.
pub fn lower_blow_up(h: f64, s0: f64) -> Option<f64> {
    if h > 0.0 {
        let r = math::sqrt(h);
        Some((math::FRAC_PI_2 + math::atan(s0 / r)) / r)
    } else if s0 < 0.0 {
        Some(-1.0 / s0)
    } else {
        None
    }
}

/// First time the upper branch leaves every bound.
pub fn upper_blow_up(h: f64, s0: f64) -> Option<f64> {
    let r = math::sqrt(h);
    if s0 < -r {
        if r == 0.0 {
            Some(-1.0 / s0)
        } else {
            Some(math::atanh(r / -s0) / r)
        }
    } else {
        None
    }
}

/// Closed-form comparison solutions for a curvature band `−H ≤ K ≤ H`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiccatiEnvelope {
    pub h: f64,
    pub s0: Vec<f64>,
    pub times: Vec<f64>,
    /// `lower[i][k] = s_H(times[k])` from `s0[i]`.
    pub lower: Vec<Vec<f64>>,
    /// `upper[i][k] = s_{−H}(times[k])` from `s0[i]`.
    pub upper: Vec<Vec<f64>>,
    pub blow_up: Option<f64>,
    /// Times at or past the blow-up were dropped.
    pub truncated: bool,
}

pub fn riccati_envelope(h: f64, s0: &[f64], t_grid: &[f64]) -> Result<RiccatiEnvelope> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(alloc::format!(
            "H must be finite and >= 0, got {h}"
        )));
    }
    let blow_up = s0
        .iter()
        .flat_map(|&s| [lower_blow_up(h, s), upper_blow_up(h, s)])
        .flatten()
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| math::min(a, t))));
    let times: Vec<f64> = t_grid
        .iter()
        .copied()
        .filter(|t| blow_up.is_none_or(|b| *t < b))
        .collect();
    let truncated = times.len() < t_grid.len();
    let lower = s0
        .iter()
        .map(|&s| times.iter().map(|&t| riccati_lower(h, s, t)).collect())
        .collect();
    let upper = s0
        .iter()
        .map(|&s| times.iter().map(|&t| riccati_upper(h, s, t)).collect())
        .collect();
    Ok(RiccatiEnvelope {
        h,
        s0: s0.to_vec(),
        times,
        lower,
        upper,
        blow_up,
        truncated,
    })
}

/// Solution of `U' + U² + K = 0` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub u: Vec<Mat2>,
    pub trace: Vec<f64>,
    /// Ascending eigenvalues of the symmetric part of `U`.
    pub eigenvalues: Vec<[f64; 2]>,
}

fn riccati_rhs(u: &Mat2, k: &Mat2) -> Mat2 {
    -(*u * *u) - *k
}

/// RK4 for `U' = −U² − K(t)` with `K` given at the nodes of a uniform grid;
/// half-step values of `K` come from four-point cubic interpolation.
pub fn riccati_integrate(k_path: &[Mat2], u0: Mat2, t_grid: &[f64]) -> Result<RiccatiSolution> {
    let n = t_grid.len();
    if n != k_path.len() {
        return Err(Error::InvalidInput("K path and time grid differ in length".into()));
    }
    if n < 4 {
        return Err(Error::InvalidInput(
            "Riccati integration needs at least 4 time nodes".into(),
        ));
    }
    let dt = (t_grid[n - 1] - t_grid[0]) / (n - 1) as f64;
    if !(dt > 0.0)
        || t_grid
            .iter()
            .enumerate()
            .any(|(k, t)| math::abs(t - (t_grid[0] + k as f64 * dt)) > 1e-9 * (1.0 + math::abs(*t)))
    {
        return Err(Error::InvalidInput(
            "Riccati time grid must be uniform and increasing".into(),
        ));
    }
    let mid = |k: usize| -> Mat2 {
        let (a, b, c, d) = if k == 0 {
            (k_path[0], k_path[1], k_path[2], k_path[3])
        } else if k + 2 >= n {
            (k_path[n - 4], k_path[n - 3], k_path[n - 2], k_path[n - 1])
        } else {
            (k_path[k - 1], k_path[k], k_path[k + 1], k_path[k + 2])
        };
        let w = if k == 0 {
            [5.0, 15.0, -5.0, 1.0]
        } else if k + 2 >= n {
            [1.0, -5.0, 15.0, 5.0]
        } else {
            [-1.0, 9.0, 9.0, -1.0]
        };
        (a.scaled(w[0]) + b.scaled(w[1]) + c.scaled(w[2]) + d.scaled(w[3])).scaled(1.0 / 16.0)
    };
    let mut u = u0;
    let mut out = RiccatiSolution {
        times: t_grid.to_vec(),
        u: Vec::with_capacity(n),
        trace: Vec::with_capacity(n),
        eigenvalues: Vec::with_capacity(n),
    };
    let push = |out: &mut RiccatiSolution, u: &Mat2| {
        let off = 0.5 * (u.0[0][1] + u.0[1][0]);
        out.u.push(*u);
        out.trace.push(u.trace());
        out.eigenvalues
            .push(Mat2::symmetric(u.0[0][0], off, u.0[1][1]).sym_eigenvalues());
    };
    push(&mut out, &u);
    for k in 0..n - 1 {
        let km = mid(k);
        let k1 = riccati_rhs(&u, &k_path[k]);
        let k2 = riccati_rhs(&(u + k1.scaled(0.5 * dt)), &km);
        let k3 = riccati_rhs(&(u + k2.scaled(0.5 * dt)), &km);
        let k4 = riccati_rhs(&(u + k3.scaled(dt)), &k_path[k + 1]);
        u = u + (k1 + k2.scaled(2.0) + k3.scaled(2.0) + k4).scaled(dt / 6.0);
        if !u.is_finite() || u.max_abs() > 1e8 {
            return Err(Error::BlowUp { t: t_grid[k + 1] });
        }
        push(&mut out, &u);
    }
    Ok(out)
}

/// Largest eigenvalue magnitude of `K` along a path.
pub fn curvature_band(k_path: &[Mat2]) -> f64 {
    k_path
        .iter()
        .map(|k| {
            let e = k.sym_eigenvalues();
            math::max(math::abs(e[0]), math::abs(e[1]))
        })
        .fold(0.0, math::max)
}

/// Uniform deviation between consecutive entries of an ε-sweep of geodesics
/// with fixed `(y, w)`, together with their lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicLimit {
    pub eps: Vec<f64>,
    pub lengths: Vec<f64>,
    /// `sup_t |γ_k(t) − γ_{k−1}(t)|` for `k ≥ 1`.
    pub deviations: Vec<f64>,
    /// `sup |g_{ε_k} − g_{ε_{k−1}}|` on the grid, for `k ≥ 1`.
    pub metric_gaps: Vec<f64>,
}

pub fn geodesic_limit(model: &MetricModel, y: Vec2, w: Vec2, eps_list: &[f64], steps: usize) -> Result<GeodesicLimit> {
    let mut out = GeodesicLimit {
        eps: eps_list.to_vec(),
        lengths: Vec::new(),
        deviations: Vec::new(),
        metric_gaps: Vec::new(),
    };
    let mut prev: Option<(GeodesicSolution, SmoothedMetric)> = None;
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        let sol = integrate_geodesic(&s, y, w, steps)?;
        out.lengths.push(sol.length());
        if let Some((p, ps)) = &prev {
            let dev = sol
                .positions
                .iter()
                .zip(&p.positions)
                .map(|(a, b)| norm(sub(*a, *b)))
                .fold(0.0, math::max);
            out.deviations.push(dev);
            out.metric_gaps.push(s.g().sup_distance(ps.g())?);
        }
        prev = Some((sol, s));
    }
    Ok(out)
}

/// `sup_t |DF_t^{ε_k}(y) − DF_t^{ε_{k−1}}(y)|` across an ε-sweep, for a fixed
/// potential. Diagnostic only.
pub fn flow_stabilization(
    model: &MetricModel,
    phi: &CompiledPotential,
    y: Vec2,
    eps_list: &[f64],
    t_grid: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut prev: Option<FlowJacobian> = None;
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        let f = flow_jacobian(&s, phi, y, t_grid, steps_per_unit)?;
        if let Some(p) = &prev {
            let d = f
                .jacobians
                .iter()
                .zip(&p.jacobians)
                .map(|(a, b)| (*a - *b).max_abs())
                .fold(0.0, math::max);
            out.push(d);
        }
        prev = Some(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::conformal_curvature;
    use crate::linalg::periodic_distance;
    use crate::metric::Flat;

    fn conformal() -> MetricModel {
        MetricModel::conformal(FieldExpr::parse("0.05*sin(2*pi*x)*sin(2*pi*y)").unwrap()).unwrap()
    }

    #[test]
    fn flat_geodesics_are_straight() {
        let sol = integrate_geodesic(&Flat, [0.1, 0.2], [0.3, 0.0], 64).unwrap();
        for (t, p) in sol.times.iter().zip(&sol.positions) {
            assert!((p[0] - (0.1 + 0.3 * t)).abs() < 1e-14 && p[1] == 0.2);
        }
        for k in 0..sol.times.len() {
            assert!((sol.jacobi(k) - Mat2::IDENTITY).max_abs() < 1e-15);
        }
        assert!(sol.energy_drift() < 1e-14);
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(matches!(
            integrate_geodesic(&Flat, [0.0; 2], [0.1, 0.0], 8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn conformal_energy_and_frame() {
        let m = conformal();
        let sol = integrate_geodesic(&m, [0.2, 0.3], [0.4, 0.25], 256).unwrap();
        assert!(sol.energy_drift() < 1e-8, "{}", sol.energy_drift());
        for k in [0, 128, 256] {
            let g = m.metric_at(sol.positions[k]).unwrap();
            let e = sol.frames[k];
            let gram = e.transpose() * g * e;
            assert!((gram - Mat2::IDENTITY).max_abs() < 1e-9);
        }
    }

    #[test]
    fn variational_matches_finite_differences() {
        let m = conformal();
        let (y, w) = ([0.2, 0.3], [0.4, 0.25]);
        let sol = integrate_geodesic(&m, y, w, 256).unwrap();
        let h = 1e-5;
        let k = 256;
        for c in 0..4 {
            let mut yp = y;
            let mut ym = y;
            let mut wp = w;
            let mut wm = w;
            if c < 2 {
                yp[c] += h;
                ym[c] -= h;
            } else {
                wp[c - 2] += h;
                wm[c - 2] -= h;
            }
            let a = integrate_geodesic(&m, yp, wp, 256).unwrap();
            let b = integrate_geodesic(&m, ym, wm, 256).unwrap();
            for r in 0..2 {
                let fd = (a.positions[k][r] - b.positions[k][r]) / (2.0 * h);
                assert!((fd - sol.variation[k][r][c]).abs() < 1e-6);
                let fdv = (a.velocities[k][r] - b.velocities[k][r]) / (2.0 * h);
                assert!((fdv - sol.variation[k][2 + r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flat_distances_wrap() {
        assert!((distance(&Flat, [0.0, 0.0], [0.9, 0.0]).unwrap() - 0.1).abs() < 1e-15);
        assert!((distance(&Flat, [0.0, 0.0], [0.5, 0.5]).unwrap() - 0.5f64.sqrt()).abs() < 1e-10);
        let v = log_map(&Flat, [0.95, 0.1], [0.05, 0.9], &ShootingOptions::default()).unwrap();
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn log_exp_round_trip() {
        let m = conformal();
        let opts = ShootingOptions::default();
        let y = [0.3, 0.6];
        for v in [[0.1, 0.05], [-0.15, 0.1], [0.0, -0.2]] {
            let x = exp_map(&m, y, v, 256).unwrap();
            let back = shoot(&m, y, x, sub(x, y), &opts).unwrap();
            assert!(norm(sub(back.velocity, v)) < 1e-8, "{:?}", back);
        }
    }

    #[test]
    fn conformal_distance_band_and_symmetry() {
        let m = conformal();
        let solver = DistanceSolver::new(&m, ShootingOptions::default()).unwrap();
        let (x, y) = ([0.1, 0.2], [0.45, 0.8]);
        let d1 = solver.distance(x, y).unwrap();
        let d2 = solver.distance(y, x).unwrap();
        assert!(d1.is_exact());
        assert!((d1.value - d2.value).abs() < 1e-8);
        let flat = periodic_distance(x, y);
        let (lo, hi) = ((-0.05f64).exp() * flat, 0.05f64.exp() * flat);
        assert!(d1.value >= lo && d1.value <= hi);
        let gd = graph_distance(&m, x, y, 64).unwrap();
        assert!((gd - d1.value).abs() / d1.value < 0.05);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let m = conformal();
        let solver = DistanceSolver::new(&m, ShootingOptions::default()).unwrap();
        let (y, x) = ([0.3, 0.4], [0.42, 0.47]);
        let grad = solver.grad_half_dist_sq(y, x).unwrap();
        let g = m.metric_at(x).unwrap();
        let cov = g.apply(grad);
        let h = 1e-5;
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let fp = solver.distance(y, xp).unwrap().value;
            let fm = solver.distance(y, xm).unwrap().value;
            let fd = (fp * fp - fm * fm) / (4.0 * h);
            assert!((fd - cov[c]).abs() < 1e-5, "{fd} vs {}", cov[c]);
        }
        assert_eq!(solver.grad_half_dist_sq(y, y).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn quadratic_flow_on_flat_torus() {
        // φ = ½ xᵀA x around the base point; DF_t = I − tA.
        let phi = FieldExpr::parse("0.5*(0.8*(x-0.5)^2 + 2*0.1*(x-0.5)*(y-0.5) + 0.3*(y-0.5)^2)").unwrap();
        let y = [0.55, 0.45];
        let t = [0.0, 0.25, 0.5, 1.0];
        let f = flow_jacobian(&Flat, &CompiledPotential::new(&phi), y, &t, 64).unwrap();
        let a = Mat2::symmetric(0.8, 0.1, 0.3);
        for (k, &tk) in t.iter().enumerate() {
            let expect = Mat2::IDENTITY - a.scaled(tk);
            assert!((f.jacobians[k] - expect).max_abs() < 1e-13);
            assert!((f.log_det[k] - expect.det().ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn flow_jacobian_matches_finite_difference_map() {
        let m = conformal();
        let phi = CompiledPotential::new(&FieldExpr::parse("0.02*sin(2*pi*x)*cos(2*pi*y) + 0.01*cos(2*pi*x)").unwrap());
        let y = [0.3, 0.7];
        let t = [0.0, 0.5, 1.0];
        let f = flow_jacobian(&m, &phi, y, &t, 256).unwrap();
        let h = 1e-5;
        let flow = |p: Vec2| -> Vec2 {
            let (w, _) = gradient_flow_data(&m, &phi, p).unwrap();
            exp_map(&m, p, w, 256).unwrap()
        };
        for c in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[c] += h;
            ym[c] -= h;
            let (a, b) = (flow(yp), flow(ym));
            for r in 0..2 {
                let fd = (a[r] - b[r]) / (2.0 * h);
                assert!((fd - f.jacobians[2].0[r][c]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn riccati_closed_forms() {
        let e = riccati_envelope(1.0, &[0.0], &[core::f64::consts::FRAC_PI_4]).unwrap();
        assert!((e.lower[0][0] + 1.0).abs() < 1e-15);
        assert!((e.upper[0][0] - (core::f64::consts::FRAC_PI_4).tanh()).abs() < 1e-15);
        for s0 in [-0.5, 0.0, 0.7] {
            for t in [0.1, 0.5, 1.0] {
                let lim = s0 / (1.0 + t * s0);
                assert!((riccati_lower(1e-8, s0, t) - lim).abs() < 1e-6);
                assert!((riccati_upper(1e-8, s0, t) - lim).abs() < 1e-6);
                assert!(riccati_lower(0.5, s0, t) <= riccati_upper(0.5, s0, t));
            }
        }
        assert_eq!(riccati_lower(3.0, 0.0, 0.0), 0.0);
        let b = lower_blow_up(1.0, 0.0).unwrap();
        assert!((b - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let e = riccati_envelope(1.0, &[0.0], &[0.5, 1.0, 1.6, 2.0]).unwrap();
        assert!(e.truncated && e.times.len() == 2);
    }

    #[test]
    fn riccati_constant_curvature() {
        let h = 1.0;
        let n = 201;
        let t: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let k = vec![Mat2::IDENTITY.scaled(h); n];
        let sol = riccati_integrate(&k, Mat2::ZERO, &t).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let exact = riccati_lower(h, 0.0, ti);
            let tol = 1e-8 * (1.0 + exact.abs());
            assert!(
                (sol.eigenvalues[i][0] - exact).abs() < tol,
                "{ti} {:?} {exact}",
                sol.eigenvalues[i]
            );
            assert!((sol.eigenvalues[i][1] - exact).abs() < tol);
        }
        let zero = riccati_integrate(&vec![Mat2::ZERO; n], Mat2::ZERO, &t).unwrap();
        assert!(zero.u.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn riccati_trace_matches_log_det_rate() {
        let m = conformal();
        let phi = CompiledPotential::new(&FieldExpr::parse("0.02*sin(2*pi*x)*cos(2*pi*y)").unwrap());
        let y = [0.3, 0.7];
        let n = 257;
        let t: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let f = flow_jacobian(&m, &phi, y, &t, 256).unwrap();
        let kp = jacobi_curvature(&m, &f.geodesic).unwrap();
        let e0 = f.geodesic.frames[0];
        let u0 = e0.inverse().unwrap() * hessian_endomorphism(&m, &phi, y).unwrap().scaled(-1.0) * e0;
        let sol = riccati_integrate(&kp, u0, &t).unwrap();
        let dt = t[1];
        for k in [32, 128, 200] {
            let rate = (f.log_det[k + 1] - f.log_det[k - 1]) / (2.0 * dt);
            assert!((rate - sol.trace[k]).abs() < 1e-4, "{rate} vs {}", sol.trace[k]);
        }
        // Sectional curvature along the path agrees with the conformal oracle.
        let u = m.conformal_factor().unwrap();
        for k in [0, 100, 256] {
            let kk = conformal_curvature(u, f.geodesic.positions[k]);
            let e = f.geodesic.energy[k];
            assert!((kp[k].trace() - kk * e).abs() < 1e-9);
        }
    }
}
