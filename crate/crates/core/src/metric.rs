//! Metric families on the torus, their grid samples, and mollified metrics.
//!
//! A metric is described either by a conformal factor `u` (`g = e^{2u}·I`) or
//! by three component expressions, in both cases with symbolic derivatives;
//! raw grid samples are accepted for grid-only work.
//!
//! [`SmoothedMetric`] holds `g_ε = g ⋆ ρ_ε` together with its first and second
//! derivatives on the grid. Off the grid, `g_ε(p)` is evaluated as the same
//! discrete sum `Σ w_ab g(p − z_ab)` over kernel taps, which agrees with the
//! node values, is C∞ in `p` for smooth `g`, and whose derivatives are the
//! same sums applied to the symbolic derivatives of `g`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Program};
use crate::grid::{finite_diff, Axis, DiffScheme, Kernel, KernelDerivative, PeriodicGridField, Rank};
use crate::linalg::{generalized_eigenvalues, Mat2, Vec2};
use crate::math;

/// Regularity class carried by a metric model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Regularity {
    /// Continuously differentiable only: no pointwise curvature.
    #[cfg_attr(feature = "serde", serde(rename = "C1"))]
    C1,
    /// Lipschitz first derivatives: curvature exists almost everywhere.
    #[cfg_attr(feature = "serde", serde(rename = "C11"))]
    C11,
    #[cfg_attr(feature = "serde", serde(rename = "smooth"))]
    Smooth,
}

impl Regularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Regularity::C1 => "C1",
            Regularity::C11 => "C11",
            Regularity::Smooth => "smooth",
        }
    }
}

/// Default lower bound on `det g` over the sample grid.
pub const DEFAULT_DET_FLOOR: f64 = 1e-6;

/// Metric with first and second partial derivatives at one point.
/// `dg[k] = ∂_k g`, `d2g[k][l] = ∂_k ∂_l g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricJet {
    pub g: Mat2,
    pub dg: [Mat2; 2],
    pub d2g: [[Mat2; 2]; 2],
}

impl MetricJet {
    pub const FLAT: MetricJet = MetricJet {
        g: Mat2::IDENTITY,
        dg: [Mat2::ZERO; 2],
        d2g: [[Mat2::ZERO; 2]; 2],
    };

    fn scaled_add(&mut self, w: f64, o: &MetricJet) {
        self.g = self.g + o.g.scaled(w);
        for k in 0..2 {
            self.dg[k] = self.dg[k] + o.dg[k].scaled(w);
            for l in 0..2 {
                self.d2g[k][l] = self.d2g[k][l] + o.d2g[k][l].scaled(w);
            }
        }
    }

    const ZERO: MetricJet = MetricJet {
        g: Mat2::ZERO,
        dg: [Mat2::ZERO; 2],
        d2g: [[Mat2::ZERO; 2]; 2],
    };
}

/// Anything that can report the metric jet at an arbitrary point.
pub trait MetricSource: Sync {
    fn jet(&self, p: Vec2) -> Result<MetricJet>;

    fn metric_at(&self, p: Vec2) -> Result<Mat2> {
        Ok(self.jet(p)?.g)
    }

    /// True when the metric is the Euclidean one everywhere.
    fn is_flat(&self) -> bool {
        false
    }
}

/// A metric known at the nodes of an N×N grid.
pub trait GridMetric {
    fn resolution(&self) -> usize;
    fn node_jet(&self, i: usize, j: usize) -> Result<MetricJet>;
    fn is_flat(&self) -> bool {
        false
    }
}

/// The Euclidean metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct Flat;

impl MetricSource for Flat {
    fn jet(&self, _p: Vec2) -> Result<MetricJet> {
        Ok(MetricJet::FLAT)
    }
    fn is_flat(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Flat,
    Conformal(FieldExpr),
    Components([FieldExpr; 3]),
    Sampled,
}

/// Grid samples of `g` and `∂_k g` (matrix-ranked fields).
#[derive(Debug, Clone)]
pub struct SampledMetric {
    pub g: PeriodicGridField,
    pub dg: [PeriodicGridField; 2],
}

/// A metric on the torus with its regularity tag.
#[derive(Debug, Clone)]
pub struct MetricModel {
    kind: Kind,
    regularity: Regularity,
    det_floor: f64,
    program: Option<Arc<Program>>,
    sampled: Option<Arc<SampledMetric>>,
}

fn jet_exprs(e: &FieldExpr) -> [FieldExpr; 6] {
    let ex = e.dx();
    let ey = e.dy();
    [e.clone(), ex.dx(), ex.dy(), ey.dy(), ex, ey]
}

impl MetricModel {
    pub fn flat() -> Self {
        MetricModel {
            kind: Kind::Flat,
            regularity: Regularity::Smooth,
            det_floor: DEFAULT_DET_FLOOR,
            program: None,
            sampled: None,
        }
    }

    /// `g = e^{2u}·I`. Regularity is inferred from `u`: any `abs`, `min` or
    /// `max` makes it C11.
    pub fn conformal(u: FieldExpr) -> Result<Self> {
        u.check_periodic(1e-9)?;
        u.check_differentiable(2)?;
        if u.is_zero() {
            return Ok(Self::flat());
        }
        let regularity = if u.has_kinks() {
            Regularity::C11
        } else {
            Regularity::Smooth
        };
        let js = jet_exprs(&u);
        let program = Program::new(&js.iter().collect::<Vec<_>>());
        Ok(MetricModel {
            kind: Kind::Conformal(u),
            regularity,
            det_floor: DEFAULT_DET_FLOOR,
            program: Some(Arc::new(program)),
            sampled: None,
        })
    }

    /// Metric given by `g11, g12, g22`.
    pub fn components(g11: FieldExpr, g12: FieldExpr, g22: FieldExpr) -> Result<Self> {
        let comps = [g11, g12, g22];
        let mut kinked = false;
        for e in &comps {
            e.check_periodic(1e-9)?;
            e.check_differentiable(2)?;
            kinked |= e.has_kinks();
        }
        let regularity = if kinked { Regularity::C11 } else { Regularity::Smooth };
        let all: Vec<FieldExpr> = comps.iter().flat_map(jet_exprs).collect();
        let program = Program::new(&all.iter().collect::<Vec<_>>());
        Ok(MetricModel {
            kind: Kind::Components(comps),
            regularity,
            det_floor: DEFAULT_DET_FLOOR,
            program: Some(Arc::new(program)),
            sampled: None,
        })
    }

    /// Raw samples of `g` without expressions. First derivatives are taken by
    /// fourth-order central differences; only grid operations are available.
    pub fn from_samples(g: PeriodicGridField, regularity: Regularity) -> Result<Self> {
        if g.rank() != Rank::Matrix {
            return Err(Error::InvalidInput("metric samples must be matrix-ranked".into()));
        }
        if g.asymmetry() > 1e-12 {
            return Err(Error::InvalidInput("metric samples are not symmetric".into()));
        }
        let dg = [
            finite_diff(&g, Axis::X, DiffScheme::Central4)?,
            finite_diff(&g, Axis::Y, DiffScheme::Central4)?,
        ];
        let model = MetricModel {
            kind: Kind::Sampled,
            regularity,
            det_floor: DEFAULT_DET_FLOOR,
            program: None,
            sampled: Some(Arc::new(SampledMetric { g, dg })),
        };
        model.check_spd()?;
        Ok(model)
    }

    /// Replace the inferred regularity tag.
    pub fn with_regularity(mut self, regularity: Regularity) -> Self {
        self.regularity = regularity;
        self
    }

    pub fn with_det_floor(mut self, floor: f64) -> Self {
        self.det_floor = floor;
        self
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn det_floor(&self) -> f64 {
        self.det_floor
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, Kind::Flat)
    }

    /// The conformal factor, for conformal models.
    pub fn conformal_factor(&self) -> Option<&FieldExpr> {
        match &self.kind {
            Kind::Conformal(u) => Some(u),
            _ => None,
        }
    }

    pub fn has_expressions(&self) -> bool {
        !matches!(self.kind, Kind::Sampled)
    }

    /// Short description for reports.
    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Flat => "flat".into(),
            Kind::Conformal(u) => alloc::format!("conformal u = {u}"),
            Kind::Components([a, b, c]) => alloc::format!("g11 = {a}; g12 = {b}; g22 = {c}"),
            Kind::Sampled => "sampled".into(),
        }
    }

    pub fn sampled(&self) -> Option<&SampledMetric> {
        self.sampled.as_deref()
    }

    pub fn sample_resolution(&self) -> Option<usize> {
        self.sampled.as_ref().map(|s| s.g.resolution())
    }

    /// Jet from the expressions, without regularity gating. Second
    /// derivatives of C11 models are the almost-everywhere values.
    pub(crate) fn raw_jet(&self, p: Vec2, scratch: &mut Vec<f64>) -> Result<MetricJet> {
        let prog = match (&self.kind, &self.program) {
            (Kind::Flat, _) => return Ok(MetricJet::FLAT),
            (Kind::Sampled, _) | (_, None) => {
                return Err(Error::Unsupported("sampled metrics have no off-grid values".into()))
            }
            (_, Some(p)) => p,
        };
        if scratch.len() < prog.scratch().len() {
            scratch.resize(prog.scratch().len(), 0.0);
        }
        let mut out = [0.0; 18];
        let n_out = prog.outputs();
        prog.eval_into(p[0], p[1], scratch, &mut out[..n_out]);
        if out[..n_out].iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                expr: self.describe(),
                x: p[0],
                y: p[1],
            });
        }
        Ok(match self.kind {
            Kind::Conformal(_) => {
                let [u, uxx, uxy, uyy, ux, uy] = [out[0], out[1], out[2], out[3], out[4], out[5]];
                let e = math::exp(2.0 * u);
                let d = [2.0 * e * ux, 2.0 * e * uy];
                let du = [ux, uy];
                let h = [[uxx, uxy], [uxy, uyy]];
                let mut d2g = [[Mat2::ZERO; 2]; 2];
                for k in 0..2 {
                    for l in 0..2 {
                        let s = e * (4.0 * du[k] * du[l] + 2.0 * h[k][l]);
                        d2g[k][l] = Mat2::diagonal(s, s);
                    }
                }
                MetricJet {
                    g: Mat2::diagonal(e, e),
                    dg: [Mat2::diagonal(d[0], d[0]), Mat2::diagonal(d[1], d[1])],
                    d2g,
                }
            }
            _ => {
                let comp = |c: usize, k: usize| out[6 * c + k];
                let m = |k: usize| Mat2::symmetric(comp(0, k), comp(1, k), comp(2, k));
                MetricJet {
                    g: m(0),
                    dg: [m(4), m(5)],
                    d2g: [[m(1), m(2)], [m(2), m(3)]],
                }
            }
        })
    }

    /// Sample `g` and `∂g` on the N×N grid and verify positive definiteness
    /// and the nondegeneracy floor at every node.
    pub fn sample(&self, n: usize) -> Result<MetricModel> {
        if n < 16 {
            return Err(Error::InvalidInput(alloc::format!("sample needs N >= 16, got {n}")));
        }
        if matches!(self.kind, Kind::Sampled) {
            let have = self.sample_resolution().unwrap_or(0);
            if have != n {
                return Err(Error::ResolutionMismatch { left: have, right: n });
            }
            return Ok(self.clone());
        }
        let mut g = PeriodicGridField::zeros(n, Rank::Matrix);
        let mut dgx = PeriodicGridField::zeros(n, Rank::Matrix);
        let mut dgy = PeriodicGridField::zeros(n, Rank::Matrix);
        let mut scratch = Vec::new();
        let h = 1.0 / n as f64;
        for j in 0..n {
            for i in 0..n {
                let jet = self.raw_jet([i as f64 * h, j as f64 * h], &mut scratch)?;
                g.set_matrix(i, j, jet.g);
                dgx.set_matrix(i, j, jet.dg[0]);
                dgy.set_matrix(i, j, jet.dg[1]);
            }
        }
        let mut out = self.clone();
        out.sampled = Some(Arc::new(SampledMetric { g, dg: [dgx, dgy] }));
        out.check_spd()?;
        Ok(out)
    }

    fn check_spd(&self) -> Result<()> {
        let s = match &self.sampled {
            Some(s) => s,
            None => return Ok(()),
        };
        let n = s.g.resolution();
        let mut bad = Vec::new();
        let mut min_det = f64::INFINITY;
        for j in 0..n {
            for i in 0..n {
                let m = s.g.matrix(i, j);
                let d = m.det();
                min_det = min_det.min(d);
                if !(m.0[0][0] > 0.0 && d > 0.0 && d >= self.det_floor) {
                    bad.push((i, j));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite { nodes: bad, min_det })
        }
    }

    /// Riemannian volume `Σ √det g · h²` on the sample grid.
    pub fn volume(&self) -> Result<f64> {
        let s = self
            .sampled
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("metric not sampled".into()))?;
        Ok(grid_volume(&s.g))
    }
}

pub(crate) fn grid_volume(g: &PeriodicGridField) -> f64 {
    let n = g.resolution();
    let h2 = 1.0 / (n * n) as f64;
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            acc += math::sqrt(g.matrix(i, j).det());
        }
    }
    acc * h2
}

impl MetricSource for MetricModel {
    /// Direct evaluation; refused for C1 models, whose second derivatives
    /// need not exist.
    fn jet(&self, p: Vec2) -> Result<MetricJet> {
        if self.regularity == Regularity::C1 {
            return Err(Error::Unsupported(
                "C1 metrics have no pointwise curvature; use a smoothed metric".into(),
            ));
        }
        self.raw_jet(p, &mut Vec::new())
    }

    fn is_flat(&self) -> bool {
        matches!(self.kind, Kind::Flat)
    }
}

impl GridMetric for MetricModel {
    fn resolution(&self) -> usize {
        self.sample_resolution().unwrap_or(0)
    }

    fn node_jet(&self, i: usize, j: usize) -> Result<MetricJet> {
        let n = self
            .sample_resolution()
            .ok_or_else(|| Error::InvalidInput("metric not sampled".into()))?;
        let h = 1.0 / n as f64;
        self.jet([i as f64 * h, j as f64 * h])
    }

    fn is_flat(&self) -> bool {
        matches!(self.kind, Kind::Flat)
    }
}

/// How the derivatives of `g_ε` are produced on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DerivativeRoute {
    /// `∂g_ε = (∂g) ⋆ ρ_ε`, `∂²g_ε = (∂²g) ⋆ ρ_ε` from symbolic (for C11:
    /// almost-everywhere) derivatives. Needs expressions.
    Transfer,
    /// `∂g_ε = g ⋆ ∂ρ_ε`, `∂²g_ε = g ⋆ ∂²ρ_ε` with derivative kernels.
    Kernel,
}

/// `g_ε = g ⋆ ρ_ε` with derivatives and inverse on the grid.
#[derive(Debug, Clone)]
pub struct SmoothedMetric {
    eps: f64,
    route: DerivativeRoute,
    kernel: Kernel,
    g: PeriodicGridField,
    dg: [PeriodicGridField; 2],
    /// xx, xy, yy
    d2g: [PeriodicGridField; 3],
    ginv: PeriodicGridField,
    model: MetricModel,
    taps: Vec<(Vec2, f64)>,
}

/// Convolve the three independent components of a symmetric matrix field.
fn convolve_symmetric(field: &PeriodicGridField, kernel: &Kernel) -> PeriodicGridField {
    let n = field.resolution();
    let mut out = PeriodicGridField::zeros(n, Rank::Matrix);
    for (src, dsts) in [(0usize, &[0usize][..]), (1, &[1, 2][..]), (3, &[3][..])] {
        let plane = field.component(src);
        if plane.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut buf = vec![0.0; n * n];
        kernel.stencil().apply_plane(plane, &mut buf);
        for &d in dsts {
            out.component_mut(d).copy_from_slice(&buf);
        }
    }
    out
}

fn constant_field(n: usize, m: Mat2) -> PeriodicGridField {
    PeriodicGridField::from_matrix_fn(n, |_, _| m)
}

impl SmoothedMetric {
    /// Mollify a sampled model with the default derivative route: transfer
    /// when expressions are available, kernel otherwise.
    pub fn new(model: &MetricModel, eps: f64) -> Result<Self> {
        let route = if model.has_expressions() && model.regularity() != Regularity::C1 {
            DerivativeRoute::Transfer
        } else {
            DerivativeRoute::Kernel
        };
        Self::with_route(model, eps, route)
    }

    pub fn with_route(model: &MetricModel, eps: f64, route: DerivativeRoute) -> Result<Self> {
        let sampled = model
            .sampled()
            .ok_or_else(|| Error::InvalidInput("metric must be sampled before smoothing".into()))?;
        if route == DerivativeRoute::Transfer && !model.has_expressions() {
            return Err(Error::Unsupported("transfer route needs symbolic derivatives".into()));
        }
        let n = sampled.g.resolution();
        let kernel = Kernel::mollifier(n, eps)?;
        let h = 1.0 / n as f64;
        let taps: Vec<(Vec2, f64)> = kernel
            .stencil()
            .entries()
            .iter()
            .map(|&(a, b, w)| ([a as f64 * h, b as f64 * h], w))
            .collect();

        let (g, dg, d2g) = if model.is_flat() {
            let z = constant_field(n, Mat2::ZERO);
            (
                constant_field(n, Mat2::IDENTITY),
                [z.clone(), z.clone()],
                [z.clone(), z.clone(), z],
            )
        } else {
            match route {
                DerivativeRoute::Transfer => {
                    let mut d2 = [
                        PeriodicGridField::zeros(n, Rank::Matrix),
                        PeriodicGridField::zeros(n, Rank::Matrix),
                        PeriodicGridField::zeros(n, Rank::Matrix),
                    ];
                    let mut scratch = Vec::new();
                    for j in 0..n {
                        for i in 0..n {
                            let jet = model.raw_jet([i as f64 * h, j as f64 * h], &mut scratch)?;
                            d2[0].set_matrix(i, j, jet.d2g[0][0]);
                            d2[1].set_matrix(i, j, jet.d2g[0][1]);
                            d2[2].set_matrix(i, j, jet.d2g[1][1]);
                        }
                    }
                    (
                        convolve_symmetric(&sampled.g, &kernel),
                        [
                            convolve_symmetric(&sampled.dg[0], &kernel),
                            convolve_symmetric(&sampled.dg[1], &kernel),
                        ],
                        [
                            convolve_symmetric(&d2[0], &kernel),
                            convolve_symmetric(&d2[1], &kernel),
                            convolve_symmetric(&d2[2], &kernel),
                        ],
                    )
                }
                DerivativeRoute::Kernel => {
                    let k = |d| Kernel::with_derivative(n, eps, d);
                    let g0 = &sampled.g;
                    (
                        convolve_symmetric(g0, &kernel),
                        [
                            convolve_symmetric(g0, &k(KernelDerivative::X)?),
                            convolve_symmetric(g0, &k(KernelDerivative::Y)?),
                        ],
                        [
                            convolve_symmetric(g0, &k(KernelDerivative::XX)?),
                            convolve_symmetric(g0, &k(KernelDerivative::XY)?),
                            convolve_symmetric(g0, &k(KernelDerivative::YY)?),
                        ],
                    )
                }
            }
        };

        let mut ginv = PeriodicGridField::zeros(n, Rank::Matrix);
        let mut failed = false;
        for j in 0..n {
            for i in 0..n {
                let m = g.matrix(i, j);
                if !(m.0[0][0] > 0.0 && m.det() > 0.0) {
                    failed = true;
                    break;
                }
                let inv = m.inverse().ok_or_else(|| Error::Singular {
                    what: alloc::format!("g_eps at node ({i}, {j})"),
                })?;
                let resid = (inv * m - Mat2::IDENTITY).max_abs();
                if resid > 1e-10 {
                    return Err(Error::Singular {
                        what: alloc::format!("g_eps inverse residual {resid:.2e} at ({i}, {j})"),
                    });
                }
                ginv.set_matrix(i, j, inv);
            }
        }
        if failed {
            // Report the largest dyadic fraction of eps that does work.
            let mut trial = eps / 2.0;
            let mut eps_max = None;
            while trial * n as f64 >= 1.0 {
                if Self::with_route(model, trial, route).is_ok() {
                    eps_max = Some(trial);
                    break;
                }
                trial /= 2.0;
            }
            return Err(Error::SmoothingNotPositive { eps, eps_max });
        }

        Ok(SmoothedMetric {
            eps,
            route,
            kernel,
            g,
            dg,
            d2g,
            ginv,
            model: model.clone(),
            taps,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn route(&self) -> DerivativeRoute {
        self.route
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn model(&self) -> &MetricModel {
        &self.model
    }

    pub fn g(&self) -> &PeriodicGridField {
        &self.g
    }

    pub fn dg(&self) -> &[PeriodicGridField; 2] {
        &self.dg
    }

    /// Second derivatives in the order xx, xy, yy.
    pub fn d2g(&self) -> &[PeriodicGridField; 3] {
        &self.d2g
    }

    pub fn ginv(&self) -> &PeriodicGridField {
        &self.ginv
    }

    pub fn volume(&self) -> f64 {
        grid_volume(&self.g)
    }

    /// Relative deviation `δ` with `(1−δ) g ≤ g_ε ≤ (1+δ) g` at every node.
    pub fn equivalence_band(&self) -> Result<f64> {
        let s = self
            .model
            .sampled()
            .ok_or_else(|| Error::InvalidInput("metric not sampled".into()))?;
        let n = self.g.resolution();
        let mut delta: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let ev = generalized_eigenvalues(&self.g.matrix(i, j), &s.g.matrix(i, j));
                delta = delta.max((ev[0] - 1.0).abs()).max((ev[1] - 1.0).abs());
            }
        }
        Ok(delta)
    }
}

impl GridMetric for SmoothedMetric {
    fn resolution(&self) -> usize {
        self.g.resolution()
    }

    fn node_jet(&self, i: usize, j: usize) -> Result<MetricJet> {
        Ok(MetricJet {
            g: self.g.matrix(i, j),
            dg: [self.dg[0].matrix(i, j), self.dg[1].matrix(i, j)],
            d2g: [
                [self.d2g[0].matrix(i, j), self.d2g[1].matrix(i, j)],
                [self.d2g[1].matrix(i, j), self.d2g[2].matrix(i, j)],
            ],
        })
    }

    fn is_flat(&self) -> bool {
        self.model.is_flat()
    }
}

impl MetricSource for SmoothedMetric {
    fn jet(&self, p: Vec2) -> Result<MetricJet> {
        if self.model.is_flat() {
            return Ok(MetricJet::FLAT);
        }
        let mut scratch = Vec::new();
        let mut acc = MetricJet::ZERO;
        for &(z, w) in &self.taps {
            let jet = self.model.raw_jet([p[0] - z[0], p[1] - z[1]], &mut scratch)?;
            acc.scaled_add(w, &jet);
        }
        Ok(acc)
    }

    fn is_flat(&self) -> bool {
        self.model.is_flat()
    }
}
