//! One module per family of experiment kinds. Each kind parses its own
//! `params` object and returns an [`Outcome`].

mod curvature;
mod entropy;
mod geodesic;
mod transport;

use std::path::Path;

use curvlab_core::curvature::{conformal_curvature, PointGeometry};
use curvlab_core::entropy::{Bump, WitnessRadii};
use curvlab_core::linalg::periodic_distance;
use curvlab_core::{FieldExpr, MetricModel, MetricSource, SmoothedMetric, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cache::CostCache;
use crate::error::{Result, RunError};
use crate::scenario::{BumpSpec, ExperimentKind, KSpec, NamedK, Scenario, WitnessSpec};

/// Result of one experiment before it is written to disk.
pub struct Outcome {
    pub verdict: bool,
    pub summary: Map<String, Value>,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            verdict: true,
            summary: Map::new(),
            files: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary values serialize"),
        );
    }

    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

/// Metric used by geodesic, flow and transport experiments: the mollified
/// metric at the smallest ε when an ε-list is given, else the model itself.
#[allow(clippy::large_enum_variant)]
pub enum FlowMetric {
    Model(MetricModel),
    Smoothed(SmoothedMetric),
}

impl FlowMetric {
    pub fn source(&self) -> &dyn MetricSource {
        match self {
            FlowMetric::Model(m) => m,
            FlowMetric::Smoothed(s) => s,
        }
    }
}

pub struct Ctx<'a> {
    pub scn: &'a Scenario,
    pub out_dir: &'a Path,
    pub model: MetricModel,
}

impl<'a> Ctx<'a> {
    pub fn new(scn: &'a Scenario, out_dir: &'a Path) -> Result<Self> {
        Ok(Ctx {
            scn,
            out_dir,
            model: scn.metric.build()?,
        })
    }

    fn sampled(&self, n: usize) -> Result<MetricModel> {
        Ok(self.model.sample(n)?)
    }

    fn smallest_eps(&self) -> Option<f64> {
        self.scn.eps_list.iter().copied().reduce(f64::min)
    }

    fn flow_metric(&self, resolution: Option<usize>) -> Result<FlowMetric> {
        match self.smallest_eps() {
            Some(eps) => {
                let m = self.sampled(resolution.unwrap_or(self.scn.n))?;
                Ok(FlowMetric::Smoothed(SmoothedMetric::new(&m, eps)?))
            }
            None => Ok(FlowMetric::Model(self.model.clone())),
        }
    }

    /// Identifies the flow metric for cost caching.
    fn metric_id(&self, resolution: Option<usize>) -> String {
        let spec = serde_json::to_string(&self.scn.metric).expect("metric spec serializes");
        format!(
            "{spec}|N={}|eps={:?}",
            resolution.unwrap_or(self.scn.n),
            self.smallest_eps()
        )
    }

    fn cost_cache(&self) -> Option<CostCache> {
        self.scn
            .cost_cache
            .as_ref()
            .map(|p| CostCache::new(self.out_dir.join(p)))
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.scn.seed)
    }

    fn conformal_factor(&self) -> Result<Option<FieldExpr>> {
        self.scn.metric.conformal_factor()
    }

    /// `K` after resolving `"oracle-min"` and adding `K_offset`.
    fn k(&self) -> Result<f64> {
        let base = match self.scn.k {
            Some(KSpec::Value(k)) => k,
            Some(KSpec::Named(NamedK::OracleMin)) => {
                let u = self
                    .conformal_factor()?
                    .ok_or_else(|| RunError::schema("oracle-min needs a conformal metric"))?;
                oracle_min(&u, self.scn.n).0
            }
            None => return Err(RunError::schema(format!("{} needs K", self.scn.kind.as_str()))),
        };
        Ok(base + self.scn.k_offset)
    }
}

/// Minimum of the analytic Gauss curvature `−e^{−2u} Δu` and every point
/// attaining it: dense sampling at twice the grid resolution, then compass
/// search from the best samples.
pub fn oracle_min(u: &FieldExpr, n: usize) -> (f64, Vec<Vec2>) {
    let m = (2 * n).clamp(64, 512);
    let h = 1.0 / m as f64;
    let (uxx, uyy) = (u.dx().dx(), u.dy().dy());
    let k = |p: Vec2| -(-2.0 * u.eval(p[0], p[1])).exp() * (uxx.eval(p[0], p[1]) + uyy.eval(p[0], p[1]));
    let mut samples: Vec<(f64, Vec2)> = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            let p = [i as f64 * h, j as f64 * h];
            samples.push((k(p), p));
        }
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut refined: Vec<(f64, Vec2)> = Vec::new();
    for &(v0, p0) in samples.iter().take(16) {
        let (mut v, mut p) = (v0, p0);
        let mut step = h;
        while step > 1e-12 {
            let mut moved = false;
            for d in COMPASS {
                let q = [p[0] + step * d[0], p[1] + step * d[1]];
                let w = k(q);
                if w < v {
                    v = w;
                    p = q;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        refined.push((v, [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0)]));
    }
    let best = refined.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + best.abs());
    let mut points: Vec<Vec2> = Vec::new();
    for (v, p) in refined {
        if v <= best + tol && points.iter().all(|q| periodic_distance(*q, p) > 4.0 * h) {
            points.push(p);
        }
    }
    (best, points)
}

const COMPASS: [Vec2; 8] = [
    [1.0, 0.0],
    [-1.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [1.0, 1.0],
    [-1.0, -1.0],
    [1.0, -1.0],
    [-1.0, 1.0],
];

/// Gauss curvature at `p`: the analytic formula for conformal metrics,
/// else from the metric jet.
fn gauss_curvature(metric: &dyn MetricSource, u: Option<&FieldExpr>, p: Vec2) -> Result<f64> {
    match u {
        Some(u) => Ok(conformal_curvature(u, p)),
        None => Ok(PointGeometry::from_jet(&metric.jet(p)?)?.scalar_k()),
    }
}

/// Speed range and optional curvature floor for random witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomWitnesses {
    count: usize,
    /// Coordinate speed range `[lo, hi]`.
    speed: [f64; 2],
    /// Reject base points with `|K_g(x*)|` below this.
    #[serde(default)]
    min_abs_k: f64,
}

impl RandomWitnesses {
    fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.speed[0] > 0.0 && self.speed[0] <= self.speed[1]) {
            return Err(RunError::schema(
                "random witnesses need count > 0 and 0 < speed[0] <= speed[1]",
            ));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng, metric: &dyn MetricSource, u: Option<&FieldExpr>) -> Result<Vec<WitnessSpec>> {
        let mut out = Vec::with_capacity(self.count);
        let mut tries = 0;
        while out.len() < self.count {
            tries += 1;
            if tries > 1000 * self.count {
                return Err(RunError::Numerics(curvlab_core::Error::InvalidInput(format!(
                    "no base points with |K| >= {} found",
                    self.min_abs_k
                ))));
            }
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let speed = self.speed[0] + (self.speed[1] - self.speed[0]) * rng.random::<f64>();
            if self.min_abs_k > 0.0 && gauss_curvature(metric, u, x)?.abs() < self.min_abs_k {
                continue;
            }
            out.push(WitnessSpec {
                x_star: x,
                v: [speed * angle.cos(), speed * angle.sin()],
            });
        }
        Ok(out)
    }
}

/// Potential and bump shared by displacement and convexity experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowSetup {
    /// Witness construction at `x*` with velocity `v`.
    #[serde(default)]
    witness: Option<WitnessSpec>,
    /// Explicit potential expression.
    #[serde(default)]
    phi: Option<String>,
    bump: BumpSpec,
    #[serde(default = "default_t_list")]
    t_list: Vec<f64>,
    #[serde(default = "default_steps_per_unit")]
    steps_per_unit: usize,
    /// Resolution at which the metric is sampled before mollification.
    #[serde(default)]
    metric_resolution: Option<usize>,
    #[serde(default)]
    radii: Option<WitnessRadii>,
}

fn default_t_list() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_steps_per_unit() -> usize {
    256
}

impl FlowSetup {
    fn validate(&self) -> Result<()> {
        if self.witness.is_some() == self.phi.is_some() {
            return Err(RunError::schema("give exactly one of witness and phi"));
        }
        if let Some(p) = &self.phi {
            FieldExpr::parse(p).map_err(|e| RunError::schema(format!("phi: {e}")))?;
        }
        if !(self.bump.radius > 0.0 && self.bump.radius < 0.5) {
            return Err(RunError::schema("bump radius must lie in (0, 1/2)"));
        }
        if self.t_list.is_empty() || self.t_list.iter().any(|t| !(*t >= 0.0 && *t <= 1.0)) {
            return Err(RunError::schema("t_list entries must lie in [0, 1]"));
        }
        if self.steps_per_unit < 16 {
            return Err(RunError::schema("steps_per_unit must be at least 16"));
        }
        Ok(())
    }

    fn radii(&self) -> WitnessRadii {
        self.radii.unwrap_or_default()
    }

    fn potential(&self, metric: &dyn MetricSource) -> Result<FieldExpr> {
        match (&self.witness, &self.phi) {
            (Some(w), _) => Ok(curvlab_core::entropy::build_witness_potential(
                metric,
                w.x_star,
                w.v,
                &self.radii(),
            )?),
            (None, Some(p)) => FieldExpr::parse(p).map_err(|e| RunError::schema(format!("phi: {e}"))),
            (None, None) => Err(RunError::schema("give exactly one of witness and phi")),
        }
    }

    fn bump(&self) -> Bump {
        Bump {
            center: self.bump.center,
            radius: self.bump.radius,
        }
    }
}

pub fn validate_params(scn: &Scenario) -> Result<()> {
    match scn.kind {
        ExperimentKind::BoundCheck => curvature::validate_bound_check(scn),
        ExperimentKind::Friedrichs => curvature::validate_friedrichs(scn),
        ExperimentKind::Commutators => curvature::validate_commutators(scn),
        ExperimentKind::Geodesic => geodesic::validate_geodesic(scn),
        ExperimentKind::DistanceMatrix => geodesic::validate_distance_matrix(scn),
        ExperimentKind::Riccati => geodesic::validate_riccati(scn),
        ExperimentKind::Ot => transport::validate_ot(scn),
        ExperimentKind::Displacement => transport::validate_displacement(scn),
        ExperimentKind::Convexity => entropy::validate_convexity(scn),
        ExperimentKind::Witness => entropy::validate_witness(scn),
        ExperimentKind::C2Identity => entropy::validate_c2(scn),
    }
}

pub fn execute(ctx: &Ctx<'_>) -> Result<Outcome> {
    match ctx.scn.kind {
        ExperimentKind::BoundCheck => curvature::bound_check(ctx),
        ExperimentKind::Friedrichs => curvature::friedrichs(ctx),
        ExperimentKind::Commutators => curvature::commutators(ctx),
        ExperimentKind::Geodesic => geodesic::geodesic(ctx),
        ExperimentKind::DistanceMatrix => geodesic::distance_matrix(ctx),
        ExperimentKind::Riccati => geodesic::riccati(ctx),
        ExperimentKind::Ot => transport::ot(ctx),
        ExperimentKind::Displacement => transport::displacement(ctx),
        ExperimentKind::Convexity => entropy::convexity(ctx),
        ExperimentKind::Witness => entropy::witness(ctx),
        ExperimentKind::C2Identity => entropy::c2_identity(ctx),
    }
}
