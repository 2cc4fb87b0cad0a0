use curvlab_core::curvature::k_eff;
use curvlab_core::entropy::{
    c_second_derivative_identity, convexity_check, pointwise_convexity_check, ConvexityInstance, EntropyFunction,
    FlowSettings, PointwiseConvexity, SecondDerivativeIdentity, WitnessRadii,
};
use curvlab_core::geodesic::{DistanceSolver, ShootingOptions};
use curvlab_core::transport::{solve_exact, DiscreteMeasure};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gauss_curvature, Ctx, FlowMetric, FlowSetup, Outcome, RandomWitnesses};
use crate::cache::assemble;
use crate::error::{Result, RunError};
use crate::io::{json_bytes, num, Table};
use crate::scenario::{Scenario, WitnessSpec};

/// Entropy integrand `U`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntropySpec {
    /// `U(r) = r log r`.
    #[default]
    Boltzmann,
    /// `U(r) = r^m / (m − 1)`, `m > 1`.
    Power(f64),
}

impl EntropySpec {
    fn build(self) -> Result<EntropyFunction> {
        match self {
            EntropySpec::Boltzmann => Ok(EntropyFunction::boltzmann()),
            EntropySpec::Power(m) => {
                EntropyFunction::power(m).map_err(|e| RunError::schema(format!("params.entropy: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvexityParams {
    flow: FlowSetup,
    #[serde(default)]
    entropy: EntropySpec,
    /// Margins must be at least `−tolerance`.
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    /// When set, margins must also satisfy `|m| ≤ equality_tolerance`.
    #[serde(default)]
    equality_tolerance: Option<f64>,
    /// Allowed gap between the Lagrangian and resampled-density entropies.
    #[serde(default = "default_cross_form")]
    cross_form_tolerance: f64,
    /// Also solve `W₂(μ₀, μ₁)` by optimal transport and report the gap.
    #[serde(default)]
    solver_cross_check: bool,
}

fn default_tolerance() -> f64 {
    1e-3
}

fn default_cross_form() -> f64 {
    1e-4
}

pub fn validate_convexity(scn: &Scenario) -> Result<()> {
    let p: ConvexityParams = scn.params()?;
    p.flow.validate()?;
    p.entropy.build()?;
    if !(p.tolerance >= 0.0) || !(p.cross_form_tolerance >= 0.0) {
        return Err(RunError::schema("tolerances must be non-negative"));
    }
    if p.flow.t_list.iter().any(|t| *t <= 0.0 || *t >= 1.0) {
        return Err(RunError::schema("convexity t_list entries must lie in (0, 1)"));
    }
    Ok(())
}

fn settings(steps_per_unit: usize) -> FlowSettings {
    FlowSettings { steps_per_unit }
}

pub fn convexity(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: ConvexityParams = ctx.scn.params()?;
    let k = ctx.k()?;
    let u = p.entropy.build()?;
    let fm = ctx.flow_metric(p.flow.metric_resolution)?;
    let metric = fm.source();
    let phi = p.flow.potential(metric)?;
    let inst = ConvexityInstance {
        metric,
        phi: &phi,
        bump: p.flow.bump(),
        n: ctx.scn.n,
    };
    let report = convexity_check(
        &inst,
        k,
        &p.flow.t_list,
        &u,
        p.tolerance,
        &settings(p.flow.steps_per_unit),
    )?;
    let min_margin = report.margin.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs_margin = report.margin.iter().map(|m| m.abs()).fold(0.0, f64::max);
    let margins_ok = report.verdict && p.equality_tolerance.is_none_or(|e| max_abs_margin <= e);
    let cross_ok = report.cross_form_gap <= p.cross_form_tolerance;

    let mut out = Outcome::new();
    out.verdict = margins_ok && cross_ok;
    out.set("K", k);
    out.set("entropy", u.name());
    out.set("lambda", report.lambda);
    out.set("margins", &report.margin);
    out.set("min_margin", min_margin);
    out.set("max_abs_margin", max_abs_margin);
    out.set("margins_ok", margins_ok);
    out.set("cross_form_gap", report.cross_form_gap);
    out.set("cross_form_ok", cross_ok);
    out.set("w2", report.w2);
    out.set("potential", phi.to_string());

    if p.solver_cross_check {
        let (mu0, mu1) = endpoint_measures(&inst, p.flow.steps_per_unit)?;
        let solver = DistanceSolver::new(metric, ShootingOptions::default())?;
        let cost = assemble(&solver, mu0.points(), mu1.points())?;
        let sol = solve_exact(mu0.weights(), mu1.weights(), &cost)?;
        let w2 = (2.0 * sol.plan.cost.max(0.0)).sqrt();
        out.set("w2_solved", w2);
        out.set("w2_relative_gap", (w2 - report.w2).abs() / report.w2);
    }

    let mut table = Table::new(
        "displacement convexity: U(mu_t) against t U(mu_1) + (1 - t) U(mu_0) - lambda t (1 - t) W2^2 / 2",
        &["t", "lhs", "rhs", "margin", "measure_lhs"],
    );
    for k in 0..report.t.len() {
        table.push(vec![
            num(report.t[k]),
            num(report.lhs[k]),
            num(report.rhs[k]),
            num(report.margin[k]),
            num(report.measure_lhs[k]),
        ]);
    }
    out.file("convexity.csv", table.to_bytes());
    out.file("convexity_report.json", json_bytes(&report));
    Ok(out)
}

/// `μ₀` on the grid and its pushforward `μ₁`.
fn endpoint_measures(
    inst: &ConvexityInstance<'_>,
    steps_per_unit: usize,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let metric = inst.metric;
    let phi = curvlab_core::geodesic::CompiledPotential::new(inst.phi);
    let mu0 = DiscreteMeasure::on_grid(metric, inst.n, |x| inst.bump.eval(x))?;
    let fam = curvlab_core::transport::displacement_interpolation(metric, &phi, &mu0, &[1.0], steps_per_unit)?;
    let mu1 = fam.into_iter().next().expect("one time requested").measure;
    Ok((mu0, mu1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FromBoundCheck {
    /// Coordinate speed of the witness velocity along the minimizing
    /// direction.
    speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WitnessParams {
    #[serde(default)]
    witnesses: Vec<WitnessSpec>,
    #[serde(default)]
    random: Option<RandomWitnesses>,
    /// Add a witness at the minimizer of `K_eff` at the smallest ε.
    #[serde(default)]
    from_bound_check: Option<FromBoundCheck>,
    /// Defaults to the first entry of `delta_list`.
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default = "default_t_grid")]
    t_grid: Vec<f64>,
    #[serde(default)]
    radii: Option<WitnessRadii>,
    #[serde(default = "default_steps_per_unit")]
    steps_per_unit: usize,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_t_grid() -> Vec<f64> {
    (-4..=4).map(|k| k as f64 * 0.05).collect()
}

fn default_steps_per_unit() -> usize {
    256
}

pub fn validate_witness(scn: &Scenario) -> Result<()> {
    let p: WitnessParams = scn.params()?;
    if p.witnesses.is_empty() && p.random.is_none() && p.from_bound_check.is_none() {
        return Err(RunError::schema("witness needs witnesses, random or from_bound_check"));
    }
    if let Some(r) = &p.random {
        r.validate()?;
    }
    if p.from_bound_check.is_some() && scn.eps_list.is_empty() {
        return Err(RunError::schema("from_bound_check needs a non-empty eps_list"));
    }
    match p.delta.or(scn.delta_list.first().copied()) {
        Some(d) if d > 0.0 => {}
        _ => return Err(RunError::schema("witness needs a positive params.delta or delta_list")),
    }
    if p.t_grid.len() < 3 || !p.t_grid.contains(&0.0) {
        return Err(RunError::schema("params.t_grid needs at least 3 nodes including 0"));
    }
    Ok(())
}

fn witness_list(
    ctx: &Ctx<'_>,
    metric: &FlowMetric,
    extra: &[WitnessSpec],
    random: Option<&RandomWitnesses>,
) -> Result<Vec<WitnessSpec>> {
    let mut list = extra.to_vec();
    if let Some(r) = random {
        let u = ctx.conformal_factor()?;
        list.extend(r.draw(&mut ctx.rng(), metric.source(), u.as_ref())?);
    }
    Ok(list)
}

#[derive(Debug, Clone, Serialize)]
struct WitnessRow {
    x_star: curvlab_core::Vec2,
    v: curvlab_core::Vec2,
    verdict: bool,
    at_zero: f64,
    min_second_difference: f64,
}

pub fn witness(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: WitnessParams = ctx.scn.params()?;
    let k = ctx.k()?;
    let delta = p.delta.or(ctx.scn.delta_list.first().copied()).expect("validated");
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let mut list = witness_list(ctx, &fm, &p.witnesses, p.random.as_ref())?;
    if let Some(fb) = p.from_bound_check {
        let FlowMetric::Smoothed(s) = &fm else {
            return Err(RunError::schema("from_bound_check needs a mollified metric"));
        };
        let e = k_eff(s, s.eps())?;
        let h = 1.0 / ctx.scn.n as f64;
        let (i, j) = e.argmin_node;
        let norm = e.argmin_vector[0].hypot(e.argmin_vector[1]);
        list.push(WitnessSpec {
            x_star: [i as f64 * h, j as f64 * h],
            v: [
                fb.speed * e.argmin_vector[0] / norm,
                fb.speed * e.argmin_vector[1] / norm,
            ],
        });
    }
    let metric = fm.source();
    let radii = p.radii.unwrap_or_default();
    let st = settings(p.steps_per_unit);
    let results: Vec<PointwiseConvexity> = list
        .par_iter()
        .map(|w| {
            pointwise_convexity_check(metric, w.x_star, w.v, k, delta, &p.t_grid, &radii, &st).map_err(RunError::from)
        })
        .collect::<Result<_>>()?;

    let mut out = Outcome::new();
    let mut table = Table::new(
        "pointwise convexity of -C(x*, t) - (K - delta/2) t^2 g(v, v) / 2 along the witness flow",
        &["witness", "t", "value", "second_difference"],
    );
    let mut rows = Vec::new();
    for (k, (w, r)) in list.iter().zip(&results).enumerate() {
        out.verdict &= r.verdict;
        for (m, t) in r.t.iter().enumerate() {
            let sd = if m == 0 || m + 1 == r.t.len() {
                String::new()
            } else {
                num(r.second_differences[m - 1])
            };
            table.push(vec![k.to_string(), num(*t), num(r.values[m]), sd]);
        }
        rows.push(WitnessRow {
            x_star: w.x_star,
            v: w.v,
            verdict: r.verdict,
            at_zero: r.at_zero,
            min_second_difference: r.second_differences.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    out.set("K", k);
    out.set("delta", delta);
    out.set("failing_witnesses", rows.iter().filter(|r| !r.verdict).count());
    out.set("witnesses", &rows);
    out.file("witness.csv", table.to_bytes());
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct C2Params {
    #[serde(default)]
    witnesses: Vec<WitnessSpec>,
    #[serde(default = "default_c2_random")]
    random: Option<RandomWitnesses>,
    #[serde(default = "default_c2_steps")]
    steps_per_unit: usize,
    #[serde(default = "default_c2_tolerance")]
    tolerance: f64,
    #[serde(default)]
    radii: Option<WitnessRadii>,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_c2_random() -> Option<RandomWitnesses> {
    Some(RandomWitnesses {
        count: 10,
        speed: [0.02, 0.08],
        min_abs_k: 0.5,
    })
}

fn default_c2_steps() -> usize {
    512
}

fn default_c2_tolerance() -> f64 {
    1e-2
}

pub fn validate_c2(scn: &Scenario) -> Result<()> {
    let p: C2Params = scn.params()?;
    if p.witnesses.is_empty() && p.random.is_none() {
        return Err(RunError::schema("c2-identity needs witnesses or random"));
    }
    if let Some(r) = &p.random {
        r.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct C2Row {
    #[serde(flatten)]
    identity: SecondDerivativeIdentity,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_relative_error: Option<f64>,
}

pub fn c2_identity(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: C2Params = ctx.scn.params()?;
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let list = witness_list(ctx, &fm, &p.witnesses, p.random.as_ref())?;
    let metric = fm.source();
    let radii = p.radii.unwrap_or_default();
    let st = settings(p.steps_per_unit);
    let u = ctx.conformal_factor()?;
    let rows: Vec<C2Row> = list
        .par_iter()
        .map(|w| -> Result<C2Row> {
            let identity = c_second_derivative_identity(metric, w.x_star, w.v, &radii, &st)?;
            let oracle_rhs = match &u {
                Some(uf) => {
                    let kg = gauss_curvature(metric, Some(uf), w.x_star)?;
                    let conf = (2.0 * uf.eval(w.x_star[0], w.x_star[1])).exp();
                    Some(kg * conf * (w.v[0] * w.v[0] + w.v[1] * w.v[1]))
                }
                None => None,
            };
            let oracle_relative_error = oracle_rhs.map(|r| (identity.lhs - r).abs() / r.abs().max(f64::MIN_POSITIVE));
            Ok(C2Row {
                identity,
                oracle_rhs,
                oracle_relative_error,
            })
        })
        .collect::<Result<_>>()?;
    let max_err = rows.iter().map(|r| r.identity.relative_error).fold(0.0, f64::max);
    let max_oracle = rows.iter().filter_map(|r| r.oracle_relative_error).fold(0.0, f64::max);

    let mut out = Outcome::new();
    out.verdict = max_err <= p.tolerance && max_oracle <= p.tolerance;
    out.set("witnesses", rows.len());
    out.set("max_relative_error", max_err);
    if u.is_some() {
        out.set("max_oracle_relative_error", max_oracle);
    }
    out.set("tolerance", p.tolerance);
    let mut table = Table::new(
        "second variation identity: -C''(0) against Ric(v, v) at the witness base point",
        &[
            "x",
            "y",
            "vx",
            "vy",
            "minus_C2",
            "ric_vv",
            "relative_error",
            "oracle_ric_vv",
            "oracle_relative_error",
        ],
    );
    for r in &rows {
        let id = &r.identity;
        table.push(vec![
            num(id.x_star[0]),
            num(id.x_star[1]),
            num(id.v[0]),
            num(id.v[1]),
            num(id.lhs),
            num(id.rhs),
            num(id.relative_error),
            r.oracle_rhs.map(num).unwrap_or_default(),
            r.oracle_relative_error.map(num).unwrap_or_default(),
        ]);
    }
    out.file("c2_identity.csv", table.to_bytes());
    out.file("c2_identity.json", json_bytes(&rows));
    Ok(out)
}
