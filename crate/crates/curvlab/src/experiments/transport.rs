use std::path::PathBuf;

use curvlab_core::geodesic::{CompiledPotential, DistanceSolver, ShootingOptions};
use curvlab_core::transport::{
    displacement_interpolation, is_c_concave, lagrangian_w2_squared, solve_exact, solve_sinkhorn, CostMatrix,
    DiscreteMeasure,
};
use curvlab_core::Vec2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Ctx, FlowSetup, Outcome};
use crate::cache::assemble;
use crate::error::{Result, RunError};
use crate::io::{json_bytes, measure_from_csv, measure_to_csv, num, plan_to_csv, Table};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OtParams {
    /// Number of random instances.
    #[serde(default = "default_instances")]
    instances: usize,
    /// Support size of each random measure.
    #[serde(default = "default_size")]
    size: usize,
    /// Random Dirac pairs for the `W₂(δ_x, δ_y) = d(x, y)` check.
    #[serde(default = "default_dirac_pairs")]
    dirac_pairs: usize,
    /// Entropic regularization for an additional Sinkhorn solve.
    #[serde(default)]
    sinkhorn_reg: Option<f64>,
    #[serde(default = "default_gap")]
    max_duality_gap: f64,
    #[serde(default = "default_dirac_tolerance")]
    max_dirac_error: f64,
    /// Source and target measure files, solved as an extra instance.
    #[serde(default)]
    measure_files: Option<[PathBuf; 2]>,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_instances() -> usize {
    3
}

fn default_size() -> usize {
    50
}

fn default_dirac_pairs() -> usize {
    5
}

fn default_gap() -> f64 {
    1e-7
}

fn default_dirac_tolerance() -> f64 {
    1e-8
}

pub fn validate_ot(scn: &Scenario) -> Result<()> {
    let p: OtParams = scn.params()?;
    if p.instances == 0 && p.measure_files.is_none() {
        return Err(RunError::schema(
            "ot needs params.instances > 0 or params.measure_files",
        ));
    }
    if p.size == 0 {
        return Err(RunError::schema("params.size must be positive"));
    }
    if p.sinkhorn_reg.is_some_and(|r| !(r > 0.0)) {
        return Err(RunError::schema("params.sinkhorn_reg must be positive"));
    }
    Ok(())
}

fn random_measure(rng: &mut ChaCha8Rng, size: usize) -> Result<DiscreteMeasure> {
    let points: Vec<Vec2> = (0..size).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let masses: Vec<f64> = (0..size).map(|_| rng.random_range(0.1..1.0)).collect();
    Ok(DiscreteMeasure::normalized(points, masses)?)
}

/// Cost matrix as exact decimal triples, for independent re-solving.
fn cost_to_csv(c: &CostMatrix) -> Vec<u8> {
    let mut t = Table::new("transport cost c(x_i, y_j) = d(x_i, y_j)^2 / 2", &["i", "j", "cost"]);
    for i in 0..c.rows {
        for j in 0..c.cols {
            t.push(vec![i.to_string(), j.to_string(), num(c.get(i, j))]);
        }
    }
    t.to_bytes()
}

#[derive(Debug, Clone, Serialize)]
struct InstanceSummary {
    name: String,
    sources: usize,
    targets: usize,
    cost: f64,
    w2: f64,
    dual_value: f64,
    duality_gap: f64,
    marginal_error: f64,
    c_concavity_residual: f64,
    pivots: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sinkhorn_cost: Option<f64>,
}

pub fn ot(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: OtParams = ctx.scn.params()?;
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let solver = DistanceSolver::new(fm.source(), ShootingOptions::default())?;
    let cache = ctx.cost_cache();
    let metric_id = ctx.metric_id(p.metric_resolution);
    let mut rng = ctx.rng();

    let mut problems: Vec<(String, DiscreteMeasure, DiscreteMeasure)> = Vec::new();
    for k in 0..p.instances {
        let mu = random_measure(&mut rng, p.size)?;
        let nu = random_measure(&mut rng, p.size)?;
        problems.push((format!("ot_{k}"), mu, nu));
    }
    if let Some([a, b]) = &p.measure_files {
        let read = |path: &PathBuf| -> Result<DiscreteMeasure> {
            let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
            measure_from_csv(&bytes, path)
        };
        problems.push(("ot_files".into(), read(a)?, read(b)?));
    }

    let mut out = Outcome::new();
    let mut summaries = Vec::new();
    for (name, mu, nu) in &problems {
        let cost = match &cache {
            Some(c) => {
                let (m, hit) = c.get_or_assemble(&metric_id, &solver, mu.points(), nu.points())?;
                out.set(&format!("{name}_cache_hit"), hit);
                m
            }
            None => assemble(&solver, mu.points(), nu.points())?,
        };
        let sol = solve_exact(mu.weights(), nu.weights(), &cost)?;
        let conc = is_c_concave(&sol.potential.psi, &cost);
        let sinkhorn_cost = match p.sinkhorn_reg {
            Some(reg) => Some(
                solve_sinkhorn(mu.weights(), nu.weights(), &cost, reg, 10_000)?
                    .plan
                    .cost,
            ),
            None => None,
        };
        out.verdict &= sol.duality_gap.abs() <= p.max_duality_gap;
        summaries.push(InstanceSummary {
            name: name.clone(),
            sources: mu.len(),
            targets: nu.len(),
            cost: sol.plan.cost,
            w2: (2.0 * sol.plan.cost.max(0.0)).sqrt(),
            dual_value: sol.dual_value,
            duality_gap: sol.duality_gap,
            marginal_error: sol.plan.marginal_error(mu.weights(), nu.weights()),
            c_concavity_residual: conc.residual,
            pivots: sol.pivots,
            sinkhorn_cost,
        });
        out.file(format!("{name}_mu.csv"), measure_to_csv(mu, "source measure"));
        out.file(format!("{name}_nu.csv"), measure_to_csv(nu, "target measure"));
        out.file(format!("{name}_cost.csv"), cost_to_csv(&cost));
        out.file(format!("{name}_plan.csv"), plan_to_csv(&sol.plan));
    }

    let pairs: Vec<(Vec2, Vec2)> = (0..p.dirac_pairs)
        .map(|_| {
            (
                [rng.random::<f64>(), rng.random::<f64>()],
                [rng.random::<f64>(), rng.random::<f64>()],
            )
        })
        .collect();
    let diracs: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(x, y)| -> Result<(f64, f64)> {
            let w2 = curvlab_core::transport::wasserstein2(
                &DiscreteMeasure::dirac(*x),
                &DiscreteMeasure::dirac(*y),
                &solver,
            )?;
            Ok((w2, solver.distance(*x, *y)?.value))
        })
        .collect::<Result<_>>()?;
    let mut dt = Table::new(
        "W2 between Dirac masses at x and y against the geodesic distance d(x, y)",
        &["x0", "x1", "y0", "y1", "w2", "distance"],
    );
    let mut dirac_err: f64 = 0.0;
    for ((x, y), (w2, d)) in pairs.iter().zip(&diracs) {
        dirac_err = dirac_err.max((w2 - d).abs());
        dt.push(vec![num(x[0]), num(x[1]), num(y[0]), num(y[1]), num(*w2), num(*d)]);
    }
    out.verdict &= dirac_err <= p.max_dirac_error;
    out.file("dirac.csv", dt.to_bytes());

    out.set(
        "max_duality_gap",
        summaries.iter().map(|s| s.duality_gap.abs()).fold(0.0, f64::max),
    );
    out.set("max_dirac_error", dirac_err);
    out.set("instances", &summaries);
    out.file(
        "ot.json",
        json_bytes(&serde_json::json!({
            "quantity": "exact optimal transport for c = d^2/2",
            "instances": summaries,
        })),
    );
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisplacementParams {
    #[serde(rename = "flow")]
    setup: FlowSetup,
    /// Relative tolerance of `W₂(μ_s, μ_t) = |t − s| W₂(μ₀, μ₁)`.
    #[serde(default = "default_w2_tolerance")]
    w2_tolerance: f64,
    /// Relative tolerance of the Lagrangian `W₂²` against the solver.
    #[serde(default = "default_lagrangian_tolerance")]
    lagrangian_tolerance: f64,
}

fn default_w2_tolerance() -> f64 {
    1e-3
}

fn default_lagrangian_tolerance() -> f64 {
    1e-4
}

pub fn validate_displacement(scn: &Scenario) -> Result<()> {
    let p: DisplacementParams = scn.params()?;
    p.setup.validate()?;
    let has = |t: f64| p.setup.t_list.contains(&t);
    if !has(0.0) || !has(1.0) {
        return Err(RunError::schema("displacement t_list must contain 0 and 1"));
    }
    Ok(())
}

pub fn displacement(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: DisplacementParams = ctx.scn.params()?;
    let res = p.setup.metric_resolution;
    let fm = ctx.flow_metric(res)?;
    let metric = fm.source();
    let phi_expr = p.setup.potential(metric)?;
    let phi = CompiledPotential::new(&phi_expr);
    let bump = p.setup.bump();
    let mu0 = DiscreteMeasure::on_grid(metric, ctx.scn.n, |x| bump.eval(x))?;
    let family = displacement_interpolation(metric, &phi, &mu0, &p.setup.t_list, p.setup.steps_per_unit)?;
    let solver = DistanceSolver::new(metric, ShootingOptions::default())?;
    let cache = ctx.cost_cache();
    let metric_id = ctx.metric_id(res);

    let idx = |t: f64| p.setup.t_list.iter().position(|s| *s == t).expect("validated");
    let (i0, i1) = (idx(0.0), idx(1.0));
    let n = family.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let w2: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| -> Result<f64> {
            let (ma, mb) = (&family[a].measure, &family[b].measure);
            let cost = match &cache {
                Some(c) => c.get_or_assemble(&metric_id, &solver, ma.points(), mb.points())?.0,
                None => assemble(&solver, ma.points(), mb.points())?,
            };
            let sol = solve_exact(ma.weights(), mb.weights(), &cost)?;
            Ok((2.0 * sol.plan.cost.max(0.0)).sqrt())
        })
        .collect::<Result<_>>()?;
    let pos = |a: usize, b: usize| {
        let (a, b) = (a.min(b), a.max(b));
        pairs.iter().position(|q| *q == (a, b)).expect("pair present")
    };
    let w01 = w2[pos(i0, i1)];
    let lag = lagrangian_w2_squared(metric, &phi, &mu0)?;
    let lag_err = (lag - w01 * w01).abs() / (w01 * w01);

    let mut table = Table::new(
        "W2 between interpolants mu_s and mu_t against |t - s| W2(mu_0, mu_1)",
        &["s", "t", "w2", "expected", "relative_error"],
    );
    let mut worst: f64 = 0.0;
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let (s, t) = (family[a].t, family[b].t);
        let expected = (t - s).abs() * w01;
        let rel = (w2[k] - expected).abs() / expected;
        worst = worst.max(rel);
        table.push(vec![num(s), num(t), num(w2[k]), num(expected), num(rel)]);
    }

    let mut out = Outcome::new();
    out.verdict = worst <= p.w2_tolerance && lag_err <= p.lagrangian_tolerance;
    out.set("support", mu0.len());
    out.set("w2_01", w01);
    out.set("lagrangian_w2_squared", lag);
    out.set("lagrangian_relative_error", lag_err);
    out.set("max_geodesic_relative_error", worst);
    out.set("masses", family.iter().map(|m| m.mass).collect::<Vec<_>>());
    out.set("potential", phi_expr.to_string());
    out.file("w2_pairs.csv", table.to_bytes());
    for m in &family {
        out.file(
            format!("mu_t{}.csv", num(m.t)),
            measure_to_csv(&m.measure, &format!("displacement interpolant at t = {}", num(m.t))),
        );
    }
    Ok(out)
}
