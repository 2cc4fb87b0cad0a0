use curvlab_core::geodesic::{
    curvature_band, geodesic_limit, integrate_geodesic, jacobi_curvature, riccati_envelope, riccati_integrate,
    riccati_lower, riccati_upper, Distance, DistanceMatrix, DistanceSolver, ShootingOptions, MIN_STEPS,
};
use curvlab_core::{Mat2, Vec2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Ctx, Outcome, RandomWitnesses};
use crate::error::{Result, RunError};
use crate::io::{distances_to_csv, geodesic_to_csv, json_bytes, num, Table};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeodesicSpec {
    start: Vec2,
    velocity: Vec2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeodesicParams {
    geodesics: Vec<GeodesicSpec>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_drift")]
    max_energy_drift: f64,
    /// On flat metrics, the allowed deviation from `y + t w`.
    #[serde(default = "default_line")]
    max_line_deviation: f64,
    /// Also report the ε-sweep of each geodesic (needs two or more ε).
    #[serde(default)]
    limit: bool,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_steps() -> usize {
    256
}

fn default_drift() -> f64 {
    1e-8
}

fn default_line() -> f64 {
    1e-10
}

pub fn validate_geodesic(scn: &Scenario) -> Result<()> {
    let p: GeodesicParams = scn.params()?;
    if p.geodesics.is_empty() {
        return Err(RunError::schema("params.geodesics must not be empty"));
    }
    if p.steps < MIN_STEPS {
        return Err(RunError::schema(format!("params.steps must be at least {MIN_STEPS}")));
    }
    if p.limit && scn.eps_list.len() < 2 {
        return Err(RunError::schema("params.limit needs at least two eps values"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct GeodesicSummary {
    start: Vec2,
    velocity: Vec2,
    end: Vec2,
    length: f64,
    energy_drift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    line_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<LimitSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct LimitSummary {
    eps: Vec<f64>,
    lengths: Vec<f64>,
    deviations: Vec<f64>,
    metric_gaps: Vec<f64>,
}

pub fn geodesic(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: GeodesicParams = ctx.scn.params()?;
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let metric = fm.source();
    let flat = metric.is_flat();
    let mut out = Outcome::new();
    let mut summaries = Vec::new();
    for (k, g) in p.geodesics.iter().enumerate() {
        let sol = integrate_geodesic(metric, g.start, g.velocity, p.steps)?;
        let drift = sol.energy_drift();
        let line = flat.then(|| {
            sol.times
                .iter()
                .zip(&sol.positions)
                .map(|(t, x)| {
                    let dx = x[0] - (g.start[0] + t * g.velocity[0]);
                    let dy = x[1] - (g.start[1] + t * g.velocity[1]);
                    dx.abs().max(dy.abs())
                })
                .fold(0.0, f64::max)
        });
        out.verdict &= drift <= p.max_energy_drift && line.is_none_or(|d| d <= p.max_line_deviation);
        let limit = if p.limit {
            let model = ctx.sampled(p.metric_resolution.unwrap_or(ctx.scn.n))?;
            let lim = geodesic_limit(&model, g.start, g.velocity, &ctx.scn.eps_list, p.steps)?;
            Some(LimitSummary {
                eps: lim.eps,
                lengths: lim.lengths,
                deviations: lim.deviations,
                metric_gaps: lim.metric_gaps,
            })
        } else {
            None
        };
        out.file(
            format!("geodesic_{k}.csv"),
            geodesic_to_csv(&sol, &format!("geodesic {k}")),
        );
        summaries.push(GeodesicSummary {
            start: g.start,
            velocity: g.velocity,
            end: sol.end(),
            length: sol.length(),
            energy_drift: drift,
            line_deviation: line,
            limit,
        });
    }
    let max_drift = summaries.iter().map(|s| s.energy_drift).fold(0.0, f64::max);
    out.set("max_energy_drift", max_drift);
    if flat {
        let dev = summaries.iter().filter_map(|s| s.line_deviation).fold(0.0, f64::max);
        out.set("max_line_deviation", dev);
    }
    out.file(
        "geodesics.json",
        json_bytes(&serde_json::json!({
            "quantity": "geodesic endpoints, lengths and relative energy drift",
            "geodesics": summaries,
        })),
    );
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistanceParams {
    #[serde(default)]
    points: Option<Vec<Vec2>>,
    /// Number of uniformly random points, drawn from the scenario seed.
    #[serde(default)]
    random_points: Option<usize>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_triangle")]
    max_triangle_violation: f64,
    #[serde(default = "default_asymmetry")]
    max_asymmetry: f64,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_triangle() -> f64 {
    1e-6
}

fn default_asymmetry() -> f64 {
    1e-8
}

pub fn validate_distance_matrix(scn: &Scenario) -> Result<()> {
    let p: DistanceParams = scn.params()?;
    let count = match (&p.points, p.random_points) {
        (Some(pts), None) => pts.len(),
        (None, Some(n)) => n,
        _ => {
            return Err(RunError::schema(
                "give exactly one of params.points and params.random_points",
            ))
        }
    };
    if count < 2 {
        return Err(RunError::schema("a distance matrix needs at least two points"));
    }
    if p.steps < MIN_STEPS {
        return Err(RunError::schema(format!("params.steps must be at least {MIN_STEPS}")));
    }
    Ok(())
}

pub fn distance_matrix(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: DistanceParams = ctx.scn.params()?;
    let points = match &p.points {
        Some(pts) => pts.clone(),
        None => {
            let mut rng = ctx.rng();
            (0..p.random_points.unwrap_or(0))
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect()
        }
    };
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let solver = DistanceSolver::new(
        fm.source(),
        ShootingOptions {
            steps: p.steps,
            ..ShootingOptions::default()
        },
    )?;
    let n = points.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let found: Vec<Distance> = pairs
        .par_iter()
        .map(|&(i, j)| solver.distance(points[i], points[j]))
        .collect::<curvlab_core::Result<_>>()?;
    let mut forward = Vec::new();
    let mut asym: f64 = 0.0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i < j {
            let back = pairs.iter().position(|&q| q == (j, i)).expect("both orders present");
            asym = asym.max((found[k].value - found[back].value).abs());
            forward.push((i, j, found[k]));
        }
    }
    let dm = DistanceMatrix::from_pairs(n, forward.iter().copied());
    let mut triangle: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                triangle = triangle.max(dm.get(a, c) - dm.get(a, b) - dm.get(b, c));
            }
        }
    }
    let mut out = Outcome::new();
    out.verdict = asym <= p.max_asymmetry && triangle <= p.max_triangle_violation;
    out.set("points", n);
    out.set("max_asymmetry", asym);
    out.set("max_triangle_violation", triangle);
    out.set("graph_fallbacks", dm.graph_fallbacks);
    out.set("diameter_lower_bound", dm.max());
    let mut pts = Table::new("support points of the distance matrix", &["index", "x", "y"]);
    for (k, q) in points.iter().enumerate() {
        pts.push(vec![k.to_string(), num(q[0]), num(q[1])]);
    }
    out.file("points.csv", pts.to_bytes());
    out.file("distances.csv", distances_to_csv(&forward));
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiccatiParams {
    #[serde(default = "default_riccati_witnesses")]
    witnesses: RandomWitnesses,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_riccati_tolerance")]
    tolerance: f64,
    /// Initial `U(0)` entries are drawn from `[−u0_scale, u0_scale]`.
    #[serde(default = "default_u0_scale")]
    u0_scale: f64,
    /// Constant curvature values for the closed-form check.
    #[serde(default = "default_constant_curvatures")]
    constant_curvatures: Vec<f64>,
    /// Times past this fraction of the envelope blow-up are dropped.
    #[serde(default = "default_blow_up_fraction")]
    blow_up_fraction: f64,
    #[serde(default)]
    metric_resolution: Option<usize>,
}

fn default_riccati_witnesses() -> RandomWitnesses {
    RandomWitnesses {
        count: 10,
        speed: [0.2, 0.6],
        min_abs_k: 0.0,
    }
}

fn default_riccati_tolerance() -> f64 {
    1e-6
}

fn default_u0_scale() -> f64 {
    0.5
}

fn default_constant_curvatures() -> Vec<f64> {
    vec![-4.0, -1.0, 0.0, 1.0, 4.0]
}

fn default_blow_up_fraction() -> f64 {
    0.9
}

pub fn validate_riccati(scn: &Scenario) -> Result<()> {
    let p: RiccatiParams = scn.params()?;
    p.witnesses.validate()?;
    if p.steps < MIN_STEPS {
        return Err(RunError::schema(format!("params.steps must be at least {MIN_STEPS}")));
    }
    if !(p.tolerance > 0.0) || !(p.u0_scale >= 0.0) || !(p.blow_up_fraction > 0.0 && p.blow_up_fraction <= 1.0) {
        return Err(RunError::schema(
            "params.tolerance > 0, u0_scale >= 0, blow_up_fraction in (0, 1]",
        ));
    }
    Ok(())
}

/// Eigenvalue bracket violation of one witness: positive values mean the
/// integrated `U(t)` left `[s_H, s_{−H}]`.
#[derive(Debug, Clone, Serialize)]
struct SandwichRow {
    x_star: Vec2,
    v: Vec2,
    u0: Mat2,
    h: f64,
    t_end: f64,
    truncated: bool,
    max_violation: f64,
}

fn closed_form(c: f64, s0: f64, t: f64) -> f64 {
    if c >= 0.0 {
        riccati_lower(c, s0, t)
    } else {
        riccati_upper(-c, s0, t)
    }
}

pub fn riccati(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: RiccatiParams = ctx.scn.params()?;
    let fm = ctx.flow_metric(p.metric_resolution)?;
    let metric = fm.source();
    let u = ctx.conformal_factor()?;
    let mut rng = ctx.rng();
    let witnesses = p.witnesses.draw(&mut rng, metric, u.as_ref())?;
    let u0s: Vec<Mat2> = witnesses
        .iter()
        .map(|_| {
            let mut r = || p.u0_scale * (2.0 * rng.random::<f64>() - 1.0);
            let (a, b, c) = (r(), r(), r());
            Mat2::symmetric(a, b, c)
        })
        .collect();
    let times: Vec<f64> = (0..=p.steps).map(|k| k as f64 / p.steps as f64).collect();

    let rows: Vec<(SandwichRow, Vec<Vec<String>>)> = witnesses
        .par_iter()
        .zip(&u0s)
        .map(|(w, u0)| -> Result<_> {
            let sol = integrate_geodesic(metric, w.x_star, w.v, p.steps)?;
            let k_path = jacobi_curvature(metric, &sol)?;
            let h = curvature_band(&k_path);
            let s0 = u0.sym_eigenvalues();
            let env = riccati_envelope(h, &s0, &times)?;
            let cutoff = env.blow_up.map_or(f64::INFINITY, |b| p.blow_up_fraction * b);
            let m = times
                .iter()
                .take_while(|t| **t < cutoff)
                .count()
                .max(4)
                .min(times.len());
            let sol_u = riccati_integrate(&k_path[..m], *u0, &times[..m])?;
            let mut worst: f64 = 0.0;
            let mut lines = Vec::with_capacity(m);
            for k in 0..m {
                let lo = riccati_lower(h, s0[0], times[k]);
                let hi = riccati_upper(h, s0[1], times[k]);
                let e = sol_u.eigenvalues[k];
                worst = worst.max(lo - e[0]).max(e[1] - hi);
                lines.push(vec![
                    num(times[k]),
                    num(lo),
                    num(e[0]),
                    num(e[1]),
                    num(hi),
                    num(sol_u.trace[k]),
                ]);
            }
            Ok((
                SandwichRow {
                    x_star: w.x_star,
                    v: w.v,
                    u0: *u0,
                    h,
                    t_end: times[m - 1],
                    truncated: m < times.len(),
                    max_violation: worst,
                },
                lines,
            ))
        })
        .collect::<Result<_>>()?;

    let mut out = Outcome::new();
    let worst = rows.iter().map(|r| r.0.max_violation).fold(f64::NEG_INFINITY, f64::max);
    let mut table = Table::new(
        "Riccati sandwich: s_H(t) <= eigenvalues of U(t) <= s_-H(t) along witness geodesics",
        &["witness", "t", "s_lower", "eig_min", "eig_max", "s_upper", "trace_U"],
    );
    for (k, (_, lines)) in rows.iter().enumerate() {
        for l in lines {
            let mut r = vec![k.to_string()];
            r.extend(l.iter().cloned());
            table.push(r);
        }
    }

    // Constant curvature: U = s I solves the scalar equation exactly.
    let mut closed = Table::new(
        "Riccati closed form: U(t) = s(t) I under constant K = c I",
        &["c", "s0", "t", "integrated", "closed_form", "relative_error"],
    );
    let mut closed_err: f64 = 0.0;
    for &c in &p.constant_curvatures {
        for s0 in [-p.u0_scale, 0.0, p.u0_scale] {
            let blow = if c >= 0.0 {
                curvlab_core::geodesic::lower_blow_up(c, s0)
            } else {
                curvlab_core::geodesic::upper_blow_up(-c, s0)
            };
            let cutoff = blow.map_or(f64::INFINITY, |b| p.blow_up_fraction * b);
            let m = times
                .iter()
                .take_while(|t| **t < cutoff)
                .count()
                .max(4)
                .min(times.len());
            let k_path = vec![Mat2::IDENTITY.scaled(c); m];
            let sol = riccati_integrate(&k_path, Mat2::IDENTITY.scaled(s0), &times[..m])?;
            for k in 0..m {
                let exact = closed_form(c, s0, times[k]);
                let got = 0.5 * sol.trace[k];
                // Relative once |s| exceeds one: the solutions grow without
                // bound towards the blow-up time.
                let err = ((got - exact).abs() / exact.abs().max(1.0)).max(sol.u[k].0[0][1].abs());
                closed_err = closed_err.max(err);
                if k % 16 == 0 || k + 1 == m {
                    closed.push(vec![num(c), num(s0), num(times[k]), num(got), num(exact), num(err)]);
                }
            }
        }
    }

    out.verdict = worst <= p.tolerance && closed_err <= p.tolerance;
    out.set("witnesses", rows.len());
    out.set("max_sandwich_violation", worst);
    out.set("max_closed_form_error", closed_err);
    out.set("tolerance", p.tolerance);
    out.set("curvature_bands", rows.iter().map(|r| r.0.h).collect::<Vec<_>>());
    out.file("riccati_sandwich.csv", table.to_bytes());
    out.file("riccati_closed_form.csv", closed.to_bytes());
    out.file(
        "riccati.json",
        json_bytes(&serde_json::json!({
            "quantity": "Riccati comparison along witness geodesics",
            "witnesses": rows.iter().map(|r| &r.0).collect::<Vec<_>>(),
        })),
    );
    Ok(out)
}
