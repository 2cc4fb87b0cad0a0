use curvlab_core::curvature::{bound_check as check_bound, riemann_ricci, DEFAULT_TAIL};
use curvlab_core::expr::VectorFieldExpr;
use curvlab_core::mollify::{friedrichs_norms, pairing_commutator_norms, ricci_commutator_norms};
use curvlab_core::{FieldExpr, MetricModel, PeriodicGridField, SmoothedMetric};
use serde::{Deserialize, Serialize};

use super::{oracle_min, Ctx, Outcome};
use crate::error::{Result, RunError};
use crate::io::{commutator_to_csv, field_to_csv, json_bytes, num, Table};
use crate::scenario::Scenario;
use curvlab_core::linalg::periodic_distance;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundParams {
    /// Number of smallest ε that must satisfy the bound (capped at the
    /// length of the ε-list).
    #[serde(default = "default_tail")]
    tail: usize,
    /// When set and the metric is conformal, the verdict also requires the
    /// smallest-ε Ricci tensor to match `K_g g` within this sup-norm.
    #[serde(default)]
    oracle_tolerance: Option<f64>,
    #[serde(default = "yes")]
    write_fields: bool,
}

fn default_tail() -> usize {
    DEFAULT_TAIL
}

fn yes() -> bool {
    true
}

pub fn validate_bound_check(scn: &Scenario) -> Result<()> {
    let p: BoundParams = scn.params()?;
    if p.tail == 0 {
        return Err(RunError::schema("params.tail must be positive"));
    }
    if p.oracle_tolerance.is_some() && scn.metric.conformal_factor()?.is_none() {
        return Err(RunError::schema("params.oracle_tolerance needs a conformal metric"));
    }
    Ok(())
}

fn sup_matrix_gap(a: &PeriodicGridField, f: impl Fn(usize, usize) -> [[f64; 2]; 2]) -> (f64, (usize, usize)) {
    let n = a.resolution();
    let mut best = (0.0, (0, 0));
    for j in 0..n {
        for i in 0..n {
            let m = a.matrix(i, j);
            let b = f(i, j);
            for r in 0..2 {
                for c in 0..2 {
                    let d = (m.0[r][c] - b[r][c]).abs();
                    if d > best.0 {
                        best = (d, (i, j));
                    }
                }
            }
        }
    }
    best
}

pub fn bound_check(ctx: &Ctx<'_>) -> Result<Outcome> {
    let scn = ctx.scn;
    let p: BoundParams = scn.params()?;
    let k = ctx.k()?;
    let model = ctx.sampled(scn.n)?;
    let report = check_bound(&model, k, &scn.delta_list, &scn.eps_list, p.tail)?;
    let mut out = Outcome::new();
    out.verdict = report.all_hold();
    out.set("K", k);
    out.set("holds", report.all_hold());

    let mut table = Table::new(
        "K_eff: minimum over nodes and directions of Ric(v,v)/g(v,v) for the mollified metric",
        &[
            "eps",
            "K_eff",
            "argmin_i",
            "argmin_j",
            "argmin_x",
            "argmin_y",
            "argmin_vx",
            "argmin_vy",
        ],
    );
    let h = 1.0 / scn.n as f64;
    for e in &report.entries {
        let (i, j) = e.argmin_node;
        table.push(vec![
            num(e.eps),
            num(e.k_eff),
            i.to_string(),
            j.to_string(),
            num(i as f64 * h),
            num(j as f64 * h),
            num(e.argmin_vector[0]),
            num(e.argmin_vector[1]),
        ]);
    }

    // Geometry of the smallest ε.
    let eps = report.entries.last().map(|e| e.eps).expect("eps_list is non-empty");
    let s = SmoothedMetric::new(&model, eps)?;
    let fields = riemann_ricci(&s, true)?;
    let ric = fields.ric.as_ref().expect("riemann_ricci fills ric");
    out.set("eps_min", eps);
    out.set("gamma_sup", fields.gamma_sup());
    out.set("riem_sup", fields.riem_sup());
    out.set("ric_sup", ric.sup_norm());
    out.set("proportionality_residual", fields.proportionality_residual);

    let mut k_min_oracle = None;
    if let Some(u) = ctx.conformal_factor()? {
        let (kmin, argmins) = oracle_min(&u, scn.n);
        k_min_oracle = Some(kmin);
        let (uxx, uyy) = (u.dx().dx(), u.dy().dy());
        let kg = |x: f64, y: f64| -(-2.0 * u.eval(x, y)).exp() * (uxx.eval(x, y) + uyy.eval(x, y));
        let (err, at) = sup_matrix_gap(ric, |i, j| {
            let (x, y) = (i as f64 * h, j as f64 * h);
            let c = kg(x, y) * (2.0 * u.eval(x, y)).exp();
            [[c, 0.0], [0.0, c]]
        });
        out.set("oracle_k_min", kmin);
        out.set("oracle_argmin", &argmins);
        out.set("ric_error_sup", err);
        out.set("ric_error_node", at);
        if let Some(tol) = p.oracle_tolerance {
            out.set("oracle_tolerance", tol);
            out.verdict &= err <= tol;
        }
        let witnesses: Vec<f64> = report
            .verdicts
            .iter()
            .filter_map(|v| v.witness)
            .map(|w| {
                let x = [w.node.0 as f64 * h, w.node.1 as f64 * h];
                argmins
                    .iter()
                    .map(|a| periodic_distance(*a, x))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        if !witnesses.is_empty() {
            out.set("witness_to_argmin", witnesses);
        }
    }
    let last = report.entries.last().expect("eps_list is non-empty");
    out.set("k_eff_min_eps", last.k_eff);
    out.set("verdicts", &report.verdicts);

    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["quantity"] = "Ricci lower bound check Ric(g_eps) >= (K - delta) g_eps along the eps sweep".into();
    if let Some(kmin) = k_min_oracle {
        json["oracle_k_min"] = kmin.into();
    }
    out.file("bound_report.json", json_bytes(&json));
    out.file("k_eff.csv", table.to_bytes());
    if p.write_fields {
        if let Some(scalar) = fields.scalar.as_ref() {
            out.file(
                "gauss_curvature.csv",
                field_to_csv(
                    scalar,
                    &format!("Gauss curvature of the metric mollified at eps = {}", num(eps)),
                ),
            );
        }
        out.file(
            "ricci.csv",
            field_to_csv(
                ric,
                &format!("Ricci tensor of the metric mollified at eps = {}", num(eps)),
            ),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FriedrichsParams {
    /// C¹ periodic coefficient.
    a: String,
    /// Continuous periodic function.
    f: String,
}

pub fn validate_friedrichs(scn: &Scenario) -> Result<()> {
    let p: FriedrichsParams = scn.params()?;
    for (what, e) in [("params.a", &p.a), ("params.f", &p.f)] {
        FieldExpr::parse(e).map_err(|err| RunError::schema(format!("{what}: {err}")))?;
    }
    Ok(())
}

pub fn friedrichs(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: FriedrichsParams = ctx.scn.params()?;
    let a = FieldExpr::parse(&p.a).map_err(|e| RunError::schema(e.to_string()))?;
    let f = FieldExpr::parse(&p.f).map_err(|e| RunError::schema(e.to_string()))?;
    let report = friedrichs_norms(&a, &f, &ctx.scn.eps_list, ctx.scn.n)?;
    let mut out = Outcome::new();
    out.verdict = report.decreasing;
    out.set("decreasing", report.decreasing);
    out.set("sequences", report.sequences());
    out.file("friedrichs.csv", commutator_to_csv(&report));
    out.file("friedrichs.json", json_bytes(&report));
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommutatorParams {
    #[serde(default = "default_x")]
    x: [String; 2],
    #[serde(default = "default_y")]
    y: [String; 2],
}

fn default_x() -> [String; 2] {
    ["1".into(), "0.5*sin(2*pi*x)".into()]
}

fn default_y() -> [String; 2] {
    ["cos(2*pi*y)".into(), "1".into()]
}

fn vector_field(what: &str, v: &[String; 2]) -> Result<VectorFieldExpr> {
    VectorFieldExpr::parse(&v[0], &v[1]).map_err(|e| RunError::schema(format!("{what}: {e}")))
}

pub fn validate_commutators(scn: &Scenario) -> Result<()> {
    let p: CommutatorParams = scn.params()?;
    vector_field("params.x", &p.x)?;
    vector_field("params.y", &p.y)?;
    Ok(())
}

pub fn commutators(ctx: &Ctx<'_>) -> Result<Outcome> {
    let p: CommutatorParams = ctx.scn.params()?;
    let (x, y) = (vector_field("params.x", &p.x)?, vector_field("params.y", &p.y)?);
    let model: MetricModel = ctx.sampled(ctx.scn.n)?;
    let ricci = ricci_commutator_norms(&model, &ctx.scn.eps_list)?;
    let pairing = pairing_commutator_norms(&model, &x, &y, &ctx.scn.eps_list)?;
    let mut out = Outcome::new();
    let reports = [
        ("ricci", &ricci),
        ("pairing_ricci", &pairing.ricci),
        ("pairing_metric", &pairing.metric),
    ];
    out.verdict = reports.iter().all(|(_, r)| r.decreasing);
    for (name, r) in reports {
        out.set(&format!("{name}_decreasing"), r.decreasing);
        out.set(&format!("{name}_sequences"), r.sequences());
        out.file(format!("{name}_commutator.csv"), commutator_to_csv(r));
    }
    out.file(
        "commutators.json",
        json_bytes(&serde_json::json!({ "ricci": ricci, "pairing": pairing })),
    );
    Ok(out)
}
