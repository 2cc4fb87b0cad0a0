//! Commutator diagnostics for mollification: how fast products and
//! curvature of mollified quantities approach the mollified products and
//! curvature.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::curvature::riemann_ricci;
use crate::error::{Error, Result};
use crate::expr::{FieldExpr, VectorFieldExpr};
use crate::grid::{convolve, finite_diff, second_diff, Axis, DiffScheme, Kernel, PeriodicGridField, Rank};
use crate::linalg::Mat2;
use crate::math;
use crate::metric::{MetricModel, Regularity, SmoothedMetric};

/// Norms below this are treated as roundoff.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Finite reading of "→ 0" on a sweep: the last entry is at most `ratio`
/// times the first, with at most one increase along the way. Sequences that
/// stay below [`NOISE_FLOOR`] pass.
pub fn decreases_to_zero(seq: &[f64], ratio: f64) -> bool {
    if seq.is_empty() {
        return false;
    }
    if seq.iter().all(|v| *v <= NOISE_FLOOR) {
        return true;
    }
    let inversions = seq.windows(2).filter(|w| w[1] > w[0]).count();
    seq[seq.len() - 1] <= ratio * seq[0] && inversions <= 1
}

/// Default ratio used by [`decreases_to_zero`] in reports.
pub const DEFAULT_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommutatorRow {
    pub eps: f64,
    pub norm_c0: f64,
    pub norm_c1: Option<f64>,
    pub norm_c2: Option<f64>,
}

/// Per-ε sup-norms of one commutator, with the convergence verdict.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommutatorReport {
    pub name: String,
    /// The quantity whose norms are reported, written out.
    pub expression: String,
    pub resolution: usize,
    pub rows: Vec<CommutatorRow>,
    /// Whether every reported norm sequence passes [`decreases_to_zero`].
    pub decreasing: bool,
    /// Auxiliary per-ε measurements (reported, not asserted).
    pub notes: Vec<(String, Vec<f64>)>,
}

impl CommutatorReport {
    fn new(name: &str, expression: String, resolution: usize, rows: Vec<CommutatorRow>) -> Self {
        let mut r = CommutatorReport {
            name: name.into(),
            expression,
            resolution,
            rows,
            decreasing: false,
            notes: Vec::new(),
        };
        r.decreasing = r.sequences().iter().all(|s| decreases_to_zero(s, DEFAULT_RATIO));
        r
    }

    /// The C0, C1 and C2 sequences that are present.
    pub fn sequences(&self) -> Vec<Vec<f64>> {
        let mut out = alloc::vec![self.rows.iter().map(|r| r.norm_c0).collect::<Vec<_>>()];
        if self.rows.iter().all(|r| r.norm_c1.is_some()) && !self.rows.is_empty() {
            out.push(self.rows.iter().map(|r| r.norm_c1.unwrap()).collect());
        }
        if self.rows.iter().all(|r| r.norm_c2.is_some()) && !self.rows.is_empty() {
            out.push(self.rows.iter().map(|r| r.norm_c2.unwrap()).collect());
        }
        out
    }
}

fn c1_norm(f: &PeriodicGridField) -> Result<f64> {
    let dx = finite_diff(f, Axis::X, DiffScheme::Central2)?.sup_norm();
    let dy = finite_diff(f, Axis::Y, DiffScheme::Central2)?.sup_norm();
    Ok(math::max(dx, dy))
}

fn c2_norm(f: &PeriodicGridField) -> Result<f64> {
    let xx = second_diff(f, Axis::X, Axis::X)?.sup_norm();
    let xy = second_diff(f, Axis::X, Axis::Y)?.sup_norm();
    let yy = second_diff(f, Axis::Y, Axis::Y)?.sup_norm();
    Ok(math::max(xx, math::max(xy, yy)))
}

fn check_eps(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidInput("empty eps list".into()));
    }
    Ok(())
}

/// `(a ⋆ ρ_ε)(f ⋆ ρ_ε) − (a f) ⋆ ρ_ε` with its first differences. `a` must
/// be C¹-periodic, `f` only continuous.
pub fn friedrichs_norms(a: &FieldExpr, f: &FieldExpr, eps_list: &[f64], n: usize) -> Result<CommutatorReport> {
    check_eps(eps_list)?;
    a.check_periodic(1e-9)?;
    f.check_periodic_values(1e-9)?;
    let fa = PeriodicGridField::from_scalar_fn(n, |x, y| a.eval(x, y));
    let ff = PeriodicGridField::from_scalar_fn(n, |x, y| f.eval(x, y));
    fa.check_finite()?;
    ff.check_finite()?;
    let prod = fa.zip_map(&ff, |p, q| p * q)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let k = Kernel::mollifier(n, eps)?;
        let lhs = convolve(&fa, &k)?.zip_map(&convolve(&ff, &k)?, |p, q| p * q)?;
        let comm = lhs.zip_map(&convolve(&prod, &k)?, |p, q| p - q)?;
        rows.push(CommutatorRow {
            eps,
            norm_c0: comm.sup_norm(),
            norm_c1: Some(c1_norm(&comm)?),
            norm_c2: None,
        });
    }
    Ok(CommutatorReport::new(
        "friedrichs",
        format!("(a*rho_eps)(f*rho_eps) - (a f)*rho_eps, a = {a}, f = {f}"),
        n,
        rows,
    ))
}

fn require_curvature(model: &MetricModel) -> Result<usize> {
    if model.regularity() == Regularity::C1 {
        return Err(Error::Unsupported(
            "Ric(g) needs almost-everywhere second derivatives; C1 models only have the smoothed path".into(),
        ));
    }
    model
        .sample_resolution()
        .ok_or_else(|| Error::InvalidInput("metric not sampled".into()))
}

/// Ricci tensor of the unsmoothed metric at the nodes (matrix field).
fn direct_ricci(model: &MetricModel) -> Result<PeriodicGridField> {
    let f = riemann_ricci(model, false)?;
    Ok(f.ric.expect("riemann_ricci fills ric"))
}

/// `Ric(g ⋆ ρ_ε) − Ric(g) ⋆ ρ_ε`, componentwise sup over nodes.
pub fn ricci_commutator_norms(model: &MetricModel, eps_list: &[f64]) -> Result<CommutatorReport> {
    check_eps(eps_list)?;
    let n = require_curvature(model)?;
    let ric = direct_ricci(model)?;
    let g = &model.sampled().expect("sampled").g;
    let ginv = PeriodicGridField::from_matrix_fn(n, |x, y| {
        let i = math::floor(x * n as f64 + 0.5) as usize % n;
        let j = math::floor(y * n as f64 + 0.5) as usize % n;
        g.matrix(i, j).inverse().unwrap_or(Mat2::ZERO)
    });
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut inv_dev = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        let ric_eps = riemann_ricci(&s, true)?.ric.expect("ric");
        let ric_moll = convolve(&ric, s.kernel())?;
        rows.push(CommutatorRow {
            eps,
            norm_c0: ric_eps.sup_distance(&ric_moll)?,
            norm_c1: None,
            norm_c2: None,
        });
        inv_dev.push(s.ginv().sup_distance(&ginv)?);
    }
    let mut r = CommutatorReport::new(
        "ricci",
        format!("Ric(g*rho_eps) - Ric(g)*rho_eps, {}", model.describe()),
        n,
        rows,
    );
    r.notes.push(("sup |g_eps^-1 - g^-1|".into(), inv_dev));
    Ok(r)
}

/// Both pairing commutators for vector fields `X`, `Y`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairingCommutators {
    /// `Ric_g(X,Y) ⋆ ρ_ε − Ric_{g_ε}(X,Y)`, C0.
    pub ricci: CommutatorReport,
    /// `g(X,Y) ⋆ ρ_ε − g_ε(X,Y)`, C0 with first and second differences.
    pub metric: CommutatorReport,
}

fn pair_field(m: &PeriodicGridField, x: &VectorFieldExpr, y: &VectorFieldExpr) -> PeriodicGridField {
    let n = m.resolution();
    let h = 1.0 / n as f64;
    let mut out = PeriodicGridField::zeros(n, Rank::Scalar);
    for j in 0..n {
        for i in 0..n {
            let (px, py) = (i as f64 * h, j as f64 * h);
            out.set(i, j, 0, m.matrix(i, j).bilinear(x.eval(px, py), y.eval(px, py)));
        }
    }
    out
}

pub fn pairing_commutator_norms(
    model: &MetricModel,
    x: &VectorFieldExpr,
    y: &VectorFieldExpr,
    eps_list: &[f64],
) -> Result<PairingCommutators> {
    check_eps(eps_list)?;
    x.check_periodic(1e-9)?;
    y.check_periodic(1e-9)?;
    let n = require_curvature(model)?;
    let ric_xy = pair_field(&direct_ricci(model)?, x, y);
    let g_xy = pair_field(&model.sampled().expect("sampled").g, x, y);
    let mut ric_rows = Vec::with_capacity(eps_list.len());
    let mut g_rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        let ric_eps = riemann_ricci(&s, true)?.ric.expect("ric");
        let a = convolve(&ric_xy, s.kernel())?.zip_map(&pair_field(&ric_eps, x, y), |p, q| p - q)?;
        ric_rows.push(CommutatorRow {
            eps,
            norm_c0: a.sup_norm(),
            norm_c1: None,
            norm_c2: None,
        });
        let b = convolve(&g_xy, s.kernel())?.zip_map(&pair_field(s.g(), x, y), |p, q| p - q)?;
        g_rows.push(CommutatorRow {
            eps,
            norm_c0: b.sup_norm(),
            norm_c1: Some(c1_norm(&b)?),
            norm_c2: Some(c2_norm(&b)?),
        });
    }
    let fields = format!("X = ({}, {}), Y = ({}, {})", x.x, x.y, y.x, y.y);
    Ok(PairingCommutators {
        ricci: CommutatorReport::new(
            "pairing_ricci",
            format!("Ric_g(X,Y)*rho_eps - Ric_g_eps(X,Y), {fields}"),
            n,
            ric_rows,
        ),
        metric: CommutatorReport::new(
            "pairing_metric",
            format!("g(X,Y)*rho_eps - g_eps(X,Y), {fields}"),
            n,
            g_rows,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_rule() {
        assert!(decreases_to_zero(&[1.0, 0.5, 0.3, 0.2], 0.25));
        assert!(decreases_to_zero(&[1.0, 0.5, 0.6, 0.2], 0.25));
        assert!(!decreases_to_zero(&[1.0, 1.1, 0.6, 0.7, 0.2], 0.25));
        assert!(!decreases_to_zero(&[1.0, 0.5, 0.3], 0.25));
        assert!(decreases_to_zero(&[0.0, 1e-14, 0.0], 0.25));
    }

    #[test]
    fn unit_coefficient_has_no_commutator() {
        let a = FieldExpr::constant(1.0);
        let f = FieldExpr::parse("sin(2*pi*x)*cos(2*pi*y)").unwrap();
        let r = friedrichs_norms(&a, &f, &[0.25, 0.125], 64).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| row.norm_c0 < 1e-14 && row.norm_c1.unwrap() < 1e-11));
        assert!(r.decreasing);
    }

    #[test]
    fn friedrichs_commutator_of_smooth_product_decreases() {
        let a = FieldExpr::parse("sin(2*pi*x)").unwrap();
        let r = friedrichs_norms(&a, &a, &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 256).unwrap();
        assert!(r.decreasing, "{:?}", r.rows);
    }

    #[test]
    fn flat_commutators_vanish() {
        let m = MetricModel::flat().sample(32).unwrap();
        let r = ricci_commutator_norms(&m, &[0.25, 0.125]).unwrap();
        assert!(r.rows.iter().all(|row| row.norm_c0 == 0.0));
        let x = VectorFieldExpr::parse("1", "sin(2*pi*x)").unwrap();
        let p = pairing_commutator_norms(&m, &x, &x, &[0.25, 0.125, 0.0625]).unwrap();
        assert!(p.ricci.rows.iter().all(|row| row.norm_c0 == 0.0));
        assert!(p.metric.decreasing);
    }

    #[test]
    fn c1_models_are_refused() {
        let u = FieldExpr::parse("0.05*sin(2*pi*x)").unwrap();
        let m = MetricModel::conformal(u)
            .unwrap()
            .with_regularity(Regularity::C1)
            .sample(32)
            .unwrap();
        assert!(matches!(
            ricci_commutator_norms(&m, &[0.25]),
            Err(Error::Unsupported(_))
        ));
    }
}
