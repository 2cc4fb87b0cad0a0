//! Christoffel symbols, Riemann and Ricci tensors from the coordinate
//! formulas, and the ε-sweep checker for a lower Ricci bound of a mollified
//! metric.
//!
//! Conventions: `Γ^k_ij = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)`,
//! `R^m_ijk = ∂_jΓ^m_ik − ∂_kΓ^m_ij + Γ^m_js Γ^s_ik − Γ^m_ks Γ^s_ij` so that
//! `R(∂_j, ∂_k)∂_i = R^m_ijk ∂_m`, and `Ric_ij = R^m_imj`. The round sphere
//! has positive Ricci curvature.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, VectorFieldExpr};
use crate::grid::{PeriodicGridField, Rank};
use crate::linalg::{min_generalized_eigenpair, Mat2, Vec2};
use crate::math;
use crate::metric::{GridMetric, MetricJet, MetricModel, SmoothedMetric};

/// `gamma[k][i][j] = Γ^k_ij`
pub type Christoffel = [[[f64; 2]; 2]; 2];
/// `riem[m][i][j][k] = R^m_ijk`
pub type Riemann = [[[[f64; 2]; 2]; 2]; 2];

/// Connection and curvature at one point, derived from a metric jet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGeometry {
    pub g: Mat2,
    pub ginv: Mat2,
    pub gamma: Christoffel,
    /// `dgamma[m][k][i][j] = ∂_m Γ^k_ij`
    pub dgamma: [Christoffel; 2],
    pub riem: Riemann,
    pub ric: Mat2,
}

/// `Γ^k_ij` and `g⁻¹` from `g` and `∂g`.
pub fn christoffel_from(g: &Mat2, dg: &[Mat2; 2]) -> Result<(Christoffel, Mat2)> {
    let ginv = g.inverse().ok_or_else(|| Error::Singular { what: "metric".into() })?;
    let mut gamma = [[[0.0; 2]; 2]; 2];
    // Lowered symbols Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij).
    let mut low = [[[0.0; 2]; 2]; 2];
    for l in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                low[l][i][j] = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
            }
        }
    }
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                gamma[k][i][j] = ginv[(k, 0)] * low[0][i][j] + ginv[(k, 1)] * low[1][i][j];
            }
        }
    }
    Ok((gamma, ginv))
}

impl PointGeometry {
    pub fn from_jet(jet: &MetricJet) -> Result<Self> {
        let (gamma, ginv) = christoffel_from(&jet.g, &jet.dg)?;
        // ∂_m g^{kl} = −g^{ka} ∂_m g_ab g^{bl}
        let dginv = [-(ginv * jet.dg[0] * ginv), -(ginv * jet.dg[1] * ginv)];
        let mut low = [[[0.0; 2]; 2]; 2];
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    low[l][i][j] = 0.5 * (jet.dg[i][(j, l)] + jet.dg[j][(i, l)] - jet.dg[l][(i, j)]);
                }
            }
        }
        let mut dgamma = [[[[0.0; 2]; 2]; 2]; 2];
        for m in 0..2 {
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut s = 0.0;
                        for l in 0..2 {
                            let dlow = 0.5 * (jet.d2g[m][i][(j, l)] + jet.d2g[m][j][(i, l)] - jet.d2g[m][l][(i, j)]);
                            s += dginv[m][(k, l)] * low[l][i][j] + ginv[(k, l)] * dlow;
                        }
                        dgamma[m][k][i][j] = s;
                    }
                }
            }
        }
        let mut riem = [[[[0.0; 2]; 2]; 2]; 2];
        for m in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let mut r = dgamma[j][m][i][k] - dgamma[k][m][i][j];
                        for s in 0..2 {
                            r += gamma[m][j][s] * gamma[s][i][k] - gamma[m][k][s] * gamma[s][i][j];
                        }
                        riem[m][i][j][k] = r;
                    }
                }
            }
        }
        let mut ric = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                ric[(i, j)] = riem[0][i][0][j] + riem[1][i][1][j];
            }
        }
        Ok(PointGeometry {
            g: jet.g,
            ginv,
            gamma,
            dgamma,
            riem,
            ric,
        })
    }

    /// Gauss curvature `½ tr(g⁻¹ Ric)`.
    pub fn scalar_k(&self) -> f64 {
        0.5 * (self.ginv * self.ric).trace()
    }

    /// `R(u, v)w`.
    pub fn riemann_apply(&self, u: Vec2, v: Vec2, w: Vec2) -> Vec2 {
        let mut out = [0.0; 2];
        for (m, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        s += self.riem[m][i][j][k] * w[i] * u[j] * v[k];
                    }
                }
            }
            *o = s;
        }
        out
    }

    /// `Ric(X, X) / g(X, X)` minimized over directions, with a g-unit minimizer.
    pub fn min_ricci_ratio(&self) -> (f64, Vec2) {
        min_generalized_eigenpair(&self.ric, &self.g)
    }
}

/// Which metric and derivative path produced a set of curvature fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureSource {
    /// Symbolic derivatives of the unsmoothed metric (almost everywhere for C11).
    Direct,
    /// Derivatives of a mollified metric.
    Smoothed,
}

/// Connection and curvature at every grid node.
#[derive(Debug, Clone)]
pub struct CurvatureFields {
    pub resolution: usize,
    pub source: CurvatureSource,
    /// Row-major by node, `gamma[j*N + i]`.
    pub gamma: Vec<Christoffel>,
    pub riem: Option<Vec<Riemann>>,
    /// Matrix-ranked.
    pub ric: Option<PeriodicGridField>,
    /// Gauss curvature `½ tr(g⁻¹ Ric)`.
    pub scalar: Option<PeriodicGridField>,
    /// `max ‖Ric − K g‖ / max ‖Ric‖`, the 2D proportionality defect.
    pub proportionality_residual: f64,
}

impl CurvatureFields {
    /// Largest `|Γ^k_ij|` over the grid.
    pub fn gamma_sup(&self) -> f64 {
        self.gamma
            .iter()
            .flat_map(|g| g.iter().flatten().flatten())
            .fold(0.0, |a, v| math::max(a, math::abs(*v)))
    }

    pub fn riem_sup(&self) -> f64 {
        self.riem.as_ref().map_or(0.0, |r| {
            r.iter()
                .flat_map(|x| x.iter().flatten().flatten().flatten())
                .fold(0.0, |a, v| math::max(a, math::abs(*v)))
        })
    }
}

fn source_of(metric: &dyn GridMetric, smoothed: bool) -> CurvatureSource {
    let _ = metric;
    if smoothed {
        CurvatureSource::Smoothed
    } else {
        CurvatureSource::Direct
    }
}

/// Christoffel symbols at every node.
pub fn christoffel(metric: &dyn GridMetric, smoothed: bool) -> Result<CurvatureFields> {
    let n = metric.resolution();
    if n == 0 {
        return Err(Error::InvalidInput("metric not sampled".into()));
    }
    let mut gamma = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let jet = metric.node_jet(i, j)?;
            gamma.push(christoffel_from(&jet.g, &jet.dg)?.0);
        }
    }
    Ok(CurvatureFields {
        resolution: n,
        source: source_of(metric, smoothed),
        gamma,
        riem: None,
        ric: None,
        scalar: None,
        proportionality_residual: 0.0,
    })
}

/// Connection, Riemann and Ricci tensors at every node, with the 2D check
/// `Ric = K g`.
pub fn riemann_ricci(metric: &dyn GridMetric, smoothed: bool) -> Result<CurvatureFields> {
    let n = metric.resolution();
    if n == 0 {
        return Err(Error::InvalidInput("metric not sampled".into()));
    }
    let mut gamma = Vec::with_capacity(n * n);
    let mut riem = Vec::with_capacity(n * n);
    let mut ric = PeriodicGridField::zeros(n, Rank::Matrix);
    let mut scalar = PeriodicGridField::zeros(n, Rank::Scalar);
    let mut defect: f64 = 0.0;
    let mut ric_sup: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let geo = PointGeometry::from_jet(&metric.node_jet(i, j)?)?;
            let k = geo.scalar_k();
            defect = defect.max((geo.ric - geo.g.scaled(k)).max_abs());
            ric_sup = ric_sup.max(geo.ric.max_abs());
            gamma.push(geo.gamma);
            riem.push(geo.riem);
            ric.set_matrix(i, j, geo.ric);
            scalar.set(i, j, 0, k);
        }
    }
    let residual = if ric_sup > 0.0 { defect / ric_sup } else { 0.0 };
    if residual > 1e-6 && ric_sup > 1e-12 {
        return Err(Error::InvalidInput(alloc::format!(
            "Ric is not proportional to g (relative defect {residual:.2e})"
        )));
    }
    Ok(CurvatureFields {
        resolution: n,
        source: source_of(metric, smoothed),
        gamma,
        riem: Some(riem),
        ric: Some(ric),
        scalar: Some(scalar),
        proportionality_residual: residual,
    })
}

/// Gauss curvature of `e^{2u}·I`: `−e^{−2u} Δu`.
pub fn conformal_curvature(u: &FieldExpr, p: Vec2) -> f64 {
    let lap = u.dx().dx().eval(p[0], p[1]) + u.dy().dy().eval(p[0], p[1]);
    -math::exp(-2.0 * u.eval(p[0], p[1])) * lap
}

/// One entry of an ε-sweep: the minimum of `Ric(v,v)/g(v,v)` over nodes and
/// directions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundEntry {
    pub eps: f64,
    #[cfg_attr(feature = "serde", serde(rename = "K_eff"))]
    pub k_eff: f64,
    pub argmin_node: (usize, usize),
    /// g_ε-unit minimizing direction.
    pub argmin_vector: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundWitness {
    pub eps: f64,
    pub node: (usize, usize),
    pub vector: Vec2,
    #[cfg_attr(feature = "serde", serde(rename = "K_eff"))]
    pub k_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundVerdict {
    pub delta: f64,
    pub holds: bool,
    /// Largest sampled ε such that every sampled ε up to it satisfies the
    /// bound; present when the verdict holds.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub eps0: Option<f64>,
    /// The offending entry among the last `M` sampled ε; present on failure.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub witness: Option<BoundWitness>,
}

/// Outcome of checking `Ric(g_ε) ≥ (K − δ) g_ε` along an ε-sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub k: f64,
    pub entries: Vec<BoundEntry>,
    pub verdicts: Vec<BoundVerdict>,
}

/// Default number of trailing ε values that must satisfy the bound.
pub const DEFAULT_TAIL: usize = 3;

/// `K_eff` of a grid metric: exact per-node minimum via the generalized
/// eigenvalue of `(Ric, g)`.
pub fn k_eff(metric: &dyn GridMetric, eps: f64) -> Result<BoundEntry> {
    let n = metric.resolution();
    let mut best = BoundEntry {
        eps,
        k_eff: f64::INFINITY,
        argmin_node: (0, 0),
        argmin_vector: [1.0, 0.0],
    };
    if metric.is_flat() {
        best.k_eff = 0.0;
        return Ok(best);
    }
    for j in 0..n {
        for i in 0..n {
            let geo = PointGeometry::from_jet(&metric.node_jet(i, j)?)?;
            let (lam, v) = geo.min_ricci_ratio();
            if lam < best.k_eff {
                best.k_eff = lam;
                best.argmin_node = (i, j);
                best.argmin_vector = v;
            }
        }
    }
    Ok(best)
}

impl BoundReport {
    /// Apply the finite verdict rule to precomputed entries: the bound holds
    /// for `δ` iff the last `tail` entries (smallest ε) all satisfy
    /// `K_eff ≥ K − δ`.
    pub fn from_entries(k: f64, mut entries: Vec<BoundEntry>, deltas: &[f64], tail: usize) -> Self {
        // Largest ε first.
        entries.sort_by(|a, b| b.eps.partial_cmp(&a.eps).unwrap_or(core::cmp::Ordering::Equal));
        let tail = tail.max(1).min(entries.len());
        let verdicts = deltas
            .iter()
            .map(|&delta| {
                let ok = |e: &BoundEntry| e.k_eff >= k - delta;
                let last = &entries[entries.len() - tail..];
                let holds = !entries.is_empty() && last.iter().all(ok);
                if holds {
                    let mut eps0 = None;
                    for e in entries.iter().rev() {
                        if ok(e) {
                            eps0 = Some(e.eps);
                        } else {
                            break;
                        }
                    }
                    BoundVerdict {
                        delta,
                        holds,
                        eps0,
                        witness: None,
                    }
                } else {
                    let w = last.iter().rev().find(|e| !ok(e)).map(|e| BoundWitness {
                        eps: e.eps,
                        node: e.argmin_node,
                        vector: e.argmin_vector,
                        k_eff: e.k_eff,
                    });
                    BoundVerdict {
                        delta,
                        holds: false,
                        eps0: None,
                        witness: w,
                    }
                }
            })
            .collect();
        BoundReport { k, entries, verdicts }
    }

    pub fn all_hold(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
    }
}

/// Mollify `model` at each ε and check `Ric(g_ε) ≥ (K − δ) g_ε` for each δ.
pub fn bound_check(model: &MetricModel, k: f64, deltas: &[f64], eps_list: &[f64], tail: usize) -> Result<BoundReport> {
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidInput("deltas must be positive".into()));
    }
    let mut entries = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        entries.push(k_eff(&s, eps)?);
    }
    Ok(BoundReport::from_entries(k, entries, deltas, tail))
}

/// `∫ Ric(X, X) ω dx dy` along an ε-sweep, with extrapolation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairingReport {
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    /// Richardson extrapolation of the last two entries assuming O(ε²) error.
    pub extrapolated: f64,
    /// The pairing computed from almost-everywhere curvature of the unsmoothed
    /// metric, for C11 and smooth models.
    pub direct: Option<f64>,
    /// `|values[last] − values[last−1]|`.
    pub spread: f64,
    pub converged: bool,
}

/// Supersampling factor for the direct pairing quadrature.
const DIRECT_REFINE: usize = 4;

/// Pairing of `Ric(X, X)` with the test density `ω`, via mollified metrics
/// and, where curvature exists almost everywhere, directly.
pub fn distributional_pairing(
    model: &MetricModel,
    x: &VectorFieldExpr,
    omega: &FieldExpr,
    eps_list: &[f64],
    tol: f64,
) -> Result<PairingReport> {
    x.check_periodic(1e-9)?;
    omega.check_periodic(1e-9)?;
    let n = model
        .sample_resolution()
        .ok_or_else(|| Error::InvalidInput("metric not sampled".into()))?;
    let h = 1.0 / n as f64;
    let mut values = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        let f = riemann_ricci(&s, true)?;
        let ric = f.ric.as_ref().expect("riemann_ricci fills ric");
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let (px, py) = (i as f64 * h, j as f64 * h);
                let xv = x.eval(px, py);
                acc += ric.matrix(i, j).quad(xv) * omega.eval(px, py);
            }
        }
        values.push(acc * h * h);
    }
    let m = values.len();
    let (extrapolated, spread) = if m >= 2 {
        let r = eps_list[m - 2] / eps_list[m - 1];
        let a = values[m - 1];
        let b = values[m - 2];
        (a + (a - b) / (r * r - 1.0), math::abs(a - b))
    } else {
        (values.first().copied().unwrap_or(0.0), f64::INFINITY)
    };
    let direct = if model.regularity() >= crate::metric::Regularity::C11 {
        let fine = n * DIRECT_REFINE;
        let hf = 1.0 / fine as f64;
        let mut acc = 0.0;
        let mut scratch = Vec::new();
        for j in 0..fine {
            for i in 0..fine {
                let p = [(i as f64 + 0.5) * hf, (j as f64 + 0.5) * hf];
                let jet = model.raw_jet(p, &mut scratch)?;
                let geo = PointGeometry::from_jet(&jet)?;
                acc += geo.ric.quad(x.eval(p[0], p[1])) * omega.eval(p[0], p[1]);
            }
        }
        Some(acc * hf * hf)
    } else {
        None
    };
    Ok(PairingReport {
        eps: eps_list.to_vec(),
        values,
        extrapolated,
        direct,
        spread,
        converged: spread <= tol,
    })
}

/// Sup-norm over nodes of `Γ` for a list of smoothed metrics.
pub fn gamma_sweep(model: &MetricModel, eps_list: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![];
    for &eps in eps_list {
        let s = SmoothedMetric::new(model, eps)?;
        out.push(christoffel(&s, true)?.gamma_sup());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    fn smooth_u() -> FieldExpr {
        FieldExpr::parse("0.05*sin(2*pi*x)*sin(2*pi*y)").unwrap()
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let m = MetricModel::flat().sample(32).unwrap();
        let f = riemann_ricci(&m, false).unwrap();
        assert_eq!(f.gamma_sup(), 0.0);
        assert_eq!(f.riem_sup(), 0.0);
        let r = bound_check(&m, 0.0, &[0.1, 0.01], &[0.25, 0.125, 0.0625], 3).unwrap();
        assert!(r.all_hold());
        assert!(r.entries.iter().all(|e| e.k_eff == 0.0));
    }

    #[test]
    fn flat_metric_fails_a_positive_bound_with_witness() {
        let m = MetricModel::flat().sample(32).unwrap();
        let r = bound_check(&m, 0.1, &[0.05], &[0.25, 0.125, 0.0625], 3).unwrap();
        assert!(!r.verdicts[0].holds);
        let w = r.verdicts[0].witness.unwrap();
        assert_eq!(w.k_eff, 0.0);
    }

    #[test]
    fn conformal_christoffel_symbols() {
        let u = smooth_u();
        let m = MetricModel::conformal(u.clone()).unwrap().sample(32).unwrap();
        let f = christoffel(&m, false).unwrap();
        let (i, j) = (5, 11);
        let (x, y) = (i as f64 / 32.0, j as f64 / 32.0);
        let (ux, uy) = (u.dx().eval(x, y), u.dy().eval(x, y));
        let g = f.gamma[j * 32 + i];
        assert!((g[0][0][0] - ux).abs() < 1e-12);
        assert!((g[0][0][1] - uy).abs() < 1e-12);
        assert!((g[0][1][1] + ux).abs() < 1e-12);
        assert!((g[1][1][1] - uy).abs() < 1e-12);
        assert!((g[1][0][0] + uy).abs() < 1e-12);
        assert_eq!(g[0][0][1], g[0][1][0]);
    }

    #[test]
    fn direct_curvature_matches_conformal_oracle() {
        let u = smooth_u();
        let m = MetricModel::conformal(u.clone()).unwrap().sample(64).unwrap();
        let f = riemann_ricci(&m, false).unwrap();
        let k = f.scalar.as_ref().unwrap();
        let mut err: f64 = 0.0;
        for j in 0..64 {
            for i in 0..64 {
                let p = [i as f64 / 64.0, j as f64 / 64.0];
                err = err.max((k.get(i, j, 0) - conformal_curvature(&u, p)).abs());
            }
        }
        assert!(err < 1e-10, "{err}");
        assert!(f.proportionality_residual < 1e-12);
        // K = e^{−2u}·0.05·8π² sin sin: positive at (¼, ¼).
        let kq = conformal_curvature(&u, [0.25, 0.25]);
        assert!((kq - (-0.1f64).exp() * 0.4 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn verdict_rule_uses_the_trailing_entries() {
        let e = |eps: f64, k: f64| BoundEntry {
            eps,
            k_eff: k,
            argmin_node: (1, 2),
            argmin_vector: [1.0, 0.0],
        };
        let entries = vec![e(0.5, -3.0), e(0.25, -1.05), e(0.125, -1.01), e(0.0625, -1.001)];
        let r = BoundReport::from_entries(-1.0, entries.clone(), &[0.1, 0.02, 0.005], 3);
        assert!(r.verdicts[0].holds);
        assert_eq!(r.verdicts[0].eps0, Some(0.25));
        assert!(!r.verdicts[1].holds);
        assert_eq!(r.verdicts[1].witness.unwrap().eps, 0.25);
        assert!(!r.verdicts[2].holds);
        assert_eq!(r.verdicts[2].witness.unwrap().eps, 0.125);
    }

    #[test]
    fn frame_change_leaves_ricci_pairing_invariant() {
        let m = MetricModel::conformal(smooth_u()).unwrap();
        let geo = PointGeometry::from_jet(&crate::metric::MetricSource::jet(&m, [0.3, 0.8]).unwrap()).unwrap();
        let a = Mat2::new(1.3, 0.4, -0.2, 0.9);
        let x = [0.7, -1.1];
        // X = A X', Ric' = Aᵀ Ric A.
        let ainv = a.inverse().unwrap();
        let xp = ainv.apply(x);
        let ric_p = a.transpose() * geo.ric * a;
        assert!((ric_p.quad(xp) - geo.ric.quad(x)).abs() < 1e-12);
    }
}
