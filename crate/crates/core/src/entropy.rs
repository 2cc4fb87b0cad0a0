//! Entropy functionals, the curvature modulus `λ_K(U)`, the weak
//! displacement convexity checker along constructed Wasserstein geodesics,
//! and the witness-potential experiments that recover `C″(0) = −Ric(v, v)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::curvature::PointGeometry;
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::geodesic::{descent_velocity, flow_jacobian, hessian_endomorphism, CompiledPotential};
use crate::linalg::{periodic_delta, Mat2, Vec2};
use crate::math;
use crate::metric::MetricSource;
use crate::transport::{displacement_interpolation, lagrangian_w2_squared, DiscreteMeasure};

#[derive(Debug, Clone, Copy)]
enum Kind {
    /// `U(r) = r log r`.
    Boltzmann,
    /// `U(r) = r^m / (m − 1)`, `m > 1`.
    Power(f64),
    Custom {
        u: fn(f64) -> f64,
        du: Option<fn(f64) -> f64>,
    },
}

/// A convex `U: [0, ∞) → ℝ` with `U(0) = 0`.
#[derive(Debug, Clone)]
pub struct EntropyFunction {
    name: String,
    kind: Kind,
}

impl EntropyFunction {
    /// `U_∞(r) = r log r`.
    pub fn boltzmann() -> Self {
        EntropyFunction {
            name: "r log r".into(),
            kind: Kind::Boltzmann,
        }
    }

    pub fn power(m: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidInput(format!("power entropy needs m > 1, got {m}")));
        }
        Ok(EntropyFunction {
            name: format!("r^{m}/({m}-1)"),
            kind: Kind::Power(m),
        })
    }

    /// User-supplied `U` with optional right derivative; validated for
    /// `U(0) = 0` and convexity on a sample grid.
    pub fn custom(name: &str, u: fn(f64) -> f64, du: Option<fn(f64) -> f64>) -> Result<Self> {
        let f = EntropyFunction {
            name: name.into(),
            kind: Kind::Custom { u, du },
        };
        if math::abs(u(0.0)) > 1e-12 {
            return Err(Error::InvalidInput(format!("U(0) = {} for {name}", u(0.0))));
        }
        if !f.is_convex_on_samples() {
            return Err(Error::InvalidInput(format!("{name} is not convex on the sample grid")));
        }
        Ok(f)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_boltzmann(&self) -> bool {
        matches!(self.kind, Kind::Boltzmann)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.kind {
            Kind::Boltzmann => {
                if r == 0.0 {
                    0.0
                } else {
                    r * math::ln(r)
                }
            }
            Kind::Power(m) => math::exp(m * math::ln(r)) / (m - 1.0),
            Kind::Custom { u, .. } => u(r),
        }
    }

    /// Right derivative `U′₊(r)`.
    pub fn derivative(&self, r: f64) -> f64 {
        match self.kind {
            Kind::Boltzmann => math::ln(r) + 1.0,
            Kind::Power(m) => m / (m - 1.0) * math::exp((m - 1.0) * math::ln(r)),
            Kind::Custom { u, du } => match du {
                Some(d) => d(r),
                None => {
                    let h = 1e-6 * math::max(r, 1e-3);
                    (u(r + h) - u(r)) / h
                }
            },
        }
    }

    /// `lim U(r)/r` as `r → ∞`, infinite for superlinear growth.
    pub fn derivative_at_infinity(&self) -> f64 {
        match self.kind {
            Kind::Boltzmann | Kind::Power(_) => f64::INFINITY,
            Kind::Custom { u, .. } => {
                let a = u(1e8) / 1e8;
                let b = u(1e10) / 1e10;
                if b - a > 1e-3 * (1.0 + math::abs(a)) {
                    f64::INFINITY
                } else {
                    b
                }
            }
        }
    }

    /// Second differences of `U` on a geometric grid are `≥ −1e−10`.
    pub fn is_convex_on_samples(&self) -> bool {
        let rs: Vec<f64> = (0..=240)
            .map(|k| math::exp(math::ln(10.0) * (-6.0 + 0.05 * k as f64)))
            .collect();
        rs.windows(3).all(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            // Divided second difference on a non-uniform grid.
            let d1 = (self.eval(b) - self.eval(a)) / (b - a);
            let d2 = (self.eval(c) - self.eval(b)) / (c - b);
            (d2 - d1) / (c - a) * 2.0 >= -1e-10 * (1.0 + math::abs(d1) + math::abs(d2))
        })
    }

    /// Membership test for `λ ↦ e^λ U(e^{−λ})` convex, on a grid in `λ`.
    pub fn is_dc_infinity(&self) -> bool {
        let psi = |l: f64| math::exp(l) * self.eval(math::exp(-l));
        let ls: Vec<f64> = (0..=400).map(|k| -20.0 + 0.1 * k as f64).collect();
        ls.windows(3).all(|w| {
            let s = psi(w[0]) - 2.0 * psi(w[1]) + psi(w[2]);
            s >= -1e-10 * (1.0 + math::abs(psi(w[1])))
        })
    }
}

/// Normalized Riemannian volume `ν = vol_g / vol_g(M)` on the nodes of an
/// `n × n` grid, and the total volume.
pub fn volume_measure(metric: &dyn MetricSource, n: usize) -> Result<(DiscreteMeasure, f64)> {
    let h = 1.0 / n as f64;
    let mut points = Vec::with_capacity(n * n);
    let mut masses = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let p = [i as f64 * h, j as f64 * h];
            points.push(p);
            masses.push(math::sqrt(metric.metric_at(p)?.det()) * h * h);
        }
    }
    let total: f64 = masses.iter().sum();
    Ok((DiscreteMeasure::normalized(points, masses)?, total))
}

/// `U_ν(μ) = Σ U(dμ/dν) ν` for measures on a common grid. Every support
/// point of `μ` must be a support point of `ν`.
pub fn entropy_value(u: &EntropyFunction, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    // Match support points by rounding to a fine lattice.
    let key = |p: Vec2| -> (i64, i64) {
        (
            math::floor(math::modulo_one(p[0]) * 1e9 + 0.5) as i64 % 1_000_000_000,
            math::floor(math::modulo_one(p[1]) * 1e9 + 0.5) as i64 % 1_000_000_000,
        )
    };
    let mut index = alloc::collections::BTreeMap::new();
    for (k, p) in nu.points().iter().enumerate() {
        index.insert(key(*p), k);
    }
    let mut mass_on = vec![0.0; nu.len()];
    for (p, w) in mu.points().iter().zip(mu.weights()) {
        if *w == 0.0 {
            continue;
        }
        match index.get(&key(*p)) {
            Some(&k) if nu.weights()[k] > 0.0 => mass_on[k] += w,
            _ => return Err(Error::NotAbsolutelyContinuous),
        }
    }
    let mut acc = 0.0;
    for (m, nw) in mass_on.iter().zip(nu.weights()) {
        if *nw > 0.0 {
            acc += u.eval(m / nw) * nw;
        }
    }
    Ok(acc)
}

/// `λ_K(U) = inf_{r>0} K p(r)/r` with `p(r) = r U′₊(r) − U(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaK {
    pub value: f64,
    /// The infimum is `−∞`.
    pub divergent: bool,
}

pub fn lambda_k(u: &EntropyFunction, k: f64) -> LambdaK {
    if k == 0.0 {
        return LambdaK {
            value: 0.0,
            divergent: false,
        };
    }
    if u.is_boltzmann() {
        return LambdaK {
            value: k,
            divergent: false,
        };
    }
    let q = |r: f64| k * (r * u.derivative(r) - u.eval(r)) / r;
    let decade = math::ln(10.0);
    let logs: Vec<f64> = (0..=1200).map(|i| decade * (-6.0 + 0.01 * i as f64)).collect();
    let (mut best_i, mut best) = (0, f64::INFINITY);
    for (i, l) in logs.iter().enumerate() {
        let v = q(math::exp(*l));
        if v < best {
            best = v;
            best_i = i;
        }
    }
    if best_i == 0 || best_i == logs.len() - 1 {
        // Follow the trend past the edge of the grid, one decade at a time.
        let dir = if best_i == 0 { -1.0 } else { 1.0 };
        let mut l = logs[best_i];
        for _ in 0..300 {
            let next = l + dir * decade;
            if math::abs(next) > 690.0 {
                break;
            }
            let v = q(math::exp(next));
            if !(v < best) {
                break;
            }
            best = v;
            l = next;
        }
        if dir > 0.0 && (best < -1e100 || (math::abs(l) > 680.0 && best < q(math::exp(l - decade)))) {
            return LambdaK {
                value: f64::NEG_INFINITY,
                divergent: true,
            };
        }
        return LambdaK {
            value: best,
            divergent: false,
        };
    }
    // Golden-section refinement between the neighbours of the grid minimum.
    let (mut a, mut b) = (logs[best_i - 1], logs[best_i + 1]);
    let gr = 0.5 * (math::sqrt(5.0) - 1.0);
    for _ in 0..80 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if q(math::exp(c)) < q(math::exp(d)) {
            b = d;
        } else {
            a = c;
        }
    }
    LambdaK {
        value: math::min(best, q(math::exp(0.5 * (a + b)))),
        divergent: false,
    }
}

/// Smooth compactly supported bump `exp(−1/(1 − s²))`, `s = |p − c| / r`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bump {
    pub center: Vec2,
    pub radius: f64,
}

impl Bump {
    pub fn eval(&self, p: Vec2) -> f64 {
        let d = periodic_delta(self.center, p);
        let s2 = (d[0] * d[0] + d[1] * d[1]) / (self.radius * self.radius);
        if s2 >= 1.0 {
            0.0
        } else {
            math::exp(-1.0 / (1.0 - s2))
        }
    }
}

/// Radii of the witness construction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WitnessRadii {
    /// The cutoff is identically one on this ball.
    pub r_plateau: f64,
    /// The cutoff vanishes outside this ball (must stay below 1/2).
    pub r_outer: f64,
    /// Radius of the bump density carried along the flow.
    pub r_support: f64,
}

impl Default for WitnessRadii {
    fn default() -> Self {
        WitnessRadii {
            r_plateau: 0.2,
            r_outer: 0.4,
            r_support: 0.05,
        }
    }
}

/// Potential with `∇φ(x*) = −v` and vanishing Riemannian Hessian at `x*`:
/// `φ̃ = −(g v)_l Δ^l − ½ v^r g_rl Γ^l_ij Δ^i Δ^j` in the displacement
/// `Δ = wrap(x − x*)`, times a smooth cutoff equal to one on the plateau.
pub fn build_witness_potential(
    metric: &dyn MetricSource,
    x_star: Vec2,
    v: Vec2,
    radii: &WitnessRadii,
) -> Result<FieldExpr> {
    if !(radii.r_plateau > 0.0 && radii.r_plateau < radii.r_outer && radii.r_outer < 0.5) {
        return Err(Error::InvalidInput(format!(
            "need 0 < r_plateau < r_outer < 1/2, got {} and {}",
            radii.r_plateau, radii.r_outer
        )));
    }
    let geo = if metric.is_flat() {
        PointGeometry::from_jet(&crate::metric::MetricJet::FLAT)?
    } else {
        PointGeometry::from_jet(&metric.jet(x_star)?)?
    };
    let gv = geo.g.apply(v);
    // a_ij = v^r g_rl Γ^l_ij
    let mut a = Mat2::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for l in 0..2 {
                s += gv[l] * geo.gamma[l][i][j];
            }
            a.0[i][j] = s;
        }
    }
    let dx = (FieldExpr::x() - x_star[0]).wrap();
    let dy = (FieldExpr::y() - x_star[1]).wrap();
    let linear = -(dx.clone() * gv[0] + dy.clone() * gv[1]);
    let quad = (dx.clone() * dx.clone() * a.0[0][0]
        + dx.clone() * dy.clone() * (a.0[0][1] + a.0[1][0])
        + dy.clone() * dy.clone() * a.0[1][1])
        * 0.5;
    let core_part = linear - quad;
    let rp2 = radii.r_plateau * radii.r_plateau;
    let ro2 = radii.r_outer * radii.r_outer;
    let r2 = dx.clone() * dx + dy.clone() * dy;
    let cutoff = FieldExpr::constant(1.0) - ((r2 - rp2) * (1.0 / (ro2 - rp2))).smoothstep();
    let phi = cutoff * core_part;
    // Verify the two defining properties at the base point.
    let compiled = CompiledPotential::new(&phi);
    let w = descent_velocity(metric, &compiled, x_star)?;
    let grad_err = math::max(math::abs(w[0] - v[0]), math::abs(w[1] - v[1]));
    let hess = hessian_endomorphism(metric, &compiled, x_star)?;
    if grad_err > 1e-6 || hess.max_abs() > 1e-6 {
        return Err(Error::NoConvergence {
            what: "witness potential verification".into(),
            residual: math::max(grad_err, hess.max_abs()),
        });
    }
    Ok(phi)
}

/// Settings shared by the flow-based entropy experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSettings {
    pub steps_per_unit: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { steps_per_unit: 256 }
    }
}

/// Where the `W₂` value in a report comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum W2Source {
    /// `∫ |∇φ|² dμ₀` along the constructed geodesic.
    Constructed,
    /// An optimal transport solve.
    Solved,
}

/// Both sides of the displacement convexity inequality
/// `U_ν(μ_t) ≤ t U_ν(μ₁) + (1−t) U_ν(μ₀) − ½ λ t(1−t) W₂²` along a constructed
/// geodesic.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvexityReport {
    pub lambda: f64,
    pub t: Vec<f64>,
    /// `U_ν(μ_t)` in Lagrangian form, from flow Jacobians at the source
    /// points.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub margin: Vec<f64>,
    pub verdict: bool,
    pub w2: f64,
    pub w2_source: W2Source,
    /// `U_ν(μ_t)` from densities resampled on the fixed grid.
    pub measure_lhs: Vec<f64>,
    /// `max |lhs − measure_lhs|` over all evaluated times, endpoints included.
    pub cross_form_gap: f64,
    pub tolerance: f64,
}

/// Inputs of a convexity experiment: a grid bump density pushed along the
/// gradient flow of `φ`.
pub struct ConvexityInstance<'a> {
    pub metric: &'a dyn MetricSource,
    pub phi: &'a FieldExpr,
    pub bump: Bump,
    /// Grid resolution for the source measure and the resampling.
    pub n: usize,
}

/// Preimage of `x` under `F_t`, by Newton iteration on the flow map.
fn invert_flow(
    metric: &dyn MetricSource,
    phi: &CompiledPotential,
    x: Vec2,
    guess: Vec2,
    t: f64,
    steps: usize,
) -> Result<(Vec2, f64)> {
    if t == 0.0 {
        return Ok((x, 0.0));
    }
    let mut y = guess;
    let mut res = f64::INFINITY;
    for _ in 0..30 {
        let f = flow_jacobian(metric, phi, y, &[t], steps)?;
        let r = periodic_delta(x, f.geodesic.positions[0]);
        res = math::max(math::abs(r[0]), math::abs(r[1]));
        if res < 1e-13 {
            return Ok((y, f.log_det[0]));
        }
        let inv = f.jacobians[0].inverse().ok_or(Error::NonInvertibleFlow { t })?;
        let d = inv.apply(r);
        y = [y[0] - d[0], y[1] - d[1]];
    }
    if res < 1e-10 {
        let f = flow_jacobian(metric, phi, y, &[t], steps)?;
        return Ok((y, f.log_det[0]));
    }
    Err(Error::NoConvergence {
        what: "flow inversion".into(),
        residual: res,
    })
}

/// `U_ν(μ_t)` evaluated on the fixed grid: for each node `x` near the pushed
/// support, `ρ_t(x) = ρ₀(F_t⁻¹ x) / J_t(F_t⁻¹ x)`.
#[allow(clippy::too_many_arguments)]
fn measure_side_entropy(
    inst: &ConvexityInstance<'_>,
    phi: &CompiledPotential,
    u: &EntropyFunction,
    pushed: &[Vec2],
    t: f64,
    density_scale: f64,
    total_volume: f64,
    steps: usize,
) -> Result<f64> {
    let n = inst.n;
    let h = 1.0 / n as f64;
    // Nodes within a margin of the pushed support (in cover coordinates
    // relative to the first pushed point).
    let anchor = pushed[0];
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pushed {
        let d = periodic_delta(anchor, *p);
        for c in 0..2 {
            lo[c] = math::min(lo[c], anchor[c] + d[c]);
            hi[c] = math::max(hi[c], anchor[c] + d[c]);
        }
    }
    let pad = 2.0 * h;
    let i0 = math::floor((lo[0] - pad) / h) as i64;
    let i1 = math::ceil((hi[0] + pad) / h) as i64;
    let j0 = math::floor((lo[1] - pad) / h) as i64;
    let j1 = math::ceil((hi[1] + pad) / h) as i64;
    let reach = inst.bump.radius + 4.0 * h;
    let mut acc = 0.0;
    for j in j0..=j1 {
        // Displacement x − F_t⁻¹(x) of the previous node, as a warm start.
        let mut shift: Option<Vec2> = None;
        for i in i0..=i1 {
            let x = [i as f64 * h, j as f64 * h];
            let s = match shift {
                Some(s) => s,
                None => {
                    let w = descent_velocity(inst.metric, phi, x)?;
                    [t * w[0], t * w[1]]
                }
            };
            let guess = [x[0] - s[0], x[1] - s[1]];
            let d = periodic_delta(inst.bump.center, guess);
            if d[0] * d[0] + d[1] * d[1] > reach * reach {
                shift = None;
                continue;
            }
            let (y, log_j) = match invert_flow(inst.metric, phi, x, guess, t, steps) {
                Ok(r) => r,
                // Preimages far outside the support carry no mass.
                Err(_) if inst.bump.eval(guess) == 0.0 => {
                    shift = None;
                    continue;
                }
                Err(e) => return Err(e),
            };
            shift = Some([x[0] - y[0], x[1] - y[1]]);
            let b = inst.bump.eval(y);
            if b == 0.0 {
                continue;
            }
            // ρ against ν = vol_g / vol_g(M).
            let rho = b * density_scale * total_volume / math::exp(log_j);
            let nu_cell = math::sqrt(inst.metric.metric_at(x)?.det()) * h * h / total_volume;
            acc += u.eval(rho) * nu_cell;
        }
    }
    Ok(acc)
}

/// Check weak displacement convexity with modulus `λ_K(U)` along the
/// geodesic `μ_t = (F_t)_# μ₀`, `μ₀ = bump · dvol_g` normalized. The verdict
/// requires every margin `≥ −tolerance`.
pub fn convexity_check(
    inst: &ConvexityInstance<'_>,
    k: f64,
    t_list: &[f64],
    u: &EntropyFunction,
    tolerance: f64,
    settings: &FlowSettings,
) -> Result<ConvexityReport> {
    let lam = lambda_k(u, k);
    if lam.divergent {
        return Err(Error::InvalidInput(format!(
            "lambda_K diverges for {} at K = {k}",
            u.name()
        )));
    }
    let phi = CompiledPotential::new(inst.phi);
    let mu0 = DiscreteMeasure::on_grid(inst.metric, inst.n, |p| inst.bump.eval(p))?;
    let dens0 = mu0.density().expect("grid measure has density").to_vec();
    // on_grid renormalizes: ξ₀ = bump · scale.
    let k0 = dens0.iter().position(|d| *d > 0.0).expect("non-empty support");
    let density_scale = dens0[k0] / inst.bump.eval(mu0.points()[k0]);
    let (_, total_volume) = volume_measure(inst.metric, inst.n)?;

    let mut times: Vec<f64> = t_list.to_vec();
    for end in [0.0, 1.0] {
        if !times.contains(&end) {
            times.push(end);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let family = displacement_interpolation(inst.metric, &phi, &mu0, &times, settings.steps_per_unit)?;

    let mut lagrangian = Vec::with_capacity(times.len());
    let mut measure = Vec::with_capacity(times.len());
    for slice in &family {
        // Lagrangian side: Σ w_i U(ρ_i)/ρ_i at the pushed points.
        let mut acc = 0.0;
        for (w, xi) in mu0.weights().iter().zip(slice.measure.density().expect("density")) {
            let rho = xi * total_volume;
            if rho > 0.0 {
                acc += w * u.eval(rho) / rho;
            }
        }
        lagrangian.push(acc);
        measure.push(measure_side_entropy(
            inst,
            &phi,
            u,
            slice.measure.points(),
            slice.t,
            density_scale,
            total_volume,
            settings.steps_per_unit,
        )?);
    }
    let w2_sq = lagrangian_w2_squared(inst.metric, &phi, &mu0)?;
    let i0 = times.iter().position(|t| *t == 0.0).expect("t = 0 present");
    let i1 = times.iter().position(|t| *t == 1.0).expect("t = 1 present");
    let mut out = ConvexityReport {
        lambda: lam.value,
        t: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        margin: Vec::new(),
        verdict: true,
        w2: math::sqrt(w2_sq),
        w2_source: W2Source::Constructed,
        measure_lhs: Vec::new(),
        cross_form_gap: 0.0,
        tolerance,
    };
    for (a, b) in lagrangian.iter().zip(&measure) {
        out.cross_form_gap = math::max(out.cross_form_gap, math::abs(a - b));
    }
    for (k, &t) in times.iter().enumerate() {
        if !t_list.contains(&t) {
            continue;
        }
        let rhs = t * lagrangian[i1] + (1.0 - t) * lagrangian[i0] - 0.5 * lam.value * t * (1.0 - t) * w2_sq;
        let margin = rhs - lagrangian[k];
        out.t.push(t);
        out.lhs.push(lagrangian[k]);
        out.rhs.push(rhs);
        out.margin.push(margin);
        out.measure_lhs.push(measure[k]);
        if !(margin >= -tolerance) {
            out.verdict = false;
        }
    }
    Ok(out)
}

/// Margins of the Lagrangian form of the inequality for `U_∞`,
/// `Σ_i η_i [L_t(y_i) − t L_1(y_i) − ½ λ t(1−t) |∇φ(y_i)|²]` with
/// `L_t = log J_t`, for arbitrary non-negative weights `η_i`. Linear in `η`.
pub fn lagrangian_margins(
    metric: &dyn MetricSource,
    phi: &FieldExpr,
    points: &[Vec2],
    eta: &[f64],
    lambda: f64,
    t_list: &[f64],
    settings: &FlowSettings,
) -> Result<Vec<f64>> {
    let phi = CompiledPotential::new(phi);
    let mut times: Vec<f64> = t_list.to_vec();
    times.push(1.0);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|a, b| times[*a].partial_cmp(&times[*b]).unwrap_or(core::cmp::Ordering::Equal));
    let sorted: Vec<f64> = order.iter().map(|&k| times[k]).collect();
    let last = times.len() - 1;
    let mut margins = vec![0.0; t_list.len()];
    for (p, e) in points.iter().zip(eta) {
        let f = flow_jacobian(metric, &phi, *p, &sorted, settings.steps_per_unit)?;
        let mut l = vec![0.0; times.len()];
        for (slot, &orig) in order.iter().enumerate() {
            l[orig] = f.log_det[slot];
        }
        let g = metric.metric_at(*p)?;
        let speed2 = g.quad(descent_velocity(metric, &phi, *p)?);
        for (k, &t) in t_list.iter().enumerate() {
            margins[k] += e * (l[k] - t * l[last] - 0.5 * lambda * t * (1.0 - t) * speed2);
        }
    }
    Ok(margins)
}

/// `C(t) = −log vol_g(M) + log det DF_t(x*)` at signed times; negative
/// times follow the flow of `−φ`.
fn c_values(
    metric: &dyn MetricSource,
    phi: &FieldExpr,
    x: Vec2,
    ts: &[f64],
    settings: &FlowSettings,
    log_vol: f64,
) -> Result<Vec<f64>> {
    let fwd = CompiledPotential::new(phi);
    let bwd = CompiledPotential::new(&-phi.clone());
    ts.iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(-log_vol);
            }
            let (pot, s) = if t > 0.0 { (&fwd, t) } else { (&bwd, -t) };
            let f = flow_jacobian(metric, pot, x, &[s], settings.steps_per_unit)?;
            Ok(f.log_det[0] - log_vol)
        })
        .collect()
}

/// The two sides of `−C″(0) = Ric(v, v)` at a witness.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SecondDerivativeIdentity {
    pub x_star: Vec2,
    pub v: Vec2,
    /// `−C″(0)` from a five-point second difference of the flow.
    pub lhs: f64,
    /// `Ric(v, v)` of the metric the flow runs on.
    pub rhs: f64,
    pub relative_error: f64,
    pub g_vv: f64,
}

/// Time step of the five-point stencil for `C″(0)`.
pub const C2_STEP: f64 = 0.125;

pub fn c_second_derivative_identity(
    metric: &dyn MetricSource,
    x_star: Vec2,
    v: Vec2,
    radii: &WitnessRadii,
    settings: &FlowSettings,
) -> Result<SecondDerivativeIdentity> {
    let phi = build_witness_potential(metric, x_star, v, radii)?;
    let h = C2_STEP;
    let c = c_values(metric, &phi, x_star, &[-2.0 * h, -h, 0.0, h, 2.0 * h], settings, 0.0)?;
    let c2 = (-c[0] + 16.0 * c[1] - 30.0 * c[2] + 16.0 * c[3] - c[4]) / (12.0 * h * h);
    let geo = if metric.is_flat() {
        PointGeometry::from_jet(&crate::metric::MetricJet::FLAT)?
    } else {
        PointGeometry::from_jet(&metric.jet(x_star)?)?
    };
    let rhs = geo.ric.quad(v);
    let lhs = -c2;
    let g_vv = geo.g.quad(v);
    let denom = math::abs(rhs);
    Ok(SecondDerivativeIdentity {
        x_star,
        v,
        lhs,
        rhs,
        relative_error: if denom > 0.0 {
            math::abs(lhs - rhs) / denom
        } else {
            math::abs(lhs - rhs)
        },
        g_vv,
    })
}

/// Discrete convexity of `t ↦ −C(x*, t) − ½ (K − δ/2) t² g(v, v)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointwiseConvexity {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// Second difference quotients at the interior nodes.
    pub second_differences: Vec<f64>,
    /// `−C″(0) − (K − δ/2) g(v, v)`.
    pub at_zero: f64,
    pub verdict: bool,
}

/// `t_grid` must be uniform and contain `0` as an interior node.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_convexity_check(
    metric: &dyn MetricSource,
    x_star: Vec2,
    v: Vec2,
    k: f64,
    delta: f64,
    t_grid: &[f64],
    radii: &WitnessRadii,
    settings: &FlowSettings,
) -> Result<PointwiseConvexity> {
    let n = t_grid.len();
    if n < 3 {
        return Err(Error::InvalidInput("need at least 3 time nodes".into()));
    }
    let dt = (t_grid[n - 1] - t_grid[0]) / (n - 1) as f64;
    if !(dt > 0.0)
        || t_grid
            .iter()
            .enumerate()
            .any(|(i, t)| math::abs(t - (t_grid[0] + i as f64 * dt)) > 1e-12)
    {
        return Err(Error::InvalidInput("time grid must be uniform and increasing".into()));
    }
    let zero = t_grid
        .iter()
        .position(|t| math::abs(*t) < 1e-12)
        .filter(|&i| i > 0 && i < n - 1)
        .ok_or_else(|| Error::InvalidInput("time grid must contain 0 as an interior node".into()))?;
    let phi = build_witness_potential(metric, x_star, v, radii)?;
    let c = c_values(metric, &phi, x_star, t_grid, settings, 0.0)?;
    let g_vv = metric.metric_at(x_star)?.quad(v);
    let a = k - 0.5 * delta;
    let values: Vec<f64> = t_grid
        .iter()
        .zip(&c)
        .map(|(t, ci)| -ci - 0.5 * a * t * t * g_vv)
        .collect();
    let second: Vec<f64> = values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]) / (dt * dt))
        .collect();
    let scale = g_vv * (1.0 + math::abs(k));
    let at_zero = second[zero - 1];
    Ok(PointwiseConvexity {
        t: t_grid.to_vec(),
        values,
        verdict: second.iter().all(|s| *s >= -1e-8 * scale),
        second_differences: second,
        at_zero,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Flat, MetricModel};

    #[test]
    fn lambda_k_values() {
        assert_eq!(lambda_k(&EntropyFunction::boltzmann(), 5.0).value, 5.0);
        let sq = EntropyFunction::power(2.0).unwrap();
        assert_eq!(lambda_k(&sq, 0.0).value, 0.0);
        // r²: p(r)/r = r/1 scaled by 1/(m−1) = 1 → infimum 0 as r → 0.
        assert!(lambda_k(&sq, 1.0).value.abs() < 1e-12);
        assert!(lambda_k(&sq, -1.0).divergent);
    }

    #[test]
    fn entropy_function_properties() {
        let b = EntropyFunction::boltzmann();
        assert!(b.is_convex_on_samples() && b.is_dc_infinity());
        assert_eq!(b.eval(0.0), 0.0);
        assert_eq!(b.derivative_at_infinity(), f64::INFINITY);
        assert!(EntropyFunction::custom("concave", |r| -r * r, None).is_err());
        assert!(EntropyFunction::custom("offset", |r| r * r + 1.0, None).is_err());
    }

    #[test]
    fn entropy_of_volume_and_quarter_set() {
        let (nu, _) = volume_measure(&Flat, 16).unwrap();
        let b = EntropyFunction::boltzmann();
        assert!(entropy_value(&b, &nu, &nu).unwrap().abs() < 1e-14);
        let quarter: Vec<Vec2> = nu
            .points()
            .iter()
            .copied()
            .filter(|p| p[0] < 0.5 && p[1] < 0.5)
            .collect();
        let mu = DiscreteMeasure::uniform(quarter).unwrap();
        assert!((entropy_value(&b, &mu, &nu).unwrap() - 4f64.ln()).abs() < 1e-12);
        let off = DiscreteMeasure::dirac([0.01, 0.0]);
        assert_eq!(entropy_value(&b, &off, &nu), Err(Error::NotAbsolutelyContinuous));
    }

    #[test]
    fn flat_witness_is_affine() {
        let v = [0.05, -0.02];
        let phi = build_witness_potential(&Flat, [0.3, 0.7], v, &WitnessRadii::default()).unwrap();
        let c = CompiledPotential::new(&phi);
        for p in [[0.3, 0.7], [0.35, 0.6], [0.2, 0.75]] {
            let (_, grad, hess) = c.eval(p).unwrap();
            assert!((grad[0] + v[0]).abs() < 1e-15 && (grad[1] + v[1]).abs() < 1e-15);
            assert!(hess.max_abs() < 1e-15);
        }
    }

    #[test]
    fn witness_is_linear_in_v() {
        let m = MetricModel::conformal(FieldExpr::parse("0.05*sin(2*pi*x)*sin(2*pi*y)").unwrap()).unwrap();
        let r = WitnessRadii::default();
        let a = build_witness_potential(&m, [0.3, 0.7], [0.05, 0.0], &r).unwrap();
        let b = build_witness_potential(&m, [0.3, 0.7], [0.1, 0.0], &r).unwrap();
        for p in [[0.31, 0.69], [0.4, 0.8], [0.1, 0.5]] {
            assert!((2.0 * a.eval(p[0], p[1]) - b.eval(p[0], p[1])).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_identity_vanishes() {
        let s = c_second_derivative_identity(
            &Flat,
            [0.3, 0.7],
            [0.05, 0.0],
            &WitnessRadii::default(),
            &FlowSettings::default(),
        )
        .unwrap();
        assert!((s.lhs - s.rhs).abs() < 1e-8);
    }

    #[test]
    fn flat_pointwise_convexity() {
        let t: Vec<f64> = (-4..=4).map(|k| k as f64 * 0.05).collect();
        let r = pointwise_convexity_check(
            &Flat,
            [0.3, 0.7],
            [0.05, 0.0],
            0.0,
            0.1,
            &t,
            &WitnessRadii::default(),
            &FlowSettings::default(),
        )
        .unwrap();
        assert!(r.verdict);
        // −½(−δ/2)t²|v|² has second derivative δ/2·|v|².
        assert!((r.at_zero - 0.05 * 0.0025).abs() < 1e-10);
    }
}
