//! Periodic N×N grid numerics: field storage, rectangle-rule quadrature,
//! central differences and direct-sum periodic convolution.
//!
//! Node `(i, j)` sits at `(i/N, j/N)`; `i` runs along x. Index arithmetic is
//! always taken modulo `N`, so there is no seam to approximate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};
use crate::math;

/// Number and layout of components stored per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Rank {
    Scalar,
    /// Two components `(v_x, v_y)`.
    Vector,
    /// Four components, row-major `(m_xx, m_xy, m_yx, m_yy)`.
    Matrix,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
            Rank::Matrix => 4,
        }
    }
}

/// Samples on a uniform periodic grid, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGridField {
    n: usize,
    rank: Rank,
    data: Vec<f64>,
}

impl PeriodicGridField {
    pub fn zeros(n: usize, rank: Rank) -> Self {
        assert!(n > 0, "grid resolution must be positive");
        PeriodicGridField {
            n,
            rank,
            data: vec![0.0; n * n * rank.components()],
        }
    }

    /// Wrap raw component-major data (`data[c·N² + j·N + i]`).
    pub fn from_data(n: usize, rank: Rank, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n * rank.components() {
            return Err(Error::InvalidInput(alloc::format!(
                "expected {} values for a {n}x{n} {:?} field, got {}",
                n * n * rank.components(),
                rank,
                data.len()
            )));
        }
        let f = PeriodicGridField { n, rank, data };
        f.check_finite()?;
        Ok(f)
    }

    pub fn from_scalar_fn(n: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(n, Rank::Scalar);
        let h = 1.0 / n as f64;
        for j in 0..n {
            for i in 0..n {
                out.data[j * n + i] = f(i as f64 * h, j as f64 * h);
            }
        }
        out
    }

    pub fn from_vector_fn(n: usize, mut f: impl FnMut(f64, f64) -> Vec2) -> Self {
        let mut out = Self::zeros(n, Rank::Vector);
        let h = 1.0 / n as f64;
        let nn = n * n;
        for j in 0..n {
            for i in 0..n {
                let v = f(i as f64 * h, j as f64 * h);
                out.data[j * n + i] = v[0];
                out.data[nn + j * n + i] = v[1];
            }
        }
        out
    }

    pub fn from_matrix_fn(n: usize, mut f: impl FnMut(f64, f64) -> Mat2) -> Self {
        let mut out = Self::zeros(n, Rank::Matrix);
        let h = 1.0 / n as f64;
        for j in 0..n {
            for i in 0..n {
                out.set_matrix(i, j, f(i as f64 * h, j as f64 * h));
            }
        }
        out
    }

    /// Assemble a field from per-component scalar planes.
    pub fn from_components(n: usize, rank: Rank, planes: &[&[f64]]) -> Result<Self> {
        if planes.len() != rank.components() || planes.iter().any(|p| p.len() != n * n) {
            return Err(Error::InvalidInput("component planes do not match rank".into()));
        }
        let mut data = Vec::with_capacity(n * n * planes.len());
        for p in planes {
            data.extend_from_slice(p);
        }
        Ok(PeriodicGridField { n, rank, data })
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn rank(&self) -> Rank {
        self.rank
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize) -> Vec2 {
        let h = self.spacing();
        [i as f64 * h, j as f64 * h]
    }

    #[inline]
    pub fn component(&self, c: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.data[c * nn..(c + 1) * nn]
    }

    #[inline]
    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        &mut self.data[c * nn..(c + 1) * nn]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of component `c` at node `(i, j)`; indices wrap modulo N.
    #[inline]
    pub fn at(&self, i: isize, j: isize, c: usize) -> f64 {
        let n = self.n as isize;
        let ii = i.rem_euclid(n) as usize;
        let jj = j.rem_euclid(n) as usize;
        self.data[c * self.n * self.n + jj * self.n + ii]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[c * self.n * self.n + j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let nn = self.n * self.n;
        self.data[c * nn + j * self.n + i] = v;
    }

    #[inline]
    pub fn matrix(&self, i: usize, j: usize) -> Mat2 {
        debug_assert_eq!(self.rank, Rank::Matrix);
        let nn = self.n * self.n;
        let k = j * self.n + i;
        Mat2([
            [self.data[k], self.data[nn + k]],
            [self.data[2 * nn + k], self.data[3 * nn + k]],
        ])
    }

    #[inline]
    pub fn set_matrix(&mut self, i: usize, j: usize, m: Mat2) {
        debug_assert_eq!(self.rank, Rank::Matrix);
        let nn = self.n * self.n;
        let k = j * self.n + i;
        self.data[k] = m.0[0][0];
        self.data[nn + k] = m.0[0][1];
        self.data[2 * nn + k] = m.0[1][0];
        self.data[3 * nn + k] = m.0[1][1];
    }

    #[inline]
    pub fn vector(&self, i: usize, j: usize) -> Vec2 {
        let nn = self.n * self.n;
        let k = j * self.n + i;
        [self.data[k], self.data[nn + k]]
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let nn = self.n * self.n;
            let k = pos % nn;
            return Err(Error::InvalidInput(alloc::format!(
                "non-finite value at node ({}, {})",
                k % self.n,
                k / self.n
            )));
        }
        Ok(())
    }

    /// Largest `|m_xy − m_yx|` over the grid (matrix fields only).
    pub fn asymmetry(&self) -> f64 {
        if self.rank != Rank::Matrix {
            return 0.0;
        }
        self.component(1)
            .iter()
            .zip(self.component(2))
            .fold(0.0, |acc, (a, b)| math::max(acc, math::abs(a - b)))
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| math::max(acc, math::abs(*v)))
    }

    /// Sup-norm of the difference, over all components.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| math::max(acc, math::abs(a - b))))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, math::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, math::max)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        PeriodicGridField {
            n: self.n,
            rank: self.rank,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(PeriodicGridField {
            n: self.n,
            rank: self.rank,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Translate by whole nodes: `out(i, j) = self(i − di, j − dj)`.
    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        let mut out = Self::zeros(self.n, self.rank);
        for c in 0..self.rank.components() {
            for j in 0..self.n {
                for i in 0..self.n {
                    out.set(i, j, c, self.at(i as isize - di, j as isize - dj, c));
                }
            }
        }
        out
    }

    fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::ResolutionMismatch {
                left: self.n,
                right: other.n,
            });
        }
        if self.rank != other.rank {
            return Err(Error::InvalidInput("rank mismatch".into()));
        }
        Ok(())
    }

    /// Rectangle rule `Σ field·weight·h²` for scalar fields.
    pub fn integrate(&self, weight: &Self) -> Result<f64> {
        self.ensure_same_shape(weight)?;
        if self.rank != Rank::Scalar {
            return Err(Error::InvalidInput("integrate expects scalar fields".into()));
        }
        let h2 = self.spacing() * self.spacing();
        Ok(self.data.iter().zip(&weight.data).map(|(f, w)| f * w).sum::<f64>() * h2)
    }

    /// Rectangle rule `Σ field·h²` for a scalar field.
    pub fn integral(&self) -> f64 {
        debug_assert_eq!(self.rank, Rank::Scalar);
        let h2 = self.spacing() * self.spacing();
        self.data.iter().sum::<f64>() * h2
    }
}

/// A finite periodic convolution stencil: `out(i,j) = Σ w·f(i − a, j − b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    n: usize,
    entries: Vec<(isize, isize, f64)>,
}

impl Stencil {
    pub fn new(n: usize, entries: Vec<(isize, isize, f64)>) -> Self {
        Stencil { n, entries }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(isize, isize, f64)] {
        &self.entries
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// Largest offset in nodes along either axis.
    pub fn reach(&self) -> usize {
        self.entries
            .iter()
            .map(|&(a, b, _)| a.unsigned_abs().max(b.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    /// Discrete convolution of two stencils; applying the result equals
    /// applying both in sequence.
    pub fn compose(&self, other: &Stencil) -> Stencil {
        let mut acc: Vec<(isize, isize, f64)> = Vec::new();
        for &(a, b, w) in &self.entries {
            for &(c, d, v) in &other.entries {
                acc.push((a + c, b + d, w * v));
            }
        }
        acc.sort_by_key(|x| (x.1, x.0));
        let mut merged: Vec<(isize, isize, f64)> = Vec::with_capacity(acc.len());
        for e in acc {
            match merged.last_mut() {
                Some(last) if last.0 == e.0 && last.1 == e.1 => last.2 += e.2,
                _ => merged.push(e),
            }
        }
        Stencil {
            n: self.n,
            entries: merged,
        }
    }

    /// Apply to one scalar plane.
    pub fn apply_plane(&self, src: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(src.len(), n * n);
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b, w) in &self.entries {
            if w == 0.0 {
                continue;
            }
            let shift = a.rem_euclid(n as isize) as usize;
            let bb = b.rem_euclid(n as isize) as usize;
            for j in 0..n {
                let r = (j + n - bb) % n;
                let src_row = &src[r * n..(r + 1) * n];
                let dst = &mut out[j * n..(j + 1) * n];
                // dst[i] += w * src_row[(i - shift) mod n]
                let (head, tail) = dst.split_at_mut(shift);
                for (d, s) in tail.iter_mut().zip(&src_row[..n - shift]) {
                    *d += w * s;
                }
                for (d, s) in head.iter_mut().zip(&src_row[n - shift..]) {
                    *d += w * s;
                }
            }
        }
    }

    /// Componentwise periodic convolution of a field.
    pub fn apply(&self, field: &PeriodicGridField) -> Result<PeriodicGridField> {
        if field.resolution() != self.n {
            return Err(Error::ResolutionMismatch {
                left: field.resolution(),
                right: self.n,
            });
        }
        let mut out = PeriodicGridField::zeros(self.n, field.rank());
        for c in 0..field.rank().components() {
            self.apply_plane(field.component(c), out.component_mut(c));
        }
        Ok(out)
    }
}

/// Which derivative of the mollifier a kernel samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelDerivative {
    None,
    X,
    Y,
    XX,
    XY,
    YY,
}

/// Sampled mollifier `ρ_ε` (or one of its derivatives) on the grid spacing.
///
/// The profile is `ρ(w) = exp(−1/(1 − |w|²))` for `|w| < 1`. The base kernel
/// is renormalized to unit discrete mass. Derivative kernels are rescaled
/// so that they differentiate linear (first order) or quadratic (second order)
/// polynomials exactly, and sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    eps: f64,
    derivative: KernelDerivative,
    stencil: Stencil,
}

fn bump(w2: f64) -> f64 {
    if w2 >= 1.0 {
        0.0
    } else {
        math::exp(-1.0 / (1.0 - w2))
    }
}

/// Derivatives of the bump profile in the scaled variable `w`.
fn bump_derivative(w: Vec2, which: KernelDerivative) -> f64 {
    let w2 = w[0] * w[0] + w[1] * w[1];
    if w2 >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - w2;
    let f = math::exp(-1.0 / q);
    let first = |k: usize| f * (-2.0 * w[k] / (q * q));
    let second = |k: usize, l: usize| {
        let delta = if k == l { 1.0 } else { 0.0 };
        f * (4.0 * w[k] * w[l] / (q * q * q * q) - 2.0 * delta / (q * q) - 8.0 * w[k] * w[l] / (q * q * q))
    };
    match which {
        KernelDerivative::None => f,
        KernelDerivative::X => first(0),
        KernelDerivative::Y => first(1),
        KernelDerivative::XX => second(0, 0),
        KernelDerivative::XY => second(0, 1),
        KernelDerivative::YY => second(1, 1),
    }
}

impl Kernel {
    /// Unit-mass mollifier of radius `eps` on an N×N grid.
    pub fn mollifier(n: usize, eps: f64) -> Result<Self> {
        Self::with_derivative(n, eps, KernelDerivative::None)
    }

    pub fn with_derivative(n: usize, eps: f64, derivative: KernelDerivative) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(alloc::format!("eps must be positive, got {eps}")));
        }
        if eps >= 0.5 {
            return Err(Error::KernelExceedsChart { eps });
        }
        let h = 1.0 / n as f64;
        let reach = math::ceil(eps / h) as isize;
        let mut base = Vec::new();
        let mut raw = Vec::new();
        for b in -reach..=reach {
            for a in -reach..=reach {
                let w = [a as f64 * h / eps, b as f64 * h / eps];
                let w2 = w[0] * w[0] + w[1] * w[1];
                if w2 >= 1.0 {
                    continue;
                }
                base.push(bump(w2));
                raw.push((a, b, bump_derivative(w, derivative)));
            }
        }
        let z: f64 = base.iter().sum();
        let mut entries: Vec<(isize, isize, f64)> = raw.into_iter().map(|(a, b, v)| (a, b, v / z)).collect();
        let z_of = |entries: &[(isize, isize, f64)], f: &dyn Fn(f64, f64) -> f64| -> f64 {
            entries.iter().map(|&(a, b, w)| w * f(a as f64 * h, b as f64 * h)).sum()
        };
        match derivative {
            KernelDerivative::None => {}
            KernelDerivative::X | KernelDerivative::Y => {
                let axis = if derivative == KernelDerivative::X { 0 } else { 1 };
                // d/dx of f = x is 1: Σ w·(−z_axis) = 1.
                let m = z_of(&entries, &|zx, zy| -[zx, zy][axis]);
                if m != 0.0 {
                    entries.iter_mut().for_each(|e| e.2 /= m);
                }
            }
            KernelDerivative::XX | KernelDerivative::YY => {
                let axis = if derivative == KernelDerivative::XX { 0 } else { 1 };
                let m = z_of(&entries, &|zx, zy| 0.5 * [zx, zy][axis] * [zx, zy][axis]);
                if m != 0.0 {
                    entries.iter_mut().for_each(|e| e.2 /= m);
                }
                Self::zero_mean(&mut entries);
            }
            KernelDerivative::XY => {
                let m = z_of(&entries, &|zx, zy| zx * zy);
                if m != 0.0 {
                    entries.iter_mut().for_each(|e| e.2 /= m);
                }
            }
        }
        Ok(Kernel {
            eps,
            derivative,
            stencil: Stencil::new(n, entries),
        })
    }

    fn zero_mean(entries: &mut [(isize, isize, f64)]) {
        let s: f64 = entries.iter().map(|e| e.2).sum();
        if let Some(c) = entries.iter_mut().find(|e| e.0 == 0 && e.1 == 0) {
            c.2 -= s;
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn derivative(&self) -> KernelDerivative {
        self.derivative
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn resolution(&self) -> usize {
        self.stencil.n
    }

    pub fn mass(&self) -> f64 {
        self.stencil.mass()
    }

    /// Support radius in the same units as `eps`.
    pub fn support_radius(&self) -> f64 {
        self.eps
    }
}

/// Componentwise periodic convolution `field ⋆ kernel`.
pub fn convolve(field: &PeriodicGridField, kernel: &Kernel) -> Result<PeriodicGridField> {
    if kernel.support_radius() >= 0.5 {
        return Err(Error::KernelExceedsChart { eps: kernel.eps });
    }
    kernel.stencil.apply(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffScheme {
    Central2,
    Central4,
}

/// Periodic central-difference stencil for `∂/∂axis`.
pub fn difference_stencil(n: usize, axis: Axis, scheme: DiffScheme) -> Stencil {
    let h = 1.0 / n as f64;
    // out(i) = Σ w f(i − a): f(i+1) has a = −1.
    let taps: Vec<(isize, f64)> = match scheme {
        DiffScheme::Central2 => vec![(-1, 1.0 / (2.0 * h)), (1, -1.0 / (2.0 * h))],
        DiffScheme::Central4 => vec![
            (-2, -1.0 / (12.0 * h)),
            (-1, 8.0 / (12.0 * h)),
            (1, -8.0 / (12.0 * h)),
            (2, 1.0 / (12.0 * h)),
        ],
    };
    let entries = taps
        .into_iter()
        .map(|(a, w)| match axis {
            Axis::X => (a, 0, w),
            Axis::Y => (0, a, w),
        })
        .collect();
    Stencil::new(n, entries)
}

/// Periodic central difference along `axis`.
pub fn finite_diff(field: &PeriodicGridField, axis: Axis, scheme: DiffScheme) -> Result<PeriodicGridField> {
    if field.resolution() < 8 {
        return Err(Error::InvalidInput("finite differences need N >= 8".into()));
    }
    difference_stencil(field.resolution(), axis, scheme).apply(field)
}

/// Three-point second difference `∂_a ∂_b` (`xx`, `yy`) or the product of
/// central first differences (`xy`).
pub fn second_diff(field: &PeriodicGridField, a: Axis, b: Axis) -> Result<PeriodicGridField> {
    let n = field.resolution();
    if n < 8 {
        return Err(Error::InvalidInput("finite differences need N >= 8".into()));
    }
    let h = 1.0 / n as f64;
    let inv = 1.0 / (h * h);
    let st = match (a, b) {
        (Axis::X, Axis::X) => Stencil::new(n, vec![(-1, 0, inv), (0, 0, -2.0 * inv), (1, 0, inv)]),
        (Axis::Y, Axis::Y) => Stencil::new(n, vec![(0, -1, inv), (0, 0, -2.0 * inv), (0, 1, inv)]),
        _ => difference_stencil(n, Axis::X, DiffScheme::Central2).compose(&difference_stencil(
            n,
            Axis::Y,
            DiffScheme::Central2,
        )),
    };
    st.apply(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;

    #[test]
    fn constant_field_is_fixed_by_convolution() {
        let f = PeriodicGridField::from_scalar_fn(32, |_, _| 2.5);
        let k = Kernel::mollifier(32, 0.2).unwrap();
        let g = convolve(&f, &k).unwrap();
        assert!(g.data().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn kernel_mass_is_one() {
        for &eps in &[1.0 / 16.0, 1.0 / 32.0, 0.3] {
            let k = Kernel::mollifier(64, eps).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-14);
            assert!(k.stencil().entries().iter().all(|e| e.2 >= 0.0));
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        assert_eq!(Kernel::mollifier(64, 0.5), Err(Error::KernelExceedsChart { eps: 0.5 }));
    }

    #[test]
    fn derivative_kernels_are_exact_on_low_degree_polynomials() {
        // On a large grid, quadratics look polynomial near the centre node.
        let n = 256;
        let eps = 8.0 / n as f64;
        let h = 1.0 / n as f64;
        let kx = Kernel::with_derivative(n, eps, KernelDerivative::X).unwrap();
        let kxx = Kernel::with_derivative(n, eps, KernelDerivative::XX).unwrap();
        let kxy = Kernel::with_derivative(n, eps, KernelDerivative::XY).unwrap();
        let f = |zx: f64, zy: f64| 0.3 + 2.0 * zx - zy + 1.5 * zx * zx + 0.7 * zx * zy;
        // Evaluate at origin: Σ w f(−z).
        let ev = |k: &Kernel| -> f64 {
            k.stencil()
                .entries()
                .iter()
                .map(|&(a, b, w)| w * f(-(a as f64) * h, -(b as f64) * h))
                .sum()
        };
        assert!((ev(&kx) - 2.0).abs() < 1e-10);
        assert!((ev(&kxx) - 3.0).abs() < 1e-9);
        assert!((ev(&kxy) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn central4_derivative_of_sine() {
        let n = 128;
        let f = PeriodicGridField::from_scalar_fn(n, |x, _| math::sin(2.0 * PI * x));
        let d = finite_diff(&f, Axis::X, DiffScheme::Central4).unwrap();
        let exact = PeriodicGridField::from_scalar_fn(n, |x, _| 2.0 * PI * math::cos(2.0 * PI * x));
        let err = d.sup_distance(&exact).unwrap();
        // The stencil's symbol on a pure mode gives the error in closed form:
        // 2π·(1 − (8 sin θ − sin 2θ)/(6θ)) ≈ 2π·θ⁴/30 with θ = 2π/N.
        let th = 2.0 * PI / n as f64;
        let predicted = 2.0 * PI * (1.0 - (8.0 * th.sin() - (2.0 * th).sin()) / (6.0 * th));
        assert!((err - predicted).abs() < 1e-11, "{err} vs {predicted}");
        assert!(err < 1.25e-6);
    }

    #[test]
    fn differences_vanish_on_constant_and_transverse_fields() {
        let c = PeriodicGridField::from_scalar_fn(16, |_, _| 1.25);
        assert_eq!(finite_diff(&c, Axis::Y, DiffScheme::Central2).unwrap().sup_norm(), 0.0);
        let f = PeriodicGridField::from_scalar_fn(16, |_, y| math::sin(2.0 * PI * y));
        assert!(finite_diff(&f, Axis::X, DiffScheme::Central4).unwrap().sup_norm() < 1e-13);
        assert!(finite_diff(
            &PeriodicGridField::zeros(4, Rank::Scalar),
            Axis::X,
            DiffScheme::Central2
        )
        .is_err());
    }

    #[test]
    fn integrate_constants_and_odd_functions() {
        let one = PeriodicGridField::from_scalar_fn(40, |_, _| 1.0);
        assert!((one.integrate(&one).unwrap() - 1.0).abs() < 1e-14);
        let s = PeriodicGridField::from_scalar_fn(40, |x, _| math::sin(2.0 * PI * x));
        assert!(s.integrate(&one).unwrap().abs() < 1e-12);
    }

    #[test]
    fn conformal_volume_matches_refined_quadrature() {
        let u = |x: f64, y: f64| 0.05 * math::sin(2.0 * PI * x) * math::sin(2.0 * PI * y);
        let vol = |n| {
            let one = PeriodicGridField::from_scalar_fn(n, |_, _| 1.0);
            let w = PeriodicGridField::from_scalar_fn(n, |x, y| math::exp(2.0 * u(x, y)));
            one.integrate(&w).unwrap()
        };
        // Refined-grid oracle.
        assert!((vol(64) - vol(512)).abs() < 1e-8);
    }

    #[test]
    fn composed_stencil_equals_sequential_application() {
        let n = 32;
        let f = PeriodicGridField::from_scalar_fn(n, |x, y| math::sin(2.0 * PI * x) + math::cos(4.0 * PI * y) * x);
        let k1 = Kernel::mollifier(n, 0.1).unwrap();
        let k2 = Kernel::mollifier(n, 0.15).unwrap();
        let seq = convolve(&convolve(&f, &k1).unwrap(), &k2).unwrap();
        let once = k1.stencil().compose(k2.stencil()).apply(&f).unwrap();
        assert!(seq.sup_distance(&once).unwrap() < 1e-12);
    }
}
