//! Fixed-size 2×2 linear algebra used at every grid node and ODE stage.

use core::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::math;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    math::sqrt(dot(a, a))
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

/// Shortest periodic displacement `b − a` on the unit torus.
#[inline]
pub fn periodic_delta(a: Vec2, b: Vec2) -> Vec2 {
    [math::wrap(b[0] - a[0]), math::wrap(b[1] - a[1])]
}

/// Flat torus distance.
#[inline]
pub fn periodic_distance(a: Vec2, b: Vec2) -> f64 {
    norm(periodic_delta(a, b))
}

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0; 2]; 2]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    #[inline]
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    #[inline]
    pub fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Mat2([[xx, xy], [xy, yy]])
    }

    #[inline]
    pub fn diagonal(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    #[inline]
    pub fn scaled(self, s: f64) -> Self {
        let m = self.0;
        Mat2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    #[inline]
    pub fn apply(&self, v: Vec2) -> Vec2 {
        let m = self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// `vᵀ A w`.
    #[inline]
    pub fn bilinear(&self, v: Vec2, w: Vec2) -> f64 {
        dot(v, self.apply(w))
    }

    #[inline]
    pub fn quad(&self, v: Vec2) -> f64 {
        self.bilinear(v, v)
    }

    pub fn max_abs(&self) -> f64 {
        let m = self.0;
        math::max(
            math::max(math::abs(m[0][0]), math::abs(m[0][1])),
            math::max(math::abs(m[1][0]), math::abs(m[1][1])),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let a = self.0[0][0];
        let d = self.0[1][1];
        let b = 0.5 * (self.0[0][1] + self.0[1][0]);
        let mean = 0.5 * (a + d);
        let r = math::sqrt(0.25 * (a - d) * (a - d) + b * b);
        [mean - r, mean + r]
    }

    /// Unit eigenvector (Euclidean) of the symmetric part for eigenvalue `lambda`.
    pub fn sym_eigenvector(&self, lambda: f64) -> Vec2 {
        let a = self.0[0][0];
        let d = self.0[1][1];
        let b = 0.5 * (self.0[0][1] + self.0[1][0]);
        // Rows of (A − λI); pick the better-conditioned one.
        let r1 = [a - lambda, b];
        let r2 = [b, d - lambda];
        let row = if dot(r1, r1) >= dot(r2, r2) { r1 } else { r2 };
        let v = [-row[1], row[0]];
        let n = norm(v);
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            scale(1.0 / n, v)
        }
    }
}

/// Lower Cholesky factor of an SPD matrix, as `(l11, l21, l22)`.
fn cholesky(b: &Mat2) -> (f64, f64, f64) {
    let b12 = 0.5 * (b.0[0][1] + b.0[1][0]);
    let l11 = math::sqrt(b.0[0][0]);
    let l21 = b12 / l11;
    let l22 = math::sqrt(b.0[1][1] - l21 * l21);
    (l11, l21, l22)
}

/// `L⁻¹ A L⁻ᵀ` for the Cholesky factor `L` of `B`.
fn reduce_pencil(a: &Mat2, b: &Mat2) -> (Mat2, (f64, f64, f64)) {
    let l = cholesky(b);
    let (l11, l21, l22) = l;
    let linv = Mat2([[1.0 / l11, 0.0], [-l21 / (l11 * l22), 1.0 / l22]]);
    let a12 = 0.5 * (a.0[0][1] + a.0[1][0]);
    let asym = Mat2::symmetric(a.0[0][0], a12, a.0[1][1]);
    let c = linv * asym * linv.transpose();
    let c12 = 0.5 * (c.0[0][1] + c.0[1][0]);
    (Mat2::symmetric(c.0[0][0], c12, c.0[1][1]), l)
}

/// Roots of `det(A − λB) = 0` for symmetric `A` and SPD `B`, ascending.
/// Reduced to an ordinary symmetric problem through the Cholesky factor of
/// `B`, which keeps proportional pairs (a double root) accurate.
pub fn generalized_eigenvalues(a: &Mat2, b: &Mat2) -> [f64; 2] {
    reduce_pencil(a, b).0.sym_eigenvalues()
}

/// `L⁻ᵀ` for the Cholesky factor of an SPD `g`: its columns form a
/// g-orthonormal frame.
pub fn orthonormal_frame(g: &Mat2) -> Mat2 {
    let (l11, l21, l22) = cholesky(g);
    Mat2([[1.0 / l11, -l21 / (l11 * l22)], [0.0, 1.0 / l22]])
}

/// Smallest generalized eigenvalue of `(A, B)` and a `B`-unit eigenvector.
pub fn min_generalized_eigenpair(a: &Mat2, b: &Mat2) -> (f64, Vec2) {
    let (c, (l11, l21, l22)) = reduce_pencil(a, b);
    let lambda = c.sym_eigenvalues()[0];
    let e = c.sym_eigenvector(lambda);
    // v = L⁻ᵀ e
    let v1 = e[1] / l22;
    let v0 = (e[0] - l21 * v1) / l11;
    (lambda, [v0, v1])
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] - b[0][0], a[0][1] - b[0][1]],
            [a[1][0] - b[1][0], a[1][1] - b[1][1]],
        ])
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scaled(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

impl Index<(usize, usize)> for Mat2 {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat2 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

/// 4×4 matrix for the linearized geodesic flow in `(position, velocity)`.
pub type Mat4 = [[f64; 4]; 4];

pub fn mat4_identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Upper-left and upper-right 2×2 blocks.
pub fn mat4_blocks(m: &Mat4) -> (Mat2, Mat2) {
    (
        Mat2([[m[0][0], m[0][1]], [m[1][0], m[1][1]]]),
        Mat2([[m[0][2], m[0][3]], [m[1][2], m[1][3]]]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_reduces_to_ordinary_for_identity() {
        let a = Mat2::symmetric(2.0, 1.0, 3.0);
        let ev = generalized_eigenvalues(&a, &Mat2::IDENTITY);
        let ord = a.sym_eigenvalues();
        assert!((ev[0] - ord[0]).abs() < 1e-14 && (ev[1] - ord[1]).abs() < 1e-14);
    }

    #[test]
    fn proportional_pair_gives_the_factor() {
        let b = Mat2::symmetric(1.3, 0.2, 0.9);
        let (lam, v) = min_generalized_eigenpair(&b.scaled(-4.5), &b);
        assert!((lam + 4.5).abs() < 1e-13);
        assert!((b.quad(v) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn eigenvector_satisfies_pencil() {
        let a = Mat2::symmetric(0.3, -0.7, 2.0);
        let b = Mat2::symmetric(2.0, 0.5, 1.0);
        let (lam, v) = min_generalized_eigenpair(&a, &b);
        let r = sub(a.apply(v), scale(lam, b.apply(v)));
        assert!(norm(r) < 1e-12);
    }

    #[test]
    fn periodic_delta_wraps() {
        let d = periodic_delta([0.0, 0.0], [0.9, 0.2]);
        assert!((d[0] + 0.1).abs() < 1e-15 && (d[1] - 0.2).abs() < 1e-15);
    }
}
