//! Small dense kernel for the geometry of St(3,2), the set of 3×2 matrices
//! with orthonormal columns.
//!
//! Everything here is a pure function on fixed-size `nalgebra` matrices. The
//! exponential map uses the closed form
//! `exp(τ(W Uᵀ − U Wᵀ)) · U · exp(−τ Uᵀ W)` for the Euclidean metric, and its
//! directional derivative is obtained exactly from the doubled-block identity
//!
//! ```text
//! exp([[X, D], [0, X]]) = [[exp(X), L(X, D)], [0, exp(X)]]
//! ```
//!
//! where `L(X, D)` is the Fréchet derivative of `exp` at `X` in direction `D`.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, SMatrix};
use thiserror::Error;

/// Dense 3×2 matrix: tangent fields, multipliers' partners and deformation
/// gradients all live here.
pub type Mat32 = Matrix3x2<f64>;

/// Tolerance on `|UᵀU − I|_F` accepted when building a [`StiefelPoint`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StiefelError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("columns are not orthonormal: |UᵀU - I| = {defect:.3e}")]
    NotOrthonormal { defect: f64 },
}

/// A validated point of St(3,2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiefelPoint(Mat32);

impl StiefelPoint {
    /// Validates `m` against [`ORTHONORMALITY_TOL`]. Never re-orthonormalizes.
    pub fn new(m: Mat32) -> Result<Self, StiefelError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(StiefelError::NonFinite);
        }
        let defect = orthonormality_defect(&m);
        if defect > ORTHONORMALITY_TOL {
            return Err(StiefelError::NotOrthonormal { defect });
        }
        Ok(Self(m))
    }

    /// The gradient of the flat embedding `x ↦ (x₁, x₂, 0)`.
    pub fn canonical() -> Self {
        Self(Mat32::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0))
    }

    pub fn matrix(&self) -> &Mat32 {
        &self.0
    }

    pub fn into_inner(self) -> Mat32 {
        self.0
    }
}

impl AsRef<Mat32> for StiefelPoint {
    fn as_ref(&self) -> &Mat32 {
        &self.0
    }
}

/// Frobenius norm of `mᵀm − I₂`.
pub fn orthonormality_defect(m: &Mat32) -> f64 {
    (m.transpose() * m - Matrix2::identity()).norm()
}

/// Orthogonal projection onto the tangent space at `u`: `W − U sym(UᵀW)`.
pub fn tangent_project(u: &StiefelPoint, w: &Mat32) -> Mat32 {
    let u = u.matrix();
    let utw = u.transpose() * w;
    let sym = (utw + utw.transpose()) * 0.5;
    w - u * sym
}

/// `Uᵀ M + Mᵀ U`, a symmetric 2×2 matrix that vanishes exactly when `M` is
/// tangent at `U`.
pub fn sym_bracket(u: &Mat32, m: &Mat32) -> Matrix2<f64> {
    let p = u.transpose() * m;
    p + p.transpose()
}

fn is_exactly_skew<const N: usize>(x: &SMatrix<f64, N, N>) -> bool {
    (0..N).all(|i| x[(i, i)] == 0.0 && (0..i).all(|j| x[(i, j)] == -x[(j, i)]))
}

/// Matrix exponential.
///
/// Exactly skew-symmetric 2×2 and 3×3 inputs take the planar rotation and
/// Rodrigues closed forms. Everything else goes through scaling and squaring
/// with a diagonal [6/6] Padé approximant.
pub fn matrix_exp<const N: usize>(x: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    if N == 2 && is_exactly_skew(x) {
        let theta = x[(0, 1)];
        let (s, c) = theta.sin_cos();
        let mut out = SMatrix::<f64, N, N>::zeros();
        out[(0, 0)] = c;
        out[(0, 1)] = s;
        out[(1, 0)] = -s;
        out[(1, 1)] = c;
        return out;
    }
    if N == 3 && is_exactly_skew(x) {
        let mut a = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = x[(i, j)];
            }
        }
        let r = rodrigues(&a);
        let mut out = SMatrix::<f64, N, N>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = r[(i, j)];
            }
        }
        return out;
    }
    pade_exp(x)
}

/// `exp(A)` for skew `A = [a]×`.
fn rodrigues(a: &Matrix3<f64>) -> Matrix3<f64> {
    let theta2 = a[(2, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 0)].powi(2);
    let theta = theta2.sqrt();
    let (sinc, cosc) = if theta < 1e-3 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + a * sinc + a * a * cosc
}

const PADE_DEGREE: usize = 6;
// Scaled argument bound (1-norm) for the [6/6] approximant; the truncation
// error there is below 1e-17.
const PADE_THETA: f64 = 0.5;

fn pade_exp<const N: usize>(x: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let norm1 = (0..N)
        .map(|j| (0..N).map(|i| x[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > PADE_THETA {
        (norm1 / PADE_THETA).log2().ceil() as i32
    } else {
        0
    };
    let xs = x * 2f64.powi(-squarings);

    let mut c = 1.0;
    let mut num = SMatrix::<f64, N, N>::identity();
    let mut den = SMatrix::<f64, N, N>::identity();
    let mut power = SMatrix::<f64, N, N>::identity();
    for k in 1..=PADE_DEGREE {
        c *= (PADE_DEGREE - k + 1) as f64 / (k * (2 * PADE_DEGREE - k + 1)) as f64;
        power = power * xs;
        num += power * c;
        if k % 2 == 0 {
            den += power * c;
        } else {
            den -= power * c;
        }
    }
    let mut r = solve_dense(den, num);
    for _ in 0..squarings {
        r = r * r;
    }
    r
}

/// Solves `a · X = b` by Gaussian elimination with partial pivoting. The
/// Padé denominator is well conditioned after scaling, so no failure path.
fn solve_dense<const N: usize>(
    mut a: SMatrix<f64, N, N>,
    mut b: SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    for k in 0..N {
        let p = (k..N)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap_or(k);
        if p != k {
            a.swap_rows(p, k);
            b.swap_rows(p, k);
        }
        let pivot = a[(k, k)];
        for i in (k + 1)..N {
            let f = a[(i, k)] / pivot;
            if f != 0.0 {
                for j in k..N {
                    a[(i, j)] -= f * a[(k, j)];
                }
                for j in 0..N {
                    b[(i, j)] -= f * b[(k, j)];
                }
            }
        }
    }
    for k in (0..N).rev() {
        for j in 0..N {
            let mut s = b[(k, j)];
            for i in (k + 1)..N {
                s -= a[(k, i)] * b[(i, j)];
            }
            b[(k, j)] = s / a[(k, k)];
        }
    }
    b
}

/// Fréchet derivative of `exp` at `x` in direction `d`, read off the
/// upper-right block of the exponential of `[[x, d], [0, x]]`. `M` must be
/// `2N`.
pub fn frechet_exp<const N: usize, const M: usize>(
    x: &SMatrix<f64, N, N>,
    d: &SMatrix<f64, N, N>,
) -> SMatrix<f64, N, N> {
    assert_eq!(M, 2 * N, "doubled block must be 2N x 2N");
    let mut block = SMatrix::<f64, M, M>::zeros();
    for i in 0..N {
        for j in 0..N {
            block[(i, j)] = x[(i, j)];
            block[(i + N, j + N)] = x[(i, j)];
            block[(i, j + N)] = d[(i, j)];
        }
    }
    let e = matrix_exp(&block);
    let mut out = SMatrix::<f64, N, N>::zeros();
    for i in 0..N {
        for j in 0..N {
            out[(i, j)] = e[(i, j + N)];
        }
    }
    out
}

/// The two generators of the exponential map: the skew 3×3 `τ(W Uᵀ − U Wᵀ)`
/// and the 2×2 `−τ Uᵀ W`.
fn generators(u: &Mat32, w: &Mat32, tau: f64) -> (Matrix3<f64>, Matrix2<f64>) {
    let m = (w * u.transpose()) * tau;
    (m - m.transpose(), -(u.transpose() * w) * tau)
}

/// `Exp_U(τW) = exp(τ(W Uᵀ − U Wᵀ)) · U · exp(−τ Uᵀ W)`.
///
/// `W` is not projected: for non-tangent `W` the formula is still evaluated
/// and the result need not lie on the manifold.
pub fn exp_map(u: &StiefelPoint, w: &Mat32, tau: f64) -> Mat32 {
    let u = u.matrix();
    let (a, e) = generators(u, w, tau);
    matrix_exp(&a) * u * matrix_exp(&e)
}

/// Directional derivative of `μ ↦ Exp_U(τμ)` at `μ = W` in direction `G`.
pub fn dexp_map(u: &StiefelPoint, w: &Mat32, tau: f64, g: &Mat32) -> Mat32 {
    let um = u.matrix();
    let (a, e) = generators(um, w, tau);
    let exp_a = matrix_exp(&a);
    let exp_e = matrix_exp(&e);
    directional(um, &a, &e, &exp_a, &exp_e, tau, g)
}

fn directional(
    u: &Mat32,
    a: &Matrix3<f64>,
    e: &Matrix2<f64>,
    exp_a: &Matrix3<f64>,
    exp_e: &Matrix2<f64>,
    tau: f64,
    g: &Mat32,
) -> Mat32 {
    let (b, f) = generators(u, g, tau);
    let da = frechet_exp::<3, 6>(a, &b);
    let de = frechet_exp::<2, 4>(e, &f);
    da * u * exp_e + exp_a * u * de
}

/// Index of entry `(row, col)` of a 3×2 matrix in the row-major flattening
/// used for per-cell dof blocks.
#[inline]
pub fn flat_index(row: usize, col: usize) -> usize {
    2 * row + col
}

/// The `k`-th unit matrix of the row-major basis of ℝ^{3×2}.
pub fn unit_matrix(k: usize) -> Mat32 {
    let mut m = Mat32::zeros();
    m[(k / 2, k % 2)] = 1.0;
    m
}

/// Evaluates `Exp_U(τW)` together with its full 6×6 Jacobian with respect to
/// `W` in the row-major flattening (`jac[(i, j)] = ∂ out_i / ∂ W_j`).
pub fn exp_map_with_jacobian(
    u: &StiefelPoint,
    w: &Mat32,
    tau: f64,
) -> (Mat32, SMatrix<f64, 6, 6>) {
    let um = u.matrix();
    let (a, e) = generators(um, w, tau);
    let exp_a = matrix_exp(&a);
    let exp_e = matrix_exp(&e);
    let value = exp_a * um * exp_e;
    let mut jac = SMatrix::<f64, 6, 6>::zeros();
    for j in 0..6 {
        let d = directional(um, &a, &e, &exp_a, &exp_e, tau, &unit_matrix(j));
        for r in 0..3 {
            for c in 0..2 {
                jac[(flat_index(r, c), j)] = d[(r, c)];
            }
        }
    }
    (value, jac)
}
