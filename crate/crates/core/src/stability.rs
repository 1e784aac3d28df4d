//! Hurwitz checks on the error dynamics and the Lyapunov equation
//! `P A + Aᵀ P = -I` behind the robust term.
//!
//! Gains follow the sign convention of the actuator controller: they are
//! stored negative and *added* to the virtual input, so the error dynamics are
//! `z''' = K1 z + K2 z' + K3 z''` with companion matrix rows
//! `(0,1,0), (0,0,1), (K1,K2,K3)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feedback gains of the three-state error chain plus the robust gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k_robust: f64,
}

impl GainSet {
    pub const fn new(k1: f64, k2: f64, k3: f64, k_robust: f64) -> Self {
        Self { k1, k2, k3, k_robust }
    }

    /// Nominal gains of the electromagnetic actuator case: `(-500, -125, -26)`, `k = 1`.
    pub const fn actuator_nominal() -> Self {
        Self::new(-500.0, -125.0, -26.0, 1.0)
    }

    pub fn feedback(&self) -> [f64; 3] {
        [self.k1, self.k2, self.k3]
    }

    pub fn is_finite(&self) -> bool {
        self.feedback().iter().chain([&self.k_robust]).all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("gains not Hurwitz: K = ({k1}, {k2}, {k3})")]
    NonHurwitzGains { k1: f64, k2: f64, k3: f64 },
    #[error("Lyapunov equation is singular")]
    SingularSystem,
    #[error("Lyapunov solution is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

pub fn companion_matrix(gains: &GainSet) -> Matrix3<f64> {
    Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, gains.k1, gains.k2, gains.k3)
}

/// Routh-Hurwitz test on `s³ - K3 s² - K2 s - K1`.
///
/// Strict: marginally stable gains are rejected.
pub fn is_hurwitz(gains: &GainSet) -> bool {
    let a2 = -gains.k3;
    let a1 = -gains.k2;
    let a0 = -gains.k1;
    a2 > 0.0 && a0 > 0.0 && a2 * a1 > a0
}

/// Block-diagonal companion matrix for a multi-output chain.
///
/// Block `i` has size `blocks[i].len()` and its last row holds that output's
/// gains `(K1, ..., Kr)` in the same additive convention as [`companion_matrix`].
pub fn block_companion_matrix(blocks: &[Vec<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(Vec::len).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut offset = 0;
    for gains in blocks {
        let r = gains.len();
        for row in 0..r.saturating_sub(1) {
            a[(offset + row, offset + row + 1)] = 1.0;
        }
        for (col, g) in gains.iter().enumerate() {
            a[(offset + r - 1, offset + col)] = *g;
        }
        offset += r;
    }
    a
}

/// Solves `P A + Aᵀ P = -I` for `P` by vectorizing into an `n² × n²` dense system.
///
/// With column-major `vec`, the equation reads `(Aᵀ ⊗ I + I ⊗ Aᵀ) vec(P) = -vec(I)`.
/// The result is symmetrized. Returns [`StabilityError::SingularSystem`] when the
/// system has no unique solution, which happens when `A` has eigenvalues `λ_i + λ_j = 0`.
pub fn solve_lyapunov(a: &DMatrix<f64>) -> Result<DMatrix<f64>, StabilityError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(StabilityError::NotSquare { rows: n, cols: a.ncols() });
    }
    let identity = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let system = at.kronecker(&identity) + identity.kronecker(&at);
    let rhs = -DVector::from_column_slice(identity.as_slice());

    let lu = system.lu();
    // LU happily "solves" near-singular systems; a pivot scaled against the
    // matrix magnitude catches the degenerate cases.
    let scale = a.amax().max(1.0);
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |acc, p| acc.min(p.abs()));
    if min_pivot.is_nan() || min_pivot <= 1e-13 * scale {
        return Err(StabilityError::SingularSystem);
    }
    let solution = lu.solve(&rhs).ok_or(StabilityError::SingularSystem)?;
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(StabilityError::SingularSystem);
    }
    let p = DMatrix::from_column_slice(n, n, solution.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Positive definiteness of a symmetric matrix.
///
/// Sylvester's leading-minor test up to 3×3, a symmetric eigen-solve beyond.
pub fn is_positive_definite(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    if n != p.ncols() || n == 0 {
        return false;
    }
    if n <= 3 {
        (1..=n).all(|k| p.view((0, 0), (k, k)).determinant() > 0.0)
    } else {
        p.clone().symmetric_eigenvalues().iter().all(|&l| l > 0.0)
    }
}

/// Element-wise max of `P A + Aᵀ P + I`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (p * a + a.transpose() * p + DMatrix::<f64>::identity(n, n)).amax()
}

/// Companion matrix and Lyapunov solution for one frozen gain set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovData {
    pub a_tilde: Matrix3<f64>,
    pub p: Matrix3<f64>,
}

impl LyapunovData {
    pub fn for_gains(gains: &GainSet) -> Result<Self, StabilityError> {
        if !is_hurwitz(gains) {
            return Err(StabilityError::NonHurwitzGains { k1: gains.k1, k2: gains.k2, k3: gains.k3 });
        }
        let a_tilde = companion_matrix(gains);
        let a_dyn = DMatrix::from_column_slice(3, 3, a_tilde.as_slice());
        let p_dyn = solve_lyapunov(&a_dyn)?;
        if !is_positive_definite(&p_dyn) {
            return Err(StabilityError::NotPositiveDefinite);
        }
        let p = Matrix3::from_column_slice(p_dyn.as_slice());
        Ok(Self { a_tilde, p })
    }

    /// `V(z) = zᵀ P z`.
    pub fn value(&self, z: &Vector3<f64>) -> f64 {
        z.dot(&(self.p * z))
    }

    /// `∂V/∂z3 = 2 (P z)₃`, the gradient entry at the highest error derivative.
    pub fn gradient_top(&self, z: &Vector3<f64>) -> f64 {
        2.0 * self.p.row(2).dot(&z.transpose())
    }

    pub fn in_invariant_set(&self, z: &Vector3<f64>, k_robust: f64) -> bool {
        1.0 - k_robust * self.gradient_top(z).abs() >= 0.0
    }
}

/// Indices of the highest-derivative error components, `r1-1, r1+r2-1, ...` (0-based).
pub fn top_derivative_indices(relative_degrees: &[usize]) -> Vec<usize> {
    relative_degrees
        .iter()
        .scan(0usize, |acc, r| {
            *acc += r;
            Some(*acc - 1)
        })
        .collect()
}

/// Membership of `z` in `S = { z : 1 - k |∂V/∂z_ind| ≥ 0 }` with `V = zᵀ P z`.
///
/// `∂V/∂z_ind` collects `2 (P z)` at the [`top_derivative_indices`]; its
/// Euclidean norm is used when there is more than one output.
pub fn invariant_set_membership(
    z: &DVector<f64>,
    k_robust: f64,
    p: &DMatrix<f64>,
    relative_degrees: &[usize],
) -> bool {
    let grad = (p * z) * 2.0;
    let norm = top_derivative_indices(relative_degrees)
        .into_iter()
        .map(|i| grad[i] * grad[i])
        .sum::<f64>()
        .sqrt();
    1.0 - k_robust * norm >= 0.0
}
