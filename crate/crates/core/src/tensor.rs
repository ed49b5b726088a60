//! Isotropic fourth-order stiffness and compliance tensors, the stability
//! split used by the dual functional, and small symmetric-eigenvalue helpers
//! for 3×3 matrices.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};

/// Default cap on the condition number accepted by [`shifted_inverse_power`].
pub const DEFAULT_COND_CAP: f64 = 1e12;

/// Lamé parameters (λ, μ) of an isotropic material.
///
/// Both must be strictly positive; this keeps the stiffness tensor positive
/// definite on symmetric matrices and makes the compliance formula well
/// defined with its largest eigenvalue equal to 1/(2μ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LameParams {
    pub lambda: f64,
    pub mu: f64,
}

impl LameParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda".into(),
                reason: format!("must be finite and > 0, got {lambda}"),
            });
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu".into(),
                reason: format!("must be finite and > 0, got {mu}"),
            });
        }
        Ok(Self { lambda, mu })
    }

    /// Modulus 3λ + 2μ governing the trace (volumetric) response.
    pub fn trace_modulus(&self) -> f64 {
        3.0 * self.lambda + 2.0 * self.mu
    }
}

/// Subspace of 3×3 matrices on which a fourth-order tensor is read as a
/// quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    /// Symmetric matrices only (6 dimensions).
    Symmetric,
    /// All 3×3 matrices (9 dimensions).
    Full,
}

/// Dense fourth-order tensor with components `c[i][j][k][l]`, acting on 3×3
/// matrices by double contraction over the last two indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4 {
    c: [[[[f64; 3]; 3]; 3]; 3],
}

impl Tensor4 {
    pub fn zeros() -> Self {
        Self {
            c: [[[[0.0; 3]; 3]; 3]; 3],
        }
    }

    /// Identity on the full 9-dimensional space: `c_ijkl = δ_ik δ_jl`.
    pub fn identity_full() -> Self {
        Self::from_fn(|i, j, k, l| if i == k && j == l { 1.0 } else { 0.0 })
    }

    pub fn from_fn(f: impl Fn(usize, usize, usize, usize) -> f64) -> Self {
        let mut c = [[[[0.0; 3]; 3]; 3]; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            for (j, cij) in ci.iter_mut().enumerate() {
                for (k, cijk) in cij.iter_mut().enumerate() {
                    for (l, v) in cijk.iter_mut().enumerate() {
                        *v = f(i, j, k, l);
                    }
                }
            }
        }
        Self { c }
    }

    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[i][j][k][l]
    }

    /// Double contraction `(T x)_ij = Σ_kl c_ijkl x_kl`.
    pub fn apply(&self, x: &Matrix3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += self.c[i][j][k][l] * x[(k, l)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Matrix of the quadratic form `x ↦ ⟨x, T x⟩` in an orthonormal basis of
    /// the chosen subspace (6×6 for symmetric matrices, 9×9 for all).
    pub fn form_matrix(&self, subspace: Subspace) -> DMatrix<f64> {
        match subspace {
            Subspace::Symmetric => {
                let basis = symmetric_basis();
                let mut m = DMatrix::zeros(6, 6);
                for (b, eb) in basis.iter().enumerate() {
                    let teb = self.apply(eb);
                    for (a, ea) in basis.iter().enumerate() {
                        m[(a, b)] = frobenius_inner(ea, &teb);
                    }
                }
                m
            }
            Subspace::Full => {
                let mut m = DMatrix::zeros(9, 9);
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            for l in 0..3 {
                                m[(3 * i + j, 3 * k + l)] = self.c[i][j][k][l];
                            }
                        }
                    }
                }
                m
            }
        }
    }

    pub fn min_eigenvalue(&self, subspace: Subspace) -> f64 {
        form_eigenvalues(self, subspace)
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_eigenvalue(&self, subspace: Subspace) -> f64 {
        form_eigenvalues(self, subspace)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

fn form_eigenvalues(t: &Tensor4, subspace: Subspace) -> Vec<f64> {
    let m = t.form_matrix(subspace);
    let symmetrized = (&m + m.transpose()) * 0.5;
    symmetrized.symmetric_eigen().eigenvalues.iter().copied().collect()
}

impl std::ops::Sub for Tensor4 {
    type Output = Tensor4;

    fn sub(self, rhs: Tensor4) -> Tensor4 {
        Tensor4::from_fn(|i, j, k, l| self.c[i][j][k][l] - rhs.c[i][j][k][l])
    }
}

impl std::ops::Mul<f64> for Tensor4 {
    type Output = Tensor4;

    fn mul(self, rhs: f64) -> Tensor4 {
        Tensor4::from_fn(|i, j, k, l| self.c[i][j][k][l] * rhs)
    }
}

/// Orthonormal basis of symmetric 3×3 matrices: three diagonal units followed
/// by the three normalized off-diagonal pairs (12, 13, 23).
fn symmetric_basis() -> [Matrix3<f64>; 6] {
    let mut basis = [Matrix3::zeros(); 6];
    for (d, b) in basis.iter_mut().take(3).enumerate() {
        b[(d, d)] = 1.0;
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let pairs = [(0, 1), (0, 2), (1, 2)];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        basis[3 + p][(i, j)] = s;
        basis[3 + p][(j, i)] = s;
    }
    basis
}

/// Stiffness tensor of the Saint Venant–Kirchhoff material,
/// `c_ijkl = λ δ_ij δ_kl + μ (δ_ik δ_jl + δ_il δ_jk)`.
#[derive(Debug, Clone)]
pub struct HookeTensor {
    params: LameParams,
    tensor: Tensor4,
}

impl HookeTensor {
    pub fn new(params: LameParams) -> Self {
        let LameParams { lambda, mu } = params;
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let tensor = Tensor4::from_fn(|i, j, k, l| {
            lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
        });
        Self { params, tensor }
    }

    pub fn params(&self) -> LameParams {
        self.params
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    /// Stress response `σ = λ tr(x) I + 2 μ sym(x)`.
    pub fn apply(&self, x: &Matrix3<f64>) -> Matrix3<f64> {
        let s = sym(x);
        Matrix3::identity() * (self.params.lambda * s.trace()) + s * (2.0 * self.params.mu)
    }

    pub fn compliance(&self) -> ComplianceTensor {
        ComplianceTensor::new(self.params)
    }
}

/// Inverse of the stiffness on symmetric matrices, extended to all matrices
/// through the symmetric part (it vanishes on antisymmetric input):
/// `c_ijkl = −λ/(2μ(3λ+2μ)) δ_ij δ_kl + 1/(4μ) (δ_ik δ_jl + δ_il δ_jk)`.
#[derive(Debug, Clone)]
pub struct ComplianceTensor {
    params: LameParams,
    tensor: Tensor4,
}

impl ComplianceTensor {
    pub fn new(params: LameParams) -> Self {
        let LameParams { lambda, mu } = params;
        let trace_coeff = -lambda / (2.0 * mu * params.trace_modulus());
        let shear_coeff = 1.0 / (4.0 * mu);
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let tensor = Tensor4::from_fn(|i, j, k, l| {
            trace_coeff * d(i, j) * d(k, l)
                + shear_coeff * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
        });
        Self { params, tensor }
    }

    pub fn params(&self) -> LameParams {
        self.params
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    /// Strain response `e = sym(t)/(2μ) − λ tr(t)/(2μ(3λ+2μ)) I`.
    pub fn apply(&self, t: &Matrix3<f64>) -> Matrix3<f64> {
        let LameParams { lambda, mu } = self.params;
        sym(t) * (1.0 / (2.0 * mu))
            - Matrix3::identity() * (lambda * t.trace() / (2.0 * mu * self.params.trace_modulus()))
    }

    /// Largest eigenvalue of the compliance as a form on symmetric matrices;
    /// equals 1/(2μ) whenever λ > 0.
    pub fn max_eigenvalue_symmetric(&self) -> f64 {
        self.tensor.max_eigenvalue(Subspace::Symmetric)
    }
}

/// Quadratic-form tensor `D/(2k) − H̄` whose positivity certifies that the
/// chosen stability constant `k` keeps the dual inner problem strongly
/// convex. `D` is the identity on all 3×3 matrices and `H̄` the compliance.
pub fn stability_tensor(k: f64, compliance: &ComplianceTensor) -> Tensor4 {
    Tensor4::identity_full() * (1.0 / (2.0 * k)) - *compliance.tensor()
}

/// Picks the stability constant `k = safety / (2 λ_max(H̄))` with the largest
/// compliance eigenvalue taken over symmetric matrices. `safety` must lie in
/// (0, 1) so that `D/(2k) − H̄` stays positive definite with margin.
pub fn select_stability_constant(params: &LameParams, safety: f64) -> Result<f64> {
    if !(safety.is_finite() && safety > 0.0 && safety < 1.0) {
        return Err(Error::InvalidParameter {
            name: "safety".into(),
            reason: format!("must lie in the open interval (0, 1), got {safety}"),
        });
    }
    let compliance = ComplianceTensor::new(*params);
    Ok(safety / (2.0 * compliance.max_eigenvalue_symmetric()))
}

/// Negative power `A^p` (p ∈ {−1, −2, −3}) of a symmetric positive definite
/// 3×3 matrix via its eigendecomposition, rejecting indefinite or
/// ill-conditioned input.
pub fn shifted_inverse_power(a: &Matrix3<f64>, power: i32, cond_cap: f64) -> Result<Matrix3<f64>> {
    if !(-3..=-1).contains(&power) {
        return Err(Error::InvalidParameter {
            name: "power".into(),
            reason: format!("supported exponents are -1, -2 and -3, got {power}"),
        });
    }
    let eig = sym(a).symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            context: "negative matrix power".into(),
            min_eig: min,
        });
    }
    let cond = max / min;
    if !cond.is_finite() || cond > cond_cap {
        return Err(Error::IllConditioned {
            context: "negative matrix power".into(),
            cond,
            cap: cond_cap,
        });
    }
    let mut out = Matrix3::zeros();
    for idx in 0..3 {
        let q = eig.eigenvectors.column(idx);
        out += q * q.transpose() * eig.eigenvalues[idx].powi(power);
    }
    Ok(out)
}

/// Symmetric part `(x + xᵀ)/2`.
pub fn sym(x: &Matrix3<f64>) -> Matrix3<f64> {
    (x + x.transpose()) * 0.5
}

/// Antisymmetric part `(x − xᵀ)/2`.
pub fn antisym(x: &Matrix3<f64>) -> Matrix3<f64> {
    (x - x.transpose()) * 0.5
}

/// Frobenius inner product `⟨a, b⟩ = Σ_ij a_ij b_ij`.
pub fn frobenius_inner(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Smallest eigenvalue of the symmetric part of a 3×3 matrix.
pub fn min_eig_sym3(x: &Matrix3<f64>) -> f64 {
    sym(x).symmetric_eigen().eigenvalues.min()
}
