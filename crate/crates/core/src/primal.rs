//! Primal side of the model: geometrically nonlinear strain and stress,
//! the stored-energy functional J with its stability split, the exact
//! discrete gradient of J, a barrier-safeguarded descent solver over the
//! strict gradient box, and strong-form equilibrium residuals.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    apply_derivative_transpose, dirichlet_violation, face_local_flat, gradient, integrate_volume,
    DisplacementField, Grid, Loads, MatrixField,
};
use crate::tensor::{
    frobenius_inner, stability_tensor, ComplianceTensor, HookeTensor, LameParams, Subspace,
};

/// Strict componentwise bound on displacement-gradient entries (the set C₁).
pub const GRADIENT_BOX_BOUND: f64 = 0.125;

/// Iteration/tolerance knobs shared by the solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    /// Stop descent when the energy gradient's largest component is below.
    pub grad_tol: f64,
    /// Duality-gap magnitude regarded as numerically zero in reports.
    pub gap_tol: f64,
    /// Iteration budget per solver.
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            gap_tol: 1e-8,
            max_iters: 20_000,
        }
    }
}

/// Material, stability constant, grid, loads and tolerances bundled for the
/// solvers. Construction asserts positive definiteness of the stability form
/// `D/(2K) − H̄`, the standing hypothesis behind the dual functional.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    lame: LameParams,
    hooke: HookeTensor,
    compliance: ComplianceTensor,
    k: f64,
    grid: Grid,
    loads: Loads,
    tolerances: Tolerances,
}

impl ModelConfig {
    pub fn new(
        lame: LameParams,
        k: f64,
        grid: Grid,
        loads: Loads,
        tolerances: Tolerances,
    ) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter {
                name: "K".into(),
                reason: format!("must be finite and > 0, got {k}"),
            });
        }
        loads.validate(&grid)?;
        let hooke = HookeTensor::new(lame);
        let compliance = hooke.compliance();
        let margin = stability_tensor(k, &compliance).min_eigenvalue(Subspace::Full);
        if margin <= 0.0 {
            let max_k = 1.0 / (2.0 * compliance.max_eigenvalue_symmetric());
            return Err(Error::InvalidParameter {
                name: "K".into(),
                reason: format!(
                    "K violates stability condition; D/(2K) − H̄ has min eigenvalue \
                     {margin:.6e}; max admissible ≈ {max_k:.6e}"
                ),
            });
        }
        Ok(Self {
            lame,
            hooke,
            compliance,
            k,
            grid,
            loads,
            tolerances,
        })
    }

    pub fn lame(&self) -> LameParams {
        self.lame
    }

    pub fn hooke(&self) -> &HookeTensor {
        &self.hooke
    }

    pub fn compliance(&self) -> &ComplianceTensor {
        &self.compliance
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn loads(&self) -> &Loads {
        &self.loads
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    /// Smallest eigenvalue of the stability form `D/(2K) − H̄` (positive by
    /// construction).
    pub fn stability_margin(&self) -> f64 {
        stability_tensor(self.k, &self.compliance).min_eigenvalue(Subspace::Full)
    }

    /// Same config with different loads (shapes revalidated).
    pub fn with_loads(&self, loads: Loads) -> Result<Self> {
        loads.validate(&self.grid)?;
        let mut cfg = self.clone();
        cfg.loads = loads;
        Ok(cfg)
    }
}

/// Green–Saint Venant strain of a displacement gradient:
/// `e = ½(g + gᵀ + gᵀg)`; the quadratic term takes column inner products.
pub fn green_strain_at(g: &Matrix3<f64>) -> Matrix3<f64> {
    (g + g.transpose() + g.transpose() * g) * 0.5
}

/// Strain field of a displacement.
pub fn green_strain(u: &DisplacementField, grid: &Grid) -> MatrixField {
    let g = gradient(u, grid);
    MatrixField::from_vec(g.iter().map(green_strain_at).collect())
}

/// Stress field `σ = H(e(u))`; symmetric at every node.
pub fn stress(u: &DisplacementField, hooke: &HookeTensor, grid: &Grid) -> MatrixField {
    let g = gradient(u, grid);
    MatrixField::from_vec(g.iter().map(|gi| hooke.apply(&green_strain_at(gi))).collect())
}

/// Values of the stored energy, its stability split, the load work terms and
/// the total functional J.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// Stored elastic energy `½∫ H(e):e`.
    pub g: f64,
    /// Stability term `(K/2)∫ |∇u|²`.
    pub f_lambda2: f64,
    /// `g + f_lambda2`.
    pub g_k: f64,
    /// `∫ f·u`.
    pub load_work_volume: f64,
    /// `∫ f̂·u` over traction faces.
    pub load_work_surface: f64,
    /// `g − load_work_volume − load_work_surface`.
    pub j: f64,
}

fn require_admissible(u: &DisplacementField, grid: &Grid) -> Result<()> {
    let violation = dirichlet_violation(u, grid);
    if violation != 0.0 {
        return Err(Error::ConstraintViolation(format!(
            "displacement is nonzero on a pinned boundary node (max |u| = {violation:.3e})"
        )));
    }
    Ok(())
}

fn energy_from_gradient(
    u: &DisplacementField,
    g: &MatrixField,
    cfg: &ModelConfig,
) -> EnergyBreakdown {
    let grid = cfg.grid();
    let hooke = cfg.hooke();
    let stored: Vec<f64> = g
        .iter()
        .map(|gi| {
            let e = green_strain_at(gi);
            0.5 * frobenius_inner(&hooke.apply(&e), &e)
        })
        .collect();
    let g_val = integrate_volume(grid, |idx| stored[idx]);
    let f_lambda2 = 0.5 * cfg.k() * integrate_volume(grid, |idx| g[idx].norm_squared());
    let load_work_volume = integrate_volume(grid, |idx| cfg.loads().body[idx].dot(&u[idx]));
    let mut load_work_surface = 0.0;
    for face in grid.gamma1_faces() {
        let traction = cfg.loads().traction(face).expect("validated loads");
        for fnode in grid.face_nodes(face) {
            let local = face_local_flat(grid, face, fnode.a, fnode.b);
            load_work_surface += fnode.weight * traction[local].dot(&u[fnode.node]);
        }
    }
    EnergyBreakdown {
        g: g_val,
        f_lambda2,
        g_k: g_val + f_lambda2,
        load_work_volume,
        load_work_surface,
        j: g_val - load_work_volume - load_work_surface,
    }
}

/// Energy breakdown of an admissible displacement (zero on pinned faces).
pub fn energy(u: &DisplacementField, cfg: &ModelConfig) -> Result<EnergyBreakdown> {
    require_admissible(u, cfg.grid())?;
    let g = gradient(u, cfg.grid());
    Ok(energy_from_gradient(u, &g, cfg))
}

/// Adjoint of the displacement gradient under volume quadrature: returns
/// `Σ_i D_iᵀ (w ⊙ P_{·i})` rowwise, the discrete counterpart of `−div(w P)`
/// plus boundary terms. Building block for functional gradients and normal
/// equations.
pub fn gradient_adjoint_weighted(p: &MatrixField, grid: &Grid) -> DisplacementField {
    let count = grid.node_count();
    let mut data = vec![Vector3::zeros(); count];
    for m in 0..3 {
        for axis in 0..3 {
            let comp: Vec<f64> = (0..count)
                .map(|idx| grid.volume_weight(idx) * p[idx][(m, axis)])
                .collect();
            let scattered = apply_derivative_transpose(grid, axis, &comp);
            for (idx, value) in scattered.into_iter().enumerate() {
                data[idx][m] += value;
            }
        }
    }
    DisplacementField::from_vec(data)
}

fn grad_j_from_gradient(g: &MatrixField, cfg: &ModelConfig) -> DisplacementField {
    let grid = cfg.grid();
    let hooke = cfg.hooke();
    // dJ/dg at a node is P = (I + g)σ: the first Piola-type flux of the
    // stored energy density.
    let p = MatrixField::from_vec(
        g.iter()
            .map(|gi| {
                let sigma = hooke.apply(&green_strain_at(gi));
                sigma + gi * sigma
            })
            .collect(),
    );
    let mut grad = gradient_adjoint_weighted(&p, grid);
    for idx in 0..grid.node_count() {
        grad[idx] -= grid.volume_weight(idx) * cfg.loads().body[idx];
    }
    for face in grid.gamma1_faces() {
        let traction = cfg.loads().traction(face).expect("validated loads");
        for fnode in grid.face_nodes(face) {
            let local = face_local_flat(grid, face, fnode.a, fnode.b);
            grad[fnode.node] -= fnode.weight * traction[local];
        }
    }
    for idx in 0..grid.node_count() {
        if grid.is_dirichlet(idx) {
            grad[idx] = Vector3::zeros();
        }
    }
    grad
}

/// Exact gradient of the discrete functional `energy(·).j` with respect to
/// free node values; zero on pinned nodes.
pub fn grad_j(u: &DisplacementField, cfg: &ModelConfig) -> Result<DisplacementField> {
    require_admissible(u, cfg.grid())?;
    let g = gradient(u, cfg.grid());
    Ok(grad_j_from_gradient(&g, cfg))
}

/// Result of the primal descent.
#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub u: DisplacementField,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    /// L∞ norm of the energy gradient at the returned point.
    pub final_grad_norm: f64,
}

/// Strict-box margin of a gradient field: `1/8 − max |g_mi|`.
fn gradient_box_margin(g: &MatrixField) -> f64 {
    GRADIENT_BOX_BOUND - g.linf()
}

/// Log-barrier value for the strict gradient box, or None when infeasible.
fn barrier_value(g: &MatrixField, grid: &Grid, beta: f64) -> Option<f64> {
    if gradient_box_margin(g) <= 0.0 {
        return None;
    }
    if beta == 0.0 {
        return Some(0.0);
    }
    let density: Vec<f64> = g
        .iter()
        .map(|gi| {
            let mut acc = 0.0;
            for v in gi.iter() {
                acc -= (GRADIENT_BOX_BOUND - v).ln() + (GRADIENT_BOX_BOUND + v).ln();
            }
            acc
        })
        .collect();
    Some(beta * integrate_volume(grid, |idx| density[idx]))
}

/// Adds the barrier's contribution to the functional gradient.
fn add_barrier_gradient(
    grad: &mut DisplacementField,
    g: &MatrixField,
    grid: &Grid,
    beta: f64,
) {
    let p = MatrixField::from_vec(
        g.iter()
            .map(|gi| {
                Matrix3::from_fn(|m, i| {
                    let v = gi[(m, i)];
                    beta * (1.0 / (GRADIENT_BOX_BOUND - v) - 1.0 / (GRADIENT_BOX_BOUND + v))
                })
            })
            .collect(),
    );
    let extra = gradient_adjoint_weighted(&p, grid);
    for idx in 0..grid.node_count() {
        if !grid.is_dirichlet(idx) {
            grad[idx] += extra[idx];
        }
    }
}

const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_MAX_HALVINGS: usize = 60;

fn euclid_norm_sq(v: &DisplacementField) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum()
}

fn linf(v: &DisplacementField) -> f64 {
    v.linf()
}

/// Gradient descent with Armijo backtracking on J, safeguarded by a
/// decreasing log-barrier ladder that keeps every iterate strictly inside
/// the gradient box. Terminates when `|grad J|∞ < grad_tol` or the
/// iteration budget is exhausted.
pub fn solve_primal(cfg: &ModelConfig, u_init: &DisplacementField) -> Result<PrimalSolution> {
    let grid = cfg.grid();
    require_admissible(u_init, grid)?;
    let g0 = gradient(u_init, grid);
    if gradient_box_margin(&g0) <= 0.0 {
        return Err(Error::ConstraintViolation(format!(
            "u_init violates the strict gradient box (|∇u|∞ = {:.6e} ≥ {GRADIENT_BOX_BOUND})",
            g0.linf()
        )));
    }

    let mut u = u_init.clone();
    let mut g = g0;
    let mut total_iters = 0usize;
    let base = energy_from_gradient(&u, &g, cfg);
    let scale = 1.0 + base.j.abs();
    let mut stages: Vec<f64> = [1e-3, 1e-5, 1e-7, 1e-9, 1e-11]
        .iter()
        .map(|b| b * scale)
        .collect();
    stages.push(0.0);

    let grad_tol = cfg.tolerances().grad_tol;
    let max_iters = cfg.tolerances().max_iters;
    let mut final_grad_norm;

    'stages: for &beta in &stages {
        let stage_tol = if beta > 0.0 {
            grad_tol.max(beta)
        } else {
            grad_tol
        };
        loop {
            let mut grad = grad_j_from_gradient(&g, cfg);
            if beta > 0.0 {
                add_barrier_gradient(&mut grad, &g, grid, beta);
            }
            final_grad_norm = linf(&grad);
            if final_grad_norm < stage_tol {
                continue 'stages;
            }
            if total_iters >= max_iters {
                break 'stages;
            }
            let current = energy_from_gradient(&u, &g, cfg).j
                + barrier_value(&g, grid, beta).expect("iterate feasible");
            let slope = euclid_norm_sq(&grad);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=ARMIJO_MAX_HALVINGS {
                let trial = &u - &(&grad * t);
                let trial_g = gradient(&trial, grid);
                if let Some(barrier) = barrier_value(&trial_g, grid, beta) {
                    let value = energy_from_gradient(&trial, &trial_g, cfg).j + barrier;
                    if value <= current - ARMIJO_SLOPE * t * slope {
                        u = trial;
                        g = trial_g;
                        accepted = true;
                        break;
                    }
                }
                t *= ARMIJO_SHRINK;
            }
            if !accepted {
                return Err(Error::LineSearchFailed {
                    iteration: total_iters,
                    halvings: ARMIJO_MAX_HALVINGS,
                });
            }
            total_iters += 1;
        }
    }

    if gradient_box_margin(&g) <= 0.0 {
        return Err(Error::ConstraintViolation(
            "descent left the strict gradient box".into(),
        ));
    }
    let grad = grad_j_from_gradient(&g, cfg);
    Ok(PrimalSolution {
        energy: energy_from_gradient(&u, &g, cfg),
        final_grad_norm: linf(&grad),
        u,
        iterations: total_iters,
    })
}

/// Strong-form equilibrium defect of a displacement: weighted L² norms of
/// `div(σ + ∇u σ) + f` over interior nodes and of `(σ + ∇u σ)·n − f̂` over
/// traction faces.
pub fn bvp_residual(u: &DisplacementField, cfg: &ModelConfig) -> Result<(f64, f64)> {
    require_admissible(u, cfg.grid())?;
    let grid = cfg.grid();
    let g = gradient(u, grid);
    let p = MatrixField::from_vec(
        g.iter()
            .map(|gi| {
                let sigma = cfg.hooke().apply(&green_strain_at(gi));
                sigma + gi * sigma
            })
            .collect(),
    );
    let div_p = crate::grid::divergence(&p, grid);
    let mut interior_sq = 0.0;
    for idx in 0..grid.node_count() {
        if grid.is_interior(idx) {
            let r = div_p[idx] + cfg.loads().body[idx];
            interior_sq += grid.volume_weight(idx) * r.norm_squared();
        }
    }
    let mut traction_sq = 0.0;
    for face in grid.gamma1_faces() {
        let traction = cfg.loads().traction(face).expect("validated loads");
        let normal = face.normal();
        for fnode in grid.face_nodes(face) {
            let local = face_local_flat(grid, face, fnode.a, fnode.b);
            let r = p[fnode.node] * normal - traction[local];
            traction_sq += fnode.weight * r.norm_squared();
        }
    }
    Ok((interior_sq.sqrt(), traction_sq.sqrt()))
}
