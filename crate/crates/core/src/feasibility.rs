//! Membership tests, margins, and projections for every constraint set the
//! duality statement quantifies over: the spectral shift bound B₁ and the
//! entry box B₂ on z*, the gradient box C₁ on the primal side, the entry
//! boxes A₄ and the equilibrium equations A₂/A₃ on (Q, σ̃), plus sampled
//! necessary-condition tests for the two nonconstructive sets (the
//! biconjugate contact set C and the sup identity A₁).

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::conjugate::DualPoint;
use crate::error::{Error, Result};
use crate::grid::{
    apply_derivative_transpose, divergence, gradient, integrate_volume, DisplacementField, Grid,
    Loads, MatrixField,
};
use crate::primal::{ModelConfig, GRADIENT_BOX_BOUND};
use crate::tensor::{frobenius_inner, min_eig_sym3, sym};

/// Entry bound on z* as a multiple of K.
pub const Z_BOX_FACTOR: f64 = 1.0 / 8.0;
/// Entry bound on σ̃ as a multiple of K.
pub const SIGMA_BOX_FACTOR: f64 = 1.0 / 8.0;
/// Entry bound on Q as a multiple of K.
pub const FLUX_BOX_FACTOR: f64 = 3.0 / 32.0;

/// Outcome of a single membership test: signed distance to the constraint
/// boundary (positive = strictly inside) and the resulting verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetCheck {
    pub feasible: bool,
    pub margin: f64,
}

/// Spectral shift constraint on z*: at every node the smallest eigenvalue
/// of `sym(z* + σ̃) + K·I` must stay at or above `K/2`. The margin is the
/// global minimum of that eigenvalue gap; the set is closed, so a zero
/// margin still counts as feasible.
pub fn check_b1(z_star: &MatrixField, sigma_tilde: &MatrixField, k: f64) -> SetCheck {
    let mut margin = f64::INFINITY;
    for (z, s) in z_star.iter().zip(sigma_tilde.iter()) {
        let shifted = sym(&(z + s)) + Matrix3::identity() * (k / 2.0);
        margin = margin.min(min_eig_sym3(&shifted));
    }
    SetCheck {
        feasible: margin >= 0.0,
        margin,
    }
}

/// Strict componentwise box `|entries| < bound`; margin = bound − max|entry|.
pub fn check_box(field: &MatrixField, bound: f64) -> SetCheck {
    let max_entry = field.iter().map(|m| m.amax()).fold(0.0, f64::max);
    let margin = bound - max_entry;
    SetCheck {
        feasible: margin > 0.0,
        margin,
    }
}

/// Per-set strict box checks for whichever fields are supplied: the z* box,
/// the gradient box on ∇u, and the (σ̃, Q) boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxChecks {
    pub z_star: Option<SetCheck>,
    pub gradient: Option<SetCheck>,
    pub sigma_tilde: Option<SetCheck>,
    pub q: Option<SetCheck>,
}

pub fn check_box_sets(
    dual: Option<&DualPoint>,
    u: Option<&DisplacementField>,
    k: f64,
    grid: &Grid,
) -> BoxChecks {
    BoxChecks {
        z_star: dual.map(|dp| check_box(&dp.z_star, k * Z_BOX_FACTOR)),
        gradient: u.map(|u| check_box(&gradient(u, grid), GRADIENT_BOX_BOUND)),
        sigma_tilde: dual.map(|dp| check_box(&dp.sigma_tilde, k * SIGMA_BOX_FACTOR)),
        q: dual.map(|dp| check_box(&dp.q, k * FLUX_BOX_FACTOR)),
    }
}

/// Weighted L² residuals of the two equilibrium equations: the interior
/// balance `div(σ̃+Q) + f = 0` and the traction balance `(σ̃+Q)·n = f̂` on
/// the traction boundary (shared edge nodes counted once per face).
pub fn equilibrium_residuals(
    q: &MatrixField,
    sigma_tilde: &MatrixField,
    loads: &Loads,
    grid: &Grid,
) -> (f64, f64) {
    let combined = q + sigma_tilde;
    let div = divergence(&combined, grid);
    let mut interior = 0.0;
    for idx in 0..grid.node_count() {
        if grid.is_interior(idx) {
            interior += grid.volume_weight(idx) * (div[idx] + loads.body[idx]).norm_squared();
        }
    }
    let mut surface = 0.0;
    for face in grid.gamma1_faces() {
        let normal = face.normal();
        let traction = loads.traction(face).expect("validated loads");
        for (slot, fnode) in grid.face_nodes(face).iter().enumerate() {
            let flux = combined[fnode.node] * normal;
            surface += fnode.weight * (flux - traction[slot]).norm_squared();
        }
    }
    (interior.sqrt(), surface.sqrt())
}

/// Matrix-free constraint operator for the equilibrium equations: maps a
/// matrix field S to the stacked vector (div S at interior nodes, S·n at
/// traction-face nodes), plus its Euclidean adjoint.
struct EquilibriumOperator<'a> {
    grid: &'a Grid,
    interior: Vec<usize>,
    rows: usize,
}

impl<'a> EquilibriumOperator<'a> {
    fn new(grid: &'a Grid) -> Self {
        let interior: Vec<usize> = (0..grid.node_count())
            .filter(|&idx| grid.is_interior(idx))
            .collect();
        let face_rows: usize = grid
            .gamma1_faces()
            .iter()
            .map(|&f| {
                let (n1, n2) = grid.face_dims(f);
                n1 * n2
            })
            .sum();
        let rows = 3 * (interior.len() + face_rows);
        Self {
            grid,
            interior,
            rows,
        }
    }

    fn apply(&self, s: &MatrixField) -> Vec<f64> {
        let grid = self.grid;
        let div = divergence(s, grid);
        let mut out = Vec::with_capacity(self.rows);
        for &idx in &self.interior {
            let v = div[idx];
            out.extend_from_slice(&[v.x, v.y, v.z]);
        }
        for face in grid.gamma1_faces() {
            let normal = face.normal();
            for fnode in grid.face_nodes(face) {
                let v = s[fnode.node] * normal;
                out.extend_from_slice(&[v.x, v.y, v.z]);
            }
        }
        out
    }

    fn apply_transpose(&self, y: &[f64]) -> MatrixField {
        let grid = self.grid;
        let n = grid.node_count();
        // Divergence block: (div S)_m at interior nodes differentiates the
        // m-th row of S along every axis, so the adjoint scatters through
        // each axis derivative transpose.
        let mut scattered = MatrixField::zeros(grid);
        for axis in 0..3 {
            let mut per_axis = vec![0.0; 3 * n];
            for (row, &idx) in self.interior.iter().enumerate() {
                for m in 0..3 {
                    per_axis[m * n + idx] = y[3 * row + m];
                }
            }
            for m in 0..3 {
                let adj = apply_derivative_transpose(grid, axis, &per_axis[m * n..(m + 1) * n]);
                for idx in 0..n {
                    scattered[idx][(m, axis)] += adj[idx];
                }
            }
        }
        // Traction block: (S·n)_m picks the normal-axis column of row m
        // with the normal's sign.
        let mut offset = 3 * self.interior.len();
        for face in grid.gamma1_faces() {
            let axis = face.axis();
            let sign = if face.is_max_side() { 1.0 } else { -1.0 };
            for fnode in grid.face_nodes(face) {
                for m in 0..3 {
                    scattered[fnode.node][(m, axis)] += sign * y[offset + m];
                }
                offset += 3;
            }
        }
        scattered
    }

    fn rhs(&self, loads: &Loads) -> Vec<f64> {
        let grid = self.grid;
        let mut out = Vec::with_capacity(self.rows);
        for &idx in &self.interior {
            let v = -loads.body[idx];
            out.extend_from_slice(&[v.x, v.y, v.z]);
        }
        for face in grid.gamma1_faces() {
            let traction = loads.traction(face).expect("validated loads");
            for (slot, _) in grid.face_nodes(face).iter().enumerate() {
                let v = traction[slot];
                out.extend_from_slice(&[v.x, v.y, v.z]);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimal-Euclidean-norm correction of `S = σ̃ + Q` onto the equilibrium
/// equations, applied entirely to Q (σ̃ is returned untouched). Solves the
/// normal equations of the constraint operator by conjugate gradients;
/// already-feasible input comes back unchanged.
pub fn project_equilibrium(
    q: &MatrixField,
    sigma_tilde: &MatrixField,
    loads: &Loads,
    grid: &Grid,
) -> Result<(MatrixField, MatrixField)> {
    let op = EquilibriumOperator::new(grid);
    let combined = q + sigma_tilde;
    let rhs = op.rhs(loads);
    let mut residual: Vec<f64> = rhs
        .iter()
        .zip(op.apply(&combined))
        .map(|(r, l)| r - l)
        .collect();
    let scale = 1.0 + rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * scale;
    let r0_norm = dot(&residual, &residual).sqrt();
    if r0_norm <= tol {
        return Ok((q.clone(), sigma_tilde.clone()));
    }

    // Conjugate gradients on L·Lᵀ y = rhs − L·S; the correction Lᵀ y is then
    // the minimal-norm solution of L·ΔS = rhs − L·S.
    let mut y = vec![0.0; residual.len()];
    let mut p = residual.clone();
    let mut rr = dot(&residual, &residual);
    let cap = 10 * grid.node_count();
    let mut iterations = 0;
    while iterations < cap {
        iterations += 1;
        let ap = op.apply(&op.apply_transpose(&p));
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..y.len() {
            y[i] += alpha * p[i];
            residual[i] -= alpha * ap[i];
        }
        let rr_next = dot(&residual, &residual);
        if rr_next.sqrt() <= tol {
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..p.len() {
            p[i] = residual[i] + beta * p[i];
        }
    }
    let correction = op.apply_transpose(&y);
    let q_new = q + &correction;
    let (a2, a3) = equilibrium_residuals(&q_new, sigma_tilde, loads, grid);
    if a2 > 1e-10 * scale || a3 > 1e-10 * scale {
        return Err(Error::ProjectionFailed {
            residual: a2.max(a3),
            iterations,
        });
    }
    Ok((q_new, sigma_tilde.clone()))
}

/// Euclidean projection of one node's z* onto the closure of B₁∩B₂ by
/// alternating projections: clamp entries to the box, then lift the
/// eigenvalues of `sym(z*+σ̃)` back to ≥ −K/2 by correcting z*.
pub fn project_b_star_node(
    z: &Matrix3<f64>,
    sigma_tilde: &Matrix3<f64>,
    k: f64,
) -> Result<Matrix3<f64>> {
    let bound = k * Z_BOX_FACTOR;
    let floor = -k / 2.0;
    let mut current = *z;
    for _ in 0..100 {
        // Box part.
        current = current.map(|v| v.clamp(-bound, bound));
        // Spectral part: minimally shift the symmetric part.
        let s = sym(&(current + sigma_tilde));
        let eigen = nalgebra::SymmetricEigen::new(s);
        let mut shifted = Matrix3::zeros();
        let mut needed_shift = false;
        for (col, &lambda) in eigen.eigenvalues.iter().enumerate() {
            let clamped = if lambda < floor {
                needed_shift = true;
                floor
            } else {
                lambda
            };
            let v = eigen.eigenvectors.column(col);
            shifted += v * v.transpose() * clamped;
        }
        if needed_shift {
            current += shifted - s;
        }
        let box_ok = current.amax() <= bound + 1e-13 * (1.0 + bound);
        let spec_ok =
            min_eig_sym3(&sym(&(current + sigma_tilde))) >= floor - 1e-13 * (1.0 + k);
        if box_ok && spec_ok {
            return Ok(current);
        }
    }
    Err(Error::ConstraintViolation(
        "B* empty at node: alternating projections did not converge".into(),
    ))
}

/// Fieldwise projection onto the closure of B₁∩B₂; reports the first node
/// (index order) where the intersection appears empty.
pub fn project_b_star(
    z: &MatrixField,
    sigma_tilde: &MatrixField,
    k: f64,
    grid: &Grid,
) -> Result<MatrixField> {
    let mut out = MatrixField::zeros(grid);
    for idx in 0..grid.node_count() {
        out[idx] = project_b_star_node(&z[idx], &sigma_tilde[idx], k).map_err(|e| match e {
            Error::ConstraintViolation(_) => {
                let [i, j, kk] = grid.coords(idx);
                Error::ConstraintViolation(format!("B* empty at node ({i}, {j}, {kk})"))
            }
            other => other,
        })?;
    }
    Ok(out)
}

/// Sampling knobs for the heuristic set tests.
#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub nodes: usize,
    pub probes: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            nodes: 50,
            probes: 200,
            radius: 1.0,
            seed: 0,
        }
    }
}

/// Witness of a failed supporting-minorant probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityWitness {
    pub node: usize,
    /// Probe point, 6 symmetric strain-slot coordinates then 9 gradient-slot
    /// entries row-major.
    pub probe: Vec<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledCheck {
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Option<ConvexityWitness>,
}

fn density_and_gradient(
    v1: &Matrix3<f64>,
    v2: &Matrix3<f64>,
    cfg: &ModelConfig,
) -> (f64, Matrix3<f64>, Matrix3<f64>) {
    let k = cfg.k();
    let e = v1 + v2.transpose() * v2 * 0.5;
    let sigma_e = cfg.hooke().apply(&e);
    let value = 0.5 * frobenius_inner(&sigma_e, &e) + 0.5 * k * v2.norm_squared();
    let grad_v1 = sigma_e;
    let grad_v2 = v2 * sigma_e + v2 * k;
    (value, grad_v1, grad_v2)
}

/// Sampled necessary test for membership in the biconjugate contact set:
/// at randomly chosen nodes, the pointwise stored-energy density must admit
/// a supporting affine minorant at (sym ∇u, ∇u) against probes in a box of
/// the configured radius. Probes include targeted directions along the
/// eigenvectors of the local stress, which expose the known failure mode
/// (compressive stress exceeding the stabilization constant). This is a
/// heuristic necessary condition, not a proof of membership.
pub fn check_c_sampled(
    u: &DisplacementField,
    cfg: &ModelConfig,
    opts: &SampleOptions,
) -> SampledCheck {
    use rand::{Rng, SeedableRng};
    let grid = cfg.grid();
    let g = gradient(u, grid);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for _ in 0..opts.nodes {
        let node = rng.gen_range(0..grid.node_count());
        let v2_pt = g[node];
        let v1_pt = sym(&v2_pt);
        let (val_pt, p1, p2) = density_and_gradient(&v1_pt, &v2_pt, cfg);
        let tol = 1e-8 * (1.0 + val_pt.abs());
        let mut consider = |w1: Matrix3<f64>, w2: Matrix3<f64>| {
            let v1 = v1_pt + w1;
            let v2 = v2_pt + w2;
            let (val, _, _) = density_and_gradient(&v1, &v2, cfg);
            let minorant = val_pt + frobenius_inner(&p1, &w1) + frobenius_inner(&p2, &w2);
            let violation = minorant - val;
            if violation > tol && violation > worst {
                worst = violation;
                let mut probe = vec![
                    v1[(0, 0)],
                    v1[(1, 1)],
                    v1[(2, 2)],
                    v1[(0, 1)],
                    v1[(0, 2)],
                    v1[(1, 2)],
                ];
                probe.extend(v2.iter().copied());
                witness = Some(ConvexityWitness {
                    node,
                    probe,
                    violation,
                });
            }
        };
        // Targeted probes: gradient rows along each stress eigenvector,
        // with the strain slot cancelling the induced strain change.
        let sigma_pt = p1;
        let eigen = nalgebra::SymmetricEigen::new(sigma_pt);
        for col in 0..3 {
            let dir = eigen.eigenvectors.column(col).into_owned();
            for sign in [-1.0, 1.0] {
                for row in 0..3 {
                    let mut w2 = Matrix3::zeros();
                    w2.set_row(row, &(dir.transpose() * sign * opts.radius));
                    let w1 = -(sym(&(v2_pt.transpose() * w2)) + w2.transpose() * w2 * 0.5);
                    consider(w1, w2);
                }
            }
        }
        // Random probes in the box.
        for _ in 0..opts.probes {
            let w1 = sym(&Matrix3::from_fn(|_, _| {
                rng.gen_range(-opts.radius..opts.radius)
            }));
            let w2 = Matrix3::from_fn(|_, _| rng.gen_range(-opts.radius..opts.radius));
            consider(w1, w2);
        }
    }
    SampledCheck {
        pass: witness.is_none(),
        worst_violation: worst,
        witness,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationCheck {
    pub pass: bool,
    pub worst_deviation: f64,
}

/// Sampled test of the sup identity behind the stability split: for each
/// supplied displacement sample, maximize `⟨z, ∇u⟩ − F*(z)` over the
/// constraint set on z (the objective is an isotropic concave quadratic, so
/// the constrained maximizer is the Euclidean projection of K∇u) and
/// compare against `(K/2)∫|∇u|²`. Relative deviations above 10⁻⁶ fail.
pub fn check_a1_sampled(
    sigma_tilde: &MatrixField,
    cfg: &ModelConfig,
    u_samples: &[DisplacementField],
) -> Result<DeviationCheck> {
    let grid = cfg.grid();
    let k = cfg.k();
    let mut worst: f64 = 0.0;
    for u in u_samples {
        let g = gradient(u, grid);
        let mut pairing_values = vec![0.0; grid.node_count()];
        let mut target_values = vec![0.0; grid.node_count()];
        for idx in 0..grid.node_count() {
            let z = project_b_star_node(&(g[idx] * k), &sigma_tilde[idx], k)?;
            pairing_values[idx] =
                frobenius_inner(&z, &g[idx]) - z.norm_squared() / (2.0 * k);
            target_values[idx] = 0.5 * k * g[idx].norm_squared();
        }
        let sup = integrate_volume(grid, |idx| pairing_values[idx]);
        let target = integrate_volume(grid, |idx| target_values[idx]);
        let deviation = (sup - target).abs() / (1.0 + target.abs());
        worst = worst.max(deviation);
    }
    Ok(DeviationCheck {
        pass: worst < 1e-6,
        worst_deviation: worst,
    })
}

/// Feasibility verdict for a dual point: "verified" only when both
/// equilibrium equations hold to projection accuracy, the strict boxes have
/// positive margins, and the sampled sup identity passed on the supplied
/// displacement samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityLabel {
    Verified,
    Assumed,
}

/// Aggregated membership report for a dual point (optionally paired with a
/// primal displacement for the gradient-box and contact-set checks).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub in_b1: SetCheck,
    pub in_b2: SetCheck,
    pub in_c1: Option<SetCheck>,
    pub in_a4_sigma: SetCheck,
    pub in_a4_q: SetCheck,
    pub a2_residual: f64,
    pub a3_residual: f64,
    pub c_sampled: Option<SampledCheck>,
    pub a1_sampled: Option<DeviationCheck>,
    pub label: FeasibilityLabel,
}

pub fn feasibility_report(
    dp: &DualPoint,
    u: Option<&DisplacementField>,
    u_samples: &[DisplacementField],
    cfg: &ModelConfig,
    opts: &SampleOptions,
) -> Result<FeasibilityReport> {
    let grid = cfg.grid();
    let k = cfg.k();
    let in_b1 = check_b1(&dp.z_star, &dp.sigma_tilde, k);
    let boxes = check_box_sets(Some(dp), u, k, grid);
    let (a2_residual, a3_residual) =
        equilibrium_residuals(&dp.q, &dp.sigma_tilde, cfg.loads(), grid);
    let c_sampled = u.map(|u| check_c_sampled(u, cfg, opts));
    let a1_sampled = if u_samples.is_empty() {
        None
    } else {
        Some(check_a1_sampled(&dp.sigma_tilde, cfg, u_samples)?)
    };
    let in_a4_sigma = boxes.sigma_tilde.expect("dual supplied");
    let in_a4_q = boxes.q.expect("dual supplied");
    let load_scale = 1.0 + load_norms(cfg);
    let equilibrium_ok =
        a2_residual <= 1e-10 * load_scale && a3_residual <= 1e-10 * load_scale;
    let label = if equilibrium_ok
        && in_a4_sigma.feasible
        && in_a4_q.feasible
        && a1_sampled.as_ref().map(|c| c.pass).unwrap_or(false)
    {
        FeasibilityLabel::Verified
    } else {
        FeasibilityLabel::Assumed
    };
    Ok(FeasibilityReport {
        in_b1,
        in_b2: boxes.z_star.expect("dual supplied"),
        in_c1: boxes.gradient,
        in_a4_sigma,
        in_a4_q,
        a2_residual,
        a3_residual,
        c_sampled,
        a1_sampled,
        label,
    })
}

/// Combined weighted norm of the loads, used to scale residual tolerances.
pub fn load_norms(cfg: &ModelConfig) -> f64 {
    let grid = cfg.grid();
    let loads = cfg.loads();
    let body: Vec<f64> = loads.body.iter().map(|v| v.norm_squared()).collect();
    let body_norm = integrate_volume(grid, |idx| body[idx]).sqrt();
    let mut surface = 0.0;
    for face in grid.gamma1_faces() {
        let traction = loads.traction(face).expect("validated loads");
        for (slot, fnode) in grid.face_nodes(face).iter().enumerate() {
            surface += fnode.weight * traction[slot].norm_squared();
        }
    }
    body_norm + surface.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryTag;
    use crate::primal::Tolerances;
    use crate::tensor::LameParams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tags_one_pinned() -> [BoundaryTag; 6] {
        let mut tags = [BoundaryTag::Gamma1; 6];
        tags[0] = BoundaryTag::Gamma0;
        tags
    }

    fn cfg_with_loads(n: usize, loads: impl FnOnce(&Grid) -> Loads) -> ModelConfig {
        let grid = Grid::new([1.0, 1.0, 1.0], [n, n, n], tags_one_pinned()).unwrap();
        let loads = loads(&grid);
        ModelConfig::new(
            LameParams::new(1.0, 1.0).unwrap(),
            0.5,
            grid,
            loads,
            Tolerances::default(),
        )
        .unwrap()
    }

    fn unit_cfg(n: usize) -> ModelConfig {
        cfg_with_loads(n, Loads::zero)
    }

    #[test]
    fn b1_margins_match_eigenvalue_arithmetic() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = 0.5;
        let zeros = MatrixField::zeros(grid);
        let check = check_b1(&zeros, &zeros, k);
        assert!(check.feasible);
        assert_relative_eq!(check.margin, k / 2.0, epsilon = 1e-14);

        // Boundary case: sym part exactly −K/2·I gives zero margin, and the
        // closed set still reports feasible.
        let z = MatrixField::from_fn(grid, |_| Matrix3::identity() * (-k / 2.0));
        let check = check_b1(&z, &zeros, k);
        assert!(check.feasible);
        assert_abs_diff_eq!(check.margin, 0.0, epsilon = 1e-14);

        // All nine entries at K/8 on both fields: explicit eigenvalue check.
        let all = Matrix3::from_element(k / 8.0);
        let z = MatrixField::from_fn(grid, |_| all);
        let check = check_b1(&z, &z, k);
        let expected = min_eig_sym3(&(sym(&(all + all)) + Matrix3::identity() * (k / 2.0)));
        assert_relative_eq!(check.margin, expected, epsilon = 1e-14);
    }

    #[test]
    fn strict_boxes_report_signed_margins() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let dp = DualPoint::zeros(grid);
        let zero_u = DisplacementField::zeros(grid);
        let checks = check_box_sets(Some(&dp), Some(&zero_u), k, grid);
        assert_relative_eq!(checks.z_star.unwrap().margin, k / 8.0);
        assert_relative_eq!(checks.gradient.unwrap().margin, 0.125);
        assert_relative_eq!(checks.sigma_tilde.unwrap().margin, k / 8.0);
        assert_relative_eq!(checks.q.unwrap().margin, 3.0 * k / 32.0);

        // u = (x/4, 0, 0): gradient entry 0.25 exceeds the 1/8 box.
        let u = DisplacementField::from_fn(grid, |p| Vector3::new(p.x / 4.0, 0.0, 0.0));
        let grad_check = check_box_sets(None, Some(&u), k, grid).gradient.unwrap();
        assert!(!grad_check.feasible);
        assert_relative_eq!(grad_check.margin, -0.125, epsilon = 1e-12);

        // An entry exactly on the bound is infeasible under strictness.
        let mut q = MatrixField::zeros(grid);
        q[0][(1, 2)] = 3.0 * k / 32.0;
        let check = check_box(&q, 3.0 * k / 32.0);
        assert!(!check.feasible);
        assert_abs_diff_eq!(check.margin, 0.0);
    }

    #[test]
    fn box_margin_is_a_perturbation_radius() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = MatrixField::from_fn(grid, |_| {
                Matrix3::from_fn(|_, _| rng.gen_range(-0.05..0.05))
            });
            let check = check_box(&f, 0.125);
            assert!(check.feasible);
            let shift = rng.gen_range(0.0..check.margin * 0.999);
            let perturbed = MatrixField::from_fn(grid, |_| Matrix3::from_element(shift))
                .iter()
                .zip(f.iter())
                .map(|(d, v)| v + d)
                .collect::<Vec<_>>();
            let perturbed = MatrixField::from_vec(perturbed);
            assert!(check_box(&perturbed, 0.125).feasible);
        }
    }

    #[test]
    fn equilibrium_residuals_of_constant_fields() {
        let cfg = unit_cfg(5);
        let grid = cfg.grid();
        let zeros = MatrixField::zeros(grid);
        let (a2, a3) = equilibrium_residuals(&zeros, &zeros, cfg.loads(), grid);
        assert_abs_diff_eq!(a2, 0.0);
        assert_abs_diff_eq!(a3, 0.0);

        // Constant combined field: zero divergence, tractions |T·n| per face.
        let t = Matrix3::new(1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, 3.0);
        let q = MatrixField::from_fn(grid, |_| t);
        let (a2, a3) = equilibrium_residuals(&q, &zeros, cfg.loads(), grid);
        assert_abs_diff_eq!(a2, 0.0, epsilon = 1e-12);
        let mut expected = 0.0;
        for face in grid.gamma1_faces() {
            let flux = (t * face.normal()).norm_squared();
            for fnode in grid.face_nodes(face) {
                expected += fnode.weight * flux;
            }
        }
        assert_relative_eq!(a3, expected.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn projection_finds_particular_solution_for_body_load() {
        let cfg = cfg_with_loads(5, |grid| {
            Loads::from_fn(
                grid,
                |p| Vector3::new(p.x - 0.3, 0.1, p.y * 0.2),
                |_, _| Vector3::zeros(),
            )
        });
        let grid = cfg.grid();
        let zeros = MatrixField::zeros(grid);
        let (q, sigma) = project_equilibrium(&zeros, &zeros, cfg.loads(), grid).unwrap();
        assert_eq!(sigma, zeros);
        let scale = 1.0 + load_norms(&cfg);
        let (a2, a3) = equilibrium_residuals(&q, &sigma, cfg.loads(), grid);
        assert!(a2 <= 1e-10 * scale, "interior residual {a2}");
        assert!(a3 <= 1e-10 * scale, "traction residual {a3}");
    }

    #[test]
    fn projection_is_idempotent_and_keeps_feasible_input() {
        let cfg = cfg_with_loads(4, |grid| {
            Loads::from_fn(
                grid,
                |p| Vector3::new(0.2 * p.y, -0.1, 0.05 * p.x),
                |_, p| Vector3::new(0.02 * p.z, 0.0, -0.01),
            )
        });
        let grid = cfg.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q0 = MatrixField::from_fn(grid, |_| {
            Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1))
        });
        let sigma = MatrixField::from_fn(grid, |_| {
            sym(&Matrix3::from_fn(|_, _| rng.gen_range(-0.05..0.05)))
        });
        let (q1, _) = project_equilibrium(&q0, &sigma, cfg.loads(), grid).unwrap();
        let (q2, _) = project_equilibrium(&q1, &sigma, cfg.loads(), grid).unwrap();
        let drift = (&q2 - &q1).linf();
        assert!(drift <= 1e-10, "projection drifted by {drift}");
    }

    #[test]
    fn projection_correction_is_orthogonal_to_constraint_null_space() {
        let cfg = cfg_with_loads(4, |grid| {
            Loads::from_fn(
                grid,
                |p| Vector3::new(0.1 * p.x, 0.0, -0.2 * p.z),
                |_, _| Vector3::zeros(),
            )
        });
        let grid = cfg.grid();
        let zeros = MatrixField::zeros(grid);
        let (q, _) = project_equilibrium(&zeros, &zeros, cfg.loads(), grid).unwrap();
        // Project a random field onto the null space of the constraints and
        // test orthogonality of the correction against it.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = MatrixField::from_fn(grid, |_| {
            Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0))
        });
        let zero_loads = Loads::zero(grid);
        let (minus_w_projected, _) =
            project_equilibrium(&(&w * -1.0), &zeros, &zero_loads, grid).unwrap();
        // −w plus its correction satisfies the homogeneous constraints, so
        // its negation is a null-space element.
        let null_element = &minus_w_projected * -1.0;
        let inner: f64 = q
            .iter()
            .zip(null_element.iter())
            .map(|(a, b)| frobenius_inner(a, b))
            .sum();
        let scale = q.linf().max(1e-30) * null_element.linf().max(1e-30)
            * grid.node_count() as f64;
        assert!(
            inner.abs() <= 1e-8 * scale.max(1.0),
            "correction not orthogonal: {inner}"
        );
    }

    #[test]
    fn trivial_dual_point_is_feasible_for_zero_loads() {
        let cfg = unit_cfg(4);
        let grid = cfg.grid();
        let dp = DualPoint::zeros(grid);
        let report =
            feasibility_report(&dp, None, &[], &cfg, &SampleOptions::default()).unwrap();
        assert!(report.in_b1.feasible);
        assert!(report.in_b2.feasible);
        assert!(report.in_a4_sigma.feasible);
        assert!(report.in_a4_q.feasible);
        assert_abs_diff_eq!(report.a2_residual, 0.0);
        assert_abs_diff_eq!(report.a3_residual, 0.0);
        // No displacement samples supplied, so the sup identity is untested
        // and the label stays conservative.
        assert_eq!(report.label, FeasibilityLabel::Assumed);
    }

    #[test]
    fn b_star_projection_returns_feasible_points() {
        let k = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z = Matrix3::from_fn(|_, _| rng.gen_range(-0.4..0.4));
            let sigma = sym(&Matrix3::from_fn(|_, _| rng.gen_range(-0.05..0.05)));
            let p = project_b_star_node(&z, &sigma, k).unwrap();
            assert!(p.amax() <= k / 8.0 + 1e-12);
            assert!(min_eig_sym3(&(sym(&(p + sigma)) + Matrix3::identity() * k)) >= k / 2.0 - 1e-12);
            // Idempotency.
            let p2 = project_b_star_node(&p, &sigma, k).unwrap();
            assert!((p2 - p).amax() <= 1e-12);
        }
    }

    #[test]
    fn b_star_projection_detects_empty_intersection() {
        let k = 0.5;
        // sym(σ̃) far below −K/2 − 3·K/8 cannot be rescued by any boxed z.
        let sigma = Matrix3::identity() * (-10.0 * k);
        assert!(matches!(
            project_b_star_node(&Matrix3::zeros(), &sigma, k),
            Err(Error::ConstraintViolation(_))
        ));
    }

    #[test]
    fn scaled_gradients_stay_inside_z_box() {
        // z* = K∇u with u strictly inside the gradient box always lands
        // strictly inside the z* box.
        let cfg = unit_cfg(4);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let amp = rng.gen_range(0.01..0.12);
            let u = DisplacementField::from_fn(grid, |p| {
                Vector3::new(
                    amp * (p.x * p.y).sin(),
                    amp * (p.z - 0.4 * p.x),
                    amp * p.y * p.y / 2.0,
                )
            });
            let g = gradient(&u, grid);
            if !check_box(&g, GRADIENT_BOX_BOUND).feasible {
                continue;
            }
            let z = MatrixField::from_vec(g.iter().map(|m| m * k).collect());
            assert!(check_box(&z, k * Z_BOX_FACTOR).feasible);
        }
    }

    #[test]
    fn c_sampled_passes_at_origin_and_fails_under_compression() {
        let cfg = unit_cfg(4);
        let grid = cfg.grid();
        let zero_u = DisplacementField::zeros(grid);
        let check = check_c_sampled(&zero_u, &cfg, &SampleOptions::default());
        assert!(check.pass, "origin check failed: {check:?}");

        // Strong uniaxial compression drives the smallest stress eigenvalue
        // below −K, which the targeted probes expose.
        let u = DisplacementField::from_fn(grid, |p| Vector3::new(-0.5 * p.x, 0.0, 0.0));
        let check = check_c_sampled(&u, &cfg, &SampleOptions::default());
        assert!(!check.pass);
        let witness = check.witness.unwrap();
        assert!(witness.violation > 0.0);
        assert!(witness.node < grid.node_count());
    }

    #[test]
    fn a1_identity_holds_for_small_samples_and_breaks_under_sigma_push() {
        let cfg = unit_cfg(4);
        let grid = cfg.grid();
        let k = cfg.k();
        let u = DisplacementField::from_fn(grid, |p| {
            Vector3::new(0.03 * (p.y).sin(), 0.02 * p.x * p.z, -0.025 * p.x)
        });
        let sigma_small = MatrixField::from_fn(grid, |_| Matrix3::identity() * (k / 40.0));
        let check = check_a1_sampled(&sigma_small, &cfg, std::slice::from_ref(&u)).unwrap();
        assert!(
            check.pass,
            "deviation {} too large",
            check.worst_deviation
        );

        // σ̃ pulling the spectral floor just past −K/2 keeps the constraint
        // set nonempty but excludes z = K∇u, creating a measurable gap.
        let sigma_push = MatrixField::from_fn(grid, |_| Matrix3::identity() * (-0.55 * k));
        let check = check_a1_sampled(&sigma_push, &cfg, &[u]).unwrap();
        assert!(!check.pass);
        assert!(check.worst_deviation > 1e-6);
    }
}
