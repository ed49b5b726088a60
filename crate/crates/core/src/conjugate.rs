//! Dual-side energy algebra: the quadratic conjugate F*, the closed-form
//! conjugate of the stabilized stored energy (G_K*), their combination J*,
//! a brute-force pointwise Legendre–Fenchel oracle for cross-checking the
//! closed forms, and the positive-definiteness report for the dual
//! functional's second variation in z*.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate_volume, Grid, MatrixField, ScalarField};
use crate::primal::ModelConfig;
use crate::tensor::{
    frobenius_inner, shifted_inverse_power, sym, ComplianceTensor, HookeTensor, Subspace,
    DEFAULT_COND_CAP,
};

/// The three dual fields: combined flux Q, stress-like σ̃ (symmetric), and
/// the stability multiplier z*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub q: MatrixField,
    pub sigma_tilde: MatrixField,
    pub z_star: MatrixField,
}

impl DualPoint {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            q: MatrixField::zeros(grid),
            sigma_tilde: MatrixField::zeros(grid),
            z_star: MatrixField::zeros(grid),
        }
    }

    /// Largest deviation of σ̃ from symmetry over all nodes.
    pub fn sigma_symmetry_defect(&self) -> f64 {
        self.sigma_tilde
            .iter()
            .map(|s| (s - s.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

/// Shifted matrix `A = sym(z* + σ̃) + K·I` whose positive definiteness makes
/// the conjugate closed form valid at a node.
pub fn shifted_matrix(z_star: &Matrix3<f64>, sigma_tilde: &Matrix3<f64>, k: f64) -> Matrix3<f64> {
    sym(&(z_star + sigma_tilde)) + Matrix3::identity() * k
}

/// Conjugate of the stability term: `(1/2K) ∫ |z*|²`.
pub fn f_star(z_star: &MatrixField, k: f64, grid: &Grid) -> f64 {
    let density: Vec<f64> = z_star.iter().map(|z| z.norm_squared()).collect();
    integrate_volume(grid, |idx| density[idx]) / (2.0 * k)
}

/// Pointwise closed-form conjugate density of the stabilized stored energy:
/// `½ Σ_m Q_m A⁻¹ Q_mᵀ + ½ ⟨H̄(sym s), sym s⟩` with `s = z* + σ̃`.
pub fn gk_star_node(
    q: &Matrix3<f64>,
    sigma_tilde: &Matrix3<f64>,
    z_star: &Matrix3<f64>,
    k: f64,
    compliance: &ComplianceTensor,
) -> Result<f64> {
    let a = shifted_matrix(z_star, sigma_tilde, k);
    let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
    let s = sym(&(z_star + sigma_tilde));
    let flux_term = 0.5 * (q * a_inv * q.transpose()).trace();
    let strain_term = 0.5 * frobenius_inner(&compliance.apply(&s), &s);
    Ok(flux_term + strain_term)
}

/// Closed-form conjugate of the stabilized stored energy, integrated over
/// the grid. Requires `A = sym(z*+σ̃) + K·I` positive definite at every
/// node; the first failing node (index order) is reported.
pub fn gk_star(dp: &DualPoint, cfg: &ModelConfig) -> Result<f64> {
    let grid = cfg.grid();
    let mut density = vec![0.0; grid.node_count()];
    for (idx, slot) in density.iter_mut().enumerate() {
        *slot = gk_star_node(
            &dp.q[idx],
            &dp.sigma_tilde[idx],
            &dp.z_star[idx],
            cfg.k(),
            cfg.compliance(),
        )
        .map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => {
                let [i, j, k] = grid.coords(idx);
                Error::ShiftedMatrixNotPd { i, j, k }
            }
            other => other,
        })?;
    }
    Ok(integrate_volume(grid, |idx| density[idx]))
}

/// Dual functional value `J* = F*(z*) − G_K*(Q, σ̃, z*)`.
pub fn j_star(dp: &DualPoint, cfg: &ModelConfig) -> Result<f64> {
    Ok(f_star(&dp.z_star, cfg.k(), cfg.grid()) - gk_star(dp, cfg)?)
}

/// Pointwise density of the stabilized stored energy as a function of the
/// symmetric strain slot v₁ and the gradient slot v₂:
/// `½⟨H(v₁ + ½v₂ᵀv₂), v₁ + ½v₂ᵀv₂⟩ + (K/2)|v₂|²`.
pub fn gk_density(
    v1: &Matrix3<f64>,
    v2: &Matrix3<f64>,
    hooke: &HookeTensor,
    k: f64,
) -> f64 {
    let e = v1 + v2.transpose() * v2 * 0.5;
    0.5 * frobenius_inner(&hooke.apply(&e), &e) + 0.5 * k * v2.norm_squared()
}

/// Stationary point of the conjugate pairing for the stabilized density:
/// `v₂ = Q A⁻¹` rowwise and `v₁ = H̄(sym s) − ½ v₂ᵀ v₂`.
pub fn gk_stationary_point(
    q: &Matrix3<f64>,
    sigma_tilde: &Matrix3<f64>,
    z_star: &Matrix3<f64>,
    k: f64,
    compliance: &ComplianceTensor,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let a = shifted_matrix(z_star, sigma_tilde, k);
    let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
    let v2 = q * a_inv;
    let s = sym(&(z_star + sigma_tilde));
    let v1 = compliance.apply(&s) - v2.transpose() * v2 * 0.5;
    Ok((v1, v2))
}

// ---------------------------------------------------------------------------
// Brute-force conjugate oracle
// ---------------------------------------------------------------------------

/// Knobs for the sampled Legendre–Fenchel maximization.
#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Half-width of the search box per coordinate.
    pub search_box: f64,
    /// Grid points per swept dimension (≥ 5).
    pub resolution: usize,
    /// Number of random 2-dimensional slices.
    pub slices: usize,
    /// Coordinate-ascent sweeps during refinement.
    pub refine_sweeps: usize,
    /// Seed for the slice directions.
    pub seed: u64,
    /// Point the slices pass through (e.g. an analytic stationary point);
    /// defaults to the best point found by the coarse scans.
    pub center: Option<[f64; 15]>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            search_box: 1.0,
            resolution: 5,
            slices: 20,
            refine_sweeps: 60,
            seed: 0,
            center: None,
        }
    }
}

/// v₁ is parametrized by 6 coordinates (3 diagonal entries, then the
/// off-diagonal values at (0,1), (0,2), (1,2) applied symmetrically);
/// v₂ by its 9 entries row-major.
fn coords_to_matrices(c: &[f64; 15]) -> (Matrix3<f64>, Matrix3<f64>) {
    let v1 = Matrix3::new(c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2]);
    let v2 = Matrix3::new(
        c[6], c[7], c[8], c[9], c[10], c[11], c[12], c[13], c[14],
    );
    (v1, v2)
}

fn linspace(half_width: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (count - 1) as f64)
        .collect()
}

/// Sampled lower bound on the pointwise conjugate
/// `sup_{v₁ sym, v₂} ⟨s₁, v₁⟩ + ⟨s₂, v₂⟩ − density(v₁, v₂)`:
/// greedy per-axis scan, random 2-dimensional slices through the center,
/// then coordinate ascent with shrinking steps. Errors if the maximizer
/// lands on the search-box boundary (the sup is then presumed unbounded).
pub fn conjugate_oracle(
    density: impl Fn(&Matrix3<f64>, &Matrix3<f64>) -> f64,
    s1: &Matrix3<f64>,
    s2: &Matrix3<f64>,
    opts: &OracleOptions,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};

    if opts.resolution < 5 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: format!("need at least 5 grid points per dimension, got {}", opts.resolution),
        });
    }
    let objective = |c: &[f64; 15]| {
        let (v1, v2) = coords_to_matrices(c);
        frobenius_inner(s1, &v1) + frobenius_inner(s2, &v2) - density(&v1, &v2)
    };
    let box_half = opts.search_box;
    let clamp = |c: f64| c.clamp(-box_half, box_half);

    let mut best = opts.center.unwrap_or([0.0; 15]);
    for coord in best.iter_mut() {
        *coord = clamp(*coord);
    }
    let mut best_value = objective(&best);

    // Greedy per-axis sweep at coarse resolution.
    let ticks = linspace(box_half, opts.resolution);
    for axis in 0..15 {
        let mut axis_best = best;
        let mut axis_value = best_value;
        for &t in &ticks {
            let mut candidate = best;
            candidate[axis] = t;
            let value = objective(&candidate);
            if value > axis_value {
                axis_value = value;
                axis_best = candidate;
            }
        }
        best = axis_best;
        best_value = axis_value;
    }

    // Random 2-dimensional slices through the center (or current best).
    let slice_center = opts.center.unwrap_or(best);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.slices {
        let mut d1 = [0.0; 15];
        let mut d2 = [0.0; 15];
        for v in d1.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in d2.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let n1 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n1 < 1e-12 {
            continue;
        }
        for v in d1.iter_mut() {
            *v /= n1;
        }
        let dot: f64 = d1.iter().zip(&d2).map(|(a, b)| a * b).sum();
        for (v, w) in d2.iter_mut().zip(&d1) {
            *v -= dot * w;
        }
        let n2 = d2.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n2 < 1e-12 {
            continue;
        }
        for v in d2.iter_mut() {
            *v /= n2;
        }
        for &t1 in &ticks {
            for &t2 in &ticks {
                let mut candidate = [0.0; 15];
                for i in 0..15 {
                    candidate[i] = clamp(slice_center[i] + t1 * d1[i] + t2 * d2[i]);
                }
                let value = objective(&candidate);
                if value > best_value {
                    best_value = value;
                    best = candidate;
                }
            }
        }
    }

    // Coordinate ascent with shrinking step.
    let mut step = 2.0 * box_half / (opts.resolution - 1) as f64;
    for _ in 0..opts.refine_sweeps {
        let mut improved = false;
        for axis in 0..15 {
            for sign in [-1.0, 1.0] {
                let mut candidate = best;
                candidate[axis] = clamp(candidate[axis] + sign * step);
                let value = objective(&candidate);
                if value > best_value {
                    best_value = value;
                    best = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }

    let boundary = box_half * (1.0 - 1e-6);
    if best.iter().any(|&c| c.abs() >= boundary) {
        return Err(Error::UnboundedSup);
    }
    Ok(best_value)
}

/// Full-product-grid conjugate for low-dimensional reduced densities:
/// `sup_v ⟨stars, v⟩ − density(v)` over `[−box, box]^n`, refined by
/// coordinate ascent. Intended for n ≤ 3.
pub fn conjugate_oracle_grid(
    density: impl Fn(&[f64]) -> f64,
    stars: &[f64],
    search_box: f64,
    resolution: usize,
    refine_sweeps: usize,
) -> Result<f64> {
    if resolution < 5 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: format!("need at least 5 grid points per dimension, got {resolution}"),
        });
    }
    let n = stars.len();
    let objective = |v: &[f64]| -> f64 {
        stars.iter().zip(v).map(|(s, x)| s * x).sum::<f64>() - density(v)
    };
    let ticks = linspace(search_box, resolution);
    let mut best = vec![0.0; n];
    let mut best_value = objective(&best);
    let total = resolution.pow(n as u32);
    for flat in 0..total {
        let mut rest = flat;
        let mut point = vec![0.0; n];
        for slot in point.iter_mut() {
            *slot = ticks[rest % resolution];
            rest /= resolution;
        }
        let value = objective(&point);
        if value > best_value {
            best_value = value;
            best = point;
        }
    }
    let mut step = 2.0 * search_box / (resolution - 1) as f64;
    for _ in 0..refine_sweeps {
        let mut improved = false;
        for axis in 0..n {
            for sign in [-1.0, 1.0] {
                let mut candidate = best.clone();
                candidate[axis] = (candidate[axis] + sign * step).clamp(-search_box, search_box);
                let value = objective(&candidate);
                if value > best_value {
                    best_value = value;
                    best = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    let boundary = search_box * (1.0 - 1e-6);
    if best.iter().any(|&c| c.abs() >= boundary) {
        return Err(Error::UnboundedSup);
    }
    Ok(best_value)
}

// ---------------------------------------------------------------------------
// Second variation in z*
// ---------------------------------------------------------------------------

/// Nodewise spectral report of the dual functional's second variation in z*.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianReport {
    /// Smallest eigenvalue of the per-node quadratic form.
    pub min_eig_field: ScalarField,
    /// Minimum over all nodes.
    pub global_min: f64,
    /// Reference bound: smallest eigenvalue of `D/(2K) − H̄`.
    pub lower_bound_m: f64,
}

/// Assembles, per node, the quadratic form `D/K − M₃ − H̄` in which `M₃` is
/// diagonal with entries `W_ij = (A⁻³)_ij (QᵀQ)_ij` (no sum), and reports
/// its smallest eigenvalue nodewise and globally, alongside the stability
/// bound `min eig(D/(2K) − H̄)` it is expected to dominate.
pub fn hessian_zz(dp: &DualPoint, cfg: &ModelConfig) -> Result<HessianReport> {
    let grid = cfg.grid();
    let k = cfg.k();
    let compliance_form = cfg.compliance().tensor().form_matrix(Subspace::Full);
    let mut min_eigs = vec![0.0; grid.node_count()];
    for (idx, slot) in min_eigs.iter_mut().enumerate() {
        let a = shifted_matrix(&dp.z_star[idx], &dp.sigma_tilde[idx], k);
        let a_pow3 = shifted_inverse_power(&a, -3, DEFAULT_COND_CAP).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => {
                let [i, j, kk] = grid.coords(idx);
                Error::ShiftedMatrixNotPd { i, j, k: kk }
            }
            other => other,
        })?;
        let q = &dp.q[idx];
        let qtq = q.transpose() * q;
        let mut form = DMatrix::zeros(9, 9);
        for i in 0..3 {
            for j in 0..3 {
                let flat = 3 * i + j;
                form[(flat, flat)] = 1.0 / k - a_pow3[(i, j)] * qtq[(i, j)];
            }
        }
        form -= &compliance_form;
        let symmetrized = (&form + form.transpose()) * 0.5;
        *slot = symmetrized
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
    }
    let global_min = min_eigs.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let lower_bound_m = crate::tensor::stability_tensor(k, cfg.compliance())
        .min_eigenvalue(Subspace::Full);
    Ok(HessianReport {
        min_eig_field: ScalarField::from_vec(min_eigs),
        global_min,
        lower_bound_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryTag, Loads};
    use crate::primal::Tolerances;
    use crate::tensor::LameParams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_pinned_face() -> [BoundaryTag; 6] {
        let mut tags = [BoundaryTag::Gamma1; 6];
        tags[0] = BoundaryTag::Gamma0;
        tags
    }

    fn unit_cfg(n: usize) -> ModelConfig {
        let grid = Grid::new([1.0, 1.0, 1.0], [n, n, n], one_pinned_face()).unwrap();
        let loads = Loads::zero(&grid);
        ModelConfig::new(
            LameParams::new(1.0, 1.0).unwrap(),
            0.5,
            grid,
            loads,
            Tolerances::default(),
        )
        .unwrap()
    }

    fn random_entries(rng: &mut ChaCha8Rng, bound: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.gen_range(-bound..bound))
    }

    #[test]
    fn f_star_constant_field_arithmetic() {
        let cfg = unit_cfg(5);
        let grid = cfg.grid();
        assert_abs_diff_eq!(f_star(&MatrixField::zeros(grid), 2.0, grid), 0.0);
        let z = MatrixField::from_fn(grid, |_| Matrix3::identity() * 0.2);
        // (1/2K)·vol·(3·0.04) with K = 2.
        assert_relative_eq!(f_star(&z, 2.0, grid), 0.03, epsilon = 1e-12);
    }

    #[test]
    fn f_star_matches_quadratic_conjugate_oracle() {
        let k = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..50 {
            let s2 = random_entries(&mut rng, 0.2);
            let oracle = conjugate_oracle(
                |_, v2| 0.5 * k * v2.norm_squared(),
                &Matrix3::zeros(),
                &s2,
                &OracleOptions {
                    seed: trial,
                    ..Default::default()
                },
            )
            .unwrap();
            let exact = s2.norm_squared() / (2.0 * k);
            assert!(
                (oracle - exact).abs() / (1.0 + exact.abs()) < 1e-4,
                "trial {trial}: oracle {oracle} exact {exact}"
            );
        }
    }

    #[test]
    fn quadratic_form_conjugate_matches_compliance() {
        let params = LameParams::new(1.0, 1.0).unwrap();
        let hooke = HookeTensor::new(params);
        let compliance = hooke.compliance();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let s1 = sym(&random_entries(&mut rng, 0.4));
            let oracle = conjugate_oracle(
                |v1, _| 0.5 * frobenius_inner(&hooke.apply(v1), v1),
                &s1,
                &Matrix3::zeros(),
                &OracleOptions {
                    seed: 1000 + trial,
                    ..Default::default()
                },
            )
            .unwrap();
            let exact = 0.5 * frobenius_inner(&compliance.apply(&s1), &s1);
            assert!(
                (oracle - exact).abs() / (1.0 + exact.abs()) < 1e-3,
                "trial {trial}: oracle {oracle} exact {exact}"
            );
        }
    }

    #[test]
    fn oracle_grid_mode_handles_reduced_densities() {
        // 1-dim: conjugate of x²/2 is s²/2.
        let value = conjugate_oracle_grid(|v| 0.5 * v[0] * v[0], &[0.3], 1.0, 9, 60).unwrap();
        assert_relative_eq!(value, 0.045, epsilon = 1e-6);
        // 3-dim diagonal quadratic.
        let value = conjugate_oracle_grid(
            |v| 0.5 * (v[0] * v[0] + 2.0 * v[1] * v[1] + 4.0 * v[2] * v[2]),
            &[0.2, 0.2, 0.2],
            1.0,
            7,
            60,
        )
        .unwrap();
        let exact = 0.5 * (0.04 + 0.04 / 2.0 + 0.04 / 4.0);
        assert_relative_eq!(value, exact, epsilon = 1e-6);
        // Linear density: sup sits on the boundary and must be flagged.
        assert!(matches!(
            conjugate_oracle_grid(|v| v[0], &[2.0], 1.0, 5, 60),
            Err(Error::UnboundedSup)
        ));
    }

    #[test]
    fn gk_star_examples() {
        let cfg = unit_cfg(5);
        let grid = cfg.grid();
        let dp = DualPoint::zeros(grid);
        assert_abs_diff_eq!(gk_star(&dp, &cfg).unwrap(), 0.0);
        assert_abs_diff_eq!(j_star(&dp, &cfg).unwrap(), 0.0);

        // Q = 0, s = I, λ = μ = 1: density ½⟨I/5, I⟩ = 0.3 per unit volume.
        let mut dp = DualPoint::zeros(grid);
        dp.sigma_tilde = MatrixField::from_fn(grid, |_| Matrix3::identity());
        assert_relative_eq!(gk_star(&dp, &cfg).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn gk_star_reports_first_indefinite_node() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let mut dp = DualPoint::zeros(grid);
        // Make A indefinite at a specific node: sym(s) = −K·I there.
        let bad = grid.index(1, 0, 2);
        let mut sigma = MatrixField::zeros(grid);
        sigma[bad] = Matrix3::identity() * (-2.0 * cfg.k());
        dp.sigma_tilde = sigma;
        match gk_star(&dp, &cfg) {
            Err(Error::ShiftedMatrixNotPd { i, j, k }) => {
                assert_eq!((i, j, k), (1, 0, 2));
            }
            other => panic!("expected PD failure, got {other:?}"),
        }
    }

    #[test]
    fn gk_closed_form_matches_oracle_on_feasible_samples() {
        let params = LameParams::new(1.0, 1.0).unwrap();
        let hooke = HookeTensor::new(params);
        let compliance = hooke.compliance();
        let k = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let z = random_entries(&mut rng, k / 8.0);
            let sigma = sym(&random_entries(&mut rng, k / 8.0));
            let q = random_entries(&mut rng, 3.0 * k / 32.0);
            let closed = gk_star_node(&q, &sigma, &z, k, &compliance).unwrap();
            let (v1, v2) = gk_stationary_point(&q, &sigma, &z, k, &compliance).unwrap();
            let center = [
                v1[(0, 0)],
                v1[(1, 1)],
                v1[(2, 2)],
                v1[(0, 1)],
                v1[(0, 2)],
                v1[(1, 2)],
                v2[(0, 0)],
                v2[(0, 1)],
                v2[(0, 2)],
                v2[(1, 0)],
                v2[(1, 1)],
                v2[(1, 2)],
                v2[(2, 0)],
                v2[(2, 1)],
                v2[(2, 2)],
            ];
            let oracle = conjugate_oracle(
                |a, b| gk_density(a, b, &hooke, k),
                &(z + sigma),
                &q,
                &OracleOptions {
                    seed: 2000 + trial,
                    center: Some(center),
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                (closed - oracle).abs() / (1.0 + closed.abs()) < 1e-3,
                "trial {trial}: closed {closed} oracle {oracle}"
            );
        }
    }

    #[test]
    fn fenchel_young_inequality_holds_for_closed_form() {
        let params = LameParams::new(1.0, 1.0).unwrap();
        let hooke = HookeTensor::new(params);
        let compliance = hooke.compliance();
        let k = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let z = random_entries(&mut rng, k / 8.0);
            let sigma = sym(&random_entries(&mut rng, k / 8.0));
            let q = random_entries(&mut rng, 3.0 * k / 32.0);
            let closed = gk_star_node(&q, &sigma, &z, k, &compliance).unwrap();
            let s1 = z + sigma;
            for _ in 0..50 {
                let v1 = sym(&random_entries(&mut rng, 1.0));
                let v2 = random_entries(&mut rng, 1.0);
                let pairing = frobenius_inner(&s1, &v1) + frobenius_inner(&q, &v2);
                let lhs = gk_density(&v1, &v2, &hooke, k) + closed;
                assert!(
                    lhs >= pairing - 1e-8,
                    "Fenchel–Young violated: {lhs} < {pairing}"
                );
            }
        }
    }

    #[test]
    fn hessian_at_origin_matches_spectral_arithmetic() {
        let cfg = unit_cfg(3);
        let dp = DualPoint::zeros(cfg.grid());
        let report = hessian_zz(&dp, &cfg).unwrap();
        // 1/K − λmax(H̄) = 2 − 0.5 with λ = μ = 1, K = 0.5.
        assert_relative_eq!(report.global_min, 1.5, epsilon = 1e-10);
        assert_relative_eq!(report.lower_bound_m, 0.5, epsilon = 1e-10);
        assert!(report.global_min >= report.lower_bound_m);
    }

    #[test]
    fn hessian_dominates_stability_bound_on_feasible_points() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let dp = DualPoint {
                q: MatrixField::from_fn(grid, |_| random_entries(&mut rng, 3.0 * k / 32.0)),
                sigma_tilde: MatrixField::from_fn(grid, |_| sym(&random_entries(&mut rng, k / 8.0))),
                z_star: MatrixField::from_fn(grid, |_| random_entries(&mut rng, k / 8.0)),
            };
            let report = hessian_zz(&dp, &cfg).unwrap();
            assert!(
                report.global_min >= report.lower_bound_m - 1e-8,
                "global min {} below bound {}",
                report.global_min,
                report.lower_bound_m
            );
            assert!(report.global_min > 0.0);
        }
    }

    #[test]
    fn j_star_is_convex_in_z_along_segments() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let base = DualPoint {
            q: MatrixField::from_fn(grid, |_| random_entries(&mut rng, 3.0 * k / 32.0)),
            sigma_tilde: MatrixField::from_fn(grid, |_| sym(&random_entries(&mut rng, k / 8.0))),
            z_star: MatrixField::zeros(grid),
        };
        for _ in 0..5 {
            let za = MatrixField::from_fn(grid, |_| random_entries(&mut rng, k / 8.0));
            let zb = MatrixField::from_fn(grid, |_| random_entries(&mut rng, k / 8.0));
            let eval = |z: MatrixField| {
                let mut dp = base.clone();
                dp.z_star = z;
                j_star(&dp, &cfg).unwrap()
            };
            let ja = eval(za.clone());
            let jb = eval(zb.clone());
            for &t in &[0.25, 0.5, 0.75] {
                let mix = &(&za * t) + &(&zb * (1.0 - t));
                let jmix = eval(mix);
                assert!(
                    jmix <= t * ja + (1.0 - t) * jb + 1e-8,
                    "convexity violated: {jmix} > {}",
                    t * ja + (1.0 - t) * jb
                );
            }
        }
    }
}
