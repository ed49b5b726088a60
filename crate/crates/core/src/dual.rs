//! Two-level dual optimization: an inner convex minimization over z*
//! (nodewise separable, projected gradient over the spectral-shift and box
//! constraints) and an outer concave-style ascent over (Q, σ̃) that keeps
//! the equilibrium equations exact by projection and the entry boxes intact
//! by rejecting violating trial steps.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::conjugate::{hessian_zz, j_star, shifted_matrix, DualPoint};
use crate::error::{Error, Result};
use crate::feasibility::{
    check_box, feasibility_report, project_b_star, project_b_star_node, project_equilibrium,
    FeasibilityReport, SampleOptions, FLUX_BOX_FACTOR, SIGMA_BOX_FACTOR,
};
use crate::grid::MatrixField;
use crate::primal::ModelConfig;
use crate::tensor::{shifted_inverse_power, sym, DEFAULT_COND_CAP};

/// Relative improvement below which an accepted ascent step counts as stalled.
const ASCENT_IMPROVEMENT_TOL: f64 = 1e-8;
/// Consecutive stalled accepted steps that trigger convergence.
const ASCENT_STALL_WINDOW: usize = 10;
/// Step halvings per outer iteration before giving up on the direction.
const ASCENT_MAX_HALVINGS: usize = 60;

/// Why the outer ascent stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    StepUnderflow,
    MaxIters,
}

/// One accepted point of the ascent history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub j_tilde_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolveResult {
    pub dual_point: DualPoint,
    pub j_tilde_star: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub feasibility: FeasibilityReport,
    pub ascent_trace: Vec<TracePoint>,
    pub stop_reason: StopReason,
}

/// Inner minimizer over z* together with the attained dual value.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub z_star: MatrixField,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative of the inner objective's node density
/// `|z|²/2K − (½ tr(Q A⁻¹ Qᵀ) + ½⟨H̄(sym s), sym s⟩)` with respect to the
/// z* entries, where `qtq = QᵀQ` is precomputed by the caller.
pub fn inner_node_gradient(
    z: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
    qtq: &Matrix3<f64>,
    k: f64,
    cfg: &ModelConfig,
) -> Result<Matrix3<f64>> {
    let a = shifted_matrix(z, sigma, k);
    let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
    let v = a_inv * qtq * a_inv;
    let s = sym(&(z + sigma));
    Ok(z / k + v * 0.5 - cfg.compliance().apply(&s))
}

/// Minimizes the dual functional over z* for fixed (Q, σ̃) by nodewise
/// projected gradient descent on the constraint set (spectral shift ∩ entry
/// box). The per-node objective is strongly convex whenever the second
/// variation report is positive, which is verified at the initial point and
/// at the returned minimizer; a non-positive report aborts the solve.
pub fn inner_min_z(
    q: &MatrixField,
    sigma_tilde: &MatrixField,
    cfg: &ModelConfig,
    z_init: &MatrixField,
) -> Result<InnerSolution> {
    let grid = cfg.grid();
    let k = cfg.k();
    let mu = cfg.lame().mu;
    let tol = cfg.tolerances().grad_tol;
    let max_iters = cfg.tolerances().max_iters;

    let mut z = project_b_star(z_init, sigma_tilde, k, grid)?;
    let hessian_gate = |z_field: &MatrixField| -> Result<()> {
        let probe = DualPoint {
            q: q.clone(),
            sigma_tilde: sigma_tilde.clone(),
            z_star: z_field.clone(),
        };
        let report = hessian_zz(&probe, cfg)?;
        if report.global_min <= 0.0 {
            return Err(Error::NonConvergence(format!(
                "Hessian check failed: second variation in z* has min eigenvalue {}",
                report.global_min
            )));
        }
        Ok(())
    };
    hessian_gate(&z)?;

    // Per-node gradient Lipschitz bound: 1/K from the quadratic, the
    // clamped-spectrum bound (2/K)³|Q|² from the flux term, 1/(2μ) from the
    // compliance.
    let steps: Vec<f64> = (0..grid.node_count())
        .map(|idx| {
            let l = 1.0 / k + (2.0 / k).powi(3) * q[idx].norm_squared() + 1.0 / (2.0 * mu);
            1.0 / l
        })
        .collect();
    let qtq: Vec<Matrix3<f64>> = (0..grid.node_count())
        .map(|idx| q[idx].transpose() * q[idx])
        .collect();

    let mut iterations = 0;
    loop {
        let mut pgrad_sq = 0.0;
        for idx in 0..grid.node_count() {
            let grad = inner_node_gradient(&z[idx], &sigma_tilde[idx], &qtq[idx], k, cfg)?;
            let stepped = z[idx] - grad * steps[idx];
            let projected = project_b_star_node(&stepped, &sigma_tilde[idx], k)?;
            let pgrad = (z[idx] - projected) / steps[idx];
            pgrad_sq += pgrad.norm_squared();
            z[idx] = projected;
        }
        iterations += 1;
        if pgrad_sq.sqrt() < tol {
            break;
        }
        if iterations >= max_iters {
            return Err(Error::NonConvergence(format!(
                "inner z* minimization: projected-gradient norm {} after {} iterations",
                pgrad_sq.sqrt(),
                iterations
            )));
        }
    }
    hessian_gate(&z)?;

    let dp = DualPoint {
        q: q.clone(),
        sigma_tilde: sigma_tilde.clone(),
        z_star: z,
    };
    let value = j_star(&dp, cfg)?;
    Ok(InnerSolution {
        z_star: dp.z_star,
        value,
        iterations,
    })
}

/// Partial gradient of the dual functional in (Q, σ̃) at fixed z*; by the
/// envelope theorem this is a supergradient of the inner-minimized value
/// when evaluated at the inner minimizer. Quadrature weights are included,
/// and the σ̃ component is symmetric.
pub fn envelope_supergradient(
    q: &MatrixField,
    sigma_tilde: &MatrixField,
    z_star: &MatrixField,
    cfg: &ModelConfig,
) -> Result<(MatrixField, MatrixField)> {
    let grid = cfg.grid();
    let k = cfg.k();
    let mut dq = MatrixField::zeros(grid);
    let mut dsigma = MatrixField::zeros(grid);
    for idx in 0..grid.node_count() {
        let w = grid.volume_weight(idx);
        let a = shifted_matrix(&z_star[idx], &sigma_tilde[idx], k);
        let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
        let s = sym(&(z_star[idx] + sigma_tilde[idx]));
        let v = a_inv * (q[idx].transpose() * q[idx]) * a_inv;
        dq[idx] = -q[idx] * a_inv * w;
        dsigma[idx] = (v * 0.5 - cfg.compliance().apply(&s)) * w;
    }
    Ok((dq, dsigma))
}

fn dual_box_margins_ok(dp: &DualPoint, k: f64) -> bool {
    check_box(&dp.sigma_tilde, k * SIGMA_BOX_FACTOR).feasible
        && check_box(&dp.q, k * FLUX_BOX_FACTOR).feasible
}

/// Supergradient ascent on the inner-minimized dual value over the
/// equilibrium-and-box feasible set. Trial steps are re-projected onto the
/// equilibrium equations; a projected trial that leaves the strict entry
/// boxes is rejected and the step halved, so accepted iterates are always
/// exactly equilibrated and strictly inside the boxes. Only value-increasing
/// steps are accepted, making the recorded trace non-decreasing.
pub fn outer_ascent(cfg: &ModelConfig, dual_init: &DualPoint) -> Result<DualSolveResult> {
    let grid = cfg.grid();
    let k = cfg.k();
    let max_iters = cfg.tolerances().max_iters;

    let mut current = dual_init.clone();
    let inner = inner_min_z(&current.q, &current.sigma_tilde, cfg, &current.z_star)?;
    current.z_star = inner.z_star;
    let mut value = inner.value;
    let mut inner_iterations = inner.iterations;

    let mut trace = vec![TracePoint {
        iteration: 0,
        j_tilde_star: value,
    }];
    let mut step = 1.0;
    let mut stalled = 0;
    let mut outer_iterations = 0;
    let mut stop_reason = StopReason::MaxIters;

    while outer_iterations < max_iters {
        outer_iterations += 1;
        let (dq, dsigma) =
            envelope_supergradient(&current.q, &current.sigma_tilde, &current.z_star, cfg)?;
        let direction_norm = (dq
            .iter()
            .map(|m| m.norm_squared())
            .chain(dsigma.iter().map(|m| m.norm_squared()))
            .sum::<f64>())
        .sqrt();
        if direction_norm < cfg.tolerances().grad_tol {
            stop_reason = StopReason::Converged;
            break;
        }

        let mut accepted = false;
        let mut t = step;
        for _ in 0..ASCENT_MAX_HALVINGS {
            let trial_q_raw = &current.q + &(&dq * t);
            let trial_sigma = &current.sigma_tilde + &(&dsigma * t);
            let (trial_q, trial_sigma) =
                project_equilibrium(&trial_q_raw, &trial_sigma, cfg.loads(), grid)?;
            let trial = DualPoint {
                q: trial_q,
                sigma_tilde: trial_sigma,
                z_star: current.z_star.clone(),
            };
            if !dual_box_margins_ok(&trial, k) {
                t *= 0.5;
                continue;
            }
            let inner = inner_min_z(&trial.q, &trial.sigma_tilde, cfg, &trial.z_star)?;
            inner_iterations += inner.iterations;
            if inner.value > value {
                let improvement = inner.value - value;
                current = DualPoint {
                    z_star: inner.z_star,
                    ..trial
                };
                let stalled_step =
                    improvement <= ASCENT_IMPROVEMENT_TOL * (1.0 + inner.value.abs());
                value = inner.value;
                trace.push(TracePoint {
                    iteration: outer_iterations,
                    j_tilde_star: value,
                });
                stalled = if stalled_step { stalled + 1 } else { 0 };
                step = (t * 2.0).min(1e3);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            stop_reason = StopReason::StepUnderflow;
            break;
        }
        if stalled >= ASCENT_STALL_WINDOW {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let feasibility = feasibility_report(&current, None, &[], cfg, &SampleOptions::default())?;
    Ok(DualSolveResult {
        dual_point: current,
        j_tilde_star: value,
        inner_iterations,
        outer_iterations,
        feasibility,
        ascent_trace: trace,
        stop_reason,
    })
}

/// Full dual solve: projects the initial point (default all-zero fields)
/// onto the equilibrium equations, validates the strict boxes and σ̃
/// symmetry, then runs the outer ascent.
pub fn solve_dual(cfg: &ModelConfig, init: Option<&DualPoint>) -> Result<DualSolveResult> {
    let grid = cfg.grid();
    let k = cfg.k();
    let base = match init {
        Some(dp) => dp.clone(),
        None => DualPoint::zeros(grid),
    };
    if base.sigma_symmetry_defect() > 1e-12 {
        return Err(Error::ConstraintViolation(format!(
            "sigma_tilde must be symmetric; max asymmetry {}",
            base.sigma_symmetry_defect()
        )));
    }
    let (q, sigma_tilde) = project_equilibrium(&base.q, &base.sigma_tilde, cfg.loads(), grid)?;
    let mut projected = DualPoint {
        q,
        sigma_tilde,
        z_star: base.z_star,
    };
    if init.is_none() {
        // The minimal-norm equilibrium correction lands entirely in Q, which
        // can crowd its entry box even when the combined stress is modest.
        // Equilibrium constrains only the sum σ̃ + Q, so move the symmetric
        // part of the sum into σ̃ (clamped safely inside its own box) and
        // leave the remainder in Q.
        let cap = 0.9 * k * SIGMA_BOX_FACTOR;
        let sigma: Vec<Matrix3<f64>> = (0..grid.node_count())
            .map(|i| {
                sym(&(projected.sigma_tilde[i] + projected.q[i])).map(|v| v.clamp(-cap, cap))
            })
            .collect();
        let q: Vec<Matrix3<f64>> = (0..grid.node_count())
            .map(|i| projected.sigma_tilde[i] + projected.q[i] - sigma[i])
            .collect();
        projected.sigma_tilde = MatrixField::from_vec(sigma);
        projected.q = MatrixField::from_vec(q);
    }
    if !check_box(&projected.sigma_tilde, k * SIGMA_BOX_FACTOR).feasible {
        return Err(Error::ConstraintViolation(
            "initial sigma_tilde leaves the strict entry box after projection".into(),
        ));
    }
    if !check_box(&projected.q, k * FLUX_BOX_FACTOR).feasible {
        return Err(Error::ConstraintViolation(
            "initial Q leaves the strict entry box after projection".into(),
        ));
    }
    outer_ascent(cfg, &projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryTag, DisplacementField, Grid, Loads};
    use crate::primal::{energy, green_strain_at, Tolerances};
    use crate::tensor::{frobenius_inner, LameParams};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tags_one_pinned() -> [BoundaryTag; 6] {
        let mut tags = [BoundaryTag::Gamma1; 6];
        tags[0] = BoundaryTag::Gamma0;
        tags
    }

    fn unit_cfg(n: usize) -> ModelConfig {
        let grid = Grid::new([1.0, 1.0, 1.0], [n, n, n], tags_one_pinned()).unwrap();
        ModelConfig::new(
            LameParams::new(1.0, 1.0).unwrap(),
            0.5,
            grid.clone(),
            Loads::zero(&grid),
            Tolerances::default(),
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, bound: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.gen_range(-bound..bound))
    }

    #[test]
    fn inner_minimizer_at_origin_is_zero() {
        let cfg = unit_cfg(4);
        let grid = cfg.grid();
        let zeros = MatrixField::zeros(grid);
        let sol = inner_min_z(&zeros, &zeros, &cfg, &zeros).unwrap();
        assert!(sol.z_star.linf() < 1e-9);
        assert_abs_diff_eq!(sol.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inner_minimizer_is_independent_of_init() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = MatrixField::from_fn(grid, |_| random_matrix(&mut rng, 3.0 * k / 32.0));
        let sigma = MatrixField::from_fn(grid, |_| sym(&random_matrix(&mut rng, k / 8.0)));
        let init_a = MatrixField::zeros(grid);
        let init_b = MatrixField::from_fn(grid, |_| random_matrix(&mut rng, k / 8.0));
        let sol_a = inner_min_z(&q, &sigma, &cfg, &init_a).unwrap();
        let sol_b = inner_min_z(&q, &sigma, &cfg, &init_b).unwrap();
        let drift = (&sol_a.z_star - &sol_b.z_star).linf();
        assert!(drift <= 10.0 * cfg.tolerances().grad_tol, "drift {drift}");
        assert_relative_eq!(sol_a.value, sol_b.value, epsilon = 1e-10);
    }

    #[test]
    fn inner_recovers_scaled_gradient_at_constructed_point() {
        // For a constant symmetric gradient g with σ̃ = σ − Kg and
        // Q = g(σ + K·I), the stationarity system is solved by z = Kg.
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let g = Matrix3::new(
            0.02, 0.005, 0.0, 0.005, -0.015, 0.01, 0.0, 0.01, 0.008,
        );
        let e = green_strain_at(&g);
        let sigma_full = cfg.hooke().apply(&e);
        let sigma_t = sigma_full - g * k;
        let q_node = g * (sigma_full + Matrix3::identity() * k);
        let q = MatrixField::from_fn(grid, |_| q_node);
        let sigma = MatrixField::from_fn(grid, |_| sigma_t);
        let sol = inner_min_z(&q, &sigma, &cfg, &MatrixField::zeros(grid)).unwrap();
        let expected = g * k;
        for z in sol.z_star.iter() {
            assert!((z - expected).amax() < 1e-6, "z {z} expected {expected}");
        }
    }

    #[test]
    fn inner_rejects_flux_outside_certified_region() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let q = MatrixField::from_fn(grid, |_| Matrix3::from_element(1.0));
        let zeros = MatrixField::zeros(grid);
        match inner_min_z(&q, &zeros, &cfg, &zeros) {
            Err(Error::NonConvergence(msg)) => {
                assert!(msg.contains("Hessian check failed"), "{msg}");
            }
            other => panic!("expected Hessian gate failure, got {other:?}"),
        }
    }

    #[test]
    fn inner_solution_is_optimal_against_feasible_perturbations() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let q = MatrixField::from_fn(grid, |_| random_matrix(&mut rng, 3.0 * k / 32.0));
        let sigma = MatrixField::from_fn(grid, |_| sym(&random_matrix(&mut rng, k / 16.0)));
        let sol = inner_min_z(&q, &sigma, &cfg, &MatrixField::zeros(grid)).unwrap();
        for _ in 0..20 {
            let perturbed = MatrixField::from_vec(
                sol.z_star
                    .iter()
                    .map(|z| z + random_matrix(&mut rng, k / 64.0))
                    .collect(),
            );
            let feasible = project_b_star(&perturbed, &sigma, k, grid).unwrap();
            let probe = DualPoint {
                q: q.clone(),
                sigma_tilde: sigma.clone(),
                z_star: feasible,
            };
            let value = j_star(&probe, &cfg).unwrap();
            assert!(
                value >= sol.value - 1e-8,
                "perturbation undercut the minimum: {value} < {}",
                sol.value
            );
        }
    }

    #[test]
    fn envelope_supergradient_matches_finite_differences() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        // Feasible base point: random boxed fields projected to equilibrium
        // (zero loads keep the projected fields small).
        let q0 = MatrixField::from_fn(grid, |_| random_matrix(&mut rng, k / 16.0));
        let sigma0 = MatrixField::from_fn(grid, |_| sym(&random_matrix(&mut rng, k / 32.0)));
        let (q0, sigma0) = project_equilibrium(&q0, &sigma0, cfg.loads(), grid).unwrap();
        assert!(dual_box_margins_ok(
            &DualPoint {
                q: q0.clone(),
                sigma_tilde: sigma0.clone(),
                z_star: MatrixField::zeros(grid)
            },
            k
        ));

        let j_tilde = |q: &MatrixField, sigma: &MatrixField| -> f64 {
            inner_min_z(q, sigma, &cfg, &MatrixField::zeros(grid))
                .unwrap()
                .value
        };
        let sol = inner_min_z(&q0, &sigma0, &cfg, &MatrixField::zeros(grid)).unwrap();
        let (dq, dsigma) = envelope_supergradient(&q0, &sigma0, &sol.z_star, &cfg).unwrap();

        // Equilibrium-preserving direction: correct a random perturbation
        // back onto the homogeneous constraints.
        let raw_dq = MatrixField::from_fn(grid, |_| random_matrix(&mut rng, 1.0));
        let dsigma_dir = MatrixField::from_fn(grid, |_| sym(&random_matrix(&mut rng, 1.0)));
        let zero_loads = Loads::zero(grid);
        let (dq_dir, dsigma_dir) =
            project_equilibrium(&raw_dq, &dsigma_dir, &zero_loads, grid).unwrap();

        let predicted: f64 = dq
            .iter()
            .zip(dq_dir.iter())
            .map(|(a, b)| frobenius_inner(a, b))
            .sum::<f64>()
            + dsigma
                .iter()
                .zip(dsigma_dir.iter())
                .map(|(a, b)| frobenius_inner(a, b))
                .sum::<f64>();
        let eps = 1e-6;
        let plus = j_tilde(
            &(&q0 + &(&dq_dir * eps)),
            &(&sigma0 + &(&dsigma_dir * eps)),
        );
        let minus = j_tilde(
            &(&q0 + &(&dq_dir * -eps)),
            &(&sigma0 + &(&dsigma_dir * -eps)),
        );
        let fd = (plus - minus) / (2.0 * eps);
        assert!(
            (fd - predicted).abs() <= 1e-4 * (1.0 + predicted.abs()),
            "fd {fd} predicted {predicted}"
        );
    }

    #[test]
    fn zero_load_solve_stays_at_origin() {
        let cfg = unit_cfg(4);
        let result = solve_dual(&cfg, None).unwrap();
        assert_abs_diff_eq!(result.j_tilde_star, 0.0, epsilon = 1e-12);
        assert!(result.dual_point.q.linf() < 1e-12);
        assert!(result.dual_point.sigma_tilde.linf() < 1e-12);
        assert!(result.dual_point.z_star.linf() < 1e-9);
        assert_eq!(result.stop_reason, StopReason::Converged);
        assert!(result.feasibility.in_a4_q.feasible);
        assert_abs_diff_eq!(result.feasibility.a2_residual, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ascent_trace_is_monotone_and_weakly_dual_under_zero_loads() {
        let base = unit_cfg(3);
        let cfg = ModelConfig::new(
            base.lame(),
            base.k(),
            base.grid().clone(),
            Loads::zero(base.grid()),
            Tolerances {
                max_iters: 200,
                ..Tolerances::default()
            },
        )
        .unwrap();
        let grid = cfg.grid();
        let k = cfg.k();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let init = DualPoint {
            q: MatrixField::from_fn(grid, |_| random_matrix(&mut rng, k / 40.0)),
            sigma_tilde: MatrixField::from_fn(grid, |_| sym(&random_matrix(&mut rng, k / 80.0))),
            z_star: MatrixField::zeros(grid),
        };
        let result = solve_dual(&cfg, Some(&init)).unwrap();
        for pair in result.ascent_trace.windows(2) {
            assert!(pair[1].j_tilde_star >= pair[0].j_tilde_star);
        }
        // Weak duality against admissible displacements with the same
        // (zero) loads: J(u) ≥ J̃* − slack.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..5 {
            let amp = rng.gen_range(0.005..0.02);
            let u = DisplacementField::from_fn(grid, |p| {
                Vector3::new(amp * p.x * p.y, -amp * p.x * p.z, amp * p.x * (p.x + p.z) / 2.0)
            });
            let j = energy(&u, &cfg).unwrap().j;
            assert!(
                j - result.j_tilde_star >= -1e-8 * (1.0 + j.abs()),
                "weak duality violated: J {j} < J~* {}",
                result.j_tilde_star
            );
        }
    }

    #[test]
    fn solve_dual_rejects_asymmetric_sigma() {
        let cfg = unit_cfg(3);
        let grid = cfg.grid();
        let mut dp = DualPoint::zeros(grid);
        dp.sigma_tilde[0][(0, 1)] = 0.01;
        assert!(matches!(
            solve_dual(&cfg, Some(&dp)),
            Err(Error::ConstraintViolation(_))
        ));
    }
}
