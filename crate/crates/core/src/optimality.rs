//! Constructive machinery around critical points: manufacture an exact
//! discrete critical point from a chosen displacement, evaluate the full
//! set of extremality residuals, recover a displacement gradient from dual
//! fields and reintegrate it, and assemble duality-gap reports.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::conjugate::{j_star, shifted_matrix, DualPoint};
use crate::dual::inner_min_z;
use crate::error::{Error, Result};
use crate::feasibility::{
    check_b1, check_box, equilibrium_residuals, feasibility_report, FeasibilityReport,
    SampleOptions, FLUX_BOX_FACTOR, SIGMA_BOX_FACTOR, Z_BOX_FACTOR,
};
use crate::grid::{
    apply_derivative, apply_derivative_transpose, dirichlet_violation, divergence, gradient,
    integrate_volume, scalar_gradient, BoundaryTag, DisplacementField, Face, Grid, Loads,
    MatrixField, ScalarField,
};
use crate::primal::{energy, stress, ModelConfig, GRADIENT_BOX_BOUND};
use crate::tensor::{shifted_inverse_power, DEFAULT_COND_CAP};

/// Required fraction of each feasibility bound kept as margin when a preset
/// amplitude is auto-scaled.
pub const MARGIN_HEADROOM: f64 = 0.1;
/// Target max gradient entry for the initial preset amplitude guess.
const INITIAL_GRADIENT_TARGET: f64 = 0.02;
/// Maximum amplitude halvings during auto-scaling.
const MAX_AMPLITUDE_HALVINGS: usize = 30;

/// Residuals of the defining equations and the feasibility margins recorded
/// while a critical point was manufactured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructionLog {
    /// Max deviation of z* from K·∇u.
    pub z_scaling_residual: f64,
    /// Max deviation of σ̃ from σ(u) − K·∇u.
    pub sigma_split_residual: f64,
    /// Max deviation of Q from ∇u·σ(u) + K·∇u.
    pub flux_residual: f64,
    pub margin_b1: f64,
    pub margin_b2: f64,
    pub margin_c1: f64,
    pub margin_a4_sigma: f64,
    pub margin_a4_q: f64,
    pub a2_residual: f64,
    pub a3_residual: f64,
}

/// A displacement together with the dual fields and loads that make it an
/// exact critical point of the discrete primal/dual pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPointBundle {
    pub u0: DisplacementField,
    pub dual: DualPoint,
    pub loads: Loads,
    pub construction_log: ConstructionLog,
}

impl CriticalPointBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Builds the dual fields, loads, and construction log that make `u0` an
/// exact critical point: z* = K∇u, σ̃ = σ(u) − K∇u, Q = ∇u·σ(u) + K∇u,
/// with the body force and tractions defined through the same discrete
/// divergence/trace operators used by the equilibrium residuals. Fails if
/// the displacement leaves the strict gradient box or if any feasibility
/// margin of the manufactured fields is non-positive.
pub fn manufacture_critical_point(
    u0: &DisplacementField,
    cfg: &ModelConfig,
) -> Result<CriticalPointBundle> {
    let grid = cfg.grid();
    let k = cfg.k();
    let pinned = dirichlet_violation(u0, grid);
    if pinned != 0.0 {
        return Err(Error::ConstraintViolation(format!(
            "u0 violates the pinned boundary (max |u| = {pinned:.3e})"
        )));
    }
    let g = gradient(u0, grid);
    let c1 = check_box(&g, GRADIENT_BOX_BOUND);
    if !c1.feasible {
        return Err(Error::ConstraintViolation(format!(
            "u0 violates C1 with margin {:.3e}",
            c1.margin
        )));
    }

    let sigma = stress(u0, cfg.hooke(), grid);
    let n = grid.node_count();
    let mut z = MatrixField::zeros(grid);
    let mut sigma_tilde = MatrixField::zeros(grid);
    let mut q = MatrixField::zeros(grid);
    for idx in 0..n {
        z[idx] = g[idx] * k;
        sigma_tilde[idx] = sigma[idx] - g[idx] * k;
        q[idx] = g[idx] * sigma[idx] + g[idx] * k;
    }

    let b1 = check_b1(&z, &sigma_tilde, k);
    let b2 = check_box(&z, k * Z_BOX_FACTOR);
    let a4_sigma = check_box(&sigma_tilde, k * SIGMA_BOX_FACTOR);
    let a4_q = check_box(&q, k * FLUX_BOX_FACTOR);
    for (name, check) in [
        ("B1", b1),
        ("B2", b2),
        ("A4 (sigma)", a4_sigma),
        ("A4 (Q)", a4_q),
    ] {
        if check.margin <= 0.0 {
            return Err(Error::ConstraintViolation(format!(
                "manufactured point violates {name} with margin {:.3e}",
                check.margin
            )));
        }
    }

    // Loads from the same discrete operators that measure equilibrium, so
    // the equilibrium residuals of the bundle vanish identically.
    let combined = &sigma_tilde + &q;
    let div = divergence(&combined, grid);
    let mut loads = Loads::zero(grid);
    loads.body = DisplacementField::from_vec(div.iter().map(|v| -v).collect());
    for face in grid.gamma1_faces() {
        let normal = face.normal();
        let values: Vec<_> = grid
            .face_nodes(face)
            .iter()
            .map(|fnode| combined[fnode.node] * normal)
            .collect();
        loads.set_traction(face, values);
    }

    let z_scaling_residual = z
        .iter()
        .zip(g.iter())
        .map(|(z, g)| (z - g * k).amax())
        .fold(0.0, f64::max);
    let sigma_split_residual = sigma_tilde
        .iter()
        .zip(sigma.iter().zip(g.iter()))
        .map(|(s, (sig, g))| (s - (sig - g * k)).amax())
        .fold(0.0, f64::max);
    let flux_residual = q
        .iter()
        .zip(sigma.iter().zip(g.iter()))
        .map(|(q, (sig, g))| (q - (g * sig + g * k)).amax())
        .fold(0.0, f64::max);
    let (a2_residual, a3_residual) = equilibrium_residuals(&q, &sigma_tilde, &loads, grid);

    Ok(CriticalPointBundle {
        u0: u0.clone(),
        dual: DualPoint {
            q,
            sigma_tilde,
            z_star: z,
        },
        loads,
        construction_log: ConstructionLog {
            z_scaling_residual,
            sigma_split_residual,
            flux_residual,
            margin_b1: b1.margin,
            margin_b2: b2.margin,
            margin_c1: c1.margin,
            margin_a4_sigma: a4_sigma.margin,
            margin_a4_q: a4_q.margin,
            a2_residual,
            a3_residual,
        },
    })
}

// ---------------------------------------------------------------------------
// Displacement presets
// ---------------------------------------------------------------------------

/// Shipped displacement presets. All are discrete gradients of a scalar
/// potential, which keeps ∇u symmetric to round-off — the property the
/// stationarity equations require of an exact critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Zero,
    SineBump,
    Ramp,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "zero" => Some(Preset::Zero),
            "sine_bump" => Some(Preset::SineBump),
            "ramp" => Some(Preset::Ramp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Zero => "zero",
            Preset::SineBump => "sine_bump",
            Preset::Ramp => "ramp",
        }
    }
}

/// Axis window for the bump potential. Pinned sides carry a hard-zero band
/// wide enough that the first three node planes of every supported
/// resolution sample exactly zero, which in turn zeroes the one-sided
/// derivative stencils on the pinned face itself. The nonzero pieces are
/// low-degree polynomials/cosines that the difference stencils resolve from
/// the coarsest supported grid on, keeping the quadrature defect of the
/// manufactured loads on a clean second-order trend instead of coarse-grid
/// aliasing noise. The free-axis window is deliberately asymmetric so the
/// defect contributions of opposite faces do not cancel.
fn axis_window(t: f64, pinned_min: bool, pinned_max: bool) -> f64 {
    use std::f64::consts::PI;
    match (pinned_min, pinned_max) {
        (false, false) => 1.0 + 0.4 * (PI * t).cos() + 0.2 * (2.0 * PI * t).cos(),
        (true, false) => {
            if t <= 0.5 {
                0.0
            } else {
                4.0 * (t - 0.5) * (t - 0.5)
            }
        }
        (false, true) => {
            if t >= 0.5 {
                0.0
            } else {
                4.0 * (0.5 - t) * (0.5 - t)
            }
        }
        (true, true) => {
            if t <= 0.25 || t >= 0.75 {
                0.0
            } else {
                256.0 * (t - 0.25) * (t - 0.25) * (0.75 - t) * (0.75 - t)
            }
        }
    }
}

fn pinned_sides(grid: &Grid, axis: usize) -> (bool, bool) {
    let min_face = Face::ALL[2 * axis];
    let max_face = Face::ALL[2 * axis + 1];
    (
        grid.tag(min_face) == BoundaryTag::Gamma0,
        grid.tag(max_face) == BoundaryTag::Gamma0,
    )
}

fn bump_potential(grid: &Grid) -> Result<ScalarField> {
    for axis in 0..3 {
        let (lo, hi) = pinned_sides(grid, axis);
        let n = grid.dims()[axis];
        let needed = match (lo, hi) {
            (true, true) => 9,
            (true, false) | (false, true) => 5,
            (false, false) => 3,
        };
        if n < needed {
            return Err(Error::InvalidParameter {
                name: "grid.dims".into(),
                reason: format!(
                    "axis {axis} needs at least {needed} nodes for the bump preset's \
                     pinned-side zero bands, got {n}"
                ),
            });
        }
    }
    let extents = grid.extents();
    let windows: Vec<(bool, bool)> = (0..3).map(|a| pinned_sides(grid, a)).collect();
    Ok(ScalarField::from_fn(grid, |p| {
        let mut value = 1.0;
        for axis in 0..3 {
            let t = p[axis] / extents[axis];
            let (lo, hi) = windows[axis];
            value *= axis_window(t, lo, hi);
        }
        value
    }))
}

fn ramp_potential(grid: &Grid) -> Result<ScalarField> {
    let pinned = grid.gamma0_faces();
    if pinned.len() != 1 {
        return Err(Error::InvalidParameter {
            name: "grid.gamma0_faces".into(),
            reason: format!(
                "ramp preset requires exactly one pinned face, got {}",
                pinned.len()
            ),
        });
    }
    let face = pinned[0];
    let axis = face.axis();
    let extent = grid.extents()[axis];
    Ok(ScalarField::from_fn(grid, |p| {
        let d = if face.is_max_side() {
            extent - p[axis]
        } else {
            p[axis]
        };
        0.5 * d * d
    }))
}

fn margins_ok(u: &DisplacementField, cfg: &ModelConfig) -> Result<bool> {
    let grid = cfg.grid();
    let k = cfg.k();
    let g = gradient(u, grid);
    let c1 = check_box(&g, GRADIENT_BOX_BOUND);
    if c1.margin < MARGIN_HEADROOM * GRADIENT_BOX_BOUND {
        return Ok(false);
    }
    let sigma = stress(u, cfg.hooke(), grid);
    let n = grid.node_count();
    let mut z = MatrixField::zeros(grid);
    let mut sigma_tilde = MatrixField::zeros(grid);
    let mut q = MatrixField::zeros(grid);
    for idx in 0..n {
        z[idx] = g[idx] * k;
        sigma_tilde[idx] = sigma[idx] - g[idx] * k;
        q[idx] = g[idx] * sigma[idx] + g[idx] * k;
    }
    Ok(check_b1(&z, &sigma_tilde, k).margin >= MARGIN_HEADROOM * (k / 2.0)
        && check_box(&z, k * Z_BOX_FACTOR).margin >= MARGIN_HEADROOM * k * Z_BOX_FACTOR
        && check_box(&sigma_tilde, k * SIGMA_BOX_FACTOR).margin
            >= MARGIN_HEADROOM * k * SIGMA_BOX_FACTOR
        && check_box(&q, k * FLUX_BOX_FACTOR).margin >= MARGIN_HEADROOM * k * FLUX_BOX_FACTOR)
}

/// Builds the preset displacement, auto-scaling its amplitude (starting
/// near a max gradient entry of 0.02 and halving) until every feasibility
/// margin of the manufactured fields keeps at least 10% of its bound.
/// Returns the displacement and the amplitude actually used.
pub fn preset_displacement(preset: Preset, cfg: &ModelConfig) -> Result<(DisplacementField, f64)> {
    let grid = cfg.grid();
    if preset == Preset::Zero {
        return Ok((DisplacementField::zeros(grid), 0.0));
    }
    let phi = match preset {
        Preset::SineBump => bump_potential(grid)?,
        Preset::Ramp => ramp_potential(grid)?,
        Preset::Zero => unreachable!(),
    };
    let u_unit = scalar_gradient(&phi, grid);
    let g_max = gradient(&u_unit, grid).linf();
    if g_max == 0.0 {
        return Err(Error::InvalidParameter {
            name: "preset".into(),
            reason: "preset potential has an identically zero gradient on this grid".into(),
        });
    }
    let mut amplitude = INITIAL_GRADIENT_TARGET / g_max;
    for _ in 0..=MAX_AMPLITUDE_HALVINGS {
        let u = &u_unit * amplitude;
        if margins_ok(&u, cfg)? {
            return Ok((u, amplitude));
        }
        amplitude *= 0.5;
    }
    Err(Error::NonConvergence(
        "preset amplitude auto-scaling could not reach the required feasibility margins".into(),
    ))
}

/// One amplitude serving a whole refinement ladder: the smallest per-level
/// auto-scaled amplitude, halved further until the feasibility margins hold
/// with 10% headroom at every level. Needed because the discrete gradient
/// maxima of a fixed continuum field grow toward the continuum supremum as
/// the grid refines, so the coarsest level alone is not binding.
pub fn common_preset_amplitude(preset: Preset, cfgs: &[&ModelConfig]) -> Result<f64> {
    if preset == Preset::Zero {
        return Ok(0.0);
    }
    let mut amplitude = f64::INFINITY;
    for cfg in cfgs {
        let (_, level_amp) = preset_displacement(preset, cfg)?;
        amplitude = amplitude.min(level_amp);
    }
    for _ in 0..=MAX_AMPLITUDE_HALVINGS {
        let mut all_ok = true;
        for cfg in cfgs {
            let u = preset_displacement_with_amplitude(preset, amplitude, cfg)?;
            if !margins_ok(&u, cfg)? {
                all_ok = false;
                break;
            }
        }
        if all_ok {
            return Ok(amplitude);
        }
        amplitude *= 0.5;
    }
    Err(Error::NonConvergence(
        "no common preset amplitude reaches the required feasibility margins on all levels"
            .into(),
    ))
}

/// Builds a preset displacement with a fixed, externally chosen amplitude
/// (used by refinement studies that must keep one continuum field across
/// resolutions).
pub fn preset_displacement_with_amplitude(
    preset: Preset,
    amplitude: f64,
    cfg: &ModelConfig,
) -> Result<DisplacementField> {
    let grid = cfg.grid();
    if preset == Preset::Zero {
        return Ok(DisplacementField::zeros(grid));
    }
    let phi = match preset {
        Preset::SineBump => bump_potential(grid)?,
        Preset::Ramp => ramp_potential(grid)?,
        Preset::Zero => unreachable!(),
    };
    Ok(&scalar_gradient(&phi, grid) * amplitude)
}

// ---------------------------------------------------------------------------
// Extremality residuals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub linf: f64,
    pub l2: f64,
}

/// Max-norm and weighted L² residuals of the eight pointwise/differential
/// equations an exact critical point satisfies. Algebraic residuals are
/// measured at every node; the momentum balance at interior nodes; the
/// traction balance on the traction boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtremalityResiduals {
    /// Q − [∇u·(z*+σ̃) + K∇u].
    pub flux_from_duals: ResidualNorms,
    /// z*/K − [−½ A⁻¹QᵀQA⁻¹ + H̄(z*+σ̃)], A = sym(z*+σ̃) + K·I.
    pub z_stationarity: ResidualNorms,
    /// z* − K∇u.
    pub z_gradient_scaling: ResidualNorms,
    /// (σ̃+z*) − H(e(u)).
    pub stress_decomposition: ResidualNorms,
    /// σ̃ − [σ(u) − K∇u].
    pub sigma_split: ResidualNorms,
    /// Q − [∇u·σ(u) + K∇u].
    pub flux_from_stress: ResidualNorms,
    /// div(σ + σ·∇u) + f at interior nodes.
    pub momentum_balance: ResidualNorms,
    /// (σ + σ·∇u)·n − f̂ on the traction boundary.
    pub traction_balance: ResidualNorms,
}

impl ExtremalityResiduals {
    pub fn entries(&self) -> [(&'static str, ResidualNorms); 8] {
        [
            ("flux_from_duals", self.flux_from_duals),
            ("z_stationarity", self.z_stationarity),
            ("z_gradient_scaling", self.z_gradient_scaling),
            ("stress_decomposition", self.stress_decomposition),
            ("sigma_split", self.sigma_split),
            ("flux_from_stress", self.flux_from_stress),
            ("momentum_balance", self.momentum_balance),
            ("traction_balance", self.traction_balance),
        ]
    }

    pub fn max_linf(&self) -> f64 {
        self.entries()
            .iter()
            .map(|(_, n)| n.linf)
            .fold(0.0, f64::max)
    }
}

fn matrix_field_norms(values: &[Matrix3<f64>], grid: &Grid) -> ResidualNorms {
    let mut linf: f64 = 0.0;
    let mut l2 = 0.0;
    for (idx, m) in values.iter().enumerate() {
        linf = linf.max(m.amax());
        l2 += grid.volume_weight(idx) * m.norm_squared();
    }
    ResidualNorms {
        linf,
        l2: l2.sqrt(),
    }
}

/// Residuals of all eight extremality equations for an arbitrary
/// primal/dual pair under the configured loads. Requires the shifted matrix
/// `sym(z*+σ̃) + K·I` to be invertible wherever the stationarity residual
/// is evaluated.
pub fn extremality_residuals(
    u: &DisplacementField,
    dual: &DualPoint,
    cfg: &ModelConfig,
) -> Result<ExtremalityResiduals> {
    let grid = cfg.grid();
    let k = cfg.k();
    let n = grid.node_count();
    let g = gradient(u, grid);
    let sigma = stress(u, cfg.hooke(), grid);
    let loads = cfg.loads();

    let mut r_flux_duals = vec![Matrix3::zeros(); n];
    let mut r_z_stat = vec![Matrix3::zeros(); n];
    let mut r_z_scale = vec![Matrix3::zeros(); n];
    let mut r_stress_dec = vec![Matrix3::zeros(); n];
    let mut r_sigma_split = vec![Matrix3::zeros(); n];
    let mut r_flux_stress = vec![Matrix3::zeros(); n];
    for idx in 0..n {
        let z = dual.z_star[idx];
        let st = dual.sigma_tilde[idx];
        let q = dual.q[idx];
        let s = z + st;
        r_flux_duals[idx] = q - g[idx] * s.transpose() - g[idx] * k;
        let a = shifted_matrix(&z, &st, k);
        let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
        let v = a_inv * (q.transpose() * q) * a_inv;
        r_z_stat[idx] = z / k - (cfg.compliance().apply(&s) - v * 0.5);
        r_z_scale[idx] = z - g[idx] * k;
        r_stress_dec[idx] = (st + z) - sigma[idx];
        r_sigma_split[idx] = st - (sigma[idx] - g[idx] * k);
        r_flux_stress[idx] = q - (g[idx] * sigma[idx] + g[idx] * k);
    }

    // Momentum balance: divergence of σ + σ∇u against the body force, at
    // interior nodes.
    let mut first_piola = MatrixField::zeros(grid);
    for idx in 0..n {
        first_piola[idx] = sigma[idx] + sigma[idx] * g[idx];
    }
    let div = divergence(&first_piola, grid);
    let mut momentum_linf: f64 = 0.0;
    let mut momentum_l2 = 0.0;
    for idx in 0..n {
        if grid.is_interior(idx) {
            let r = div[idx] + loads.body[idx];
            momentum_linf = momentum_linf.max(r.amax());
            momentum_l2 += grid.volume_weight(idx) * r.norm_squared();
        }
    }

    let mut traction_linf: f64 = 0.0;
    let mut traction_l2 = 0.0;
    for face in grid.gamma1_faces() {
        let normal = face.normal();
        let traction = loads.traction(face).expect("validated loads");
        for (slot, fnode) in grid.face_nodes(face).iter().enumerate() {
            let r = first_piola[fnode.node] * normal - traction[slot];
            traction_linf = traction_linf.max(r.amax());
            traction_l2 += fnode.weight * r.norm_squared();
        }
    }

    Ok(ExtremalityResiduals {
        flux_from_duals: matrix_field_norms(&r_flux_duals, grid),
        z_stationarity: matrix_field_norms(&r_z_stat, grid),
        z_gradient_scaling: matrix_field_norms(&r_z_scale, grid),
        stress_decomposition: matrix_field_norms(&r_stress_dec, grid),
        sigma_split: matrix_field_norms(&r_sigma_split, grid),
        flux_from_stress: matrix_field_norms(&r_flux_stress, grid),
        momentum_balance: ResidualNorms {
            linf: momentum_linf,
            l2: momentum_l2.sqrt(),
        },
        traction_balance: ResidualNorms {
            linf: traction_linf,
            l2: traction_l2.sqrt(),
        },
    })
}

// ---------------------------------------------------------------------------
// Gradient recovery and reintegration
// ---------------------------------------------------------------------------

/// Candidate displacement gradient from dual fields: rows
/// `g_m = Q_m·A⁻¹` with `A = sym(z*+σ̃) + K·I`.
pub fn recover_u_gradient(dual: &DualPoint, cfg: &ModelConfig) -> Result<MatrixField> {
    let grid = cfg.grid();
    let k = cfg.k();
    let mut out = MatrixField::zeros(grid);
    for idx in 0..grid.node_count() {
        let a = shifted_matrix(&dual.z_star[idx], &dual.sigma_tilde[idx], k);
        let a_inv = shifted_inverse_power(&a, -1, DEFAULT_COND_CAP)?;
        out[idx] = dual.q[idx] * a_inv;
    }
    Ok(out)
}

/// Weighted least-squares potential reconstruction: finds the displacement
/// vanishing on the pinned boundary that minimizes `|∇u − g|²` in the
/// volume quadrature norm, via conjugate gradients on the normal equations
/// (pinned rows held at zero). Returns the displacement and the minimized
/// misfit (zero exactly when g is a discrete gradient of an admissible
/// field).
pub fn integrate_gradient(g: &MatrixField, grid: &Grid) -> Result<(DisplacementField, f64)> {
    let n = grid.node_count();
    let weights: Vec<f64> = (0..n).map(|idx| grid.volume_weight(idx)).collect();
    let free: Vec<bool> = (0..n).map(|idx| !grid.is_dirichlet(idx)).collect();

    // Per displacement component m, solve  Σ_a Dᵀ_a W D_a u = Σ_a Dᵀ_a W g_ma.
    let apply_normal = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for axis in 0..3 {
            let dv = apply_derivative(grid, axis, v);
            let weighted: Vec<f64> = dv.iter().zip(&weights).map(|(d, w)| d * w).collect();
            let back = apply_derivative_transpose(grid, axis, &weighted);
            for idx in 0..n {
                out[idx] += back[idx];
            }
        }
        for idx in 0..n {
            if !free[idx] {
                out[idx] = 0.0;
            }
        }
        out
    };

    let mut u = DisplacementField::zeros(grid);
    for m in 0..3 {
        let mut rhs = vec![0.0; n];
        for axis in 0..3 {
            let col: Vec<f64> = (0..n).map(|idx| g[idx][(m, axis)] * weights[idx]).collect();
            let back = apply_derivative_transpose(grid, axis, &col);
            for idx in 0..n {
                rhs[idx] += back[idx];
            }
        }
        for idx in 0..n {
            if !free[idx] {
                rhs[idx] = 0.0;
            }
        }
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            continue;
        }
        let mut x = vec![0.0; n];
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let cap = 10 * n;
        let tol = 1e-12 * (1.0 + rhs_norm);
        let mut converged = rr.sqrt() <= tol;
        let mut iterations = 0;
        while !converged && iterations < cap {
            iterations += 1;
            let ap = apply_normal(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for idx in 0..n {
                x[idx] += alpha * p[idx];
                r[idx] -= alpha * ap[idx];
            }
            let rr_next: f64 = r.iter().map(|v| v * v).sum();
            if rr_next.sqrt() <= tol {
                converged = true;
            }
            let beta = rr_next / rr;
            rr = rr_next;
            if !converged {
                for idx in 0..n {
                    p[idx] = r[idx] + beta * p[idx];
                }
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "gradient reintegration: residual {} after {} iterations",
                rr.sqrt(),
                iterations
            )));
        }
        for idx in 0..n {
            u[idx][m] = x[idx];
        }
    }

    let fitted = gradient(&u, grid);
    let misfit: Vec<f64> = (0..n)
        .map(|idx| (fitted[idx] - g[idx]).norm_squared())
        .collect();
    let residual = integrate_volume(grid, |idx| misfit[idx]);
    Ok((u, residual))
}

// ---------------------------------------------------------------------------
// Gap reports
// ---------------------------------------------------------------------------

/// Duality-gap evaluation of a primal/dual pair under the configured loads:
/// the primal value, the dual value at the given triple, the dual value
/// after inner minimization over z*, their gap, and the full feasibility
/// and extremality diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub j: f64,
    pub j_star: f64,
    pub j_tilde_star: f64,
    pub gap: f64,
    pub feasibility: FeasibilityReport,
    pub extremality: ExtremalityResiduals,
}

pub fn gap_report(
    u: &DisplacementField,
    dual: &DualPoint,
    cfg: &ModelConfig,
    sample_opts: &SampleOptions,
) -> Result<GapReport> {
    let j = energy(u, cfg)?.j;
    let j_star_value = j_star(dual, cfg)?;
    let inner = inner_min_z(&dual.q, &dual.sigma_tilde, cfg, &dual.z_star)?;
    let feasibility = feasibility_report(
        dual,
        Some(u),
        std::slice::from_ref(u),
        cfg,
        sample_opts,
    )?;
    let extremality = extremality_residuals(u, dual, cfg)?;
    Ok(GapReport {
        j,
        j_star: j_star_value,
        j_tilde_star: inner.value,
        gap: j - inner.value,
        feasibility,
        extremality,
    })
}
