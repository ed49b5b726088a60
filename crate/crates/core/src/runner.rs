//! Command pipelines behind the CLI: each command resolves loads, runs the
//! relevant solvers/constructions, and assembles a [`ReportDocument`].
//! All reductions are sequential, so results are reproducible bit-for-bit
//! for a fixed config and seed.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::dual::solve_dual;
use crate::error::Result;
use crate::feasibility::{check_box, check_c_sampled, SampleOptions};
use crate::grid::{dirichlet_violation, gradient, DisplacementField, Loads};
use crate::optimality::{
    common_preset_amplitude, gap_report, manufacture_critical_point, preset_displacement,
    preset_displacement_with_amplitude, GapReport,
};
use crate::primal::{bvp_residual, solve_primal, ModelConfig, PrimalSolution, GRADIENT_BOX_BOUND};
use crate::report::{
    CommandResult, DualReport, GapStudyLevel, GapStudyReport, ManufactureReport, PrimalReport,
    ReportDocument, VerifyReport,
};

/// The five batch commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    PrimalSolve,
    DualSolve,
    VerifyDuality,
    Manufacture,
    GapStudy,
}

impl Command {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "primal-solve" => Some(Command::PrimalSolve),
            "dual-solve" => Some(Command::DualSolve),
            "verify-duality" => Some(Command::VerifyDuality),
            "manufacture" => Some(Command::Manufacture),
            "gap-study" => Some(Command::GapStudy),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::PrimalSolve => "primal-solve",
            Command::DualSolve => "dual-solve",
            Command::VerifyDuality => "verify-duality",
            Command::Manufacture => "manufacture",
            Command::GapStudy => "gap-study",
        }
    }
}

fn sample_options(config: &ExperimentConfig) -> SampleOptions {
    SampleOptions {
        seed: config.seed,
        ..SampleOptions::default()
    }
}

fn primal_report(
    solution: &PrimalSolution,
    cfg: &ModelConfig,
    opts: &SampleOptions,
) -> Result<PrimalReport> {
    let (interior_residual, boundary_residual) = bvp_residual(&solution.u, cfg)?;
    let g = gradient(&solution.u, cfg.grid());
    Ok(PrimalReport {
        energy: solution.energy,
        iterations: solution.iterations,
        final_grad_norm: solution.final_grad_norm,
        interior_residual,
        boundary_residual,
        gradient_box: check_box(&g, GRADIENT_BOX_BOUND),
        dirichlet_violation: dirichlet_violation(&solution.u, cfg.grid()),
        convexity: check_c_sampled(&solution.u, cfg, opts),
    })
}

fn dual_report(result: &crate::dual::DualSolveResult) -> DualReport {
    DualReport {
        j_tilde_star: result.j_tilde_star,
        inner_iterations: result.inner_iterations,
        outer_iterations: result.outer_iterations,
        stop_reason: result.stop_reason,
        feasibility: result.feasibility.clone(),
        ascent_trace: result.ascent_trace.clone(),
    }
}

fn manufactured_gap(
    config: &ExperimentConfig,
    u0: &DisplacementField,
    base: &ModelConfig,
) -> Result<(crate::optimality::CriticalPointBundle, ModelConfig, GapReport)> {
    let bundle = manufacture_critical_point(u0, base)?;
    let loaded = base.with_loads(bundle.loads.clone())?;
    let gap = gap_report(&bundle.u0, &bundle.dual, &loaded, &sample_options(config))?;
    Ok((bundle, loaded, gap))
}

/// Runs one command and assembles its report document. `deterministic` is
/// echoed into the document; execution is sequential either way.
pub fn run_command(
    command: Command,
    config: &ExperimentConfig,
    deterministic: bool,
) -> Result<ReportDocument> {
    let total = Instant::now();
    let mut timings = BTreeMap::new();
    let opts = sample_options(config);

    let result = match command {
        Command::PrimalSolve => {
            let setup = Instant::now();
            let loads = config.resolve_loads()?;
            let cfg = config.model_config(loads)?;
            timings.insert("setup_s".into(), setup.elapsed().as_secs_f64());
            let solve = Instant::now();
            let solution = solve_primal(&cfg, &DisplacementField::zeros(cfg.grid()))?;
            timings.insert("solve_s".into(), solve.elapsed().as_secs_f64());
            CommandResult::PrimalSolve(primal_report(&solution, &cfg, &opts)?)
        }
        Command::DualSolve => {
            let setup = Instant::now();
            let loads = config.resolve_loads()?;
            let cfg = config.model_config(loads)?;
            timings.insert("setup_s".into(), setup.elapsed().as_secs_f64());
            let solve = Instant::now();
            let result = solve_dual(&cfg, None)?;
            timings.insert("solve_s".into(), solve.elapsed().as_secs_f64());
            CommandResult::DualSolve(dual_report(&result))
        }
        Command::VerifyDuality => {
            let setup = Instant::now();
            let loads = config.resolve_loads()?;
            let cfg = config.model_config(loads)?;
            timings.insert("setup_s".into(), setup.elapsed().as_secs_f64());

            let stage = Instant::now();
            let primal = solve_primal(&cfg, &DisplacementField::zeros(cfg.grid()))?;
            timings.insert("primal_s".into(), stage.elapsed().as_secs_f64());

            let stage = Instant::now();
            let dual = solve_dual(&cfg, None)?;
            timings.insert("dual_s".into(), stage.elapsed().as_secs_f64());

            let stage = Instant::now();
            let gap = gap_report(&primal.u, &dual.dual_point, &cfg, &opts)?;
            timings.insert("gap_s".into(), stage.elapsed().as_secs_f64());

            CommandResult::VerifyDuality(VerifyReport {
                primal: primal_report(&primal, &cfg, &opts)?,
                dual: dual_report(&dual),
                gap,
            })
        }
        Command::Manufacture => {
            let base = config.model_config(Loads::zero(&config.grid))?;
            let stage = Instant::now();
            let (u0, amplitude) = preset_displacement(config.run.preset, &base)?;
            let (bundle, _, gap) = manufactured_gap(config, &u0, &base)?;
            timings.insert("manufacture_s".into(), stage.elapsed().as_secs_f64());
            CommandResult::Manufacture(ManufactureReport {
                preset: config.run.preset.name().to_string(),
                amplitude,
                construction_log: bundle.construction_log.clone(),
                gap,
            })
        }
        Command::GapStudy => {
            let stage = Instant::now();
            // One continuum displacement across the ladder: a single
            // amplitude chosen so the feasibility margins hold on every
            // level.
            let level_configs: Vec<ExperimentConfig> = config
                .run
                .levels
                .iter()
                .map(|&n| config.with_grid_dims([n; 3]))
                .collect::<Result<_>>()?;
            let bases: Vec<ModelConfig> = level_configs
                .iter()
                .map(|c| c.model_config(Loads::zero(&c.grid)))
                .collect::<Result<_>>()?;
            let amplitude = common_preset_amplitude(
                config.run.preset,
                &bases.iter().collect::<Vec<_>>(),
            )?;

            let mut levels = Vec::with_capacity(config.run.levels.len());
            for ((&n, level_config), base) in config
                .run
                .levels
                .iter()
                .zip(&level_configs)
                .zip(&bases)
            {
                let u0 = preset_displacement_with_amplitude(config.run.preset, amplitude, base)?;
                let (_, _, gap) = manufactured_gap(level_config, &u0, base)?;
                let spacing = base.grid().spacing();
                let h = spacing[0].max(spacing[1]).max(spacing[2]);
                levels.push(GapStudyLevel {
                    dims: [n; 3],
                    h,
                    gap: gap.gap,
                    primal: gap.j,
                    dual: gap.j_tilde_star,
                    max_extremality_linf: gap.extremality.max_linf(),
                });
            }
            timings.insert("levels_s".into(), stage.elapsed().as_secs_f64());
            CommandResult::GapStudy(GapStudyReport {
                preset: config.run.preset.name().to_string(),
                amplitude,
                fitted_order: fit_order(&levels),
                levels,
            })
        }
    };

    timings.insert("total_s".into(), total.elapsed().as_secs_f64());
    Ok(ReportDocument::new(
        command.name(),
        deterministic,
        config.echo(),
        result,
        timings,
    ))
}

/// Least-squares slope of log|gap| against log h over the ladder, or `None`
/// when a gap is exactly zero.
pub fn fit_order(levels: &[GapStudyLevel]) -> Option<f64> {
    if levels.len() < 2 || levels.iter().any(|l| l.gap == 0.0) {
        return None;
    }
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|l| (l.h.ln(), l.gap.abs().ln()))
        .collect();
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Parses an error into the process exit status the CLI documents:
/// 0 success, 1 configuration/validation problems, 2 numerical failures.
pub fn exit_status(result: &Result<ReportDocument>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) => i32::from(e.exit_code()),
    }
}
