//! Run reports: one document per command invocation, emitted as JSON or as
//! a flat CSV series for plotting. Documents are deterministic for a fixed
//! config and seed except for the timing block, which is kept as the last
//! top-level field so comparisons can strip it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::ConfigEcho;
use crate::dual::{StopReason, TracePoint};
use crate::error::{Error, Result};
use crate::feasibility::{FeasibilityReport, SampledCheck, SetCheck};
use crate::optimality::{ConstructionLog, GapReport};
use crate::primal::EnergyBreakdown;

#[derive(Debug, Clone, Serialize)]
pub struct PrimalReport {
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Weighted L² residual of the interior force balance.
    pub interior_residual: f64,
    /// Weighted L² residual of the traction balance.
    pub boundary_residual: f64,
    pub gradient_box: SetCheck,
    pub dirichlet_violation: f64,
    /// Sampled convexity-domain check of the solution.
    pub convexity: SampledCheck,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualReport {
    pub j_tilde_star: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub stop_reason: StopReason,
    pub feasibility: FeasibilityReport,
    pub ascent_trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub primal: PrimalReport,
    pub dual: DualReport,
    pub gap: GapReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManufactureReport {
    pub preset: String,
    pub amplitude: f64,
    pub construction_log: ConstructionLog,
    pub gap: GapReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapStudyLevel {
    pub dims: [usize; 3],
    pub h: f64,
    pub gap: f64,
    /// J(u₀) at this level.
    pub primal: f64,
    /// Inner-minimized dual value at the manufactured triple.
    pub dual: f64,
    pub max_extremality_linf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapStudyReport {
    pub preset: String,
    pub amplitude: f64,
    pub levels: Vec<GapStudyLevel>,
    /// Least-squares slope of log|gap| against log h; `None` when a level
    /// hit an exactly zero gap.
    pub fitted_order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
// One value of this enum exists per process, so the size spread between
// variants carries no cost worth indirection.
#[allow(clippy::large_enum_variant)]
pub enum CommandResult {
    PrimalSolve(PrimalReport),
    DualSolve(DualReport),
    VerifyDuality(VerifyReport),
    Manufacture(ManufactureReport),
    GapStudy(GapStudyReport),
}

/// Top-level report document. Field order is part of the output contract;
/// `timings` stays last so byte comparisons can cut it off.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub version: String,
    pub command: String,
    pub deterministic: bool,
    pub config: ConfigEcho,
    pub result: CommandResult,
    pub timings: BTreeMap<String, f64>,
}

impl ReportDocument {
    pub fn new(
        command: &str,
        deterministic: bool,
        config: ConfigEcho,
        result: CommandResult,
        timings: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            deterministic,
            config,
            result,
            timings,
        }
    }
}

/// Full document as pretty-printed JSON (17-significant-digit round-trip
/// floats), newline-terminated.
pub fn to_json(report: &ReportDocument) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

/// Plot-ready series: the ascent trace for dual solves and duality
/// verification (`iteration,J_tilde_star`) and the refinement series for
/// gap studies (`h,gap,primal,dual`). Other commands have no series.
pub fn to_csv_series(report: &ReportDocument) -> Result<String> {
    match &report.result {
        CommandResult::DualSolve(dual) => Ok(trace_csv(&dual.ascent_trace)),
        CommandResult::VerifyDuality(verify) => Ok(trace_csv(&verify.dual.ascent_trace)),
        CommandResult::GapStudy(study) => {
            let mut out = String::from("h,gap,primal,dual\n");
            for level in &study.levels {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    level.h, level.gap, level.primal, level.dual
                ));
            }
            Ok(out)
        }
        CommandResult::PrimalSolve(_) | CommandResult::Manufacture(_) => {
            Err(Error::InvalidParameter {
                name: "format".into(),
                reason: format!(
                    "csv-series is only available for dual-solve, verify-duality, and \
                     gap-study; `{}` emits json only",
                    report.command
                ),
            })
        }
    }
}

fn trace_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iteration,J_tilde_star\n");
    for point in trace {
        out.push_str(&format!("{},{}\n", point.iteration, point.j_tilde_star));
    }
    out
}

/// Emits a report in the requested format (`json` or `csv-series`).
pub fn emit(report: &ReportDocument, format: &str) -> Result<String> {
    match format {
        "json" => to_json(report),
        "csv-series" => to_csv_series(report),
        other => Err(Error::InvalidParameter {
            name: "format".into(),
            reason: format!("unknown format {other:?}; expected json or csv-series"),
        }),
    }
}

/// Removes the timing block from a JSON document, re-serializing the rest
/// canonically (sorted object keys) — the form used for byte-identity
/// comparisons.
pub fn strip_timings(json: &str) -> Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(json)?;
    if let Some(object) = value.as_object_mut() {
        object.remove("timings");
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}
