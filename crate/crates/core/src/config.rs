//! Experiment configuration files: flat, line-based `key = value` pairs
//! with dotted section prefixes and `#` comments. Every tolerance and model
//! parameter is surfaced here; unknown or duplicate keys are rejected so
//! typos cannot silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{read_face_vectors, BoundaryTag, DisplacementField, Face, Grid, Loads};
use crate::optimality::{manufacture_critical_point, preset_displacement, Preset};
use crate::primal::{ModelConfig, Tolerances};
use crate::tensor::{select_stability_constant, ComplianceTensor, LameParams};

/// How the stability constant was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    /// `k = safety / (2·λmax(H̄))`.
    Auto { safety: f64 },
    Explicit,
}

/// Where the loads come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadSpec {
    /// Loads manufactured from a preset displacement on the configured grid
    /// (`zero` gives identically zero loads).
    Preset(Preset),
    /// Loads read from text files; unlisted traction faces default to zero.
    Files {
        body: Option<PathBuf>,
        tractions: Vec<(Face, PathBuf)>,
    },
}

/// Options consumed by the manufacture and gap-study commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Displacement preset to manufacture from.
    pub preset: Preset,
    /// Grid resolutions (nodes per axis) of the gap-study ladder.
    pub levels: Vec<usize>,
}

/// A fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub material: LameParams,
    pub stability_mode: StabilityMode,
    /// Resolved stability constant (already checked against the stability
    /// bound).
    pub k: f64,
    pub grid: Grid,
    pub loads: LoadSpec,
    pub run: RunOptions,
    pub tolerances: Tolerances,
    pub seed: u64,
}

/// Primitive-valued snapshot of a resolved config, embedded in reports.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub lambda: f64,
    pub mu: f64,
    pub k: f64,
    pub k_mode: StabilityMode,
    pub extents: [f64; 3],
    pub dims: [usize; 3],
    pub gamma0_faces: Vec<String>,
    pub loads: String,
    pub run_preset: String,
    pub run_levels: Vec<usize>,
    pub grad_tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

struct RawConfig {
    entries: BTreeMap<String, (String, bool)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(config_err(
                    &format!("line {}", lineno + 1),
                    "empty key before `=`",
                ));
            }
            if entries.insert(key.clone(), (value, false)).is_some() {
                return Err(config_err(&key, "duplicate key"));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|(value, used)| {
            *used = true;
            value.clone()
        })
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(text) => text
                .parse::<f64>()
                .map(Some)
                .map_err(|_| config_err(key, format!("expected a number, got {text:?}"))),
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(text) => text
                .parse::<usize>()
                .map(Some)
                .map_err(|_| config_err(key, format!("expected a non-negative integer, got {text:?}"))),
        }
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(text) => text
                .parse::<u64>()
                .map(Some)
                .map_err(|_| config_err(key, format!("expected a non-negative integer, got {text:?}"))),
        }
    }

    /// Keys matching `prefix.<suffix>`; marks them used.
    fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let full_prefix = format!("{prefix}.");
        let mut out = Vec::new();
        for (key, (value, used)) in self.entries.iter_mut() {
            if let Some(suffix) = key.strip_prefix(&full_prefix) {
                *used = true;
                out.push((suffix.to_string(), value.clone()));
            }
        }
        out
    }

    fn finish(self) -> Result<()> {
        for (key, (_, used)) in &self.entries {
            if !used {
                return Err(config_err(key, "unknown key"));
            }
        }
        Ok(())
    }
}

fn parse_list<T, E>(key: &str, text: &str, expected: usize) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = E>,
{
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != expected {
        return Err(config_err(
            key,
            format!("expected {expected} comma-separated values, got {}", parts.len()),
        ));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| config_err(key, format!("could not parse {p:?}")))
        })
        .collect()
}

/// Parses and validates an experiment configuration file, applying the
/// documented defaults and resolving `k.value = auto` through the stability
/// bound.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// [`parse_config`] on in-memory text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut raw = RawConfig::parse(text)?;

    let lambda = raw
        .take_f64("material.lambda")?
        .ok_or_else(|| config_err("material.lambda", "required key is missing"))?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(config_err("material.lambda", "must be a positive number"));
    }
    let mu = raw
        .take_f64("material.mu")?
        .ok_or_else(|| config_err("material.mu", "required key is missing"))?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(config_err("material.mu", "must be a positive number"));
    }
    let material = LameParams::new(lambda, mu)?;

    let k_value = raw.take("k.value");
    let k_safety = raw.take_f64("k.safety")?;
    let (stability_mode, k) = match k_value.as_deref() {
        None | Some("auto") => {
            let safety = k_safety.unwrap_or(0.5);
            if !(safety.is_finite() && safety > 0.0 && safety < 1.0) {
                return Err(config_err("k.safety", "must lie strictly between 0 and 1"));
            }
            (
                StabilityMode::Auto { safety },
                select_stability_constant(&material, safety)?,
            )
        }
        Some(text) => {
            if k_safety.is_some() {
                return Err(config_err(
                    "k.safety",
                    "has no effect when k.value is explicit; remove one of the two keys",
                ));
            }
            let value: f64 = text
                .parse()
                .map_err(|_| config_err("k.value", format!("expected `auto` or a number, got {text:?}")))?;
            let max_admissible =
                1.0 / (2.0 * ComplianceTensor::new(material).max_eigenvalue_symmetric());
            if !(value.is_finite() && value > 0.0 && value < max_admissible) {
                return Err(config_err(
                    "k.value",
                    format!("K violates stability condition; max admissible ≈ {max_admissible:.9}"),
                ));
            }
            (StabilityMode::Explicit, value)
        }
    };

    let extents_text = raw.take("grid.extents").unwrap_or_else(|| "1,1,1".into());
    let extents_vec: Vec<f64> = parse_list("grid.extents", &extents_text, 3)?;
    let extents = [extents_vec[0], extents_vec[1], extents_vec[2]];
    let dims_text = raw.take("grid.dims").unwrap_or_else(|| "5,5,5".into());
    let dims_vec: Vec<usize> = parse_list("grid.dims", &dims_text, 3)?;
    let dims = [dims_vec[0], dims_vec[1], dims_vec[2]];
    let gamma0_text = raw
        .take("grid.gamma0_faces")
        .unwrap_or_else(|| "x_min".into());
    let mut tags = [BoundaryTag::Gamma1; 6];
    let mut any_pinned = false;
    for name in gamma0_text.split(',').map(str::trim) {
        let face = Face::from_name(name).ok_or_else(|| {
            config_err(
                "grid.gamma0_faces",
                format!("unknown face {name:?}; expected x_min/x_max/y_min/y_max/z_min/z_max"),
            )
        })?;
        if tags[face.index()] == BoundaryTag::Gamma0 {
            return Err(config_err(
                "grid.gamma0_faces",
                format!("face {name:?} listed twice"),
            ));
        }
        tags[face.index()] = BoundaryTag::Gamma0;
        any_pinned = true;
    }
    if !any_pinned {
        return Err(config_err(
            "grid.gamma0_faces",
            "at least one pinned face is required",
        ));
    }
    let grid = Grid::new(extents, dims, tags)?;

    let loads_preset = raw.take("loads.preset");
    let body_file = raw.take("loads.body_file").map(PathBuf::from);
    let traction_entries = raw.take_prefixed("loads.traction_file");
    let loads = match (loads_preset, body_file, traction_entries.is_empty()) {
        (Some(name), None, true) => {
            let preset = Preset::parse(&name).ok_or_else(|| {
                config_err(
                    "loads.preset",
                    format!("unknown preset {name:?}; expected zero, sine_bump, or ramp"),
                )
            })?;
            LoadSpec::Preset(preset)
        }
        (None, body, _) => {
            let mut tractions = Vec::new();
            for (suffix, value) in traction_entries {
                let face = Face::from_name(&suffix).ok_or_else(|| {
                    config_err(
                        &format!("loads.traction_file.{suffix}"),
                        "unknown face name",
                    )
                })?;
                tractions.push((face, PathBuf::from(value)));
            }
            if body.is_none() && tractions.is_empty() {
                LoadSpec::Preset(Preset::Zero)
            } else {
                LoadSpec::Files {
                    body,
                    tractions,
                }
            }
        }
        (Some(_), _, _) => {
            return Err(config_err(
                "loads.preset",
                "cannot be combined with loads.body_file / loads.traction_file.*",
            ));
        }
    };

    let run_preset = match raw.take("run.preset") {
        None => Preset::SineBump,
        Some(name) => Preset::parse(&name).ok_or_else(|| {
            config_err(
                "run.preset",
                format!("unknown preset {name:?}; expected zero, sine_bump, or ramp"),
            )
        })?,
    };
    let levels = match raw.take("run.levels") {
        None => vec![5, 9, 17],
        Some(text) => {
            let parts: Vec<&str> = text.split(',').map(str::trim).collect();
            let mut levels = Vec::with_capacity(parts.len());
            for p in parts {
                let n: usize = p
                    .parse()
                    .map_err(|_| config_err("run.levels", format!("could not parse {p:?}")))?;
                levels.push(n);
            }
            if levels.len() < 2 {
                return Err(config_err("run.levels", "need at least two levels"));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_err("run.levels", "levels must strictly increase"));
            }
            levels
        }
    };

    let defaults = Tolerances::default();
    let tolerances = Tolerances {
        grad_tol: raw.take_f64("tolerances.grad_tol")?.unwrap_or(defaults.grad_tol),
        gap_tol: raw.take_f64("tolerances.gap_tol")?.unwrap_or(defaults.gap_tol),
        max_iters: raw
            .take_usize("tolerances.max_iters")?
            .unwrap_or(defaults.max_iters),
    };
    if !(tolerances.grad_tol.is_finite() && tolerances.grad_tol > 0.0) {
        return Err(config_err("tolerances.grad_tol", "must be positive"));
    }
    if !(tolerances.gap_tol.is_finite() && tolerances.gap_tol > 0.0) {
        return Err(config_err("tolerances.gap_tol", "must be positive"));
    }
    if tolerances.max_iters == 0 {
        return Err(config_err("tolerances.max_iters", "must be at least 1"));
    }

    let seed = raw.take_u64("seed")?.unwrap_or(0);

    raw.finish()?;

    Ok(ExperimentConfig {
        material,
        stability_mode,
        k,
        grid,
        loads,
        run: RunOptions {
            preset: run_preset,
            levels,
        },
        tolerances,
        seed,
    })
}

impl ExperimentConfig {
    /// Same experiment on different grid dimensions (CLI override). The
    /// extents and boundary tags are kept.
    pub fn with_grid_dims(&self, dims: [usize; 3]) -> Result<Self> {
        let mut tags = [BoundaryTag::Gamma1; 6];
        for face in self.grid.gamma0_faces() {
            tags[face.index()] = BoundaryTag::Gamma0;
        }
        let mut out = self.clone();
        out.grid = Grid::new(self.grid.extents(), dims, tags)?;
        Ok(out)
    }

    /// Builds the loads this experiment runs under. Preset loads are the
    /// manufactured loads of the preset displacement on the configured grid.
    pub fn resolve_loads(&self) -> Result<Loads> {
        match &self.loads {
            LoadSpec::Preset(Preset::Zero) => Ok(Loads::zero(&self.grid)),
            LoadSpec::Preset(preset) => {
                let base = self.model_config(Loads::zero(&self.grid))?;
                let (u0, _) = preset_displacement(*preset, &base)?;
                Ok(manufacture_critical_point(&u0, &base)?.loads)
            }
            LoadSpec::Files { body, tractions } => {
                let mut loads = Loads::zero(&self.grid);
                if let Some(path) = body {
                    loads.body = DisplacementField::read_text(path, &self.grid)?;
                }
                for (face, path) in tractions {
                    if self.grid.tag(*face) != BoundaryTag::Gamma1 {
                        return Err(config_err(
                            &format!("loads.traction_file.{}", face.name()),
                            "face is displacement-pinned",
                        ));
                    }
                    loads.set_traction(*face, read_face_vectors(path, &self.grid, *face)?);
                }
                loads.validate(&self.grid)?;
                Ok(loads)
            }
        }
    }

    /// Assembles the model for given loads.
    pub fn model_config(&self, loads: Loads) -> Result<ModelConfig> {
        ModelConfig::new(
            self.material,
            self.k,
            self.grid.clone(),
            loads,
            self.tolerances.clone(),
        )
    }

    pub fn echo(&self) -> ConfigEcho {
        let loads = match &self.loads {
            LoadSpec::Preset(p) => format!("preset:{}", p.name()),
            LoadSpec::Files { body, tractions } => {
                let mut parts = Vec::new();
                if let Some(path) = body {
                    parts.push(format!("body:{}", path.display()));
                }
                for (face, path) in tractions {
                    parts.push(format!("traction[{}]:{}", face.name(), path.display()));
                }
                format!("files({})", parts.join(", "))
            }
        };
        ConfigEcho {
            lambda: self.material.lambda,
            mu: self.material.mu,
            k: self.k,
            k_mode: self.stability_mode,
            extents: self.grid.extents(),
            dims: self.grid.dims(),
            gamma0_faces: self
                .grid
                .gamma0_faces()
                .iter()
                .map(|f| f.name().to_string())
                .collect(),
            loads,
            run_preset: self.run.preset.name().to_string(),
            run_levels: self.run.levels.clone(),
            grad_tol: self.tolerances.grad_tol,
            gap_tol: self.tolerances.gap_tol,
            max_iters: self.tolerances.max_iters,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = "material.lambda = 1.0\nmaterial.mu = 1.0\n";

    #[test]
    fn minimal_config_applies_documented_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.material.lambda, 1.0);
        assert_eq!(cfg.material.mu, 1.0);
        // auto selection with safety 0.5 at unit Lamé constants
        assert_relative_eq!(cfg.k, 0.5, epsilon = 1e-14);
        assert_eq!(cfg.stability_mode, StabilityMode::Auto { safety: 0.5 });
        assert_eq!(cfg.grid.dims(), [5, 5, 5]);
        assert_eq!(cfg.grid.extents(), [1.0, 1.0, 1.0]);
        assert_eq!(cfg.grid.gamma0_faces(), vec![Face::XMin]);
        assert_eq!(cfg.loads, LoadSpec::Preset(Preset::Zero));
        assert_eq!(cfg.run.preset, Preset::SineBump);
        assert_eq!(cfg.run.levels, vec![5, 9, 17]);
        assert_eq!(cfg.tolerances.grad_tol, 1e-8);
        assert_eq!(cfg.tolerances.gap_tol, 1e-8);
        assert_eq!(cfg.tolerances.max_iters, 20_000);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn nonpositive_lambda_is_rejected_by_key_path() {
        let err = parse_config_str("material.lambda = -1\nmaterial.mu = 1\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "material.lambda"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_required_key_is_reported() {
        let err = parse_config_str("material.lambda = 1\n").unwrap_err();
        match err {
            Error::Config { key, reason } => {
                assert_eq!(key, "material.mu");
                assert!(reason.contains("missing"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn explicit_k_above_stability_bound_is_rejected() {
        let text = format!("{MINIMAL}k.value = 1.5\n");
        let err = parse_config_str(&text).unwrap_err();
        match err {
            Error::Config { key, reason } => {
                assert_eq!(key, "k.value");
                assert!(
                    reason.contains("K violates stability condition; max admissible"),
                    "{reason}"
                );
                // at λ = μ = 1 the bound is 1/(2·λmax(H̄)) = μ = 1
                assert!(reason.contains("1.0"), "{reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        let ok = parse_config_str(&format!("{MINIMAL}k.value = 0.25\n")).unwrap();
        assert_eq!(ok.k, 0.25);
        assert_eq!(ok.stability_mode, StabilityMode::Explicit);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = parse_config_str(&format!("{MINIMAL}materiel.mu = 2\n")).unwrap_err();
        match err {
            Error::Config { key, reason } => {
                assert_eq!(key, "materiel.mu");
                assert!(reason.contains("unknown"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_config_str("material.lambda = 1\nmaterial.lambda = 2\nmaterial.mu = 1\n")
            .unwrap_err();
        match err {
            Error::Config { key, reason } => {
                assert_eq!(key, "material.lambda");
                assert!(reason.contains("duplicate"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_sections_and_lists_parse() {
        let text = "\
# experiment
material.lambda = 2.0   # Lamé first
material.mu = 1.5
k.value = auto
k.safety = 0.25
grid.extents = 1.0, 2.0, 0.5
grid.dims = 5, 7, 9
grid.gamma0_faces = x_min, y_max
run.preset = ramp
run.levels = 3, 5, 9
tolerances.grad_tol = 1e-6
tolerances.gap_tol = 1e-7
tolerances.max_iters = 123
seed = 42
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.grid.dims(), [5, 7, 9]);
        assert_eq!(cfg.grid.extents(), [1.0, 2.0, 0.5]);
        assert_eq!(cfg.grid.gamma0_faces(), vec![Face::XMin, Face::YMax]);
        assert_eq!(cfg.run.preset, Preset::Ramp);
        assert_eq!(cfg.run.levels, vec![3, 5, 9]);
        assert_eq!(cfg.tolerances.max_iters, 123);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.stability_mode, StabilityMode::Auto { safety: 0.25 });
        let back = cfg.echo();
        assert_eq!(back.dims, [5, 7, 9]);
        assert_eq!(back.gamma0_faces, vec!["x_min", "y_max"]);
    }

    #[test]
    fn bad_face_name_and_empty_pin_list_are_rejected() {
        let err =
            parse_config_str(&format!("{MINIMAL}grid.gamma0_faces = x_mid\n")).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "grid.gamma0_faces"));
        let err = parse_config_str(&format!("{MINIMAL}grid.gamma0_faces = x_min, x_min\n"))
            .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "grid.gamma0_faces"));
    }

    #[test]
    fn preset_loads_conflict_with_file_loads() {
        let text = format!("{MINIMAL}loads.preset = zero\nloads.body_file = /tmp/body.txt\n");
        let err = parse_config_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "loads.preset"));
    }

    #[test]
    fn file_loads_read_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(MINIMAL).unwrap();
        let body_path = dir.path().join("body.txt");
        let body = DisplacementField::from_fn(&cfg.grid, |p| p * 0.1);
        body.write_text(&body_path).unwrap();
        let trac_path = dir.path().join("xmax.txt");
        let (n1, n2) = cfg.grid.face_dims(Face::XMax);
        let mut text = String::new();
        for _ in 0..n1 * n2 {
            text.push_str("0.0 0.5 0.0\n");
        }
        std::fs::write(&trac_path, text).unwrap();

        let full = format!(
            "{MINIMAL}loads.body_file = {}\nloads.traction_file.x_max = {}\n",
            body_path.display(),
            trac_path.display()
        );
        let cfg = parse_config_str(&full).unwrap();
        let loads = cfg.resolve_loads().unwrap();
        assert_relative_eq!(loads.body.linf(), body.linf());
        let trac = loads.traction(Face::XMax).unwrap();
        assert_eq!(trac.len(), n1 * n2);
        assert_eq!(trac[0].y, 0.5);
        // unlisted traction faces default to zero samples
        assert_eq!(
            loads
                .traction(Face::YMin)
                .unwrap()
                .iter()
                .map(|v| v.amax())
                .fold(0.0, f64::max),
            0.0
        );
    }

    #[test]
    fn preset_loads_resolve_to_manufactured_loads() {
        let text = format!("{MINIMAL}loads.preset = sine_bump\n");
        let cfg = parse_config_str(&text).unwrap();
        let loads = cfg.resolve_loads().unwrap();
        assert!(loads.body.linf() > 0.0);
        loads.validate(&cfg.grid).unwrap();
    }

    #[test]
    fn grid_override_keeps_extents_and_tags() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let finer = cfg.with_grid_dims([9, 9, 9]).unwrap();
        assert_eq!(finer.grid.dims(), [9, 9, 9]);
        assert_eq!(finer.grid.extents(), cfg.grid.extents());
        assert_eq!(finer.grid.gamma0_faces(), cfg.grid.gamma0_faces());
    }
}
