//! Transmission sweeps, N-scaling studies and their file formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::evolution::{
    optimize_sensor, AngleMode, DeConfig, FreeParameterSpec, OptimizeError, SensorOptimum,
};
use crate::lattice::{
    propagate, run_sensor, single_pass_transmission, staggered_schedule, AuxiliaryInput,
    ConfigError, SensorConfig, SidePolicy,
};
use crate::metrology::{fisher_matrix, quantum_advantage, MetrologyError, DEFAULT_STEP};
use crate::parallel::Execution;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(#[from] ConfigDiagnostic),
    #[error(transparent)]
    Sensor(#[from] ConfigError),
    #[error(transparent)]
    Metrology(#[from] MetrologyError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    pub fn is_config_error(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

/// Location-aware problem with an input file.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}", self.render())]
pub struct ConfigDiagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigDiagnostic {
    fn render(&self) -> String {
        let mut s = String::new();
        if let Some(line) = self.line {
            s.push_str(&format!("line {line}"));
            if let Some(col) = self.column {
                s.push_str(&format!(", column {col}"));
            }
            s.push_str(": ");
        }
        if let Some(field) = &self.field {
            s.push_str(&format!("`{field}`: "));
        }
        s.push_str(&self.message);
        s
    }

    fn at_field(text: &str, field: &str, message: String) -> Self {
        let key = format!("\"{field}\"");
        let line = text.lines().position(|l| l.contains(&key)).map(|i| i + 1);
        Self {
            line,
            column: None,
            field: Some(field.to_string()),
            message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    One,
    Two,
}

impl Sides {
    pub fn policy(self) -> SidePolicy {
        match self {
            Sides::One => SidePolicy::LeftOnly,
            Sides::Two => SidePolicy::Bidirectional,
        }
    }
}

/// One kind of input light: which ends inject, how hard it is squeezed, and
/// how many pulses go in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVariant {
    pub sides: Sides,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub pulses: Option<usize>,
    #[serde(default)]
    pub name: Option<String>,
}

impl InputVariant {
    pub fn pulse_count(&self) -> usize {
        self.pulses.unwrap_or(match self.sides {
            Sides::One => 1,
            Sides::Two => 2,
        })
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let sides = match self.sides {
                Sides::One => "one",
                Sides::Two => "two",
            };
            format!("{sides}_m{}_r{}", self.pulse_count(), self.r)
        })
    }

    pub fn is_classical(&self) -> bool {
        self.r == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    TransmissionSweep,
    ScalingStudy,
}

fn default_k_max() -> usize {
    7
}
fn default_alpha() -> f64 {
    3e4
}
fn default_target() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

/// Experiment description read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub mode: StudyMode,
    /// Number of phases for a transmission sweep.
    #[serde(default)]
    pub n_phases: Option<usize>,
    /// Uniform reflector transmissions to visit.
    #[serde(default)]
    pub transmissions: Vec<f64>,
    /// Phase counts for a scaling study.
    #[serde(default)]
    pub n_values: Vec<usize>,
    pub variants: Vec<InputVariant>,
    /// Coherent amplitude of each pulse.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub auxiliary_input: AuxiliaryInput,
    #[serde(default)]
    pub free: FreeParameterSpec,
    #[serde(default)]
    pub de: DeConfig,
    /// Per-phase variance the scaling study solves the photon number for.
    #[serde(default = "default_target")]
    pub target_variance: f64,
    /// Seed each transmission point with the optimum of the previous one.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub output: Option<String>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.variants.is_empty() {
            return Err(("variants", "at least one input variant is required".into()));
        }
        for v in &self.variants {
            if !(v.r >= 0.0 && v.r.is_finite()) {
                return Err((
                    "variants",
                    format!("squeezing r = {} must be finite and nonnegative", v.r),
                ));
            }
            if v.pulse_count() == 0 {
                return Err(("variants", "pulses must be at least 1".into()));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(("alpha", format!("alpha = {} must be positive", self.alpha)));
        }
        if self.k_max == 0 {
            return Err(("k_max", "k_max must be at least 1".into()));
        }
        let (lo, hi) = self.free.transmission_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err((
                "free",
                "transmission_bounds must satisfy 0 < lower < upper < 1".into(),
            ));
        }
        match self.mode {
            StudyMode::TransmissionSweep => {
                match self.n_phases {
                    Some(n) if n >= 1 => {}
                    _ => {
                        return Err(("n_phases", "a transmission sweep needs n_phases ≥ 1".into()))
                    }
                }
                if self.transmissions.is_empty() {
                    return Err(("transmissions", "the transmission grid is empty".into()));
                }
                if let Some(t) = self
                    .transmissions
                    .iter()
                    .find(|t| !(**t > 0.0 && **t < 1.0))
                {
                    return Err(("transmissions", format!("T = {t} is outside (0, 1)")));
                }
            }
            StudyMode::ScalingStudy => {
                if self.n_values.is_empty() || self.n_values.contains(&0) {
                    return Err((
                        "n_values",
                        "n_values must be a nonempty list of positive integers".into(),
                    ));
                }
                if self.variants.iter().any(|v| !v.is_classical()) {
                    return Err((
                        "variants",
                        "the scaling study uses classical light (r = 0)".into(),
                    ));
                }
                if !(self.target_variance > 0.0) {
                    return Err(("target_variance", "target_variance must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Any input file the CLI accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedConfig {
    Sensor(SensorConfig),
    Sweep(SweepSpec),
}

/// Parses and checks a config document. Experiment specs are recognised by
/// their `mode` key.
pub fn validate_config_text(text: &str) -> Result<LoadedConfig, ConfigDiagnostic> {
    let syntax = |e: serde_json::Error| ConfigDiagnostic {
        line: Some(e.line()),
        column: Some(e.column()),
        field: None,
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(syntax)?;
    if value.get("mode").is_some() {
        let spec: SweepSpec = serde_json::from_str(text).map_err(syntax)?;
        spec.validate()
            .map_err(|(field, msg)| ConfigDiagnostic::at_field(text, field, msg))?;
        Ok(LoadedConfig::Sweep(spec))
    } else {
        let config: SensorConfig = serde_json::from_str(text).map_err(syntax)?;
        config
            .validate()
            .map_err(|e| ConfigDiagnostic::at_field(text, e.field(), e.to_string()))?;
        Ok(LoadedConfig::Sensor(config))
    }
}

pub fn validate_config(path: &Path) -> Result<LoadedConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| {
        ExperimentError::Config(ConfigDiagnostic {
            line: None,
            column: None,
            field: None,
            message: format!("cannot read {}: {e}", path.display()),
        })
    })?;
    Ok(validate_config_text(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Divergent,
}

impl PointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Divergent => "divergent",
        }
    }
}

/// One optimized point of a transmission sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n_phases: usize,
    pub transmission: f64,
    pub variant: String,
    pub sides: Sides,
    pub pulses: usize,
    pub r: f64,
    pub total_variance: Option<f64>,
    pub per_phase_variances: Option<Vec<f64>>,
    pub q: Option<f64>,
    pub truncation_loss: f64,
    pub photons_in: f64,
    pub de_generations: usize,
    pub status: PointStatus,
    /// Optimized sensor, kept for the sidecar.
    #[serde(skip)]
    pub config: Option<SensorConfig>,
}

/// Free parameters actually searched for a variant; squeezing angles mean
/// nothing without squeezing.
fn free_for(spec: &FreeParameterSpec, r: f64) -> FreeParameterSpec {
    let mut f = spec.clone();
    if r == 0.0 {
        f.chis = AngleMode::Fixed;
    }
    f
}

fn point_seed(root: u64, index: usize) -> u64 {
    root.wrapping_add(index as u64)
}

struct Chain {
    previous: Option<SensorConfig>,
}

impl Chain {
    fn run(
        &mut self,
        base: &SensorConfig,
        free: &FreeParameterSpec,
        de: &DeConfig,
        warm: bool,
    ) -> Result<Option<SensorOptimum>, ExperimentError> {
        let warm_starts: Vec<SensorConfig> = match (&self.previous, warm) {
            (Some(p), true) => {
                let mut w = p.clone();
                w.transmissions.clone_from(&base.transmissions);
                vec![w]
            }
            _ => vec![],
        };
        match optimize_sensor(base, free, de, &warm_starts) {
            Ok(opt) => {
                self.previous = Some(opt.config.clone());
                Ok(Some(opt))
            }
            Err(OptimizeError::NoDistinguishableDesign) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Optimizes every (variant, T) point. Variants run concurrently; each
/// variant walks its T grid in order so points can warm-start. A squeezed
/// variant is paired with a classical run of the same schedule and photon
/// number to give `Q`.
pub fn run_transmission_sweep(
    spec: &SweepSpec,
    root_seed: u64,
    execution: Execution,
) -> Result<Vec<SweepRecord>, ExperimentError> {
    spec.validate()
        .map_err(|(field, message)| ConfigDiagnostic {
            line: None,
            column: None,
            field: Some(field.into()),
            message,
        })?;
    let n = spec.n_phases.unwrap_or(1);
    let grid = &spec.transmissions;
    let per_variant = execution.map_range(spec.variants.len(), |vi| {
        let variant = &spec.variants[vi];
        let m = variant.pulse_count();
        let policy = variant.sides.policy();
        let free = free_for(&spec.free, variant.r);
        let classical_free = free_for(&spec.free, 0.0);
        let mut chain = Chain { previous: None };
        let mut twin_chain = Chain { previous: None };
        let mut rows = Vec::with_capacity(grid.len());
        for (ti, &t) in grid.iter().enumerate() {
            let seed = point_seed(root_seed, vi * grid.len() + ti);
            let de = DeConfig {
                seed,
                execution,
                ..spec.de.clone()
            };
            let mut base = SensorConfig::uniform(
                n,
                t,
                spec.k_max,
                staggered_schedule(n, m, policy, spec.alpha, variant.r, &[], &[])?,
            );
            base.auxiliary_input = spec.auxiliary_input;
            let photons_in = base.input_photons();
            let truncation_loss = propagate(&base, false)?.truncation_loss();
            let opt = chain.run(&base, &free, &de, spec.warm_start)?;

            let q = if variant.is_classical() {
                None
            } else {
                let alpha_c = (photons_in / m as f64).sqrt();
                let twin_base = SensorConfig::uniform(
                    n,
                    t,
                    spec.k_max,
                    staggered_schedule(n, m, policy, alpha_c, 0.0, &[], &[])?,
                );
                let twin = twin_chain.run(&twin_base, &classical_free, &de, spec.warm_start)?;
                match (&twin, &opt) {
                    (Some(c), Some(qo)) => {
                        quantum_advantage(c.fisher.total_variance, qo.fisher.total_variance).ok()
                    }
                    _ => None,
                }
            };
            let (status, total, per_phase, generations, config) = match opt {
                Some(o) => (
                    PointStatus::Ok,
                    Some(o.fisher.total_variance),
                    Some(o.fisher.crb_variances.clone()),
                    o.search.generations_run,
                    Some(o.config),
                ),
                None => (PointStatus::Divergent, None, None, 0, None),
            };
            rows.push(SweepRecord {
                n_phases: n,
                transmission: t,
                variant: variant.label(),
                sides: variant.sides,
                pulses: m,
                r: variant.r,
                total_variance: total,
                per_phase_variances: per_phase,
                q: if status == PointStatus::Ok { q } else { None },
                truncation_loss,
                photons_in,
                de_generations: generations,
                status,
                config,
            });
        }
        Ok::<_, ExperimentError>(rows)
    });
    let mut records = Vec::with_capacity(grid.len() * spec.variants.len());
    for rows in per_variant {
        records.extend(rows?);
    }
    Ok(records)
}

/// One N of a scaling study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub n_phases: usize,
    pub transmission: Option<f64>,
    pub single_pass_transmission: f64,
    /// Share of detected photons leaving through the far end.
    pub far_end_fraction: f64,
    pub photons_in: f64,
    pub total_variance: Option<f64>,
    pub required_photons: Option<f64>,
    pub de_generations: usize,
    pub status: PointStatus,
    #[serde(skip)]
    pub config: Option<SensorConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln N, ln y)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, ExperimentError> {
    if points.len() < 3 {
        return Err(ExperimentError::Runtime(format!(
            "power-law fit needs 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(ExperimentError::Runtime(
            "power-law fit needs positive data".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ExperimentError::Runtime(
            "power-law fit needs at least two distinct N".into(),
        ));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - exponent * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(PowerLawFit {
        exponent,
        prefactor: intercept.exp(),
        r_squared,
    })
}

/// Check of the analytic photon scaling at one N with a direct evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub n_phases: usize,
    pub photons: f64,
    pub predicted_mean_variance: f64,
    pub direct_mean_variance: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub records: Vec<ScalingRecord>,
    pub completed_n: Vec<usize>,
    pub skipped_n: Vec<usize>,
    pub fit: Option<PowerLawFit>,
    pub check: Option<ScalingCheck>,
    /// Mean optimal single-pass transmission over the three largest N.
    pub large_n_single_pass: Option<f64>,
    pub reference_exponent: f64,
    pub reference_single_pass: f64,
}

/// Finds, for each N, the uniform T minimizing the total variance, then the
/// photon number that brings the mean per-phase variance to the target.
/// Classical variance is exactly inverse in photon number, so one optimized
/// point per N is rescaled; one N is re-evaluated directly as a check.
pub fn run_scaling_study(
    spec: &SweepSpec,
    root_seed: u64,
    execution: Execution,
    budget: Option<Duration>,
) -> Result<ScalingReport, ExperimentError> {
    spec.validate()
        .map_err(|(field, message)| ConfigDiagnostic {
            line: None,
            column: None,
            field: Some(field.into()),
            message,
        })?;
    let started = Instant::now();
    let variant = &spec.variants[0];
    let m = variant.pulse_count();
    let free = FreeParameterSpec {
        uniform_transmission: true,
        ..free_for(&spec.free, 0.0)
    };
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut last_t = 0.5;
    for (index, &n) in spec.n_values.iter().enumerate() {
        if budget.is_some_and(|b| started.elapsed() > b) {
            skipped.push(n);
            continue;
        }
        let de = DeConfig {
            seed: point_seed(root_seed, index),
            execution,
            ..spec.de.clone()
        };
        let pulses = staggered_schedule(n, m, variant.sides.policy(), spec.alpha, 0.0, &[], &[])?;
        let mut base = SensorConfig::uniform(n, last_t, spec.k_max, pulses);
        base.auxiliary_input = spec.auxiliary_input;
        let record = match optimize_sensor(&base, &free, &de, &[]) {
            Ok(opt) => {
                let out = run_sensor(&opt.config)?;
                let mean_var = opt.fisher.total_variance / n as f64;
                let t = opt.config.transmissions.first().copied();
                if let Some(t) = t {
                    last_t = t;
                }
                ScalingRecord {
                    n_phases: n,
                    transmission: t,
                    single_pass_transmission: single_pass_transmission(&opt.config),
                    far_end_fraction: out.far_end_fraction(),
                    photons_in: out.input_photons,
                    total_variance: Some(opt.fisher.total_variance),
                    required_photons: Some(out.input_photons * mean_var / spec.target_variance),
                    de_generations: opt.search.generations_run,
                    status: PointStatus::Ok,
                    config: Some(opt.config),
                }
            }
            Err(OptimizeError::NoDistinguishableDesign) => ScalingRecord {
                n_phases: n,
                transmission: None,
                single_pass_transmission: single_pass_transmission(&base),
                far_end_fraction: 0.0,
                photons_in: base.input_photons(),
                total_variance: None,
                required_photons: None,
                de_generations: 0,
                status: PointStatus::Divergent,
                config: None,
            },
            Err(e) => return Err(e.into()),
        };
        records.push(record);
    }

    let ok: Vec<&ScalingRecord> = records
        .iter()
        .filter(|r| r.status == PointStatus::Ok)
        .collect();
    let points: Vec<(f64, f64)> = ok
        .iter()
        .filter_map(|r| r.required_photons.map(|p| (r.n_phases as f64, p)))
        .collect();
    let fit = if points.len() >= 3 {
        fit_power_law(&points).ok()
    } else {
        None
    };
    let large_n_single_pass = if ok.len() >= 3 {
        Some(
            ok[ok.len() - 3..]
                .iter()
                .map(|r| r.single_pass_transmission)
                .sum::<f64>()
                / 3.0,
        )
    } else {
        None
    };

    let check = match ok.get(ok.len().saturating_sub(1) / 2) {
        Some(r) => {
            let config = r.config.as_ref().expect("ok records keep their config");
            let photons = r.required_photons.unwrap_or(r.photons_in);
            let scale = (photons / r.photons_in).sqrt();
            let mut scaled = config.clone();
            scaled.pulses.iter_mut().for_each(|p| p.alpha *= scale);
            let direct = fisher_matrix(&scaled, DEFAULT_STEP)?.total_variance / r.n_phases as f64;
            Some(ScalingCheck {
                n_phases: r.n_phases,
                photons,
                predicted_mean_variance: spec.target_variance,
                direct_mean_variance: direct,
                relative_error: (direct / spec.target_variance - 1.0).abs(),
            })
        }
        None => None,
    };

    Ok(ScalingReport {
        completed_n: records.iter().map(|r| r.n_phases).collect(),
        records,
        skipped_n: skipped,
        fit,
        check,
        large_n_single_pass,
        reference_exponent: 1.19,
        reference_single_pass: 0.06,
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<fs::File, ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv(
    path: &Path,
    header_line: Option<&str>,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), ExperimentError> {
    let mut file = create(path)?;
    if let Some(h) = header_line {
        writeln!(file, "# {h}").map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub const SWEEP_COLUMNS: [&str; 13] = [
    "n_phases",
    "transmission",
    "variant",
    "sides",
    "pulses",
    "r",
    "total_variance",
    "per_phase_variances",
    "q",
    "truncation_loss",
    "photons_in",
    "de_generations",
    "status",
];

pub const SCALING_COLUMNS: [&str; 9] = [
    "n_phases",
    "transmission",
    "single_pass_transmission",
    "far_end_fraction",
    "photons_in",
    "total_variance",
    "required_photons",
    "de_generations",
    "status",
];

/// Writes sweep rows; `header_line` becomes a leading `# ...` comment.
pub fn write_sweep_csv(
    path: &Path,
    records: &[SweepRecord],
    header_line: Option<&str>,
) -> Result<(), ExperimentError> {
    write_csv(
        path,
        header_line,
        &SWEEP_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.n_phases.to_string(),
                num(r.transmission),
                r.variant.clone(),
                match r.sides {
                    Sides::One => "one".into(),
                    Sides::Two => "two".into(),
                },
                r.pulses.to_string(),
                num(r.r),
                opt_num(r.total_variance),
                r.per_phase_variances
                    .as_ref()
                    .map(|v| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";"))
                    .unwrap_or_default(),
                opt_num(r.q),
                num(r.truncation_loss),
                num(r.photons_in),
                r.de_generations.to_string(),
                r.status.as_str().into(),
            ]
        }),
    )
}

pub fn write_scaling_csv(
    path: &Path,
    records: &[ScalingRecord],
    header_line: Option<&str>,
) -> Result<(), ExperimentError> {
    write_csv(
        path,
        header_line,
        &SCALING_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.n_phases.to_string(),
                opt_num(r.transmission),
                num(r.single_pass_transmission),
                num(r.far_end_fraction),
                num(r.photons_in),
                opt_num(r.total_variance),
                opt_num(r.required_photons),
                r.de_generations.to_string(),
                r.status.as_str().into(),
            ]
        }),
    )
}

/// `results.csv` -> `results.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    if csv_path.extension().is_some_and(|e| e == "json") {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    } else {
        csv_path.with_extension("json")
    }
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), ExperimentError> {
    let mut file = create(path)?;
    let text =
        serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    writeln!(file, "{text}").map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sweep_sidecar(
    spec: &SweepSpec,
    seed: u64,
    records: &[SweepRecord],
    generated: Option<&str>,
) -> serde_json::Value {
    let points: Vec<serde_json::Value> = records
        .iter()
        .map(|r| json!({ "record": r, "optimized_config": r.config }))
        .collect();
    let mut v =
        json!({ "kind": "transmission_sweep", "seed": seed, "spec": spec, "points": points });
    if let Some(g) = generated {
        v["generated"] = json!(g);
    }
    v
}

pub fn scaling_sidecar(
    spec: &SweepSpec,
    seed: u64,
    report: &ScalingReport,
    generated: Option<&str>,
) -> serde_json::Value {
    let configs: Vec<serde_json::Value> = report
        .records
        .iter()
        .map(|r| json!({ "n_phases": r.n_phases, "optimized_config": r.config }))
        .collect();
    let mut v = json!({
        "kind": "scaling_study",
        "seed": seed,
        "spec": spec,
        "report": report,
        "configs": configs,
    });
    if let Some(g) = generated {
        v["generated"] = json!(g);
    }
    v
}
