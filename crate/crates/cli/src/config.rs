//! TOML run configuration. Frequencies and rates are in units of ω_m; the
//! optional `[params.pump]` block is SI.

use std::path::{Path, PathBuf};

use optomech::fock::TwoModeSpace;
use optomech::model::SystemParams;
use optomech::normal_modes::stability_check;
use optomech::otto::{validate_timescales, CheckStatus, CycleConfig, StepPolicy, TimescaleReport};
use optomech::squeezed_bath::Frame;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Spectrum,
    Cycle,
    Sweep,
    Bath,
    Validate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Evenly spaced grid from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|k| if k + 1 == self.points { self.max } else { self.min + k as f64 * step }).collect()
    }

    fn check(&self, name: &str, errors: &mut Vec<String>) {
        if !(self.min.is_finite() && self.max.is_finite()) {
            errors.push(format!("{name}: bounds must be finite"));
        } else if self.points < 2 || !(self.max > self.min) {
            errors.push(format!("{name}: axis must be strictly increasing (min < max, points >= 2)"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub delta: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSection {
    pub delta_i: f64,
    pub delta_f: f64,
    pub tau: [f64; 4],
    pub cutoffs: TwoModeSpace,
    #[serde(default)]
    pub steps: StepPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub delta_i: f64,
    pub delta_f: Axis,
    pub g: Axis,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_spacing() -> f64 {
    0.5
}

fn rotating() -> Frame {
    Frame::Rotating
}

/// Effective single-mode evolution of polariton B at a fixed detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    pub delta: f64,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_spacing")]
    pub sample_spacing: f64,
    /// Single-mode Fock cutoff; defaults to the smallest accepted one.
    #[serde(default)]
    pub cutoff: Option<usize>,
    #[serde(default = "rotating")]
    pub frame: Frame,
    /// Mean population of the thermal initial state.
    #[serde(default)]
    pub initial_population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir(), format: Format::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub params: SystemParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<CycleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn cycle_config(&self) -> Option<CycleConfig> {
        self.cycle.as_ref().map(|c| CycleConfig {
            delta_i: c.delta_i,
            delta_f: c.delta_f,
            tau: c.tau,
            params: self.params.clone(),
            cutoffs: c.cutoffs,
            steps: c.steps,
            enforce_hierarchy: true,
        })
    }
}

/// A parsed configuration with the warnings raised while validating it.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub timescales: Option<TimescaleReport>,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

fn stability(label: &str, delta: f64, g: f64, errors: &mut Vec<String>) {
    if !stability_check(delta, g) {
        errors.push(format!(
            "{label} = {delta} is mechanically unstable: stability requires delta < -4 g^2 = {}",
            -4.0 * g * g
        ));
    }
}

/// Checks every physics invariant and reports all violations together.
/// With `strict`, warnings count as errors.
pub fn validate(config: RunConfig, strict: bool) -> Result<Validated, CliError> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut timescales = None;
    if let Err(e) = config.params.validate() {
        errors.push(format!("params: {e}"));
    }
    let g = config.params.g;
    let missing = |name: &str| format!("scenario needs a [{name}] section");
    match config.scenario {
        Scenario::Spectrum => match &config.spectrum {
            Some(s) => s.delta.check("spectrum.delta", &mut errors),
            None => errors.push(missing("spectrum")),
        },
        Scenario::Cycle | Scenario::Validate => match config.cycle_config() {
            Some(cfg) => {
                stability("cycle.delta_i", cfg.delta_i, g, &mut errors);
                stability("cycle.delta_f", cfg.delta_f, g, &mut errors);
                if let Err(e) = cfg.validate() {
                    if !matches!(e, optomech::Error::Unstable { .. }) {
                        errors.push(format!("cycle: {e}"));
                    }
                }
                match validate_timescales(&cfg) {
                    Ok(report) => {
                        warnings.extend(report.warnings().map(|c| format!("timescale hierarchy tight: {} (ratio {:.3})", c.relation, c.ratio)));
                        timescales = Some(report);
                    }
                    Err(e) => errors.push(e.to_string()),
                }
            }
            None => errors.push(missing("cycle")),
        },
        Scenario::Sweep => match &config.sweep {
            Some(s) => {
                s.delta_f.check("sweep.delta_f", &mut errors);
                s.g.check("sweep.g", &mut errors);
                if s.g.min < 0.0 {
                    errors.push("sweep.g: couplings must be >= 0".into());
                }
                if s.delta_f.max >= 0.0 {
                    errors.push("sweep.delta_f: grid must stay red-detuned (max < 0)".into());
                }
                stability("sweep.delta_i", s.delta_i, s.g.max, &mut errors);
            }
            None => errors.push(missing("sweep")),
        },
        Scenario::Bath => match &config.bath {
            Some(b) => {
                stability("bath.delta", b.delta, g, &mut errors);
                if !(b.duration > 0.0 && b.dt > 0.0 && b.sample_spacing > 0.0) {
                    errors.push("bath: duration, dt and sample_spacing must be positive".into());
                }
                if b.initial_population < 0.0 {
                    errors.push("bath.initial_population must be >= 0".into());
                }
                if stability_check(b.delta, g) && config.params.validate().is_ok() {
                    match crate::scenarios::resolve_bath(&config) {
                        Ok((bath, cutoff, _)) if cutoff < bath.min_cutoff() => errors.push(format!(
                            "bath.cutoff = {cutoff} is below the required {} for N_B = {}",
                            bath.min_cutoff(),
                            bath.nbar_b
                        )),
                        Ok(_) => {}
                        Err(e) => errors.push(format!("bath: {e}")),
                    }
                }
            }
            None => errors.push(missing("bath")),
        },
    }
    if let Err(e) = check_writable(&config.output.dir) {
        errors.push(e);
    }
    if strict {
        errors.extend(warnings.iter().map(|w| format!("(strict) {w}")));
    }
    if errors.is_empty() {
        Ok(Validated { config, warnings, timescales })
    } else {
        Err(CliError::Validation(errors))
    }
}

fn check_writable(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("output directory {}: {e}", dir.display()))?;
    let probe = dir.join(".optomech-write-probe");
    std::fs::write(&probe, b"").map_err(|e| format!("output directory {} is not writable: {e}", dir.display()))?;
    std::fs::remove_file(&probe).map_err(|e| format!("output directory {}: {e}", dir.display()))
}

impl Validated {
    pub fn hierarchy_status(&self) -> Vec<(String, f64, CheckStatus)> {
        self.timescales
            .as_ref()
            .map(|r| r.checks.iter().map(|c| (c.relation.clone(), c.ratio, c.status)).collect())
            .unwrap_or_default()
    }
}
