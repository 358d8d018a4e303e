//! Run configuration: TOML schema, presets, and sweep plumbing.
//!
//! A configuration names exactly one model source —
//!
//! * `[system]`: the laboratory description in SI units (cavity geometry,
//!   mirror properties, drive tones in watts), converted through
//!   [`crate::params::derive_constants`];
//! * `[constants]`: the derived rates and couplings directly, for
//!   dimensionless desk-scale work;
//! * `[synthetic_drift]`: coupling and detuning harmonics G_n, Δ_n
//!   verbatim, bypassing the classical orbit entirely —
//!
//! plus solver, output, and optional sweep sections. Three presets ship
//! embedded in the binary and as files under `presets/`:
//! `paper-fig2` (laboratory scale, spectral mode), `desk-scale`
//! (dimensionless cross-solver workhorse, runs both solvers), and
//! `deep-rwa` (synthetic drift deep in the rotating-wave regime).

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{DriveTone, SystemParams};

/// Names of the configurations shipped with the crate.
pub const PRESET_NAMES: [&str; 3] = ["paper-fig2", "desk-scale", "deep-rwa"];

const PRESET_PAPER_FIG2: &str = include_str!("../../../presets/paper-fig2.toml");
const PRESET_DESK_SCALE: &str = include_str!("../../../presets/desk-scale.toml");
const PRESET_DEEP_RWA: &str = include_str!("../../../presets/deep-rwa.toml");

/// Which covariance solver(s) a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Periodic-coefficient integration of the covariance flow.
    TimeDomain,
    /// Sideband-truncated frequency-domain solve.
    Spectral,
    /// Both, plus a component-by-component comparison.
    Both,
}

impl std::fmt::Display for SolverMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverMode::TimeDomain => "time_domain",
            SolverMode::Spectral => "spectral",
            SolverMode::Both => "both",
        })
    }
}

/// One drive tone of the `[system]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveToneConfig {
    /// Sideband index n of the tone (frequency ω_l + nΩ).
    pub harmonic: i32,
    /// Optical power, W.
    pub power: f64,
    /// Phase of the tone, rad.
    #[serde(default)]
    pub phase: f64,
}

/// Laboratory description, SI units. Field-for-field the shape of
/// [`SystemParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Cavity length, m.
    pub cavity_length: f64,
    /// Cavity finesse.
    pub finesse: f64,
    /// Mechanical angular frequency, rad/s.
    pub omega_m: f64,
    /// Mechanical quality factor.
    pub quality: f64,
    /// Effective mirror mass, kg.
    pub mass: f64,
    /// Mechanical bath temperature, K.
    pub temperature: f64,
    /// Laser carrier wavelength, m.
    pub wavelength: f64,
    /// Cavity–laser detuning at zero coupling, rad/s.
    pub delta0: f64,
    /// Amplitude-modulation angular frequency, rad/s.
    pub omega_mod: f64,
    /// Drive tones.
    pub drive: Vec<DriveToneConfig>,
}

impl SystemSection {
    /// The equivalent [`SystemParams`] value.
    pub fn to_params(&self) -> SystemParams {
        SystemParams {
            cavity_length: self.cavity_length,
            finesse: self.finesse,
            omega_m: self.omega_m,
            quality: self.quality,
            mass: self.mass,
            temperature: self.temperature,
            wavelength: self.wavelength,
            delta0: self.delta0,
            omega_mod: self.omega_mod,
            drive: self
                .drive
                .iter()
                .map(|t| DriveTone { harmonic: t.harmonic, power: t.power, phase: t.phase })
                .collect(),
        }
    }
}

/// Derived rates and couplings given directly (desk-scale work).
/// Units are whatever consistent system the caller chooses; the solvers
/// only see ratios and products of these rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    /// Cavity amplitude decay rate.
    pub kappa: f64,
    /// Mechanical damping rate.
    pub gamma_m: f64,
    /// Mechanical angular frequency.
    pub omega_m: f64,
    /// Single-photon optomechanical coupling.
    pub g0: f64,
    /// Thermal phonon occupation.
    pub nbar: f64,
    /// Static detuning Δ₀.
    pub delta0: f64,
    /// Modulation angular frequency Ω.
    pub omega_mod: f64,
    /// Drive amplitudes as `[n, re, im]` triples.
    pub drive_amps: Vec<(i32, f64, f64)>,
}

/// Coupling and detuning harmonics given directly; no classical orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDriftSection {
    /// Mechanical angular frequency.
    pub omega_m: f64,
    /// Mechanical damping rate.
    pub gamma_m: f64,
    /// Cavity amplitude decay rate.
    pub kappa: f64,
    /// Modulation angular frequency Ω.
    pub omega_mod: f64,
    /// Thermal phonon occupation feeding the diffusion matrix.
    pub nbar: f64,
    /// Coupling harmonics G_n as `[n, re, im]` triples.
    pub g: Vec<(i32, f64, f64)>,
    /// Detuning harmonics Δ_n as `[n, re, im]` triples; must describe a
    /// real-valued Δ(t).
    pub delta: Vec<(i32, f64, f64)>,
}

fn default_j_max() -> usize {
    6
}
fn default_n_max() -> usize {
    4
}
fn default_n_sidebands() -> usize {
    2
}
fn default_rel_tol() -> f64 {
    1e-6
}
fn default_samples() -> usize {
    64
}

/// Solver selection and numerical knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Which solver(s) to run.
    pub mode: SolverMode,
    /// Perturbation order of the classical orbit expansion.
    pub j_max: usize,
    /// Harmonic window |n| ≤ n_max of the orbit and drift expansions.
    pub n_max: usize,
    /// Sideband truncation N of the spectral solver.
    pub n_sidebands: usize,
    /// Relative tolerance of the spectral quadrature.
    pub rel_tol: f64,
    /// Time-domain horizon, in the model's time unit. `None` picks a
    /// settling horizon from the Floquet analysis.
    pub t_end: Option<f64>,
    /// Time-domain integration step override.
    pub dt: Option<f64>,
    /// Metric samples per modulation period.
    pub samples: usize,
    /// Periodicity defect accepted when extracting Fourier components
    /// from the time-domain solution.
    #[serde(default = "SolverSection::default_extraction_tol")]
    pub extraction_tol: f64,
}

impl SolverSection {
    fn default_extraction_tol() -> f64 {
        1e-3
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            mode: SolverMode::Spectral,
            j_max: default_j_max(),
            n_max: default_n_max(),
            n_sidebands: default_n_sidebands(),
            rel_tol: default_rel_tol(),
            t_end: None,
            dt: None,
            samples: default_samples(),
            extraction_tol: Self::default_extraction_tol(),
        }
    }
}

/// Where result files go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory all files of a run are written into.
    pub directory: String,
    /// Prefix of every file name.
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: "runs".into(), prefix: "run".into() }
    }
}

fn default_workers() -> usize {
    1
}

/// A one-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted path of the swept parameter, e.g. `constants.g0` or
    /// `system.drive.1.power` (see [`RunConfig::with_swept_value`]).
    pub parameter: String,
    /// Values the parameter takes, one run per value.
    pub values: Vec<f64>,
    /// Maximum number of sweep points running in parallel.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Laboratory model source.
    pub system: Option<SystemSection>,
    /// Direct-constants model source.
    pub constants: Option<ConstantsSection>,
    /// Synthetic-drift model source.
    pub synthetic_drift: Option<SyntheticDriftSection>,
    /// Solver settings.
    #[serde(default)]
    pub solver: SolverSection,
    /// Output location.
    #[serde(default)]
    pub output: OutputSection,
    /// Optional parameter sweep.
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a TOML file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Loads one of the embedded presets (see [`PRESET_NAMES`]).
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "paper-fig2" => PRESET_PAPER_FIG2,
            "desk-scale" => PRESET_DESK_SCALE,
            "deep-rwa" => PRESET_DEEP_RWA,
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; available: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Self::from_toml_str(text)
    }

    /// Serializes the configuration back to TOML (the manifest echo).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks cross-field invariants beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        let sources = [
            self.system.is_some(),
            self.constants.is_some(),
            self.synthetic_drift.is_some(),
        ]
        .iter()
        .filter(|present| **present)
        .count();
        if sources != 1 {
            return Err(Error::Config(format!(
                "exactly one of [system], [constants], [synthetic_drift] must be present, \
                 found {sources}"
            )));
        }
        let s = &self.solver;
        if !(s.rel_tol.is_finite() && s.rel_tol > 0.0) {
            return Err(Error::Config("solver.rel_tol must be positive".into()));
        }
        if !(s.extraction_tol.is_finite() && s.extraction_tol > 0.0) {
            return Err(Error::Config("solver.extraction_tol must be positive".into()));
        }
        if s.samples < 4 {
            return Err(Error::Config("solver.samples must be at least 4".into()));
        }
        if let Some(t_end) = s.t_end {
            if !(t_end.is_finite() && t_end > 0.0) {
                return Err(Error::Config("solver.t_end must be positive when given".into()));
            }
        }
        if let Some(dt) = s.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Config("solver.dt must be positive when given".into()));
            }
        }
        if self.output.prefix.is_empty() || self.output.directory.is_empty() {
            return Err(Error::Config("output.directory and output.prefix must be non-empty".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values must be non-empty".into()));
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("sweep.values must all be finite".into()));
            }
            if sweep.workers == 0 {
                return Err(Error::Config("sweep.workers must be at least 1".into()));
            }
            // Fail typos before spending solver time on the first point.
            self.clone().with_swept_value(&sweep.parameter, sweep.values[0])?;
        }
        Ok(())
    }

    /// Returns a copy with the parameter at `path` replaced by `value`.
    ///
    /// Supported paths:
    /// * `system.<field>` — any scalar field of the `[system]` section;
    /// * `system.drive.<n>.power` / `system.drive.<n>.phase` — the tone
    ///   with harmonic n (created with zero power if absent);
    /// * `constants.<field>` — any scalar field of `[constants]`;
    /// * `constants.drive_amps.<n>.re` / `.im` — an amplitude component;
    /// * `synthetic_drift.<field>` — any scalar field;
    /// * `synthetic_drift.g.<n>.re` / `.im` and
    ///   `synthetic_drift.delta.<n>.re` / `.im` — harmonic components
    ///   (created as zero if absent).
    pub fn with_swept_value(mut self, path: &str, value: f64) -> Result<Self> {
        let segments: Vec<&str> = path.split('.').collect();
        let unknown = || Error::Config(format!("unknown sweep parameter path '{path}'"));
        match segments.as_slice() {
            ["system", "drive", n, field] => {
                let section = self.system.as_mut().ok_or_else(unknown)?;
                let harmonic: i32 = n.parse().map_err(|_| unknown())?;
                let tone = match section.drive.iter_mut().find(|t| t.harmonic == harmonic) {
                    Some(tone) => tone,
                    None => {
                        section.drive.push(DriveToneConfig {
                            harmonic,
                            power: 0.0,
                            phase: 0.0,
                        });
                        section.drive.last_mut().expect("just pushed")
                    }
                };
                match *field {
                    "power" => tone.power = value,
                    "phase" => tone.phase = value,
                    _ => return Err(unknown()),
                }
            }
            ["system", field] => {
                let s = self.system.as_mut().ok_or_else(unknown)?;
                *match *field {
                    "cavity_length" => &mut s.cavity_length,
                    "finesse" => &mut s.finesse,
                    "omega_m" => &mut s.omega_m,
                    "quality" => &mut s.quality,
                    "mass" => &mut s.mass,
                    "temperature" => &mut s.temperature,
                    "wavelength" => &mut s.wavelength,
                    "delta0" => &mut s.delta0,
                    "omega_mod" => &mut s.omega_mod,
                    _ => return Err(unknown()),
                } = value;
            }
            ["constants", "drive_amps", n, part] => {
                let section = self.constants.as_mut().ok_or_else(unknown)?;
                let harmonic: i32 = n.parse().map_err(|_| unknown())?;
                set_harmonic(&mut section.drive_amps, harmonic, part, value).ok_or_else(unknown)?;
            }
            ["constants", field] => {
                let c = self.constants.as_mut().ok_or_else(unknown)?;
                *match *field {
                    "kappa" => &mut c.kappa,
                    "gamma_m" => &mut c.gamma_m,
                    "omega_m" => &mut c.omega_m,
                    "g0" => &mut c.g0,
                    "nbar" => &mut c.nbar,
                    "delta0" => &mut c.delta0,
                    "omega_mod" => &mut c.omega_mod,
                    _ => return Err(unknown()),
                } = value;
            }
            ["synthetic_drift", table @ ("g" | "delta"), n, part] => {
                let section = self.synthetic_drift.as_mut().ok_or_else(unknown)?;
                let harmonic: i32 = n.parse().map_err(|_| unknown())?;
                let entries = if *table == "g" { &mut section.g } else { &mut section.delta };
                set_harmonic(entries, harmonic, part, value).ok_or_else(unknown)?;
            }
            ["synthetic_drift", field] => {
                let d = self.synthetic_drift.as_mut().ok_or_else(unknown)?;
                *match *field {
                    "omega_m" => &mut d.omega_m,
                    "gamma_m" => &mut d.gamma_m,
                    "kappa" => &mut d.kappa,
                    "omega_mod" => &mut d.omega_mod,
                    "nbar" => &mut d.nbar,
                    _ => return Err(unknown()),
                } = value;
            }
            _ => return Err(unknown()),
        }
        Ok(self)
    }
}

fn set_harmonic(
    entries: &mut Vec<(i32, f64, f64)>,
    harmonic: i32,
    part: &str,
    value: f64,
) -> Option<()> {
    if part != "re" && part != "im" {
        return None;
    }
    let entry = match entries.iter_mut().find(|(n, _, _)| *n == harmonic) {
        Some(entry) => entry,
        None => {
            entries.push((harmonic, 0.0, 0.0));
            entries.last_mut().expect("just pushed")
        }
    };
    if part == "re" {
        entry.1 = value;
    } else {
        entry.2 = value;
    }
    Some(())
}

/// Converts `[n, re, im]` triples into a harmonic map, rejecting
/// duplicate indices.
pub fn harmonic_map(entries: &[(i32, f64, f64)], what: &str) -> Result<BTreeMap<i32, Complex64>> {
    let mut map = BTreeMap::new();
    for &(n, re, im) in entries {
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::Config(format!("{what}: harmonic {n} must be finite")));
        }
        if map.insert(n, Complex64::new(re, im)).is_some() {
            return Err(Error::Config(format!("{what}: harmonic {n} listed more than once")));
        }
    }
    Ok(map)
}
