//! End-to-end runs: configuration → model → solvers → result files.
//!
//! [`prepare_model`] turns any of the three configuration sources into
//! the drift/diffusion pair the solvers consume (deriving constants and
//! the classical orbit where applicable). [`run_pipeline`] executes the
//! configured solver(s), writes the deterministic result files, and
//! returns the [`RunManifest`] that was stored next to them.
//! [`compare_solvers`] runs both solvers and reports per-harmonic
//! Frobenius differences, and [`run_sweep`] fans a configuration out
//! over a value list with each point in its own directory.
//!
//! Result files per run (all under `output.directory`, named
//! `{prefix}-...`): `manifest.txt` always; `orbit.csv` when a classical
//! orbit exists; `td-covariance.csv`, `td-harmonics.txt`,
//! `td-metrics.csv` from the time-domain solver; `sp-covariance.csv`,
//! `sp-components.txt`, `sp-metrics.csv` from the frequency-domain
//! solver; `comparison.csv` when both ran. Bodies are byte-identical
//! across reruns of the same configuration; wall-clock timings live
//! only in the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::config::{harmonic_map, RunConfig, SolverMode};
use crate::covariance::{
    assess_stability, extract_fourier_components, initial_covariance, propagate_covariance,
    suggested_horizon, CovarianceControl, CovarianceState, CovarianceTrajectory,
    StabilityAssessment,
};
use crate::drift::{build_diffusion, build_drift, DiffusionMatrix, DriftSpec};
use crate::error::{Error, Result};
use crate::metrics::{metrics_from_components, metrics_from_trajectory};
use crate::orbit::{
    integrate_mean_field, orbit_coefficients, orbit_state, ClassicalOrbit, MeanFieldControl,
    MeanFieldTrajectory,
};
use crate::output::{
    format_complex, format_float, write_comparison_csv, write_components_text,
    write_covariance_csv, write_harmonics_text, write_metrics_csv, write_orbit_csv,
};
use crate::params::{derive_constants, DerivedConstants};
use crate::rwa::{rwa_stability, RwaParams};
use crate::spectral::{spectral_covariance, SpectralComponents, SpectralOptions};

/// How many modulation periods the classical boundedness check
/// integrates before declaring the mean field non-divergent.
const CLASSICAL_CHECK_PERIODS: f64 = 50.0;

/// Everything the fluctuation solvers need, built from a configuration.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    /// Rates and couplings. For the synthetic-drift source the optical
    /// carrier entries (`omega_cav`, `omega_laser`, `g0`, `drive_amps`)
    /// are zero placeholders — no classical model exists there.
    pub constants: DerivedConstants,
    /// Static detuning entering the classical equations.
    pub delta0: f64,
    /// Modulation angular frequency Ω.
    pub omega_mod: f64,
    /// Classical quasi-periodic orbit; `None` for the synthetic source.
    pub orbit: Option<ClassicalOrbit>,
    /// Periodic drift of the fluctuation dynamics.
    pub drift: DriftSpec,
    /// Constant diffusion matrix.
    pub diffusion: DiffusionMatrix,
}

/// Builds the model stage of a run from whichever source the
/// configuration names.
pub fn prepare_model(cfg: &RunConfig) -> Result<PreparedModel> {
    cfg.validate()?;
    let s = &cfg.solver;
    if let Some(system) = &cfg.system {
        let params = system.to_params();
        let constants = derive_constants(&params)?;
        let orbit =
            orbit_coefficients(&constants, params.delta0, params.omega_mod, s.j_max, s.n_max as i32)?;
        let drift = build_drift(&orbit, &constants, params.delta0, s.n_max)?;
        let diffusion = build_diffusion(&constants)?;
        return Ok(PreparedModel {
            constants,
            delta0: params.delta0,
            omega_mod: params.omega_mod,
            orbit: Some(orbit),
            drift,
            diffusion,
        });
    }
    if let Some(c) = &cfg.constants {
        if !(c.omega_mod.is_finite() && c.omega_mod > 0.0) {
            return Err(Error::invalid("constants.omega_mod", "must be positive"));
        }
        let constants = DerivedConstants {
            kappa: c.kappa,
            gamma_m: c.gamma_m,
            omega_m: c.omega_m,
            omega_cav: 0.0,
            omega_laser: 0.0,
            g0: c.g0,
            nbar: c.nbar,
            tau: 2.0 * std::f64::consts::PI / c.omega_mod,
            drive_amps: harmonic_map(&c.drive_amps, "constants.drive_amps")?,
        };
        let orbit = orbit_coefficients(&constants, c.delta0, c.omega_mod, s.j_max, s.n_max as i32)?;
        let drift = build_drift(&orbit, &constants, c.delta0, s.n_max)?;
        let diffusion = build_diffusion(&constants)?;
        return Ok(PreparedModel {
            constants,
            delta0: c.delta0,
            omega_mod: c.omega_mod,
            orbit: Some(orbit),
            drift,
            diffusion,
        });
    }
    let d = cfg.synthetic_drift.as_ref().expect("validate guarantees one source");
    let drift = DriftSpec::from_components(
        d.omega_mod,
        d.omega_m,
        d.gamma_m,
        d.kappa,
        harmonic_map(&d.g, "synthetic_drift.g")?,
        harmonic_map(&d.delta, "synthetic_drift.delta")?,
    )?;
    let diffusion = DiffusionMatrix::from_rates(d.gamma_m, d.nbar, d.kappa)?;
    let constants = DerivedConstants {
        kappa: d.kappa,
        gamma_m: d.gamma_m,
        omega_m: d.omega_m,
        omega_cav: 0.0,
        omega_laser: 0.0,
        g0: 0.0,
        nbar: d.nbar,
        tau: 2.0 * std::f64::consts::PI / d.omega_mod,
        drive_amps: BTreeMap::new(),
    };
    Ok(PreparedModel {
        constants,
        delta0: drift.delta_component(0).re,
        omega_mod: d.omega_mod,
        orbit: None,
        drift,
        diffusion,
    })
}

/// The stability answers a run records before any solver starts.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdicts {
    /// `Some(true)` when the mean-field integration left the attractor
    /// basin within the checked span of [`CLASSICAL_CHECK_PERIODS`]
    /// periods, `Some(false)` when it stayed bounded, `None` when no
    /// classical model exists (synthetic drift).
    pub classical_diverged: Option<bool>,
    /// Authoritative verdict: all Floquet multipliers strictly inside
    /// the unit circle.
    pub floquet_stable: bool,
    /// Largest real part among the Floquet exponents.
    pub lambda_max: f64,
    /// Frozen-time eigenvalue check (sufficient, not necessary).
    pub pointwise_negative: bool,
    /// Rotating-frame coupling inequality evaluated on the drift's
    /// harmonic magnitudes |G_0|, max|G_±1|; informational.
    pub rwa_condition: bool,
}

/// Evaluates every verdict for a prepared model. The classical check
/// integrates the mean field over [`CLASSICAL_CHECK_PERIODS`] periods
/// and reports divergence instead of erroring.
pub fn stability_verdicts(
    model: &PreparedModel,
    assessment: &StabilityAssessment,
) -> StabilityVerdicts {
    let classical_diverged = model.orbit.as_ref().map(|_| {
        let t_end = CLASSICAL_CHECK_PERIODS * model.constants.tau;
        matches!(
            integrate_mean_field(
                &model.constants,
                model.delta0,
                &model.constants.drive_amps,
                t_end,
                &MeanFieldControl::default(),
            ),
            Err(Error::Divergence { .. })
        )
    });
    let g0 = model.drift.g_component(0).norm();
    let gm1 = model.drift.g_component(-1).norm().max(model.drift.g_component(1).norm());
    let rwa_condition = rwa_stability(&RwaParams {
        g0,
        gm1,
        gamma_m: model.drift.gamma_m(),
        kappa: model.drift.kappa(),
        nbar: model.constants.nbar,
        s: 1.0,
    })
    .unwrap_or(false);
    StabilityVerdicts {
        classical_diverged,
        floquet_stable: assessment.floquet.stable,
        lambda_max: assessment.floquet.lambda_max,
        pointwise_negative: assessment.pointwise_negative,
        rwa_condition,
    }
}

/// Record of one completed run, stored as `{prefix}-manifest.txt` next
/// to the data files.
#[derive(Debug, Clone)]
pub struct RunManifest {
    /// The exact configuration the run used, as TOML; reparses to an
    /// equal [`RunConfig`].
    pub config_echo: String,
    /// Rates and couplings the model stage produced.
    pub constants: DerivedConstants,
    /// Static detuning of the run.
    pub delta0: f64,
    /// Modulation angular frequency of the run.
    pub omega_mod: f64,
    /// Stability answers.
    pub verdicts: StabilityVerdicts,
    /// File names written, in write order, relative to the output
    /// directory (the manifest lists itself last).
    pub outputs: Vec<String>,
    /// Wall-clock stage timings in milliseconds. Reruns differ here and
    /// nowhere else.
    pub timings_ms: Vec<(String, f64)>,
}

impl RunManifest {
    /// Renders the structured text document.
    pub fn to_text(&self) -> String {
        let mut out = String::from("optomod run manifest\n== config ==\n");
        out.push_str(&self.config_echo);
        if !self.config_echo.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("== end config ==\n\nderived constants:\n");
        let c = &self.constants;
        for (name, value) in [
            ("kappa", c.kappa),
            ("gamma_m", c.gamma_m),
            ("omega_m", c.omega_m),
            ("omega_cav", c.omega_cav),
            ("omega_laser", c.omega_laser),
            ("g0", c.g0),
            ("nbar", c.nbar),
            ("tau", c.tau),
            ("delta0", self.delta0),
            ("omega_mod", self.omega_mod),
        ] {
            out.push_str(&format!("  {name}: {}\n", format_float(value)));
        }
        for (n, amp) in &c.drive_amps {
            out.push_str(&format!("  drive n = {n}: {}\n", format_complex(*amp)));
        }
        out.push_str("\nstability verdicts:\n");
        let v = &self.verdicts;
        out.push_str(&format!(
            "  classical_diverged: {}\n",
            match v.classical_diverged {
                Some(flag) => flag.to_string(),
                None => "not evaluated".into(),
            }
        ));
        out.push_str(&format!("  floquet_stable: {}\n", v.floquet_stable));
        out.push_str(&format!("  lambda_max: {}\n", format_float(v.lambda_max)));
        out.push_str(&format!("  pointwise_eigenvalues_negative: {}\n", v.pointwise_negative));
        out.push_str(&format!("  rwa_condition_holds: {}\n", v.rwa_condition));
        out.push_str("\noutputs:\n");
        for name in &self.outputs {
            out.push_str(&format!("  {name}\n"));
        }
        out.push_str("\ntimings:\n");
        for (stage, ms) in &self.timings_ms {
            out.push_str(&format!("  {stage}_ms: {}\n", format_float(*ms)));
        }
        out
    }
}

/// Per-harmonic Frobenius difference between the two solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverComparison {
    /// `(n, absolute, relative)` per harmonic, ascending in n. The
    /// relative entry is `NaN` where the reference norm sits below
    /// [`Self::floor`].
    pub rows: Vec<(i32, f64, f64)>,
    /// Largest finite relative difference (0 when every row is floored).
    pub worst_relative: f64,
    /// Degeneracy floor: 10⁻⁶ of the frequency-domain ‖V_0‖.
    pub floor: f64,
}

fn frobenius(m: &Matrix4<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Compares time-domain harmonics against the frequency-domain solve,
/// taking the latter as reference.
///
/// Only harmonics up to the frequency solver's sideband truncation N
/// enter the table: both solvers resolve those, while the outer
/// harmonics (N < |n| ≤ 2N) consist of the solvers' own truncation
/// tails and are reported in the component files only.
pub fn component_comparison(
    td: &BTreeMap<i32, Matrix4<Complex64>>,
    sp: &SpectralComponents,
) -> SolverComparison {
    let floor = 1e-6 * frobenius(&sp.component(0));
    let n_max = sp.n_sidebands as i32;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (&n, td_v) in td.range(-n_max..=n_max) {
        let sp_v = sp.component(n);
        let abs = frobenius(&(td_v - sp_v));
        let reference = frobenius(&sp_v);
        let rel = if reference > floor { abs / reference } else { f64::NAN };
        if rel.is_finite() {
            worst = worst.max(rel);
        }
        rows.push((n, abs, rel));
    }
    SolverComparison { rows, worst_relative: worst, floor }
}

/// The standard refusal every solver entry point issues for an
/// unstable assessment.
pub fn ensure_stable(assessment: &StabilityAssessment) -> Result<()> {
    if !assessment.floquet.stable {
        return Err(Error::Unstable {
            context: "pipeline stability gate".into(),
            detail: format!(
                "largest Floquet exponent {:.3e} is non-negative",
                assessment.floquet.lambda_max
            ),
        });
    }
    Ok(())
}

/// Propagates the covariance to its periodic steady state and extracts
/// the harmonics `|n| ≤ 2·n_sidebands`. The horizon comes from
/// `solver.t_end` or, by default, from the Floquet decay rate aimed a
/// decade past the extraction tolerance.
pub fn solve_time_domain(
    cfg: &RunConfig,
    model: &PreparedModel,
    assessment: &StabilityAssessment,
) -> Result<(CovarianceTrajectory, BTreeMap<i32, Matrix4<Complex64>>)> {
    let s = &cfg.solver;
    let t_end = match s.t_end {
        Some(t) => t,
        // Aim past the requested periodicity defect; the horizon
        // estimate already carries margin for the polynomial prefactor.
        None => suggested_horizon(&assessment.floquet, (s.extraction_tol / 10.0).clamp(1e-12, 0.5))?,
    };
    let ctrl = CovarianceControl {
        dt: s.dt,
        skip_stability_check: true,
        ..CovarianceControl::default()
    };
    let initial = CovarianceState { t: 0.0, v: initial_covariance(model.constants.nbar) };
    let traj = propagate_covariance(&model.drift, &model.diffusion, &initial, t_end, &ctrl)?;
    let components = extract_fourier_components(&traj, 2 * s.n_sidebands, s.extraction_tol)?;
    Ok((traj, components))
}

/// Runs the frequency-domain solver at the configured truncation and
/// tolerance (the window tail tolerance follows `solver.rel_tol` down).
pub fn solve_spectral(cfg: &RunConfig, model: &PreparedModel) -> Result<SpectralComponents> {
    let defaults = SpectralOptions::default();
    let opts = SpectralOptions {
        rel_tol: cfg.solver.rel_tol,
        // The window tail must shrink with the panel tolerance, or
        // boundary-sitting variances (an uncoupled cavity at exact
        // vacuum) lose tail mass and fail the physicality gate.
        tail_rel_tol: cfg.solver.rel_tol.min(defaults.tail_rel_tol),
        skip_stability_check: true,
        ..defaults
    };
    spectral_covariance(&model.drift, &model.diffusion, cfg.solver.n_sidebands, &opts)
}

fn write_output<F>(dir: &Path, name: String, outputs: &mut Vec<String>, emit: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(&name))?);
    emit(&mut w)?;
    w.flush()?;
    outputs.push(name);
    Ok(())
}

/// Executes a full run and writes its result files and manifest.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = Path::new(&cfg.output.directory);
    std::fs::create_dir_all(dir)?;
    let prefix = &cfg.output.prefix;
    let mut timings = Vec::new();
    let mut outputs = Vec::new();

    let clock = Instant::now();
    let model = prepare_model(cfg)?;
    timings.push(("prepare".to_string(), clock.elapsed().as_secs_f64() * 1e3));

    let clock = Instant::now();
    let assessment = assess_stability(&model.drift, 0.0)?;
    ensure_stable(&assessment)?;
    let verdicts = stability_verdicts(&model, &assessment);
    timings.push(("stability".to_string(), clock.elapsed().as_secs_f64() * 1e3));

    if let Some(orbit) = &model.orbit {
        let tau = orbit.tau();
        let samples = cfg.solver.samples;
        let grid = MeanFieldTrajectory {
            t0: 0.0,
            dt: tau / samples as f64,
            samples: (0..=samples)
                .map(|k| orbit_state(orbit, k as f64 * tau / samples as f64))
                .collect::<Result<Vec<_>>>()?,
        };
        write_output(dir, format!("{prefix}-orbit.csv"), &mut outputs, |w| {
            write_orbit_csv(w, &grid)
        })?;
    }

    let run_td = matches!(cfg.solver.mode, SolverMode::TimeDomain | SolverMode::Both);
    let run_sp = matches!(cfg.solver.mode, SolverMode::Spectral | SolverMode::Both);

    let td = if run_td {
        let clock = Instant::now();
        let (traj, components) = solve_time_domain(cfg, &model, &assessment)?;
        let metrics = metrics_from_trajectory(&traj)?;
        timings.push(("time_domain".to_string(), clock.elapsed().as_secs_f64() * 1e3));
        write_output(dir, format!("{prefix}-td-covariance.csv"), &mut outputs, |w| {
            write_covariance_csv(w, traj.samples.iter().map(|s| (s.t, s.v)))
        })?;
        write_output(dir, format!("{prefix}-td-harmonics.txt"), &mut outputs, |w| {
            write_harmonics_text(
                w,
                model.drift.omega(),
                &components,
                &[
                    ("periodicity_defect", traj.defect),
                    ("min_physicality", traj.min_physicality),
                    ("max_asymmetry", traj.max_asymmetry),
                ],
            )
        })?;
        write_output(dir, format!("{prefix}-td-metrics.csv"), &mut outputs, |w| {
            write_metrics_csv(w, &metrics)
        })?;
        Some(components)
    } else {
        None
    };

    let sp = if run_sp {
        let clock = Instant::now();
        let components = solve_spectral(cfg, &model)?;
        let metrics = metrics_from_components(&components, cfg.solver.samples)?;
        timings.push(("spectral".to_string(), clock.elapsed().as_secs_f64() * 1e3));
        let tau = model.drift.tau();
        let samples = cfg.solver.samples;
        write_output(dir, format!("{prefix}-sp-covariance.csv"), &mut outputs, |w| {
            write_covariance_csv(
                w,
                (0..=samples).map(|k| {
                    let t = k as f64 * tau / samples as f64;
                    (t, components.evaluate(t))
                }),
            )
        })?;
        write_output(dir, format!("{prefix}-sp-components.txt"), &mut outputs, |w| {
            write_components_text(w, &components)
        })?;
        write_output(dir, format!("{prefix}-sp-metrics.csv"), &mut outputs, |w| {
            write_metrics_csv(w, &metrics)
        })?;
        Some(components)
    } else {
        None
    };

    if let (Some(td_components), Some(sp_components)) = (&td, &sp) {
        let comparison = component_comparison(td_components, sp_components);
        write_output(dir, format!("{prefix}-comparison.csv"), &mut outputs, |w| {
            write_comparison_csv(w, &comparison.rows)
        })?;
    }

    let manifest_name = format!("{prefix}-manifest.txt");
    outputs.push(manifest_name.clone());
    let manifest = RunManifest {
        config_echo: cfg.to_toml_string()?,
        constants: model.constants.clone(),
        delta0: model.delta0,
        omega_mod: model.omega_mod,
        verdicts,
        outputs,
        timings_ms: timings,
    };
    let mut w = BufWriter::new(File::create(dir.join(&manifest_name))?);
    w.write_all(manifest.to_text().as_bytes())?;
    w.flush()?;
    Ok(manifest)
}

/// Runs both solvers on the configured model (whatever `solver.mode`
/// says) and compares their harmonics. Writes no files.
pub fn compare_solvers(cfg: &RunConfig) -> Result<SolverComparison> {
    cfg.validate()?;
    let model = prepare_model(cfg)?;
    let assessment = assess_stability(&model.drift, 0.0)?;
    ensure_stable(&assessment)?;
    let (_, td_components) = solve_time_domain(cfg, &model, &assessment)?;
    let sp_components = solve_spectral(cfg, &model)?;
    Ok(component_comparison(&td_components, &sp_components))
}

/// One completed sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Value the swept parameter took.
    pub value: f64,
    /// Directory this point's files were written into.
    pub directory: String,
    /// The point's run manifest.
    pub manifest: RunManifest,
}

/// Executes the configured sweep: one full run per value, each in
/// `{directory}/{prefix}-sweep-{index:03}`, up to `workers` points in
/// parallel. Points share nothing; the first failure (in value order)
/// is returned after all workers finish.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no [sweep] section in this configuration".into()))?;

    let mut points = Vec::with_capacity(sweep.values.len());
    for (idx, &value) in sweep.values.iter().enumerate() {
        let mut sub = cfg.clone().with_swept_value(&sweep.parameter, value)?;
        sub.sweep = None;
        sub.output.directory = format!(
            "{}/{}-sweep-{idx:03}",
            cfg.output.directory, cfg.output.prefix
        );
        points.push((value, sub));
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<RunManifest>)>> = Mutex::new(Vec::new());
    let workers = sweep.workers.min(points.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= points.len() {
                    break;
                }
                let outcome = run_pipeline(&points[idx].1);
                results.lock().expect("no poisoned sweep worker").push((idx, outcome));
            });
        }
    });

    let mut results = results.into_inner().expect("all workers joined");
    results.sort_by_key(|(idx, _)| *idx);
    let mut completed = Vec::with_capacity(points.len());
    for ((idx, outcome), (value, sub)) in results.into_iter().zip(&points) {
        debug_assert_eq!(idx, completed.len());
        completed.push(SweepPoint {
            value: *value,
            directory: sub.output.directory.clone(),
            manifest: outcome?,
        });
    }
    Ok(completed)
}
