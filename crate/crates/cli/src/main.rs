//! Command-line front end for the simulation library.
//!
//! Every subcommand reads one run configuration, named by exactly one
//! of `--config PATH` (a TOML file) or `--preset NAME` (shipped with
//! the binary; see `presets/`). `--out`, `--mode`, and `--workers`
//! override the corresponding configuration fields before anything
//! runs, so the manifest echo always shows what was actually executed.
//!
//! Exit codes: 0 success; 2 configuration or argument error; 3 the
//! system is unstable (or the classical orbit diverges or resonates);
//! 4 a numerical stage failed to converge or produced an unphysical
//! result; 1 filesystem trouble.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use optomod::config::{RunConfig, SolverMode, PRESET_NAMES};
use optomod::covariance::{assess_stability, suggested_horizon};
use optomod::error::{Error, Result};
use optomod::metrics::{metrics_from_components, metrics_from_trajectory, PeriodMetrics};
use optomod::orbit::{compare_cycle, integrate_mean_field, orbit_state, MeanFieldControl,
    MeanFieldTrajectory};
use optomod::output::{format_complex, format_float, write_comparison_csv, write_floquet_text,
    write_orbit_csv, write_rwa_table_csv, write_spectrum_csv};
use optomod::pipeline::{compare_solvers, ensure_stable, prepare_model, run_pipeline, run_sweep,
    solve_spectral, solve_time_domain, stability_verdicts, PreparedModel};
use optomod::rwa::{rwa_variances, RwaParams};
use optomod::spectral::{spectrum_slice, SpectralOptions};

#[derive(Parser)]
#[command(
    name = "optomod",
    version,
    about = "Simulator for an optical cavity driven by amplitude-modulated light",
    after_help = "Exit codes: 0 success, 2 config error, 3 instability, 4 numerical failure."
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in configuration (paper-fig2, desk-scale, deep-rwa).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Override the solver mode.
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    mode: Option<ModeArg>,
    /// Override the sweep worker count.
    #[arg(long, global = true, value_name = "K")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "time_domain")]
    TimeDomain,
    #[value(name = "spectral")]
    Spectral,
    #[value(name = "both")]
    Both,
}

impl From<ModeArg> for SolverMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::TimeDomain => SolverMode::TimeDomain,
            ModeArg::Spectral => SolverMode::Spectral,
            ModeArg::Both => SolverMode::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the rates, couplings, and drift harmonics of the model.
    Derive,
    /// Integrate the classical mean field; write trajectory and orbit
    /// files and report how closely the cycle matches the series orbit.
    Orbit {
        /// Integration horizon in modulation periods.
        #[arg(long, default_value_t = 50.0)]
        periods: f64,
    },
    /// Evaluate the stability verdicts and write the one-period flow
    /// report. Exits 3 when the system is unstable.
    Stability,
    /// Run the configured covariance solver(s) and write every result
    /// file plus the manifest.
    Covariance,
    /// Sample the symmetrized noise spectra on a frequency grid.
    Spectrum {
        /// Lower edge of the frequency grid (default -3 omega_m).
        #[arg(long, value_name = "RAD_S", allow_hyphen_values = true)]
        omega_min: Option<f64>,
        /// Upper edge of the frequency grid (default +3 omega_m).
        #[arg(long, value_name = "RAD_S", allow_hyphen_values = true)]
        omega_max: Option<f64>,
        /// Number of grid points.
        #[arg(long, default_value_t = 601)]
        points: usize,
    },
    /// Print per-period squeezing and entanglement statistics.
    Metrics,
    /// Closed-form rotating-frame variances. Parameters come from the
    /// configuration's drift harmonics, or explicitly from the flags
    /// (all five of --g0 --gm1 --gamma-m --kappa --nbar, no config
    /// needed then).
    Rwa {
        /// Carrier coupling |G_0|.
        #[arg(long)]
        g0: Option<f64>,
        /// Sideband coupling |G_-1|.
        #[arg(long)]
        gm1: Option<f64>,
        /// Mechanical damping rate.
        #[arg(long)]
        gamma_m: Option<f64>,
        /// Cavity amplitude decay rate.
        #[arg(long)]
        kappa: Option<f64>,
        /// Thermal phonon occupation.
        #[arg(long)]
        nbar: Option<f64>,
        /// Squeezing factor of an engineered cavity environment.
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        /// With --table-points: writes a CSV sweeping |G_-1| from 0 to
        /// this value at fixed remaining parameters.
        #[arg(long, value_name = "GM1_MAX")]
        table_gm1_max: Option<f64>,
        /// Number of rows of the |G_-1| table.
        #[arg(long, default_value_t = 41)]
        table_points: usize,
    },
    /// Run the configured parameter sweep, one directory per value.
    Sweep,
    /// Run both solvers and report per-harmonic differences.
    Compare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidParam { .. } | Error::Config(_) => 2,
                Error::Unstable { .. }
                | Error::Divergence { .. }
                | Error::ResonantDenominator { .. } => 3,
                Error::Convergence { .. }
                | Error::NonPhysical { .. }
                | Error::Linalg { .. } => 4,
                Error::Io(_) => 1,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), None) => RunConfig::from_path(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        _ => {
            return Err(Error::Config(format!(
                "pass exactly one of --config PATH or --preset NAME (presets: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    if let Some(mode) = cli.mode {
        cfg.solver.mode = mode.into();
    }
    if let Some(workers) = cli.workers {
        match cfg.sweep.as_mut() {
            Some(sweep) => sweep.workers = workers,
            None => {
                return Err(Error::Config(
                    "--workers is only meaningful for a configuration with a [sweep] section"
                        .into(),
                ))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.directory);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_file<F>(dir: &Path, name: &str, emit: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    emit(&mut w)?;
    w.flush()?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Derive => {
            let cfg = load_config(cli)?;
            let model = prepare_model(&cfg)?;
            print_model(&model);
            Ok(())
        }
        Command::Orbit { periods } => run_orbit(cli, *periods),
        Command::Stability => run_stability(cli),
        Command::Covariance => {
            let cfg = load_config(cli)?;
            let manifest = run_pipeline(&cfg)?;
            for name in &manifest.outputs {
                println!("wrote {}/{name}", cfg.output.directory);
            }
            println!(
                "floquet_stable: {}  lambda_max: {}",
                manifest.verdicts.floquet_stable,
                format_float(manifest.verdicts.lambda_max)
            );
            Ok(())
        }
        Command::Spectrum { omega_min, omega_max, points } => {
            run_spectrum(cli, *omega_min, *omega_max, *points)
        }
        Command::Metrics => run_metrics(cli),
        Command::Rwa { g0, gm1, gamma_m, kappa, nbar, s, table_gm1_max, table_points } => run_rwa(
            cli,
            RwaFlags {
                g0: *g0,
                gm1: *gm1,
                gamma_m: *gamma_m,
                kappa: *kappa,
                nbar: *nbar,
                s: *s,
                table_gm1_max: *table_gm1_max,
                table_points: *table_points,
            },
        ),
        Command::Sweep => {
            let cfg = load_config(cli)?;
            let points = run_sweep(&cfg)?;
            for (idx, point) in points.iter().enumerate() {
                println!(
                    "point {idx}: value {} -> {} (lambda_max {})",
                    format_float(point.value),
                    point.directory,
                    format_float(point.manifest.verdicts.lambda_max)
                );
            }
            Ok(())
        }
        Command::Compare => {
            let cfg = load_config(cli)?;
            let comparison = compare_solvers(&cfg)?;
            let dir = output_dir(&cfg)?;
            write_file(&dir, &format!("{}-comparison.csv", cfg.output.prefix), |w| {
                write_comparison_csv(w, &comparison.rows)
            })?;
            println!("n, absolute, relative");
            for (n, abs, rel) in &comparison.rows {
                println!("{n}, {}, {}", format_float(*abs), format_float(*rel));
            }
            println!("worst relative difference: {}", format_float(comparison.worst_relative));
            Ok(())
        }
    }
}

fn print_model(model: &PreparedModel) {
    let c = &model.constants;
    println!("derived constants:");
    for (name, value) in [
        ("kappa", c.kappa),
        ("gamma_m", c.gamma_m),
        ("omega_m", c.omega_m),
        ("omega_cav", c.omega_cav),
        ("omega_laser", c.omega_laser),
        ("g0", c.g0),
        ("nbar", c.nbar),
        ("tau", c.tau),
        ("delta0", model.delta0),
        ("omega_mod", model.omega_mod),
    ] {
        println!("  {name}: {}", format_float(value));
    }
    for (n, amp) in &c.drive_amps {
        println!("  drive n = {n}: {}", format_complex(*amp));
    }
    println!("drift harmonics:");
    let n_max = model.drift.max_harmonic();
    for n in -n_max..=n_max {
        println!(
            "  n = {n}: G = {}, Delta = {}",
            format_complex(model.drift.g_component(n)),
            format_complex(model.drift.delta_component(n)),
        );
    }
}

fn run_orbit(cli: &Cli, periods: f64) -> Result<()> {
    if !(periods.is_finite() && periods > 0.0) {
        return Err(Error::Config("--periods must be positive".into()));
    }
    let cfg = load_config(cli)?;
    let model = prepare_model(&cfg)?;
    let orbit = model.orbit.as_ref().ok_or_else(|| {
        Error::Config("the synthetic-drift source has no classical orbit to integrate".into())
    })?;
    let tau = orbit.tau();
    let traj = integrate_mean_field(
        &model.constants,
        model.delta0,
        &model.constants.drive_amps,
        periods * tau,
        &MeanFieldControl::default(),
    )?;
    let dir = output_dir(&cfg)?;
    let prefix = &cfg.output.prefix;
    write_file(&dir, &format!("{prefix}-trajectory.csv"), |w| write_orbit_csv(w, &traj))?;
    let samples = cfg.solver.samples;
    let grid = MeanFieldTrajectory {
        t0: 0.0,
        dt: tau / samples as f64,
        samples: (0..=samples)
            .map(|k| orbit_state(orbit, k as f64 * tau / samples as f64))
            .collect::<Result<Vec<_>>>()?,
    };
    write_file(&dir, &format!("{prefix}-orbit.csv"), |w| write_orbit_csv(w, &grid))?;
    let steps = (tau / traj.dt).round() as usize;
    match traj.cycle_defect(steps) {
        Some(defect) => println!("cycle defect over the last two periods: {}", format_float(defect)),
        None => println!("cycle defect unavailable: trajectory shorter than two periods"),
    }
    let comparison = compare_cycle(&traj, orbit)?;
    println!(
        "series orbit vs integrated cycle: rms distance {} over rms amplitude {} (relative {})",
        format_float(comparison.rms_distance),
        format_float(comparison.rms_amplitude),
        format_float(comparison.relative()),
    );
    Ok(())
}

fn run_stability(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let model = prepare_model(&cfg)?;
    let assessment = assess_stability(&model.drift, 0.0)?;
    let verdicts = stability_verdicts(&model, &assessment);
    println!(
        "classical_diverged: {}",
        match verdicts.classical_diverged {
            Some(flag) => flag.to_string(),
            None => "not evaluated".into(),
        }
    );
    println!("floquet_stable: {}", verdicts.floquet_stable);
    println!("lambda_max: {}", format_float(verdicts.lambda_max));
    println!("pointwise_eigenvalues_negative: {}", verdicts.pointwise_negative);
    println!("rwa_condition_holds: {}", verdicts.rwa_condition);
    if verdicts.floquet_stable {
        println!(
            "suggested settling horizon (defect 1e-4): {}",
            format_float(suggested_horizon(&assessment.floquet, 1e-4)?)
        );
    }
    let dir = output_dir(&cfg)?;
    write_file(&dir, &format!("{}-floquet.txt", cfg.output.prefix), |w| {
        write_floquet_text(w, &assessment.floquet)
    })?;
    ensure_stable(&assessment)
}

fn run_spectrum(
    cli: &Cli,
    omega_min: Option<f64>,
    omega_max: Option<f64>,
    points: usize,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let model = prepare_model(&cfg)?;
    let hi = omega_max.unwrap_or(3.0 * model.constants.omega_m);
    let lo = omega_min.unwrap_or(-hi);
    let defaults = SpectralOptions::default();
    let opts = SpectralOptions {
        rel_tol: cfg.solver.rel_tol,
        tail_rel_tol: cfg.solver.rel_tol.min(defaults.tail_rel_tol),
        ..defaults
    };
    let slice = spectrum_slice(
        &model.drift,
        &model.diffusion,
        cfg.solver.n_sidebands,
        lo,
        hi,
        points,
        &opts,
    )?;
    let dir = output_dir(&cfg)?;
    write_file(&dir, &format!("{}-spectrum.csv", cfg.output.prefix), |w| {
        write_spectrum_csv(w, &slice)
    })?;
    for (name, peaks) in ["S_qq", "S_pp", "S_xx", "S_yy"].iter().zip(&slice.peaks) {
        let list: Vec<String> = peaks.iter().map(|p| format_float(*p)).collect();
        println!("{name} peaks: {}", list.join(", "));
    }
    Ok(())
}

fn print_metrics(label: &str, metrics: &PeriodMetrics) {
    println!("{label} metrics over one period ({} samples):", metrics.samples.len());
    for (name, stats) in [
        ("E_N", &metrics.entanglement),
        ("mirror_min_var", &metrics.min_variance),
        ("mirror_angle", &metrics.angle),
    ] {
        println!(
            "  {name}: min {}, max {}, mean {}",
            format_float(stats.min),
            format_float(stats.max),
            format_float(stats.mean),
        );
    }
    println!("  angle advance over one period: {}", format_float(metrics.angle_advance()));
}

fn run_metrics(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let model = prepare_model(&cfg)?;
    let assessment = assess_stability(&model.drift, 0.0)?;
    ensure_stable(&assessment)?;
    if matches!(cfg.solver.mode, SolverMode::TimeDomain | SolverMode::Both) {
        let (traj, _) = solve_time_domain(&cfg, &model, &assessment)?;
        print_metrics("time-domain", &metrics_from_trajectory(&traj)?);
    }
    if matches!(cfg.solver.mode, SolverMode::Spectral | SolverMode::Both) {
        let components = solve_spectral(&cfg, &model)?;
        print_metrics("frequency-domain", &metrics_from_components(&components, cfg.solver.samples)?);
    }
    Ok(())
}

struct RwaFlags {
    g0: Option<f64>,
    gm1: Option<f64>,
    gamma_m: Option<f64>,
    kappa: Option<f64>,
    nbar: Option<f64>,
    s: f64,
    table_gm1_max: Option<f64>,
    table_points: usize,
}

fn run_rwa(cli: &Cli, flags: RwaFlags) -> Result<()> {
    let explicit = [flags.g0, flags.gm1, flags.gamma_m, flags.kappa, flags.nbar];
    let base = if explicit.iter().all(Option::is_some) {
        RwaParams {
            g0: flags.g0.unwrap(),
            gm1: flags.gm1.unwrap(),
            gamma_m: flags.gamma_m.unwrap(),
            kappa: flags.kappa.unwrap(),
            nbar: flags.nbar.unwrap(),
            s: flags.s,
        }
    } else if cli.config.is_none() && cli.preset.is_none() {
        return Err(Error::Config(
            "rwa needs either a configuration or all of --g0 --gm1 --gamma-m --kappa --nbar"
                .into(),
        ));
    } else {
        let cfg = load_config(cli)?;
        let model = prepare_model(&cfg)?;
        let drift = &model.drift;
        RwaParams {
            g0: flags.g0.unwrap_or_else(|| drift.g_component(0).norm()),
            gm1: flags.gm1.unwrap_or_else(|| {
                drift.g_component(-1).norm().max(drift.g_component(1).norm())
            }),
            gamma_m: flags.gamma_m.unwrap_or_else(|| drift.gamma_m()),
            kappa: flags.kappa.unwrap_or_else(|| drift.kappa()),
            nbar: flags.nbar.unwrap_or(model.constants.nbar),
            s: flags.s,
        }
    };
    println!(
        "G0 = {}, Gm1 = {}, gamma_m = {}, kappa = {}, nbar = {}, s = {}",
        format_float(base.g0),
        format_float(base.gm1),
        format_float(base.gamma_m),
        format_float(base.kappa),
        format_float(base.nbar),
        format_float(base.s),
    );
    match rwa_variances(&base) {
        Ok((f_minus, f_plus)) => {
            println!("f_minus: {}", format_float(f_minus));
            println!("f_plus: {}", format_float(f_plus));
        }
        Err(e) => println!("variances unavailable: {e}"),
    }
    if let Some(gm1_max) = flags.table_gm1_max {
        if !(gm1_max.is_finite() && gm1_max > 0.0) || flags.table_points < 2 {
            return Err(Error::Config(
                "--table-gm1-max must be positive and --table-points at least 2".into(),
            ));
        }
        let rows: Vec<RwaParams> = (0..flags.table_points)
            .map(|k| RwaParams {
                gm1: gm1_max * k as f64 / (flags.table_points - 1) as f64,
                ..base
            })
            .collect();
        let (dir, prefix) = match (cli.config.is_some() || cli.preset.is_some(), &cli.out) {
            (true, _) => {
                let cfg = load_config(cli)?;
                (PathBuf::from(cfg.output.directory), cfg.output.prefix)
            }
            (false, Some(out)) => (PathBuf::from(out), "rwa".to_string()),
            (false, None) => (PathBuf::from("runs"), "rwa".to_string()),
        };
        std::fs::create_dir_all(&dir)?;
        write_file(&dir, &format!("{prefix}-rwa.csv"), |w| write_rwa_table_csv(w, &rows))?;
    }
    Ok(())
}
