//! Entanglement and squeezing figures of merit for the mirror–light state.
//!
//! All metrics are functions of a single 4×4 covariance matrix in the
//! quadrature ordering (δq, δp, δx, δy) with vacuum variance 1/2:
//!
//! * [`logarithmic_negativity`] measures mirror–light entanglement. It is
//!   computed with the **natural logarithm** (nats, not bits or decibels):
//!   a two-mode squeezed vacuum with squeezing parameter r scores exactly
//!   2r. Callers converting to other conventions must rescale themselves.
//! * [`mirror_squeezing`] finds the smallest variance over all mirror
//!   quadrature directions together with the direction itself, so values
//!   below 1/2 certify mechanical squeezing and the angle tracks how the
//!   squeezed axis moves over a modulation period.
//!
//! [`metrics_over_period`] evaluates both on a uniform grid over one drive
//! period — either from spectral harmonics ([`metrics_from_components`])
//! or from the final window of a time-domain propagation
//! ([`metrics_from_trajectory`]) — and summarizes each metric.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix4;

use crate::covariance::{physicality_defect, CovarianceTrajectory};
use crate::error::{Error, Result};
use crate::spectral::SpectralComponents;

/// Relative tolerance on the minimum eigenvalue of V + (i/2)σ before a
/// covariance matrix is rejected as unphysical. Calibrated to pass
/// solver output: a state sitting exactly on the uncertainty boundary
/// (vacuum, pure squeezing) comes back from the numerical solvers with
/// boundary violations up to their integration tolerances (~10⁻⁶
/// relative), while genuine physics errors (wrong vacuum convention,
/// sign slips) violate it at the 10⁻²–10⁰ scale.
pub const PHYSICALITY_TOLERANCE: f64 = 1e-6;

/// Relative tolerance on ‖V − Vᵀ‖ before a matrix is rejected outright.
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Relative eigenvalue splitting below which the mirror variance ellipse
/// counts as degenerate and the angle is reported as 0 by convention.
const DEGENERACY_TOLERANCE: f64 = 1e-12;

/// Both metrics evaluated on one covariance sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSample {
    /// Sample time.
    pub t: f64,
    /// Logarithmic negativity of the mirror–light split, in nats
    /// (natural logarithm); 0 means no detected entanglement.
    pub e_n: f64,
    /// Smallest variance over all mirror quadrature directions.
    pub mirror_min_var: f64,
    /// Direction of that smallest variance, measured from the δq axis,
    /// in radians, folded into (−π/2, π/2]. Degenerate ellipses report 0.
    pub mirror_angle: f64,
    /// Whether the sampled matrix satisfied the uncertainty relation
    /// within [`PHYSICALITY_TOLERANCE`]. Samples that fail the check are
    /// reported as errors rather than rows, so lists built by this module
    /// always carry `true`; the flag keeps serialized rows self-describing.
    pub physical: bool,
}

/// Minimum, maximum, and arithmetic mean of one metric over a period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl MetricStats {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        MetricStats { min, max, mean: sum / count as f64 }
    }
}

/// Metrics sampled on a uniform grid over one drive period.
#[derive(Debug, Clone)]
pub struct PeriodMetrics {
    /// One entry per grid point, covering [t₀, t₀ + τ) with the endpoint
    /// excluded (it duplicates the start for periodic input).
    pub samples: Vec<MetricsSample>,
    /// Summary of the logarithmic negativity over the period.
    pub entanglement: MetricStats,
    /// Summary of the minimal mirror variance over the period.
    pub min_variance: MetricStats,
    /// Summary of the folded squeezing angle. Because the angle lives on
    /// a circle of circumference π, these raw statistics depend on where
    /// the fold lands; [`Self::angle_advance`] is the robust measure of
    /// how the squeezed axis moves.
    pub angle: MetricStats,
}

impl PeriodMetrics {
    fn from_samples(samples: Vec<MetricsSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "metrics need at least one sample"));
        }
        let entanglement = MetricStats::of(samples.iter().map(|s| s.e_n));
        let min_variance = MetricStats::of(samples.iter().map(|s| s.mirror_min_var));
        let angle = MetricStats::of(samples.iter().map(|s| s.mirror_angle));
        Ok(PeriodMetrics { samples, entanglement, min_variance, angle })
    }

    /// Net rotation of the squeezed axis over the period, in radians.
    ///
    /// Consecutive angle differences (including the wrap-around step from
    /// the last sample back to the first, which represents t₀ + τ) are
    /// folded into (−π/2, π/2] and summed, so an axis that turns
    /// continuously through half a revolution reports ±π even though the
    /// folded angle itself jumps. The grid must resolve the motion: more
    /// than a quarter turn between neighboring samples aliases.
    pub fn angle_advance(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..n {
            let a0 = self.samples[k].mirror_angle;
            let a1 = self.samples[(k + 1) % n].mirror_angle;
            total += fold_direction(a1 - a0);
        }
        total
    }
}

/// Logarithmic negativity of the mirror–light split of `v`, in nats.
///
/// The partial transpose flips the sign of the mirror momentum; its
/// smaller symplectic eigenvalue ν̃₋ follows from the two-mode invariants
/// Δ̃ = det A + det B − 2 det C and det V as
/// ν̃₋² = (Δ̃ − √(Δ̃² − 4 det V))/2, and the result is
/// E_N = max(0, −ln 2ν̃₋). Natural logarithm: a two-mode squeezed vacuum
/// with parameter r gives exactly 2r.
///
/// Errors with [`Error::NonPhysical`] ("unphysical input") when
/// V + (i/2)σ has an eigenvalue below −[`PHYSICALITY_TOLERANCE`]·‖V‖,
/// and with [`Error::InvalidParam`] when `v` is not symmetric.
pub fn logarithmic_negativity(v: &Matrix4<f64>) -> Result<f64> {
    check_symmetric(v)?;
    let defect = physicality_defect(v);
    if defect < -PHYSICALITY_TOLERANCE * v.norm().max(1.0) {
        return Err(Error::NonPhysical {
            context: "logarithmic negativity".into(),
            detail: format!("unphysical input: uncertainty defect {defect:.3e}"),
        });
    }
    let nu = partial_transpose_min_eigenvalue(v);
    Ok((-(2.0 * nu).ln()).max(0.0))
}

/// Smaller symplectic eigenvalue of the partially transposed state, from
/// the symplectic invariants of `v`. Physical input keeps both the
/// discriminant and ν̃₋² nonnegative up to rounding, which the clamps
/// absorb.
fn partial_transpose_min_eigenvalue(v: &Matrix4<f64>) -> f64 {
    let det_a = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
    let det_b = v[(2, 2)] * v[(3, 3)] - v[(2, 3)] * v[(3, 2)];
    let det_c = v[(0, 2)] * v[(1, 3)] - v[(0, 3)] * v[(1, 2)];
    let delta = det_a + det_b - 2.0 * det_c;
    let discriminant = (delta * delta - 4.0 * v.determinant()).max(0.0);
    (0.5 * (delta - discriminant.sqrt())).max(0.0).sqrt()
}

/// Smallest variance over all mirror quadrature directions and the
/// direction it occurs at.
///
/// Returns `(min_var, angle)` where `min_var` is the smaller eigenvalue
/// of the mirror 2×2 block and `angle` the direction of the associated
/// eigenvector, measured from the δq axis in radians and folded into
/// (−π/2, π/2]. When the two eigenvalues coincide (relative splitting
/// below [`DEGENERACY_TOLERANCE`]) every direction is extremal and the
/// angle is reported as 0 by convention.
///
/// The only rejection is a non-symmetric input; physicality is not
/// required, so the function also serves diagnostics on raw solver
/// output.
pub fn mirror_squeezing(v: &Matrix4<f64>) -> Result<(f64, f64)> {
    check_symmetric(v)?;
    let a = v[(0, 0)];
    let c = v[(1, 1)];
    let b = 0.5 * (v[(0, 1)] + v[(1, 0)]);
    let mid = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let min_var = mid - radius;
    if radius <= DEGENERACY_TOLERANCE * mid.abs().max(f64::MIN_POSITIVE) {
        return Ok((min_var, 0.0));
    }
    // 0.5·atan2(2b, a−c) is the direction of the *largest* variance; the
    // smallest lies a quarter turn away.
    let angle = fold_direction(0.5 * (2.0 * b).atan2(a - c) - FRAC_PI_2);
    Ok((min_var, angle))
}

/// Folds a direction (defined modulo π) into (−π/2, π/2].
fn fold_direction(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t > FRAC_PI_2 {
        t -= PI;
    } else if t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

fn check_symmetric(v: &Matrix4<f64>) -> Result<()> {
    let asym = (v - v.transpose()).norm();
    if asym > SYMMETRY_TOLERANCE * v.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid("covariance", "matrix must be symmetric"));
    }
    Ok(())
}

/// Evaluates both metrics on one covariance sample, tagging errors with
/// the sample time.
pub fn sample_metrics(t: f64, v: &Matrix4<f64>) -> Result<MetricsSample> {
    let (mirror_min_var, mirror_angle) = mirror_squeezing(v)?;
    let e_n = logarithmic_negativity(v).map_err(|e| match e {
        Error::NonPhysical { context, detail } => Error::NonPhysical {
            context,
            detail: format!("at t = {t:.6e}: {detail}"),
        },
        other => other,
    })?;
    Ok(MetricsSample { t, e_n, mirror_min_var, mirror_angle, physical: true })
}

/// Evaluates the metrics of `v_of_t` on `samples` uniform grid points
/// covering [t₀, t₀ + τ), endpoint excluded.
///
/// An unphysical matrix anywhere on the grid aborts with an error naming
/// the offending time.
pub fn metrics_over_period<F>(v_of_t: F, t0: f64, tau: f64, samples: usize) -> Result<PeriodMetrics>
where
    F: Fn(f64) -> Matrix4<f64>,
{
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid("tau", "period must be finite and positive"));
    }
    if samples < 4 {
        return Err(Error::invalid("samples", "need at least 4 samples per period"));
    }
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = t0 + tau * k as f64 / samples as f64;
        out.push(sample_metrics(t, &v_of_t(t))?);
    }
    PeriodMetrics::from_samples(out)
}

/// Metrics of the covariance reconstructed from spectral harmonics, on
/// `samples` uniform points over one modulation period starting at t = 0.
pub fn metrics_from_components(
    components: &SpectralComponents,
    samples: usize,
) -> Result<PeriodMetrics> {
    if !(components.omega.is_finite() && components.omega > 0.0) {
        return Err(Error::invalid("components.omega", "modulation frequency must be positive"));
    }
    let tau = 2.0 * PI / components.omega;
    metrics_over_period(|t| components.evaluate(t), 0.0, tau, samples)
}

/// Metrics over the final settled period of a time-domain propagation.
///
/// Uses the stored full-resolution window directly — one sample per
/// integration step, endpoint excluded — so no interpolation happens.
pub fn metrics_from_trajectory(trajectory: &CovarianceTrajectory) -> Result<PeriodMetrics> {
    let spp = trajectory.steps_per_period;
    if trajectory.final_window.len() < 2 * spp + 1 {
        return Err(Error::invalid(
            "trajectory",
            "final window does not cover two full periods",
        ));
    }
    let mut out = Vec::with_capacity(spp);
    for k in spp..2 * spp {
        out.push(sample_metrics(trajectory.window_time(k), &trajectory.final_window[k])?);
    }
    PeriodMetrics::from_samples(out)
}
