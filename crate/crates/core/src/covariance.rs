//! Time-domain propagation of the quadrature covariance matrix.
//!
//! With u = (δq, δp, δx, δy) and V_ij = ⟨u_i u_j + u_j u_i⟩/2, the
//! linearized dynamics closes on the first two moments and the covariance
//! obeys V̇ = A(t)V + VAᵀ(t) + D. This module integrates that equation with
//! a fixed step tied to the fastest rate in the drift, enforces exact
//! symmetry at every step, watches the quantum-mechanical physicality
//! invariant V + (i/2)σ ⪰ 0, and — once the solution has settled onto the
//! drive's periodic cycle — projects the final period onto its Fourier
//! components V(t) = Σ_n V_n e^{inΩt}.
//!
//! Stability is assessed before propagating: the authoritative verdict is
//! the one from the one-period flow (multipliers inside the unit circle);
//! the simpler sufficient condition — every eigenvalue of the frozen A(t)
//! in the left half-plane for all t — is computed alongside as a separate,
//! strictly informational flag.

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;

use crate::drift::{DiffusionMatrix, DriftSpec};
use crate::error::{Error, Result};
use crate::floquet::{floquet_analysis, FloquetReport};
use crate::ode::single_step;

use std::collections::BTreeMap;

/// The symplectic form for (q, p, x, y) with commutators normalized so the
/// vacuum covariance is ½·identity.
pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Smallest eigenvalue of V + (i/2)σ; non-negative (up to rounding) for
/// every physical Gaussian state.
pub fn physicality_defect(v: &Matrix4<f64>) -> f64 {
    let sigma = symplectic_form();
    let h = DMatrix::from_fn(4, 4, |r, c| Complex64::new(v[(r, c)], 0.5 * sigma[(r, c)]));
    h.symmetric_eigen().eigenvalues.iter().fold(f64::INFINITY, |acc, &e| acc.min(e))
}

/// Vacuum optics and a thermal mirror at occupancy n̄: the natural state
/// of the system before the drive is switched on.
pub fn initial_covariance(nbar: f64) -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(nbar + 0.5, nbar + 0.5, 0.5, 0.5))
}

/// Covariance matrix tagged with its time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceState {
    /// Time stamp (seconds).
    pub t: f64,
    /// Real symmetric 4×4 covariance matrix.
    pub v: Matrix4<f64>,
}

/// Stability double-check of a periodic drift.
#[derive(Debug, Clone)]
pub struct StabilityAssessment {
    /// Authoritative verdict from the one-period flow.
    pub floquet: FloquetReport,
    /// True when every eigenvalue of the frozen drift A(t) has negative
    /// real part at all sampled t. Sufficient for stability, not
    /// necessary; informational only.
    pub pointwise_negative: bool,
}

/// Evaluates both stability criteria for a periodic drift.
pub fn assess_stability(drift: &DriftSpec, t0: f64) -> Result<StabilityAssessment> {
    let bfun = drift.to_periodic_function()?;
    let floquet = floquet_analysis(&bfun, t0)?;
    Ok(StabilityAssessment { floquet, pointwise_negative: pointwise_eigenvalues_negative(drift, 128) })
}

/// True when every eigenvalue of the frozen drift has negative real part
/// on a uniform time grid over one period.
pub fn pointwise_eigenvalues_negative(drift: &DriftSpec, samples: usize) -> bool {
    let tau = drift.tau();
    (0..samples.max(1)).all(|k| {
        let a = drift.evaluate(k as f64 * tau / samples.max(1) as f64);
        a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
    })
}

/// Suggested propagation span after which the periodicity defect of the
/// covariance should fall below `relative_target`, from the slowest decay
/// rate of a stable report (with a safety margin for the polynomial
/// prefactor).
pub fn suggested_horizon(report: &FloquetReport, relative_target: f64) -> Result<f64> {
    if !report.stable {
        return Err(Error::Unstable {
            context: "horizon estimate".into(),
            detail: "no finite settling time for an unstable drift".into(),
        });
    }
    if !(relative_target > 0.0 && relative_target < 1.0) {
        return Err(Error::invalid("relative_target", "target must lie in (0, 1)"));
    }
    Ok((-relative_target.ln() + 4.0) / (-report.lambda_max))
}

/// Step-size and bookkeeping policy for [`propagate_covariance`].
#[derive(Debug, Clone, Copy)]
pub struct CovarianceControl {
    /// Integration step; when `None`, 2π/(100·fastest rate), always
    /// snapped to divide the period exactly.
    pub dt: Option<f64>,
    /// Skip the Floquet stability pre-check (the classical orbit may then
    /// diverge; use for deliberately marginal studies).
    pub skip_stability_check: bool,
    /// Store every k-th integration sample in the decimated series; when
    /// `None`, chosen so roughly 2000 samples are kept.
    pub store_every: Option<usize>,
    /// How many times a physicality violation may trigger step halving
    /// before giving up.
    pub max_step_halvings: u32,
}

impl Default for CovarianceControl {
    fn default() -> Self {
        CovarianceControl {
            dt: None,
            skip_stability_check: false,
            store_every: None,
            max_step_halvings: 3,
        }
    }
}

/// Result of a covariance propagation.
///
/// `samples` is the decimated time series (always containing the first and
/// last point); `final_window` holds every step of the last two periods at
/// full resolution, which is what the periodicity defect and the Fourier
/// extraction work from.
#[derive(Debug, Clone)]
pub struct CovarianceTrajectory {
    /// Start time of the propagation.
    pub t0: f64,
    /// Integration step actually used (divides the period exactly).
    pub dt: f64,
    /// Steps per period τ/dt.
    pub steps_per_period: usize,
    /// Decimation factor of `samples`.
    pub store_every: usize,
    /// Decimated covariance series.
    pub samples: Vec<CovarianceState>,
    /// Start time of `final_window`.
    pub window_t0: f64,
    /// Full-resolution covariances over the last two periods
    /// (2·steps_per_period + 1 entries).
    pub final_window: Vec<Matrix4<f64>>,
    /// Relative periodicity defect max‖V(t+τ) − V(t)‖/max‖V‖ over the
    /// final period.
    pub defect: f64,
    /// Worst physicality defect observed at stored samples, relative to
    /// the covariance norm (more negative = worse).
    pub min_physicality: f64,
    /// Largest relative symmetry residual before per-step symmetrization.
    pub max_asymmetry: f64,
    /// Stability assessment, when the pre-check ran.
    pub stability: Option<StabilityAssessment>,
}

impl CovarianceTrajectory {
    /// Period of the drift that generated this trajectory.
    pub fn tau(&self) -> f64 {
        self.dt * self.steps_per_period as f64
    }

    /// Time of the k-th entry of `final_window`.
    pub fn window_time(&self, k: usize) -> f64 {
        self.window_t0 + k as f64 * self.dt
    }

    /// Final state of the propagation.
    pub fn last(&self) -> &CovarianceState {
        self.samples.last().expect("a trajectory always stores its endpoint")
    }
}

/// Propagates `V̇ = A(t)V + VAᵀ + D` from `initial` to (at least) `t_end`.
///
/// The horizon is rounded up to a whole number of drive periods, no fewer
/// than two, so that the trailing window used for Fourier extraction sits
/// exactly on the integration grid. The state is re-symmetrized after
/// every step and the physicality invariant is checked at every stored
/// sample; a violation beyond tolerance restarts the propagation with the
/// step halved (`max_step_halvings` times) before reporting failure.
pub fn propagate_covariance(
    drift: &DriftSpec,
    diffusion: &DiffusionMatrix,
    initial: &CovarianceState,
    t_end: f64,
    ctrl: &CovarianceControl,
) -> Result<CovarianceTrajectory> {
    let tau = drift.tau();
    let t0 = initial.t;
    if !(t_end.is_finite() && t_end > t0) {
        return Err(Error::invalid("t_end", "horizon must be finite and after the initial time"));
    }
    let v0 = initial.v;
    let asym0 = (v0 - v0.transpose()).norm();
    if !(asym0 <= 1e-9 * v0.norm().max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid("initial", "initial covariance must be symmetric"));
    }
    let v0 = (v0 + v0.transpose()) * 0.5;

    let stability = if ctrl.skip_stability_check {
        None
    } else {
        let assessment = assess_stability(drift, t0)?;
        if !assessment.floquet.stable {
            let worst =
                assessment.floquet.multipliers.iter().map(|m| m.norm()).fold(0.0f64, f64::max);
            return Err(Error::Unstable {
                context: "covariance propagation".into(),
                detail: format!(
                    "drift has a one-period multiplier of modulus {worst:.6e} ≥ 1; \
                     pass the override to integrate anyway"
                ),
            });
        }
        Some(assessment)
    };

    let n_periods = ((t_end - t0) / tau).ceil().max(2.0) as usize;
    let h_rule = 2.0 * std::f64::consts::PI / (100.0 * drift.rate_scale());
    let base_dt = match ctrl.dt {
        Some(requested) => {
            if !(requested.is_finite() && requested > 0.0) {
                return Err(Error::invalid("dt", "step must be positive"));
            }
            requested
        }
        None => h_rule,
    };
    let mut spp = (tau / base_dt).ceil().max(4.0) as usize;

    let d = *diffusion.as_matrix();
    let mut attempt = 0u32;
    'retry: loop {
        let dt = tau / spp as f64;
        let total_steps = n_periods * spp;
        let store_every = ctrl
            .store_every
            .unwrap_or_else(|| (total_steps / 2000).max(1))
            .max(1);

        let mut rhs = |t: f64, v: &Matrix4<f64>| -> Matrix4<f64> {
            let a = drift.evaluate(t);
            a * v + v * a.transpose() + d
        };

        let window_start = total_steps - 2 * spp;
        let mut samples = Vec::with_capacity(total_steps / store_every + 2);
        let mut final_window = Vec::with_capacity(2 * spp + 1);
        let mut max_asymmetry = 0.0f64;
        let mut min_physicality = f64::INFINITY;
        let mut v = v0;

        for i in 0..=total_steps {
            let t = t0 + i as f64 * dt;
            let norm = v.norm();
            if !norm.is_finite() {
                return Err(Error::Divergence { context: "covariance propagation".into(), t, norm });
            }
            let stored = i % store_every == 0 || i == total_steps;
            if stored {
                let rel = physicality_defect(&v) / norm.max(f64::MIN_POSITIVE);
                min_physicality = min_physicality.min(rel);
                if rel < -1e-8 {
                    if attempt < ctrl.max_step_halvings {
                        attempt += 1;
                        spp *= 2;
                        continue 'retry;
                    }
                    return Err(Error::NonPhysical {
                        context: "covariance propagation".into(),
                        detail: format!(
                            "uncertainty-relation defect {rel:.3e} at t = {t:.6e} \
                             persists after {attempt} step halvings"
                        ),
                    });
                }
                samples.push(CovarianceState { t, v });
            }
            if i >= window_start {
                final_window.push(v);
            }
            if i == total_steps {
                break;
            }
            let mut next = single_step(&mut rhs, t, &v, dt);
            let asym = (next - next.transpose()).norm();
            max_asymmetry = max_asymmetry.max(asym / next.norm().max(f64::MIN_POSITIVE));
            next = (next + next.transpose()) * 0.5;
            v = next;
        }

        let scale = final_window.iter().map(|w| w.norm()).fold(f64::MIN_POSITIVE, f64::max);
        let defect = (0..=spp)
            .map(|i| (final_window[i + spp] - final_window[i]).norm())
            .fold(0.0f64, f64::max)
            / scale;

        return Ok(CovarianceTrajectory {
            t0,
            dt,
            steps_per_period: spp,
            store_every,
            samples,
            window_t0: t0 + window_start as f64 * dt,
            final_window,
            defect,
            min_physicality,
            max_asymmetry,
            stability,
        });
    }
}

/// Projects the final period of a settled trajectory onto its Fourier
/// components: V_n = (1/τ)∫ V(t)e^{−inΩt}dt, with V_{−n} = conj(V_n)
/// enforced by construction. The trajectory must have converged onto the
/// periodic cycle (`defect ≤ defect_tol`).
pub fn extract_fourier_components(
    traj: &CovarianceTrajectory,
    n_max: usize,
    defect_tol: f64,
) -> Result<BTreeMap<i32, Matrix4<Complex64>>> {
    if !(traj.defect <= defect_tol) {
        return Err(Error::Convergence {
            context: "covariance Fourier extraction".into(),
            detail: format!(
                "periodicity defect {:.3e} exceeds the tolerance {defect_tol:.3e}; \
                 extend the propagation horizon",
                traj.defect
            ),
        });
    }
    let spp = traj.steps_per_period;
    let omega = 2.0 * std::f64::consts::PI / traj.tau();
    let mut components = BTreeMap::new();
    for n in 0..=(n_max as i32) {
        let mut acc = Matrix4::from_element(Complex64::ZERO);
        // Rectangle rule over the exact final period: spectrally accurate
        // for a periodic integrand on a uniform grid.
        for k in 0..spp {
            let idx = spp + k;
            let t = traj.window_time(idx);
            let phase = Complex64::from_polar(1.0, -(n as f64) * omega * t);
            let w = &traj.final_window[idx];
            for r in 0..4 {
                for c in 0..4 {
                    acc[(r, c)] += phase * w[(r, c)];
                }
            }
        }
        acc /= Complex64::new(spp as f64, 0.0);
        components.insert(n, acc);
        if n > 0 {
            components.insert(-n, acc.map(|z| z.conj()));
        }
    }
    Ok(components)
}
