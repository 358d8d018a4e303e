//! Explicit Runge-Kutta integration used by the orbit, Floquet, and
//! covariance modules.
//!
//! One Dormand-Prince 5(4) tableau serves both entry points:
//! [`integrate_fixed`] advances with a caller-chosen constant step (the
//! driven oscillatory systems here are integrated with steps tied to the
//! fastest angular frequency, so error control would only add cost), and
//! [`integrate_adaptive`] uses the embedded 4th-order solution for standard
//! proportional step-size control where tight tolerances matter (principal
//! matrices for stability analysis).
//!
//! States are anything implementing [`OdeState`]: fixed-size vectors and
//! matrices from `nalgebra` get a blanket implementation.

use nalgebra::SMatrix;

use crate::error::{Error, Result};

/// Minimal vector-space interface an integrator state must provide.
pub trait OdeState: Clone {
    /// `self += coeff * other`.
    fn scaled_add(&mut self, coeff: f64, other: &Self);
    /// Norm used for error control and divergence checks.
    fn norm(&self) -> f64;
}

impl<const R: usize, const C: usize> OdeState for SMatrix<f64, R, C> {
    fn scaled_add(&mut self, coeff: f64, other: &Self) {
        *self += other * coeff;
    }

    fn norm(&self) -> f64 {
        nalgebra::Matrix::norm(self)
    }
}

impl OdeState for nalgebra::DMatrix<f64> {
    fn scaled_add(&mut self, coeff: f64, other: &Self) {
        *self += other * coeff;
    }

    fn norm(&self) -> f64 {
        nalgebra::Matrix::norm(self)
    }
}

// Dormand-Prince 5(4) coefficients. The 5th-order weights coincide with the
// last stage row (first-same-as-last), so a fixed step needs six evaluations.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Embedded 4th-order weights.
const E1: f64 = 5179.0 / 57600.0;
const E3: f64 = 7571.0 / 16695.0;
const E4: f64 = 393.0 / 640.0;
const E5: f64 = -92097.0 / 339200.0;
const E6: f64 = 187.0 / 2100.0;
const E7: f64 = 1.0 / 40.0;

/// Performs one Dormand-Prince step of size `h` from `(t, y)`.
///
/// Returns the 5th-order solution and the derivative at the new point
/// (usable as the next step's first stage).
fn dopri_step<S: OdeState>(
    rhs: &mut impl FnMut(f64, &S) -> S,
    t: f64,
    y: &S,
    k1: &S,
    h: f64,
) -> (S, S) {
    let mut arg = y.clone();
    arg.scaled_add(h * A21, k1);
    let k2 = rhs(t + C2 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A31, k1);
    arg.scaled_add(h * A32, &k2);
    let k3 = rhs(t + C3 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A41, k1);
    arg.scaled_add(h * A42, &k2);
    arg.scaled_add(h * A43, &k3);
    let k4 = rhs(t + C4 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A51, k1);
    arg.scaled_add(h * A52, &k2);
    arg.scaled_add(h * A53, &k3);
    arg.scaled_add(h * A54, &k4);
    let k5 = rhs(t + C5 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A61, k1);
    arg.scaled_add(h * A62, &k2);
    arg.scaled_add(h * A63, &k3);
    arg.scaled_add(h * A64, &k4);
    arg.scaled_add(h * A65, &k5);
    let k6 = rhs(t + h, &arg);

    let mut y_new = y.clone();
    y_new.scaled_add(h * B1, k1);
    y_new.scaled_add(h * B3, &k3);
    y_new.scaled_add(h * B4, &k4);
    y_new.scaled_add(h * B5, &k5);
    y_new.scaled_add(h * B6, &k6);
    let k7 = rhs(t + h, &y_new);

    (y_new, k7)
}

/// Single step with a fresh first stage; for drivers that post-process the
/// state between steps (e.g. covariance symmetrization).
pub(crate) fn single_step<S: OdeState>(
    rhs: &mut impl FnMut(f64, &S) -> S,
    t: f64,
    y: &S,
    h: f64,
) -> S {
    let k1 = rhs(t, y);
    dopri_step(rhs, t, y, &k1, h).0
}

/// One step returning `(y_new, err_norm_scale_free, k7)`; used by the
/// adaptive driver.
fn dopri_step_with_error<S: OdeState>(
    rhs: &mut impl FnMut(f64, &S) -> S,
    t: f64,
    y: &S,
    k1: &S,
    h: f64,
    atol: f64,
    rtol: f64,
) -> (S, f64, S) {
    let mut arg = y.clone();
    arg.scaled_add(h * A21, k1);
    let k2 = rhs(t + C2 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A31, k1);
    arg.scaled_add(h * A32, &k2);
    let k3 = rhs(t + C3 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A41, k1);
    arg.scaled_add(h * A42, &k2);
    arg.scaled_add(h * A43, &k3);
    let k4 = rhs(t + C4 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A51, k1);
    arg.scaled_add(h * A52, &k2);
    arg.scaled_add(h * A53, &k3);
    arg.scaled_add(h * A54, &k4);
    let k5 = rhs(t + C5 * h, &arg);

    let mut arg = y.clone();
    arg.scaled_add(h * A61, k1);
    arg.scaled_add(h * A62, &k2);
    arg.scaled_add(h * A63, &k3);
    arg.scaled_add(h * A64, &k4);
    arg.scaled_add(h * A65, &k5);
    let k6 = rhs(t + h, &arg);

    let mut y_new = y.clone();
    y_new.scaled_add(h * B1, k1);
    y_new.scaled_add(h * B3, &k3);
    y_new.scaled_add(h * B4, &k4);
    y_new.scaled_add(h * B5, &k5);
    y_new.scaled_add(h * B6, &k6);
    let k7 = rhs(t + h, &y_new);

    let mut err = y_new.clone();
    err.scaled_add(-1.0, y);
    err.scaled_add(-h * E1, k1);
    err.scaled_add(-h * E3, &k3);
    err.scaled_add(-h * E4, &k4);
    err.scaled_add(-h * E5, &k5);
    err.scaled_add(-h * E6, &k6);
    err.scaled_add(-h * E7, &k7);

    let scale = atol + rtol * y.norm().max(y_new.norm());
    (y_new, err.norm() / scale, k7)
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end` with constant step `h`
/// (the final step is shortened to land on `t_end` exactly).
///
/// `observer` sees every accepted point including the initial one and may
/// abort the integration by returning an error.
pub fn integrate_fixed<S: OdeState>(
    mut rhs: impl FnMut(f64, &S) -> S,
    t0: f64,
    y0: &S,
    t_end: f64,
    h: f64,
    mut observer: impl FnMut(f64, &S) -> Result<()>,
) -> Result<S> {
    assert!(h > 0.0 && t_end > t0, "integration window must be forward with positive step");
    let mut y = y0.clone();
    let mut k1 = rhs(t0, &y);
    observer(t0, &y)?;
    // Track time as t0 + i·h (no running accumulation) so that long
    // integrations keep phase coherence with periodic coefficients.
    let mut i: u64 = 0;
    loop {
        let t = t0 + i as f64 * h;
        if t >= t_end {
            break;
        }
        let remaining = t_end - t;
        if remaining > h {
            let (y_new, k7) = dopri_step(&mut rhs, t, &y, &k1, h);
            y = y_new;
            k1 = k7;
            i += 1;
            observer(t0 + i as f64 * h, &y)?;
        } else {
            // Shortened final step landing exactly on t_end.
            let (y_new, _) = dopri_step(&mut rhs, t, &y, &k1, remaining);
            y = y_new;
            observer(t_end, &y)?;
            break;
        }
    }
    Ok(y)
}

/// Step-size policy for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveControl {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; a crude estimate from the first derivative if `None`.
    pub h_init: Option<f64>,
    /// Hard cap on the step size.
    pub h_max: Option<f64>,
    /// Abort after this many accepted + rejected steps.
    pub max_steps: usize,
}

impl Default for AdaptiveControl {
    fn default() -> Self {
        AdaptiveControl { rtol: 1e-10, atol: 1e-12, h_init: None, h_max: None, max_steps: 2_000_000 }
    }
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end` with embedded-error
/// step control; `observer` sees every accepted point including `t0`.
pub fn integrate_adaptive<S: OdeState>(
    mut rhs: impl FnMut(f64, &S) -> S,
    t0: f64,
    y0: &S,
    t_end: f64,
    ctrl: &AdaptiveControl,
    mut observer: impl FnMut(f64, &S) -> Result<()>,
) -> Result<S> {
    assert!(t_end > t0, "integration window must be forward");
    let span = t_end - t0;
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = rhs(t, &y);
    observer(t, &y)?;

    let mut h = ctrl.h_init.unwrap_or_else(|| {
        // First-derivative heuristic, clipped to the window.
        let scale = ctrl.atol + ctrl.rtol * y.norm();
        let d = k1.norm();
        if d > 0.0 { (scale / d).min(span / 10.0) } else { span / 100.0 }
    });
    if let Some(h_max) = ctrl.h_max {
        h = h.min(h_max);
    }

    let mut steps = 0usize;
    while t < t_end {
        if steps >= ctrl.max_steps {
            return Err(Error::Convergence {
                context: "adaptive integration".into(),
                detail: format!("exceeded {} steps at t = {t:.6e}", ctrl.max_steps),
            });
        }
        steps += 1;
        let step = h.min(t_end - t);
        let (y_new, err, k7) = dopri_step_with_error(&mut rhs, t, &y, &k1, step, ctrl.atol, ctrl.rtol);
        if !err.is_finite() {
            return Err(Error::Convergence {
                context: "adaptive integration".into(),
                detail: format!("non-finite error estimate at t = {t:.6e}"),
            });
        }
        if err <= 1.0 {
            t += step;
            y = y_new;
            k1 = k7;
            observer(t, &y)?;
            let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
            h = step * grow.clamp(0.2, 5.0);
        } else {
            h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
        if let Some(h_max) = ctrl.h_max {
            h = h.min(h_max);
        }
        // Underflow means the step is invisible at working precision
        // relative to the clock, judged on the window's own time scale so
        // sub-second (or very long) physical periods are treated alike.
        if h <= f64::EPSILON * t.abs().max(span) {
            return Err(Error::Convergence {
                context: "adaptive integration".into(),
                detail: format!("step size underflow at t = {t:.6e}"),
            });
        }
    }
    Ok(y)
}
