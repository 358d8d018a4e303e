//! Classical quasi-periodic orbits of the driven cavity + mirror system.
//!
//! With a periodically amplitude-modulated drive, the noise-averaged first
//! moments settle onto an attractor with the period of the modulation. This
//! module computes that orbit two independent ways:
//!
//! * [`orbit_coefficients`] builds the double series
//!   `⟨O⟩(t) = Σ_j Σ_n O_{n,j} e^{i n Ω t} G_0^j` whose coefficients obey an
//!   exact recursion order by order in the coupling `G_0`, and
//!   [`evaluate_orbit`] sums the (truncated) series at a given time;
//! * [`integrate_mean_field`] integrates the full nonlinear mean-field
//!   equations from a cold start until the attractor is reached.
//!
//! Cross-validating the two is one of the crate's acceptance gates.

use std::collections::BTreeMap;

use nalgebra::Vector4;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode;
use crate::params::DerivedConstants;

/// Relative floor (in units of ω_m²) below which a recursion denominator
/// counts as resonant.
pub const DEFAULT_RESONANCE_FLOOR: f64 = 1e-6;

/// Coefficient tables of the double expansion of the classical orbit.
///
/// Tables are indexed `[j][n + n_max]` for coupling order `j ∈ [0, j_max]`
/// and sideband `n ∈ [-n_max, n_max]`. Position and momentum coefficients
/// vanish at even `j`, field coefficients at odd `j`; the stored window is
/// the evaluation truncation, while the recursion itself runs on wider
/// internal windows so all retained coefficients are convolution-exact.
#[derive(Debug, Clone)]
pub struct ClassicalOrbit {
    pub j_max: usize,
    pub n_max: i32,
    /// Expansion parameter `G_0`, 1/s.
    pub g0: f64,
    /// Modulation angular frequency, rad/s.
    pub omega_mod: f64,
    /// Mechanical angular frequency, rad/s (used in consistency checks).
    pub omega_m: f64,
    pub coeffs_q: Vec<Vec<Complex64>>,
    pub coeffs_p: Vec<Vec<Complex64>>,
    pub coeffs_a: Vec<Vec<Complex64>>,
}

impl ClassicalOrbit {
    /// Modulation period.
    pub fn tau(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_mod
    }

    fn coeff(table: &[Vec<Complex64>], j: usize, n: i32, n_max: i32) -> Complex64 {
        if n.abs() > n_max {
            Complex64::ZERO
        } else {
            table[j][(n + n_max) as usize]
        }
    }

    /// Series coefficient `q_{n,j}` (zero outside the stored window).
    pub fn q_coeff(&self, n: i32, j: usize) -> Complex64 {
        Self::coeff(&self.coeffs_q, j, n, self.n_max)
    }

    /// Series coefficient `p_{n,j}` (zero outside the stored window).
    pub fn p_coeff(&self, n: i32, j: usize) -> Complex64 {
        Self::coeff(&self.coeffs_p, j, n, self.n_max)
    }

    /// Series coefficient `a_{n,j}` (zero outside the stored window).
    pub fn a_coeff(&self, n: i32, j: usize) -> Complex64 {
        Self::coeff(&self.coeffs_a, j, n, self.n_max)
    }

    /// Fourier component of the summed series, `Σ_j O_{n,j} G_0^j`.
    pub fn fourier_component(&self, table: OrbitField, n: i32) -> Complex64 {
        let t = match table {
            OrbitField::Position => &self.coeffs_q,
            OrbitField::Momentum => &self.coeffs_p,
            OrbitField::Field => &self.coeffs_a,
        };
        let mut acc = Complex64::ZERO;
        let mut gpow = 1.0;
        for j in 0..=self.j_max {
            acc += Self::coeff(t, j, n, self.n_max) * gpow;
            gpow *= self.g0;
        }
        acc
    }
}

/// Selects one of the three first-moment series of a [`ClassicalOrbit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitField {
    Position,
    Momentum,
    Field,
}

/// Computes the expansion coefficients with the default resonance floor.
pub fn orbit_coefficients(
    c: &DerivedConstants,
    delta0: f64,
    omega_mod: f64,
    j_max: usize,
    n_max: i32,
) -> Result<ClassicalOrbit> {
    orbit_coefficients_with_floor(c, delta0, omega_mod, j_max, n_max, DEFAULT_RESONANCE_FLOOR)
}

/// Computes the expansion coefficients, treating any mechanical denominator
/// smaller than `floor · ω_m²` as a resonance error.
pub fn orbit_coefficients_with_floor(
    c: &DerivedConstants,
    delta0: f64,
    omega_mod: f64,
    j_max: usize,
    n_max: i32,
    floor: f64,
) -> Result<ClassicalOrbit> {
    if n_max < 1 {
        return Err(Error::invalid("n_max", "must be at least 1"));
    }
    let omega_m = c.omega_m;
    let n_drive = c.max_drive_harmonic();
    // The order-j coefficients are supported on |n| ≤ (j+1)·n_drive; this
    // window keeps every retained convolution exact.
    let w = ((j_max as i32 + 1) * n_drive).max(n_max);
    let width = (2 * w + 1) as usize;
    let idx = |n: i32| (n + w) as usize;

    let cavity_denom = |n: i32| Complex64::new(c.kappa, delta0 + n as f64 * omega_mod);
    let mech_denom = |n: i32| -> Result<Complex64> {
        let nw = n as f64 * omega_mod;
        let d = Complex64::new(omega_m * omega_m - nw * nw, c.gamma_m * nw);
        if d.norm() < floor * omega_m * omega_m {
            return Err(Error::ResonantDenominator { n, j: 0, magnitude: d.norm() });
        }
        Ok(d)
    };

    let zero_row = vec![Complex64::ZERO; width];
    let mut q: Vec<Vec<Complex64>> = vec![zero_row.clone(); j_max + 1];
    let mut p: Vec<Vec<Complex64>> = vec![zero_row.clone(); j_max + 1];
    let mut a: Vec<Vec<Complex64>> = vec![zero_row.clone(); j_max + 1];

    // Zero-coupling seed: the bare cavity response to each drive tone.
    for n in -w..=w {
        let e = c.drive_amps.get(&(-n)).copied().unwrap_or(Complex64::ZERO);
        a[0][idx(n)] = e / cavity_denom(n);
    }

    for j in 1..=j_max {
        for n in -w..=w {
            // Radiation-pressure harmonic of |⟨a⟩|² at combined order j-1.
            let mut force = Complex64::ZERO;
            for k in 0..j {
                for m in -w..=w {
                    let other = n + m;
                    if other.abs() > w {
                        continue;
                    }
                    force += a[k][idx(m)].conj() * a[j - 1 - k][idx(other)];
                }
            }
            if force != Complex64::ZERO {
                let d = mech_denom(n).map_err(|e| match e {
                    Error::ResonantDenominator { n, magnitude, .. } => {
                        Error::ResonantDenominator { n, j, magnitude }
                    }
                    other => other,
                })?;
                q[j][idx(n)] = omega_m * force / d;
                p[j][idx(n)] =
                    Complex64::new(0.0, n as f64 * omega_mod / omega_m) * q[j][idx(n)];
            }

            // Optical-spring harmonic of ⟨a⟩⟨q⟩ at combined order j-1.
            let mut mix = Complex64::ZERO;
            for k in 0..j {
                for m in -w..=w {
                    let other = n - m;
                    if other.abs() > w {
                        continue;
                    }
                    mix += a[k][idx(m)] * q[j - 1 - k][idx(other)];
                }
            }
            if mix != Complex64::ZERO {
                a[j][idx(n)] = Complex64::new(0.0, 1.0) * mix / cavity_denom(n);
            }
        }
    }

    // Truncate the internal window down to the stored one.
    let store = |full: Vec<Vec<Complex64>>| -> Vec<Vec<Complex64>> {
        full.into_iter()
            .map(|row| (-n_max..=n_max).map(|n| row[idx(n)]).collect())
            .collect()
    };

    Ok(ClassicalOrbit {
        j_max,
        n_max,
        g0: c.g0,
        omega_mod,
        omega_m,
        coeffs_q: store(q),
        coeffs_p: store(p),
        coeffs_a: store(a),
    })
}

/// Sums the truncated series at time `t`, returning `(⟨q⟩, ⟨p⟩, ⟨a⟩)`.
///
/// The position and momentum series must come out real; a residual
/// imaginary part beyond tolerance indicates corrupted coefficient tables.
pub fn evaluate_orbit(o: &ClassicalOrbit, t: f64) -> Result<(f64, f64, Complex64)> {
    let mut q = Complex64::ZERO;
    let mut p = Complex64::ZERO;
    let mut a = Complex64::ZERO;
    let mut q_scale = 0.0f64;
    let mut gpow = 1.0f64;
    for j in 0..=o.j_max {
        for n in -o.n_max..=o.n_max {
            let phase = Complex64::from_polar(1.0, n as f64 * o.omega_mod * t);
            let qc = o.q_coeff(n, j) * gpow;
            q += qc * phase;
            q_scale += qc.norm();
            p += o.p_coeff(n, j) * gpow * phase;
            a += o.a_coeff(n, j) * gpow * phase;
        }
        gpow *= o.g0;
    }
    let tol = 1e-8 * q_scale.max(f64::MIN_POSITIVE);
    if q.im.abs() > tol || p.im.abs() > tol {
        return Err(Error::NonPhysical {
            context: "orbit evaluation".into(),
            detail: format!(
                "mirror series is not real: Im⟨q⟩ = {:.3e}, Im⟨p⟩ = {:.3e}",
                q.im, p.im
            ),
        });
    }
    Ok((q.re, p.re, a))
}

/// [`evaluate_orbit`] packed as `(q, p, Re a, Im a)`.
pub fn orbit_state(o: &ClassicalOrbit, t: f64) -> Result<Vector4<f64>> {
    let (q, p, a) = evaluate_orbit(o, t)?;
    Ok(Vector4::new(q, p, a.re, a.im))
}

/// Sampled solution of the noise-free mean-field equations.
#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    /// Start time of the grid, s.
    pub t0: f64,
    /// Uniform sample spacing, s.
    pub dt: f64,
    /// Samples of `(⟨q⟩, ⟨p⟩, Re⟨a⟩, Im⟨a⟩)`.
    pub samples: Vec<Vector4<f64>>,
}

impl MeanFieldTrajectory {
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn last_time(&self) -> f64 {
        self.time_at(self.samples.len().saturating_sub(1))
    }

    /// RMS change between the last two whole windows of `steps` samples,
    /// relative to the RMS amplitude of the final window. `None` if the
    /// trajectory is too short.
    pub fn cycle_defect(&self, steps: usize) -> Option<f64> {
        if steps == 0 || self.samples.len() < 2 * steps + 1 {
            return None;
        }
        let last = self.samples.len() - 1;
        let mut diff = 0.0f64;
        let mut amp = 0.0f64;
        for i in 0..steps {
            let a = self.samples[last - i];
            let b = self.samples[last - steps - i];
            diff += (a - b).norm_squared();
            amp += a.norm_squared();
        }
        Some((diff / steps as f64).sqrt() / (amp / steps as f64).sqrt().max(f64::MIN_POSITIVE))
    }
}

/// Step-size and guard settings for [`integrate_mean_field`].
#[derive(Debug, Clone, Copy)]
pub struct MeanFieldControl {
    /// Fixed step; when `None`, `2π/(50·max(ω_m, |Δ0|, κ, Ω))` rounded so a
    /// whole number of steps spans one modulation period.
    pub dt: Option<f64>,
    /// Abort when the state norm exceeds this multiple of the drive's
    /// natural amplitude scale.
    pub divergence_factor: f64,
}

impl Default for MeanFieldControl {
    fn default() -> Self {
        MeanFieldControl { dt: None, divergence_factor: 1e6 }
    }
}

/// Integrates the averaged equations of motion from the cold (all-zero)
/// state: `q̇ = ω_m p`, `ṗ = -ω_m q - γ_m p + G_0|⟨a⟩|²`,
/// `⟨ȧ⟩ = -(κ + iΔ0)⟨a⟩ + i G_0 ⟨a⟩⟨q⟩ + Σ_n E_n e^{-inΩt}`.
///
/// The modulation frequency is taken from `c.tau`; `drive` supplies the
/// tone amplitudes (usually `c.drive_amps`).
pub fn integrate_mean_field(
    c: &DerivedConstants,
    delta0: f64,
    drive: &BTreeMap<i32, Complex64>,
    t_end: f64,
    ctrl: &MeanFieldControl,
) -> Result<MeanFieldTrajectory> {
    if !(t_end > 0.0) {
        return Err(Error::invalid("t_end", "must be positive"));
    }
    let omega_mod = 2.0 * std::f64::consts::PI / c.tau;
    let dt = match ctrl.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(_) => return Err(Error::invalid("dt", "must be positive")),
        None => {
            let fastest = c.omega_m.max(delta0.abs()).max(c.kappa).max(omega_mod);
            let h_rule = 2.0 * std::f64::consts::PI / (50.0 * fastest);
            // Snap to an integer number of steps per period so that periods
            // align with the sample grid exactly.
            let steps_per_period = (c.tau / h_rule).ceil().max(1.0);
            c.tau / steps_per_period
        }
    };

    // Integrate a whole number of steps so every sample sits on the uniform
    // grid (period windows then align exactly with the samples).
    let t_end = dt * (t_end / dt).ceil();

    // Natural magnitude of the driven state, used for the divergence guard:
    // the field saturates near Σ|E_n|/κ and the static mirror displacement
    // near G_0·|a|²/ω_m.
    let field_scale: f64 = drive.values().map(|e| e.norm()).sum::<f64>() / c.kappa;
    let scale = 1.0 + field_scale + c.g0 * field_scale * field_scale / c.omega_m;
    let cap = ctrl.divergence_factor * scale;

    let tones: Vec<(f64, Complex64)> =
        drive.iter().map(|(&n, &e)| (n as f64 * omega_mod, e)).collect();
    let rhs = move |t: f64, s: &Vector4<f64>| -> Vector4<f64> {
        let (q, p, ax, ay) = (s[0], s[1], s[2], s[3]);
        let mut ex = 0.0;
        let mut ey = 0.0;
        for &(w, e) in &tones {
            let (sin, cos) = (w * t).sin_cos();
            // E_n e^{-i n Ω t}
            ex += e.re * cos + e.im * sin;
            ey += e.im * cos - e.re * sin;
        }
        let det = delta0 - c.g0 * q;
        Vector4::new(
            c.omega_m * p,
            -c.omega_m * q - c.gamma_m * p + c.g0 * (ax * ax + ay * ay),
            -c.kappa * ax + det * ay + ex,
            -c.kappa * ay - det * ax + ey,
        )
    };

    let mut samples = Vec::with_capacity((t_end / dt).ceil() as usize + 2);
    ode::integrate_fixed(rhs, 0.0, &Vector4::zeros(), t_end, dt, |t, s| {
        let norm = s.norm();
        if !norm.is_finite() || norm > cap {
            return Err(Error::Divergence { context: "mean-field integration".into(), t, norm });
        }
        samples.push(*s);
        Ok(())
    })?;

    Ok(MeanFieldTrajectory { t0: 0.0, dt, samples })
}

/// Result of comparing the final integrated cycle against the series orbit.
#[derive(Debug, Clone, Copy)]
pub struct CycleComparison {
    /// RMS of the state-space distance over the compared window.
    pub rms_distance: f64,
    /// RMS amplitude of the series orbit over the same window.
    pub rms_amplitude: f64,
}

impl CycleComparison {
    pub fn relative(&self) -> f64 {
        self.rms_distance / self.rms_amplitude.max(f64::MIN_POSITIVE)
    }
}

/// Compares the last full modulation period of `traj` against the series
/// orbit, point by point on the trajectory's own grid.
pub fn compare_cycle(traj: &MeanFieldTrajectory, orbit: &ClassicalOrbit) -> Result<CycleComparison> {
    let steps = (orbit.tau() / traj.dt).round() as usize;
    if steps == 0 || traj.samples.len() < steps + 1 {
        return Err(Error::invalid("trajectory", "shorter than one modulation period"));
    }
    let first = traj.samples.len() - 1 - steps;
    let mut dist = 0.0f64;
    let mut amp = 0.0f64;
    for i in 0..=steps {
        let t = traj.time_at(first + i);
        let reference = orbit_state(orbit, t)?;
        dist += (traj.samples[first + i] - reference).norm_squared();
        amp += reference.norm_squared();
    }
    let n = (steps + 1) as f64;
    Ok(CycleComparison {
        rms_distance: (dist / n).sqrt(),
        rms_amplitude: (amp / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_constants;
    use crate::testutil::{desk_constants, lab_system};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coupling_rows_vanish() {
        let (c, delta0, omega) = desk_constants();
        let o = orbit_coefficients(&c, delta0, omega, 3, 1).unwrap();
        for n in -1..=1 {
            assert_eq!(o.q_coeff(n, 0), Complex64::ZERO);
            assert_eq!(o.p_coeff(n, 0), Complex64::ZERO);
        }
        // Parity: field coefficients live at even j, mirror ones at odd j.
        for n in -1..=1i32 {
            assert_eq!(o.a_coeff(n, 1), Complex64::ZERO);
            assert_eq!(o.a_coeff(n, 3), Complex64::ZERO);
            assert_eq!(o.q_coeff(n, 2), Complex64::ZERO);
        }
    }

    #[test]
    fn bare_cavity_response_lab_scale() {
        let c = derive_constants(&lab_system()).unwrap();
        let o = orbit_coefficients(&c, c.omega_m, 2.0 * c.omega_m, 3, 1).unwrap();
        // |a_{0,0}| = |E_0| / |κ + iΔ0| ≈ 5.91e4 at the lab parameters.
        let a00 = o.a_coeff(0, 0).norm();
        assert!((a00 / 5.9077e4 - 1.0).abs() < 1e-3, "a00 = {a00}");
        // Sidebands: a_{∓1,0} = E_{±1} / (κ + i(Δ0 ∓ Ω)).
        let am1 = o.a_coeff(-1, 0).norm();
        let e1 = c.drive_amps[&1].norm();
        let expect = e1 / Complex64::new(c.kappa, c.omega_m - 2.0 * c.omega_m).norm();
        assert!((am1 / expect - 1.0).abs() < 1e-12, "am1 = {am1}");
    }

    #[test]
    fn no_drive_means_no_orbit() {
        let (mut c, delta0, omega) = desk_constants();
        c.drive_amps.clear();
        let o = orbit_coefficients(&c, delta0, omega, 3, 1).unwrap();
        for j in 0..=3 {
            for n in -1..=1 {
                assert_eq!(o.a_coeff(n, j), Complex64::ZERO);
                assert_eq!(o.q_coeff(n, j), Complex64::ZERO);
            }
        }
        let (q, p, a) = evaluate_orbit(&o, 0.3).unwrap();
        assert_eq!((q, p), (0.0, 0.0));
        assert_eq!(a, Complex64::ZERO);
    }

    #[test]
    fn mirror_series_is_real_for_random_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (mut c, delta0, omega) = desk_constants();
            for amp in c.drive_amps.values_mut() {
                *amp = Complex64::from_polar(amp.norm(), rng.gen_range(-3.14..3.14));
            }
            let o = orbit_coefficients(&c, delta0, omega, 3, 2).unwrap();
            for j in 0..=3 {
                for n in 0..=2 {
                    let diff = (o.q_coeff(-n, j) - o.q_coeff(n, j).conj()).norm();
                    let mag = o.q_coeff(n, j).norm().max(1e-300);
                    assert!(diff <= 1e-10 * mag.max(1.0), "n={n} j={j}: {diff}");
                }
            }
            // Evaluation stays real at arbitrary times.
            for k in 0..8 {
                evaluate_orbit(&o, 0.17 * k as f64).unwrap();
            }
        }
    }

    #[test]
    fn momentum_tracks_position_derivative() {
        let (c, delta0, omega) = desk_constants();
        let o = orbit_coefficients(&c, delta0, omega, 3, 1).unwrap();
        let h = 1e-6;
        for k in 0..16 {
            let t = o.tau() * k as f64 / 16.0;
            let (q_plus, _, _) = evaluate_orbit(&o, t + h).unwrap();
            let (q_minus, _, _) = evaluate_orbit(&o, t - h).unwrap();
            let (_, p, _) = evaluate_orbit(&o, t).unwrap();
            let dq = (q_plus - q_minus) / (2.0 * h);
            assert!(
                (dq - c.omega_m * p).abs() < 1e-6 * (c.omega_m * p.abs()).max(1e-12),
                "t={t}: dq={dq} vs ω_m p={}",
                c.omega_m * p
            );
        }
    }

    #[test]
    fn series_is_periodic() {
        let (c, delta0, omega) = desk_constants();
        let o = orbit_coefficients(&c, delta0, omega, 3, 1).unwrap();
        let (q1, p1, a1) = evaluate_orbit(&o, 0.4).unwrap();
        let (q2, p2, a2) = evaluate_orbit(&o, 0.4 + o.tau()).unwrap();
        assert!((q1 - q2).abs() < 1e-12 * q1.abs().max(1.0));
        assert!((p1 - p2).abs() < 1e-12 * p1.abs().max(1.0));
        assert!((a1 - a2).norm() < 1e-12 * a1.norm().max(1.0));
    }

    #[test]
    fn coupling_tail_shrinks() {
        // Contributions of successive coupling orders must decrease for the
        // truncation to be meaningful.
        let (c, delta0, omega) = desk_constants();
        let o = orbit_coefficients(&c, delta0, omega, 5, 1).unwrap();
        let order_size = |j: usize| -> f64 {
            let mut s = 0.0f64;
            for n in -1..=1 {
                s += (o.q_coeff(n, j) * o.g0.powi(j as i32)).norm()
                    + (o.a_coeff(n, j) * o.g0.powi(j as i32)).norm();
            }
            s
        };
        let j2 = order_size(2);
        let j3 = order_size(3);
        let j4 = order_size(4);
        let j5 = order_size(5);
        assert!(j3 < j2 && j4 < j3 && j5 < j4, "sizes: {j2:.3e} {j3:.3e} {j4:.3e} {j5:.3e}");
    }

    #[test]
    fn resonant_modulation_is_rejected() {
        let (mut c, delta0, _) = desk_constants();
        // Modulation right on the mechanical resonance with a very high Q:
        // the n = ±1 denominator shrinks to γ_m·ω_m below the floor.
        c.gamma_m = 1e-9;
        c.tau = 2.0 * std::f64::consts::PI;
        let err = orbit_coefficients(&c, delta0, 1.0, 3, 1).unwrap_err();
        assert!(matches!(err, Error::ResonantDenominator { .. }), "got {err:?}");
    }

    #[test]
    fn unforced_mean_field_stays_at_rest() {
        let (mut c, delta0, _) = desk_constants();
        c.drive_amps.clear();
        let traj =
            integrate_mean_field(&c, delta0, &c.drive_amps.clone(), 20.0, &Default::default())
                .unwrap();
        assert!(traj.samples.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn constant_drive_reaches_cubic_steady_state() {
        let (mut c, delta0, _) = desk_constants();
        c.drive_amps.clear();
        c.drive_amps.insert(0, Complex64::new(1.0, 0.0));
        let traj =
            integrate_mean_field(&c, delta0, &c.drive_amps.clone(), 4000.0, &Default::default())
                .unwrap();
        let end = traj.samples.last().unwrap();

        // Independent oracle: the steady state solves
        //   I·(κ² + (Δ0 - G_0² I / ω_m)²) = |E_0|²  with I = |⟨a⟩|².
        // Scan + bisect the smallest positive root.
        let e0_sq = 1.0f64;
        let f = |i: f64| {
            let det = delta0 - c.g0 * c.g0 * i / c.omega_m;
            i * (c.kappa * c.kappa + det * det) - e0_sq
        };
        let mut lo = 0.0f64;
        let mut hi = 1e-6f64;
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let intensity = 0.5 * (lo + hi);
        let q_ss = c.g0 * intensity / c.omega_m;
        let a_ss = Complex64::new(1.0, 0.0)
            / Complex64::new(c.kappa, delta0 - c.g0 * q_ss);

        assert!((end[0] - q_ss).abs() < 1e-6 * q_ss.abs().max(1e-6), "q = {} vs {}", end[0], q_ss);
        assert!(end[1].abs() < 1e-6);
        let a_end = Complex64::new(end[2], end[3]);
        assert!((a_end - a_ss).norm() < 1e-6 * a_ss.norm(), "a = {a_end} vs {a_ss}");
    }

    #[test]
    fn modulated_mean_field_matches_series_orbit() {
        let (c, delta0, omega) = desk_constants();
        let o = orbit_coefficients(&c, delta0, omega, 3, 1).unwrap();
        // The slowest transient branch dies at roughly the mechanical rate
        // γ_m/2 = 1e-3; by t = 3e4 the cycle repeats to ~1e-11.
        let traj =
            integrate_mean_field(&c, delta0, &c.drive_amps.clone(), 30000.0, &Default::default())
                .unwrap();
        let steps = (c.tau / traj.dt).round() as usize;
        let defect = traj.cycle_defect(steps).unwrap();
        assert!(defect < 1e-6, "cycle defect {defect}");
        let cmp = compare_cycle(&traj, &o).unwrap();
        assert!(cmp.relative() < 0.01, "relative deviation {}", cmp.relative());
    }

    #[test]
    fn divergence_guard_trips() {
        let (c, delta0, _) = desk_constants();
        // A cap far below the drive's natural amplitude must abort the
        // integration while the field is still ringing up.
        let r = integrate_mean_field(
            &c,
            delta0,
            &c.drive_amps.clone(),
            2000.0,
            &MeanFieldControl { dt: None, divergence_factor: 1e-8 },
        );
        assert!(matches!(r, Err(Error::Divergence { .. })), "got {r:?}");
    }
}

