//! System parameters and the rates/couplings derived from them.
//!
//! [`SystemParams`] collects the laboratory description of the setup in SI
//! units (lengths in meters, masses in kilograms, powers in watts, angular
//! frequencies in rad/s). [`derive_constants`] converts it into the
//! quantities that actually enter the equations of motion: cavity decay
//! rate, mechanical damping, single-photon coupling, thermal occupancy, and
//! the complex drive amplitudes of each modulation sideband.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::consts::{C_LIGHT, HBAR, KB};
use crate::error::{Error, Result};

/// One spectral component of the amplitude-modulated drive: the tone at
/// frequency `ω_laser + harmonic · Ω` with the given input power and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTone {
    /// Sideband index `n` relative to the carrier.
    pub harmonic: i32,
    /// Input laser power of this tone, W.
    pub power: f64,
    /// Optical phase of this tone, rad.
    pub phase: f64,
}

/// Laboratory description of the cavity + mirror + drive system, SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Cavity length, m.
    pub cavity_length: f64,
    /// Cavity finesse (dimensionless).
    pub finesse: f64,
    /// Mechanical angular frequency, rad/s.
    pub omega_m: f64,
    /// Mechanical quality factor (dimensionless).
    pub quality: f64,
    /// Effective mass of the vibrating mirror mode, kg.
    pub mass: f64,
    /// Temperature of the mechanical bath, K. Zero is allowed.
    pub temperature: f64,
    /// Laser carrier wavelength, m.
    pub wavelength: f64,
    /// Cavity-laser detuning at zero coupling, rad/s.
    pub delta0: f64,
    /// Modulation angular frequency of the drive amplitude, rad/s.
    pub omega_mod: f64,
    /// Drive tones; at most one entry per harmonic.
    pub drive: Vec<DriveTone>,
}

impl SystemParams {
    /// Checks the parameter ranges required by every downstream module.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cavity_length", self.cavity_length),
            ("finesse", self.finesse),
            ("omega_m", self.omega_m),
            ("quality", self.quality),
            ("mass", self.mass),
            ("wavelength", self.wavelength),
            ("omega_mod", self.omega_mod),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::invalid(name, format!("must be positive, got {value}")));
            }
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(
                "temperature",
                format!("must be nonnegative, got {}", self.temperature),
            ));
        }
        if !self.delta0.is_finite() {
            return Err(Error::invalid("delta0", "must be finite"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for tone in &self.drive {
            if !(tone.power >= 0.0) || !tone.power.is_finite() {
                return Err(Error::invalid(
                    "drive.power",
                    format!("must be nonnegative, got {} at harmonic {}", tone.power, tone.harmonic),
                ));
            }
            if !tone.phase.is_finite() {
                return Err(Error::invalid("drive.phase", "must be finite"));
            }
            if !seen.insert(tone.harmonic) {
                return Err(Error::invalid(
                    "drive",
                    format!("harmonic {} listed more than once", tone.harmonic),
                ));
            }
        }
        Ok(())
    }
}

/// Rates and couplings entering the equations of motion, SI units.
///
/// All equalities below `derive_constants` hold exactly (to floating
/// precision) by construction:
/// `kappa = π c / (2 F L)`, `gamma_m = ω_m / Q`,
/// `omega_cav = 2π c / λ`, `omega_laser = omega_cav − Δ0`,
/// `g0 = (ω_cav / L) √(ħ/(m ω_m))`,
/// `nbar = [exp(ħω_m / k_B T) − 1]^{-1}` (zero at `T = 0`),
/// `|E_n| = √(2 κ P_n / (ħ ω_laser))`, `tau = 2π / Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    /// Cavity amplitude decay rate, rad/s.
    pub kappa: f64,
    /// Mechanical damping rate, rad/s.
    pub gamma_m: f64,
    /// Mechanical angular frequency, rad/s (copied through for convenience).
    pub omega_m: f64,
    /// Cavity mode angular frequency, rad/s.
    pub omega_cav: f64,
    /// Laser carrier angular frequency, rad/s.
    pub omega_laser: f64,
    /// Single-photon optomechanical coupling, 1/s.
    pub g0: f64,
    /// Mean thermal phonon occupancy of the mechanical bath.
    pub nbar: f64,
    /// Modulation period `2π / Ω`, s.
    pub tau: f64,
    /// Complex drive amplitudes `E_n`, 1/s, keyed by sideband index.
    pub drive_amps: BTreeMap<i32, Complex64>,
}

impl DerivedConstants {
    /// Largest sideband index with a nonzero drive amplitude (0 when the
    /// drive is empty); convolution windows in the orbit expansion grow
    /// with this number.
    pub fn max_drive_harmonic(&self) -> i32 {
        self.drive_amps
            .iter()
            .filter(|(_, amp)| amp.norm() > 0.0)
            .map(|(n, _)| n.abs())
            .max()
            .unwrap_or(0)
    }
}

/// Converts laboratory parameters into the derived rates and couplings.
pub fn derive_constants(p: &SystemParams) -> Result<DerivedConstants> {
    p.validate()?;

    let kappa = std::f64::consts::PI * C_LIGHT / (2.0 * p.finesse * p.cavity_length);
    let gamma_m = p.omega_m / p.quality;
    let omega_cav = 2.0 * std::f64::consts::PI * C_LIGHT / p.wavelength;
    let omega_laser = omega_cav - p.delta0;
    if !(omega_laser > 0.0) {
        return Err(Error::invalid("delta0", "laser frequency ω_cav − Δ0 must stay positive"));
    }
    let g0 = (HBAR / (p.mass * p.omega_m)).sqrt() * omega_cav / p.cavity_length;

    // Thermal occupancy; the exponential form overflows at T = 0, which
    // physically means an empty bath.
    let nbar = if p.temperature == 0.0 {
        0.0
    } else {
        let x = HBAR * p.omega_m / (KB * p.temperature);
        1.0 / x.exp_m1()
    };

    let mut drive_amps = BTreeMap::new();
    for tone in &p.drive {
        let magnitude = (2.0 * kappa * tone.power / (HBAR * omega_laser)).sqrt();
        let amp = Complex64::from_polar(magnitude, tone.phase);
        drive_amps.insert(tone.harmonic, amp);
    }

    Ok(DerivedConstants {
        kappa,
        gamma_m,
        omega_m: p.omega_m,
        omega_cav,
        omega_laser,
        g0,
        nbar,
        tau: 2.0 * std::f64::consts::PI / p.omega_mod,
        drive_amps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameter set used in most numerical experiments: 25 mm cavity,
    /// finesse 1.4e4, 1 MHz mirror with Q = 1e6, 150 ng, 0.1 K, 1064 nm,
    /// detuning ω_m, modulation 2ω_m, carrier 10 mW + two 2 mW sidebands.
    pub fn lab_params() -> SystemParams {
        let omega_m = 2.0 * std::f64::consts::PI * 1.0e6;
        SystemParams {
            cavity_length: 25.0e-3,
            finesse: 1.4e4,
            omega_m,
            quality: 1.0e6,
            mass: 150.0e-12,
            temperature: 0.1,
            wavelength: 1064.0e-9,
            delta0: omega_m,
            omega_mod: 2.0 * omega_m,
            drive: vec![
                DriveTone { harmonic: -1, power: 2.0e-3, phase: 0.0 },
                DriveTone { harmonic: 0, power: 10.0e-3, phase: 0.0 },
                DriveTone { harmonic: 1, power: 2.0e-3, phase: 0.0 },
            ],
        }
    }

    #[test]
    fn decay_rate_from_finesse() {
        let c = derive_constants(&lab_params()).unwrap();
        // κ = π c / (2 F L) at F = 1.4e4, L = 25 mm.
        assert!((c.kappa / 1.345_465_4e6 - 1.0).abs() < 1e-6, "kappa = {}", c.kappa);
    }

    #[test]
    fn mechanical_damping_from_quality() {
        let c = derive_constants(&lab_params()).unwrap();
        assert!((c.gamma_m - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn thermal_occupancy() {
        let c = derive_constants(&lab_params()).unwrap();
        // ħω_m/k_B T ≈ 4.80e-4 at 0.1 K and 1 MHz, so n̄ ≈ 2.08e3.
        assert!((c.nbar / 2.083e3 - 1.0).abs() < 1e-3, "nbar = {}", c.nbar);
    }

    #[test]
    fn zero_temperature_gives_empty_bath() {
        let mut p = lab_params();
        p.temperature = 0.0;
        let c = derive_constants(&p).unwrap();
        assert_eq!(c.nbar, 0.0);
    }

    #[test]
    fn single_photon_coupling() {
        let c = derive_constants(&lab_params()).unwrap();
        // G_0 = (ω_cav/L)·√(ħ/(m ω_m)) with m = 150 ng = 1.5e-10 kg.
        let expect = (HBAR / (150.0e-12 * c.omega_m)).sqrt() * c.omega_cav / 25.0e-3;
        assert!((c.g0 - expect).abs() < 1e-12 * expect);
        assert!((c.g0 - 23.69).abs() < 0.05, "g0 = {}", c.g0);
    }

    #[test]
    fn drive_amplitude_magnitude() {
        let c = derive_constants(&lab_params()).unwrap();
        let e0 = c.drive_amps[&0].norm();
        // |E_0| = √(2κP/(ħω_laser)) ≈ 3.80e11 1/s at 10 mW.
        assert!((e0 / 3.796e11 - 1.0).abs() < 1e-3, "E0 = {e0}");
        // Phases default to zero, so the amplitudes are real and positive.
        assert_eq!(c.drive_amps[&0].im, 0.0);
    }

    #[test]
    fn zero_power_gives_zero_amplitude() {
        let mut p = lab_params();
        for tone in &mut p.drive {
            tone.power = 0.0;
        }
        let c = derive_constants(&p).unwrap();
        assert!(c.drive_amps.values().all(|e| e.norm() == 0.0));
        assert_eq!(c.max_drive_harmonic(), 0);
    }

    #[test]
    fn finesse_scaling_is_exact() {
        let p = lab_params();
        let mut p2 = p.clone();
        p2.finesse *= 2.0;
        let c = derive_constants(&p).unwrap();
        let c2 = derive_constants(&p2).unwrap();
        assert_eq!(c2.kappa, c.kappa / 2.0);
        let mut p3 = p.clone();
        p3.quality *= 2.0;
        let c3 = derive_constants(&p3).unwrap();
        assert_eq!(c3.gamma_m, c.gamma_m / 2.0);
    }

    #[test]
    fn high_temperature_occupancy_is_classical() {
        let mut p = lab_params();
        p.temperature = 300.0;
        let c = derive_constants(&p).unwrap();
        let x = HBAR * c.omega_m / (KB * 300.0);
        assert!(x < 1e-3);
        let classical = 1.0 / x;
        assert!((c.nbar / classical - 1.0).abs() < 1e-3);
    }

    #[test]
    fn phase_does_not_change_magnitude() {
        let mut p = lab_params();
        p.drive[1].phase = 1.234;
        let c0 = derive_constants(&lab_params()).unwrap();
        let c1 = derive_constants(&p).unwrap();
        assert!((c0.drive_amps[&0].norm() - c1.drive_amps[&0].norm()).abs() < 1e-6);
        assert!((c1.drive_amps[&0].arg() - 1.234).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = lab_params();
        p.finesse = 0.0;
        assert!(derive_constants(&p).is_err());
        let mut p = lab_params();
        p.temperature = -1.0;
        assert!(derive_constants(&p).is_err());
        let mut p = lab_params();
        p.drive.push(DriveTone { harmonic: 0, power: 1e-3, phase: 0.0 });
        assert!(derive_constants(&p).is_err());
    }
}
