//! Shared fixtures for unit tests: the laboratory-scale parameter set used
//! in the numerical experiments and a small dimensionless system on which
//! every solver is fast.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::params::{DerivedConstants, DriveTone, SystemParams};

/// Laboratory-scale system: 25 mm cavity, finesse 1.4e4, 2π MHz mirror
/// with Q = 1e6, 150 ng, 0.1 K, 1064 nm, detuning ω_m, modulation 2ω_m,
/// 10 mW carrier with two 2 mW sidebands.
pub fn lab_system() -> SystemParams {
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

/// Dimensionless test system (all rates relative to ω_m = 1): κ = 0.2,
/// γ_m = 0.002, moderate coupling, thermal occupancy 10, detuning 1,
/// modulation 2 with sidebands at ±1. Stable, non-stiff, fast to solve
/// with every method in the crate.
pub fn desk_constants() -> (DerivedConstants, f64, f64) {
    let omega_mod = 2.0;
    let mut drive_amps = BTreeMap::new();
    drive_amps.insert(-1, Complex64::new(0.5, 0.0));
    drive_amps.insert(0, Complex64::new(1.0, 0.0));
    drive_amps.insert(1, Complex64::new(0.5, 0.0));
    let c = DerivedConstants {
        kappa: 0.2,
        gamma_m: 0.002,
        omega_m: 1.0,
        omega_cav: 0.0,
        omega_laser: 0.0,
        g0: 0.07,
        nbar: 10.0,
        tau: 2.0 * std::f64::consts::PI / omega_mod,
        drive_amps,
    };
    let delta0 = 1.0;
    (c, delta0, omega_mod)
}
