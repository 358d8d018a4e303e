//! Drift and diffusion matrices of the linearized fluctuation dynamics.
//!
//! Around a periodic classical orbit the quadrature fluctuations
//! u = (δq, δp, δx, δy) obey u̇ = A(t)u + noise with a τ-periodic drift
//!
//! ```text
//!        ⎡    0      ω_m     0      0   ⎤
//! A(t) = ⎢  −ω_m    −γ_m   G_x(t) G_y(t)⎥
//!        ⎢ −G_y(t)    0     −κ    Δ(t)  ⎥
//!        ⎣  G_x(t)    0    −Δ(t)   −κ   ⎦
//! ```
//!
//! where G(t) = √2·g0·⟨a⟩(t) is the field-enhanced coupling (G_x, G_y its
//! real and imaginary parts) and Δ(t) = Δ0 − g0·⟨q⟩(t) the orbit-shifted
//! detuning. Because the orbit is itself a finite Fourier series, the
//! harmonics G_n and Δ_n — and with them the drift blocks A_n with
//! A(t) = Σ_n A_n e^{inΩt} — come out of an exact projection rather than
//! numerical quadrature.
//!
//! The accompanying diffusion matrix D = diag(0, γ_m(2n̄+1), κ, κ) collects
//! the thermal-mechanical and vacuum-optical noise floors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::floquet::PeriodicMatrixFunction;
use crate::orbit::{ClassicalOrbit, OrbitField};
use crate::params::DerivedConstants;

/// Fourier representation of the 4×4 drift matrix A(t).
///
/// Blocks satisfy `A_{-n} = conj(A_n)` so `A(t)` is real; the harmonic
/// content of the couplings is kept alongside the assembled blocks.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    omega: f64,
    omega_m: f64,
    gamma_m: f64,
    kappa: f64,
    g_n: BTreeMap<i32, Complex64>,
    delta_n: BTreeMap<i32, Complex64>,
    blocks: BTreeMap<i32, Matrix4<Complex64>>,
}

impl DriftSpec {
    /// Assembles the drift from explicit coupling and detuning harmonics.
    ///
    /// `g_n` holds the harmonics of the complex coupling G(t) (no symmetry
    /// is required — G is genuinely complex); `delta_n` holds those of the
    /// real detuning Δ(t) and must satisfy `Δ_{-n} = conj(Δ_n)`.
    pub fn from_components(
        omega: f64,
        omega_m: f64,
        gamma_m: f64,
        kappa: f64,
        g_n: BTreeMap<i32, Complex64>,
        delta_n: BTreeMap<i32, Complex64>,
    ) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid("omega", "modulation frequency must be positive"));
        }
        for (name, v) in [("omega_m", omega_m), ("gamma_m", gamma_m), ("kappa", kappa)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "rates must be finite and non-negative"));
            }
        }
        let finite =
            |m: &BTreeMap<i32, Complex64>| m.values().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite(&g_n) || !finite(&delta_n) {
            return Err(Error::invalid("g_n/delta_n", "harmonics must be finite"));
        }
        let delta_scale = delta_n.values().map(|z| z.norm()).fold(f64::MIN_POSITIVE, f64::max);
        for (&n, d) in &delta_n {
            let partner = delta_n.get(&-n).copied().unwrap_or(Complex64::ZERO);
            if (partner - d.conj()).norm() > 1e-12 * delta_scale {
                return Err(Error::NonPhysical {
                    context: "drift assembly".into(),
                    detail: "detuning harmonics do not describe a real-valued function".into(),
                });
            }
        }

        let reach = g_n
            .keys()
            .chain(delta_n.keys())
            .map(|&n| n.abs())
            .max()
            .unwrap_or(0);
        let g_at = |n: i32| g_n.get(&n).copied().unwrap_or(Complex64::ZERO);
        let d_at = |n: i32| delta_n.get(&n).copied().unwrap_or(Complex64::ZERO);

        let mut blocks = BTreeMap::new();
        for n in -reach..=reach {
            let mut a = Matrix4::from_element(Complex64::ZERO);
            if n == 0 {
                a[(0, 1)] = Complex64::new(omega_m, 0.0);
                a[(1, 0)] = Complex64::new(-omega_m, 0.0);
                a[(1, 1)] = Complex64::new(-gamma_m, 0.0);
                a[(2, 2)] = Complex64::new(-kappa, 0.0);
                a[(3, 3)] = Complex64::new(-kappa, 0.0);
            }
            // Harmonics of the real functions G_x(t) = Re G(t) and
            // G_y(t) = Im G(t), expressed through those of G itself.
            let gx = (g_at(n) + g_at(-n).conj()) / 2.0;
            let gy = (g_at(n) - g_at(-n).conj()) / Complex64::new(0.0, 2.0);
            let dn = d_at(n);
            a[(1, 2)] = gx;
            a[(1, 3)] = gy;
            a[(2, 0)] = -gy;
            a[(3, 0)] = gx;
            a[(2, 3)] = dn;
            a[(3, 2)] = -dn;
            blocks.insert(n, a);
        }
        Ok(DriftSpec { omega, omega_m, gamma_m, kappa, g_n, delta_n, blocks })
    }

    /// Modulation frequency Ω.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Period 2π/Ω.
    pub fn tau(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    /// Mechanical frequency entering the top rows.
    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    /// Mechanical damping rate.
    pub fn gamma_m(&self) -> f64 {
        self.gamma_m
    }

    /// Cavity amplitude decay rate.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Largest harmonic index with a stored block.
    pub fn max_harmonic(&self) -> i32 {
        self.blocks.keys().map(|&n| n.abs()).max().unwrap_or(0)
    }

    /// Drift block `A_n`; zero outside the stored range.
    pub fn block(&self, n: i32) -> Matrix4<Complex64> {
        self.blocks.get(&n).copied().unwrap_or_else(|| Matrix4::from_element(Complex64::ZERO))
    }

    /// Coupling harmonic `G_n`; zero outside the stored range.
    pub fn g_component(&self, n: i32) -> Complex64 {
        self.g_n.get(&n).copied().unwrap_or(Complex64::ZERO)
    }

    /// Detuning harmonic `Δ_n`; zero outside the stored range.
    pub fn delta_component(&self, n: i32) -> Complex64 {
        self.delta_n.get(&n).copied().unwrap_or(Complex64::ZERO)
    }

    /// Evaluates the real drift matrix A(t).
    pub fn evaluate(&self, t: f64) -> Matrix4<f64> {
        let mut acc = Matrix4::from_element(Complex64::ZERO);
        for (&n, block) in &self.blocks {
            let phase = Complex64::from_polar(1.0, n as f64 * self.omega * t);
            acc += block * phase;
        }
        acc.map(|z| z.re)
    }

    /// Fastest rate appearing in A(t); step-size rules divide 2π by a
    /// multiple of this.
    pub fn rate_scale(&self) -> f64 {
        let g_sum: f64 = self.g_n.values().map(|z| z.norm()).sum();
        let d_sum: f64 = self.delta_n.values().map(|z| z.norm()).sum();
        self.omega_m.max(self.kappa).max(self.omega).max(g_sum).max(d_sum)
    }

    /// Repackages the blocks for the stability machinery.
    pub fn to_periodic_function(&self) -> Result<PeriodicMatrixFunction> {
        let blocks = self
            .blocks
            .iter()
            .map(|(&n, b)| (n, DMatrix::from_fn(4, 4, |r, c| b[(r, c)])))
            .collect();
        PeriodicMatrixFunction::from_fourier_blocks(self.tau(), blocks)
    }
}

/// Builds the drift from a classical orbit: the coupling harmonics are
/// `G_n = √2·g0·⟨a⟩_n` and the detuning harmonics
/// `Δ_n = Δ0·δ_{n,0} − g0·⟨q⟩_n`, both read off the orbit's Fourier
/// series, truncated to `|n| ≤ n_max`.
pub fn build_drift(
    orbit: &ClassicalOrbit,
    consts: &DerivedConstants,
    delta0: f64,
    n_max: usize,
) -> Result<DriftSpec> {
    if !delta0.is_finite() {
        return Err(Error::invalid("delta0", "detuning must be finite"));
    }
    if (orbit.g0 - consts.g0).abs() > 1e-12 * consts.g0.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::invalid(
            "orbit",
            "orbit was computed with a different single-photon coupling than the constants supplied",
        ));
    }
    let g0 = consts.g0;
    let mut g_n = BTreeMap::new();
    let mut delta_n = BTreeMap::new();
    for n in -(n_max as i32)..=(n_max as i32) {
        let a_n = orbit.fourier_component(OrbitField::Field, n);
        let q_n = orbit.fourier_component(OrbitField::Position, n);
        g_n.insert(n, std::f64::consts::SQRT_2 * g0 * a_n);
        let mut d = -g0 * q_n;
        if n == 0 {
            d += delta0;
        }
        delta_n.insert(n, d);
    }
    DriftSpec::from_components(
        orbit.omega_mod,
        consts.omega_m,
        consts.gamma_m,
        consts.kappa,
        g_n,
        delta_n,
    )
}

/// Diagonal noise floor of the quadrature dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionMatrix {
    matrix: Matrix4<f64>,
}

impl DiffusionMatrix {
    /// D = diag(0, γ_m(2n̄+1), κ, κ).
    pub fn from_rates(gamma_m: f64, nbar: f64, kappa: f64) -> Result<Self> {
        for (name, v) in [("gamma_m", gamma_m), ("nbar", nbar), ("kappa", kappa)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "noise rates must be finite and non-negative"));
            }
        }
        let mut matrix = Matrix4::zeros();
        matrix[(1, 1)] = gamma_m * (2.0 * nbar + 1.0);
        matrix[(2, 2)] = kappa;
        matrix[(3, 3)] = kappa;
        Ok(DiffusionMatrix { matrix })
    }

    /// The diagonal 4×4 matrix itself.
    pub fn as_matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }
}

/// Builds the diffusion matrix from derived system constants.
pub fn build_diffusion(consts: &DerivedConstants) -> Result<DiffusionMatrix> {
    DiffusionMatrix::from_rates(consts.gamma_m, consts.nbar, consts.kappa)
}
