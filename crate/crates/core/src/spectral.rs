//! Frequency-domain solver for the periodic steady-state covariance.
//!
//! A periodic drift couples fluctuations at frequencies that differ by
//! multiples of the modulation frequency Ω. Stacking the shifted copies
//! ũ(ω + kΩ), |k| ≤ N, turns the equation of motion into one linear solve
//! per frequency with the block matrix of [`assemble_block_matrix`]: each
//! diagonal block is `A_0 − i(ω + kΩ)·I` and the block at row r, column c
//! is the drift harmonic `A_{r−c}`. The noise input correlates stacked
//! components through shifted copies of the diffusion matrix, so the noise
//! spectrum of the central (unshifted) block splits into components
//! `Ṽ_n(ω)` supported on the lattice ω − ω′ = nΩ, and the covariance
//! harmonics of the settled cycle V(t) = Σ V_n e^{inΩt} are recovered as
//! `V_n = (1/2π)·∫ Ṽ_n(ω) dω`.
//!
//! [`spectral_covariance`] evaluates those integrals with adaptive panel
//! quadrature and returns the component set; it is the independent
//! cross-check of the time-domain propagation in [`crate::covariance`].
//! [`spectrum_slice`] tabulates the stationary component Ṽ_0(ω) — the
//! observable noise spectra of the four quadratures — and reports peak
//! positions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;

use crate::drift::{DiffusionMatrix, DriftSpec};
use crate::error::{Error, Result};
use crate::floquet::floquet_analysis;
use crate::linalg::solve_lyapunov;

/// Largest accepted sideband truncation order; the stacked system is
/// 4(2N+1) wide, and orders beyond this have no physical payoff.
pub const MAX_SIDEBANDS: usize = 8;

/// Pre-enforcement tolerance on ‖V_{−n} − V_n*‖: the two members of a pair
/// are integrated independently, so their mismatch measures real quadrature
/// error and is not allowed to exceed this fraction of the largest
/// component before the pairing is enforced.
pub const CONJUGATION_DEFECT_LIMIT: f64 = 1e-6;

/// Forced bisection depth for the main window: every top-level panel is
/// split at least this often so a narrow resonance strictly inside a panel
/// cannot slip between the first few nodes.
const MIN_DEPTH_MAIN: u32 = 3;

/// Forced bisection depth for the tail octaves, which are smooth.
const MIN_DEPTH_TAIL: u32 = 2;

/// Peaks below this fraction of the column maximum are treated as ripple
/// and left out of the reported peak list. The tabulated spectra are
/// smooth rational functions, so even faint satellites are genuine; the
/// floor only suppresses flat-background jitter.
const PEAK_FLOOR: f64 = 1e-6;

/// Work limits and tolerances for [`spectral_covariance`] and
/// [`spectrum_slice`].
#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    /// Target relative accuracy of the ω-quadrature.
    pub rel_tol: f64,
    /// The frequency window keeps doubling until the last octave
    /// contributes less than this fraction of the running total.
    pub tail_rel_tol: f64,
    /// Hard limit on panel bisection depth.
    pub max_depth: u32,
    /// Hard limit on integrand evaluations per solver call.
    pub max_evaluations: usize,
    /// Hard limit on window doublings.
    pub max_octaves: u32,
    /// Replaces the automatic initial half-window [`spectral_window`];
    /// the octave extension still applies on top of it.
    pub window_override: Option<f64>,
    /// Skip the one-period stability pre-check (for callers that already
    /// hold a stable verdict for this drift).
    pub skip_stability_check: bool,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            rel_tol: 1e-6,
            tail_rel_tol: 1e-4,
            max_depth: 42,
            max_evaluations: 4_000_000,
            max_octaves: 12,
            window_override: None,
            skip_stability_check: false,
        }
    }
}

impl SpectralOptions {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0 && self.rel_tol <= 0.1) {
            return Err(Error::invalid("rel_tol", "must lie in (0, 0.1]"));
        }
        if !(self.tail_rel_tol.is_finite() && self.tail_rel_tol > 0.0 && self.tail_rel_tol <= 0.1)
        {
            return Err(Error::invalid("tail_rel_tol", "must lie in (0, 0.1]"));
        }
        if self.max_depth < MIN_DEPTH_MAIN + 1 || self.max_depth > 60 {
            return Err(Error::invalid("max_depth", "must lie in [4, 60]"));
        }
        if self.max_evaluations < 100 {
            return Err(Error::invalid("max_evaluations", "budget below any useful quadrature"));
        }
        if self.max_octaves == 0 {
            return Err(Error::invalid("max_octaves", "at least one octave is required"));
        }
        if let Some(w) = self.window_override {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid("window_override", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Covariance harmonics from the frequency-domain solver, with quadrature
/// diagnostics.
#[derive(Debug, Clone)]
pub struct SpectralComponents {
    /// Sideband truncation order N of the stacked solve.
    pub n_sidebands: usize,
    /// Modulation frequency Ω of the drift, for reconstruction.
    pub omega: f64,
    /// Harmonics V_n for |n| ≤ 2N, with V_{−n} = V_n* and V_n = V_nᵀ
    /// enforced.
    pub components: BTreeMap<i32, Matrix4<Complex64>>,
    /// Absolute (Frobenius) quadrature error estimate per harmonic.
    pub quadrature_errors: BTreeMap<i32, f64>,
    /// Relative mismatch ‖V_{−n} − V_n*‖ before the pairing was enforced.
    pub conjugation_defect: f64,
    /// Relative mismatch ‖V_n − V_nᵀ‖ before symmetrization. The exact
    /// integrals are symmetric; the finite window is not, so this records
    /// the window truncation level.
    pub symmetry_defect: f64,
    /// Half-width of the frequency window actually covered.
    pub window: f64,
    /// Number of integrand evaluations spent.
    pub evaluations: usize,
}

impl SpectralComponents {
    /// Harmonic V_n; zero outside the computed range.
    pub fn component(&self, n: i32) -> Matrix4<Complex64> {
        self.components.get(&n).copied().unwrap_or_else(|| Matrix4::from_element(Complex64::ZERO))
    }

    /// Reconstructs the real covariance matrix V(t) = Σ V_n e^{inΩt}.
    pub fn evaluate(&self, t: f64) -> Matrix4<f64> {
        self.sum_at(t).map(|z| z.re)
    }

    /// Largest imaginary entry of Σ V_n e^{inΩt} that [`Self::evaluate`]
    /// discards; with the conjugate pairing enforced this is rounding
    /// noise, and anything larger signals corrupted components.
    pub fn imaginary_residue(&self, t: f64) -> f64 {
        self.sum_at(t).iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    fn sum_at(&self, t: f64) -> Matrix4<Complex64> {
        let mut acc = Matrix4::from_element(Complex64::ZERO);
        for (&n, block) in &self.components {
            let phase = Complex64::from_polar(1.0, n as f64 * self.omega * t);
            acc += block * phase;
        }
        acc
    }
}

/// Noise spectra of the four quadratures over a frequency range.
#[derive(Debug, Clone)]
pub struct SpectrumSlice {
    /// Sample frequencies (uniform grid).
    pub omegas: Vec<f64>,
    /// Mirror position spectrum S_qq(ω).
    pub s_qq: Vec<f64>,
    /// Mirror momentum spectrum S_pp(ω).
    pub s_pp: Vec<f64>,
    /// Field amplitude spectrum S_xx(ω).
    pub s_xx: Vec<f64>,
    /// Field phase spectrum S_yy(ω).
    pub s_yy: Vec<f64>,
    /// Refined peak positions per column, in the column order
    /// (qq, pp, xx, yy).
    pub peaks: [Vec<f64>; 4],
}

/// Builds the sideband-stacked response matrix Ā(ω) of size 4(2N+1):
/// diagonal blocks `A_0 − i(ω + kΩ)·I` for k = −N..N and off-diagonal
/// blocks `A_{r−c}` (zero beyond the drift's stored harmonics).
pub fn assemble_block_matrix(
    drift: &DriftSpec,
    omega: f64,
    n_sidebands: usize,
) -> DMatrix<Complex64> {
    let nb = 2 * n_sidebands + 1;
    let reach = drift.max_harmonic();
    let mut m = DMatrix::from_element(4 * nb, 4 * nb, Complex64::ZERO);
    for r in 0..nb {
        for c in 0..nb {
            let n = r as i32 - c as i32;
            if n.abs() > reach {
                continue;
            }
            m.view_mut((4 * r, 4 * c), (4, 4)).copy_from(&drift.block(n));
        }
        let k = r as i32 - n_sidebands as i32;
        let shift = Complex64::new(0.0, -(omega + k as f64 * drift.omega()));
        for i in 0..4 {
            m[(4 * r + i, 4 * r + i)] += shift;
        }
    }
    m
}

/// Width of the mechanical spectral line under the time-averaged drift,
/// from the power balance through the mechanical bath: the stationary
/// solve of `A_0·V + V·A_0ᵀ + D = 0` fixes the mirror energy, and the
/// line width is the thermal influx D₂₂/2 divided by that energy. For an
/// uncoupled mirror this is exactly γ_m; cooling widens the line by the
/// same factor by which it drains the occupancy. Returns 0 (and thereby
/// defers to κ in the window formula) when the average drift admits no
/// positive stationary energy.
pub fn effective_mechanical_linewidth(drift: &DriftSpec, diffusion: &DiffusionMatrix) -> f64 {
    let a0 = drift.block(0).map(|z| z.re);
    let d = diffusion.as_matrix();
    let influx = d[(1, 1)] / 2.0;
    if !(influx > 0.0) {
        return 0.0;
    }
    match solve_lyapunov(&a0, d) {
        Ok(v) => {
            let energy = (v[(0, 0)] + v[(1, 1)]) / 2.0;
            if energy.is_finite() && energy > 0.0 {
                influx / energy
            } else {
                0.0
            }
        }
        Err(_) => 0.0,
    }
}

/// Default half-width of the ω-quadrature window: the outermost resonance
/// that the stacked system can place, max(|Δ₀|, ω_m) + (2N+2)Ω, plus 40
/// half-widths of the broadest line. The octave extension of
/// [`spectral_covariance`] verifies the choice a posteriori.
pub fn spectral_window(drift: &DriftSpec, diffusion: &DiffusionMatrix, n_sidebands: usize) -> f64 {
    let gamma_eff = effective_mechanical_linewidth(drift, diffusion);
    drift.delta_component(0).re.abs().max(drift.omega_m())
        + (2 * n_sidebands + 2) as f64 * drift.omega()
        + 40.0 * drift.kappa().max(gamma_eff)
}

fn singular_at(omega: f64) -> Error {
    Error::Linalg {
        context: "sideband-stacked frequency solve".into(),
        detail: format!("response matrix is singular at omega = {omega:.9e} rad/s"),
    }
}

fn ensure_stable(drift: &DriftSpec, context: &str) -> Result<()> {
    let report = floquet_analysis(&drift.to_periodic_function()?, 0.0)?;
    if report.stable {
        return Ok(());
    }
    let worst = report.multipliers.iter().map(|m| m.norm()).fold(0.0f64, f64::max);
    Err(Error::Unstable {
        context: context.into(),
        detail: format!(
            "drift has a one-period multiplier of modulus {worst:.6e} ≥ 1; \
             no periodic steady state exists"
        ),
    })
}

/// One quadrature node: the set Ṽ_n(ω) for n = −2N..2N, stored at index
/// n + 2N.
type NodeValue = Vec<Matrix4<Complex64>>;

/// Shared state of one solver call: the drift, the complexified diffusion
/// block, the central-block selector and the evaluation budget.
struct SidebandSolver<'a> {
    drift: &'a DriftSpec,
    diffusion: Matrix4<Complex64>,
    n_sidebands: usize,
    selector: DMatrix<Complex64>,
    evaluations: usize,
    max_evaluations: usize,
}

impl<'a> SidebandSolver<'a> {
    fn new(
        drift: &'a DriftSpec,
        diffusion: &DiffusionMatrix,
        n_sidebands: usize,
        max_evaluations: usize,
    ) -> SidebandSolver<'a> {
        let nb = 2 * n_sidebands + 1;
        let mut selector = DMatrix::from_element(4 * nb, 4, Complex64::ZERO);
        for i in 0..4 {
            selector[(4 * n_sidebands + i, i)] = Complex64::ONE;
        }
        SidebandSolver {
            drift,
            diffusion: diffusion.as_matrix().map(|v| Complex64::new(v, 0.0)),
            n_sidebands,
            selector,
            evaluations: 0,
            max_evaluations,
        }
    }

    fn component_count(&self) -> usize {
        4 * self.n_sidebands + 1
    }

    /// Central block-row of Ā⁻¹(ω) as a 4 × 4(2N+1) matrix, via an LU
    /// solve against the transposed system (never the explicit inverse).
    fn central_rows(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let at = assemble_block_matrix(self.drift, omega, self.n_sidebands).transpose();
        let z = at.lu().solve(&self.selector).ok_or_else(|| singular_at(omega))?;
        Ok(z.transpose())
    }

    /// Central block-column of Ā(ω)^{−†} as a 4(2N+1) × 4 matrix.
    fn central_cols_adjoint(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let aa = assemble_block_matrix(self.drift, omega, self.n_sidebands).adjoint();
        aa.lu().solve(&self.selector).ok_or_else(|| singular_at(omega))
    }

    /// Contracts the central row of the first inverse with the implicit
    /// noise block structure (diffusion on the block diagonal shifted by
    /// n) and the central column of the second: the noise matrix itself is
    /// never materialized.
    fn contract(&self, x: &DMatrix<Complex64>, y: &DMatrix<Complex64>, n: i32) -> Matrix4<Complex64> {
        let nb = (2 * self.n_sidebands + 1) as i32;
        let mut acc = Matrix4::from_element(Complex64::ZERO);
        for r in 0..nb {
            let c = r + n;
            if c < 0 || c >= nb {
                continue;
            }
            let xb = x.fixed_view::<4, 4>(0, 4 * r as usize);
            let yb = y.fixed_view::<4, 4>(4 * c as usize, 0);
            acc += xb * self.diffusion * yb;
        }
        acc
    }

    /// All noise-spectrum components Ṽ_n(ω) at one frequency.
    fn eval(&mut self, omega: f64) -> Result<NodeValue> {
        self.evaluations += 1;
        if self.evaluations > self.max_evaluations {
            return Err(Error::Convergence {
                context: "spectral quadrature".into(),
                detail: format!(
                    "evaluation budget of {} nodes exhausted; raise max_evaluations \
                     or relax rel_tol",
                    self.max_evaluations
                ),
            });
        }
        let x = self.central_rows(omega)?;
        let span = 2 * self.n_sidebands as i32;
        let mut out = Vec::with_capacity(self.component_count());
        for n in -span..=span {
            let y = self.central_cols_adjoint(omega - n as f64 * self.drift.omega())?;
            out.push(self.contract(&x, &y, n));
        }
        Ok(out)
    }

    /// The stationary component Ṽ_0(ω) alone (two LU solves instead of
    /// 4N+2); the workhorse of [`spectrum_slice`].
    fn stationary_density(&mut self, omega: f64) -> Result<Matrix4<Complex64>> {
        self.evaluations += 1;
        if self.evaluations > self.max_evaluations {
            return Err(Error::Convergence {
                context: "spectrum tabulation".into(),
                detail: format!("evaluation budget of {} nodes exhausted", self.max_evaluations),
            });
        }
        let x = self.central_rows(omega)?;
        let y = self.central_cols_adjoint(omega)?;
        Ok(self.contract(&x, &y, 0))
    }
}

fn simpson_rule(fa: &NodeValue, fm: &NodeValue, fb: &NodeValue, width: f64) -> NodeValue {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((a, m), b)| (a + b + m.scale(4.0)).scale(width / 6.0))
        .collect()
}

fn vec_add(a: &NodeValue, b: &NodeValue) -> NodeValue {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vec_total_norm(a: &NodeValue) -> f64 {
    a.iter().map(|m| m.norm()).sum()
}

/// Integral over one breakpoint interval (or a whole window) together
/// with per-component error estimates.
struct PanelOutcome {
    value: NodeValue,
    errors: Vec<f64>,
    depth_exhausted: bool,
}

impl PanelOutcome {
    fn merge(self, other: PanelOutcome) -> PanelOutcome {
        PanelOutcome {
            value: vec_add(&self.value, &other.value),
            errors: self.errors.iter().zip(&other.errors).map(|(a, b)| a + b).collect(),
            depth_exhausted: self.depth_exhausted || other.depth_exhausted,
        }
    }
}

/// Recursive panel bisection: compares the one-interval Simpson value
/// against the two-half refinement, accepts the Richardson-extrapolated
/// pair when the discrepancy is inside the budget, and otherwise recurses
/// with half the budget per half. Values bubble up as left + right, so
/// the final sum is a fixed-shape pairwise tree independent of evaluation
/// order — the layout a parallel reduction would also use.
#[allow(clippy::too_many_arguments)]
fn refine_panel(
    solver: &mut SidebandSolver,
    a: f64,
    b: f64,
    fa: &NodeValue,
    fm: &NodeValue,
    fb: &NodeValue,
    coarse: &NodeValue,
    tol: f64,
    depth: u32,
    min_depth: u32,
    max_depth: u32,
) -> Result<PanelOutcome> {
    let m = 0.5 * (a + b);
    let flm = solver.eval(0.5 * (a + m))?;
    let frm = solver.eval(0.5 * (m + b))?;
    let left = simpson_rule(fa, &flm, fm, m - a);
    let right = simpson_rule(fm, &frm, fb, b - m);
    let fine = vec_add(&left, &right);
    let errors: Vec<f64> =
        fine.iter().zip(coarse).map(|(f, c)| (f - c).norm() / 15.0).collect();
    let total: f64 = errors.iter().sum();
    if depth >= min_depth && (total <= tol || depth >= max_depth) {
        let value =
            fine.iter().zip(coarse).map(|(f, c)| f + (f - c).unscale(15.0)).collect();
        return Ok(PanelOutcome {
            value,
            errors,
            depth_exhausted: depth >= max_depth && total > tol,
        });
    }
    let l = refine_panel(
        solver, a, m, fa, &flm, fm, &left, 0.5 * tol, depth + 1, min_depth, max_depth,
    )?;
    let r = refine_panel(
        solver, m, b, fm, &frm, fb, &right, 0.5 * tol, depth + 1, min_depth, max_depth,
    )?;
    Ok(l.merge(r))
}

/// Adaptive quadrature of the component set over a breakpoint ladder.
/// `tol_abs` sets the absolute error budget; when `None`, it is derived
/// from a coarse first pass as `rel_tol` times the estimated magnitude.
/// Returns the outcome and the budget actually used.
fn integrate_over(
    solver: &mut SidebandSolver,
    points: &[f64],
    rel_tol: f64,
    tol_abs: Option<f64>,
    min_depth: u32,
    max_depth: u32,
) -> Result<(PanelOutcome, f64)> {
    let panels = points.len() - 1;
    let ends: Vec<NodeValue> = points.iter().map(|&w| solver.eval(w)).collect::<Result<_>>()?;
    let mut mids = Vec::with_capacity(panels);
    let mut coarse = Vec::with_capacity(panels);
    let mut magnitude = vec![Matrix4::from_element(Complex64::ZERO); solver.component_count()];
    for i in 0..panels {
        let fm = solver.eval(0.5 * (points[i] + points[i + 1]))?;
        let s = simpson_rule(&ends[i], &fm, &ends[i + 1], points[i + 1] - points[i]);
        magnitude = vec_add(&magnitude, &s);
        mids.push(fm);
        coarse.push(s);
    }
    let budget =
        tol_abs.unwrap_or_else(|| rel_tol * vec_total_norm(&magnitude).max(f64::MIN_POSITIVE));
    let per_panel = budget / panels as f64;
    let mut total: Option<PanelOutcome> = None;
    for i in 0..panels {
        let out = refine_panel(
            solver,
            points[i],
            points[i + 1],
            &ends[i],
            &mids[i],
            &ends[i + 1],
            &coarse[i],
            per_panel,
            1,
            min_depth,
            max_depth,
        )?;
        total = Some(match total {
            None => out,
            Some(t) => t.merge(out),
        });
    }
    Ok((total.expect("at least one panel"), budget))
}

/// Breakpoint ladder for the main window: the origin, every resonance the
/// stacked system can place (±ω_m and ±Δ₀, shifted by up to (N+1)Ω), and
/// the window edges. Mirror points are inserted explicitly so the ladder
/// is exactly symmetric — the quadrature then probes ±ω pairs identically
/// and the conjugate-pair defect measures solver error, not grid bias.
fn quadrature_breakpoints(drift: &DriftSpec, n_sidebands: usize, w: f64) -> Vec<f64> {
    let mut pts = vec![0.0, w, -w];
    let delta0 = drift.delta_component(0).re;
    let reach = n_sidebands as i32 + 1;
    for k in -reach..=reach {
        for base in [drift.omega_m(), delta0] {
            for sign in [1.0, -1.0] {
                let p = sign * base + k as f64 * drift.omega();
                if p.abs() < w * (1.0 - 1e-9) {
                    pts.push(p);
                    pts.push(-p);
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * w);
    pts
}

/// Computes the covariance harmonics V_n, |n| ≤ 2N, of the periodic
/// steady state by integrating the noise-spectrum components over
/// frequency. Stacked linear systems are solved by LU at every node (the
/// inverse is never formed), the window grows by octaves until the tail
/// is negligible, and the conjugate pairing V_{−n} = V_n* — computed
/// twice, once per sign — is checked against
/// [`CONJUGATION_DEFECT_LIMIT`] before being enforced exactly.
pub fn spectral_covariance(
    drift: &DriftSpec,
    diffusion: &DiffusionMatrix,
    n_sidebands: usize,
    opts: &SpectralOptions,
) -> Result<SpectralComponents> {
    opts.validate()?;
    if n_sidebands > MAX_SIDEBANDS {
        return Err(Error::invalid(
            "n_sidebands",
            format!("truncation order {n_sidebands} exceeds the cap {MAX_SIDEBANDS}"),
        ));
    }
    if !opts.skip_stability_check {
        ensure_stable(drift, "spectral covariance")?;
    }

    let mut w = opts.window_override.unwrap_or_else(|| spectral_window(drift, diffusion, n_sidebands));
    let mut solver = SidebandSolver::new(drift, diffusion, n_sidebands, opts.max_evaluations);
    let points = quadrature_breakpoints(drift, n_sidebands, w);
    let (mut acc, budget) = integrate_over(
        &mut solver,
        &points,
        opts.rel_tol,
        None,
        MIN_DEPTH_MAIN,
        opts.max_depth,
    )?;

    // Octave extension: append [w, 2w] on both sides until the last pair
    // of tail panels stops mattering. Tail values are added regardless —
    // they are part of the integral — and only the stopping rule is
    // relative.
    let mut converged = vec_total_norm(&acc.value) == 0.0;
    let mut octaves = 0;
    while !converged && octaves < opts.max_octaves {
        let (right, _) = integrate_over(
            &mut solver,
            &[w, 2.0 * w],
            opts.rel_tol,
            Some(budget),
            MIN_DEPTH_TAIL,
            opts.max_depth,
        )?;
        let (left, _) = integrate_over(
            &mut solver,
            &[-2.0 * w, -w],
            opts.rel_tol,
            Some(budget),
            MIN_DEPTH_TAIL,
            opts.max_depth,
        )?;
        let tail = left.merge(right);
        let tail_norm = vec_total_norm(&tail.value);
        acc = acc.merge(tail);
        w *= 2.0;
        octaves += 1;
        converged = tail_norm <= opts.tail_rel_tol * vec_total_norm(&acc.value);
    }
    if !converged {
        let span = 2 * n_sidebands as i32;
        let worst = acc
            .errors
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i as i32 - span)
            .unwrap_or(0);
        return Err(Error::Convergence {
            context: "spectral quadrature".into(),
            detail: format!(
                "quadrature not converged: the window reached ±{w:.3e} rad/s and the \
                 last octave still contributes more than {:.1e} of the total \
                 (worst component n = {worst})",
                opts.tail_rel_tol
            ),
        });
    }

    // Normalize: V_n = (1/2π)·∫ Ṽ_n dω.
    let norm = 1.0 / (2.0 * std::f64::consts::PI);
    let span = 2 * n_sidebands as i32;
    let idx = |n: i32| (n + span) as usize;
    let raw: Vec<Matrix4<Complex64>> = acc.value.iter().map(|m| m.scale(norm)).collect();
    let scale = raw.iter().map(|m| m.norm()).fold(f64::MIN_POSITIVE, f64::max);

    let conjugation_defect = (0..=span)
        .map(|n| (raw[idx(-n)] - raw[idx(n)].map(|z| z.conj())).norm() / scale)
        .fold(0.0, f64::max);
    if conjugation_defect > CONJUGATION_DEFECT_LIMIT {
        return Err(Error::Convergence {
            context: "spectral quadrature".into(),
            detail: format!(
                "conjugate-pair defect {conjugation_defect:.3e} exceeds \
                 {CONJUGATION_DEFECT_LIMIT:.1e}; tighten rel_tol or widen the window"
            ),
        });
    }
    let symmetry_defect =
        raw.iter().map(|m| (m - m.transpose()).norm() / scale).fold(0.0, f64::max);

    // Project onto the structure of a real symmetric V(t): conjugate
    // pairing across ±n, then symmetry within each harmonic. Both hold
    // exactly for the full-line integrals; the recorded defects say how
    // far the finite quadrature landed from that manifold.
    let mut components = BTreeMap::new();
    for n in 0..=span {
        let paired = (raw[idx(n)] + raw[idx(-n)].map(|z| z.conj())).scale(0.5);
        let sym = (paired + paired.transpose()).scale(0.5);
        components.insert(n, sym);
        components.insert(-n, sym.map(|z| z.conj()));
    }

    let quadrature_errors =
        (-span..=span).map(|n| (n, acc.errors[idx(n)] * norm)).collect();

    Ok(SpectralComponents {
        n_sidebands,
        omega: drift.omega(),
        components,
        quadrature_errors,
        conjugation_defect,
        symmetry_defect,
        window: w,
        evaluations: solver.evaluations,
    })
}

/// Local maxima of a tabulated column, refined by a parabola through the
/// three surrounding samples and filtered against [`PEAK_FLOOR`]·max.
fn find_peaks(omegas: &[f64], values: &[f64]) -> Vec<f64> {
    let top = values.iter().copied().fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Vec::new();
    }
    let floor = PEAK_FLOOR * top;
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if values[i] < floor || values[i] <= values[i - 1] || values[i] < values[i + 1] {
            continue;
        }
        let denom = values[i - 1] - 2.0 * values[i] + values[i + 1];
        let shift = if denom < 0.0 {
            (0.5 * (values[i - 1] - values[i + 1]) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        out.push(omegas[i] + shift * (omegas[i + 1] - omegas[i]));
    }
    out
}

/// Tabulates the stationary noise spectra S_qq, S_pp, S_xx, S_yy — the
/// diagonal of Ṽ_0(ω) — on a uniform grid and reports the peak positions
/// of each column. The modulation's sidebands show up as satellite peaks
/// displaced by multiples of Ω from the bare resonances.
pub fn spectrum_slice(
    drift: &DriftSpec,
    diffusion: &DiffusionMatrix,
    n_sidebands: usize,
    omega_min: f64,
    omega_max: f64,
    points: usize,
    opts: &SpectralOptions,
) -> Result<SpectrumSlice> {
    opts.validate()?;
    if n_sidebands > MAX_SIDEBANDS {
        return Err(Error::invalid(
            "n_sidebands",
            format!("truncation order {n_sidebands} exceeds the cap {MAX_SIDEBANDS}"),
        ));
    }
    if !(omega_min.is_finite() && omega_max.is_finite() && omega_min < omega_max) {
        return Err(Error::invalid("omega_range", "need finite omega_min < omega_max"));
    }
    if points < 8 {
        return Err(Error::invalid("points", "need at least 8 grid points"));
    }
    if !opts.skip_stability_check {
        ensure_stable(drift, "spectrum tabulation")?;
    }

    let mut solver = SidebandSolver::new(drift, diffusion, n_sidebands, opts.max_evaluations);
    let step = (omega_max - omega_min) / (points - 1) as f64;
    let mut omegas = Vec::with_capacity(points);
    let mut cols: [Vec<f64>; 4] = Default::default();
    for i in 0..points {
        let omega = omega_min + i as f64 * step;
        let v = solver.stationary_density(omega)?;
        omegas.push(omega);
        for (j, col) in cols.iter_mut().enumerate() {
            // Ṽ_0(ω) is Hermitian positive semidefinite, so the diagonal
            // is real up to rounding.
            col.push(v[(j, j)].re);
        }
    }
    let peaks = [
        find_peaks(&omegas, &cols[0]),
        find_peaks(&omegas, &cols[1]),
        find_peaks(&omegas, &cols[2]),
        find_peaks(&omegas, &cols[3]),
    ];
    let [s_qq, s_pp, s_xx, s_yy] = cols;
    Ok(SpectrumSlice { omegas, s_qq, s_pp, s_xx, s_yy, peaks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{
        assess_stability, extract_fourier_components, initial_covariance, propagate_covariance,
        suggested_horizon, CovarianceControl, CovarianceState,
    };
    use crate::drift::build_drift;
    use crate::orbit::orbit_coefficients;
    use crate::testutil::desk_constants;

    /// Constant red-detuned drift with a real coupling, desk scale.
    fn constant_drift(g: f64) -> (DriftSpec, DiffusionMatrix) {
        let (c, delta0, omega_mod) = desk_constants();
        let drift = DriftSpec::from_components(
            omega_mod,
            c.omega_m,
            c.gamma_m,
            c.kappa,
            BTreeMap::from([(0, Complex64::new(g, 0.0))]),
            BTreeMap::from([(0, Complex64::new(delta0, 0.0))]),
        )
        .unwrap();
        let d = DiffusionMatrix::from_rates(c.gamma_m, c.nbar, c.kappa).unwrap();
        (drift, d)
    }

    /// Modulated desk-scale drift built from the classical orbit.
    fn modulated_drift() -> (DriftSpec, DiffusionMatrix, f64) {
        let (c, delta0, omega_mod) = desk_constants();
        let orbit = orbit_coefficients(&c, delta0, omega_mod, 6, 4).unwrap();
        let drift = build_drift(&orbit, &c, delta0, 4).unwrap();
        let d = DiffusionMatrix::from_rates(c.gamma_m, c.nbar, c.kappa).unwrap();
        (drift, d, c.nbar)
    }

    /// Synthetic drift with hand-picked harmonics (conjugate-symmetric
    /// detuning; the coupling needs no symmetry).
    fn synthetic_drift(
        omega: f64,
        g: &[(i32, Complex64)],
        delta: &[(i32, Complex64)],
        kappa: f64,
    ) -> DriftSpec {
        DriftSpec::from_components(
            omega,
            1.0,
            0.002,
            kappa,
            g.iter().copied().collect(),
            delta.iter().copied().collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_block_reduction_matches_dense_formula() {
        let (drift, _) = constant_drift(0.3);
        let omega = 0.37;
        let m = assemble_block_matrix(&drift, omega, 0);
        let mut expected = drift.block(0);
        for i in 0..4 {
            expected[(i, i)] += Complex64::new(0.0, -omega);
        }
        let diff = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| (m[(r, c)] - expected[(r, c)]).norm())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-15, "N = 0 reduction off by {diff:.3e}");
    }

    #[test]
    fn first_harmonics_give_tridiagonal_blocks() {
        let drift = synthetic_drift(
            2.0,
            &[
                (-1, Complex64::new(0.04, -0.01)),
                (0, Complex64::new(0.3, 0.0)),
                (1, Complex64::new(0.1, 0.02)),
            ],
            &[
                (-1, Complex64::new(0.05, -0.03)),
                (0, Complex64::new(1.0, 0.0)),
                (1, Complex64::new(0.05, 0.03)),
            ],
            0.2,
        );
        let omega = 0.9;
        let m = assemble_block_matrix(&drift, omega, 1);
        assert_eq!(m.nrows(), 12);
        let block = |r: usize, c: usize| m.view((4 * r, 4 * c), (4, 4)).clone_owned();
        for r in 0..3 {
            for c in 0..3 {
                let got = block(r, c);
                let n = r as i32 - c as i32;
                let mut expected = drift.block(n);
                if r == c {
                    let k = r as i32 - 1;
                    for i in 0..4 {
                        expected[(i, i)] += Complex64::new(0.0, -(omega + k as f64 * drift.omega()));
                    }
                }
                let diff = (0..4)
                    .flat_map(|i| (0..4).map(move |j| (i, j)))
                    .map(|(i, j)| (got[(i, j)] - expected[(i, j)]).norm())
                    .fold(0.0f64, f64::max);
                assert!(diff < 1e-14, "block ({r},{c}) off by {diff:.3e}");
            }
        }
        // Corners lie beyond the ±1 harmonics and stay exactly zero.
        assert_eq!(block(0, 2).norm(), 0.0);
        assert_eq!(block(2, 0).norm(), 0.0);
    }

    #[test]
    fn collapsed_sidebands_share_the_carrier_block() {
        let drift = synthetic_drift(
            1e-9,
            &[(0, Complex64::new(0.2, 0.0))],
            &[(0, Complex64::new(0.8, 0.0))],
            0.2,
        );
        let omega = 0.7;
        let m = assemble_block_matrix(&drift, omega, 2);
        let reference = m.view((8, 8), (4, 4)).clone_owned();
        for r in 0..5 {
            let got = m.view((4 * r, 4 * r), (4, 4)).clone_owned();
            assert!(
                (got - &reference).norm() < 1e-8,
                "diagonal block {r} drifts away as the sidebands collapse"
            );
        }
    }

    #[test]
    fn stationary_spectrum_matches_lyapunov_oracle() {
        let (drift, d) = constant_drift(0.3);
        let comp = spectral_covariance(&drift, &d, 2, &SpectralOptions::default()).unwrap();
        let v0 = comp.component(0);
        let oracle = solve_lyapunov(&drift.evaluate(0.0), d.as_matrix()).unwrap();
        let max_im = v0.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
        assert!(max_im < 1e-12 * oracle.norm(), "carrier left imaginary parts {max_im:.3e}");
        let dev = (v0.map(|z| z.re) - oracle).norm() / oracle.norm();
        assert!(dev < 1e-3, "relative deviation from the Lyapunov solution {dev:.3e}");
        // Without modulation the off-diagonal noise blocks vanish, so
        // every n ≠ 0 component is identically zero — not merely small.
        for n in 1..=4 {
            assert_eq!(comp.component(n).norm(), 0.0, "n = {n}");
            assert_eq!(comp.component(-n).norm(), 0.0, "n = -{n}");
        }
        assert!(comp.conjugation_defect < 1e-8, "defect {:.3e}", comp.conjugation_defect);
        for (&n, err) in &comp.quadrature_errors {
            assert!(err.is_finite() && *err >= 0.0, "error estimate for n = {n}");
        }
        assert!(comp.window >= spectral_window(&drift, &d, 2));
    }

    #[test]
    fn zero_diffusion_yields_zero_components() {
        let (drift, _) = constant_drift(0.3);
        let d = DiffusionMatrix::from_rates(0.0, 0.0, 0.0).unwrap();
        let comp = spectral_covariance(&drift, &d, 1, &SpectralOptions::default()).unwrap();
        for n in -2..=2 {
            assert_eq!(comp.component(n).norm(), 0.0, "n = {n}");
        }
        assert_eq!(comp.conjugation_defect, 0.0);
        assert!(comp.evaluations > 0);
    }

    #[test]
    fn modulated_components_match_time_domain_solver() {
        let (drift, d, nbar) = modulated_drift();
        let comp = spectral_covariance(&drift, &d, 2, &SpectralOptions::default()).unwrap();

        // Independent time-domain route: propagate to the settled cycle
        // and project the last period onto its harmonics.
        let assessment = assess_stability(&drift, 0.0).unwrap();
        let span = suggested_horizon(&assessment.floquet, 1e-7).unwrap();
        let initial = CovarianceState { t: 0.0, v: initial_covariance(nbar) };
        let ctrl = CovarianceControl { skip_stability_check: true, ..Default::default() };
        let traj = propagate_covariance(&drift, &d, &initial, span, &ctrl).unwrap();
        let time_side = extract_fourier_components(&traj, 2, 1e-6).unwrap();

        let v0_norm = time_side[&0].norm();
        for n in -2..=2i32 {
            let reference = time_side[&n];
            assert!(
                reference.norm() > 1e-6 * v0_norm,
                "fixture degenerate: harmonic {n} carries no weight"
            );
            let dev = (comp.component(n) - reference).norm() / reference.norm();
            assert!(dev < 0.05, "harmonic {n} differs by {dev:.3e} between solvers");
        }

        // Reconstruction invariants: the enforced pairing makes the
        // reconstructed matrix real to rounding, and symmetric exactly.
        let tau = drift.tau();
        for k in 0..32 {
            let t = k as f64 * tau / 32.0;
            assert!(comp.imaginary_residue(t) < 1e-8 * v0_norm);
            let v = comp.evaluate(t);
            assert!((v - v.transpose()).norm() < 1e-12 * v0_norm);
        }
        // The pre-enforcement defects record finite-window truncation and
        // stay well under the quadrature's percent-level oracle.
        assert!(comp.conjugation_defect <= CONJUGATION_DEFECT_LIMIT);
        assert!(comp.symmetry_defect < 1e-3, "symmetry defect {:.3e}", comp.symmetry_defect);
        assert_eq!(comp.quadrature_errors.len(), 9);
    }

    #[test]
    fn truncation_increments_shrink_with_sideband_count() {
        let (drift, d, _) = modulated_drift();
        // A common window isolates the truncation effect from the
        // window-sizing heuristic, which itself depends on N.
        let opts = SpectralOptions {
            window_override: Some(spectral_window(&drift, &d, 3)),
            tail_rel_tol: 1e-6,
            max_octaves: 16,
            ..Default::default()
        };
        let v1 = spectral_covariance(&drift, &d, 1, &opts).unwrap().component(0);
        let v2 = spectral_covariance(&drift, &d, 2, &opts).unwrap().component(0);
        let v3 = spectral_covariance(&drift, &d, 3, &opts).unwrap().component(0);
        let d12 = (v2 - v1).norm();
        let d23 = (v3 - v2).norm();
        assert!(d12 > 0.0);
        assert!(d23 < d12, "increments {d12:.3e} → {d23:.3e} fail to shrink");
    }

    #[test]
    fn parseval_consistency_against_trapezoid() {
        let (drift, d) = constant_drift(0.3);
        let comp = spectral_covariance(&drift, &d, 0, &SpectralOptions::default()).unwrap();
        let v0 = comp.component(0).map(|z| z.re);
        let half = 80.0;
        let points = 32_001;
        let slice =
            spectrum_slice(&drift, &d, 0, -half, half, points, &SpectralOptions::default())
                .unwrap();
        let step = slice.omegas[1] - slice.omegas[0];
        for (i, col) in [&slice.s_qq, &slice.s_pp, &slice.s_xx, &slice.s_yy]
            .into_iter()
            .enumerate()
        {
            let mut sum: f64 = col.iter().sum();
            sum -= 0.5 * (col[0] + col[points - 1]);
            let integral = sum * step / (2.0 * std::f64::consts::PI);
            let rel = (integral - v0[(i, i)]).abs() / v0[(i, i)];
            assert!(rel < 0.02, "diagonal {i}: trapezoid off by {rel:.3e}");
        }
    }

    #[test]
    fn mechanical_peak_sits_at_the_resonance() {
        let drift = synthetic_drift(
            2.0,
            &[(0, Complex64::new(0.015, 0.0))],
            &[(0, Complex64::new(0.6, 0.0))],
            0.2,
        );
        let d = DiffusionMatrix::from_rates(0.002, 10.0, 0.2).unwrap();
        let gamma_eff = effective_mechanical_linewidth(&drift, &d);
        // Weak coupling barely broadens the bare line.
        assert!(gamma_eff >= 0.002 && gamma_eff < 0.006, "gamma_eff = {gamma_eff:.3e}");
        let slice =
            spectrum_slice(&drift, &d, 1, -1.1, 1.1, 8_801, &SpectralOptions::default()).unwrap();
        for target in [1.0, -1.0] {
            let nearest = slice.peaks[0]
                .iter()
                .map(|p| (p - target).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(
                nearest < gamma_eff,
                "no position-spectrum peak within {gamma_eff:.3e} of {target}"
            );
        }
    }

    #[test]
    fn modulation_adds_sidebands_to_the_spectrum() {
        // A modulation fast enough that the satellites clear the tail of
        // the main line, and weak enough coupling that the dressed lines
        // stay near their bare lattice positions.
        let omega_mod = 0.8;
        let drift = synthetic_drift(
            omega_mod,
            &[
                (-1, Complex64::new(0.12, 0.0)),
                (0, Complex64::new(0.12, 0.0)),
                (1, Complex64::new(0.12, 0.0)),
            ],
            &[(0, Complex64::new(1.0, 0.0))],
            0.2,
        );
        let d = DiffusionMatrix::from_rates(0.002, 10.0, 0.2).unwrap();
        let slice =
            spectrum_slice(&drift, &d, 2, 0.05, 2.05, 8_001, &SpectralOptions::default()).unwrap();
        // The mechanical line at ω_m plus satellites displaced by ±Ω.
        for target in [1.0, 1.0 - omega_mod, 1.0 + omega_mod] {
            let nearest = slice.peaks[0]
                .iter()
                .map(|p| (p - target).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.05, "no sideband peak near {target}: {:?}", slice.peaks[0]);
        }
    }

    #[test]
    fn optical_line_has_cavity_width() {
        // Decoupled optics: the amplitude spectrum is a pair of
        // Lorentzians of half-width κ centered at ±Δ₀.
        let kappa = 0.3;
        let delta0 = 1.5;
        let drift = synthetic_drift(2.0, &[], &[(0, Complex64::new(delta0, 0.0))], kappa);
        let d = DiffusionMatrix::from_rates(0.002, 10.0, kappa).unwrap();
        let slice =
            spectrum_slice(&drift, &d, 1, -3.0, 3.0, 12_001, &SpectralOptions::default()).unwrap();
        for target in [delta0, -delta0] {
            let nearest = slice.peaks[2]
                .iter()
                .map(|p| (p - target).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.02, "no amplitude-spectrum peak near {target}");
        }
        // Half-width of the positive-frequency line by interpolated
        // half-maximum crossings.
        let peak_idx = slice
            .omegas
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .max_by(|a, b| slice.s_xx[a.0].total_cmp(&slice.s_xx[b.0]))
            .map(|(i, _)| i)
            .unwrap();
        let half = slice.s_xx[peak_idx] / 2.0;
        let crossing = |mut i: usize, step: isize| -> f64 {
            loop {
                let j = (i as isize + step) as usize;
                if slice.s_xx[j] < half {
                    let f = (slice.s_xx[i] - half) / (slice.s_xx[i] - slice.s_xx[j]);
                    return slice.omegas[i] + f * (slice.omegas[j] - slice.omegas[i]);
                }
                i = j;
            }
        };
        let width = 0.5 * (crossing(peak_idx, 1) - crossing(peak_idx, -1));
        assert!(
            (width - kappa).abs() < 0.05 * kappa,
            "half-width {width:.4} differs from kappa {kappa} by more than 5%"
        );
    }

    #[test]
    fn instability_and_parameter_guards() {
        // Blue detuning with strong coupling destabilizes the system.
        let blue = synthetic_drift(
            2.0,
            &[(0, Complex64::new(0.4, 0.0))],
            &[(0, Complex64::new(-1.0, 0.0))],
            0.2,
        );
        let d = DiffusionMatrix::from_rates(0.002, 10.0, 0.2).unwrap();
        assert!(matches!(
            spectral_covariance(&blue, &d, 2, &SpectralOptions::default()),
            Err(Error::Unstable { .. })
        ));
        assert!(matches!(
            spectrum_slice(&blue, &d, 2, -2.0, 2.0, 100, &SpectralOptions::default()),
            Err(Error::Unstable { .. })
        ));

        let (drift, d) = constant_drift(0.3);
        assert!(matches!(
            spectral_covariance(&drift, &d, MAX_SIDEBANDS + 1, &SpectralOptions::default()),
            Err(Error::InvalidParam { .. })
        ));
        assert!(matches!(
            spectrum_slice(&drift, &d, 1, 2.0, -2.0, 100, &SpectralOptions::default()),
            Err(Error::InvalidParam { .. })
        ));
        assert!(matches!(
            spectrum_slice(&drift, &d, 1, -2.0, 2.0, 3, &SpectralOptions::default()),
            Err(Error::InvalidParam { .. })
        ));
        let bad_tol = SpectralOptions { rel_tol: 0.0, ..Default::default() };
        assert!(matches!(
            spectral_covariance(&drift, &d, 1, &bad_tol),
            Err(Error::InvalidParam { .. })
        ));

        // A starved evaluation budget fails loudly instead of silently
        // degrading.
        let starved = SpectralOptions { max_evaluations: 120, ..Default::default() };
        assert!(matches!(
            spectral_covariance(&drift, &d, 2, &starved),
            Err(Error::Convergence { .. })
        ));

        // A window squeezed inside the resonances cannot satisfy the
        // octave rule within one doubling.
        let throttled = SpectralOptions {
            window_override: Some(0.5),
            max_octaves: 1,
            ..Default::default()
        };
        let err = spectral_covariance(&drift, &d, 1, &throttled).unwrap_err();
        match err {
            Error::Convergence { detail, .. } => {
                assert!(detail.contains("not converged"), "unexpected detail: {detail}")
            }
            other => panic!("expected a convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn peak_refinement_locates_analytic_maximum() {
        let center = 0.337;
        let width = 0.05;
        let omegas: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let values: Vec<f64> =
            omegas.iter().map(|w| 1.0 / (1.0 + ((w - center) / width).powi(2))).collect();
        let peaks = find_peaks(&omegas, &values);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0] - center).abs() < 1e-3, "refined peak at {:.5}", peaks[0]);

        assert!(find_peaks(&omegas, &vec![1.0; 101]).is_empty());
        assert!(find_peaks(&omegas, &vec![0.0; 101]).is_empty());
    }
}
