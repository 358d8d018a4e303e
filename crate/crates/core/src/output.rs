//! Deterministic result files: CSV writers and structured text reports.
//!
//! Every writer formats floats with [`format_float`] (17 significant
//! digits, round-trip exact for `f64`) and emits rows in a fixed order,
//! so identical inputs produce byte-identical bodies — no timestamps, no
//! locale, no hash-map iteration. Data files are CSV with a single
//! header row; multi-matrix results (harmonic components, stability
//! reports) are structured text documents.

use std::io::Write;

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::covariance::physicality_defect;
use crate::error::Result;
use crate::floquet::FloquetReport;
use crate::metrics::PeriodMetrics;
use crate::orbit::MeanFieldTrajectory;
use crate::rwa::{rwa_variances, RwaParams};
use crate::spectral::{SpectralComponents, SpectrumSlice};

/// Formats a float with 17 significant digits, enough for exact
/// `f64` round trips. Non-finite values come out as the lowercase
/// `nan` / `inf` / `-inf` most CSV consumers expect.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn write_row<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        w.write_all(format_float(*v).as_bytes())?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes a mean-field trajectory as `t,q,p,re_a,im_a`.
pub fn write_orbit_csv<W: Write>(w: &mut W, traj: &MeanFieldTrajectory) -> Result<()> {
    writeln!(w, "t,q,p,re_a,im_a")?;
    for (i, s) in traj.samples.iter().enumerate() {
        write_row(w, &[traj.time_at(i), s[0], s[1], s[2], s[3]])?;
    }
    Ok(())
}

/// Writes covariance samples as `t`, the ten upper-triangle entries
/// `V11..V44` in row-major order, and the physicality eigenvalue
/// (smallest eigenvalue of V + iσ/2; negative means unphysical).
pub fn write_covariance_csv<W, I>(w: &mut W, rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (f64, Matrix4<f64>)>,
{
    writeln!(w, "t,V11,V12,V13,V14,V22,V23,V24,V33,V34,V44,physicality_min_eig")?;
    for (t, v) in rows {
        let mut row = Vec::with_capacity(12);
        row.push(t);
        for i in 0..4 {
            for j in i..4 {
                row.push(v[(i, j)]);
            }
        }
        row.push(physicality_defect(&v));
        write_row(w, &row)?;
    }
    Ok(())
}

/// Writes a spectrum slice as `omega,S_qq,S_pp,S_xx,S_yy`.
pub fn write_spectrum_csv<W: Write>(w: &mut W, slice: &SpectrumSlice) -> Result<()> {
    writeln!(w, "omega,S_qq,S_pp,S_xx,S_yy")?;
    for (i, &omega) in slice.omegas.iter().enumerate() {
        write_row(
            w,
            &[omega, slice.s_qq[i], slice.s_pp[i], slice.s_xx[i], slice.s_yy[i]],
        )?;
    }
    Ok(())
}

/// Formats a complex number as `re+imi` with an explicit sign on the
/// imaginary part.
pub fn format_complex(z: Complex64) -> String {
    let sign = if z.im.is_sign_negative() { "-" } else { "+" };
    format!("{}{}{}i", format_float(z.re), sign, format_float(z.im.abs()))
}

fn write_complex_matrix<W: Write>(w: &mut W, v: &Matrix4<Complex64>) -> Result<()> {
    for i in 0..4 {
        let mut parts = Vec::with_capacity(4);
        for j in 0..4 {
            parts.push(format_complex(v[(i, j)]));
        }
        writeln!(w, "{}", parts.join(", "))?;
    }
    Ok(())
}

/// Writes covariance harmonics from the frequency-domain solver as a
/// structured text document: a header with the truncation, modulation
/// frequency, and quadrature diagnostics, then one block per harmonic n
/// with all 16 complex entries of V_n in row-major order.
pub fn write_components_text<W: Write>(w: &mut W, comps: &SpectralComponents) -> Result<()> {
    writeln!(w, "covariance harmonics V_n (rows i, columns j, quadrature order q p x y)")?;
    writeln!(w, "n_sidebands: {}", comps.n_sidebands)?;
    writeln!(w, "omega_mod: {}", format_float(comps.omega))?;
    writeln!(w, "window: {}", format_float(comps.window))?;
    writeln!(w, "conjugation_defect: {}", format_float(comps.conjugation_defect))?;
    writeln!(w, "symmetry_defect: {}", format_float(comps.symmetry_defect))?;
    writeln!(w, "evaluations: {}", comps.evaluations)?;
    for (n, v) in &comps.components {
        let err = comps.quadrature_errors.get(n).copied().unwrap_or(0.0);
        writeln!(w, "\n[n = {n}] quadrature_error: {}", format_float(err))?;
        write_complex_matrix(w, v)?;
    }
    Ok(())
}

/// Writes a bare harmonic map (e.g. extracted from a time-domain
/// trajectory) in the same block layout as [`write_components_text`],
/// with caller-supplied diagnostics in the header.
pub fn write_harmonics_text<W: Write>(
    w: &mut W,
    omega: f64,
    components: &std::collections::BTreeMap<i32, Matrix4<Complex64>>,
    diagnostics: &[(&str, f64)],
) -> Result<()> {
    writeln!(w, "covariance harmonics V_n (rows i, columns j, quadrature order q p x y)")?;
    writeln!(w, "omega_mod: {}", format_float(omega))?;
    for (name, value) in diagnostics {
        writeln!(w, "{name}: {}", format_float(*value))?;
    }
    for (n, v) in components {
        writeln!(w, "\n[n = {n}]")?;
        write_complex_matrix(w, v)?;
    }
    Ok(())
}

/// Writes per-phase metrics as `t,E_N,mirror_min_var,mirror_angle,physical`.
pub fn write_metrics_csv<W: Write>(w: &mut W, metrics: &PeriodMetrics) -> Result<()> {
    writeln!(w, "t,E_N,mirror_min_var,mirror_angle,physical")?;
    for s in &metrics.samples {
        write!(
            w,
            "{},{},{},{},",
            format_float(s.t),
            format_float(s.e_n),
            format_float(s.mirror_min_var),
            format_float(s.mirror_angle),
        )?;
        writeln!(w, "{}", s.physical)?;
    }
    Ok(())
}

/// Writes a table of rotating-frame variance evaluations as
/// `G0,Gm1,gamma_m,kappa,nbar,f_minus,f_plus,stable`. Unstable points
/// report `nan` variances and `false`.
pub fn write_rwa_table_csv<W: Write>(w: &mut W, points: &[RwaParams]) -> Result<()> {
    writeln!(w, "G0,Gm1,gamma_m,kappa,nbar,f_minus,f_plus,stable")?;
    for p in points {
        let (f_minus, f_plus, stable) = match rwa_variances(p) {
            Ok((fm, fp)) => (fm, fp, true),
            Err(_) => (f64::NAN, f64::NAN, false),
        };
        write!(
            w,
            "{},{},{},{},{},{},{},",
            format_float(p.g0),
            format_float(p.gm1),
            format_float(p.gamma_m),
            format_float(p.kappa),
            format_float(p.nbar),
            format_float(f_minus),
            format_float(f_plus),
        )?;
        writeln!(w, "{stable}")?;
    }
    Ok(())
}

/// Writes a Floquet stability report as structured text.
pub fn write_floquet_text<W: Write>(w: &mut W, report: &FloquetReport) -> Result<()> {
    writeln!(w, "floquet analysis over one period")?;
    writeln!(w, "t0: {}", format_float(report.t0))?;
    writeln!(w, "tau: {}", format_float(report.tau))?;
    writeln!(w, "stable: {}", report.stable)?;
    writeln!(w, "lambda_max: {}", format_float(report.lambda_max))?;
    writeln!(w, "eigenvector_condition: {}", format_float(report.cond_c))?;
    writeln!(w, "periodic_factor_bound: {}", format_float(report.m_x))?;
    writeln!(w, "defective: {}", report.defective)?;
    writeln!(w, "\nmultipliers (modulus, re, im):")?;
    for m in &report.multipliers {
        writeln!(
            w,
            "{}, {}, {}",
            format_float(m.norm()),
            format_float(m.re),
            format_float(m.im)
        )?;
    }
    writeln!(w, "\nexponents (re, im):")?;
    for e in &report.exponents {
        writeln!(w, "{}, {}", format_float(e.re), format_float(e.im))?;
    }
    writeln!(w, "\nmonodromy:")?;
    for i in 0..report.dim {
        let mut parts = Vec::with_capacity(report.dim);
        for j in 0..report.dim {
            parts.push(format_float(report.monodromy[(i, j)]));
        }
        writeln!(w, "{}", parts.join(", "))?;
    }
    Ok(())
}

/// Writes the cross-solver comparison as `n,absolute,relative`, one row
/// per harmonic. `relative` is `nan` where the reference norm sits below
/// the degeneracy floor.
pub fn write_comparison_csv<W: Write>(w: &mut W, rows: &[(i32, f64, f64)]) -> Result<()> {
    writeln!(w, "n,absolute,relative")?;
    for &(n, abs, rel) in rows {
        write!(w, "{n},")?;
        writeln!(w, "{},{}", format_float(abs), format_float(rel))?;
    }
    Ok(())
}
