//! Dense linear-algebra helpers shared by the stability and covariance
//! modules: complex eigendecompositions (via a complex Schur form),
//! conditioning estimates, and an algebraic Lyapunov solver.

use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Converts a real matrix into its complex counterpart.
pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Full eigendecomposition of a general complex matrix.
///
/// Returns `(eigenvalues, eigenvector matrix)` with unit-norm columns such
/// that `m * v_i = λ_i * v_i`. Eigenvectors are recovered by
/// back-substitution on the triangular factor of the complex Schur form;
/// for a repeated eigenvalue the nearly singular pivot is floored, which
/// yields the usual least-squares-flavored vector for defective matrices
/// (callers detect that case through the conditioning of the result).
pub fn complex_eigendecomposition(
    m: &DMatrix<Complex64>,
) -> Result<(DVector<Complex64>, DMatrix<Complex64>)> {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "eigendecomposition requires a square matrix");
    let schur = m.clone().try_schur(f64::EPSILON, 0).ok_or_else(|| Error::Linalg {
        context: "eigendecomposition".into(),
        detail: "Schur iteration failed to converge".into(),
    })?;
    let (q, t) = schur.unpack();

    let scale = t.norm();
    let floor = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    let mut values = DVector::from_element(d, Complex64::ZERO);
    let mut vectors = DMatrix::from_element(d, d, Complex64::ZERO);

    for i in 0..d {
        let lambda = t[(i, i)];
        values[i] = lambda;

        // Solve (T - λ I) y = 0 with y_i = 1 and y_j = 0 for j > i.
        let mut y = DVector::from_element(d, Complex64::ZERO);
        y[i] = Complex64::ONE;
        for j in (0..i).rev() {
            let mut s = Complex64::ZERO;
            for k in (j + 1)..=i {
                s += t[(j, k)] * y[k];
            }
            let mut pivot = t[(j, j)] - lambda;
            if pivot.norm() < floor {
                pivot = Complex64::new(floor, 0.0);
            }
            y[j] = -s / pivot;
        }
        let v = &q * y;
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Linalg {
                context: "eigendecomposition".into(),
                detail: format!("failed to normalize eigenvector {i}"),
            });
        }
        vectors.set_column(i, &(v / Complex64::new(norm, 0.0)));
    }
    Ok((values, vectors))
}

/// Eigendecomposition of a real 4×4 matrix (complex pairs allowed).
pub fn eigendecomposition4(m: &Matrix4<f64>) -> Result<(DVector<Complex64>, DMatrix<Complex64>)> {
    let md = DMatrix::from_fn(4, 4, |r, c| Complex64::new(m[(r, c)], 0.0));
    complex_eigendecomposition(&md)
}

/// Largest singular value (spectral norm).
pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s))
}

/// Two-norm condition number; `f64::INFINITY` for singular input.
pub fn condition_number(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().singular_values();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse computed through the singular value decomposition with small
/// singular values floored at `rel_floor` times the largest one.
///
/// For a matrix whose condition number is below `1 / rel_floor` this is the
/// plain inverse; for nearly singular input it returns a finite surrogate
/// whose norm is capped near `1 / (rel_floor · σ_max)` instead of blowing
/// up. Callers that reach the capped regime should treat downstream
/// quantities as estimates.
pub fn regularized_inverse(
    m: &DMatrix<Complex64>,
    rel_floor: f64,
) -> Result<DMatrix<Complex64>> {
    let svd = m.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Linalg {
                context: "regularized inverse".into(),
                detail: "singular value decomposition did not produce factors".into(),
            })
        }
    };
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |acc, &s| acc.max(s));
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(Error::Linalg {
            context: "regularized inverse".into(),
            detail: "matrix has no positive finite singular value".into(),
        });
    }
    let floor = sigma_max * rel_floor;
    let inv = DVector::from_iterator(
        m.nrows(),
        svd.singular_values.iter().map(|&s| Complex64::new(1.0 / s.max(floor), 0.0)),
    );
    Ok(v_t.adjoint() * DMatrix::from_diagonal(&inv) * u.adjoint())
}

/// Solves the continuous algebraic Lyapunov equation `A X + X Aᵀ + Q = 0`
/// by direct vectorization: `(I ⊗ A + A ⊗ I) vec(X) = -vec(Q)`.
///
/// The result is explicitly symmetrized. Requires that no two eigenvalues
/// of `A` sum to zero (guaranteed for strictly stable `A`); a singular
/// operator is reported as an error rather than regularized.
pub fn solve_lyapunov(a: &Matrix4<f64>, q: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    const D: usize = 4;
    let mut op = DMatrix::<f64>::zeros(D * D, D * D);
    // Column-major vec: vec(A X) = (I ⊗ A) vec X, vec(X Aᵀ) = (A ⊗ I) vec X.
    for col in 0..D {
        for row in 0..D {
            for k in 0..D {
                // (I ⊗ A): block diagonal with A in each diagonal block.
                op[(col * D + row, col * D + k)] += a[(row, k)];
                // (A ⊗ I): scalar A[(col, k)] times the identity block.
                op[(col * D + row, k * D + row)] += a[(col, k)];
            }
        }
    }
    let rhs = DVector::from_fn(D * D, |i, _| -q[(i % D, i / D)]);
    let lu = op.lu();
    let x = lu.solve(&rhs).ok_or_else(|| Error::Linalg {
        context: "algebraic Lyapunov solve".into(),
        detail: "operator is singular; the drift has mirrored eigenvalues (marginal stability)"
            .into(),
    })?;
    let mut out = Matrix4::from_fn(|r, c| x[c * D + r]);
    out = (out + out.transpose()) * 0.5;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual(m: &DMatrix<Complex64>, vals: &DVector<Complex64>, vecs: &DMatrix<Complex64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            let v = vecs.column(i).clone_owned();
            let r = (m * &v) - v * vals[i];
            worst = worst.max(r.norm());
        }
        worst
    }

    #[test]
    fn eigendecomposition_of_rotation_scale() {
        // [[a, b], [-b, a]] has eigenvalues a ± i b.
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 1.7, -1.7, 0.3]);
        let mc = complexify(&m);
        let (vals, vecs) = complex_eigendecomposition(&mc).unwrap();
        let mut re: Vec<f64> = vals.iter().map(|l| l.re).collect();
        let mut im: Vec<f64> = vals.iter().map(|l| l.im).collect();
        re.sort_by(f64::total_cmp);
        im.sort_by(f64::total_cmp);
        assert!((re[0] - 0.3).abs() < 1e-12 && (re[1] - 0.3).abs() < 1e-12);
        assert!((im[0] + 1.7).abs() < 1e-12 && (im[1] - 1.7).abs() < 1e-12);
        assert!(residual(&mc, &vals, &vecs) < 1e-12);
    }

    #[test]
    fn eigendecomposition_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = DMatrix::from_fn(5, 5, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let (vals, vecs) = complex_eigendecomposition(&m).unwrap();
            assert!(
                residual(&m, &vals, &vecs) < 1e-9 * m.norm(),
                "residual too large: {}",
                residual(&m, &vals, &vecs)
            );
        }
    }

    #[test]
    fn condition_of_unitary_is_one() {
        let th = 0.813f64;
        let m = DMatrix::from_row_slice(2, 2, &[th.cos(), th.sin(), -th.sin(), th.cos()]);
        let c = condition_number(&complexify(&m));
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_known_value() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((spectral_norm(&complexify(&m)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn regularized_inverse_matches_plain_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(4, 4, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let inv = regularized_inverse(&m, 1e-12).unwrap();
        let res = &m * &inv - DMatrix::<Complex64>::identity(4, 4);
        assert!(res.norm() < 1e-10, "residual {}", res.norm());
    }

    #[test]
    fn regularized_inverse_of_singular_matrix_is_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[
            Complex64::new(1.0, 0.0),
            Complex64::ZERO,
            Complex64::ZERO,
            Complex64::ZERO,
        ]);
        let inv = regularized_inverse(&m, 1e-12).unwrap();
        assert!(inv.iter().all(|z| z.norm().is_finite()));
        // The floored direction is capped at 1/(rel_floor · σ_max).
        assert!(spectral_norm(&inv) <= 1.0001e12);
    }

    #[test]
    fn lyapunov_diagonal_case() {
        // For diagonal A, the solution is X_ij = -Q_ij / (λ_i + λ_j).
        let a = Matrix4::from_diagonal(&nalgebra::Vector4::new(-1.0, -2.0, -3.0, -4.0));
        let q = Matrix4::from_fn(|r, c| 1.0 + (r + 2 * c) as f64);
        let qs = (q + q.transpose()) * 0.5;
        let x = solve_lyapunov(&a, &qs).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let lam = a[(r, r)] + a[(c, c)];
                assert!((x[(r, c)] + qs[(r, c)] / lam).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_random_stable_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let r = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let a = r - Matrix4::identity() * 3.0;
            let b = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let q = b * b.transpose();
            let x = solve_lyapunov(&a, &q).unwrap();
            let res = a * x + x * a.transpose() + q;
            assert!(res.norm() < 1e-10 * q.norm().max(1.0), "residual {}", res.norm());
            assert_eq!(x, x.transpose());
            // Solution of a stable Lyapunov equation with PSD forcing is PSD.
            let eig = x.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > -1e-10), "eig {eig:?}");
        }
    }

    #[test]
    fn lyapunov_rejects_marginal_drift() {
        let a = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -2.0, -3.0));
        let q = Matrix4::identity();
        // λ_1 + λ_2 = 0 makes the operator singular.
        assert!(solve_lyapunov(&a, &q).is_err());
    }
}
