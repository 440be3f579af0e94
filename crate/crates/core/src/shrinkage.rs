//! Nuclear-norm proximal operator.

use nalgebra::{DMatrix, DVector};

use crate::basis::Basis;
use crate::error::{Error, Result};

/// Thin SVD `X = U diag(d) V'` with `d` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn rank(&self, tol: f64) -> usize {
        self.d.iter().filter(|&&s| s > tol).count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        scaled_product(&self.u, self.d.as_slice(), &self.v)
    }
}

pub fn svd(x: &DMatrix<f64>) -> Result<SvdTriple> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SvdFailure);
    }
    if x.nrows() < x.ncols() {
        let t = svd(&x.transpose())?;
        return Ok(SvdTriple { u: t.v, d: t.d, v: t.u });
    }
    if x.nrows() > x.ncols() {
        // X = Q R, then decompose the small square R.
        let qr = x.clone().qr();
        let inner = jacobi(qr.r())?;
        return Ok(SvdTriple {
            u: qr.q() * inner.u,
            d: inner.d,
            v: inner.v,
        });
    }
    jacobi(x.clone())
}

const JACOBI_SWEEPS: usize = 100;

// One-sided Jacobi on the columns of a square matrix. nalgebra's bidiagonal
// routine loses about 1e-9 relative accuracy on some inputs with clustered
// singular values, which is visible in objective comparisons.
fn jacobi(mut a: DMatrix<f64>) -> Result<SvdTriple> {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = n < 2;
    // Columns below this squared norm are rounding noise.
    let negligible = (f64::EPSILON * f64::EPSILON) * a.norm_squared() * n as f64;
    // Dot products of length m carry about m eps relative rounding.
    let tol = f64::EPSILON * a.nrows() as f64;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailure);
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let m = a.nrows();
    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut filled = 0;
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > f64::EPSILON * top * n as f64 && norms[src] > 0.0 {
            u.set_column(dst, &(a.column(src) / norms[src]));
            filled += 1;
        }
    }
    complete_orthonormal(&mut u, filled);
    Ok(SvdTriple {
        u,
        d: DVector::from_fn(n, |j, _| if j < filled { norms[order[j]] } else { 0.0 }),
        v: DMatrix::from_fn(n, n, |i, j| v[(i, order[j])]),
    })
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

// Fills columns `from..` with unit vectors orthogonal to the earlier ones.
fn complete_orthonormal(u: &mut DMatrix<f64>, from: usize) {
    let m = u.nrows();
    let mut col = from;
    for e in 0..m {
        if col == u.ncols() {
            break;
        }
        let mut cand = DVector::<f64>::zeros(m);
        cand[e] = 1.0;
        for _ in 0..2 {
            for j in 0..col {
                let proj = u.column(j).dot(&cand);
                cand -= u.column(j) * proj;
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            u.set_column(col, &(cand / norm));
            col += 1;
        }
    }
}

// U diag(scale) V'
fn scaled_product(u: &DMatrix<f64>, scale: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut us = u.clone();
    for (mut col, &s) in us.column_iter_mut().zip(scale) {
        col *= s;
    }
    us * v.transpose()
}

/// `S_lambda(X) = U diag(max(d - lambda, 0)) V'`.
pub fn soft_threshold(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(soft_threshold_svd(x, lambda)?.0)
}

/// Soft threshold together with the shrunk singular values, which are the
/// singular values of the result.
pub fn soft_threshold_svd(x: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let dec = svd(x)?;
    let shrunk: Vec<f64> = dec.d.iter().map(|&s| (s - lambda).max(0.0)).collect();
    let r = shrunk.iter().take_while(|&&s| s > 0.0).count();
    if r == 0 {
        return Ok((DMatrix::zeros(x.nrows(), x.ncols()), shrunk));
    }
    let out = scaled_product(
        &dec.u.columns(0, r).into_owned(),
        &shrunk[..r],
        &dec.v.columns(0, r).into_owned(),
    );
    Ok((out, shrunk))
}

/// Sum of singular values.
pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(svd(x)?.d.sum())
}

/// Minimizer of `1/2 ||Y - W B'||_F^2 + lambda ||W||_*` for orthonormal `B`,
/// which is `S_lambda(Y B)`.
pub fn solve_basis_lsq(y: &DMatrix<f64>, basis: &Basis, lambda: f64) -> Result<DMatrix<f64>> {
    let b = basis.matrix();
    if y.ncols() != b.nrows() {
        return Err(Error::ShapeMismatch {
            expected: (y.nrows(), b.nrows()),
            got: y.shape(),
        });
    }
    soft_threshold(&(y * b), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_grid, make_spline_basis};
    use proptest::prelude::*;

    #[test]
    fn zero_lambda_is_identity() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 4.0, 1.5]);
        let s = soft_threshold(&x, 0.0).unwrap();
        assert!((&s - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn diagonal_threshold() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let s = soft_threshold(&x, 2.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((s - want).amax() < 1e-12);
    }

    #[test]
    fn negative_lambda_rejected() {
        let x = DMatrix::<f64>::identity(2, 2);
        assert!(soft_threshold(&x, -1.0).is_err());
    }

    #[test]
    fn non_finite_input_is_svd_failure() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(soft_threshold(&x, 0.1), Err(Error::SvdFailure)));
    }

    #[test]
    fn result_rank_counts_surviving_values() {
        let x = DMatrix::from_row_slice(3, 3, &[5.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let s = soft_threshold(&x, 2.0).unwrap();
        assert_eq!(svd(&s).unwrap().rank(1e-9), 2);
    }

    #[test]
    fn nuclear_norm_matches_trace_of_sqrt() {
        // Symmetric PSD: ||X||_* = trace(sqrt(X'X)) = trace(X).
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((nuclear_norm(&x).unwrap() - 4.0).abs() < 1e-12);
        // Symmetric indefinite: sum of |eigenvalues|.
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!((nuclear_norm(&x).unwrap() - 4.0).abs() < 1e-12);
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -3.0]);
        assert!((nuclear_norm(&x).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn basis_lsq_square_basis_recovers_y() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        let b = make_spline_basis(&g, 4).unwrap();
        let y = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 1.0);
        let w = solve_basis_lsq(&y, &b, 0.0).unwrap();
        assert!((&w - &y * b.matrix()).amax() < 1e-10);
        assert!((w * b.matrix().transpose() - &y).amax() < 1e-10);
    }

    #[test]
    fn basis_lsq_full_shrinkage() {
        let g = make_grid(0.0, 1.0, 6).unwrap();
        let b = make_spline_basis(&g, 3).unwrap();
        let y = DMatrix::from_fn(4, 6, |i, j| ((i + 1) * (j + 2)) as f64 % 5.0);
        let top = svd(&(&y * b.matrix())).unwrap().d[0];
        let w = solve_basis_lsq(&y, &b, top).unwrap();
        assert_eq!(w, DMatrix::zeros(4, 3));
        assert!(solve_basis_lsq(&DMatrix::zeros(4, 5), &b, 0.0).is_err());
    }

    fn check_triple(x: &DMatrix<f64>) {
        let dec = svd(x).unwrap();
        let scale = x.norm().max(1e-300);
        assert!((dec.reconstruct() - x).norm() <= 1e-12 * scale * (x.nrows() as f64).sqrt());
        let r = dec.d.len();
        let eye = DMatrix::<f64>::identity(r, r);
        assert!((dec.u.transpose() * &dec.u - &eye).amax() < 1e-9);
        assert!((dec.v.transpose() * &dec.v - &eye).amax() < 1e-9);
        assert!(dec.d.as_slice().windows(2).all(|w| w[0] >= w[1]) && dec.d.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn svd_handles_many_shapes_and_ranks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let (m, n) = (rng.random_range(1..60), rng.random_range(1..10));
            let rank = rng.random_range(0..=m.min(n));
            let scale = 10f64.powi(rng.random_range(-6..6));
            let a = DMatrix::from_fn(m, rank, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
            check_triple(&(a * b * scale));
        }
        // Clustered singular values.
        let q = svd(&DMatrix::from_fn(8, 8, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0)).unwrap().u;
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 3.0, 3.0 - 1e-12, 1.0, 1.0, 0.0, 0.0, 1e-14]));
        check_triple(&(&q * d * q.transpose()));
        check_triple(&DMatrix::zeros(5, 3));
    }

    fn pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, f64)> {
        (1usize..7, 1usize..5).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(-3.0f64..3.0, r * c),
                proptest::collection::vec(-3.0f64..3.0, r * c),
                0.0f64..4.0,
            )
                .prop_map(move |(a, b, l)| {
                    (DMatrix::from_vec(r, c, a), DMatrix::from_vec(r, c, b), l)
                })
        })
    }

    proptest! {
        #[test]
        fn svd_reconstructs((x, _, _) in pair()) {
            let dec = svd(&x).unwrap();
            prop_assert!((dec.reconstruct() - &x).norm() <= 1e-9 * x.norm().max(1e-300));
            prop_assert!(dec.d.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn shrinkage_is_non_expansive((a, b, l) in pair()) {
            let sa = soft_threshold(&a, l).unwrap();
            let sb = soft_threshold(&b, l).unwrap();
            prop_assert!((sa - sb).norm() <= (&a - &b).norm() + 1e-9);
        }

        #[test]
        fn nuclear_norm_monotone_in_lambda((x, _, l) in pair(), extra in 0.0f64..2.0) {
            let n1 = nuclear_norm(&soft_threshold(&x, l).unwrap()).unwrap();
            let n2 = nuclear_norm(&soft_threshold(&x, l + extra).unwrap()).unwrap();
            prop_assert!(n2 <= n1 + 1e-10);
        }
    }
}
