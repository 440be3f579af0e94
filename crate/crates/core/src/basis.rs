//! Time grid and orthonormal spline basis.
//!
//! The basis is a clamped B-spline basis with uniformly spaced interior
//! knots, evaluated on the grid and orthonormalized by a thin QR
//! factorization. Columns of the result satisfy `B'B = I`, which makes the
//! inner least-squares step of the solver an exact soft-threshold.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `T` equally spaced points from `t_min` to `t_max` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, len: usize) -> Result<Self> {
        make_grid(t_min, t_max, len)
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / (self.len() - 1) as f64
    }

    /// Index of the nearest grid point, ties rounded up. `None` when `t` is
    /// outside `[t_min, t_max]`.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        if !(t >= self.t_min && t <= self.t_max) {
            return None;
        }
        let pos = (t - self.t_min) / self.spacing();
        let idx = (pos + 0.5).floor() as usize;
        Some(idx.min(self.len() - 1))
    }
}

pub fn make_grid(t_min: f64, t_max: f64, len: usize) -> Result<TimeGrid> {
    if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
        return Err(Error::InvalidRange { t_min, t_max });
    }
    if len < 2 {
        return Err(Error::InvalidSize(format!(
            "grid needs at least 2 points, got {len}"
        )));
    }
    let span = t_max - t_min;
    let last = (len - 1) as f64;
    let mut points: Vec<f64> = (0..len)
        .map(|j| t_min + span * (j as f64) / last)
        .collect();
    points[len - 1] = t_max;
    Ok(TimeGrid {
        t_min,
        t_max,
        points,
    })
}

/// Orthonormal `T x K` basis evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    grid: TimeGrid,
    matrix: DMatrix<f64>,
}

impl Basis {
    /// Wraps an arbitrary matrix with orthonormal columns. Used by tests and
    /// by foreign callers that bring their own basis.
    pub fn from_orthonormal(grid: TimeGrid, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: (grid.len(), matrix.ncols()),
                got: matrix.shape(),
            });
        }
        if matrix.ncols() == 0 || matrix.ncols() > matrix.nrows() {
            return Err(Error::InvalidSize(format!(
                "basis must have 1..={} columns, got {}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let gram = matrix.transpose() * &matrix;
        let dev = (gram - DMatrix::<f64>::identity(matrix.ncols(), matrix.ncols())).amax();
        if dev > 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "basis columns are not orthonormal (max |B'B - I| = {dev:e})"
            )));
        }
        Ok(Self { grid, matrix })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// The `T x K` matrix `B`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_points(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Degree used for a `K`-function basis: cubic when possible.
pub fn spline_degree(k: usize) -> usize {
    3.min(k.saturating_sub(1))
}

/// Clamped knot vector with `k - degree - 1` uniform interior knots.
pub fn clamped_knots(t_min: f64, t_max: f64, k: usize, degree: usize) -> Vec<f64> {
    let interior = k - degree - 1;
    let mut knots = Vec::with_capacity(k + degree + 1);
    knots.extend(std::iter::repeat(t_min).take(degree + 1));
    for m in 1..=interior {
        knots.push(t_min + (t_max - t_min) * m as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat(t_max).take(degree + 1));
    knots
}

/// Non-orthonormalized B-spline design matrix (`T x K`), each row summing to 1.
pub fn raw_spline_matrix(grid: &TimeGrid, k: usize) -> Result<DMatrix<f64>> {
    if k < 2 || k > grid.len() {
        return Err(Error::InvalidSize(format!(
            "basis dimension must satisfy 2 <= K <= T ({}), got {k}",
            grid.len()
        )));
    }
    let degree = spline_degree(k);
    let knots = clamped_knots(grid.t_min(), grid.t_max(), k, degree);
    let mut out = DMatrix::zeros(grid.len(), k);
    let mut values = vec![0.0; degree + 1];
    for (row, &x) in grid.points().iter().enumerate() {
        let span = find_span(&knots, k, degree, x);
        basis_funs(&knots, span, degree, x, &mut values);
        for (r, &v) in values.iter().enumerate() {
            out[(row, span - degree + r)] = v;
        }
    }
    Ok(out)
}

// Knot span containing x; the right endpoint belongs to the last non-empty span.
fn find_span(knots: &[f64], n: usize, degree: usize, x: f64) -> usize {
    if x >= knots[n] {
        return n - 1;
    }
    let mut lo = degree;
    let mut hi = n;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

// The `degree + 1` non-vanishing basis functions on `span` (triangular scheme).
fn basis_funs(knots: &[f64], span: usize, degree: usize, x: f64, out: &mut [f64]) {
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Cubic (or lower-order when `K < 4`) B-spline basis on `grid`, orthonormalized
/// by thin QR. Each column's first nonzero entry is made positive.
pub fn make_spline_basis(grid: &TimeGrid, k: usize) -> Result<Basis> {
    let raw = raw_spline_matrix(grid, k)?;
    let qr = raw.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * scale) {
        return Err(Error::RankDeficient { k });
    }
    let mut q = qr.q();
    for mut col in q.column_iter_mut() {
        let norm = col.norm();
        let lead = col
            .iter()
            .copied()
            .find(|v| v.abs() > f64::EPSILON * norm)
            .unwrap_or(0.0);
        if lead < 0.0 {
            col.neg_mut();
        }
    }
    Ok(Basis {
        grid: grid.clone(),
        matrix: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Textbook recursive Cox-de Boor, independent of the triangular scheme above.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = last && x == knots[i + 1] && knots[i] < knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, last);
        }
        v
    }

    #[test]
    fn grid_endpoints_only() {
        let g = make_grid(0.0, 1.0, 2).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0]);
    }

    #[test]
    fn grid_unit_spacing() {
        let g = make_grid(0.0, 50.0, 51).unwrap();
        for (j, &p) in g.points().iter().enumerate() {
            assert!((p - j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_spacing_point_three() {
        let g = make_grid(4.0, 19.0, 51).unwrap();
        assert_eq!(g.points()[0], 4.0);
        assert_eq!(g.points()[50], 19.0);
        for w in g.points().windows(2) {
            assert!(((w[1] - w[0]) - 0.3).abs() < 1e-12 * 0.3 * 10.0);
        }
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(make_grid(1.0, 1.0, 5), Err(Error::InvalidRange { .. })));
        assert!(matches!(make_grid(2.0, 1.0, 5), Err(Error::InvalidRange { .. })));
        assert!(matches!(make_grid(0.0, 1.0, 1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn nearest_index_rounds_half_up() {
        let g = make_grid(0.0, 50.0, 51).unwrap();
        assert_eq!(g.nearest_index(0.4), Some(0));
        assert_eq!(g.nearest_index(2.6), Some(3));
        assert_eq!(g.nearest_index(1.5), Some(2));
        assert_eq!(g.nearest_index(50.0), Some(50));
        assert_eq!(g.nearest_index(50.1), None);
        assert_eq!(g.nearest_index(-0.1), None);
    }

    #[test]
    fn raw_splines_match_recursive_definition() {
        let g = make_grid(0.0, 1.0, 51).unwrap();
        for k in [2, 3, 4, 7, 9] {
            let raw = raw_spline_matrix(&g, k).unwrap();
            let p = spline_degree(k);
            let knots = clamped_knots(0.0, 1.0, k, p);
            for (row, &x) in g.points().iter().enumerate() {
                let mut sum = 0.0;
                for i in 0..k {
                    let want = cox_de_boor(&knots, i, p, x, x == 1.0);
                    assert!((raw[(row, i)] - want).abs() < 1e-12, "k={k} row={row} i={i}");
                    sum += raw[(row, i)];
                }
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = make_grid(0.0, 50.0, 51).unwrap();
        let b = make_spline_basis(&g, 7).unwrap();
        assert_eq!(b.matrix().shape(), (51, 7));
        let gram = b.matrix().transpose() * b.matrix();
        assert!((gram - DMatrix::<f64>::identity(7, 7)).amax() < 1e-10);
    }

    #[test]
    fn square_basis() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let b = make_spline_basis(&g, 10).unwrap();
        let m = b.matrix();
        assert!((m.transpose() * m - DMatrix::<f64>::identity(10, 10)).amax() < 1e-10);
        assert!((m * m.transpose() - DMatrix::<f64>::identity(10, 10)).amax() < 1e-10);
    }

    #[test]
    fn span_is_preserved() {
        let g = make_grid(0.0, 50.0, 51).unwrap();
        let raw = raw_spline_matrix(&g, 7).unwrap();
        let b = make_spline_basis(&g, 7).unwrap();
        let proj = b.matrix() * b.matrix().transpose();
        for c in raw.column_iter() {
            let resid = (&c - &proj * c).norm() / c.norm();
            assert!(resid < 1e-9);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let g = make_grid(0.0, 1.0, 30).unwrap();
        let a = make_spline_basis(&g, 9).unwrap();
        let b = make_spline_basis(&g, 9).unwrap();
        assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
        for col in a.matrix().column_iter() {
            let first = col.iter().find(|v| v.abs() > 1e-15).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn dimension_errors() {
        let g = make_grid(0.0, 1.0, 5).unwrap();
        assert!(make_spline_basis(&g, 1).is_err());
        assert!(make_spline_basis(&g, 6).is_err());
    }

    #[test]
    fn from_orthonormal_rejects_non_orthonormal() {
        let g = make_grid(0.0, 1.0, 3).unwrap();
        let m = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(Basis::from_orthonormal(g, m).is_err());
    }
}
