//! Coordinatewise soft-impute (CSI) and its `mu = 0` special case,
//! soft-longitudinal-impute (SLI).
//!
//! Each iteration completes the unobserved cells of `Y - mu I_S` with the
//! current fit `W B'`, soft-thresholds the completed matrix projected onto
//! the basis to get the next `W`, and then sets `mu` to the mean residual over
//! observed post-treatment cells. The penalized loss
//!
//! ```text
//! f(W, mu) = 1/2 ||P_Omega(Y - W B' - mu I_S)||_F^2 + lambda ||W||_*
//! ```
//!
//! is non-increasing along the iterates, and the surrogate
//!
//! ```text
//! Q(W | W_ref, mu) = 1/2 ||P_Omega(Y - mu I_S) + P_Omega^perp(W_ref B') - W B'||_F^2 + lambda ||W||_*
//! ```
//!
//! majorizes `f(., mu)` and touches it at `W = W_ref`. With
//! `check_monotonicity` on, every iteration records the full descent chain
//! so callers can verify it.

use nalgebra::DMatrix;

use crate::basis::Basis;
use crate::error::{check_shape, Error, Result};
use crate::masked::{MaskedMatrix, TreatmentMatrix};
use crate::shrinkage::{nuclear_norm, soft_threshold_svd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Csi,
    Sli,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Csi => "csi",
            Method::Sli => "sli",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csi" => Ok(Method::Csi),
            "sli" => Ok(Method::Sli),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Bound on the squared relative change of `W` and `mu`.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Floor for the denominators of the relative-change test.
    pub denom_guard: f64,
    pub check_monotonicity: bool,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.denom_guard > 0.0) {
            return Err(Error::InvalidConfig("denom_guard must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tolerance: 1e-9,
            max_iter: 500,
            denom_guard: 1e-8,
            check_monotonicity: false,
        }
    }
}

/// Quantities from one iteration `k`, recorded when `check_monotonicity` is on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// `f(W_{k-1}, mu_{k-1})`
    pub loss_prev: f64,
    /// `Q(W_k | W_{k-1}, mu_{k-1})`
    pub surrogate: f64,
    /// `f(W_k, mu_{k-1})`
    pub loss_mid: f64,
    /// `f(W_k, mu_k)`
    pub loss: f64,
    /// `||W_k - W_{k-1}||_F^2`
    pub w_step_sq: f64,
    pub mu_step: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    /// Index of the first record whose `mu_{k-1}` came from the closed-form
    /// update rather than the initial value.
    pub first_updated_mu: usize,
}

impl Diagnostics {
    /// Iterations where `f(W_k, mu_k) <= f(W_k, mu_{k-1}) <= Q(...) <= f(W_{k-1}, mu_{k-1})`
    /// fails by more than `slack`.
    pub fn chain_violations(&self, slack: f64) -> Vec<usize> {
        self.iterations
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.loss > r.loss_mid + slack
                    || r.loss_mid > r.surrogate + slack
                    || r.surrogate > r.loss_prev + slack
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Iterations `k` where `||W_{k+1} - W_k||^2 > ||W_k - W_{k-1}||^2 + slack`.
    /// Only pairs in which both `mu` values came from the closed-form update
    /// are compared; the contraction argument does not cover the initial `mu`.
    pub fn step_violations(&self, slack: f64) -> Vec<usize> {
        self.iterations
            .windows(2)
            .enumerate()
            .skip(self.first_updated_mu)
            .filter(|(_, w)| w[1].w_step_sq > w[0].w_step_sq + slack)
            .map(|(k, _)| k + 1)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: Method,
    pub w: DMatrix<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|Omega ∩ Omega_S| = 0` under CSI: `mu` was pinned to zero.
    pub degenerate_treatment: bool,
    /// `f(W_k, mu_k)` after each iteration.
    pub loss_trace: Vec<f64>,
    /// Squared relative residuals of the fixed-point equations at the returned
    /// iterate: `||W - S(...)||^2 / max(1, ||W||^2)` and
    /// `(mu - mu(W))^2 / max(1, mu^2)`; the same units as `tolerance`.
    pub fixed_point_residual: (f64, f64),
    pub diagnostics: Option<Diagnostics>,
}

/// Result of the closed-form `mu` update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuUpdate {
    pub mu: f64,
    /// No observed post-treatment cell; `mu` is reported as zero.
    pub degenerate: bool,
}

/// Observed cell of `Y`.
#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    y: f64,
    treated: bool,
}

/// Immutable view over a fitting problem `(Y, I_S, B)` with shapes checked once.
///
/// Iterations only touch observed cells: for orthonormal `B`,
/// `(P_Omega(Y - mu I_S) + P_Omega^perp(W B')) B = W + P_Omega(Y - mu I_S - W B') B`.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    y: &'a MaskedMatrix,
    treatments: &'a TreatmentMatrix,
    basis: &'a Basis,
    cells: Vec<Cell>,
    /// Rows of `B`, row-major.
    b_rows: Vec<f64>,
    support_count: usize,
}

impl<'a> Problem<'a> {
    pub fn new(y: &'a MaskedMatrix, treatments: &'a TreatmentMatrix, basis: &'a Basis) -> Result<Self> {
        check_shape(y.shape(), treatments.shape())?;
        if y.ncols() != basis.num_points() {
            return Err(Error::ShapeMismatch {
                expected: (y.nrows(), basis.num_points()),
                got: y.shape(),
            });
        }
        let cells: Vec<Cell> = y
            .observed()
            .map(|(i, j, v)| Cell {
                i,
                j,
                y: v,
                treated: treatments.is_treated(i, j),
            })
            .collect();
        let b = basis.matrix();
        let b_rows = (0..b.nrows())
            .flat_map(|j| (0..b.ncols()).map(move |m| b[(j, m)]))
            .collect();
        Ok(Self {
            y,
            treatments,
            basis,
            support_count: cells.iter().filter(|c| c.treated).count(),
            cells,
            b_rows,
        })
    }

    pub fn y(&self) -> &MaskedMatrix {
        self.y
    }

    pub fn treatments(&self) -> &TreatmentMatrix {
        self.treatments
    }

    pub fn basis(&self) -> &Basis {
        self.basis
    }

    /// `|Omega ∩ Omega_S|`.
    pub fn support_count(&self) -> usize {
        self.support_count
    }

    fn w_shape(&self) -> (usize, usize) {
        (self.y.nrows(), self.basis.dim())
    }

    fn check_w(&self, w: &DMatrix<f64>) -> Result<()> {
        check_shape(self.w_shape(), w.shape())
    }

    fn fitted(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        w * self.basis.matrix().transpose()
    }

    // (W B')_{ij} on observed cells
    fn fitted_obs(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let k = self.basis.dim();
        self.cells
            .iter()
            .map(|c| {
                let b = &self.b_rows[c.j * k..(c.j + 1) * k];
                (0..k).map(|m| w[(c.i, m)] * b[m]).sum()
            })
            .collect()
    }

    fn residual(&self, c: &Cell, fitted: f64, mu: f64) -> f64 {
        if c.treated {
            c.y - fitted - mu
        } else {
            c.y - fitted
        }
    }

    // 1/2 ||P_Omega(Y - W B' - mu I_S)||^2
    fn data_term(&self, fitted: &[f64], mu: f64) -> f64 {
        0.5 * self
            .cells
            .iter()
            .zip(fitted)
            .map(|(c, &f)| self.residual(c, f, mu).powi(2))
            .sum::<f64>()
    }

    // (P_Omega(Y - mu I_S) + P_Omega^perp(fitted_ref)), dense
    fn completed(&self, fitted_ref: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
        let mut out = fitted_ref.clone();
        for c in &self.cells {
            out[(c.i, c.j)] = if c.treated { c.y - mu } else { c.y };
        }
        out
    }

    /// `f(W, mu)`.
    pub fn loss(&self, w: &DMatrix<f64>, mu: f64, lambda: f64) -> Result<f64> {
        self.check_w(w)?;
        let penalty = if lambda == 0.0 { 0.0 } else { lambda * nuclear_norm(w)? };
        Ok(self.data_term(&self.fitted_obs(w), mu) + penalty)
    }

    /// `Q(W | W_ref, mu)`.
    pub fn surrogate(&self, w: &DMatrix<f64>, w_ref: &DMatrix<f64>, mu: f64, lambda: f64) -> Result<f64> {
        self.check_w(w)?;
        self.check_w(w_ref)?;
        let penalty = if lambda == 0.0 { 0.0 } else { lambda * nuclear_norm(w)? };
        let completed = self.completed(&self.fitted(w_ref), mu);
        Ok(0.5 * (completed - self.fitted(w)).norm_squared() + penalty)
    }

    /// `S_lambda((P_Omega(Y - mu I_S) + P_Omega^perp(W_old B')) B)`, the
    /// minimizer of `Q(. | W_old, mu_old)`.
    pub fn update_w(&self, w_old: &DMatrix<f64>, mu_old: f64, lambda: f64) -> Result<DMatrix<f64>> {
        self.check_w(w_old)?;
        Ok(self.step(w_old, &self.fitted_obs(w_old), mu_old, lambda)?.0)
    }

    fn step(&self, w_old: &DMatrix<f64>, fitted_old: &[f64], mu_old: f64, lambda: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let k = self.basis.dim();
        let mut projected = w_old.clone();
        for (c, &f) in self.cells.iter().zip(fitted_old) {
            let r = self.residual(c, f, mu_old);
            let b = &self.b_rows[c.j * k..(c.j + 1) * k];
            for m in 0..k {
                projected[(c.i, m)] += r * b[m];
            }
        }
        soft_threshold_svd(&projected, lambda)
    }

    /// Mean of `(Y - W B')` over observed post-treatment cells.
    pub fn update_mu(&self, w: &DMatrix<f64>) -> Result<MuUpdate> {
        self.check_w(w)?;
        Ok(self.mu_from_fitted(&self.fitted_obs(w)))
    }

    fn mu_from_fitted(&self, fitted: &[f64]) -> MuUpdate {
        if self.support_count == 0 {
            return MuUpdate {
                mu: 0.0,
                degenerate: true,
            };
        }
        let sum: f64 = self
            .cells
            .iter()
            .zip(fitted)
            .filter(|(c, _)| c.treated)
            .map(|(c, &f)| c.y - f)
            .sum();
        MuUpdate {
            mu: sum / self.support_count as f64,
            degenerate: false,
        }
    }

    /// Runs the alternating scheme from `W = 0, mu = 0`.
    pub fn fit(&self, method: Method, config: &SolverConfig) -> Result<FitResult> {
        self.fit_from(method, config, None, |_, _, _| {})
    }

    /// Runs the alternating scheme from an optional starting point, calling
    /// `observer(k, &W_k, mu_k)` after every iteration.
    pub fn fit_from(
        &self,
        method: Method,
        config: &SolverConfig,
        init: Option<(&DMatrix<f64>, f64)>,
        mut observer: impl FnMut(usize, &DMatrix<f64>, f64),
    ) -> Result<FitResult> {
        config.validate()?;
        let lambda = config.lambda;
        let (mut w, mut mu) = match init {
            Some((w0, mu0)) => {
                self.check_w(w0)?;
                (w0.clone(), mu0)
            }
            None => (DMatrix::zeros(self.w_shape().0, self.w_shape().1), 0.0),
        };
        if method == Method::Sli {
            mu = 0.0;
        }
        let degenerate = method == Method::Csi && self.support_count == 0;
        let mut fitted = self.fitted_obs(&w);
        let mut nuclear = if init.is_some() { nuclear_norm(&w)? } else { 0.0 };
        let mut loss_trace = Vec::new();
        let mut diagnostics = config.check_monotonicity.then(|| Diagnostics {
            iterations: Vec::new(),
            first_updated_mu: usize::from(method == Method::Csi && !degenerate),
        });
        let mut converged = false;
        let mut iterations = 0;

        for k in 1..=config.max_iter {
            iterations = k;
            let (w_new, shrunk) = self.step(&w, &fitted, mu, lambda)?;
            let fitted_new = self.fitted_obs(&w_new);
            let nuclear_new: f64 = shrunk.iter().sum();
            let mu_new = match method {
                Method::Sli => 0.0,
                Method::Csi => self.mu_from_fitted(&fitted_new).mu,
            };
            let loss = self.data_term(&fitted_new, mu_new) + lambda * nuclear_new;
            let w_step_sq = (&w_new - &w).norm_squared();

            if let Some(diag) = diagnostics.as_mut() {
                let completed = self.completed(&self.fitted(&w), mu);
                diag.iterations.push(IterationRecord {
                    loss_prev: self.data_term(&fitted, mu) + lambda * nuclear,
                    surrogate: 0.5 * (completed - self.fitted(&w_new)).norm_squared() + lambda * nuclear_new,
                    loss_mid: self.data_term(&fitted_new, mu) + lambda * nuclear_new,
                    loss,
                    w_step_sq,
                    mu_step: mu_new - mu,
                });
            }
            loss_trace.push(loss);
            observer(k, &w_new, mu_new);

            let guard = config.denom_guard;
            let w_change = w_step_sq / guard.max(w.norm_squared());
            let mu_delta = mu_new - mu;
            let mu_change = if mu_delta.abs() < config.tolerance * guard {
                0.0
            } else {
                mu_delta * mu_delta / guard.max(mu * mu)
            };

            w = w_new;
            mu = mu_new;
            fitted = fitted_new;
            nuclear = nuclear_new;
            if w_change.max(mu_change) < config.tolerance {
                converged = true;
                break;
            }
        }

        let fixed_point_residual = self.fixed_point_residual(method, &w, mu, &fitted, lambda)?;
        Ok(FitResult {
            method,
            w,
            mu,
            lambda,
            iterations,
            converged,
            degenerate_treatment: degenerate,
            loss_trace,
            fixed_point_residual,
            diagnostics,
        })
    }

    fn fixed_point_residual(
        &self,
        method: Method,
        w: &DMatrix<f64>,
        mu: f64,
        fitted: &[f64],
        lambda: f64,
    ) -> Result<(f64, f64)> {
        let (w_next, _) = self.step(w, fitted, mu, lambda)?;
        let rw = (&w_next - w).norm_squared() / w.norm_squared().max(1.0);
        let mu_target = match method {
            Method::Sli => 0.0,
            Method::Csi => self.mu_from_fitted(fitted).mu,
        };
        let rmu = (mu - mu_target).powi(2) / (mu * mu).max(1.0);
        Ok((rw, rmu))
    }
}

pub fn loss(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    w: &DMatrix<f64>,
    mu: f64,
    lambda: f64,
) -> Result<f64> {
    Problem::new(y, treatments, basis)?.loss(w, mu, lambda)
}

pub fn surrogate(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    w: &DMatrix<f64>,
    w_ref: &DMatrix<f64>,
    mu: f64,
    lambda: f64,
) -> Result<f64> {
    Problem::new(y, treatments, basis)?.surrogate(w, w_ref, mu, lambda)
}

pub fn update_w(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    w_old: &DMatrix<f64>,
    mu_old: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    Problem::new(y, treatments, basis)?.update_w(w_old, mu_old, lambda)
}

pub fn update_mu(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    w: &DMatrix<f64>,
) -> Result<MuUpdate> {
    Problem::new(y, treatments, basis)?.update_mu(w)
}

pub fn fit_csi(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    config: &SolverConfig,
) -> Result<FitResult> {
    Problem::new(y, treatments, basis)?.fit(Method::Csi, config)
}

pub fn fit_sli(y: &MaskedMatrix, basis: &Basis, config: &SolverConfig) -> Result<FitResult> {
    let none = TreatmentMatrix::untreated(y.nrows(), y.ncols());
    Problem::new(y, &none, basis)?.fit(Method::Sli, config)
}

/// Fits with either method; SLI ignores `treatments`.
pub fn fit(
    method: Method,
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    config: &SolverConfig,
) -> Result<FitResult> {
    match method {
        Method::Csi => fit_csi(y, treatments, basis, config),
        Method::Sli => fit_sli(y, basis, config),
    }
}

/// `W B' + mu I_S`.
pub fn predict(w: &DMatrix<f64>, mu: f64, treatments: &TreatmentMatrix, basis: &Basis) -> Result<DMatrix<f64>> {
    if w.ncols() != basis.dim() {
        return Err(Error::ShapeMismatch {
            expected: (w.nrows(), basis.dim()),
            got: w.shape(),
        });
    }
    check_shape((w.nrows(), basis.num_points()), treatments.shape())?;
    Ok(w * basis.matrix().transpose() + treatments.dense() * mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_grid, make_spline_basis};
    use crate::masked::Mask;

    fn basis(t: usize, k: usize) -> Basis {
        make_spline_basis(&make_grid(0.0, 1.0, t).unwrap(), k).unwrap()
    }

    fn pseudo(i: usize, j: usize) -> f64 {
        (((i * 7919 + j * 104729) % 1000) as f64 / 1000.0 - 0.5) * 4.0
    }

    #[test]
    fn loss_at_zero_is_half_observed_norm() {
        let b = basis(6, 3);
        let y = MaskedMatrix::new(
            DMatrix::from_fn(4, 6, pseudo),
            Mask::from_fn(4, 6, |i, j| (i + j) % 2 == 0),
        )
        .unwrap();
        let is = TreatmentMatrix::new(vec![Some(2), None, Some(0), Some(5)], 6).unwrap();
        let f = loss(&y, &is, &b, &DMatrix::zeros(4, 3), 0.0, 0.0).unwrap();
        assert!((f - 0.5 * y.zero_filled().norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn loss_of_perfect_fit_is_zero() {
        let b = basis(6, 3);
        let w = DMatrix::from_fn(4, 3, pseudo);
        let is = TreatmentMatrix::new(vec![Some(2), None, Some(0), Some(5)], 6).unwrap();
        let y = MaskedMatrix::fully_observed(predict(&w, 1.5, &is, &b).unwrap()).unwrap();
        assert!(loss(&y, &is, &b, &w, 1.5, 0.0).unwrap() < 1e-20);
    }

    #[test]
    fn surrogate_touches_loss() {
        let b = basis(6, 3);
        let y = MaskedMatrix::new(DMatrix::from_fn(4, 6, pseudo), Mask::from_fn(4, 6, |i, j| i != j)).unwrap();
        let is = TreatmentMatrix::new(vec![Some(2), None, Some(0), Some(5)], 6).unwrap();
        let w = DMatrix::from_fn(4, 3, |i, j| pseudo(j, i + 3));
        let f = loss(&y, &is, &b, &w, 0.7, 0.4).unwrap();
        let q = surrogate(&y, &is, &b, &w, &w, 0.7, 0.4).unwrap();
        assert!((f - q).abs() < 1e-10);
    }

    #[test]
    fn surrogate_ignores_reference_on_full_mask() {
        let b = basis(6, 3);
        let y = MaskedMatrix::fully_observed(DMatrix::from_fn(4, 6, pseudo)).unwrap();
        let is = TreatmentMatrix::untreated(4, 6);
        let w = DMatrix::from_fn(4, 3, |i, j| pseudo(j, i));
        let q1 = surrogate(&y, &is, &b, &w, &DMatrix::zeros(4, 3), 0.0, 1.0).unwrap();
        let q2 = surrogate(&y, &is, &b, &w, &DMatrix::from_element(4, 3, 9.0), 0.0, 1.0).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn update_w_full_mask_zero_lambda_is_projection() {
        let b = basis(6, 3);
        let y = MaskedMatrix::fully_observed(DMatrix::from_fn(4, 6, pseudo)).unwrap();
        let is = TreatmentMatrix::new(vec![Some(2), None, Some(0), Some(5)], 6).unwrap();
        let w_old = DMatrix::from_element(4, 3, 3.0);
        let w = update_w(&y, &is, &b, &w_old, 0.8, 0.0).unwrap();
        let want = (y.zero_filled() - is.dense() * 0.8) * b.matrix();
        assert!((w - want).amax() < 1e-10);
    }

    #[test]
    fn update_w_empty_mask_refits_previous_iterate() {
        let b = basis(6, 3);
        let y = MaskedMatrix::new(DMatrix::zeros(4, 6), Mask::new(4, 6, false)).unwrap();
        let is = TreatmentMatrix::untreated(4, 6);
        let w_old = DMatrix::from_fn(4, 3, pseudo);
        let w = update_w(&y, &is, &b, &w_old, 0.0, 0.5).unwrap();
        let want = crate::shrinkage::soft_threshold(&w_old, 0.5).unwrap();
        assert!((w - want).amax() < 1e-10);
    }

    #[test]
    fn update_mu_examples() {
        let b = basis(5, 2);
        let w = DMatrix::from_fn(3, 2, pseudo);
        let is = TreatmentMatrix::new(vec![Some(1), Some(3), None], 5).unwrap();
        let fitted = &w * b.matrix().transpose();
        let y = MaskedMatrix::fully_observed(&fitted + is.dense() * 1.25).unwrap();
        let m = update_mu(&y, &is, &b, &w).unwrap();
        assert!(!m.degenerate);
        assert!((m.mu - 1.25).abs() < 1e-12);

        let mut single = Mask::new(3, 5, false);
        single.set(0, 3, true);
        single.set(2, 0, true);
        let mut vals = fitted.clone();
        vals[(0, 3)] += 2.5;
        let y = MaskedMatrix::new(vals, single).unwrap();
        let m = update_mu(&y, &is, &b, &w).unwrap();
        assert!((m.mu - 2.5).abs() < 1e-12);

        let none = TreatmentMatrix::untreated(3, 5);
        let m = update_mu(&y, &none, &b, &w).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.mu, 0.0);
    }

    #[test]
    fn sli_on_zero_data() {
        let b = basis(6, 3);
        let y = MaskedMatrix::new(DMatrix::zeros(4, 6), Mask::from_fn(4, 6, |i, j| (i * j) % 3 == 0)).unwrap();
        let r = fit_sli(&y, &b, &SolverConfig::new(0.3)).unwrap();
        assert_eq!(r.w, DMatrix::zeros(4, 3));
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert_eq!(r.mu, 0.0);
    }

    #[test]
    fn full_mask_zero_lambda_converges_to_projection() {
        let b = basis(8, 4);
        let y = MaskedMatrix::fully_observed(DMatrix::from_fn(5, 8, pseudo)).unwrap();
        let is = TreatmentMatrix::untreated(5, 8);
        let want = y.zero_filled() * b.matrix();
        let mut first = None;
        let problem = Problem::new(&y, &is, &b).unwrap();
        let r = problem
            .fit_from(Method::Csi, &SolverConfig::new(0.0), None, |k, w, _| {
                if k == 1 {
                    first = Some(w.clone());
                }
            })
            .unwrap();
        assert!((first.unwrap() - &want).amax() < 1e-10);
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!((r.w - want).amax() < 1e-10);
        let s = fit_sli(&y, &b, &SolverConfig::new(0.0)).unwrap();
        assert!(s.iterations <= 2);
    }

    #[test]
    fn degenerate_treatment_is_flagged() {
        let b = basis(6, 3);
        let y = MaskedMatrix::fully_observed(DMatrix::from_fn(4, 6, pseudo)).unwrap();
        let is = TreatmentMatrix::untreated(4, 6);
        let r = fit_csi(&y, &is, &b, &SolverConfig::new(0.5)).unwrap();
        assert!(r.degenerate_treatment);
        assert_eq!(r.mu, 0.0);
    }

    #[test]
    fn max_iter_reached_is_not_an_error() {
        let b = basis(6, 3);
        let y = MaskedMatrix::new(DMatrix::from_fn(4, 6, pseudo), Mask::from_fn(4, 6, |i, j| (i + j) % 3 != 0)).unwrap();
        let is = TreatmentMatrix::new(vec![Some(2), None, Some(0), Some(5)], 6).unwrap();
        let cfg = SolverConfig {
            max_iter: 2,
            ..SolverConfig::new(0.1)
        };
        let r = fit_csi(&y, &is, &b, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.loss_trace.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(-1.0).validate().is_err());
        assert!(SolverConfig { tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_iter: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn predict_hand_case() {
        let b = basis(6, 3);
        let mut w = DMatrix::zeros(1, 3);
        w[(0, 0)] = 1.0;
        let is = TreatmentMatrix::new(vec![Some(3)], 6).unwrap();
        let yhat = predict(&w, 2.0, &is, &b).unwrap();
        for j in 0..6 {
            let want = b.matrix()[(j, 0)] + if j >= 3 { 2.0 } else { 0.0 };
            assert!((yhat[(0, j)] - want).abs() < 1e-15);
        }
        assert_eq!(predict(&DMatrix::zeros(1, 3), 0.0, &is, &b).unwrap(), DMatrix::zeros(1, 6));
        assert!(predict(&DMatrix::zeros(2, 3), 0.0, &is, &b).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("CSI".parse::<Method>().unwrap(), Method::Csi);
        assert_eq!("sli".parse::<Method>().unwrap(), Method::Sli);
        assert!("pca".parse::<Method>().is_err());
    }
}
