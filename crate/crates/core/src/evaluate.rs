//! Metrics, entrywise cross-validation, baselines, principal curves and the
//! simulation sweep.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{check_shape, Error, Result};
use crate::masked::{Mask, MaskedMatrix, TreatmentMatrix};
use crate::rng::{derive_seed, make_rng};
use crate::shrinkage::svd;
use crate::simulate::{generate_dataset, SimConfig};
use crate::solver::{fit, predict, FitResult, Method, SolverConfig};

/// Mean squared error of `y_hat` over `eval_mask`.
pub fn mse(y: &MaskedMatrix, y_hat: &DMatrix<f64>, eval_mask: &Mask) -> Result<f64> {
    check_shape(y.shape(), y_hat.shape())?;
    check_shape(y.shape(), eval_mask.shape())?;
    if !eval_mask.is_subset_of(y.mask()) {
        return Err(Error::MaskNotSubset);
    }
    let n = eval_mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let values = y.raw_values();
    let sum: f64 = eval_mask
        .indices()
        .map(|(i, j)| {
            let r = values[(i, j)] - y_hat[(i, j)];
            r * r
        })
        .sum();
    Ok(sum / n as f64)
}

/// `(mu_hat - mu)^2 / mu^2`.
pub fn rse_mu(mu_hat: f64, mu_true: f64) -> Result<f64> {
    if mu_true == 0.0 {
        return Err(Error::ZeroTrueMu);
    }
    let r = (mu_hat - mu_true) / mu_true;
    Ok(r * r)
}

/// Relative squared error, or the absolute squared error when `mu_true == 0`.
/// The flag is true when the value is relative.
pub fn mu_error(mu_hat: f64, mu_true: f64) -> (f64, bool) {
    match rse_mu(mu_hat, mu_true) {
        Ok(v) => (v, true),
        Err(_) => (mu_hat * mu_hat, false),
    }
}

/// Train / validation / test partition of `Omega`.
///
/// `test` and `train` partition `Omega`. Each validation fold is a subset of
/// `train`; the folds are pairwise disjoint. With [`make_splits`] they cover
/// `train` exactly, with [`make_holdout_splits`] only part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Mask,
    pub validation: Vec<Mask>,
    pub test: Mask,
}

impl SplitSpec {
    /// Training entries when fold `f` is held out.
    pub fn fold_train(&self, f: usize) -> Mask {
        self.train.minus(&self.validation[f])
    }

    pub fn folds(&self) -> usize {
        self.validation.len()
    }
}

fn shuffled(mut cells: Vec<(usize, usize)>, seed: u64) -> Vec<(usize, usize)> {
    cells.shuffle(&mut make_rng(seed));
    cells
}

fn mask_of(shape: (usize, usize), cells: &[(usize, usize)]) -> Mask {
    let mut m = Mask::new(shape.0, shape.1, false);
    for &(i, j) in cells {
        m.set(i, j, true);
    }
    m
}

/// Uniform entrywise split: `floor(test_frac |Omega|)` test entries, the rest
/// divided into `folds` validation folds whose sizes differ by at most one.
pub fn make_splits(y: &MaskedMatrix, folds: usize, test_frac: f64, seed: u64) -> Result<SplitSpec> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::InvalidConfig(format!("test fraction {test_frac} not in [0, 1)")));
    }
    let cells = shuffled(y.mask().indices().collect(), seed);
    let n_test = (test_frac * cells.len() as f64).floor() as usize;
    let rest = cells.len() - n_test;
    if rest < folds {
        return Err(Error::InsufficientData(format!(
            "{} observed entries cannot fill {folds} folds",
            cells.len()
        )));
    }
    let (test, train) = cells.split_at(n_test);
    let mut validation = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = rest / folds + usize::from(f < rest % folds);
        validation.push(mask_of(y.shape(), &train[start..start + len]));
        start += len;
    }
    Ok(SplitSpec {
        train: mask_of(y.shape(), train),
        validation,
        test: mask_of(y.shape(), test),
    })
}

/// Held-out sets drawn only from `eligible` observed entries: a test set and
/// `folds` validation folds of `floor(frac |Omega|)` entries each. Everything
/// else is common training data.
pub fn make_holdout_splits(
    y: &MaskedMatrix,
    eligible: &Mask,
    folds: usize,
    fold_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<SplitSpec> {
    check_shape(y.shape(), eligible.shape())?;
    if folds == 0 {
        return Err(Error::InvalidConfig("need at least one validation fold".into()));
    }
    let total = y.mask().count() as f64;
    let n_test = (test_frac * total).floor() as usize;
    let n_fold = (fold_frac * total).floor() as usize;
    if n_fold == 0 {
        return Err(Error::InsufficientData("validation folds would be empty".into()));
    }
    let pool = shuffled(y.mask().and(eligible).indices().collect(), seed);
    if pool.len() < n_test + folds * n_fold {
        return Err(Error::InsufficientData(format!(
            "{} eligible entries, {} needed",
            pool.len(),
            n_test + folds * n_fold
        )));
    }
    let test = mask_of(y.shape(), &pool[..n_test]);
    let validation = (0..folds)
        .map(|f| {
            let start = n_test + f * n_fold;
            mask_of(y.shape(), &pool[start..start + n_fold])
        })
        .collect();
    Ok(SplitSpec {
        train: y.mask().minus(&test),
        validation,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub lambda_star: f64,
    pub table: Vec<CvRow>,
    /// Refit on the full training mask at `lambda_star`.
    pub fit: FitResult,
}

/// Grid search over `lambda_grid` scored on the validation folds of `splits`;
/// ties go to the smaller lambda. The winner is refit from zero on
/// `splits.train`.
pub fn cross_validate(
    y: &MaskedMatrix,
    treatments: &TreatmentMatrix,
    basis: &Basis,
    lambda_grid: &[f64],
    splits: &SplitSpec,
    method: Method,
    config: &SolverConfig,
) -> Result<CvOutcome> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    let folds = splits.folds();
    let fold_data: Vec<MaskedMatrix> = (0..folds)
        .map(|f| y.restrict(&splits.fold_train(f)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..lambda_grid.len())
        .flat_map(|l| (0..folds).map(move |f| (l, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(l, f)| {
            let cfg = SolverConfig {
                lambda: lambda_grid[l],
                ..config.clone()
            };
            let fitted = fit(method, &fold_data[f], treatments, basis, &cfg)?;
            let y_hat = predict(&fitted.w, fitted.mu, treatments, basis)?;
            mse(y, &y_hat, &splits.validation[f])
        })
        .collect::<Result<_>>()?;
    let table: Vec<CvRow> = lambda_grid
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let fold_mse = scores[l * folds..(l + 1) * folds].to_vec();
            let mean_mse = fold_mse.iter().sum::<f64>() / folds as f64;
            CvRow {
                lambda,
                fold_mse,
                mean_mse,
            }
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse).then(a.lambda.total_cmp(&b.lambda)))
        .expect("nonempty grid");
    let lambda_star = best.lambda;
    let cfg = SolverConfig {
        lambda: lambda_star,
        ..config.clone()
    };
    let fit = fit(method, &y.restrict(&splits.train)?, treatments, basis, &cfg)?;
    Ok(CvOutcome {
        lambda_star,
        table,
        fit,
    })
}

fn training_mask(y: &MaskedMatrix, eval_mask: &Mask) -> Result<Mask> {
    check_shape(y.shape(), eval_mask.shape())?;
    let train = y.mask().minus(eval_mask);
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    Ok(train)
}

fn global_mean(y: &MaskedMatrix, train: &Mask) -> f64 {
    let values = y.raw_values();
    train.indices().map(|(i, j)| values[(i, j)]).sum::<f64>() / train.count() as f64
}

/// Every cell set to the mean of the observed entries outside `eval_mask`.
pub fn baseline_pmean(y: &MaskedMatrix, eval_mask: &Mask) -> Result<DMatrix<f64>> {
    let train = training_mask(y, eval_mask)?;
    let m = global_mean(y, &train);
    Ok(DMatrix::from_element(y.nrows(), y.ncols(), m))
}

/// Cell `(i, j)` set to the mean of patient `i`'s training entries in columns
/// before `j`, or to the population mean when there are none.
pub fn baseline_rmean(y: &MaskedMatrix, eval_mask: &Mask) -> Result<DMatrix<f64>> {
    let train = training_mask(y, eval_mask)?;
    let fallback = global_mean(y, &train);
    let values = y.raw_values();
    let mut out = DMatrix::from_element(y.nrows(), y.ncols(), fallback);
    for i in 0..y.nrows() {
        let (mut sum, mut count) = (0.0, 0usize);
        for j in 0..y.ncols() {
            if count > 0 {
                out[(i, j)] = sum / count as f64;
            }
            if train.get(i, j) {
                sum += values[(i, j)];
                count += 1;
            }
        }
    }
    Ok(out)
}

/// Top principal curves `d_m B v_m` of `W = U D V'`, each signed so that its
/// largest-magnitude entry is positive.
pub fn principal_components(w: &DMatrix<f64>, basis: &Basis, top: usize) -> Result<Vec<DVector<f64>>> {
    if w.ncols() != basis.dim() {
        return Err(Error::ShapeMismatch {
            expected: (w.nrows(), basis.dim()),
            got: w.shape(),
        });
    }
    if top == 0 {
        return Ok(Vec::new());
    }
    let dec = svd(w)?;
    let rank = if dec.d.is_empty() { 0 } else { dec.rank(1e-10 * dec.d[0].max(f64::MIN_POSITIVE)) };
    if top > rank {
        return Err(Error::TopExceedsRank { top, rank });
    }
    Ok((0..top)
        .map(|m| {
            let mut curve = basis.matrix() * dec.v.column(m) * dec.d[m];
            let peak = curve.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if peak < 0.0 {
                curve.neg_mut();
            }
            curve
        })
        .collect())
}

/// A grid of simulation cells, each replicated with independent seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mu_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub replications: usize,
    pub folds: usize,
    pub test_frac: f64,
    pub seed: u64,
    /// Data-generating parameters; `mu`, `rho` and `seed` are overwritten per cell.
    pub sim: SimConfig,
    pub solver: SolverConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mu_values: vec![1.0, 2.0, 5.0],
            rho_values: vec![0.1, 0.3, 0.5],
            lambda_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            replications: 10,
            folds: 5,
            test_frac: 0.1,
            seed: 0,
            sim: SimConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: Method,
    pub mu: f64,
    pub rho: f64,
    /// CV-selected lambda.
    pub lambda: f64,
    pub replication: usize,
    pub mse: f64,
    /// Relative squared error of `mu_hat`; absolute when `mu == 0`.
    pub rse_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub mu: f64,
    pub rho: f64,
    pub replications: usize,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub rse_mean: f64,
    pub lambda_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by method, `mu`, `rho`, replication.
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    /// Per-cell means over replications, in record order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        for chunk in self
            .records
            .chunk_by(|a, b| a.method == b.method && a.mu == b.mu && a.rho == b.rho)
        {
            let n = chunk.len() as f64;
            let mean = |f: fn(&SweepRecord) -> f64| chunk.iter().map(f).sum::<f64>() / n;
            let mse_mean = mean(|r| r.mse);
            let var = if chunk.len() > 1 {
                chunk.iter().map(|r| (r.mse - mse_mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            out.push(CellSummary {
                method: chunk[0].method,
                mu: chunk[0].mu,
                rho: chunk[0].rho,
                replications: chunk.len(),
                mse_mean,
                mse_sd: var.sqrt(),
                rse_mean: mean(|r| r.rse_mu),
                lambda_mean: mean(|r| r.lambda),
            });
        }
        out
    }

    pub fn cell(&self, method: Method, mu: f64, rho: f64) -> Option<CellSummary> {
        self.summary()
            .into_iter()
            .find(|c| c.method == method && c.mu == mu && c.rho == rho)
    }
}

/// One replication: simulate, split, cross-validate both methods, score on the
/// test entries.
pub fn run_replication(config: &SweepConfig, mu: f64, rho: f64, seed: u64, replication: usize) -> Result<[SweepRecord; 2]> {
    let sim = SimConfig {
        mu,
        rho,
        seed,
        ..config.sim.clone()
    };
    let data = generate_dataset(&sim)?;
    let splits = make_splits(&data.observed, config.folds, config.test_frac, derive_seed(seed, 1))?;
    let mut out = Vec::with_capacity(2);
    for method in [Method::Csi, Method::Sli] {
        let cv = cross_validate(
            &data.observed,
            &data.treatments,
            &data.basis,
            &config.lambda_grid,
            &splits,
            method,
            &config.solver,
        )?;
        let treatments = match method {
            Method::Csi => data.treatments.clone(),
            Method::Sli => TreatmentMatrix::untreated(sim.n, sim.t),
        };
        let y_hat = predict(&cv.fit.w, cv.fit.mu, &treatments, &data.basis)?;
        out.push(SweepRecord {
            method,
            mu,
            rho,
            lambda: cv.lambda_star,
            replication,
            mse: mse(&data.observed, &y_hat, &splits.test)?,
            rse_mu: mu_error(cv.fit.mu, mu).0,
        });
    }
    let sli = out.pop().expect("two records");
    let csi = out.pop().expect("two records");
    Ok([csi, sli])
}

/// Runs every `(mu, rho)` cell `replications` times. Replication `r` of cell
/// `c` (row-major over `mu_values` x `rho_values`) uses seed
/// `derive_seed(derive_seed(seed, c), r)`.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.mu_values.is_empty() || config.rho_values.is_empty() || config.lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be nonempty".into()));
    }
    if config.replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    config.solver.validate()?;
    let mut jobs = Vec::new();
    for (a, &mu) in config.mu_values.iter().enumerate() {
        for (b, &rho) in config.rho_values.iter().enumerate() {
            let cell = (a * config.rho_values.len() + b) as u64;
            for r in 0..config.replications {
                jobs.push((mu, rho, derive_seed(derive_seed(config.seed, cell), r as u64), r));
            }
        }
    }
    let pairs: Vec<[SweepRecord; 2]> = jobs
        .par_iter()
        .map(|&(mu, rho, seed, r)| run_replication(config, mu, rho, seed, r))
        .collect::<Result<_>>()?;
    let mut records: Vec<SweepRecord> = pairs.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        a.method
            .as_str()
            .cmp(b.method.as_str())
            .then(a.mu.total_cmp(&b.mu))
            .then(a.rho.total_cmp(&b.rho))
            .then(a.replication.cmp(&b.replication))
    });
    Ok(SweepResult { records })
}
