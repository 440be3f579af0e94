//! Synthetic data.
//!
//! [`generate_dataset`] draws `Y = W B' + mu I_S + E` on the grid with a
//! two-component Gaussian mixture of low-rank random effects for `W`,
//! uniformly distributed treatment onsets, i.i.d. Gaussian noise and a
//! Bernoulli observation mask. Draw order from the single seeded stream:
//! `V_1`, `V_2` (K x K each, row-major), `gamma_1`, `gamma_2`, the mixture
//! labels, `U_1`, `U_2` (N x K each, row-major), onsets, noise (row-major),
//! mask (row-major).
//!
//! [`generate_gdi_like`] produces irregularly sampled records resembling a
//! clinical gait-index cohort, for exercising the ingestion pipeline.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::basis::{make_grid, make_spline_basis, raw_spline_matrix, Basis, TimeGrid};
use crate::error::{Error, Result};
use crate::masked::{Mask, MaskedMatrix, ObservationSet, PatientRecord, TreatmentMatrix};
use crate::rng::{make_rng, SimRng};
use crate::shrinkage::svd;

/// Variance profile `[a, b, 0.005, 0.1 e^-3, ..., 0.1 e^-(K-1)]`, truncated to `k`.
pub fn default_scales(k: usize, first: f64, second: f64) -> Vec<f64> {
    let mut s = vec![first, second, 0.005];
    s.extend((3..k.max(3)).map(|m| 0.1 * (-(m as f64)).exp()));
    s.truncate(k);
    s
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub kappa: f64,
    pub r1: f64,
    pub r2: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub p_tr: f64,
    pub noise_sd: f64,
    pub mu: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::with_dims(500, 51, 7)
    }
}

impl SimConfig {
    /// Default auxiliary parameters with the given dimensions, `mu = 0`, `rho = 0.3`.
    pub fn with_dims(n: usize, t: usize, k: usize) -> Self {
        Self {
            n,
            t,
            k,
            kappa: 0.33,
            r1: 1.0,
            r2: 2.0,
            s1: default_scales(k, 1.0, 0.4),
            s2: default_scales(k, 1.3, 0.2),
            p_tr: 0.8,
            noise_sd: 0.5,
            mu: 0.0,
            rho: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || self.t < 2 || self.k < 2 || self.k > self.t {
            return bad(format!("invalid dimensions N={} T={} K={}", self.n, self.t, self.k));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad(format!("kappa must be in [0, 1], got {}", self.kappa));
        }
        if !(self.p_tr > 0.0 && self.p_tr <= 1.0) {
            return bad(format!("p_tr must be in (0, 1], got {}", self.p_tr));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must be in (0, 1], got {}", self.rho));
        }
        if !(self.noise_sd >= 0.0) || !self.mu.is_finite() || !self.r1.is_finite() || !self.r2.is_finite() {
            return bad("noise_sd must be >= 0 and mu, r1, r2 finite".into());
        }
        for (name, s) in [("s1", &self.s1), ("s2", &self.s2)] {
            if s.len() != self.k || s.iter().any(|v| !(*v >= 0.0)) {
                return bad(format!("{name} must have {} non-negative entries", self.k));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        make_grid(0.0, 1.0, self.t)
    }
}

/// `W` together with the mixture parameters it was drawn from.
#[derive(Debug, Clone)]
pub struct WDraw {
    pub w: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    /// `true` where the row was drawn from component 1.
    pub component1: Vec<bool>,
}

fn normal_matrix(rng: &mut SimRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn random_orthogonal(rng: &mut SimRng, k: usize) -> Result<DMatrix<f64>> {
    Ok(svd(&normal_matrix(rng, k, k))?.v.transpose())
}

fn unit_vector(rng: &mut SimRng, k: usize) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
    let norm = v.norm();
    v / norm
}

pub fn generate_w(config: &SimConfig, rng: &mut SimRng) -> Result<WDraw> {
    config.validate()?;
    let (n, k) = (config.n, config.k);
    let v1 = random_orthogonal(rng, k)?;
    let v2 = random_orthogonal(rng, k)?;
    let gamma1 = unit_vector(rng, k);
    let gamma2 = unit_vector(rng, k);
    let component1: Vec<bool> = (0..n).map(|_| rng.random_bool(config.kappa)).collect();
    let u1 = normal_matrix(rng, n, k);
    let u2 = normal_matrix(rng, n, k);

    let scale = |u: DMatrix<f64>, s: &[f64], v: &DMatrix<f64>| {
        let mut u = u;
        for (mut col, &sv) in u.column_iter_mut().zip(s) {
            col *= sv.sqrt();
        }
        u * v
    };
    let e1 = scale(u1, &config.s1, &v1);
    let e2 = scale(u2, &config.s2, &v2);
    let w = DMatrix::from_fn(n, k, |i, j| {
        if component1[i] {
            config.r1 * gamma1[j] + e1[(i, j)]
        } else {
            config.r2 * gamma2[j] + e2[(i, j)]
        }
    });
    Ok(WDraw {
        w,
        v1,
        v2,
        gamma1,
        gamma2,
        component1,
    })
}

/// Onsets drawn uniformly from `1..=floor(T / p_tr)` (1-based grid positions);
/// draws beyond `T` mean untreated within the grid.
pub fn generate_treatments(config: &SimConfig, rng: &mut SimRng) -> Result<TreatmentMatrix> {
    config.validate()?;
    let support = ((config.t as f64 / config.p_tr).floor() as usize).max(1);
    let onset = (0..config.n)
        .map(|_| {
            let tk = rng.random_range(1..=support);
            (tk <= config.t).then(|| tk - 1)
        })
        .collect();
    TreatmentMatrix::new(onset, config.t)
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub observed: MaskedMatrix,
    /// Pre-masking ground truth `Y_0`.
    pub complete: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub treatments: TreatmentMatrix,
    pub mu_true: f64,
    /// Basis used to generate the data.
    pub basis: Basis,
    pub config: SimConfig,
}

impl SimOutput {
    /// `W_true B' + mu I_S`, the noiseless signal.
    pub fn signal(&self) -> DMatrix<f64> {
        &self.w_true * self.basis.matrix().transpose() + self.treatments.dense() * self.mu_true
    }
}

pub fn generate_dataset(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let basis = make_spline_basis(&config.grid()?, config.k)?;
    let mut rng = make_rng(config.seed);
    let draw = generate_w(config, &mut rng)?;
    let treatments = generate_treatments(config, &mut rng)?;
    let (n, t) = (config.n, config.t);
    let noise: Vec<f64> = (0..n * t)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.noise_sd * z
        })
        .collect();
    let noise = DMatrix::from_row_slice(n, t, &noise);
    let complete = &draw.w * basis.matrix().transpose() + treatments.dense() * config.mu + noise;
    let bits: Vec<bool> = (0..n * t).map(|_| rng.random::<f64>() < config.rho).collect();
    let mask = Mask::from_row_major(n, t, bits)?;
    Ok(SimOutput {
        observed: MaskedMatrix::new(complete.clone(), mask)?,
        complete,
        w_true: draw.w,
        treatments,
        mu_true: config.mu,
        basis,
        config: config.clone(),
    })
}

/// Parameters of a cohort resembling clinical gait-index data: ages 4-19,
/// roughly two visits per patient, a single surgery with an additive effect.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GdiLikeConfig {
    pub patients: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Dimension of the spline space the true trajectories live in.
    pub k_true: usize,
    pub mean_level: f64,
    /// Standard deviations of the latent factors (rank = length).
    pub factor_sd: Vec<f64>,
    /// Probability of one more visit after each visit.
    pub revisit_prob: f64,
    pub min_gap: f64,
    pub mean_extra_gap: f64,
    pub surgery_prob: f64,
    pub mu: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for GdiLikeConfig {
    fn default() -> Self {
        Self {
            patients: 3000,
            t_min: 4.0,
            t_max: 19.0,
            k_true: 6,
            mean_level: 70.0,
            factor_sd: vec![9.0, 5.0, 3.0],
            revisit_prob: 0.55,
            min_gap: 0.7,
            mean_extra_gap: 1.2,
            surgery_prob: 0.5,
            mu: 8.0,
            noise_sd: 6.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GdiLikeOutput {
    pub observations: ObservationSet,
    pub config: GdiLikeConfig,
}

/// Irregular per-patient records, generated on a continuous time axis.
pub fn generate_gdi_like(config: &GdiLikeConfig) -> Result<GdiLikeOutput> {
    if config.patients == 0 || !(config.t_min < config.t_max) || config.k_true < 2 {
        return Err(Error::InvalidConfig("invalid cohort dimensions".into()));
    }
    if !(0.0..1.0).contains(&config.revisit_prob) || !(0.0..=1.0).contains(&config.surgery_prob) {
        return Err(Error::InvalidConfig("probabilities out of range".into()));
    }
    let mut rng = make_rng(config.seed);
    let k = config.k_true;
    let rank = config.factor_sd.len();
    // A fine grid to evaluate the true curves; visits are interpolated linearly
    // between its points.
    let fine = make_grid(config.t_min, config.t_max, 301)?;
    let raw = raw_spline_matrix(&fine, k)?;
    // Loadings scaled so each factor curve has unit RMS over the fine grid;
    // `factor_sd` is then the curve amplitude.
    let loadings = {
        let mut q = svd(&normal_matrix(&mut rng, k, k))?.u.columns(0, rank).into_owned();
        for m in 0..rank {
            let rms = (&raw * q.column(m)).norm() / (fine.len() as f64).sqrt();
            q.column_mut(m).unscale_mut(rms);
        }
        q
    };
    let trend = DVector::from_iterator(k, (0..k).map(|m| -3.0 + 6.0 * m as f64 / (k - 1) as f64));
    let gaps = Exp::new(1.0 / config.mean_extra_gap).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let span = config.t_max - config.t_min;
    let mut patients = Vec::with_capacity(config.patients);
    for p in 0..config.patients {
        let z = DVector::from_iterator(
            rank,
            config.factor_sd.iter().map(|&sd| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            }),
        );
        let coef = &trend + &loadings * z;
        let curve = &raw * &coef;

        let mut times = vec![config.t_min + rng.random::<f64>() * 0.75 * span];
        while rng.random_bool(config.revisit_prob) {
            let next = times.last().unwrap() + config.min_gap + gaps.sample(&mut rng);
            if next > config.t_max {
                break;
            }
            times.push(next);
        }
        let treatment_time = rng.random_bool(config.surgery_prob).then(|| {
            let lo = (times[0] - 2.0).max(config.t_min);
            let hi = (times[times.len() - 1] + 1.0).min(config.t_max);
            lo + rng.random::<f64>() * (hi - lo)
        });
        let values = times
            .iter()
            .map(|&t| {
                let pos = (t - config.t_min) / fine.spacing();
                let lo = (pos.floor() as usize).min(fine.len() - 2);
                let frac = pos - lo as f64;
                let base = curve[lo] * (1.0 - frac) + curve[lo + 1] * frac;
                let effect = match treatment_time {
                    Some(s) if t >= s => config.mu,
                    _ => 0.0,
                };
                let e: f64 = StandardNormal.sample(&mut rng);
                config.mean_level + base + effect + config.noise_sd * e
            })
            .collect();
        patients.push(PatientRecord {
            id: format!("P{p:05}"),
            times,
            values,
            treatment_time,
        });
    }
    Ok(GdiLikeOutput {
        observations: ObservationSet { patients },
        config: config.clone(),
    })
}
