//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use csimpute::basis::{make_grid, make_spline_basis, Basis};
use csimpute::masked::{Mask, MaskedMatrix, TreatmentMatrix};
use csimpute::rng::{make_rng, SimRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Instance {
    pub y: MaskedMatrix,
    pub treatments: TreatmentMatrix,
    pub basis: Basis,
    pub lambda: f64,
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix(rng: &mut SimRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Random small problem: low-rank signal plus a treatment step plus noise,
/// observed on a Bernoulli mask with at least one treated observed cell.
pub fn random_instance(seed: u64, n: usize, t: usize, k: usize) -> Instance {
    let mut rng = make_rng(seed);
    let basis = make_spline_basis(&make_grid(0.0, 1.0, t).unwrap(), k).unwrap();
    let rank = 1 + rng.random_range(0..k.min(3));
    let w = normal_matrix(&mut rng, n, rank) * normal_matrix(&mut rng, rank, k);
    let mut onset: Vec<Option<usize>> = (0..n)
        .map(|_| if rng.random_bool(0.7) { Some(rng.random_range(0..t)) } else { None })
        .collect();
    if onset.iter().all(Option::is_none) {
        onset[0] = Some(rng.random_range(0..t));
    }
    let treatments = TreatmentMatrix::new(onset, t).unwrap();
    let mu = rng.random_range(-3.0..3.0);
    let noise = DMatrix::from_fn(n, t, |_, _| 0.3 * normal(&mut rng));
    let values = &w * basis.matrix().transpose() + treatments.dense() * mu + noise;
    let density = rng.random_range(0.3..0.9);
    let mut mask = Mask::from_fn(n, t, |_, _| rng.random_bool(density));
    // Guarantee an observed post-treatment cell so mu is identified.
    let (i, o) = treatments.onsets().iter().enumerate().find_map(|(i, o)| o.map(|o| (i, o))).unwrap();
    mask.set(i, o, true);
    let lambda = rng.random_range(0.05..2.0);
    Instance {
        y: MaskedMatrix::new(values, mask).unwrap(),
        treatments,
        basis,
        lambda,
    }
}

/// `1/2 sum_{Omega} (Y - W B' - mu I_S)^2`, summed entry by entry.
pub fn data_term(inst: &Instance, w: &DMatrix<f64>, mu: f64) -> f64 {
    let b = inst.basis.matrix();
    let mut total = 0.0;
    for (i, j, y) in inst.y.observed() {
        let mut fitted = 0.0;
        for m in 0..b.ncols() {
            fitted += w[(i, m)] * b[(j, m)];
        }
        if inst.treatments.is_treated(i, j) {
            fitted += mu;
        }
        total += 0.5 * (y - fitted) * (y - fitted);
    }
    total
}

/// Minimizer of `mu -> data_term(W, mu)` by successively refined grid search.
pub fn grid_search_mu(inst: &Instance, w: &DMatrix<f64>) -> f64 {
    let (mut lo, mut hi) = (-50.0, 50.0);
    let mut best = 0.0;
    for _ in 0..8 {
        let steps = 200;
        let h = (hi - lo) / steps as f64;
        let mut best_val = f64::INFINITY;
        for s in 0..=steps {
            let mu = lo + h * s as f64;
            let v = data_term(inst, w, mu);
            if v < best_val {
                best_val = v;
                best = mu;
            }
        }
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
    best
}

fn ridge_solve(gram: DMatrix<f64>, rhs: DMatrix<f64>) -> DMatrix<f64> {
    gram.cholesky().expect("ridge system is positive definite").solve(&rhs)
}

/// Prox of the nuclear norm through its factored form
/// `min_{L,R} 1/2 ||X - L R'||^2 + lambda/2 (||L||^2 + ||R||^2)`, solved by
/// alternating exact ridge updates. No singular value decomposition is used.
pub fn prox_oracle(x: &DMatrix<f64>, lambda: f64, seed: u64) -> DMatrix<f64> {
    let (m, n) = x.shape();
    let r = m.min(n);
    let mut rng = make_rng(seed);
    let mut l = normal_matrix(&mut rng, m, r);
    let mut rm = normal_matrix(&mut rng, n, r);
    let eye = DMatrix::<f64>::identity(r, r) * lambda;
    let mut prev = &l * rm.transpose();
    for _ in 0..200_000 {
        l = ridge_solve(rm.transpose() * &rm + &eye, rm.transpose() * x.transpose()).transpose();
        rm = ridge_solve(l.transpose() * &l + &eye, l.transpose() * x).transpose();
        let z = &l * rm.transpose();
        let change = (&z - &prev).norm();
        prev = z;
        if change < 1e-15 {
            break;
        }
    }
    prev
}

/// Minimum of `f(W, mu)` estimated by block-coordinate descent on the
/// factored objective `data_term(L R', mu) + lambda/2 (||L||^2 + ||R||^2)`
/// with `L` (`N x K`) and `R` (`K x K`): per-row ridge updates of `L`, a
/// joint ridge update of `R` and the closed-form `mu`. Returns the objective,
/// which upper-bounds `f(L R', mu)`.
pub fn objective_oracle(inst: &Instance, seed: u64, sweeps: usize) -> (f64, DMatrix<f64>, f64) {
    let n = inst.y.nrows();
    let b = inst.basis.matrix();
    let k = b.ncols();
    let r = k;
    let lambda = inst.lambda;
    let mut rng = make_rng(seed);
    let mut l = normal_matrix(&mut rng, n, r) * 0.1;
    let mut rm = normal_matrix(&mut rng, k, r) * 0.1;
    let mut mu = 0.0;
    let cells: Vec<(usize, usize, f64, bool)> = inst
        .y
        .observed()
        .map(|(i, j, y)| (i, j, y, inst.treatments.is_treated(i, j)))
        .collect();
    let objective = |l: &DMatrix<f64>, rm: &DMatrix<f64>, mu: f64| {
        let w = l * rm.transpose();
        data_term(inst, &w, mu) + 0.5 * lambda * (l.norm_squared() + rm.norm_squared())
    };
    let mut last = objective(&l, &rm, mu);
    for _ in 0..sweeps {
        // L rows.
        let c = b * &rm;
        for i in 0..n {
            let mut gram = DMatrix::<f64>::identity(r, r) * lambda;
            let mut rhs = DMatrix::<f64>::zeros(r, 1);
            for &(ci, j, y, treated) in &cells {
                if ci != i {
                    continue;
                }
                let z = y - if treated { mu } else { 0.0 };
                let row = c.row(j);
                gram += row.transpose() * row;
                rhs += row.transpose() * z;
            }
            let sol = ridge_solve(gram, rhs);
            for a in 0..r {
                l[(i, a)] = sol[(a, 0)];
            }
        }
        // R jointly: fitted_ij = sum_{m,a} L_ia B_jm R_ma.
        let p = k * r;
        let mut gram = DMatrix::<f64>::identity(p, p) * lambda;
        let mut rhs = DMatrix::<f64>::zeros(p, 1);
        for &(i, j, y, treated) in &cells {
            let z = y - if treated { mu } else { 0.0 };
            let phi = DVector::from_fn(p, |q, _| l[(i, q % r)] * b[(j, q / r)]);
            gram += &phi * phi.transpose();
            rhs += &phi * z;
        }
        let sol = ridge_solve(gram, rhs);
        for q in 0..p {
            rm[(q / r, q % r)] = sol[(q, 0)];
        }
        // mu.
        let w = &l * rm.transpose();
        let (mut s, mut cnt) = (0.0, 0usize);
        for &(i, j, y, treated) in &cells {
            if treated {
                let fitted: f64 = (0..k).map(|m| w[(i, m)] * b[(j, m)]).sum();
                s += y - fitted;
                cnt += 1;
            }
        }
        if cnt > 0 {
            mu = s / cnt as f64;
        }
        let now = objective(&l, &rm, mu);
        if (last - now).abs() < 1e-14 * last.max(1.0) {
            last = now;
            break;
        }
        last = now;
    }
    (last, &l * rm.transpose(), mu)
}
