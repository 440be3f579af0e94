mod common;

use common::{grid_search_mu, normal_matrix, prox_oracle, random_instance};
use csimpute::rng::make_rng;
use csimpute::solver::Problem;
use csimpute::soft_threshold;

#[test]
fn soft_threshold_matches_factored_prox_oracle() {
    let mut rng = make_rng(21);
    for case in 0..50 {
        let x = normal_matrix(&mut rng, 5, 3) * 1.5;
        let got = soft_threshold(&x, 0.7).unwrap();
        let want = prox_oracle(&x, 0.7, case);
        assert!((&got - &want).norm() < 1e-5, "case {case}: {}", (&got - &want).norm());
    }
}

#[test]
fn mu_update_matches_grid_search() {
    for seed in 0..100 {
        let inst = random_instance(seed, 7, 9, 3);
        let mut rng = make_rng(1000 + seed);
        let w = normal_matrix(&mut rng, 7, 3);
        let got = Problem::new(&inst.y, &inst.treatments, &inst.basis)
            .unwrap()
            .update_mu(&w)
            .unwrap();
        let want = grid_search_mu(&inst, &w);
        assert!((got.mu - want).abs() < 1e-4, "seed {seed}: {} vs {want}", got.mu);
    }
}
