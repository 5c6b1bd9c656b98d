use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hawkesnet::oracles::{group_objective, subgradient_solver};
use hawkesnet::{
    build_design, preset, select_eta, simulate, DesignCache, DesignConfig, FitOptions, GroupSolver,
    Preset, SelectOptions, SplineBasis,
};

fn random_design(seed: u64, p: usize, m0: usize, m1: usize) -> DesignCache {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = m0 + p * m1;
    let rows = 3 * dim;
    let a = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0..1.0));
    let g = a.transpose() * &a / rows as f64 + DMatrix::identity(dim, dim) * 0.02;
    let alpha = (0..p)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    DesignCache::from_parts(
        SplineBasis::new(1, m0, (0.0, 1.0)).unwrap(),
        SplineBasis::new(1, m1, (0.0, 0.1)).unwrap(),
        1.0,
        g,
        alpha,
        vec![5; p],
        DVector::zeros(dim),
    )
}

fn tight() -> FitOptions {
    FitOptions {
        tol: 1e-13,
        max_iter: 100_000,
        ..FitOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eta_max_is_the_smallest_empty_penalty(seed in any::<u64>(), p in 1usize..4, m0 in 1usize..4, m1 in 1usize..4) {
        let design = random_design(seed, p, m0, m1);
        let solver = GroupSolver::new(&design);
        let eta_max = solver.eta_max(0);
        prop_assert!(solver.fit_node(0, eta_max * 1.0001, &tight()).unwrap().active_set.is_empty());
        prop_assert!(!solver.fit_node(0, eta_max * 0.99, &tight()).unwrap().active_set.is_empty());
    }

    #[test]
    fn kkt_holds_and_matches_the_subgradient_oracle(seed in any::<u64>(), p in 1usize..3, m in 1usize..4, frac in 0.05f64..0.9) {
        let design = random_design(seed, p, m, m);
        let solver = GroupSolver::new(&design);
        let eta = frac * solver.eta_max(0);
        let fit = solver.fit_node(0, eta, &tight()).unwrap();
        prop_assert!(solver.kkt(&fit).max() <= 1e-6, "kkt {:?}", solver.kkt(&fit));
        let beta = fit.beta_vector();
        let ours = group_objective(design.alpha(0), design.g(), m, m, eta, &beta);
        let oracle_beta = subgradient_solver(design.alpha(0), design.g(), m, m, eta, 200_000);
        let oracle = group_objective(design.alpha(0), design.g(), m, m, eta, &oracle_beta);
        prop_assert!(ours <= oracle + 1e-5, "bcd {ours} vs oracle {oracle}");
    }

    #[test]
    fn warm_path_matches_cold_fits(seed in any::<u64>(), p in 1usize..4) {
        let design = random_design(seed, p, 2, 3);
        let solver = GroupSolver::new(&design);
        let eta_max = solver.eta_max(0);
        let etas: Vec<f64> = (0..6).map(|i| eta_max * 0.5f64.powi(i)).collect();
        let path = solver.fit_path(0, &etas, &tight()).unwrap();
        for (fit, &eta) in path.iter().zip(&etas) {
            let cold = solver.fit_node(0, eta, &tight()).unwrap();
            let a = solver.objective(0, &fit.beta_vector(), eta);
            let b = solver.objective(0, &cold.beta_vector(), eta);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn refit_on_a_larger_support_never_loses(seed in any::<u64>()) {
        let design = random_design(seed, 3, 2, 2);
        let solver = GroupSolver::new(&design);
        let beta_of = |support: &[usize]| solver.refit(0, support).unwrap().beta_vector();
        let small = design.loss(0, &beta_of(&[1]));
        let large = design.loss(0, &beta_of(&[0, 1]));
        let full = design.loss(0, &beta_of(&[0, 1, 2]));
        let none = design.loss(0, &beta_of(&[]));
        prop_assert!(none >= small - 1e-12 && small >= large - 1e-12 && large >= full - 1e-12);
    }
}

#[test]
fn gic_selection_on_simulated_data_finds_true_sources() {
    let model = preset(&Preset::Setting1_1, 21, 10.0, 3).unwrap();
    let events = simulate(&model, 3).unwrap();
    let design = build_design(&events, &DesignConfig::new(4, 4, 4, 0.01)).unwrap();
    let solver = GroupSolver::new(&design);
    let selection = select_eta(&solver, 0, &SelectOptions::default()).unwrap();
    let found: Vec<usize> = selection.fit.active_set.clone();
    let hits = (1..=10).filter(|k| found.contains(k)).count();
    assert!(hits >= 8, "found {found:?}");
    assert!(selection.path.windows(2).all(|w| w[0].eta > w[1].eta));
    assert!(found.len() <= selection.s0);
}
