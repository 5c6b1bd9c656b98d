use proptest::prelude::*;

use hawkesnet::{
    chi_square_upper_tail, preset, simulate, test_all, test_background, Preset, TestConfig,
};

const SUPPORT: f64 = 0.01;

#[test]
fn chi_square_critical_values() {
    let cases = [
        (3.8415, 1, 0.05),
        (11.0705, 5, 0.05),
        (5.9915, 2, 0.05),
        (15.0863, 5, 0.01),
        (2.7055, 1, 0.10),
    ];
    for (x, dof, p) in cases {
        let got = chi_square_upper_tail(x, dof);
        assert!(
            (got - p).abs() < 1e-4,
            "Q({x}; {dof}) = {got}, expected {p}"
        );
    }
    assert_eq!(chi_square_upper_tail(0.0, 3), 1.0);
}

proptest! {
    #[test]
    fn chi_square_tail_is_a_decreasing_probability(x in 0.0f64..100.0, dx in 0.01f64..10.0, dof in 1usize..30) {
        let a = chi_square_upper_tail(x, dof);
        let b = chi_square_upper_tail(x + dx, dof);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }
}

#[test]
fn statistic_is_nonnegative_and_dof_matches() {
    let model = preset(&Preset::Setting3_1, 21, 20.0, 2).unwrap();
    let events = simulate(&model, 2).unwrap();
    let cfg = TestConfig::new(4, SUPPORT);
    let tests = test_all(&events, 4, 4, &cfg).unwrap();
    let (m0_test, _) = cfg.test_dims(4, 4, 20.0);
    for t in tests.iter().flatten() {
        assert!(
            t.s >= 0.0 && t.statistic >= 0.0,
            "node {}: S = {}",
            t.node,
            t.s
        );
        assert_eq!(t.dof, m0_test - 1);
        assert!(t.lambda_bar > 0.0);
        assert_eq!(t.reject, t.p_value < cfg.alpha_level);
    }
}

#[test]
fn single_node_test_agrees_with_the_shared_design() {
    let model = preset(&Preset::Setting3_2 { rho: 1.0 }, 21, 20.0, 5).unwrap();
    let events = simulate(&model, 5).unwrap();
    let cfg = TestConfig::new(4, SUPPORT);
    let all = test_all(&events, 4, 4, &cfg).unwrap();
    let one = test_background(&events, 0, 4, 4, &cfg).unwrap();
    let shared = all[0].as_ref().unwrap();
    assert!((one.statistic - shared.statistic).abs() <= 1e-9 * shared.statistic.abs().max(1.0));
    assert!(
        one.reject,
        "a strongly oscillating background should be rejected"
    );
}

#[test]
fn relabelling_nodes_relabels_the_tests() {
    let model = preset(&Preset::Setting3_1, 21, 20.0, 8).unwrap();
    let events = simulate(&model, 8).unwrap();
    let perm: Vec<usize> = (0..21).map(|j| (j + 5) % 21).collect();
    let cfg = TestConfig::new(4, SUPPORT);
    let direct = test_all(&events, 4, 4, &cfg).unwrap();
    let moved = test_all(&events.permuted(&perm), 4, 4, &cfg).unwrap();
    for j in 0..21 {
        let (a, b) = (
            direct[j].as_ref().unwrap(),
            moved[perm[j]].as_ref().unwrap(),
        );
        assert!(
            (a.statistic - b.statistic).abs() <= 1e-8 * a.statistic.max(1.0),
            "node {j}"
        );
        let mut support: Vec<usize> = a.support.iter().map(|&k| perm[k]).collect();
        support.sort_unstable();
        assert_eq!(support, b.support);
    }
}
