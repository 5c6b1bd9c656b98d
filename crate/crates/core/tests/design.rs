mod common;

use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;

use hawkesnet::oracles::naive_loss;
use hawkesnet::{build_design, compute_features, DesignConfig, EventData, SplineBasis};

const SUPPORT: f64 = 0.3;

fn config(order: usize, m0: usize, m1: usize) -> DesignConfig {
    DesignConfig::new(order, m0, m1, SUPPORT)
}

fn random_beta(dim: usize, seed: u64) -> DVector<f64> {
    DVector::from_fn(dim, |i, _| {
        ((((i as u64 + 1) * 2654435761) ^ seed) % 1000) as f64 / 250.0 - 2.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_matches_the_naive_oracle(
        events in common::event_data(),
        order in 1usize..=4,
        extra0 in 0usize..3,
        extra1 in 0usize..3,
        seed in any::<u64>(),
    ) {
        let design = build_design(&events, &config(order, order + extra0, order + extra1)).unwrap();
        let beta = random_beta(design.dim(), seed);
        for j in 0..events.p() {
            let fast = design.loss(j, &beta);
            let slow = naive_loss(&events, design.basis0(), design.basis1(), j, beta.as_slice(), 64);
            prop_assert!((fast - slow).abs() <= 1e-8 * (1.0 + slow.abs()), "node {j}: {fast} vs {slow}");
        }
    }

    #[test]
    fn gram_is_symmetric_and_psd(events in common::event_data(), order in 1usize..=4) {
        let design = build_design(&events, &config(order, order + 1, order + 1)).unwrap();
        let g = design.g();
        prop_assert_eq!(g, &g.transpose());
        let min = SymmetricEigen::new(g.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-12 * g.amax().max(1.0), "min eigenvalue {min}");
    }

    #[test]
    fn relabelling_nodes_permutes_the_design(events in common::event_data(), rot in 0usize..3) {
        let p = events.p();
        let perm: Vec<usize> = (0..p).map(|j| (j + rot) % p).collect();
        let cfg = config(3, 4, 4);
        let direct = build_design(&events.permuted(&perm), &cfg).unwrap();
        let moved = build_design(&events, &cfg).unwrap().permuted(&perm);
        prop_assert!((direct.g() - moved.g()).amax() <= 1e-12 * (1.0 + direct.g().amax()));
        for j in 0..p {
            prop_assert!((direct.alpha(j) - moved.alpha(j)).amax() <= 1e-12 * (1.0 + direct.alpha(j).amax()));
            prop_assert_eq!(direct.event_count(j), moved.event_count(j));
        }
    }

    #[test]
    fn features_match_brute_force(events in common::event_data(), u in 0.0f64..=1.0, order in 1usize..=4) {
        let basis1 = SplineBasis::new(order, order + 2, (0.0, SUPPORT)).unwrap();
        let t = u * events.horizon();
        let fast = compute_features(&events, &basis1, t);
        let m1 = basis1.dim();
        let mut slow = vec![0.0; events.p() * m1];
        for k in 0..events.p() {
            for &s in events.times(k) {
                if s < t && t - s <= SUPPORT {
                    for (i, v) in basis1.eval(t - s).into_iter().enumerate() {
                        slow[k * m1 + i] += v;
                    }
                }
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_integration_converges_to_exact(events in common::event_data()) {
        let exact = build_design(&events, &config(4, 5, 4)).unwrap();
        let grid = build_design(&events, &config(4, 5, 4).with_grid_dt(Some(1e-2))).unwrap();
        prop_assert!((exact.g() - grid.g()).amax() <= 1e-10 * (1.0 + exact.g().amax()));
    }
}

#[test]
fn zero_beta_has_zero_loss() {
    let events = EventData::new(1.0, vec![vec![0.2, 0.5], vec![0.4]]).unwrap();
    let design = build_design(&events, &config(4, 4, 4)).unwrap();
    let beta = DVector::zeros(design.dim());
    assert_eq!(design.loss(0, &beta), 0.0);
    assert_eq!(
        naive_loss(
            &events,
            design.basis0(),
            design.basis1(),
            0,
            beta.as_slice(),
            64
        ),
        0.0
    );
}

#[test]
fn single_event_step_case_by_hand() {
    // One node, one event at 0.5, T = 1, constant background (m0 = 1) and a
    // single step of height 1 on [0, b]. With β = (a, c):
    // ψ(t) = a + c·1{0.5 < t ≤ 0.5 + b}, ψ at the event is a, so
    // loss = a² + 2acb + c²b − 2a.
    let events = EventData::new(1.0, vec![vec![0.5]]).unwrap();
    let design = build_design(&events, &DesignConfig::new(1, 1, 1, SUPPORT)).unwrap();
    let (a, c) = (0.7, -1.3);
    let beta = DVector::from_vec(vec![a, c]);
    let by_hand = a * a + 2.0 * a * c * SUPPORT + c * c * SUPPORT - 2.0 * a;
    assert!((design.loss(0, &beta) - by_hand).abs() < 1e-14);
    let naive = naive_loss(&events, design.basis0(), design.basis1(), 0, &[a, c], 64);
    assert!((naive - by_hand).abs() < 1e-14);
}
