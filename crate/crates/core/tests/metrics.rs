use std::collections::BTreeSet;

use proptest::prelude::*;

use hawkesnet::metrics::{mse_background, mse_transfer};
use hawkesnet::{evaluate, preset, selection_scores, FittedModel, NodeFit, Preset, SplineBasis};

fn fitted(p: usize, betas: Vec<Vec<f64>>, active: Vec<Vec<usize>>) -> FittedModel {
    FittedModel {
        basis0: SplineBasis::new(4, 5, (0.0, 10.0)).unwrap(),
        basis1: SplineBasis::new(4, 4, (0.0, 0.01)).unwrap(),
        p,
        fits: betas
            .into_iter()
            .zip(active)
            .enumerate()
            .map(|(node, (beta, active_set))| NodeFit {
                node,
                beta,
                eta: 0.0,
                active_set,
                loss: 0.0,
                objective: 0.0,
                iterations: 0,
                converged: true,
                trace: Vec::new(),
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constant_offset_background_scores_its_size(c in -10.0f64..10.0) {
        // Setting 3.1 backgrounds are constants; a fit equal to truth + c
        // everywhere has background error exactly |c|.
        let truth = preset(&Preset::Setting3_1, 21, 10.0, 1).unwrap();
        let dim = 5 + 21 * 4;
        let betas = (0..21)
            .map(|j| {
                let mut b = vec![0.0; dim];
                b[..5].fill(truth.background(j).value(0.0) + c);
                b
            })
            .collect();
        let fit = fitted(21, betas, vec![Vec::new(); 21]);
        let mse = mse_background(&truth, &fit, 2000);
        prop_assert!((mse - c.abs()).abs() < 1e-9, "{mse} vs {}", c.abs());
    }

    #[test]
    fn scores_are_consistent_counts(
        truth in proptest::collection::btree_set((0usize..6, 0usize..6), 0..12),
        found in proptest::collection::btree_set((0usize..6, 0usize..6), 0..12),
    ) {
        let truth: BTreeSet<_> = truth.into_iter().filter(|(a, b)| a != b).collect();
        let found: BTreeSet<_> = found.into_iter().filter(|(a, b)| a != b).collect();
        let c = selection_scores(&truth, &found, 6);
        prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, 30);
        prop_assert_eq!(c.tp, truth.intersection(&found).count());
        prop_assert!((0.0..=1.0).contains(&c.f1()));
        if truth == found {
            prop_assert_eq!(c.f1(), 1.0);
        }
    }
}

#[test]
fn zero_estimate_misses_every_edge() {
    let truth = preset(&Preset::Setting1_1, 21, 10.0, 1).unwrap();
    let dim = 5 + 21 * 4;
    let fit = fitted(21, vec![vec![0.0; dim]; 21], vec![Vec::new(); 21]);
    let r = evaluate(&truth, &fit);
    assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (0, 0, 10));
    assert_eq!(r.fnr, 1.0);
    assert_eq!(r.f1, 0.0);
    assert_eq!(r.fpr, 0.0);
    // Error of a zero transfer estimate is the L2 norm of the truth.
    let mse = mse_transfer(&truth, &fit, 2000);
    let norm: f64 = truth
        .edges()
        .map(|(_, _, f)| {
            let h = f.support / 20_000.0;
            (0..20_000)
                .map(|i| f.value((i as f64 + 0.5) * h).powi(2) * h)
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    assert!(
        (mse - norm / 21.0).abs() < 1e-3 * norm / 21.0,
        "{mse} vs {}",
        norm / 21.0
    );
}
