#![allow(dead_code)]

use proptest::prelude::*;

use hawkesnet::{Background, Edge, EventData, ModelSpec, TransferFunction};

/// Small random event sets: 1..=3 nodes, up to 6 events each on `(0, T]`
/// with `T` in `[0.5, 2)`. Pair with a transfer support of a few tenths so
/// that events interact.
pub fn event_data() -> impl Strategy<Value = EventData> {
    (1usize..=3, 0.5f64..2.0).prop_flat_map(move |(p, horizon)| {
        let node = proptest::collection::vec(0.0f64..1.0, 0..6);
        proptest::collection::vec(node, p).prop_map(move |raw| {
            let times = raw
                .into_iter()
                .map(|mut seq| {
                    for t in &mut seq {
                        *t = (*t * horizon).max(1e-6);
                    }
                    seq.sort_by(f64::total_cmp);
                    seq.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
                    seq
                })
                .collect();
            EventData::new(horizon, times).expect("valid times")
        })
    })
}

/// Two nodes with a self-exciting source and a constant background.
pub fn two_node_model(horizon: f64, level: f64, transfer: TransferFunction) -> ModelSpec {
    ModelSpec::new(
        horizon,
        vec![Background::Constant { level }; 2],
        vec![Edge {
            target: 0,
            source: 1,
            transfer,
        }],
    )
    .expect("valid model")
}
