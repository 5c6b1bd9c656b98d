use approx::assert_relative_eq;
use proptest::prelude::*;

use hawkesnet::oracles::dense_quadrature;
use hawkesnet::SplineBasis;

fn basis() -> impl Strategy<Value = SplineBasis> {
    (1usize..=4, 0usize..6, -2.0f64..2.0, 0.1f64..5.0).prop_map(|(order, extra, lo, len)| {
        SplineBasis::new(order, order + extra, (lo, lo + len)).expect("valid basis")
    })
}

/// Trapezoid rule applied within each knot span, just inside its ends, so
/// jumps at knots do not enter.
fn spanwise(b: &SplineBasis, f: impl Fn(f64) -> f64) -> f64 {
    b.spans()
        .map(|(lo, hi)| {
            let eps = 1e-12 * (hi - lo);
            dense_quadrature(&f, (lo + eps, hi - eps), 4001)
        })
        .sum()
}

proptest! {
    #[test]
    fn partition_of_unity(b in basis(), u in 0.0f64..=1.0) {
        let (lo, hi) = b.interval();
        let t = lo + u * (hi - lo);
        let sum: f64 = b.eval(t).iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum} at {t}");
        prop_assert!(b.eval(t).iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn at_most_order_functions_are_nonzero(b in basis(), u in 0.0f64..=1.0) {
        let (lo, hi) = b.interval();
        let t = lo + u * (hi - lo);
        let nonzero = b.eval(t).iter().filter(|&&v| v != 0.0).count();
        prop_assert!(nonzero <= b.order());
    }

    #[test]
    fn functions_vanish_outside_their_support(b in basis(), u in 0.0f64..=1.0) {
        let (lo, hi) = b.interval();
        let t = lo + u * (hi - lo);
        for (i, v) in b.eval(t).into_iter().enumerate() {
            let (s, e) = b.support_of(i);
            if t < s || t > e {
                prop_assert_eq!(v, 0.0, "function {} at {}", i, t);
            }
        }
    }

    #[test]
    fn integrals_match_the_trapezoid(b in basis()) {
        let exact = b.integrals();
        for (i, &value) in exact.iter().enumerate() {
            let numeric = spanwise(&b, |t| b.eval(t)[i]);
            prop_assert!((value - numeric).abs() <= 1e-6 * (1.0 + value.abs()), "function {i}: {value} vs {numeric}");
        }
    }

    #[test]
    fn gram_matches_the_trapezoid(b in basis()) {
        let g = b.gram_matrix(None);
        let m = b.dim();
        for r in 0..m {
            for c in r..m {
                let numeric = spanwise(&b, |t| { let v = b.eval(t); v[r] * v[c] });
                prop_assert!((g[(r, c)] - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()));
                prop_assert_eq!(g[(r, c)], g[(c, r)]);
            }
        }
    }

    #[test]
    fn constant_first_spans_the_same_space(order in 1usize..=4, extra in 1usize..5) {
        let dim = order + extra;
        let plain = SplineBasis::new(order, dim, (0.0, 3.0)).unwrap();
        let with_const = SplineBasis::with_constant_first(order, dim, (0.0, 3.0)).unwrap();
        // Both bases span the same spline space iff each plain function is
        // reproduced by least squares on the other at many points.
        let ts: Vec<f64> = (0..400).map(|i| 3.0 * (i as f64 + 0.5) / 400.0).collect();
        let a = nalgebra::DMatrix::from_fn(ts.len(), dim, |r, c| with_const.eval(ts[r])[c]);
        let svd = a.clone().svd(true, true);
        for i in 0..dim {
            let y = nalgebra::DVector::from_fn(ts.len(), |r, _| plain.eval(ts[r])[i]);
            let coef = svd.solve(&y, 1e-12).unwrap();
            let resid = (&a * coef - &y).amax();
            prop_assert!(resid < 1e-10, "function {i} residual {resid}");
        }
        prop_assert!(with_const.eval(1.234).iter().take(1).all(|&v| v == 1.0));
    }
}

#[test]
fn cubic_on_unit_interval_by_hand() {
    // Single span: the Bernstein cubic basis.
    let b = SplineBasis::new(4, 4, (0.0, 1.0)).unwrap();
    let t: f64 = 0.3;
    let expected = [
        (1.0 - t).powi(3),
        3.0 * t * (1.0 - t).powi(2),
        3.0 * t * t * (1.0 - t),
        t.powi(3),
    ];
    for (v, e) in b.eval(t).iter().zip(expected) {
        assert_relative_eq!(*v, e, epsilon = 1e-15);
    }
    assert_eq!(b.integrals(), vec![0.25; 4]);
}
