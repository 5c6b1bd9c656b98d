//! Slow reference implementations for the test suites. Nothing here is used
//! by the library itself.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::simulate::EventData;
use crate::spline::SplineBasis;

/// Trapezoid rule with `n` points (n ≥ 2) on `[a, b]`.
pub fn dense_quadrature(f: impl Fn(f64) -> f64, interval: (f64, f64), n: usize) -> f64 {
    assert!(n >= 2);
    let (a, b) = interval;
    let h = (b - a) / (n - 1) as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for i in 1..n - 1 {
        acc += f(a + i as f64 * h);
    }
    acc * h
}

/// `ψ_j(t)` for coefficients `beta` (layout `m₀ + p·m₁`), summing over every
/// event of every node with `u < t`.
pub fn naive_intensity(
    events: &EventData,
    basis0: &SplineBasis,
    basis1: &SplineBasis,
    beta: &[f64],
    t: f64,
) -> f64 {
    let m0 = basis0.dim();
    let m1 = basis1.dim();
    let phi0 = basis0.eval(t);
    let mut psi: f64 = phi0.iter().zip(&beta[..m0]).map(|(a, b)| a * b).sum();
    for k in 0..events.p() {
        let coef = &beta[m0 + k * m1..m0 + (k + 1) * m1];
        for &u in events.times(k) {
            if u < t {
                let phi1 = basis1.eval(t - u);
                psi += phi1.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    psi
}

/// `(1/T) {∫₀ᵀ ψ_j(t)² dt − 2 Σ_{t ∈ N_j} ψ_j(t)}`. The integral splits
/// `[0, T]` at every knot of `basis0` and every `u + κ` for an event `u` and
/// a knot `κ` of `basis1`, so `ψ_j` is a polynomial on each piece, then
/// applies the 3-point Gauss rule on `panels` equal panels of every piece.
pub fn naive_loss(
    events: &EventData,
    basis0: &SplineBasis,
    basis1: &SplineBasis,
    j: usize,
    beta: &[f64],
    panels: usize,
) -> f64 {
    assert!(panels >= 1);
    let horizon = events.horizon();
    let mut cuts = vec![0.0, horizon];
    cuts.extend(basis0.knots().iter().copied());
    for k in 0..events.p() {
        for &u in events.times(k) {
            cuts.extend(basis1.knots().iter().map(|&x| u + x));
        }
    }
    cuts.retain(|&c| (0.0..=horizon).contains(&c));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let r = (0.6f64).sqrt();
    let rule = [(-r, 5.0 / 9.0), (0.0, 8.0 / 9.0), (r, 5.0 / 9.0)];
    let mut sq = 0.0;
    for w in cuts.windows(2) {
        let h = (w[1] - w[0]) / panels as f64;
        for i in 0..panels {
            let mid = w[0] + (i as f64 + 0.5) * h;
            for (x, wt) in rule {
                let psi = naive_intensity(events, basis0, basis1, beta, mid + 0.5 * h * x);
                sq += 0.5 * h * wt * psi * psi;
            }
        }
    }
    let cross: f64 = events
        .times(j)
        .iter()
        .map(|&t| naive_intensity(events, basis0, basis1, beta, t))
        .sum();
    (sq - 2.0 * cross) / horizon
}

/// Objective `βᵀGβ − 2βᵀα + η Σ_{k ≥ 1} (β_kᵀ G_kk β_k)^{1/2}` with one
/// unpenalized leading group of size `m0` and penalized groups of size `m1`.
pub fn group_objective(
    alpha: &DVector<f64>,
    g: &DMatrix<f64>,
    m0: usize,
    m1: usize,
    eta: f64,
    beta: &DVector<f64>,
) -> f64 {
    let mut value = beta.dot(&(g * beta)) - 2.0 * beta.dot(alpha);
    let mut start = m0;
    while start < beta.len() {
        let b = beta.rows(start, m1);
        let gk = g.view((start, start), (m1, m1));
        value += eta * b.dot(&(gk * b)).max(0.0).sqrt();
        start += m1;
    }
    value
}

/// Subgradient descent on the objective of [`group_objective`].
///
/// Works in coordinates `γ_k = G_kk^{1/2} β_k` (symmetric square roots from
/// an eigendecomposition), where each penalty is `η‖γ_k‖` and the
/// minimum-norm subgradient has a closed form. Steps are `1/(μ(i+1))`
/// capped by `1/L`, where `μ`, `L` bound the Hessian spectrum. Returns the
/// best iterate seen.
pub fn subgradient_solver(
    alpha: &DVector<f64>,
    g: &DMatrix<f64>,
    m0: usize,
    m1: usize,
    eta: f64,
    iters: usize,
) -> DVector<f64> {
    let dim = alpha.len();
    // Block-diagonal change of variables β = S γ.
    let mut s = DMatrix::identity(dim, dim);
    let mut start = m0;
    while start < dim {
        let block = g.view((start, start), (m1, m1)).into_owned();
        let eig = SymmetricEigen::new(block);
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt()));
        let root_inv = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        s.view_mut((start, start), (m1, m1)).copy_from(&root_inv);
        start += m1;
    }
    let h = s.transpose() * g * &s;
    let a = s.transpose() * alpha;
    let spectrum = SymmetricEigen::new(&h * 2.0).eigenvalues;
    let mu = spectrum.min().max(1e-12);
    let lip = spectrum.max();

    let objective = |gamma: &DVector<f64>| {
        let mut v = gamma.dot(&(&h * gamma)) - 2.0 * gamma.dot(&a);
        let mut st = m0;
        while st < dim {
            v += eta * gamma.rows(st, m1).norm();
            st += m1;
        }
        v
    };
    let snapped = |gamma: &DVector<f64>, radius: f64| {
        let mut out = gamma.clone();
        let mut st = m0;
        while st < dim {
            if out.rows(st, m1).norm() <= radius {
                out.rows_mut(st, m1).fill(0.0);
            }
            st += m1;
        }
        out
    };

    let mut gamma = DVector::zeros(dim);
    let mut best = gamma.clone();
    let mut best_value = objective(&gamma);
    for i in 0..iters {
        let mut sub = &h * &gamma * 2.0 - &a * 2.0;
        let mut st = m0;
        while st < dim {
            let n = gamma.rows(st, m1).norm();
            if n > 0.0 {
                let dir = gamma.rows(st, m1) / n;
                let mut blk = sub.rows_mut(st, m1);
                blk += dir * eta;
            } else {
                let gn = sub.rows(st, m1).norm();
                let mut blk = sub.rows_mut(st, m1);
                if gn <= eta {
                    blk.fill(0.0);
                } else {
                    blk *= 1.0 - eta / gn;
                }
            }
            st += m1;
        }
        let step = (1.0 / (mu * (i as f64 + 1.0))).min(1.0 / lip);
        gamma -= &sub * step;
        for candidate in [gamma.clone(), snapped(&gamma, step * eta)] {
            let v = objective(&candidate);
            if v < best_value {
                best_value = v;
                best = candidate;
            }
        }
    }
    s * best
}
