//! Accuracy of recovered curves and edges.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::estimator::FittedModel;
use crate::model::ModelSpec;
use crate::spline::gauss_legendre;

/// Composite Gauss–Legendre rule: `panels` equal panels, 5 nodes each.
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(5);
    let h = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for i in 0..panels {
        let mid = lo + (i as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            acc += wi * f(mid + 0.5 * h * xi);
        }
    }
    acc * 0.5 * h
}

/// `(1/p) Σ_j {(1/T) ∫₀ᵀ (ν̂_j − ν_j)² dt}^{1/2}`.
pub fn mse_background(truth: &ModelSpec, fit: &FittedModel, panels: usize) -> f64 {
    let horizon = truth.horizon();
    let p = truth.p();
    (0..p)
        .map(|j| {
            let nu = truth.background(j);
            let sq = integrate(
                |t| {
                    let d = fit.background(j, t) - nu.value(t);
                    d * d
                },
                0.0,
                horizon,
                panels,
            );
            (sq / horizon).sqrt()
        })
        .sum::<f64>()
        / p as f64
}

/// `(1/p) Σ_j {Σ_k ∫₀ᵇ (ω̂_{j,k} − ω_{j,k})² dt}^{1/2}`.
pub fn mse_transfer(truth: &ModelSpec, fit: &FittedModel, panels: usize) -> f64 {
    let p = truth.p();
    let b = truth.support().max(fit.basis1.interval().1);
    (0..p)
        .map(|j| {
            let mut sources: BTreeSet<usize> = fit.fits[j].active_set.iter().copied().collect();
            sources.extend(truth.edges().filter(|e| e.0 == j).map(|e| e.1));
            let total: f64 = sources
                .into_iter()
                .map(|k| {
                    let omega = truth.transfer(j, k);
                    integrate(
                        |x| {
                            let t = omega.map_or(0.0, |f| f.value(x));
                            let d = fit.transfer(j, k, x) - t;
                            d * d
                        },
                        0.0,
                        b,
                        panels,
                    )
                })
                .sum();
            total.sqrt()
        })
        .sum::<f64>()
        / p as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `FN / (TP + FN)`, 0 when there are no true edges.
    pub fn fnr(&self) -> f64 {
        ratio(self.fn_, self.tp + self.fn_)
    }

    /// `FP / (FP + TN)`, 0 when there are no absent edges.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `2TP / (2TP + FP + FN)`, 1 when both sets are empty.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Confusion counts over the `p(p−1)` ordered pairs, plus the `p` self
/// pairs when either set contains one.
pub fn selection_scores(
    truth: &BTreeSet<(usize, usize)>,
    estimate: &BTreeSet<(usize, usize)>,
    p: usize,
) -> Confusion {
    let has_self = truth.iter().chain(estimate).any(|&(j, k)| j == k);
    let universe = p * (p - 1) + if has_self { p } else { 0 };
    let tp = truth.intersection(estimate).count();
    let fp = estimate.len() - tp;
    let fn_ = truth.len() - tp;
    Confusion {
        tp,
        fp,
        fn_,
        tn: universe - tp - fp - fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse_nu: f64,
    pub mse_omega: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Confusion,
}

pub fn evaluate(truth: &ModelSpec, fit: &FittedModel) -> EvalReport {
    let counts = selection_scores(&truth.edge_set(), &fit.edges(), truth.p());
    EvalReport {
        mse_nu: mse_background(truth, fit, 2000),
        mse_omega: mse_transfer(truth, fit, 200),
        fnr: counts.fnr(),
        fpr: counts.fpr(),
        f1: counts.f1(),
        counts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se }
    }
}

impl std::fmt::Display for MeanSe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ({:.3})", self.mean, self.se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reps: usize,
    pub mse_nu: MeanSe,
    pub mse_omega: MeanSe,
    pub fnr: MeanSe,
    pub fpr: MeanSe,
    pub f1: MeanSe,
}

pub fn summarize(reports: &[EvalReport]) -> EvalSummary {
    let col = |f: fn(&EvalReport) -> f64| MeanSe::of(&reports.iter().map(f).collect::<Vec<_>>());
    EvalSummary {
        reps: reports.len(),
        mse_nu: col(|r| r.mse_nu),
        mse_omega: col(|r| r.mse_omega),
        fnr: col(|r| r.fnr),
        fpr: col(|r| r.fpr),
        f1: col(|r| r.f1),
    }
}

pub fn write_reports_csv<W: Write>(mut w: W, reports: &[(u64, EvalReport)]) -> std::io::Result<()> {
    writeln!(w, "seed,mse_nu,mse_omega,fnr,fpr,f1,tp,fp,fn,tn")?;
    for (seed, r) in reports {
        writeln!(
            w,
            "{seed},{:e},{:e},{:e},{:e},{:e},{},{},{},{}",
            r.mse_nu,
            r.mse_omega,
            r.fnr,
            r.fpr,
            r.f1,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_,
            r.counts.tn
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut w: W, label: &str, s: &EvalSummary) -> std::io::Result<()> {
    writeln!(
        w,
        "setting,reps,mse_nu,mse_nu_se,mse_omega,mse_omega_se,fnr,fnr_se,fpr,fpr_se,f1,f1_se"
    )?;
    writeln!(
        w,
        "{label},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        s.reps,
        s.mse_nu.mean,
        s.mse_nu.se,
        s.mse_omega.mean,
        s.mse_omega.se,
        s.fnr.mean,
        s.fnr.se,
        s.fpr.mean,
        s.fpr.se,
        s.f1.mean,
        s.f1.se
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn confusion_arithmetic() {
        let c = selection_scores(
            &set(&[(0, 1), (0, 2), (1, 2)]),
            &set(&[(0, 1), (0, 2), (2, 1)]),
            3,
        );
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 2));
        assert_abs_diff_eq!(c.f1(), 4.0 / 6.0, epsilon = 1e-15);

        let truth: BTreeSet<_> = (1..=10).map(|k| (0, k)).collect();
        let c = selection_scores(&truth, &BTreeSet::new(), 21);
        assert_eq!(c.fnr(), 1.0);
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.fpr(), 0.0);

        let c = selection_scores(&BTreeSet::new(), &BTreeSet::new(), 4);
        assert_eq!(c.f1(), 1.0);
        assert_eq!(c.tn, 12);
        let c = selection_scores(&BTreeSet::new(), &set(&[(1, 1)]), 4);
        assert_eq!(c.tn + c.fp, 16);
    }

    #[test]
    fn mean_and_standard_error() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_abs_diff_eq!(s.se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_eq!(MeanSe::of(&[7.0]).se, 0.0);
    }

    #[test]
    fn composite_rule_is_exact_for_polynomials() {
        assert_abs_diff_eq!(
            integrate(|x| x.powi(9), 0.0, 2.0, 3),
            102.4,
            epsilon = 1e-11
        );
    }
}
