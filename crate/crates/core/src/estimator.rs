//! Penalized least squares per node:
//!
//! `minimize  βᵀGβ − 2βᵀα_j + η Σ_{k ≥ 1} (β_kᵀ G_kk β_k)^{1/2}`
//!
//! by block coordinate descent. With `G_kk = L Lᵀ` and `z = L⁻¹ r_k`, the
//! block minimizer is `β_k = (1 − η / (2‖z‖))₊ G_kk⁻¹ r_k`.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignCache;
use crate::spline::SplineBasis;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("node {0} is out of range")]
    NodeOutOfRange(usize),
    #[error("node {0} has no events")]
    NoEvents(usize),
    #[error("penalty level must be finite and nonnegative, got {0}")]
    InvalidEta(f64),
    #[error("penalty grid must be strictly decreasing")]
    GridNotDecreasing,
    #[error("non-finite values in the design for node {0}")]
    NonFinite(usize),
    #[error("restricted Gram matrix is singular once group {group} is added")]
    Singular { group: usize },
    #[error("starting point has length {got}, expected {expected}")]
    BadStart { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop once every block moves by less than `tol · ‖β‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// Sweeps between full recomputations of `Gβ`.
    pub refresh_every: usize,
    /// Record the objective after every sweep.
    pub trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 500,
            refresh_every: 25,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub node: usize,
    pub beta: Vec<f64>,
    pub eta: f64,
    /// Source nodes `k` with `β_{j,k} ≠ 0`.
    pub active_set: Vec<usize>,
    pub loss: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl NodeFit {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}

/// Largest violations of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖G₀₀β₀ − r₀‖`.
    pub background: f64,
    /// Max over active groups of the stationarity residual.
    pub active: f64,
    /// Max over inactive groups of `(‖L⁻¹ r_k‖ − η/2)₊`.
    pub inactive: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.background.max(self.active).max(self.inactive)
    }
}

#[derive(Debug, Clone)]
struct GroupFactor {
    chol: Cholesky<f64, Dyn>,
    l: DMatrix<f64>,
    jitter: f64,
}

impl GroupFactor {
    fn new(block: DMatrix<f64>) -> Option<Self> {
        let m = block.nrows();
        let trace = block.trace();
        if !(trace > 0.0) {
            return None;
        }
        if let Some(chol) = Cholesky::new(block.clone()) {
            return Some(Self::from_chol(chol, 0.0));
        }
        let mut jitter = 1e-10 * trace / m as f64;
        for _ in 0..8 {
            let mut b = block.clone();
            for i in 0..m {
                b[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(b) {
                return Some(Self::from_chol(chol, jitter));
            }
            jitter *= 100.0;
        }
        None
    }

    fn from_chol(chol: Cholesky<f64, Dyn>, jitter: f64) -> Self {
        let l = chol.l();
        Self { chol, l, jitter }
    }

    /// `L⁻¹ r`.
    fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(r)
            .expect("nonsingular factor")
    }

    /// `G⁻¹ r`.
    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    /// `‖Lᵀβ‖ = (βᵀ(G + jitter)β)^{1/2}`.
    fn norm(&self, beta: &DVector<f64>) -> f64 {
        self.l.tr_mul(beta).norm()
    }
}

/// Factorized diagonal blocks of a design, shared by every node and penalty
/// level. Groups whose block is identically zero (nodes without events) are
/// frozen at zero.
#[derive(Debug, Clone)]
pub struct GroupSolver<'a> {
    design: &'a DesignCache,
    factors: Vec<Option<GroupFactor>>,
}

impl<'a> GroupSolver<'a> {
    pub fn new(design: &'a DesignCache) -> Self {
        let factors: Vec<Option<GroupFactor>> = (0..design.n_groups())
            .map(|k| GroupFactor::new(design.block(k, k).into_owned()))
            .collect();
        for (k, f) in factors.iter().enumerate() {
            match f {
                None if k == 0 => log::warn!("background Gram block is not positive definite"),
                None => log::debug!("group {k} frozen at zero (no events in node {})", k - 1),
                Some(f) if f.jitter > 0.0 => {
                    log::debug!("group {k}: diagonal jitter {:.3e}", f.jitter)
                }
                _ => {}
            }
        }
        Self { design, factors }
    }

    pub fn design(&self) -> &DesignCache {
        self.design
    }

    pub fn is_frozen(&self, k: usize) -> bool {
        self.factors[k].is_none()
    }

    fn check_node(&self, j: usize) -> Result<(), FitError> {
        if j >= self.design.p() {
            return Err(FitError::NodeOutOfRange(j));
        }
        if self.design.alpha(j).iter().any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite(j));
        }
        Ok(())
    }

    /// `r_k = α_k − (Gβ)_k + G_kk β_k`.
    fn partial_residual(
        &self,
        j: usize,
        k: usize,
        gb: &DVector<f64>,
        beta: &DVector<f64>,
    ) -> DVector<f64> {
        let range = self.design.group_range(k);
        let bk = beta.rows(range.start, range.len());
        let mut r = self.design.alpha_group(j, k).into_owned();
        r -= gb.rows(range.start, range.len());
        r += self.design.block(k, k) * bk;
        r
    }

    pub fn penalty(&self, beta: &DVector<f64>) -> f64 {
        (1..self.design.n_groups())
            .filter_map(|k| {
                let f = self.factors[k].as_ref()?;
                let range = self.design.group_range(k);
                Some(f.norm(&beta.rows(range.start, range.len()).into_owned()))
            })
            .sum()
    }

    pub fn objective(&self, j: usize, beta: &DVector<f64>, eta: f64) -> f64 {
        self.design.loss(j, beta) + eta * self.penalty(beta)
    }

    /// Smallest penalty at which the fit has no active group, given that
    /// the background is fitted: `2 max_k ‖L_k⁻¹(α_k − G_k0 G₀₀⁻¹ α₀)‖`.
    pub fn eta_max(&self, j: usize) -> f64 {
        let dim = self.design.dim();
        let mut beta = DVector::zeros(dim);
        if let Some(f0) = &self.factors[0] {
            let b0 = f0.solve(&self.design.alpha_group(j, 0).into_owned());
            beta.rows_mut(0, b0.len()).copy_from(&b0);
        }
        let gb = self.design.g() * &beta;
        (1..self.design.n_groups())
            .filter_map(|k| {
                let f = self.factors[k].as_ref()?;
                let r = self.partial_residual(j, k, &gb, &beta);
                Some(2.0 * f.whiten(&r).norm())
            })
            .fold(0.0, f64::max)
    }

    pub fn fit_node(&self, j: usize, eta: f64, opts: &FitOptions) -> Result<NodeFit, FitError> {
        self.fit_node_from(j, eta, None, opts)
    }

    /// Runs block coordinate descent from `start` (zeros when `None`).
    pub fn fit_node_from(
        &self,
        j: usize,
        eta: f64,
        start: Option<&[f64]>,
        opts: &FitOptions,
    ) -> Result<NodeFit, FitError> {
        self.check_node(j)?;
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(FitError::InvalidEta(eta));
        }
        let d = self.design;
        let dim = d.dim();
        let mut beta = match start {
            Some(s) if s.len() != dim => {
                return Err(FitError::BadStart {
                    expected: dim,
                    got: s.len(),
                })
            }
            Some(s) => DVector::from_column_slice(s),
            None => DVector::zeros(dim),
        };
        for (k, f) in self.factors.iter().enumerate() {
            if f.is_none() {
                let range = d.group_range(k);
                beta.rows_mut(range.start, range.len()).fill(0.0);
            }
        }
        let mut gb = d.g() * &beta;
        let mut trace = Vec::new();
        if opts.trace {
            trace.push(self.objective(j, &beta, eta));
        }

        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let mut max_change: f64 = 0.0;
            for k in 0..d.n_groups() {
                let Some(f) = &self.factors[k] else { continue };
                let range = d.group_range(k);
                let r = self.partial_residual(j, k, &gb, &beta);
                let new = if k == 0 {
                    f.solve(&r)
                } else {
                    let z_norm = f.whiten(&r).norm();
                    if z_norm <= eta / 2.0 {
                        DVector::zeros(range.len())
                    } else {
                        f.solve(&r) * (1.0 - eta / (2.0 * z_norm))
                    }
                };
                let delta = &new - beta.rows(range.start, range.len());
                let change = delta.norm();
                if change > 0.0 {
                    gb.gemv(1.0, &d.g().columns(range.start, range.len()), &delta, 1.0);
                    beta.rows_mut(range.start, range.len()).copy_from(&new);
                }
                max_change = max_change.max(change);
            }
            if opts.refresh_every > 0 && iterations % opts.refresh_every == 0 {
                gb = d.g() * &beta;
            }
            if opts.trace {
                trace.push(self.objective(j, &beta, eta));
            }
            if max_change <= opts.tol * beta.norm() {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("node {j}: no convergence after {iterations} sweeps at eta = {eta:.4e}");
        }
        Ok(self.finish(j, eta, beta, iterations, converged, trace))
    }

    fn finish(
        &self,
        j: usize,
        eta: f64,
        beta: DVector<f64>,
        iterations: usize,
        converged: bool,
        trace: Vec<f64>,
    ) -> NodeFit {
        let d = self.design;
        let active_set = (1..d.n_groups())
            .filter(|&k| {
                let range = d.group_range(k);
                beta.rows(range.start, range.len())
                    .iter()
                    .any(|&v| v != 0.0)
            })
            .map(|k| k - 1)
            .collect();
        let loss = d.loss(j, &beta);
        let objective = loss + eta * self.penalty(&beta);
        NodeFit {
            node: j,
            beta: beta.as_slice().to_vec(),
            eta,
            active_set,
            loss,
            objective,
            iterations,
            converged,
            trace,
        }
    }

    /// Warm-started fits along a strictly decreasing grid.
    pub fn fit_path(
        &self,
        j: usize,
        etas: &[f64],
        opts: &FitOptions,
    ) -> Result<Vec<NodeFit>, FitError> {
        if etas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FitError::GridNotDecreasing);
        }
        let mut out: Vec<NodeFit> = Vec::with_capacity(etas.len());
        for &eta in etas {
            let start = out.last().map(|f| f.beta.as_slice());
            let fit = self.fit_node_from(j, eta, start, opts)?;
            out.push(fit);
        }
        Ok(out)
    }

    pub fn kkt(&self, fit: &NodeFit) -> KktReport {
        let d = self.design;
        let j = fit.node;
        let beta = fit.beta_vector();
        let gb = d.g() * &beta;
        let mut report = KktReport {
            background: 0.0,
            active: 0.0,
            inactive: 0.0,
        };
        for k in 0..d.n_groups() {
            let Some(f) = &self.factors[k] else { continue };
            let range = d.group_range(k);
            let bk = beta.rows(range.start, range.len()).into_owned();
            let r = self.partial_residual(j, k, &gb, &beta);
            let gkk = d.block(k, k);
            if k == 0 {
                report.background = (gkk * &bk - r).norm();
            } else if bk.iter().any(|&v| v != 0.0) {
                let mut gbk = gkk * &bk;
                if f.jitter > 0.0 {
                    gbk += &bk * f.jitter;
                }
                let n = f.norm(&bk);
                let res = &gbk * 2.0 - &r * 2.0 + &gbk * (fit.eta / n);
                report.active = report.active.max(res.norm());
            } else {
                let excess = f.whiten(&r).norm() - fit.eta / 2.0;
                report.inactive = report.inactive.max(excess.max(0.0));
            }
        }
        report
    }

    /// Unpenalized least squares restricted to the background and the
    /// groups of `support` (source nodes).
    pub fn refit(&self, j: usize, support: &[usize]) -> Result<NodeFit, FitError> {
        let m0 = self.design.m0();
        self.refit_restricted(j, &(0..m0).collect::<Vec<_>>(), support)
    }

    /// Like [`GroupSolver::refit`], with the background restricted to its
    /// first coefficient.
    pub fn refit_constant_background(
        &self,
        j: usize,
        support: &[usize],
    ) -> Result<NodeFit, FitError> {
        self.refit_restricted(j, &[0], support)
    }

    fn refit_restricted(
        &self,
        j: usize,
        background: &[usize],
        support: &[usize],
    ) -> Result<NodeFit, FitError> {
        self.check_node(j)?;
        let d = self.design;
        let mut support: Vec<usize> = support
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if let Some(&bad) = support.iter().find(|&&k| k >= d.p()) {
            return Err(FitError::NodeOutOfRange(bad));
        }
        support.retain(|&k| !self.is_frozen(k + 1));

        let mut idx: Vec<usize> = background.to_vec();
        let mut group_end = vec![(0usize, idx.len())];
        for &k in &support {
            idx.extend(d.group_range(k + 1));
            group_end.push((k + 1, idx.len()));
        }
        let n = idx.len();
        let g = DMatrix::from_fn(n, n, |r, c| d.g()[(idx[r], idx[c])]);
        let a = DVector::from_fn(n, |r, _| d.alpha(j)[idx[r]]);
        let chol = Cholesky::new(g.clone()).filter(well_conditioned);
        let Some(chol) = chol else {
            let group = group_end
                .iter()
                .find(|&&(_, end)| {
                    Cholesky::new(g.view((0, 0), (end, end)).into_owned())
                        .filter(well_conditioned)
                        .is_none()
                })
                .map(|&(k, _)| k)
                .unwrap_or(0);
            return Err(FitError::Singular { group });
        };
        let sol = chol.solve(&a);
        let mut beta = DVector::zeros(d.dim());
        for (r, &i) in idx.iter().enumerate() {
            beta[i] = sol[r];
        }
        let mut fit = self.finish(j, 0.0, beta, 1, true, Vec::new());
        fit.active_set = support;
        Ok(fit)
    }
}

fn well_conditioned(c: &Cholesky<f64, Dyn>) -> bool {
    let diag = c.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    max > 0.0 && min > 1e-7 * max
}

/// Per-node fits together with their bases, evaluable as curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub basis0: SplineBasis,
    pub basis1: SplineBasis,
    pub p: usize,
    pub fits: Vec<NodeFit>,
}

impl FittedModel {
    pub fn new(design: &DesignCache, fits: Vec<NodeFit>) -> Self {
        Self {
            basis0: design.basis0().clone(),
            basis1: design.basis1().clone(),
            p: design.p(),
            fits,
        }
    }

    fn fit(&self, j: usize) -> &NodeFit {
        &self.fits[j]
    }

    /// `ν̂_j(t) = φ₀(t)ᵀβ̂_{j,0}`.
    pub fn background(&self, j: usize, t: f64) -> f64 {
        let m0 = self.basis0.dim();
        self.basis0.combine(&self.fit(j).beta[..m0], t)
    }

    /// `ω̂_{j,k}(x) = φ₁(x)ᵀβ̂_{j,k}`.
    pub fn transfer(&self, j: usize, k: usize, x: f64) -> f64 {
        let m0 = self.basis0.dim();
        let m1 = self.basis1.dim();
        let start = m0 + k * m1;
        self.basis1.combine(&self.fit(j).beta[start..start + m1], x)
    }

    /// Recovered edges `(target, source)`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        self.fits
            .iter()
            .flat_map(|f| f.active_set.iter().map(move |&k| (f.node, k)))
            .collect()
    }
}
