//! Choice of the penalty level (GIC over a geometric path) and of the basis
//! dimensions (BIC over candidate pairs).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{build_design, DesignCache, DesignConfig, DesignError};
use crate::estimator::{FitError, FitOptions, FittedModel, GroupSolver, NodeFit};
use crate::simulate::EventData;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("node {0} has no events, so the GIC scale T/N_j is undefined")]
    UndefinedKappa(usize),
    #[error("penalty grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("candidate list for {0} is empty")]
    NoCandidates(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GicRecord {
    pub eta: f64,
    pub gic: f64,
    pub loss: f64,
    pub kappa: f64,
    pub model_size: usize,
    pub alpha_t: f64,
}

/// `ℓ_j(β̂)·κ_j + (α_T/T)·|Ê_j|` with `κ_j = T / N_j`.
pub fn gic(design: &DesignCache, fit: &NodeFit, alpha_t: f64) -> Result<GicRecord, SelectError> {
    let n = design.event_count(fit.node);
    if n == 0 {
        return Err(SelectError::UndefinedKappa(fit.node));
    }
    let t = design.horizon();
    let kappa = t / n as f64;
    let model_size = fit.active_set.len();
    Ok(GicRecord {
        eta: fit.eta,
        gic: fit.loss * kappa + (alpha_t / t) * model_size as f64,
        loss: fit.loss,
        kappa,
        model_size,
        alpha_t,
    })
}

/// `(ln p)² ln T / 2`.
pub fn default_alpha_t(p: usize, horizon: f64) -> f64 {
    let lp = (p as f64).ln();
    lp * lp * horizon.ln() / 2.0
}

/// Model-size cap `⌈c √T / ln ln T⌉`, at most `p`; `p` when `ln ln T ≤ 0`.
pub fn max_model_size(p: usize, horizon: f64, scale: f64) -> usize {
    let lll = horizon.ln().ln();
    if !(lll > 0.0) {
        return p;
    }
    let s = (scale * horizon.sqrt() / lll).ceil();
    if s.is_finite() && s >= 1.0 {
        (s as usize).min(p)
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub n_grid: usize,
    /// `η_min / η_max`.
    pub eta_min_ratio: f64,
    /// `None` uses [`default_alpha_t`].
    pub alpha_t: Option<f64>,
    /// Constant `c` of the model-size cap.
    pub s0_scale: f64,
    pub fit: FitOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            n_grid: 50,
            eta_min_ratio: 1e-3,
            alpha_t: None,
            s0_scale: 4.0,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSelection {
    pub fit: NodeFit,
    pub path: Vec<GicRecord>,
    pub eta_max: f64,
    pub s0: usize,
}

/// Fits node `j` along `η_max · r^i`, `r = (η_min/η_max)^{1/(n-1)}`, stopping
/// once the model has more than `s₀` edges, and keeps the GIC minimizer.
pub fn select_eta(
    solver: &GroupSolver<'_>,
    j: usize,
    opts: &SelectOptions,
) -> Result<EtaSelection, SelectError> {
    let design = solver.design();
    if opts.n_grid < 2 {
        return Err(SelectError::GridTooSmall(opts.n_grid));
    }
    if j < design.p() && design.event_count(j) == 0 {
        return Err(SelectError::UndefinedKappa(j));
    }
    let alpha_t = opts
        .alpha_t
        .unwrap_or_else(|| default_alpha_t(design.p(), design.horizon()));
    let s0 = max_model_size(design.p(), design.horizon(), opts.s0_scale);
    let eta_max = solver.eta_max(j);
    let ratio = opts.eta_min_ratio.powf(1.0 / (opts.n_grid - 1) as f64);

    let mut path = Vec::with_capacity(opts.n_grid);
    let mut best: Option<(f64, NodeFit)> = None;
    let mut previous: Option<NodeFit> = None;
    for i in 0..opts.n_grid {
        let eta = eta_max * ratio.powi(i as i32);
        let start = previous.as_ref().map(|f| f.beta.as_slice());
        let fit = solver.fit_node_from(j, eta, start, &opts.fit)?;
        if fit.active_set.len() > s0 {
            break;
        }
        let record = gic(design, &fit, alpha_t)?;
        path.push(record);
        if best.as_ref().is_none_or(|(g, _)| record.gic < *g) {
            best = Some((record.gic, fit.clone()));
        }
        previous = Some(fit);
        if eta == 0.0 {
            break;
        }
    }
    let (_, fit) = best.expect("the first grid point has an empty model");
    Ok(EtaSelection {
        fit,
        path,
        eta_max,
        s0,
    })
}

/// Runs [`select_eta`] for every node in parallel. Nodes without events get
/// an all-zero fit and no path.
pub fn select_all(
    design: &DesignCache,
    opts: &SelectOptions,
) -> Result<(FittedModel, Vec<Option<EtaSelection>>), SelectError> {
    let solver = GroupSolver::new(design);
    let selections: Vec<Option<EtaSelection>> = (0..design.p())
        .into_par_iter()
        .map(|j| {
            if design.event_count(j) == 0 {
                Ok(None)
            } else {
                select_eta(&solver, j, opts).map(Some)
            }
        })
        .collect::<Result<_, _>>()?;
    let fits = selections
        .iter()
        .enumerate()
        .map(|(j, s)| match s {
            Some(s) => s.fit.clone(),
            None => empty_fit(design, j),
        })
        .collect();
    Ok((FittedModel::new(design, fits), selections))
}

fn empty_fit(design: &DesignCache, j: usize) -> NodeFit {
    NodeFit {
        node: j,
        beta: vec![0.0; design.dim()],
        eta: f64::INFINITY,
        active_set: Vec::new(),
        loss: 0.0,
        objective: 0.0,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    }
}

pub fn write_gic_csv<W: Write>(
    mut w: W,
    selections: &[Option<EtaSelection>],
) -> std::io::Result<()> {
    writeln!(w, "node,eta,gic,loss,kappa,model_size,alpha_t,selected")?;
    for (j, s) in selections.iter().enumerate() {
        let Some(s) = s else { continue };
        for r in &s.path {
            writeln!(
                w,
                "{j},{:e},{:e},{:e},{:e},{},{:e},{}",
                r.eta,
                r.gic,
                r.loss,
                r.kappa,
                r.model_size,
                r.alpha_t,
                u8::from(r.eta == s.fit.eta)
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicRecord {
    pub m0: usize,
    pub m1: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSelection {
    pub m0: usize,
    pub m1: usize,
    pub surface: Vec<BicRecord>,
    /// Edges of the initial fit at the largest dimensions, per target node.
    pub initial_edges: Vec<Vec<usize>>,
}

/// Picks `(m₀, m₁)` by minimizing, over the candidate grid,
/// `Σ_j ℓ_j(β̂)·κ_j + ‖β̂_j‖₀ ln T / T`, where `β̂_j` is the unpenalized refit
/// on the edges found by a GIC-tuned fit at the largest dimensions.
///
/// `base` supplies the spline orders, support and grid; its dimensions are
/// replaced by each candidate pair.
pub fn select_basis_dims(
    events: &EventData,
    base: &DesignConfig,
    m0_candidates: &[usize],
    m1_candidates: &[usize],
    opts: &SelectOptions,
) -> Result<BasisSelection, SelectError> {
    let m0_max = *m0_candidates
        .iter()
        .max()
        .ok_or(SelectError::NoCandidates("m0"))?;
    let m1_max = *m1_candidates
        .iter()
        .max()
        .ok_or(SelectError::NoCandidates("m1"))?;
    let with_dims = |m0, m1| {
        let mut cfg = base.clone();
        cfg.background.dim = m0;
        cfg.transfer.dim = m1;
        cfg
    };
    let config = |m0, m1| with_dims(m0, m1);

    let initial_edges: Vec<Vec<usize>> = if m0_candidates.len() * m1_candidates.len() == 1 {
        vec![Vec::new(); events.p()]
    } else {
        let design = build_design(events, &config(m0_max, m1_max))?;
        let (fitted, _) = select_all(&design, opts)?;
        fitted.fits.into_iter().map(|f| f.active_set).collect()
    };

    let horizon = events.horizon();
    let pairs: Vec<(usize, usize)> = m0_candidates
        .iter()
        .flat_map(|&m0| m1_candidates.iter().map(move |&m1| (m0, m1)))
        .collect();
    let surface: Vec<BicRecord> = pairs
        .par_iter()
        .map(|&(m0, m1)| {
            let design = build_design(events, &config(m0, m1))?;
            let solver = GroupSolver::new(&design);
            let mut bic = 0.0;
            for (j, edges) in initial_edges.iter().enumerate() {
                let n = design.event_count(j);
                if n == 0 {
                    continue;
                }
                let fit = solver.refit(j, edges)?;
                let nonzero = fit.beta.iter().filter(|&&v| v != 0.0).count();
                bic += fit.loss * horizon / n as f64 + nonzero as f64 * horizon.ln() / horizon;
            }
            Ok(BicRecord { m0, m1, bic })
        })
        .collect::<Result<_, SelectError>>()?;
    let best = surface
        .iter()
        .fold(None::<&BicRecord>, |acc, r| match acc {
            Some(b) if b.bic <= r.bic => Some(b),
            _ => Some(r),
        })
        .expect("nonempty surface");
    Ok(BasisSelection {
        m0: best.m0,
        m1: best.m1,
        surface: surface.clone(),
        initial_edges,
    })
}

pub fn write_bic_csv<W: Write>(mut w: W, selection: &BasisSelection) -> std::io::Result<()> {
    writeln!(w, "m0,m1,bic,selected")?;
    for r in &selection.surface {
        let chosen = r.m0 == selection.m0 && r.m1 == selection.m1;
        writeln!(w, "{},{},{:e},{}", r.m0, r.m1, r.bic, u8::from(chosen))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use crate::model::{preset, Preset};
    use crate::simulate::simulate;

    #[test]
    fn gic_arithmetic() {
        let design = DesignCache::from_parts(
            crate::spline::SplineBasis::new(1, 1, (0.0, 10.0)).unwrap(),
            crate::spline::SplineBasis::new(1, 1, (0.0, 0.01)).unwrap(),
            10.0,
            nalgebra::DMatrix::identity(1 + 4, 1 + 4),
            vec![nalgebra::DVector::zeros(5); 4],
            vec![20, 0, 0, 0],
            nalgebra::DVector::zeros(5),
        );
        let fit = NodeFit {
            node: 0,
            beta: vec![0.0; 5],
            eta: 1.0,
            active_set: vec![0, 1, 2, 3],
            loss: -3.0,
            objective: 0.0,
            iterations: 1,
            converged: true,
            trace: Vec::new(),
        };
        let r = gic(&design, &fit, 2.0).unwrap();
        assert_abs_diff_eq!(r.gic, -0.7, epsilon = 1e-15);
        assert_eq!(r.kappa, 0.5);
        let mut empty = fit.clone();
        empty.node = 1;
        assert!(matches!(
            gic(&design, &empty, 2.0),
            Err(SelectError::UndefinedKappa(1))
        ));
    }

    #[test]
    fn model_size_cap() {
        assert_eq!(max_model_size(21, 2.0, 1.0), 21);
        assert_eq!(max_model_size(21, 10.0, 1.0), 4);
        assert_eq!(max_model_size(21, 10.0, 4.0), 16);
        assert_eq!(max_model_size(5, 10.0, 4.0), 5);
    }

    #[test]
    fn alpha_t_default() {
        assert_abs_diff_eq!(
            default_alpha_t(21, 10.0),
            21f64.ln().powi(2) * 10f64.ln() / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn selection_respects_cap_and_identity() {
        let model = preset(&Preset::Setting1_1, 21, 4.0, 3).unwrap();
        let ev = simulate(&model, 3).unwrap();
        let design = build_design(&ev, &DesignConfig::new(4, 6, 4, 0.01)).unwrap();
        let solver = GroupSolver::new(&design);
        let opts = SelectOptions::default();
        let sel = select_eta(&solver, 0, &opts).unwrap();
        assert!(sel.fit.active_set.len() <= sel.s0);
        assert!(sel.path[0].model_size == 0);
        for r in &sel.path {
            let expected = r.loss * r.kappa + r.alpha_t / 4.0 * r.model_size as f64;
            assert_eq!(r.gic, expected);
        }
        let again = select_eta(&solver, 0, &opts).unwrap();
        assert_eq!(sel, again);
        let two = select_eta(&solver, 0, &SelectOptions { n_grid: 2, ..opts }).unwrap();
        assert_eq!(two.path.len().min(2), two.path.len());
    }
}
