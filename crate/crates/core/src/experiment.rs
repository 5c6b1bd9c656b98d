//! Seeded replication of simulate → fit → evaluate (→ test).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, DesignCache, DesignConfig};
use crate::estimator::FittedModel;
use crate::inference::{test_all, BackgroundTest, TestConfig};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{preset, ModelSpec, Preset};
use crate::selection::{select_all, select_basis_dims, EtaSelection, SelectOptions};
use crate::simulate::{simulate, EventData};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub background_order: usize,
    pub transfer_order: usize,
    pub m0: usize,
    pub m1: usize,
    pub support: f64,
    #[serde(default)]
    pub grid_dt: Option<f64>,
    pub select: SelectOptions,
}

impl PipelineConfig {
    pub fn new(order: usize, m0: usize, m1: usize, support: f64) -> Self {
        Self {
            background_order: order,
            transfer_order: order,
            m0,
            m1,
            support,
            grid_dt: None,
            select: SelectOptions::default(),
        }
    }

    pub fn design_config(&self) -> DesignConfig {
        let mut cfg = DesignConfig::new(self.background_order, self.m0, self.m1, self.support)
            .with_grid_dt(self.grid_dt);
        cfg.transfer.order = self.transfer_order;
        cfg
    }
}

pub struct FitOutcome {
    pub design: DesignCache,
    pub fitted: FittedModel,
    pub selections: Vec<Option<EtaSelection>>,
}

/// Builds the design and runs GIC-tuned fits for every node.
pub fn fit_events(events: &EventData, cfg: &PipelineConfig) -> Result<FitOutcome, Error> {
    let design = build_design(events, &cfg.design_config())?;
    let (fitted, selections) = select_all(&design, &cfg.select)?;
    Ok(FitOutcome {
        design,
        fitted,
        selections,
    })
}

/// A preset simulated at a fixed size, one independent draw per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub preset: Preset,
    pub p: usize,
    pub horizon: f64,
    pub base_seed: u64,
}

impl ReplicationPlan {
    pub fn new(preset: Preset, p: usize, horizon: f64, base_seed: u64) -> Self {
        Self {
            preset,
            p,
            horizon,
            base_seed,
        }
    }

    /// `(model_seed, simulation_seed)` of replication `rep`.
    pub fn seeds(&self, rep: usize) -> (u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(rep as u64);
        (rng.next_u64(), rng.next_u64())
    }

    pub fn model(&self, rep: usize) -> Result<ModelSpec, Error> {
        Ok(preset(
            &self.preset,
            self.p,
            self.horizon,
            self.seeds(rep).0,
        )?)
    }

    pub fn draw(&self, rep: usize) -> Result<(ModelSpec, EventData), Error> {
        let model = self.model(rep)?;
        let events = simulate(&model, self.seeds(rep).1)?;
        Ok((model, events))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub report: EvalReport,
}

pub fn run_fit_rep(
    plan: &ReplicationPlan,
    cfg: &PipelineConfig,
    rep: usize,
) -> Result<RepOutcome, Error> {
    let (model, events) = plan.draw(rep)?;
    let outcome = fit_events(&events, cfg)?;
    Ok(RepOutcome {
        rep,
        seed: plan.seeds(rep).1,
        report: evaluate(&model, &outcome.fitted),
    })
}

/// Replications `0..reps`, run in parallel; results in replication order.
pub fn replicate_fits(
    plan: &ReplicationPlan,
    cfg: &PipelineConfig,
    reps: usize,
) -> Result<Vec<RepOutcome>, Error> {
    (0..reps)
        .into_par_iter()
        .map(|r| run_fit_rep(plan, cfg, r))
        .collect()
}

/// Background tests for every node of every replication.
pub fn replicate_tests(
    plan: &ReplicationPlan,
    cfg: &TestConfig,
    m0: usize,
    m1: usize,
    reps: usize,
) -> Result<Vec<Vec<BackgroundTest>>, Error> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let (_, events) = plan.draw(r)?;
            let tests = test_all(&events, m0, m1, cfg)?;
            Ok(tests.into_iter().flatten().collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsChoice {
    pub m0: usize,
    pub m1: usize,
    /// Per-replication selections.
    pub selected: Vec<(usize, usize)>,
}

impl DimsChoice {
    /// Most frequent pair; ties go to the pair seen first.
    pub fn modal(&self) -> (usize, usize) {
        let mut best = self.selected[0];
        let mut best_count = 0;
        for &pair in &self.selected {
            let count = self.selected.iter().filter(|&&q| q == pair).count();
            if count > best_count {
                best = pair;
                best_count = count;
            }
        }
        best
    }
}

/// Selects `(m₀, m₁)` on each of `reps` draws and rounds the averages.
/// Orders, support, grid and selection options come from `cfg`.
pub fn averaged_dims(
    plan: &ReplicationPlan,
    cfg: &PipelineConfig,
    m0_candidates: &[usize],
    m1_candidates: &[usize],
    reps: usize,
) -> Result<DimsChoice, Error> {
    let base = cfg.design_config();
    let selected: Vec<(usize, usize)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (_, events) = plan.draw(r)?;
            let s = select_basis_dims(&events, &base, m0_candidates, m1_candidates, &cfg.select)?;
            Ok((s.m0, s.m1))
        })
        .collect::<Result<_, Error>>()?;
    let n = selected.len().max(1) as f64;
    let mean0 = selected.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let mean1 = selected.iter().map(|s| s.1 as f64).sum::<f64>() / n;
    Ok(DimsChoice {
        m0: mean0.round() as usize,
        m1: mean1.round() as usize,
        selected,
    })
}
