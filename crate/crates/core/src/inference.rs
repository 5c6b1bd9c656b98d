//! Test of a constant background intensity.
//!
//! Dimensions are inflated by `T^{1/20}`, the first background basis
//! function is the constant 1, and the statistic compares the refit on the
//! GIC-selected support with the refit that keeps only the constant:
//! `S_j = T (ℓ_j(β̂^{H₀}) − ℓ_j(β̂¹))`, referred to `λ̄_j χ²_{m₀−1}`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::design::{build_design, DesignCache, DesignConfig, DesignError};
use crate::estimator::{FitError, GroupSolver};
use crate::selection::{select_eta, SelectError, SelectOptions};
use crate::simulate::EventData;
use crate::spline::{SplineBasis, SplineError};

#[derive(Debug, Error)]
pub enum TestError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("node {0} has no events")]
    NoEvents(usize),
    #[error("node {node}: restricted loss is below the unrestricted loss by {gap:.3e}")]
    Inconsistent { node: usize, gap: f64 },
    #[error("node {node}: fitted mean intensity {value:.3e} is not positive")]
    NonPositiveIntensity { node: usize, value: f64 },
    #[error("background dimension must be at least 2 for the test, got {0}")]
    DimensionTooSmall(usize),
}

/// Basis on `interval` whose first element is the constant 1 and whose span
/// equals that of the standard order-`order`, dimension-`m0` B-splines.
pub fn constant_background_basis(
    order: usize,
    m0: usize,
    interval: (f64, f64),
) -> Result<SplineBasis, SplineError> {
    SplineBasis::with_constant_first(order, m0, interval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub background_order: usize,
    pub transfer_order: usize,
    pub support: f64,
    /// Dimensions are multiplied by `T^{undersmooth_exponent}` and rounded up.
    pub undersmooth_exponent: f64,
    pub grid_dt: Option<f64>,
    pub select: SelectOptions,
    /// Apply `max(0, ·)` to the fitted intensity before averaging.
    pub clip_intensity: bool,
    pub alpha_level: f64,
}

impl TestConfig {
    pub fn new(order: usize, support: f64) -> Self {
        Self {
            background_order: order,
            transfer_order: order,
            support,
            undersmooth_exponent: 1.0 / 20.0,
            grid_dt: None,
            select: SelectOptions::default(),
            clip_intensity: false,
            alpha_level: 0.05,
        }
    }

    /// Under-smoothed dimensions for estimation-stage `(m0, m1)`.
    pub fn test_dims(&self, m0: usize, m1: usize, horizon: f64) -> (usize, usize) {
        let factor = horizon.powf(self.undersmooth_exponent);
        let inflate = |m: usize| ((m as f64 * factor) - 1e-9).ceil().max(m as f64) as usize;
        (inflate(m0), inflate(m1))
    }

    fn design_config(&self, m0: usize, m1: usize, horizon: f64) -> DesignConfig {
        let (m0_test, m1_test) = self.test_dims(m0, m1, horizon);
        let mut cfg = DesignConfig::new(self.background_order, m0_test, m1_test, self.support)
            .with_grid_dt(self.grid_dt);
        cfg.transfer.order = self.transfer_order;
        cfg.constant_background = true;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundTest {
    pub node: usize,
    pub s: f64,
    pub lambda_bar: f64,
    pub dof: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub m0_test: usize,
    pub m1_test: usize,
    pub support: Vec<usize>,
    pub reject: bool,
}

/// `Q(dof/2, x/2)`, the upper tail of the χ² distribution.
pub fn chi_square_upper_tail(x: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "chi-square needs at least one degree of freedom");
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Tests node `j` using its own under-smoothed design.
pub fn test_background(
    events: &EventData,
    j: usize,
    m0: usize,
    m1: usize,
    config: &TestConfig,
) -> Result<BackgroundTest, TestError> {
    if j >= events.p() || events.count(j) == 0 {
        return Err(TestError::NoEvents(j));
    }
    let design = build_test_design(events, m0, m1, config)?;
    let solver = GroupSolver::new(&design);
    test_node(&solver, j, config)
}

/// Tests every node with events, sharing one under-smoothed design.
pub fn test_all(
    events: &EventData,
    m0: usize,
    m1: usize,
    config: &TestConfig,
) -> Result<Vec<Option<BackgroundTest>>, TestError> {
    let design = build_test_design(events, m0, m1, config)?;
    let solver = GroupSolver::new(&design);
    (0..events.p())
        .into_par_iter()
        .map(|j| {
            if design.event_count(j) == 0 {
                Ok(None)
            } else {
                test_node(&solver, j, config).map(Some)
            }
        })
        .collect()
}

pub fn build_test_design(
    events: &EventData,
    m0: usize,
    m1: usize,
    config: &TestConfig,
) -> Result<DesignCache, TestError> {
    let cfg = config.design_config(m0, m1, events.horizon());
    if cfg.background.dim < 2 {
        return Err(TestError::DimensionTooSmall(cfg.background.dim));
    }
    Ok(build_design(events, &cfg)?)
}

/// Runs the test on a design built with a constant-first background basis.
pub fn test_node(
    solver: &GroupSolver<'_>,
    j: usize,
    config: &TestConfig,
) -> Result<BackgroundTest, TestError> {
    let design = solver.design();
    assert!(
        design.basis0().has_constant_first(),
        "the test needs a constant-first background basis"
    );
    if design.event_count(j) == 0 {
        return Err(TestError::NoEvents(j));
    }
    let selection = select_eta(solver, j, &config.select)?;
    let support = selection.fit.active_set;
    let full = solver.refit(j, &support)?;
    let null = solver.refit_constant_background(j, &support)?;
    let horizon = design.horizon();

    let mut s = horizon * (null.loss - full.loss);
    if s < 0.0 {
        let slack = 1e-8 * horizon * full.loss.abs().max(null.loss.abs());
        if -s > slack {
            return Err(TestError::Inconsistent { node: j, gap: -s });
        }
        s = 0.0;
    }
    let lambda_bar = if config.clip_intensity {
        clipped_mean_intensity(design, &full.beta)
    } else {
        design.psi_mean().dot(&full.beta_vector())
    };
    if !(lambda_bar > 0.0) {
        return Err(TestError::NonPositiveIntensity {
            node: j,
            value: lambda_bar,
        });
    }
    let dof = design.m0() - 1;
    let statistic = s / lambda_bar;
    let p_value = chi_square_upper_tail(statistic, dof);
    Ok(BackgroundTest {
        node: j,
        s,
        lambda_bar,
        dof,
        statistic,
        p_value,
        m0_test: design.m0(),
        m1_test: design.m1(),
        support,
        reject: p_value < config.alpha_level,
    })
}

/// Clipped mean intensity, approximating `Ψᵀβ` by the fitted background
/// plus the time-averaged transfer contribution.
fn clipped_mean_intensity(design: &DesignCache, beta: &[f64]) -> f64 {
    let basis = design.basis0();
    let (lo, hi) = basis.interval();
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let m0 = design.m0();
    let shift: f64 = design
        .psi_mean()
        .iter()
        .zip(beta)
        .skip(m0)
        .map(|(a, b)| a * b)
        .sum();
    (0..n)
        .map(|i| (basis.combine(&beta[..m0], lo + (i as f64 + 0.5) * h) + shift).max(0.0))
        .sum::<f64>()
        / n as f64
}

pub fn write_tests_csv<W: Write>(
    mut w: W,
    tests: &[Option<BackgroundTest>],
) -> std::io::Result<()> {
    writeln!(
        w,
        "node,s,lambda_bar,dof,statistic,p_value,m0_test,m1_test,edges,reject"
    )?;
    for t in tests.iter().flatten() {
        let edges: Vec<String> = t.support.iter().map(|k| k.to_string()).collect();
        writeln!(
            w,
            "{},{:e},{:e},{},{:e},{:e},{},{},{},{}",
            t.node,
            t.s,
            t.lambda_bar,
            t.dof,
            t.statistic,
            t.p_value,
            t.m0_test,
            t.m1_test,
            edges.join(" "),
            u8::from(t.reject)
        )?;
    }
    Ok(())
}
