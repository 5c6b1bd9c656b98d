//! Nonstationary multivariate Hawkes processes with a rectified-linear link:
//! simulation, sparse network recovery by B-spline group-lasso least
//! squares, tuning selection and a test for constant background intensity.
//!
//! The usual path is [`simulate()`] (or reading an [`EventData`] file), then
//! [`build_design`], then [`select_all`] for GIC-tuned fits of every node.

pub mod design;
pub mod estimator;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod model;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod selection;
pub mod simulate;
pub mod spline;

pub use design::{
    build_design, compute_features, BasisDims, DesignCache, DesignConfig, DesignError,
};
pub use estimator::{FitError, FitOptions, FittedModel, GroupSolver, KktReport, NodeFit};
pub use inference::{
    chi_square_upper_tail, constant_background_basis, test_all, test_background, BackgroundTest,
    TestConfig, TestError,
};
pub use metrics::{
    evaluate, selection_scores, summarize, Confusion, EvalReport, EvalSummary, MeanSe,
};
pub use model::{
    preset, random_network, Background, Edge, Link, ModelError, ModelSpec, NetworkKind, Preset,
    Sign, TransferFunction, TransferKind,
};
pub use selection::{
    default_alpha_t, gic, select_all, select_basis_dims, select_eta, BasisSelection, BicRecord,
    EtaSelection, GicRecord, SelectError, SelectOptions,
};
pub use simulate::{
    simulate, simulate_iterative, simulate_with, EventData, EventsError, Provenance, SimError,
    SimOptions,
};
pub use spline::{SplineBasis, SplineError};

use thiserror::Error;

/// Any failure of the library, for callers that run whole pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Events(#[from] EventsError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Test(#[from] TestError),
}
