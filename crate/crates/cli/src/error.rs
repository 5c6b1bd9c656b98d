use std::path::PathBuf;

use thiserror::Error;

use hawkesnet::{DesignError, FitError, SelectError, TestError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] hawkesnet::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0} node fit(s) stopped before converging; outputs were written")]
    NotConverged(usize),
}

macro_rules! from_library {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Library(e.into())
            }
        }
    )*};
}

from_library!(
    DesignError,
    FitError,
    SelectError,
    TestError,
    hawkesnet::EventsError,
    hawkesnet::ModelError,
    hawkesnet::SimError
);

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Self {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Json { .. } => EXIT_CONFIG,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::Library(e) => library_code(e),
        }
    }
}

fn library_code(e: &hawkesnet::Error) -> u8 {
    use hawkesnet::Error as E;
    match e {
        E::Spline(_) | E::Model(_) | E::Events(_) => EXIT_CONFIG,
        E::Simulation(_) => EXIT_NUMERIC,
        E::Design(e) => design_code(e),
        E::Fit(e) => fit_code(e),
        E::Select(e) => select_code(e),
        E::Test(e) => match e {
            TestError::Design(e) => design_code(e),
            TestError::Select(e) => select_code(e),
            TestError::Fit(e) => fit_code(e),
            TestError::NoEvents(_) | TestError::DimensionTooSmall(_) => EXIT_CONFIG,
            TestError::Inconsistent { .. } | TestError::NonPositiveIntensity { .. } => EXIT_NUMERIC,
        },
    }
}

fn design_code(e: &DesignError) -> u8 {
    match e {
        DesignError::NonFinite => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn fit_code(e: &FitError) -> u8 {
    match e {
        FitError::NonFinite(_) | FitError::Singular { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn select_code(e: &SelectError) -> u8 {
    match e {
        SelectError::Fit(e) => fit_code(e),
        SelectError::Design(e) => design_code(e),
        SelectError::UndefinedKappa(_) => EXIT_NUMERIC,
        SelectError::GridTooSmall(_) | SelectError::NoCandidates(_) => EXIT_CONFIG,
    }
}
