use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hawkesnet::experiment::PipelineConfig;
use hawkesnet::{FitOptions, SelectOptions, TestConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hawkesnet",
    version,
    about = "Simulate nonstationary Hawkes networks and recover them from event data"
)]
pub struct Cli {
    /// Worker threads for replications and per-node fits [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate events from a preset or a model JSON file
    Simulate(SimulateArgs),
    /// Fit every node with GIC-tuned group lasso
    Fit(FitArgs),
    /// Choose (m0, m1) by BIC over candidate grids
    SelectDims(SelectDimsArgs),
    /// Test each node for a constant background intensity
    Test(TestArgs),
    /// Compare a fitted model with the true model
    Evaluate(EvaluateArgs),
    /// Repeat simulate, fit, evaluate (and test) over seeds
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    #[value(name = "setting1.1")]
    Setting1_1,
    #[value(name = "setting1.2")]
    Setting1_2,
    #[value(name = "setting2")]
    Setting2,
    #[value(name = "setting3.1")]
    Setting3_1,
    #[value(name = "setting3.2")]
    Setting3_2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Args, Serialize)]
pub struct PresetArgs {
    /// Named simulation setting
    #[arg(long, value_enum)]
    pub preset: Option<PresetName>,

    /// Number of nodes
    #[arg(long, default_value_t = 21)]
    pub p: usize,

    /// Observation horizon T
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,

    /// Background oscillation amplitude for setting3.2
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,

    /// Erdos-Renyi edge probability of the setting2 network
    #[arg(long, default_value_t = 0.025)]
    pub edge_prob: f64,

    /// Seed of the setting2 network (fixed across replications)
    #[arg(long, default_value_t = 1)]
    pub network_seed: u64,

    /// Background oscillations over the horizon for setting2
    #[arg(long, default_value_t = 5.0)]
    pub frequency: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BasisArgs {
    /// B-spline order of both bases (degree + 1; 4 is cubic, 1 is piecewise constant)
    #[arg(long, default_value_t = 4)]
    pub order: usize,

    /// Background spline order, overriding --order
    #[arg(long)]
    pub background_order: Option<usize>,

    /// Transfer spline order, overriding --order
    #[arg(long)]
    pub transfer_order: Option<usize>,

    /// Transfer-function support b [default: 0.01, or the model's support when simulating]
    #[arg(long)]
    pub support_b: Option<f64>,

    /// Integrate the design on a grid of this step instead of exactly
    #[arg(long)]
    pub grid_dt: Option<f64>,
}

impl BasisArgs {
    pub fn background_order(&self) -> usize {
        self.background_order.unwrap_or(self.order)
    }

    pub fn transfer_order(&self) -> usize {
        self.transfer_order.unwrap_or(self.order)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// Number of penalty levels on the geometric eta grid
    #[arg(long, default_value_t = 50)]
    pub eta_grid: usize,

    /// Ratio eta_min / eta_max of the grid
    #[arg(long, default_value_t = 1e-3)]
    pub eta_min_ratio: f64,

    /// GIC penalty alpha_T [default: (ln p)^2 ln T / 2]
    #[arg(long)]
    pub alpha_t: Option<f64>,

    /// Constant c of the model-size cap c*sqrt(T)/ln ln T
    #[arg(long, default_value_t = 4.0)]
    pub s0_scale: f64,

    /// Relative convergence tolerance of block coordinate descent
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,

    /// Maximum sweeps of block coordinate descent
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

impl SelectArgs {
    pub fn options(&self) -> SelectOptions {
        SelectOptions {
            n_grid: self.eta_grid,
            eta_min_ratio: self.eta_min_ratio,
            alpha_t: self.alpha_t,
            s0_scale: self.s0_scale,
            fit: FitOptions {
                tol: self.tol,
                max_iter: self.max_iter,
                ..FitOptions::default()
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EventsInput {
    /// Event file (`node,time` CSV, or JSON lines when the name ends in .jsonl)
    #[arg(long)]
    pub events: PathBuf,

    /// Horizon T, if the file has no `# horizon=` line
    #[arg(long)]
    pub horizon: Option<f64>,

    /// Number of nodes, if the file has no `# nodes=` line
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TestKnobs {
    /// Significance level of the background test
    #[arg(long, default_value_t = 0.05)]
    pub alpha_level: f64,

    /// Test dimensions are the estimation dimensions times T^e, rounded up
    #[arg(long, default_value_t = 0.05)]
    pub undersmooth_exponent: f64,

    /// Clip the fitted intensity at zero before averaging
    #[arg(long)]
    pub clip_intensity: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub preset: PresetArgs,

    /// Model JSON file instead of a preset
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,

    /// Simulation seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Seed of the preset's random backgrounds and signs [default: --seed]
    #[arg(long)]
    pub model_seed: Option<u64>,

    /// Output event file
    #[arg(long, short)]
    pub out: PathBuf,

    /// Output format [default: from the file extension]
    #[arg(long, value_enum)]
    pub format: Option<EventFormat>,

    /// Also write the model JSON here
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: EventsInput,

    /// Background basis dimension
    #[arg(long, default_value_t = 4)]
    pub m0: usize,

    /// Transfer basis dimension
    #[arg(long, default_value_t = 4)]
    pub m1: usize,

    #[command(flatten)]
    pub basis: BasisArgs,

    #[command(flatten)]
    pub select: SelectArgs,

    /// Fitted-model JSON output
    #[arg(long, short)]
    pub out: PathBuf,

    /// GIC path CSV output
    #[arg(long)]
    pub gic_out: Option<PathBuf>,

    /// Write the design cache here after building it
    #[arg(long)]
    pub save_design: Option<PathBuf>,

    /// Read the design cache from here instead of building it
    #[arg(long, conflicts_with = "save_design")]
    pub load_design: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectDimsArgs {
    #[command(flatten)]
    pub input: EventsInput,

    /// Candidate background dimensions
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 5, 6, 7])]
    pub m0_candidates: Vec<usize>,

    /// Candidate transfer dimensions
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 5, 6, 7])]
    pub m1_candidates: Vec<usize>,

    #[command(flatten)]
    pub basis: BasisArgs,

    #[command(flatten)]
    pub select: SelectArgs,

    /// BIC surface CSV output
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: EventsInput,

    /// Estimation-stage background dimension
    #[arg(long, default_value_t = 4)]
    pub m0: usize,

    /// Estimation-stage transfer dimension
    #[arg(long, default_value_t = 4)]
    pub m1: usize,

    #[command(flatten)]
    pub basis: BasisArgs,

    #[command(flatten)]
    pub select: SelectArgs,

    #[command(flatten)]
    pub test: TestKnobs,

    /// Test report CSV output
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// True model JSON
    #[arg(long)]
    pub model: PathBuf,

    /// Fitted-model JSON from `fit`
    #[arg(long)]
    pub fit: PathBuf,

    /// Report CSV output
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplicateArgs {
    #[command(flatten)]
    pub preset: PresetArgs,

    /// Number of replications
    #[arg(long, default_value_t = 20)]
    pub reps: usize,

    /// Base seed; replication r uses an independent stream of it
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Background basis dimension (ignored with --m0-candidates)
    #[arg(long, default_value_t = 4)]
    pub m0: usize,

    /// Transfer basis dimension (ignored with --m1-candidates)
    #[arg(long, default_value_t = 4)]
    pub m1: usize,

    /// Choose m0 by BIC, averaged over --dims-reps draws
    #[arg(long, value_delimiter = ',', requires = "m1_candidates")]
    pub m0_candidates: Option<Vec<usize>>,

    /// Choose m1 by BIC, averaged over --dims-reps draws
    #[arg(long, value_delimiter = ',', requires = "m0_candidates")]
    pub m1_candidates: Option<Vec<usize>>,

    /// Draws used for dimension selection [default: --reps]
    #[arg(long)]
    pub dims_reps: Option<usize>,

    #[command(flatten)]
    pub basis: BasisArgs,

    #[command(flatten)]
    pub select: SelectArgs,

    /// Fit and evaluate (skip with --no-fit when only testing)
    #[arg(long)]
    pub no_fit: bool,

    /// Also run the background test on every replication
    #[arg(long)]
    pub test: bool,

    #[command(flatten)]
    pub test_knobs: TestKnobs,

    /// Summary CSV output (mean and standard error per metric)
    #[arg(long, short)]
    pub out: PathBuf,

    /// Per-replication CSV output
    #[arg(long)]
    pub per_rep: Option<PathBuf>,

    /// Background-test rejection CSV output (requires --test)
    #[arg(long, requires = "test")]
    pub tests_out: Option<PathBuf>,
}

pub fn pipeline_config(
    basis: &BasisArgs,
    select: &SelectArgs,
    m0: usize,
    m1: usize,
    support: f64,
) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(basis.background_order(), m0, m1, support);
    cfg.transfer_order = basis.transfer_order();
    cfg.grid_dt = basis.grid_dt;
    cfg.select = select.options();
    cfg
}

pub fn test_config(
    basis: &BasisArgs,
    select: &SelectArgs,
    knobs: &TestKnobs,
    support: f64,
) -> TestConfig {
    let mut cfg = TestConfig::new(basis.background_order(), support);
    cfg.transfer_order = basis.transfer_order();
    cfg.grid_dt = basis.grid_dt;
    cfg.select = select.options();
    cfg.alpha_level = knobs.alpha_level;
    cfg.undersmooth_exponent = knobs.undersmooth_exponent;
    cfg.clip_intensity = knobs.clip_intensity;
    cfg
}
