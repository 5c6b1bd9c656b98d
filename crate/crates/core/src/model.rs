//! Ground-truth generative models: background intensities, transfer
//! functions, the network they induce, and the preset simulation settings.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spline::SplineBasis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one node")]
    NoNodes,
    #[error("observation horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("expected {expected} background functions, got {got}")]
    BackgroundCount { expected: usize, got: usize },
    #[error("background of node {node} is invalid: {reason}")]
    InvalidBackground { node: usize, reason: String },
    #[error("transfer function for edge ({target}, {from}) is invalid: {reason}")]
    InvalidTransfer {
        target: usize,
        from: usize,
        reason: String,
    },
    #[error("edge ({target}, {from}) refers to a node outside 0..{p}")]
    EdgeOutOfRange {
        target: usize,
        from: usize,
        p: usize,
    },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error(
        "model is unstable: spectral radius of the kernel-mass matrix is {radius:.6} (must be < 1)"
    )]
    Unstable { radius: f64 },
    #[error("dominating background level {0} must be positive and finite")]
    InvalidNuStar(f64),
    #[error("preset {name} needs {requirement}")]
    PresetArguments {
        name: &'static str,
        requirement: String,
    },
    #[error("invalid network parameters: {0}")]
    InvalidNetwork(String),
}

/// Background intensity `ν_j(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Constant {
        level: f64,
    },
    /// `offset + amplitude * sin(2π · frequency · t / horizon)`
    Sinusoidal {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        horizon: f64,
    },
    Spline {
        basis: SplineBasis,
        coefficients: Vec<f64>,
    },
}

impl Background {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Background::Constant { level } => *level,
            Background::Sinusoidal {
                offset,
                amplitude,
                frequency,
                horizon,
            } => offset + amplitude * (2.0 * PI * frequency * t / horizon).sin(),
            Background::Spline {
                basis,
                coefficients,
            } => basis.combine(coefficients, t),
        }
    }

    /// An upper bound for `ν` on `[t0, t1]`; exact for constant and
    /// sinusoidal backgrounds.
    pub fn sup_on(&self, t0: f64, t1: f64) -> f64 {
        match self {
            Background::Constant { level } => *level,
            Background::Sinusoidal {
                offset,
                amplitude,
                frequency,
                horizon,
            } => {
                let scale = 2.0 * PI * frequency / horizon;
                let (a, b) = (scale * t0, scale * t1);
                if *amplitude >= 0.0 {
                    offset + amplitude * sup_sin(a, b)
                } else {
                    // a·sin(θ) with a < 0 peaks where sin(θ) is smallest.
                    offset - amplitude * sup_sin(a + PI, b + PI)
                }
            }
            Background::Spline {
                basis,
                coefficients,
            } => coefficients
                .iter()
                .enumerate()
                .filter(|&(i, _)| {
                    let (s, e) = basis.support_of(i);
                    e >= t0 && s <= t1
                })
                .map(|(_, &c)| c)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Global upper bound `ν` over `[0, horizon]`.
    pub fn upper_bound(&self, horizon: f64) -> f64 {
        self.sup_on(0.0, horizon)
    }

    fn validate(&self, node: usize) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidBackground {
            node,
            reason: reason.to_string(),
        };
        match self {
            Background::Constant { level } => {
                if !(level.is_finite() && *level >= 0.0) {
                    return Err(bad("level must be finite and nonnegative"));
                }
            }
            Background::Sinusoidal {
                offset,
                amplitude,
                frequency,
                horizon,
            } => {
                if ![offset, amplitude, frequency, horizon]
                    .iter()
                    .all(|v| v.is_finite())
                    || *horizon <= 0.0
                {
                    return Err(bad("parameters must be finite with a positive horizon"));
                }
                if *offset < amplitude.abs() {
                    return Err(bad("offset must dominate the amplitude"));
                }
            }
            Background::Spline {
                basis,
                coefficients,
            } => {
                if coefficients.len() != basis.dim() {
                    return Err(bad("coefficient count does not match the basis"));
                }
                if coefficients.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(bad("coefficients must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }
}

/// Supremum of `sin` over `[a, b]`.
fn sup_sin(a: f64, b: f64) -> f64 {
    if b - a >= 2.0 * PI {
        return 1.0;
    }
    // First θ ≥ a with sin θ = 1.
    let k = ((a - PI / 2.0) / (2.0 * PI)).ceil();
    let peak = PI / 2.0 + 2.0 * PI * k;
    if peak <= b {
        1.0
    } else {
        a.sin().max(b.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Excitatory,
    Inhibitory,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferKind {
    Zero,
    /// `scale * (x + shift) * exp(1 - rate * x)`
    GammaLike {
        scale: f64,
        shift: f64,
        rate: f64,
    },
    /// Spline on `[0, support]`; coefficients must share one sign.
    Spline {
        basis: SplineBasis,
        coefficients: Vec<f64>,
    },
}

/// Transfer function `ω_{j,k}` supported on `[0, support]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    #[serde(flatten)]
    pub kind: TransferKind,
    pub support: f64,
}

impl TransferFunction {
    pub fn gamma_like(scale: f64, shift: f64, rate: f64, support: f64) -> Self {
        Self {
            kind: TransferKind::GammaLike { scale, shift, rate },
            support,
        }
    }

    pub fn zero(support: f64) -> Self {
        Self {
            kind: TransferKind::Zero,
            support,
        }
    }

    /// The excitatory curve `20000 (x + 0.001) e^{1 - 500x}` on `[0, 0.01]`.
    pub fn standard_excitatory() -> Self {
        Self::gamma_like(20000.0, 0.001, 500.0, 0.01)
    }

    /// The inhibitory curve `-15000 (x + 0.001) e^{1 - 500x}` on `[0, 0.01]`.
    pub fn standard_inhibitory() -> Self {
        Self::gamma_like(-15000.0, 0.001, 500.0, 0.01)
    }

    pub fn value(&self, x: f64) -> f64 {
        if !(x >= 0.0 && x <= self.support) {
            return 0.0;
        }
        match &self.kind {
            TransferKind::Zero => 0.0,
            TransferKind::GammaLike { scale, shift, rate } => {
                scale * (x + shift) * (1.0 - rate * x).exp()
            }
            TransferKind::Spline {
                basis,
                coefficients,
            } => basis.combine(coefficients, x),
        }
    }

    pub fn sign(&self) -> Sign {
        match &self.kind {
            TransferKind::Zero => Sign::None,
            TransferKind::GammaLike { scale, .. } => {
                if *scale > 0.0 {
                    Sign::Excitatory
                } else if *scale < 0.0 {
                    Sign::Inhibitory
                } else {
                    Sign::None
                }
            }
            TransferKind::Spline { coefficients, .. } => {
                if coefficients.iter().all(|&c| c == 0.0) {
                    Sign::None
                } else if coefficients.iter().all(|&c| c >= 0.0) {
                    Sign::Excitatory
                } else {
                    Sign::Inhibitory
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign() == Sign::None
    }

    /// Upper bound for `max(0, ω(x))` over the support.
    pub fn positive_bound(&self) -> f64 {
        match &self.kind {
            TransferKind::Zero => 0.0,
            TransferKind::GammaLike { scale, shift, rate } => {
                if *scale <= 0.0 {
                    return 0.0;
                }
                let peak = (1.0 / rate - shift).clamp(0.0, self.support);
                self.value(peak)
                    .max(self.value(0.0))
                    .max(self.value(self.support))
            }
            TransferKind::Spline { coefficients, .. } => {
                coefficients.iter().copied().fold(0.0, f64::max)
            }
        }
    }

    /// `∫_0^b |ω(x)| dx`, in closed form.
    pub fn abs_integral(&self) -> f64 {
        match &self.kind {
            TransferKind::Zero => 0.0,
            TransferKind::GammaLike { scale, shift, rate } => {
                let rb = rate * self.support;
                let decay = (-rb).exp();
                let linear = (1.0 - decay * (1.0 + rb)) / (rate * rate);
                let constant = shift * (1.0 - decay) / rate;
                scale.abs() * E * (linear + constant)
            }
            TransferKind::Spline {
                basis,
                coefficients,
            } => basis
                .integrals()
                .iter()
                .zip(coefficients)
                .map(|(w, c)| w * c.abs())
                .sum(),
        }
    }

    /// The same curve multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let kind = match &self.kind {
            TransferKind::Zero => TransferKind::Zero,
            TransferKind::GammaLike { scale, shift, rate } => TransferKind::GammaLike {
                scale: scale * c,
                shift: *shift,
                rate: *rate,
            },
            TransferKind::Spline {
                basis,
                coefficients,
            } => TransferKind::Spline {
                basis: basis.clone(),
                coefficients: coefficients.iter().map(|v| v * c).collect(),
            },
        };
        Self {
            kind,
            support: self.support,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.support.is_finite() && self.support > 0.0) {
            return Err("support must be positive and finite".into());
        }
        match &self.kind {
            TransferKind::Zero => Ok(()),
            TransferKind::GammaLike { scale, shift, rate } => {
                if !(scale.is_finite() && shift.is_finite() && rate.is_finite()) {
                    Err("parameters must be finite".into())
                } else if *shift < 0.0 || *rate <= 0.0 {
                    Err("shift must be nonnegative and rate positive".into())
                } else {
                    Ok(())
                }
            }
            TransferKind::Spline {
                basis,
                coefficients,
            } => {
                let (lo, hi) = basis.interval();
                if lo != 0.0 || (hi - self.support).abs() > 1e-12 * self.support {
                    return Err("spline basis must live on [0, support]".into());
                }
                if coefficients.len() != basis.dim() {
                    return Err("coefficient count does not match the basis".into());
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err("coefficients must be finite".into());
                }
                let pos = coefficients.iter().any(|&c| c > 0.0);
                let neg = coefficients.iter().any(|&c| c < 0.0);
                if pos && neg {
                    return Err("coefficients must not mix signs".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `h(x) = max(0, x)`
    #[default]
    Relu,
}

impl Link {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Relu => x.max(0.0),
        }
    }
}

/// One directed edge: events of `source` feed into the intensity of `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub target: usize,
    pub source: usize,
    pub transfer: TransferFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelSpecRepr {
    p: usize,
    horizon: f64,
    #[serde(default)]
    link: Link,
    backgrounds: Vec<Background>,
    edges: Vec<Edge>,
}

/// A validated generative model. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr", into = "ModelSpecRepr")]
pub struct ModelSpec {
    p: usize,
    horizon: f64,
    link: Link,
    backgrounds: Vec<Background>,
    transfers: BTreeMap<(usize, usize), TransferFunction>,
}

impl ModelSpec {
    /// Validates and builds a model. Identically-zero transfers are dropped
    /// so the edge set is exactly the set of nonzero kernels.
    pub fn new(
        horizon: f64,
        backgrounds: Vec<Background>,
        edges: Vec<Edge>,
    ) -> Result<Self, ModelError> {
        let p = backgrounds.len();
        if p == 0 {
            return Err(ModelError::NoNodes);
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidHorizon(horizon));
        }
        for (j, bg) in backgrounds.iter().enumerate() {
            bg.validate(j)?;
        }
        let mut transfers = BTreeMap::new();
        for Edge {
            target,
            source,
            transfer,
        } in edges
        {
            if target >= p || source >= p {
                return Err(ModelError::EdgeOutOfRange {
                    target,
                    from: source,
                    p,
                });
            }
            transfer
                .validate()
                .map_err(|reason| ModelError::InvalidTransfer {
                    target,
                    from: source,
                    reason,
                })?;
            if transfer.is_zero() {
                continue;
            }
            if transfers.insert((target, source), transfer).is_some() {
                return Err(ModelError::DuplicateEdge(target, source));
            }
        }
        let model = Self {
            p,
            horizon,
            link: Link::Relu,
            backgrounds,
            transfers,
        };
        let radius = model.stability_radius();
        if radius >= 1.0 {
            return Err(ModelError::Unstable { radius });
        }
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn background(&self, j: usize) -> &Background {
        &self.backgrounds[j]
    }

    pub fn backgrounds(&self) -> &[Background] {
        &self.backgrounds
    }

    pub fn transfer(&self, target: usize, source: usize) -> Option<&TransferFunction> {
        self.transfers.get(&(target, source))
    }

    /// `(target, source, transfer)` for every nonzero kernel.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &TransferFunction)> {
        self.transfers.iter().map(|(&(j, k), f)| (j, k, f))
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.transfers.keys().copied().collect()
    }

    /// Largest transfer support `b` (0 when there are no edges).
    pub fn support(&self) -> f64 {
        self.transfers
            .values()
            .map(|f| f.support)
            .fold(0.0, f64::max)
    }

    /// `Ω_{jk} = ∫ |ω_{j,k}|`.
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let mut omega = DMatrix::zeros(self.p, self.p);
        for (&(j, k), f) in &self.transfers {
            omega[(j, k)] = f.abs_integral();
        }
        omega
    }

    /// Spectral radius of `Ω`; the dominating linear process is stable iff
    /// this is below 1.
    pub fn stability_radius(&self) -> f64 {
        spectral_radius(&self.omega_matrix())
    }

    /// Largest eigenvalue of `ΩᵀΩ` (the squared spectral norm of `Ω`).
    pub fn sigma_max(&self) -> f64 {
        let omega = self.omega_matrix();
        let gram = omega.transpose() * &omega;
        gram.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Mean intensity `Λ* = (I - Ω)^{-1} ν* 1` of the linear process with
    /// kernels `|ω|` and constant background `ν*`.
    pub fn mean_intensity_bound(&self, nu_star: f64) -> Result<DVector<f64>, ModelError> {
        if !(nu_star.is_finite() && nu_star > 0.0) {
            return Err(ModelError::InvalidNuStar(nu_star));
        }
        let omega = self.omega_matrix();
        let radius = spectral_radius(&omega);
        if radius >= 1.0 {
            return Err(ModelError::Unstable { radius });
        }
        let system = DMatrix::identity(self.p, self.p) - omega;
        let rhs = DVector::from_element(self.p, nu_star);
        system
            .lu()
            .solve(&rhs)
            .ok_or(ModelError::Unstable { radius })
    }

    /// `max_{j,t} h(ν_j(t))`.
    pub fn background_bound(&self) -> f64 {
        self.backgrounds
            .iter()
            .map(|b| self.link.apply(b.upper_bound(self.horizon)))
            .fold(0.0, f64::max)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Copy with every kernel replaced by its absolute value and each
    /// background by the constant `nu_star`.
    pub fn dominating(&self, nu_star: f64) -> Result<Self, ModelError> {
        let backgrounds = vec![Background::Constant { level: nu_star }; self.p];
        let edges = self
            .edges()
            .map(|(target, source, f)| Edge {
                target,
                source,
                transfer: if f.sign() == Sign::Inhibitory {
                    f.scaled(-1.0)
                } else {
                    f.clone()
                },
            })
            .collect();
        Self::new(self.horizon, backgrounds, edges)
    }

    /// Copy without the inhibitory edges.
    pub fn without_inhibition(&self) -> Result<Self, ModelError> {
        let edges = self
            .edges()
            .filter(|(_, _, f)| f.sign() != Sign::Inhibitory)
            .map(|(target, source, f)| Edge {
                target,
                source,
                transfer: f.clone(),
            })
            .collect();
        Self::new(self.horizon, self.backgrounds.clone(), edges)
    }
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = ModelError;

    fn try_from(r: ModelSpecRepr) -> Result<Self, Self::Error> {
        if r.backgrounds.len() != r.p {
            return Err(ModelError::BackgroundCount {
                expected: r.p,
                got: r.backgrounds.len(),
            });
        }
        let mut m = ModelSpec::new(r.horizon, r.backgrounds, r.edges)?;
        m.link = r.link;
        Ok(m)
    }
}

impl From<ModelSpec> for ModelSpecRepr {
    fn from(m: ModelSpec) -> Self {
        let edges = m
            .transfers
            .into_iter()
            .map(|((target, source), transfer)| Edge {
                target,
                source,
                transfer,
            })
            .collect();
        ModelSpecRepr {
            p: m.p,
            horizon: m.horizon,
            link: m.link,
            backgrounds: m.backgrounds,
            edges,
        }
    }
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// The named simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    /// Node 0 receives ten excitatory edges from nodes 1..=10.
    Setting1_1,
    /// As `Setting1_1`, but edges from nodes 6..=10 are inhibitory.
    Setting1_2,
    /// Supplied network; each edge is excitatory or inhibitory with
    /// probability 1/2; backgrounds oscillate `frequency` times over the
    /// horizon.
    Setting2 {
        network: Vec<(usize, usize)>,
        #[serde(default = "default_setting2_frequency")]
        frequency: f64,
    },
    /// Setting 1.2 network with constant backgrounds.
    Setting3_1,
    /// Setting 1.2 network with backgrounds `α(1 + ρ sin(2πt/T))`.
    Setting3_2 { rho: f64 },
}

fn default_setting2_frequency() -> f64 {
    5.0
}

impl Preset {
    pub fn label(&self) -> &'static str {
        match self {
            Preset::Setting1_1 => "setting1_1",
            Preset::Setting1_2 => "setting1_2",
            Preset::Setting2 { .. } => "setting2",
            Preset::Setting3_1 => "setting3_1",
            Preset::Setting3_2 { .. } => "setting3_2",
        }
    }
}

fn sinusoid(alpha: f64, rho: f64, frequency: f64, horizon: f64) -> Background {
    Background::Sinusoidal {
        offset: alpha,
        amplitude: rho * alpha,
        frequency,
        horizon,
    }
}

/// Builds a preset model. `seed` drives the background-level draws and, for
/// `Setting2`, the edge signs.
pub fn preset(preset: &Preset, p: usize, horizon: f64, seed: u64) -> Result<ModelSpec, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = |mean: f64| -> Vec<f64> {
        let normal = Normal::new(mean, 5.0).expect("valid normal");
        (0..p).map(|_| normal.sample(&mut rng)).collect()
    };
    let star = |p: usize, name: &'static str| -> Result<Vec<Edge>, ModelError> {
        if p < 11 {
            return Err(ModelError::PresetArguments {
                name,
                requirement: format!("at least 11 nodes, got {p}"),
            });
        }
        Ok(Vec::new())
    };
    let network_1 = |inhibitory_from: usize| -> Vec<Edge> {
        (1..=10)
            .map(|k| Edge {
                target: 0,
                source: k,
                transfer: if k >= inhibitory_from {
                    TransferFunction::standard_inhibitory()
                } else {
                    TransferFunction::standard_excitatory()
                },
            })
            .collect()
    };
    match preset {
        Preset::Setting1_1 | Preset::Setting1_2 => {
            star(p, preset.label())?;
            let alpha = draws(30.0);
            let mut backgrounds = vec![Background::Sinusoidal {
                offset: 60.0,
                amplitude: 50.0,
                frequency: 1.0,
                horizon,
            }];
            backgrounds.extend(alpha[1..].iter().map(|&a| sinusoid(a, 1.0, 1.0, horizon)));
            let edges = if matches!(preset, Preset::Setting1_1) {
                network_1(usize::MAX)
            } else {
                network_1(6)
            };
            ModelSpec::new(horizon, backgrounds, edges)
        }
        Preset::Setting3_1 | Preset::Setting3_2 { .. } => {
            star(p, preset.label())?;
            let alpha = draws(50.0);
            let backgrounds = match preset {
                Preset::Setting3_2 { rho } => {
                    if !(rho.is_finite() && (0.0..=1.0).contains(rho)) {
                        return Err(ModelError::PresetArguments {
                            name: "setting3_2",
                            requirement: format!("rho in [0, 1], got {rho}"),
                        });
                    }
                    alpha
                        .iter()
                        .map(|&a| sinusoid(a, *rho, 1.0, horizon))
                        .collect()
                }
                _ => alpha
                    .iter()
                    .map(|&a| Background::Constant { level: a })
                    .collect(),
            };
            ModelSpec::new(horizon, backgrounds, network_1(6))
        }
        Preset::Setting2 { network, frequency } => {
            if p < 2 {
                return Err(ModelError::PresetArguments {
                    name: "setting2",
                    requirement: format!("at least 2 nodes, got {p}"),
                });
            }
            let alpha = draws(100.0);
            let backgrounds = alpha
                .iter()
                .map(|&a| sinusoid(a, 1.0, *frequency, horizon))
                .collect();
            let edges = network
                .iter()
                .map(|&(target, source)| Edge {
                    target,
                    source,
                    transfer: if rng.random_bool(0.5) {
                        TransferFunction::standard_excitatory()
                    } else {
                        TransferFunction::standard_inhibitory()
                    },
                })
                .collect();
            ModelSpec::new(horizon, backgrounds, edges)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkKind {
    ErdosRenyi {
        edge_prob: f64,
    },
    /// Out-degrees drawn with `P(d) ∝ d^{-(exponent + 1)}` on `1..p`.
    PowerLaw {
        exponent: f64,
    },
}

/// Random directed network without self-loops, as `(target, source)` pairs.
pub fn random_network(
    kind: NetworkKind,
    p: usize,
    seed: u64,
) -> Result<BTreeSet<(usize, usize)>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = BTreeSet::new();
    match kind {
        NetworkKind::ErdosRenyi { edge_prob } => {
            if !(0.0..=1.0).contains(&edge_prob) {
                return Err(ModelError::InvalidNetwork(format!(
                    "edge probability {edge_prob} outside [0, 1]"
                )));
            }
            for target in 0..p {
                for source in 0..p {
                    if target != source && rng.random_bool(edge_prob) {
                        edges.insert((target, source));
                    }
                }
            }
        }
        NetworkKind::PowerLaw { exponent } => {
            if !(exponent.is_finite() && exponent > 0.0) {
                return Err(ModelError::InvalidNetwork(format!(
                    "power-law exponent {exponent} must be positive"
                )));
            }
            if p < 2 {
                return Ok(edges);
            }
            let weights: Vec<f64> = (1..p).map(|d| (d as f64).powf(-(exponent + 1.0))).collect();
            let total: f64 = weights.iter().sum();
            for source in 0..p {
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut degree = p - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        degree = i + 1;
                        break;
                    }
                }
                for idx in sample(&mut rng, p - 1, degree.min(p - 1)).iter() {
                    let target = if idx >= source { idx + 1 } else { idx };
                    edges.insert((target, source));
                }
            }
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sinusoid_sup_is_exact() {
        let bg = sinusoid(30.0, 1.0, 1.0, 10.0);
        assert_abs_diff_eq!(bg.sup_on(0.0, 10.0), 60.0);
        assert_abs_diff_eq!(bg.sup_on(5.0, 7.0), 30.0, epsilon = 1e-12);
        let dense = (0..=1000)
            .map(|i| bg.value(6.0 + 0.001 * i as f64))
            .fold(f64::MIN, f64::max);
        assert!(bg.sup_on(6.0, 7.0) >= dense);
        assert_abs_diff_eq!(bg.sup_on(6.0, 7.0), dense, epsilon = 1e-9);
        let neg = Background::Sinusoidal {
            offset: 10.0,
            amplitude: -5.0,
            frequency: 1.0,
            horizon: 1.0,
        };
        assert_abs_diff_eq!(neg.sup_on(0.7, 0.8), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn transfer_vanishes_outside_support() {
        let f = TransferFunction::standard_excitatory();
        assert_eq!(f.value(-1e-9), 0.0);
        assert_eq!(f.value(0.0100001), 0.0);
        assert!(f.value(0.001) > 0.0);
        assert_eq!(f.sign(), Sign::Excitatory);
        assert_eq!(
            TransferFunction::standard_inhibitory().sign(),
            Sign::Inhibitory
        );
        // Peak at x = 1/500 - 0.001.
        assert_abs_diff_eq!(f.positive_bound(), 40.0 * 0.5f64.exp(), epsilon = 1e-10);
    }

    #[test]
    fn zero_transfers_leave_the_edge_set() {
        let m = ModelSpec::new(
            1.0,
            vec![Background::Constant { level: 1.0 }; 2],
            vec![Edge {
                target: 0,
                source: 1,
                transfer: TransferFunction::zero(0.1),
            }],
        )
        .unwrap();
        assert!(m.edge_set().is_empty());
        assert_eq!(m.omega_matrix(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn mean_intensity_bound_geometric_series() {
        let m = ModelSpec::new(
            1.0,
            vec![Background::Constant { level: 2.0 }],
            vec![Edge {
                target: 0,
                source: 0,
                transfer: TransferFunction::gamma_like(1.0, 0.0, 1.0, 50.0).scaled(0.5 / E),
            }],
        )
        .unwrap();
        let lam = m.mean_intensity_bound(2.0).unwrap();
        assert_abs_diff_eq!(lam[0], 4.0, epsilon = 1e-9);
        assert!(matches!(
            m.mean_intensity_bound(-1.0),
            Err(ModelError::InvalidNuStar(_))
        ));
    }

    #[test]
    fn unstable_models_are_rejected() {
        let err = ModelSpec::new(
            1.0,
            vec![Background::Constant { level: 1.0 }],
            vec![Edge {
                target: 0,
                source: 0,
                transfer: TransferFunction::gamma_like(1.0, 0.0, 1.0, 50.0).scaled(2.0),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Unstable { .. }));
    }

    #[test]
    fn presets_match_the_printed_settings() {
        let m = preset(&Preset::Setting1_1, 21, 10.0, 3).unwrap();
        assert_abs_diff_eq!(m.background(0).value(2.5), 110.0, epsilon = 1e-12);
        assert_eq!(m.edge_set().len(), 10);
        assert!(m
            .edges()
            .all(|(j, k, f)| j == 0 && (1..=10).contains(&k) && f.sign() == Sign::Excitatory));

        let m = preset(&Preset::Setting1_2, 21, 10.0, 3).unwrap();
        for k in 6..=10 {
            assert_eq!(m.transfer(0, k).unwrap().sign(), Sign::Inhibitory);
        }
        for k in 1..=5 {
            assert_eq!(m.transfer(0, k).unwrap().sign(), Sign::Excitatory);
        }

        let m = preset(&Preset::Setting3_1, 21, 20.0, 3).unwrap();
        assert!(m
            .backgrounds()
            .iter()
            .all(|b| matches!(b, Background::Constant { .. })));

        assert!(matches!(
            preset(&Preset::Setting1_1, 5, 10.0, 0),
            Err(ModelError::PresetArguments { .. })
        ));
    }

    #[test]
    fn setting_1_1_violates_norm_condition_but_is_stable() {
        let m = preset(&Preset::Setting1_1, 21, 10.0, 0).unwrap();
        assert!(m.sigma_max() > 1.0);
        assert_eq!(m.stability_radius(), 0.0);
        let m = preset(&Preset::Setting1_2, 21, 10.0, 0).unwrap();
        assert!(m.sigma_max() < 1.0);
    }

    #[test]
    fn degenerate_networks() {
        let empty = random_network(NetworkKind::ErdosRenyi { edge_prob: 0.0 }, 10, 1).unwrap();
        assert!(empty.is_empty());
        let full = random_network(NetworkKind::ErdosRenyi { edge_prob: 1.0 }, 3, 1).unwrap();
        assert_eq!(full.len(), 6);
        assert!(full.iter().all(|(j, k)| j != k));
        assert!(random_network(NetworkKind::ErdosRenyi { edge_prob: 1.5 }, 3, 1).is_err());
        assert!(random_network(NetworkKind::PowerLaw { exponent: 0.0 }, 3, 1).is_err());
        let pl = random_network(NetworkKind::PowerLaw { exponent: 1.0 }, 50, 4).unwrap();
        assert!(pl.iter().all(|(j, k)| j != k && *j < 50 && *k < 50));
        assert!(pl.len() >= 50);
    }

    #[test]
    fn model_json_round_trip() {
        let m = preset(&Preset::Setting1_2, 21, 10.0, 9).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.content_hash(), back.content_hash());
    }
}
