//! Event streams and their simulation by thinning.
//!
//! [`simulate`] is Ogata-style thinning against a piecewise dominating rate.
//! [`simulate_iterative`] builds the same law as the limit of a sequence of
//! processes that all thin one fixed planar Poisson field; it is slow and is
//! kept as a distributional cross-check.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelSpec, TransferFunction};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(
        "simulation diverged at t = {time:.6}: dominating rate {rate:.3e} after {events} events"
    )]
    Diverged { time: f64, rate: f64, events: usize },
    #[error("intensity {intensity:.6e} exceeded the dominating rate {bound:.6e} at t = {time:.6}")]
    BoundViolated {
        time: f64,
        intensity: f64,
        bound: f64,
    },
}

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("node {node}: event times must be strictly increasing and lie in (0, {horizon}]")]
    InvalidTimes { node: usize, horizon: f64 },
    #[error("expected {expected} event sequences, got {got}")]
    WrongNodeCount { expected: usize, got: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub model_hash: String,
}

/// Sorted event times of `p` nodes on `(0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventData {
    p: usize,
    horizon: f64,
    times: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl EventData {
    pub fn new(horizon: f64, times: Vec<Vec<f64>>) -> Result<Self, EventsError> {
        for (node, seq) in times.iter().enumerate() {
            let ordered = seq.windows(2).all(|w| w[0] < w[1]);
            let in_range = seq.iter().all(|&t| t > 0.0 && t <= horizon);
            if !ordered || !in_range {
                return Err(EventsError::InvalidTimes { node, horizon });
            }
        }
        Ok(Self {
            p: times.len(),
            horizon,
            times,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn times(&self, j: usize) -> &[f64] {
        &self.times[j]
    }

    pub fn all_times(&self) -> &[Vec<f64>] {
        &self.times
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn count(&self, j: usize) -> usize {
        self.times[j].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.times.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// `N_j(t)`: number of events of node `j` at or before `t`.
    pub fn counting(&self, j: usize, t: f64) -> usize {
        self.times[j].partition_point(|&u| u <= t)
    }

    /// All events as `(time, node)`, ordered by time then node.
    pub fn merged(&self) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = self
            .times
            .iter()
            .enumerate()
            .flat_map(|(j, seq)| seq.iter().map(move |&t| (t, j)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    /// Relabels nodes: node `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut times = vec![Vec::new(); self.p];
        for (j, seq) in self.times.iter().enumerate() {
            times[perm[j]] = seq.clone();
        }
        Self {
            p: self.p,
            horizon: self.horizon,
            times,
            provenance: None,
        }
    }

    /// CSV with header `node,time`; times carry 17 significant digits.
    /// Lines starting with `#` are comments.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "# horizon={}", fmt_time(self.horizon))?;
        writeln!(w, "# nodes={}", self.p)?;
        writeln!(w, "node,time")?;
        for (t, j) in self.merged() {
            writeln!(w, "{j},{}", fmt_time(t))?;
        }
        Ok(())
    }

    /// Reads the CSV form. `horizon` and `p` come from the `# horizon=` and
    /// `# nodes=` comments unless given explicitly.
    pub fn read_csv<R: BufRead>(
        r: R,
        horizon: Option<f64>,
        p: Option<usize>,
    ) -> Result<Self, EventsError> {
        let mut meta_horizon = None;
        let mut meta_p = None;
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            let lineno = i + 1;
            if trimmed.is_empty() {
                continue;
            }
            if let Some(c) = trimmed.strip_prefix('#') {
                parse_meta(c.trim(), lineno, &mut meta_horizon, &mut meta_p)?;
                continue;
            }
            if !seen_header {
                if trimmed != "node,time" {
                    return Err(EventsError::Parse {
                        line: lineno,
                        reason: format!("expected header `node,time`, found `{trimmed}`"),
                    });
                }
                seen_header = true;
                continue;
            }
            let (node, time) = trimmed.split_once(',').ok_or_else(|| EventsError::Parse {
                line: lineno,
                reason: "expected `node,time`".into(),
            })?;
            let node = node
                .trim()
                .parse::<usize>()
                .map_err(|e| EventsError::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            rows.push((node, parse_f64(time.trim(), lineno)?));
        }
        Self::from_rows(rows, horizon.or(meta_horizon), p.or(meta_p))
    }

    /// One JSON object per line: `{"node":0,"time":1.25}`, after `#`
    /// comment lines in the same form as the CSV.
    pub fn write_jsonl<W: Write>(&self, mut w: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "# horizon={}", fmt_time(self.horizon))?;
        writeln!(w, "# nodes={}", self.p)?;
        for (t, j) in self.merged() {
            writeln!(w, "{{\"node\":{j},\"time\":{}}}", fmt_time(t))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(
        r: R,
        horizon: Option<f64>,
        p: Option<usize>,
    ) -> Result<Self, EventsError> {
        #[derive(Deserialize)]
        struct Row {
            node: usize,
            time: f64,
        }
        let mut meta_horizon = None;
        let mut meta_p = None;
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            let lineno = i + 1;
            if trimmed.is_empty() {
                continue;
            }
            if let Some(c) = trimmed.strip_prefix('#') {
                parse_meta(c.trim(), lineno, &mut meta_horizon, &mut meta_p)?;
                continue;
            }
            let row: Row = serde_json::from_str(trimmed).map_err(|e| EventsError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
            rows.push((row.node, row.time));
        }
        Self::from_rows(rows, horizon.or(meta_horizon), p.or(meta_p))
    }

    fn from_rows(
        rows: Vec<(usize, f64)>,
        horizon: Option<f64>,
        p: Option<usize>,
    ) -> Result<Self, EventsError> {
        let inferred_p = rows.iter().map(|&(j, _)| j + 1).max().unwrap_or(0);
        let p = p.unwrap_or(inferred_p);
        if inferred_p > p {
            return Err(EventsError::WrongNodeCount {
                expected: p,
                got: inferred_p,
            });
        }
        let horizon = horizon
            .or_else(|| rows.iter().map(|&(_, t)| t).reduce(f64::max))
            .unwrap_or(1.0);
        let mut times = vec![Vec::new(); p];
        for (j, t) in rows {
            times[j].push(t);
        }
        for seq in &mut times {
            seq.sort_by(f64::total_cmp);
        }
        Self::new(horizon, times)
    }
}

fn fmt_time(t: f64) -> String {
    format!("{t:.16e}")
}

/// `horizon=` and `nodes=` comments; other comments are ignored.
fn parse_meta(
    c: &str,
    line: usize,
    horizon: &mut Option<f64>,
    p: &mut Option<usize>,
) -> Result<(), EventsError> {
    if let Some(v) = c.strip_prefix("horizon=") {
        *horizon = Some(parse_f64(v, line)?);
    } else if let Some(v) = c.strip_prefix("nodes=") {
        *p = Some(v.parse::<usize>().map_err(|e| EventsError::Parse {
            line,
            reason: e.to_string(),
        })?);
    }
    Ok(())
}

fn parse_f64(s: &str, line: usize) -> Result<f64, EventsError> {
    s.parse::<f64>().map_err(|e| EventsError::Parse {
        line,
        reason: format!("`{s}`: {e}"),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Length of the window over which the background envelope is taken.
    /// Defaults to the transfer support (or horizon / 100 without edges).
    pub envelope_window: Option<f64>,
    /// Dominating rates above this abort the run.
    pub max_rate: f64,
    pub max_events: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            envelope_window: None,
            max_rate: 1e8,
            max_events: 50_000_000,
        }
    }
}

const STREAM_WAIT: u64 = 0;
const STREAM_ACCEPT: u64 = 1;
const STREAM_ATTRIBUTE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Kernels grouped by source node.
struct Fanout<'a> {
    out: Vec<Vec<(usize, &'a TransferFunction)>>,
    bound: Vec<f64>,
}

impl<'a> Fanout<'a> {
    fn new(model: &'a ModelSpec) -> Self {
        let p = model.p();
        let mut out = vec![Vec::new(); p];
        let mut bound = vec![0.0; p];
        for (j, k, f) in model.edges() {
            out[k].push((j, f));
            bound[k] += f.positive_bound();
        }
        Self { out, bound }
    }
}

/// Draws one trajectory by thinning. Deterministic in `(model, seed)`.
pub fn simulate(model: &ModelSpec, seed: u64) -> Result<EventData, SimError> {
    simulate_with(model, seed, &SimOptions::default())
}

pub fn simulate_with(
    model: &ModelSpec,
    seed: u64,
    opts: &SimOptions,
) -> Result<EventData, SimError> {
    let p = model.p();
    let horizon = model.horizon();
    let support = model.support();
    let link = model.link();
    let window = opts.envelope_window.unwrap_or(if support > 0.0 {
        support
    } else {
        horizon / 100.0
    });
    let fanout = Fanout::new(model);

    let mut wait_rng = stream(seed, STREAM_WAIT);
    let mut accept_rng = stream(seed, STREAM_ACCEPT);
    let mut attribute_rng = stream(seed, STREAM_ATTRIBUTE);

    let mut times: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut recent: VecDeque<(f64, usize)> = VecDeque::new();
    let mut psi = vec![0.0; p];
    let mut total_events = 0usize;

    let mut t = 0.0;
    let mut envelope_end = 0.0;
    let mut envelope = 0.0;
    while t < horizon {
        if t >= envelope_end {
            envelope_end = (t + window).min(horizon);
            envelope = model
                .backgrounds()
                .iter()
                .map(|b| link.apply(b.sup_on(t, envelope_end)))
                .sum();
        }
        while recent.front().is_some_and(|&(u, _)| t - u > support) {
            recent.pop_front();
        }
        let rate = envelope + recent.iter().map(|&(_, k)| fanout.bound[k]).sum::<f64>();
        if !rate.is_finite() || rate > opts.max_rate {
            return Err(SimError::Diverged {
                time: t,
                rate,
                events: total_events,
            });
        }
        if rate <= 0.0 {
            t = envelope_end;
            continue;
        }
        let u: f64 = 1.0 - wait_rng.random::<f64>();
        let next = t + (-u.ln()) / rate;
        if next >= envelope_end {
            t = envelope_end;
            continue;
        }
        t = next;

        for (j, v) in psi.iter_mut().enumerate() {
            *v = model.background(j).value(t);
        }
        for &(s, k) in &recent {
            let lag = t - s;
            for &(j, f) in &fanout.out[k] {
                psi[j] += f.value(lag);
            }
        }
        let intensity: f64 = psi.iter().map(|&v| link.apply(v)).sum();
        if intensity > rate * (1.0 + 1e-9) {
            return Err(SimError::BoundViolated {
                time: t,
                intensity,
                bound: rate,
            });
        }
        let a: f64 = accept_rng.random();
        if a * rate >= intensity {
            continue;
        }
        let target = attribute_rng.random::<f64>() * intensity;
        let mut acc = 0.0;
        let mut node = p - 1;
        for (j, &v) in psi.iter().enumerate() {
            acc += link.apply(v);
            if target < acc {
                node = j;
                break;
            }
        }
        // Guard against round-off selecting a node with zero intensity.
        if link.apply(psi[node]) <= 0.0 {
            if let Some(j) = (0..p).rev().find(|&j| link.apply(psi[j]) > 0.0) {
                node = j;
            }
        }
        times[node].push(t);
        recent.push_back((t, node));
        total_events += 1;
        if total_events > opts.max_events {
            return Err(SimError::Diverged {
                time: t,
                rate,
                events: total_events,
            });
        }
    }

    Ok(EventData {
        p,
        horizon,
        times,
        provenance: Some(Provenance {
            seed,
            model_hash: model.content_hash(),
        }),
    })
}

/// Height of one memoized strip of the planar Poisson field.
const STRIP_HEIGHT: f64 = 16.0;

/// Lazily realized unit-rate Poisson field on `[0, T] × [0, ∞)` for one node,
/// generated in horizontal strips that are never redrawn.
struct PoissonField {
    seed: u64,
    node: u64,
    horizon: f64,
    points: Vec<(f64, f64)>,
    strips: u64,
}

impl PoissonField {
    fn new(seed: u64, node: usize, horizon: f64) -> Self {
        Self {
            seed,
            node: node as u64,
            horizon,
            points: Vec::new(),
            strips: 0,
        }
    }

    fn cover(&mut self, height: f64) {
        while (self.strips as f64) * STRIP_HEIGHT < height {
            let mut rng = stream(self.seed, (self.node << 32) | self.strips);
            let base = self.strips as f64 * STRIP_HEIGHT;
            let n = Poisson::new(self.horizon * STRIP_HEIGHT)
                .expect("positive mean")
                .sample(&mut rng) as usize;
            for _ in 0..n {
                let t = (1.0 - rng.random::<f64>()) * self.horizon;
                let y = base + rng.random::<f64>() * STRIP_HEIGHT;
                self.points.push((t, y));
            }
            self.strips += 1;
        }
    }
}

/// Runs `n_iters` rounds of the iterative thinning construction: round 1
/// thins the field against `h(ν_j)`, each later round against the intensity
/// induced by the previous round's events. Returns the last round.
pub fn simulate_iterative(
    model: &ModelSpec,
    n_iters: usize,
    seed: u64,
) -> Result<EventData, SimError> {
    Ok(iterative_rounds(model, n_iters, seed)?
        .pop()
        .expect("at least one round"))
}

/// All rounds `N^(1), …, N^(n_iters)` of the iterative construction.
pub fn iterative_rounds(
    model: &ModelSpec,
    n_iters: usize,
    seed: u64,
) -> Result<Vec<EventData>, SimError> {
    let p = model.p();
    let horizon = model.horizon();
    let support = model.support();
    let link = model.link();
    let n_iters = n_iters.max(1);

    let mut incoming: Vec<Vec<(usize, &TransferFunction)>> = vec![Vec::new(); p];
    for (j, k, f) in model.edges() {
        incoming[j].push((k, f));
    }
    let mut fields: Vec<PoissonField> = (0..p)
        .map(|j| PoissonField::new(seed, j, horizon))
        .collect();

    let mut rounds = Vec::with_capacity(n_iters);
    let mut previous: Vec<Vec<f64>> = vec![Vec::new(); p];
    for _ in 0..n_iters {
        let mut current = Vec::with_capacity(p);
        for j in 0..p {
            let mut bound = link.apply(model.background(j).upper_bound(horizon));
            for &(k, f) in &incoming[j] {
                bound += f.positive_bound() * max_in_window(&previous[k], support) as f64;
            }
            if !bound.is_finite() || bound > 1e7 {
                return Err(SimError::Diverged {
                    time: horizon,
                    rate: bound,
                    events: previous.iter().map(Vec::len).sum(),
                });
            }
            let field = &mut fields[j];
            field.cover(bound);
            let mut accepted: Vec<f64> = field
                .points
                .iter()
                .filter(|&&(_, y)| y < bound)
                .filter(|&&(t, y)| {
                    let mut psi = model.background(j).value(t);
                    for &(k, f) in &incoming[j] {
                        let src = &previous[k];
                        let hi = src.partition_point(|&u| u < t);
                        let lo = src.partition_point(|&u| u < t - support);
                        psi += src[lo..hi].iter().map(|&u| f.value(t - u)).sum::<f64>();
                    }
                    y <= link.apply(psi)
                })
                .map(|&(t, _)| t)
                .collect();
            accepted.sort_by(f64::total_cmp);
            accepted.dedup();
            current.push(accepted);
        }
        rounds.push(EventData {
            p,
            horizon,
            times: current.clone(),
            provenance: Some(Provenance {
                seed,
                model_hash: model.content_hash(),
            }),
        });
        previous = current;
    }
    Ok(rounds)
}

/// Largest number of events in any window `[t - width, t)`.
fn max_in_window(times: &[f64], width: f64) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] > width {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, Background, Edge, Preset};

    fn poisson_model(rate: f64, p: usize, horizon: f64) -> ModelSpec {
        ModelSpec::new(
            horizon,
            vec![Background::Constant { level: rate }; p],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let m = preset(&Preset::Setting1_2, 21, 2.0, 1).unwrap();
        let a = simulate(&m, 42).unwrap();
        let b = simulate(&m, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn events_are_valid() {
        let m = preset(&Preset::Setting1_1, 21, 3.0, 2).unwrap();
        let ev = simulate(&m, 5).unwrap();
        for j in 0..ev.p() {
            let s = ev.times(j);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&t| t > 0.0 && t <= 3.0));
        }
        assert!(ev.count(0) > 0);
        assert_eq!(ev.counting(0, 3.0), ev.count(0));
        assert_eq!(ev.counting(0, 0.0), 0);
    }

    #[test]
    fn zero_rate_gives_no_events() {
        let m = poisson_model(0.0, 2, 5.0);
        assert_eq!(simulate(&m, 1).unwrap().total(), 0);
    }

    #[test]
    fn rejects_invalid_event_times() {
        assert!(EventData::new(1.0, vec![vec![0.5, 0.4]]).is_err());
        assert!(EventData::new(1.0, vec![vec![0.0]]).is_err());
        assert!(EventData::new(1.0, vec![vec![1.5]]).is_err());
        assert!(EventData::new(1.0, vec![vec![0.2, 1.0]]).is_ok());
    }

    #[test]
    fn csv_and_jsonl_round_trip_exactly() {
        let m = preset(&Preset::Setting1_2, 21, 1.0, 3).unwrap();
        let ev = simulate(&m, 9).unwrap();
        let mut buf = Vec::new();
        ev.write_csv(&mut buf, &["test".into()]).unwrap();
        let back = EventData::read_csv(buf.as_slice(), None, None).unwrap();
        assert_eq!(back.all_times(), ev.all_times());
        assert_eq!(back.horizon(), ev.horizon());

        let mut buf = Vec::new();
        ev.write_jsonl(&mut buf, &[]).unwrap();
        let back = EventData::read_jsonl(buf.as_slice(), None, None).unwrap();
        assert_eq!(back.all_times(), ev.all_times());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err =
            EventData::read_csv("node,time\n0,abc\n".as_bytes(), Some(1.0), None).unwrap_err();
        assert!(matches!(err, EventsError::Parse { line: 2, .. }));
        let err = EventData::read_csv("n,t\n".as_bytes(), Some(1.0), None).unwrap_err();
        assert!(matches!(err, EventsError::Parse { line: 1, .. }));
    }

    #[test]
    fn first_iterative_round_ignores_interactions() {
        let m = preset(&Preset::Setting1_2, 21, 1.0, 3).unwrap();
        let no_edges = ModelSpec::new(1.0, m.backgrounds().to_vec(), vec![]).unwrap();
        let a = simulate_iterative(&m, 1, 11).unwrap();
        let b = simulate_iterative(&no_edges, 1, 11).unwrap();
        assert_eq!(a.all_times(), b.all_times());
    }

    #[test]
    fn iterative_rounds_reuse_the_field() {
        // A chain 2 -> 1 -> 0 settles after three rounds.
        let edges = vec![
            Edge {
                target: 0,
                source: 1,
                transfer: TransferFunction::standard_excitatory(),
            },
            Edge {
                target: 1,
                source: 2,
                transfer: TransferFunction::standard_excitatory(),
            },
        ];
        let m = ModelSpec::new(2.0, vec![Background::Constant { level: 20.0 }; 3], edges).unwrap();
        let rounds = iterative_rounds(&m, 5, 4).unwrap();
        assert_eq!(rounds[2].all_times(), rounds[3].all_times());
        assert_eq!(rounds[3].all_times(), rounds[4].all_times());
        assert_eq!(rounds[0].times(2), rounds[4].times(2));
    }

    #[test]
    fn window_count() {
        assert_eq!(max_in_window(&[], 1.0), 0);
        assert_eq!(max_in_window(&[0.1, 0.2, 0.25, 0.9], 0.2), 3);
    }
}
