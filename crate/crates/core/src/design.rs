//! Regression statistics shared by all node fits.
//!
//! For bases `φ₀` on `[0, T]` and `φ₁` on `[0, b]` the feature vector is
//! `Ψ(t) = (φ₀(t), Ψ₁(t), …, Ψ_p(t))` with `Ψ_k(t) = Σ_{u ∈ N_k, t-b ≤ u < t} φ₁(t - u)`.
//! The cache holds `G = (1/T) ∫ Ψ Ψᵀ dt` and, for every node `j`,
//! `α_j = (1/T) Σ_{t ∈ N_j} Ψ(t)`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::EventData;
use crate::spline::{gauss_legendre, SplineBasis, SplineError};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("transfer support must be positive and finite, got {0}")]
    InvalidSupport(f64),
    #[error("grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("design contains non-finite values")]
    NonFinite,
    #[error("cache file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisDims {
    pub order: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub background: BasisDims,
    pub transfer: BasisDims,
    /// Transfer support `b`.
    pub support: f64,
    /// `None` integrates event pairs exactly. `Some(dt)` integrates piece by
    /// piece over a uniform grid of step `dt` refined at every feature
    /// breakpoint; also exact, slower on dense data.
    #[serde(default)]
    pub grid_dt: Option<f64>,
    /// Replace the first background basis function by the constant 1.
    #[serde(default)]
    pub constant_background: bool,
}

impl DesignConfig {
    pub fn new(order: usize, m0: usize, m1: usize, support: f64) -> Self {
        Self {
            background: BasisDims { order, dim: m0 },
            transfer: BasisDims { order, dim: m1 },
            support,
            grid_dt: None,
            constant_background: false,
        }
    }

    pub fn with_grid_dt(mut self, dt: Option<f64>) -> Self {
        self.grid_dt = dt;
        self
    }
}

/// Integration pieces per accumulation block of the grid integrator.
/// Partial sums are combined in block order, so results do not depend on
/// the number of worker threads.
const BLOCK: usize = 4096;
/// Events per accumulation chunk of the pairwise integrator.
const CHUNK: usize = 8192;
/// Chunks held in memory at once.
const WAVE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignCache {
    basis0: SplineBasis,
    basis1: SplineBasis,
    p: usize,
    horizon: f64,
    grid_n: usize,
    grid_dt: Option<f64>,
    g: DMatrix<f64>,
    alpha: Vec<DVector<f64>>,
    counts: Vec<usize>,
    psi_mean: DVector<f64>,
}

impl DesignCache {
    /// Assembles a cache from precomputed parts. `g` must be symmetric.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        basis0: SplineBasis,
        basis1: SplineBasis,
        horizon: f64,
        g: DMatrix<f64>,
        alpha: Vec<DVector<f64>>,
        counts: Vec<usize>,
        psi_mean: DVector<f64>,
    ) -> Self {
        let p = alpha.len();
        let dim = basis0.dim() + p * basis1.dim();
        assert_eq!(g.nrows(), dim, "G has the wrong size");
        assert_eq!(g.ncols(), dim, "G has the wrong size");
        assert!(
            alpha.iter().all(|a| a.len() == dim),
            "alpha has the wrong size"
        );
        assert_eq!(counts.len(), p);
        assert_eq!(psi_mean.len(), dim);
        Self {
            basis0,
            basis1,
            p,
            horizon,
            grid_n: 0,
            grid_dt: None,
            g,
            alpha,
            counts,
            psi_mean,
        }
    }

    pub fn basis0(&self) -> &SplineBasis {
        &self.basis0
    }

    pub fn basis1(&self) -> &SplineBasis {
        &self.basis1
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn m0(&self) -> usize {
        self.basis0.dim()
    }

    pub fn m1(&self) -> usize {
        self.basis1.dim()
    }

    /// Length of a coefficient vector, `m₀ + p·m₁`.
    pub fn dim(&self) -> usize {
        self.m0() + self.p * self.m1()
    }

    /// Number of integration pieces of the grid integrator; 0 for the
    /// pairwise one.
    pub fn grid_len(&self) -> usize {
        self.grid_n
    }

    /// Grid step, when the grid integrator was used.
    pub fn grid_dt(&self) -> Option<f64> {
        self.grid_dt
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn alpha(&self, j: usize) -> &DVector<f64> {
        &self.alpha[j]
    }

    pub fn event_count(&self, j: usize) -> usize {
        self.counts[j]
    }

    pub fn event_counts(&self) -> &[usize] {
        &self.counts
    }

    /// `(1/T) ∫ Ψ(t) dt`.
    pub fn psi_mean(&self) -> &DVector<f64> {
        &self.psi_mean
    }

    /// Number of groups including the background group 0.
    pub fn n_groups(&self) -> usize {
        self.p + 1
    }

    /// Coefficient range of group `k`: 0 is the background, `k ≥ 1` is the
    /// transfer from node `k - 1`.
    pub fn group_range(&self, k: usize) -> std::ops::Range<usize> {
        if k == 0 {
            0..self.m0()
        } else {
            let start = self.m0() + (k - 1) * self.m1();
            start..start + self.m1()
        }
    }

    pub fn block(&self, k1: usize, k2: usize) -> DMatrixView<'_, f64> {
        let r = self.group_range(k1);
        let c = self.group_range(k2);
        self.g.view((r.start, c.start), (r.len(), c.len()))
    }

    pub fn alpha_group(&self, j: usize, k: usize) -> DVectorView<'_, f64> {
        let r = self.group_range(k);
        self.alpha[j].rows(r.start, r.len())
    }

    /// `ℓ_j(β) = βᵀGβ − 2βᵀα_j`.
    pub fn loss(&self, j: usize, beta: &DVector<f64>) -> f64 {
        let gb = &self.g * beta;
        beta.dot(&gb) - 2.0 * beta.dot(&self.alpha[j])
    }

    /// Same cache with nodes relabelled: node `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let dim = self.dim();
        let m0 = self.m0();
        let m1 = self.m1();
        let mut idx = vec![0usize; dim];
        for (i, slot) in idx.iter_mut().enumerate().take(m0) {
            *slot = i;
        }
        for (k, &pk) in perm.iter().enumerate() {
            for l in 0..m1 {
                idx[m0 + pk * m1 + l] = m0 + k * m1 + l;
            }
        }
        let g = DMatrix::from_fn(dim, dim, |r, c| self.g[(idx[r], idx[c])]);
        let mut alpha = vec![DVector::zeros(dim); self.p];
        let mut counts = vec![0; self.p];
        for (j, &pj) in perm.iter().enumerate() {
            alpha[pj] = DVector::from_fn(dim, |r, _| self.alpha[j][idx[r]]);
            counts[pj] = self.counts[j];
        }
        let psi_mean = DVector::from_fn(dim, |r, _| self.psi_mean[idx[r]]);
        Self {
            g,
            alpha,
            counts,
            psi_mean,
            ..self.clone()
        }
    }

    const MAGIC: &'static [u8; 4] = b"HKDC";
    const VERSION: u32 = 1;

    /// Binary dump: magic `HKDC`, version, then little-endian fields.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DesignError> {
        w.write_all(Self::MAGIC)?;
        put_u64(&mut w, Self::VERSION as u64)?;
        for b in [&self.basis0, &self.basis1] {
            put_u64(&mut w, b.order() as u64)?;
            put_u64(&mut w, b.dim() as u64)?;
            put_f64(&mut w, b.interval().0)?;
            put_f64(&mut w, b.interval().1)?;
            put_u64(&mut w, b.has_constant_first() as u64)?;
        }
        put_u64(&mut w, self.p as u64)?;
        put_f64(&mut w, self.horizon)?;
        put_u64(&mut w, self.grid_n as u64)?;
        put_f64(&mut w, self.grid_dt.unwrap_or(0.0))?;
        for &c in &self.counts {
            put_u64(&mut w, c as u64)?;
        }
        let dim = self.dim();
        for r in 0..dim {
            for c in r..dim {
                put_f64(&mut w, self.g[(r, c)])?;
            }
        }
        for a in &self.alpha {
            for &v in a.iter() {
                put_f64(&mut w, v)?;
            }
        }
        for &v in self.psi_mean.iter() {
            put_f64(&mut w, v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DesignError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(DesignError::Format("not a design cache".into()));
        }
        let version = get_u64(&mut r)?;
        if version != Self::VERSION as u64 {
            return Err(DesignError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let mut bases = Vec::with_capacity(2);
        for _ in 0..2 {
            let order = get_usize(&mut r)?;
            let dim = get_usize(&mut r)?;
            let lo = get_f64(&mut r)?;
            let hi = get_f64(&mut r)?;
            let constant = get_u64(&mut r)? != 0;
            bases.push(if constant {
                SplineBasis::with_constant_first(order, dim, (lo, hi))?
            } else {
                SplineBasis::new(order, dim, (lo, hi))?
            });
        }
        let basis1 = bases.pop().expect("two bases");
        let basis0 = bases.pop().expect("two bases");
        let p = get_usize(&mut r)?;
        let horizon = get_f64(&mut r)?;
        let grid_n = get_usize(&mut r)?;
        let grid_dt = Some(get_f64(&mut r)?).filter(|&dt| dt > 0.0);
        let counts = (0..p)
            .map(|_| get_usize(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let dim = basis0.dim() + p * basis1.dim();
        let mut g = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for c in i..dim {
                let v = get_f64(&mut r)?;
                g[(i, c)] = v;
                g[(c, i)] = v;
            }
        }
        let mut alpha = Vec::with_capacity(p);
        for _ in 0..p {
            let v = (0..dim)
                .map(|_| get_f64(&mut r))
                .collect::<Result<Vec<_>, _>>()?;
            alpha.push(DVector::from_vec(v));
        }
        let psi_mean = (0..dim)
            .map(|_| get_f64(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            basis0,
            basis1,
            p,
            horizon,
            grid_n,
            grid_dt,
            g,
            alpha,
            counts,
            psi_mean: DVector::from_vec(psi_mean),
        })
    }
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn get_usize<R: Read>(r: &mut R) -> Result<usize, DesignError> {
    let v = get_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&v| v < (1 << 40))
        .ok_or_else(|| DesignError::Format(format!("implausible size {v}")))
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// `Ψ_k(t)` for all nodes, concatenated (length `p·m₁`). Only events with
/// `u < t` and `t - u ≤ b` contribute.
pub fn compute_features(events: &EventData, basis1: &SplineBasis, t: f64) -> Vec<f64> {
    let m1 = basis1.dim();
    let b = basis1.interval().1;
    let mut out = vec![0.0; events.p() * m1];
    for k in 0..events.p() {
        let seq = events.times(k);
        let hi = seq.partition_point(|&u| u < t);
        let lo = seq.partition_point(|&u| u < t - b);
        for &u in &seq[lo..hi] {
            basis1.for_each_nonzero(t - u, |i, v| out[k * m1 + i] += v);
        }
    }
    out
}

/// Sparse `Ψ(t)` for a nondecreasing sequence of query times.
struct FeatureCursor<'a> {
    merged: &'a [(f64, usize)],
    basis0: &'a SplineBasis,
    basis1: &'a SplineBasis,
    support: f64,
    lo: usize,
    hi: usize,
    dense: Vec<f64>,
    touched: Vec<usize>,
    seen: Vec<bool>,
}

impl<'a> FeatureCursor<'a> {
    fn new(
        merged: &'a [(f64, usize)],
        basis0: &'a SplineBasis,
        basis1: &'a SplineBasis,
        dim: usize,
        start: f64,
    ) -> Self {
        let support = basis1.interval().1;
        let lo = merged.partition_point(|&(u, _)| u < start - support);
        Self {
            merged,
            basis0,
            basis1,
            support,
            lo,
            hi: lo,
            dense: vec![0.0; dim],
            touched: Vec::with_capacity(64),
            seen: vec![false; dim],
        }
    }

    /// Loads `Ψ(t)` into the scratch buffers. With `background = false`
    /// the group-0 entries are left out.
    fn load(&mut self, t: f64, background: bool) {
        for &i in &self.touched {
            self.dense[i] = 0.0;
            self.seen[i] = false;
        }
        self.touched.clear();
        while self.hi < self.merged.len() && self.merged[self.hi].0 < t {
            self.hi += 1;
        }
        while self.lo < self.hi && self.merged[self.lo].0 < t - self.support {
            self.lo += 1;
        }
        let m0 = self.basis0.dim();
        let m1 = self.basis1.dim();
        let (dense, seen, touched) = (&mut self.dense, &mut self.seen, &mut self.touched);
        if background {
            self.basis0.for_each_nonzero(t, |i, v| {
                if !seen[i] {
                    seen[i] = true;
                    touched.push(i);
                }
                dense[i] += v;
            });
        }
        for &(u, k) in &self.merged[self.lo..self.hi] {
            let base = m0 + k * m1;
            self.basis1.for_each_nonzero(t - u, |i, v| {
                let idx = base + i;
                if !seen[idx] {
                    seen[idx] = true;
                    touched.push(idx);
                }
                dense[idx] += v;
            });
        }
        touched.sort_unstable();
    }
}

/// Sorted breakpoints of `[0, T]`: the uniform grid, the background knots
/// and every event time shifted by each transfer knot. Every feature is a
/// polynomial between consecutive breakpoints.
fn partition(
    merged: &[(f64, usize)],
    basis0: &SplineBasis,
    basis1: &SplineBasis,
    horizon: f64,
    grid_n: usize,
) -> Vec<f64> {
    let mut knots1: Vec<f64> = basis1.knots().to_vec();
    knots1.dedup();
    let mut points = Vec::with_capacity(grid_n + 1 + merged.len() * knots1.len());
    points.extend((0..=grid_n).map(|i| horizon * i as f64 / grid_n as f64));
    points.extend(
        basis0
            .knots()
            .iter()
            .copied()
            .filter(|&x| x > 0.0 && x < horizon),
    );
    for &(u, _) in merged {
        points.extend(
            knots1
                .iter()
                .map(|&k| u + k)
                .filter(|&x| x > 0.0 && x < horizon),
        );
    }
    points.sort_unstable_by(f64::total_cmp);
    points.dedup();
    points
}

fn distinct(knots: &[f64]) -> Vec<f64> {
    let mut k = knots.to_vec();
    k.dedup();
    k
}

/// Merges `a + off_a` and `b + off_b` (both sorted) restricted to
/// `(lo, hi)`, with `lo` and `hi` added, into `out`.
fn merge_breaks(
    a: &[f64],
    off_a: f64,
    b: &[f64],
    off_b: f64,
    lo: f64,
    hi: f64,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.push(lo);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x + off_a <= y + off_b => {
                i += 1;
                x + off_a
            }
            (_, Some(&y)) => {
                j += 1;
                y + off_b
            }
            (Some(&x), None) => {
                i += 1;
                x + off_a
            }
            (None, None) => break,
        };
        if x > lo && x < hi && x > *out.last().expect("nonempty") {
            out.push(x);
        }
    }
    out.push(hi);
}

fn nonzeros(basis: &SplineBasis, t: f64, out: &mut Vec<(usize, f64)>) {
    out.clear();
    basis.for_each_nonzero(t, |i, v| out.push((i, v)));
}

/// Exact `∫ Ψ Ψᵀ` outside the background block and `∫ Ψ`, both over
/// `[0, T]`, by summing closed-form integrals over single events and over
/// pairs of events closer than `b`.
fn pairwise_products(
    merged: &[(f64, usize)],
    basis0: &SplineBasis,
    basis1: &SplineBasis,
    horizon: f64,
    dim: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let m0 = basis0.dim();
    let m1 = basis1.dim();
    let b = basis1.interval().1;
    let knots0 = distinct(basis0.knots());
    let knots1 = distinct(basis1.knots());
    let rule_tt = gauss_legendre(basis1.order());
    let rule_bt = gauss_legendre((basis0.order() + basis1.order()).div_ceil(2));
    let step = basis1.order() == 1;

    let chunk = |start: usize| -> (Vec<f64>, Vec<f64>) {
        let mut acc = vec![0.0; dim * dim];
        let mut psi = vec![0.0; dim];
        let mut breaks = Vec::new();
        let (mut nz_a, mut nz_b) = (Vec::new(), Vec::new());
        for i in start..(start + CHUNK).min(merged.len()) {
            let (u, k) = merged[i];
            let end = (u + b).min(horizon);
            if end <= u {
                continue;
            }
            let base_k = m0 + k * m1;

            // Single event: ∫ φ₁(t − u) and ∫ φ₀(t) φ₁(t − u)ᵀ.
            merge_breaks(&knots1, u, &knots0, 0.0, u, end, &mut breaks);
            for w in breaks.windows(2) {
                let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                for (x, wt) in rule_tt.0.iter().zip(&rule_tt.1) {
                    basis1.for_each_nonzero(mid + half * x - u, |c, v| {
                        psi[base_k + c] += wt * half * v
                    });
                }
                for (x, wt) in rule_bt.0.iter().zip(&rule_bt.1) {
                    let t = mid + half * x;
                    nonzeros(basis0, t, &mut nz_a);
                    nonzeros(basis1, t - u, &mut nz_b);
                    for &(a, va) in &nz_a {
                        let row = &mut acc[a * dim..(a + 1) * dim];
                        for &(c, vc) in &nz_b {
                            row[base_k + c] += wt * half * va * vc;
                        }
                    }
                }
            }

            // Pairs (u, v) with u ≤ v < u + b, overlapping on (v, end).
            for (jdx, &(v, k2)) in merged.iter().enumerate().skip(i) {
                if v >= end {
                    break;
                }
                let base_k2 = m0 + k2 * m1;
                let mirror = jdx != i;
                let mut add = |c: usize, c2: usize, x: f64| {
                    acc[(base_k + c) * dim + base_k2 + c2] += x;
                    if mirror {
                        acc[(base_k2 + c2) * dim + base_k + c] += x;
                    }
                };
                if step {
                    // Overlaps of the bins [u + κ_c, u + κ_{c+1}) and
                    // [v + κ_c2, v + κ_{c2+1}) inside (v, end).
                    let mut c2 = 0;
                    for c in 0..m1 {
                        let lo = (u + knots1[c]).max(v);
                        let hi = (u + knots1[c + 1]).min(end);
                        if hi <= lo {
                            continue;
                        }
                        while c2 < m1 && v + knots1[c2 + 1] <= lo {
                            c2 += 1;
                        }
                        let mut q = c2;
                        while q < m1 && v + knots1[q] < hi {
                            let len = hi.min(v + knots1[q + 1]) - lo.max(v + knots1[q]);
                            if len > 0.0 {
                                add(c, q, len);
                            }
                            q += 1;
                        }
                    }
                } else {
                    merge_breaks(&knots1, u, &knots1, v, v, end, &mut breaks);
                    for w in breaks.windows(2) {
                        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                        for (x, wt) in rule_tt.0.iter().zip(&rule_tt.1) {
                            let t = mid + half * x;
                            nonzeros(basis1, t - u, &mut nz_a);
                            nonzeros(basis1, t - v, &mut nz_b);
                            for &(c, va) in &nz_a {
                                for &(c2, vb) in &nz_b {
                                    add(c, c2, wt * half * va * vb);
                                }
                            }
                        }
                    }
                }
            }
        }
        (acc, psi)
    };

    let starts: Vec<usize> = (0..merged.len()).step_by(CHUNK).collect();
    let mut total = vec![0.0; dim * dim];
    let mut psi_total = vec![0.0; dim];
    for wave in starts.chunks(WAVE) {
        let partials: Vec<_> = wave.par_iter().map(|&s| chunk(s)).collect();
        for (acc, psi) in partials {
            total.iter_mut().zip(&acc).for_each(|(t, a)| *t += a);
            psi_total.iter_mut().zip(&psi).for_each(|(t, a)| *t += a);
        }
    }
    let mut g = DMatrix::from_row_slice(dim, dim, &total);
    // Background × transfer entries were filled above the diagonal only, and
    // mirrored pair terms may differ in the last bit.
    for r in 0..dim {
        for c in r + 1..dim {
            g[(c, r)] = g[(r, c)];
        }
    }
    (g, psi_total)
}

/// The same quantities as [`pairwise_products`], integrated piece by piece
/// between consecutive `pieces` breakpoints with Gauss–Legendre rules.
fn piecewise_products(
    merged: &[(f64, usize)],
    pieces: &[f64],
    basis0: &SplineBasis,
    basis1: &SplineBasis,
    dim: usize,
) -> (DMatrix<f64>, Vec<f64>) {
    let m0 = basis0.dim();
    let (l0, l1) = (basis0.order(), basis1.order());
    // Products of transfer features have degree 2(l₁ − 1), background times
    // transfer (l₀ − 1) + (l₁ − 1).
    let rule_tt = gauss_legendre(l1);
    let rule_bt = gauss_legendre((l0 + l1).div_ceil(2));

    let n_blocks = pieces.len().saturating_sub(1).div_ceil(BLOCK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let start = blk * BLOCK;
            let end = ((blk + 1) * BLOCK).min(pieces.len() - 1);
            let mut upper = vec![0.0; dim * dim];
            let mut sum = vec![0.0; dim];
            let mut cur = FeatureCursor::new(merged, basis0, basis1, dim, pieces[start]);
            for w in pieces[start..=end].windows(2) {
                let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                for (x, wt) in rule_tt.0.iter().zip(&rule_tt.1) {
                    cur.load(mid + half * x, false);
                    if cur.touched.is_empty() {
                        break;
                    }
                    let weight = wt * half;
                    let idx = &cur.touched;
                    for (a, &ia) in idx.iter().enumerate() {
                        let va = cur.dense[ia] * weight;
                        sum[ia] += va;
                        let row = &mut upper[ia * dim..(ia + 1) * dim];
                        for &ib in &idx[a..] {
                            row[ib] += va * cur.dense[ib];
                        }
                    }
                }
                if cur.touched.is_empty() {
                    continue;
                }
                for (x, wt) in rule_bt.0.iter().zip(&rule_bt.1) {
                    cur.load(mid + half * x, true);
                    let weight = wt * half;
                    let idx = &cur.touched;
                    let split = idx.partition_point(|&i| i < m0);
                    for &ia in &idx[..split] {
                        let va = cur.dense[ia] * weight;
                        let row = &mut upper[ia * dim..(ia + 1) * dim];
                        for &ib in &idx[split..] {
                            row[ib] += va * cur.dense[ib];
                        }
                    }
                }
            }
            (upper, sum)
        })
        .collect();

    let mut g = DMatrix::zeros(dim, dim);
    let mut psi = vec![0.0; dim];
    for (upper, sum) in &partials {
        for r in 0..dim {
            let row = &upper[r * dim..(r + 1) * dim];
            for c in r..dim {
                g[(r, c)] += row[c];
            }
            psi[r] += sum[r];
        }
    }
    for r in 0..dim {
        for c in r + 1..dim {
            g[(c, r)] = g[(r, c)];
        }
    }
    (g, psi)
}

/// Builds the design for `events` under `config`.
pub fn build_design(events: &EventData, config: &DesignConfig) -> Result<DesignCache, DesignError> {
    let horizon = events.horizon();
    let b = config.support;
    if !(b.is_finite() && b > 0.0) {
        return Err(DesignError::InvalidSupport(b));
    }
    let basis0 = if config.constant_background {
        SplineBasis::with_constant_first(
            config.background.order,
            config.background.dim,
            (0.0, horizon),
        )?
    } else {
        SplineBasis::new(
            config.background.order,
            config.background.dim,
            (0.0, horizon),
        )?
    };
    let basis1 = SplineBasis::new(config.transfer.order, config.transfer.dim, (0.0, b))?;

    let p = events.p();
    let m0 = basis0.dim();
    let dim = m0 + p * basis1.dim();
    let merged = events.merged();

    let (mut g, psi_sum, grid_n, grid_dt) = match config.grid_dt {
        None => {
            let (g, psi) = pairwise_products(&merged, &basis0, &basis1, horizon, dim);
            (g, psi, 0, None)
        }
        Some(requested) => {
            if !(requested.is_finite() && requested > 0.0) {
                return Err(DesignError::InvalidStep(requested));
            }
            let grid_n = (horizon / requested).ceil().max(1.0) as usize;
            let pieces = partition(&merged, &basis0, &basis1, horizon, grid_n);
            let (g, psi) = piecewise_products(&merged, &pieces, &basis0, &basis1, dim);
            (g, psi, pieces.len() - 1, Some(horizon / grid_n as f64))
        }
    };
    g /= horizon;
    let g00 = basis0.gram_matrix(None) / horizon;
    g.view_mut((0, 0), (m0, m0)).copy_from(&g00);

    let mut psi_mean = DVector::from_vec(psi_sum) / horizon;
    for (i, v) in basis0.integrals().into_iter().enumerate() {
        psi_mean[i] = v / horizon;
    }

    let mut alpha = vec![DVector::zeros(dim); p];
    let mut cur = FeatureCursor::new(&merged, &basis0, &basis1, dim, 0.0);
    for &(t, j) in &merged {
        cur.load(t, true);
        let a = &mut alpha[j];
        for &i in &cur.touched {
            a[i] += cur.dense[i];
        }
    }
    for a in &mut alpha {
        *a /= horizon;
    }

    if g.iter().any(|v| !v.is_finite()) || alpha.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
        return Err(DesignError::NonFinite);
    }
    log::debug!(
        "design: dim {dim}, {grid_n} grid pieces, {} events",
        merged.len()
    );

    Ok(DesignCache {
        basis0,
        basis1,
        p,
        horizon,
        grid_n,
        grid_dt,
        g,
        alpha,
        counts: events.counts(),
        psi_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn step_config() -> DesignConfig {
        DesignConfig::new(1, 2, 4, 0.01).with_grid_dt(Some(1e-4))
    }

    #[test]
    fn features_of_single_event_step_basis() {
        let ev = EventData::new(1.0, vec![vec![0.5], vec![]]).unwrap();
        let basis1 = SplineBasis::new(1, 4, (0.0, 0.01)).unwrap();
        let f = compute_features(&ev, &basis1, 0.503);
        assert_eq!(f, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(compute_features(&ev, &basis1, 0.5)
            .iter()
            .all(|&v| v == 0.0));
        assert!(compute_features(&ev, &basis1, 0.52)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn empty_events_leave_only_background_block() {
        let ev = EventData::new(2.0, vec![vec![], vec![]]).unwrap();
        let d = build_design(&ev, &step_config()).unwrap();
        assert!(d.alpha(0).iter().all(|&v| v == 0.0));
        let m0 = d.m0();
        for r in 0..d.dim() {
            for c in 0..d.dim() {
                if r >= m0 || c >= m0 {
                    assert_eq!(d.g()[(r, c)], 0.0);
                }
            }
        }
        assert_abs_diff_eq!(d.g()[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn single_event_step_gram_by_hand() {
        // One event at u = 0.3 on [0, 1]; step bases, m₀ = 2, m₁ = 4, b = 0.01.
        // Ψ_{1,l}(t) is the indicator of (0.3 + 0.0025 l, 0.3 + 0.0025 (l + 1)].
        let ev = EventData::new(1.0, vec![vec![0.3]]).unwrap();
        let d = build_design(&ev, &step_config()).unwrap();
        let m0 = 2;
        for l in 0..4 {
            for l2 in 0..4 {
                let expected = if l == l2 { 0.0025 } else { 0.0 };
                assert_abs_diff_eq!(d.g()[(m0 + l, m0 + l2)], expected, epsilon = 1e-12);
            }
            // Overlap with the first background step [0, 0.5).
            assert_abs_diff_eq!(d.g()[(0, m0 + l)], 0.0025, epsilon = 1e-12);
            assert_abs_diff_eq!(d.g()[(1, m0 + l)], 0.0, epsilon = 1e-12);
        }
        assert_eq!(d.alpha(0)[0], 1.0);
        assert_eq!(d.alpha(0)[1], 0.0);
        assert!(d.alpha(0).rows(m0, 4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_step_only_refines_the_partition() {
        let ev = EventData::new(1.0, vec![vec![0.3, 0.3041], vec![0.302]]).unwrap();
        let cfg = DesignConfig::new(4, 5, 4, 0.01);
        let coarse = build_design(&ev, &cfg.clone().with_grid_dt(Some(0.25))).unwrap();
        let fine = build_design(&ev, &cfg.with_grid_dt(Some(1e-4))).unwrap();
        assert!((coarse.g() - fine.g()).amax() < 1e-13);
        assert!(fine.grid_len() > coarse.grid_len());
        let exact = build_design(&ev, &DesignConfig::new(4, 5, 4, 0.01)).unwrap();
        assert!((exact.g() - fine.g()).amax() < 1e-13);
        assert!((exact.psi_mean() - fine.psi_mean()).amax() < 1e-13);
    }

    #[test]
    fn pairwise_and_grid_integrators_agree_for_step_bases() {
        let ev = EventData::new(0.5, vec![vec![0.1, 0.1031, 0.4951], vec![0.1017, 0.2]]).unwrap();
        let cfg = DesignConfig::new(1, 3, 5, 0.01);
        let exact = build_design(&ev, &cfg).unwrap();
        let grid = build_design(&ev, &cfg.with_grid_dt(Some(0.01))).unwrap();
        assert!((exact.g() - grid.g()).amax() < 1e-13);
        assert!((exact.psi_mean() - grid.psi_mean()).amax() < 1e-13);
    }

    #[test]
    fn binary_dump_round_trip() {
        let ev = EventData::new(1.0, vec![vec![0.3, 0.305], vec![0.302]]).unwrap();
        let d = build_design(&ev, &DesignConfig::new(3, 4, 4, 0.01)).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = DesignCache::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert!(DesignCache::read_from(&buf[..10]).is_err());
        assert!(DesignCache::read_from(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn group_ranges_tile_the_vector() {
        let ev = EventData::new(1.0, vec![vec![0.3], vec![], vec![0.5]]).unwrap();
        let d = build_design(&ev, &DesignConfig::new(2, 3, 5, 0.01)).unwrap();
        assert_eq!(d.dim(), 3 + 3 * 5);
        let mut next = 0;
        for k in 0..d.n_groups() {
            let r = d.group_range(k);
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, d.dim());
    }
}
