//! Normalized B-spline bases with equally spaced, clamped knots.
//!
//! A basis is described by its *order* `l` (piecewise polynomials of degree
//! `l - 1`), its dimension `m = K + l` with `K` interior knots, and the
//! interval it lives on. Order 1 gives indicator step functions, order 4 gives
//! cubic splines. The basis functions are the partition-of-unity B-splines
//! produced by the Cox–de Boor recursion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported spline order. Evaluation uses a fixed stack buffer.
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be between 1 and {MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("basis dimension {dim} is smaller than the spline order {order}")]
    InvalidDimension { order: usize, dim: usize },
    #[error("invalid interval [{0}, {1}]: the left endpoint must be below the right endpoint")]
    InvalidInterval(f64, f64),
    #[error("a basis with a leading constant term needs at least 2 functions, got {0}")]
    ConstantBasisTooSmall(usize),
}

/// Serialized form of a [`SplineBasis`]; knots are rebuilt on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub order: usize,
    pub dim: usize,
    pub interval: [f64; 2],
    #[serde(default)]
    pub constant_first: bool,
}

/// An immutable B-spline basis on `[lo, hi]`.
///
/// When `constant_first` is set, the first function is replaced by the
/// constant 1 (the sum of all B-splines). The span of the basis is unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct SplineBasis {
    order: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    spacing: f64,
    knots: Vec<f64>,
    constant_first: bool,
}

impl SplineBasis {
    /// Builds a basis of the given order and dimension with `dim - order`
    /// equally spaced interior knots and boundary knots repeated `order` times.
    pub fn new(order: usize, dim: usize, interval: (f64, f64)) -> Result<Self, SplineError> {
        let (lo, hi) = interval;
        if order == 0 || order > MAX_ORDER {
            return Err(SplineError::InvalidOrder(order));
        }
        if dim < order {
            return Err(SplineError::InvalidDimension { order, dim });
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SplineError::InvalidInterval(lo, hi));
        }
        let interior = dim - order;
        let spacing = (hi - lo) / (interior + 1) as f64;
        let mut knots = Vec::with_capacity(dim + order);
        knots.extend(std::iter::repeat_n(lo, order));
        knots.extend((1..=interior).map(|i| lo + i as f64 * spacing));
        knots.extend(std::iter::repeat_n(hi, order));
        Ok(Self {
            order,
            dim,
            lo,
            hi,
            spacing,
            knots,
            constant_first: false,
        })
    }

    /// Same span as [`SplineBasis::new`], but the first basis function is the
    /// constant 1 on the interval.
    pub fn with_constant_first(
        order: usize,
        dim: usize,
        interval: (f64, f64),
    ) -> Result<Self, SplineError> {
        if dim < 2 {
            return Err(SplineError::ConstantBasisTooSmall(dim));
        }
        let mut basis = Self::new(order, dim, interval)?;
        basis.constant_first = true;
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> usize {
        self.dim - self.order
    }

    /// Distance between consecutive distinct knots.
    pub fn knot_spacing(&self) -> f64 {
        self.spacing
    }

    pub fn has_constant_first(&self) -> bool {
        self.constant_first
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            order: self.order,
            dim: self.dim,
            interval: [self.lo, self.hi],
            constant_first: self.constant_first,
        }
    }

    /// Index `s` of the knot span with `knots[s] <= t < knots[s + 1]`; the
    /// right endpoint belongs to the last span.
    fn span(&self, t: f64) -> usize {
        let last = self.dim - 1;
        if t >= self.hi {
            return last;
        }
        let guess = ((t - self.lo) / self.spacing).floor();
        let guess = if guess.is_finite() && guess > 0.0 {
            guess as usize
        } else {
            0
        };
        let mut s = (self.order - 1 + guess).min(last);
        while s > self.order - 1 && t < self.knots[s] {
            s -= 1;
        }
        while s < last && t >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Evaluates the `order` B-splines that can be nonzero at `t`.
    ///
    /// Returns the index of the first one; values are written to
    /// `out[..order]`. Returns `None` for `t` outside the interval.
    /// The leading-constant substitution is not applied here.
    fn local_values(&self, t: f64, out: &mut [f64; MAX_ORDER]) -> Option<usize> {
        if !(t >= self.lo && t <= self.hi) {
            return None;
        }
        let s = self.span(t);
        let degree = self.order - 1;
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = t - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Some(s - degree)
    }

    /// Calls `f(index, value)` for every basis function that may be nonzero
    /// at `t`, in increasing index order. Nothing is reported outside the
    /// interval.
    pub fn for_each_nonzero(&self, t: f64, mut f: impl FnMut(usize, f64)) {
        let mut vals = [0.0; MAX_ORDER];
        let Some(first) = self.local_values(t, &mut vals) else {
            return;
        };
        if self.constant_first {
            f(0, 1.0);
            for (i, &v) in vals[..self.order].iter().enumerate() {
                if first + i > 0 {
                    f(first + i, v);
                }
            }
        } else {
            for (i, &v) in vals[..self.order].iter().enumerate() {
                f(first + i, v);
            }
        }
    }

    /// Dense evaluation of the whole basis at `t`; all zeros outside the
    /// interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_nonzero(t, |i, v| out[i] = v);
    }

    /// Evaluates `sum_i coef[i] * phi_i(t)`.
    pub fn combine(&self, coef: &[f64], t: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_nonzero(t, |i, v| acc += coef[i] * v);
        acc
    }

    /// Exact integrals of the basis functions over the interval.
    pub fn integrals(&self) -> Vec<f64> {
        let l = self.order as f64;
        let mut out: Vec<f64> = (0..self.dim)
            .map(|i| (self.knots[i + self.order] - self.knots[i]) / l)
            .collect();
        if self.constant_first {
            out[0] = self.hi - self.lo;
        }
        out
    }

    /// Support `[start, end]` of basis function `i`.
    pub fn support_of(&self, i: usize) -> (f64, f64) {
        if self.constant_first && i == 0 {
            (self.lo, self.hi)
        } else {
            (self.knots[i], self.knots[i + self.order])
        }
    }

    /// Knot spans of positive length.
    pub fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[0], w[1]))
    }

    /// `∫ w(t) φ(t) φ(t)ᵀ dt` over the interval.
    ///
    /// Each knot span is integrated with `order + 1` Gauss–Legendre points,
    /// which is exact for the unweighted product and for polynomial weights
    /// of degree at most 3.
    pub fn gram_matrix(&self, weight: Option<&dyn Fn(f64) -> f64>) -> DMatrix<f64> {
        let m = self.dim;
        let mut g = DMatrix::zeros(m, m);
        let (nodes, weights) = gauss_legendre(self.order + 1);
        let mut idx = [0usize; MAX_ORDER + 1];
        let mut val = [0.0f64; MAX_ORDER + 1];
        for (a, b) in self.spans() {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let mut wt = w * half;
                if let Some(f) = weight {
                    wt *= f(t);
                }
                if wt == 0.0 {
                    continue;
                }
                let mut n = 0;
                self.for_each_nonzero(t, |i, v| {
                    idx[n] = i;
                    val[n] = v;
                    n += 1;
                });
                for r in 0..n {
                    for c in r..n {
                        g[(idx[r], idx[c])] += wt * val[r] * val[c];
                    }
                }
            }
        }
        g.fill_lower_triangle_with_upper_triangle();
        g
    }
}

impl TryFrom<BasisSpec> for SplineBasis {
    type Error = SplineError;

    fn try_from(spec: BasisSpec) -> Result<Self, Self::Error> {
        let interval = (spec.interval[0], spec.interval[1]);
        if spec.constant_first {
            Self::with_constant_first(spec.order, spec.dim, interval)
        } else {
            Self::new(spec.order, spec.dim, interval)
        }
    }
}

impl From<SplineBasis> for BasisSpec {
    fn from(b: SplineBasis) -> Self {
        b.spec()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type starting guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
