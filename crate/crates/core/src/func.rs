//! Continuous piecewise-affine functions and convex costs.
//!
//! A [`PiecewiseAffine`] is stored as breakpoints plus the value at each
//! breakpoint, so it is continuous by construction and its derivative is the
//! piecewise-constant list of slopes. It carries the input map `U`, the
//! monotone rearrangement `T`, and every approximant built by [`crate::approx`].
//!
//! A [`ConvexCost`] is a convex, non-decreasing `f: [0, ∞) → [0, ∞)` used in
//! energies of the form `∫ f(|U'|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative gap below which two consecutive breakpoints count as the same point.
pub const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuncError {
    #[error("breakpoints must be strictly increasing (index {index}: {left} then {right})")]
    NonIncreasingBreakpoints { index: usize, left: f64, right: f64 },

    #[error("breakpoints and values have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("a piecewise-affine function needs at least 2 breakpoints, got {0}")]
    TooFewBreakpoints(usize),

    #[error("non-finite number in input: {0}")]
    NonFiniteValue(f64),

    #[error("x = {x} lies outside the domain [{a}, {b}]")]
    OutOfDomain { x: f64, a: f64, b: f64 },

    #[error("invalid interval [{0}, {1}]")]
    InvalidInterval(f64, f64),

    #[error("invalid exponent p = {0} (need p >= 1)")]
    InvalidExponent(f64),

    #[error("invalid cost coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("sampled cost is not convex and non-decreasing near t = {0}")]
    NonConvexSample(f64),

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("auxiliary cost for superlinearization must be superlinear")]
    NotSuperlinear,
}

/// Closed segment `[a, b]` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self, FuncError> {
        if !a.is_finite() || !b.is_finite() || a >= b {
            return Err(FuncError::InvalidInterval(a, b));
        }
        Ok(Self { a, b })
    }

    pub fn unit() -> Self {
        Self { a: 0.0, b: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawPiecewiseAffine {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// Continuous piecewise-affine function on `[x_0, x_N]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewiseAffine")]
pub struct PiecewiseAffine {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawPiecewiseAffine> for PiecewiseAffine {
    type Error = FuncError;

    fn try_from(raw: RawPiecewiseAffine) -> Result<Self, Self::Error> {
        PiecewiseAffine::new(raw.breakpoints, raw.values)
    }
}

impl PiecewiseAffine {
    /// Builds a function from breakpoints and the values taken there.
    ///
    /// Consecutive breakpoints closer than `1e-12·(b−a)` are rejected rather
    /// than merged.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, FuncError> {
        if breakpoints.len() != values.len() {
            return Err(FuncError::LengthMismatch(breakpoints.len(), values.len()));
        }
        if breakpoints.len() < 2 {
            return Err(FuncError::TooFewBreakpoints(breakpoints.len()));
        }
        if let Some(bad) = breakpoints.iter().chain(&values).find(|v| !v.is_finite()) {
            return Err(FuncError::NonFiniteValue(*bad));
        }
        let span = breakpoints[breakpoints.len() - 1] - breakpoints[0];
        let min_gap = DEGENERATE_GAP * span.abs();
        for (i, w) in breakpoints.windows(2).enumerate() {
            if !(w[1] - w[0] > min_gap) || span <= 0.0 {
                return Err(FuncError::NonIncreasingBreakpoints {
                    index: i + 1,
                    left: w[0],
                    right: w[1],
                });
            }
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// The affine function `x ↦ value_a + slope·(x − a)` on `interval`.
    pub fn affine(interval: Interval, value_a: f64, slope: f64) -> Self {
        Self {
            breakpoints: vec![interval.a, interval.b],
            values: vec![value_a, value_a + slope * interval.length()],
        }
    }

    /// Builds a function from its value at the left end and one slope per piece.
    pub fn from_slopes(
        breakpoints: Vec<f64>,
        start: f64,
        slopes: &[f64],
    ) -> Result<Self, FuncError> {
        if slopes.len() + 1 != breakpoints.len() {
            return Err(FuncError::LengthMismatch(
                breakpoints.len(),
                slopes.len() + 1,
            ));
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        values.push(start);
        let mut v = start;
        for (w, s) in breakpoints.windows(2).zip(slopes) {
            v += s * (w[1] - w[0]);
            values.push(v);
        }
        Self::new(breakpoints, values)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn domain(&self) -> Interval {
        Interval {
            a: self.breakpoints[0],
            b: self.breakpoints[self.breakpoints.len() - 1],
        }
    }

    /// Index of the piece containing `x`; breakpoints belong to the piece on their right,
    /// except the last one.
    pub fn piece_index(&self, x: f64) -> usize {
        let idx = self.breakpoints.partition_point(|&bp| bp <= x);
        idx.clamp(1, self.num_pieces()) - 1
    }

    pub fn evaluate(&self, x: f64) -> Result<f64, FuncError> {
        let dom = self.domain();
        if !dom.contains(x) {
            return Err(FuncError::OutOfDomain {
                x,
                a: dom.a,
                b: dom.b,
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let i = self.piece_index(x);
        let (x0, x1) = (self.breakpoints[i], self.breakpoints[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        if x == x0 {
            return v0;
        }
        if x == x1 {
            return v1;
        }
        v0 + (v1 - v0) * ((x - x0) / (x1 - x0))
    }

    pub fn slope(&self, piece: usize) -> f64 {
        (self.values[piece + 1] - self.values[piece])
            / (self.breakpoints[piece + 1] - self.breakpoints[piece])
    }

    pub fn piece_length(&self, piece: usize) -> f64 {
        self.breakpoints[piece + 1] - self.breakpoints[piece]
    }

    /// One `(open interval, slope)` pair per piece, left to right. Flat pieces
    /// are reported with slope 0.
    pub fn slopes(&self) -> Vec<(Interval, f64)> {
        (0..self.num_pieces())
            .map(|i| {
                (
                    Interval {
                        a: self.breakpoints[i],
                        b: self.breakpoints[i + 1],
                    },
                    self.slope(i),
                )
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_abs_slope(&self) -> f64 {
        (0..self.num_pieces())
            .map(|i| self.slope(i).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn is_non_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }

    /// `x ↦ u(a + b − x)`: same image measure, mirrored graph.
    pub fn reflect(&self) -> Self {
        let dom = self.domain();
        let breakpoints = self
            .breakpoints
            .iter()
            .rev()
            .map(|x| dom.a + dom.b - x)
            .collect::<Vec<_>>();
        let mut breakpoints = breakpoints;
        // keep the endpoints bit-identical to the original domain
        breakpoints[0] = dom.a;
        let last = breakpoints.len() - 1;
        breakpoints[last] = dom.b;
        Self {
            breakpoints,
            values: self.values.iter().rev().copied().collect(),
        }
    }

    /// Restriction to `sub`, which must lie inside the domain.
    pub fn restrict(&self, sub: Interval) -> Result<Self, FuncError> {
        let dom = self.domain();
        if sub.a < dom.a || sub.b > dom.b {
            let x = if sub.a < dom.a { sub.a } else { sub.b };
            return Err(FuncError::OutOfDomain {
                x,
                a: dom.a,
                b: dom.b,
            });
        }
        let tol = DEGENERATE_GAP * sub.length();
        let mut xs = vec![sub.a];
        let mut vs = vec![self.eval_unchecked(sub.a)];
        for (&x, &v) in self.breakpoints.iter().zip(&self.values) {
            if x > sub.a + tol && x < sub.b - tol {
                xs.push(x);
                vs.push(v);
            }
        }
        xs.push(sub.b);
        vs.push(self.eval_unchecked(sub.b));
        Self::new(xs, vs)
    }
}

/// Serialized form of a cost, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `t^p`
    Power { p: f64 },
    /// `e^t`
    Exp,
    /// `a·t + c·t^p`
    LinearPlusPower { a: f64, p: f64, c: f64 },
    /// Piecewise-linear interpolation of `(t, f)` samples starting at `t = 0`,
    /// extended linearly past the last sample.
    Sampled { t: Vec<f64>, f: Vec<f64> },
    /// `base + epsilon·extra`
    Sum {
        base: Box<CostSpec>,
        epsilon: f64,
        extra: Box<CostSpec>,
    },
}

/// Convex, non-decreasing cost `f: [0, ∞) → [0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostSpec", into = "CostSpec")]
pub struct ConvexCost {
    spec: CostSpec,
    superlinear: bool,
}

impl TryFrom<CostSpec> for ConvexCost {
    type Error = FuncError;

    fn try_from(spec: CostSpec) -> Result<Self, Self::Error> {
        make_cost(&spec)
    }
}

impl From<ConvexCost> for CostSpec {
    fn from(cost: ConvexCost) -> Self {
        cost.spec
    }
}

/// Validates a [`CostSpec`] and returns the corresponding cost.
pub fn make_cost(spec: &CostSpec) -> Result<ConvexCost, FuncError> {
    let superlinear = match spec {
        CostSpec::Power { p } => {
            if !p.is_finite() || *p < 1.0 {
                return Err(FuncError::InvalidExponent(*p));
            }
            *p > 1.0
        }
        CostSpec::Exp => true,
        CostSpec::LinearPlusPower { a, p, c } => {
            if !p.is_finite() || *p < 1.0 {
                return Err(FuncError::InvalidExponent(*p));
            }
            if !(a.is_finite() && *a >= 0.0) || !(c.is_finite() && *c >= 0.0) {
                return Err(FuncError::InvalidCoefficient(format!("a = {a}, c = {c}")));
            }
            *c > 0.0 && *p > 1.0
        }
        CostSpec::Sampled { t, f } => {
            validate_samples(t, f)?;
            false
        }
        CostSpec::Sum {
            base,
            epsilon,
            extra,
        } => {
            if !(epsilon.is_finite() && *epsilon > 0.0) {
                return Err(FuncError::NonPositiveEpsilon(*epsilon));
            }
            let base = make_cost(base)?;
            let extra = make_cost(extra)?;
            base.superlinear || extra.superlinear
        }
    };
    Ok(ConvexCost {
        spec: spec.clone(),
        superlinear,
    })
}

fn validate_samples(t: &[f64], f: &[f64]) -> Result<(), FuncError> {
    if t.len() != f.len() {
        return Err(FuncError::LengthMismatch(t.len(), f.len()));
    }
    if t.len() < 2 {
        return Err(FuncError::TooFewBreakpoints(t.len()));
    }
    if let Some(bad) = t.iter().chain(f).find(|v| !v.is_finite()) {
        return Err(FuncError::NonFiniteValue(*bad));
    }
    if t[0] != 0.0 {
        return Err(FuncError::InvalidCoefficient(format!(
            "sampled cost must start at t = 0, got {}",
            t[0]
        )));
    }
    if f[0] < 0.0 {
        return Err(FuncError::NonConvexSample(t[0]));
    }
    let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut prev_slope = 0.0;
    for i in 0..t.len() - 1 {
        if t[i + 1] <= t[i] {
            return Err(FuncError::NonIncreasingBreakpoints {
                index: i + 1,
                left: t[i],
                right: t[i + 1],
            });
        }
        let slope = (f[i + 1] - f[i]) / (t[i + 1] - t[i]);
        // slopes non-decreasing (convex), starting from a non-negative one
        if (slope - prev_slope) * (t[i + 1] - t[i]) < -tol {
            return Err(FuncError::NonConvexSample(t[i]));
        }
        prev_slope = slope;
    }
    Ok(())
}

impl ConvexCost {
    pub fn power(p: f64) -> Result<Self, FuncError> {
        make_cost(&CostSpec::Power { p })
    }

    pub fn exp() -> Self {
        Self {
            spec: CostSpec::Exp,
            superlinear: true,
        }
    }

    pub fn linear_plus_power(a: f64, c: f64, p: f64) -> Result<Self, FuncError> {
        make_cost(&CostSpec::LinearPlusPower { a, p, c })
    }

    pub fn sampled(t: Vec<f64>, f: Vec<f64>) -> Result<Self, FuncError> {
        make_cost(&CostSpec::Sampled { t, f })
    }

    pub fn spec(&self) -> &CostSpec {
        &self.spec
    }

    pub fn is_superlinear(&self) -> bool {
        self.superlinear
    }

    /// Short label used in reports and CSV rows.
    pub fn label(&self) -> String {
        spec_label(&self.spec)
    }

    pub fn eval(&self, t: f64) -> f64 {
        eval_spec(&self.spec, t)
    }

    /// `t ↦ f(t) + epsilon·f_tilde(t)`, superlinear whenever `f_tilde` is.
    pub fn superlinearize(&self, epsilon: f64, f_tilde: &ConvexCost) -> Result<Self, FuncError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(FuncError::NonPositiveEpsilon(epsilon));
        }
        if !f_tilde.superlinear {
            return Err(FuncError::NotSuperlinear);
        }
        make_cost(&CostSpec::Sum {
            base: Box::new(self.spec.clone()),
            epsilon,
            extra: Box::new(f_tilde.spec.clone()),
        })
    }

    /// `f(t) + t`: strictly increasing with derivative at least 1 and an inverse.
    pub fn with_unit_linear_term(&self) -> Self {
        match &self.spec {
            CostSpec::Power { p } => Self::linear_plus_power(1.0, 1.0, *p).unwrap(),
            CostSpec::LinearPlusPower { a, p, c } => {
                Self::linear_plus_power(a + 1.0, *c, *p).unwrap()
            }
            _ => make_cost(&CostSpec::Sum {
                base: Box::new(self.spec.clone()),
                epsilon: 1.0,
                extra: Box::new(CostSpec::Power { p: 1.0 }),
            })
            .unwrap(),
        }
    }

    /// True when `f` is strictly increasing, so that `f⁻¹` exists on `[f(0), ∞)`.
    pub fn has_inverse(&self) -> bool {
        strictly_increasing(&self.spec)
    }

    /// True when `f' ≥ c > 0` everywhere, i.e. `f⁻¹` is Lipschitz.
    pub fn has_positive_derivative_floor(&self) -> bool {
        derivative_floor(&self.spec) > 0.0
    }

    /// `f⁻¹(y)` for `y ≥ f(0)`; values below `f(0)` map to 0.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        if !self.has_inverse() || !y.is_finite() {
            return None;
        }
        if y <= self.eval(0.0) {
            return Some(0.0);
        }
        Some(inverse_spec(&self.spec, y).max(0.0))
    }

    /// Finite-difference check that `f` is non-decreasing and convex on the
    /// given sorted sample points.
    pub fn check_shape(&self, samples: &[f64]) -> bool {
        let vals: Vec<f64> = samples.iter().map(|&t| self.eval(t)).collect();
        let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return false;
        }
        if vals.windows(2).any(|w| w[1] < w[0] - tol) {
            return false;
        }
        for i in 1..samples.len().saturating_sub(1) {
            let (t0, t1, t2) = (samples[i - 1], samples[i], samples[i + 1]);
            let interp = vals[i - 1] + (vals[i + 1] - vals[i - 1]) * (t1 - t0) / (t2 - t0);
            if vals[i] > interp + tol {
                return false;
            }
        }
        true
    }
}

fn spec_label(spec: &CostSpec) -> String {
    match spec {
        CostSpec::Power { p } => format!("power{p}"),
        CostSpec::Exp => "exp".to_string(),
        CostSpec::LinearPlusPower { a, p, c } => format!("lin{a}+{c}pow{p}"),
        CostSpec::Sampled { .. } => "sampled".to_string(),
        CostSpec::Sum {
            base,
            epsilon,
            extra,
        } => format!("{}+{epsilon}*{}", spec_label(base), spec_label(extra)),
    }
}

fn eval_spec(spec: &CostSpec, t: f64) -> f64 {
    match spec {
        CostSpec::Power { p } => {
            if *p == 1.0 {
                t
            } else if *p == 2.0 {
                t * t
            } else {
                t.powf(*p)
            }
        }
        CostSpec::Exp => t.exp(),
        CostSpec::LinearPlusPower { a, p, c } => {
            a * t + c * eval_spec(&CostSpec::Power { p: *p }, t)
        }
        CostSpec::Sampled { t: knots, f } => {
            let n = knots.len();
            let i = knots.partition_point(|&k| k <= t).clamp(1, n - 1) - 1;
            let slope = (f[i + 1] - f[i]) / (knots[i + 1] - knots[i]);
            f[i] + slope * (t - knots[i])
        }
        CostSpec::Sum {
            base,
            epsilon,
            extra,
        } => eval_spec(base, t) + epsilon * eval_spec(extra, t),
    }
}

fn strictly_increasing(spec: &CostSpec) -> bool {
    match spec {
        CostSpec::Power { .. } | CostSpec::Exp => true,
        CostSpec::LinearPlusPower { a, c, .. } => *a > 0.0 || *c > 0.0,
        CostSpec::Sampled { t, f } => {
            // convex samples: increasing everywhere iff the first segment rises
            f[1] > f[0] && t.len() >= 2
        }
        CostSpec::Sum { base, extra, .. } => {
            strictly_increasing(base) || strictly_increasing(extra)
        }
    }
}

fn derivative_floor(spec: &CostSpec) -> f64 {
    match spec {
        CostSpec::Power { p } => {
            if *p == 1.0 {
                1.0
            } else {
                0.0
            }
        }
        CostSpec::Exp => 1.0,
        CostSpec::LinearPlusPower { a, p, c } => a + if *p == 1.0 { *c } else { 0.0 },
        CostSpec::Sampled { t, f } => (f[1] - f[0]) / (t[1] - t[0]),
        CostSpec::Sum {
            base,
            epsilon,
            extra,
        } => derivative_floor(base) + epsilon * derivative_floor(extra),
    }
}

fn inverse_spec(spec: &CostSpec, y: f64) -> f64 {
    match spec {
        CostSpec::Power { p } => {
            if *p == 1.0 {
                y
            } else if *p == 2.0 {
                y.sqrt()
            } else {
                y.powf(1.0 / p)
            }
        }
        CostSpec::Exp => y.ln(),
        CostSpec::LinearPlusPower { a, p, c } => {
            if *c == 0.0 {
                y / a
            } else if *a == 0.0 {
                inverse_spec(&CostSpec::Power { p: *p }, y / c)
            } else if *p == 1.0 {
                y / (a + c)
            } else if *p == 2.0 {
                // c t² + a t − y = 0, written to avoid cancellation
                2.0 * y / (a + (a * a + 4.0 * c * y).sqrt())
            } else {
                bisect_inverse(spec, y)
            }
        }
        CostSpec::Sampled { t, f } => {
            let n = t.len();
            let i = f.partition_point(|&v| v <= y).clamp(1, n - 1) - 1;
            let slope = (f[i + 1] - f[i]) / (t[i + 1] - t[i]);
            t[i] + (y - f[i]) / slope
        }
        CostSpec::Sum { .. } => bisect_inverse(spec, y),
    }
}

/// Inverse of a strictly increasing cost by bracketing and bisection to full precision.
fn bisect_inverse(spec: &CostSpec, y: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while eval_spec(spec, hi) < y {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval_spec(spec, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (y - eval_spec(spec, lo)).abs() <= (eval_spec(spec, hi) - y).abs() {
        lo
    } else {
        hi
    }
}

/// Sign pattern of slopes drawn by [`random_piecewise_affine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlopeSigns {
    Random,
    /// Non-decreasing output.
    Positive,
}

/// Deterministic random continuous piecewise-affine function.
///
/// Piece lengths are drawn in `[0.2, 1]` and normalized, so no piece is
/// degenerate. Slope magnitudes are uniform in `slope_range`.
pub fn random_piecewise_affine(
    seed: u64,
    pieces: usize,
    slope_range: (f64, f64),
    interval: Interval,
    signs: SlopeSigns,
) -> PiecewiseAffine {
    let pieces = pieces.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.2..=1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut breakpoints = Vec::with_capacity(pieces + 1);
    let mut acc = 0.0;
    breakpoints.push(interval.a);
    for w in &weights[..pieces - 1] {
        acc += w;
        breakpoints.push(interval.a + interval.length() * acc / total);
    }
    breakpoints.push(interval.b);

    let (lo, hi) = slope_range;
    let slopes: Vec<f64> = (0..pieces)
        .map(|_| {
            let mag = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            match signs {
                SlopeSigns::Positive => mag,
                SlopeSigns::Random => {
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                }
            }
        })
        .collect();
    let start = rng.random_range(-1.0..=1.0);
    PiecewiseAffine::from_slopes(breakpoints, start, &slopes)
        .expect("generated breakpoints are well separated")
}
