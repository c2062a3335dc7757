//! Piecewise-affine approximants with nonvanishing slopes for sampled functions.
//!
//! Given samples of `U` on a dyadic grid of depth `K` (and of `U'` at the cell
//! midpoints), the approximant of depth `k ≤ K` is built on the `2^k` dyadic
//! cells of `[a, b]`:
//!
//! 1. `h_k` is the cell mean of `f(|U'|)`;
//! 2. on each cell the slope is `sign(U(right) − U(left)) · f⁻¹(h_k)`;
//! 3. `U_k` is the primitive of these slopes with `U_k(a) = U(a)`.
//!
//! `f` must be invertible with `f' ≥ c > 0` (use [`ConvexCost::with_unit_linear_term`]
//! to get such a cost from any convex one).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyError;
use crate::func::{ConvexCost, FuncError, PiecewiseAffine};
use crate::rearrange::{self, Count, RearrangeError};

/// Deepest sample grid accepted (`2^14 + 1` points).
pub const MAX_DEPTH: u32 = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error(
        "cost must be strictly increasing with derivative bounded below by a positive constant"
    )]
    NonInvertibleCost,

    #[error("depth {k} exceeds the sample depth {max}")]
    DepthExceeded { k: u32, max: u32 },

    #[error("averaged values must be non-negative, found {0}")]
    NegativeValue(f64),

    #[error("invalid sampled function: {0}")]
    InvalidSample(String),

    #[error("probe x = {0} sits on a critical point of the limit transport")]
    ProbeAtCriticalLevel(f64),

    #[error("no depths requested")]
    EmptyDepthList,

    #[error(transparent)]
    Func(#[from] FuncError),

    #[error(transparent)]
    Rearrange(#[from] RearrangeError),

    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, Deserialize)]
struct RawSampled {
    a: f64,
    b: f64,
    values: Vec<f64>,
    #[serde(default)]
    derivative: Option<Vec<f64>>,
}

/// `U` sampled at `2^K + 1` uniform points and `U'` at the `2^K` cell midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSampled")]
pub struct SampledFunction {
    a: f64,
    b: f64,
    values: Vec<f64>,
    derivative: Vec<f64>,
    #[serde(skip)]
    depth: u32,
}

impl TryFrom<RawSampled> for SampledFunction {
    type Error = ApproxError;

    fn try_from(raw: RawSampled) -> Result<Self, Self::Error> {
        SampledFunction::new(raw.a, raw.b, raw.values, raw.derivative)
    }
}

impl SampledFunction {
    /// Without `derivative`, slopes are taken as the difference quotients of
    /// consecutive samples (central differences at the midpoints).
    pub fn new(
        a: f64,
        b: f64,
        values: Vec<f64>,
        derivative: Option<Vec<f64>>,
    ) -> Result<Self, ApproxError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ApproxError::InvalidSample(format!("bad domain [{a}, {b}]")));
        }
        let cells = values.len().saturating_sub(1);
        if cells == 0 || !cells.is_power_of_two() {
            return Err(ApproxError::InvalidSample(format!(
                "need 2^K + 1 samples, got {}",
                values.len()
            )));
        }
        let depth = cells.trailing_zeros();
        if depth > MAX_DEPTH {
            return Err(ApproxError::DepthExceeded {
                k: depth,
                max: MAX_DEPTH,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ApproxError::InvalidSample("non-finite sample".into()));
        }
        let h = (b - a) / cells as f64;
        let derivative = match derivative {
            Some(d) => {
                if d.len() != cells {
                    return Err(ApproxError::InvalidSample(format!(
                        "need {cells} derivative samples, got {}",
                        d.len()
                    )));
                }
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(ApproxError::InvalidSample("non-finite derivative".into()));
                }
                d
            }
            None => values.windows(2).map(|w| (w[1] - w[0]) / h).collect(),
        };
        Ok(Self {
            a,
            b,
            values,
            derivative,
            depth,
        })
    }

    /// Samples `u` (and `du` at midpoints, if given) on the depth-`depth` grid.
    pub fn from_fn(
        a: f64,
        b: f64,
        depth: u32,
        u: impl Fn(f64) -> f64,
        du: Option<&dyn Fn(f64) -> f64>,
    ) -> Result<Self, ApproxError> {
        if depth > MAX_DEPTH {
            return Err(ApproxError::DepthExceeded {
                k: depth,
                max: MAX_DEPTH,
            });
        }
        let cells = 1usize << depth;
        let h = (b - a) / cells as f64;
        let values = (0..=cells).map(|i| u(a + i as f64 * h)).collect();
        let derivative = du.map(|du| (0..cells).map(|i| du(a + (i as f64 + 0.5) * h)).collect());
        Self::new(a, b, values, derivative)
    }

    /// Samples a piecewise-affine function; slopes come from exact differences.
    pub fn from_piecewise(u: &PiecewiseAffine, depth: u32) -> Result<Self, ApproxError> {
        let dom = u.domain();
        let du = |x: f64| u.slope(u.piece_index(x));
        Self::from_fn(dom.a, dom.b, depth, |x| u.eval_unchecked(x), Some(&du))
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / self.derivative.len() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.a + i as f64 * self.spacing()
    }
}

/// Means of `g` over the `2^k` dyadic cells; `g` holds one value per fine cell
/// (its length must be a power of two `2^K` with `k ≤ K`).
pub fn dyadic_average(g: &[f64], k: u32) -> Result<Vec<f64>, ApproxError> {
    if g.is_empty() || !g.len().is_power_of_two() {
        return Err(ApproxError::InvalidSample(format!(
            "need 2^K cell values, got {}",
            g.len()
        )));
    }
    let max = g.len().trailing_zeros();
    if k > max {
        return Err(ApproxError::DepthExceeded { k, max });
    }
    if let Some(v) = g.iter().find(|v| !(**v >= 0.0)) {
        return Err(ApproxError::NegativeValue(*v));
    }
    let stride = g.len() >> k;
    Ok(g.chunks(stride)
        .map(|cell| cell.iter().sum::<f64>() / stride as f64)
        .collect())
}

/// Depth-`k` approximant `U_k` of `u` for the cost `f`.
///
/// Cells whose endpoint increment is exactly zero get a positive sign. Cells
/// where `U'` vanishes identically (so `h_k = f(0)`) get slope `4^{-k}`, which
/// keeps every slope nonzero and vanishes as `k` grows.
pub fn build_approximant(
    u: &SampledFunction,
    f: &ConvexCost,
    k: u32,
) -> Result<PiecewiseAffine, ApproxError> {
    if !f.has_inverse() || !f.has_positive_derivative_floor() {
        return Err(ApproxError::NonInvertibleCost);
    }
    if k > u.depth {
        return Err(ApproxError::DepthExceeded { k, max: u.depth });
    }
    let g: Vec<f64> = u.derivative.iter().map(|d| f.eval(d.abs())).collect();
    let h = dyadic_average(&g, k)?;
    let stride = 1usize << (u.depth - k);
    let cell_len = u.spacing() * stride as f64;
    let floor = 0.25f64.powi(k as i32);

    let mut breakpoints = Vec::with_capacity(h.len() + 1);
    let mut values = Vec::with_capacity(h.len() + 1);
    let mut v = u.values[0];
    breakpoints.push(u.a);
    values.push(v);
    for (c, hc) in h.iter().enumerate() {
        let (i0, i1) = (c * stride, (c + 1) * stride);
        let sign = if u.values[i1] - u.values[i0] < 0.0 {
            -1.0
        } else {
            1.0
        };
        let mut mag = f.inverse(*hc).ok_or(ApproxError::NonInvertibleCost)?;
        if !(mag > 0.0) {
            mag = floor;
        }
        v += sign * mag * cell_len;
        breakpoints.push(if i1 == u.derivative.len() {
            u.b
        } else {
            u.x(i1)
        });
        values.push(v);
    }
    Ok(PiecewiseAffine::new(breakpoints, values)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxLevel {
    pub k: u32,
    /// `‖U_k − U‖_{L¹} + ‖U_k' − U'‖_{L¹}` on the sample grid.
    pub w11_error: f64,
    /// `‖f(|U_k'|) − f(|U'|)‖_{L¹}` on the sample grid.
    pub cost_error: f64,
    pub min_abs_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximantSequenceReport {
    pub levels: Vec<ApproxLevel>,
}

impl ApproximantSequenceReport {
    fn trend(errors: impl Iterator<Item = f64>) -> bool {
        let e: Vec<f64> = errors.collect();
        match (e.first(), e.last()) {
            (Some(first), Some(last)) if e.len() > 1 => {
                last < first && e.windows(2).all(|w| w[1] < 2.0 * w[0])
            }
            _ => true,
        }
    }

    /// Last error below the first, and no step more than doubles the error.
    pub fn decreasing_trend(&self) -> bool {
        Self::trend(self.levels.iter().map(|l| l.w11_error))
            && Self::trend(self.levels.iter().map(|l| l.cost_error))
    }

    pub fn all_slopes_nonzero(&self) -> bool {
        self.levels.iter().all(|l| l.min_abs_slope > 0.0)
    }
}

/// Errors of `U_k` against the samples: trapezoid rule on the values, midpoint
/// rule on the derivative samples.
pub fn approximation_errors(
    u: &SampledFunction,
    f: &ConvexCost,
    approximant: &PiecewiseAffine,
) -> (f64, f64) {
    let h = u.spacing();
    let cells = u.derivative.len();
    let diff: Vec<f64> = (0..=cells)
        .map(|i| {
            let x = if i == cells { u.b } else { u.x(i) };
            (approximant.eval_unchecked(x) - u.values[i]).abs()
        })
        .collect();
    let l1_values: f64 = diff.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    let mut l1_deriv = 0.0;
    let mut cost = 0.0;
    for i in 0..cells {
        let mid = u.a + (i as f64 + 0.5) * h;
        let s = approximant.slope(approximant.piece_index(mid));
        l1_deriv += h * (s - u.derivative[i]).abs();
        cost += h * (f.eval(s.abs()) - f.eval(u.derivative[i].abs())).abs();
    }
    (l1_values + l1_deriv, cost)
}

pub fn convergence_report(
    u: &SampledFunction,
    f: &ConvexCost,
    k_list: &[u32],
) -> Result<ApproximantSequenceReport, ApproxError> {
    let levels = k_list
        .iter()
        .map(|&k| {
            let uk = build_approximant(u, f, k)?;
            let (w11_error, cost_error) = approximation_errors(u, f, &uk);
            Ok(ApproxLevel {
                k,
                w11_error,
                cost_error,
                min_abs_slope: uk.min_abs_slope(),
            })
        })
        .collect::<Result<Vec<_>, ApproxError>>()?;
    Ok(ApproximantSequenceReport { levels })
}

/// Outcome of one probe of [`multiplicity_liminf_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiminfProbe {
    pub x: f64,
    /// Multiplicity of the finest-grid approximant at `x`.
    pub reference: u32,
    /// Smallest multiplicity of the coarser approximant within one cell of `x`.
    pub window_min: Count,
    pub pass: bool,
}

/// Finite-depth look at `liminf n_k ≥ n` where `T' > 0`.
///
/// The depth-`K` approximant (finest available) stands in for the limit. For
/// the largest depth in `k_list` the multiplicity `n_k` is minimized over a
/// window of one dyadic cell around each probe and compared with the
/// reference multiplicity there.
pub fn liminf_probes(
    u: &SampledFunction,
    f: &ConvexCost,
    k_list: &[u32],
    probes: &[f64],
) -> Result<Vec<LiminfProbe>, ApproxError> {
    let k = *k_list.iter().max().ok_or(ApproxError::EmptyDepthList)?;
    let finest = build_approximant(u, f, u.depth)?;
    let (_, t_ref, n_ref) = rearrange::rearrange(&finest)?;
    let uk = build_approximant(u, f, k)?;
    let (_, _, n_k) = rearrange::rearrange(&uk)?;

    let len = u.b - u.a;
    let radius = len / (1u64 << k) as f64;
    probes
        .iter()
        .map(|&x| {
            if !(x > u.a && x < u.b) {
                return Err(ApproxError::ProbeAtCriticalLevel(x));
            }
            let near_cut = n_ref.cut_points.iter().any(|z| (z - x).abs() <= 1e-9 * len);
            let reference = n_ref.count_at(x).finite();
            let t_slope = t_ref.slope(t_ref.piece_index(x));
            let reference = match reference {
                Some(r) if !near_cut && t_slope > 0.0 => r,
                _ => return Err(ApproxError::ProbeAtCriticalLevel(x)),
            };
            let window_min = n_k
                .bands()
                .filter(|(lo, hi, _)| *hi > x - radius && *lo < x + radius)
                .map(|(_, _, c)| c)
                .min_by_key(|c| c.finite().unwrap_or(u32::MAX))
                .unwrap_or(Count::Infinite);
            let pass = window_min.finite().is_none_or(|m| m >= reference);
            Ok(LiminfProbe {
                x,
                reference,
                window_min,
                pass,
            })
        })
        .collect()
}

/// Per-probe pass/fail of [`liminf_probes`].
pub fn multiplicity_liminf_check(
    u: &SampledFunction,
    f: &ConvexCost,
    k_list: &[u32],
    probes: &[f64],
) -> Result<Vec<bool>, ApproxError> {
    Ok(liminf_probes(u, f, k_list, probes)?
        .into_iter()
        .map(|p| p.pass)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{dirichlet_energy, verify_inequality, DEFAULT_REL_TOL};

    fn cost() -> ConvexCost {
        ConvexCost::linear_plus_power(1.0, 1.0, 2.0).unwrap()
    }

    fn tent() -> PiecewiseAffine {
        PiecewiseAffine::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap()
    }

    fn w_shape() -> PiecewiseAffine {
        PiecewiseAffine::new(
            vec![0.0, 0.25, 0.5, 0.75, 1.0],
            vec![1.0, 0.0, 1.0, 0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn dyadic_average_examples() {
        assert_eq!(dyadic_average(&[2.5; 8], 2).unwrap(), vec![2.5; 4]);
        let s = SampledFunction::from_piecewise(&tent(), 6).unwrap();
        let g: Vec<f64> = s
            .derivative()
            .iter()
            .map(|d| cost().eval(d.abs()))
            .collect();
        assert_eq!(dyadic_average(&g, 1).unwrap(), vec![6.0, 6.0]);
        let n = 1024;
        let lin: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let h = dyadic_average(&lin, 1).unwrap();
        assert!((h[0] - 0.25).abs() < 1e-15 && (h[1] - 0.75).abs() < 1e-15);
        assert_eq!(
            dyadic_average(&lin, 11),
            Err(ApproxError::DepthExceeded { k: 11, max: 10 })
        );
        assert_eq!(
            dyadic_average(&[1.0, -1.0], 1),
            Err(ApproxError::NegativeValue(-1.0))
        );
    }

    #[test]
    fn affine_is_a_fixed_point() {
        let line = PiecewiseAffine::affine(crate::func::Interval::unit(), 0.5, -3.0);
        let s = SampledFunction::from_piecewise(&line, 8).unwrap();
        for k in 0..=8 {
            let uk = build_approximant(&s, &cost(), k).unwrap();
            for (x, v) in uk.breakpoints().iter().zip(uk.values()) {
                assert!((line.eval_unchecked(*x) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tent_reproduced() {
        let s = SampledFunction::from_piecewise(&tent(), 8).unwrap();
        for k in 1..=6 {
            let uk = build_approximant(&s, &cost(), k).unwrap();
            for (x, v) in uk.breakpoints().iter().zip(uk.values()) {
                assert_eq!(tent().eval_unchecked(*x), *v);
            }
        }
        let report = convergence_report(&s, &cost(), &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(report
            .levels
            .iter()
            .all(|l| l.w11_error == 0.0 && l.cost_error == 0.0));
    }

    #[test]
    fn requires_invertible_cost() {
        let s = SampledFunction::from_piecewise(&tent(), 4).unwrap();
        let sq = ConvexCost::power(2.0).unwrap();
        assert_eq!(
            build_approximant(&s, &sq, 2),
            Err(ApproxError::NonInvertibleCost)
        );
        assert!(build_approximant(&s, &sq.with_unit_linear_term(), 2).is_ok());
        assert_eq!(
            build_approximant(&s, &cost(), 5),
            Err(ApproxError::DepthExceeded { k: 5, max: 4 })
        );
    }

    #[test]
    fn flat_cells_keep_nonzero_slope() {
        let plateau = PiecewiseAffine::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        let s = SampledFunction::from_piecewise(&plateau, 6).unwrap();
        let u3 = build_approximant(&s, &cost(), 3).unwrap();
        assert!(u3.min_abs_slope() > 0.0);
        assert_eq!(u3.values()[0], 0.0);
    }

    #[test]
    fn smooth_input_converges() {
        let pi = std::f64::consts::PI;
        let u = |x: f64| (2.0 * pi * x).sin() + 0.3 * x;
        let du = |x: f64| 2.0 * pi * (2.0 * pi * x).cos() + 0.3;
        let s = SampledFunction::from_fn(0.0, 1.0, 12, u, Some(&du)).unwrap();
        let report = convergence_report(&s, &cost(), &[2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert!(report.decreasing_trend());
        assert!(report.all_slopes_nonzero());
        let l = &report.levels;
        assert!(l[1].w11_error < l[0].w11_error * 2.0);
        assert!(l[4].w11_error < l[1].w11_error);
        assert!(l[6].w11_error < 0.1 * l[0].w11_error);
        for k in [3, 6] {
            let uk = build_approximant(&s, &cost(), k).unwrap();
            assert_eq!(uk.values()[0], s.values()[0]);
            verify_inequality(&uk, &cost(), DEFAULT_REL_TOL).unwrap();
        }
    }

    #[test]
    fn liminf_examples() {
        let s = SampledFunction::from_piecewise(&tent(), 8).unwrap();
        assert_eq!(
            multiplicity_liminf_check(&s, &cost(), &[1, 2, 3, 4], &[0.2, 0.7]).unwrap(),
            vec![true, true]
        );
        let line = PiecewiseAffine::affine(crate::func::Interval::unit(), 0.0, 1.5);
        let s = SampledFunction::from_piecewise(&line, 8).unwrap();
        assert_eq!(
            multiplicity_liminf_check(&s, &cost(), &[2, 4], &[0.3]).unwrap(),
            vec![true]
        );
        let s = SampledFunction::from_piecewise(&w_shape(), 8).unwrap();
        let probes = liminf_probes(&s, &cost(), &[2, 3, 5], &[0.1, 0.45, 0.8]).unwrap();
        assert!(probes.iter().all(|p| p.pass && p.reference == 4));
        assert!(matches!(
            multiplicity_liminf_check(&s, &cost(), &[3], &[0.0]),
            Err(ApproxError::ProbeAtCriticalLevel(_))
        ));
    }

    #[test]
    fn transport_energy_stays_bounded() {
        let u = |x: f64| (7.0 * x).sin() * (1.0 + x);
        let s = SampledFunction::from_fn(0.0, 1.0, 10, u, None).unwrap();
        let f = cost();
        let mut max_lhs: f64 = 0.0;
        let mut t_energies = vec![];
        for k in 1..=8 {
            let uk = build_approximant(&s, &f, k).unwrap();
            let (_, tk, _) = rearrange::rearrange(&uk).unwrap();
            max_lhs = max_lhs.max(dirichlet_energy(&uk, &f));
            t_energies.push(dirichlet_energy(&tk, &f));
        }
        assert!(t_energies.iter().all(|e| *e <= max_lhs + f.eval(0.0)));
    }

    #[test]
    fn sampled_json() {
        let s: SampledFunction = serde_json::from_str(r#"{"a":0,"b":1,"values":[0,1,0]}"#).unwrap();
        assert_eq!(s.derivative(), &[2.0, -2.0]);
        assert_eq!(s.depth(), 1);
        assert!(
            serde_json::from_str::<SampledFunction>(r#"{"a":0,"b":1,"values":[0,1,0,1]}"#).is_err()
        );
    }
}
