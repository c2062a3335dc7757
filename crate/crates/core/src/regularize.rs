//! Lipschitz regularization by inf-convolution on a uniform grid:
//! `g_j(x) = min(j, min_y (j|x − y| + g(y)))`, the largest `j`-Lipschitz function
//! below `min(j, g)`.
//!
//! Values may be `+∞` (stored as `f64::INFINITY`), which is absorbing under
//! `min`/`+` and disappears after the cap at `j` as soon as one value is finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rearrange::MultiplicityProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizeError {
    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveJ(f64),

    #[error("grid functions are not defined on the same grid")]
    GridMismatch,

    #[error("invalid grid function: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum GridValue {
    Num(f64),
    Sentinel(String),
}

#[derive(Debug, Clone, Deserialize)]
struct RawGrid {
    a: f64,
    b: f64,
    values: Vec<GridValue>,
}

/// Samples of an extended-real function at `a + i·(b − a)/(N − 1)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct GridFunction {
    a: f64,
    b: f64,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for GridFunction {
    type Error = RegularizeError;

    fn try_from(raw: RawGrid) -> Result<Self, Self::Error> {
        let values = raw
            .values
            .into_iter()
            .map(|v| match v {
                GridValue::Num(x) => Ok(x),
                GridValue::Sentinel(s) if s == "inf" => Ok(f64::INFINITY),
                GridValue::Sentinel(s) => {
                    Err(RegularizeError::InvalidGrid(format!("unknown value {s:?}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        GridFunction::new(raw.a, raw.b, values)
    }
}

impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            a: f64,
            b: f64,
            values: &'a [GridValue],
        }
        let values: Vec<GridValue> = self
            .values
            .iter()
            .map(|&v| {
                if v.is_infinite() {
                    GridValue::Sentinel("inf".into())
                } else {
                    GridValue::Num(v)
                }
            })
            .collect();
        Out {
            a: self.a,
            b: self.b,
            values: &values,
        }
        .serialize(s)
    }
}

impl GridFunction {
    pub fn new(a: f64, b: f64, values: Vec<f64>) -> Result<Self, RegularizeError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(RegularizeError::InvalidGrid(format!(
                "bad domain [{a}, {b}]"
            )));
        }
        if values.len() < 2 {
            return Err(RegularizeError::InvalidGrid(
                "need at least 2 grid points".into(),
            ));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(RegularizeError::InvalidGrid(
                "values must be finite or +inf".into(),
            ));
        }
        if !values.iter().any(|v| v.is_finite()) {
            return Err(RegularizeError::InvalidGrid(
                "at least one value must be finite".into(),
            ));
        }
        Ok(Self { a, b, values })
    }

    /// Samples `f` at the `points` grid points of `[a, b]`.
    pub fn from_fn(
        a: f64,
        b: f64,
        points: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, RegularizeError> {
        let h = (b - a) / (points.max(2) - 1) as f64;
        Self::new(a, b, (0..points).map(|i| f(a + i as f64 * h)).collect())
    }

    /// Samples a multiplicity profile; infinite counts become `+∞`.
    pub fn from_profile(
        profile: &MultiplicityProfile,
        points: usize,
    ) -> Result<Self, RegularizeError> {
        let dom = profile.domain();
        Self::from_fn(dom.a, dom.b, points, |x| profile.count_at(x).as_f64())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.values.len() - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.a + i as f64 * self.spacing()
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.a == other.a && self.b == other.b && self.values.len() == other.values.len()
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            a: self.a,
            b: self.b,
            values,
        }
    }
}

/// `min(j, min_m (j·|x_i − x_m| + g_m))` at every grid point, in linear time.
///
/// A forward and a backward sweep each keep the best source seen so far; the
/// value at `i` is then computed from that source as `g_s + (j·Δx)·|i − s|`.
pub fn inf_convolution(g: &GridFunction, j: f64) -> Result<GridFunction, RegularizeError> {
    if !(j.is_finite() && j > 0.0) {
        return Err(RegularizeError::NonPositiveJ(j));
    }
    let v = &g.values;
    let n = v.len();
    let step = j * g.spacing();
    let cone = |s: usize, i: usize| v[s] + step * (s.abs_diff(i) as f64);

    let mut out = v.clone();
    let mut source: Option<usize> = None;
    for i in 0..n {
        match source {
            Some(s) if cone(s, i) < v[i] => out[i] = cone(s, i),
            _ if v[i].is_finite() => source = Some(i),
            _ => {}
        }
    }
    source = None;
    for i in (0..n).rev() {
        match source {
            Some(s) if cone(s, i) < v[i] => out[i] = out[i].min(cone(s, i)),
            _ if v[i].is_finite() => source = Some(i),
            _ => {}
        }
    }
    for o in &mut out {
        *o = o.min(j);
    }
    Ok(g.with_values(out))
}

/// Checks that the regularizations along an ascending list of `j` are pointwise
/// non-decreasing and that, at the largest `j`, the output equals `min(j, g)` at
/// finite points whenever the finite samples of `g` are `j`-Lipschitz.
pub fn monotone_envelope_check(g: &GridFunction, j_list: &[f64]) -> bool {
    const TOL: f64 = 1e-12;
    if j_list.is_empty() || j_list.windows(2).any(|w| w[1] < w[0]) {
        return false;
    }
    let Ok(envelopes) = j_list
        .iter()
        .map(|&j| inf_convolution(g, j))
        .collect::<Result<Vec<_>, _>>()
    else {
        return false;
    };
    for pair in envelopes.windows(2) {
        if pair[0]
            .values
            .iter()
            .zip(&pair[1].values)
            .any(|(lo, hi)| *lo > hi + TOL)
        {
            return false;
        }
    }

    let j = j_list[j_list.len() - 1];
    let last = &envelopes[envelopes.len() - 1];
    let h = g.spacing();
    let finite: Vec<usize> = (0..g.len()).filter(|&i| g.values[i].is_finite()).collect();
    let lipschitz = finite
        .windows(2)
        .all(|w| (g.values[w[1]] - g.values[w[0]]).abs() <= j * h * (w[1] - w[0]) as f64 + TOL);
    if lipschitz {
        return finite
            .iter()
            .all(|&i| (last.values[i] - g.values[i].min(j)).abs() <= TOL);
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum OrderingStatus {
    Holds,
    Violated(String),
    /// The regularized profiles have not settled, so no limit is reported.
    Inconclusive,
}

/// Checks `inf_convolution(n_k, j) ≤ n_k` for every profile, and that the limit
/// of the regularized profiles dominates `inf_convolution(m_estimate, j)`.
///
/// The limit is taken as the last regularized profile once the last two agree
/// to `1e-9` in sup norm.
pub fn ordering_check(
    profiles: &[GridFunction],
    m_estimate: &GridFunction,
    j: f64,
) -> Result<OrderingStatus, RegularizeError> {
    if profiles.iter().any(|p| !p.same_grid(m_estimate)) {
        return Err(RegularizeError::GridMismatch);
    }
    let regularized = profiles
        .iter()
        .map(|p| inf_convolution(p, j))
        .collect::<Result<Vec<_>, _>>()?;
    for (k, (p, r)) in profiles.iter().zip(&regularized).enumerate() {
        if let Some(i) = (0..p.len()).find(|&i| r.values[i] > p.values[i]) {
            return Ok(OrderingStatus::Violated(format!(
                "regularized profile {k} exceeds the profile at grid point {i}"
            )));
        }
    }
    if regularized.len() < 2 {
        return Ok(OrderingStatus::Inconclusive);
    }
    let (prev, limit) = (
        &regularized[regularized.len() - 2],
        &regularized[regularized.len() - 1],
    );
    let drift = prev
        .values
        .iter()
        .zip(&limit.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if drift >= 1e-9 {
        return Ok(OrderingStatus::Inconclusive);
    }
    let m_j = inf_convolution(m_estimate, j)?;
    if let Some(i) = (0..limit.len()).find(|&i| limit.values[i] < m_j.values[i] - 1e-9) {
        return Ok(OrderingStatus::Violated(format!(
            "limit {} is below the regularized estimate {} at grid point {i}",
            limit.values[i], m_j.values[i]
        )));
    }
    Ok(OrderingStatus::Holds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(g: &GridFunction, j: f64) -> Vec<f64> {
        let step = j * g.spacing();
        (0..g.len())
            .map(|i| {
                (0..g.len())
                    .map(|m| g.values[m] + step * (i.abs_diff(m) as f64))
                    .fold(f64::INFINITY, f64::min)
                    .min(j)
            })
            .collect()
    }

    fn step_fn() -> GridFunction {
        GridFunction::from_fn(0.0, 1.0, 101, |x| if x <= 0.5 { 0.0 } else { 10.0 }).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let g = GridFunction::new(0.0, 1.0, vec![1.5; 11]).unwrap();
        assert_eq!(inf_convolution(&g, 2.0).unwrap().values(), &[1.5; 11]);
    }

    #[test]
    fn step_example() {
        let g = step_fn();
        let out = inf_convolution(&g, 2.0).unwrap();
        for i in 0..g.len() {
            let x = g.x(i);
            let expected = if x <= 0.5 {
                0.0
            } else {
                (2.0 * (x - 0.5)).min(2.0)
            };
            assert!((out.values()[i] - expected).abs() < 1e-12, "x = {x}");
        }
        assert_eq!(out.values(), brute(&g, 2.0).as_slice());
    }

    #[test]
    fn infinite_values_are_filled() {
        let mut v = vec![3.0; 21];
        v[4] = f64::INFINITY;
        v[10] = f64::INFINITY;
        let g = GridFunction::new(0.0, 1.0, v).unwrap();
        let out = inf_convolution(&g, 5.0).unwrap();
        assert!(out.values().iter().all(|v| v.is_finite() && *v <= 5.0));
        assert!((out.values()[4] - 3.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let g = step_fn();
        assert_eq!(
            inf_convolution(&g, 0.0),
            Err(RegularizeError::NonPositiveJ(0.0))
        );
        assert!(GridFunction::new(0.0, 1.0, vec![f64::INFINITY; 4]).is_err());
    }

    #[test]
    fn envelope_examples() {
        let lip = GridFunction::from_fn(0.0, 1.0, 201, |x| 2.0 + (3.0 * x).sin() / 3.0).unwrap();
        assert!(monotone_envelope_check(&lip, &[1.0, 2.0, 4.0, 8.0]));
        let out = inf_convolution(&lip, 8.0).unwrap();
        assert_eq!(out.values(), lip.values());

        let g = step_fn();
        assert!(monotone_envelope_check(&g, &[1.0, 2.0, 4.0]));
        let at = |j: f64| inf_convolution(&g, j).unwrap().values()[75];
        assert!((at(1.0) - 0.25).abs() < 1e-12);
        assert!((at(2.0) - 0.5).abs() < 1e-12);
        assert!((at(4.0) - 1.0).abs() < 1e-12);

        let mut v = vec![f64::INFINITY; 41];
        v[10] = 0.0;
        let cone = GridFunction::new(0.0, 1.0, v).unwrap();
        assert!(monotone_envelope_check(&cone, &[1.0, 3.0, 9.0]));
        let out = inf_convolution(&cone, 3.0).unwrap();
        for i in 0..41 {
            let expected = (3.0 * (cone.x(i) - 0.25).abs()).min(3.0);
            assert!((out.values()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ordering_examples() {
        let two = GridFunction::new(0.0, 1.0, vec![2.0; 51]).unwrap();
        let profiles = vec![two.clone(); 4];
        assert_eq!(
            ordering_check(&profiles, &two, 5.0).unwrap(),
            OrderingStatus::Holds
        );

        let mut spiked = profiles.clone();
        let mut v = vec![2.0; 51];
        v[20] = 9.0;
        spiked[1] = GridFunction::new(0.0, 1.0, v).unwrap();
        assert_eq!(
            ordering_check(&spiked, &two, 5.0).unwrap(),
            OrderingStatus::Holds
        );

        let mut moving = profiles.clone();
        moving[3] = GridFunction::new(0.0, 1.0, vec![3.0; 51]).unwrap();
        assert_eq!(
            ordering_check(&moving, &two, 5.0).unwrap(),
            OrderingStatus::Inconclusive
        );

        let other = GridFunction::new(0.0, 2.0, vec![2.0; 51]).unwrap();
        assert_eq!(
            ordering_check(&profiles, &other, 5.0),
            Err(RegularizeError::GridMismatch)
        );
    }

    #[test]
    fn json_sentinel() {
        let g: GridFunction =
            serde_json::from_str(r#"{"a":0,"b":1,"values":[1.0,"inf",2]}"#).unwrap();
        assert!(g.values()[1].is_infinite());
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"a":0.0,"b":1.0,"values":[1.0,"inf",2.0]}"#);
        assert!(
            serde_json::from_str::<GridFunction>(r#"{"a":0,"b":1,"values":[1.0,"nan"]}"#).is_err()
        );
    }
}
