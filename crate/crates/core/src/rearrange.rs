//! Image measure, monotone rearrangement and multiplicity.
//!
//! For a continuous piecewise-affine `U` on `[a, b]` the image measure
//! `ν = U_#λ` is a finite sum of piecewise-constant densities (one term `1/|s|`
//! per rising or falling piece) plus atoms (one per flat piece). Its quantile
//! function, shifted to start at `a`, is the unique non-decreasing `T` with the
//! same image measure, and the number of pieces of `U` crossing each level band
//! gives the multiplicity profile `n`.
//!
//! All pointwise statements hold away from the finitely many critical values of
//! `U` (its values at breakpoints); level bands are open.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::func::{FuncError, Interval, PiecewiseAffine};

/// Relative tolerance used to merge critical values of `U`.
pub const LEVEL_MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RearrangeError {
    #[error("measure has mass {found}, but the transport domain has length {expected}")]
    MassMismatch { expected: f64, found: f64 },

    #[error("measure support is not a single interval")]
    DisconnectedSupport,

    #[error("transport does not match the image measure of u: {0}")]
    TransportMismatch(String),

    #[error("level {0} is a critical value of u")]
    CriticalLevel(f64),

    #[error("transport is flat at level {0}")]
    FlatTransport(f64),

    #[error("level {0} lies outside the image of u")]
    LevelOutsideImage(f64),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error(transparent)]
    Func(#[from] FuncError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub y: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawMeasure {
    #[serde(default)]
    density: Vec<DensityPiece>,
    #[serde(default)]
    atoms: Vec<Atom>,
}

/// Finite measure on the line: piecewise-constant density plus atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct Measure1D {
    density: Vec<DensityPiece>,
    atoms: Vec<Atom>,
    #[serde(skip)]
    total_mass: f64,
}

impl TryFrom<RawMeasure> for Measure1D {
    type Error = RearrangeError;

    fn try_from(raw: RawMeasure) -> Result<Self, Self::Error> {
        Measure1D::new(raw.density, raw.atoms)
    }
}

impl Measure1D {
    pub fn new(density: Vec<DensityPiece>, atoms: Vec<Atom>) -> Result<Self, RearrangeError> {
        let invalid = |msg: String| Err(RearrangeError::InvalidMeasure(msg));
        for p in &density {
            if !(p.lo.is_finite() && p.hi.is_finite() && p.d.is_finite())
                || p.lo >= p.hi
                || p.d < 0.0
            {
                return invalid(format!("bad density piece {p:?}"));
            }
        }
        for w in density.windows(2) {
            if w[1].lo <= w[0].lo || w[1].lo < w[0].hi - LEVEL_MERGE_TOL * (w[0].hi - w[0].lo) {
                return invalid("density pieces overlap or are unsorted".into());
            }
        }
        for a in &atoms {
            if !(a.y.is_finite() && a.m.is_finite()) || a.m <= 0.0 {
                return invalid(format!("bad atom {a:?}"));
            }
        }
        if atoms.windows(2).any(|w| w[1].y <= w[0].y) {
            return invalid("atom locations must be strictly increasing".into());
        }
        let total_mass = density.iter().map(|p| p.d * (p.hi - p.lo)).sum::<f64>()
            + atoms.iter().map(|a| a.m).sum::<f64>();
        Ok(Self {
            density,
            atoms,
            total_mass,
        })
    }

    pub fn density(&self) -> &[DensityPiece] {
        &self.density
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// `ν((−∞, y])`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.continuous_part(y)
            + self
                .atoms
                .iter()
                .filter(|a| a.y <= y)
                .map(|a| a.m)
                .sum::<f64>()
    }

    /// `ν((−∞, y))`.
    pub fn cdf_left(&self, y: f64) -> f64 {
        self.continuous_part(y)
            + self
                .atoms
                .iter()
                .filter(|a| a.y < y)
                .map(|a| a.m)
                .sum::<f64>()
    }

    fn continuous_part(&self, y: f64) -> f64 {
        self.density
            .iter()
            .map(|p| {
                if y <= p.lo {
                    0.0
                } else if y >= p.hi {
                    p.d * (p.hi - p.lo)
                } else {
                    p.d * (y - p.lo)
                }
            })
            .sum()
    }

    /// Every location where the CDF changes slope or jumps.
    pub fn nodes(&self) -> Vec<f64> {
        let mut nodes: Vec<f64> = self
            .density
            .iter()
            .flat_map(|p| [p.lo, p.hi])
            .chain(self.atoms.iter().map(|a| a.y))
            .collect();
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        nodes
    }
}

/// Multiplicity value on one band: a finite preimage count, or the sentinel
/// used on intervals where `T` is flat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    Finite(u32),
    Infinite,
}

impl Count {
    pub fn finite(&self) -> Option<u32> {
        match self {
            Count::Finite(n) => Some(*n),
            Count::Infinite => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Count::Finite(n) => *n as f64,
            Count::Infinite => f64::INFINITY,
        }
    }

    /// `count · slope` with `∞ · 0 = 0`. Infinite bands are exactly the flat
    /// intervals of `T`, so their product is 0.
    pub fn times(&self, slope: f64) -> f64 {
        match self {
            Count::Finite(n) => *n as f64 * slope,
            Count::Infinite => 0.0,
        }
    }
}

impl Serialize for Count {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Count::Finite(n) => s.serialize_u32(*n),
            Count::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u32),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => Ok(Count::Finite(n)),
            Repr::S(s) if s == "inf" => Ok(Count::Infinite),
            Repr::S(s) => Err(serde::de::Error::custom(format!("invalid count {s:?}"))),
        }
    }
}

/// Piecewise-constant multiplicity `n(x)` over the transport domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityProfile {
    pub cut_points: Vec<f64>,
    pub counts: Vec<Count>,
}

impl MultiplicityProfile {
    pub fn domain(&self) -> Interval {
        Interval {
            a: self.cut_points[0],
            b: self.cut_points[self.cut_points.len() - 1],
        }
    }

    /// `(lo, hi, count)` for every band.
    pub fn bands(&self) -> impl Iterator<Item = (f64, f64, Count)> + '_ {
        self.cut_points
            .windows(2)
            .zip(&self.counts)
            .map(|(w, c)| (w[0], w[1], *c))
    }

    /// Count on the band containing `x`. At a cut point the smaller of the two
    /// adjacent counts is returned, which keeps the profile lower semicontinuous.
    pub fn count_at(&self, x: f64) -> Count {
        let n = self.counts.len();
        let idx = self.cut_points.partition_point(|&z| z < x);
        if idx < self.cut_points.len() && self.cut_points[idx] == x {
            let left = if idx > 0 {
                Some(self.counts[idx - 1])
            } else {
                None
            };
            let right = if idx < n {
                Some(self.counts[idx])
            } else {
                None
            };
            return match (left, right) {
                (Some(l), Some(r)) => min_count(l, r),
                (Some(c), None) | (None, Some(c)) => c,
                (None, None) => Count::Infinite,
            };
        }
        self.counts[idx.clamp(1, n) - 1]
    }

    pub fn min_finite(&self) -> Option<u32> {
        self.counts.iter().filter_map(Count::finite).min()
    }

    pub fn max_finite(&self) -> Option<u32> {
        self.counts.iter().filter_map(Count::finite).max()
    }
}

fn min_count(a: Count, b: Count) -> Count {
    match (a, b) {
        (Count::Finite(x), Count::Finite(y)) => Count::Finite(x.min(y)),
        (Count::Finite(x), Count::Infinite) | (Count::Infinite, Count::Finite(x)) => {
            Count::Finite(x)
        }
        _ => Count::Infinite,
    }
}

/// Sorted distinct critical values of `u` and, per band between consecutive
/// values, the summed inverse slope and the number of crossing pieces.
#[derive(Debug, Clone)]
pub(crate) struct LevelDecomposition {
    pub levels: Vec<f64>,
    pub band_density: Vec<f64>,
    pub band_count: Vec<u32>,
    pub atom_mass: Vec<f64>,
    pub merge_tol: f64,
}

impl LevelDecomposition {
    pub fn of(u: &PiecewiseAffine) -> Self {
        let values = u.values();
        let range = u.max_value() - u.min_value();
        let merge_tol = LEVEL_MERGE_TOL * range;

        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let mut level_of = vec![0usize; values.len()];
        let mut levels: Vec<f64> = Vec::new();
        let mut anchor = f64::NEG_INFINITY;
        for &i in &order {
            let v = values[i];
            if levels.is_empty() || v - anchor > merge_tol {
                levels.push(v);
                anchor = v;
            }
            level_of[i] = levels.len() - 1;
        }

        let bands = levels.len().saturating_sub(1);
        let mut dens_diff = vec![0.0; bands + 1];
        let mut count_diff = vec![0i64; bands + 1];
        let mut atom_mass = vec![0.0; levels.len()];
        for piece in 0..u.num_pieces() {
            let (k0, k1) = (level_of[piece], level_of[piece + 1]);
            if k0 == k1 {
                atom_mass[k0] += u.piece_length(piece);
                continue;
            }
            let (lo, hi) = (k0.min(k1), k0.max(k1));
            let inv = 1.0 / u.slope(piece).abs();
            dens_diff[lo] += inv;
            dens_diff[hi] -= inv;
            count_diff[lo] += 1;
            count_diff[hi] -= 1;
        }
        let mut band_density = Vec::with_capacity(bands);
        let mut band_count = Vec::with_capacity(bands);
        let (mut d, mut c) = (0.0, 0i64);
        for k in 0..bands {
            d += dens_diff[k];
            c += count_diff[k];
            band_density.push(d);
            band_count.push(c as u32);
        }
        Self {
            levels,
            band_density,
            band_count,
            atom_mass,
            merge_tol,
        }
    }

    pub fn is_critical(&self, y: f64) -> bool {
        let idx = self.levels.partition_point(|&l| l < y);
        let near =
            |k: usize| (self.levels[k] - y).abs() <= self.merge_tol.max(f64::EPSILON * y.abs());
        (idx < self.levels.len() && near(idx)) || (idx > 0 && near(idx - 1))
    }
}

/// Image measure `U_#λ` of Lebesgue measure on the domain of `u`.
pub fn pushforward(u: &PiecewiseAffine) -> Measure1D {
    measure_from_decomposition(&LevelDecomposition::of(u))
}

fn measure_from_decomposition(dec: &LevelDecomposition) -> Measure1D {
    let density = dec
        .band_density
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(k, d)| DensityPiece {
            lo: dec.levels[k],
            hi: dec.levels[k + 1],
            d: *d,
        })
        .collect();
    let atoms = dec
        .atom_mass
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(k, m)| Atom {
            y: dec.levels[k],
            m: *m,
        })
        .collect();
    Measure1D::new(density, atoms).expect("decomposition yields a valid measure")
}

/// The non-decreasing map `T` on `domain` with `T_#λ = ν`: the quantile
/// function of `ν` shifted to start at `domain.a`.
///
/// An atom of mass `m` becomes a flat piece of length `m`; a density `d`
/// becomes a piece of slope `1/d`.
pub fn monotone_transport(
    nu: &Measure1D,
    domain: Interval,
) -> Result<PiecewiseAffine, RearrangeError> {
    let len = domain.length();
    if (nu.total_mass() - len).abs() > 1e-9 * len {
        return Err(RearrangeError::MassMismatch {
            expected: len,
            found: nu.total_mass(),
        });
    }
    let pieces = nu.density();
    let atoms = nu.atoms();
    if pieces.is_empty() && atoms.len() != 1 {
        return Err(RearrangeError::DisconnectedSupport);
    }
    if let (Some(first), Some(last)) = (pieces.first(), pieces.last()) {
        let tol = LEVEL_MERGE_TOL * (last.hi - first.lo);
        if pieces.windows(2).any(|w| (w[1].lo - w[0].hi).abs() > tol)
            || pieces.iter().any(|p| p.d <= 0.0)
            || atoms
                .iter()
                .any(|a| a.y < first.lo - tol || a.y > last.hi + tol)
        {
            return Err(RearrangeError::DisconnectedSupport);
        }
    }

    let min_gap = crate::func::DEGENERATE_GAP * len;
    let mut xs = vec![domain.a];
    let mut ys = vec![pieces.first().map_or_else(|| atoms[0].y, |p| p.lo)];
    let mut x = domain.a;
    let push = |x: f64, y: f64, xs: &mut Vec<f64>, ys: &mut Vec<f64>| {
        if x - xs[xs.len() - 1] > min_gap {
            xs.push(x);
            ys.push(y);
        } else {
            // too short to keep as its own piece; absorb into the previous point
            let last = ys.len() - 1;
            ys[last] = y;
        }
    };

    let mut next_atom = 0;
    for p in pieces {
        let mut lo = p.lo;
        while next_atom < atoms.len() && atoms[next_atom].y < p.hi {
            let atom = atoms[next_atom];
            if atom.y > lo {
                x += p.d * (atom.y - lo);
                push(x, atom.y, &mut xs, &mut ys);
                lo = atom.y;
            }
            x += atom.m;
            push(x, atom.y.max(lo), &mut xs, &mut ys);
            next_atom += 1;
        }
        x += p.d * (p.hi - lo);
        push(x, p.hi, &mut xs, &mut ys);
    }
    for atom in &atoms[next_atom..] {
        x += atom.m;
        push(x, atom.y, &mut xs, &mut ys);
    }

    if xs.len() == 1 {
        xs.push(domain.b);
        ys.push(ys[0]);
    }
    let last = xs.len() - 1;
    xs[last] = domain.b;
    Ok(PiecewiseAffine::new(xs, ys)?)
}

/// `inf { x : t(x) ≥ y }` for non-decreasing `t`.
pub(crate) fn lower_preimage(t: &PiecewiseAffine, y: f64) -> f64 {
    let (xs, vs) = (t.breakpoints(), t.values());
    let j = vs.partition_point(|&v| v < y);
    if j == 0 {
        return xs[0];
    }
    if j == vs.len() {
        return xs[xs.len() - 1];
    }
    if vs[j] == y {
        return xs[j];
    }
    xs[j - 1] + (y - vs[j - 1]) / (vs[j] - vs[j - 1]) * (xs[j] - xs[j - 1])
}

/// `sup { x : t(x) ≤ y }` for non-decreasing `t`.
pub(crate) fn upper_preimage(t: &PiecewiseAffine, y: f64) -> f64 {
    let (xs, vs) = (t.breakpoints(), t.values());
    let j = vs.partition_point(|&v| v <= y);
    if j == vs.len() {
        return xs[xs.len() - 1];
    }
    if j == 0 {
        return xs[0];
    }
    if vs[j - 1] == y {
        return xs[j - 1];
    }
    xs[j - 1] + (y - vs[j - 1]) / (vs[j] - vs[j - 1]) * (xs[j] - xs[j - 1])
}

/// Multiplicity profile of `u` over the domain of its rearrangement `t`.
///
/// Cut points are `T⁻¹(y_k)` for the critical values `y_k` of `u`; when `T` is
/// flat at `y_k` the whole flat interval becomes a band with count
/// [`Count::Infinite`].
pub fn multiplicity(
    u: &PiecewiseAffine,
    t: &PiecewiseAffine,
) -> Result<MultiplicityProfile, RearrangeError> {
    let dom = u.domain();
    let tdom = t.domain();
    let len = dom.length();
    if (dom.a - tdom.a).abs() > 1e-9 * len || (dom.b - tdom.b).abs() > 1e-9 * len {
        return Err(RearrangeError::TransportMismatch(format!(
            "domains differ: [{}, {}] vs [{}, {}]",
            dom.a, dom.b, tdom.a, tdom.b
        )));
    }
    if !t.is_non_decreasing() {
        return Err(RearrangeError::TransportMismatch(
            "transport is not non-decreasing".into(),
        ));
    }
    let dec = LevelDecomposition::of(u);
    let nu_u = measure_from_decomposition(&dec);
    let nu_t = pushforward(t);
    let mut probes = nu_u.nodes();
    probes.extend(nu_t.nodes());
    let tol = 1e-7 * len.max(1.0);
    for y in probes {
        let diff = (nu_u.cdf(y) - nu_t.cdf(y))
            .abs()
            .max((nu_u.cdf_left(y) - nu_t.cdf_left(y)).abs());
        if diff > tol {
            return Err(RearrangeError::TransportMismatch(format!(
                "CDFs differ by {diff} at level {y}"
            )));
        }
    }

    let mut segments: Vec<(f64, f64, Count)> = Vec::new();
    let mut prev_hi = dom.a;
    let nlev = dec.levels.len();
    for k in 0..nlev {
        let y = dec.levels[k];
        let (zl, zr) = if dec.atom_mass[k] > 0.0 {
            let zl = if k == 0 { dom.a } else { lower_preimage(t, y) };
            let zr = if k + 1 == nlev {
                dom.b
            } else {
                upper_preimage(t, y)
            };
            (zl, zr)
        } else {
            let z = if k == 0 {
                dom.a
            } else if k + 1 == nlev {
                dom.b
            } else {
                lower_preimage(t, y)
            };
            (z, z)
        };
        if k > 0 {
            segments.push((prev_hi, zl, Count::Finite(dec.band_count[k - 1])));
        }
        if zr > zl {
            segments.push((zl, zr, Count::Infinite));
        }
        prev_hi = zr;
    }

    let mut cut_points = vec![dom.a];
    let mut counts = Vec::new();
    for (lo, hi, c) in segments {
        let last = cut_points[cut_points.len() - 1];
        if hi > last && hi > lo {
            cut_points.push(hi);
            counts.push(c);
        }
    }
    let n = cut_points.len();
    if n == 1 {
        // single critical value and no atom cannot occur for a valid u
        cut_points.push(dom.b);
        counts.push(Count::Infinite);
    } else {
        cut_points[n - 1] = dom.b;
    }
    Ok(MultiplicityProfile { cut_points, counts })
}

/// `|1/T'(T⁻¹(y)) − Σ_{x ∈ U⁻¹(y)} 1/|U'(x)||` at a regular level `y`.
pub fn density_relation_residual(
    u: &PiecewiseAffine,
    t: &PiecewiseAffine,
    y: f64,
) -> Result<f64, RearrangeError> {
    let dec = LevelDecomposition::of(u);
    if y < dec.levels[0] || y > dec.levels[dec.levels.len() - 1] {
        return Err(RearrangeError::LevelOutsideImage(y));
    }
    if dec.is_critical(y) {
        return Err(RearrangeError::CriticalLevel(y));
    }
    let x = lower_preimage(t, y);
    let t_slope = t.slope(t.piece_index(x));
    if !(t_slope > 0.0) {
        return Err(RearrangeError::FlatTransport(y));
    }
    let vs = u.values();
    let preimage_sum: f64 = (0..u.num_pieces())
        .filter(|&i| {
            let (lo, hi) = (vs[i].min(vs[i + 1]), vs[i].max(vs[i + 1]));
            lo < y && y < hi
        })
        .map(|i| 1.0 / u.slope(i).abs())
        .sum();
    Ok((1.0 / t_slope - preimage_sum).abs())
}

/// Pushforward, rearrangement and multiplicity in one call.
pub fn rearrange(
    u: &PiecewiseAffine,
) -> Result<(Measure1D, PiecewiseAffine, MultiplicityProfile), RearrangeError> {
    let nu = pushforward(u);
    let t = monotone_transport(&nu, u.domain())?;
    let n = multiplicity(u, &t)?;
    Ok((nu, t, n))
}
