//! Energies `∫ f(|U'|)` and `∫ f(n·T')`, the inequality between them, and a
//! level-set (coarea) evaluation of the first one that does not go through `T`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::func::{ConvexCost, FuncError, Interval, PiecewiseAffine};
use crate::rearrange::{self, Count, LevelDecomposition, MultiplicityProfile, RearrangeError};

/// Default relative tolerance; the absolute tolerance is this times `max(1, lhs)`.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("inequality violated: lhs = {}, rhs = {}, gap = {}", .0.lhs, .0.rhs, .0.gap)]
    InequalityViolated(Box<InequalityReport>),

    #[error("multiplicity profile does not fit the transport: {0}")]
    IncompatibleProfile(String),

    #[error("u has a flat piece; the coarea evaluation needs nonzero slopes")]
    FlatPiecePresent,

    #[error("level grid needs at least 2 cells, got {0}")]
    GridTooSmall(usize),

    #[error(
        "band ({lo}, {hi}) has a single preimage; the interval is not a non-injectivity interval"
    )]
    NotNonInjective { lo: f64, hi: f64 },

    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),

    #[error(transparent)]
    Rearrange(#[from] RearrangeError),

    #[error(transparent)]
    Func(#[from] FuncError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportBand {
    pub lo: f64,
    pub hi: f64,
    pub n: Count,
    pub tslope: f64,
    pub contrib: f64,
}

/// Both sides of `∫ f(|U'|) ≥ ∫ f(n·T')` with the per-band breakdown of the right side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub bands: Vec<ReportBand>,
    pub tolerance: f64,
}

impl InequalityReport {
    pub fn holds(&self) -> bool {
        self.gap >= -self.tolerance
    }

    pub fn min_count(&self) -> Option<u32> {
        self.bands.iter().filter_map(|b| b.n.finite()).min()
    }

    pub fn max_count(&self) -> Option<u32> {
        self.bands.iter().filter_map(|b| b.n.finite()).max()
    }
}

/// `∫ f(|u'|)`, exact because the integrand is piecewise constant.
pub fn dirichlet_energy(u: &PiecewiseAffine, f: &ConvexCost) -> f64 {
    (0..u.num_pieces())
        .map(|i| u.piece_length(i) * f.eval(u.slope(i).abs()))
        .sum()
}

/// Bands of the common refinement of `t`'s pieces and `n`'s cut points.
pub fn rearranged_bands(
    t: &PiecewiseAffine,
    n: &MultiplicityProfile,
    f: &ConvexCost,
) -> Result<Vec<ReportBand>, EnergyError> {
    let dom = t.domain();
    let ndom = n.domain();
    let len = dom.length();
    if (dom.a - ndom.a).abs() > 1e-9 * len || (dom.b - ndom.b).abs() > 1e-9 * len {
        return Err(EnergyError::IncompatibleProfile(format!(
            "profile covers [{}, {}], transport covers [{}, {}]",
            ndom.a, ndom.b, dom.a, dom.b
        )));
    }
    if n.counts.len() + 1 != n.cut_points.len() || n.cut_points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EnergyError::IncompatibleProfile("malformed profile".into()));
    }
    let mut points: Vec<f64> = t
        .breakpoints()
        .iter()
        .chain(&n.cut_points[1..n.cut_points.len() - 1])
        .copied()
        .collect();
    points.sort_by(f64::total_cmp);
    let merge = 1e-13 * len;
    let mut merged: Vec<f64> = Vec::with_capacity(points.len());
    for p in points {
        match merged.last() {
            Some(&last) if p - last <= merge => {}
            _ => merged.push(p),
        }
    }
    let last = merged.len() - 1;
    merged[last] = dom.b;

    Ok(merged
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let count = n.count_at(mid);
            let tslope = t.slope(t.piece_index(mid));
            let contrib = (hi - lo) * f.eval(count.times(tslope));
            ReportBand {
                lo,
                hi,
                n: count,
                tslope,
                contrib,
            }
        })
        .collect())
}

/// `∫ f(n·T')`, with `n·T' = 0` on flat intervals of `T` (where `n` is infinite).
pub fn rearranged_energy(
    t: &PiecewiseAffine,
    n: &MultiplicityProfile,
    f: &ConvexCost,
) -> Result<f64, EnergyError> {
    Ok(rearranged_bands(t, n, f)?.iter().map(|b| b.contrib).sum())
}

/// Rearranges `u` and compares both energies.
///
/// The absolute tolerance is `rel_tol · max(1, lhs)`. A gap below `−tolerance`
/// is returned as [`EnergyError::InequalityViolated`] carrying the full report.
pub fn verify_inequality(
    u: &PiecewiseAffine,
    f: &ConvexCost,
    rel_tol: f64,
) -> Result<InequalityReport, EnergyError> {
    if !(rel_tol.is_finite() && rel_tol > 0.0) {
        return Err(EnergyError::InvalidTolerance(rel_tol));
    }
    let (_, t, n) = rearrange::rearrange(u)?;
    let lhs = dirichlet_energy(u, f);
    let bands = rearranged_bands(&t, &n, f)?;
    let rhs: f64 = bands.iter().map(|b| b.contrib).sum();
    let report = InequalityReport {
        lhs,
        rhs,
        gap: lhs - rhs,
        bands,
        tolerance: rel_tol * lhs.max(1.0),
    };
    if report.holds() {
        Ok(report)
    } else {
        Err(EnergyError::InequalityViolated(Box::new(report)))
    }
}

/// Midpoint-rule evaluation of `∫ dy Σ_{x ∈ U⁻¹(y)} f(|U'(x)|)/|U'(x)|` over a
/// uniform grid of `grid` level cells spanning the image of `u`.
///
/// Converges to [`dirichlet_energy`] with error `O(Δy)` per critical value.
pub fn coarea_energy(u: &PiecewiseAffine, f: &ConvexCost, grid: usize) -> Result<f64, EnergyError> {
    if grid < 2 {
        return Err(EnergyError::GridTooSmall(grid));
    }
    let dec = LevelDecomposition::of(u);
    let vs = u.values();
    let flat = |i: usize| (vs[i + 1] - vs[i]).abs() <= dec.merge_tol;
    if (0..u.num_pieces()).any(flat) {
        return Err(EnergyError::FlatPiecePresent);
    }
    let (ymin, ymax) = (u.min_value(), u.max_value());
    let dy = (ymax - ymin) / grid as f64;
    // weight of each piece, added to the level cells whose midpoint falls in [lo, hi)
    let mut diff = vec![0.0; grid + 1];
    let cell_of = |y: f64| (((y - ymin) / dy - 0.5).ceil().max(0.0) as usize).min(grid);
    for i in 0..u.num_pieces() {
        let s = u.slope(i).abs();
        let w = f.eval(s) / s;
        let (lo, hi) = (vs[i].min(vs[i + 1]), vs[i].max(vs[i + 1]));
        let (m0, m1) = (cell_of(lo), cell_of(hi));
        diff[m0] += w;
        diff[m1] -= w;
    }
    let mut level_sum = 0.0;
    let mut total = 0.0;
    for d in &diff[..grid] {
        level_sum += d;
        total += level_sum;
    }
    Ok(total * dy)
}

/// Energy gain from replacing `u` by its rearrangement on `sub`, for `f = t²`.
///
/// Returns `(3·∫T'², ∫|U'|² − ∫T'²)`; when every band of `sub` has at least two
/// preimages the second is at least the first.
pub fn injectivity_gain(u: &PiecewiseAffine, sub: Interval) -> Result<(f64, f64), EnergyError> {
    let local = u.restrict(sub)?;
    let (_, t, n) = rearrange::rearrange(&local)?;
    if let Some((lo, hi, _)) = n
        .bands()
        .find(|(_, _, c)| matches!(c, Count::Finite(k) if *k < 2))
    {
        return Err(EnergyError::NotNonInjective { lo, hi });
    }
    let quad = ConvexCost::power(2.0)?;
    let t_energy = dirichlet_energy(&t, &quad);
    let u_energy = dirichlet_energy(&local, &quad);
    Ok((3.0 * t_energy, u_energy - t_energy))
}
