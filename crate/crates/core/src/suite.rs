//! Seeded randomized campaign: random piecewise-affine functions against a
//! fixed set of costs, one CSV row per (seed, cost).

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{verify_inequality, EnergyError, InequalityReport};
use crate::func::{random_piecewise_affine, ConvexCost, Interval, PiecewiseAffine, SlopeSigns};

pub const MAX_PIECES: usize = 60;
pub const SLOPE_RANGE: (f64, f64) = (0.1, 10.0);
pub const CSV_HEADER: &str = "seed,cost_kind,lhs,rhs,gap,min_n,max_n";

/// `t`, `t²`, `t⁴` and `eᵗ`.
pub fn standard_costs() -> Vec<ConvexCost> {
    vec![
        ConvexCost::power(1.0).unwrap(),
        ConvexCost::power(2.0).unwrap(),
        ConvexCost::power(4.0).unwrap(),
        ConvexCost::exp(),
    ]
}

/// The campaign function for `seed`: 1 to 60 pieces on `[0, 1]`, slope
/// magnitudes in `[0.1, 10]`.
pub fn campaign_function(seed: u64, signs: SlopeSigns) -> PiecewiseAffine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pieces = rng.random_range(1..=MAX_PIECES);
    random_piecewise_affine(seed, pieces, SLOPE_RANGE, Interval::unit(), signs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub seed: u64,
    pub cost_kind: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub min_n: Option<u32>,
    pub max_n: Option<u32>,
    pub holds: bool,
}

impl SuiteRow {
    fn from_report(seed: u64, cost: &ConvexCost, r: &InequalityReport) -> Self {
        Self {
            seed,
            cost_kind: cost.label(),
            lhs: r.lhs,
            rhs: r.rhs,
            gap: r.gap,
            min_n: r.min_count(),
            max_n: r.max_count(),
            holds: r.holds(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub rows: Vec<SuiteRow>,
}

impl SuiteOutcome {
    pub fn violations(&self) -> impl Iterator<Item = &SuiteRow> {
        self.rows.iter().filter(|r| !r.holds)
    }

    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Runs seeds `first_seed .. first_seed + count` against `costs`. Seeds are
/// processed in parallel; rows come back in seed order.
pub fn run_suite(
    first_seed: u64,
    count: u64,
    signs: SlopeSigns,
    costs: &[ConvexCost],
    rel_tol: f64,
) -> Result<SuiteOutcome, EnergyError> {
    let per_seed = (first_seed..first_seed + count)
        .into_par_iter()
        .map(|seed| {
            let u = campaign_function(seed, signs);
            costs
                .iter()
                .map(|f| match verify_inequality(&u, f, rel_tol) {
                    Ok(r) => Ok(SuiteRow::from_report(seed, f, &r)),
                    Err(EnergyError::InequalityViolated(r)) => {
                        Ok(SuiteRow::from_report(seed, f, &r))
                    }
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteOutcome {
        rows: per_seed.into_iter().flatten().collect(),
    })
}

fn fmt_count(c: Option<u32>) -> String {
    c.map_or_else(|| "inf".to_string(), |n| n.to_string())
}

/// Writes the rows as CSV with 17 significant digits per real.
pub fn write_csv<W: Write>(rows: &[SuiteRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{},{}",
            r.seed,
            r.cost_kind,
            r.lhs,
            r.rhs,
            r.gap,
            fmt_count(r.min_n),
            fmt_count(r.max_n)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn campaign_functions_are_deterministic() {
        let u = campaign_function(42, SlopeSigns::Random);
        assert_eq!(u, campaign_function(42, SlopeSigns::Random));
        assert!((1..=MAX_PIECES).contains(&u.num_pieces()));
        assert!(campaign_function(5, SlopeSigns::Positive).is_non_decreasing());
    }

    #[test]
    fn small_suite() {
        let out = run_suite(0, 5, SlopeSigns::Random, &standard_costs(), 1e-9).unwrap();
        assert_eq!(out.rows.len(), 20);
        assert!(out.all_hold());
        assert_eq!(out.rows[4].seed, 1);
        let mut buf = Vec::new();
        write_csv(&out.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 21);
    }
}
