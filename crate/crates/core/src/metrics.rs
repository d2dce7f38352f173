//! Performance measures of a cleared day: surplus, average price, paradox
//! counts, losses and worst per-unit price deviations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{BlockOutcome, Paradox};
use crate::model::{Money, Price};
use crate::solver::Solution;

/// How the per-unit loss of a paradoxical block is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationConvention {
    /// |sum_t Q_bt (P_b - p_t)| / sum_t |Q_bt|
    #[default]
    PerUnit,
    /// |sum over active periods of (P_b - p_t)|
    Literal,
}

impl FromStr for DeviationConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-unit" => Ok(Self::PerUnit),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown deviation convention `{other}` (per-unit | literal)")),
        }
    }
}

impl fmt::Display for DeviationConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerUnit => "per-unit",
            Self::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measures {
    pub ts: Money,
    pub mcp_daily_avg: Price,
    pub n_pab: usize,
    pub n_prb: usize,
    /// Money lost by paradoxically accepted blocks.
    pub tl: Money,
    /// Profit missed by paradoxically rejected blocks.
    pub tlp: Money,
    pub mul: Price,
    pub mulp: Price,
    /// Compensation paid to accepted loss-making blocks settled at their bid.
    pub side_payment: Money,
    pub convention: DeviationConvention,
}

impl Measures {
    pub fn n_paradox(&self) -> usize {
        self.n_pab + self.n_prb
    }

    pub fn total_loss(&self) -> Money {
        self.tl + self.tlp
    }

    pub fn max_price_diff(&self) -> Price {
        self.mul.max(self.mulp)
    }

    pub fn paradox_free(&self) -> bool {
        self.n_paradox() == 0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("solution has no incumbent to measure")]
pub struct NoIncumbent;

pub fn compute_measures(solution: &Solution) -> Result<Measures, NoIncumbent> {
    compute_measures_with(solution, DeviationConvention::PerUnit)
}

pub fn compute_measures_with(solution: &Solution, convention: DeviationConvention) -> Result<Measures, NoIncumbent> {
    let inc = solution.incumbent.as_ref().ok_or(NoIncumbent)?;
    let deviation = |b: &BlockOutcome| match convention {
        DeviationConvention::PerUnit => b.unit_deviation,
        DeviationConvention::Literal => b.literal_deviation,
    };
    let pabs: Vec<&BlockOutcome> = inc.blocks.iter().filter(|b| b.paradox == Paradox::Pab).collect();
    let prbs: Vec<&BlockOutcome> = inc.blocks.iter().filter(|b| b.paradox == Paradox::Prb).collect();
    let tl: Money = -pabs.iter().map(|b| b.surplus).sum::<Money>();
    let tlp: Money = prbs.iter().map(|b| b.surplus).sum::<Money>() + 0.0;
    let worst = |set: &[&BlockOutcome]| set.iter().map(|b| deviation(b)).fold(0.0, f64::max);
    let mcp = if inc.prices.is_empty() {
        0.0
    } else {
        inc.prices.iter().sum::<Price>() / inc.prices.len() as f64
    };
    Ok(Measures {
        ts: inc.total_surplus(),
        mcp_daily_avg: mcp,
        n_pab: pabs.len(),
        n_prb: prbs.len(),
        tl,
        tlp,
        mul: worst(&pabs),
        mulp: worst(&prbs),
        side_payment: tl,
        convention,
    })
}

/// One line of the per-instance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub instance_id: String,
    pub rule: String,
    pub ts: Money,
    pub mcp: Price,
    pub n_pab: usize,
    pub n_prb: usize,
    pub tl: Money,
    pub tlp: Money,
    pub mul: Price,
    pub mulp: Price,
    pub side_payment: Money,
    pub status: String,
    pub gap: Money,
    pub wall_time: f64,
}

impl MeasureRow {
    pub fn new(instance_id: &str, solution: &Solution, measures: &Measures) -> Self {
        Self {
            instance_id: instance_id.to_string(),
            rule: solution.rule.to_string(),
            ts: measures.ts,
            mcp: measures.mcp_daily_avg,
            n_pab: measures.n_pab,
            n_prb: measures.n_prb,
            tl: measures.tl,
            tlp: measures.tlp,
            mul: measures.mul,
            mulp: measures.mulp,
            side_payment: measures.side_payment,
            status: format!("{:?}", solution.status),
            gap: solution.gap.unwrap_or(f64::NAN),
            wall_time: solution.wall_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::Rule;
    use crate::model::{BlockBid, Direction, Instance, PriceBounds, Segment};
    use crate::solver::{solve, SolveParams};

    fn instance_a() -> Instance {
        Instance::new(1, PriceBounds::new(0.0, 100.0))
            .with_segment(0, Direction::Supply, Segment::new(0.0, 100.0, -100.0))
            .with_segment(0, Direction::Demand, Segment::new(100.0, 0.0, 100.0))
    }

    fn instance_c() -> Instance {
        instance_a().with_block(BlockBid::new("b", 30.0, [(0, -60.0)]))
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * b.abs().max(1.0)
    }

    #[test]
    fn instance_c_under_r3() {
        let s = solve(&instance_c(), Rule::NoPrb, &SolveParams::exact()).unwrap();
        let m = compute_measures(&s).unwrap();
        assert!(close(m.ts, 2800.0) && close(m.mcp_daily_avg, 20.0));
        assert_eq!((m.n_pab, m.n_prb), (1, 0));
        assert!(close(m.tl, 600.0) && m.tlp == 0.0);
        assert!(close(m.mul, 10.0) && m.mulp == 0.0);
        assert!(close(m.side_payment, 600.0));
    }

    #[test]
    fn instance_c_under_r2() {
        let s = solve(&instance_c(), Rule::NoPab, &SolveParams::exact()).unwrap();
        let m = compute_measures(&s).unwrap();
        assert!(close(m.ts, 2500.0) && close(m.mcp_daily_avg, 50.0));
        assert_eq!((m.n_pab, m.n_prb), (0, 1));
        assert!(m.tl == 0.0 && close(m.tlp, 1200.0));
        assert!(m.mul == 0.0 && close(m.mulp, 20.0));
        assert_eq!(m.max_price_diff(), m.mulp);
    }

    #[test]
    fn no_blocks_no_paradox() {
        let s = solve(&instance_a(), Rule::Unrestricted, &SolveParams::exact()).unwrap();
        let m = compute_measures(&s).unwrap();
        assert!(m.paradox_free());
        assert_eq!((m.tl, m.tlp, m.mul, m.mulp, m.side_payment), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(close(m.ts, 2500.0) && close(m.mcp_daily_avg, 50.0));
    }

    #[test]
    fn literal_convention_on_multi_period_block() {
        // Two identical periods; a supply block of 10 + 30 MWh priced at 42.
        let mut inst = Instance::new(2, PriceBounds::new(0.0, 100.0));
        for t in 0..2 {
            inst.add_segment(t, Direction::Supply, Segment::new(0.0, 100.0, -100.0));
            inst.add_segment(t, Direction::Demand, Segment::new(100.0, 0.0, 100.0));
        }
        inst.add_block(BlockBid::new("b", 42.0, [(0, -10.0), (1, -30.0)]));
        let s = solve(&inst, Rule::Unrestricted, &SolveParams::exact()).unwrap();
        let inc = s.incumbent.as_ref().unwrap();
        // Accepted: prices 45 and 35, surplus 10*3 - 30*7 = -180 -> PAB.
        assert_eq!(inc.assignment().0, vec![true]);
        let per_unit = compute_measures(&s).unwrap();
        assert!(close(per_unit.tl, 180.0));
        assert!(close(per_unit.mul, 180.0 / 40.0));
        let literal = compute_measures_with(&s, DeviationConvention::Literal).unwrap();
        assert!(close(literal.mul, 4.0));
        assert_eq!(literal.tl, per_unit.tl);
    }

    #[test]
    fn no_incumbent_is_an_error() {
        let inst = instance_a().with_block(BlockBid::new("big", 100.0, [(0, 500.0)]));
        let s = solve(&inst, Rule::NoPrb, &SolveParams::exact()).unwrap();
        assert_eq!(compute_measures(&s), Err(NoIncumbent));
    }
}
