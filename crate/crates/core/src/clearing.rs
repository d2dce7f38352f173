//! Clearing a fixed accept/reject assignment of block bids, choosing prices
//! under a pricing rule and classifying the blocks against those prices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{ClearingPoint, CurveError, PeriodMarket, Settlement, PRICE_TOL};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{BlockBid, Direction, Instance, Money, Price, Quantity};

/// Block surplus at or below this many currency units per MWh of block
/// volume counts as zero.
pub const SURPLUS_TOL_PER_MWH: Money = 1e-9;

/// Pricing rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Paradoxically accepted and rejected blocks both allowed.
    #[serde(rename = "R1")]
    Unrestricted,
    /// No paradoxically accepted blocks.
    #[serde(rename = "R2")]
    NoPab,
    /// No paradoxically rejected blocks; accepted losers are paid their bid.
    #[serde(rename = "R3")]
    NoPrb,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Unrestricted, Rule::NoPab, Rule::NoPrb];

    pub fn code(&self) -> &'static str {
        match self {
            Rule::Unrestricted => "R1",
            Rule::NoPab => "R2",
            Rule::NoPrb => "R3",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown rule `{0}` (expected R1, R2 or R3)")]
pub struct ParseRuleError(String);

impl FromStr for Rule {
    type Err = ParseRuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" | "M1" | "UNRESTRICTED" => Ok(Rule::Unrestricted),
            "R2" | "M2" | "NO-PAB" | "NOPAB" => Ok(Rule::NoPab),
            "R3" | "M3" | "NO-PRB" | "NOPRB" => Ok(Rule::NoPrb),
            _ => Err(ParseRuleError(s.to_string())),
        }
    }
}

/// Accept (`true`) / reject decision per block, in instance order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<bool>);

impl Assignment {
    pub fn reject_all(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn accept_all(n: usize) -> Self {
        Self(vec![true; n])
    }

    /// Bit `i` of `mask` accepts block `i`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self((0..n).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn accepted_count(&self) -> usize {
        self.0.iter().filter(|a| **a).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_accepted(&self, block: usize) -> bool {
        self.0[block]
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClearingError {
    #[error("assignment covers {got} blocks, instance has {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("period {period}: {source}")]
    Balance {
        period: usize,
        #[source]
        source: CurveError,
    },
    #[error("no price vector satisfies rule {rule} for this assignment")]
    RuleInfeasible { rule: Rule },
}

/// Hourly markets of every period of an instance, aggregated once.
#[derive(Debug, Clone)]
pub struct Market<'a> {
    instance: &'a Instance,
    periods: Vec<PeriodMarket>,
}

impl<'a> Market<'a> {
    pub fn new(instance: &'a Instance) -> Self {
        let bounds = instance.bounds();
        let periods = instance
            .periods()
            .iter()
            .map(|t| {
                PeriodMarket::from_segments(
                    instance.segments(*t, Direction::Supply),
                    instance.segments(*t, Direction::Demand),
                    bounds,
                )
            })
            .collect();
        Self { instance, periods }
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn period(&self, t: usize) -> &PeriodMarket {
        &self.periods[t]
    }

    pub fn periods(&self) -> &[PeriodMarket] {
        &self.periods
    }

    pub fn evaluate(&self, assignment: &Assignment) -> Result<Evaluation, ClearingError> {
        let blocks = self.instance.blocks();
        if assignment.len() != blocks.len() {
            return Err(ClearingError::AssignmentLength {
                expected: blocks.len(),
                got: assignment.len(),
            });
        }
        let mut clearings = Vec::with_capacity(self.periods.len());
        let mut hourly_surplus = 0.0;
        for (t, market) in self.periods.iter().enumerate() {
            let net = self.instance.net_block_quantity(t, &assignment.0);
            let point = market
                .clear(net)
                .map_err(|source| ClearingError::Balance { period: t, source })?;
            hourly_surplus += market.objective(&point.fractions);
            clearings.push(PeriodClearing { period: t, point });
        }
        let block_surplus: Money = blocks
            .iter()
            .zip(&assignment.0)
            .filter(|(_, a)| **a)
            .map(|(b, _)| b.active_periods().map(|(_, q)| q * b.price).sum::<Money>())
            .sum();
        Ok(Evaluation {
            assignment: assignment.clone(),
            periods: clearings,
            hourly_surplus,
            block_surplus,
            total_surplus: hourly_surplus + block_surplus,
        })
    }

    /// Price vector for `evaluation` under `rule`; see [`select_prices`].
    pub fn select_prices(&self, evaluation: &Evaluation, rule: Rule) -> Result<Vec<Price>, ClearingError> {
        select_prices(self.instance, evaluation, rule)
    }

    /// Fractions and volumes of every period at the chosen prices.
    pub fn settle(&self, evaluation: &Evaluation, prices: &[Price]) -> Vec<Settlement> {
        self.periods
            .iter()
            .zip(&evaluation.periods)
            .zip(prices)
            .map(|((m, pc), p)| m.settle(pc.point.net_block_q, *p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodClearing {
    pub period: usize,
    pub point: ClearingPoint,
}

/// Result of clearing every period for one assignment. Prices are still
/// intervals; see [`select_prices`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub assignment: Assignment,
    pub periods: Vec<PeriodClearing>,
    pub hourly_surplus: Money,
    pub block_surplus: Money,
    pub total_surplus: Money,
}

impl Evaluation {
    pub fn intervals(&self) -> Vec<(Price, Price)> {
        self.periods.iter().map(|p| (p.point.price_lo, p.point.price_hi)).collect()
    }

    /// Rules under which some price vector supports this assignment.
    pub fn feasible_rules(&self, instance: &Instance) -> Vec<Rule> {
        Rule::ALL
            .into_iter()
            .filter(|r| select_prices(instance, self, *r).is_ok())
            .collect()
    }
}

/// Clears every period of `instance` for a fixed assignment.
pub fn evaluate_assignment(instance: &Instance, assignment: &Assignment) -> Result<Evaluation, ClearingError> {
    Market::new(instance).evaluate(assignment)
}

/// `sum_t Q_bt (P_b - p_t)`: positive in-the-money, negative out-of-the-money.
pub fn block_surplus(block: &BlockBid, prices: &[Price]) -> Money {
    block.surplus(prices)
}

fn surplus_tol(block: &BlockBid) -> Money {
    SURPLUS_TOL_PER_MWH * block.volume()
}

/// Picks one price per period inside the clearing intervals such that the
/// rule holds: under R2 every accepted block has surplus >= 0, under R3
/// every rejected block has surplus <= 0. Among compliant vectors the one
/// closest to the interval midpoints in L1 distance is returned.
pub fn select_prices(instance: &Instance, evaluation: &Evaluation, rule: Rule) -> Result<Vec<Price>, ClearingError> {
    let intervals = evaluation.intervals();
    let mids: Vec<Price> = intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let constrained: Vec<(&BlockBid, f64)> = instance
        .blocks()
        .iter()
        .zip(&evaluation.assignment.0)
        .filter_map(|(b, accepted)| match (rule, accepted) {
            (Rule::NoPab, true) => Some((b, 1.0)),
            (Rule::NoPrb, false) => Some((b, -1.0)),
            _ => None,
        })
        .collect();
    // Each constraint reads  sign * surplus_b(p) >= -tol_b.
    let complies = |prices: &[Price]| {
        constrained
            .iter()
            .all(|(b, sign)| sign * b.surplus(prices) >= -surplus_tol(b))
    };
    if complies(&mids) {
        return Ok(mids);
    }
    let free: Vec<usize> = (0..intervals.len())
        .filter(|t| intervals[*t].1 - intervals[*t].0 > PRICE_TOL)
        .collect();
    if free.is_empty() {
        return Err(ClearingError::RuleInfeasible { rule });
    }

    // p_t = mid_t + up_t - down_t with 0 <= up_t, down_t <= half-width.
    let k = free.len();
    let mut upper = Vec::with_capacity(2 * k);
    for t in &free {
        let half = 0.5 * (intervals[*t].1 - intervals[*t].0);
        upper.push(half);
        upper.push(half);
    }
    // Exact constraints first; the tolerance-relaxed program only decides
    // feasibility for blocks sitting exactly at the money.
    let build = |relax: f64| -> Option<LinearProgram> {
        let mut lp = LinearProgram::new(vec![1.0; 2 * k], upper.clone());
        for (b, sign) in &constrained {
            // sign * surplus(p) >= -tol  <=>  sign * sum_free Q (up - down) <= sign * surplus(mid) + tol
            let mut coeffs = vec![0.0; 2 * k];
            let mut touches = false;
            for (j, t) in free.iter().enumerate() {
                let q: Quantity = b.quantity(*t);
                if q != 0.0 {
                    touches = true;
                    coeffs[2 * j] = sign * q;
                    coeffs[2 * j + 1] = -sign * q;
                }
            }
            let rhs = sign * b.surplus(&mids) + relax * surplus_tol(b);
            if !touches {
                if rhs < 0.0 {
                    return None;
                }
                continue;
            }
            lp.add_le(coeffs, rhs);
        }
        Some(lp)
    };
    let outcome = [0.0, 1.0]
        .iter()
        .filter_map(|relax| build(*relax).map(|lp| lp.solve()))
        .find(|o| matches!(o, LpOutcome::Optimal { .. }));
    let Some(LpOutcome::Optimal { x, .. }) = outcome else {
        return Err(ClearingError::RuleInfeasible { rule });
    };
    let mut prices = mids;
    for (j, t) in free.iter().enumerate() {
        let (lo, hi) = intervals[*t];
        prices[*t] = (prices[*t] + x[2 * j] - x[2 * j + 1]).clamp(lo, hi);
    }
    let recheck = constrained
        .iter()
        .all(|(b, sign)| sign * b.surplus(&prices) >= -2.0 * surplus_tol(b));
    if recheck {
        Ok(prices)
    } else {
        Err(ClearingError::RuleInfeasible { rule })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Moneyness {
    In,
    Out,
    At,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Paradox {
    Normal,
    /// Accepted while out-of-the-money.
    Pab,
    /// Rejected while in-the-money.
    Prb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockOutcome {
    pub id: String,
    pub accepted: bool,
    pub surplus: Money,
    pub moneyness: Moneyness,
    pub paradox: Paradox,
    /// Sum of |Q_bt| over the block's periods.
    pub volume: Quantity,
    /// |surplus| / volume: price deviation per MWh.
    pub unit_deviation: Price,
    /// |sum over active periods of (P_b - p_t)|, unweighted.
    pub literal_deviation: Price,
}

/// Classifies every block against `prices`. At-the-money blocks are never
/// paradoxical.
pub fn classify(instance: &Instance, assignment: &Assignment, prices: &[Price]) -> Vec<BlockOutcome> {
    instance
        .blocks()
        .iter()
        .zip(&assignment.0)
        .map(|(b, accepted)| {
            let surplus = b.surplus(prices);
            let tol = surplus_tol(b);
            let moneyness = if surplus > tol {
                Moneyness::In
            } else if surplus < -tol {
                Moneyness::Out
            } else {
                Moneyness::At
            };
            let paradox = match (accepted, moneyness) {
                (true, Moneyness::Out) => Paradox::Pab,
                (false, Moneyness::In) => Paradox::Prb,
                _ => Paradox::Normal,
            };
            let volume = b.volume();
            BlockOutcome {
                id: b.id.clone(),
                accepted: *accepted,
                surplus,
                moneyness,
                paradox,
                volume,
                unit_deviation: if volume > 0.0 { surplus.abs() / volume } else { 0.0 },
                literal_deviation: b.active_periods().map(|(t, _)| b.price - prices[t]).sum::<Price>().abs(),
            }
        })
        .collect()
}
