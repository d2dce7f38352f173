//! Auction input data: price bounds, hourly bid segments, block bids and the
//! instance that bundles them for one trading day.
//!
//! Quantities are signed throughout: supply is negative, demand is positive.
//! With that convention the per-period balance is a plain sum of accepted
//! quantities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Price in currency per MWh.
pub type Price = f64;
/// Signed energy in MWh.
pub type Quantity = f64;
/// Currency amount.
pub type Money = f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub p_min: Price,
    pub p_max: Price,
}

impl PriceBounds {
    pub fn new(p_min: Price, p_max: Price) -> Self {
        Self { p_min, p_max }
    }

    pub fn contains(&self, p: Price) -> bool {
        p >= self.p_min && p <= self.p_max
    }

    pub fn width(&self) -> Price {
        self.p_max - self.p_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Supply,
    Demand,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Supply, Direction::Demand];
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Supply => f.write_str("supply"),
            Direction::Demand => f.write_str("demand"),
        }
    }
}

/// One linear piece of an hourly bid curve.
///
/// For supply `p0 <= p1` and `q <= 0`; for demand `p1 <= p0` and `q >= 0`.
/// The piece is accepted from `p0` towards `p1`, so the accepted fraction at
/// a price between the two endpoints is linear in that price. `p0 == p1`
/// describes a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p0: Price,
    pub p1: Price,
    pub q: Quantity,
}

impl Segment {
    pub fn new(p0: Price, p1: Price, q: Quantity) -> Self {
        Self { p0, p1, q }
    }

    /// Contribution to the surplus objective when fraction `x` is accepted:
    /// `q*p0*x + q*(p1-p0)*x^2/2`.
    pub fn objective(&self, x: f64) -> Money {
        self.q * self.p0 * x + self.q * (self.p1 - self.p0) * x * x / 2.0
    }
}

/// All-or-nothing bid at a single price over consecutive periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockBid {
    pub id: String,
    pub price: Price,
    /// Signed quantity per period; missing periods carry zero.
    pub quantities: BTreeMap<usize, Quantity>,
}

impl BlockBid {
    pub fn new(id: impl Into<String>, price: Price, quantities: impl IntoIterator<Item = (usize, Quantity)>) -> Self {
        Self {
            id: id.into(),
            price,
            quantities: quantities.into_iter().collect(),
        }
    }

    pub fn quantity(&self, period: usize) -> Quantity {
        self.quantities.get(&period).copied().unwrap_or(0.0)
    }

    /// Periods with a nonzero quantity, ascending.
    pub fn active_periods(&self) -> impl Iterator<Item = (usize, Quantity)> + '_ {
        self.quantities.iter().filter(|(_, q)| **q != 0.0).map(|(t, q)| (*t, *q))
    }

    /// Sum of |Q_bt| over all periods.
    pub fn volume(&self) -> Quantity {
        self.quantities.values().map(|q| q.abs()).sum()
    }

    pub fn direction(&self) -> Option<Direction> {
        let (_, q) = self.active_periods().next()?;
        Some(if q < 0.0 { Direction::Supply } else { Direction::Demand })
    }

    /// Money gained by the bidder if accepted at `prices` (indexed by period):
    /// `sum_t Q_bt (P_b - p_t)`.
    pub fn surplus(&self, prices: &[Price]) -> Money {
        self.active_periods().map(|(t, q)| q * (self.price - prices[t])).sum()
    }
}

/// A complete auction input for one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    periods: Vec<usize>,
    bounds: PriceBounds,
    hourly: BTreeMap<(usize, Direction), Vec<Segment>>,
    blocks: Vec<BlockBid>,
}

impl Instance {
    /// Empty instance over periods `0..period_count`.
    pub fn new(period_count: usize, bounds: PriceBounds) -> Self {
        Self {
            periods: (0..period_count).collect(),
            bounds,
            hourly: BTreeMap::new(),
            blocks: Vec::new(),
        }
    }

    pub fn periods(&self) -> &[usize] {
        &self.periods
    }

    pub fn period_count(&self) -> usize {
        self.periods.len()
    }

    pub fn bounds(&self) -> PriceBounds {
        self.bounds
    }

    pub fn blocks(&self) -> &[BlockBid] {
        &self.blocks
    }

    pub fn segments(&self, period: usize, direction: Direction) -> &[Segment] {
        self.hourly.get(&(period, direction)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Iterates `(period, direction, segment)` in period, direction, insertion order.
    pub fn hourly(&self) -> impl Iterator<Item = (usize, Direction, &Segment)> + '_ {
        self.hourly
            .iter()
            .flat_map(|((t, d), segs)| segs.iter().map(move |s| (*t, *d, s)))
    }

    pub fn add_segment(&mut self, period: usize, direction: Direction, segment: Segment) -> &mut Self {
        self.hourly.entry((period, direction)).or_default().push(segment);
        self
    }

    pub fn add_block(&mut self, block: BlockBid) -> &mut Self {
        self.blocks.push(block);
        self
    }

    pub fn with_segment(mut self, period: usize, direction: Direction, segment: Segment) -> Self {
        self.add_segment(period, direction, segment);
        self
    }

    pub fn with_block(mut self, block: BlockBid) -> Self {
        self.add_block(block);
        self
    }

    /// Same instance with every block bid removed.
    pub fn without_blocks(&self) -> Self {
        Self {
            blocks: Vec::new(),
            ..self.clone()
        }
    }

    /// Total hourly volume offered in a period (both directions, absolute).
    pub fn hourly_volume(&self, period: usize) -> Quantity {
        Direction::BOTH
            .iter()
            .flat_map(|d| self.segments(period, *d))
            .map(|s| s.q.abs())
            .sum()
    }

    /// Net block quantity in `period` for an accept/reject vector.
    pub fn net_block_quantity(&self, period: usize, accepted: &[bool]) -> Quantity {
        self.blocks
            .iter()
            .zip(accepted)
            .filter(|(_, a)| **a)
            .map(|(b, _)| b.quantity(period))
            .sum()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_instance(self)
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Ok(file.into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }
}

impl FromStr for Instance {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_json(s)
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed instance document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Location of an invariant violation inside an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Location {
    Instance,
    Bounds,
    Segment { period: usize, direction: Direction, index: usize },
    Block { index: usize, id: String },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Instance => f.write_str("instance"),
            Location::Bounds => f.write_str("bounds"),
            Location::Segment { period, direction, index } => {
                write!(f, "{direction} segment #{index} of period {period}")
            }
            Location::Block { index, id } => write!(f, "block #{index} ({id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Checks every sign, bound and shape rule. An empty report means the instance
/// is safe to hand to the clearing engine.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: Location, message: &str| {
        out.push(Violation {
            location,
            message: message.to_string(),
        })
    };

    let bounds = instance.bounds;
    if !(bounds.p_min.is_finite() && bounds.p_max.is_finite()) {
        push(Location::Bounds, "price bounds must be finite");
    } else if bounds.p_min >= bounds.p_max {
        push(Location::Bounds, "p_min must be < p_max");
    }
    if instance.periods.is_empty() {
        push(Location::Instance, "instance has no periods");
    }
    if instance.periods.iter().enumerate().any(|(i, t)| i != *t) {
        push(Location::Instance, "periods must be 0..T-1 in order");
    }
    let known: BTreeSet<usize> = instance.periods.iter().copied().collect();

    for ((period, direction), segs) in &instance.hourly {
        for (index, s) in segs.iter().enumerate() {
            let loc = || Location::Segment {
                period: *period,
                direction: *direction,
                index,
            };
            if !known.contains(period) {
                push(loc(), "segment period is not in the period set");
            }
            if !(s.p0.is_finite() && s.p1.is_finite() && s.q.is_finite()) {
                push(loc(), "segment values must be finite");
                continue;
            }
            match direction {
                Direction::Supply => {
                    if s.q > 0.0 {
                        push(loc(), "supply quantity must be ≤ 0");
                    }
                    if s.p0 > s.p1 {
                        push(loc(), "supply segment must have p0 ≤ p1");
                    }
                }
                Direction::Demand => {
                    if s.q < 0.0 {
                        push(loc(), "demand quantity must be ≥ 0");
                    }
                    if s.p1 > s.p0 {
                        push(loc(), "demand segment must have p1 ≤ p0");
                    }
                }
            }
            if !bounds.contains(s.p0) || !bounds.contains(s.p1) {
                push(loc(), "segment prices must lie within [p_min, p_max]");
            }
        }
    }

    let mut ids = BTreeSet::new();
    for (index, b) in instance.blocks.iter().enumerate() {
        let loc = || Location::Block {
            index,
            id: b.id.clone(),
        };
        if !ids.insert(b.id.as_str()) {
            push(loc(), "duplicate block id");
        }
        if !b.price.is_finite() || b.quantities.values().any(|q| !q.is_finite()) {
            push(loc(), "block values must be finite");
            continue;
        }
        if !bounds.contains(b.price) {
            push(loc(), "block price must lie within [p_min, p_max]");
        }
        if b.quantities.keys().any(|t| !known.contains(t)) {
            push(loc(), "block references a period outside the period set");
        }
        let active: Vec<(usize, Quantity)> = b.active_periods().collect();
        if active.is_empty() {
            push(loc(), "block has no active period");
            continue;
        }
        let supply = active.iter().any(|(_, q)| *q < 0.0);
        let demand = active.iter().any(|(_, q)| *q > 0.0);
        if supply && demand {
            push(loc(), "block mixes supply and demand quantities");
        }
        if active.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            push(loc(), "block active periods must be consecutive");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    periods: Vec<usize>,
    p_min: Price,
    p_max: Price,
    hourly: Vec<HourlyRecord>,
    blocks: Vec<BlockBid>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HourlyRecord {
    period: usize,
    direction: Direction,
    p0: Price,
    p1: Price,
    q: Quantity,
}

impl From<InstanceFile> for Instance {
    fn from(file: InstanceFile) -> Self {
        let mut instance = Instance {
            periods: file.periods,
            bounds: PriceBounds::new(file.p_min, file.p_max),
            hourly: BTreeMap::new(),
            blocks: file.blocks,
        };
        for r in file.hourly {
            instance.add_segment(r.period, r.direction, Segment::new(r.p0, r.p1, r.q));
        }
        instance
    }
}

impl From<&Instance> for InstanceFile {
    fn from(instance: &Instance) -> Self {
        InstanceFile {
            periods: instance.periods.clone(),
            p_min: instance.bounds.p_min,
            p_max: instance.bounds.p_max,
            hourly: instance
                .hourly()
                .map(|(period, direction, s)| HourlyRecord {
                    period,
                    direction,
                    p0: s.p0,
                    p1: s.p1,
                    q: s.q,
                })
                .collect(),
            blocks: instance.blocks.clone(),
        }
    }
}
