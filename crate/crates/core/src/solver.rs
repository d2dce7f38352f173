//! Best-first branch-and-bound over block accept/reject decisions.
//!
//! Each node fixes a prefix of the blocks (ordered by descending volume).
//! Its bound is the surplus of the relaxation in which every unfixed block
//! is divisible and decided separately in each period, which is just an
//! extra step on the hourly curves at the block price. Leaves are cleared
//! exactly and must admit a rule-compliant price vector.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{classify, Assignment, BlockOutcome, Evaluation, Market, Paradox, Rule, SURPLUS_TOL_PER_MWH};
use crate::curve::{PeriodMarket, Settlement, PRICE_TOL};
use crate::model::{Instance, Money, Price, Quantity, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    /// Stop once bound − incumbent ≤ this many currency units.
    pub absolute_gap: Money,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    pub node_limit: Option<u64>,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            absolute_gap: 100.0,
            time_limit: 120.0,
            node_limit: None,
        }
    }
}

impl SolveParams {
    pub fn exact() -> Self {
        Self {
            absolute_gap: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// Search tree exhausted; the incumbent is optimal.
    Optimal,
    /// Stopped with bound − incumbent within the gap tolerance.
    GapReached,
    /// Time or node budget ran out first.
    TimeLimit,
    /// No assignment clears under the rule.
    Infeasible,
}

impl Status {
    /// Counts as solved for experiment purposes.
    pub fn is_solved(&self) -> bool {
        matches!(self, Status::Optimal | Status::GapReached)
    }
}

/// A cleared, priced and classified assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incumbent {
    pub evaluation: Evaluation,
    pub prices: Vec<Price>,
    pub settlements: Vec<Settlement>,
    pub blocks: Vec<BlockOutcome>,
}

impl Incumbent {
    pub fn total_surplus(&self) -> Money {
        self.evaluation.total_surplus
    }

    pub fn assignment(&self) -> &Assignment {
        &self.evaluation.assignment
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub rule: Rule,
    pub status: Status,
    pub incumbent: Option<Incumbent>,
    /// Upper bound on the surplus of any rule-compliant assignment.
    pub bound: Money,
    /// `bound − total_surplus`; absent without an incumbent.
    pub gap: Option<Money>,
    pub nodes_explored: u64,
    pub wall_time: f64,
    pub price_bounds: crate::model::PriceBounds,
}

impl Solution {
    pub fn total_surplus(&self) -> Option<Money> {
        self.incumbent.as_ref().map(Incumbent::total_surplus)
    }

    pub fn prices(&self) -> Option<&[Price]> {
        self.incumbent.as_ref().map(|i| i.prices.as_slice())
    }

    /// Some selected price sits on a price cap.
    pub fn cap_binding(&self) -> bool {
        let b = self.price_bounds;
        self.prices().is_some_and(|ps| {
            ps.iter()
                .any(|p| (p - b.p_min).abs() <= PRICE_TOL || (p - b.p_max).abs() <= PRICE_TOL)
        })
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid instance: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<Violation>),
    #[error("{blocks} blocks exceed the enumeration cap of {cap}")]
    TooManyBlocks { blocks: usize, cap: usize },
}

/// Clears, prices and classifies `assignment`; `None` when it does not
/// clear or no price vector satisfies `rule`.
pub fn price_assignment(market: &Market<'_>, assignment: &Assignment, rule: Rule) -> Option<Incumbent> {
    let evaluation = market.evaluate(assignment).ok()?;
    let prices = market.select_prices(&evaluation, rule).ok()?;
    let settlements = market.settle(&evaluation, &prices);
    let blocks = classify(market.instance(), assignment, &prices);
    Some(Incumbent {
        evaluation,
        prices,
        settlements,
        blocks,
    })
}

fn tie_tol(ts: Money) -> Money {
    1e-9 * ts.abs().max(1.0)
}

/// Deterministic preference between two priced assignments: higher surplus
/// wins; on a tie the one accepting fewer blocks, then the one rejecting the
/// earliest differing block.
pub fn prefer(candidate: &Incumbent, incumbent: &Incumbent) -> bool {
    let (a, b) = (candidate.total_surplus(), incumbent.total_surplus());
    let tol = tie_tol(a.max(b));
    if a > b + tol {
        return true;
    }
    if a < b - tol {
        return false;
    }
    let (ca, cb) = (candidate.assignment().accepted_count(), incumbent.assignment().accepted_count());
    if ca != cb {
        return ca < cb;
    }
    candidate.assignment() < incumbent.assignment()
}

/// Relaxation bound for a partial assignment (`None` entries unfixed).
/// Returns `None` when even the relaxation cannot balance some period.
pub fn upper_bound(instance: &Instance, partial: &[Option<bool>]) -> Option<Money> {
    Relaxation::new(&Market::new(instance)).bound(partial)
}

struct Relaxation<'m, 'a> {
    market: &'m Market<'a>,
    /// Per period: (block index, signed quantity) of blocks active there.
    active: Vec<Vec<(usize, Quantity)>>,
}

/// A bound together with the price vector it was computed at.
#[derive(Debug, Clone)]
struct Bound {
    value: Money,
    prices: Vec<Price>,
}

const MAX_SWEEPS: usize = 40;

impl<'m, 'a> Relaxation<'m, 'a> {
    fn new(market: &'m Market<'a>) -> Self {
        let instance = market.instance();
        let mut active = vec![Vec::new(); instance.period_count()];
        for (b, block) in instance.blocks().iter().enumerate() {
            for (t, q) in block.active_periods() {
                active[t].push((b, q));
            }
        }
        Self { market, active }
    }

    fn bound(&self, partial: &[Option<bool>]) -> Option<Money> {
        self.decoupled(partial).map(|b| b.value)
    }

    /// Every unfixed block divisible and decided separately in each period.
    fn decoupled(&self, partial: &[Option<bool>]) -> Option<Bound> {
        let blocks = self.market.instance().blocks();
        let mut total = 0.0;
        let mut prices = Vec::with_capacity(self.active.len());
        for (t, period) in self.market.periods().iter().enumerate() {
            let mut net = 0.0;
            let mut extra_supply = Vec::new();
            let mut extra_demand = Vec::new();
            for &(b, q) in &self.active[t] {
                match partial[b] {
                    Some(true) => {
                        net += q;
                        total += q * blocks[b].price;
                    }
                    Some(false) => {}
                    None if q < 0.0 => extra_supply.push((blocks[b].price, -q)),
                    None => extra_demand.push((blocks[b].price, q)),
                }
            }
            if extra_supply.is_empty() && extra_demand.is_empty() {
                let point = period.clear(net).ok()?;
                total += period.objective(&point.fractions);
                prices.push(point.midpoint());
            } else {
                let relaxed = PeriodMarket::new(
                    period.supply.with_steps(&extra_supply),
                    period.demand.with_steps(&extra_demand),
                );
                let point = relaxed.clear(net).ok()?;
                total += relaxed.objective(&point.fractions);
                prices.push(point.midpoint());
            }
        }
        Some(Bound { value: total, prices })
    }

    /// The decoupled bound tightened by a Lagrangian bound in which each
    /// unfixed block is accepted to the same degree in all its periods.
    /// Any price vector gives a valid bound; coordinate descent over the
    /// periods lowers it, starting from the better of the decoupled prices
    /// and `warm`.
    fn coupled(&self, partial: &[Option<bool>], warm: Option<&[Price]>) -> Option<Bound> {
        let decoupled = self.decoupled(partial)?;
        let mut prices = decoupled.prices.clone();
        let mut value = self.dual_value(partial, &prices);
        if let Some(w) = warm {
            let v = self.dual_value(partial, w);
            if v < value {
                prices = w.to_vec();
                value = v;
            }
        }
        let mut best = if value < decoupled.value {
            Bound {
                value,
                prices: prices.clone(),
            }
        } else {
            decoupled
        };
        for _ in 0..MAX_SWEEPS {
            self.sweep(partial, &mut prices);
            let v = self.dual_value(partial, &prices);
            if v < best.value {
                best = Bound {
                    value: v,
                    prices: prices.clone(),
                };
            }
            let progress = value - v;
            value = v;
            if progress <= 1e-9 * v.abs().max(1.0) {
                break;
            }
        }
        Some(best)
    }

    /// Lagrangian dual at `prices`: what hourly bidders and blocks would earn
    /// if they could trade freely at those prices.
    fn dual_value(&self, partial: &[Option<bool>], prices: &[Price]) -> Money {
        let hourly: Money = self
            .market
            .periods()
            .iter()
            .zip(prices)
            .map(|(m, p)| m.supply.surplus_at(*p) + m.demand.surplus_at(*p))
            .sum();
        let blocks: Money = self
            .market
            .instance()
            .blocks()
            .iter()
            .zip(partial)
            .map(|(block, decision)| match decision {
                Some(false) => 0.0,
                Some(true) => block.surplus(prices),
                None => block.surplus(prices).max(0.0),
            })
            .sum();
        hourly + blocks
    }

    /// One pass of exact minimization of the dual over each period's price.
    /// With the other prices held, an unfixed block is a step at the price
    /// where its total surplus changes sign.
    fn sweep(&self, partial: &[Option<bool>], prices: &mut [Price]) {
        let instance = self.market.instance();
        let blocks = instance.blocks();
        let bounds = instance.bounds();
        let mut surplus: Vec<Money> = blocks.iter().map(|b| b.surplus(prices)).collect();
        for (t, period) in self.market.periods().iter().enumerate() {
            let mut net = 0.0;
            let mut extra_supply = Vec::new();
            let mut extra_demand = Vec::new();
            for &(b, q) in &self.active[t] {
                match partial[b] {
                    Some(true) => net += q,
                    Some(false) => {}
                    None => {
                        let rest = surplus[b] - q * (blocks[b].price - prices[t]);
                        let pivot = (blocks[b].price + rest / q).clamp(bounds.p_min, bounds.p_max);
                        if q < 0.0 {
                            extra_supply.push((pivot, -q));
                        } else {
                            extra_demand.push((pivot, q));
                        }
                    }
                }
            }
            let relaxed;
            let market = if extra_supply.is_empty() && extra_demand.is_empty() {
                period
            } else {
                relaxed = PeriodMarket::new(
                    period.supply.with_steps(&extra_supply),
                    period.demand.with_steps(&extra_demand),
                );
                &relaxed
            };
            let p = match market.clear(net) {
                Ok(point) => prices[t].clamp(point.price_lo, point.price_hi),
                Err(_) => {
                    let dual = |x: Price| market.supply.surplus_at(x) + market.demand.surplus_at(x) - net * x;
                    if dual(bounds.p_min) <= dual(bounds.p_max) {
                        bounds.p_min
                    } else {
                        bounds.p_max
                    }
                }
            };
            if p != prices[t] {
                for &(b, q) in &self.active[t] {
                    surplus[b] -= q * (p - prices[t]);
                }
                prices[t] = p;
            }
        }
    }

    /// Range every completion's prices must fall in: all unfixed supply
    /// accepted gives the lowest prices, all unfixed demand the highest.
    fn price_box(&self, partial: &[Option<bool>]) -> Vec<(Price, Price)> {
        let bounds = self.market.instance().bounds();
        self.market
            .periods()
            .iter()
            .enumerate()
            .map(|(t, period)| {
                let (mut fixed, mut low, mut high) = (0.0, 0.0, 0.0);
                for &(b, q) in &self.active[t] {
                    match partial[b] {
                        Some(true) => fixed += q,
                        Some(false) => {}
                        None if q < 0.0 => low += q,
                        None => high += q,
                    }
                }
                let lo = period.clear(fixed + low).map_or(bounds.p_min, |c| c.price_lo);
                let hi = period.clear(fixed + high).map_or(bounds.p_max, |c| c.price_hi);
                (lo, hi)
            })
            .collect()
    }

    /// A fixed block that violates the rule at every price in the box makes
    /// every completion rule-infeasible.
    fn rule_dead(&self, partial: &[Option<bool>], rule: Rule) -> bool {
        if rule == Rule::Unrestricted {
            return false;
        }
        let blocks = self.market.instance().blocks();
        let want = rule == Rule::NoPab;
        if !partial.iter().any(|d| *d == Some(want)) {
            return false;
        }
        let price_box = self.price_box(partial);
        blocks.iter().zip(partial).any(|(block, decision)| {
            if *decision != Some(want) {
                return false;
            }
            // best (R2) or worst (R3) surplus the block can reach inside the box
            let extreme: Money = block
                .active_periods()
                .map(|(t, q)| {
                    let (lo, hi) = price_box[t];
                    let p = match (want, q > 0.0) {
                        (true, true) | (false, false) => lo,
                        _ => hi,
                    };
                    q * (block.price - p)
                })
                .sum();
            let tol = SURPLUS_TOL_PER_MWH * block.volume();
            if want {
                extreme < -tol
            } else {
                extreme > tol
            }
        })
    }
}

#[derive(Debug)]
struct Node {
    bound: Money,
    depth: usize,
    seq: u64,
    partial: Vec<Option<bool>>,
    /// Dual prices behind `bound`, reused as the children's starting point.
    prices: Vec<Price>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Search<'m, 'a> {
    market: &'m Market<'a>,
    relaxation: Relaxation<'m, 'a>,
    rule: Rule,
    params: SolveParams,
    order: Vec<usize>,
    start: Instant,
    deadline: Duration,
    incumbent: Option<Incumbent>,
    nodes: u64,
    seq: u64,
}

impl Search<'_, '_> {
    fn out_of_budget(&self) -> bool {
        self.start.elapsed() >= self.deadline || self.params.node_limit.is_some_and(|n| self.nodes >= n)
    }

    fn offer(&mut self, partial: &[Option<bool>]) {
        let assignment = Assignment(partial.iter().map(|d| d.unwrap_or(false)).collect());
        if let Some(candidate) = price_assignment(self.market, &assignment, self.rule) {
            self.consider(candidate);
        }
    }

    /// Like [`offer`](Self::offer), but a leaf that breaks the rule is
    /// repaired first.
    fn offer_repaired(&mut self, partial: &[Option<bool>]) {
        let assignment = Assignment(partial.iter().map(|d| d.unwrap_or(false)).collect());
        if let Some(candidate) = self.repair(assignment) {
            self.consider(candidate);
        }
    }

    fn consider(&mut self, candidate: Incumbent) {
        let better = match &self.incumbent {
            None => true,
            Some(inc) => prefer(&candidate, inc),
        };
        if better {
            log::debug!(
                "incumbent {:.3} after {} nodes, {:.3}s",
                candidate.total_surplus(),
                self.nodes,
                self.start.elapsed().as_secs_f64()
            );
            self.incumbent = Some(candidate);
        }
    }

    /// Walks an assignment toward rule feasibility one block at a time:
    /// under R2 the accepted block losing most per MWh is rejected, under
    /// R3 the rejected block gaining most per MWh is accepted.
    fn repair(&self, mut assignment: Assignment) -> Option<Incumbent> {
        for _ in 0..=assignment.len() {
            if let Some(c) = price_assignment(self.market, &assignment, self.rule) {
                return Some(c);
            }
            if self.rule == Rule::Unrestricted || self.out_of_budget() {
                return None;
            }
            let unrestricted = price_assignment(self.market, &assignment, Rule::Unrestricted)?;
            let target = match self.rule {
                Rule::NoPab => Paradox::Pab,
                _ => Paradox::Prb,
            };
            let (k, _) = unrestricted
                .blocks
                .iter()
                .enumerate()
                .filter(|(_, b)| b.paradox == target)
                .max_by(|(_, a), (_, b)| a.unit_deviation.total_cmp(&b.unit_deviation))?;
            assignment.0[k] = !assignment.0[k];
        }
        None
    }

    /// A node with this bound cannot improve on the incumbent.
    fn prunable(&self, bound: Money) -> bool {
        let Some(inc) = &self.incumbent else {
            return false;
        };
        let ts = inc.total_surplus();
        if self.params.absolute_gap > 0.0 {
            bound <= ts + self.params.absolute_gap
        } else {
            // keep ties alive so the tie-break sees every equal-surplus leaf
            bound < ts - tie_tol(ts)
        }
    }

    /// Children of `partial` at `depth`, accept first. Leaves are priced
    /// immediately and never returned.
    fn expand(&mut self, parent: &Node) -> Vec<Node> {
        let depth = parent.depth;
        let block = self.order[depth];
        let mut out = Vec::with_capacity(2);
        for decision in [true, false] {
            let mut child = parent.partial.clone();
            child[block] = Some(decision);
            if depth + 1 == self.order.len() {
                self.offer(&child);
                continue;
            }
            let Some(Bound { value, prices }) = self.relaxation.coupled(&child, Some(&parent.prices)) else {
                continue;
            };
            let bound = value.min(parent.bound);
            if self.prunable(bound) || self.relaxation.rule_dead(&child, self.rule) {
                continue;
            }
            self.seq += 1;
            out.push(Node {
                bound,
                depth: depth + 1,
                seq: self.seq,
                partial: child,
                prices,
            });
        }
        out
    }

    /// Follows the better-bounded child down to a leaf.
    fn dive(&mut self, node: &Node) {
        let mut partial = node.partial.clone();
        let mut prices = node.prices.clone();
        for depth in node.depth..self.order.len() {
            if self.out_of_budget() {
                return;
            }
            let block = self.order[depth];
            if depth + 1 == self.order.len() {
                for decision in [false, true] {
                    partial[block] = Some(decision);
                    self.offer_repaired(&partial);
                }
                return;
            }
            // ties go to rejection
            let mut best: Option<(Bound, bool)> = None;
            for decision in [false, true] {
                partial[block] = Some(decision);
                if let Some(b) = self.relaxation.coupled(&partial, Some(&prices)) {
                    if best.as_ref().is_none_or(|(bb, _)| b.value > bb.value) {
                        best = Some((b, decision));
                    }
                }
            }
            let Some((bound, decision)) = best else {
                return;
            };
            partial[block] = Some(decision);
            prices = bound.prices;
        }
    }
}

/// Maximizes total surplus under `rule`.
pub fn solve(instance: &Instance, rule: Rule, params: &SolveParams) -> Result<Solution, SolveError> {
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(SolveError::InvalidInstance(violations));
    }
    let market = Market::new(instance);
    Ok(solve_market(&market, rule, params))
}

pub(crate) fn solve_market(market: &Market<'_>, rule: Rule, params: &SolveParams) -> Solution {
    let instance = market.instance();
    let n = instance.blocks().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        instance.blocks()[*b]
            .volume()
            .total_cmp(&instance.blocks()[*a].volume())
            .then(a.cmp(b))
    });
    let mut search = Search {
        market,
        relaxation: Relaxation::new(market),
        rule,
        params: *params,
        order,
        start: Instant::now(),
        deadline: Duration::from_secs_f64(params.time_limit.max(0.0)),
        incumbent: None,
        nodes: 0,
        seq: 0,
    };

    let root_partial = vec![None; n];
    search.offer(&vec![Some(false); n]);
    let root = search.relaxation.coupled(&root_partial, None);
    let root_bound = root.as_ref().map(|b| b.value);

    let mut heap = BinaryHeap::new();
    let mut timed_out = false;
    if let Some(Bound { value, prices }) = root {
        if n > 0 {
            let root = Node {
                bound: value,
                depth: 0,
                seq: 0,
                partial: root_partial,
                prices,
            };
            search.dive(&root);
            heap.push(root);
        }
    }
    while let Some(node) = heap.peek() {
        if search.prunable(node.bound) {
            break;
        }
        if search.out_of_budget() {
            timed_out = true;
            break;
        }
        let node = heap.pop().unwrap();
        search.nodes += 1;
        if search.nodes % 1000 == 0 {
            log::debug!("node {} depth {} bound {:.3} open {}", search.nodes, node.depth, node.bound, heap.len());
        }
        if search.incumbent.is_none() {
            search.dive(&node);
        }
        for child in search.expand(&node) {
            heap.push(child);
        }
    }

    let open_bound = heap.peek().map(|n| n.bound);
    let ts = search.incumbent.as_ref().map(Incumbent::total_surplus);
    let bound = match (ts, open_bound, root_bound) {
        (_, _, None) => ts.unwrap_or(f64::NEG_INFINITY),
        (Some(ts), Some(open), _) => ts.max(open),
        (Some(ts), None, _) => ts,
        (None, Some(open), _) => open,
        (None, None, _) => f64::NEG_INFINITY,
    };
    let gap = ts.map(|ts| (bound - ts).max(0.0));
    let status = if timed_out {
        Status::TimeLimit
    } else if search.incumbent.is_none() {
        Status::Infeasible
    } else if gap.unwrap_or(0.0) > 0.0 {
        Status::GapReached
    } else {
        Status::Optimal
    };
    Solution {
        rule,
        status,
        incumbent: search.incumbent,
        bound,
        gap,
        nodes_explored: search.nodes,
        wall_time: search.start.elapsed().as_secs_f64(),
        price_bounds: instance.bounds(),
    }
}
