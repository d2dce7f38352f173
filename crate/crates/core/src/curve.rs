//! Aggregated hourly supply and demand curves for one period.
//!
//! Each curve is stored on a common price grid (`knots`) spanning exactly
//! `[p_min, p_max]`: a linear span of offered volume between consecutive
//! knots plus an optional step at each knot. Flat stretches keep a
//! zero-volume span, so the spans always tile the whole price range and the
//! clearing price can be read back from the accepted fractions.

use serde::Serialize;
use thiserror::Error;

use crate::model::{Direction, Money, Price, PriceBounds, Quantity, Segment};

/// Prices closer than this are treated as the same price level.
pub const PRICE_TOL: Price = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("price {price} outside [{p_min}, {p_max}]")]
    PriceOutOfBounds { price: Price, p_min: Price, p_max: Price },
    #[error("balance infeasible: net block quantity {net} exceeds what hourly bids can absorb")]
    BalanceInfeasible { net: Quantity },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCurve {
    direction: Direction,
    knots: Vec<Price>,
    /// Absolute volume of the linear span between `knots[k]` and `knots[k + 1]`.
    spans: Vec<Quantity>,
    /// Absolute volume of the step sitting at `knots[k]`.
    steps: Vec<Quantity>,
    span_cum: Vec<Quantity>,
    step_cum: Vec<Quantity>,
}

/// Builds the aggregated curve of one direction. Zero-volume segments are
/// dropped; segments covering the same price stretch are summed.
pub fn aggregate(segments: &[Segment], direction: Direction, bounds: PriceBounds) -> AggregatedCurve {
    let live: Vec<&Segment> = segments.iter().filter(|s| s.q != 0.0).collect();
    let mut knots: Vec<Price> = Vec::with_capacity(2 * live.len() + 2);
    knots.push(bounds.p_min);
    knots.push(bounds.p_max);
    for s in &live {
        knots.push(s.p0);
        knots.push(s.p1);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut spans = vec![0.0; knots.len() - 1];
    let mut steps = vec![0.0; knots.len()];
    let index = |p: Price| knots.partition_point(|k| *k < p);
    for s in live {
        let (lo, hi) = if s.p0 <= s.p1 { (s.p0, s.p1) } else { (s.p1, s.p0) };
        let amount = s.q.abs();
        if lo == hi {
            steps[index(lo)] += amount;
            continue;
        }
        let (a, b) = (index(lo), index(hi));
        for k in a..b {
            spans[k] += amount * (knots[k + 1] - knots[k]) / (hi - lo);
        }
    }
    AggregatedCurve::from_parts(direction, knots, spans, steps)
}

impl AggregatedCurve {
    fn from_parts(direction: Direction, knots: Vec<Price>, spans: Vec<Quantity>, steps: Vec<Quantity>) -> Self {
        let prefix = |xs: &[Quantity]| {
            let mut acc = 0.0;
            std::iter::once(0.0)
                .chain(xs.iter().map(|x| {
                    acc += x;
                    acc
                }))
                .collect::<Vec<_>>()
        };
        Self {
            direction,
            span_cum: prefix(&spans),
            step_cum: prefix(&steps),
            knots,
            spans,
            steps,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn bounds(&self) -> PriceBounds {
        PriceBounds::new(self.knots[0], *self.knots.last().unwrap())
    }

    pub fn knots(&self) -> &[Price] {
        &self.knots
    }

    /// Total absolute volume on the curve.
    pub fn volume(&self) -> Quantity {
        self.spans.iter().sum::<f64>() + self.steps.iter().sum::<f64>()
    }

    fn sign(&self) -> f64 {
        match self.direction {
            Direction::Supply => -1.0,
            Direction::Demand => 1.0,
        }
    }

    /// Copy of the curve with extra steps `(price, absolute volume)` merged in.
    /// Spans are split where a new knot lands inside them.
    pub fn with_steps(&self, extra: &[(Price, Quantity)]) -> AggregatedCurve {
        if extra.is_empty() {
            return self.clone();
        }
        let mut knots: Vec<Price> = self.knots.iter().copied().chain(extra.iter().map(|e| e.0)).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let spans = knots
            .windows(2)
            .map(|w| {
                let k = self.knots.partition_point(|x| *x <= w[0]) - 1;
                self.spans[k] * (w[1] - w[0]) / (self.knots[k + 1] - self.knots[k])
            })
            .collect();
        let mut steps = vec![0.0; knots.len()];
        for (k, p) in self.knots.iter().enumerate() {
            steps[knots.partition_point(|x| x < p)] += self.steps[k];
        }
        for (p, amount) in extra {
            let k = knots.partition_point(|x| *x < *p);
            steps[k] += amount;
        }
        AggregatedCurve::from_parts(self.direction, knots, spans, steps)
    }

    /// Absolute accepted volume at price `p`: `(without, with)` the steps
    /// sitting at `p`.
    pub fn accepted_range(&self, p: Price) -> (Quantity, Quantity) {
        let below = self.knots.partition_point(|k| *k < p - PRICE_TOL);
        let above = self.knots.partition_point(|k| *k <= p + PRICE_TOL);
        let at = self.step_cum[above] - self.step_cum[below];
        // linear volume of the spans below p
        let j = self.knots.partition_point(|k| *k <= p).clamp(1, self.spans.len()) - 1;
        let linear = self.span_cum[j] + self.spans[j] * span_fraction(self.knots[j], self.knots[j + 1], p);
        let base = match self.direction {
            Direction::Supply => self.step_cum[below] + linear,
            Direction::Demand => {
                let steps_above = self.step_cum[self.steps.len()] - self.step_cum[above];
                steps_above + (self.span_cum[self.spans.len()] - linear).max(0.0)
            }
        };
        (base, base + at)
    }

    /// Segments in acceptance order: ascending price for supply, descending
    /// for demand. Steps come before the span leaving their price.
    pub fn pieces(&self) -> Vec<Segment> {
        let s = self.sign();
        let n = self.knots.len();
        let mut out = Vec::with_capacity(2 * n);
        match self.direction {
            Direction::Supply => {
                for k in 0..n {
                    if self.steps[k] > 0.0 {
                        out.push(Segment::new(self.knots[k], self.knots[k], s * self.steps[k]));
                    }
                    if k + 1 < n {
                        out.push(Segment::new(self.knots[k], self.knots[k + 1], s * self.spans[k]));
                    }
                }
            }
            Direction::Demand => {
                for k in (0..n).rev() {
                    if self.steps[k] > 0.0 {
                        out.push(Segment::new(self.knots[k], self.knots[k], s * self.steps[k]));
                    }
                    if k > 0 {
                        out.push(Segment::new(self.knots[k], self.knots[k - 1], s * self.spans[k - 1]));
                    }
                }
            }
        }
        out
    }

    /// Accepted fraction of every piece (see [`pieces`](Self::pieces)) at
    /// price `p`, with the steps sitting at `p` filled to `step_fill`.
    pub fn fractions_at(&self, p: Price, step_fill: f64) -> Vec<f64> {
        let step_x = |v: Price| {
            let better = match self.direction {
                Direction::Supply => v < p,
                Direction::Demand => v > p,
            };
            if (v - p).abs() <= PRICE_TOL {
                step_fill
            } else if better {
                1.0
            } else {
                0.0
            }
        };
        self.pieces()
            .iter()
            .map(|seg| {
                if seg.p0 == seg.p1 {
                    step_x(seg.p0)
                } else {
                    match self.direction {
                        Direction::Supply => span_fraction(seg.p0, seg.p1, p),
                        Direction::Demand => 1.0 - span_fraction(seg.p1, seg.p0, p),
                    }
                }
            })
            .collect()
    }

    /// Surplus the curve's bidders would earn trading at price `p`:
    /// `(p - bid)+` integrated over supply, `(bid - p)+` over demand.
    pub fn surplus_at(&self, p: Price) -> Money {
        let mut total = 0.0;
        for (k, w) in self.knots.windows(2).enumerate() {
            let (lo, hi, v) = (w[0], w[1], self.spans[k]);
            if v == 0.0 {
                continue;
            }
            total += match self.direction {
                Direction::Supply if p <= lo => 0.0,
                Direction::Supply if p >= hi => v * (p - 0.5 * (lo + hi)),
                Direction::Supply => v * (p - lo) * (p - lo) / (2.0 * (hi - lo)),
                Direction::Demand if p >= hi => 0.0,
                Direction::Demand if p <= lo => v * (0.5 * (lo + hi) - p),
                Direction::Demand => v * (hi - p) * (hi - p) / (2.0 * (hi - lo)),
            };
        }
        for (c, v) in self.knots.iter().zip(&self.steps) {
            total += v * match self.direction {
                Direction::Supply => (p - c).max(0.0),
                Direction::Demand => (c - p).max(0.0),
            };
        }
        total
    }

    /// `(price, cumulative signed quantity)` walking the curve in acceptance order.
    pub fn breakpoints(&self) -> Vec<(Price, Quantity)> {
        let start = match self.direction {
            Direction::Supply => self.knots[0],
            Direction::Demand => *self.knots.last().unwrap(),
        };
        let mut cum = 0.0;
        let mut out = vec![(start, 0.0)];
        for piece in self.pieces() {
            cum += piece.q;
            out.push((piece.p1, cum));
        }
        out
    }
}

fn span_fraction(lo: Price, hi: Price, p: Price) -> f64 {
    if p <= lo {
        0.0
    } else if p >= hi {
        1.0
    } else {
        ((p - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Signed quantity on the curve at price `p`, linearly interpolated. At a
/// step the whole step counts as accepted.
pub fn quantity_at_price(curve: &AggregatedCurve, p: Price) -> Result<Quantity, CurveError> {
    let b = curve.bounds();
    if !(p >= b.p_min - PRICE_TOL && p <= b.p_max + PRICE_TOL) {
        return Err(CurveError::PriceOutOfBounds {
            price: p,
            p_min: b.p_min,
            p_max: b.p_max,
        });
    }
    Ok(curve.sign() * curve.accepted_range(p).1)
}

/// Accepted fractions per piece for both curves of a period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fractions {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
}

/// Quadratic surplus of the hourly bids: sum of `q*p0*x + q*(p1-p0)*x^2/2`.
pub fn hourly_objective(supply: &AggregatedCurve, demand: &AggregatedCurve, fractions: &Fractions) -> Money {
    let side = |curve: &AggregatedCurve, xs: &[f64]| -> Money {
        curve.pieces().iter().zip(xs).map(|(seg, x)| seg.objective(*x)).sum()
    };
    side(supply, &fractions.supply) + side(demand, &fractions.demand)
}

/// Solution set of the period balance for a given net block quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingPoint {
    pub price_lo: Price,
    pub price_hi: Price,
    pub net_block_q: Quantity,
    /// Accepted hourly demand volume (absolute) at the representative price.
    pub demand_volume: Quantity,
    /// Accepted hourly supply volume (absolute) at the representative price.
    pub supply_volume: Quantity,
    /// Fractions at the interval midpoint.
    pub fractions: Fractions,
    /// The whole balancing interval sits on a price cap.
    pub cap_binding: bool,
}

impl ClearingPoint {
    pub fn midpoint(&self) -> Price {
        0.5 * (self.price_lo + self.price_hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.price_hi - self.price_lo <= PRICE_TOL
    }
}

/// Hourly bids of one period, ready for repeated clearing.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMarket {
    pub supply: AggregatedCurve,
    pub demand: AggregatedCurve,
    grid: Vec<Price>,
    g_lo: Vec<Quantity>,
    g_hi: Vec<Quantity>,
    scale: Quantity,
}

/// Accepted volumes and fractions at one price.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settlement {
    pub price: Price,
    pub supply_volume: Quantity,
    pub demand_volume: Quantity,
    pub fractions: Fractions,
}

impl PeriodMarket {
    pub fn new(supply: AggregatedCurve, demand: AggregatedCurve) -> Self {
        let mut grid: Vec<Price> = supply.knots.iter().chain(&demand.knots).copied().collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut g_lo = Vec::with_capacity(grid.len());
        let mut g_hi = Vec::with_capacity(grid.len());
        for p in &grid {
            let (s_lo, s_hi) = supply.accepted_range(*p);
            let (d_lo, d_hi) = demand.accepted_range(*p);
            g_lo.push(s_lo - d_hi);
            g_hi.push(s_hi - d_lo);
        }
        let scale = supply.volume() + demand.volume();
        Self {
            supply,
            demand,
            grid,
            g_lo,
            g_hi,
            scale,
        }
    }

    pub fn from_segments(supply: &[Segment], demand: &[Segment], bounds: PriceBounds) -> Self {
        Self::new(
            aggregate(supply, Direction::Supply, bounds),
            aggregate(demand, Direction::Demand, bounds),
        )
    }

    pub fn bounds(&self) -> PriceBounds {
        self.supply.bounds()
    }

    /// Total hourly volume of the period, both sides.
    pub fn volume(&self) -> Quantity {
        self.scale
    }

    /// Prices at which accepted supply minus accepted demand equals `net`
    /// (signed net block quantity, demand positive).
    pub fn clear(&self, net: Quantity) -> Result<ClearingPoint, CurveError> {
        let tol = 1e-12 * (self.scale + net.abs() + 1.0);
        let last = self.grid.len() - 1;
        if self.g_lo[0] > net + tol || self.g_hi[last] < net - tol {
            return Err(CurveError::BalanceInfeasible { net });
        }
        let g = &self.grid;
        let interior = |k: usize| {
            // root of the linear stretch between grid[k] and grid[k + 1]
            let (a, b) = (self.g_hi[k], self.g_lo[k + 1]);
            let t = ((net - a) / (b - a)).clamp(0.0, 1.0);
            g[k] + t * (g[k + 1] - g[k])
        };

        let mut price_lo = g[last];
        if self.g_hi[0] >= net - tol {
            price_lo = g[0];
        } else {
            for k in 1..=last {
                if self.g_lo[k] > net + tol {
                    price_lo = interior(k - 1);
                    break;
                }
                if self.g_hi[k] >= net - tol {
                    price_lo = g[k];
                    break;
                }
            }
        }
        let mut price_hi = g[0];
        if self.g_lo[last] <= net + tol {
            price_hi = g[last];
        } else {
            for k in (0..last).rev() {
                if self.g_hi[k] < net - tol {
                    price_hi = interior(k);
                    break;
                }
                if self.g_lo[k] <= net + tol {
                    price_hi = g[k];
                    break;
                }
            }
        }
        if price_hi < price_lo {
            let mid = 0.5 * (price_lo + price_hi);
            price_lo = mid;
            price_hi = mid;
        }
        let b = self.bounds();
        let cap_binding = price_hi <= b.p_min + PRICE_TOL || price_lo >= b.p_max - PRICE_TOL;
        let mid = self.settle(net, 0.5 * (price_lo + price_hi));
        Ok(ClearingPoint {
            price_lo,
            price_hi,
            net_block_q: net,
            demand_volume: mid.demand_volume,
            supply_volume: mid.supply_volume,
            fractions: mid.fractions,
            cap_binding,
        })
    }

    /// Fractions realizing the balance at `price`. Steps at `price` absorb
    /// the residual; when both sides have a step there, the traded volume is
    /// put halfway through the feasible range.
    pub fn settle(&self, net: Quantity, price: Price) -> Settlement {
        let (s_lo, s_hi) = self.supply.accepted_range(price);
        let (d_lo, d_hi) = self.demand.accepted_range(price);
        let (vs, vd) = (s_hi - s_lo, d_hi - d_lo);
        let r = (net - s_lo + d_lo).clamp(-vd, vs);
        let d_min = (-r).max(0.0);
        let d_max = vd.min(vs - r).max(d_min);
        let d_fill = 0.5 * (d_min + d_max);
        let s_fill = (r + d_fill).clamp(0.0, vs);
        let fill = |amount: f64, total: f64| if total > 0.0 { (amount / total).clamp(0.0, 1.0) } else { 0.0 };
        Settlement {
            price,
            supply_volume: s_lo + s_fill,
            demand_volume: d_lo + d_fill,
            fractions: Fractions {
                supply: self.supply.fractions_at(price, fill(s_fill, vs)),
                demand: self.demand.fractions_at(price, fill(d_fill, vd)),
            },
        }
    }

    pub fn objective(&self, fractions: &Fractions) -> Money {
        hourly_objective(&self.supply, &self.demand, fractions)
    }
}

/// Clears one period. `net_block_q` is the signed sum of accepted block
/// quantities (supply negative).
pub fn intersect(
    supply: &AggregatedCurve,
    demand: &AggregatedCurve,
    net_block_q: Quantity,
) -> Result<ClearingPoint, CurveError> {
    PeriodMarket::new(supply.clone(), demand.clone()).clear(net_block_q)
}
