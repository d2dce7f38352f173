//! Seeded synthetic markets shaped like a national day-ahead exchange.
//!
//! Hourly bids are short linear segments scattered around a daily price
//! path. Block bids are priced near each period's hourly-only clearing
//! price, so some of them end up close to the money.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::PeriodMarket;
use crate::model::{BlockBid, Direction, Instance, Price, PriceBounds, Quantity, Segment};

pub const PROFILE_DIR_ENV: &str = "MCBENCH_PROFILE_DIR";
pub const BUILTIN_PROFILES: [&str; 4] = ["TR-2012", "TR-2013", "TR-2014", "TR-2015"];

const QUANTITY_STEP: f64 = 0.1;
const PRICE_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfile {
    pub name: String,
    pub periods: usize,
    /// Hourly segments per day, both sides together.
    pub hourly_bid_count: usize,
    pub supply_block_count: usize,
    pub demand_block_count: usize,
    pub hourly_supply_volume_share: f64,
    pub hourly_demand_volume_share: f64,
    /// Daily MWh, hourly and block bids together.
    pub total_supply_volume: f64,
    pub total_demand_volume: f64,
    /// Mean of the daily price path.
    pub price_mean: Price,
    /// Relative amplitude of the sinusoidal day shape.
    pub price_amplitude: f64,
    /// Relative noise on each period's anchor.
    pub price_noise: f64,
    /// Log-normal spread of hourly segment centres around the anchor.
    pub hourly_price_spread: f64,
    /// Log-normal spread of block prices around the clearing price.
    pub block_price_spread: f64,
    pub block_span_min: usize,
    pub block_span_max: usize,
    pub bounds: PriceBounds,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile `{name}` is infeasible: {reason}")]
    Infeasible { name: String, reason: String },
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed profile {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl GeneratorProfile {
    fn yearly(name: &str, counts: (usize, usize, usize), supply: (f64, f64), demand: (f64, f64)) -> Self {
        let (hourly_s, block_s) = supply;
        let (hourly_d, block_d) = demand;
        Self {
            name: name.to_string(),
            periods: 24,
            hourly_bid_count: counts.0,
            supply_block_count: counts.1,
            demand_block_count: counts.2,
            hourly_supply_volume_share: hourly_s / (hourly_s + block_s),
            hourly_demand_volume_share: hourly_d / (hourly_d + block_d),
            total_supply_volume: hourly_s + block_s,
            total_demand_volume: hourly_d + block_d,
            price_mean: 150.0,
            price_amplitude: 0.2,
            price_noise: 0.05,
            hourly_price_spread: 0.35,
            block_price_spread: 0.06,
            block_span_min: 2,
            block_span_max: 12,
            bounds: PriceBounds::new(0.0, 2000.0),
        }
    }

    /// Daily averages of one market year.
    pub fn builtin(name: &str) -> Option<Self> {
        let p = match name {
            "TR-2012" => Self::yearly(name, (7323, 87, 46), (259_873.0, 64_680.0), (249_517.0, 139_439.0)),
            "TR-2013" => Self::yearly(name, (8808, 107, 42), (305_585.0, 86_638.0), (268_786.0, 112_213.0)),
            "TR-2014" => Self::yearly(name, (10064, 99, 38), (365_889.0, 104_438.0), (312_593.0, 122_798.0)),
            "TR-2015" => Self::yearly(name, (9815, 117, 15), (384_084.0, 150_849.0), (364_695.0, 30_535.0)),
            _ => return None,
        };
        Some(p)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// Divides counts (rounded) and volumes by `factor`.
    pub fn downscaled(&self, factor: u32) -> Self {
        assert!(factor >= 1, "downscale factor must be at least 1");
        let f = factor as f64;
        let div = |n: usize| (n as f64 / f).round() as usize;
        Self {
            name: format!("{}-d{}", self.name, factor),
            hourly_bid_count: div(self.hourly_bid_count),
            supply_block_count: div(self.supply_block_count),
            demand_block_count: div(self.demand_block_count),
            total_supply_volume: self.total_supply_volume / f,
            total_demand_volume: self.total_demand_volume / f,
            ..self.clone()
        }
    }

    /// Changes the day length, keeping per-period density of hourly bids
    /// and volumes. Block counts are unchanged.
    pub fn with_periods(&self, periods: usize) -> Self {
        assert!(periods >= 1, "a day needs at least one period");
        let r = periods as f64 / self.periods as f64;
        Self {
            name: format!("{}-t{}", self.name, periods),
            periods,
            hourly_bid_count: ((self.hourly_bid_count as f64 * r).round() as usize).max(2 * periods),
            total_supply_volume: self.total_supply_volume * r,
            total_demand_volume: self.total_demand_volume * r,
            block_span_min: self.block_span_min.min(periods),
            block_span_max: self.block_span_max.min(periods),
            ..self.clone()
        }
    }

    /// Overrides block counts, keeping the volume shares.
    pub fn with_block_counts(&self, supply: usize, demand: usize) -> Self {
        Self {
            name: format!("{}-b{}x{}", self.name, supply, demand),
            supply_block_count: supply,
            demand_block_count: demand,
            ..self.clone()
        }
    }

    /// Same hourly market with no block bids at all.
    pub fn without_blocks(&self) -> Self {
        Self {
            name: format!("{}-noblocks", self.name),
            supply_block_count: 0,
            demand_block_count: 0,
            hourly_supply_volume_share: 1.0,
            hourly_demand_volume_share: 1.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let fail = |reason: &str| {
            Err(ProfileError::Infeasible {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let b = self.bounds;
        if !(b.p_min.is_finite() && b.p_max.is_finite() && b.p_min < b.p_max) {
            return fail("price bounds must be finite with p_min < p_max");
        }
        if self.periods == 0 {
            return fail("periods must be positive");
        }
        if self.hourly_bid_count < 2 * self.periods {
            return fail("need at least one hourly segment per period and side");
        }
        for share in [self.hourly_supply_volume_share, self.hourly_demand_volume_share] {
            if !(share > 0.0 && share <= 1.0) {
                return fail("volume shares must lie in (0, 1]");
            }
        }
        for (share, count) in [
            (self.hourly_supply_volume_share, self.supply_block_count),
            (self.hourly_demand_volume_share, self.demand_block_count),
        ] {
            if share < 1.0 && count == 0 {
                return fail("block volume share is positive but there are no blocks");
            }
            if share == 1.0 && count > 0 {
                return fail("blocks are present but their volume share is zero");
            }
        }
        if !(self.total_supply_volume > 0.0 && self.total_demand_volume > 0.0) {
            return fail("volumes must be positive");
        }
        if !(self.price_mean > b.p_min && self.price_mean < b.p_max) {
            return fail("price mean must lie strictly inside the bounds");
        }
        let spreads = [
            self.price_amplitude,
            self.price_noise,
            self.hourly_price_spread,
            self.block_price_spread,
        ];
        if spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return fail("price spreads must be finite and non-negative");
        }
        if self.block_span_min == 0 || self.block_span_min > self.block_span_max || self.block_span_min > self.periods {
            return fail("block spans need 1 <= min <= max and min <= periods");
        }
        Ok(())
    }
}

/// Resolves a built-in name, a path to a JSON profile, or `<name>.json`
/// under the directory named by `MCBENCH_PROFILE_DIR`.
pub fn load_profile(name: &str) -> Result<GeneratorProfile, ProfileError> {
    if let Some(p) = GeneratorProfile::builtin(name) {
        return Ok(p);
    }
    let direct = Path::new(name);
    if direct.is_file() {
        return read_profile(direct);
    }
    if let Some(dir) = std::env::var_os(PROFILE_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{name}.json"));
        if candidate.is_file() {
            return read_profile(&candidate);
        }
    }
    Err(ProfileError::Unknown(name.to_string()))
}

fn read_profile(path: &Path) -> Result<GeneratorProfile, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    GeneratorProfile::from_json(&text).map_err(|source| ProfileError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

/// Splits `total` into `n` positive random parts, rounded to the quantity
/// grid.
fn split_volume(rng: &mut ChaCha8Rng, total: f64, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| round_to(total * x / sum, QUANTITY_STEP).max(QUANTITY_STEP)).collect()
}

pub fn generate(profile: &GeneratorProfile, seed: u64) -> Result<Instance, ProfileError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_count = profile.periods;
    let bounds = profile.bounds;
    let margin = 0.01 * bounds.width();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Daily price path.
    let phase = rng.random_range(0.0..2.0 * PI);
    let anchors: Vec<Price> = (0..t_count)
        .map(|t| {
            let shape = 1.0 + profile.price_amplitude * (2.0 * PI * t as f64 / t_count as f64 + phase).sin();
            let noise = 1.0 + profile.price_noise * std_normal.sample(&mut rng);
            (profile.price_mean * shape * noise).clamp(bounds.p_min + margin, bounds.p_max - margin)
        })
        .collect();
    // Load shape shared by both sides.
    let load: Vec<f64> = (0..t_count)
        .map(|t| 1.0 + 0.15 * (2.0 * PI * t as f64 / t_count as f64 + phase).sin())
        .collect();
    let load_sum: f64 = load.iter().sum();

    let mut instance = Instance::new(t_count, bounds);
    let cells = 2 * t_count;
    let base = profile.hourly_bid_count / cells;
    let extra = profile.hourly_bid_count % cells;
    let mut cell = 0;
    for t in 0..t_count {
        for direction in Direction::BOTH {
            let count = base + usize::from(cell < extra);
            cell += 1;
            let (total, share) = match direction {
                Direction::Supply => (profile.total_supply_volume, profile.hourly_supply_volume_share),
                Direction::Demand => (profile.total_demand_volume, profile.hourly_demand_volume_share),
            };
            let period_volume = total * share * load[t] / load_sum;
            for amount in split_volume(&mut rng, period_volume, count) {
                let centre = anchors[t] * (profile.hourly_price_spread * std_normal.sample(&mut rng)).exp();
                let width = centre * rng.random_range(0.02..0.3);
                let lo = round_to((centre - width / 2.0).max(bounds.p_min), PRICE_STEP).min(bounds.p_max - PRICE_STEP);
                let hi = round_to((centre + width / 2.0).min(bounds.p_max), PRICE_STEP).max(lo + PRICE_STEP);
                let hi = hi.min(bounds.p_max);
                let segment = match direction {
                    Direction::Supply => Segment::new(lo, hi, -amount),
                    Direction::Demand => Segment::new(hi, lo, amount),
                };
                instance.add_segment(t, direction, segment);
            }
        }
    }

    // Hourly-only clearing prices anchor the block prices.
    let clearing: Vec<Price> = (0..t_count)
        .map(|t| {
            PeriodMarket::from_segments(
                instance.segments(t, Direction::Supply),
                instance.segments(t, Direction::Demand),
                bounds,
            )
            .clear(0.0)
            .map(|c| c.midpoint())
            .unwrap_or(anchors[t])
        })
        .collect();

    let block_dist = Normal::new(0.0, profile.block_price_spread).expect("finite spread");
    let mut serial = 0;
    for (direction, count, total, share) in [
        (
            Direction::Supply,
            profile.supply_block_count,
            profile.total_supply_volume,
            profile.hourly_supply_volume_share,
        ),
        (
            Direction::Demand,
            profile.demand_block_count,
            profile.total_demand_volume,
            profile.hourly_demand_volume_share,
        ),
    ] {
        if count == 0 {
            continue;
        }
        let sign = match direction {
            Direction::Supply => -1.0,
            Direction::Demand => 1.0,
        };
        for volume in split_volume(&mut rng, total * (1.0 - share), count) {
            let span_max = profile.block_span_max.min(t_count);
            let span = rng.random_range(profile.block_span_min..=span_max);
            let start = rng.random_range(0..=t_count - span);
            let per_period = round_to(volume / span as f64, QUANTITY_STEP).max(QUANTITY_STEP);
            let reference = clearing[start..start + span].iter().sum::<Price>() / span as f64;
            let price = round_to(reference * block_dist.sample(&mut rng).exp(), PRICE_STEP).clamp(bounds.p_min, bounds.p_max);
            let prefix = match direction {
                Direction::Supply => "S",
                Direction::Demand => "D",
            };
            instance.add_block(BlockBid::new(
                format!("{prefix}{serial}"),
                price,
                (start..start + span).map(|t| (t, sign * per_period)),
            ));
            serial += 1;
        }
    }
    Ok(instance)
}

/// File stem used for generated instances.
pub fn instance_name(profile: &GeneratorProfile, seed: u64) -> String {
    format!("{}_seed{}", profile.name, seed)
}

/// Realized hourly share of one side's daily volume.
pub fn hourly_share(instance: &Instance, direction: Direction) -> f64 {
    let hourly: Quantity = instance
        .hourly()
        .filter(|(_, d, _)| *d == direction)
        .map(|(_, _, s)| s.q.abs())
        .sum();
    let block: Quantity = instance
        .blocks()
        .iter()
        .filter(|b| b.direction() == Some(direction))
        .map(|b| b.volume())
        .sum();
    hourly / (hourly + block)
}
