#![allow(dead_code)]

use mcbench::clearing::Market;
use mcbench::datagen::{generate, GeneratorProfile, BUILTIN_PROFILES};
use mcbench::{BlockBid, Direction, Instance, PriceBounds, Segment, Solution};

pub fn instance_a() -> Instance {
    Instance::new(1, PriceBounds::new(0.0, 100.0))
        .with_segment(0, Direction::Supply, Segment::new(0.0, 100.0, -100.0))
        .with_segment(0, Direction::Demand, Segment::new(100.0, 0.0, 100.0))
}

pub fn instance_b() -> Instance {
    instance_a().with_block(BlockBid::new("b", 40.0, [(0, -10.0)]))
}

pub fn instance_c() -> Instance {
    instance_a().with_block(BlockBid::new("b", 30.0, [(0, -60.0)]))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Small generated market: 2 to 6 periods and 4 to 10 blocks.
pub fn small_instance(seed: u64) -> Instance {
    let year = BUILTIN_PROFILES[(seed % 4) as usize];
    let periods = 2 + (seed % 5) as usize;
    let blocks = 4 + (seed % 7) as usize;
    let demand = 1 + (seed % 3) as usize;
    let profile = GeneratorProfile::builtin(year)
        .unwrap()
        .downscaled(10)
        .with_periods(periods)
        .with_block_counts(blocks - demand, demand);
    generate(&profile, seed).unwrap()
}

/// Largest per-period balance residual relative to the period volume, and
/// largest price reconstruction error over periods off the caps.
pub fn balance_and_reconstruction(instance: &Instance, solution: &Solution) -> (f64, f64) {
    let Some(inc) = &solution.incumbent else {
        return (0.0, 0.0);
    };
    let market = Market::new(instance);
    let bounds = instance.bounds();
    let mut worst_balance: f64 = 0.0;
    let mut worst_price: f64 = 0.0;
    for (t, settlement) in inc.settlements.iter().enumerate() {
        let pm = market.period(t);
        let supply = pm.supply.pieces();
        let demand = pm.demand.pieces();
        let f = &settlement.fractions;
        let sold: f64 = supply.iter().zip(&f.supply).map(|(s, x)| s.q.abs() * x).sum();
        let bought: f64 = demand.iter().zip(&f.demand).map(|(s, x)| s.q.abs() * x).sum();
        let net = instance.net_block_quantity(t, &inc.assignment().0);
        let volume = instance.hourly_volume(t) + instance.blocks().iter().map(|b| b.quantity(t).abs()).sum::<f64>();
        worst_balance = worst_balance.max((sold - bought - net).abs() / volume.max(1.0));

        let p = inc.prices[t];
        let at_cap = (p - bounds.p_min).abs() <= 1e-9 || (p - bounds.p_max).abs() <= 1e-9;
        if !at_cap {
            let from_supply = bounds.p_min + supply.iter().zip(&f.supply).map(|(s, x)| (s.p1 - s.p0) * x).sum::<f64>();
            let from_demand = bounds.p_max + demand.iter().zip(&f.demand).map(|(s, x)| (s.p1 - s.p0) * x).sum::<f64>();
            worst_price = worst_price.max((from_supply - p).abs()).max((from_demand - p).abs());
        }
    }
    (worst_balance, worst_price)
}
