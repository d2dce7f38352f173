//! Exhaustive reference solver: clears every one of the 2^|B| assignments.
//!
//! Shares clearing and price selection with the branch-and-bound solver, so
//! agreement between the two checks the search, not the clearing.

use std::time::Instant;

use serde::Serialize;

use crate::clearing::{Assignment, Market, Rule};
use crate::model::Instance;
use crate::solver::{prefer, price_assignment, Incumbent, Solution, SolveError, Status};

pub const DEFAULT_BLOCK_CAP: usize = 16;

pub fn enumerate(instance: &Instance, rule: Rule) -> Result<Solution, SolveError> {
    enumerate_with_cap(instance, rule, DEFAULT_BLOCK_CAP)
}

pub fn enumerate_with_cap(instance: &Instance, rule: Rule, cap: usize) -> Result<Solution, SolveError> {
    let blocks = instance.blocks().len();
    if blocks > cap || blocks >= 64 {
        return Err(SolveError::TooManyBlocks { blocks, cap });
    }
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(SolveError::InvalidInstance(violations));
    }
    let start = Instant::now();
    let market = Market::new(instance);
    let mut best: Option<Incumbent> = None;
    let count = 1u64 << blocks;
    for mask in 0..count {
        let assignment = Assignment::from_mask(mask, blocks);
        if let Some(candidate) = price_assignment(&market, &assignment, rule) {
            if best.as_ref().is_none_or(|b| prefer(&candidate, b)) {
                best = Some(candidate);
            }
        }
    }
    let ts = best.as_ref().map(Incumbent::total_surplus);
    Ok(Solution {
        rule,
        status: if best.is_some() { Status::Optimal } else { Status::Infeasible },
        incumbent: best,
        bound: ts.unwrap_or(f64::NEG_INFINITY),
        gap: ts.map(|_| 0.0),
        nodes_explored: count,
        wall_time: start.elapsed().as_secs_f64(),
        price_bounds: instance.bounds(),
    })
}

/// Relative tolerance on total surplus when comparing two solutions.
pub const TS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Agreement {
    /// Both found a solution, or both proved there is none.
    pub feasibility: bool,
    pub total_surplus: bool,
    /// Same accepted set. Alternative optima can legitimately differ here.
    pub assignment: bool,
}

impl Agreement {
    pub fn matches(&self) -> bool {
        self.feasibility && self.total_surplus
    }
}

pub fn agreement(solver: &Solution, oracle: &Solution) -> Agreement {
    match (&solver.incumbent, &oracle.incumbent) {
        (Some(a), Some(b)) => {
            let (x, y) = (a.total_surplus(), b.total_surplus());
            Agreement {
                feasibility: true,
                total_surplus: (x - y).abs() <= TS_REL_TOL * x.abs().max(y.abs()).max(1.0),
                assignment: a.assignment() == b.assignment(),
            }
        }
        (None, None) => Agreement {
            feasibility: solver.status == oracle.status,
            total_surplus: true,
            assignment: true,
        },
        _ => Agreement {
            feasibility: false,
            total_surplus: false,
            assignment: false,
        },
    }
}
