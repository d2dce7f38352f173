//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use common::{balance_and_reconstruction, instance_a, instance_b, instance_c, rel_close, small_instance};
use mcbench::datagen::{generate, GeneratorProfile};
use mcbench::metrics::compute_measures;
use mcbench::oracle::{agreement, enumerate};
use mcbench::stats::{paired_t_test, student_t_quantile};
use mcbench::{solve, Instance, Rule, SolveParams, Solution, Status};

type Verdict = Result<String, String>;

const ORACLE_INSTANCES: u64 = 200;

struct Runs {
    /// Per instance: (instance, solver solution per rule).
    solved: Vec<(Instance, Vec<Solution>)>,
    mismatches: Vec<String>,
    assignment_differences: usize,
    elapsed: f64,
}

fn check(ok: bool, pass: String, fail: String) -> Verdict {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn analytic_suite() -> Verdict {
    let tol = 1e-6;
    let exact = SolveParams::exact();
    let mut problems = Vec::new();
    let expect = |problems: &mut Vec<String>, what: &str, got: f64, want: f64| {
        if !rel_close(got, want, tol) {
            problems.push(format!("{what}: got {got}, want {want}"));
        }
    };
    let a = solve(&instance_a(), Rule::Unrestricted, &exact).unwrap();
    expect(&mut problems, "A price", a.prices().unwrap()[0], 50.0);
    expect(&mut problems, "A ts", a.total_surplus().unwrap(), 2500.0);
    let b = solve(&instance_b(), Rule::Unrestricted, &exact).unwrap();
    expect(&mut problems, "B price", b.prices().unwrap()[0], 45.0);
    expect(&mut problems, "B ts", b.total_surplus().unwrap(), 2575.0);
    for (rule, ts, accepted) in [
        (Rule::Unrestricted, 2800.0, true),
        (Rule::NoPab, 2500.0, false),
        (Rule::NoPrb, 2800.0, true),
    ] {
        let s = solve(&instance_c(), rule, &exact).unwrap();
        expect(&mut problems, &format!("C {rule} ts"), s.total_surplus().unwrap(), ts);
        if s.incumbent.as_ref().unwrap().assignment().0 != vec![accepted] {
            problems.push(format!("C {rule}: wrong acceptance"));
        }
        let m = compute_measures(&s).unwrap();
        match rule {
            Rule::NoPrb => {
                expect(&mut problems, "C R3 TL", m.tl, 600.0);
                expect(&mut problems, "C R3 MUL", m.mul, 10.0);
            }
            Rule::NoPab => {
                expect(&mut problems, "C R2 TLP", m.tlp, 1200.0);
                expect(&mut problems, "C R2 MULP", m.mulp, 20.0);
            }
            Rule::Unrestricted => {}
        }
    }
    check(
        problems.is_empty(),
        "A p=50 TS=2500, B p=45 TS=2575, C 2800/2500/2800 with TL 600, MUL 10, TLP 1200, MULP 20".into(),
        problems.join("; "),
    )
}

fn run_oracle_comparison() -> Runs {
    let start = Instant::now();
    let params = SolveParams {
        time_limit: 600.0,
        ..SolveParams::exact()
    };
    let results: Vec<_> = (0..ORACLE_INSTANCES)
        .into_par_iter()
        .map(|seed| {
            let inst = small_instance(seed);
            let mut sols = Vec::new();
            let mut mismatches = Vec::new();
            let mut differ = 0;
            for rule in Rule::ALL {
                let s = solve(&inst, rule, &params).unwrap();
                let o = enumerate(&inst, rule).unwrap();
                let ag = agreement(&s, &o);
                if !ag.matches() {
                    mismatches.push(format!(
                        "seed {seed} {rule}: solver {:?} {:?} vs oracle {:?} {:?}",
                        s.status,
                        s.total_surplus(),
                        o.status,
                        o.total_surplus()
                    ));
                }
                if !ag.assignment {
                    differ += 1;
                }
                sols.push(s);
            }
            (inst, sols, mismatches, differ)
        })
        .collect();
    let mut runs = Runs {
        solved: Vec::new(),
        mismatches: Vec::new(),
        assignment_differences: 0,
        elapsed: 0.0,
    };
    for (inst, sols, mm, d) in results {
        runs.solved.push((inst, sols));
        runs.mismatches.extend(mm);
        runs.assignment_differences += d;
    }
    runs.elapsed = start.elapsed().as_secs_f64();
    runs
}

fn oracle_equivalence(runs: &Runs) -> Verdict {
    let blocks_max = runs.solved.iter().map(|(i, _)| i.blocks().len()).max().unwrap_or(0);
    let periods_max = runs.solved.iter().map(|(i, _)| i.period_count()).max().unwrap_or(0);
    let infeasible = runs
        .solved
        .iter()
        .flat_map(|(_, s)| s)
        .filter(|s| s.status == Status::Infeasible)
        .count();
    let shape_ok = blocks_max <= 10 && periods_max <= 6 && runs.solved.len() == ORACLE_INSTANCES as usize;
    check(
        runs.mismatches.is_empty() && shape_ok && runs.elapsed < 300.0,
        format!(
            "{} instances x 3 rules agree (T<={periods_max}, |B|<={blocks_max}, {infeasible} infeasible, {} tied alternative assignments, {:.1}s)",
            runs.solved.len(),
            runs.assignment_differences,
            runs.elapsed
        ),
        format!(
            "{} mismatches (first: {}), T<={periods_max}, |B|<={blocks_max}, {:.1}s",
            runs.mismatches.len(),
            runs.mismatches.first().cloned().unwrap_or_default(),
            runs.elapsed
        ),
    )
}

fn rule_guarantees(runs: &Runs) -> Verdict {
    let mut bad = Vec::new();
    let mut paradoxes_r1 = 0;
    for (k, (_, sols)) in runs.solved.iter().enumerate() {
        for s in sols {
            let Ok(m) = compute_measures(s) else { continue };
            match s.rule {
                Rule::NoPab if m.n_pab > 0 => bad.push(format!("instance {k} R2 has {} PAB", m.n_pab)),
                Rule::NoPrb if m.n_prb > 0 => bad.push(format!("instance {k} R3 has {} PRB", m.n_prb)),
                Rule::Unrestricted => paradoxes_r1 += m.n_paradox(),
                _ => {}
            }
        }
    }
    check(
        bad.is_empty(),
        format!("no PAB under R2, no PRB under R3 ({paradoxes_r1} paradoxical blocks under R1)"),
        bad.join("; "),
    )
}

fn dominance(runs: &Runs) -> Verdict {
    let mut bad = Vec::new();
    for (k, (_, sols)) in runs.solved.iter().enumerate() {
        let r1 = sols[0].total_surplus().unwrap();
        for s in &sols[1..] {
            if let Some(ts) = s.total_surplus() {
                if r1 < ts - 1e-9 {
                    bad.push(format!("instance {k}: R1 {r1} < {} {ts}", s.rule));
                }
            }
        }
    }
    check(bad.is_empty(), "TS(R1) >= TS(R2), TS(R3) on every instance".into(), bad.join("; "))
}

fn balance(runs: &Runs) -> Verdict {
    let mut worst_balance: f64 = 0.0;
    let mut worst_price: f64 = 0.0;
    for (inst, sols) in &runs.solved {
        for s in sols {
            let (b, p) = balance_and_reconstruction(inst, s);
            worst_balance = worst_balance.max(b);
            worst_price = worst_price.max(p);
        }
    }
    check(
        worst_balance <= 1e-9 && worst_price <= 1e-9,
        format!("max relative residual {worst_balance:.2e}, max price reconstruction error {worst_price:.2e}"),
        format!("residual {worst_balance:.2e}, price error {worst_price:.2e}"),
    )
}

fn statistics() -> Verdict {
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.05).unwrap();
    let example = (r.t_stat - 3.464).abs() <= 1e-3
        && (r.p_value - 0.0742).abs() <= 1e-3
        && (r.lcl + 0.484).abs() <= 1e-2
        && (r.ucl - 4.484).abs() <= 1e-2;
    let table = [
        (1.0, [3.0777, 6.3138, 12.7062, 31.8205]),
        (2.0, [1.8856, 2.9200, 4.3027, 6.9646]),
        (10.0, [1.3722, 1.8125, 2.2281, 2.7638]),
        (30.0, [1.3104, 1.6973, 2.0423, 2.4573]),
    ];
    let mut worst: f64 = 0.0;
    for (df, qs) in table {
        for (level, want) in [0.90, 0.95, 0.975, 0.99].into_iter().zip(qs) {
            worst = worst.max((student_t_quantile(level, df) - want).abs());
        }
    }
    check(
        example && worst <= 1e-4,
        format!(
            "t={:.4} p={:.4} CI [{:.3}, {:.3}], worst table deviation {worst:.1e}",
            r.t_stat, r.p_value, r.lcl, r.ucl
        ),
        format!("t={} p={} CI [{}, {}], worst table deviation {worst}", r.t_stat, r.p_value, r.lcl, r.ucl),
    )
}

fn end_to_end() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mcbench"))
        .args(["compare", "--profile", "TR-2015", "--downscale", "10", "--seeds", "1..100"])
        .args(["--workers", &workers.to_string(), "--out"])
        .arg(dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(format!("compare exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    let report: serde_json::Value = read_json(&dir.path().join("report.json"))?;
    let mean = |hyp: &str| {
        report["tests"]
            .as_array()
            .and_then(|ts| ts.iter().find(|t| t["criterion"] == "TS" && t["hypothesis"] == hyp))
            .and_then(|t| t["mean_diff"].as_f64())
    };
    let (h12, h13) = (mean("H12"), mean("H13"));
    let total = report["instances_total"].as_u64().unwrap_or(0);
    let kept = report["instances_kept"].as_u64().unwrap_or(0);
    let excluded = report["excluded"].as_array().map_or(0, |e| e.len()) as u64;
    let rows = csv::Reader::from_path(dir.path().join("instances.csv"))
        .map_err(|e| e.to_string())?
        .records()
        .count() as u64;
    let table_rows = csv::Reader::from_path(dir.path().join("table.csv"))
        .map_err(|e| e.to_string())?
        .records()
        .count();
    let free = report["paradox_free_fraction"].as_f64();
    let ok = h12.is_some_and(|v| v >= 0.0)
        && h13.is_some_and(|v| v >= 0.0)
        && total == 100
        && kept + excluded == total
        && rows == 3 * kept
        && table_rows == 33
        && free.is_some()
        && elapsed < 600.0;
    check(
        ok,
        format!(
            "{kept}/{total} kept, mean TS diff R1-R2 {:.2}, R1-R3 {:.2}, paradox-free R1 share {:.0}%, {elapsed:.1}s",
            h12.unwrap_or(f64::NAN),
            h13.unwrap_or(f64::NAN),
            100.0 * free.unwrap_or(f64::NAN)
        ),
        format!("kept {kept}/{total}, rows {rows}, table {table_rows}, H12 {h12:?}, H13 {h13:?}, {elapsed:.1}s"),
    )
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn solver_discipline() -> Verdict {
    let profile = GeneratorProfile::builtin("TR-2015").unwrap().with_block_counts(34, 6);
    let inst = generate(&profile, 8).unwrap();
    let blocks = inst.blocks().len();
    let rushed = solve(
        &inst,
        Rule::Unrestricted,
        &SolveParams {
            absolute_gap: 0.0,
            time_limit: 0.01,
            node_limit: None,
        },
    )
    .unwrap();
    let rushed_ok = rushed.status == Status::TimeLimit
        && rushed.incumbent.is_some()
        && rushed.bound.is_finite()
        && rushed.gap.is_some_and(|g| g >= 0.0);
    let gapped = solve(&inst, Rule::Unrestricted, &SolveParams::default()).unwrap();
    let gapped_ok = matches!(gapped.status, Status::GapReached | Status::Optimal) && gapped.gap.is_some_and(|g| g <= 100.0);
    check(
        blocks == 40 && rushed_ok && gapped_ok,
        format!(
            "10 ms limit: {:?} with gap {:.1}; gap 100: {:?} with gap {:.2} after {} nodes",
            rushed.status,
            rushed.gap.unwrap(),
            gapped.status,
            gapped.gap.unwrap(),
            gapped.nodes_explored
        ),
        format!(
            "{blocks} blocks; 10 ms: {:?} gap {:?}; gap 100: {:?} gap {:?}",
            rushed.status, rushed.gap, gapped.status, gapped.gap
        ),
    )
}

fn main() {
    let runs = run_oracle_comparison();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("analytic instances", Box::new(analytic_suite)),
        ("oracle equivalence", Box::new(|| oracle_equivalence(&runs))),
        ("rule guarantees", Box::new(|| rule_guarantees(&runs))),
        ("R1 dominance", Box::new(|| dominance(&runs))),
        ("balance and price reconstruction", Box::new(|| balance(&runs))),
        ("statistics", Box::new(statistics)),
        ("end-to-end comparison", Box::new(end_to_end)),
        ("solver discipline", Box::new(solver_discipline)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
