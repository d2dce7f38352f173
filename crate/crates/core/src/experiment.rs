//! Batch comparison of pricing rules: solve every instance under every rule,
//! drop unusable instances, then run paired t-tests per measure and rule
//! pair.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::clearing::Rule;
use crate::metrics::{compute_measures_with, DeviationConvention, MeasureRow, Measures};
use crate::model::Instance;
use crate::solver::{solve, SolveError, SolveParams, Solution};
use crate::stats::{boxplot_summary, paired_t_test, BoxplotSummary, PairedTestResult, StatsError};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Rules to run; duplicates are allowed.
    pub rules: Vec<Rule>,
    pub params: SolveParams,
    pub alpha: f64,
    pub workers: usize,
    pub convention: DeviationConvention,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rules: Rule::ALL.to_vec(),
            params: SolveParams::default(),
            alpha: 0.05,
            workers: 1,
            convention: DeviationConvention::PerUnit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Ts,
    Mcp,
    NPab,
    NPrb,
    Tl,
    Tlp,
    Mul,
    Mulp,
    NParadox,
    TotalLoss,
    MaxPriceDiff,
}

impl Criterion {
    pub const ALL: [Criterion; 11] = [
        Criterion::Ts,
        Criterion::Mcp,
        Criterion::NPab,
        Criterion::NPrb,
        Criterion::Tl,
        Criterion::Tlp,
        Criterion::Mul,
        Criterion::Mulp,
        Criterion::NParadox,
        Criterion::TotalLoss,
        Criterion::MaxPriceDiff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Ts => "TS",
            Criterion::Mcp => "MCP",
            Criterion::NPab => "#PAB",
            Criterion::NPrb => "#PRB",
            Criterion::Tl => "TL",
            Criterion::Tlp => "TLP",
            Criterion::Mul => "MUL",
            Criterion::Mulp => "MULP",
            Criterion::NParadox => "#PAB+#PRB",
            Criterion::TotalLoss => "TL+TLP",
            Criterion::MaxPriceDiff => "MaxPriceDiff",
        }
    }

    pub fn value(self, m: &Measures) -> f64 {
        match self {
            Criterion::Ts => m.ts,
            Criterion::Mcp => m.mcp_daily_avg,
            Criterion::NPab => m.n_pab as f64,
            Criterion::NPrb => m.n_prb as f64,
            Criterion::Tl => m.tl,
            Criterion::Tlp => m.tlp,
            Criterion::Mul => m.mul,
            Criterion::Mulp => m.mulp,
            Criterion::NParadox => m.n_paradox() as f64,
            Criterion::TotalLoss => m.total_loss(),
            Criterion::MaxPriceDiff => m.max_price_diff(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("a comparison needs at least two rules, got {0}")]
    TooFewRules(usize),
    #[error("worker count must be positive")]
    NoWorkers,
    #[error("instance {id}: {source}")]
    Solve {
        id: String,
        #[source]
        source: SolveError,
    },
    #[error("only {kept} of {total} instances survived the exclusion filter; need at least 2")]
    AllExcluded { total: usize, kept: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// One instance solved under every configured rule.
#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub id: String,
    pub solutions: Vec<Solution>,
    pub measures: Vec<Option<Measures>>,
    pub exclusion: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestRow {
    pub criterion: &'static str,
    pub hypothesis: String,
    pub rule_a: Rule,
    pub rule_b: Rule,
    #[serde(flatten)]
    pub result: PairedTestResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxplotRow {
    pub criterion: &'static str,
    /// Rule code for a single sample, `H<i><j>` for paired differences.
    pub series: String,
    #[serde(flatten)]
    pub summary: BoxplotSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub rules: Vec<Rule>,
    pub alpha: f64,
    pub convention: DeviationConvention,
    pub instances_total: usize,
    pub instances_kept: usize,
    pub excluded: Vec<Exclusion>,
    pub tests: Vec<TestRow>,
    pub boxplots: Vec<BoxplotRow>,
    /// Share of kept instances whose unrestricted solution has no paradox.
    pub paradox_free_fraction: Option<f64>,
    pub rows: Vec<MeasureRow>,
}

fn hypothesis(a: Rule, b: Rule) -> String {
    let digit = |r: Rule| &r.code()[1..];
    format!("H{}{}", digit(a), digit(b))
}

fn exclusion_reason(solutions: &[Solution]) -> Option<String> {
    for s in solutions {
        if !s.status.is_solved() {
            return Some(format!("{} ended with status {:?}", s.rule, s.status));
        }
        if s.cap_binding() {
            return Some(format!("{} price hits a cap", s.rule));
        }
    }
    None
}

pub fn run_instance(id: &str, instance: &Instance, config: &ExperimentConfig) -> Result<InstanceRun, ExperimentError> {
    let mut solutions = Vec::with_capacity(config.rules.len());
    for &rule in &config.rules {
        let s = solve(instance, rule, &config.params).map_err(|source| ExperimentError::Solve {
            id: id.to_string(),
            source,
        })?;
        solutions.push(s);
    }
    let measures = solutions
        .iter()
        .map(|s| compute_measures_with(s, config.convention).ok())
        .collect();
    Ok(InstanceRun {
        id: id.to_string(),
        exclusion: exclusion_reason(&solutions),
        solutions,
        measures,
    })
}

/// Solves all instances (in parallel when `workers > 1`) and assembles the
/// report. Instances are reported in id order.
pub fn run_comparison(instances: &[(String, Instance)], config: &ExperimentConfig) -> Result<ComparisonReport, ExperimentError> {
    if config.rules.len() < 2 {
        return Err(ExperimentError::TooFewRules(config.rules.len()));
    }
    if config.workers == 0 {
        return Err(ExperimentError::NoWorkers);
    }
    let runs: Vec<Result<InstanceRun, ExperimentError>> = if config.workers == 1 {
        instances.iter().map(|(id, inst)| run_instance(id, inst, config)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        pool.install(|| instances.par_iter().map(|(id, inst)| run_instance(id, inst, config)).collect())
    };
    let mut runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    runs.sort_by(|a, b| a.id.cmp(&b.id));
    summarize(&runs, config)
}

pub fn summarize(runs: &[InstanceRun], config: &ExperimentConfig) -> Result<ComparisonReport, ExperimentError> {
    let excluded: Vec<Exclusion> = runs
        .iter()
        .filter_map(|r| {
            r.exclusion.as_ref().map(|reason| Exclusion {
                id: r.id.clone(),
                reason: reason.clone(),
            })
        })
        .collect();
    let kept: Vec<&InstanceRun> = runs.iter().filter(|r| r.exclusion.is_none()).collect();
    log::info!("kept {} of {} instances ({} excluded)", kept.len(), runs.len(), excluded.len());
    for e in &excluded {
        log::info!("excluded {}: {}", e.id, e.reason);
    }
    if kept.len() < 2 {
        return Err(ExperimentError::AllExcluded {
            total: runs.len(),
            kept: kept.len(),
        });
    }

    // Solved statuses always carry an incumbent.
    let measures: Vec<Vec<&Measures>> = kept
        .iter()
        .map(|r| r.measures.iter().map(|m| m.as_ref().expect("solved run has measures")).collect())
        .collect();
    let series = |c: Criterion, k: usize| -> Vec<f64> { measures.iter().map(|ms| c.value(ms[k])).collect() };

    let mut tests = Vec::new();
    let mut boxplots = Vec::new();
    for c in Criterion::ALL {
        for (k, rule) in config.rules.iter().enumerate() {
            if let Some(summary) = boxplot_summary(&series(c, k)) {
                boxplots.push(BoxplotRow {
                    criterion: c.label(),
                    series: rule.code().to_string(),
                    summary,
                });
            }
        }
        for i in 0..config.rules.len() {
            for j in i + 1..config.rules.len() {
                let (a, b) = (series(c, i), series(c, j));
                let h = hypothesis(config.rules[i], config.rules[j]);
                let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                if let Some(summary) = boxplot_summary(&diffs) {
                    boxplots.push(BoxplotRow {
                        criterion: c.label(),
                        series: h.clone(),
                        summary,
                    });
                }
                tests.push(TestRow {
                    criterion: c.label(),
                    hypothesis: h,
                    rule_a: config.rules[i],
                    rule_b: config.rules[j],
                    result: paired_t_test(&a, &b, config.alpha)?,
                });
            }
        }
    }

    let paradox_free_fraction = config.rules.iter().position(|r| *r == Rule::Unrestricted).map(|k| {
        let free = measures.iter().filter(|ms| ms[k].paradox_free()).count();
        free as f64 / measures.len() as f64
    });

    let rows = kept
        .iter()
        .zip(&measures)
        .flat_map(|(run, ms)| run.solutions.iter().zip(ms).map(|(s, m)| MeasureRow::new(&run.id, s, m)))
        .collect();

    Ok(ComparisonReport {
        rules: config.rules.clone(),
        alpha: config.alpha,
        convention: config.convention,
        instances_total: runs.len(),
        instances_kept: kept.len(),
        excluded,
        tests,
        boxplots,
        paradox_free_fraction,
        rows,
    })
}

#[derive(Debug, Serialize)]
struct TableRow<'a> {
    criterion: &'a str,
    hypothesis: &'a str,
    mean_diff: f64,
    p_value: f64,
    lcl: f64,
    ucl: f64,
    t_stat: f64,
    n: usize,
    degenerate: bool,
    reject: bool,
}

/// Writes `report.json`, `table.csv`, `instances.csv` and `boxplots.csv`.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;

    let mut table = csv::Writer::from_path(dir.join("table.csv"))?;
    for t in &report.tests {
        table.serialize(TableRow {
            criterion: t.criterion,
            hypothesis: &t.hypothesis,
            mean_diff: t.result.mean_diff,
            p_value: t.result.p_value,
            lcl: t.result.lcl,
            ucl: t.result.ucl,
            t_stat: t.result.t_stat,
            n: t.result.n,
            degenerate: t.result.degenerate,
            reject: t.result.reject,
        })?;
    }
    table.flush()?;

    let mut rows = csv::Writer::from_path(dir.join("instances.csv"))?;
    for r in &report.rows {
        rows.serialize(r)?;
    }
    rows.flush()?;

    let mut boxes = csv::Writer::from_path(dir.join("boxplots.csv"))?;
    boxes.write_record([
        "criterion", "series", "n", "min", "q1", "median", "q3", "max", "lower_whisker", "upper_whisker", "outliers",
    ])?;
    for b in &report.boxplots {
        let s = &b.summary;
        let outliers = s.outliers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        boxes.write_record([
            b.criterion.to_string(),
            b.series.clone(),
            s.n.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
            s.lower_whisker.to_string(),
            s.upper_whisker.to_string(),
            outliers,
        ])?;
    }
    boxes.flush()?;
    Ok(())
}

/// Plain-text rendering of the test table.
pub fn render_table(report: &ComparisonReport) -> String {
    let mut out = format!(
        "{:<14} {:<5} {:>14} {:>10} {:>14} {:>14}\n",
        "criterion", "hyp", "mean_diff", "p_value", "lcl", "ucl"
    );
    for t in &report.tests {
        out.push_str(&format!(
            "{:<14} {:<5} {:>14.4} {:>10.4} {:>14.4} {:>14.4}\n",
            t.criterion, t.hypothesis, t.result.mean_diff, t.result.p_value, t.result.lcl, t.result.ucl
        ));
    }
    out
}
