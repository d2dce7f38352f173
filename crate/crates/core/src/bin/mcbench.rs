use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mcbench::clearing::BlockOutcome;
use mcbench::datagen::{generate, instance_name, load_profile, GeneratorProfile};
use mcbench::experiment::{render_table, run_comparison, write_report, ExperimentConfig, ExperimentError};
use mcbench::metrics::{compute_measures_with, DeviationConvention, Measures};
use mcbench::oracle::{agreement, enumerate_with_cap, Agreement, DEFAULT_BLOCK_CAP};
use mcbench::solver::SolveError;
use mcbench::{solve, Instance, Rule, SolveParams, Solution, Status};

const EXIT_INPUT: u8 = 1;
const EXIT_TIME_LIMIT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_ALL_EXCLUDED: u8 = 4;
const EXIT_MISMATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "mcbench", version, about = "Day-ahead auction clearing under three block pricing rules")]
struct Cli {
    /// Absolute optimality gap (default 100; 0 for `oracle`)
    #[arg(long, global = true)]
    gap: Option<f64>,
    /// Wall-clock limit per solve, seconds
    #[arg(long, global = true, default_value_t = 120.0)]
    time_limit: f64,
    /// Significance level of the paired t-tests
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,
    /// Seed when `--seeds` is not given
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Parallel solver workers for `compare`
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output file (`solve`, `oracle`) or directory (`compare`, `generate`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear one instance under one rule
    Solve {
        instance: PathBuf,
        #[arg(long, default_value = "R1")]
        rule: Rule,
        #[arg(long)]
        node_limit: Option<u64>,
        #[arg(long, default_value = "per-unit")]
        mul_convention: DeviationConvention,
    },
    /// Solve a batch under several rules and test the differences
    Compare {
        /// Instance files or directories of them
        #[arg(long, num_args = 1..)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_value = "R1,R2,R3")]
        rules: Vec<Rule>,
        #[arg(long, default_value = "per-unit")]
        mul_convention: DeviationConvention,
    },
    /// Write generated instances to files
    Generate {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Cross-check the solver against exhaustive enumeration
    Oracle {
        instance: PathBuf,
        /// R1, R2, R3 or `all`
        #[arg(long, default_value = "all")]
        rule: String,
        #[arg(long, default_value_t = DEFAULT_BLOCK_CAP)]
        cap: usize,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Built-in profile name, profile file, or name under MCBENCH_PROFILE_DIR
    #[arg(long)]
    profile: Option<String>,
    /// Inclusive seed range `a..b`, or a single seed
    #[arg(long)]
    seeds: Option<SeedRange>,
    #[arg(long)]
    downscale: Option<u32>,
    #[arg(long)]
    periods: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct SeedRange(u64, u64);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("bad seed `{x}`: {e}"));
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        Ok(SeedRange(a, b))
    }
}

/// Failure carrying its exit code.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_INPUT, e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Solve {
            instance,
            rule,
            node_limit,
            mul_convention,
        } => cmd_solve(cli, instance, *rule, *node_limit, *mul_convention),
        Command::Compare {
            instances,
            source,
            rules,
            mul_convention,
        } => cmd_compare(cli, instances, source, rules, *mul_convention),
        Command::Generate { source } => cmd_generate(cli, source),
        Command::Oracle { instance, rule, cap } => cmd_oracle(cli, instance, rule, *cap),
    }
}

fn params(cli: &Cli, default_gap: f64) -> anyhow::Result<SolveParams> {
    let gap = cli.gap.unwrap_or(default_gap);
    if !(gap >= 0.0) {
        bail!("--gap must be non-negative");
    }
    if !(cli.time_limit >= 0.0) {
        bail!("--time-limit must be non-negative");
    }
    Ok(SolveParams {
        absolute_gap: gap,
        time_limit: cli.time_limit,
        node_limit: None,
    })
}

fn read_instance(path: &Path) -> anyhow::Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Instance::from_json(&text).with_context(|| format!("malformed instance {}", path.display()))
}

fn emit(cli: &Cli, text: &str) -> anyhow::Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, format!("{text}\n")).with_context(|| format!("cannot write {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve_error(e: SolveError) -> Failure {
    Failure(EXIT_INPUT, e.into())
}

#[derive(Serialize)]
struct SolveReport<'a> {
    rule: Rule,
    status: Status,
    ts: Option<f64>,
    bound: f64,
    gap: Option<f64>,
    nodes_explored: u64,
    wall_time: f64,
    cap_binding: bool,
    prices: Option<&'a [f64]>,
    accepted: Vec<&'a str>,
    blocks: &'a [BlockOutcome],
    measures: Option<Measures>,
}

impl<'a> SolveReport<'a> {
    fn new(s: &'a Solution, convention: DeviationConvention) -> Self {
        let blocks: &[BlockOutcome] = s.incumbent.as_ref().map_or(&[], |i| i.blocks.as_slice());
        Self {
            rule: s.rule,
            status: s.status,
            ts: s.total_surplus(),
            bound: s.bound,
            gap: s.gap,
            nodes_explored: s.nodes_explored,
            wall_time: s.wall_time,
            cap_binding: s.cap_binding(),
            prices: s.prices(),
            accepted: blocks.iter().filter(|b| b.accepted).map(|b| b.id.as_str()).collect(),
            blocks,
            measures: compute_measures_with(s, convention).ok(),
        }
    }
}

fn cmd_solve(
    cli: &Cli,
    path: &Path,
    rule: Rule,
    node_limit: Option<u64>,
    convention: DeviationConvention,
) -> Result<u8, Failure> {
    let instance = read_instance(path)?;
    let mut p = params(cli, 100.0)?;
    p.node_limit = node_limit;
    let solution = solve(&instance, rule, &p).map_err(solve_error)?;
    emit(cli, &serde_json::to_string_pretty(&SolveReport::new(&solution, convention))?)?;
    Ok(match solution.status {
        Status::Optimal | Status::GapReached => 0,
        Status::TimeLimit => EXIT_TIME_LIMIT,
        Status::Infeasible => EXIT_INFEASIBLE,
    })
}

fn resolve_profile(source: &SourceArgs) -> anyhow::Result<GeneratorProfile> {
    let name = source.profile.as_deref().context("--profile is required")?;
    let mut profile = load_profile(name)?;
    if let Some(k) = source.downscale {
        if k == 0 {
            bail!("--downscale must be at least 1");
        }
        profile = profile.downscaled(k);
    }
    if let Some(t) = source.periods {
        if t == 0 {
            bail!("--periods must be at least 1");
        }
        profile = profile.with_periods(t);
    }
    profile.validate()?;
    Ok(profile)
}

fn seeds(cli: &Cli, source: &SourceArgs) -> SeedRange {
    source.seeds.unwrap_or(SeedRange(cli.seed, cli.seed))
}

fn generated(cli: &Cli, source: &SourceArgs) -> anyhow::Result<Vec<(String, Instance)>> {
    let profile = resolve_profile(source)?;
    let SeedRange(a, b) = seeds(cli, source);
    (a..=b)
        .map(|s| Ok((instance_name(&profile, s), generate(&profile, s)?)))
        .collect()
}

fn collect_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inside: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inside.sort();
            files.extend(inside);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_compare(
    cli: &Cli,
    paths: &[PathBuf],
    source: &SourceArgs,
    rules: &[Rule],
    convention: DeviationConvention,
) -> Result<u8, Failure> {
    let config = ExperimentConfig {
        rules: rules.to_vec(),
        params: params(cli, 100.0)?,
        alpha: cli.alpha,
        workers: cli.workers,
        convention,
    };
    if rules.len() < 2 {
        return Err(Failure(EXIT_INPUT, ExperimentError::TooFewRules(rules.len()).into()));
    }
    if !(cli.alpha > 0.0 && cli.alpha < 1.0) {
        return Err(Failure(EXIT_INPUT, anyhow::anyhow!("--alpha must lie in (0, 1)")));
    }
    let instances = match (paths.is_empty(), source.profile.is_some()) {
        (false, false) => collect_files(paths)?
            .into_iter()
            .map(|f| {
                let id = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
                read_instance(&f).map(|i| (id, i))
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
        (true, true) => generated(cli, source)?,
        _ => return Err(Failure(EXIT_INPUT, anyhow::anyhow!("give either --instances or --profile"))),
    };
    let report = match run_comparison(&instances, &config) {
        Ok(r) => r,
        Err(e @ ExperimentError::AllExcluded { .. }) => return Err(Failure(EXIT_ALL_EXCLUDED, e.into())),
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &cli.out {
        write_report(&report, dir)?;
    }
    println!(
        "instances: {} total, {} kept, {} excluded",
        report.instances_total,
        report.instances_kept,
        report.excluded.len()
    );
    if let Some(f) = report.paradox_free_fraction {
        println!("paradox-free R1 solutions: {:.1}%", 100.0 * f);
    }
    print!("{}", render_table(&report));
    Ok(0)
}

fn cmd_generate(cli: &Cli, source: &SourceArgs) -> Result<u8, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let instances = generated(cli, source)?;
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, instance) in &instances {
        let path = dir.join(format!("{name}.json"));
        fs::write(&path, instance.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct OracleCheck {
    rule: Rule,
    solver_status: Status,
    solver_ts: Option<f64>,
    oracle_status: Status,
    oracle_ts: Option<f64>,
    agreement: Agreement,
    verdict: &'static str,
}

fn cmd_oracle(cli: &Cli, path: &Path, rule: &str, cap: usize) -> Result<u8, Failure> {
    let instance = read_instance(path)?;
    let rules: Vec<Rule> = if rule.eq_ignore_ascii_case("all") {
        Rule::ALL.to_vec()
    } else {
        vec![rule.parse().map_err(|e| anyhow::anyhow!("{e}"))?]
    };
    let p = params(cli, 0.0)?;
    let mut checks = Vec::new();
    for rule in rules {
        let oracle = enumerate_with_cap(&instance, rule, cap).map_err(solve_error)?;
        let solver = solve(&instance, rule, &p).map_err(solve_error)?;
        let agreement = agreement(&solver, &oracle);
        checks.push(OracleCheck {
            rule,
            solver_status: solver.status,
            solver_ts: solver.total_surplus(),
            oracle_status: oracle.status,
            oracle_ts: oracle.total_surplus(),
            agreement,
            verdict: if agreement.matches() { "match" } else { "mismatch" },
        });
    }
    emit(cli, &serde_json::to_string_pretty(&checks)?)?;
    Ok(if checks.iter().all(|c| c.agreement.matches()) { 0 } else { EXIT_MISMATCH })
}
