//! Command-line driver: generate scenarios, plan single queries, run
//! episode batches, and evaluate/sweep/compare the results.
//!
//! Exit codes are stable API: 0 success, 2 invalid configuration,
//! 3 budget exhausted, 4 missing input files. Every flag can also be set
//! through a `TOOLPLAN_`-prefixed environment variable.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use toolplan::estimator::{estimate_all, EstimatorConfig, LookupSimilarity, Similarity, TokenJaccard};
use toolplan::eval::{
    compare, compute_metrics, read_transcripts, run_query, sweep, write_csv, write_transcripts,
    BatchLine, BatchMeta, Report, RunFingerprint, RunOptions, SweepAxis, SweepRow,
    TranscriptRecord, RFBC_DEFINITION,
};
use toolplan::planner::{make_plan, PlannerConfig, QuantizationConfig};
use toolplan::rat::{format_rat, format_rat_approx, parse_rat, rat_to_f64, Rat};
use toolplan::simenv::{generate_scenario, PolicyKind, Scenario, ScenarioConfig};
use toolplan::types::{BudgetLedger, QueryId};
use toolplan::Error;

#[derive(Parser)]
#[command(name = "toolplan", version, about = "Budget-constrained tool-usage planning experiments")]
struct Cli {
    /// Seed for scenario generation / episode randomness.
    #[arg(long, global = true, env = "TOOLPLAN_SEED")]
    seed: Option<u64>,

    /// Parallel episode workers (1 = serial).
    #[arg(long, global = true, env = "TOOLPLAN_WORKERS", default_value_t = 1)]
    workers: usize,

    /// Output path (directory for `gen`, file for `plan`/`run`, prefix
    /// for `eval`/`sweep`/`compare`).
    #[arg(long, global = true, env = "TOOLPLAN_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario bundle.
    Gen(GenArgs),
    /// Plan one query of a scenario and write the plan file.
    Plan(PlanArgs),
    /// Run an episode batch over a scenario, writing transcripts JSONL.
    Run(RunArgs),
    /// Compute metrics over a transcript file.
    Eval(EvalArgs),
    /// Sweep the budget or the threshold over a scenario.
    Sweep(SweepArgs),
    /// Paired planned-vs-unplanned comparison.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, env = "TOOLPLAN_QUERIES", default_value_t = 50)]
    queries: usize,
    #[arg(long, env = "TOOLPLAN_TOOLS_PER_QUERY", default_value_t = 5)]
    tools_per_query: usize,
    #[arg(long, env = "TOOLPLAN_COST_MIN", default_value_t = 1)]
    cost_min: u32,
    #[arg(long, env = "TOOLPLAN_COST_MAX", default_value_t = 10)]
    cost_max: u32,
    /// Total budget B per episode (decimal).
    #[arg(long, env = "TOOLPLAN_BUDGET", default_value = "22")]
    budget: String,
    /// Fixed overhead per episode (decimal).
    #[arg(long, env = "TOOLPLAN_OVERHEAD", default_value = "2")]
    overhead: String,
    #[arg(long, env = "TOOLPLAN_TAU", default_value_t = 0.15)]
    tau: f64,
    #[arg(long, env = "TOOLPLAN_EXPERIENCE_SIZE", default_value_t = 400)]
    experience_size: usize,
}

#[derive(Args)]
struct PlanArgs {
    /// Scenario bundle (directory or scenario.json path).
    #[arg(long, env = "TOOLPLAN_SCENARIO")]
    scenario: PathBuf,
    #[arg(long, env = "TOOLPLAN_QUERY_ID")]
    query_id: String,
    /// Quantization accuracy (decimal).
    #[arg(long, env = "TOOLPLAN_EPSILON", default_value = "0.5")]
    epsilon: String,
    /// Step bound used by quantization and the executor.
    #[arg(long, env = "TOOLPLAN_MAX_STEPS", default_value_t = 12)]
    max_steps: u32,
    /// Extra overhead charged for planning itself (decimal).
    #[arg(long, env = "TOOLPLAN_PLANNING_OVERHEAD", default_value = "0")]
    planning_overhead: String,
    /// Threshold override; defaults to the scenario's tau.
    #[arg(long, env = "TOOLPLAN_TAU_OVERRIDE")]
    tau: Option<f64>,
    /// `jaccard` or `lookup:<file.json>`.
    #[arg(long, env = "TOOLPLAN_SIMILARITY", default_value = "jaccard")]
    similarity: String,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, env = "TOOLPLAN_SCENARIO")]
    scenario: PathBuf,
    /// greedy | round_robin | random | stubborn
    #[arg(long, env = "TOOLPLAN_POLICY")]
    policy: String,
    /// Enforce plans and the blacklist (default).
    #[arg(long, conflicts_with = "unplanned")]
    planned: bool,
    /// Baseline arm: no plan, no blacklist.
    #[arg(long)]
    unplanned: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Transcript JSONL written by `run`.
    #[arg(long, env = "TOOLPLAN_TRANSCRIPTS")]
    transcripts: PathBuf,
    /// Budget B to judge episodes against; defaults to the batch's.
    #[arg(long, env = "TOOLPLAN_EVAL_BUDGET")]
    budget: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, env = "TOOLPLAN_SCENARIO")]
    scenario: PathBuf,
    /// budget | tau
    #[arg(long, env = "TOOLPLAN_AXIS")]
    axis: String,
    /// Comma-separated ascending values (R for budget, decimals for tau).
    #[arg(long, env = "TOOLPLAN_VALUES")]
    values: String,
    #[arg(long, env = "TOOLPLAN_POLICY", default_value = "greedy")]
    policy: String,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, env = "TOOLPLAN_SCENARIO")]
    scenario: PathBuf,
    #[arg(long, env = "TOOLPLAN_POLICY", default_value = "greedy")]
    policy: String,
    /// Capacity R override (decimal); defaults to the scenario's.
    #[arg(long, env = "TOOLPLAN_BUDGET_R")]
    budget_r: Option<String>,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 4,
            Error::BudgetExhausted { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = dispatch(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(&cli, args),
        Command::Plan(args) => cmd_plan(&cli, args),
        Command::Run(args) => cmd_run(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Compare(args) => cmd_compare(&cli, args),
    }
}

fn required_out(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| config_error("--out is required"))
}

fn parse_decimal(raw: &str, what: &str) -> Result<Rat, Failure> {
    parse_rat(raw).map_err(|_| config_error(format!("invalid {what}: {raw:?}")))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Ok(Scenario::load(path)?)
}

fn parse_policy(raw: &str) -> Result<PolicyKind, Failure> {
    Ok(PolicyKind::from_str(raw)?)
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let config = ScenarioConfig {
        seed: cli.seed.unwrap_or(0),
        n_queries: args.queries,
        n_tools_per_query: args.tools_per_query,
        cost_min: args.cost_min,
        cost_max: args.cost_max,
        budget: parse_decimal(&args.budget, "budget")?,
        overhead: parse_decimal(&args.overhead, "overhead")?,
        tau: args.tau,
        experience_size: args.experience_size,
    };
    let scenario = generate_scenario(&config)?;
    scenario.save(out)?;
    println!(
        "scenario written to {} ({} tools, {} queries, {} experience records)",
        out.display(),
        scenario.catalog.len(),
        scenario.queries.len(),
        scenario.experience.len(),
    );
    println!(
        "fingerprint: {}",
        serde_json::to_string(&config).map_err(Error::from)?
    );
    Ok(())
}

fn cmd_plan(cli: &Cli, args: &PlanArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let scenario = load_scenario(&args.scenario)?;
    let query_id = QueryId::new(args.query_id.clone());
    let query = scenario
        .query(&query_id)
        .ok_or_else(|| config_error(format!("query {query_id} not in scenario")))?
        .clone();
    let tools = scenario.tools_for(&query_id);
    if tools.is_empty() {
        return Err(config_error(format!("query {query_id} has no candidates")));
    }

    let similarity: Box<dyn Similarity> = match args.similarity.as_str() {
        "jaccard" => Box::new(TokenJaccard),
        other => match other.strip_prefix("lookup:") {
            Some(path) => Box::new(LookupSimilarity::read_json(Path::new(path))?),
            None => {
                return Err(config_error(format!(
                    "unknown similarity {other:?} (expected jaccard or lookup:<file>)"
                )))
            }
        },
    };
    let estimator_cfg = EstimatorConfig {
        tau: args.tau.unwrap_or(scenario.config.tau),
        ..Default::default()
    };
    let estimates = estimate_all(
        &query,
        &tools,
        &scenario.experience,
        similarity.as_ref(),
        &estimator_cfg,
    )?;

    let ledger = BudgetLedger::new(
        scenario.config.budget.clone(),
        scenario.config.overhead.clone(),
    )?;
    let planner_cfg = PlannerConfig {
        quantization: QuantizationConfig {
            epsilon: parse_decimal(&args.epsilon, "epsilon")?,
            max_steps: args.max_steps,
        },
        planning_overhead: parse_decimal(&args.planning_overhead, "planning overhead")?,
    };
    let result = make_plan(&tools, &estimates, &ledger, &planner_cfg)?;
    let record = result.to_record(&query_id);
    record.write_json(out)?;

    println!("plan for {} (query: {:?})", query_id, query.text);
    println!("{:<12} {:>6} {:>8} {:>8} {:>4}", "tool", "cost", "v", "F~", "f");
    for (tool, estimate) in tools.iter().zip(&estimates) {
        println!(
            "{:<12} {:>6} {:>8.4} {:>8.3} {:>4}",
            tool.id.to_string(),
            format_rat(&tool.cost.total()),
            estimate.expected_value,
            estimate.freq_constraint,
            result.plan.frequency(&tool.id),
        );
    }
    println!(
        "planned cost: {} cost units ({} quantized at lambda = {}); total value {:.4}",
        format_rat(&result.planned_cost_units()),
        result.plan.planned_cost,
        format_rat(&result.quantization.lambda),
        rat_to_f64(&result.plan.total_value),
    );
    if result.plan.is_empty() {
        eprintln!("warning: empty plan (every candidate fell below the threshold)");
    }
    println!("plan written to {}", out.display());
    Ok(())
}

/// Count completed episodes in an existing transcript file and verify it
/// belongs to the same run.
fn resume_point(path: &Path, meta: &BatchMeta) -> Result<usize, Failure> {
    if !path.exists() {
        return Ok(0);
    }
    let (existing_meta, episodes) = read_transcripts(path)?;
    if existing_meta != *meta {
        return Err(config_error(format!(
            "{} belongs to a different run configuration; refusing to resume",
            path.display()
        )));
    }
    Ok(episodes.len())
}

fn append_lines(path: &Path, lines: &[BatchLine]) -> Result<(), Failure> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(Error::from)?;
    for line in lines {
        let raw = serde_json::to_string(line).map_err(Error::from)?;
        writeln!(file, "{raw}").map_err(Error::from)?;
    }
    Ok(())
}

fn run_indices(
    scenario: &Scenario,
    opts: &RunOptions,
    indices: &[usize],
    workers: usize,
) -> Result<Vec<TranscriptRecord>, Failure> {
    if workers <= 1 {
        return indices
            .iter()
            .map(|&i| run_query(scenario, i, opts).map_err(Failure::from))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| config_error(format!("worker pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        indices
            .par_iter()
            .map(|&i| run_query(scenario, i, opts).map_err(Failure::from))
            .collect()
    })
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let scenario = load_scenario(&args.scenario)?;
    let opts = RunOptions::new(
        parse_policy(&args.policy)?,
        !args.unplanned,
        cli.seed.unwrap_or(scenario.config.seed),
    );
    let meta = BatchMeta {
        fingerprint: RunFingerprint::new(&scenario.config, &opts),
        budget: opts.budget(&scenario.config),
    };

    let done = resume_point(out, &meta)?;
    let total = scenario.queries.len();
    if done == 0 {
        write_transcripts(&meta, &[], out)?;
    } else if done >= total {
        println!("{} already complete ({total} episodes)", out.display());
        return Ok(());
    } else {
        println!("resuming after {done} completed episodes");
    }

    let cursor_path = out.with_extension("jsonl.cursor");
    let chunk_size = cli.workers.max(1) * 4;
    let mut completed = done;
    let pending: Vec<usize> = (done..total).collect();
    for chunk in pending.chunks(chunk_size) {
        let records = run_indices(&scenario, &opts, chunk, cli.workers)?;
        let lines: Vec<BatchLine> = records.into_iter().map(BatchLine::Episode).collect();
        append_lines(out, &lines)?;
        completed += lines.len();
        std::fs::write(&cursor_path, format!("{completed}\n")).map_err(Error::from)?;
    }
    println!(
        "{} episodes written to {} (policy {}, {})",
        completed,
        out.display(),
        opts.policy.name(),
        if opts.planned { "planned" } else { "unplanned" },
    );
    Ok(())
}

/// Write the JSON + CSV twin outputs for a single-batch report.
fn write_report(prefix: &Path, report: &Report, axis_value: &Rat) -> Result<(), Failure> {
    let json_path = prefix.with_extension("json");
    let mut raw = serde_json::to_string_pretty(report).map_err(Error::from)?;
    raw.push('\n');
    std::fs::write(&json_path, raw).map_err(Error::from)?;
    let rows = vec![SweepRow {
        axis_value: axis_value.clone(),
        metrics: report.metrics.clone(),
    }];
    write_csv(&rows, &prefix.with_extension("csv"))?;
    println!(
        "report written to {} and {}",
        json_path.display(),
        prefix.with_extension("csv").display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let (meta, records) = read_transcripts(&args.transcripts)?;
    let budget = match &args.budget {
        Some(raw) => parse_decimal(raw, "budget")?,
        None => meta.budget.clone(),
    };
    let metrics = compute_metrics(&records, &budget)?;
    let report = Report {
        fingerprint: meta.fingerprint.clone(),
        rfbc_definition: RFBC_DEFINITION.to_string(),
        metrics,
    };
    println!(
        "n {}  PBC {:.1}  AC {}  PR {:.1}  RFBC {:.1}",
        report.metrics.n_episodes,
        report.metrics.pbc,
        format_rat_approx(&report.metrics.ac, 2),
        report.metrics.pr,
        report.metrics.rfbc,
    );
    write_report(out, &report, &budget)
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let scenario = load_scenario(&args.scenario)?;
    let axis = SweepAxis::from_str(&args.axis)?;
    let values: Vec<Rat> = args
        .values
        .split(',')
        .map(|v| parse_decimal(v.trim(), "sweep value"))
        .collect::<Result<_, _>>()?;
    let opts = RunOptions::new(
        parse_policy(&args.policy)?,
        true,
        cli.seed.unwrap_or(scenario.config.seed),
    );
    let table = sweep(&scenario, axis, &values, &opts)?;

    let json_path = out.with_extension("json");
    let mut raw = serde_json::to_string_pretty(&table).map_err(Error::from)?;
    raw.push('\n');
    std::fs::write(&json_path, raw).map_err(Error::from)?;
    write_csv(&table.rows, &out.with_extension("csv"))?;
    for row in &table.rows {
        println!(
            "{} = {:<8} PBC {:.1}  AC {}  planned-cost {}",
            args.axis,
            format_rat(&row.axis_value),
            row.metrics.pbc,
            format_rat_approx(&row.metrics.ac, 2),
            row.metrics
                .avg_planned_cost
                .as_ref()
                .map(|r| format_rat_approx(r, 2))
                .unwrap_or_default(),
        );
    }
    println!(
        "sweep written to {} and {}",
        json_path.display(),
        out.with_extension("csv").display()
    );
    Ok(())
}

fn cmd_compare(cli: &Cli, args: &CompareArgs) -> Result<(), Failure> {
    let out = required_out(cli)?;
    let scenario = load_scenario(&args.scenario)?;
    let mut opts = RunOptions::new(
        parse_policy(&args.policy)?,
        true,
        cli.seed.unwrap_or(scenario.config.seed),
    );
    if let Some(raw) = &args.budget_r {
        opts.budget_override = Some(parse_decimal(raw, "budget R")?);
    }
    let report = compare(&scenario, &opts)?;

    let json_path = out.with_extension("json");
    let mut raw = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    raw.push('\n');
    std::fs::write(&json_path, raw).map_err(Error::from)?;

    let capacity = &opts.budget(&scenario.config) - &scenario.config.overhead;
    let planned_rows = vec![SweepRow {
        axis_value: capacity.clone(),
        metrics: report.planned.metrics.clone(),
    }];
    let unplanned_rows = vec![SweepRow {
        axis_value: capacity.clone(),
        metrics: report.unplanned.metrics.clone(),
    }];
    let planned_csv = suffixed(out, "_planned.csv");
    let unplanned_csv = suffixed(out, "_unplanned.csv");
    write_csv(&planned_rows, &planned_csv)?;
    write_csv(&unplanned_rows, &unplanned_csv)?;

    println!(
        "planned   PBC {:.1}  AC {}  RFBC {:.1}",
        report.planned.metrics.pbc,
        format_rat_approx(&report.planned.metrics.ac, 2),
        report.planned.metrics.rfbc,
    );
    println!(
        "unplanned PBC {:.1}  AC {}  RFBC {:.1}",
        report.unplanned.metrics.pbc,
        format_rat_approx(&report.unplanned.metrics.ac, 2),
        report.unplanned.metrics.rfbc,
    );
    println!(
        "delta     PBC {:+.1}  AC {}",
        report.pbc_delta,
        format_rat_approx(&report.ac_delta, 2),
    );
    println!("comparison written to {}", json_path.display());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}
