//! Metrics over episode batches and comparative experiments.
//!
//! Four metrics, all over the full batch: PBC (share resolved within
//! budget), AC (mean total cost), PR (share resolved, budget ignored),
//! and RFBC (share resolved but over budget, i.e. successes the budget
//! constraint voids). Reports carry the scenario fingerprint so every
//! number is reproducible from the report alone.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{estimate_all, EstimatorConfig, TokenJaccard};
use crate::executor::{run_episode, EpisodeTranscript, ExecutorConfig, PlanMode};
use crate::planner::{make_plan, PlanRecord, PlannerConfig, QuantizationConfig};
use crate::rat::{format_rat_approx, rat_to_f64, rat_uint, serde_rat, serde_rat_opt, Rat};
use crate::simenv::{derive_seed, make_policy, PolicyKind, Scenario, ScenarioConfig};
use crate::types::BudgetLedger;
use crate::Result;

/// How RFBC is operationalized against simulated ground truth.
pub const RFBC_DEFINITION: &str =
    "share of episodes that resolved the query but exceeded the budget; \
     denominator is all episodes";

/// Schema marker heading every CSV report.
pub const CSV_SCHEMA: &str = "# schema: toolplan-report-v1";
const CSV_HEADER: &str = "axis_value,pbc,ac,pr,rfbc,avg_invocations,avg_planned_cost,n";

/// One episode plus the plan it ran under (absent for unplanned runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    #[serde(flatten)]
    pub episode: EpisodeTranscript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanRecord>,
}

/// Batch metrics. Percentages are in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pass rate under the budget constraint.
    pub pbc: f64,
    /// Average total cost per episode, exact.
    #[serde(with = "serde_rat")]
    pub ac: Rat,
    /// Pass rate ignoring the budget.
    pub pr: f64,
    /// Rate of failure due to the budget constraint.
    pub rfbc: f64,
    pub n_episodes: usize,
    pub avg_invocations: f64,
    /// Mean planned cost in cost units, over episodes that had a plan.
    #[serde(with = "serde_rat_opt")]
    pub avg_planned_cost: Option<Rat>,
}

/// Compute the four metrics over a batch, judging the budget with `budget`.
pub fn compute_metrics(records: &[TranscriptRecord], budget: &Rat) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = records.len();
    let mut resolved = 0usize;
    let mut resolved_within = 0usize;
    let mut resolved_over = 0usize;
    let mut cost_sum = Rat::from_integer(0.into());
    let mut invocations = 0u64;
    let mut plan_cost_sum = Rat::from_integer(0.into());
    let mut plan_count = 0usize;
    for r in records {
        let within = r.episode.total_cost <= *budget;
        if r.episode.resolved {
            resolved += 1;
            if within {
                resolved_within += 1;
            } else {
                resolved_over += 1;
            }
        }
        cost_sum += &r.episode.total_cost;
        invocations += u64::from(r.episode.invocation_count);
        if let Some(plan) = &r.plan {
            plan_cost_sum += plan.planned_cost_units();
            plan_count += 1;
        }
    }
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    let report = MetricsReport {
        pbc: pct(resolved_within),
        ac: cost_sum / rat_uint(n as u64),
        pr: pct(resolved),
        rfbc: pct(resolved_over),
        n_episodes: n,
        avg_invocations: invocations as f64 / n as f64,
        avg_planned_cost: (plan_count > 0)
            .then(|| plan_cost_sum / rat_uint(plan_count as u64)),
    };
    debug_assert!(report.pbc <= report.pr);
    Ok(report)
}

/// Knobs for one batch run over a scenario.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub policy: PolicyKind,
    /// Enforce plans and the blacklist; false is the baseline arm.
    pub planned: bool,
    /// Override the planning capacity R (budget becomes overhead + R).
    pub budget_override: Option<Rat>,
    /// Override the value threshold.
    pub tau_override: Option<f64>,
    /// Base seed for per-episode policy randomness; shared across arms.
    pub seed: u64,
    pub quantization: QuantizationConfig,
}

impl RunOptions {
    pub fn new(policy: PolicyKind, planned: bool, seed: u64) -> Self {
        RunOptions {
            policy,
            planned,
            budget_override: None,
            tau_override: None,
            seed,
            quantization: QuantizationConfig::default(),
        }
    }

    /// Effective total budget for episodes under these options.
    pub fn budget(&self, config: &ScenarioConfig) -> Rat {
        match &self.budget_override {
            Some(r) => &config.overhead + r,
            None => config.budget.clone(),
        }
    }

    fn tau(&self, config: &ScenarioConfig) -> f64 {
        self.tau_override.unwrap_or(config.tau)
    }
}

/// Run one query's episode under the options.
pub fn run_query(
    scenario: &Scenario,
    query_index: usize,
    opts: &RunOptions,
) -> Result<TranscriptRecord> {
    let query = scenario.queries.get(query_index).ok_or_else(|| {
        Error::invalid_input(format!("query index {query_index} out of range"))
    })?;
    let tools = scenario.tools_for(&query.id);
    if tools.is_empty() {
        return Err(Error::invalid_input(format!(
            "query {} has no candidate tools",
            query.id
        )));
    }
    let estimator_cfg = EstimatorConfig {
        tau: opts.tau(&scenario.config),
        ..Default::default()
    };
    let estimates = estimate_all(
        query,
        &tools,
        &scenario.experience,
        &TokenJaccard,
        &estimator_cfg,
    )?;
    let budget = opts.budget(&scenario.config);
    let ledger = BudgetLedger::new(budget, scenario.config.overhead.clone())?;

    let plan_result = if opts.planned {
        Some(make_plan(
            &tools,
            &estimates,
            &ledger,
            &PlannerConfig {
                quantization: opts.quantization.clone(),
                planning_overhead: Rat::from_integer(0.into()),
            },
        )?)
    } else {
        None
    };

    // Same per-episode seed in both arms, so comparisons are paired.
    let episode_seed = derive_seed(opts.seed, &["episode", query.id.as_str()]);
    let mut policy = make_policy(
        opts.policy,
        &estimates,
        scenario.requirements(&query.id),
        episode_seed,
    );
    let mut env = scenario.environment(&query.id);
    let exec_cfg = ExecutorConfig {
        step_cap: opts.quantization.max_steps,
        interception_penalty: Rat::from_integer(0.into()),
        blacklist_enabled: opts.planned,
    };
    let scorer = crate::experience::HeuristicScorer::default();
    let mode = match &plan_result {
        Some(p) => PlanMode::Planned(&p.plan),
        None => PlanMode::Unplanned,
    };
    let episode = run_episode(
        query, mode, &tools, &mut policy, &mut env, &scorer, scenario, ledger, &exec_cfg,
    );
    Ok(TranscriptRecord {
        episode,
        plan: plan_result.map(|p| p.to_record(&query.id)),
    })
}

/// Run every query in the scenario, in order.
pub fn run_batch(scenario: &Scenario, opts: &RunOptions) -> Result<Vec<TranscriptRecord>> {
    (0..scenario.queries.len())
        .map(|i| run_query(scenario, i, opts))
        .collect()
}

/// Reproducibility fingerprint embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFingerprint {
    pub scenario: ScenarioConfig,
    pub policy: PolicyKind,
    pub planned: bool,
    #[serde(default, with = "serde_rat_opt", skip_serializing_if = "Option::is_none")]
    pub budget_override: Option<Rat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_override: Option<f64>,
    pub seed: u64,
}

impl RunFingerprint {
    pub fn new(config: &ScenarioConfig, opts: &RunOptions) -> Self {
        RunFingerprint {
            scenario: config.clone(),
            policy: opts.policy,
            planned: opts.planned,
            budget_override: opts.budget_override.clone(),
            tau_override: opts.tau_override,
            seed: opts.seed,
        }
    }
}

/// A single-batch report with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub fingerprint: RunFingerprint,
    pub rfbc_definition: String,
    pub metrics: MetricsReport,
}

/// Evaluate one batch run end to end.
pub fn evaluate(scenario: &Scenario, opts: &RunOptions) -> Result<(Report, Vec<TranscriptRecord>)> {
    let records = run_batch(scenario, opts)?;
    let metrics = compute_metrics(&records, &opts.budget(&scenario.config))?;
    Ok((
        Report {
            fingerprint: RunFingerprint::new(&scenario.config, opts),
            rfbc_definition: RFBC_DEFINITION.to_string(),
            metrics,
        },
        records,
    ))
}

/// Paired planned-vs-unplanned comparison on identical episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub planned: Report,
    pub unplanned: Report,
    /// planned minus unplanned, percentage points.
    pub pbc_delta: f64,
    pub pr_delta: f64,
    pub rfbc_delta: f64,
    /// planned minus unplanned average cost.
    #[serde(with = "serde_rat")]
    pub ac_delta: Rat,
}

/// Run both arms with the same per-episode seeds and report the deltas.
pub fn compare(scenario: &Scenario, opts: &RunOptions) -> Result<ComparisonReport> {
    let planned_opts = RunOptions {
        planned: true,
        ..opts.clone()
    };
    let unplanned_opts = RunOptions {
        planned: false,
        ..opts.clone()
    };
    let (planned, _) = evaluate(scenario, &planned_opts)?;
    let (unplanned, _) = evaluate(scenario, &unplanned_opts)?;
    Ok(ComparisonReport {
        pbc_delta: planned.metrics.pbc - unplanned.metrics.pbc,
        pr_delta: planned.metrics.pr - unplanned.metrics.pr,
        rfbc_delta: planned.metrics.rfbc - unplanned.metrics.rfbc,
        ac_delta: &planned.metrics.ac - &unplanned.metrics.ac,
        planned,
        unplanned,
    })
}

/// Axis of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Planning capacity R.
    Budget,
    /// Value threshold.
    Tau,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "budget" | "r" => Ok(SweepAxis::Budget),
            "tau" | "threshold" => Ok(SweepAxis::Tau),
            other => Err(Error::invalid_input(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// One sweep row: the axis value and the planned-batch metrics at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(with = "serde_rat")]
    pub axis_value: Rat,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub fingerprint: RunFingerprint,
    pub rfbc_definition: String,
    pub rows: Vec<SweepRow>,
}

/// One full planned batch per axis value, same seeds throughout.
pub fn sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[Rat],
    opts: &RunOptions,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::invalid_input("sweep needs at least one value"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_input("sweep values must be strictly ascending"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut point = opts.clone();
        point.planned = true;
        match axis {
            SweepAxis::Budget => point.budget_override = Some(value.clone()),
            SweepAxis::Tau => point.tau_override = Some(rat_to_f64(value)),
        }
        let records = run_batch(scenario, &point)?;
        let metrics = compute_metrics(&records, &point.budget(&scenario.config))?;
        rows.push(SweepRow {
            axis_value: value.clone(),
            metrics,
        });
    }
    Ok(SweepReport {
        axis,
        fingerprint: RunFingerprint::new(&scenario.config, opts),
        rfbc_definition: RFBC_DEFINITION.to_string(),
        rows,
    })
}

/// Write rows as CSV with the fixed, versioned schema.
pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "{CSV_SCHEMA}")?;
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let m = &row.metrics;
        writeln!(
            out,
            "{},{:.4},{},{:.4},{:.4},{:.4},{},{}",
            format_rat_approx(&row.axis_value, 4),
            m.pbc,
            format_rat_approx(&m.ac, 4),
            m.pr,
            m.rfbc,
            m.avg_invocations,
            m.avg_planned_cost
                .as_ref()
                .map(|r| format_rat_approx(r, 4))
                .unwrap_or_default(),
            m.n_episodes,
        )?;
    }
    Ok(())
}

/// JSONL line of a transcript batch: a metadata header, then episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchLine {
    Meta(BatchMeta),
    Episode(TranscriptRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub fingerprint: RunFingerprint,
    #[serde(with = "serde_rat")]
    pub budget: Rat,
}

/// Write a batch as JSONL: one meta line, then one line per episode.
pub fn write_transcripts(
    meta: &BatchMeta,
    records: &[TranscriptRecord],
    path: &Path,
) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "{}", serde_json::to_string(&BatchLine::Meta(meta.clone()))?)?;
    for r in records {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&BatchLine::Episode(r.clone()))?
        )?;
    }
    Ok(())
}

/// Read a transcript batch written by [`write_transcripts`].
pub fn read_transcripts(path: &Path) -> Result<(BatchMeta, Vec<TranscriptRecord>)> {
    let raw = std::fs::read_to_string(path)?;
    let mut meta = None;
    let mut records = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: BatchLine = serde_json::from_str(line).map_err(|e| {
            Error::invalid_record(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        match parsed {
            BatchLine::Meta(m) => meta = Some(m),
            BatchLine::Episode(r) => records.push(r),
        }
    }
    let meta = meta.ok_or_else(|| {
        Error::invalid_record(format!("{}: missing meta line", path.display()))
    })?;
    Ok((meta, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::{parse_rat, rat_int};
    use crate::simenv::{generate_scenario, ScenarioConfig};
    use crate::types::QueryId;

    fn record(cost: i64, resolved: bool, within: bool) -> TranscriptRecord {
        TranscriptRecord {
            episode: EpisodeTranscript {
                query_id: QueryId::new("q"),
                steps: Vec::new(),
                final_answer: String::new(),
                resolved,
                total_cost: rat_int(cost),
                within_budget: within,
                invocation_count: 1,
            },
            plan: None,
        }
    }

    #[test]
    fn definitional_two_episode_example() {
        // costs (10, 25), both resolved, B=20
        let records = vec![record(10, true, true), record(25, true, false)];
        let m = compute_metrics(&records, &rat_int(20)).unwrap();
        assert_eq!(m.pbc, 50.0);
        assert_eq!(m.ac, parse_rat("17.5").unwrap());
        assert_eq!(m.pr, 100.0);
        assert_eq!(m.rfbc, 50.0);
    }

    #[test]
    fn nothing_resolved_still_averages_cost() {
        let records = vec![record(4, false, true), record(6, false, true)];
        let m = compute_metrics(&records, &rat_int(20)).unwrap();
        assert_eq!(m.pbc, 0.0);
        assert_eq!(m.pr, 0.0);
        assert_eq!(m.rfbc, 0.0);
        assert_eq!(m.ac, rat_int(5));
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            compute_metrics(&[], &rat_int(20)),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn planned_batch_has_zero_rfbc() {
        let cfg = ScenarioConfig {
            n_queries: 12,
            experience_size: 80,
            seed: 3,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Greedy, true, cfg.seed);
        let (report, records) = evaluate(&scenario, &opts).unwrap();
        assert_eq!(report.metrics.rfbc, 0.0);
        for r in &records {
            assert!(r.episode.within_budget);
            assert!(r.plan.is_some());
        }
        assert!(report.metrics.pbc <= report.metrics.pr);
    }

    #[test]
    fn compare_pairs_the_arms() {
        let cfg = ScenarioConfig {
            n_queries: 10,
            experience_size: 80,
            seed: 5,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Greedy, true, cfg.seed);
        let cmp = compare(&scenario, &opts).unwrap();
        assert_eq!(cmp.planned.metrics.rfbc, 0.0);
        assert_eq!(
            cmp.pbc_delta,
            cmp.planned.metrics.pbc - cmp.unplanned.metrics.pbc
        );
    }

    #[test]
    fn single_value_sweep_equals_plain_batch() {
        let cfg = ScenarioConfig {
            n_queries: 8,
            experience_size: 80,
            seed: 11,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Greedy, true, cfg.seed);
        let table = sweep(&scenario, SweepAxis::Budget, &[rat_int(20)], &opts).unwrap();
        assert_eq!(table.rows.len(), 1);
        let mut plain = opts.clone();
        plain.budget_override = Some(rat_int(20));
        let records = run_batch(&scenario, &plain).unwrap();
        let metrics = compute_metrics(&records, &plain.budget(&scenario.config)).unwrap();
        assert_eq!(table.rows[0].metrics, metrics);
    }

    #[test]
    fn sweep_columns_follow_the_expected_shapes() {
        // Pinned scenario; directions verified once and frozen.
        let cfg = ScenarioConfig {
            seed: 7,
            n_queries: 12,
            experience_size: 150,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Greedy, true, cfg.seed);

        let budgets: Vec<Rat> = [5, 10, 20, 40].iter().map(|&r| rat_int(r)).collect();
        let by_budget = sweep(&scenario, SweepAxis::Budget, &budgets, &opts).unwrap();
        for pair in by_budget.rows.windows(2) {
            assert!(pair[0].metrics.pbc <= pair[1].metrics.pbc, "PBC dipped");
            assert!(
                pair[0].metrics.avg_planned_cost <= pair[1].metrics.avg_planned_cost,
                "planned cost dipped as budget grew"
            );
        }

        let taus: Vec<Rat> = ["0.05", "0.15", "0.3", "0.45"]
            .iter()
            .map(|t| parse_rat(t).unwrap())
            .collect();
        let by_tau = sweep(&scenario, SweepAxis::Tau, &taus, &opts).unwrap();
        for pair in by_tau.rows.windows(2) {
            assert!(
                pair[0].metrics.avg_planned_cost >= pair[1].metrics.avg_planned_cost,
                "planned cost rose as the threshold tightened"
            );
        }
    }

    #[test]
    fn sweep_rejects_unsorted_values() {
        let cfg = ScenarioConfig {
            n_queries: 2,
            experience_size: 40,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Greedy, true, 0);
        assert!(sweep(
            &scenario,
            SweepAxis::Budget,
            &[rat_int(10), rat_int(5)],
            &opts
        )
        .is_err());
    }

    #[test]
    fn stubborn_unplanned_exhausts_cap_on_costly_tool() {
        // The unplanned arm keeps invoking its fixation until the step
        // cap; the planned arm caps it at the planned frequency, so its
        // average cost is strictly lower.
        let cfg = ScenarioConfig {
            n_queries: 6,
            experience_size: 80,
            seed: 9,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::Stubborn, true, cfg.seed);
        let cmp = compare(&scenario, &opts).unwrap();
        assert!(
            cmp.planned.metrics.ac < cmp.unplanned.metrics.ac,
            "planned {} vs unplanned {}",
            cmp.planned.metrics.ac,
            cmp.unplanned.metrics.ac
        );
        assert_eq!(cmp.planned.metrics.rfbc, 0.0);
    }

    #[test]
    fn transcripts_round_trip() {
        let cfg = ScenarioConfig {
            n_queries: 4,
            experience_size: 60,
            seed: 2,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let opts = RunOptions::new(PolicyKind::RoundRobin, true, cfg.seed);
        let (report, records) = evaluate(&scenario, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcripts.jsonl");
        let meta = BatchMeta {
            fingerprint: report.fingerprint.clone(),
            budget: opts.budget(&scenario.config),
        };
        write_transcripts(&meta, &records, &path).unwrap();
        let (meta_back, records_back) = read_transcripts(&path).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(records_back, records);
    }

    #[test]
    fn csv_has_schema_and_rows() {
        let rows = vec![SweepRow {
            axis_value: rat_int(20),
            metrics: MetricsReport {
                pbc: 50.0,
                ac: parse_rat("17.5").unwrap(),
                pr: 100.0,
                rfbc: 50.0,
                n_episodes: 2,
                avg_invocations: 1.0,
                avg_planned_cost: None,
            },
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_csv(&rows, &path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = raw.lines().collect();
        assert_eq!(lines[0], CSV_SCHEMA);
        assert_eq!(lines[1], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("20.0000,50.0000,17.5000,"));
    }
}
