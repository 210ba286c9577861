//! Episode execution under a plan: frequency enforcement, blacklisting,
//! and exact budget accounting.
//!
//! The loop mirrors the planned tool-learning process: tools planned with
//! frequency zero are removed up front; each invocation debits the ledger
//! and decrements the tool's remaining frequency, removing it at zero; a
//! result judged unhelpful sends the tool to the episode blacklist. When
//! the policy picks a forbidden tool the call is intercepted: nothing is
//! invoked or debited, and the policy sees an error message instead. A
//! hard step cap (interceptions included) guarantees termination against
//! policies that never stop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::experience::{UsageView, UsefulnessScorer};
use crate::planner::Plan;
use crate::rat::{serde_rat, Rat};
use crate::types::{BudgetLedger, Query, QueryId, ToolCost, ToolId, ToolSpec};

/// Why a tool may not be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForbidReason {
    /// Planned frequency used up (or the tool was never planned).
    Exhausted,
    /// The tool returned an unhelpful result earlier in the episode.
    Blacklisted,
}

impl ForbidReason {
    fn as_str(self) -> &'static str {
        match self {
            ForbidReason::Exhausted => "exhausted",
            ForbidReason::Blacklisted => "blacklisted",
        }
    }
}

/// One tool result observed during an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tool_id: ToolId,
    pub params: String,
    pub result: String,
}

/// What a policy may do at each step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyDecision {
    /// The collected results are sufficient; summarize and finish.
    Stop,
    Call { tool_id: ToolId, params: String },
}

/// An available tool as shown to the policy.
#[derive(Debug, Clone, Copy)]
pub struct ToolView<'a> {
    pub spec: &'a ToolSpec,
    /// Remaining allowed invocations; `None` when running unplanned.
    pub remaining: Option<u32>,
}

/// Everything a policy sees when choosing the next action.
#[derive(Debug)]
pub struct PolicyContext<'a> {
    pub query: &'a Query,
    /// Usable tools with documentation, ascending by tool id.
    pub available: &'a [ToolView<'a>],
    /// Tools that may not be used, with the reason.
    pub forbidden: &'a BTreeMap<ToolId, ForbidReason>,
    pub observations: &'a [Observation],
    /// Error message from an intercepted call in the previous step.
    pub last_error: Option<&'a str>,
}

/// Decision interface of the simulated agent.
pub trait AgentPolicy {
    fn use_tool(&mut self, ctx: &PolicyContext<'_>) -> PolicyDecision;
    fn summarize(&mut self, query: &Query, observations: &[Observation]) -> String;
}

/// Invokes tools and returns their raw results.
pub trait ToolEnvironment {
    fn invoke(&mut self, tool_id: &ToolId, params: &str) -> String;
}

/// Decides whether the collected observations resolve the query.
pub trait ResolutionJudge {
    fn is_resolved(&self, query_id: &QueryId, observations: &[Observation]) -> bool;
}

/// Whether the episode enforces a plan.
#[derive(Debug, Clone, Copy)]
pub enum PlanMode<'a> {
    /// Enforce per-tool frequencies from the plan.
    Planned(&'a Plan),
    /// No frequency limits (baseline arm).
    Unplanned,
}

/// Executor knobs.
#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    /// Hard cap on steps, interceptions included.
    pub step_cap: u32,
    /// Cost charged for an intercepted call. Zero keeps interceptions
    /// free and the budget-safety argument exact.
    pub interception_penalty: Rat,
    /// Whether unhelpful results blacklist their tool.
    pub blacklist_enabled: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            step_cap: 12,
            interception_penalty: Rat::from_integer(0.into()),
            blacklist_enabled: true,
        }
    }
}

/// One step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tool_id: ToolId,
    pub params: String,
    /// Set when the call was intercepted instead of invoked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercepted: Option<ForbidReason>,
    /// Tool output, or the error message for an intercepted call.
    pub result: String,
    #[serde(with = "serde_rat")]
    pub cost_debited: Rat,
    /// Whether this step's result sent the tool to the blacklist.
    pub blacklisted: bool,
}

/// Complete record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub query_id: QueryId,
    pub steps: Vec<StepRecord>,
    pub final_answer: String,
    pub resolved: bool,
    #[serde(with = "serde_rat")]
    pub total_cost: Rat,
    pub within_budget: bool,
    /// Number of non-intercepted tool calls.
    pub invocation_count: u32,
}

impl EpisodeTranscript {
    pub fn interception_count(&self) -> usize {
        self.steps.iter().filter(|s| s.intercepted.is_some()).count()
    }
}

/// Blacklist decision for one result: unhelpful means banned.
pub fn should_blacklist(scorer: &dyn UsefulnessScorer, usage: &UsageView<'_>) -> bool {
    scorer.score(usage) == Some(0)
}

fn forbidden_message(tool_id: &ToolId, reason: ForbidReason) -> String {
    format!(
        "error: tool '{}' is forbidden ({}) and was not invoked",
        tool_id,
        reason.as_str()
    )
}

/// Run one episode under the plan.
///
/// The ledger must be fresh (nothing consumed); every failure mode is
/// recorded in the transcript rather than returned as an error.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    query: &Query,
    mode: PlanMode<'_>,
    tools: &[ToolSpec],
    policy: &mut dyn AgentPolicy,
    env: &mut dyn ToolEnvironment,
    scorer: &dyn UsefulnessScorer,
    judge: &dyn ResolutionJudge,
    ledger: BudgetLedger,
    cfg: &ExecutorConfig,
) -> EpisodeTranscript {
    debug_assert!(ledger.consumed() == &Rat::from_integer(0.into()));
    let specs: BTreeMap<&ToolId, &ToolSpec> = tools.iter().map(|t| (&t.id, t)).collect();

    // Remaining frequencies for the live tool set; zero-frequency tools
    // never enter it.
    let mut remaining: BTreeMap<ToolId, Option<u32>> = BTreeMap::new();
    let mut forbidden: BTreeMap<ToolId, ForbidReason> = BTreeMap::new();
    for t in tools {
        match mode {
            PlanMode::Planned(plan) => {
                let f = plan.frequency(&t.id);
                if f > 0 {
                    remaining.insert(t.id.clone(), Some(f));
                } else {
                    forbidden.insert(t.id.clone(), ForbidReason::Exhausted);
                }
            }
            PlanMode::Unplanned => {
                remaining.insert(t.id.clone(), None);
            }
        }
    }

    let mut blacklist: BTreeSet<ToolId> = BTreeSet::new();
    let mut observations: Vec<Observation> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut last_error: Option<String> = None;
    let mut ledger = ledger;

    // With nothing usable from the start, go straight to the summary.
    // Mid-episode exhaustion does NOT end the loop: the policy keeps
    // being consulted (it sees the empty set and the forbidden reasons)
    // so attempts on forbidden tools surface as interceptions until the
    // policy stops or the step cap fires.
    let step_budget = if remaining.is_empty() { 0 } else { cfg.step_cap };

    for _ in 0..step_budget {
        let available: Vec<ToolView<'_>> = remaining
            .iter()
            .map(|(id, rem)| ToolView {
                spec: specs[id],
                remaining: *rem,
            })
            .collect();
        let decision = policy.use_tool(&PolicyContext {
            query,
            available: &available,
            forbidden: &forbidden,
            observations: &observations,
            last_error: last_error.as_deref(),
        });
        let (tool_id, params) = match decision {
            PolicyDecision::Stop => break,
            PolicyDecision::Call { tool_id, params } => (tool_id, params),
        };

        if !remaining.contains_key(&tool_id) {
            // Forbidden choice: intercept, never invoke or debit (beyond
            // any configured penalty), and surface an error message.
            let reason = if blacklist.contains(&tool_id) {
                ForbidReason::Blacklisted
            } else {
                ForbidReason::Exhausted
            };
            let message = forbidden_message(&tool_id, reason);
            let mut cost_debited = Rat::from_integer(0.into());
            if cfg.interception_penalty > Rat::from_integer(0.into()) {
                let penalty = ToolCost::from_total(cfg.interception_penalty.clone())
                    .expect("validated nonnegative");
                ledger = ledger.debit(&penalty);
                cost_debited = cfg.interception_penalty.clone();
            }
            steps.push(StepRecord {
                tool_id,
                params,
                intercepted: Some(reason),
                result: message.clone(),
                cost_debited,
                blacklisted: false,
            });
            last_error = Some(message);
            continue;
        }

        let spec = specs[&tool_id];
        let result = env.invoke(&tool_id, &params);
        ledger = ledger.debit(&spec.cost);

        if let Some(Some(f)) = remaining.get_mut(&tool_id).map(|r| r.as_mut()) {
            *f -= 1;
            if *f == 0 {
                remaining.remove(&tool_id);
                forbidden.insert(tool_id.clone(), ForbidReason::Exhausted);
            }
        }

        let banned = cfg.blacklist_enabled
            && should_blacklist(
                scorer,
                &UsageView {
                    query_text: &query.text,
                    tool_id: &tool_id,
                    params: &params,
                    result: &result,
                },
            );
        if banned {
            blacklist.insert(tool_id.clone());
            remaining.remove(&tool_id);
            forbidden.insert(tool_id.clone(), ForbidReason::Blacklisted);
        }

        observations.push(Observation {
            tool_id: tool_id.clone(),
            params: params.clone(),
            result: result.clone(),
        });
        steps.push(StepRecord {
            tool_id,
            params,
            intercepted: None,
            result,
            cost_debited: spec.cost.total(),
            blacklisted: banned,
        });
        last_error = None;
    }

    let (final_answer, resolved) = if observations.is_empty() {
        ("no tools available".to_string(), false)
    } else {
        (
            policy.summarize(query, &observations),
            judge.is_resolved(&query.id, &observations),
        )
    };

    let invocation_count = steps.iter().filter(|s| s.intercepted.is_none()).count() as u32;

    // Frequency safety: no tool may have been invoked past its plan.
    if let PlanMode::Planned(plan) = mode {
        let mut used: BTreeMap<&ToolId, u32> = BTreeMap::new();
        for s in steps.iter().filter(|s| s.intercepted.is_none()) {
            *used.entry(&s.tool_id).or_default() += 1;
        }
        for (tool, count) in used {
            assert!(
                count <= plan.frequency(tool),
                "tool {tool} invoked {count} times over its planned frequency"
            );
        }
    }

    EpisodeTranscript {
        query_id: query.id.clone(),
        steps,
        final_answer,
        resolved,
        total_cost: ledger.total_cost(),
        within_budget: ledger.within_budget(),
        invocation_count,
    }
}
