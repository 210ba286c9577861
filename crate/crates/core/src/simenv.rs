//! Deterministic synthetic scenarios: tools, queries, experience,
//! scripted tool behaviors, and ground truth.
//!
//! A scenario stands in for real tool APIs and an LLM agent so the whole
//! plan/execute/evaluate loop runs end to end and reproducibly. Tool
//! behaviors are seeded scripts; ground truth states which helpful
//! results resolve each query, so resolution is decidable without any
//! model in the loop. Unhelpful results are emitted as strings matching
//! the heuristic scorer's error patterns, which closes the loop with the
//! blacklist mechanism.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::ToolEstimate;
use crate::executor::{
    AgentPolicy, Observation, PolicyContext, PolicyDecision, ResolutionJudge, ToolEnvironment,
};
use crate::experience::{ExperienceStore, PassThroughScorer, UsageRecord};
use crate::rat::{format_rat, rat_int, rat_uint, serde_rat, Rat};
use crate::types::{Catalog, Query, QueryId, ToolCost, ToolId, ToolSpec};
use crate::Result;

const ADJECTIVES: &[&str] = &[
    "latest", "detailed", "historical", "local", "global", "trending", "verified", "daily",
];
const DOMAINS: &[&str] = &[
    "weather", "stocks", "flights", "maps", "news", "sports", "recipes", "music", "movies",
    "books", "crypto", "hotels",
];
const OBJECTS: &[&str] = &[
    "report", "summary", "figures", "listings", "updates", "forecast", "rankings", "highlights",
];
const REGIONS: &[&str] = &[
    "berlin", "tokyo", "oslo", "madrid", "cairo", "sydney", "lima", "denver",
];

/// Marker prefix of every unhelpful simulated result.
const ERROR_PREFIX: &str = "error:";

/// Scenario generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_queries: usize,
    /// Candidate tools offered per query.
    pub n_tools_per_query: usize,
    /// Inclusive integer bounds for random tool costs.
    pub cost_min: u32,
    pub cost_max: u32,
    /// Total budget per episode.
    #[serde(with = "serde_rat")]
    pub budget: Rat,
    /// Fixed prompt/system overhead per episode.
    #[serde(with = "serde_rat")]
    pub overhead: Rat,
    /// Expected-value threshold below which tools are not planned.
    pub tau: f64,
    /// Minimum number of experience records to generate.
    pub experience_size: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            n_queries: 50,
            n_tools_per_query: 5,
            cost_min: 1,
            cost_max: 10,
            budget: rat_int(22),
            overhead: rat_int(2),
            tau: 0.15,
            experience_size: 400,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries < 1 {
            return Err(Error::invalid_input("n_queries must be at least 1"));
        }
        if self.n_tools_per_query < 1 {
            return Err(Error::invalid_input("n_tools_per_query must be at least 1"));
        }
        if self.cost_min < 1 {
            return Err(Error::invalid_input("cost_min must be at least 1"));
        }
        if self.cost_max < self.cost_min {
            return Err(Error::invalid_input("cost_max must be >= cost_min"));
        }
        if self.budget <= Rat::from_integer(0.into()) {
            return Err(Error::invalid_input("budget must be positive"));
        }
        if self.overhead < Rat::from_integer(0.into()) {
            return Err(Error::invalid_input("overhead must be nonnegative"));
        }
        if self.capacity() <= Rat::from_integer(0.into()) {
            return Err(Error::invalid_input(
                "budget must exceed overhead (no planning capacity)",
            ));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::invalid_input("tau must be finite and nonnegative"));
        }
        if self.experience_size < 1 {
            return Err(Error::invalid_input("experience_size must be at least 1"));
        }
        Ok(())
    }

    /// Planning capacity: budget minus overhead.
    pub fn capacity(&self) -> Rat {
        &self.budget - &self.overhead
    }

    /// Size of the generated tool library.
    pub fn library_size(&self) -> usize {
        (2 * self.n_tools_per_query).max(self.n_tools_per_query + 3)
    }
}

/// Scripted behavior of one simulated tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Behavior {
    /// Each invocation is helpful with this probability, drawn from a
    /// per-episode seeded stream.
    Bernoulli { helpful_rate: f64 },
    /// Fixed outcome sequence; the last entry repeats once exhausted.
    Sequence { outcomes: Vec<bool> },
}

/// One ground-truth condition: this many helpful results from this tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub tool_id: ToolId,
    pub helpful_count: u32,
}

/// A full synthetic benchmark: catalog, queries, candidate sets,
/// behaviors, ground truth, and experience.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub catalog: Catalog,
    pub queries: Vec<Query>,
    pub candidates: BTreeMap<QueryId, Vec<ToolId>>,
    pub behaviors: BTreeMap<ToolId, Behavior>,
    pub ground_truth: BTreeMap<QueryId, Vec<Requirement>>,
    pub experience: ExperienceStore,
}

/// Whether a simulated result is helpful (no error marker).
pub fn is_helpful_result(result: &str) -> bool {
    !result.starts_with(ERROR_PREFIX)
}

/// Ground-truth satisfaction over a set of observations.
pub fn requirements_met(requirements: &[Requirement], observations: &[Observation]) -> bool {
    requirements.iter().all(|req| {
        let helpful = observations
            .iter()
            .filter(|o| o.tool_id == req.tool_id && is_helpful_result(&o.result))
            .count();
        helpful as u32 >= req.helpful_count
    })
}

/// FNV-1a over the parts, with separators, for stable sub-seeds.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&base.to_le_bytes());
    for part in parts {
        eat(&[0xff]);
        eat(part.as_bytes());
    }
    h
}

impl Scenario {
    /// Candidate tool specs for a query, in candidate order.
    pub fn tools_for(&self, query_id: &QueryId) -> Vec<ToolSpec> {
        self.candidates
            .get(query_id)
            .map(|ids| {
                ids.iter()
                    .map(|id| self.catalog.get(id).expect("candidate in catalog").clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn query(&self, query_id: &QueryId) -> Option<&Query> {
        self.queries.iter().find(|q| &q.id == query_id)
    }

    pub fn requirements(&self, query_id: &QueryId) -> &[Requirement] {
        self.ground_truth
            .get(query_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Fresh per-episode environment for one query.
    pub fn environment(&self, query_id: &QueryId) -> SimEnvironment<'_> {
        SimEnvironment {
            behaviors: &self.behaviors,
            scenario_seed: self.config.seed,
            query_id: query_id.clone(),
            rngs: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }

    /// Save as `scenario.json` plus `experience.jsonl` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let experience_path = "experience.jsonl";
        self.experience.write_jsonl(&dir.join(experience_path))?;
        let bundle = ScenarioBundle {
            config: self.config.clone(),
            catalog: self.catalog.clone(),
            queries: self.queries.clone(),
            candidates: self.candidates.clone(),
            behaviors: self.behaviors.clone(),
            ground_truth: self.ground_truth.clone(),
            experience_path: experience_path.to_string(),
        };
        let mut out = serde_json::to_string_pretty(&bundle)?;
        out.push('\n');
        std::fs::write(dir.join("scenario.json"), out)?;
        Ok(())
    }

    /// Load from a bundle file or a directory containing `scenario.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join("scenario.json")
        } else {
            path.to_path_buf()
        };
        let raw = std::fs::read_to_string(&file)?;
        let bundle: ScenarioBundle = serde_json::from_str(&raw)?;
        bundle.config.validate()?;
        let base = file.parent().unwrap_or_else(|| Path::new("."));
        // Generated experience files carry explicit labels.
        let experience =
            ExperienceStore::read_jsonl(&base.join(&bundle.experience_path), &PassThroughScorer)?;
        Ok(Scenario {
            config: bundle.config,
            catalog: bundle.catalog,
            queries: bundle.queries,
            candidates: bundle.candidates,
            behaviors: bundle.behaviors,
            ground_truth: bundle.ground_truth,
            experience,
        })
    }
}

impl ResolutionJudge for Scenario {
    fn is_resolved(&self, query_id: &QueryId, observations: &[Observation]) -> bool {
        match self.ground_truth.get(query_id) {
            Some(reqs) => requirements_met(reqs, observations),
            None => false,
        }
    }
}

/// On-disk form of a scenario (experience lives in a sibling JSONL file).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioBundle {
    config: ScenarioConfig,
    catalog: Catalog,
    queries: Vec<Query>,
    candidates: BTreeMap<QueryId, Vec<ToolId>>,
    behaviors: BTreeMap<ToolId, Behavior>,
    ground_truth: BTreeMap<QueryId, Vec<Requirement>>,
    experience_path: String,
}

/// Episode-local tool environment over shared behaviors.
///
/// Result streams are reproducible from (scenario seed, query, tool);
/// cursors are local to this instance, so independent episodes never
/// interfere.
pub struct SimEnvironment<'a> {
    behaviors: &'a BTreeMap<ToolId, Behavior>,
    scenario_seed: u64,
    query_id: QueryId,
    rngs: BTreeMap<ToolId, ChaCha8Rng>,
    counters: BTreeMap<ToolId, u32>,
}

impl ToolEnvironment for SimEnvironment<'_> {
    fn invoke(&mut self, tool_id: &ToolId, _params: &str) -> String {
        let call_index = {
            let c = self.counters.entry(tool_id.clone()).or_insert(0);
            *c += 1;
            *c
        };
        let helpful = match self.behaviors.get(tool_id) {
            Some(Behavior::Bernoulli { helpful_rate }) => {
                let rng = self.rngs.entry(tool_id.clone()).or_insert_with(|| {
                    ChaCha8Rng::seed_from_u64(derive_seed(
                        self.scenario_seed,
                        &["env", self.query_id.as_str(), tool_id.as_str()],
                    ))
                });
                rng.gen::<f64>() < *helpful_rate
            }
            Some(Behavior::Sequence { outcomes }) => match outcomes.is_empty() {
                true => false,
                false => outcomes[(call_index as usize - 1).min(outcomes.len() - 1)],
            },
            None => false,
        };
        if helpful {
            format!("{tool_id} record {call_index} for {}", self.query_id)
        } else {
            format!("{ERROR_PREFIX} {tool_id} returned nothing useful")
        }
    }
}

/// Generate a self-consistent synthetic benchmark from the config.
///
/// Tool costs are uniform integers in the configured range; experience
/// scores follow each tool's scripted helpfulness rate, so the estimator
/// has signal without being an oracle; ground truth names candidate
/// tools whose requirements fit the planning capacity.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let library_size = config.library_size();
    let capacity = config.capacity();

    // Tool library. Helpfulness buckets cycle deterministically:
    // 40% good, 30% mediocre, 30% unreliable per block of ten.
    let mut tools = Vec::with_capacity(library_size);
    let mut rates = Vec::with_capacity(library_size);
    for i in 0..library_size {
        let domain = DOMAINS[i % DOMAINS.len()];
        let object = OBJECTS[i % OBJECTS.len()];
        let cost = rng.gen_range(config.cost_min..=config.cost_max);
        let rate = match i % 10 {
            0..=3 => rng.gen_range(0.7..0.95),
            4..=6 => rng.gen_range(0.3..0.6),
            _ => rng.gen_range(0.0..0.1),
        };
        rates.push(rate);
        tools.push(ToolSpec {
            id: ToolId::new(format!("tool_{i:03}")),
            name: format!("{domain}-{object}-api"),
            documentation: format!(
                "Fetches {domain} {object} records; supports filtered lookups."
            ),
            cost: ToolCost::from_total(rat_uint(u64::from(cost)))?,
        });
    }
    let catalog = Catalog::new(tools)?;
    let behaviors: BTreeMap<ToolId, Behavior> = catalog
        .tools()
        .iter()
        .zip(&rates)
        .map(|(t, &rate)| (t.id.clone(), Behavior::Bernoulli { helpful_rate: rate }))
        .collect();

    // Queries and their candidate tool sets.
    let mut queries = Vec::with_capacity(config.n_queries);
    let mut candidates = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    for qi in 0..config.n_queries {
        let query = Query::new(
            format!("q_{qi:03}"),
            format!(
                "find {} {} {} for {}",
                ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())],
                DOMAINS[rng.gen_range(0..DOMAINS.len())],
                OBJECTS[rng.gen_range(0..OBJECTS.len())],
                REGIONS[rng.gen_range(0..REGIONS.len())],
            ),
        )?;

        let mut picked: Vec<usize> = sample(&mut rng, library_size, config.n_tools_per_query)
            .into_vec();
        // Guarantee at least one dependable tool among the candidates.
        if !picked.iter().any(|&i| rates[i] >= 0.5) {
            let good: Vec<usize> = (0..library_size).filter(|&i| rates[i] >= 0.5).collect();
            let replacement = good[rng.gen_range(0..good.len())];
            if !picked.contains(&replacement) {
                let last = picked.len() - 1;
                picked[last] = replacement;
            }
        }
        let candidate_ids: Vec<ToolId> = picked
            .iter()
            .map(|&i| catalog.tools()[i].id.clone())
            .collect();

        ground_truth.insert(
            query.id.clone(),
            pick_requirements(&mut rng, &picked, &rates, &catalog, &capacity),
        );
        candidates.insert(query.id.clone(), candidate_ids);
        queries.push(query);
    }

    // Experience: whole past episodes per (past query, tool) pair, scores
    // drawn at the tool's scripted rate. Each pair yields two records on
    // average, so size the past-query pool to make the target reachable.
    let n_past = (config.n_queries / 2)
        .max(10)
        .max(config.experience_size / library_size);
    let past_queries: Vec<Query> = (0..n_past)
        .map(|i| {
            Query::new(
                format!("p_{i:03}"),
                format!(
                    "find {} {} {} for {}",
                    ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())],
                    DOMAINS[rng.gen_range(0..DOMAINS.len())],
                    OBJECTS[rng.gen_range(0..OBJECTS.len())],
                    REGIONS[rng.gen_range(0..REGIONS.len())],
                ),
            )
        })
        .collect::<Result<_>>()?;

    let mut experience = ExperienceStore::new();
    let mut used_pairs: BTreeSet<(QueryId, ToolId)> = BTreeSet::new();
    let mut emit_episode = |experience: &mut ExperienceStore,
                            rng: &mut ChaCha8Rng,
                            tool_index: usize,
                            past: &Query|
     -> Result<()> {
        let tool = &catalog.tools()[tool_index];
        let key = (past.id.clone(), tool.id.clone());
        if used_pairs.contains(&key) {
            return Ok(());
        }
        used_pairs.insert(key);
        let count = rng.gen_range(1..=3u32);
        for k in 0..count {
            let helpful = rng.gen::<f64>() < rates[tool_index];
            let result = if helpful {
                format!("{} record {} for {}", tool.id, k + 1, past.id)
            } else {
                format!("{ERROR_PREFIX} {} returned nothing useful", tool.id)
            };
            experience.ingest(UsageRecord {
                query: past.clone(),
                tool_id: tool.id.clone(),
                params: format!("lookup:{}", past.id),
                result,
                score: u8::from(helpful),
                count_in_episode: count,
            })?;
        }
        Ok(())
    };

    // Coverage pass: two past episodes per tool.
    for tool_index in 0..library_size {
        for _ in 0..2 {
            let past = &past_queries[rng.gen_range(0..n_past)];
            emit_episode(&mut experience, &mut rng, tool_index, past)?;
        }
    }
    // Fill to the configured size.
    let mut attempts = 0;
    while experience.len() < config.experience_size && attempts < config.experience_size * 20 {
        let tool_index = rng.gen_range(0..library_size);
        let past = &past_queries[rng.gen_range(0..n_past)];
        emit_episode(&mut experience, &mut rng, tool_index, past)?;
        attempts += 1;
    }

    let scenario = Scenario {
        config: config.clone(),
        catalog,
        queries,
        candidates,
        behaviors,
        ground_truth,
        experience,
    };

    // Degeneracy guard: at least one query must be resolvable by a plan.
    let resolvable = scenario.queries.iter().any(|q| {
        let reqs = scenario.requirements(&q.id);
        let cands = &scenario.candidates[&q.id];
        !reqs.is_empty()
            && reqs.iter().all(|r| cands.contains(&r.tool_id))
            && requirement_cost(reqs, &scenario.catalog) <= capacity
    });
    if !resolvable {
        return Err(Error::DegenerateScenario(format!(
            "no query is resolvable within capacity {}",
            format_rat(&capacity)
        )));
    }
    Ok(scenario)
}

fn requirement_cost(reqs: &[Requirement], catalog: &Catalog) -> Rat {
    reqs.iter()
        .map(|r| {
            catalog
                .get(&r.tool_id)
                .map(|t| t.cost.total() * rat_uint(u64::from(r.helpful_count)))
                .unwrap_or_else(|| Rat::from_integer(0.into()))
        })
        .sum()
}

/// Choose ground-truth requirements among a query's dependable candidates,
/// keeping their total cost within the planning capacity.
fn pick_requirements(
    rng: &mut ChaCha8Rng,
    picked: &[usize],
    rates: &[f64],
    catalog: &Catalog,
    capacity: &Rat,
) -> Vec<Requirement> {
    let good: Vec<usize> = picked.iter().copied().filter(|&i| rates[i] >= 0.5).collect();
    if good.is_empty() {
        return Vec::new();
    }
    let cost_of = |i: usize| catalog.tools()[i].cost.total();
    let mut reqs: Vec<usize> = if good.len() >= 2 && rng.gen_bool(0.5) {
        let a = rng.gen_range(0..good.len());
        let mut b = rng.gen_range(0..good.len() - 1);
        if b >= a {
            b += 1;
        }
        vec![good[a], good[b]]
    } else {
        vec![good[rng.gen_range(0..good.len())]]
    };

    let mut count_first = 1u32;
    if reqs.len() == 1 && rng.gen_bool(0.25) && cost_of(reqs[0]) * rat_int(2) <= *capacity {
        count_first = 2;
    }
    // Trim until the requirement set fits the capacity.
    loop {
        let total: Rat = reqs
            .iter()
            .enumerate()
            .map(|(n, &i)| {
                let c = if n == 0 { count_first } else { 1 };
                cost_of(i) * rat_uint(u64::from(c))
            })
            .sum();
        if total <= *capacity {
            break;
        }
        if reqs.len() > 1 {
            reqs.pop();
        } else if count_first > 1 {
            count_first = 1;
        } else {
            // Fall back to the cheapest dependable candidate.
            let cheapest = *good
                .iter()
                .min_by(|&&a, &&b| cost_of(a).cmp(&cost_of(b)))
                .expect("good is non-empty");
            if reqs[0] == cheapest {
                break; // nothing cheaper; query may be unresolvable
            }
            reqs[0] = cheapest;
        }
    }
    reqs.iter()
        .enumerate()
        .map(|(n, &i)| Requirement {
            tool_id: catalog.tools()[i].id.clone(),
            helpful_count: if n == 0 { count_first } else { 1 },
        })
        .collect()
}

/// Selection rule of a scripted policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Highest estimated value among available tools.
    Greedy,
    /// Cycle through available tools in id order.
    RoundRobin,
    /// Uniform choice among available tools.
    Random,
    /// Fixates on its first choice forever, forbidden or not.
    Stubborn,
}

impl PolicyKind {
    pub fn all() -> [PolicyKind; 4] {
        [
            PolicyKind::Greedy,
            PolicyKind::RoundRobin,
            PolicyKind::Random,
            PolicyKind::Stubborn,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "greedy",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::Random => "random",
            PolicyKind::Stubborn => "stubborn",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "greedy" => Ok(PolicyKind::Greedy),
            "round_robin" | "roundrobin" => Ok(PolicyKind::RoundRobin),
            "random" => Ok(PolicyKind::Random),
            "stubborn" => Ok(PolicyKind::Stubborn),
            other => Err(Error::invalid_input(format!("unknown policy {other:?}"))),
        }
    }
}

/// Scripted stand-in for an LLM agent.
///
/// All kinds stop once the ground-truth requirements are met by the
/// collected observations (the simulation's sufficiency judgment).
pub struct SimPolicy {
    kind: PolicyKind,
    values: BTreeMap<ToolId, f64>,
    requirements: Vec<Requirement>,
    rng: ChaCha8Rng,
    rr_cursor: usize,
    fixation: Option<ToolId>,
}

/// Build a policy for one episode.
pub fn make_policy(
    kind: PolicyKind,
    estimates: &[ToolEstimate],
    requirements: &[Requirement],
    seed: u64,
) -> SimPolicy {
    SimPolicy {
        kind,
        values: estimates
            .iter()
            .map(|e| (e.tool_id.clone(), e.expected_value))
            .collect(),
        requirements: requirements.to_vec(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        rr_cursor: 0,
        fixation: None,
    }
}

impl SimPolicy {
    fn value_of(&self, id: &ToolId) -> f64 {
        self.values.get(id).copied().unwrap_or(0.0)
    }

    /// Available tool with the highest estimated value (smallest id wins
    /// ties; the list is already ascending by id).
    fn best_available(&self, ctx: &PolicyContext<'_>) -> Option<ToolId> {
        let mut best: Option<(&ToolId, f64)> = None;
        for view in ctx.available {
            let v = self.value_of(&view.spec.id);
            if best.map(|(_, bv)| v > bv).unwrap_or(true) {
                best = Some((&view.spec.id, v));
            }
        }
        best.map(|(id, _)| id.clone())
    }
}

impl AgentPolicy for SimPolicy {
    fn use_tool(&mut self, ctx: &PolicyContext<'_>) -> PolicyDecision {
        if requirements_met(&self.requirements, ctx.observations) {
            return PolicyDecision::Stop;
        }
        let params = format!("lookup:{}", ctx.query.id);
        let choice = match self.kind {
            PolicyKind::Greedy => self.best_available(ctx),
            PolicyKind::RoundRobin => {
                if ctx.available.is_empty() {
                    None
                } else {
                    let pick = ctx.available[self.rr_cursor % ctx.available.len()]
                        .spec
                        .id
                        .clone();
                    self.rr_cursor += 1;
                    Some(pick)
                }
            }
            PolicyKind::Random => {
                if ctx.available.is_empty() {
                    None
                } else {
                    let i = self.rng.gen_range(0..ctx.available.len());
                    Some(ctx.available[i].spec.id.clone())
                }
            }
            PolicyKind::Stubborn => {
                if self.fixation.is_none() {
                    self.fixation = self.best_available(ctx);
                }
                self.fixation.clone()
            }
        };
        match choice {
            Some(tool_id) => PolicyDecision::Call { tool_id, params },
            None => PolicyDecision::Stop,
        }
    }

    fn summarize(&mut self, _query: &Query, observations: &[Observation]) -> String {
        let helpful = observations
            .iter()
            .filter(|o| is_helpful_result(&o.result))
            .count();
        if requirements_met(&self.requirements, observations) {
            format!("resolved from {helpful} helpful results")
        } else {
            format!("unresolved: only {helpful} helpful results")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_all, EstimatorConfig, TokenJaccard};

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig {
            n_queries: 8,
            experience_size: 60,
            ..Default::default()
        };
        let a = generate_scenario(&cfg).unwrap();
        let b = generate_scenario(&cfg).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.behaviors, b.behaviors);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.experience.records(), b.experience.records());
    }

    #[test]
    fn costs_stay_in_range() {
        let cfg = ScenarioConfig {
            n_queries: 5,
            experience_size: 40,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        for tool in scenario.catalog.tools() {
            let total = tool.cost.total();
            assert!(total >= rat_int(1) && total <= rat_int(10), "cost {total}");
        }
    }

    #[test]
    fn candidate_sets_have_requested_size() {
        let cfg = ScenarioConfig {
            n_queries: 6,
            experience_size: 40,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        for q in &scenario.queries {
            assert_eq!(scenario.candidates[&q.id].len(), 5);
        }
    }

    #[test]
    fn ground_truth_fits_capacity_and_candidates() {
        let cfg = ScenarioConfig {
            n_queries: 20,
            experience_size: 80,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let capacity = cfg.capacity();
        let mut resolvable = 0;
        for q in &scenario.queries {
            let reqs = scenario.requirements(&q.id);
            if reqs.is_empty() {
                continue;
            }
            for r in reqs {
                assert!(scenario.candidates[&q.id].contains(&r.tool_id));
            }
            if requirement_cost(reqs, &scenario.catalog) <= capacity {
                resolvable += 1;
            }
        }
        assert!(resolvable > 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_cost = ScenarioConfig {
            cost_min: 0,
            ..Default::default()
        };
        assert!(bad_cost.validate().is_err());
        let no_capacity = ScenarioConfig {
            budget: rat_int(2),
            overhead: rat_int(2),
            ..Default::default()
        };
        assert!(no_capacity.validate().is_err());
    }

    #[test]
    fn environment_is_reproducible_and_episode_local() {
        let cfg = ScenarioConfig {
            n_queries: 3,
            experience_size: 40,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let qid = scenario.queries[0].id.clone();
        let tool = scenario.catalog.tools()[0].id.clone();
        let run = |scenario: &Scenario| {
            let mut env = scenario.environment(&qid);
            (0..6)
                .map(|_| env.invoke(&tool, "{}"))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(&scenario), run(&scenario));
    }

    #[test]
    fn always_error_tool_is_excluded_from_planning() {
        // 50 experience records for a tool that always errors: expected
        // value 0, below any positive threshold, so it is never planned.
        let mut experience = ExperienceStore::new();
        for i in 0..50 {
            let q = Query::new(format!("p{i}"), format!("past {i}")).unwrap();
            experience
                .ingest(UsageRecord {
                    query: q,
                    tool_id: "broken".into(),
                    params: "{}".into(),
                    result: format!("{ERROR_PREFIX} broken returned nothing useful"),
                    score: 0,
                    count_in_episode: 1,
                })
                .unwrap();
        }
        let tool = ToolSpec {
            id: "broken".into(),
            name: "broken".into(),
            documentation: "always fails".into(),
            cost: ToolCost::from_total(rat_int(1)).unwrap(),
        };
        let estimates = estimate_all(
            &Query::new("qu", "user query").unwrap(),
            std::slice::from_ref(&tool),
            &experience,
            &TokenJaccard,
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert_eq!(estimates[0].expected_value, 0.0);
        assert_eq!(estimates[0].freq_constraint, 0.0);

        let ledger =
            crate::types::BudgetLedger::new(rat_int(22), rat_int(2)).unwrap();
        let plan = crate::planner::make_plan(
            std::slice::from_ref(&tool),
            &estimates,
            &ledger,
            &crate::planner::PlannerConfig::default(),
        )
        .unwrap();
        assert!(plan.plan.is_empty());
    }

    #[test]
    fn scenario_save_load_round_trip() {
        let cfg = ScenarioConfig {
            n_queries: 4,
            experience_size: 40,
            ..Default::default()
        };
        let scenario = generate_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        scenario.save(dir.path()).unwrap();
        let back = Scenario::load(dir.path()).unwrap();
        assert_eq!(back.config, scenario.config);
        assert_eq!(back.catalog, scenario.catalog);
        assert_eq!(back.ground_truth, scenario.ground_truth);
        assert_eq!(back.experience.records(), scenario.experience.records());
    }

    #[test]
    fn greedy_prefers_highest_value() {
        let estimates = vec![
            ToolEstimate {
                tool_id: "a".into(),
                expected_value: 0.9,
                freq_constraint: 2.0,
            },
            ToolEstimate {
                tool_id: "b".into(),
                expected_value: 0.2,
                freq_constraint: 2.0,
            },
        ];
        let mut policy = make_policy(PolicyKind::Greedy, &estimates, &[], 7);
        // requirements empty means immediately sufficient; give one
        let reqs = vec![Requirement {
            tool_id: "a".into(),
            helpful_count: 1,
        }];
        policy.requirements = reqs;
        let tool_a = ToolSpec {
            id: "a".into(),
            name: "a".into(),
            documentation: "d".into(),
            cost: ToolCost::from_total(rat_int(1)).unwrap(),
        };
        let tool_b = ToolSpec {
            id: "b".into(),
            name: "b".into(),
            documentation: "d".into(),
            cost: ToolCost::from_total(rat_int(1)).unwrap(),
        };
        let views = vec![
            crate::executor::ToolView {
                spec: &tool_a,
                remaining: Some(1),
            },
            crate::executor::ToolView {
                spec: &tool_b,
                remaining: Some(1),
            },
        ];
        let query = Query::new("q", "query").unwrap();
        let ctx = PolicyContext {
            query: &query,
            available: &views,
            forbidden: &BTreeMap::new(),
            observations: &[],
            last_error: None,
        };
        match policy.use_tool(&ctx) {
            PolicyDecision::Call { tool_id, .. } => assert_eq!(tool_id, "a".into()),
            PolicyDecision::Stop => panic!("expected a call"),
        }
    }
}
