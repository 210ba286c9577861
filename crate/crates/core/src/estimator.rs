//! Per-tool expected value and frequency limits, estimated from experience.
//!
//! Both estimates are similarity-weighted averages over a tool's past
//! usages: weights are `exp(sim(query, past_query))`, normalized. The
//! expected value averages the binary usefulness scores; the frequency
//! limit averages, over distinct past queries, how many times the tool
//! was used per episode. Tools whose expected value falls below the
//! threshold get a frequency limit of zero and drop out of planning.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use crate::error::Error;
use crate::experience::ExperienceStore;
use crate::types::{Query, QueryId, ToolId, ToolSpec};
use crate::Result;

/// Similarity between two queries. The estimator only assumes the output
/// is finite and deterministic; scale matters (the softmax weighting is
/// shift-invariant but not scale-invariant).
pub trait Similarity: Send + Sync {
    fn sim(&self, a: &Query, b: &Query) -> f64;
}

/// Jaccard similarity on lowercased whitespace tokens.
#[derive(Debug, Default, Clone)]
pub struct TokenJaccard;

impl Similarity for TokenJaccard {
    fn sim(&self, a: &Query, b: &Query) -> f64 {
        let tokens = |s: &str| {
            s.split_whitespace()
                .map(|t| t.to_lowercase())
                .collect::<std::collections::BTreeSet<_>>()
        };
        let ta = tokens(&a.text);
        let tb = tokens(&b.text);
        let inter = ta.intersection(&tb).count();
        let union = ta.union(&tb).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Similarity read from a fixed table keyed `"<id_a>:<id_b>"`.
/// Missing pairs default to 0.
#[derive(Debug, Default, Clone)]
pub struct LookupSimilarity {
    table: HashMap<String, f64>,
}

impl LookupSimilarity {
    pub fn new(table: HashMap<String, f64>) -> Self {
        LookupSimilarity { table }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let table: HashMap<String, f64> = serde_json::from_str(&raw)?;
        Ok(LookupSimilarity { table })
    }
}

impl Similarity for LookupSimilarity {
    fn sim(&self, a: &Query, b: &Query) -> f64 {
        let key = format!("{}:{}", a.id, b.id);
        self.table.get(&key).copied().unwrap_or(0.0)
    }
}

/// Estimator parameters.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Minimum expected value for a tool to keep a nonzero frequency limit.
    pub tau: f64,
    /// Multiplier applied to similarities before the softmax weighting.
    pub temperature: f64,
    /// Expected value assigned to tools with no experience.
    pub fallback_value: f64,
    /// Frequency limit assigned to tools with no experience.
    pub fallback_freq: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            tau: 0.15,
            temperature: 1.0,
            fallback_value: 0.0,
            fallback_freq: 0.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::invalid_input("tau must be finite and nonnegative"));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::invalid_input("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fallback_value) {
            return Err(Error::invalid_input("fallback value must be in [0, 1]"));
        }
        if !self.fallback_freq.is_finite() || self.fallback_freq < 0.0 {
            return Err(Error::invalid_input("fallback frequency must be >= 0"));
        }
        if self.fallback_value < self.tau && self.fallback_freq != 0.0 {
            return Err(Error::invalid_input(
                "fallback frequency must be 0 when the fallback value is below tau",
            ));
        }
        Ok(())
    }
}

/// Estimates for one tool against one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolEstimate {
    pub tool_id: ToolId,
    /// Weighted average usefulness, in [0, 1].
    pub expected_value: f64,
    /// Estimated maximum useful invocations; 0 below the threshold.
    pub freq_constraint: f64,
}

fn checked_sim(sim: &dyn Similarity, cfg: &EstimatorConfig, a: &Query, b: &Query) -> Result<f64> {
    let s = sim.sim(a, b) * cfg.temperature;
    if !s.is_finite() {
        return Err(Error::invalid_input(format!(
            "similarity({}, {}) is not finite",
            a.id, b.id
        )));
    }
    Ok(s)
}

/// Softmax-normalized weights with the max shifted out for stability.
fn softmax_weights(sims: &[f64]) -> Vec<f64> {
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    sims.iter().map(|s| (s - max).exp()).collect()
}

/// Weighted average usefulness of a tool for a query.
pub fn expected_value(
    query: &Query,
    tool_id: &ToolId,
    store: &ExperienceStore,
    sim: &dyn Similarity,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let records: Vec<_> = store.for_tool(tool_id).collect();
    if records.is_empty() {
        return Err(Error::EmptyExperience {
            tool_id: tool_id.0.clone(),
        });
    }
    let sims = records
        .iter()
        .map(|r| checked_sim(sim, cfg, query, &r.query))
        .collect::<Result<Vec<_>>>()?;
    let weights = softmax_weights(&sims);
    let total: f64 = weights.iter().sum();
    let weighted: f64 = weights
        .iter()
        .zip(&records)
        .map(|(w, r)| w * f64::from(r.score))
        .sum();
    Ok(weighted / total)
}

/// Estimated frequency limit for a tool, zeroed below the threshold.
///
/// Past usages are grouped by query; each group contributes its shared
/// per-episode count, weighted by the softmax of the query similarity.
pub fn estimate_frequency(
    query: &Query,
    tool_id: &ToolId,
    store: &ExperienceStore,
    sim: &dyn Similarity,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let value = expected_value(query, tool_id, store, sim, cfg)?;
    if value < cfg.tau {
        return Ok(0.0);
    }
    // Group by past query, first-seen order.
    let mut order: Vec<&QueryId> = Vec::new();
    let mut groups: BTreeMap<&QueryId, (&Query, u32)> = BTreeMap::new();
    for r in store.for_tool(tool_id) {
        groups.entry(&r.query.id).or_insert_with(|| {
            order.push(&r.query.id);
            (&r.query, r.count_in_episode)
        });
    }
    let mut sims = Vec::with_capacity(order.len());
    let mut counts = Vec::with_capacity(order.len());
    for qid in &order {
        let (q, count) = groups[qid];
        sims.push(checked_sim(sim, cfg, query, q)?);
        counts.push(f64::from(count));
    }
    let weights = softmax_weights(&sims);
    let total: f64 = weights.iter().sum();
    let weighted: f64 = weights.iter().zip(&counts).map(|(w, c)| w * c).sum();
    Ok(weighted / total)
}

/// Estimate every candidate tool, applying the configured fallback to
/// tools with no experience.
pub fn estimate_all(
    query: &Query,
    tools: &[ToolSpec],
    store: &ExperienceStore,
    sim: &dyn Similarity,
    cfg: &EstimatorConfig,
) -> Result<Vec<ToolEstimate>> {
    cfg.validate()?;
    if tools.is_empty() {
        return Err(Error::invalid_input("no candidate tools to estimate"));
    }
    tools
        .iter()
        .map(|t| {
            if store.has_tool(&t.id) {
                Ok(ToolEstimate {
                    tool_id: t.id.clone(),
                    expected_value: expected_value(query, &t.id, store, sim, cfg)?,
                    freq_constraint: estimate_frequency(query, &t.id, store, sim, cfg)?,
                })
            } else {
                Ok(ToolEstimate {
                    tool_id: t.id.clone(),
                    expected_value: cfg.fallback_value,
                    freq_constraint: cfg.fallback_freq,
                })
            }
        })
        .collect()
}
