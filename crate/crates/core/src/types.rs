//! Tools, costs, budgets, and the ledger arithmetic shared by all stages.
//!
//! All types here are immutable values; operations return new values, so
//! they are safe to share across threads without synchronization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rat::{format_rat, serde_rat, Rat};
use crate::Result;

/// Identifier of a tool within a catalog.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolId(pub String);

impl ToolId {
    pub fn new(id: impl Into<String>) -> Self {
        ToolId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ToolId {
    fn from(s: &str) -> Self {
        ToolId(s.to_string())
    }
}

/// Identifier of a user query.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub String);

impl QueryId {
    pub fn new(id: impl Into<String>) -> Self {
        QueryId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QueryId {
    fn from(s: &str) -> Self {
        QueryId(s.to_string())
    }
}

/// A user query to resolve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let q = Query {
            id: QueryId::new(id),
            text: text.into(),
        };
        if q.text.trim().is_empty() {
            return Err(Error::invalid_input(format!(
                "query {} has empty text",
                q.id
            )));
        }
        Ok(q)
    }
}

/// Per-invocation cost of a tool, decomposed into its sources.
///
/// Only `total()` participates in planning and ledger arithmetic; the
/// decomposition exists for reporting. All components are in the same
/// (pre-converted) cost unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCost {
    /// Cost of invoking the tool itself.
    #[serde(rename = "tool", with = "serde_rat")]
    pub tool_component: Rat,
    /// Cost of the model call that drives the invocation.
    #[serde(rename = "llm", with = "serde_rat")]
    pub llm_component: Rat,
    /// Time spent, already converted into cost units.
    #[serde(rename = "time", with = "serde_rat")]
    pub time_component: Rat,
}

impl ToolCost {
    pub fn new(tool: Rat, llm: Rat, time: Rat) -> Result<Self> {
        let c = ToolCost {
            tool_component: tool,
            llm_component: llm,
            time_component: time,
        };
        c.validate()?;
        Ok(c)
    }

    /// Cost with only the tool component set.
    pub fn from_total(total: Rat) -> Result<Self> {
        Self::new(total, Rat::zero(), Rat::zero())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("tool", &self.tool_component),
            ("llm", &self.llm_component),
            ("time", &self.time_component),
        ] {
            if c < &Rat::zero() {
                return Err(Error::invalid_input(format!(
                    "negative {name} cost component: {}",
                    format_rat(c)
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> Rat {
        &self.tool_component + &self.llm_component + &self.time_component
    }

    pub fn is_zero(&self) -> bool {
        self.total().is_zero()
    }
}

/// A candidate tool: identity, documentation, and per-invocation cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub id: ToolId,
    pub name: String,
    pub documentation: String,
    pub cost: ToolCost,
}

impl ToolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.documentation.trim().is_empty() {
            return Err(Error::invalid_input(format!(
                "tool {} has empty documentation",
                self.id
            )));
        }
        self.cost.validate()?;
        if self.cost.total() <= Rat::zero() {
            return Err(Error::invalid_input(format!(
                "tool {} has non-positive total cost",
                self.id
            )));
        }
        Ok(())
    }
}

/// An id-indexed set of tools.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    tools: Vec<ToolSpec>,
}

impl Catalog {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for t in &tools {
            t.validate()?;
            if seen.insert(t.id.clone(), ()).is_some() {
                return Err(Error::invalid_input(format!("duplicate tool id {}", t.id)));
            }
        }
        Ok(Catalog { tools })
    }

    pub fn get(&self, id: &ToolId) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| &t.id == id)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Read a catalog from a JSON array of tool specs.
    pub fn read_json(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let tools: Vec<ToolSpec> = serde_json::from_str(&raw)?;
        Catalog::new(tools)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::to_string_pretty(&self.tools)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Exact budget accounting for one episode.
///
/// `remaining() = budget - overhead - consumed` holds exactly for any
/// debit sequence; enforcement lives in the planner and executor, so
/// debiting past the budget is permitted and simply recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    #[serde(with = "serde_rat")]
    budget: Rat,
    #[serde(with = "serde_rat")]
    overhead: Rat,
    #[serde(with = "serde_rat")]
    consumed: Rat,
}

impl BudgetLedger {
    /// Fresh ledger with total budget and fixed prompt/system overhead.
    pub fn new(budget: Rat, overhead: Rat) -> Result<Self> {
        if budget <= Rat::zero() {
            return Err(Error::invalid_input("budget must be positive"));
        }
        if overhead < Rat::zero() {
            return Err(Error::invalid_input("overhead must be nonnegative"));
        }
        Ok(BudgetLedger {
            budget,
            overhead,
            consumed: Rat::zero(),
        })
    }

    pub fn budget(&self) -> &Rat {
        &self.budget
    }

    pub fn overhead(&self) -> &Rat {
        &self.overhead
    }

    pub fn consumed(&self) -> &Rat {
        &self.consumed
    }

    /// Planning capacity: budget minus overhead. May be negative if the
    /// overhead alone exceeds the budget.
    pub fn capacity(&self) -> Rat {
        &self.budget - &self.overhead
    }

    pub fn remaining(&self) -> Rat {
        &self.budget - &self.overhead - &self.consumed
    }

    /// Total spent so far, overhead included.
    pub fn total_cost(&self) -> Rat {
        &self.overhead + &self.consumed
    }

    pub fn within_budget(&self) -> bool {
        self.total_cost() <= self.budget
    }

    /// Record one tool invocation. Returns the updated ledger.
    pub fn debit(&self, cost: &ToolCost) -> BudgetLedger {
        BudgetLedger {
            budget: self.budget.clone(),
            overhead: self.overhead.clone(),
            consumed: &self.consumed + cost.total(),
        }
    }
}
