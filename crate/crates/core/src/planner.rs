//! Optimal tool-usage plans under a budget, via bounded-knapsack DP.
//!
//! A plan assigns each candidate tool a frequency (how many times it may
//! be invoked) maximizing the total expected value subject to two
//! constraints: the summed cost must fit the remaining budget, and each
//! tool's frequency may not exceed its estimated limit. Real-valued costs
//! are first quantized to integers with a conservative rounding scheme
//! (costs round up, the budget rounds down), so any plan feasible in
//! quantized units is feasible against the true costs.
//!
//! Tool values are kept as exact rationals through the dynamic program,
//! so the reported optimum is exact rather than float-accumulated. Ties
//! between value-optimal plans break toward lower planned cost, then
//! fewer total invocations, then allocation to lexicographically smaller
//! tool ids.

use std::collections::BTreeMap;
use std::ops::Add;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::ToolEstimate;
use crate::rat::{format_rat, rat_from_f64, rat_uint, serde_rat, Rat};
use crate::types::{BudgetLedger, QueryId, ToolId, ToolSpec};
use crate::Result;

/// Upper bound on DP table entries (items × capacity), guarding against
/// quantization configs that would explode memory.
const MAX_TABLE_ENTRIES: u64 = 50_000_000;

/// Parameters of the cost-quantization scheme.
///
/// With `lambda = (max_steps + 1) / epsilon`, scaled costs `ceil(lambda*c)`
/// and scaled budget `floor(lambda*R)` keep the remaining-budget error of
/// any trajectory of at most `max_steps` invocations below `epsilon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    #[serde(with = "serde_rat")]
    pub epsilon: Rat,
    /// A-priori bound on episode length, interceptions included.
    pub max_steps: u32,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        QuantizationConfig {
            epsilon: Rat::new(1.into(), 2.into()),
            max_steps: 12,
        }
    }
}

impl QuantizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= Rat::zero() {
            return Err(Error::invalid_input("epsilon must be positive"));
        }
        if self.max_steps < 1 {
            return Err(Error::invalid_input("max_steps must be at least 1"));
        }
        Ok(())
    }

    /// The quantization scale.
    pub fn lambda(&self) -> Rat {
        rat_uint(u64::from(self.max_steps) + 1) / &self.epsilon
    }
}

/// Integer costs and budget produced by [`quantize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantized {
    /// `ceil(lambda * c_i)` per input cost.
    pub scaled_costs: Vec<u64>,
    /// `floor(lambda * budget)`.
    pub scaled_budget: u64,
    pub lambda: Rat,
}

impl Quantized {
    /// Quantized cost in original units: `scaled / lambda >= true cost`.
    pub fn cost_units(&self, scaled: u64) -> Rat {
        rat_uint(scaled) / &self.lambda
    }

    /// Quantized budget in original units: `<= true budget`.
    pub fn budget_units(&self) -> Rat {
        rat_uint(self.scaled_budget) / &self.lambda
    }
}

fn to_u64(value: &BigInt, what: &str) -> Result<u64> {
    value
        .to_u64()
        .ok_or_else(|| Error::QuantizationOverflow(format!("{what} = {value} exceeds u64")))
}

/// Convert positive real costs and budget into integers at scale
/// `lambda = (max_steps + 1) / epsilon`.
///
/// Rounding is conservative: each scaled cost rounds up and the budget
/// rounds down, so a plan feasible after quantization is feasible in
/// reality.
pub fn quantize(costs: &[Rat], budget_r: &Rat, cfg: &QuantizationConfig) -> Result<Quantized> {
    cfg.validate()?;
    if budget_r <= &Rat::zero() {
        return Err(Error::invalid_input("budget must be positive"));
    }
    let lambda = cfg.lambda();
    let mut scaled_costs = Vec::with_capacity(costs.len());
    for c in costs {
        if c <= &Rat::zero() {
            return Err(Error::invalid_input(format!(
                "cost must be positive, got {}",
                format_rat(c)
            )));
        }
        let scaled = (c * &lambda).ceil().to_integer();
        scaled_costs.push(to_u64(&scaled, "scaled cost")?);
    }
    let scaled_budget = (budget_r * &lambda).floor().to_integer();
    debug_assert!(!scaled_budget.is_negative());
    let scaled_budget = to_u64(&scaled_budget, "scaled budget")?;
    Ok(Quantized {
        scaled_costs,
        scaled_budget,
        lambda,
    })
}

/// One plannable tool: integer cost, exact value, frequency cap.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanItem {
    pub tool_id: ToolId,
    /// Quantized per-invocation cost, at least 1.
    pub cost: u64,
    /// Expected value per invocation, in [0, 1].
    pub value: Rat,
    /// Maximum allowed invocations (already floored).
    pub max_freq: u32,
}

/// A bounded-knapsack instance over tools.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    /// Integer budget capacity.
    pub capacity: u64,
    pub items: Vec<PlanItem>,
}

impl PlanProblem {
    pub fn new(capacity: u64, items: Vec<PlanItem>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for item in &items {
            if item.cost < 1 {
                return Err(Error::invalid_input(format!(
                    "item {} has zero cost",
                    item.tool_id
                )));
            }
            if item.value < Rat::zero() || item.value > Rat::one() {
                return Err(Error::invalid_input(format!(
                    "item {} has value outside [0, 1]",
                    item.tool_id
                )));
            }
            if seen.insert(item.tool_id.clone(), ()).is_some() {
                return Err(Error::invalid_input(format!(
                    "duplicate plan item {}",
                    item.tool_id
                )));
            }
        }
        let entries = (items.len() as u64).saturating_mul(capacity.saturating_add(1));
        if entries > MAX_TABLE_ENTRIES {
            return Err(Error::invalid_input(format!(
                "plan problem too large: {} table entries (limit {MAX_TABLE_ENTRIES}); \
                 use a coarser quantization",
                entries
            )));
        }
        Ok(PlanProblem { capacity, items })
    }
}

/// Per-tool allowed frequencies with the plan's exact total value and
/// integer planned cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Frequency per tool; every item appears, zeros included.
    pub frequencies: BTreeMap<ToolId, u32>,
    /// Exact sum of `frequency * value` over all tools.
    pub total_value: Rat,
    /// Sum of `frequency * cost` in quantized units.
    pub planned_cost: u64,
}

impl Plan {
    pub fn empty() -> Self {
        Plan {
            frequencies: BTreeMap::new(),
            total_value: Rat::zero(),
            planned_cost: 0,
        }
    }

    pub fn frequency(&self, tool_id: &ToolId) -> u32 {
        self.frequencies.get(tool_id).copied().unwrap_or(0)
    }

    /// Total planned invocations.
    pub fn invocations(&self) -> u64 {
        self.frequencies.values().map(|&f| u64::from(f)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.values().all(|&f| f == 0)
    }
}

/// DP cell: maximize value, then minimize invocations.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CellKey<T> {
    value: T,
    invocations: u64,
}

impl<T: Ord> CellKey<T> {
    fn at_least(&self, other: &Self) -> bool {
        match self.value.cmp(&other.value) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.invocations <= other.invocations,
        }
    }
}

/// Row-by-row bounded-knapsack DP with per-cell decision records.
///
/// `items` must already be in DP row order; returns the final row and the
/// chosen multiplicity per (row, capacity) cell for traceback. On ties
/// the largest multiplicity is recorded.
fn dp_solve<T>(items: &[(u64, u32, T)], capacity: usize) -> (Vec<CellKey<T>>, Vec<u32>)
where
    T: Clone + Ord + Zero + for<'a> Add<&'a T, Output = T>,
{
    let width = capacity + 1;
    let mut row: Vec<CellKey<T>> = vec![
        CellKey {
            value: T::zero(),
            invocations: 0
        };
        width
    ];
    let mut decisions = vec![0u32; items.len() * width];
    for (i, (cost, max_freq, value)) in items.iter().enumerate() {
        let prev = row.clone();
        let cost = *cost as usize;
        for j in 0..width {
            let mut added = T::zero();
            for k in 1..=(*max_freq as usize) {
                let Some(rest) = j.checked_sub(k * cost) else {
                    break;
                };
                added = added + value;
                let cand = CellKey {
                    value: prev[rest].value.clone() + &added,
                    invocations: prev[rest].invocations + k as u64,
                };
                if cand.at_least(&row[j]) {
                    row[j] = cand;
                    decisions[i * width + j] = k as u32;
                }
            }
        }
    }
    (row, decisions)
}

/// Solve the bounded-knapsack plan problem exactly.
///
/// The DP reads the previous item's row in its transition, so no tool can
/// exceed its own frequency bound by compounding. Traceback starts from
/// the cheapest capacity cell achieving the maximum value.
pub fn solve(problem: &PlanProblem) -> Plan {
    let capacity = problem.capacity as usize;
    let n = problem.items.len();
    if n == 0 || capacity == 0 {
        let frequencies = problem
            .items
            .iter()
            .map(|it| (it.tool_id.clone(), 0))
            .collect();
        return Plan {
            frequencies,
            total_value: Rat::zero(),
            planned_cost: 0,
        };
    }

    // Rows run in descending tool-id order so traceback visits smaller ids
    // first and can grant them the largest tying multiplicity.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| problem.items[b].tool_id.cmp(&problem.items[a].tool_id));

    // Scale the rational values to integers over a common denominator.
    let denom_lcm = problem
        .items
        .iter()
        .fold(BigInt::one(), |acc, it| acc.lcm(it.value.denom()));
    let scaled_big: Vec<BigInt> = problem
        .items
        .iter()
        .map(|it| it.value.numer() * (&denom_lcm / it.value.denom()))
        .collect();

    let effective_freq = |idx: usize| -> u32 {
        let it = &problem.items[idx];
        let by_budget = problem.capacity / it.cost;
        u64::from(it.max_freq).min(by_budget) as u32
    };

    // Prefer machine integers when the largest possible total fits.
    let max_total: BigInt = order
        .iter()
        .map(|&idx| &scaled_big[idx] * BigInt::from(effective_freq(idx)))
        .sum();
    let (final_row_value, decisions): (Vec<(BigInt, u64)>, Vec<u32>) =
        if let Some(_fits) = max_total.to_u128() {
            let items: Vec<(u64, u32, u128)> = order
                .iter()
                .map(|&idx| {
                    (
                        problem.items[idx].cost,
                        effective_freq(idx),
                        scaled_big[idx].to_u128().expect("bounded by max_total"),
                    )
                })
                .collect();
            let (row, decisions) = dp_solve(&items, capacity);
            (
                row.into_iter()
                    .map(|c| (BigInt::from(c.value), c.invocations))
                    .collect(),
                decisions,
            )
        } else {
            let items: Vec<(u64, u32, BigInt)> = order
                .iter()
                .map(|&idx| {
                    (
                        problem.items[idx].cost,
                        effective_freq(idx),
                        scaled_big[idx].clone(),
                    )
                })
                .collect();
            let (row, decisions) = dp_solve(&items, capacity);
            (
                row.into_iter().map(|c| (c.value, c.invocations)).collect(),
                decisions,
            )
        };

    // Best value overall, then the smallest capacity cell achieving it.
    let best_value = final_row_value
        .iter()
        .map(|(v, _)| v)
        .max()
        .cloned()
        .unwrap_or_else(BigInt::zero);
    let start = final_row_value
        .iter()
        .position(|(v, _)| *v == best_value)
        .unwrap_or(0);

    let width = capacity + 1;
    let mut freq_by_row = vec![0u32; n];
    let mut j = start;
    for i in (0..n).rev() {
        let k = decisions[i * width + j];
        freq_by_row[i] = k;
        j -= k as usize * problem.items[order[i]].cost as usize;
    }
    debug_assert_eq!(j, 0);

    let mut frequencies = BTreeMap::new();
    let mut total_value = Rat::zero();
    let mut planned_cost = 0u64;
    for (row_idx, &item_idx) in order.iter().enumerate() {
        let item = &problem.items[item_idx];
        let f = freq_by_row[row_idx];
        frequencies.insert(item.tool_id.clone(), f);
        total_value += &item.value * rat_uint(u64::from(f));
        planned_cost += u64::from(f) * item.cost;
    }
    assert!(planned_cost <= problem.capacity, "plan exceeds capacity");
    assert_eq!(planned_cost as usize, start, "traceback cost mismatch");
    Plan {
        frequencies,
        total_value,
        planned_cost,
    }
}

/// End-to-end planning configuration.
#[derive(Debug, Clone, Default)]
pub struct PlannerConfig {
    pub quantization: QuantizationConfig,
    /// Extra overhead charged for planning itself, added to the ledger
    /// overhead before computing capacity. Zero in simulation.
    pub planning_overhead: Rat,
}

/// Quantization metadata recorded alongside a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationInfo {
    #[serde(with = "serde_rat")]
    pub epsilon: Rat,
    pub max_steps: u32,
    #[serde(with = "serde_rat")]
    pub lambda: Rat,
}

/// A solved plan plus the quantization it was computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub plan: Plan,
    pub quantization: QuantizationInfo,
}

impl PlanResult {
    /// Planned cost in original cost units (conservative: `>=` true cost).
    pub fn planned_cost_units(&self) -> Rat {
        rat_uint(self.plan.planned_cost) / &self.quantization.lambda
    }

    pub fn to_record(&self, query_id: &QueryId) -> PlanRecord {
        PlanRecord {
            query_id: query_id.clone(),
            frequencies: self.plan.frequencies.clone(),
            total_value: self.plan.total_value.clone(),
            planned_cost: self.plan.planned_cost,
            quantization: self.quantization.clone(),
        }
    }
}

/// Wire format of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub query_id: QueryId,
    pub frequencies: BTreeMap<ToolId, u32>,
    #[serde(with = "serde_rat")]
    pub total_value: Rat,
    pub planned_cost: u64,
    pub quantization: QuantizationInfo,
}

impl PlanRecord {
    pub fn validate(&self) -> Result<()> {
        if self.quantization.lambda <= Rat::zero() || self.quantization.epsilon <= Rat::zero() {
            return Err(Error::invalid_input("quantization scale must be positive"));
        }
        if self.total_value < Rat::zero() {
            return Err(Error::invalid_input("total_value must be nonnegative"));
        }
        Ok(())
    }

    pub fn plan(&self) -> Plan {
        Plan {
            frequencies: self.frequencies.clone(),
            total_value: self.total_value.clone(),
            planned_cost: self.planned_cost,
        }
    }

    /// Planned cost in original cost units.
    pub fn planned_cost_units(&self) -> Rat {
        rat_uint(self.planned_cost) / &self.quantization.lambda
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let record: PlanRecord = serde_json::from_str(&raw)?;
        record.validate()?;
        Ok(record)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Produce a plan for one query from tool estimates and the episode ledger.
///
/// Frequency limits are floored here (the estimator keeps them real-valued
/// for reporting). Fails with a budget error when overhead already
/// consumes the whole budget.
pub fn make_plan(
    tools: &[ToolSpec],
    estimates: &[ToolEstimate],
    ledger: &BudgetLedger,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    cfg.quantization.validate()?;
    if cfg.planning_overhead < Rat::zero() {
        return Err(Error::invalid_input("planning overhead must be nonnegative"));
    }
    if tools.len() != estimates.len() {
        return Err(Error::invalid_input(format!(
            "{} tools but {} estimates",
            tools.len(),
            estimates.len()
        )));
    }
    let capacity_real = ledger.capacity() - &cfg.planning_overhead;
    if capacity_real <= Rat::zero() {
        return Err(Error::BudgetExhausted {
            capacity: format_rat(&capacity_real),
        });
    }

    let costs: Vec<Rat> = tools.iter().map(|t| t.cost.total()).collect();
    let quantized = quantize(&costs, &capacity_real, &cfg.quantization)?;

    let mut items = Vec::with_capacity(tools.len());
    for ((tool, estimate), &scaled_cost) in tools
        .iter()
        .zip(estimates)
        .zip(&quantized.scaled_costs)
    {
        if tool.id != estimate.tool_id {
            return Err(Error::invalid_input(format!(
                "estimate order mismatch: tool {} vs estimate {}",
                tool.id, estimate.tool_id
            )));
        }
        let max_freq = if estimate.freq_constraint >= f64::from(u32::MAX) {
            u32::MAX
        } else {
            estimate.freq_constraint.floor() as u32
        };
        let value = rat_from_f64(estimate.expected_value.clamp(0.0, 1.0))?;
        items.push(PlanItem {
            tool_id: tool.id.clone(),
            cost: scaled_cost,
            value,
            max_freq,
        });
    }

    let problem = PlanProblem::new(quantized.scaled_budget, items)?;
    let plan = solve(&problem);
    Ok(PlanResult {
        plan,
        quantization: QuantizationInfo {
            epsilon: cfg.quantization.epsilon.clone(),
            max_steps: cfg.quantization.max_steps,
            lambda: quantized.lambda,
        },
    })
}
