//! Past tool usages with binary usefulness scores, indexed by tool.
//!
//! Each record is one historical invocation of a tool while resolving
//! some query, scored 0 (unhelpful) or 1 (helpful). Records are kept in
//! insertion order so weighted sums over them are reproducible.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::types::{Query, QueryId, ToolId};
use crate::Result;

/// One past tool usage: query, tool, parameters, result, and its score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageRecord {
    pub query: Query,
    pub tool_id: ToolId,
    pub params: String,
    pub result: String,
    /// Binary usefulness score: 0 unhelpful, 1 helpful.
    pub score: u8,
    /// How many times the tool was used while resolving this query.
    pub count_in_episode: u32,
}

impl UsageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.score > 1 {
            return Err(Error::invalid_record(format!(
                "score must be 0 or 1, got {}",
                self.score
            )));
        }
        if self.count_in_episode < 1 {
            return Err(Error::invalid_record(
                "count_in_episode must be at least 1",
            ));
        }
        Ok(())
    }
}

/// A usage awaiting a score.
#[derive(Debug, Clone, Copy)]
pub struct UsageView<'a> {
    pub query_text: &'a str,
    pub tool_id: &'a ToolId,
    pub params: &'a str,
    pub result: &'a str,
}

/// Pluggable binary usefulness judgment.
///
/// Returns `None` when this scorer cannot judge the usage (the
/// pass-through scorer relies on labels already present in the data).
pub trait UsefulnessScorer: Send + Sync {
    fn score(&self, usage: &UsageView<'_>) -> Option<u8>;
}

/// Uses only pre-assigned labels; never scores anything itself.
#[derive(Debug, Default, Clone)]
pub struct PassThroughScorer;

impl UsefulnessScorer for PassThroughScorer {
    fn score(&self, _usage: &UsageView<'_>) -> Option<u8> {
        None
    }
}

/// Flags empty results and results matching any error pattern as unhelpful.
#[derive(Debug, Clone)]
pub struct HeuristicScorer {
    /// Lowercase substrings that mark a result as unhelpful.
    pub patterns: Vec<String>,
}

impl Default for HeuristicScorer {
    fn default() -> Self {
        HeuristicScorer {
            patterns: ["error", "exception", "not found", "failed", "forbidden"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl UsefulnessScorer for HeuristicScorer {
    fn score(&self, usage: &UsageView<'_>) -> Option<u8> {
        if usage.result.trim().is_empty() {
            return Some(0);
        }
        let lower = usage.result.to_lowercase();
        if self.patterns.iter().any(|p| lower.contains(p.as_str())) {
            Some(0)
        } else {
            Some(1)
        }
    }
}

/// Score an unlabeled usage, failing if the scorer cannot judge it.
pub fn score_usage(usage: &UsageView<'_>, scorer: &dyn UsefulnessScorer) -> Result<u8> {
    scorer.score(usage).ok_or_else(|| {
        Error::invalid_record(format!(
            "record for tool {} has no score and the scorer cannot assign one",
            usage.tool_id
        ))
    })
}

/// Usage records indexed by tool, with per-(query, tool) count validation.
#[derive(Debug, Clone, Default)]
pub struct ExperienceStore {
    records: Vec<UsageRecord>,
    by_tool: BTreeMap<ToolId, Vec<usize>>,
    episode_counts: BTreeMap<(QueryId, ToolId), u32>,
}

impl ExperienceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a record, keeping the tool index and count table consistent.
    ///
    /// Records sharing a (query, tool) pair must agree on
    /// `count_in_episode`; a mismatch is a data error.
    pub fn ingest(&mut self, record: UsageRecord) -> Result<()> {
        record.validate()?;
        let key = (record.query.id.clone(), record.tool_id.clone());
        if let Some(&existing) = self.episode_counts.get(&key) {
            if existing != record.count_in_episode {
                return Err(Error::InconsistentEpisodeCount {
                    query_id: key.0 .0,
                    tool_id: key.1 .0,
                    existing,
                    incoming: record.count_in_episode,
                });
            }
        } else {
            self.episode_counts.insert(key, record.count_in_episode);
        }
        self.by_tool
            .entry(record.tool_id.clone())
            .or_default()
            .push(self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// All records for one tool, in insertion order.
    pub fn for_tool<'a>(&'a self, tool_id: &ToolId) -> impl Iterator<Item = &'a UsageRecord> {
        self.by_tool
            .get(tool_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(|&i| &self.records[i])
    }

    pub fn has_tool(&self, tool_id: &ToolId) -> bool {
        self.by_tool.contains_key(tool_id)
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tool_ids(&self) -> impl Iterator<Item = &ToolId> {
        self.by_tool.keys()
    }

    /// Load a JSONL file, applying `scorer` to any line without a score.
    pub fn read_jsonl(path: &Path, scorer: &dyn UsefulnessScorer) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut store = ExperienceStore::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RecordLine = serde_json::from_str(&line).map_err(|e| {
                Error::invalid_record(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            store.ingest(raw.into_record(scorer)?)?;
        }
        Ok(store)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::fs::File::create(path)?;
        for r in &self.records {
            let line = RecordLine::from_record(r);
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }
}

/// Wire format of one experience line.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    query_id: String,
    query_text: String,
    tool_id: String,
    params: String,
    result: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<u8>,
    count_in_episode: u32,
}

impl RecordLine {
    fn into_record(self, scorer: &dyn UsefulnessScorer) -> Result<UsageRecord> {
        let tool_id = ToolId::new(self.tool_id);
        let score = match self.score {
            Some(s) => s,
            None => score_usage(
                &UsageView {
                    query_text: &self.query_text,
                    tool_id: &tool_id,
                    params: &self.params,
                    result: &self.result,
                },
                scorer,
            )?,
        };
        Ok(UsageRecord {
            query: Query::new(self.query_id, self.query_text)?,
            tool_id,
            params: self.params,
            result: self.result,
            score,
            count_in_episode: self.count_in_episode,
        })
    }

    fn from_record(r: &UsageRecord) -> Self {
        RecordLine {
            query_id: r.query.id.0.clone(),
            query_text: r.query.text.clone(),
            tool_id: r.tool_id.0.clone(),
            params: r.params.clone(),
            result: r.result.clone(),
            score: Some(r.score),
            count_in_episode: r.count_in_episode,
        }
    }
}
