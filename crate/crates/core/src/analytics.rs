//! Per-trace metrics, failure extraction and optimization hints.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{TaskFlowGraph, TaskNode};
use crate::model::{attr, FailureCategory, Nanos, Severity, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub category: FailureCategory,
    pub severity: Severity,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

/// Failure severities tracked in summary rows.
pub const FAILURE_SEVERITIES: [Severity; 2] = [Severity::CriticalError, Severity::Warning];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub case_id: String,
    pub execution_time_ns: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_calls: u64,
    pub tool_calls: u64,
    pub cost_usd: f64,
    pub failures_total: u64,
    /// Always holds all four categories.
    pub failures_by_category: BTreeMap<FailureCategory, u64>,
    /// Always holds `critical_error` and `warning`.
    pub failures_by_severity: BTreeMap<Severity, u64>,
    pub happy_path: bool,
}

impl SummaryRow {
    /// A row with zero metrics and no failures.
    pub fn empty(case_id: impl Into<String>) -> Self {
        SummaryRow {
            case_id: case_id.into(),
            execution_time_ns: 0,
            input_tokens: 0,
            output_tokens: 0,
            llm_calls: 0,
            tool_calls: 0,
            cost_usd: 0.0,
            failures_total: 0,
            failures_by_category: FailureCategory::ALL.iter().map(|&c| (c, 0)).collect(),
            failures_by_severity: FAILURE_SEVERITIES.iter().map(|&s| (s, 0)).collect(),
            happy_path: true,
        }
    }

    /// Replaces the failure counts with those of `failures`.
    pub fn set_failures(&mut self, failures: &[FailureRecord]) {
        self.failures_by_category = FailureCategory::ALL.iter().map(|&c| (c, 0)).collect();
        self.failures_by_severity = FAILURE_SEVERITIES.iter().map(|&s| (s, 0)).collect();
        for f in failures {
            *self.failures_by_category.entry(f.category).or_default() += 1;
            *self.failures_by_severity.entry(f.severity).or_default() += 1;
        }
        self.failures_total = failures.len() as u64;
        self.happy_path = failures.is_empty();
    }

    /// Checks the counting invariants of a row.
    pub fn check(&self) -> std::result::Result<(), String> {
        let by_cat: u64 = self.failures_by_category.values().sum();
        let by_sev: u64 = self.failures_by_severity.values().sum();
        if by_cat != self.failures_total || by_sev != self.failures_total {
            return Err(format!(
                "failures_total {} but categories sum to {by_cat} and severities to {by_sev}",
                self.failures_total
            ));
        }
        if self.happy_path != (self.failures_total == 0) {
            return Err(format!(
                "happy_path is {} with {} failures",
                self.happy_path, self.failures_total
            ));
        }
        Ok(())
    }
}

/// Optional cost estimation for spans that carry tokens but no `cost.usd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPricing {
    pub usd_per_input_token: f64,
    pub usd_per_output_token: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SummaryOptions {
    /// Off by default: only explicit `cost.usd` attributes count.
    pub pricing: Option<TokenPricing>,
}

pub fn compute_summary(case_id: &str, trace: &Trace, flow: &TaskFlowGraph) -> SummaryRow {
    compute_summary_with(case_id, trace, flow, &SummaryOptions::default())
}

pub fn compute_summary_with(
    case_id: &str,
    trace: &Trace,
    flow: &TaskFlowGraph,
    opts: &SummaryOptions,
) -> SummaryRow {
    let mut row = SummaryRow::empty(case_id);
    let start = trace.spans.iter().map(|s| s.start).min();
    let end = trace.spans.iter().map(|s| s.end).max();
    if let (Some(s), Some(e)) = (start, end) {
        row.execution_time_ns = e.saturating_sub(s);
    }
    let usage = flow.total_usage();
    row.input_tokens = usage.input_tokens;
    row.output_tokens = usage.output_tokens;
    row.llm_calls = usage.llm_calls;
    row.tool_calls = usage.tool_calls;
    row.cost_usd = usage.cost_usd;
    if let Some(p) = opts.pricing {
        for span in trace.spans.iter().filter(|s| s.attr(attr::COST_USD).is_none()) {
            row.cost_usd += span.count(attr::INPUT_TOKENS) as f64 * p.usd_per_input_token
                + span.count(attr::OUTPUT_TOKENS) as f64 * p.usd_per_output_token;
        }
    }
    row.set_failures(&extract_failures(trace));
    row
}

pub const UNCATEGORIZED_PREFIX: &str = "uncategorized: ";

/// Every issue at warning severity or above, ordered by (event time, span id).
/// Issues without a category are reported as validation failures.
pub fn extract_failures(trace: &Trace) -> Vec<FailureRecord> {
    let mut found: Vec<((Nanos, &str, usize, usize), FailureRecord)> = Vec::new();
    for span in &trace.spans {
        for (ei, ev) in span.events.iter().enumerate() {
            for (ii, issue) in ev.issues.iter().enumerate() {
                if !issue.severity.is_failure() {
                    continue;
                }
                let (category, message) = match issue.category {
                    Some(c) => (c, issue.message.clone()),
                    None => (
                        FailureCategory::Validation,
                        format!("{UNCATEGORIZED_PREFIX}{}", issue.message),
                    ),
                };
                let task_id = issue
                    .entity_id
                    .clone()
                    .or_else(|| ev.tasks().next().map(|t| t.id.clone()));
                found.push((
                    (ev.time, span.span_id.as_str(), ei, ii),
                    FailureRecord {
                        category,
                        severity: issue.severity,
                        message,
                        task_id,
                    },
                ));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    found.into_iter().map(|(_, f)| f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationKind {
    ParallelExecution,
    Decomposition,
    Merging,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: RecommendationKind,
    pub target_tasks: Vec<String>,
    pub rationale: String,
    /// Zero when no estimate applies.
    pub estimated_latency_gain_ns: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct RecommendConfig {
    pub decompose_failure_threshold: usize,
    pub merge_duration_ceiling_ns: Nanos,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            decompose_failure_threshold: 2,
            merge_duration_ceiling_ns: 10_000_000,
        }
    }
}

fn sibling_groups(flow: &TaskFlowGraph) -> Vec<Vec<&TaskNode>> {
    let mut groups: BTreeMap<Option<&str>, Vec<&TaskNode>> = BTreeMap::new();
    for node in flow.nodes.values() {
        groups.entry(node.parent.as_deref()).or_default().push(node);
    }
    groups.into_values().collect()
}

/// `reach[i][j]`: a dependency path leads from sibling i to sibling j.
fn sibling_reachability(group: &[&TaskNode]) -> Vec<Vec<bool>> {
    let n = group.len();
    let index: BTreeMap<&str, usize> = group
        .iter()
        .enumerate()
        .map(|(i, t)| (t.task_id.as_str(), i))
        .collect();
    let mut reach = vec![vec![false; n]; n];
    for (j, node) in group.iter().enumerate() {
        for dep in &node.depends_on {
            if let Some(&i) = index.get(dep.as_str()) {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

fn disjoint(a: &TaskNode, b: &TaskNode) -> bool {
    match (a.start, a.end, b.start, b.end) {
        (Some(s1), Some(e1), Some(s2), Some(e2)) => e1 < s2 || e2 < s1,
        _ => false,
    }
}

/// Maximal cliques (Bron–Kerbosch with pivoting) of size at least two.
fn maximal_cliques(adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    fn expand(
        adj: &[Vec<bool>],
        r: &mut Vec<usize>,
        mut p: BTreeSet<usize>,
        mut x: BTreeSet<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() && x.is_empty() {
            if r.len() >= 2 {
                let mut c = r.clone();
                c.sort_unstable();
                out.push(c);
            }
            return;
        }
        let pivot = p
            .iter()
            .chain(x.iter())
            .copied()
            .max_by_key(|&u| (p.iter().filter(|&&v| adj[u][v]).count(), std::cmp::Reverse(u)))
            .expect("p or x is non-empty");
        let candidates: Vec<usize> = p.iter().copied().filter(|&v| !adj[pivot][v]).collect();
        for v in candidates {
            r.push(v);
            let np = p.iter().copied().filter(|&u| adj[v][u]).collect();
            let nx = x.iter().copied().filter(|&u| adj[v][u]).collect();
            expand(adj, r, np, nx, out);
            r.pop();
            p.remove(&v);
            x.insert(v);
        }
    }
    let mut out = Vec::new();
    let all = (0..adj.len()).collect();
    expand(adj, &mut Vec::new(), all, BTreeSet::new(), &mut out);
    out.sort();
    out
}

/// Static optimization hints: parallel execution for independent siblings
/// that ran one after another, decomposition for failure-prone tasks and
/// merging for short repeated siblings.
pub fn recommend(flow: &TaskFlowGraph, config: &RecommendConfig) -> Vec<Recommendation> {
    let mut recs = Vec::new();
    for group in sibling_groups(flow) {
        let reach = sibling_reachability(&group);
        let n = group.len();
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                adj[i][j] = i != j
                    && !reach[i][j]
                    && !reach[j][i]
                    && disjoint(group[i], group[j]);
            }
        }
        for clique in maximal_cliques(&adj) {
            let durations: Vec<Nanos> = clique
                .iter()
                .map(|&i| group[i].duration().unwrap_or(0))
                .collect();
            let total: Nanos = durations.iter().sum();
            let longest = durations.iter().copied().max().unwrap_or(0);
            let targets: Vec<String> = clique.iter().map(|&i| group[i].task_id.clone()).collect();
            recs.push(Recommendation {
                kind: RecommendationKind::ParallelExecution,
                rationale: format!(
                    "{} independent sibling tasks ran sequentially for {total} ns; concurrently they need {longest} ns",
                    targets.len()
                ),
                target_tasks: targets,
                estimated_latency_gain_ns: total - longest,
            });
        }

        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (group[i], group[j]);
                if a.label != b.label {
                    continue;
                }
                if let (Some(da), Some(db)) = (a.duration(), b.duration()) {
                    if da + db < config.merge_duration_ceiling_ns {
                        recs.push(Recommendation {
                            kind: RecommendationKind::Merging,
                            target_tasks: vec![a.task_id.clone(), b.task_id.clone()],
                            rationale: format!(
                                "sibling `{}` tasks take {} ns together, below the {} ns ceiling",
                                a.label,
                                da + db,
                                config.merge_duration_ceiling_ns
                            ),
                            estimated_latency_gain_ns: 0,
                        });
                    }
                }
            }
        }
    }
    for node in flow.nodes.values() {
        let failures = node.failure_count();
        if failures >= config.decompose_failure_threshold {
            recs.push(Recommendation {
                kind: RecommendationKind::Decomposition,
                target_tasks: vec![node.task_id.clone()],
                rationale: format!(
                    "task `{}` recorded {failures} failures (threshold {})",
                    node.task_id, config.decompose_failure_threshold
                ),
                estimated_latency_gain_ns: 0,
            });
        }
    }
    recs.sort_by(|a, b| (a.kind, &a.target_tasks).cmp(&(b.kind, &b.target_tasks)));
    recs
}

// ---- file formats ----

pub const SUMMARY_HEADER: [&str; 15] = [
    "case_id",
    "execution_time_ns",
    "input_tokens",
    "output_tokens",
    "llm_calls",
    "tool_calls",
    "cost_usd",
    "failures_total",
    "instruction_violation",
    "incorrect_input",
    "validation",
    "validator",
    "critical_error",
    "warning",
    "happy_path",
];

pub fn write_summary_csv<W: io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![
            r.case_id.clone(),
            r.execution_time_ns.to_string(),
            r.input_tokens.to_string(),
            r.output_tokens.to_string(),
            r.llm_calls.to_string(),
            r.tool_calls.to_string(),
            r.cost_usd.to_string(),
            r.failures_total.to_string(),
        ];
        for c in FailureCategory::ALL {
            rec.push(r.failures_by_category.get(c).copied().unwrap_or(0).to_string());
        }
        for s in FAILURE_SEVERITIES {
            rec.push(r.failures_by_severity.get(&s).copied().unwrap_or(0).to_string());
        }
        rec.push(r.happy_path.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn summary_csv_string(rows: &[SummaryRow]) -> String {
    let mut buf = Vec::new();
    write_summary_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_summary_csv<R: io::Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(SUMMARY_HEADER.iter().copied()) {
        return Err(Error::InvalidRecord(format!(
            "summary header mismatch: expected {}",
            SUMMARY_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: usize| {
            Error::InvalidRecord(format!(
                "summary row {}: bad `{}` value `{}`",
                line + 1,
                SUMMARY_HEADER[col],
                &rec[col]
            ))
        };
        let int = |col: usize| rec[col].trim().parse::<u64>().map_err(|_| bad(col));
        let mut row = SummaryRow::empty(&rec[0]);
        row.execution_time_ns = int(1)?;
        row.input_tokens = int(2)?;
        row.output_tokens = int(3)?;
        row.llm_calls = int(4)?;
        row.tool_calls = int(5)?;
        row.cost_usd = rec[6].trim().parse().map_err(|_| bad(6))?;
        row.failures_total = int(7)?;
        for (k, c) in FailureCategory::ALL.iter().enumerate() {
            row.failures_by_category.insert(*c, int(8 + k)?);
        }
        for (k, s) in FAILURE_SEVERITIES.iter().enumerate() {
            row.failures_by_severity.insert(*s, int(12 + k)?);
        }
        row.happy_path = rec[14].trim().parse().map_err(|_| bad(14))?;
        rows.push(row);
    }
    Ok(rows)
}

/// One JSON object per line; an empty file is an empty list.
pub fn write_failures(failures: &[FailureRecord]) -> String {
    let mut out = String::new();
    for f in failures {
        out.push_str(&serde_json::to_string(f).expect("failure serialization is infallible"));
        out.push('\n');
    }
    out
}

pub fn parse_failures(text: &str) -> Result<Vec<FailureRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: FailureRecord = serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: Some(i + 1),
                offset: e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            if rec.message.trim().is_empty() || !rec.severity.is_failure() {
                return Err(Error::InvalidRecord(format!(
                    "failure on line {} needs a message and warning-or-worse severity",
                    i + 1
                )));
            }
            Ok(rec)
        })
        .collect()
}

pub fn write_recommendations(recs: &[Recommendation]) -> String {
    let mut s = serde_json::to_string_pretty(recs).expect("recommendation serialization is infallible");
    s.push('\n');
    s
}
