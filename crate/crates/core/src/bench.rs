//! Benchmark directories: reading and writing them, scoring candidate
//! analytics engines against their ground truth.
//!
//! ```text
//! <root>/cases.csv                      case_id,input,tags,expected_output,final_output
//! <root>/logs/<case>.log                one span per line
//! <root>/gt/summary.csv
//! <root>/gt/flows/<case>.flow
//! <root>/gt/failures/<case>.failures
//! <root>/candidates/<name>/summary.csv  same layout as gt/
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{
    compute_summary, extract_failures, parse_failures, read_summary_csv, summary_csv_string, write_failures,
    FailureRecord, SummaryRow,
};
use crate::error::{Error, Result};
use crate::flow::{discover_task_flow, parse_flow_file, write_flow_file, TaskFlowGraph};
use crate::ingest::load_trace_set;
use crate::par::{self, Execution};
use crate::tracegen::GeneratedCase;
use crate::variability::{graph_edit_distance, GedCostModel, DEFAULT_EXACT_BUDGET};

/// Relative tolerance for execution time and cost.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub case_id: String,
    pub input: String,
    pub tags: Vec<String>,
    pub expected: Option<f64>,
    pub final_output: Option<f64>,
    pub log_path: PathBuf,
    pub gt_flow: TaskFlowGraph,
    pub gt_summary: SummaryRow,
    pub gt_failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub root: PathBuf,
    pub cases: Vec<BenchCase>,
}

impl Benchmark {
    pub fn case(&self, id: &str) -> Option<&BenchCase> {
        self.cases.iter().find(|c| c.case_id == id)
    }
}

/// What an engine produced for one case; absent parts count as mismatches.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutput {
    pub case_id: String,
    pub summary: Option<SummaryRow>,
    pub flow: Option<TaskFlowGraph>,
    pub failures: Option<Vec<FailureRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseRow {
    case_id: String,
    input: String,
    tags: String,
    expected_output: Option<f64>,
    final_output: Option<f64>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_outputs(dir: &Path, summaries: &[SummaryRow], flows: &[(&str, &TaskFlowGraph)], failures: &[(&str, &[FailureRecord])]) -> Result<()> {
    write_file(&dir.join("summary.csv"), &summary_csv_string(summaries))?;
    for (id, flow) in flows {
        write_file(&dir.join("flows").join(format!("{id}.flow")), &write_flow_file(flow))?;
    }
    for (id, f) in failures {
        write_file(&dir.join("failures").join(format!("{id}.failures")), &write_failures(f))?;
    }
    Ok(())
}

/// Writes cases, logs and ground truth under `root`.
pub fn write_benchmark(root: &Path, cases: &[GeneratedCase]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cases {
        w.serialize(CaseRow {
            case_id: c.case_id.clone(),
            input: c.input.clone(),
            tags: c.tags.join(";"),
            expected_output: c.expected,
            final_output: c.final_output,
        })?;
        write_file(&root.join("logs").join(format!("{}.log", c.case_id)), &c.log_text())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(root, e.into_error()))?;
    write_file(&root.join("cases.csv"), &String::from_utf8(bytes).expect("csv output is utf-8"))?;
    let summaries: Vec<SummaryRow> = cases.iter().map(|c| c.gt_summary.clone()).collect();
    let flows: Vec<_> = cases.iter().map(|c| (c.case_id.as_str(), &c.gt_flow)).collect();
    let failures: Vec<_> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.gt_failures.as_slice()))
        .collect();
    write_outputs(&root.join("gt"), &summaries, &flows, &failures)
}

/// Writes a candidate's outputs under `root/candidates/<name>`.
pub fn write_candidate(root: &Path, name: &str, outputs: &[CandidateOutput]) -> Result<()> {
    let summaries: Vec<SummaryRow> = outputs.iter().filter_map(|o| o.summary.clone()).collect();
    let flows: Vec<_> = outputs
        .iter()
        .filter_map(|o| o.flow.as_ref().map(|f| (o.case_id.as_str(), f)))
        .collect();
    let failures: Vec<_> = outputs
        .iter()
        .filter_map(|o| o.failures.as_deref().map(|f| (o.case_id.as_str(), f)))
        .collect();
    write_outputs(&root.join("candidates").join(name), &summaries, &flows, &failures)
}

/// Loads a benchmark and cross-checks its ground truth.
pub fn load_benchmark(root: &Path) -> Result<Benchmark> {
    let cases_path = root.join("cases.csv");
    let text = read_file(&cases_path)?;
    let gt = root.join("gt");
    let summaries: HashMap<String, SummaryRow> = read_summary_csv(read_file(&gt.join("summary.csv"))?.as_bytes())?
        .into_iter()
        .map(|r| (r.case_id.clone(), r))
        .collect();
    let mut cases = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<CaseRow>() {
        let row = row?;
        let id = row.case_id.clone();
        let gt_summary = summaries.get(&id).cloned().ok_or_else(|| Error::InconsistentGt {
            case_id: id.clone(),
            message: "no ground-truth summary row".into(),
        })?;
        let gt_flow = parse_flow_file(&read_file(&gt.join("flows").join(format!("{id}.flow")))?)?;
        let gt_failures = parse_failures(&read_file(&gt.join("failures").join(format!("{id}.failures")))?)?;
        let case = BenchCase {
            log_path: root.join("logs").join(format!("{id}.log")),
            case_id: id,
            input: row.input,
            tags: row.tags.split(';').filter(|t| !t.is_empty()).map(str::to_string).collect(),
            expected: row.expected_output,
            final_output: row.final_output,
            gt_flow,
            gt_summary,
            gt_failures,
        };
        check_ground_truth(&case)?;
        if !case.log_path.exists() {
            return Err(Error::MissingFile(case.log_path));
        }
        cases.push(case);
    }
    Ok(Benchmark {
        root: root.to_path_buf(),
        cases,
    })
}

/// The ground-truth flow, summary and failure list of a case must agree.
pub fn check_ground_truth(case: &BenchCase) -> Result<()> {
    let bad = |message: String| {
        Err(Error::InconsistentGt {
            case_id: case.case_id.clone(),
            message,
        })
    };
    if let Err(m) = case.gt_summary.check() {
        return bad(m);
    }
    if case.gt_failures.len() as u64 != case.gt_summary.failures_total {
        return bad(format!(
            "{} failure records but failures_total = {}",
            case.gt_failures.len(),
            case.gt_summary.failures_total
        ));
    }
    let usage = case.gt_flow.total_usage();
    let s = &case.gt_summary;
    let same = usage.input_tokens == s.input_tokens
        && usage.output_tokens == s.output_tokens
        && usage.llm_calls == s.llm_calls
        && usage.tool_calls == s.tool_calls
        && close(usage.cost_usd, s.cost_usd, DEFAULT_TOLERANCE);
    if !same {
        return bad("flow root metrics do not add up to the summary totals".into());
    }
    Ok(())
}

/// Loads `root/candidates/<name>`. Missing per-case files leave that part
/// of the output absent.
pub fn load_candidate(bench: &Benchmark, name: &str) -> Result<Vec<CandidateOutput>> {
    let dir = bench.root.join("candidates").join(name);
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir));
    }
    let summary_path = dir.join("summary.csv");
    let mut summaries: HashMap<String, SummaryRow> = HashMap::new();
    if summary_path.exists() {
        for r in read_summary_csv(read_file(&summary_path)?.as_bytes())? {
            if bench.case(&r.case_id).is_none() {
                return Err(Error::UnknownCase(r.case_id));
            }
            summaries.insert(r.case_id.clone(), r);
        }
    }
    bench
        .cases
        .iter()
        .map(|c| {
            let flow_path = dir.join("flows").join(format!("{}.flow", c.case_id));
            let fail_path = dir.join("failures").join(format!("{}.failures", c.case_id));
            Ok(CandidateOutput {
                case_id: c.case_id.clone(),
                summary: summaries.remove(&c.case_id),
                flow: if flow_path.exists() { Some(parse_flow_file(&read_file(&flow_path)?)?) } else { None },
                failures: if fail_path.exists() { Some(parse_failures(&read_file(&fail_path)?)?) } else { None },
            })
        })
        .collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Integer columns must agree exactly; time and cost within `rel`.
pub fn compare_summary(candidate: &SummaryRow, gt: &SummaryRow, rel: f64) -> Vec<String> {
    let mut diffs = Vec::new();
    let mut int = |name: &str, a: u64, b: u64| {
        if a != b {
            diffs.push(format!("{name}: {a} vs {b}"));
        }
    };
    int("input_tokens", candidate.input_tokens, gt.input_tokens);
    int("output_tokens", candidate.output_tokens, gt.output_tokens);
    int("llm_calls", candidate.llm_calls, gt.llm_calls);
    int("tool_calls", candidate.tool_calls, gt.tool_calls);
    int("failures_total", candidate.failures_total, gt.failures_total);
    for (k, v) in &gt.failures_by_category {
        int(k.as_str(), candidate.failures_by_category.get(k).copied().unwrap_or(0), *v);
    }
    for (k, v) in &gt.failures_by_severity {
        int(k.as_str(), candidate.failures_by_severity.get(k).copied().unwrap_or(0), *v);
    }
    if candidate.happy_path != gt.happy_path {
        diffs.push(format!("happy_path: {} vs {}", candidate.happy_path, gt.happy_path));
    }
    if !close(candidate.execution_time_ns as f64, gt.execution_time_ns as f64, rel) {
        diffs.push(format!(
            "execution_time_ns: {} vs {}",
            candidate.execution_time_ns, gt.execution_time_ns
        ));
    }
    if !close(candidate.cost_usd, gt.cost_usd, rel) {
        diffs.push(format!("cost_usd: {} vs {}", candidate.cost_usd, gt.cost_usd));
    }
    diffs
}

fn words(text: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for w in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        *m.entry(w.to_lowercase()).or_default() += 1;
    }
    m
}

/// Multiset Jaccard similarity of the lowercase words of two messages.
pub fn message_similarity(a: &str, b: &str) -> f64 {
    let (wa, wb) = (words(a), words(b));
    let mut inter = 0;
    let mut union = 0;
    for k in wa.keys().chain(wb.keys().filter(|k| !wa.contains_key(*k))) {
        let (x, y) = (wa.get(k).copied().unwrap_or(0), wb.get(k).copied().unwrap_or(0));
        inter += x.min(y);
        union += x.max(y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairs failures greedily by descending message similarity, only within
/// a category, and divides the summed similarity of the pairs by the longer
/// list's length. Two empty lists score 1.
pub fn failure_list_similarity(candidate: &[FailureRecord], gt: &[FailureRecord]) -> f64 {
    let n = candidate.len().max(gt.len());
    if n == 0 {
        return 1.0;
    }
    let mut pairs = Vec::new();
    for (i, c) in candidate.iter().enumerate() {
        for (j, g) in gt.iter().enumerate().filter(|(_, g)| g.category == c.category) {
            pairs.push((message_similarity(&c.message, &g.message), i, j));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let (mut used_c, mut used_g) = (vec![false; candidate.len()], vec![false; gt.len()]);
    let mut total = 0.0;
    for (sim, i, j) in pairs {
        if !used_c[i] && !used_g[j] {
            used_c[i] = true;
            used_g[j] = true;
            total += sim;
        }
    }
    total / n as f64
}

/// Knobs for scoring a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    /// Relative tolerance on execution time and cost.
    pub tolerance: f64,
    pub costs: GedCostModel,
    pub ged_budget: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            tolerance: DEFAULT_TOLERANCE,
            costs: GedCostModel::default(),
            ged_budget: DEFAULT_EXACT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseEval {
    pub case_id: String,
    pub summary_match: bool,
    /// Absent when the candidate produced no flow for the case.
    pub flow_ged: Option<f64>,
    pub flow_ged_exact: bool,
    pub failure_similarity: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub candidate: String,
    pub summary_match_fraction: f64,
    pub per_case: Vec<CaseEval>,
    /// Mean over the cases that have a flow; 0 when none do.
    pub mean_flow_ged: f64,
    pub mean_failure_similarity: f64,
}

impl EvalReport {
    pub fn summary_matches(&self) -> usize {
        self.per_case.iter().filter(|c| c.summary_match).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "candidate: {}", self.candidate);
        let _ = writeln!(
            s,
            "summary_match_fraction: {:.4} ({}/{})",
            self.summary_match_fraction,
            self.summary_matches(),
            self.per_case.len()
        );
        let flows = self.per_case.iter().filter(|c| c.flow_ged.is_some()).count();
        let _ = writeln!(s, "mean_flow_ged: {:.4} over {flows} flows", self.mean_flow_ged);
        let _ = writeln!(s, "mean_failure_similarity: {:.4}", self.mean_failure_similarity);
        for c in self.per_case.iter().filter(|c| !c.notes.is_empty()) {
            let _ = writeln!(s, "  {}: {}", c.case_id, c.notes.join("; "));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,summary_match,flow_ged,flow_ged_exact,failure_similarity\n");
        for c in &self.per_case {
            let ged = c.flow_ged.map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.case_id, c.summary_match, ged, c.flow_ged_exact, c.failure_similarity
            );
        }
        s
    }
}

fn evaluate_case(case: &BenchCase, out: Option<&CandidateOutput>, opts: &ScoreOptions) -> CaseEval {
    let mut notes = Vec::new();
    if out.is_none() {
        notes.push("no output".into());
    }
    let summary_match = match out.and_then(|o| o.summary.as_ref()) {
        Some(s) => {
            let d = compare_summary(s, &case.gt_summary, opts.tolerance);
            notes.extend(d.iter().map(|d| format!("summary {d}")));
            d.is_empty()
        }
        None => false,
    };
    let (flow_ged, flow_ged_exact) = match out.and_then(|o| o.flow.as_ref()) {
        Some(f) => {
            let r = graph_edit_distance(f, &case.gt_flow, &opts.costs, opts.ged_budget);
            if r.distance > 0.0 {
                notes.push(format!("flow ged {}", r.distance));
            }
            (Some(r.distance), r.exact)
        }
        None => (None, false),
    };
    let failure_similarity = match out.and_then(|o| o.failures.as_ref()) {
        Some(f) => failure_list_similarity(f, &case.gt_failures),
        None => 0.0,
    };
    if failure_similarity < 1.0 {
        notes.push(format!("failure similarity {failure_similarity:.3}"));
    }
    CaseEval {
        case_id: case.case_id.clone(),
        summary_match,
        flow_ged,
        flow_ged_exact,
        failure_similarity,
        notes,
    }
}

/// Scores `outputs` against every benchmark case. Output for a case id the
/// benchmark does not know is an error; a case with no output scores as a
/// summary mismatch with no flow distance.
pub fn evaluate_candidate(
    bench: &Benchmark,
    name: &str,
    outputs: &[CandidateOutput],
    opts: &ScoreOptions,
    exec: Execution,
) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &CandidateOutput> = HashMap::new();
    for o in outputs {
        if bench.case(&o.case_id).is_none() {
            return Err(Error::UnknownCase(o.case_id.clone()));
        }
        by_id.insert(o.case_id.as_str(), o);
    }
    let per_case = par::map(exec, &bench.cases, |c| evaluate_case(c, by_id.get(c.case_id.as_str()).copied(), opts));
    let n = per_case.len().max(1) as f64;
    let geds: Vec<f64> = per_case.iter().filter_map(|c| c.flow_ged).collect();
    Ok(EvalReport {
        candidate: name.to_string(),
        summary_match_fraction: per_case.iter().filter(|c| c.summary_match).count() as f64 / n,
        mean_flow_ged: if geds.is_empty() { 0.0 } else { geds.iter().sum::<f64>() / geds.len() as f64 },
        mean_failure_similarity: per_case.iter().map(|c| c.failure_similarity).sum::<f64>() / n,
        per_case,
    })
}

/// Output of this crate's own analytics on one log.
pub fn analyze_log(case_id: &str, log_path: &Path) -> Result<CandidateOutput> {
    let text = read_file(log_path)?;
    let set = load_trace_set(text.lines())?;
    let (trace, _) = set.primary().ok_or(Error::EmptyInput)?;
    let flow = discover_task_flow(trace)?;
    Ok(CandidateOutput {
        case_id: case_id.to_string(),
        summary: Some(compute_summary(case_id, trace, &flow)),
        failures: Some(extract_failures(trace)),
        flow: Some(flow),
    })
}

/// Runs the engine on every log. A log the engine cannot analyze yields an
/// empty flow, zero metrics and no failures for that case.
pub fn run_engine_as_candidate(bench: &Benchmark, exec: Execution) -> Vec<CandidateOutput> {
    par::map(exec, &bench.cases, |c| {
        analyze_log(&c.case_id, &c.log_path).unwrap_or_else(|e| {
            log::warn!("{}: {e}", c.case_id);
            CandidateOutput {
                case_id: c.case_id.clone(),
                summary: Some(SummaryRow::empty(&c.case_id)),
                flow: Some(TaskFlowGraph::default()),
                failures: Some(Vec::new()),
            }
        })
    })
}
