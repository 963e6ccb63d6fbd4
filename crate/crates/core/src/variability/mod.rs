//! Cross-run variability: graph edit distance between flows, coefficient of
//! variation per performance dimension, and mean squared error of outputs.

pub mod ged;
mod stats;

use serde::{Deserialize, Serialize};

use crate::analytics::SummaryRow;
use crate::error::{Error, Result};
use crate::flow::TaskFlowGraph;
use crate::par::{self, Execution};

pub use ged::{graph_edit_distance, EditGraph, GedCostModel, GedResult, DEFAULT_EXACT_BUDGET};
pub use stats::{coefficient_of_variation, mse, CvResult, MissingOutputPenalty};

/// Unordered index pairs (i, j), i < j, in lexicographic order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

/// Every pairwise distance, in [`pairs`] order.
pub fn pairwise_ged(
    graphs: &[TaskFlowGraph],
    costs: &GedCostModel,
    budget: usize,
    exec: Execution,
) -> Vec<GedResult> {
    let edit: Vec<EditGraph> = graphs.iter().map(EditGraph::from_flow).collect();
    par::map(exec, &pairs(graphs.len()), |&(i, j)| {
        ged::edit_distance(&edit[i], &edit[j], costs, budget)
    })
}

/// Average edit distance over all C(n, 2) unordered pairs of runs.
pub fn mean_pairwise_ged(graphs: &[TaskFlowGraph], costs: &GedCostModel) -> Result<f64> {
    mean_pairwise_ged_with(graphs, costs, DEFAULT_EXACT_BUDGET, Execution::default())
}

pub fn mean_pairwise_ged_with(
    graphs: &[TaskFlowGraph],
    costs: &GedCostModel,
    budget: usize,
    exec: Execution,
) -> Result<f64> {
    if graphs.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: graphs.len(),
        });
    }
    let results = pairwise_ged(graphs, costs, budget, exec);
    // Summed in pair order so parallel and sequential runs agree bit for bit.
    let total: f64 = results.iter().map(|r| r.distance).sum();
    Ok(total / results.len() as f64)
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub flow: TaskFlowGraph,
    pub summary: SummaryRow,
    pub output: Option<f64>,
    pub expected: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VariabilityRunSet {
    pub runs: Vec<RunRecord>,
}

impl VariabilityRunSet {
    pub fn n(&self) -> usize {
        self.runs.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VariabilityOptions {
    pub costs: GedCostModel,
    pub budget: usize,
    pub penalty: MissingOutputPenalty,
    pub exec: Execution,
}

impl Default for VariabilityOptions {
    fn default() -> Self {
        VariabilityOptions {
            costs: GedCostModel::default(),
            budget: DEFAULT_EXACT_BUDGET,
            penalty: MissingOutputPenalty::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub runs: usize,
    pub cv_accuracy: CvResult,
    pub cv_cost: CvResult,
    pub cv_time: CvResult,
    pub cv_llm_calls: CvResult,
    /// Mean pairwise edit distance between run flows.
    pub flow_variability: f64,
    /// True when every pairwise distance came from the exact search.
    pub flow_variability_exact: bool,
    pub mse: f64,
}

pub const REPORT_HEADER: [&str; 8] = [
    "runs",
    "accuracy_cv_pct",
    "cost_cv_pct",
    "execution_time_cv_pct",
    "llm_calls_cv_pct",
    "flow_variability_ged",
    "flow_variability_exact",
    "mse",
];

impl VariabilityReport {
    /// One CSV row mirroring the accuracy / cost / time / LLM calls /
    /// variability columns; undefined CVs print as `undefined`.
    pub fn to_csv(&self) -> String {
        let cv = |c: &CvResult| c.value.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        format!(
            "{}\n{},{},{},{},{},{},{},{}\n",
            REPORT_HEADER.join(","),
            self.runs,
            cv(&self.cv_accuracy),
            cv(&self.cv_cost),
            cv(&self.cv_time),
            cv(&self.cv_llm_calls),
            self.flow_variability,
            self.flow_variability_exact,
            self.mse
        )
    }

    pub fn to_text(&self) -> String {
        let cv = |c: &CvResult| match c.value {
            Some(v) => format!("{v:.2}% (mean {}, std {})", c.mean, c.std),
            None => format!("undefined (mean {}, std {})", c.mean, c.std),
        };
        format!(
            "runs: {}\naccuracy CV: {}\ncost CV: {}\nexecution time CV: {}\nLLM calls CV: {}\nflow variability (mean pairwise GED{}): {}\nMSE: {}\n",
            self.runs,
            cv(&self.cv_accuracy),
            cv(&self.cv_cost),
            cv(&self.cv_time),
            cv(&self.cv_llm_calls),
            if self.flow_variability_exact { "" } else { ", upper bound" },
            self.flow_variability,
            self.mse
        )
    }
}

pub fn run_variability(runset: &VariabilityRunSet, opts: &VariabilityOptions) -> Result<VariabilityReport> {
    let n = runset.n();
    if n < 2 {
        return Err(Error::TooFewValues { needed: 2, got: n });
    }
    let errors: Vec<f64> = runset
        .runs
        .iter()
        .map(|r| opts.penalty.squared_error(r.output, r.expected))
        .collect();
    let column = |f: fn(&SummaryRow) -> f64| -> Vec<f64> { runset.runs.iter().map(|r| f(&r.summary)).collect() };
    let flows: Vec<TaskFlowGraph> = runset.runs.iter().map(|r| r.flow.clone()).collect();
    let geds = pairwise_ged(&flows, &opts.costs, opts.budget, opts.exec);
    let flow_variability = geds.iter().map(|g| g.distance).sum::<f64>() / geds.len() as f64;
    Ok(VariabilityReport {
        runs: n,
        cv_accuracy: coefficient_of_variation(&errors)?,
        cv_cost: coefficient_of_variation(&column(|s| s.cost_usd))?,
        cv_time: coefficient_of_variation(&column(|s| s.execution_time_ns as f64))?,
        cv_llm_calls: coefficient_of_variation(&column(|s| s.llm_calls as f64))?,
        flow_variability,
        flow_variability_exact: geds.iter().all(|g| g.exact),
        mse: errors.iter().sum::<f64>() / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::TaskNode;

    fn chain(labels: &[&str]) -> TaskFlowGraph {
        let mut g = TaskFlowGraph::default();
        for (i, l) in labels.iter().enumerate() {
            let mut n = TaskNode::new(format!("t{i}"), *l);
            if i > 0 {
                n.parent = Some(format!("t{}", i - 1));
            }
            g.nodes.insert(n.task_id.clone(), n);
        }
        g.finalize(&Default::default());
        g
    }

    #[test]
    fn pair_count() {
        assert_eq!(pairs(5).len(), 10);
        assert_eq!(pairs(2), [(0, 1)]);
    }

    #[test]
    fn identical_runs_have_zero_variability() {
        for n in 2..=6 {
            let graphs = vec![chain(&["a", "b", "c"]); n];
            assert_eq!(mean_pairwise_ged(&graphs, &GedCostModel::default()).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_outlier() {
        let base = chain(&["a", "b", "c"]);
        let odd = chain(&["a", "b", "x"]);
        let costs = GedCostModel::default();
        let d = graph_edit_distance(&base, &odd, &costs, DEFAULT_EXACT_BUDGET).distance;
        assert_eq!(d, 1.0);
        let graphs = vec![base.clone(), base.clone(), odd, base.clone(), base];
        let m = mean_pairwise_ged(&graphs, &costs).unwrap();
        assert!((m - 4.0 * d / 10.0).abs() <= 1e-12 * m);
    }

    #[test]
    fn two_runs_give_their_distance() {
        let a = chain(&["a", "b"]);
        let b = chain(&["a"]);
        let costs = GedCostModel::default();
        assert_eq!(mean_pairwise_ged(&[a, b], &costs).unwrap(), 2.0);
        assert!(mean_pairwise_ged(&[chain(&["a"])], &costs).is_err());
    }

    fn run(cost: f64, time: u64, calls: u64, output: Option<f64>) -> RunRecord {
        let mut summary = SummaryRow::empty("c");
        summary.cost_usd = cost;
        summary.execution_time_ns = time;
        summary.llm_calls = calls;
        RunRecord {
            flow: chain(&["a", "b"]),
            summary,
            output,
            expected: 2.0,
        }
    }

    #[test]
    fn identical_runs_report_zero() {
        let set = VariabilityRunSet {
            runs: vec![run(0.5, 100, 3, Some(2.0)); 5],
        };
        let r = run_variability(&set, &VariabilityOptions::default()).unwrap();
        for cv in [r.cv_accuracy, r.cv_cost, r.cv_time, r.cv_llm_calls] {
            assert_eq!(cv.value, Some(0.0));
        }
        assert_eq!(r.flow_variability, 0.0);
        assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn only_cost_varies() {
        let set = VariabilityRunSet {
            runs: vec![run(0.5, 100, 3, Some(2.0)), run(0.7, 100, 3, Some(2.0)), run(0.6, 100, 3, Some(2.0))],
        };
        let r = run_variability(&set, &VariabilityOptions::default()).unwrap();
        assert!(r.cv_cost.value.unwrap() > 0.0);
        assert_eq!(r.cv_time.value, Some(0.0));
        assert_eq!(r.cv_llm_calls.value, Some(0.0));
    }

    #[test]
    fn accuracy_uses_squared_errors() {
        let set = VariabilityRunSet {
            runs: vec![run(0.5, 100, 3, Some(1.0)), run(0.5, 100, 3, Some(3.0)), run(0.5, 100, 3, None)],
        };
        let r = run_variability(&set, &VariabilityOptions::default()).unwrap();
        // errors 1, 1, 4
        assert_eq!(r.mse, 2.0);
        assert_eq!(r.cv_accuracy.mean, 2.0);
        assert!(r.to_csv().starts_with("runs,accuracy_cv_pct"));
    }
}
