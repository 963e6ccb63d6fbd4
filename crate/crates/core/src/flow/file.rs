//! The `.flow` document: a JSON object with a `nodes` array.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MetricBag, TaskFlowGraph, TaskNode, TaskStatus};
use crate::error::{Error, Result};
use crate::model::{Issue, Nanos};

#[derive(Serialize, Deserialize)]
struct FlowDoc {
    nodes: Vec<FlowNode>,
    #[serde(default, skip_serializing_if = "is_zero")]
    unattributed: MetricBag,
}

fn is_zero(bag: &MetricBag) -> bool {
    *bag == MetricBag::default()
}

#[derive(Serialize, Deserialize)]
struct FlowNode {
    task_id: String,
    label: String,
    status: TaskStatus,
    parent: Option<String>,
    #[serde(default)]
    depends_on: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_ns: Option<Nanos>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_ns: Option<Nanos>,
    #[serde(default)]
    metrics: MetricBag,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    issues: Vec<Issue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workflow: Option<String>,
}

pub fn write_flow_file(flow: &TaskFlowGraph) -> String {
    let doc = FlowDoc {
        nodes: flow
            .nodes
            .values()
            .map(|n| FlowNode {
                task_id: n.task_id.clone(),
                label: n.label.clone(),
                status: n.status,
                parent: n.parent.clone(),
                depends_on: n.depends_on.clone(),
                start_ns: n.start,
                end_ns: n.end,
                metrics: n.metrics,
                issues: n.issues.clone(),
                workflow: n.workflow.clone(),
            })
            .collect(),
        unattributed: flow.unattributed,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("flow serialization is infallible");
    text.push('\n');
    text
}

fn malformed(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::MalformedFlowFile {
        location: location.into(),
        message: message.into(),
    }
}

pub fn parse_flow_file(text: &str) -> Result<TaskFlowGraph> {
    let doc: FlowDoc = serde_json::from_str(text).map_err(|e| {
        malformed(format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let mut flow = TaskFlowGraph {
        unattributed: doc.unattributed,
        ..TaskFlowGraph::default()
    };
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, n) in doc.nodes.into_iter().enumerate() {
        let at = format!("nodes[{i}]");
        if n.task_id.is_empty() {
            return Err(malformed(at, "empty task_id"));
        }
        if let (Some(s), Some(e)) = (n.start_ns, n.end_ns) {
            if e < s {
                return Err(malformed(at, "end_ns precedes start_ns"));
            }
        }
        if index.insert(n.task_id.clone(), i).is_some() {
            return Err(malformed(at, format!("duplicate task `{}`", n.task_id)));
        }
        flow.nodes.insert(
            n.task_id.clone(),
            TaskNode {
                task_id: n.task_id,
                label: n.label,
                status: n.status,
                parent: n.parent,
                depends_on: n.depends_on,
                start: n.start_ns,
                end: n.end_ns,
                metrics: n.metrics,
                issues: n.issues,
                workflow: n.workflow,
            },
        );
    }
    for node in flow.nodes.values() {
        let at = || format!("nodes[{}]", index[&node.task_id]);
        if let Some(p) = &node.parent {
            if !flow.nodes.contains_key(p) {
                return Err(malformed(at(), format!("parent `{p}` is not a node")));
            }
        }
        if node.depends_on.contains(&node.task_id) {
            return Err(malformed(at(), "task depends on itself"));
        }
    }
    flow.check_structure()
        .map_err(|e| malformed("nodes", e.to_string()))?;
    flow.roots = flow
        .nodes
        .values()
        .filter(|n| n.parent.is_none())
        .map(|n| n.task_id.clone())
        .collect();
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FailureCategory, Severity};

    fn sample() -> TaskFlowGraph {
        let mut g = TaskFlowGraph::default();
        let mut a = TaskNode::new("A", "solve");
        a.status = TaskStatus::Completed;
        a.start = Some(3);
        a.end = Some(90);
        a.metrics = MetricBag {
            input_tokens: 120,
            output_tokens: 30,
            llm_calls: 2,
            tool_calls: 3,
            cost_usd: 0.1 + 0.2,
            duration_ns: 87,
        };
        let mut b = TaskNode::new("B", "add");
        b.parent = Some("A".into());
        b.issues.push(
            Issue::new(Severity::CriticalError, Some(FailureCategory::Validation), "bad value").on("B"),
        );
        let mut c = TaskNode::new("C", "mul");
        c.parent = Some("A".into());
        c.depends_on = vec!["B".into()];
        c.workflow = Some("wf".into());
        for n in [a, b, c] {
            g.nodes.insert(n.task_id.clone(), n);
        }
        g.roots = vec!["A".into()];
        g
    }

    #[test]
    fn roundtrip() {
        let g = sample();
        assert_eq!(parse_flow_file(&write_flow_file(&g)).unwrap(), g);
        let empty = TaskFlowGraph::default();
        assert_eq!(parse_flow_file(&write_flow_file(&empty)).unwrap(), empty);
    }

    #[test]
    fn absent_parent_is_malformed() {
        let text = r#"{"nodes":[{"task_id":"x","label":"x","status":"completed","parent":"nope"}]}"#;
        let err = parse_flow_file(text).unwrap_err();
        assert!(matches!(err, Error::MalformedFlowFile { ref location, .. } if location == "nodes[0]"), "{err}");
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_flow_file("{\"nodes\": [}").unwrap_err();
        assert!(matches!(err, Error::MalformedFlowFile { ref location, .. } if location.starts_with("line 1")));
    }

    #[test]
    fn cyclic_dependencies_are_malformed() {
        let text = r#"{"nodes":[
            {"task_id":"x","label":"x","status":"completed","parent":null,"depends_on":["y"]},
            {"task_id":"y","label":"y","status":"completed","parent":null,"depends_on":["x"]}]}"#;
        assert!(matches!(parse_flow_file(text), Err(Error::MalformedFlowFile { .. })));
    }
}
