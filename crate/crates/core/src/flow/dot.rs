use std::fmt::Write;

use super::TaskFlowGraph;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Renders the flow as Graphviz DOT. Decomposition edges are solid,
/// dependency edges dashed. Output is a pure function of the graph.
pub fn flow_to_dot(flow: &TaskFlowGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph task_flow {\n");
    out.push_str("    rankdir=TB;\n");
    out.push_str("    node [shape=box];\n");
    for node in flow.nodes.values() {
        let label = format!("{}\n{}", node.label, node.status);
        let _ = writeln!(out, "    {} [label={}];", quote(&node.task_id), quote(&label));
    }
    for (parent, child) in flow.decomposition_edges() {
        let _ = writeln!(out, "    {} -> {} [style=solid];", quote(parent), quote(child));
    }
    let mut deps: Vec<_> = flow.dependency_edges().collect();
    deps.sort_unstable();
    for (from, to) in deps {
        let _ = writeln!(out, "    {} -> {} [style=dashed];", quote(from), quote(to));
    }
    out.push_str("}\n");
    out
}
