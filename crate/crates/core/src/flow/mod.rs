//! Task-flow discovery: rebuilds the hierarchical task DAG of a trace from the
//! task lifecycle events bound to its spans.

mod dot;
mod file;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Location, ValidationIssue};
use crate::model::{attr, field, EntityKind, Issue, LifecycleEventType, Nanos, Severity, SpanRecord, Trace};

pub use dot::flow_to_dot;
pub use file::{parse_flow_file, write_flow_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    Failed,
    Aborted,
    Suspended,
    Incomplete,
}

impl TaskStatus {
    /// Status implied by the last run-state event of a task.
    pub fn from_last_event(last: Option<LifecycleEventType>) -> Self {
        match last {
            Some(LifecycleEventType::End) => TaskStatus::Completed,
            Some(LifecycleEventType::Failure) => TaskStatus::Failed,
            Some(LifecycleEventType::Abortion) => TaskStatus::Aborted,
            Some(LifecycleEventType::Suspension) => TaskStatus::Suspended,
            _ => TaskStatus::Incomplete,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Completed => "completed",
            TaskStatus::Failed => "failed",
            TaskStatus::Aborted => "aborted",
            TaskStatus::Suspended => "suspended",
            TaskStatus::Incomplete => "incomplete",
        }
    }

    fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::Failed | TaskStatus::Aborted)
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Run-state events; creation, update and deletion leave the status alone.
fn is_run_state(ev: LifecycleEventType) -> bool {
    matches!(
        ev,
        LifecycleEventType::Start
            | LifecycleEventType::End
            | LifecycleEventType::Failure
            | LifecycleEventType::Abortion
            | LifecycleEventType::Suspension
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBag {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_calls: u64,
    pub tool_calls: u64,
    pub cost_usd: f64,
    pub duration_ns: u64,
}

impl MetricBag {
    /// Usage recorded in the reserved attributes of one span.
    pub fn from_span(span: &SpanRecord) -> Self {
        MetricBag {
            input_tokens: span.count(attr::INPUT_TOKENS),
            output_tokens: span.count(attr::OUTPUT_TOKENS),
            llm_calls: span.flag(attr::LLM_CALL) as u64,
            tool_calls: span.flag(attr::TOOL_CALL) as u64,
            cost_usd: span.decimal(attr::COST_USD),
            duration_ns: 0,
        }
    }

    /// Adds usage counters; duration is per node and is not summed.
    pub fn add_usage(&mut self, other: &MetricBag) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.llm_calls += other.llm_calls;
        self.tool_calls += other.tool_calls;
        self.cost_usd += other.cost_usd;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub task_id: String,
    pub label: String,
    pub status: TaskStatus,
    pub parent: Option<String>,
    pub depends_on: Vec<String>,
    pub start: Option<Nanos>,
    pub end: Option<Nanos>,
    /// Own usage plus that of every descendant.
    pub metrics: MetricBag,
    pub issues: Vec<Issue>,
    pub workflow: Option<String>,
}

impl TaskNode {
    pub fn new(task_id: impl Into<String>, label: impl Into<String>) -> Self {
        TaskNode {
            task_id: task_id.into(),
            label: label.into(),
            status: TaskStatus::Incomplete,
            parent: None,
            depends_on: Vec::new(),
            start: None,
            end: None,
            metrics: MetricBag::default(),
            issues: Vec::new(),
            workflow: None,
        }
    }

    pub fn duration(&self) -> Option<Nanos> {
        match (self.start, self.end) {
            (Some(s), Some(e)) if e >= s => Some(e - s),
            _ => None,
        }
    }

    /// Issues at warning severity or above.
    pub fn failure_count(&self) -> usize {
        self.issues.iter().filter(|i| i.severity.is_failure()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskFlowGraph {
    pub nodes: BTreeMap<String, TaskNode>,
    pub roots: Vec<String>,
    /// Usage from spans that could not be tied to any task.
    pub unattributed: MetricBag,
}

impl TaskFlowGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Children of `id`, ordered by task id.
    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a TaskNode> + 'a {
        self.nodes
            .values()
            .filter(move |n| n.parent.as_deref() == Some(id))
    }

    /// (parent, child) pairs.
    pub fn decomposition_edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes
            .values()
            .filter_map(|n| n.parent.as_deref().map(|p| (p, n.task_id.as_str())))
    }

    /// (prerequisite, dependent) pairs.
    pub fn dependency_edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes.values().flat_map(|n| {
            n.depends_on
                .iter()
                .map(move |d| (d.as_str(), n.task_id.as_str()))
        })
    }

    /// Sum of the root bags plus unattributed usage.
    pub fn total_usage(&self) -> MetricBag {
        let mut total = self.unattributed;
        for root in &self.roots {
            total.add_usage(&self.nodes[root].metrics);
        }
        total.duration_ns = 0;
        total
    }

    /// Rebuilds `roots` and recomputes every bag from per-node own usage.
    pub fn finalize(&mut self, own: &HashMap<String, MetricBag>) {
        self.roots = self
            .nodes
            .values()
            .filter(|n| n.parent.is_none())
            .map(|n| n.task_id.clone())
            .collect();
        let order = self.post_order();
        for id in order {
            let mut bag = own.get(&id).copied().unwrap_or_default();
            for child in self.children(&id) {
                bag.add_usage(&child.metrics);
            }
            let node = self.nodes.get_mut(&id).expect("post-order yields known ids");
            bag.duration_ns = node.duration().unwrap_or(0);
            node.metrics = bag;
        }
    }

    /// Children before parents. Assumes the parent links form a forest.
    fn post_order(&self) -> Vec<String> {
        let mut kids: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (p, c) in self.decomposition_edges() {
            kids.entry(p).or_default().push(c);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(&str, bool)> = self
            .roots
            .iter()
            .rev()
            .map(|r| (r.as_str(), false))
            .collect();
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id.to_string());
                continue;
            }
            stack.push((id, true));
            if let Some(ch) = kids.get(id) {
                for c in ch.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Checks the forest/DAG invariants. Used by discovery and by the flow
    /// file parser.
    pub fn check_structure(&self) -> Result<()> {
        for node in self.nodes.values() {
            for dep in &node.depends_on {
                if !self.nodes.contains_key(dep) {
                    return Err(Error::MissingDependency {
                        task: node.task_id.clone(),
                        missing: dep.clone(),
                    });
                }
            }
        }
        if let Some(cycle) = parent_cycle(self) {
            return Err(Error::CycleDetected { tasks: cycle });
        }
        if let Some(cycle) = dependency_cycle(self) {
            return Err(Error::CycleDetected { tasks: cycle });
        }
        Ok(())
    }
}

fn parent_cycle(flow: &TaskFlowGraph) -> Option<Vec<String>> {
    let mut cleared: BTreeSet<&str> = BTreeSet::new();
    for start in flow.nodes.keys() {
        let mut path: Vec<&str> = Vec::new();
        let mut cur = Some(start.as_str());
        while let Some(id) = cur {
            if cleared.contains(id) {
                break;
            }
            if let Some(pos) = path.iter().position(|p| *p == id) {
                return Some(path[pos..].iter().map(|s| s.to_string()).collect());
            }
            path.push(id);
            cur = flow.nodes.get(id).and_then(|n| n.parent.as_deref());
        }
        cleared.extend(path);
    }
    None
}

/// First cycle among dependency edges, as the list of tasks along it.
fn dependency_cycle(flow: &TaskFlowGraph) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Open,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = flow.nodes.keys().map(|k| (k.as_str(), Mark::Fresh)).collect();

    fn visit<'a>(
        flow: &'a TaskFlowGraph,
        id: &'a str,
        marks: &mut HashMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(id, Mark::Open);
        path.push(id);
        let mut deps: Vec<&str> = flow.nodes[id].depends_on.iter().map(String::as_str).collect();
        deps.sort_unstable();
        for dep in deps {
            match marks.get(dep).copied() {
                Some(Mark::Open) => {
                    let pos = path.iter().position(|p| *p == dep).unwrap_or(0);
                    return Some(path[pos..].iter().map(|s| s.to_string()).collect());
                }
                Some(Mark::Fresh) => {
                    if let Some(c) = visit(flow, dep, marks, path) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        path.pop();
        marks.insert(id, Mark::Done);
        None
    }

    for id in flow.nodes.keys() {
        if marks[id.as_str()] == Mark::Fresh {
            let mut path = Vec::new();
            if let Some(c) = visit(flow, id, &mut marks, &mut path) {
                return Some(c);
            }
        }
    }
    None
}

/// Discovery output with the non-fatal findings gathered along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub flow: TaskFlowGraph,
    pub warnings: Vec<ValidationIssue>,
}

#[derive(Default)]
struct NodeState {
    label: Option<String>,
    parent: Option<String>,
    parent_time: Option<Nanos>,
    depends_on: Vec<String>,
    workflow: Option<String>,
    first_start: Option<Nanos>,
    last_state: Option<(LifecycleEventType, Nanos)>,
    last_terminal: Option<Nanos>,
    issues: Vec<Issue>,
    placeholder: bool,
}

pub fn discover_task_flow(trace: &Trace) -> Result<TaskFlowGraph> {
    discover(trace).map(|d| d.flow)
}

/// Reconstructs the task DAG of `trace`.
///
/// Fields declared on task entities are applied in (time, span_id, position)
/// order, so the last declaration wins. Each span's usage is credited to a
/// single task: the earliest task created or started in that span, else the
/// earliest task it mentions at all, else the task credited for its parent span.
pub fn discover(trace: &Trace) -> Result<Discovery> {
    let mut warnings = Vec::new();

    let mut ordered: Vec<(Nanos, &str, usize, &crate::model::GenAIEvent)> = Vec::new();
    for span in &trace.spans {
        for (i, ev) in span.events.iter().enumerate() {
            ordered.push((ev.time, span.span_id.as_str(), i, ev));
        }
    }
    ordered.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

    let non_task_ids: BTreeSet<&str> = ordered
        .iter()
        .flat_map(|(.., ev)| ev.entities.iter())
        .filter(|e| e.kind != EntityKind::Task)
        .map(|e| e.id.as_str())
        .collect();

    let mut states: BTreeMap<String, NodeState> = BTreeMap::new();
    for &(time, span_id, _, ev) in &ordered {
        for task in ev.tasks() {
            let st = states.entry(task.id.clone()).or_default();
            st.placeholder = false;
            if let Some(label) = task
                .str_field(field::TOOL_ID)
                .or_else(|| task.str_field(field::NAME))
            {
                st.label = Some(label.to_string());
            }
            if let Some(wf) = task.str_field(field::WORKFLOW_ID) {
                st.workflow = Some(wf.to_string());
            }
            if let Some(value) = task.fields.get(field::PARENT_TASK_ID) {
                let declared = value.as_str().map(str::to_string);
                if st.parent_time.is_some() && st.parent != declared {
                    warnings.push(ValidationIssue {
                        severity: Severity::Warning,
                        code: "reparented-task",
                        location: Location::Span(span_id.to_string()),
                        message: format!(
                            "task `{}` re-parented from {:?} to {:?} at {time}",
                            task.id, st.parent, declared
                        ),
                    });
                }
                st.parent = declared;
                st.parent_time = Some(time);
            }
            if let Some(deps) = task.depends_on() {
                st.depends_on = deps;
            }
            if is_run_state(ev.event_type) {
                if ev.event_type == LifecycleEventType::Start && st.first_start.is_none() {
                    st.first_start = Some(time);
                }
                if matches!(
                    ev.event_type,
                    LifecycleEventType::End | LifecycleEventType::Failure | LifecycleEventType::Abortion
                ) {
                    st.last_terminal = Some(time);
                }
                st.last_state = Some((ev.event_type, time));
            }
        }
        for issue in &ev.issues {
            let target = match issue.entity_id.as_deref() {
                Some(id) if !non_task_ids.contains(id) => Some(id.to_string()),
                _ => ev.tasks().next().map(|t| t.id.clone()),
            };
            if let Some(target) = target {
                let st = states.entry(target).or_insert_with(|| NodeState {
                    placeholder: true,
                    ..NodeState::default()
                });
                st.issues.push(issue.clone());
            }
        }
    }

    // Parents that never appear as entities get placeholders too.
    let missing_parents: BTreeSet<String> = states
        .values()
        .filter_map(|s| s.parent.clone())
        .filter(|p| !states.contains_key(p))
        .collect();
    for p in missing_parents {
        warnings.push(ValidationIssue {
            severity: Severity::Warning,
            code: "placeholder-task",
            location: Location::Trace(trace.trace_id.clone()),
            message: format!("parent task `{p}` never appears; synthesized a placeholder"),
        });
        states.insert(
            p,
            NodeState {
                placeholder: true,
                ..NodeState::default()
            },
        );
    }

    let mut flow = TaskFlowGraph::default();
    for (id, st) in states {
        if st.placeholder {
            warnings.push(ValidationIssue {
                severity: Severity::Info,
                code: "placeholder-task",
                location: Location::Trace(trace.trace_id.clone()),
                message: format!("task `{id}` is referenced but never created"),
            });
        }
        let status = TaskStatus::from_last_event(st.last_state.map(|(e, _)| e));
        let end = if status.is_terminal() { st.last_terminal } else { None };
        let end = match (st.first_start, end) {
            (Some(s), Some(e)) if e < s => None,
            (_, e) => e,
        };
        let mut node = TaskNode::new(id.clone(), st.label.unwrap_or_else(|| id.clone()));
        node.status = status;
        node.parent = st.parent;
        node.depends_on = st.depends_on;
        node.start = st.first_start;
        node.end = end;
        node.issues = st.issues;
        node.workflow = st.workflow;
        flow.nodes.insert(id, node);
    }

    if let Some(cycle) = parent_cycle(&flow) {
        return Err(Error::CycleDetected { tasks: cycle });
    }
    for node in flow.nodes.values() {
        for dep in &node.depends_on {
            if !flow.nodes.contains_key(dep) {
                return Err(Error::MissingDependency {
                    task: node.task_id.clone(),
                    missing: dep.clone(),
                });
            }
        }
    }
    // Dependencies are legal between siblings only.
    let parents: HashMap<String, Option<String>> = flow
        .nodes
        .iter()
        .map(|(k, n)| (k.clone(), n.parent.clone()))
        .collect();
    for node in flow.nodes.values_mut() {
        let before = node.depends_on.len();
        let own_parent = &parents[&node.task_id];
        let id = node.task_id.clone();
        node.depends_on.retain(|d| {
            let ok = &parents[d] == own_parent;
            if !ok {
                warnings.push(ValidationIssue {
                    severity: Severity::Warning,
                    code: "cross-level-dependency",
                    location: Location::Trace(trace.trace_id.clone()),
                    message: format!("dropped dependency `{d}` -> `{id}` between non-siblings"),
                });
            }
            ok
        });
        debug_assert!(node.depends_on.len() <= before);
    }
    if let Some(cycle) = dependency_cycle(&flow) {
        return Err(Error::CycleDetected { tasks: cycle });
    }

    let (own, unattributed) = attribute_usage(trace);
    flow.unattributed = unattributed;
    flow.finalize(&own);
    Ok(Discovery { flow, warnings })
}

/// Credits each span's usage to exactly one task.
fn attribute_usage(trace: &Trace) -> (HashMap<String, MetricBag>, MetricBag) {
    let by_id: HashMap<&str, &SpanRecord> =
        trace.spans.iter().map(|s| (s.span_id.as_str(), s)).collect();

    let direct = |span: &SpanRecord| -> Option<String> {
        let pick = |creation_only: bool| {
            span.events
                .iter()
                .filter(|e| {
                    !creation_only
                        || matches!(e.event_type, LifecycleEventType::Creation | LifecycleEventType::Start)
                })
                .flat_map(|e| e.tasks().map(move |t| (e.time, t.id.as_str())))
                .min()
                .map(|(_, id)| id.to_string())
        };
        pick(true).or_else(|| pick(false))
    };

    let mut memo: HashMap<&str, Option<String>> = HashMap::new();
    let mut own: HashMap<String, MetricBag> = HashMap::new();
    let mut unattributed = MetricBag::default();
    for span in &trace.spans {
        // Walk up until a span with a direct owner; the guard stops on cycles.
        let mut chain: Vec<&str> = Vec::new();
        let mut cur = Some(span);
        let mut owner: Option<String> = None;
        while let Some(s) = cur {
            if let Some(found) = memo.get(s.span_id.as_str()) {
                owner = found.clone();
                break;
            }
            if chain.contains(&s.span_id.as_str()) {
                break;
            }
            chain.push(s.span_id.as_str());
            if let Some(d) = direct(s) {
                owner = Some(d);
                break;
            }
            cur = s.parent_span_id.as_deref().and_then(|p| by_id.get(p).copied());
        }
        for id in chain {
            memo.insert(id, owner.clone());
        }
        let bag = MetricBag::from_span(span);
        match owner {
            Some(task) => own.entry(task).or_default().add_usage(&bag),
            None => unattributed.add_usage(&bag),
        }
    }
    (own, unattributed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttrValue, EntityRef, GenAIEvent};

    pub(crate) fn task(id: &str, parent: Option<&str>, deps: &[&str]) -> EntityRef {
        let mut e = EntityRef::new(EntityKind::Task, id).with(field::TOOL_ID, format!("tool-{id}"));
        if let Some(p) = parent {
            e = e.with(field::PARENT_TASK_ID, p);
        }
        if !deps.is_empty() {
            e = e.with(field::DEPENDS_ON, deps.to_vec());
        }
        e
    }

    fn span(id: &str, parent: Option<&str>, start: Nanos, end: Nanos, events: Vec<GenAIEvent>) -> SpanRecord {
        SpanRecord {
            trace_id: "t".into(),
            span_id: id.into(),
            parent_span_id: parent.map(str::to_string),
            name: id.into(),
            service: "svc".into(),
            start,
            end,
            attributes: BTreeMap::new(),
            events,
        }
    }

    fn ev(kind: LifecycleEventType, time: Nanos, entity: EntityRef) -> GenAIEvent {
        let mut e = GenAIEvent::new(kind, time);
        e.entities.push(entity);
        e
    }

    fn lifecycle(id: &str, parent: Option<&str>, deps: &[&str], start: Nanos, end: Nanos) -> Vec<GenAIEvent> {
        vec![
            ev(LifecycleEventType::Creation, start, task(id, parent, deps)),
            ev(LifecycleEventType::Start, start, task(id, None, &[]).clone()),
            ev(LifecycleEventType::End, end, EntityRef::new(EntityKind::Task, id)),
        ]
    }

    #[test]
    fn transcribes_parent_and_dependency_fields() {
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![
                span("sa", None, 0, 100, lifecycle("A", None, &[], 0, 100)),
                span("sb", Some("sa"), 10, 20, lifecycle("B", Some("A"), &[], 10, 20)),
                span("sc", Some("sa"), 30, 50, lifecycle("C", Some("A"), &["B"], 30, 50)),
            ],
        };
        let flow = discover_task_flow(&trace).unwrap();
        assert_eq!(flow.roots, ["A"]);
        let kids: Vec<_> = flow.children("A").map(|n| n.task_id.as_str()).collect();
        assert_eq!(kids, ["B", "C"]);
        let deps: Vec<_> = flow.dependency_edges().collect();
        assert_eq!(deps, [("B", "C")]);
        assert!(flow.nodes.values().all(|n| n.status == TaskStatus::Completed));
        assert_eq!(flow.nodes["C"].duration(), Some(20));
        assert_eq!(flow.nodes["A"].label, "tool-A");
    }

    #[test]
    fn sibling_two_cycle_is_detected() {
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![
                span("sa", None, 0, 100, lifecycle("A", None, &[], 0, 100)),
                span("sx", Some("sa"), 10, 20, lifecycle("X", Some("A"), &["Y"], 10, 20)),
                span("sy", Some("sa"), 30, 50, lifecycle("Y", Some("A"), &["X"], 30, 50)),
            ],
        };
        match discover_task_flow(&trace).unwrap_err() {
            Error::CycleDetected { tasks } => assert_eq!(tasks, ["X", "Y"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_dependency_is_error() {
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![span("sa", None, 0, 100, lifecycle("A", None, &["ghost"], 0, 100))],
        };
        assert!(matches!(
            discover_task_flow(&trace),
            Err(Error::MissingDependency { .. })
        ));
    }

    #[test]
    fn cross_level_dependency_is_dropped_with_warning() {
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![
                span("sa", None, 0, 100, lifecycle("A", None, &[], 0, 100)),
                span("sb", Some("sa"), 10, 20, lifecycle("B", Some("A"), &[], 10, 20)),
                span("sc", Some("sb"), 12, 15, lifecycle("C", Some("B"), &["A"], 12, 15)),
            ],
        };
        let d = discover(&trace).unwrap();
        assert!(d.flow.nodes["C"].depends_on.is_empty());
        assert_eq!(d.warnings.iter().filter(|w| w.code == "cross-level-dependency").count(), 1);
    }

    #[test]
    fn status_follows_last_run_state_event() {
        let mut events = lifecycle("A", None, &[], 0, 50);
        events.push(ev(LifecycleEventType::Failure, 60, EntityRef::new(EntityKind::Task, "A")));
        events.push(ev(LifecycleEventType::Update, 70, EntityRef::new(EntityKind::Task, "A")));
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![span("sa", None, 0, 100, events)],
        };
        let flow = discover_task_flow(&trace).unwrap();
        assert_eq!(flow.nodes["A"].status, TaskStatus::Failed);
        assert_eq!(flow.nodes["A"].end, Some(60));
    }

    #[test]
    fn issue_on_unknown_task_gets_placeholder() {
        let mut events = lifecycle("A", None, &[], 0, 50);
        events[2]
            .issues
            .push(Issue::new(Severity::Warning, None, "lost track of subtask").on("Z"));
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![span("sa", None, 0, 100, events)],
        };
        let d = discover(&trace).unwrap();
        let z = &d.flow.nodes["Z"];
        assert_eq!(z.status, TaskStatus::Incomplete);
        assert_eq!(z.issues.len(), 1);
        assert_eq!(d.flow.roots, ["A", "Z"]);
    }

    #[test]
    fn usage_rolls_up_without_double_counting() {
        let mut sa = span("sa", None, 0, 100, lifecycle("A", None, &[], 0, 100));
        sa.attributes.insert(attr::TOOL_CALL.into(), AttrValue::Bool(true));
        let mut sb = span("sb", Some("sa"), 10, 20, lifecycle("B", Some("A"), &[], 10, 20));
        sb.attributes.insert(attr::TOOL_CALL.into(), AttrValue::Bool(true));
        // An LLM span with no events belongs to B through its parent.
        let mut llm = span("sl", Some("sb"), 11, 19, vec![]);
        llm.attributes.insert(attr::LLM_CALL.into(), AttrValue::Bool(true));
        llm.attributes.insert(attr::INPUT_TOKENS.into(), AttrValue::Int(10));
        llm.attributes.insert(attr::OUTPUT_TOKENS.into(), AttrValue::Int(5));
        llm.attributes.insert(attr::COST_USD.into(), AttrValue::Float(0.25));
        let mut stray = span("st", None, 0, 1, vec![]);
        stray.attributes.insert(attr::INPUT_TOKENS.into(), AttrValue::Int(7));
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![sa, sb, llm, stray],
        };
        let flow = discover_task_flow(&trace).unwrap();
        let b = flow.nodes["B"].metrics;
        assert_eq!((b.llm_calls, b.tool_calls, b.input_tokens), (1, 1, 10));
        let a = flow.nodes["A"].metrics;
        assert_eq!((a.llm_calls, a.tool_calls, a.input_tokens, a.output_tokens), (1, 2, 10, 5));
        assert_eq!(a.cost_usd, 0.25);
        assert_eq!(a.duration_ns, 100);
        assert_eq!(flow.unattributed.input_tokens, 7);
        assert_eq!(flow.total_usage().input_tokens, 17);
    }

    #[test]
    fn conflicting_parents_last_wins() {
        let mut events = lifecycle("B", Some("A"), &[], 10, 20);
        events[2] = ev(LifecycleEventType::End, 20, task("B", Some("C"), &[]));
        let trace = Trace {
            trace_id: "t".into(),
            spans: vec![
                span("sa", None, 0, 100, lifecycle("A", None, &[], 0, 100)),
                span("sc", None, 0, 100, lifecycle("C", None, &[], 0, 100)),
                span("sb", Some("sa"), 10, 20, events),
            ],
        };
        let d = discover(&trace).unwrap();
        assert_eq!(d.flow.nodes["B"].parent.as_deref(), Some("C"));
        assert!(d.warnings.iter().any(|w| w.code == "reparented-task"));
    }
}
