//! One synthetic calculator run: the trace it emits plus the ground truth
//! recorded while emitting it.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::{parse_expression, Exact, ExpressionNode};
use crate::analytics::{FailureRecord, SummaryRow};
use crate::error::{Error, Result};
use crate::flow::{MetricBag, TaskFlowGraph, TaskNode, TaskStatus};
use crate::ingest::write_trace;
use crate::model::{
    attr, field, AttrValue, EntityKind, EntityRef, FailureCategory, GenAIEvent, Issue, LifecycleEventType, Nanos,
    Severity, SpanRecord, Trace,
};

/// Largest clock offset given to a worker service.
pub const MAX_SKEW_NS: i64 = 300_000;

const MS: Nanos = 1_000_000;
const US: Nanos = 1_000;
const LLM_MODEL: &str = "gpt-4o";
const WORKFLOW: &str = "arithmetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Wrong,
    NoOutput,
}

/// Where a fault is raised. `Task(i)` is the i-th expression task in
/// pre-order (see [`expression_tasks`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectionPoint {
    Plan,
    Task(usize),
}

/// A fault raised `repeats` times.
///
/// * instruction violation: a warning on the plan followed by a re-plan subtask
/// * incorrect input: a failed attempt of the plan or of a leaf task
/// * validation / validator: the validate task flags the target task, rightly
///   or wrongly
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fault {
    pub category: FailureCategory,
    pub point: InjectionPoint,
    pub repeats: usize,
}

impl Fault {
    pub fn new(category: FailureCategory, point: InjectionPoint, repeats: usize) -> Self {
        Fault { category, point, repeats }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub case_id: String,
    pub input: String,
    pub distributed: bool,
    /// Operand subtasks run concurrently instead of one after another.
    pub parallel: bool,
    /// Expression levels turned into subtasks before a single `evaluate`
    /// task takes over.
    pub decomposition_depth: usize,
    pub faults: Vec<Fault>,
    /// Overrides the outcome implied by the faults.
    pub outcome: Option<Outcome>,
    pub seed: u64,
}

impl CaseSpec {
    pub fn new(case_id: impl Into<String>, input: impl Into<String>) -> Self {
        CaseSpec {
            case_id: case_id.into(),
            input: input.into(),
            distributed: false,
            parallel: false,
            decomposition_depth: 3,
            faults: Vec::new(),
            outcome: None,
            seed: 0,
        }
    }

    pub fn fault(mut self, category: FailureCategory, point: InjectionPoint, repeats: usize) -> Self {
        self.faults.push(Fault::new(category, point, repeats));
        self
    }

    /// Outcome implied by the faults alone.
    pub fn derived_outcome(&self, syntax_error: bool) -> Outcome {
        if syntax_error || self.faults.iter().any(|f| f.category == FailureCategory::IncorrectInput) {
            Outcome::NoOutput
        } else if self.faults.iter().any(|f| f.category == FailureCategory::Validation) {
            Outcome::Wrong
        } else {
            Outcome::Correct
        }
    }
}

/// Shape of one expression task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskShape {
    pub task_id: String,
    pub label: String,
    pub leaf: bool,
    pub natural_language: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Llm,
    Tool,
}

#[derive(Debug, Clone)]
struct Planned {
    id: String,
    label: String,
    input: String,
    work: Work,
    value: Option<Exact>,
    children: Vec<Planned>,
}

fn plan_expression(node: &ExpressionNode, level: usize, depth: usize, counter: &mut usize) -> Planned {
    let id = format!("task-e{}", *counter);
    *counter += 1;
    let mk = |label: &str, work, children| Planned {
        id: id.clone(),
        label: label.to_string(),
        input: node.render(),
        work,
        value: node.eval().ok(),
        children,
    };
    match node {
        ExpressionNode::Number { .. } => mk("number", Work::Tool, vec![]),
        ExpressionNode::Snippet { text, .. } => Planned {
            input: text.clone(),
            ..mk("interpret", Work::Llm, vec![])
        },
        _ if level >= depth => mk("evaluate", Work::Tool, vec![]),
        ExpressionNode::Group { inner, .. } => {
            let child = plan_expression(inner, level + 1, depth, counter);
            mk("group", Work::Tool, vec![child])
        }
        ExpressionNode::Binary { op, lhs, rhs, .. } => {
            let l = plan_expression(lhs, level + 1, depth, counter);
            let r = plan_expression(rhs, level + 1, depth, counter);
            mk(op.name(), Work::Tool, vec![l, r])
        }
    }
}

fn preorder<'a>(p: &'a Planned, out: &mut Vec<&'a Planned>) {
    out.push(p);
    for c in &p.children {
        preorder(c, out);
    }
}

/// The expression tasks `input` decomposes into, in pre-order; `None` when
/// the input does not parse.
pub fn expression_tasks(input: &str, decomposition_depth: usize) -> Result<Option<Vec<TaskShape>>> {
    let node = match parse_expression(input) {
        Ok(n) => n,
        Err(Error::Syntax { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let plan = plan_expression(&node, 0, decomposition_depth, &mut 0);
    let mut all = Vec::new();
    preorder(&plan, &mut all);
    Ok(Some(
        all.into_iter()
            .map(|p| TaskShape {
                task_id: p.id.clone(),
                label: p.label.clone(),
                leaf: p.children.is_empty(),
                natural_language: p.work == Work::Llm,
            })
            .collect(),
    ))
}

/// A generated case with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub case_id: String,
    pub input: String,
    pub tags: Vec<String>,
    /// `None` when the input is not a valid expression.
    pub expected: Option<f64>,
    pub final_output: Option<f64>,
    pub trace: Trace,
    pub gt_flow: TaskFlowGraph,
    pub gt_summary: SummaryRow,
    pub gt_failures: Vec<FailureRecord>,
}

impl GeneratedCase {
    pub fn log_text(&self) -> String {
        write_trace(&self.trace)
    }

    pub fn is_correct(&self) -> bool {
        matches!((self.final_output, self.expected), (Some(o), Some(e)) if o == e)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

fn looks_natural_language(input: &str) -> bool {
    let chars: Vec<char> = input.chars().collect();
    chars.windows(2).any(|w| w[0] == '{' && w[1].is_alphabetic())
        || chars.windows(3).any(|w| w[0] == '{' && w[1].is_whitespace() && w[2].is_alphabetic())
}

fn check_case_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::InvalidSpec(format!(
            "case id `{id}` must be non-empty ASCII letters, digits, `-` or `_`"
        )));
    }
    Ok(())
}

struct FaultPlan {
    outcome: Outcome,
    bad_attempts: HashMap<String, usize>,
    iv: usize,
    checks: Vec<(FailureCategory, String)>,
}

impl FaultPlan {
    fn fatal(&self, id: &str) -> bool {
        self.outcome == Outcome::NoOutput && self.bad_attempts.get(id).copied().unwrap_or(0) > 0
    }
}

fn resolve_faults(spec: &CaseSpec, tasks: Option<&[&Planned]>) -> Result<FaultPlan> {
    let syntax = tasks.is_none();
    let derived = spec.derived_outcome(syntax);
    let outcome = spec.outcome.unwrap_or(derived);
    let allowed = outcome == derived
        || (outcome == Outcome::Correct && !syntax)
        || (outcome == Outcome::NoOutput && derived == Outcome::Wrong);
    if !allowed {
        return Err(Error::InvalidSpec(format!(
            "{}: outcome {outcome:?} cannot follow from these faults (they imply {derived:?})",
            spec.case_id
        )));
    }
    let mut plan = FaultPlan {
        outcome,
        bad_attempts: HashMap::new(),
        iv: 0,
        checks: Vec::new(),
    };
    let target = |point: InjectionPoint| -> Result<&Planned> {
        match (point, tasks) {
            (InjectionPoint::Task(i), Some(ts)) if i < ts.len() => Ok(ts[i]),
            (InjectionPoint::Task(i), _) => Err(Error::InvalidSpec(format!(
                "{}: no expression task #{i}",
                spec.case_id
            ))),
            (InjectionPoint::Plan, _) => unreachable!(),
        }
    };
    for f in &spec.faults {
        if f.repeats == 0 {
            return Err(Error::InvalidSpec(format!("{}: fault with zero repeats", spec.case_id)));
        }
        match (f.category, f.point) {
            (FailureCategory::InstructionViolation, InjectionPoint::Plan) => plan.iv += f.repeats,
            (FailureCategory::IncorrectInput, InjectionPoint::Plan) => {
                *plan.bad_attempts.entry("task-plan".into()).or_default() += f.repeats
            }
            (FailureCategory::IncorrectInput, p) => {
                let t = target(p)?;
                if !t.children.is_empty() {
                    return Err(Error::InvalidSpec(format!(
                        "{}: incorrect input must hit a leaf task, `{}` is not one",
                        spec.case_id, t.id
                    )));
                }
                *plan.bad_attempts.entry(t.id.clone()).or_default() += f.repeats;
            }
            (FailureCategory::Validation | FailureCategory::Validator, InjectionPoint::Task(_)) => {
                let id = target(f.point)?.id.clone();
                plan.checks.extend(std::iter::repeat_n((f.category, id), f.repeats));
            }
            (c, p) => {
                return Err(Error::InvalidSpec(format!(
                    "{}: {c} faults cannot be injected at {p:?}",
                    spec.case_id
                )))
            }
        }
    }
    if syntax && !plan.bad_attempts.contains_key("task-plan") {
        return Err(Error::InvalidSpec(format!(
            "{}: an unparsable input needs an incorrect_input fault at the plan",
            spec.case_id
        )));
    }
    if plan.fatal("task-plan") && (plan.iv > 0 || !plan.checks.is_empty() || plan.bad_attempts.len() > 1) {
        return Err(Error::InvalidSpec(format!(
            "{}: nothing runs after a failed plan, so no other fault can fire",
            spec.case_id
        )));
    }
    Ok(plan)
}

type IssueKey = (Nanos, String, usize, usize);

struct OpenSpan {
    span: SpanRecord,
    task: String,
}

struct Sim {
    rng: ChaCha8Rng,
    distributed: bool,
    trace_id: String,
    spans: Vec<SpanRecord>,
    span_ids: HashSet<String>,
    skew: BTreeMap<String, i64>,
    nodes: BTreeMap<String, TaskNode>,
    own: HashMap<String, MetricBag>,
    issues: Vec<(IssueKey, String, Issue)>,
}

impl Sim {
    fn clock(&self, service: &str, t: Nanos) -> Nanos {
        let off = self.skew.get(service).copied().unwrap_or(0);
        (t as i64 + off) as Nanos
    }

    fn between(&mut self, lo: Nanos, hi: Nanos) -> Nanos {
        self.rng.random_range(lo..=hi)
    }

    fn new_span_id(&mut self) -> String {
        loop {
            let id = format!("{:016x}", self.rng.random::<u64>());
            if self.span_ids.insert(id.clone()) {
                return id;
            }
        }
    }

    fn open(&mut self, task: &str, parent: Option<&str>, name: &str, service: &str, t: Nanos) -> OpenSpan {
        let span_id = self.new_span_id();
        let start = self.clock(service, t);
        OpenSpan {
            span: SpanRecord {
                trace_id: self.trace_id.clone(),
                span_id,
                parent_span_id: parent.map(str::to_string),
                name: name.to_string(),
                service: service.to_string(),
                start,
                end: start,
                attributes: BTreeMap::new(),
                events: Vec::new(),
            },
            task: task.to_string(),
        }
    }

    /// Appends an event at true time `t` and returns its recorded time.
    fn event(
        &mut self,
        os: &mut OpenSpan,
        kind: LifecycleEventType,
        t: Nanos,
        entities: Vec<EntityRef>,
        issues: Vec<Issue>,
    ) -> Nanos {
        let time = self.clock(&os.span.service, t);
        let ei = os.span.events.len();
        for (ii, issue) in issues.iter().enumerate() {
            let target = issue.entity_id.clone().unwrap_or_else(|| os.task.clone());
            self.issues
                .push(((time, os.span.span_id.clone(), ei, ii), target, issue.clone()));
        }
        os.span.events.push(GenAIEvent {
            event_type: kind,
            time,
            entities,
            issues,
        });
        time
    }

    fn close(&mut self, mut os: OpenSpan, t: Nanos) {
        os.span.end = self.clock(&os.span.service, t);
        let bag = MetricBag::from_span(&os.span);
        self.own.entry(os.task).or_default().add_usage(&bag);
        self.spans.push(os.span);
    }

    /// One LLM call under `os`, starting at `t`; returns the true end time.
    fn llm_call(&mut self, os: &OpenSpan, t: Nanos) -> Nanos {
        let start = t + self.between(10 * US, 100 * US);
        let end = start + self.between(MS, 50 * MS);
        let input_tokens: u64 = self.rng.random_range(150..=1500);
        let output_tokens: u64 = self.rng.random_range(20..=400);
        // Multiples of 2^-24 USD keep every partial sum exact.
        let cost = (input_tokens * 40 + output_tokens * 160) as f64 / f64::powi(2.0, 24);
        let mut child = self.open(&os.task, Some(&os.span.span_id), "llm.chat", &os.span.service, start);
        child.span.attributes = BTreeMap::from([
            (attr::LLM_CALL.to_string(), AttrValue::Bool(true)),
            (attr::LLM_MODEL.to_string(), AttrValue::Str(LLM_MODEL.into())),
            (attr::INPUT_TOKENS.to_string(), AttrValue::Int(input_tokens as i64)),
            (attr::OUTPUT_TOKENS.to_string(), AttrValue::Int(output_tokens as i64)),
            (attr::COST_USD.to_string(), AttrValue::Float(cost)),
        ]);
        self.close(child, end);
        end + self.between(10 * US, 100 * US)
    }

    fn work(&mut self, os: &OpenSpan, work: Work, t: Nanos) -> Nanos {
        match work {
            Work::Llm => self.llm_call(os, t),
            Work::Tool => t + self.between(MS, 50 * MS),
        }
    }

    fn task_ref(id: &str) -> EntityRef {
        EntityRef::new(EntityKind::Task, id)
    }

    /// Opens the task span and emits creation and start. Returns the span
    /// and the true time of the start event.
    #[allow(clippy::too_many_arguments)]
    fn begin_task(
        &mut self,
        id: &str,
        label: &str,
        input: &str,
        parent: Option<(&str, &str)>,
        depends_on: &[String],
        service: &str,
        agent: &str,
        t: Nanos,
    ) -> (OpenSpan, Nanos) {
        let mut os = self.open(id, parent.map(|p| p.1), &format!("task.{label}"), service, t);
        if label != "solve" && label != "plan" && label != "validate" && label != "replan" {
            os.span.attributes.insert(attr::TOOL_CALL.into(), AttrValue::Bool(true));
        }
        let mut entity = Self::task_ref(id)
            .with(field::TOOL_ID, label)
            .with(field::AGENT_ID, agent)
            .with(field::WORKFLOW_ID, WORKFLOW)
            .with(field::INPUT, input);
        if let Some((p, _)) = parent {
            entity = entity.with(field::PARENT_TASK_ID, p);
        }
        if !depends_on.is_empty() {
            entity = entity.with(field::DEPENDS_ON, depends_on.to_vec());
        }
        let mut issues = Vec::new();
        if self.distributed && service != "calc-planner" {
            issues.push(Issue::new(Severity::Info, None, format!("dispatched to {service}")).on(id));
        }
        self.event(
            &mut os,
            LifecycleEventType::Creation,
            t,
            vec![entity, EntityRef::new(EntityKind::Agent, agent)],
            issues,
        );
        let ts = t + self.between(20 * US, 200 * US);
        let recorded = self.event(&mut os, LifecycleEventType::Start, ts, vec![Self::task_ref(id)], vec![]);
        let mut node = TaskNode::new(id, label);
        node.parent = parent.map(|p| p.0.to_string());
        node.depends_on = depends_on.to_vec();
        node.start = Some(recorded);
        node.workflow = Some(WORKFLOW.into());
        self.nodes.insert(id.to_string(), node);
        (os, ts)
    }

    fn end_task(&mut self, mut os: OpenSpan, t: Nanos, ok: bool, output: Option<String>) {
        let id = os.task.clone();
        let mut entity = Self::task_ref(&id);
        if let Some(o) = output {
            entity = entity.with(field::OUTPUT, o);
        }
        let kind = if ok { LifecycleEventType::End } else { LifecycleEventType::Failure };
        let recorded = self.event(&mut os, kind, t, vec![entity], vec![]);
        let node = self.nodes.get_mut(&id).expect("task was begun");
        node.status = if ok { TaskStatus::Completed } else { TaskStatus::Failed };
        node.end = Some(recorded);
        self.close(os, t);
    }

    /// Failed attempts for incorrect input. Returns the true time reached and
    /// whether the task is still alive.
    fn bad_attempts(&mut self, os: &mut OpenSpan, work: Work, mut t: Nanos, n: usize, fatal: bool, what: &str) -> (Nanos, bool) {
        for a in 0..n {
            t = self.work(os, work, t) + self.between(10 * US, 50 * US);
            let issue = Issue::new(Severity::CriticalError, Some(FailureCategory::IncorrectInput), what).on(os.task.clone());
            let id = os.task.clone();
            self.event(os, LifecycleEventType::Failure, t, vec![Self::task_ref(&id)], vec![issue]);
            if fatal && a + 1 == n {
                return (t, false);
            }
            t += self.between(100 * US, 500 * US);
            self.event(os, LifecycleEventType::Start, t, vec![Self::task_ref(&id)], vec![]);
        }
        (t, true)
    }

    /// Runs an expression task and its subtree. Returns (true end time, ok).
    fn run_expression(
        &mut self,
        p: &Planned,
        parent: (&str, &str),
        depends_on: &[String],
        services: &[String],
        slot: usize,
        parallel: bool,
        faults: &FaultPlan,
        t0: Nanos,
    ) -> (Nanos, bool) {
        let service = services[slot % services.len()].clone();
        let agent = if self.distributed { format!("worker-{}", slot % services.len() + 1) } else { "calculator".into() };
        let (mut os, mut t) = self.begin_task(&p.id, &p.label, &p.input, Some(parent), depends_on, &service, &agent, t0);
        let n_bad = faults.bad_attempts.get(&p.id).copied().unwrap_or(0);
        if n_bad > 0 {
            let what = format!("operand `{}` could not be read as a number", p.input);
            let (t1, alive) = self.bad_attempts(&mut os, p.work, t, n_bad, faults.fatal(&p.id), &what);
            t = t1;
            if !alive {
                let end = self.clock(&service, t);
                let node = self.nodes.get_mut(&p.id).expect("task was begun");
                node.status = TaskStatus::Failed;
                node.end = Some(end);
                self.close(os, t);
                return (t, false);
            }
        }
        let mut ok = true;
        if p.children.is_empty() {
            t = self.work(&os, p.work, t);
        } else {
            let base = t + self.between(100 * US, 300 * US);
            let mut cursor = base;
            let mut last = base;
            let span_id = os.span.span_id.clone();
            for (i, c) in p.children.iter().enumerate() {
                let start = if parallel { base + self.between(0, 300 * US) } else { cursor };
                // Operands of the expression root are spread over the workers.
                let child_slot = if parent.0 == "task-solve" { slot + i } else { slot };
                let (e, child_ok) =
                    self.run_expression(c, (&p.id, &span_id), &[], services, child_slot, parallel, faults, start);
                ok &= child_ok;
                last = last.max(e);
                cursor = e + self.between(MS, 2 * MS);
            }
            t = last + self.between(100 * US, 500 * US);
            if ok {
                t = self.work(&os, p.work, t);
            }
        }
        self.end_task(os, t, ok, None);
        (t, ok)
    }
}

fn fresh_trace_id(rng: &mut ChaCha8Rng) -> String {
    format!("{:016x}{:016x}", rng.random::<u64>(), rng.random::<u64>())
}

/// Generates the trace and ground truth for `spec`.
pub fn generate_case(spec: &CaseSpec) -> Result<GeneratedCase> {
    check_case_id(&spec.case_id)?;
    if spec.decomposition_depth == 0 {
        return Err(Error::InvalidSpec(format!("{}: decomposition depth must be at least 1", spec.case_id)));
    }
    let (node, syntax_message) = match parse_expression(&spec.input) {
        Ok(n) => (Some(n), None),
        Err(e @ Error::Syntax { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let truth = node.as_ref().map(ExpressionNode::eval).transpose()?;
    let expr_plan = node
        .as_ref()
        .map(|n| plan_expression(n, 0, spec.decomposition_depth, &mut 0));
    let mut flat = Vec::new();
    if let Some(p) = &expr_plan {
        preorder(p, &mut flat);
    }
    let faults = resolve_faults(spec, expr_plan.as_ref().map(|_| flat.as_slice()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let trace_id = fresh_trace_id(&mut rng);
    let (planner, services): (String, Vec<String>) = if spec.distributed {
        ("calc-planner".into(), vec!["calc-worker-1".into(), "calc-worker-2".into()])
    } else {
        ("calculator".into(), vec!["calculator".into()])
    };
    let mut skew = BTreeMap::new();
    if spec.distributed {
        for s in &services {
            skew.insert(s.clone(), rng.random_range(-MAX_SKEW_NS..=MAX_SKEW_NS));
        }
    }
    let mut sim = Sim {
        rng,
        distributed: spec.distributed,
        trace_id,
        spans: Vec::new(),
        span_ids: HashSet::new(),
        skew,
        nodes: BTreeMap::new(),
        own: HashMap::new(),
        issues: Vec::new(),
    };
    let t0: Nanos = 1_700_000_000_000_000_000 + sim.rng.random_range(0..1_000_000_000_000);

    // solve
    let agent = if spec.distributed { "planner" } else { "calculator" };
    let (mut solve, mut t) = sim.begin_task("task-solve", "solve", &spec.input, None, &[], &planner, agent, t0);
    let solve_span = solve.span.span_id.clone();

    // plan
    let plan_start = t + sim.between(100 * US, 300 * US);
    let (mut plan, mut tp) = sim.begin_task(
        "task-plan",
        "plan",
        &spec.input,
        Some(("task-solve", &solve_span)),
        &[],
        &planner,
        agent,
        plan_start,
    );
    let n_bad = faults.bad_attempts.get("task-plan").copied().unwrap_or(0);
    let what = match &syntax_message {
        Some(m) => format!("malformed expression: {m}"),
        None => "plan request did not contain a well-formed expression".to_string(),
    };
    let (t1, plan_ok) = sim.bad_attempts(&mut plan, Work::Llm, tp, n_bad, faults.fatal("task-plan"), &what);
    tp = t1;
    if plan_ok {
        tp = sim.llm_call(&plan, tp);
        let plan_span = plan.span.span_id.clone();
        for k in 1..=faults.iv {
            tp += sim.between(10 * US, 50 * US);
            let issue = Issue::new(
                Severity::Warning,
                Some(FailureCategory::InstructionViolation),
                "plan decomposition does not cover the full expression",
            )
            .on("task-plan");
            sim.event(&mut plan, LifecycleEventType::Update, tp, vec![Sim::task_ref("task-plan")], vec![issue]);
            let id = format!("task-replan-{k}");
            let start = tp + sim.between(100 * US, 300 * US);
            let (rs, rt) = sim.begin_task(
                &id,
                "replan",
                &spec.input,
                Some(("task-plan", &plan_span)),
                &[],
                &planner,
                agent,
                start,
            );
            let end = sim.llm_call(&rs, rt);
            sim.end_task(rs, end, true, None);
            tp = end + sim.between(MS, 2 * MS);
        }
        sim.end_task(plan, tp, true, None);
    } else {
        let end = sim.clock(&planner, tp);
        let node = sim.nodes.get_mut("task-plan").expect("plan was begun");
        node.status = TaskStatus::Failed;
        node.end = Some(end);
        sim.close(plan, tp);
    }
    t = tp;

    let mut final_output = None;
    if let (true, Some(p), Some(truth)) = (plan_ok, &expr_plan, &truth) {
        let start = t + sim.between(MS, 2 * MS);
        let (te, _) = sim.run_expression(
            p,
            ("task-solve", &solve_span),
            &["task-plan".to_string()],
            &services,
            0,
            spec.parallel,
            &faults,
            start,
        );

        // validate
        let start = te + sim.between(MS, 2 * MS);
        let (mut val, mut tv) = sim.begin_task(
            "task-validate",
            "validate",
            &p.input,
            Some(("task-solve", &solve_span)),
            std::slice::from_ref(&p.id),
            &planner,
            agent,
            start,
        );
        tv = sim.llm_call(&val, tv);
        let mut planned = Vec::new();
        preorder(p, &mut planned);
        for (category, target) in &faults.checks {
            tv += sim.between(10 * US, 50 * US);
            let label = &sim.nodes[target].label;
            let value = planned
                .iter()
                .find(|q| &q.id == target)
                .and_then(|q| q.value.clone())
                .unwrap_or_else(|| Exact::from_int(0));
            let delta = sim.rng.random_range(1..=9);
            let off = Exact(&value.0 + Exact::from_int(delta).0);
            let issue = match category {
                FailureCategory::Validation => Issue::new(
                    Severity::CriticalError,
                    Some(FailureCategory::Validation),
                    format!("recomputed {label} result of {target} is {value}, reported {off}"),
                ),
                _ => Issue::new(
                    Severity::Warning,
                    Some(FailureCategory::Validator),
                    format!("validator rejected {target}: reported {value}, recomputed {off}"),
                ),
            }
            .on(target.clone());
            sim.event(&mut val, LifecycleEventType::Failure, tv, vec![Sim::task_ref("task-validate")], vec![issue]);
            tv += sim.between(100 * US, 500 * US);
            sim.event(&mut val, LifecycleEventType::Start, tv, vec![Sim::task_ref("task-validate")], vec![]);
            tv = sim.llm_call(&val, tv);
        }
        sim.end_task(val, tv, faults.outcome == Outcome::Correct, None);
        t = tv;

        final_output = match faults.outcome {
            Outcome::Correct => Some(truth.clone()),
            Outcome::Wrong => {
                let delta = sim.rng.random_range(1..=9) * if sim.rng.random_bool(0.5) { 1 } else { -1 };
                Some(Exact(&truth.0 + Exact::from_int(delta).0))
            }
            Outcome::NoOutput => None,
        };
    }

    t += sim.between(100 * US, 300 * US);
    if let Some(v) = &final_output {
        solve.span.attributes.insert(attr::RESULT.into(), AttrValue::Float(v.to_f64()));
    }
    let out_text = final_output.as_ref().map(Exact::to_string);
    sim.end_task(solve, t, final_output.is_some(), out_text);

    // Ground truth.
    let mut issues = std::mem::take(&mut sim.issues);
    issues.sort_by(|a, b| a.0.cmp(&b.0));
    let mut gt_failures = Vec::new();
    for (_, target, issue) in &issues {
        sim.nodes
            .get_mut(target)
            .expect("issues target generated tasks")
            .issues
            .push(issue.clone());
        if issue.severity.is_failure() {
            gt_failures.push(FailureRecord {
                category: issue.category.expect("generated failures are categorized"),
                severity: issue.severity,
                message: issue.message.clone(),
                task_id: Some(target.clone()),
            });
        }
    }
    let mut gt_flow = TaskFlowGraph {
        nodes: std::mem::take(&mut sim.nodes),
        ..TaskFlowGraph::default()
    };
    gt_flow.finalize(&sim.own);

    let mut trace = Trace {
        trace_id: sim.trace_id.clone(),
        spans: std::mem::take(&mut sim.spans),
    };
    trace.canonicalize();

    let mut gt_summary = SummaryRow::empty(&spec.case_id);
    let first = trace.spans.iter().map(|s| s.start).min().unwrap_or(0);
    let last = trace.spans.iter().map(|s| s.end).max().unwrap_or(0);
    gt_summary.execution_time_ns = last - first;
    let mut total = MetricBag::default();
    for bag in sim.own.values() {
        total.add_usage(bag);
    }
    gt_summary.input_tokens = total.input_tokens;
    gt_summary.output_tokens = total.output_tokens;
    gt_summary.llm_calls = total.llm_calls;
    gt_summary.tool_calls = total.tool_calls;
    gt_summary.cost_usd = total.cost_usd;
    gt_summary.set_failures(&gt_failures);

    let mut tags = vec![
        if looks_natural_language(&spec.input) { "nl" } else { "numerical" }.to_string(),
        if spec.distributed { "distributed" } else { "single_host" }.to_string(),
        if spec.parallel { "parallel" } else { "sequential" }.to_string(),
    ];
    if syntax_message.is_some() {
        tags.push("syntax_error".into());
    }

    Ok(GeneratedCase {
        case_id: spec.case_id.clone(),
        input: spec.input.clone(),
        tags,
        expected: truth.as_ref().map(Exact::to_f64),
        final_output: final_output.as_ref().map(Exact::to_f64),
        trace,
        gt_flow,
        gt_summary,
        gt_failures,
    })
}
