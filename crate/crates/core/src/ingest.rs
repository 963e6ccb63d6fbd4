//! Line-delimited JSON trace logs: parsing, grouping and validation.
//!
//! One span object per line. Field names are fixed by the log format document
//! (`docs/trace-format.md`); the wire structs below are the only place they
//! are spelled out.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttrValue, EntityKind, EntityRef, GenAIEvent, Issue, LifecycleEventType, Nanos, Severity,
    SpanRecord, Trace,
};

#[derive(Serialize, Deserialize)]
struct WireSpan {
    trace_id: String,
    span_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_span_id: Option<String>,
    #[serde(default)]
    name: String,
    #[serde(default)]
    service: String,
    start_ns: i64,
    end_ns: i64,
    #[serde(default)]
    attributes: BTreeMap<String, AttrValue>,
    #[serde(default)]
    events: Vec<WireEvent>,
}

#[derive(Serialize, Deserialize)]
struct WireEvent {
    #[serde(rename = "type")]
    event_type: String,
    time_ns: i64,
    #[serde(default)]
    entities: Vec<WireEntity>,
    #[serde(default)]
    issues: Vec<WireIssue>,
}

#[derive(Serialize, Deserialize)]
struct WireEntity {
    kind: String,
    id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    fields: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct WireIssue {
    severity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity_id: Option<String>,
}

fn timestamp(field: &'static str, value: i64) -> Result<Nanos> {
    u64::try_from(value).map_err(|_| Error::NegativeTimestamp { field, value })
}

impl TryFrom<WireIssue> for Issue {
    type Error = Error;

    fn try_from(w: WireIssue) -> Result<Self> {
        if w.message.trim().is_empty() {
            return Err(Error::InvalidRecord("issue message is empty".into()));
        }
        Ok(Issue {
            severity: w.severity.parse()?,
            category: w.category.as_deref().map(str::parse).transpose()?,
            message: w.message,
            entity_id: w.entity_id,
        })
    }
}

impl TryFrom<WireEvent> for GenAIEvent {
    type Error = Error;

    fn try_from(w: WireEvent) -> Result<Self> {
        let event_type: LifecycleEventType = w.event_type.parse()?;
        let time = timestamp("time_ns", w.time_ns)?;
        let entities = w
            .entities
            .into_iter()
            .map(|e| {
                let entity = EntityRef {
                    kind: e.kind.parse()?,
                    id: e.id,
                    fields: e.fields,
                };
                entity.check()?;
                Ok(entity)
            })
            .collect::<Result<Vec<_>>>()?;
        if entities.is_empty() && event_type != LifecycleEventType::Update {
            return Err(Error::InvalidRecord(format!(
                "{event_type} event at {time} names no entities"
            )));
        }
        let issues = w
            .issues
            .into_iter()
            .map(Issue::try_from)
            .collect::<Result<Vec<_>>>()?;
        Ok(GenAIEvent {
            event_type,
            time,
            entities,
            issues,
        })
    }
}

impl TryFrom<WireSpan> for SpanRecord {
    type Error = Error;

    fn try_from(w: WireSpan) -> Result<Self> {
        if w.trace_id.is_empty() || w.span_id.is_empty() {
            return Err(Error::InvalidRecord("trace_id and span_id must be non-empty".into()));
        }
        let start = timestamp("start_ns", w.start_ns)?;
        let end = timestamp("end_ns", w.end_ns)?;
        if start > end {
            return Err(Error::InvalidRecord(format!(
                "span `{}` ends ({end}) before it starts ({start})",
                w.span_id
            )));
        }
        let events = w
            .events
            .into_iter()
            .map(GenAIEvent::try_from)
            .collect::<Result<Vec<_>>>()?;
        Ok(SpanRecord {
            trace_id: w.trace_id,
            span_id: w.span_id,
            parent_span_id: w.parent_span_id,
            name: w.name,
            service: w.service,
            start,
            end,
            attributes: w.attributes,
            events,
        })
    }
}

impl From<&SpanRecord> for WireSpan {
    fn from(s: &SpanRecord) -> Self {
        WireSpan {
            trace_id: s.trace_id.clone(),
            span_id: s.span_id.clone(),
            parent_span_id: s.parent_span_id.clone(),
            name: s.name.clone(),
            service: s.service.clone(),
            start_ns: s.start as i64,
            end_ns: s.end as i64,
            attributes: s.attributes.clone(),
            events: s
                .events
                .iter()
                .map(|e| WireEvent {
                    event_type: e.event_type.as_str().to_string(),
                    time_ns: e.time as i64,
                    entities: e
                        .entities
                        .iter()
                        .map(|en| WireEntity {
                            kind: en.kind.as_str().to_string(),
                            id: en.id.clone(),
                            fields: en.fields.clone(),
                        })
                        .collect(),
                    issues: e
                        .issues
                        .iter()
                        .map(|i| WireIssue {
                            severity: i.severity.as_str().to_string(),
                            category: i.category.map(|c| c.as_str().to_string()),
                            message: i.message.clone(),
                            entity_id: i.entity_id.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Parses one log line into a span.
pub fn parse_span_line(text: &str) -> Result<SpanRecord> {
    let wire: WireSpan = serde_json::from_str(text).map_err(|e| Error::MalformedLine {
        line: None,
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    SpanRecord::try_from(wire)
}

/// Serializes a span as a single log line (no trailing newline).
pub fn serialize_span(span: &SpanRecord) -> String {
    serde_json::to_string(&WireSpan::from(span)).expect("span serialization is infallible")
}

/// Serializes every span of a trace, one line each, newline-terminated.
pub fn write_trace(trace: &Trace) -> String {
    let mut out = String::new();
    for span in &trace.spans {
        out.push_str(&serialize_span(span));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Span(String),
    Trace(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Span(id) => write!(f, "span {id}"),
            Location::Trace(id) => write!(f, "trace {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// Short stable identifier such as `orphan-parent` or `lifecycle-gap`.
    pub code: &'static str,
    pub location: Location,
    pub message: String,
}

impl ValidationIssue {
    fn warning(code: &'static str, location: Location, message: String) -> Self {
        ValidationIssue {
            severity: Severity::Warning,
            code,
            location,
            message,
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}: {}", self.severity, self.code, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    pub traces: BTreeMap<String, Trace>,
    pub parse_warnings: Vec<ValidationIssue>,
}

impl TraceSet {
    pub fn span_count(&self) -> usize {
        self.traces.values().map(|t| t.spans.len()).sum()
    }

    /// The trace with the most spans (ties go to the smallest id), plus one
    /// warning per additional trace in the set.
    pub fn primary(&self) -> Option<(&Trace, Vec<ValidationIssue>)> {
        let primary = self
            .traces
            .values()
            .max_by(|a, b| a.spans.len().cmp(&b.spans.len()).then(b.trace_id.cmp(&a.trace_id)))?;
        let extras = self
            .traces
            .values()
            .filter(|t| t.trace_id != primary.trace_id)
            .map(|t| {
                ValidationIssue::warning(
                    "extra-trace",
                    Location::Trace(t.trace_id.clone()),
                    format!(
                        "log holds {} spans of a second trace; analysing `{}` only",
                        t.spans.len(),
                        primary.trace_id
                    ),
                )
            })
            .collect();
        Some((primary, extras))
    }
}

/// Groups parsed spans by trace id. Blank lines are skipped; the result does
/// not depend on line order.
pub fn load_trace_set<I, S>(lines: I) -> Result<TraceSet>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut traces: BTreeMap<String, Trace> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (idx, line) in lines.into_iter().enumerate() {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        let span = parse_span_line(line).map_err(|e| match e {
            Error::MalformedLine { offset, message, .. } => Error::MalformedLine {
                line: Some(idx + 1),
                offset,
                message,
            },
            other => Error::MalformedLine {
                line: Some(idx + 1),
                offset: 0,
                message: other.to_string(),
            },
        })?;
        if !seen.insert((span.trace_id.clone(), span.span_id.clone())) {
            return Err(Error::DuplicateSpan {
                trace_id: span.trace_id,
                span_id: span.span_id,
            });
        }
        traces
            .entry(span.trace_id.clone())
            .or_insert_with(|| Trace {
                trace_id: span.trace_id.clone(),
                spans: Vec::new(),
            })
            .spans
            .push(span);
    }
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut parse_warnings = Vec::new();
    for trace in traces.values_mut() {
        trace.canonicalize();
        let ids: HashSet<&str> = trace.spans.iter().map(|s| s.span_id.as_str()).collect();
        for span in &trace.spans {
            if let Some(parent) = &span.parent_span_id {
                if !ids.contains(parent.as_str()) {
                    parse_warnings.push(ValidationIssue::warning(
                        "orphan-parent",
                        Location::Span(span.span_id.clone()),
                        format!("parent span `{parent}` is not in trace `{}`", trace.trace_id),
                    ));
                }
            }
        }
    }
    Ok(TraceSet {
        traces,
        parse_warnings,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// How far a child span may start before its parent before it is flagged.
    pub skew_tolerance_ns: Nanos,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            skew_tolerance_ns: 1_000_000,
        }
    }
}

/// Structural checks over one trace. Never fails; returns every finding.
pub fn validate_trace(trace: &Trace, opts: &ValidateOptions) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    let roots: Vec<&SpanRecord> = trace.roots().collect();
    if roots.is_empty() {
        issues.push(ValidationIssue {
            severity: Severity::CriticalError,
            code: "no-root",
            location: Location::Trace(trace.trace_id.clone()),
            message: "trace has no root span".into(),
        });
    }
    let mut roots_per_service: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &roots {
        *roots_per_service.entry(r.service.as_str()).or_default() += 1;
    }
    for (service, n) in roots_per_service {
        if n > 1 {
            issues.push(ValidationIssue::warning(
                "multiple-roots",
                Location::Trace(trace.trace_id.clone()),
                format!("service `{service}` has {n} root spans"),
            ));
        }
    }

    let by_id: HashMap<&str, &SpanRecord> =
        trace.spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
    for span in &trace.spans {
        for ev in &span.events {
            if ev.time < span.start || ev.time > span.end {
                issues.push(ValidationIssue::warning(
                    "event-outside-span",
                    Location::Span(span.span_id.clone()),
                    format!(
                        "{} event at {} lies outside [{}, {}]",
                        ev.event_type, ev.time, span.start, span.end
                    ),
                ));
            }
        }
        if let Some(parent) = span.parent_span_id.as_deref().and_then(|p| by_id.get(p)) {
            if span.start + opts.skew_tolerance_ns < parent.start {
                issues.push(ValidationIssue::warning(
                    "clock-skew",
                    Location::Span(span.span_id.clone()),
                    format!(
                        "starts {} ns before parent `{}` ({} -> {})",
                        parent.start - span.start,
                        parent.span_id,
                        parent.service,
                        span.service
                    ),
                ));
            }
        }
    }

    // Task-level checks walk events in (time, span_id, position) order.
    let mut ordered: Vec<(Nanos, &str, usize, &GenAIEvent)> = Vec::new();
    for span in &trace.spans {
        for (i, ev) in span.events.iter().enumerate() {
            ordered.push((ev.time, span.span_id.as_str(), i, ev));
        }
    }
    ordered.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

    let known_tasks: BTreeSet<&str> = ordered
        .iter()
        .flat_map(|(.., ev)| ev.tasks().map(|t| t.id.as_str()))
        .collect();
    let mut reported_deps: BTreeSet<(&str, String)> = BTreeSet::new();
    let mut started: HashSet<&str> = HashSet::new();
    for &(time, span_id, _, ev) in &ordered {
        for task in ev.entities.iter().filter(|e| e.kind == EntityKind::Task) {
            for dep in task.depends_on().unwrap_or_default() {
                if !known_tasks.contains(dep.as_str())
                    && reported_deps.insert((task.id.as_str(), dep.clone()))
                {
                    issues.push(ValidationIssue::warning(
                        "unknown-dependency",
                        Location::Span(span_id.to_string()),
                        format!("task `{}` depends on unknown task `{dep}`", task.id),
                    ));
                }
            }
            match ev.event_type {
                LifecycleEventType::Start => {
                    started.insert(task.id.as_str());
                }
                LifecycleEventType::End if !started.contains(task.id.as_str()) => {
                    issues.push(ValidationIssue::warning(
                        "lifecycle-gap",
                        Location::Span(span_id.to_string()),
                        format!("task `{}` ends at {time} without a start event", task.id),
                    ));
                }
                _ => {}
            }
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FailureCategory;

    const MINIMAL: &str = r#"{"trace_id":"t1","span_id":"s1","start_ns":0,"end_ns":5}"#;

    fn task_event(kind: &str, t: i64, id: &str) -> String {
        format!(r#"{{"type":"{kind}","time_ns":{t},"entities":[{{"kind":"task","id":"{id}"}}]}}"#)
    }

    fn span_line(trace: &str, span: &str, parent: Option<&str>, start: i64, end: i64, events: &[String]) -> String {
        let parent = parent.map(|p| format!(r#","parent_span_id":"{p}""#)).unwrap_or_default();
        format!(
            r#"{{"trace_id":"{trace}","span_id":"{span}"{parent},"name":"op","service":"svc","start_ns":{start},"end_ns":{end},"events":[{}]}}"#,
            events.join(",")
        )
    }

    #[test]
    fn minimal_line_defaults() {
        let span = parse_span_line(MINIMAL).unwrap();
        assert_eq!(span.trace_id, "t1");
        assert_eq!(span.parent_span_id, None);
        assert!(span.events.is_empty());
        assert_eq!((span.start, span.end), (0, 5));
    }

    #[test]
    fn failure_event_roundtrips_through_serializer() {
        let mut span = parse_span_line(MINIMAL).unwrap();
        let mut ev = GenAIEvent::new(LifecycleEventType::Failure, 3);
        ev.entities.push(EntityRef::new(EntityKind::Task, "T1"));
        ev.issues.push(Issue::new(
            Severity::CriticalError,
            Some(FailureCategory::Validation),
            "result mismatch",
        ));
        span.events.push(ev);
        let line = serialize_span(&span);
        let back = parse_span_line(&line).unwrap();
        assert_eq!(back, span);
        assert_eq!(back.events[0].issues[0].category, Some(FailureCategory::Validation));
    }

    #[test]
    fn critical_error_with_space_is_accepted() {
        let line = r#"{"trace_id":"t","span_id":"s","start_ns":0,"end_ns":9,"events":[{"type":"failure","time_ns":1,"entities":[{"kind":"task","id":"a"}],"issues":[{"severity":"critical error","category":"validation","message":"result mismatch"}]}]}"#;
        let span = parse_span_line(line).unwrap();
        assert_eq!(span.events[0].issues[0].severity, Severity::CriticalError);
    }

    #[test]
    fn rejects_unknown_event_type() {
        let line = span_line("t", "s", None, 0, 5, &[task_event("paused", 1, "a")]);
        let err = parse_span_line(&line).unwrap_err();
        assert!(matches!(err, Error::UnknownVariant { what: "event type", .. }), "{err}");
    }

    #[test]
    fn rejects_negative_timestamp() {
        let err = parse_span_line(r#"{"trace_id":"t","span_id":"s","start_ns":-4,"end_ns":5}"#).unwrap_err();
        assert!(matches!(err, Error::NegativeTimestamp { value: -4, .. }));
    }

    #[test]
    fn malformed_line_reports_offset() {
        let err = parse_span_line(r#"{"trace_id":"t","span_id":}"#).unwrap_err();
        match err {
            Error::MalformedLine { offset, .. } => assert_eq!(offset, 26),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nested_attribute_is_malformed() {
        let err = parse_span_line(r#"{"trace_id":"t","span_id":"s","start_ns":0,"end_ns":1,"attributes":{"x":{"y":1}}}"#).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { .. }));
    }

    #[test]
    fn groups_by_trace() {
        let lines = [
            span_line("t1", "a", None, 0, 5, &[]),
            span_line("t1", "b", Some("a"), 1, 2, &[]),
            span_line("t2", "c", None, 0, 5, &[]),
        ];
        let set = load_trace_set(&lines).unwrap();
        assert_eq!(set.traces.len(), 2);
        assert_eq!(set.traces["t1"].spans.len(), 2);
        assert_eq!(set.traces["t2"].spans.len(), 1);
        assert!(set.parse_warnings.is_empty());
    }

    #[test]
    fn orphan_parent_warns() {
        let lines = [
            span_line("t1", "a", None, 0, 5, &[]),
            span_line("t1", "b", Some("ghost"), 1, 2, &[]),
        ];
        let set = load_trace_set(&lines).unwrap();
        assert_eq!(set.parse_warnings.len(), 1);
        assert_eq!(set.parse_warnings[0].code, "orphan-parent");
    }

    #[test]
    fn duplicate_span_is_error() {
        let lines = [span_line("t1", "a", None, 0, 5, &[]), span_line("t1", "a", None, 1, 2, &[])];
        assert!(matches!(load_trace_set(&lines), Err(Error::DuplicateSpan { .. })));
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(load_trace_set(["", "  "]), Err(Error::EmptyInput)));
    }

    #[test]
    fn bad_line_carries_line_number() {
        let lines = [span_line("t1", "a", None, 0, 5, &[]), "{oops".to_string()];
        match load_trace_set(&lines).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, Some(2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn event_outside_window() {
        let lines = [span_line("t", "a", None, 0, 5, &[task_event("start", 0, "x"), task_event("end", 10, "x")])];
        let set = load_trace_set(&lines).unwrap();
        let issues = validate_trace(&set.traces["t"], &ValidateOptions::default());
        assert_eq!(issues.len(), 1, "{issues:?}");
        assert_eq!(issues[0].code, "event-outside-span");
        assert_eq!(issues[0].severity, Severity::Warning);
    }

    #[test]
    fn end_without_start() {
        let lines = [span_line("t", "a", None, 0, 5, &[task_event("creation", 0, "x"), task_event("end", 4, "x")])];
        let set = load_trace_set(&lines).unwrap();
        let issues = validate_trace(&set.traces["t"], &ValidateOptions::default());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].code, "lifecycle-gap");
    }

    #[test]
    fn unknown_dependency_and_skew() {
        let dep = r#"{"type":"creation","time_ns":2000000,"entities":[{"kind":"task","id":"x","fields":{"depends_on":["nope"]}}]}"#;
        let lines = [
            span_line("t", "a", None, 2_000_000, 9_000_000, &[dep.to_string()]),
            span_line("t", "b", Some("a"), 500_000, 3_000_000, &[]),
        ];
        let set = load_trace_set(&lines).unwrap();
        let codes: Vec<_> = validate_trace(&set.traces["t"], &ValidateOptions::default())
            .into_iter()
            .map(|i| i.code)
            .collect();
        assert_eq!(codes, ["clock-skew", "unknown-dependency"]);
        let lax = ValidateOptions { skew_tolerance_ns: 2_000_000 };
        assert_eq!(validate_trace(&set.traces["t"], &lax).len(), 1);
    }

    #[test]
    fn rootless_trace_is_critical() {
        let lines = [span_line("t", "b", Some("ghost"), 0, 1, &[])];
        let set = load_trace_set(&lines).unwrap();
        let issues = validate_trace(&set.traces["t"], &ValidateOptions::default());
        assert_eq!(issues[0].severity, Severity::CriticalError);
        assert_eq!(issues[0].code, "no-root");
    }

    #[test]
    fn update_event_may_omit_entities() {
        let ok = r#"{"trace_id":"t","span_id":"s","start_ns":0,"end_ns":5,"events":[{"type":"update","time_ns":1}]}"#;
        assert!(parse_span_line(ok).is_ok());
        let bad = r#"{"trace_id":"t","span_id":"s","start_ns":0,"end_ns":5,"events":[{"type":"start","time_ns":1}]}"#;
        assert!(matches!(parse_span_line(bad), Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn primary_trace_flags_extras() {
        let lines = [
            span_line("t1", "a", None, 0, 5, &[]),
            span_line("t1", "b", Some("a"), 1, 2, &[]),
            span_line("t2", "c", None, 0, 5, &[]),
        ];
        let set = load_trace_set(&lines).unwrap();
        let (primary, extras) = set.primary().unwrap();
        assert_eq!(primary.trace_id, "t1");
        assert_eq!(extras.len(), 1);
        assert_eq!(extras[0].code, "extra-trace");
    }
}
