//! Domain vocabulary shared by every stage of the pipeline: entities, lifecycle
//! events, issues, spans and traces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Timestamps are integer nanoseconds since the Unix epoch.
pub type Nanos = u64;

macro_rules! closed_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $what:literal {
            $( $variant:ident => $text:literal $(| $alias:literal)* ),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $( $variant ),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$( $name::$variant ),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $( $name::$variant => $text ),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
                match norm.as_str() {
                    $( $text $(| $alias)* => Ok($name::$variant), )+
                    _ => Err(Error::UnknownVariant { what: $what, value: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_enum! {
    EntityKind, "entity kind" {
        Resource => "resource",
        Tool => "tool",
        Workflow => "workflow",
        Task => "task",
        Agent => "agent",
        Organization => "organization",
    }
}

closed_enum! {
    LifecycleEventType, "event type" {
        Creation => "creation",
        Update => "update",
        Start => "start",
        End => "end",
        Suspension => "suspension",
        Abortion => "abortion",
        Failure => "failure",
        Deletion => "deletion",
    }
}

closed_enum! {
    /// Declared least to most severe so the derived `Ord` is the severity order.
    Severity, "severity" {
        Debug => "debug",
        Info => "info",
        Warning => "warning",
        CriticalError => "critical_error" | "critical",
    }
}

closed_enum! {
    FailureCategory, "failure category" {
        InstructionViolation => "instruction_violation",
        IncorrectInput => "incorrect_input",
        Validation => "validation",
        Validator => "validator",
    }
}

/// Case-insensitive entity kind lookup.
pub fn parse_entity_kind(text: &str) -> Result<EntityKind, Error> {
    text.parse()
}

impl Severity {
    /// Severities that count as failures.
    pub fn is_failure(self) -> bool {
        self >= Severity::Warning
    }
}

/// Reserved span attribute keys carrying trace metrics.
pub mod attr {
    pub const INPUT_TOKENS: &str = "usage.input_tokens";
    pub const OUTPUT_TOKENS: &str = "usage.output_tokens";
    pub const LLM_MODEL: &str = "llm.model";
    pub const LLM_CALL: &str = "llm.call";
    pub const TOOL_CALL: &str = "tool.call";
    pub const COST_USD: &str = "cost.usd";
    /// Final numeric answer, set on the root span of a calculator run.
    pub const RESULT: &str = "calc.result";
}

/// Flat attribute value. Nested structures belong in entity fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl AttrValue {
    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            AttrValue::Int(i) if i >= 0 => Some(i as u64),
            AttrValue::Float(f) if f >= 0.0 && f.fract() == 0.0 => Some(f as u64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            AttrValue::Int(i) => Some(i as f64),
            AttrValue::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            AttrValue::Bool(b) => Some(b),
            _ => None,
        }
    }
}

impl From<bool> for AttrValue {
    fn from(v: bool) -> Self {
        AttrValue::Bool(v)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Float(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// Required for failures; informational issues may leave it unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<FailureCategory>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
}

impl Issue {
    pub fn new(severity: Severity, category: Option<FailureCategory>, message: impl Into<String>) -> Self {
        Issue {
            severity,
            category,
            message: message.into(),
            entity_id: None,
        }
    }

    pub fn on(mut self, entity_id: impl Into<String>) -> Self {
        self.entity_id = Some(entity_id.into());
        self
    }
}

/// Entity field keys understood for task entities.
pub mod field {
    pub const PARENT_TASK_ID: &str = "parent_task_id";
    pub const DEPENDS_ON: &str = "depends_on";
    pub const TOOL_ID: &str = "tool_id";
    pub const AGENT_ID: &str = "agent_id";
    pub const WORKFLOW_ID: &str = "workflow_id";
    pub const NAME: &str = "name";
    pub const INPUT: &str = "input";
    pub const OUTPUT: &str = "output";
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityRef {
    pub kind: EntityKind,
    pub id: String,
    pub fields: BTreeMap<String, serde_json::Value>,
}

impl EntityRef {
    pub fn new(kind: EntityKind, id: impl Into<String>) -> Self {
        EntityRef {
            kind,
            id: id.into(),
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.fields.insert(key.to_string(), value.into());
        self
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(|v| v.as_str())
    }

    /// `None` when the field is absent, so callers can tell "no declaration"
    /// apart from "declared empty".
    pub fn depends_on(&self) -> Option<Vec<String>> {
        let list = self.fields.get(field::DEPENDS_ON)?.as_array()?;
        Some(
            list.iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
        )
    }

    pub(crate) fn check(&self) -> Result<(), Error> {
        if self.id.is_empty() {
            return Err(Error::InvalidRecord("entity id is empty".into()));
        }
        if let Some(field) = self.fields.get(field::DEPENDS_ON) {
            let Some(list) = field.as_array() else {
                return Err(Error::InvalidRecord(format!(
                    "entity `{}`: depends_on must be a list",
                    self.id
                )));
            };
            if list.iter().any(|v| !v.is_string()) {
                return Err(Error::InvalidRecord(format!(
                    "entity `{}`: depends_on entries must be task ids",
                    self.id
                )));
            }
            if list.iter().any(|v| v.as_str() == Some(self.id.as_str())) {
                return Err(Error::InvalidRecord(format!(
                    "task `{}` depends on itself",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenAIEvent {
    pub event_type: LifecycleEventType,
    pub time: Nanos,
    pub entities: Vec<EntityRef>,
    pub issues: Vec<Issue>,
}

impl GenAIEvent {
    pub fn new(event_type: LifecycleEventType, time: Nanos) -> Self {
        GenAIEvent {
            event_type,
            time,
            entities: Vec::new(),
            issues: Vec::new(),
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &EntityRef> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanRecord {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub name: String,
    pub service: String,
    pub start: Nanos,
    pub end: Nanos,
    pub attributes: BTreeMap<String, AttrValue>,
    pub events: Vec<GenAIEvent>,
}

impl SpanRecord {
    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attributes.get(key)
    }

    pub fn flag(&self, key: &str) -> bool {
        self.attr(key).and_then(AttrValue::as_bool).unwrap_or(false)
    }

    pub fn count(&self, key: &str) -> u64 {
        self.attr(key).and_then(AttrValue::as_u64).unwrap_or(0)
    }

    pub fn decimal(&self, key: &str) -> f64 {
        self.attr(key).and_then(AttrValue::as_f64).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_id: String,
    pub spans: Vec<SpanRecord>,
}

impl Trace {
    pub fn span(&self, span_id: &str) -> Option<&SpanRecord> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }

    /// Spans without a parent reference.
    pub fn roots(&self) -> impl Iterator<Item = &SpanRecord> {
        self.spans.iter().filter(|s| s.parent_span_id.is_none())
    }

    /// Sorts spans by (start, span_id).
    pub fn canonicalize(&mut self) {
        self.spans
            .sort_by(|a, b| (a.start, &a.span_id).cmp(&(b.start, &b.span_id)));
    }

    /// Final numeric result recorded on the root span, if any.
    pub fn result(&self) -> Option<f64> {
        self.roots()
            .find_map(|s| s.attr(attr::RESULT).and_then(AttrValue::as_f64))
    }
}
