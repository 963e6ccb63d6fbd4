use std::collections::BTreeMap;

use ata_core::ingest::{load_trace_set, parse_span_line, serialize_span, write_trace};
use ata_core::model::{
    AttrValue, EntityKind, EntityRef, FailureCategory, GenAIEvent, Issue, LifecycleEventType, Severity, SpanRecord,
    Trace,
};
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,8}"
}

fn attr_value() -> impl Strategy<Value = AttrValue> {
    prop_oneof![
        any::<bool>().prop_map(AttrValue::Bool),
        any::<i64>().prop_map(AttrValue::Int),
        (-1e12f64..1e12).prop_map(AttrValue::Float),
        "[ -~]{0,12}".prop_map(AttrValue::Str),
    ]
}

fn issue() -> impl Strategy<Value = Issue> {
    (
        prop::sample::select(Severity::ALL.to_vec()),
        prop::option::of(prop::sample::select(FailureCategory::ALL.to_vec())),
        "[a-z ]{0,20}[a-z]",
        prop::option::of(ident()),
    )
        .prop_map(|(s, c, m, e)| Issue {
            severity: s,
            category: c,
            message: m,
            entity_id: e,
        })
}

fn event() -> impl Strategy<Value = GenAIEvent> {
    (
        prop::sample::select(LifecycleEventType::ALL.to_vec()),
        0u64..1_000_000,
        prop::collection::vec(
            (prop::sample::select(EntityKind::ALL.to_vec()), ident(), prop::option::of(ident())),
            1..3,
        ),
        prop::collection::vec(issue(), 0..3),
    )
        .prop_map(|(kind, time, ents, issues)| GenAIEvent {
            event_type: kind,
            time,
            entities: ents
                .into_iter()
                .map(|(k, id, parent)| {
                    let e = EntityRef::new(k, id);
                    match parent {
                        Some(p) => e.with("parent_task_id", p),
                        None => e,
                    }
                })
                .collect(),
            issues,
        })
}

fn span() -> impl Strategy<Value = SpanRecord> {
    (
        ident(),
        ident(),
        prop::option::of(ident()),
        "[a-z.]{1,10}",
        0u64..1_000_000,
        0u64..1_000_000,
        prop::collection::btree_map("[a-z.]{1,10}", attr_value(), 0..4),
        prop::collection::vec(event(), 0..3),
    )
        .prop_map(|(t, s, p, name, a, b, attrs, events)| SpanRecord {
            trace_id: t,
            span_id: s,
            parent_span_id: p,
            name,
            service: "svc".into(),
            start: a.min(b),
            end: a.max(b),
            attributes: attrs,
            events,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn span_roundtrip(s in span()) {
        let line = serialize_span(&s);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_span_line(&line).unwrap(), s);
    }
}

#[test]
fn ten_thousand_span_roundtrip() {
    let mut spans = Vec::new();
    for i in 0..10_000u64 {
        let mut attributes = BTreeMap::new();
        attributes.insert("usage.input_tokens".to_string(), AttrValue::Int(i as i64));
        attributes.insert("cost.usd".to_string(), AttrValue::Float(i as f64 * 1e-7 + 0.1));
        let mut ev = GenAIEvent::new(LifecycleEventType::Start, 1_000 + i);
        ev.entities.push(EntityRef::new(EntityKind::Task, format!("t{i}")));
        spans.push(SpanRecord {
            trace_id: "big".into(),
            span_id: format!("s{i:05}"),
            parent_span_id: (i > 0).then(|| "s00000".to_string()),
            name: "work".into(),
            service: "svc".into(),
            start: 1_000 + i,
            end: 2_000 + i,
            attributes,
            events: vec![ev],
        });
    }
    let trace = Trace {
        trace_id: "big".into(),
        spans,
    };
    let text = write_trace(&trace);
    let set = load_trace_set(text.lines()).unwrap();
    assert_eq!(set.span_count(), 10_000);
    assert_eq!(set.traces["big"], trace);
    assert_eq!(write_trace(&set.traces["big"]), text);
}
