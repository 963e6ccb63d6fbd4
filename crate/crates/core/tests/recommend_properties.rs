use std::collections::HashMap;

use ata_core::analytics::{recommend, RecommendConfig, RecommendationKind};
use ata_core::flow::{TaskFlowGraph, TaskNode};
use proptest::prelude::*;

/// Root `r` with up to eight children; dependencies only point backwards so
/// the sibling graph is acyclic.
fn flow() -> impl Strategy<Value = TaskFlowGraph> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), n),
            prop::collection::vec((0u64..100, 1u64..40), n),
        )
            .prop_map(move |(deps, times)| {
                let mut g = TaskFlowGraph::default();
                let mut root = TaskNode::new("r", "root");
                root.start = Some(0);
                root.end = Some(1_000);
                g.nodes.insert("r".into(), root);
                for i in 0..n {
                    let mut t = TaskNode::new(format!("c{i}"), format!("l{}", i % 3));
                    t.parent = Some("r".into());
                    t.depends_on = (0..i).filter(|&j| deps[i][j] && (i + j) % 3 == 0).map(|j| format!("c{j}")).collect();
                    t.start = Some(times[i].0 * 10);
                    t.end = Some(times[i].0 * 10 + times[i].1);
                    g.nodes.insert(t.task_id.clone(), t);
                }
                g.finalize(&HashMap::new());
                g
            })
    })
}

/// Depth-first reachability along dependency edges.
fn reaches(g: &TaskFlowGraph, from: &str, to: &str) -> bool {
    let mut stack = vec![from.to_string()];
    let mut seen = std::collections::HashSet::new();
    while let Some(cur) = stack.pop() {
        if cur == to {
            return true;
        }
        if !seen.insert(cur.clone()) {
            continue;
        }
        for n in g.nodes.values().filter(|n| n.depends_on.contains(&cur)) {
            stack.push(n.task_id.clone());
        }
    }
    false
}

fn compatible(g: &TaskFlowGraph, a: &str, b: &str) -> bool {
    let (x, y) = (&g.nodes[a], &g.nodes[b]);
    let disjoint = x.end.unwrap() < y.start.unwrap() || y.end.unwrap() < x.start.unwrap();
    a != b && disjoint && !reaches(g, a, b) && !reaches(g, b, a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parallel_groups_are_maximal_independent_sets(g in flow()) {
        let recs = recommend(&g, &RecommendConfig::default());
        let kids: Vec<String> = g.children("r").map(|n| n.task_id.clone()).collect();
        let groups: Vec<&Vec<String>> = recs
            .iter()
            .filter(|r| r.kind == RecommendationKind::ParallelExecution)
            .map(|r| &r.target_tasks)
            .collect();
        for grp in &groups {
            prop_assert!(grp.len() >= 2);
            for a in grp.iter() {
                for b in grp.iter().filter(|b| *b != a) {
                    prop_assert!(compatible(&g, a, b), "{} {}", a, b);
                }
            }
            for k in kids.iter().filter(|k| !grp.contains(k)) {
                prop_assert!(!grp.iter().all(|m| compatible(&g, k, m)), "group {:?} could take {}", grp, k);
            }
        }
        for a in &kids {
            for b in &kids {
                if a < b && compatible(&g, a, b) {
                    prop_assert!(groups.iter().any(|grp| grp.contains(a) && grp.contains(b)));
                }
            }
        }
    }

    #[test]
    fn gain_is_sum_minus_longest(g in flow()) {
        for r in recommend(&g, &RecommendConfig::default()) {
            if r.kind == RecommendationKind::ParallelExecution {
                let d: Vec<u64> = r.target_tasks.iter().map(|t| g.nodes[t].duration().unwrap()).collect();
                prop_assert_eq!(r.estimated_latency_gain_ns, d.iter().sum::<u64>() - d.iter().max().unwrap());
            }
        }
    }
}
