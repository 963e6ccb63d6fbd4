//! Graph edit distance between task flows.
//!
//! Nodes carry a label; edges are directed and typed (decomposition or
//! dependency). An edit path maps each node of the source graph to a node of
//! the target or deletes it; unmapped target nodes are inserted. Edge costs
//! follow from the mapping: an edge survives only if the same typed edge joins
//! the images, otherwise it is deleted (and the target's is inserted).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::flow::TaskFlowGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GedCostModel {
    pub node_insert: f64,
    pub node_delete: f64,
    /// Cost of relabelling a node; identical labels substitute for free.
    pub node_substitute: f64,
    pub edge_insert: f64,
    pub edge_delete: f64,
}

impl Default for GedCostModel {
    fn default() -> Self {
        GedCostModel {
            node_insert: 1.0,
            node_delete: 1.0,
            node_substitute: 1.0,
            edge_insert: 1.0,
            edge_delete: 1.0,
        }
    }
}

impl GedCostModel {
    pub fn substitute(&self, a: &str, b: &str) -> f64 {
        if a == b {
            0.0
        } else {
            self.node_substitute
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.node_insert,
            self.node_delete,
            self.node_substitute,
            self.edge_insert,
            self.edge_delete,
        ]
        .iter()
        .all(|c| c.is_finite() && *c >= 0.0)
    }
}

pub const DEFAULT_EXACT_BUDGET: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Decomposition,
    Dependency,
}

impl EdgeKind {
    const ALL: [EdgeKind; 2] = [EdgeKind::Decomposition, EdgeKind::Dependency];

    fn bit(self) -> u8 {
        match self {
            EdgeKind::Decomposition => 1,
            EdgeKind::Dependency => 2,
        }
    }
}

/// Labelled digraph with typed edges, indexed densely for the search.
#[derive(Debug, Clone, PartialEq)]
pub struct EditGraph {
    ids: Vec<String>,
    labels: Vec<String>,
    /// `adj[u][v]`: bit set of edge kinds from u to v.
    adj: Vec<Vec<u8>>,
}

impl EditGraph {
    pub fn new(labels: Vec<String>, edges: &[(usize, usize, EdgeKind)]) -> Self {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, labels, edges)
    }

    pub fn with_ids(ids: Vec<String>, labels: Vec<String>, edges: &[(usize, usize, EdgeKind)]) -> Self {
        assert_eq!(ids.len(), labels.len());
        let n = labels.len();
        let mut adj = vec![vec![0u8; n]; n];
        for &(u, v, k) in edges {
            adj[u][v] |= k.bit();
        }
        EditGraph { ids, labels, adj }
    }

    /// Node label is the task label; status is ignored.
    pub fn from_flow(flow: &TaskFlowGraph) -> Self {
        let ids: Vec<String> = flow.nodes.keys().cloned().collect();
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let labels = flow.nodes.values().map(|n| n.label.clone()).collect();
        let mut edges = Vec::new();
        for (p, c) in flow.decomposition_edges() {
            edges.push((index[p], index[c], EdgeKind::Decomposition));
        }
        for (d, t) in flow.dependency_edges() {
            if let (Some(&d), Some(&t)) = (index.get(d), index.get(t)) {
                edges.push((d, t, EdgeKind::Dependency));
            }
        }
        Self::with_ids(ids, labels, &edges)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedResult {
    pub distance: f64,
    pub exact: bool,
    /// Source id -> target id for substituted nodes; only set for exact results.
    pub node_mapping: Option<BTreeMap<String, String>>,
}

fn edge_diff(a: u8, b: u8, costs: &GedCostModel) -> f64 {
    (a & !b).count_ones() as f64 * costs.edge_delete + (b & !a).count_ones() as f64 * costs.edge_insert
}

/// Total cost of the edit path induced by `map` (source index -> target index).
pub fn mapping_cost(a: &EditGraph, b: &EditGraph, map: &[Option<usize>], costs: &GedCostModel) -> f64 {
    let mut cost = 0.0;
    let mut used = vec![false; b.len()];
    for (u, m) in map.iter().enumerate() {
        match m {
            Some(x) => {
                used[*x] = true;
                cost += costs.substitute(&a.labels[u], &b.labels[*x]);
            }
            None => cost += costs.node_delete,
        }
    }
    cost += used.iter().filter(|u| !**u).count() as f64 * costs.node_insert;
    for u in 0..a.len() {
        for v in 0..a.len() {
            let ma = a.adj[u][v];
            match (map[u], map[v]) {
                (Some(x), Some(y)) => cost += edge_diff(ma, b.adj[x][y], costs),
                _ => cost += ma.count_ones() as f64 * costs.edge_delete,
            }
        }
    }
    for x in 0..b.len() {
        for y in 0..b.len() {
            if !used[x] || !used[y] {
                cost += b.adj[x][y].count_ones() as f64 * costs.edge_insert;
            }
        }
    }
    cost
}

struct Search<'g> {
    a: &'g EditGraph,
    b: &'g EditGraph,
    costs: GedCostModel,
    order: Vec<usize>,
    map: Vec<Option<usize>>,
    used: Vec<bool>,
    best: f64,
    best_map: Vec<Option<usize>>,
}

impl Search<'_> {
    /// Cost added by assigning `u` to `x`, against nodes already assigned.
    fn step_cost(&self, u: usize, x: Option<usize>, depth: usize) -> f64 {
        let c = &self.costs;
        let mut cost = match x {
            Some(x) => c.substitute(&self.a.labels[u], &self.b.labels[x]),
            None => c.node_delete,
        };
        let self_loop = self.a.adj[u][u];
        cost += match x {
            Some(x) => edge_diff(self_loop, self.b.adj[x][x], c),
            None => self_loop.count_ones() as f64 * c.edge_delete,
        };
        for &w in &self.order[..depth] {
            let (out_a, in_a) = (self.a.adj[u][w], self.a.adj[w][u]);
            match (x, self.map[w]) {
                (Some(x), Some(y)) => {
                    cost += edge_diff(out_a, self.b.adj[x][y], c);
                    cost += edge_diff(in_a, self.b.adj[y][x], c);
                }
                _ => cost += (out_a.count_ones() + in_a.count_ones()) as f64 * c.edge_delete,
            }
        }
        cost
    }

    /// Admissible bound on the cost still to come after `depth` assignments.
    fn lower_bound(&self, depth: usize) -> f64 {
        let c = &self.costs;
        let rest_a = &self.order[depth..];
        let mut pending = vec![false; self.a.len()];
        for &u in rest_a {
            pending[u] = true;
        }
        let free_b: Vec<usize> = (0..self.b.len()).filter(|&x| !self.used[x]).collect();

        let mut labels: HashMap<&str, (usize, usize)> = HashMap::new();
        for &u in rest_a {
            labels.entry(self.a.labels[u].as_str()).or_default().0 += 1;
        }
        for &x in &free_b {
            labels.entry(self.b.labels[x].as_str()).or_default().1 += 1;
        }
        let common: usize = labels.values().map(|&(p, q)| p.min(q)).sum();
        let (na, nb) = (rest_a.len(), free_b.len());
        let paired = na.min(nb);
        let mut bound = (paired - common) as f64 * c.node_substitute.min(c.node_delete + c.node_insert)
            + (na - paired) as f64 * c.node_delete
            + (nb - paired) as f64 * c.node_insert;

        let mut free = vec![false; self.b.len()];
        for &x in &free_b {
            free[x] = true;
        }
        for kind in EdgeKind::ALL {
            let bit = kind.bit();
            let mut ea = 0usize;
            for u in 0..self.a.len() {
                for v in 0..self.a.len() {
                    if self.a.adj[u][v] & bit != 0 && (pending[u] || pending[v]) {
                        ea += 1;
                    }
                }
            }
            let mut eb = 0usize;
            for x in 0..self.b.len() {
                for y in 0..self.b.len() {
                    if self.b.adj[x][y] & bit != 0 && (free[x] || free[y]) {
                        eb += 1;
                    }
                }
            }
            bound += if ea > eb {
                (ea - eb) as f64 * c.edge_delete
            } else {
                (eb - ea) as f64 * c.edge_insert
            };
        }
        bound
    }

    fn completion_cost(&self) -> f64 {
        let c = &self.costs;
        let mut cost = 0.0;
        for x in 0..self.b.len() {
            if !self.used[x] {
                cost += c.node_insert;
            }
            for y in 0..self.b.len() {
                if !self.used[x] || !self.used[y] {
                    cost += self.b.adj[x][y].count_ones() as f64 * c.edge_insert;
                }
            }
        }
        cost
    }

    fn run(&mut self, depth: usize, acc: f64) {
        if depth == self.order.len() {
            let total = acc + self.completion_cost();
            if total < self.best {
                self.best = total;
                self.best_map = self.map.clone();
            }
            return;
        }
        if acc + self.lower_bound(depth) >= self.best {
            return;
        }
        let u = self.order[depth];
        let mut options: Vec<(f64, Option<usize>)> = (0..self.b.len())
            .filter(|&x| !self.used[x])
            .map(|x| (self.step_cost(u, Some(x), depth), Some(x)))
            .collect();
        options.push((self.step_cost(u, None, depth), None));
        options.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.is_none().cmp(&q.1.is_none())).then(p.1.cmp(&q.1)));
        for (step, x) in options {
            if acc + step >= self.best {
                continue;
            }
            self.map[u] = x;
            if let Some(x) = x {
                self.used[x] = true;
            }
            self.run(depth + 1, acc + step);
            if let Some(x) = x {
                self.used[x] = false;
            }
            self.map[u] = None;
        }
    }
}

/// Source nodes by descending degree, ties by index.
fn search_order(a: &EditGraph) -> Vec<usize> {
    let degree = |u: usize| -> u32 {
        (0..a.len())
            .map(|v| a.adj[u][v].count_ones() + a.adj[v][u].count_ones())
            .sum()
    };
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by_key(|&u| (std::cmp::Reverse(degree(u)), u));
    order
}

/// Deterministic greedy edit path: each source node, in search order, takes
/// the cheapest option given the choices before it. Ties prefer equal labels,
/// then equal ids, then the lower index.
pub fn greedy_mapping(a: &EditGraph, b: &EditGraph, costs: &GedCostModel) -> Vec<Option<usize>> {
    let order = search_order(a);
    let mut s = Search {
        a,
        b,
        costs: *costs,
        order: order.clone(),
        map: vec![None; a.len()],
        used: vec![false; b.len()],
        best: f64::INFINITY,
        best_map: Vec::new(),
    };
    for (depth, &u) in order.iter().enumerate() {
        let mut best: Option<(f64, bool, bool, Option<usize>)> = None;
        let mut consider = |cand: (f64, bool, bool, Option<usize>)| {
            let better = match &best {
                None => true,
                Some(cur) => {
                    cand.0
                        .total_cmp(&cur.0)
                        .then(cand.1.cmp(&cur.1))
                        .then(cand.2.cmp(&cur.2))
                        .is_lt()
                }
            };
            if better {
                best = Some(cand);
            }
        };
        for x in (0..b.len()).filter(|&x| !s.used[x]) {
            let step = s.step_cost(u, Some(x), depth);
            consider((step, a.labels[u] != b.labels[x], a.ids[u] != b.ids[x], Some(x)));
        }
        let del = s.step_cost(u, None, depth);
        consider((del, true, true, None));
        let choice = best.expect("deletion is always an option").3;
        s.map[u] = choice;
        if let Some(x) = choice {
            s.used[x] = true;
        }
    }
    s.map
}

pub fn graph_edit_distance(a: &TaskFlowGraph, b: &TaskFlowGraph, costs: &GedCostModel, budget: usize) -> GedResult {
    edit_distance(&EditGraph::from_flow(a), &EditGraph::from_flow(b), costs, budget)
}

/// Exact branch-and-bound search when both graphs fit in `budget` nodes,
/// otherwise the greedy upper bound flagged as inexact.
pub fn edit_distance(a: &EditGraph, b: &EditGraph, costs: &GedCostModel, budget: usize) -> GedResult {
    let greedy = greedy_mapping(a, b, costs);
    let greedy_cost = mapping_cost(a, b, &greedy, costs);
    if a.len().max(b.len()) > budget {
        // the greedy path is still provably optimal when it meets the bound
        let tight = greedy_cost <= lower_bound(a, b, costs);
        return GedResult {
            distance: greedy_cost,
            exact: tight,
            node_mapping: None,
        };
    }
    let mut s = Search {
        a,
        b,
        costs: *costs,
        order: search_order(a),
        map: vec![None; a.len()],
        used: vec![false; b.len()],
        best: greedy_cost,
        best_map: greedy,
    };
    if greedy_cost > 0.0 {
        s.run(0, 0.0);
    }
    let mapping = s
        .best_map
        .iter()
        .enumerate()
        .filter_map(|(u, x)| x.map(|x| (a.ids[u].clone(), b.ids[x].clone())))
        .collect();
    GedResult {
        distance: s.best,
        exact: true,
        node_mapping: Some(mapping),
    }
}

/// Label-multiset and edge-count bound for a whole pair; never exceeds the
/// exact distance.
pub fn lower_bound(a: &EditGraph, b: &EditGraph, costs: &GedCostModel) -> f64 {
    let s = Search {
        a,
        b,
        costs: *costs,
        order: search_order(a),
        map: vec![None; a.len()],
        used: vec![false; b.len()],
        best: f64::INFINITY,
        best_map: Vec::new(),
    };
    s.lower_bound(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EdgeKind::*;

    fn g(labels: &[&str], edges: &[(usize, usize, EdgeKind)]) -> EditGraph {
        EditGraph::new(labels.iter().map(|s| s.to_string()).collect(), edges)
    }

    fn exact(a: &EditGraph, b: &EditGraph) -> f64 {
        let r = edit_distance(a, b, &GedCostModel::default(), DEFAULT_EXACT_BUDGET);
        assert!(r.exact);
        r.distance
    }

    #[test]
    fn identity_is_zero() {
        let a = g(&["A", "B", "C"], &[(0, 1, Decomposition), (0, 2, Decomposition), (1, 2, Dependency)]);
        assert_eq!(exact(&a, &a), 0.0);
    }

    #[test]
    fn single_substitution() {
        assert_eq!(exact(&g(&["x"], &[]), &g(&["y"], &[])), 1.0);
    }

    #[test]
    fn path_versus_star() {
        // A->B->C against A->B, A->C with the same labels: drop B->C, add A->C.
        let path = g(&["A", "B", "C"], &[(0, 1, Decomposition), (1, 2, Decomposition)]);
        let star = g(&["A", "B", "C"], &[(0, 1, Decomposition), (0, 2, Decomposition)]);
        assert_eq!(exact(&path, &star), 2.0);
        assert_eq!(exact(&star, &path), 2.0);
    }

    #[test]
    fn edge_type_mismatch_costs_two() {
        let a = g(&["A", "B"], &[(0, 1, Decomposition)]);
        let b = g(&["A", "B"], &[(0, 1, Dependency)]);
        assert_eq!(exact(&a, &b), 2.0);
    }

    #[test]
    fn empty_graphs() {
        let e = g(&[], &[]);
        let a = g(&["A", "B"], &[(0, 1, Decomposition)]);
        assert_eq!(exact(&e, &e), 0.0);
        assert_eq!(exact(&e, &a), 3.0);
        assert_eq!(exact(&a, &e), 3.0);
    }

    #[test]
    fn over_budget_is_flagged() {
        let labels: Vec<&str> = vec!["n"; 5];
        let a = g(&labels, &[(0, 1, Decomposition)]);
        let b = g(&labels, &[(1, 2, Decomposition)]);
        let r = edit_distance(&a, &b, &GedCostModel::default(), 4);
        assert!(!r.exact);
        assert!(r.node_mapping.is_none());
        assert!(r.distance >= exact(&a, &b));
    }

    #[test]
    fn mapping_reports_ids() {
        let a = EditGraph::with_ids(vec!["p".into(), "q".into()], vec!["A".into(), "B".into()], &[]);
        let b = EditGraph::with_ids(vec!["r".into(), "s".into()], vec!["B".into(), "A".into()], &[]);
        let r = edit_distance(&a, &b, &GedCostModel::default(), 12);
        assert_eq!(r.distance, 0.0);
        let m = r.node_mapping.unwrap();
        assert_eq!(m["p"], "s");
        assert_eq!(m["q"], "r");
    }

    #[test]
    fn bound_is_admissible_on_small_cases() {
        let a = g(&["A", "B", "B"], &[(0, 1, Decomposition), (0, 2, Decomposition)]);
        let b = g(&["A", "C"], &[(1, 0, Dependency)]);
        assert!(lower_bound(&a, &b, &GedCostModel::default()) <= exact(&a, &b));
    }
}
