//! Brute-force graph edit distance: tries every partial injective node map.

use std::collections::BTreeSet;

use ata_core::variability::ged::{EdgeKind, EditGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Small {
    pub labels: Vec<String>,
    /// (from, to, kind) with kind 0 = decomposition, 1 = dependency.
    pub edges: BTreeSet<(usize, usize, u8)>,
}

/// Unit costs for every node and edge operation.
pub fn brute_force_ged(a: &Small, b: &Small) -> f64 {
    let mut best = f64::INFINITY;
    let mut map = vec![None; a.labels.len()];
    let mut used = vec![false; b.labels.len()];
    search(a, b, 0, &mut map, &mut used, &mut best);
    best
}

fn search(a: &Small, b: &Small, i: usize, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>, best: &mut f64) {
    if i == a.labels.len() {
        *best = best.min(cost(a, b, map));
        return;
    }
    map[i] = None;
    search(a, b, i + 1, map, used, best);
    for j in 0..b.labels.len() {
        if !used[j] {
            used[j] = true;
            map[i] = Some(j);
            search(a, b, i + 1, map, used, best);
            used[j] = false;
        }
    }
    map[i] = None;
}

fn cost(a: &Small, b: &Small, map: &[Option<usize>]) -> f64 {
    let mut c = 0.0;
    let mut hit = vec![false; b.labels.len()];
    for (i, m) in map.iter().enumerate() {
        match m {
            None => c += 1.0,
            Some(j) => {
                hit[*j] = true;
                if a.labels[i] != b.labels[*j] {
                    c += 1.0;
                }
            }
        }
    }
    c += hit.iter().filter(|h| !**h).count() as f64;
    // Image of a's edges under the map; edges touching deleted nodes vanish.
    let image: BTreeSet<(usize, usize, u8)> = a
        .edges
        .iter()
        .filter_map(|&(u, v, k)| Some((map[u]?, map[v]?, k)))
        .collect();
    let kept = image.intersection(&b.edges).count();
    c += (a.edges.len() - kept) as f64;
    c += (b.edges.len() - kept) as f64;
    c
}

pub fn to_edit_graph(s: &Small) -> EditGraph {
    let edges: Vec<_> = s
        .edges
        .iter()
        .map(|&(u, v, k)| (u, v, if k == 0 { EdgeKind::Decomposition } else { EdgeKind::Dependency }))
        .collect();
    EditGraph::new(s.labels.clone(), &edges)
}

/// `count` graphs of 0..=`max_nodes` nodes over labels a, b, c, without
/// self loops.
#[allow(dead_code)]
pub fn seeded_graphs(seed: u64, count: usize, max_nodes: usize) -> Vec<Small> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(0..=max_nodes);
            let labels = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)].to_string()).collect();
            let mut edges = BTreeSet::new();
            for u in 0..n {
                for v in (0..n).filter(|&v| v != u) {
                    if rng.random_bool(0.25) {
                        edges.insert((u, v, rng.random_range(0..2u8)));
                    }
                }
            }
            Small { labels, edges }
        })
        .collect()
}
