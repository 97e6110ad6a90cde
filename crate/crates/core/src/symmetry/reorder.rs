use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Permutation, SymmetryError};
use crate::pdg::Pdg;

/// Kahn layers: layer `k` holds the nodes whose longest incoming path has `k`
/// edges. Fails with a witness cycle if the edges are not acyclic.
pub fn kahn_layers(g: &Pdg) -> Result<Vec<Vec<usize>>, SymmetryError> {
    let n = g.node_count();
    let mut indeg: Vec<usize> = (0..n).map(|v| g.predecessors(v).len()).collect();
    let mut frontier: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut layers = Vec::new();
    let mut placed = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.successors(u) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    next.push(v);
                }
            }
        }
        placed += frontier.len();
        next.sort_unstable();
        layers.push(std::mem::replace(&mut frontier, next));
    }
    if placed < n {
        let remaining: Vec<bool> = indeg.iter().map(|&d| d > 0).collect();
        return Err(SymmetryError::Cycle {
            witness: find_cycle(g, &remaining),
        });
    }
    Ok(layers)
}

/// Some cycle among nodes flagged in `remaining`. Every such node still has a
/// predecessor in the set, so walking predecessors must repeat a node.
fn find_cycle(g: &Pdg, remaining: &[bool]) -> Vec<usize> {
    let start = remaining.iter().position(|&r| r).expect("a node is left");
    let mut seen = vec![usize::MAX; g.node_count()];
    let mut walk = Vec::new();
    let mut cur = start;
    while seen[cur] == usize::MAX {
        seen[cur] = walk.len();
        walk.push(cur);
        cur = *g
            .predecessors(cur)
            .iter()
            .find(|&&p| remaining[p])
            .expect("remaining nodes keep a remaining predecessor");
    }
    let mut cycle = walk[seen[cur]..].to_vec();
    cycle.reverse();
    cycle
}

/// True iff placing node `i` at `perm(i)` keeps every edge pointing forward.
pub fn is_linear_extension(g: &Pdg, perm: &Permutation) -> bool {
    perm.len() == g.node_count() && g.edges().all(|e| perm.get(e.src) < perm.get(e.dst))
}

/// Draws a legal reordering.
///
/// The permutable groups are the Kahn layers with at least two nodes. A
/// seeded choice of `round(percent · groups / 100)` of them get their members'
/// priorities shuffled; every other node keeps its source index as priority.
/// A Kahn sort that always emits the ready node of lowest priority then yields
/// the result, which is a linear extension of the edge order. `percent = 0`
/// is the identity.
pub fn sample_reordering(g: &Pdg, percent: u32, seed: u64) -> Result<Permutation, SymmetryError> {
    if percent > 100 {
        return Err(SymmetryError::Percent(percent));
    }
    let layers = kahn_layers(g)?;
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut groups: Vec<&Vec<usize>> = layers.iter().filter(|l| l.len() > 1).collect();
    let chosen = (percent as usize * groups.len() + 50) / 100;
    groups.shuffle(&mut rng);

    let mut priority: Vec<usize> = (0..n).collect();
    for layer in groups.into_iter().take(chosen) {
        let mut keys = layer.clone();
        keys.shuffle(&mut rng);
        for (&node, key) in layer.iter().zip(keys) {
            priority[node] = key;
        }
    }

    let mut indeg: Vec<usize> = (0..n).map(|v| g.predecessors(v).len()).collect();
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&v| indeg[v] == 0)
        .map(|v| Reverse((priority[v], v)))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, u))) = ready.pop() {
        order.push(u);
        for &v in g.successors(u) {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse((priority[v], v)));
            }
        }
    }
    Permutation::from_order(&order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;
    use crate::pdg::{build_pdg, EdgeKind};

    fn raw(n: usize, edges: &[(usize, usize)]) -> Pdg {
        Pdg::from_edges(n, edges.iter().map(|&(s, d)| (s, d, EdgeKind::Raw))).unwrap()
    }

    #[test]
    fn zero_percent_is_identity() {
        let g = build_pdg(&parse("x=1;y=2;z=x;w=y;store z").unwrap());
        for seed in 0..20 {
            assert!(sample_reordering(&g, 0, seed).unwrap().is_identity());
        }
    }

    #[test]
    fn independent_pair_gives_both_orders() {
        let g = build_pdg(&parse("x=2;y=4").unwrap());
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            seen.insert(sample_reordering(&g, 100, seed).unwrap().as_slice().to_vec());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn chain_only_identity() {
        let g = raw(3, &[(0, 1), (1, 2)]);
        for percent in [0, 50, 100] {
            assert!(sample_reordering(&g, percent, 7).unwrap().is_identity());
        }
    }

    #[test]
    fn layers_follow_longest_path() {
        let g = raw(4, &[(0, 1), (1, 3), (2, 3)]);
        assert_eq!(kahn_layers(&g).unwrap(), vec![vec![0, 2], vec![1], vec![3]]);
    }

    #[test]
    fn cycle_is_reported() {
        let g = raw(4, &[(0, 1), (1, 2), (2, 1), (2, 3)]);
        match sample_reordering(&g, 50, 1) {
            Err(SymmetryError::Cycle { witness }) => {
                let mut w = witness.clone();
                w.sort();
                assert_eq!(w, vec![1, 2]);
            }
            other => panic!("expected a cycle, got {other:?}"),
        }
    }

    #[test]
    fn rejects_percent_above_hundred() {
        assert!(matches!(
            sample_reordering(&raw(1, &[]), 101, 0),
            Err(SymmetryError::Percent(101))
        ));
    }

    #[test]
    fn samples_are_linear_extensions() {
        let g = raw(6, &[(0, 2), (1, 2), (2, 4), (3, 5)]);
        for seed in 0..50 {
            let p = sample_reordering(&g, 100, seed).unwrap();
            assert!(is_linear_extension(&g, &p));
        }
    }
}
