use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Pdg;
use crate::ir::CodeUnit;

/// `(positive, negative)` distances from the chosen lowest common ancestor of
/// a pair to its first and second member, or `None` when the pair has no
/// common ancestor.
pub type Distance = Option<(u32, u32)>;

/// Instruction-level distance matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<Distance>,
}

/// Unweighted directed shortest-path lengths from every node.
pub(crate) fn all_pairs_hops(g: &Pdg) -> Vec<Vec<Option<u32>>> {
    let n = g.node_count();
    (0..n)
        .map(|src| {
            let mut dist = vec![None; n];
            dist[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let d = dist[u].unwrap();
                for &v in g.successors(u) {
                    if dist[v].is_none() {
                        dist[v] = Some(d + 1);
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

impl DistanceMatrix {
    /// For each pair, the common ancestor minimising the summed distance;
    /// ties go to the lexicographically smallest `(positive, negative)`.
    /// Selection never looks at node identities.
    pub fn build(g: &Pdg) -> DistanceMatrix {
        let n = g.node_count();
        let hops = all_pairs_hops(g);
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let best = (0..n)
                    .filter_map(|a| Some((hops[a][i]?, hops[a][j]?)))
                    .min_by_key(|&(p, q)| (p + q, p, q));
                entries.push(best);
            }
        }
        DistanceMatrix { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Distance {
        self.entries[i * self.n + j]
    }

    /// Entries with rows and columns moved by `map` (node `i` goes to `map[i]`).
    pub fn permuted(&self, map: &[usize]) -> DistanceMatrix {
        assert_eq!(map.len(), self.n);
        let mut entries = vec![None; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                entries[map[i] * self.n + map[j]] = self.get(i, j);
            }
        }
        DistanceMatrix { n: self.n, entries }
    }

    /// One distance channel as an integer matrix, `-1` standing for `None`.
    pub fn channel(&self, negative: bool) -> Vec<Vec<i64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| match self.get(i, j) {
                        Some((p, q)) => i64::from(if negative { q } else { p }),
                        None => -1,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Distance matrix over tokens: a token pair takes the entry of its owning
/// instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDistance {
    n: usize,
    entries: Vec<Distance>,
}

impl TokenDistance {
    pub fn expand(d: &DistanceMatrix, unit: &CodeUnit) -> TokenDistance {
        assert_eq!(d.len(), unit.len(), "distance matrix was not built from this unit");
        let owner = unit.token_owner();
        let n = owner.len();
        let mut entries = Vec::with_capacity(n * n);
        for &oi in owner {
            for &oj in owner {
                entries.push(if oi == oj { Some((0, 0)) } else { d.get(oi, oj) });
            }
        }
        TokenDistance { n, entries }
    }

    /// Raw constructor for tests and synthetic inputs.
    pub fn from_entries(n: usize, entries: Vec<Distance>) -> TokenDistance {
        assert_eq!(entries.len(), n * n);
        TokenDistance { n, entries }
    }

    pub fn uniform(n: usize, value: Distance) -> TokenDistance {
        TokenDistance {
            n,
            entries: vec![value; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, s: usize, t: usize) -> Distance {
        self.entries[s * self.n + t]
    }

    /// Entries moved by the token bijection `map`.
    pub fn permuted(&self, map: &[usize]) -> TokenDistance {
        assert_eq!(map.len(), self.n);
        let mut entries = vec![None; self.n * self.n];
        for s in 0..self.n {
            for t in 0..self.n {
                entries[map[s] * self.n + map[t]] = self.get(s, t);
            }
        }
        TokenDistance { n: self.n, entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdg::{build_pdg, EdgeKind};

    fn graph(n: usize, edges: &[(usize, usize)]) -> Pdg {
        Pdg::from_edges(n, edges.iter().map(|&(s, d)| (s, d, EdgeKind::Raw))).unwrap()
    }

    #[test]
    fn chain_pair() {
        let d = DistanceMatrix::build(&graph(2, &[(0, 1)]));
        assert_eq!(d.get(0, 1), Some((0, 1)));
        assert_eq!(d.get(1, 0), Some((1, 0)));
    }

    #[test]
    fn diagonal_is_zero() {
        let d = DistanceMatrix::build(&graph(4, &[(0, 1), (2, 3)]));
        for i in 0..4 {
            assert_eq!(d.get(i, i), Some((0, 0)));
        }
    }

    #[test]
    fn diamond_siblings_meet_at_root() {
        let d = DistanceMatrix::build(&graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]));
        assert_eq!(d.get(1, 2), Some((1, 1)));
        assert_eq!(d.get(0, 3), Some((0, 2)));
        assert_eq!(d.get(3, 1), Some((1, 0)));
    }

    #[test]
    fn disconnected_pair_is_none() {
        let d = DistanceMatrix::build(&graph(3, &[(0, 1)]));
        assert_eq!(d.get(0, 2), None);
        assert_eq!(d.get(2, 1), None);
    }

    #[test]
    fn channels_use_minus_one_for_none() {
        let d = DistanceMatrix::build(&graph(3, &[(0, 1)]));
        assert_eq!(d.channel(false)[0], vec![0, 0, -1]);
        assert_eq!(d.channel(true)[0], vec![0, 1, -1]);
    }

    #[test]
    fn token_expansion() {
        let unit = crate::ir::parse("a=a+1;b=a").unwrap();
        let d = DistanceMatrix::build(&build_pdg(&unit));
        let t = TokenDistance::expand(&d, &unit);
        assert_eq!(t.len(), 8);
        assert_eq!(t.get(0, 7), d.get(0, 1));
        assert_eq!(t.get(7, 0), Some((1, 0)));
        for s in 0..5 {
            for u in 0..5 {
                assert_eq!(t.get(s, u), Some((0, 0)));
            }
        }
    }

    #[test]
    fn empty_expansion() {
        let unit = crate::ir::parse("").unwrap();
        let d = DistanceMatrix::build(&build_pdg(&unit));
        assert!(TokenDistance::expand(&d, &unit).is_empty());
    }
}
