use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Permutation, SymmetryError};
use crate::pdg::{EdgeKind, Pdg};

/// Largest graph searched exhaustively by default.
pub const DEFAULT_NODE_CAP: usize = 10;

/// Largest group materialised element by element.
pub const DEFAULT_ELEMENT_CAP: usize = 40_320;

/// Above this order closure is checked on sampled pairs instead of all pairs.
const FULL_CLOSURE_ORDER: usize = 1_000;
const SAMPLED_CLOSURE_PAIRS: usize = 100_000;

/// True iff `sigma` maps the typed edge set onto itself.
pub fn is_automorphism(g: &Pdg, sigma: &Permutation) -> Result<bool, SymmetryError> {
    if sigma.len() != g.node_count() {
        return Err(SymmetryError::SizeMismatch {
            expected: g.node_count(),
            found: sigma.len(),
        });
    }
    // A bijection on nodes is injective on edges, so containment suffices.
    Ok(g
        .edges()
        .all(|e| g.has_edge(sigma.get(e.src), sigma.get(e.dst), e.kind)))
}

/// Explicitly listed automorphism group of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutomorphismGroup {
    elements: Vec<Permutation>,
}

impl AutomorphismGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    /// Elements in lexicographic order of their maps; the identity comes first.
    pub fn elements(&self) -> &[Permutation] {
        &self.elements
    }

    pub fn contains(&self, p: &Permutation) -> bool {
        self.elements.binary_search(p).is_ok()
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }

    /// Checks identity, inverses and closure. Closure is exhaustive up to
    /// order 1000 and sampled with a fixed seed above.
    pub fn verify_axioms(&self) -> Result<(), SymmetryError> {
        let n = self.elements.first().map_or(0, Permutation::len);
        let fail = |axiom: &'static str, detail: String| SymmetryError::GroupAxiom { axiom, detail };
        if !self.contains(&Permutation::identity(n)) {
            return Err(fail("identity", "identity missing".into()));
        }
        for g in &self.elements {
            if !self.contains(&g.inverse()) {
                return Err(fail("inverse", format!("inverse of {g} missing")));
            }
        }
        let check = |a: &Permutation, b: &Permutation| {
            let c = a.compose(b);
            if self.contains(&c) {
                Ok(())
            } else {
                Err(fail("closure", format!("{a} ∘ {b} = {c} missing")))
            }
        };
        if self.order() <= FULL_CLOSURE_ORDER {
            for a in &self.elements {
                for b in &self.elements {
                    check(a, b)?;
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for _ in 0..SAMPLED_CLOSURE_PAIRS {
                let a = &self.elements[rng.gen_range(0..self.order())];
                let b = &self.elements[rng.gen_range(0..self.order())];
                check(a, b)?;
            }
        }
        Ok(())
    }
}

/// All automorphisms of `g`, found by backtracking over nodes with matching
/// per-kind degree signatures. Fails when `g` has more than `node_cap` nodes.
pub fn automorphisms(g: &Pdg, node_cap: usize) -> Result<AutomorphismGroup, SymmetryError> {
    automorphisms_bounded(g, node_cap, DEFAULT_ELEMENT_CAP)
}

pub fn automorphisms_bounded(
    g: &Pdg,
    node_cap: usize,
    element_cap: usize,
) -> Result<AutomorphismGroup, SymmetryError> {
    let n = g.node_count();
    if n > node_cap {
        return Err(SymmetryError::TooLarge {
            nodes: n,
            cap: node_cap,
        });
    }
    let signature = g.kind_degrees();
    let adjacency: Vec<Vec<u8>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    EdgeKind::ALL
                        .iter()
                        .enumerate()
                        .filter(|(_, &k)| g.has_edge(i, j, k))
                        .fold(0u8, |acc, (b, _)| acc | (1 << b))
                })
                .collect()
        })
        .collect();

    let mut search = Search {
        n,
        signature: &signature,
        adjacency: &adjacency,
        map: vec![usize::MAX; n],
        used: vec![false; n],
        found: Vec::new(),
        element_cap,
        overflow: false,
    };
    search.extend(0);
    if search.overflow {
        return Err(SymmetryError::GroupTooLarge { cap: element_cap });
    }
    let mut elements = search.found;
    elements.sort();
    let group = AutomorphismGroup { elements };
    group.verify_axioms()?;
    Ok(group)
}

struct Search<'a> {
    n: usize,
    signature: &'a [([usize; 4], [usize; 4])],
    adjacency: &'a [Vec<u8>],
    map: Vec<usize>,
    used: Vec<bool>,
    found: Vec<Permutation>,
    element_cap: usize,
    overflow: bool,
}

impl Search<'_> {
    fn extend(&mut self, node: usize) {
        if self.overflow {
            return;
        }
        if node == self.n {
            if self.found.len() == self.element_cap {
                self.overflow = true;
                return;
            }
            self.found.push(Permutation::new(self.map.clone()).expect("search builds bijections"));
            return;
        }
        for image in 0..self.n {
            if self.used[image] || self.signature[image] != self.signature[node] {
                continue;
            }
            let consistent = (0..node).all(|prev| {
                let p = self.map[prev];
                self.adjacency[prev][node] == self.adjacency[p][image]
                    && self.adjacency[node][prev] == self.adjacency[image][p]
            });
            if !consistent {
                continue;
            }
            self.map[node] = image;
            self.used[image] = true;
            self.extend(node + 1);
            self.used[image] = false;
            self.map[node] = usize::MAX;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(n: usize, edges: &[(usize, usize)]) -> Pdg {
        Pdg::from_edges(n, edges.iter().map(|&(s, d)| (s, d, EdgeKind::Raw))).unwrap()
    }

    #[test]
    fn edgeless_swap() {
        let g = raw(2, &[]);
        assert!(is_automorphism(&g, &Permutation::transposition(2, 0, 1)).unwrap());
    }

    #[test]
    fn chain_swap_is_not() {
        let g = raw(2, &[(0, 1)]);
        assert!(!is_automorphism(&g, &Permutation::transposition(2, 0, 1)).unwrap());
    }

    #[test]
    fn size_mismatch_is_error() {
        assert!(is_automorphism(&raw(3, &[]), &Permutation::identity(2)).is_err());
    }

    #[test]
    fn diamond_has_order_two() {
        let g = raw(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert!(is_automorphism(&g, &Permutation::transposition(4, 1, 2)).unwrap());
        let group = automorphisms(&g, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(group.order(), 2);
        assert!(group.elements()[0].is_identity());
    }

    #[test]
    fn chain_of_three_is_trivial() {
        let group = automorphisms(&raw(3, &[(0, 1), (1, 2)]), DEFAULT_NODE_CAP).unwrap();
        assert!(group.is_trivial());
    }

    #[test]
    fn edgeless_three_is_symmetric_group() {
        let group = automorphisms(&raw(3, &[]), DEFAULT_NODE_CAP).unwrap();
        assert_eq!(group.order(), 6);
    }

    #[test]
    fn two_disjoint_chains() {
        let group = automorphisms(&raw(4, &[(0, 1), (2, 3)]), DEFAULT_NODE_CAP).unwrap();
        assert_eq!(group.order(), 2);
        assert_eq!(group.elements()[1].as_slice(), &[2, 3, 0, 1]);
    }

    #[test]
    fn kinds_must_match() {
        let g = Pdg::from_edges(4, [(0, 1, EdgeKind::Raw), (2, 3, EdgeKind::Waw)]).unwrap();
        assert!(automorphisms(&g, DEFAULT_NODE_CAP).unwrap().is_trivial());
    }

    #[test]
    fn node_cap_enforced() {
        assert!(matches!(
            automorphisms(&raw(11, &[]), DEFAULT_NODE_CAP),
            Err(SymmetryError::TooLarge { nodes: 11, cap: 10 })
        ));
    }

    #[test]
    fn element_cap_enforced() {
        assert!(matches!(
            automorphisms_bounded(&raw(6, &[]), 10, 100),
            Err(SymmetryError::GroupTooLarge { cap: 100 })
        ));
    }

    #[test]
    fn large_symmetric_group_passes_sampled_closure() {
        let group = automorphisms(&raw(7, &[]), DEFAULT_NODE_CAP).unwrap();
        assert_eq!(group.order(), 5040);
    }

    #[test]
    fn broken_group_fails_axioms() {
        let group = AutomorphismGroup {
            elements: vec![Permutation::identity(3), Permutation::new(vec![1, 2, 0]).unwrap()],
        };
        assert!(matches!(
            group.verify_axioms(),
            Err(SymmetryError::GroupAxiom { axiom: "inverse", .. })
        ));
    }
}
