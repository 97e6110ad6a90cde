use std::fmt;

use serde::{Deserialize, Serialize};

use super::SymmetryError;
use crate::ir::CodeUnit;

/// A bijection on `0..n`. Element `i` is sent to `map[i]`.
///
/// Composition follows function notation: `g.compose(&h)` is `g ∘ h`, which
/// applies `h` first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Permutation, SymmetryError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || std::mem::replace(&mut seen[m], true) {
                return Err(SymmetryError::NotABijection { map });
            }
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Permutation {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Exchanges `a` and `b`.
    pub fn transposition(n: usize, a: usize, b: usize) -> Permutation {
        let mut map: Vec<usize> = (0..n).collect();
        map.swap(a, b);
        Permutation { map }
    }

    /// The permutation placing `order[k]` at position `k`.
    pub fn from_order(order: &[usize]) -> Result<Permutation, SymmetryError> {
        let mut map = vec![usize::MAX; order.len()];
        for (k, &i) in order.iter().enumerate() {
            if i >= map.len() || map[i] != usize::MAX {
                return Err(SymmetryError::NotABijection {
                    map: order.to_vec(),
                });
            }
            map[i] = k;
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn get(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn compose(&self, first: &Permutation) -> Permutation {
        assert_eq!(self.len(), first.len(), "composing permutations of different sizes");
        Permutation {
            map: first.map.iter().map(|&i| self.map[i]).collect(),
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut map = vec![0; self.len()];
        for (i, &m) in self.map.iter().enumerate() {
            map[m] = i;
        }
        Permutation { map }
    }

    /// Element placed at each position: the inverse read as a sequence.
    pub fn order(&self) -> Vec<usize> {
        self.inverse().map
    }

    /// Moves `items[i]` to index `map[i]`.
    pub fn permute<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.len());
        self.order().into_iter().map(|i| items[i].clone()).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = SymmetryError;

    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        Permutation::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Vec<usize> {
        p.map
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.map)
    }
}

/// An instruction permutation together with the token permutation that moves
/// each instruction's tokens as one block, keeping their internal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    perm: Permutation,
    token_map: Permutation,
}

impl BlockPermutation {
    pub fn new(perm: Permutation, unit: &CodeUnit) -> Result<BlockPermutation, SymmetryError> {
        if perm.len() != unit.len() {
            return Err(SymmetryError::SizeMismatch {
                expected: unit.len(),
                found: perm.len(),
            });
        }
        let lengths = unit.token_lengths();
        let mut start = vec![0; unit.len()];
        let mut offset = 0;
        for i in perm.order() {
            start[i] = offset;
            offset += lengths[i];
        }
        let token_map = unit
            .token_owner()
            .iter()
            .zip(unit.intra_pos())
            .map(|(&owner, &pos)| start[owner] + pos - 1)
            .collect();
        Ok(BlockPermutation {
            perm,
            token_map: Permutation { map: token_map },
        })
    }

    pub fn instructions(&self) -> &Permutation {
        &self.perm
    }

    pub fn tokens(&self) -> &Permutation {
        &self.token_map
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Reorders `unit` so the instruction at index `i` lands at `perm(i)`.
pub fn apply(perm: &Permutation, unit: &CodeUnit) -> Result<CodeUnit, SymmetryError> {
    if perm.len() != unit.len() {
        return Err(SymmetryError::SizeMismatch {
            expected: unit.len(),
            found: perm.len(),
        });
    }
    let ops: Vec<_> = unit.ops().cloned().collect();
    // Instructions only move, so labels stay unique and resolvable.
    Ok(CodeUnit::assemble(perm.permute(&ops)))
}

/// Token-level 0/1 matrix `P` with `P[s][token_map(s)] = 1`, so right-multiplying
/// a column-per-token embedding by `P` moves column `s` to `token_map(s)`.
pub fn permutation_matrix(pi: &BlockPermutation) -> Vec<Vec<i64>> {
    let tm = pi.tokens();
    let n = tm.len();
    (0..n)
        .map(|s| {
            let mut row = vec![0; n];
            row[tm.get(s)] = 1;
            row
        })
        .collect()
}
