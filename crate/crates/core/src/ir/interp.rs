use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CodeUnit, Op, Operand};

/// Step budget used when callers do not pick one.
pub const DEFAULT_FUEL: u64 = 10_000;

/// Range random input values are drawn from. Kept small so comparisons and
/// branch conditions take both outcomes.
const INPUT_RANGE: std::ops::RangeInclusive<i64> = -4..=4;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Store {
    pub vars: BTreeMap<String, i64>,
    pub mem: i64,
}

impl Store {
    pub fn new() -> Store {
        Store::default()
    }

    pub fn with_var(mut self, name: &str, value: i64) -> Store {
        self.vars.insert(name.to_string(), value);
        self
    }

    fn read(&self, name: &str, pc: usize) -> Result<i64, ExecError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ExecError::UndefinedVariable {
                name: name.to_string(),
                pc,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("fuel exhausted after {steps} steps")]
    FuelExhausted { steps: u64 },
    #[error("instruction {pc} reads undefined variable `{name}`")]
    UndefinedVariable { name: String, pc: usize },
}

/// Runs `unit` from `input` until `halt`, falling off the end, or running out
/// of `fuel` executed steps.
pub fn interpret(unit: &CodeUnit, input: &Store, fuel: u64) -> Result<Store, ExecError> {
    let mut store = input.clone();
    let instrs = unit.instructions();
    let mut pc = 0;
    let mut steps = 0u64;
    while pc < instrs.len() {
        if steps == fuel {
            return Err(ExecError::FuelExhausted { steps });
        }
        steps += 1;
        let operand = |o: &Operand, s: &Store| match o {
            Operand::Lit(v) => Ok(*v),
            Operand::Var(v) => s.read(v, pc),
        };
        match &instrs[pc].op {
            Op::AssignConst { dest, value } => {
                store.vars.insert(dest.clone(), *value);
            }
            Op::AssignBinop { dest, op, lhs, rhs } => {
                let v = op.eval(operand(lhs, &store)?, operand(rhs, &store)?);
                store.vars.insert(dest.clone(), v);
            }
            Op::AssignCopy { dest, src } => {
                let v = store.read(src, pc)?;
                store.vars.insert(dest.clone(), v);
            }
            Op::Load { dest } => {
                store.vars.insert(dest.clone(), store.mem);
            }
            Op::Store { src } => {
                store.mem = store.read(src, pc)?;
            }
            Op::Branch { cond, target } => {
                if store.read(cond, pc)? != 0 {
                    // Targets were resolved when the unit was built.
                    pc = unit.label_index(target).expect("resolved label");
                    continue;
                }
            }
            Op::Label(_) => {}
            Op::Halt => break,
        }
        pc += 1;
    }
    Ok(store)
}

/// Result of comparing two units on random inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Equivalence {
    Equivalent {
        trials: usize,
    },
    /// Both runs finished but their final stores differ on `witness`.
    Inequivalent {
        witness: Store,
        left: Store,
        right: Store,
    },
    /// A run failed (fuel or undefined read), so nothing can be concluded.
    Inconclusive {
        witness: Store,
        error: String,
    },
}

impl Equivalence {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Equivalence::Equivalent { .. })
    }

    pub fn is_inequivalent(&self) -> bool {
        matches!(self, Equivalence::Inequivalent { .. })
    }

    pub fn witness(&self) -> Option<&Store> {
        match self {
            Equivalence::Equivalent { .. } => None,
            Equivalence::Inequivalent { witness, .. } | Equivalence::Inconclusive { witness, .. } => {
                Some(witness)
            }
        }
    }
}

/// A store assigning every variable either unit reads, plus the memory cell.
pub fn random_store<R: Rng>(units: &[&CodeUnit], rng: &mut R) -> Store {
    let mut store = Store::new();
    for unit in units {
        for v in unit.read_variables() {
            store.vars.entry(v).or_insert(0);
        }
    }
    for value in store.vars.values_mut() {
        *value = rng.gen_range(INPUT_RANGE);
    }
    store.mem = rng.gen_range(INPUT_RANGE);
    store
}

/// Checks that `left` and `right` produce identical final stores on `trials`
/// seeded random inputs.
pub fn io_equivalent(left: &CodeUnit, right: &CodeUnit, trials: usize, seed: u64) -> Equivalence {
    io_equivalent_with_fuel(left, right, trials, seed, DEFAULT_FUEL)
}

pub fn io_equivalent_with_fuel(
    left: &CodeUnit,
    right: &CodeUnit,
    trials: usize,
    seed: u64,
    fuel: u64,
) -> Equivalence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let input = random_store(&[left, right], &mut rng);
        let outcome = interpret(left, &input, fuel).and_then(|l| Ok((l, interpret(right, &input, fuel)?)));
        match outcome {
            Err(e) => {
                return Equivalence::Inconclusive {
                    witness: input,
                    error: e.to_string(),
                }
            }
            Ok((l, r)) if l != r => {
                return Equivalence::Inequivalent {
                    witness: input,
                    left: l,
                    right: r,
                }
            }
            Ok(_) => {}
        }
    }
    Equivalence::Equivalent { trials }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse;

    #[test]
    fn constant_assignments() {
        let out = interpret(&parse("x=2;y=4").unwrap(), &Store::new(), 10).unwrap();
        assert_eq!(out, Store::new().with_var("x", 2).with_var("y", 4));
    }

    #[test]
    fn increment_then_copy() {
        let input = Store::new().with_var("a", 1);
        let out = interpret(&parse("a=a+1;b=a").unwrap(), &input, 10).unwrap();
        assert_eq!(out, Store::new().with_var("a", 2).with_var("b", 2));
    }

    #[test]
    fn branch_not_taken_falls_through() {
        let u = parse("if t goto L\nx = 1\nL:\ny = 2").unwrap();
        let skip = interpret(&u, &Store::new().with_var("t", 1), 10).unwrap();
        assert_eq!(skip.vars.get("x"), None);
        let fall = interpret(&u, &Store::new().with_var("t", 0), 10).unwrap();
        assert_eq!(fall.vars.get("x"), Some(&1));
        assert_eq!(fall.vars.get("y"), Some(&2));
    }

    #[test]
    fn memory_cell_roundtrip() {
        let u = parse("store a\nb = load").unwrap();
        let out = interpret(&u, &Store::new().with_var("a", 7), 10).unwrap();
        assert_eq!(out.mem, 7);
        assert_eq!(out.vars["b"], 7);
    }

    #[test]
    fn halt_stops() {
        let out = interpret(&parse("x = 1; halt; x = 2").unwrap(), &Store::new(), 10).unwrap();
        assert_eq!(out.vars["x"], 1);
    }

    #[test]
    fn loop_exhausts_fuel() {
        let u = parse("t = 1\nL:\nif t goto L").unwrap();
        assert_eq!(
            interpret(&u, &Store::new(), 50),
            Err(ExecError::FuelExhausted { steps: 50 })
        );
    }

    #[test]
    fn counting_loop_terminates() {
        let u = parse("L:\ni = i + 1\nc = i < 5\nif c goto L").unwrap();
        let out = interpret(&u, &Store::new().with_var("i", 0), 100).unwrap();
        assert_eq!(out.vars["i"], 5);
    }

    #[test]
    fn undefined_read() {
        let err = interpret(&parse("x = y").unwrap(), &Store::new(), 10).unwrap_err();
        assert_eq!(
            err,
            ExecError::UndefinedVariable {
                name: "y".into(),
                pc: 0
            }
        );
    }

    #[test]
    fn deterministic() {
        let u = parse("store a; b = load; c = b * a; if c goto E; d = 1; E:").unwrap();
        let input = Store::new().with_var("a", 3);
        assert_eq!(interpret(&u, &input, 100), interpret(&u, &input, 100));
    }

    #[test]
    fn swap_independent_constants_is_equivalent() {
        let a = parse("x=2;y=4").unwrap();
        let b = parse("y=4;x=2").unwrap();
        assert!(io_equivalent(&a, &b, 20, 1).is_equivalent());
        assert!(io_equivalent(&a, &a, 20, 1).is_equivalent());
    }

    #[test]
    fn reordered_writes_are_inequivalent() {
        let a = parse("x=1;x=2").unwrap();
        let b = parse("x=2;x=1").unwrap();
        match io_equivalent(&a, &b, 5, 9) {
            Equivalence::Inequivalent { witness, left, right } => {
                assert!(witness.vars.is_empty());
                assert_eq!(left.vars["x"], 2);
                assert_eq!(right.vars["x"], 1);
            }
            other => panic!("expected inequivalence, got {other:?}"),
        }
    }

    #[test]
    fn fuel_failure_is_inconclusive() {
        let a = parse("L:\nif t goto L").unwrap();
        let r = io_equivalent_with_fuel(&a, &a, 10, 3, 20);
        // t is drawn from a small range, so some trial takes the loop.
        assert!(matches!(r, Equivalence::Inconclusive { .. }));
        assert!(!r.is_inequivalent());
    }
}
