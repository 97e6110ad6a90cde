//! A small three-address instruction language.
//!
//! Programs are flat lists of instructions over named integer variables and a
//! single memory cell that every `load` and `store` aliases. Control flow is
//! limited to conditional jumps to labels, so a unit is always a straight list
//! that can be permuted instruction by instruction.
//!
//! Grammar, one instruction per line or separated by `;`:
//!
//! ```text
//! x = 3            assign a constant
//! x = y + 1        binary operator: + - * < ==  (operands are variables or literals)
//! x = y            copy
//! x = load         read the memory cell
//! store x          write the memory cell
//! if t goto L      jump to L when t != 0
//! L:               label
//! halt             stop
//! ```
//!
//! Variables match `[a-z][a-z0-9]*` and may not be a keyword; labels may also
//! use upper-case letters and `_`. `#` starts a comment.

mod interp;
mod parse;

pub use interp::{
    interpret, io_equivalent, io_equivalent_with_fuel, random_store, Equivalence, ExecError, Store,
    DEFAULT_FUEL,
};
pub use parse::parse;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate label `{label}` at line {line}")]
    DuplicateLabel { label: String, line: usize },
    #[error("branch at line {line} targets unknown label `{label}`")]
    UnresolvedTarget { label: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Lt => "<",
            BinOp::Eq => "==",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "<" => BinOp::Lt,
            "==" => BinOp::Eq,
            _ => return None,
        })
    }

    /// Integer semantics; arithmetic wraps, comparisons yield 0 or 1.
    pub fn eval(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            BinOp::Add => lhs.wrapping_add(rhs),
            BinOp::Sub => lhs.wrapping_sub(rhs),
            BinOp::Mul => lhs.wrapping_mul(rhs),
            BinOp::Lt => (lhs < rhs) as i64,
            BinOp::Eq => (lhs == rhs) as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Var(String),
    Lit(i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Var(v) => f.write_str(v),
            Operand::Lit(n) => write!(f, "{n}"),
        }
    }
}

/// Something an instruction can read or write.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Var(String),
    /// The one memory cell; all loads and stores alias it.
    Mem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstrKind {
    AssignConst,
    AssignBinop,
    AssignCopy,
    Load,
    Store,
    Branch,
    Label,
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    AssignConst {
        dest: String,
        value: i64,
    },
    AssignBinop {
        dest: String,
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    AssignCopy {
        dest: String,
        src: String,
    },
    Load {
        dest: String,
    },
    Store {
        src: String,
    },
    Branch {
        cond: String,
        target: String,
    },
    Label(String),
    Halt,
}

impl Op {
    pub fn kind(&self) -> InstrKind {
        match self {
            Op::AssignConst { .. } => InstrKind::AssignConst,
            Op::AssignBinop { .. } => InstrKind::AssignBinop,
            Op::AssignCopy { .. } => InstrKind::AssignCopy,
            Op::Load { .. } => InstrKind::Load,
            Op::Store { .. } => InstrKind::Store,
            Op::Branch { .. } => InstrKind::Branch,
            Op::Label(_) => InstrKind::Label,
            Op::Halt => InstrKind::Halt,
        }
    }

    pub fn dest(&self) -> Option<&str> {
        match self {
            Op::AssignConst { dest, .. }
            | Op::AssignBinop { dest, .. }
            | Op::AssignCopy { dest, .. }
            | Op::Load { dest } => Some(dest),
            _ => None,
        }
    }

    /// Branches, labels and `halt` decide which instructions execute.
    pub fn is_control(&self) -> bool {
        matches!(self, Op::Branch { .. } | Op::Label(_) | Op::Halt)
    }

    pub fn touches_memory(&self) -> bool {
        matches!(self, Op::Load { .. } | Op::Store { .. })
    }

    pub fn reads(&self) -> Vec<Location> {
        let var = |v: &String| Location::Var(v.clone());
        match self {
            Op::AssignConst { .. } | Op::Label(_) | Op::Halt => vec![],
            Op::AssignBinop { lhs, rhs, .. } => {
                let mut out = Vec::new();
                for operand in [lhs, rhs] {
                    if let Operand::Var(v) = operand {
                        let loc = var(v);
                        if !out.contains(&loc) {
                            out.push(loc);
                        }
                    }
                }
                out
            }
            Op::AssignCopy { src, .. } => vec![var(src)],
            Op::Load { .. } => vec![Location::Mem],
            Op::Store { src } => vec![var(src)],
            Op::Branch { cond, .. } => vec![var(cond)],
        }
    }

    pub fn writes(&self) -> Vec<Location> {
        match self {
            Op::Store { .. } => vec![Location::Mem],
            other => other
                .dest()
                .map(|d| vec![Location::Var(d.to_string())])
                .unwrap_or_default(),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let s = |x: &str| x.to_string();
        match self {
            Op::AssignConst { dest, value } => vec![s(dest), s("="), value.to_string()],
            Op::AssignBinop { dest, op, lhs, rhs } => vec![
                s(dest),
                s("="),
                lhs.to_string(),
                s(op.symbol()),
                rhs.to_string(),
            ],
            Op::AssignCopy { dest, src } => vec![s(dest), s("="), s(src)],
            Op::Load { dest } => vec![s(dest), s("="), s("load")],
            Op::Store { src } => vec![s("store"), s(src)],
            Op::Branch { cond, target } => vec![s("if"), s(cond), s("goto"), s(target)],
            Op::Label(l) => vec![s(l), s(":")],
            Op::Halt => vec![s("halt")],
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::AssignConst { dest, value } => write!(f, "{dest} = {value}"),
            Op::AssignBinop { dest, op, lhs, rhs } => {
                write!(f, "{dest} = {lhs} {} {rhs}", op.symbol())
            }
            Op::AssignCopy { dest, src } => write!(f, "{dest} = {src}"),
            Op::Load { dest } => write!(f, "{dest} = load"),
            Op::Store { src } => write!(f, "store {src}"),
            Op::Branch { cond, target } => write!(f, "if {cond} goto {target}"),
            Op::Label(l) => write!(f, "{l}:"),
            Op::Halt => f.write_str("halt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    /// 0-based position in the unit.
    pub index: usize,
    pub op: Op,
}

/// A parsed code unit: instructions in order plus the flattened token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeUnit {
    instructions: Vec<Instruction>,
    tokens: Vec<String>,
    token_owner: Vec<usize>,
    intra_pos: Vec<usize>,
}

impl CodeUnit {
    /// Builds a unit from ops in order, checking label uniqueness and targets.
    pub fn from_ops(ops: Vec<Op>) -> Result<CodeUnit, IrError> {
        let mut labels = HashMap::new();
        for (i, op) in ops.iter().enumerate() {
            if let Op::Label(l) = op {
                if labels.insert(l.clone(), i).is_some() {
                    return Err(IrError::DuplicateLabel {
                        label: l.clone(),
                        line: i + 1,
                    });
                }
            }
        }
        for (i, op) in ops.iter().enumerate() {
            if let Op::Branch { target, .. } = op {
                if !labels.contains_key(target) {
                    return Err(IrError::UnresolvedTarget {
                        label: target.clone(),
                        line: i + 1,
                    });
                }
            }
        }
        Ok(Self::assemble(ops))
    }

    /// Labels and targets of `ops` must already be consistent.
    pub(crate) fn assemble(ops: Vec<Op>) -> CodeUnit {
        let mut tokens = Vec::new();
        let mut token_owner = Vec::new();
        let mut intra_pos = Vec::new();
        let instructions = ops
            .into_iter()
            .enumerate()
            .map(|(index, op)| {
                for (k, tok) in op.tokens().into_iter().enumerate() {
                    tokens.push(tok);
                    token_owner.push(index);
                    intra_pos.push(k + 1);
                }
                Instruction { index, op }
            })
            .collect();
        CodeUnit {
            instructions,
            tokens,
            token_owner,
            intra_pos,
        }
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn ops(&self) -> impl Iterator<Item = &Op> {
        self.instructions.iter().map(|i| &i.op)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token index to owning instruction index; non-decreasing.
    pub fn token_owner(&self) -> &[usize] {
        &self.token_owner
    }

    /// Token index to its 1-based position inside its instruction.
    pub fn intra_pos(&self) -> &[usize] {
        &self.intra_pos
    }

    /// Number of tokens each instruction contributes.
    pub fn token_lengths(&self) -> Vec<usize> {
        self.instructions.iter().map(|i| i.op.tokens().len()).collect()
    }

    /// Index of the instruction holding label `name`.
    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.instructions
            .iter()
            .position(|i| matches!(&i.op, Op::Label(l) if l == name))
    }

    /// Variables mentioned anywhere, read or written.
    pub fn variables(&self) -> BTreeSet<String> {
        self.ops()
            .flat_map(|op| op.reads().into_iter().chain(op.writes()))
            .filter_map(|loc| match loc {
                Location::Var(v) => Some(v),
                Location::Mem => None,
            })
            .collect()
    }

    /// Variables some instruction reads.
    pub fn read_variables(&self) -> BTreeSet<String> {
        self.ops()
            .flat_map(|op| op.reads())
            .filter_map(|loc| match loc {
                Location::Var(v) => Some(v),
                Location::Mem => None,
            })
            .collect()
    }

    /// One instruction per line, in the grammar `parse` accepts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for instr in &self.instructions {
            out.push_str(&instr.op.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_writes() {
        let u = parse("a = a + 1; store b; x = load; if t goto L; L:").unwrap();
        let ops: Vec<_> = u.ops().collect();
        assert_eq!(ops[0].reads(), vec![Location::Var("a".into())]);
        assert_eq!(ops[0].writes(), vec![Location::Var("a".into())]);
        assert_eq!(ops[1].writes(), vec![Location::Mem]);
        assert_eq!(ops[2].reads(), vec![Location::Mem]);
        assert_eq!(ops[3].reads(), vec![Location::Var("t".into())]);
        assert!(ops[4].is_control());
    }

    #[test]
    fn duplicate_operand_read_once() {
        let u = parse("x = y * y").unwrap();
        assert_eq!(u.instructions()[0].op.reads().len(), 1);
    }

    #[test]
    fn from_ops_rejects_unknown_label() {
        let err = CodeUnit::from_ops(vec![Op::Branch {
            cond: "t".into(),
            target: "L".into(),
        }])
        .unwrap_err();
        assert!(matches!(err, IrError::UnresolvedTarget { .. }));
    }

    #[test]
    fn comparison_yields_bits() {
        assert_eq!(BinOp::Lt.eval(1, 2), 1);
        assert_eq!(BinOp::Lt.eval(2, 2), 0);
        assert_eq!(BinOp::Eq.eval(-3, -3), 1);
        assert_eq!(BinOp::Add.eval(i64::MAX, 1), i64::MIN);
    }
}
