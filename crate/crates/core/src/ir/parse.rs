use super::{BinOp, CodeUnit, IrError, Op, Operand};

const KEYWORDS: [&str; 5] = ["load", "store", "if", "goto", "halt"];

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Spanned {
    lex: Lexeme,
    column: usize,
}

/// Parses newline- or `;`-separated instruction text.
///
/// Empty statements are skipped, so `""` is the empty unit.
pub fn parse(source: &str) -> Result<CodeUnit, IrError> {
    let mut ops = Vec::new();
    let mut lines = Vec::new();
    for (line_no, raw_line) in source.lines().enumerate() {
        let line = line_no + 1;
        let code = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        };
        let mut start = 0;
        for stmt in code.split(';') {
            let lexemes = lex(stmt, line, start + 1)?;
            start += stmt.len() + 1;
            if lexemes.is_empty() {
                continue;
            }
            ops.push(statement(&lexemes, line)?);
            lines.push(line);
        }
    }
    CodeUnit::from_ops(ops).map_err(|e| match e {
        IrError::DuplicateLabel { label, line } => IrError::DuplicateLabel {
            label,
            line: lines[line - 1],
        },
        IrError::UnresolvedTarget { label, line } => IrError::UnresolvedTarget {
            label,
            line: lines[line - 1],
        },
        other => other,
    })
}

fn lex(stmt: &str, line: usize, col0: usize) -> Result<Vec<Spanned>, IrError> {
    let bytes = stmt.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let column = col0 + i;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Spanned {
                lex: Lexeme::Ident(stmt[s..i].to_string()),
                column,
            });
        } else if c.is_ascii_digit() {
            let s = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let value = stmt[s..i].parse::<i64>().map_err(|_| IrError::Syntax {
                line,
                column,
                message: format!("integer literal `{}` out of range", &stmt[s..i]),
            })?;
            out.push(Spanned {
                lex: Lexeme::Int(value),
                column,
            });
        } else {
            let sym = match c {
                '=' if bytes.get(i + 1) == Some(&b'=') => "==",
                '=' => "=",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '<' => "<",
                ':' => ":",
                _ => {
                    return Err(IrError::Syntax {
                        line,
                        column,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            i += sym.len();
            out.push(Spanned {
                lex: Lexeme::Sym(sym),
                column,
            });
        }
    }
    Ok(out)
}

fn is_variable(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        && !KEYWORDS.contains(&name)
}

fn is_label(name: &str) -> bool {
    !KEYWORDS.contains(&name)
}

fn statement(lx: &[Spanned], line: usize) -> Result<Op, IrError> {
    use Lexeme::*;
    let err = |at: usize, message: &str| IrError::Syntax {
        line,
        column: lx.get(at).map_or_else(|| lx[lx.len() - 1].column + 1, |s| s.column),
        message: message.to_string(),
    };
    let var = |at: usize| -> Result<String, IrError> {
        match lx.get(at).map(|s| &s.lex) {
            Some(Ident(name)) if is_variable(name) => Ok(name.clone()),
            Some(_) => Err(err(at, "expected a variable name")),
            None => Err(err(at, "expected a variable name, found end of instruction")),
        }
    };
    let operand = |at: usize| -> Result<Operand, IrError> {
        match lx.get(at).map(|s| &s.lex) {
            Some(Int(v)) => Ok(Operand::Lit(*v)),
            Some(Ident(_)) => var(at).map(Operand::Var),
            _ => Err(err(at, "expected a variable or integer literal")),
        }
    };
    let end = |at: usize| -> Result<(), IrError> {
        if at < lx.len() {
            Err(err(at, "unexpected trailing input"))
        } else {
            Ok(())
        }
    };

    let lexes: Vec<&Lexeme> = lx.iter().map(|s| &s.lex).collect();
    match lexes.as_slice() {
        [Ident(k)] if k == "halt" => Ok(Op::Halt),
        [Ident(k), ..] if k == "store" => {
            let src = var(1)?;
            end(2)?;
            Ok(Op::Store { src })
        }
        [Ident(k), ..] if k == "if" => {
            let cond = var(1)?;
            match lexes.get(2) {
                Some(Ident(g)) if g == "goto" => {}
                _ => return Err(err(2, "expected `goto`")),
            }
            let target = match lexes.get(3) {
                Some(Ident(l)) if is_label(l) => l.clone(),
                _ => return Err(err(3, "expected a label")),
            };
            end(4)?;
            Ok(Op::Branch { cond, target })
        }
        [Ident(l), Sym(":")] if is_label(l) => Ok(Op::Label(l.clone())),
        [Ident(_), Sym("="), ..] => {
            let dest = var(0)?;
            match &lexes[2..] {
                [] => Err(err(2, "expected a right-hand side")),
                [Ident(k)] if k == "load" => Ok(Op::Load { dest }),
                [Int(v)] => Ok(Op::AssignConst { dest, value: *v }),
                [Ident(_)] => Ok(Op::AssignCopy { dest, src: var(2)? }),
                [_, Sym(sym), _, ..] => {
                    let lhs = operand(2)?;
                    let op = BinOp::from_symbol(sym).ok_or_else(|| err(3, "expected an operator"))?;
                    let rhs = operand(4)?;
                    end(5)?;
                    Ok(Op::AssignBinop { dest, op, lhs, rhs })
                }
                [_, Sym(_)] => Err(err(4, "expected an operand after the operator")),
                [_, _, ..] => Err(err(3, "expected a binary operator")),
                [_] => Err(err(2, "expected a constant, variable or `load`")),
            }
        }
        _ => Err(err(0, "unrecognised instruction")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::InstrKind;

    #[test]
    fn two_constant_assignments() {
        let u = parse("x=2;y=4").unwrap();
        assert_eq!(u.len(), 2);
        assert!(u.ops().all(|op| op.kind() == InstrKind::AssignConst));
    }

    #[test]
    fn empty_source() {
        let u = parse("").unwrap();
        assert_eq!(u.len(), 0);
        assert!(u.tokens().is_empty());
    }

    #[test]
    fn token_stream_and_owners() {
        let u = parse("a=a+1;b=a").unwrap();
        assert_eq!(u.tokens(), ["a", "=", "a", "+", "1", "b", "=", "a"]);
        assert_eq!(u.token_owner(), [0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(u.intra_pos(), [1, 2, 3, 4, 5, 1, 2, 3]);
    }

    #[test]
    fn every_instruction_form() {
        let src = "x = 3\ny = x == 2\nz = y\nw = load\nstore w\nif y goto L\nL:\nhalt\n";
        let u = parse(src).unwrap();
        let kinds: Vec<_> = u.ops().map(|o| o.kind()).collect();
        assert_eq!(
            kinds,
            [
                InstrKind::AssignConst,
                InstrKind::AssignBinop,
                InstrKind::AssignCopy,
                InstrKind::Load,
                InstrKind::Store,
                InstrKind::Branch,
                InstrKind::Label,
                InstrKind::Halt
            ]
        );
        assert_eq!(u.render(), src);
    }

    #[test]
    fn comments_and_blank_statements() {
        let u = parse("# header\nx = 1;; # trailing\n\n").unwrap();
        assert_eq!(u.len(), 1);
    }

    #[test]
    fn syntax_error_reports_position() {
        match parse("x = 1\ny = ? 2").unwrap_err() {
            IrError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 5);
            }
            e => panic!("unexpected {e:?}"),
        }
        match parse("x = 1; y = 2 +").unwrap_err() {
            IrError::Syntax { line, column, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 15);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_keywords_and_bad_names() {
        assert!(parse("load = 1").is_err());
        assert!(parse("X = 1").is_err());
        assert!(parse("x = 1 2").is_err());
        assert!(parse("if x goto").is_err());
        assert!(parse("store 3").is_err());
    }

    #[test]
    fn duplicate_label_line() {
        assert_eq!(
            parse("L:\nx = 1\nL:").unwrap_err(),
            IrError::DuplicateLabel {
                label: "L".into(),
                line: 3
            }
        );
    }

    #[test]
    fn unresolved_target() {
        assert_eq!(
            parse("x = 1; if x goto Nowhere").unwrap_err(),
            IrError::UnresolvedTarget {
                label: "Nowhere".into(),
                line: 1
            }
        );
    }

    #[test]
    fn backward_target_resolves() {
        let u = parse("Top:\nx = x - 1\nif x goto Top").unwrap();
        assert_eq!(u.label_index("Top"), Some(0));
    }
}
