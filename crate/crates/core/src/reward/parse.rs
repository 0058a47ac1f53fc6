//! Recursive-descent parser. Error positions are 1-based character columns.

use std::fmt;

use super::{Atom, Relation, RewardExpr};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownToken(String),
    Arity { name: String, expected: &'static str, found: usize },
    DuplicateAtom(Atom),
    UnbalancedParens,
    Unexpected { expected: &'static str, found: String },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownToken(t) => write!(f, "unknown token `{t}`"),
            ParseErrorKind::Arity { name, expected, found } => {
                write!(f, "arity error: `{name}` takes {expected} arguments, found {found}")
            }
            ParseErrorKind::DuplicateAtom(a) => write!(f, "atom `{a}` appears twice in one relation"),
            ParseErrorKind::UnbalancedParens => f.write_str("unbalanced parentheses"),
            ParseErrorKind::Unexpected { expected, found } => write!(f, "expected {expected}, found {found}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Open,
    Close,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Open => f.write_str("`(`"),
            Tok::Close => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            _ if c.is_whitespace() => i += 1,
            '(' | ')' | ',' => {
                toks.push((
                    match c {
                        '(' => Tok::Open,
                        ')' => Tok::Close,
                        _ => Tok::Comma,
                    },
                    col,
                ));
                i += 1;
            }
            _ if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            _ => {
                return Err(ParseError {
                    kind: ParseErrorKind::UnknownToken(c.to_string()),
                    offset: col,
                })
            }
        }
    }
    toks.push((Tok::End, chars.len() + 1));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.at]
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if t.0 != Tok::End {
            self.at += 1;
        }
        t
    }

    fn fail<T>(kind: ParseErrorKind, offset: usize) -> Result<T, ParseError> {
        Err(ParseError { kind, offset })
    }

    fn expect_open(&mut self) -> Result<(), ParseError> {
        match self.next() {
            (Tok::Open, _) => Ok(()),
            (Tok::End, o) => Self::fail(ParseErrorKind::UnbalancedParens, o),
            (t, o) => Self::fail(
                ParseErrorKind::Unexpected {
                    expected: "`(`",
                    found: t.to_string(),
                },
                o,
            ),
        }
    }

    /// Parses `item (',' item)* ')'` after the opening paren. Returns the
    /// items and the offset of the closing paren.
    fn args<T>(
        &mut self,
        mut item: impl FnMut(&mut Self) -> Result<T, ParseError>,
    ) -> Result<(Vec<(T, usize)>, usize), ParseError> {
        let mut out = Vec::new();
        loop {
            let off = self.peek().1;
            out.push((item(self)?, off));
            match self.next() {
                (Tok::Comma, _) => continue,
                (Tok::Close, o) => return Ok((out, o)),
                (Tok::End, o) => return Self::fail(ParseErrorKind::UnbalancedParens, o),
                (t, o) => {
                    return Self::fail(
                        ParseErrorKind::Unexpected {
                            expected: "`,` or `)`",
                            found: t.to_string(),
                        },
                        o,
                    )
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        match self.next() {
            (Tok::Ident(s), o) => match s.parse::<Atom>() {
                Ok(a) => Ok(a),
                Err(()) if s.parse::<Relation>().is_ok() || s == "and" => Self::fail(
                    ParseErrorKind::Unexpected {
                        expected: "an atom",
                        found: format!("`{s}`"),
                    },
                    o,
                ),
                Err(()) => Self::fail(ParseErrorKind::UnknownToken(s), o),
            },
            (Tok::End, o) => Self::fail(ParseErrorKind::UnbalancedParens, o),
            (t, o) => Self::fail(
                ParseErrorKind::Unexpected {
                    expected: "an atom",
                    found: t.to_string(),
                },
                o,
            ),
        }
    }

    fn expr(&mut self) -> Result<RewardExpr, ParseError> {
        let (tok, off) = self.next();
        let name = match tok {
            Tok::Ident(s) => s,
            Tok::End => return Self::fail(ParseErrorKind::Unexpected { expected: "an expression", found: "end of input".into() }, off),
            Tok::Close => return Self::fail(ParseErrorKind::UnbalancedParens, off),
            t => {
                return Self::fail(
                    ParseErrorKind::Unexpected {
                        expected: "an expression",
                        found: t.to_string(),
                    },
                    off,
                )
            }
        };
        if name == "and" {
            self.expect_open()?;
            let (children, close) = self.args(Self::expr)?;
            if children.len() < 2 {
                return Self::fail(
                    ParseErrorKind::Arity {
                        name,
                        expected: "at least 2",
                        found: children.len(),
                    },
                    close,
                );
            }
            return Ok(RewardExpr::And(children.into_iter().map(|(c, _)| c).collect()));
        }
        let rel = match name.parse::<Relation>() {
            Ok(r) => r,
            Err(()) => return Self::fail(ParseErrorKind::UnknownToken(name), off),
        };
        self.expect_open()?;
        let (atoms, close) = self.args(Self::atom)?;
        if atoms.len() != 2 {
            return Self::fail(
                ParseErrorKind::Arity {
                    name,
                    expected: "exactly 2",
                    found: atoms.len(),
                },
                close,
            );
        }
        let (a, b) = (atoms[0].0, atoms[1].0);
        if a == b {
            return Self::fail(ParseErrorKind::DuplicateAtom(b), atoms[1].1);
        }
        Ok(RewardExpr::Rel(rel, a, b))
    }
}

/// Parses one reward expression. The result keeps argument order as written;
/// see [`RewardExpr::canonical`].
pub fn parse(text: &str) -> Result<RewardExpr, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let e = p.expr()?;
    match p.next() {
        (Tok::End, _) => Ok(e),
        (Tok::Close, o) => Parser::fail(ParseErrorKind::UnbalancedParens, o),
        (t, o) => Parser::fail(
            ParseErrorKind::Unexpected {
                expected: "end of input",
                found: t.to_string(),
            },
            o,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> ParseError {
        parse(text).unwrap_err()
    }

    #[test]
    fn single_relation() {
        assert_eq!(parse("near(red,blue)").unwrap(), RewardExpr::Rel(Relation::Near, Atom::Red, Atom::Blue));
        assert_eq!(
            parse("  west ( fist ,\tpad )  ").unwrap(),
            RewardExpr::Rel(Relation::West, Atom::Fist, Atom::Pad)
        );
    }

    #[test]
    fn gather_conjunction() {
        let e = parse("and(near(red,pad),near(blue,pad),near(green,pad))").unwrap();
        let want = RewardExpr::And(
            [Atom::Red, Atom::Blue, Atom::Green]
                .into_iter()
                .map(|c| RewardExpr::Rel(Relation::Near, c, Atom::Pad))
                .collect(),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn nested_conjunction() {
        let e = parse("and(and(north(red,blue),east(red,blue)),far(fist,green))").unwrap();
        assert!(matches!(&e, RewardExpr::And(xs) if xs.len() == 2 && matches!(xs[0], RewardExpr::And(_))));
    }

    #[test]
    fn arity_error_position() {
        let e = err("near(red)");
        assert_eq!(e.offset, 9);
        assert!(matches!(e.kind, ParseErrorKind::Arity { found: 1, .. }));
        assert_eq!(e.to_string(), "arity error: `near` takes exactly 2 arguments, found 1 at offset 9");
        assert!(matches!(err("near(red,blue,green)").kind, ParseErrorKind::Arity { found: 3, .. }));
        assert!(matches!(err("and(near(red,blue))").kind, ParseErrorKind::Arity { found: 1, .. }));
    }

    #[test]
    fn duplicate_atom() {
        let e = err("far(red, red)");
        assert_eq!(e.kind, ParseErrorKind::DuplicateAtom(Atom::Red));
        assert_eq!(e.offset, 10);
    }

    #[test]
    fn unknown_tokens() {
        assert_eq!(err("Near(red,blue)").kind, ParseErrorKind::UnknownToken("Near".into()));
        assert_eq!(err("near(red,purple)").offset, 10);
        assert_eq!(err("near(red;blue)").kind, ParseErrorKind::UnknownToken(";".into()));
        assert!(matches!(err("or(near(red,blue),near(red,fist))").kind, ParseErrorKind::UnknownToken(_)));
    }

    #[test]
    fn unbalanced_parens() {
        assert_eq!(err("near(red,blue").kind, ParseErrorKind::UnbalancedParens);
        assert_eq!(err("near(red,blue))").kind, ParseErrorKind::UnbalancedParens);
        assert_eq!(err("near(red,blue))").offset, 15);
        assert_eq!(err("and(near(red,blue),far(red,blue)").kind, ParseErrorKind::UnbalancedParens);
    }

    #[test]
    fn misc_structure_errors() {
        assert!(matches!(err("").kind, ParseErrorKind::Unexpected { .. }));
        assert!(matches!(err("near red,blue").kind, ParseErrorKind::Unexpected { .. }));
        assert!(matches!(err("near(red,near(red,blue))").kind, ParseErrorKind::Unexpected { .. }));
        assert!(matches!(err("near(red,blue) far(red,blue)").kind, ParseErrorKind::Unexpected { .. }));
    }
}
