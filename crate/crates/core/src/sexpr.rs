//! LISP-style text form of a genome.
//!
//! The canonical form is fully parenthesized prefix notation with exactly one
//! space between siblings, for example `(+ (^3 (^2 b2)) (+ b1 (str b3)))`.
//! It doubles as the fitness-cache key and the checkpoint line format, so
//! [`print`] must stay bit-stable.

use thiserror::Error;

use crate::arch::BlockLibrary;
use crate::genome::{GenomeTree, Node, NodeKind, Violation};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Token<'a> {
    LParen,
    RParen,
    Symbol(&'a str),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    Lexical(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected {0}")]
    UnexpectedToken(String),
    #[error("{symbol} takes {expected} argument(s), found {found}")]
    Arity { symbol: String, expected: usize, found: usize },
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("trailing input after expression")]
    TrailingInput,
    #[error("{0}")]
    Infeasible(Violation),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '^' | '+' | '∧')
}

/// Splits `text` into tokens paired with their byte offsets.
pub fn tokenize(text: &str) -> Result<Vec<(usize, Token<'_>)>, ParseError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            '(' => {
                tokens.push((start, Token::LParen));
                chars.next();
            }
            ')' => {
                tokens.push((start, Token::RParen));
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            c if is_symbol_char(c) => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if !is_symbol_char(c) {
                        break;
                    }
                    end = i + c.len_utf8();
                    chars.next();
                }
                tokens.push((start, Token::Symbol(&text[start..end])));
            }
            other => return Err(ParseError { offset: start, kind: ParseErrorKind::Lexical(other) }),
        }
    }
    Ok(tokens)
}

fn operator(symbol: &str) -> Option<NodeKind> {
    match symbol {
        "+" => Some(NodeKind::Plus),
        "^2" | "∧2" => Some(NodeKind::Widen2),
        "^3" | "∧3" => Some(NodeKind::Widen3),
        "str" => Some(NodeKind::Stride),
        _ => None,
    }
}

struct Parser<'t, 'a> {
    tokens: &'t [(usize, Token<'a>)],
    pos: usize,
    end: usize,
    library: &'t BlockLibrary,
    /// Byte offset of every node, indexed by pre-order position.
    offsets: Vec<usize>,
}

impl<'t, 'a> Parser<'t, 'a> {
    fn err(&self, offset: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { offset, kind }
    }

    fn next(&mut self) -> Result<(usize, &'t Token<'a>), ParseError> {
        let (offset, token) = self
            .tokens
            .get(self.pos)
            .ok_or(ParseError { offset: self.end, kind: ParseErrorKind::UnexpectedEnd })?;
        self.pos += 1;
        Ok((*offset, token))
    }

    fn terminal(&mut self, offset: usize, symbol: &str) -> Result<Node, ParseError> {
        if operator(symbol).is_some() {
            return Err(self.err(offset, ParseErrorKind::UnexpectedToken(format!("operator {symbol} outside parentheses"))));
        }
        let id = self
            .library
            .block_id(symbol)
            .ok_or_else(|| self.err(offset, ParseErrorKind::UnknownSymbol(symbol.to_string())))?;
        self.offsets.push(offset);
        Ok(Node::terminal(id.clone()))
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let (offset, token) = self.next()?;
        match token {
            Token::Symbol(s) => self.terminal(offset, s),
            Token::RParen => Err(self.err(offset, ParseErrorKind::UnexpectedToken("')'".into()))),
            Token::LParen => {
                let (op_offset, head) = self.next()?;
                let symbol = match head {
                    Token::Symbol(s) => *s,
                    Token::LParen => {
                        return Err(self.err(op_offset, ParseErrorKind::UnexpectedToken("'('".into())))
                    }
                    Token::RParen => {
                        return Err(self.err(op_offset, ParseErrorKind::UnexpectedToken("')'".into())))
                    }
                };
                let kind = match operator(symbol) {
                    Some(kind) => kind,
                    None if self.library.block_id(symbol).is_some() => {
                        return Err(self.err(
                            op_offset,
                            ParseErrorKind::Arity { symbol: symbol.into(), expected: 0, found: 1 },
                        ))
                    }
                    None => {
                        return Err(self.err(op_offset, ParseErrorKind::UnknownSymbol(symbol.into())))
                    }
                };
                self.offsets.push(op_offset);
                let mut children = Vec::with_capacity(kind.arity());
                loop {
                    match self.tokens.get(self.pos) {
                        None => return Err(self.err(self.end, ParseErrorKind::UnexpectedEnd)),
                        Some((_, Token::RParen)) => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => children.push(self.expr()?),
                    }
                }
                if children.len() != kind.arity() {
                    return Err(self.err(
                        op_offset,
                        ParseErrorKind::Arity {
                            symbol: symbol.into(),
                            expected: kind.arity(),
                            found: children.len(),
                        },
                    ));
                }
                Ok(Node { kind, children })
            }
        }
    }
}

/// Parses and validates a genome against the block ids in `library`.
pub fn parse(text: &str, library: &BlockLibrary) -> Result<GenomeTree, ParseError> {
    let (tree, offsets) = parse_structure(text, library)?;
    if let Some(violation) = tree.validate().into_iter().next() {
        let offset = offsets.get(violation.node().0).copied().unwrap_or(0);
        return Err(ParseError { offset, kind: ParseErrorKind::Infeasible(violation) });
    }
    Ok(tree)
}

/// Parses syntax, symbols and arities only; the result may be infeasible.
pub fn parse_unchecked(text: &str, library: &BlockLibrary) -> Result<GenomeTree, ParseError> {
    parse_structure(text, library).map(|(tree, _)| tree)
}

fn parse_structure(text: &str, library: &BlockLibrary) -> Result<(GenomeTree, Vec<usize>), ParseError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens: &tokens, pos: 0, end: text.len(), library, offsets: Vec::new() };
    let root = parser.expr()?;
    if let Some((offset, _)) = tokens.get(parser.pos) {
        return Err(ParseError { offset: *offset, kind: ParseErrorKind::TrailingInput });
    }
    Ok((GenomeTree::from_root_unchecked(root), parser.offsets))
}

/// Canonical text form of a tree.
pub fn print(tree: &GenomeTree) -> String {
    let mut out = String::with_capacity(tree.node_count() * 5);
    write_node(tree.root(), &mut out);
    out
}

/// Canonical text form of a bare subtree.
pub fn print_node(node: &Node) -> String {
    let mut out = String::new();
    write_node(node, &mut out);
    out
}

fn write_node(node: &Node, out: &mut String) {
    if node.children.is_empty() {
        out.push_str(node.kind.symbol());
        return;
    }
    out.push('(');
    out.push_str(node.kind.symbol());
    for child in &node.children {
        out.push(' ');
        write_node(child, out);
    }
    out.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::NodeId;

    fn lib() -> BlockLibrary {
        BlockLibrary::default()
    }

    const FIG1: &str = "(+ (^3 (^2 b2)) (+ b1 (str b3)))";

    #[test]
    fn parse_smallest_tree() {
        let tree = parse("(+ b1 b2)", &lib()).unwrap();
        assert_eq!(tree.node_count(), 3);
        assert_eq!(tree.leaf_blocks(), ["b1".into(), "b2".into()]);
    }

    #[test]
    fn parse_worked_example_matches_hand_construction() {
        let expected = Node::plus(
            Node::widen3(Node::widen2(Node::terminal("b2"))),
            Node::plus(Node::terminal("b1"), Node::stride(Node::terminal("b3"))),
        );
        assert_eq!(parse(FIG1, &lib()).unwrap().root(), &expected);
    }

    #[test]
    fn print_worked_example() {
        let tree = parse(FIG1, &lib()).unwrap();
        assert_eq!(print(&tree), FIG1);
        assert_eq!(print(&parse("(+ b1 b2)", &lib()).unwrap()), "(+ b1 b2)");
    }

    #[test]
    fn whitespace_and_aliases_normalize() {
        let tree = parse("  ( +\n(∧3 (∧2 b2))\t(+ b1 (str   b3) ) )", &lib()).unwrap();
        assert_eq!(print(&tree), FIG1);
        let once = print(&tree);
        assert_eq!(print(&parse(&once, &lib()).unwrap()), once);
    }

    #[test]
    fn root_must_be_plus() {
        let err = parse("(^2 b1)", &lib()).unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Infeasible(Violation::RootNotPlus { .. })));
        assert_eq!(err.offset, 1);
    }

    #[test]
    fn nested_str_rejected() {
        let text = "(+ b1 (str (str b2)))";
        let err = parse(text, &lib()).unwrap_err();
        assert_eq!(
            err.kind,
            ParseErrorKind::Infeasible(Violation::StrideChildNotTerminal { node: NodeId(2) })
        );
        assert_eq!(&text[err.offset..err.offset + 3], "str");
    }

    #[test]
    fn error_kinds_and_offsets() {
        type Case = (&'static str, fn(&ParseErrorKind) -> bool);
        let cases: &[Case] = &[
            ("(+ b1 b2]", |k| matches!(k, ParseErrorKind::Lexical(']'))),
            ("(+ b1 b9)", |k| matches!(k, ParseErrorKind::UnknownSymbol(s) if s == "b9")),
            ("(+ b1)", |k| matches!(k, ParseErrorKind::Arity { expected: 2, found: 1, .. })),
            ("(^2 b1 b2)", |k| matches!(k, ParseErrorKind::Arity { expected: 1, found: 2, .. })),
            ("(+ b1 b2", |k| matches!(k, ParseErrorKind::UnexpectedEnd)),
            ("(+ b1 b2) b3", |k| matches!(k, ParseErrorKind::TrailingInput)),
            ("(b1 b2)", |k| matches!(k, ParseErrorKind::Arity { expected: 0, .. })),
            ("()", |k| matches!(k, ParseErrorKind::UnexpectedToken(_))),
            ("", |k| matches!(k, ParseErrorKind::UnexpectedEnd)),
            ("b1", |k| matches!(k, ParseErrorKind::Infeasible(_))),
        ];
        for (text, check) in cases {
            let err = parse(text, &lib()).unwrap_err();
            assert!(check(&err.kind), "{text:?} -> {err:?}");
            assert!(err.offset <= text.len(), "{text:?} offset {}", err.offset);
        }
    }

    #[test]
    fn tokens_carry_offsets() {
        let tokens = tokenize("(+ b1 b2)").unwrap();
        assert_eq!(
            tokens,
            vec![
                (0, Token::LParen),
                (1, Token::Symbol("+")),
                (3, Token::Symbol("b1")),
                (6, Token::Symbol("b2")),
                (8, Token::RParen),
            ]
        );
    }
}
