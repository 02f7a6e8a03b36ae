//! Lexer, recursive-descent parser and bottom-up typing for the
//! expression grammar:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := atom ("^" integer)?
//! atom   := number | ident | ident "(" expr ("," expr)* ")"
//!         | "(" expr ")" | "-" atom
//! ```
//!
//! Identifiers are `t`, `F`, declared named constants and the built-in
//! function names. Kinds (scalar / vector / matrix) are checked while
//! parsing, so an `ExprAst` is well-typed by construction.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{BinOp, ExprAst, ExprKind, Func, Kind, Span};

/// Declared symbols visible to the parser.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    constants: BTreeMap<String, Kind>,
    allow_time_frame: bool,
}

impl Default for SymbolTable {
    fn default() -> Self {
        SymbolTable { constants: BTreeMap::new(), allow_time_frame: true }
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A table exposing only the given scalar names (no `t`/`F`); used for
    /// expressions over intermediate quantities.
    pub fn scalars_only(names: &[&str]) -> Self {
        let mut constants = BTreeMap::new();
        for n in names {
            constants.insert((*n).to_string(), Kind::Scalar);
        }
        SymbolTable { constants, allow_time_frame: false }
    }

    pub fn with_constant(mut self, name: &str, kind: Kind) -> Self {
        self.constants.insert(name.to_string(), kind);
        self
    }

    pub fn declare(&mut self, name: &str, kind: Kind) {
        self.constants.insert(name.to_string(), kind);
    }

    fn lookup(&self, name: &str) -> Option<Kind> {
        self.constants.get(name).copied()
    }
}

/// Parse-time diagnostics; every variant carries the 1-based source
/// position of the offending token.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unknown identifier `{name}`")]
    UnknownIdentifier { line: usize, col: usize, name: String },
    #[error("{line}:{col}: dimension mismatch: {message}")]
    DimensionMismatch { line: usize, col: usize, message: String },
}

impl ParseError {
    pub fn span_position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::UnknownIdentifier { line, col, .. }
            | ParseError::DimensionMismatch { line, col, .. } => (*line, *col),
        }
    }
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, ch) in source.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

struct Lexer<'a> {
    source: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(source: &'a str) -> Self {
        Lexer { source, bytes: source.as_bytes(), pos: 0 }
    }

    fn error(&self, at: usize, message: impl Into<String>) -> ParseError {
        let (line, col) = line_col(self.source, at);
        ParseError::Syntax { line, col, message: message.into() }
    }

    fn tokens(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.bytes.len() {
                out.push(Token { tok: Tok::Eof, span: Span::new(self.pos, self.pos) });
                return Ok(out);
            }
            let start = self.pos;
            let b = self.bytes[self.pos];
            let tok = match b {
                b'+' => { self.pos += 1; Tok::Plus }
                b'-' => { self.pos += 1; Tok::Minus }
                b'*' => { self.pos += 1; Tok::Star }
                b'/' => { self.pos += 1; Tok::Slash }
                b'^' => { self.pos += 1; Tok::Caret }
                b'(' => { self.pos += 1; Tok::LParen }
                b')' => { self.pos += 1; Tok::RParen }
                b',' => { self.pos += 1; Tok::Comma }
                b'0'..=b'9' | b'.' => self.number(start)?,
                b'_' | b'a'..=b'z' | b'A'..=b'Z' => {
                    while self.pos < self.bytes.len()
                        && (self.bytes[self.pos] == b'_'
                            || self.bytes[self.pos].is_ascii_alphanumeric())
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(self.source[start..self.pos].to_string())
                }
                other => {
                    return Err(self.error(
                        start,
                        format!("unexpected character `{}`", other as char),
                    ));
                }
            };
            out.push(Token { tok, span: Span::new(start, self.pos) });
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.bytes.len() && (self.bytes[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `2e` without digits: the `e` belongs to the next token.
                self.pos = mark;
            }
        }
        let text = &self.source[start..self.pos];
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| self.error(start, format!("invalid number literal `{text}`")))
    }
}

struct Parser<'a> {
    source: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a SymbolTable,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax_error(&self, span: Span, message: impl Into<String>) -> ParseError {
        let (line, col) = line_col(self.source, span.start);
        ParseError::Syntax { line, col, message: message.into() }
    }

    fn mismatch(&self, span: Span, message: impl Into<String>) -> ParseError {
        let (line, col) = line_col(self.source, span.start);
        ParseError::DimensionMismatch { line, col, message: message.into() }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.bump();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.syntax_error(t.span, format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let op_span = self.bump().span;
            let rhs = self.term()?;
            lhs = self.binary(op, op_span, lhs, rhs)?;
        }
    }

    fn term(&mut self) -> Result<ExprAst, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let op_span = self.bump().span;
            let rhs = self.factor()?;
            lhs = self.binary(op, op_span, lhs, rhs)?;
        }
    }

    fn factor(&mut self) -> Result<ExprAst, ParseError> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        let caret = self.bump();
        let mut negative = false;
        if self.peek().tok == Tok::Minus {
            self.bump();
            negative = true;
        }
        let t = self.bump();
        let exponent = match t.tok {
            Tok::Num(x) if x.fract() == 0.0 && x.abs() <= f64::from(i32::MAX) => {
                let n = x as i32;
                if negative { -n } else { n }
            }
            _ => return Err(self.syntax_error(t.span, "expected integer exponent after `^`")),
        };
        let ty = match base.ty {
            Kind::Scalar => Kind::Scalar,
            Kind::Matrix => Kind::Matrix,
            Kind::Vector => {
                return Err(self.mismatch(caret.span, "cannot raise a vector to a power"));
            }
        };
        let span = base.span.join(t.span);
        Ok(ExprAst::new(ExprKind::Pow { base: Box::new(base), exponent }, ty, span))
    }

    fn atom(&mut self) -> Result<ExprAst, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Num(x) => Ok(ExprAst::new(ExprKind::Number(x), Kind::Scalar, t.span)),
            Tok::Minus => {
                let inner = self.atom()?;
                let span = t.span.join(inner.span);
                // Fold a negated literal so pretty-printing round-trips.
                if let ExprKind::Number(x) = inner.kind {
                    return Ok(ExprAst::new(ExprKind::Number(-x), Kind::Scalar, span));
                }
                let ty = inner.ty;
                Ok(ExprAst::new(ExprKind::Neg(Box::new(inner)), ty, span))
            }
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "closing `)`")?;
                Ok(ExprAst::new(inner.kind, inner.ty, t.span.join(close.span)))
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    self.call(&name, t.span)
                } else {
                    self.identifier(&name, t.span)
                }
            }
            _ => Err(self.syntax_error(t.span, "expected a number, identifier or `(`")),
        }
    }

    fn identifier(&self, name: &str, span: Span) -> Result<ExprAst, ParseError> {
        if self.symbols.allow_time_frame {
            if name == "t" {
                return Ok(ExprAst::new(ExprKind::Time, Kind::Scalar, span));
            }
            if name == "F" {
                return Ok(ExprAst::new(ExprKind::Frame, Kind::Matrix, span));
            }
        }
        if let Some(kind) = self.symbols.lookup(name) {
            return Ok(ExprAst::new(ExprKind::Const(name.to_string()), kind, span));
        }
        let (line, col) = line_col(self.source, span.start);
        Err(ParseError::UnknownIdentifier { line, col, name: name.to_string() })
    }

    fn call(&mut self, name: &str, name_span: Span) -> Result<ExprAst, ParseError> {
        let func = Func::from_name(name).ok_or_else(|| {
            let (line, col) = line_col(self.source, name_span.start);
            ParseError::UnknownIdentifier { line, col, name: name.to_string() }
        })?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = vec![self.expr()?];
        while self.peek().tok == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        let close = self.expect(Tok::RParen, "closing `)`")?;
        let span = name_span.join(close.span);
        if args.len() != func.arity() {
            return Err(self.syntax_error(
                span,
                format!("{} takes {} argument(s), got {}", func.name(), func.arity(), args.len()),
            ));
        }
        let ty = self.call_type(func, &args, span)?;
        Ok(ExprAst::new(ExprKind::Call { func, args }, ty, span))
    }

    fn call_type(&self, func: Func, args: &[ExprAst], span: Span) -> Result<Kind, ParseError> {
        let bad = |expected: &str, got: Kind| {
            self.mismatch(span, format!("{} expects a {expected}, got {got}", func.name()))
        };
        match func {
            Func::Det | Func::Tr => match args[0].ty {
                Kind::Matrix => Ok(Kind::Scalar),
                other => Err(bad("matrix", other)),
            },
            Func::Transpose | Func::Inv => match args[0].ty {
                Kind::Matrix => Ok(Kind::Matrix),
                other => Err(bad("matrix", other)),
            },
            Func::Dot => match (args[0].ty, args[1].ty) {
                (Kind::Vector, Kind::Vector) => Ok(Kind::Scalar),
                (a, b) => Err(self.mismatch(
                    span,
                    format!("dot expects two vectors, got {a} and {b}"),
                )),
            },
            Func::Exp | Func::Log | Func::Sin | Func::Cos | Func::Sqrt => match args[0].ty {
                Kind::Scalar => Ok(Kind::Scalar),
                other => Err(bad("scalar", other)),
            },
        }
    }

    fn binary(
        &self,
        op: BinOp,
        op_span: Span,
        lhs: ExprAst,
        rhs: ExprAst,
    ) -> Result<ExprAst, ParseError> {
        let ty = match op {
            BinOp::Add | BinOp::Sub => {
                if lhs.ty == rhs.ty {
                    lhs.ty
                } else {
                    return Err(self.mismatch(
                        op_span,
                        format!("cannot {} {} and {}",
                            if op == BinOp::Add { "add" } else { "subtract" },
                            lhs.ty, rhs.ty),
                    ));
                }
            }
            BinOp::Mul => match (lhs.ty, rhs.ty) {
                (Kind::Scalar, other) | (other, Kind::Scalar) => other,
                (Kind::Matrix, Kind::Matrix) => Kind::Matrix,
                (Kind::Matrix, Kind::Vector) => Kind::Vector,
                (a, b) => {
                    return Err(self.mismatch(
                        op_span,
                        format!("cannot multiply {a} by {b}"),
                    ));
                }
            },
            BinOp::Div => match rhs.ty {
                Kind::Scalar => lhs.ty,
                other => {
                    return Err(self.mismatch(
                        op_span,
                        format!("cannot divide by a {other}"),
                    ));
                }
            },
        };
        let span = lhs.span.join(rhs.span);
        Ok(ExprAst::new(
            ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) },
            ty,
            span,
        ))
    }
}

/// Parses a source string using the default symbols (`t` and `F` only).
pub fn parse(source: &str) -> Result<ExprAst, ParseError> {
    parse_with(source, &SymbolTable::default())
}

/// Parses a source string against an explicit symbol table.
pub fn parse_with(source: &str, symbols: &SymbolTable) -> Result<ExprAst, ParseError> {
    let tokens = Lexer::new(source).tokens()?;
    let mut parser = Parser { source, tokens, pos: 0, symbols };
    let ast = parser.expr()?;
    let t = parser.bump();
    if t.tok != Tok::Eof {
        return Err(parser.syntax_error(t.span, "unexpected trailing input"));
    }
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_call_tree() {
        let ast = parse("det(F)").unwrap();
        match &ast.kind {
            ExprKind::Call { func: Func::Det, args } => {
                assert!(matches!(args[0].kind, ExprKind::Frame));
            }
            other => panic!("unexpected shape: {other:?}"),
        }
        assert_eq!(ast.ty, Kind::Scalar);
    }

    #[test]
    fn typing_with_declared_constants() {
        let symbols = SymbolTable::new()
            .with_constant("mu", Kind::Scalar)
            .with_constant("G", Kind::Matrix)
            .with_constant("c", Kind::Scalar);
        let ast = parse_with("mu * (tr(transpose(F)*G*F) + c)", &symbols).unwrap();
        assert_eq!(ast.ty, Kind::Scalar);
    }

    #[test]
    fn matrix_plus_scalar_is_rejected_at_the_operator() {
        let err = parse("F + t").unwrap_err();
        match err {
            ParseError::DimensionMismatch { line, col, .. } => {
                assert_eq!((line, col), (1, 3)); // the `+`
            }
            other => panic!("expected dimension mismatch, got {other}"),
        }
    }

    #[test]
    fn unknown_identifier_reports_position() {
        let err = parse("det(Q)").unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { col: 5, .. }));
    }

    #[test]
    fn exponent_binds_to_atoms() {
        let ast = parse("-t^2").unwrap();
        // atom := "-" atom, then ^2 applies to the negated atom.
        match &ast.kind {
            ExprKind::Pow { base, exponent: 2 } => {
                assert!(matches!(base.kind, ExprKind::Neg(_)));
            }
            other => panic!("unexpected shape: {other:?}"),
        }
        assert!(parse("t^-2").is_ok());
        assert!(parse("t^2.5").is_err());
    }

    #[test]
    fn negative_literals_fold() {
        let ast = parse("-2.5").unwrap();
        assert!(matches!(ast.kind, ExprKind::Number(x) if x == -2.5));
    }

    #[test]
    fn vector_arithmetic_typing() {
        let symbols = SymbolTable::new().with_constant("e", Kind::Vector);
        assert_eq!(parse_with("dot(F*e, F*e)", &symbols).unwrap().ty, Kind::Scalar);
        assert!(parse_with("e * e", &symbols).is_err());
        assert!(parse_with("e^2", &symbols).is_err());
        assert!(parse_with("t / F", &SymbolTable::new()).is_err());
    }

    #[test]
    fn pretty_print_round_trips() {
        for src in [
            "det(F)",
            "exp(-t) * det(F)",
            "(1 + t) * det(F) - t^2 / 3",
            "tr(transpose(F) * F)",
            "-(t + 1)",
            "-t^2",
            "2e-3 + t",
            "det(inv(F) * F)",
        ] {
            let ast = parse(src).unwrap();
            let printed = ast.pretty_print();
            let reparsed = parse(&printed).unwrap();
            assert!(
                ast.structurally_eq(&reparsed),
                "round-trip failed: {src} -> {printed}"
            );
        }
    }
}
