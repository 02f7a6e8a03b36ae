//! Typed syntax trees for the constitutive expression language.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Vector3};

/// Byte range of a node in its source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

/// Value kind of an expression or constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Scalar,
    Vector,
    Matrix,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Scalar => write!(f, "scalar"),
            Kind::Vector => write!(f, "vector"),
            Kind::Matrix => write!(f, "matrix"),
        }
    }
}

/// Runtime value bound to a named constant.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vector3<f64>),
    Matrix(Matrix3<f64>),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Scalar(_) => Kind::Scalar,
            Value::Vector(_) => Kind::Vector,
            Value::Matrix(_) => Kind::Matrix,
        }
    }
}

/// Binary operators of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Det,
    Tr,
    Transpose,
    Inv,
    Dot,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Det => "det",
            Func::Tr => "tr",
            Func::Transpose => "transpose",
            Func::Inv => "inv",
            Func::Dot => "dot",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Dot => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "det" => Func::Det,
            "tr" => Func::Tr,
            "transpose" => Func::Transpose,
            "inv" => Func::Inv,
            "dot" => Func::Dot,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Node payload of a typed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    /// Scalar numeric literal.
    Number(f64),
    /// Spliced constant value (scalars print as numbers; vector/matrix
    /// literals have no surface syntax and only arise programmatically).
    Literal(Value),
    /// The time variable `t`.
    Time,
    /// The frame variable `F` (3x3, invertible where `inv` is used).
    Frame,
    /// A declared named constant.
    Const(String),
    Neg(Box<ExprAst>),
    Binary {
        op: BinOp,
        lhs: Box<ExprAst>,
        rhs: Box<ExprAst>,
    },
    Pow {
        base: Box<ExprAst>,
        exponent: i32,
    },
    Call {
        func: Func,
        args: Vec<ExprAst>,
    },
}

/// A typed expression with its source span.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    pub kind: ExprKind,
    pub ty: Kind,
    pub span: Span,
}

impl ExprAst {
    pub fn new(kind: ExprKind, ty: Kind, span: Span) -> Self {
        ExprAst { kind, ty, span }
    }

    /// Structural equality, ignoring source spans.
    pub fn structurally_eq(&self, other: &ExprAst) -> bool {
        if self.ty != other.ty {
            return false;
        }
        match (&self.kind, &other.kind) {
            (ExprKind::Number(a), ExprKind::Number(b)) => a == b,
            (ExprKind::Literal(a), ExprKind::Literal(b)) => a == b,
            (ExprKind::Time, ExprKind::Time) => true,
            (ExprKind::Frame, ExprKind::Frame) => true,
            (ExprKind::Const(a), ExprKind::Const(b)) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a.structurally_eq(b),
            (
                ExprKind::Binary { op: oa, lhs: la, rhs: ra },
                ExprKind::Binary { op: ob, lhs: lb, rhs: rb },
            ) => oa == ob && la.structurally_eq(lb) && ra.structurally_eq(rb),
            (
                ExprKind::Pow { base: ba, exponent: ea },
                ExprKind::Pow { base: bb, exponent: eb },
            ) => ea == eb && ba.structurally_eq(bb),
            (ExprKind::Call { func: fa, args: aa }, ExprKind::Call { func: fb, args: ab }) => {
                fa == fb
                    && aa.len() == ab.len()
                    && aa.iter().zip(ab).all(|(x, y)| x.structurally_eq(y))
            }
            _ => false,
        }
    }

    /// Replaces `Const(name)` nodes by the mapped sub-expressions.
    /// Names absent from the map are left untouched.
    pub fn substitute_consts(&self, map: &BTreeMap<String, ExprAst>) -> ExprAst {
        let kind = match &self.kind {
            ExprKind::Const(name) => {
                if let Some(replacement) = map.get(name) {
                    return replacement.clone();
                }
                ExprKind::Const(name.clone())
            }
            ExprKind::Neg(x) => ExprKind::Neg(Box::new(x.substitute_consts(map))),
            ExprKind::Binary { op, lhs, rhs } => ExprKind::Binary {
                op: *op,
                lhs: Box::new(lhs.substitute_consts(map)),
                rhs: Box::new(rhs.substitute_consts(map)),
            },
            ExprKind::Pow { base, exponent } => ExprKind::Pow {
                base: Box::new(base.substitute_consts(map)),
                exponent: *exponent,
            },
            ExprKind::Call { func, args } => ExprKind::Call {
                func: *func,
                args: args.iter().map(|a| a.substitute_consts(map)).collect(),
            },
            other => other.clone(),
        };
        ExprAst::new(kind, self.ty, self.span)
    }

    /// Grammar level of this node: 0 = additive, 1 = multiplicative,
    /// 2 = power, 3 = atom.
    fn level(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary { op: BinOp::Add | BinOp::Sub, .. } => 0,
            ExprKind::Binary { op: BinOp::Mul | BinOp::Div, .. } => 1,
            ExprKind::Pow { .. } => 2,
            _ => 3,
        }
    }

    fn pretty_into(&self, out: &mut String, min_level: u8) {
        let level = self.level();
        let wrap = level < min_level;
        if wrap {
            out.push('(');
        }
        match &self.kind {
            // A leading sign re-parses through the unary-minus rule and
            // folds back into a negative literal.
            ExprKind::Number(x) => out.push_str(&format!("{x}")),
            ExprKind::Literal(Value::Scalar(x)) => out.push_str(&format!("{x}")),
            ExprKind::Literal(Value::Vector(v)) => {
                out.push_str(&format!("[{}, {}, {}]", v[0], v[1], v[2]));
            }
            ExprKind::Literal(Value::Matrix(m)) => {
                out.push('[');
                for r in 0..3 {
                    if r > 0 {
                        out.push_str("; ");
                    }
                    out.push_str(&format!("{}, {}, {}", m[(r, 0)], m[(r, 1)], m[(r, 2)]));
                }
                out.push(']');
            }
            ExprKind::Time => out.push('t'),
            ExprKind::Frame => out.push('F'),
            ExprKind::Const(name) => out.push_str(name),
            ExprKind::Neg(x) => {
                out.push('-');
                x.pretty_into(out, 3);
            }
            ExprKind::Binary { op, lhs, rhs } => {
                lhs.pretty_into(out, level);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                rhs.pretty_into(out, level + 1);
            }
            ExprKind::Pow { base, exponent } => {
                base.pretty_into(out, 3);
                out.push('^');
                out.push_str(&exponent.to_string());
            }
            ExprKind::Call { func, args } => {
                out.push_str(func.name());
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    a.pretty_into(out, 0);
                }
                out.push(')');
            }
        }
        if wrap {
            out.push(')');
        }
    }

    /// Renders the expression back to grammar source with minimal
    /// parentheses; `parse(pretty_print(ast))` is structurally `ast`.
    pub fn pretty_print(&self) -> String {
        let mut out = String::new();
        self.pretty_into(&mut out, 0);
        out
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pretty_print())
    }
}
