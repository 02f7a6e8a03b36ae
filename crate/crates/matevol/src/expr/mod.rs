//! A small expression language for scalar-valued constitutive components
//! in the variables `t` (time) and `F` (a 3x3 frame), with exact
//! first derivatives via forward-mode dual-number evaluation.
//!
//! Parsed trees are immutable; evaluation is pure and thread-safe.

mod ast;
mod dual;
mod eval;
mod parse;

pub use ast::{BinOp, ExprAst, ExprKind, Func, Kind, Span, Value};
pub use dual::{cofactor_matrix, near_singular, DualMatrix, DualScalar, DualVector};
pub use eval::{eval, eval_dual, EvalError};
pub use parse::{parse, parse_with, ParseError, SymbolTable};
