//! Dual-number evaluation of typed expressions.
//!
//! `eval_dual` computes both the value and the exact directional
//! derivative d/de|0 of the expression at `(t + e*dt, F + e*dF)`;
//! `eval` is the plain value. Both are pure, so parsed expressions can
//! be evaluated from many threads concurrently.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use thiserror::Error;

use super::ast::{BinOp, ExprAst, ExprKind, Func, Value};
use super::dual::{DualMatrix, DualScalar, DualVector};

/// Runtime evaluation failures.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown constant `{0}` at evaluation time")]
    UnknownConstant(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
}

#[derive(Debug, Clone, Copy)]
enum DualValue {
    Scalar(DualScalar),
    Vector(DualVector),
    Matrix(DualMatrix),
}

impl DualValue {
    fn kind_name(&self) -> &'static str {
        match self {
            DualValue::Scalar(_) => "scalar",
            DualValue::Vector(_) => "vector",
            DualValue::Matrix(_) => "matrix",
        }
    }

    fn scalar(self) -> Result<DualScalar, EvalError> {
        match self {
            DualValue::Scalar(s) => Ok(s),
            other => Err(EvalError::KindMismatch(format!(
                "expected scalar, got {}",
                other.kind_name()
            ))),
        }
    }

    fn matrix(self) -> Result<DualMatrix, EvalError> {
        match self {
            DualValue::Matrix(m) => Ok(m),
            other => Err(EvalError::KindMismatch(format!(
                "expected matrix, got {}",
                other.kind_name()
            ))),
        }
    }

    fn vector(self) -> Result<DualVector, EvalError> {
        match self {
            DualValue::Vector(v) => Ok(v),
            other => Err(EvalError::KindMismatch(format!(
                "expected vector, got {}",
                other.kind_name()
            ))),
        }
    }
}

struct Context<'a> {
    t: DualScalar,
    f: DualMatrix,
    constants: &'a BTreeMap<String, Value>,
}

fn lift(value: &Value) -> DualValue {
    match value {
        Value::Scalar(s) => DualValue::Scalar(DualScalar::constant(*s)),
        Value::Vector(v) => DualValue::Vector(DualVector::constant(*v)),
        Value::Matrix(m) => DualValue::Matrix(DualMatrix::constant(*m)),
    }
}

fn eval_node(ast: &ExprAst, ctx: &Context<'_>) -> Result<DualValue, EvalError> {
    match &ast.kind {
        ExprKind::Number(x) => Ok(DualValue::Scalar(DualScalar::constant(*x))),
        ExprKind::Literal(v) => Ok(lift(v)),
        ExprKind::Time => Ok(DualValue::Scalar(ctx.t)),
        ExprKind::Frame => Ok(DualValue::Matrix(ctx.f)),
        ExprKind::Const(name) => {
            let value = ctx
                .constants
                .get(name)
                .ok_or_else(|| EvalError::UnknownConstant(name.clone()))?;
            if value.kind() != ast.ty {
                return Err(EvalError::KindMismatch(format!(
                    "constant `{name}` was declared as {} but bound to a {}",
                    ast.ty,
                    value.kind()
                )));
            }
            Ok(lift(value))
        }
        ExprKind::Neg(x) => Ok(match eval_node(x, ctx)? {
            DualValue::Scalar(s) => DualValue::Scalar(-s),
            DualValue::Vector(v) => DualValue::Vector(v.neg()),
            DualValue::Matrix(m) => DualValue::Matrix(m.neg()),
        }),
        ExprKind::Binary { op, lhs, rhs } => {
            let a = eval_node(lhs, ctx)?;
            let b = eval_node(rhs, ctx)?;
            binary(*op, a, b)
        }
        ExprKind::Pow { base, exponent } => match eval_node(base, ctx)? {
            DualValue::Scalar(s) => Ok(DualValue::Scalar(s.powi(*exponent))),
            DualValue::Matrix(m) => Ok(DualValue::Matrix(m.powi(*exponent)?)),
            DualValue::Vector(_) => Err(EvalError::KindMismatch(
                "cannot raise a vector to a power".to_string(),
            )),
        },
        ExprKind::Call { func, args } => call(*func, args, ctx),
    }
}

fn binary(op: BinOp, a: DualValue, b: DualValue) -> Result<DualValue, EvalError> {
    use DualValue::{Matrix, Scalar, Vector};
    let mismatch = |a: &DualValue, b: &DualValue| {
        EvalError::KindMismatch(format!(
            "operator `{}` on {} and {}",
            op.symbol(),
            a.kind_name(),
            b.kind_name()
        ))
    };
    Ok(match op {
        BinOp::Add => match (a, b) {
            (Scalar(x), Scalar(y)) => Scalar(x + y),
            (Vector(x), Vector(y)) => Vector(x.add(&y)),
            (Matrix(x), Matrix(y)) => Matrix(x.add(&y)),
            (x, y) => return Err(mismatch(&x, &y)),
        },
        BinOp::Sub => match (a, b) {
            (Scalar(x), Scalar(y)) => Scalar(x - y),
            (Vector(x), Vector(y)) => Vector(x.sub(&y)),
            (Matrix(x), Matrix(y)) => Matrix(x.sub(&y)),
            (x, y) => return Err(mismatch(&x, &y)),
        },
        BinOp::Mul => match (a, b) {
            (Scalar(x), Scalar(y)) => Scalar(x * y),
            (Scalar(s), Vector(v)) | (Vector(v), Scalar(s)) => Vector(v.scale(s)),
            (Scalar(s), Matrix(m)) | (Matrix(m), Scalar(s)) => Matrix(m.scale(s)),
            (Matrix(x), Matrix(y)) => Matrix(x.mul_mat(&y)),
            (Matrix(m), Vector(v)) => Vector(m.mul_vec(&v)),
            (x, y) => return Err(mismatch(&x, &y)),
        },
        BinOp::Div => {
            let denom = b.scalar()?;
            let inv = DualScalar::constant(1.0) / denom;
            match a {
                Scalar(x) => Scalar(x / denom),
                Vector(v) => Vector(v.scale(inv)),
                Matrix(m) => Matrix(m.scale(inv)),
            }
        }
    })
}

fn call(func: Func, args: &[ExprAst], ctx: &Context<'_>) -> Result<DualValue, EvalError> {
    Ok(match func {
        Func::Det => DualValue::Scalar(eval_node(&args[0], ctx)?.matrix()?.det()),
        Func::Tr => DualValue::Scalar(eval_node(&args[0], ctx)?.matrix()?.trace()),
        Func::Transpose => DualValue::Matrix(eval_node(&args[0], ctx)?.matrix()?.transpose()),
        Func::Inv => DualValue::Matrix(eval_node(&args[0], ctx)?.matrix()?.inv()?),
        Func::Dot => {
            let u = eval_node(&args[0], ctx)?.vector()?;
            let v = eval_node(&args[1], ctx)?.vector()?;
            DualValue::Scalar(u.dot(&v))
        }
        Func::Exp => DualValue::Scalar(eval_node(&args[0], ctx)?.scalar()?.exp()),
        Func::Log => DualValue::Scalar(eval_node(&args[0], ctx)?.scalar()?.ln()?),
        Func::Sin => DualValue::Scalar(eval_node(&args[0], ctx)?.scalar()?.sin()),
        Func::Cos => DualValue::Scalar(eval_node(&args[0], ctx)?.scalar()?.cos()),
        Func::Sqrt => DualValue::Scalar(eval_node(&args[0], ctx)?.scalar()?.sqrt()?),
    })
}

/// Evaluates a scalar expression at `(t, F)`.
pub fn eval(
    ast: &ExprAst,
    t: f64,
    f: &Matrix3<f64>,
    constants: &BTreeMap<String, Value>,
) -> Result<f64, EvalError> {
    Ok(eval_dual(ast, t, f, 0.0, &Matrix3::zeros(), constants)?.0)
}

/// Evaluates a scalar expression together with its exact directional
/// derivative along `(dt, dF)`.
pub fn eval_dual(
    ast: &ExprAst,
    t: f64,
    f: &Matrix3<f64>,
    dt: f64,
    df: &Matrix3<f64>,
    constants: &BTreeMap<String, Value>,
) -> Result<(f64, f64), EvalError> {
    let ctx = Context {
        t: DualScalar::new(t, dt),
        f: DualMatrix::seeded(*f, *df),
        constants,
    };
    let out = eval_node(ast, &ctx)?.scalar()?;
    Ok((out.value, out.deriv))
}

#[cfg(test)]
mod tests {
    use nalgebra::{Matrix3, Vector3};

    use super::super::parse::{parse, parse_with, SymbolTable};
    use super::*;
    use crate::expr::Kind;

    fn consts() -> BTreeMap<String, Value> {
        BTreeMap::new()
    }

    #[test]
    fn det_of_identity() {
        let ast = parse("det(F)").unwrap();
        let v = eval(&ast, 0.0, &Matrix3::identity(), &consts()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn polynomial_in_t_and_frame() {
        let ast = parse("(1 + t) * det(F)").unwrap();
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        assert_eq!(eval(&ast, 1.0, &f, &consts()).unwrap(), 4.0);
    }

    #[test]
    fn cross_grain_energy_component() {
        // r = g(F e, F e) + c at F = I with e = (0,0,1), g = I, c = 0.25.
        let symbols = SymbolTable::new()
            .with_constant("e", Kind::Vector)
            .with_constant("g", Kind::Matrix)
            .with_constant("c", Kind::Scalar);
        let ast = parse_with("dot(F*e, g*(F*e)) + c", &symbols).unwrap();
        let mut constants = consts();
        constants.insert("e".into(), Value::Vector(Vector3::new(0.0, 0.0, 1.0)));
        constants.insert("g".into(), Value::Matrix(Matrix3::identity()));
        constants.insert("c".into(), Value::Scalar(0.25));
        let v = eval(&ast, 0.0, &Matrix3::identity(), &constants).unwrap();
        assert_eq!(v, 1.25);
    }

    #[test]
    fn det_direction_is_trace_at_identity() {
        let ast = parse("det(F)").unwrap();
        let e = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.1, 0.0, -0.7, 0.4, 1.1);
        let (_, d) = eval_dual(&ast, 0.0, &Matrix3::identity(), 0.0, &e, &consts()).unwrap();
        assert!((d - e.trace()).abs() < 1e-14);
    }

    #[test]
    fn time_square_derivative() {
        let ast = parse("t * t").unwrap();
        let (v, d) =
            eval_dual(&ast, 3.0, &Matrix3::identity(), 1.0, &Matrix3::zeros(), &consts()).unwrap();
        assert_eq!((v, d), (9.0, 6.0));
    }

    #[test]
    fn singular_inverse_is_an_error() {
        let ast = parse("tr(inv(F))").unwrap();
        let singular = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0);
        assert!(matches!(
            eval(&ast, 0.0, &singular, &consts()),
            Err(EvalError::Singular(_))
        ));
    }

    #[test]
    fn log_domain_error() {
        let ast = parse("log(t)").unwrap();
        assert!(matches!(
            eval(&ast, -1.0, &Matrix3::identity(), &consts()),
            Err(EvalError::Domain(_))
        ));
    }

    #[test]
    fn missing_constant_at_eval_time() {
        let symbols = SymbolTable::new().with_constant("k", Kind::Scalar);
        let ast = parse_with("k * t", &symbols).unwrap();
        assert!(matches!(
            eval(&ast, 1.0, &Matrix3::identity(), &consts()),
            Err(EvalError::UnknownConstant(_))
        ));
    }
}
