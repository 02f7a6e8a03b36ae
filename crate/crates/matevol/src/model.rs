//! Constitutive models of a fixed material particle.
//!
//! A [`ConstitutiveModel`] evaluates the mechanical response
//! `W(t, F) in R^m` of one particle, with exact time and frame
//! derivatives obtained through dual-number evaluation of its
//! components. Models are immutable after construction; every
//! operation here is pure and reentrant.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, Matrix3, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::expr::{
    eval_dual, near_singular, parse, parse_with, DualMatrix, DualScalar, EvalError, ExprAst,
    ExprKind, Kind, ParseError, Span, SymbolTable, Value,
};

/// Errors raised while loading or transforming models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model schema violation: {0}")]
    Schema(String),
    #[error("expression error: {0}")]
    Expr(#[from] ParseError),
    #[error("singular matrix: {0}")]
    Singular(String),
}

type NativeFn =
    dyn Fn(DualScalar, &DualMatrix) -> Result<DualScalar, EvalError> + Send + Sync;

/// One scalar component of the response: either a parsed expression or a
/// built-in closure over dual numbers.
#[derive(Clone)]
pub enum Component {
    Expr(ExprAst),
    Native { name: String, eval: Arc<NativeFn> },
}

impl fmt::Debug for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Expr(ast) => write!(f, "Expr({})", ast.pretty_print()),
            Component::Native { name, .. } => write!(f, "Native({name})"),
        }
    }
}

/// The mechanical response of a fixed particle: `m` scalar components,
/// their named constants, an optional time domain and the accumulated
/// change of reference configuration.
#[derive(Debug, Clone)]
pub struct ConstitutiveModel {
    label: String,
    components: Vec<Component>,
    constants: BTreeMap<String, Value>,
    time_domain: Option<(f64, f64)>,
    /// `W(t, F) = W_raw(t, F * ref_change)`; identity when `None`.
    ref_change: Option<Matrix3<f64>>,
}

impl ConstitutiveModel {
    pub fn new(
        label: impl Into<String>,
        components: Vec<Component>,
        constants: BTreeMap<String, Value>,
    ) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::Schema("a model needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if let Component::Expr(ast) = c {
                if ast.ty != Kind::Scalar {
                    return Err(ModelError::Schema(format!(
                        "component {i} is {}-valued; components must be scalar",
                        ast.ty
                    )));
                }
            }
        }
        Ok(ConstitutiveModel {
            label: label.into(),
            components,
            constants,
            time_domain: None,
            ref_change: None,
        })
    }

    /// Builds a model from expression sources sharing one constants map.
    pub fn from_sources(
        label: &str,
        sources: &[&str],
        constants: BTreeMap<String, Value>,
    ) -> Result<Self, ModelError> {
        let mut table = SymbolTable::new();
        for (name, value) in &constants {
            table.declare(name, value.kind());
        }
        let components = sources
            .iter()
            .map(|s| parse_with(s, &table).map(Component::Expr))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(label, components, constants)
    }

    pub fn with_time_domain(mut self, lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo < hi) {
            return Err(ModelError::Schema(format!(
                "time_domain must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        self.time_domain = Some((lo, hi));
        Ok(self)
    }

    /// Output dimension `m` of the value space.
    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn constants(&self) -> &BTreeMap<String, Value> {
        &self.constants
    }

    pub fn time_domain(&self) -> Option<(f64, f64)> {
        self.time_domain
    }

    pub fn contains_time(&self, t: f64) -> bool {
        match self.time_domain {
            Some((lo, hi)) => t >= lo && t <= hi,
            None => true,
        }
    }

    fn eval_all(
        &self,
        t: f64,
        dt: f64,
        f: &Matrix3<f64>,
        df: &Matrix3<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        if near_singular(f) {
            return Err(EvalError::Singular(format!(
                "frame F is (near-)singular, det = {:e}",
                f.determinant()
            )));
        }
        let (fe, dfe) = match &self.ref_change {
            Some(c) => (f * c, df * c),
            None => (*f, *df),
        };
        let t_dual = DualScalar::new(t, dt);
        let f_dual = DualMatrix::seeded(fe, dfe);
        let mut values = Vec::with_capacity(self.components.len());
        let mut derivs = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let out = match comp {
                Component::Expr(ast) => {
                    let (v, d) = eval_dual(ast, t, &fe, dt, &dfe, &self.constants)?;
                    DualScalar::new(v, d)
                }
                Component::Native { eval, .. } => (eval.as_ref())(t_dual, &f_dual)?,
            };
            values.push(out.value);
            derivs.push(out.deriv);
        }
        Ok((values, derivs))
    }

    /// `W(t, F)` componentwise.
    pub fn evaluate(&self, t: f64, f: &Matrix3<f64>) -> Result<Vec<f64>, EvalError> {
        Ok(self.eval_all(t, 0.0, f, &Matrix3::zeros())?.0)
    }

    /// Exact partial derivative `dW/dt (t, F)`.
    pub fn d_dt(&self, t: f64, f: &Matrix3<f64>) -> Result<Vec<f64>, EvalError> {
        Ok(self.eval_all(t, 1.0, f, &Matrix3::zeros())?.1)
    }

    /// Exact directional frame derivative `dW/dF (t, F)[E]`.
    pub fn d_df(
        &self,
        t: f64,
        f: &Matrix3<f64>,
        e: &Matrix3<f64>,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(self.eval_all(t, 0.0, f, e)?.1)
    }

    /// Value and directional derivative along `(dt, dF)` in one pass.
    pub fn eval_dual_all(
        &self,
        t: f64,
        dt: f64,
        f: &Matrix3<f64>,
        df: &Matrix3<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
        self.eval_all(t, dt, f, df)
    }

    /// Rule of change of reference configuration: the returned model
    /// satisfies `W1(t, F) = W(t, F * C)` for every frame.
    pub fn change_reference(&self, c: &Matrix3<f64>) -> Result<Self, ModelError> {
        if near_singular(c) {
            return Err(ModelError::Singular(format!(
                "change of reference must be invertible, det = {:e}",
                c.determinant()
            )));
        }
        let mut out = self.clone();
        out.ref_change = Some(match &self.ref_change {
            Some(r) => c * r,
            None => *c,
        });
        Ok(out)
    }
}

/// Per-particle data of the laminated liquid-crystal model: the
/// cross-grain direction `e`, the metric `g` at the particle, the
/// squared particle norm `c`, the stiffness coefficient `mu(t)` and the
/// immersion applied to the pair `(r, J)`.
#[derive(Debug, Clone)]
pub struct FixedParticleContext {
    pub e: Vector3<f64>,
    pub g: Matrix3<f64>,
    pub c: f64,
    pub mu: ExprAst,
    pub what: Immersion,
}

/// The immersion applied to `(r, J)`; the identity pair is the default.
/// Custom components are scalar expressions in the variables `r` and `J`.
#[derive(Debug, Clone)]
pub enum Immersion {
    IdentityPair,
    Custom(Vec<ExprAst>),
}

fn uses_frame(ast: &ExprAst) -> bool {
    match &ast.kind {
        ExprKind::Frame => true,
        ExprKind::Neg(x) => uses_frame(x),
        ExprKind::Binary { lhs, rhs, .. } => uses_frame(lhs) || uses_frame(rhs),
        ExprKind::Pow { base, .. } => uses_frame(base),
        ExprKind::Call { args, .. } => args.iter().any(uses_frame),
        _ => false,
    }
}

impl FixedParticleContext {
    /// Context with `e = (0,0,1)`, `g = I`, `c = 0.25` and the identity
    /// immersion; `mu_source` is a scalar expression in `t`.
    pub fn standard(mu_source: &str) -> Result<Self, ModelError> {
        Ok(FixedParticleContext {
            e: Vector3::new(0.0, 0.0, 1.0),
            g: Matrix3::identity(),
            c: 0.25,
            mu: parse(mu_source)?,
            what: Immersion::IdentityPair,
        })
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.e.norm() == 0.0 {
            return Err(ModelError::Schema("cross-grain field e must be nonzero".into()));
        }
        if (self.g - self.g.transpose()).norm() > 1e-12 * self.g.norm().max(1.0) {
            return Err(ModelError::Schema("metric g must be symmetric".into()));
        }
        if Cholesky::new(self.g).is_none() {
            return Err(ModelError::Schema("metric g must be positive definite".into()));
        }
        if self.c < 0.0 {
            return Err(ModelError::Schema("constant c must be nonnegative".into()));
        }
        if self.mu.ty != Kind::Scalar {
            return Err(ModelError::Schema("mu must be scalar-valued".into()));
        }
        if uses_frame(&self.mu) {
            return Err(ModelError::Schema("mu may depend on t only, not on F".into()));
        }
        Ok(())
    }
}

fn mul_node(lhs: ExprAst, rhs: ExprAst) -> ExprAst {
    let span = Span::default();
    ExprAst::new(
        ExprKind::Binary {
            op: crate::expr::BinOp::Mul,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        },
        Kind::Scalar,
        span,
    )
}

/// Laminated liquid crystal: `W(t, F) = mu(t) * What(r, J)` with
/// `r = g(F e, F e) + c` and `J = det F`.
pub fn liquid_crystal(ctx: &FixedParticleContext) -> Result<ConstitutiveModel, ModelError> {
    ctx.validate()?;
    let mut constants = BTreeMap::new();
    constants.insert("e".to_string(), Value::Vector(ctx.e));
    constants.insert("g".to_string(), Value::Matrix(ctx.g));
    constants.insert("c".to_string(), Value::Scalar(ctx.c));

    let table = SymbolTable::new()
        .with_constant("e", Kind::Vector)
        .with_constant("g", Kind::Matrix)
        .with_constant("c", Kind::Scalar);
    let r_ast = parse_with("dot(F*e, g*(F*e)) + c", &table).expect("built-in r expression");
    let j_ast = parse("det(F)").expect("built-in J expression");

    let immersion: Vec<ExprAst> = match &ctx.what {
        Immersion::IdentityPair => {
            let rj = SymbolTable::scalars_only(&["r", "J"]);
            vec![
                parse_with("r", &rj).expect("identity immersion"),
                parse_with("J", &rj).expect("identity immersion"),
            ]
        }
        Immersion::Custom(components) => {
            if components.is_empty() {
                return Err(ModelError::Schema("immersion needs at least one component".into()));
            }
            for w in components {
                if w.ty != Kind::Scalar {
                    return Err(ModelError::Schema(
                        "immersion components must be scalar".into(),
                    ));
                }
            }
            components.clone()
        }
    };

    let mut subst = BTreeMap::new();
    subst.insert("r".to_string(), r_ast);
    subst.insert("J".to_string(), j_ast);

    let components = immersion
        .iter()
        .map(|w| Component::Expr(mul_node(ctx.mu.clone(), w.substitute_consts(&subst))))
        .collect();
    ConstitutiveModel::new("liquid_crystal", components, constants)
}

/// Convenience: liquid crystal at the standard particle with the given
/// stiffness expression.
pub fn liquid_crystal_mu(mu_source: &str) -> Result<ConstitutiveModel, ModelError> {
    liquid_crystal(&FixedParticleContext::standard(mu_source)?)
}

/// `W(t, F) = det F`.
pub fn det_only() -> ConstitutiveModel {
    ConstitutiveModel::from_sources("det_only", &["det(F)"], BTreeMap::new())
        .expect("built-in model")
}

/// `W(t, F) = (tr(F^T F), det F)`.
pub fn isotropic() -> ConstitutiveModel {
    ConstitutiveModel::from_sources(
        "isotropic",
        &["tr(transpose(F)*F)", "det(F)"],
        BTreeMap::new(),
    )
    .expect("built-in model")
}

/// `W(t, F) = exp(-t) det F`.
pub fn exp_decay() -> ConstitutiveModel {
    ConstitutiveModel::from_sources("exp_decay", &["exp(-t)*det(F)"], BTreeMap::new())
        .expect("built-in model")
}

/// `W(t, F) = mu(t) det F` with `mu = 1` for `t <= 0` transitioning
/// smoothly (C^2) into `1 + t^3` for `t > 0`.
pub fn piecewise_stiffness() -> ConstitutiveModel {
    let eval = Arc::new(|t: DualScalar, f: &DualMatrix| -> Result<DualScalar, EvalError> {
        let mu = if t.value <= 0.0 {
            DualScalar::constant(1.0)
        } else {
            DualScalar::constant(1.0) + t * t * t
        };
        Ok(mu * f.det())
    });
    ConstitutiveModel::new(
        "piecewise_stiffness",
        vec![Component::Native { name: "piecewise_mu_det".into(), eval }],
        BTreeMap::new(),
    )
    .expect("built-in model")
}

/// `W(t, F) = mu(t) det F` where `mu` is constant outside `(-1/4, 1/4)`
/// and strictly increasing inside: two remodeling plateaus bridged by an
/// aging window. `mu' (t) = (1/16 - t^2)^3` on the window.
pub fn double_plateau() -> ConstitutiveModel {
    const A: f64 = 1.0 / 16.0;
    fn antiderivative(s: f64) -> f64 {
        // integral of (A - s^2)^3 ds
        A * A * A * s - A * A * s.powi(3) + 0.6 * A * s.powi(5) - s.powi(7) / 7.0
    }
    let eval = Arc::new(move |t: DualScalar, f: &DualMatrix| -> Result<DualScalar, EvalError> {
        let lo = -0.25;
        let hi = 0.25;
        let mu = if t.value <= lo {
            DualScalar::constant(1.0)
        } else if t.value >= hi {
            DualScalar::constant(1.0 + antiderivative(hi) - antiderivative(lo))
        } else {
            let slope = (A - t.value * t.value).powi(3);
            DualScalar::new(
                1.0 + antiderivative(t.value) - antiderivative(lo),
                slope * t.deriv,
            )
        };
        Ok(mu * f.det())
    });
    ConstitutiveModel::new(
        "double_plateau",
        vec![Component::Native { name: "double_plateau_mu_det".into(), eval }],
        BTreeMap::new(),
    )
    .expect("built-in model")
}

/// The built-in model zoo used by the verification suite and examples.
pub fn zoo() -> Vec<ConstitutiveModel> {
    vec![
        det_only(),
        isotropic(),
        exp_decay(),
        liquid_crystal_mu("1").expect("zoo model"),
        liquid_crystal_mu("1 + t").expect("zoo model"),
        piecewise_stiffness(),
        double_plateau(),
    ]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    label: Option<String>,
    m: Option<usize>,
    components: Option<Vec<String>>,
    constants: Option<BTreeMap<String, ConstantSpec>>,
    time_domain: Option<[f64; 2]>,
    builtin: Option<String>,
    params: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConstantSpec {
    Scalar(f64),
    Vector([f64; 3]),
    Matrix([[f64; 3]; 3]),
}

impl ConstantSpec {
    fn into_value(self) -> Value {
        match self {
            ConstantSpec::Scalar(x) => Value::Scalar(x),
            ConstantSpec::Vector(v) => Value::Vector(Vector3::from_row_slice(&v)),
            ConstantSpec::Matrix(rows) => {
                let mut m = Matrix3::zeros();
                for (r, row) in rows.iter().enumerate() {
                    for (c, x) in row.iter().enumerate() {
                        m[(r, c)] = *x;
                    }
                }
                Value::Matrix(m)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LiquidCrystalParams {
    e: [f64; 3],
    g: [[f64; 3]; 3],
    c: f64,
    mu: String,
    what: Option<Vec<String>>,
}

fn build_builtin(
    name: &str,
    params: Option<serde_json::Value>,
) -> Result<ConstitutiveModel, ModelError> {
    match name {
        "det_only" => Ok(det_only()),
        "isotropic" => Ok(isotropic()),
        "exp_decay" => Ok(exp_decay()),
        "piecewise_stiffness" => Ok(piecewise_stiffness()),
        "double_plateau" => Ok(double_plateau()),
        "liquid_crystal" => {
            let raw = params.ok_or_else(|| {
                ModelError::Schema("builtin liquid_crystal requires a params object".into())
            })?;
            let p: LiquidCrystalParams = serde_json::from_value(raw)
                .map_err(|e| ModelError::Schema(format!("liquid_crystal params: {e}")))?;
            let what = match p.what {
                None => Immersion::IdentityPair,
                Some(sources) => {
                    let rj = SymbolTable::scalars_only(&["r", "J"]);
                    Immersion::Custom(
                        sources
                            .iter()
                            .map(|s| parse_with(s, &rj))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
            };
            let ctx = FixedParticleContext {
                e: Vector3::from_row_slice(&p.e),
                g: {
                    let mut m = Matrix3::zeros();
                    for (r, row) in p.g.iter().enumerate() {
                        for (c, x) in row.iter().enumerate() {
                            m[(r, c)] = *x;
                        }
                    }
                    m
                },
                c: p.c,
                mu: parse(&p.mu)?,
                what,
            };
            liquid_crystal(&ctx)
        }
        other => Err(ModelError::Schema(format!("unknown builtin `{other}`"))),
    }
}

/// Loads a model from a JSON file. The file either declares `components`
/// (expression strings plus `constants`) or selects a `builtin` with a
/// `params` object; see the crate README for the schema.
pub fn load_model(path: impl AsRef<Path>) -> Result<ConstitutiveModel, ModelError> {
    let bytes = std::fs::read(path.as_ref())?;
    load_model_from_slice(&bytes)
}

/// Loads a model from raw JSON bytes.
pub fn load_model_from_slice(bytes: &[u8]) -> Result<ConstitutiveModel, ModelError> {
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| ModelError::Schema(e.to_string()))?;

    let mut model = match (&file.builtin, &file.components) {
        (Some(_), Some(_)) => {
            return Err(ModelError::Schema(
                "declare either `builtin` or `components`, not both".into(),
            ));
        }
        (Some(name), None) => {
            let mut m = build_builtin(name, file.params)?;
            if let Some(label) = file.label {
                m.label = label;
            }
            m
        }
        (None, Some(sources)) => {
            if file.params.is_some() {
                return Err(ModelError::Schema("`params` requires `builtin`".into()));
            }
            let constants: BTreeMap<String, Value> = file
                .constants
                .unwrap_or_default()
                .into_iter()
                .map(|(k, v)| (k, v.into_value()))
                .collect();
            let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
            let label = file.label.unwrap_or_else(|| "model".to_string());
            ConstitutiveModel::from_sources(&label, &refs, constants)?
        }
        (None, None) => {
            return Err(ModelError::Schema(
                "a model file needs `components` or `builtin`".into(),
            ));
        }
    };

    if let Some(m_declared) = file.m {
        if m_declared != model.m() {
            return Err(ModelError::Schema(format!(
                "declared m = {m_declared} but found {} component(s)",
                model.m()
            )));
        }
    }
    if let Some([lo, hi]) = file.time_domain {
        model = model.with_time_domain(lo, hi)?;
    }
    Ok(model)
}
