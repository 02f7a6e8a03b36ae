//! Jet arrows, remodeling processes and their verification.
//!
//! An arrow `(t_src, t_tgt, P)` is a material isomorphism candidate
//! between two instants of the fixed particle; it verifies when
//! `W(t_src, F * P) = W(t_tgt, F)` for all frames. Arrows compose like
//! jets: `(s,t,A) . (r,s,B) = (r,t,A*B)`.
//!
//! A remodeling process integrates the matrix ODE `dP/dt = P * Theta(t)`
//! along a remodeling leaf with `P(t_ref) = I`, where `Theta(t)` is the
//! canonical remodeling direction (`lambda = 1`, Frobenius-orthogonal to
//! the symmetry algebra) reported by the per-instant solver. The sample
//! `P(t)` is stored as the arrow from `(t, X)` to `(t_ref, X)`.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::evolution::{
    evolution_fibre, EvolutionError, EvolutionTangent, FibreResult, SolverConfig,
};
use crate::evolution::sample_frames;
use crate::expr::EvalError;
use crate::foliation::{Leaf, LeafKind};
use crate::model::ConstitutiveModel;

/// Determinant magnitude below which process integration aborts.
pub const PROCESS_DET_MIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("arrows do not compose: source {0} does not match target {1}")]
    InstantMismatch(f64, f64),
    #[error("arrow matrix is (near-)singular, det = {0:e}")]
    SingularArrow(f64),
    #[error("leaf is not a remodeling interval")]
    NotRemodeling,
    #[error("t_ref = {t_ref} lies outside the leaf [{t_lo}, {t_hi}]")]
    OutsideLeaf { t_ref: f64, t_lo: f64, t_hi: f64 },
    #[error("no remodeling direction at t = {0}; the instant is aging")]
    MissingDirection(f64),
    #[error("integration aborted at t = {t}: det P = {det:e} is near singular")]
    NearSingular { t: f64, det: f64 },
    #[error("conjugation needs lambda = 0 basis elements")]
    NotSymmetry,
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A groupoid element `(t_src, t_tgt, P)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetArrow {
    pub t_src: f64,
    pub t_tgt: f64,
    pub p: Matrix3<f64>,
}

fn instants_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

impl JetArrow {
    pub fn new(t_src: f64, t_tgt: f64, p: Matrix3<f64>) -> Result<Self, FlowError> {
        if crate::expr::near_singular(&p) {
            return Err(FlowError::SingularArrow(p.determinant()));
        }
        Ok(JetArrow { t_src, t_tgt, p })
    }

    /// The identity arrow at an instant.
    pub fn identity(t: f64) -> Self {
        JetArrow { t_src: t, t_tgt: t, p: Matrix3::identity() }
    }

    /// Composes `self . other`: `other` runs first, so its target must
    /// be `self`'s source; matrices multiply as `self.p * other.p`.
    pub fn compose(&self, other: &JetArrow) -> Result<JetArrow, FlowError> {
        if !instants_match(self.t_src, other.t_tgt) {
            return Err(FlowError::InstantMismatch(self.t_src, other.t_tgt));
        }
        Ok(JetArrow { t_src: other.t_src, t_tgt: self.t_tgt, p: self.p * other.p })
    }

    pub fn invert(&self) -> Result<JetArrow, FlowError> {
        if crate::expr::near_singular(&self.p) {
            return Err(FlowError::SingularArrow(self.p.determinant()));
        }
        let inv = self.p.try_inverse().ok_or(FlowError::SingularArrow(0.0))?;
        Ok(JetArrow { t_src: self.t_tgt, t_tgt: self.t_src, p: inv })
    }
}

/// A curve of material isomorphisms along one remodeling leaf:
/// `p_samples[i]` is the arrow from `(grid[i], X)` to `(t_ref, X)`,
/// with `P(t_ref) = I` exactly.
#[derive(Debug, Clone)]
pub struct RemodelingProcess {
    pub t_ref: f64,
    pub grid: Vec<f64>,
    pub p_samples: Vec<Matrix3<f64>>,
    /// Canonical direction used at each grid instant (`lambda = 1`).
    pub theta_used: Vec<EvolutionTangent>,
    pub ref_index: usize,
}

impl RemodelingProcess {
    pub fn arrow_at(&self, i: usize) -> JetArrow {
        JetArrow { t_src: self.grid[i], t_tgt: self.t_ref, p: self.p_samples[i] }
    }

    pub fn spacing(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / (self.grid.len() as f64 - 1.0)
    }
}

/// One classical 4th-order step from `t_a` to `t_a + h` (h may be
/// negative); `theta` values at the two endpoints, linear interpolation
/// at the midpoint stage.
fn rk4_step(
    p: &Matrix3<f64>,
    h: f64,
    theta_a: &Matrix3<f64>,
    theta_b: &Matrix3<f64>,
) -> Matrix3<f64> {
    let theta_mid = 0.5 * (theta_a + theta_b);
    let k1 = p * theta_a;
    let k2 = (p + 0.5 * h * k1) * theta_mid;
    let k3 = (p + 0.5 * h * k2) * theta_mid;
    let k4 = (p + h * k3) * theta_b;
    p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

fn guard_step(t: f64, prev: &Matrix3<f64>, next: &Matrix3<f64>) -> Result<(), FlowError> {
    let det = next.determinant();
    if det.abs() < PROCESS_DET_MIN || det.signum() != prev.determinant().signum() {
        return Err(FlowError::NearSingular { t, det });
    }
    Ok(())
}

/// Integrates a remodeling process with a caller-chosen generator at
/// each grid instant; [`integrate_process`] passes the canonical
/// direction and is what ordinary callers want.
pub fn integrate_process_with(
    model: &ConstitutiveModel,
    leaf: &Leaf,
    t_ref: f64,
    step: f64,
    cfg: &SolverConfig,
    pick_direction: &dyn Fn(&FibreResult) -> Result<Matrix3<f64>, FlowError>,
) -> Result<RemodelingProcess, FlowError> {
    if leaf.kind != LeafKind::RemodelingInterval {
        return Err(FlowError::NotRemodeling);
    }
    if !(step > 0.0) {
        return Err(FlowError::Evolution(EvolutionError::InvalidConfig(
            "integration step must be positive".into(),
        )));
    }
    if t_ref < leaf.t_lo || t_ref > leaf.t_hi {
        return Err(FlowError::OutsideLeaf { t_ref, t_lo: leaf.t_lo, t_hi: leaf.t_hi });
    }

    let span = leaf.t_hi - leaf.t_lo;
    let n = ((span / step).round() as usize).max(1);
    let h = span / n as f64;
    let grid: Vec<f64> = (0..=n)
        .map(|i| if i == n { leaf.t_hi } else { leaf.t_lo + h * i as f64 })
        .collect();
    let ref_index = ((t_ref - leaf.t_lo) / h).round() as usize;
    let ref_index = ref_index.min(n);

    let thetas: Vec<Matrix3<f64>> = grid
        .iter()
        .map(|&t| {
            let fibre = evolution_fibre(model, t, cfg)?;
            pick_direction(&fibre)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut p_samples = vec![Matrix3::identity(); n + 1];
    for i in ref_index..n {
        let next = rk4_step(&p_samples[i], h, &thetas[i], &thetas[i + 1]);
        guard_step(grid[i + 1], &p_samples[i], &next)?;
        p_samples[i + 1] = next;
    }
    for i in (0..ref_index).rev() {
        let next = rk4_step(&p_samples[i + 1], -h, &thetas[i + 1], &thetas[i]);
        guard_step(grid[i], &p_samples[i + 1], &next)?;
        p_samples[i] = next;
    }

    let theta_used = thetas
        .into_iter()
        .map(|theta| EvolutionTangent::new(1.0, theta))
        .collect();
    Ok(RemodelingProcess { t_ref: grid[ref_index], grid, p_samples, theta_used, ref_index })
}

/// Integrates the canonical remodeling process on a leaf: the direction
/// with `lambda = 1`, orthogonal to the symmetry algebra, interpolated
/// linearly between grid samples, marched by classical RK4 with the
/// given step from `t_ref` (snapped to the nearest grid instant).
pub fn integrate_process(
    model: &ConstitutiveModel,
    leaf: &Leaf,
    t_ref: f64,
    step: f64,
    cfg: &SolverConfig,
) -> Result<RemodelingProcess, FlowError> {
    integrate_process_with(model, leaf, t_ref, step, cfg, &|fibre| {
        fibre
            .remodeling_direction
            .as_ref()
            .map(|d| d.theta)
            .ok_or(FlowError::MissingDirection(fibre.t))
    })
}

/// Largest relative defect of the material-isomorphism identity of a
/// single arrow over sampled frames:
/// `||W(t_src, F * P) - W(t_tgt, F)|| / (1 + ||W(t_tgt, F)||)`.
pub fn arrow_residual(
    model: &ConstitutiveModel,
    arrow: &JetArrow,
    n_frames: usize,
    seed: u64,
) -> Result<f64, FlowError> {
    let cfg = SolverConfig::default();
    let frames = sample_frames(n_frames, seed, &cfg);
    let mut worst = 0.0f64;
    for f in &frames {
        let lhs = model.evaluate(arrow.t_src, &(f * arrow.p))?;
        let rhs = model.evaluate(arrow.t_tgt, f)?;
        let mut diff = 0.0;
        let mut scale = 0.0;
        for (a, b) in lhs.iter().zip(&rhs) {
            diff += (a - b) * (a - b);
            scale += b * b;
        }
        worst = worst.max(diff.sqrt() / (1.0 + scale.sqrt()));
    }
    Ok(worst)
}

/// Maximum arrow residual of a process over its grid and sampled frames.
pub fn isomorphism_residual(
    model: &ConstitutiveModel,
    process: &RemodelingProcess,
    n_frames: usize,
    seed: u64,
) -> Result<f64, FlowError> {
    let cfg = SolverConfig::default();
    let frames = sample_frames(n_frames, seed, &cfg);
    let mut reference = Vec::with_capacity(frames.len());
    for f in &frames {
        reference.push(model.evaluate(process.t_ref, f)?);
    }
    let mut worst = 0.0f64;
    for (i, &t) in process.grid.iter().enumerate() {
        let p = &process.p_samples[i];
        for (f, rhs) in frames.iter().zip(&reference) {
            let lhs = model.evaluate(t, &(f * p))?;
            let mut diff = 0.0;
            let mut scale = 0.0;
            for (a, b) in lhs.iter().zip(rhs) {
                diff += (a - b) * (a - b);
                scale += b * b;
            }
            worst = worst.max(diff.sqrt() / (1.0 + scale.sqrt()));
        }
    }
    Ok(worst)
}

/// Conjugates a symmetry-algebra basis along an arrow: a symmetry
/// `Theta` at the arrow's source is carried to `P * Theta * P^-1` at its
/// target.
pub fn conjugate_symmetry(
    basis: &[EvolutionTangent],
    arrow: &JetArrow,
) -> Result<Vec<EvolutionTangent>, FlowError> {
    if basis.iter().any(|b| b.lambda != 0.0) {
        return Err(FlowError::NotSymmetry);
    }
    if crate::expr::near_singular(&arrow.p) {
        return Err(FlowError::SingularArrow(arrow.p.determinant()));
    }
    let inv = arrow.p.try_inverse().ok_or(FlowError::SingularArrow(0.0))?;
    Ok(basis
        .iter()
        .map(|b| EvolutionTangent::new(0.0, arrow.p * b.theta * inv))
        .collect())
}

/// Groupoid cocycle defect of the integrated flow: for deterministic
/// triples `z < r < t` inside the leaf, compares the directly integrated
/// arrow `z -> t` with the composition through `r` (each sub-interval
/// integrated as its own process) and returns the largest max-norm
/// difference.
pub fn cocycle_check(
    model: &ConstitutiveModel,
    leaf: &Leaf,
    step: f64,
    cfg: &SolverConfig,
) -> Result<f64, FlowError> {
    if leaf.kind != LeafKind::RemodelingInterval {
        return Err(FlowError::NotRemodeling);
    }
    let span = leaf.t_hi - leaf.t_lo;
    let quantiles = [0.1, 0.3, 0.5, 0.7, 0.9];
    let points: Vec<f64> = quantiles.iter().map(|q| leaf.t_lo + q * span).collect();

    let arrow_from_to = |a: f64, b: f64| -> Result<Matrix3<f64>, FlowError> {
        // Arrow from a to b: integrate on [a, b] with reference b and
        // sample at the left end.
        let sub = Leaf::remodeling_interval(a, b);
        let process = integrate_process(model, &sub, b, step, cfg)?;
        Ok(process.p_samples[0])
    };

    let mut worst = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            for k in (j + 1)..points.len() {
                let (z, r, t) = (points[i], points[j], points[k]);
                let direct = arrow_from_to(z, t)?;
                let via = arrow_from_to(r, t)? * arrow_from_to(z, r)?;
                let defect = (direct - via).abs().max();
                worst = worst.max(defect);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{exp_decay, isotropic, liquid_crystal_mu};

    fn max_norm(m: &Matrix3<f64>) -> f64 {
        m.abs().max()
    }

    #[test]
    fn groupoid_axioms() {
        let a = JetArrow::new(1.0, 2.0, Matrix3::new(1.0, 0.2, 0.0, 0.0, 0.9, 0.1, 0.3, 0.0, 1.1))
            .unwrap();
        let b = JetArrow::new(0.0, 1.0, Matrix3::new(0.8, 0.0, 0.1, 0.2, 1.2, 0.0, 0.0, 0.1, 0.9))
            .unwrap();
        let c = JetArrow::new(-1.0, 0.0, Matrix3::new(1.1, 0.1, 0.0, 0.0, 1.0, 0.2, 0.1, 0.0, 0.8))
            .unwrap();

        // Source/target bookkeeping of the composition law.
        let ab = a.compose(&b).unwrap();
        assert_eq!((ab.t_src, ab.t_tgt), (0.0, 2.0));
        assert_eq!(ab.p, a.p * b.p);

        // Associativity to rounding.
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        assert!(max_norm(&(left.p - right.p)) < 1e-12);

        // Identities and inverses.
        let id = JetArrow::identity(a.t_src);
        assert!(max_norm(&(a.compose(&id).unwrap().p - a.p)) == 0.0);
        let inv = a.invert().unwrap();
        let round = a.compose(&inv).unwrap();
        assert!(instants_match(round.t_src, a.t_tgt) && instants_match(round.t_tgt, a.t_tgt));
        assert!(max_norm(&(round.p - Matrix3::identity())) < 1e-12);

        // Mismatched instants refuse to compose.
        assert!(b.compose(&a).is_err());
    }

    #[test]
    fn exponential_decay_has_closed_form_flow() {
        let model = exp_decay();
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        let cfg = SolverConfig::default();
        let process = integrate_process(&model, &leaf, 0.0, 0.015, &cfg).unwrap();
        assert_eq!(process.t_ref, 0.0);
        let mut worst = 0.0f64;
        for (i, &t) in process.grid.iter().enumerate() {
            let exact = Matrix3::identity() * (t / 3.0).exp();
            worst = worst.max(max_norm(&(process.p_samples[i] - exact)));
        }
        assert!(worst <= 1e-8, "max deviation {worst}");

        let residual = isomorphism_residual(&model, &process, 20, 7).unwrap();
        assert!(residual <= 1e-8, "residual {residual}");
    }

    #[test]
    fn zero_generator_yields_identity_process() {
        let model = liquid_crystal_mu("1").unwrap();
        let leaf = Leaf::remodeling_interval(0.0, 2.0);
        let process =
            integrate_process(&model, &leaf, 0.0, 0.02, &SolverConfig::default()).unwrap();
        for p in &process.p_samples {
            assert!(max_norm(&(p - Matrix3::identity())) < 1e-10);
        }
    }

    #[test]
    fn time_reversal_returns_to_identity() {
        let model = exp_decay();
        let cfg = SolverConfig::default();
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        let forward = integrate_process(&model, &leaf, 0.0, 0.015, &cfg).unwrap();
        let backward = integrate_process(&model, &leaf, 3.0, 0.015, &cfg).unwrap();
        // Arrow 3 -> 0 composed with arrow 0 -> 3.
        let there = forward.arrow_at(forward.grid.len() - 1);
        let back = backward.arrow_at(0);
        let round = back.compose(&there).unwrap();
        assert!(max_norm(&(round.p - Matrix3::identity())) <= 1e-8);
    }

    #[test]
    fn corrupted_process_is_detected() {
        let model = exp_decay();
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        let cfg = SolverConfig::default();
        let mut process = integrate_process(&model, &leaf, 0.0, 0.015, &cfg).unwrap();
        for p in &mut process.p_samples {
            *p *= 1.01;
        }
        let residual = isomorphism_residual(&model, &process, 20, 7).unwrap();
        // det scaling cubes the factor: 1.01^3 - 1 is about 3e-2.
        assert!(residual > 0.02 && residual < 0.05, "residual {residual}");
    }

    #[test]
    fn integrating_outside_a_remodeling_leaf_fails() {
        let model = exp_decay();
        let aging = Leaf::aging_instant(1.0);
        let cfg = SolverConfig::default();
        assert!(matches!(
            integrate_process(&model, &aging, 1.0, 0.015, &cfg),
            Err(FlowError::NotRemodeling)
        ));
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        assert!(matches!(
            integrate_process(&model, &leaf, 5.0, 0.015, &cfg),
            Err(FlowError::OutsideLeaf { .. })
        ));
    }

    #[test]
    fn aging_model_has_no_direction_to_integrate() {
        let model = liquid_crystal_mu("1 + t").unwrap();
        let fake_leaf = Leaf::remodeling_interval(0.0, 1.0);
        assert!(matches!(
            integrate_process(&model, &fake_leaf, 0.0, 0.05, &SolverConfig::default()),
            Err(FlowError::MissingDirection(_))
        ));
    }

    #[test]
    fn identity_arrow_conjugation_is_trivial() {
        let model = isotropic();
        let fibre = evolution_fibre(&model, 0.0, &SolverConfig::default()).unwrap();
        let out =
            conjugate_symmetry(&fibre.symmetry_basis, &JetArrow::identity(0.0)).unwrap();
        for (a, b) in out.iter().zip(&fibre.symmetry_basis) {
            assert!(max_norm(&(a.theta - b.theta)) < 1e-14);
        }
    }

    #[test]
    fn rotation_preserves_antisymmetry() {
        let model = isotropic();
        let fibre = evolution_fibre(&model, 0.0, &SolverConfig::default()).unwrap();
        let (s, c) = 0.7f64.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let arrow = JetArrow::new(0.0, 0.0, rot).unwrap();
        for tangent in conjugate_symmetry(&fibre.symmetry_basis, &arrow).unwrap() {
            assert!(max_norm(&(tangent.theta + tangent.theta.transpose())) < 1e-7);
        }
    }

    #[test]
    fn conjugated_basis_satisfies_target_system() {
        use crate::evolution::{assemble_system, null_space, relative_residual};
        let model = liquid_crystal_mu("1").unwrap();
        let cfg = SolverConfig::default();
        let leaf = Leaf::remodeling_interval(0.0, 2.0);
        let process = integrate_process(&model, &leaf, 0.0, 0.02, &cfg).unwrap();
        let idx = process.grid.len() - 1;
        let arrow = process.arrow_at(idx).invert().unwrap(); // t_ref -> t

        let src = evolution_fibre(&model, arrow.t_src, &cfg).unwrap();
        let conjugated = conjugate_symmetry(&src.symmetry_basis, &arrow).unwrap();

        let frames = sample_frames(40, cfg.seed, &cfg);
        let a = assemble_system(&model, arrow.t_tgt, &frames).unwrap();
        let sigma_max = null_space(&a, cfg.rank_tol_rel).1[0];
        for tangent in &conjugated {
            assert!(relative_residual(&a, sigma_max, &tangent.to_vec10()) <= 1e-6);
        }
    }

    #[test]
    fn cocycle_defect_small_for_commuting_flows() {
        let cfg = SolverConfig::default();
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        let defect = cocycle_check(&exp_decay(), &leaf, 0.015, &cfg).unwrap();
        assert!(defect <= 1e-8, "defect {defect}");

        let lc_leaf = Leaf::remodeling_interval(0.0, 2.0);
        let defect =
            cocycle_check(&liquid_crystal_mu("1").unwrap(), &lc_leaf, 0.02, &cfg).unwrap();
        assert!(defect <= 1e-10);
    }

    #[test]
    fn closed_form_error_shrinks_at_fourth_order() {
        let model = exp_decay();
        let leaf = Leaf::remodeling_interval(0.0, 3.0);
        let cfg = SolverConfig::default();
        let err_at = |step: f64| -> f64 {
            let process = integrate_process(&model, &leaf, 0.0, step, &cfg).unwrap();
            process
                .grid
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    max_norm(&(process.p_samples[i] - Matrix3::identity() * (t / 3.0).exp()))
                })
                .fold(0.0, f64::max)
        };
        let coarse = err_at(0.03);
        let fine = err_at(0.015);
        assert!(
            coarse >= 8.0 * fine,
            "expected 4th-order reduction, got {coarse:e} -> {fine:e}"
        );
    }

    #[test]
    fn process_freedom_differs_by_a_symmetry() {
        // Two processes on the same leaf with the same reference differ
        // by a time-material symmetry at each instant.
        let model = exp_decay();
        let leaf = Leaf::remodeling_interval(0.0, 1.5);
        let cfg = SolverConfig::default();
        let canonical = integrate_process(&model, &leaf, 0.0, 0.015, &cfg).unwrap();
        let skewed = integrate_process_with(&model, &leaf, 0.0, 0.015, &cfg, &|fibre| {
            let base = fibre
                .remodeling_direction
                .as_ref()
                .ok_or(FlowError::MissingDirection(fibre.t))?
                .theta;
            Ok(base + 0.2 * fibre.symmetry_basis[0].theta)
        })
        .unwrap();

        for i in [canonical.grid.len() / 2, canonical.grid.len() - 1] {
            let t = canonical.grid[i];
            let q = &skewed.p_samples[i];
            let p_inv = canonical.p_samples[i].try_inverse().unwrap();
            let arrow = JetArrow::new(t, t, q * p_inv).unwrap();
            let residual = arrow_residual(&model, &arrow, 20, 5).unwrap();
            assert!(residual <= 1e-6, "symmetry residual {residual} at t = {t}");
        }
    }
}
