//! Per-instant null-space analysis of the evolution equation.
//!
//! At a fixed instant `t` the unknowns are the pair `(lambda, Theta)`
//! in R x gl(3), a 10-dimensional coordinate vector. Sampling frames
//! `F_k` turns the quantifier "for all F" into a finite linear system
//! whose rows are
//!
//! ```text
//!   lambda * dW_c/dt(t, F_k)  +  sum_{l,j} (F_k^T D_c)_{l,j} Theta_{l,j} = 0,
//!   D_c[i][j] = dW_c/dF_{i,j}(t, F_k),
//! ```
//!
//! one row per frame and component. The numerical null space of that
//! system is split into the remodeling direction (the solution carrying
//! `lambda`, normalized to `lambda = 1`) and the time-material symmetry
//! algebra (solutions with `lambda = 0`).
//!
//! Column ordering is part of the contract: column 0 is `lambda` and
//! column `1 + 3*l + j` is `Theta[l][j]` (row-major, 0-based).

use nalgebra::{DMatrix, Matrix3, SVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::EvalError;
use crate::model::ConstitutiveModel;

/// Coordinates of one solution of the evolution equation at an instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionTangent {
    pub lambda: f64,
    pub theta: Matrix3<f64>,
}

pub type Vec10 = SVector<f64, 10>;

impl EvolutionTangent {
    pub fn new(lambda: f64, theta: Matrix3<f64>) -> Self {
        EvolutionTangent { lambda, theta }
    }

    pub fn from_vec10(v: &Vec10) -> Self {
        let mut theta = Matrix3::zeros();
        for l in 0..3 {
            for j in 0..3 {
                theta[(l, j)] = v[1 + 3 * l + j];
            }
        }
        EvolutionTangent { lambda: v[0], theta }
    }

    pub fn to_vec10(&self) -> Vec10 {
        let mut v = Vec10::zeros();
        v[0] = self.lambda;
        for l in 0..3 {
            for j in 0..3 {
                v[1 + 3 * l + j] = self.theta[(l, j)];
            }
        }
        v
    }
}

/// Tunable parameters of the per-instant solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Frames in the first sampling round.
    pub n_samples_initial: usize,
    /// Cap on frames per round; the round size doubles until the null
    /// dimension repeats or this cap is reached.
    pub n_samples_max: usize,
    /// Singular values below `rank_tol_rel * sigma_max` count as zero.
    pub rank_tol_rel: f64,
    /// Acceptance threshold for basis residuals `||A v|| / sigma_max`.
    pub residual_tol: f64,
    /// Seed of the deterministic frame sampler.
    pub seed: u64,
    /// Sampled frames keep `|det F|` at or above this bound.
    pub frame_det_min: f64,
    /// Sampled frames keep their condition number at or below this bound.
    pub frame_cond_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_samples_initial: 20,
            n_samples_max: 320,
            rank_tol_rel: 1e-9,
            residual_tol: 1e-8,
            seed: 42,
            frame_det_min: 0.1,
            frame_cond_max: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, m: usize) -> Result<(), EvolutionError> {
        if !(self.rank_tol_rel > 0.0 && self.rank_tol_rel < 1.0) {
            return Err(EvolutionError::InvalidConfig(format!(
                "rank_tol_rel must lie in (0, 1), got {}",
                self.rank_tol_rel
            )));
        }
        if self.n_samples_initial * m < 10 {
            return Err(EvolutionError::InvalidConfig(format!(
                "n_samples_initial * m must be at least 10, got {} * {m}",
                self.n_samples_initial
            )));
        }
        if self.n_samples_initial < STRUCTURED_FRAMES {
            return Err(EvolutionError::InvalidConfig(format!(
                "n_samples_initial must be at least {STRUCTURED_FRAMES}"
            )));
        }
        if self.n_samples_max < self.n_samples_initial {
            return Err(EvolutionError::InvalidConfig(
                "n_samples_max must be at least n_samples_initial".into(),
            ));
        }
        Ok(())
    }
}

/// Null-space analysis of one instant.
#[derive(Debug, Clone)]
pub struct FibreResult {
    pub t: f64,
    /// Dimension of the pointwise null space (0..=10).
    pub pointwise_dim: usize,
    /// Dimension of the projection onto the time axis: 0 or 1.
    pub sharp_dim: usize,
    /// Present exactly when `sharp_dim == 1`; `lambda` normalized to 1
    /// and `Theta` orthogonal (Frobenius) to the symmetry algebra.
    pub remodeling_direction: Option<EvolutionTangent>,
    /// Orthonormal basis of the symmetry algebra; `lambda = 0` exactly.
    pub symmetry_basis: Vec<EvolutionTangent>,
    /// All 10 singular values of the final assembled system, descending.
    pub singular_values: Vec<f64>,
    /// Frames used in the final sampling round.
    pub samples_used: usize,
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "null-space dimension did not stabilize at t = {t}: \
         {prev_dim} then {last_dim} with {samples_used} frames"
    )]
    NonConvergent { t: f64, prev_dim: usize, last_dim: usize, samples_used: usize },
    #[error("instant t = {0} lies outside the model's time domain")]
    OutOfDomain(f64),
    #[error("non-finite system entry at t = {0}; check the model's domain")]
    NonFinite(f64),
}

const STRUCTURED_FRAMES: usize = 5;

fn structured_frames() -> [Matrix3<f64>; STRUCTURED_FRAMES] {
    let (s, c) = 0.3f64.sin_cos();
    [
        Matrix3::identity(),
        Matrix3::from_diagonal(&nalgebra::Vector3::new(2.0, 1.0, 1.0)),
        Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 2.0)),
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        Matrix3::identity() + Matrix3::repeat(0.1),
    ]
}

fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..3 {
        lo = lo.min(sv[i]);
        hi = hi.max(sv[i]);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Deterministically samples `n` invertible, well-conditioned frames.
/// The list always begins with the structured set {I, diag(2,1,1),
/// diag(1,1,2), a 0.3 rad rotation about z, I + 0.1 * ones}; the rest is
/// rejection-sampled from entrywise uniform [-1, 1].
pub fn sample_frames(n: usize, seed: u64, cfg: &SolverConfig) -> Vec<Matrix3<f64>> {
    let mut frames = Vec::with_capacity(n);
    for f in structured_frames().into_iter().take(n) {
        frames.push(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while frames.len() < n {
        let mut m: Matrix3<f64> = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = rng.gen_range(-1.0..1.0);
            }
        }
        if m.determinant().abs() >= cfg.frame_det_min
            && condition_number(&m) <= cfg.frame_cond_max
        {
            frames.push(m);
        }
    }
    frames
}

/// Assembles the evolution equation at instant `t` over the given frames
/// into an `(n * m) x 10` coefficient matrix.
pub fn assemble_system(
    model: &ConstitutiveModel,
    t: f64,
    frames: &[Matrix3<f64>],
) -> Result<DMatrix<f64>, EvolutionError> {
    let m = model.m();
    let mut a = DMatrix::zeros(frames.len() * m, 10);
    for (k, frame) in frames.iter().enumerate() {
        let ddt = model.d_dt(t, frame)?;
        // D_c[i][j] = dW_c/dF_ij, one elementary direction at a time.
        let mut d_mats = vec![Matrix3::zeros(); m];
        for i in 0..3 {
            for j in 0..3 {
                let mut e = Matrix3::zeros();
                e[(i, j)] = 1.0;
                let dd = model.d_df(t, frame, &e)?;
                for (c, val) in dd.iter().enumerate() {
                    d_mats[c][(i, j)] = *val;
                }
            }
        }
        for c in 0..m {
            let row = k * m + c;
            a[(row, 0)] = ddt[c];
            let coef = frame.transpose() * d_mats[c];
            for l in 0..3 {
                for j in 0..3 {
                    a[(row, 1 + 3 * l + j)] = coef[(l, j)];
                }
            }
        }
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(EvolutionError::NonFinite(t));
    }
    Ok(a)
}

/// Orthonormal basis of the numerical null space of `A` together with
/// all 10 singular values (descending). The numerical rank counts
/// singular values above `rank_tol_rel * sigma_max` (rank 0 when
/// `sigma_max == 0`).
pub fn null_space(a: &DMatrix<f64>, rank_tol_rel: f64) -> (Vec<Vec10>, Vec<f64>) {
    // Padding with zero rows changes neither the singular values nor the
    // null space but guarantees a full set of right-singular vectors.
    let padded;
    let a = if a.nrows() < 10 {
        padded = {
            let mut p = DMatrix::zeros(10, 10);
            p.view_mut((0, 0), (a.nrows(), 10)).copy_from(a);
            p
        };
        &padded
    } else {
        a
    };

    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("SVD with v requested");
    let raw = &svd.singular_values;

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&i, &j| raw[j].partial_cmp(&raw[i]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let sigma_max = sv[0];

    if sigma_max == 0.0 {
        let basis = (0..10)
            .map(|i| {
                let mut v = Vec10::zeros();
                v[i] = 1.0;
                v
            })
            .collect();
        return (basis, vec![0.0; 10]);
    }

    let rank = sv.iter().filter(|&&s| s > rank_tol_rel * sigma_max).count();
    let basis = order[rank..]
        .iter()
        .map(|&i| {
            let mut v = Vec10::zeros();
            for c in 0..10 {
                v[c] = v_t[(i, c)];
            }
            v
        })
        .collect();
    (basis, sv)
}

/// Relative residual `||A v|| / (sigma_max ||v||)` of a candidate null
/// vector.
pub fn relative_residual(a: &DMatrix<f64>, sigma_max: f64, v: &Vec10) -> f64 {
    if sigma_max == 0.0 {
        return 0.0;
    }
    let av = a * v;
    av.norm() / (sigma_max * v.norm())
}

/// Modified Gram-Schmidt; vectors that collapse below `1e-12` are
/// dropped (they were linearly dependent on earlier ones).
fn orthonormalize(vectors: &mut Vec<Vec10>) {
    let mut out: Vec<Vec10> = Vec::with_capacity(vectors.len());
    for mut v in vectors.drain(..) {
        for q in &out {
            let proj = v.dot(q);
            v -= *q * proj;
        }
        let n = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    *vectors = out;
}

/// Splits an orthonormal null basis into the lambda-carrying remodeling
/// direction (if any) and the lambda = 0 symmetry algebra.
fn split_basis(
    basis: &[Vec10],
    rank_tol_rel: f64,
) -> (Option<EvolutionTangent>, Vec<EvolutionTangent>) {
    if basis.is_empty() {
        return (None, Vec::new());
    }
    let pivot = basis
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a[0].abs().partial_cmp(&b[0].abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let lambda_max = basis[pivot][0].abs();

    if lambda_max <= rank_tol_rel {
        // No solution reaches the time axis: zero the (tiny) lambda
        // components exactly and re-orthonormalize.
        let mut sym: Vec<Vec10> = basis
            .iter()
            .map(|v| {
                let mut w = *v;
                w[0] = 0.0;
                w
            })
            .collect();
        orthonormalize(&mut sym);
        let sym = sym
            .iter()
            .map(|v| {
                let mut tangent = EvolutionTangent::from_vec10(v);
                tangent.lambda = 0.0;
                tangent
            })
            .collect();
        return (None, sym);
    }

    let mut direction = basis[pivot] / basis[pivot][0];
    let mut sym: Vec<Vec10> = basis
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != pivot)
        .map(|(_, v)| {
            let mut w = *v - direction * v[0];
            w[0] = 0.0;
            w
        })
        .collect();
    orthonormalize(&mut sym);

    // Canonical representative: Theta orthogonal to the symmetry span.
    // Symmetry vectors carry lambda = 0, so lambda stays exactly 1.
    for q in &sym {
        let proj = direction.dot(q);
        direction -= *q * proj;
    }
    direction[0] = 1.0;

    let sym = sym
        .iter()
        .map(|v| {
            let mut tangent = EvolutionTangent::from_vec10(v);
            tangent.lambda = 0.0;
            tangent
        })
        .collect();
    (Some(EvolutionTangent::from_vec10(&direction)), sym)
}

fn build_result(
    t: f64,
    basis: &[Vec10],
    sv: Vec<f64>,
    samples_used: usize,
    rank_tol_rel: f64,
) -> FibreResult {
    let (direction, symmetry) = split_basis(basis, rank_tol_rel);
    let sharp_dim = usize::from(direction.is_some());
    FibreResult {
        t,
        pointwise_dim: basis.len(),
        sharp_dim,
        remodeling_direction: direction,
        symmetry_basis: symmetry,
        singular_values: sv,
        samples_used,
    }
}

/// Runs the doubling rounds; the second tuple slot is `Some(prev_dim)`
/// when the dimension was still changing at the sample cap.
fn fibre_rounds(
    model: &ConstitutiveModel,
    t: f64,
    cfg: &SolverConfig,
) -> Result<(FibreResult, Option<usize>), EvolutionError> {
    cfg.validate(model.m())?;
    if !model.contains_time(t) {
        return Err(EvolutionError::OutOfDomain(t));
    }

    let mut n = cfg.n_samples_initial.min(cfg.n_samples_max);
    let mut round: u64 = 0;
    let mut prev: Option<usize> = None;
    loop {
        let frames = sample_frames(n, cfg.seed.wrapping_add(round), cfg);
        let a = assemble_system(model, t, &frames)?;
        let (basis, sv) = null_space(&a, cfg.rank_tol_rel);
        let dim = basis.len();

        match prev {
            Some(prev_dim) if prev_dim == dim => {
                return Ok((build_result(t, &basis, sv, n, cfg.rank_tol_rel), None));
            }
            Some(prev_dim) if n >= cfg.n_samples_max => {
                return Ok((build_result(t, &basis, sv, n, cfg.rank_tol_rel), Some(prev_dim)));
            }
            None if n >= cfg.n_samples_max => {
                // Only one round fits under the cap; accept it.
                return Ok((build_result(t, &basis, sv, n, cfg.rank_tol_rel), None));
            }
            _ => {}
        }
        prev = Some(dim);
        n = (n * 2).min(cfg.n_samples_max);
        round += 1;
    }
}

/// Seed of the sampling round that ended with `samples_used` frames;
/// lets callers re-create the final assembled system exactly.
pub fn round_seed(cfg: &SolverConfig, samples_used: usize) -> u64 {
    let mut n = cfg.n_samples_initial.min(cfg.n_samples_max);
    let mut round: u64 = 0;
    while n < samples_used {
        n = (n * 2).min(cfg.n_samples_max);
        round += 1;
    }
    cfg.seed.wrapping_add(round)
}

/// Computes the fibre at `t`, doubling the sampling round (with a fresh
/// seed per round) until the null dimension repeats across two
/// consecutive rounds or the sample cap is reached; the second outcome
/// with a still-changing dimension is reported as non-convergent.
pub fn evolution_fibre(
    model: &ConstitutiveModel,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FibreResult, EvolutionError> {
    let (result, unstable) = fibre_rounds(model, t, cfg)?;
    if let Some(prev_dim) = unstable {
        return Err(EvolutionError::NonConvergent {
            t,
            prev_dim,
            last_dim: result.pointwise_dim,
            samples_used: result.samples_used,
        });
    }
    Ok(result)
}

/// Like [`evolution_fibre`] but reports non-convergence through the
/// returned flag instead of failing, so grid sweeps can record the
/// instant and continue.
pub fn evolution_fibre_relaxed(
    model: &ConstitutiveModel,
    t: f64,
    cfg: &SolverConfig,
) -> Result<(FibreResult, bool), EvolutionError> {
    let (result, unstable) = fibre_rounds(model, t, cfg)?;
    Ok((result, unstable.is_none()))
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::model::{
        det_only, exp_decay, isotropic, liquid_crystal, liquid_crystal_mu, FixedParticleContext,
    };

    fn dims(model: &ConstitutiveModel, t: f64) -> (usize, usize, usize) {
        let f = evolution_fibre(model, t, &SolverConfig::default()).unwrap();
        (f.pointwise_dim, f.sharp_dim, f.symmetry_basis.len())
    }

    #[test]
    fn structured_prefix_and_determinism() {
        let cfg = SolverConfig::default();
        let five = sample_frames(5, 123, &cfg);
        assert_eq!(five, structured_frames().to_vec());
        assert_eq!(sample_frames(20, 7, &cfg), sample_frames(20, 7, &cfg));
        for f in sample_frames(64, 3, &cfg) {
            assert!(f.determinant().abs() >= cfg.frame_det_min);
            assert!(condition_number(&f) <= cfg.frame_cond_max);
        }
    }

    #[test]
    fn assembled_rows_match_closed_forms() {
        let t = 0.0;
        let id = [Matrix3::identity()];

        let a = assemble_system(&det_only(), t, &id).unwrap();
        let expected = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (c, e) in expected.iter().enumerate() {
            assert!((a[(0, c)] - e).abs() < 1e-14);
        }

        let a = assemble_system(&exp_decay(), t, &id).unwrap();
        assert!((a[(0, 0)] + 1.0).abs() < 1e-14);
        assert!((a[(0, 1)] - 1.0).abs() < 1e-14);

        let lc = liquid_crystal_mu("1").unwrap();
        let a = assemble_system(&lc, t, &id).unwrap();
        let expected_r = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        for (c, e) in expected_r.iter().enumerate() {
            assert!((a[(0, c)] - e).abs() < 1e-14, "col {c}: {}", a[(0, c)]);
        }
    }

    #[test]
    fn null_space_of_single_row() {
        let mut a = DMatrix::zeros(1, 10);
        a[(0, 1)] = 1.0;
        let (basis, sv) = null_space(&a, 1e-9);
        assert_eq!(basis.len(), 9);
        assert!((sv[0] - 1.0).abs() < 1e-15);
        for v in &basis {
            assert!(v[1].abs() < 1e-14);
        }
    }

    #[test]
    fn null_space_of_zero_matrix() {
        let a = DMatrix::zeros(12, 10);
        let (basis, sv) = null_space(&a, 1e-9);
        assert_eq!(basis.len(), 10);
        assert!(sv.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn null_space_recovers_planted_kernel() {
        // Build A = B * Q^T where Q spans the orthogonal complement of a
        // known 3-dimensional kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let random = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0f64..1.0));
        let q_full = random.qr().q();
        let kernel = q_full.columns(0, 3).into_owned();
        let complement = q_full.columns(3, 7).into_owned();
        let b = DMatrix::from_fn(20, 7, |_, _| rng.gen_range(-1.0f64..1.0));
        let a = &b * complement.transpose();

        let (basis, _) = null_space(&a, 1e-9);
        assert_eq!(basis.len(), 3);
        // Principal angles between recovered and planted subspaces.
        let mut rec = DMatrix::zeros(10, 3);
        for (j, v) in basis.iter().enumerate() {
            for i in 0..10 {
                rec[(i, j)] = v[i];
            }
        }
        let cross = kernel.transpose() * rec;
        let svd = cross.svd(false, false);
        for i in 0..3 {
            let cos = svd.singular_values[i].clamp(-1.0, 1.0);
            assert!(cos.acos() < 1e-10);
        }
    }

    #[test]
    fn volume_model_dimensions() {
        assert_eq!(dims(&det_only(), 0.0), (9, 1, 8));
        // Symmetry algebra is trace-free.
        let f = evolution_fibre(&det_only(), 0.0, &SolverConfig::default()).unwrap();
        for s in &f.symmetry_basis {
            assert!(s.theta.trace().abs() < 1e-8);
            assert_eq!(s.lambda, 0.0);
        }
    }

    #[test]
    fn isotropic_model_dimensions() {
        assert_eq!(dims(&isotropic(), 0.0), (4, 1, 3));
        let f = evolution_fibre(&isotropic(), 0.0, &SolverConfig::default()).unwrap();
        for s in &f.symmetry_basis {
            assert!((s.theta + s.theta.transpose()).norm() < 1e-7);
        }
    }

    #[test]
    fn liquid_crystal_aging_dimensions() {
        let lc = liquid_crystal_mu("1 + t").unwrap();
        assert_eq!(dims(&lc, 0.0), (5, 0, 5));
        let f = evolution_fibre(&lc, 0.0, &SolverConfig::default()).unwrap();
        let e = Vector3::new(0.0, 0.0, 1.0);
        for s in &f.symmetry_basis {
            assert!((s.theta * e).norm() < 1e-7);
            assert!(s.theta.trace().abs() < 1e-7);
        }
    }

    #[test]
    fn liquid_crystal_remodeling_dimensions() {
        let lc = liquid_crystal_mu("1").unwrap();
        assert_eq!(dims(&lc, 4.2), (6, 1, 5));
    }

    #[test]
    fn exp_decay_direction_is_third_identity() {
        let f = evolution_fibre(&exp_decay(), 1.0, &SolverConfig::default()).unwrap();
        assert_eq!((f.pointwise_dim, f.sharp_dim), (9, 1));
        let dir = f.remodeling_direction.unwrap();
        assert_eq!(dir.lambda, 1.0);
        assert!((dir.theta - Matrix3::identity() / 3.0).norm() < 1e-8);
    }

    #[test]
    fn constant_response_is_fully_degenerate() {
        let m = ConstitutiveModel::from_sources("const", &["2.5"], Default::default()).unwrap();
        assert_eq!(dims(&m, 0.0), (10, 1, 9));
    }

    #[test]
    fn origin_particle_keeps_a_direction_under_monotone_mu() {
        // With c = 0 the constant term of the grain component vanishes
        // and a lambda-carrying solution survives even though mu is
        // strictly monotone.
        let ctx = FixedParticleContext {
            c: 0.0,
            ..FixedParticleContext::standard("1 + t").unwrap()
        };
        let lc = liquid_crystal(&ctx).unwrap();
        let f = evolution_fibre(&lc, 0.5, &SolverConfig::default()).unwrap();
        assert_eq!(f.sharp_dim, 1);
    }

    #[test]
    fn residuals_respect_tolerance() {
        let cfg = SolverConfig::default();
        for model in [det_only(), isotropic(), exp_decay(), liquid_crystal_mu("1 + t").unwrap()] {
            let fibre = evolution_fibre(&model, 0.7, &cfg).unwrap();
            let seed = round_seed(&cfg, fibre.samples_used);
            let frames = sample_frames(fibre.samples_used, seed, &cfg);
            let a = assemble_system(&model, 0.7, &frames).unwrap();
            let sigma_max = fibre.singular_values[0];
            if let Some(d) = &fibre.remodeling_direction {
                assert!(relative_residual(&a, sigma_max, &d.to_vec10()) <= cfg.residual_tol);
            }
            for s in &fibre.symmetry_basis {
                assert!(relative_residual(&a, sigma_max, &s.to_vec10()) <= cfg.residual_tol);
            }
        }
    }

    #[test]
    fn dimension_is_seed_stable() {
        let lc = liquid_crystal_mu("1 + t").unwrap();
        let base = dims(&lc, 1.3);
        for seed in 1..=5 {
            let cfg = SolverConfig::default().with_seed(seed);
            let f = evolution_fibre(&lc, 1.3, &cfg).unwrap();
            assert_eq!((f.pointwise_dim, f.sharp_dim, f.symmetry_basis.len()), base);
        }
    }

    #[test]
    fn adding_frames_never_increases_dimension() {
        let cfg = SolverConfig::default();
        for model in [det_only(), isotropic(), liquid_crystal_mu("1").unwrap()] {
            let big = sample_frames(40, 11, &cfg);
            let small = &big[..20];
            let dim_small = null_space(
                &assemble_system(&model, 0.4, small).unwrap(),
                cfg.rank_tol_rel,
            )
            .0
            .len();
            let dim_big = null_space(
                &assemble_system(&model, 0.4, &big).unwrap(),
                cfg.rank_tol_rel,
            )
            .0
            .len();
            assert!(dim_big <= dim_small);
        }
    }

    #[test]
    fn covariance_under_change_of_reference() {
        let cfg = SolverConfig::default();
        let model = isotropic();
        let c = Matrix3::new(1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.0, 0.1, 1.1);
        let moved = model.change_reference(&c).unwrap();

        let fibre = evolution_fibre(&model, 0.0, &cfg).unwrap();
        let moved_fibre = evolution_fibre(&moved, 0.0, &cfg).unwrap();
        assert_eq!(fibre.pointwise_dim, moved_fibre.pointwise_dim);
        assert_eq!(fibre.sharp_dim, moved_fibre.sharp_dim);

        let frames = sample_frames(40, cfg.seed, &cfg);
        let a = assemble_system(&moved, 0.0, &frames).unwrap();
        let sigma_max = null_space(&a, cfg.rank_tol_rel).1[0];
        let c_inv = c.try_inverse().unwrap();
        for s in &fibre.symmetry_basis {
            let conj = EvolutionTangent::new(s.lambda, c * s.theta * c_inv);
            assert!(relative_residual(&a, sigma_max, &conj.to_vec10()) <= 1e-8);
        }
    }

    #[test]
    fn symmetry_commutators_stay_in_the_algebra() {
        let cfg = SolverConfig::default();
        for model in [isotropic(), liquid_crystal_mu("1 + t").unwrap()] {
            let fibre = evolution_fibre(&model, 0.9, &cfg).unwrap();
            let seed = round_seed(&cfg, fibre.samples_used);
            let frames = sample_frames(fibre.samples_used, seed, &cfg);
            let a = assemble_system(&model, 0.9, &frames).unwrap();
            let sigma_max = fibre.singular_values[0];
            let basis = &fibre.symmetry_basis;
            for x in basis {
                for y in basis {
                    let comm = x.theta * y.theta - y.theta * x.theta;
                    if comm.norm() < 1e-12 {
                        continue;
                    }
                    let v = EvolutionTangent::new(0.0, comm).to_vec10();
                    assert!(relative_residual(&a, sigma_max, &v) <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let m = det_only().with_time_domain(0.0, 1.0).unwrap();
        assert!(matches!(
            evolution_fibre(&m, 2.0, &SolverConfig::default()),
            Err(EvolutionError::OutOfDomain(_))
        ));
    }
}
