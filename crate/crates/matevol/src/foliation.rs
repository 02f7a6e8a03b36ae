//! Classification of a time interval into remodeling and aging, and the
//! extraction of the maximal foliation of the time axis.
//!
//! The per-instant solver reports the pointwise null space; the
//! distribution is generated by smooth local solution germs, so an
//! isolated pointwise spike of the sharp dimension cannot extend to a
//! nonvanishing smooth solution and is demoted before leaves are read
//! off. Maximal runs of the corrected sharp flags become remodeling
//! interval leaves; every other grid instant is an aging singleton.

use rayon::prelude::*;
use thiserror::Error;

use crate::evolution::{
    evolution_fibre_relaxed, EvolutionError, FibreResult, SolverConfig,
};
use crate::flow::{integrate_process, isomorphism_residual};
use crate::model::ConstitutiveModel;

#[derive(Debug, Error)]
pub enum FoliationError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

/// A grid instant whose analysis needs attention (non-convergent null
/// dimension); the classification continues past it.
#[derive(Debug, Clone)]
pub struct GridIssue {
    pub index: usize,
    pub t: f64,
    pub message: String,
}

/// Classification of every instant of a uniform grid.
#[derive(Debug, Clone)]
pub struct TimeClassification {
    pub t0: f64,
    pub t1: f64,
    pub grid: Vec<f64>,
    pub fibres: Vec<FibreResult>,
    /// Sharp flags after spike demotion; never exceeds the pointwise flag.
    pub effective_sharp: Vec<u8>,
    pub issues: Vec<GridIssue>,
}

impl TimeClassification {
    pub fn spacing(&self) -> f64 {
        (self.t1 - self.t0) / (self.grid.len() as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    RemodelingInterval,
    AgingInstant,
}

/// One leaf of the foliation: a maximal remodeling interval or an aging
/// singleton. Endpoints sit on grid instants; a set boundary flag marks
/// an endpoint whose true location is limited by the grid (window edge
/// or a transition resolved only to one spacing).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leaf {
    pub kind: LeafKind,
    pub t_lo: f64,
    pub t_hi: f64,
    pub boundary_lo: bool,
    pub boundary_hi: bool,
}

impl Leaf {
    pub fn remodeling_interval(t_lo: f64, t_hi: f64) -> Self {
        Leaf {
            kind: LeafKind::RemodelingInterval,
            t_lo,
            t_hi,
            boundary_lo: false,
            boundary_hi: false,
        }
    }

    pub fn aging_instant(t: f64) -> Self {
        Leaf {
            kind: LeafKind::AgingInstant,
            t_lo: t,
            t_hi: t,
            boundary_lo: false,
            boundary_hi: false,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_lo && t <= self.t_hi
    }
}

/// Demotes isolated interior sharp spikes: a maximal run of ones of
/// length 1 with zero on both sides cannot carry a smooth nonvanishing
/// solution. Runs touching the grid boundary are never demoted.
fn demote_spikes(sharp: &[u8]) -> Vec<u8> {
    let n = sharp.len();
    let mut effective = sharp.to_vec();
    let mut i = 0;
    while i < n {
        if sharp[i] == 1 {
            let start = i;
            while i < n && sharp[i] == 1 {
                i += 1;
            }
            let touches_boundary = start == 0 || i == n;
            if i - start == 1 && !touches_boundary {
                effective[start] = 0;
            }
        } else {
            i += 1;
        }
    }
    effective
}

/// Classifies every instant of the uniform grid over `[t0, t1]`.
/// Instants are analyzed in parallel; non-convergent instants are
/// recorded in `issues` and classification continues with their last
/// round.
pub fn classify_interval(
    model: &ConstitutiveModel,
    t0: f64,
    t1: f64,
    n_grid: usize,
    cfg: &SolverConfig,
) -> Result<TimeClassification, FoliationError> {
    if !(t0 < t1) {
        return Err(FoliationError::BadGrid(format!("need t0 < t1, got [{t0}, {t1}]")));
    }
    if n_grid < 2 {
        return Err(FoliationError::BadGrid(format!(
            "need at least 2 grid points, got {n_grid}"
        )));
    }
    if !(model.contains_time(t0) && model.contains_time(t1)) {
        return Err(FoliationError::BadGrid(format!(
            "[{t0}, {t1}] lies outside the model's time domain"
        )));
    }
    let h = (t1 - t0) / (n_grid as f64 - 1.0);
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| if i == n_grid - 1 { t1 } else { t0 + h * i as f64 })
        .collect();

    let analyzed: Vec<(FibreResult, bool)> = grid
        .par_iter()
        .map(|&t| evolution_fibre_relaxed(model, t, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut fibres = Vec::with_capacity(n_grid);
    let mut issues = Vec::new();
    for (index, (fibre, converged)) in analyzed.into_iter().enumerate() {
        if !converged {
            issues.push(GridIssue {
                index,
                t: fibre.t,
                message: format!(
                    "null dimension still changing with {} frames",
                    fibre.samples_used
                ),
            });
        }
        fibres.push(fibre);
    }

    let sharp: Vec<u8> = fibres.iter().map(|f| f.sharp_dim as u8).collect();
    let effective_sharp = demote_spikes(&sharp);
    Ok(TimeClassification { t0, t1, grid, fibres, effective_sharp, issues })
}

/// Reads the leaves off a classification: maximal runs of corrected
/// sharp flags become remodeling intervals (a run needs two grid points
/// to witness an interval; a boundary-touching single flag stays a
/// singleton), everything else an aging singleton. Leaves partition the
/// grid in time order.
pub fn extract_leaves(cls: &TimeClassification) -> Vec<Leaf> {
    let n = cls.grid.len();
    let eff = &cls.effective_sharp;
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut i = 0;
    while i < n {
        if eff[i] == 1 {
            let start = i;
            while i < n && eff[i] == 1 {
                i += 1;
            }
            if i - start >= 2 {
                leaves.push(Leaf::remodeling_interval(cls.grid[start], cls.grid[i - 1]));
            } else {
                // A sharp flag at the window edge that the demotion rule
                // preserved: too short to witness an interval.
                leaves.push(Leaf::aging_instant(cls.grid[start]));
            }
        } else {
            leaves.push(Leaf::aging_instant(cls.grid[i]));
            i += 1;
        }
    }

    // Boundary flags: window edges, and transitions between kinds (the
    // true leaf boundary is resolved only to one grid spacing there).
    let count = leaves.len();
    let kinds: Vec<LeafKind> = leaves.iter().map(|l| l.kind).collect();
    for (k, leaf) in leaves.iter_mut().enumerate() {
        leaf.boundary_lo = k == 0 || kinds[k - 1] != leaf.kind;
        leaf.boundary_hi = k == count - 1 || kinds[k + 1] != leaf.kind;
    }
    leaves
}

/// Verdict of the smooth-aging test: true exactly when no instant
/// carries a remodeling direction and the fibre dimension is constant
/// over the whole grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothAgingVerdict {
    pub smooth_aging: bool,
    /// The constant fibre dimension; present only when the verdict holds.
    pub constant_fibre_dim: Option<usize>,
    /// First instant where the fibre dimension jumps, when it does.
    pub dim_jump_at: Option<f64>,
}

pub fn detect_smooth_aging(cls: &TimeClassification) -> SmoothAgingVerdict {
    let all_aging = cls.effective_sharp.iter().all(|&s| s == 0);
    let d0 = cls.fibres[0].pointwise_dim;
    let jump = cls
        .fibres
        .iter()
        .position(|f| f.pointwise_dim != d0)
        .map(|i| cls.grid[i]);
    SmoothAgingVerdict {
        smooth_aging: all_aging && jump.is_none(),
        constant_fibre_dim: if all_aging && jump.is_none() { Some(d0) } else { None },
        dim_jump_at: jump,
    }
}

/// A candidate interval that carries a verified remodeling process but
/// is not contained in any reported remodeling leaf.
#[derive(Debug, Clone)]
pub struct MaximalityViolation {
    pub t_lo: f64,
    pub t_hi: f64,
    pub residual: f64,
}

/// Outcome of [`check_maximality`]; an empty violation list is a pass.
#[derive(Debug, Clone, Default)]
pub struct MaximalityCheck {
    pub violations: Vec<MaximalityViolation>,
    pub notes: Vec<String>,
}

impl MaximalityCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that the reported foliation is coarsest: every candidate
/// interval on which a remodeling process integrates and verifies
/// (isomorphism residual at or below `cfg.residual_tol`) must be
/// contained in some reported remodeling leaf. Candidates that fail to
/// integrate or verify carry no containment obligation and are noted.
pub fn check_maximality(
    leaves: &[Leaf],
    candidates: &[(f64, f64)],
    model: &ConstitutiveModel,
    step: f64,
    cfg: &SolverConfig,
) -> MaximalityCheck {
    let mut out = MaximalityCheck::default();
    let slack = 0.5 * step;
    for &(a, b) in candidates {
        if !(a < b) {
            out.notes.push(format!("candidate [{a}, {b}] is not an interval; skipped"));
            continue;
        }
        let candidate = Leaf::remodeling_interval(a, b);
        let process = match integrate_process(model, &candidate, a, step, cfg) {
            Ok(p) => p,
            Err(e) => {
                out.notes.push(format!(
                    "candidate [{a}, {b}]: no smooth remodeling process ({e}); no obligation"
                ));
                continue;
            }
        };
        let residual = match isomorphism_residual(model, &process, 20, cfg.seed) {
            Ok(r) => r,
            Err(e) => {
                out.notes.push(format!("candidate [{a}, {b}]: verification failed ({e})"));
                continue;
            }
        };
        if residual > cfg.residual_tol {
            out.notes.push(format!(
                "candidate [{a}, {b}]: process fails verification \
                 (residual {residual:.3e}); no obligation"
            ));
            continue;
        }
        let contained = leaves.iter().any(|leaf| {
            leaf.kind == LeafKind::RemodelingInterval
                && a >= leaf.t_lo - slack
                && b <= leaf.t_hi + slack
        });
        if !contained {
            out.violations.push(MaximalityViolation { t_lo: a, t_hi: b, residual });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{double_plateau, liquid_crystal_mu, piecewise_stiffness};

    fn fake_fibre(t: f64, sharp: usize) -> FibreResult {
        FibreResult {
            t,
            pointwise_dim: sharp + 3,
            sharp_dim: sharp,
            remodeling_direction: None,
            symmetry_basis: Vec::new(),
            singular_values: vec![1.0; 10],
            samples_used: 20,
        }
    }

    fn fake_classification(sharp: &[u8]) -> TimeClassification {
        let n = sharp.len();
        let grid: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let fibres = grid
            .iter()
            .zip(sharp)
            .map(|(&t, &s)| fake_fibre(t, s as usize))
            .collect();
        TimeClassification {
            t0: 0.0,
            t1: (n - 1) as f64,
            grid,
            fibres,
            effective_sharp: demote_spikes(sharp),
            issues: Vec::new(),
        }
    }

    #[test]
    fn interior_spikes_are_demoted_but_boundary_runs_stay() {
        assert_eq!(demote_spikes(&[0, 0, 1, 0, 0]), vec![0, 0, 0, 0, 0]);
        assert_eq!(demote_spikes(&[1, 0, 0, 0, 1]), vec![1, 0, 0, 0, 1]);
        assert_eq!(demote_spikes(&[0, 1, 1, 0, 0]), vec![0, 1, 1, 0, 0]);
        assert_eq!(demote_spikes(&[1, 1, 0, 1, 0]), vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn all_ones_make_a_single_flagged_leaf() {
        let cls = fake_classification(&[1; 11]);
        let leaves = extract_leaves(&cls);
        assert_eq!(leaves.len(), 1);
        let leaf = leaves[0];
        assert_eq!(leaf.kind, LeafKind::RemodelingInterval);
        assert_eq!((leaf.t_lo, leaf.t_hi), (0.0, 10.0));
        assert!(leaf.boundary_lo && leaf.boundary_hi);
    }

    #[test]
    fn all_zeros_make_singletons() {
        let cls = fake_classification(&[0; 7]);
        let leaves = extract_leaves(&cls);
        assert_eq!(leaves.len(), 7);
        assert!(leaves.iter().all(|l| l.kind == LeafKind::AgingInstant));
        // Interior singletons have no kind transition next to them.
        assert!(!leaves[3].boundary_lo && !leaves[3].boundary_hi);
        assert!(leaves[0].boundary_lo && leaves[6].boundary_hi);
    }

    #[test]
    fn leaves_partition_the_grid_and_transitions_are_flagged() {
        let cls = fake_classification(&[1, 1, 1, 0, 0, 1, 1]);
        let leaves = extract_leaves(&cls);
        assert_eq!(leaves.len(), 4);
        assert_eq!(leaves[0].kind, LeafKind::RemodelingInterval);
        assert_eq!((leaves[0].t_lo, leaves[0].t_hi), (0.0, 2.0));
        assert!(leaves[0].boundary_hi, "transition endpoint must be flagged");
        assert_eq!(leaves[1].kind, LeafKind::AgingInstant);
        assert!(leaves[1].boundary_lo);
        assert_eq!(leaves[3].kind, LeafKind::RemodelingInterval);
        // Grid instants covered exactly once.
        let covered: usize = leaves
            .iter()
            .map(|l| ((l.t_hi - l.t_lo).round() as usize) + 1)
            .sum();
        assert_eq!(covered, 7);
    }

    #[test]
    fn boundary_sharp_singleton_becomes_aging_leaf() {
        let cls = fake_classification(&[1, 0, 0, 0, 0]);
        let leaves = extract_leaves(&cls);
        assert_eq!(leaves.len(), 5);
        assert_eq!(leaves[0].kind, LeafKind::AgingInstant);
        assert!(leaves[0].boundary_lo);
    }

    #[test]
    fn constant_stiffness_classifies_as_remodeling_everywhere() {
        let lc = liquid_crystal_mu("1").unwrap();
        let cls = classify_interval(&lc, 0.0, 10.0, 21, &SolverConfig::default()).unwrap();
        assert!(cls.effective_sharp.iter().all(|&s| s == 1));
        let leaves = extract_leaves(&cls);
        assert_eq!(leaves.len(), 1);
        let verdict = detect_smooth_aging(&cls);
        assert!(!verdict.smooth_aging);
        assert_eq!(verdict.constant_fibre_dim, None);
    }

    #[test]
    fn monotone_stiffness_classifies_as_smooth_aging() {
        let lc = liquid_crystal_mu("1 + t").unwrap();
        let cls = classify_interval(&lc, 0.0, 10.0, 21, &SolverConfig::default()).unwrap();
        assert!(cls.effective_sharp.iter().all(|&s| s == 0));
        let verdict = detect_smooth_aging(&cls);
        assert!(verdict.smooth_aging);
        assert_eq!(verdict.constant_fibre_dim, Some(5));
        assert_eq!(verdict.dim_jump_at, None);
    }

    #[test]
    fn quadratic_stiffness_spike_is_demoted() {
        let lc = liquid_crystal_mu("1 + t^2").unwrap();
        let cls = classify_interval(&lc, -1.0, 1.0, 51, &SolverConfig::default()).unwrap();
        let sharp: Vec<usize> = cls.fibres.iter().map(|f| f.sharp_dim).collect();
        let spikes: Vec<usize> = (0..51).filter(|&i| sharp[i] == 1).collect();
        assert_eq!(spikes, vec![25], "pointwise spike exactly at t = 0");
        assert!(cls.effective_sharp.iter().all(|&s| s == 0));
        assert!(extract_leaves(&cls).iter().all(|l| l.kind == LeafKind::AgingInstant));
    }

    #[test]
    fn dimension_jump_is_reported() {
        let m = crate::model::ConstitutiveModel::from_sources(
            "jump",
            &["det(F)", "t * tr(transpose(F)*F)"],
            Default::default(),
        )
        .unwrap();
        let cls = classify_interval(&m, -1.0, 1.0, 21, &SolverConfig::default()).unwrap();
        let verdict = detect_smooth_aging(&cls);
        assert!(!verdict.smooth_aging);
        assert_eq!(verdict.dim_jump_at, Some(0.0));
    }

    #[test]
    fn piecewise_model_has_one_remodeling_leaf_then_singletons() {
        let m = piecewise_stiffness();
        let cls = classify_interval(&m, -1.0, 1.0, 41, &SolverConfig::default()).unwrap();
        let leaves = extract_leaves(&cls);
        let remodeling: Vec<&Leaf> = leaves
            .iter()
            .filter(|l| l.kind == LeafKind::RemodelingInterval)
            .collect();
        assert_eq!(remodeling.len(), 1);
        assert_eq!(remodeling[0].t_lo, -1.0);
        assert!((remodeling[0].t_hi - 0.0).abs() < 1e-12);
        assert!(remodeling[0].boundary_hi, "transition is grid-resolution-limited");
    }

    #[test]
    fn refining_the_grid_keeps_separated_leaves_separated() {
        let m = double_plateau();
        let cfg = SolverConfig::default();
        for n in [41, 81] {
            let cls = classify_interval(&m, -1.0, 1.0, n, &cfg).unwrap();
            let leaves = extract_leaves(&cls);
            let remodeling: Vec<&Leaf> = leaves
                .iter()
                .filter(|l| l.kind == LeafKind::RemodelingInterval)
                .collect();
            assert_eq!(remodeling.len(), 2, "grid {n}");
            assert!((remodeling[0].t_hi + 0.25).abs() < 1e-12);
            assert!((remodeling[1].t_lo - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_is_deterministic() {
        let lc = liquid_crystal_mu("1 + t").unwrap();
        let cfg = SolverConfig::default();
        let a = classify_interval(&lc, 0.0, 2.0, 11, &cfg).unwrap();
        let b = classify_interval(&lc, 0.0, 2.0, 11, &cfg).unwrap();
        assert_eq!(a.effective_sharp, b.effective_sharp);
        for (x, y) in a.fibres.iter().zip(&b.fibres) {
            assert_eq!(x.singular_values, y.singular_values);
        }
    }

    #[test]
    fn maximality_on_the_piecewise_model() {
        let m = piecewise_stiffness();
        let cfg = SolverConfig::default();
        let cls = classify_interval(&m, -1.0, 1.0, 41, &cfg).unwrap();
        let leaves = extract_leaves(&cls);
        let step = cls.spacing();

        let candidates = [(-0.9, -0.2), (-0.75, -0.5), (-1.0, 0.0)];
        let check = check_maximality(&leaves, &candidates, &m, step, &cfg);
        assert!(check.passed(), "violations: {:?}", check.violations);

        // A candidate straddling the aging window fails flow
        // verification, so it carries no containment obligation.
        let check = check_maximality(&leaves, &[(-0.25, 0.5)], &m, step, &cfg);
        assert!(check.passed());
        assert_eq!(check.notes.len(), 1);
    }
}
