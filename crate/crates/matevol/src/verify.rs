//! Built-in property suite over the model zoo, exposed by the `verify`
//! subcommand. Each check returns its name, outcome and a short detail
//! line; the suite passes when every check does.

use nalgebra::Matrix3;

use crate::evolution::{
    assemble_system, evolution_fibre, null_space, relative_residual, round_seed, sample_frames,
    EvolutionTangent, SolverConfig,
};
use crate::flow::{cocycle_check, integrate_process, isomorphism_residual};
use crate::foliation::{classify_interval, detect_smooth_aging, extract_leaves, Leaf, LeafKind};
use crate::model::{det_only, exp_decay, isotropic, liquid_crystal_mu, piecewise_stiffness};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        Check { name, passed: false, detail: detail.into() }
    }

    fn from(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

fn dims_check(
    name: &'static str,
    model: &crate::model::ConstitutiveModel,
    t: f64,
    cfg: &SolverConfig,
    expect: (usize, usize, usize),
) -> Check {
    match evolution_fibre(model, t, cfg) {
        Ok(f) => {
            let got = (f.pointwise_dim, f.sharp_dim, f.symmetry_basis.len());
            Check::from(
                name,
                got == expect,
                format!("(pointwise, sharp, symmetry) = {got:?}, expected {expect:?}"),
            )
        }
        Err(e) => Check::fail(name, e.to_string()),
    }
}

/// Runs the whole suite; checks never panic, failures are reported.
pub fn run_suite(cfg: &SolverConfig) -> Vec<Check> {
    let mut checks = Vec::new();

    checks.push(dims_check("det_only null dimensions", &det_only(), 0.0, cfg, (9, 1, 8)));
    checks.push(dims_check("isotropic null dimensions", &isotropic(), 0.0, cfg, (4, 1, 3)));

    match liquid_crystal_mu("1") {
        Ok(lc) => checks.push(dims_check(
            "liquid crystal (constant mu) null dimensions",
            &lc,
            2.0,
            cfg,
            (6, 1, 5),
        )),
        Err(e) => checks.push(Check::fail("liquid crystal (constant mu) null dimensions", e.to_string())),
    }
    match liquid_crystal_mu("1 + t") {
        Ok(lc) => checks.push(dims_check(
            "liquid crystal (monotone mu) null dimensions",
            &lc,
            2.0,
            cfg,
            (5, 0, 5),
        )),
        Err(e) => checks.push(Check::fail("liquid crystal (monotone mu) null dimensions", e.to_string())),
    }

    checks.push(canonical_direction_check(cfg));
    checks.push(residual_check(cfg));
    checks.push(commutator_check(cfg));
    checks.push(covariance_check(cfg));
    checks.push(smooth_aging_check(cfg));
    checks.push(flow_closed_form_check(cfg));
    checks.push(cocycle_defect_check(cfg));
    checks.push(maximality_check(cfg));

    checks
}

fn canonical_direction_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "exp_decay canonical direction is I/3";
    match evolution_fibre(&exp_decay(), 0.5, cfg) {
        Ok(f) => match f.remodeling_direction {
            Some(d) => {
                let dev = (d.theta - Matrix3::identity() / 3.0).norm();
                Check::from(NAME, dev <= 1e-8, format!("deviation {dev:.3e}"))
            }
            None => Check::fail(NAME, "no remodeling direction".to_string()),
        },
        Err(e) => Check::fail(NAME, e.to_string()),
    }
}

fn residual_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "null bases satisfy the assembled system";
    let models = [
        det_only(),
        isotropic(),
        exp_decay(),
        match liquid_crystal_mu("1 + t") {
            Ok(m) => m,
            Err(e) => return Check::fail(NAME, e.to_string()),
        },
    ];
    let mut worst = 0.0f64;
    for model in &models {
        let fibre = match evolution_fibre(model, 0.3, cfg) {
            Ok(f) => f,
            Err(e) => return Check::fail(NAME, e.to_string()),
        };
        let frames = sample_frames(fibre.samples_used, round_seed(cfg, fibre.samples_used), cfg);
        let a = match assemble_system(model, 0.3, &frames) {
            Ok(a) => a,
            Err(e) => return Check::fail(NAME, e.to_string()),
        };
        let sigma_max = fibre.singular_values[0];
        if let Some(d) = &fibre.remodeling_direction {
            worst = worst.max(relative_residual(&a, sigma_max, &d.to_vec10()));
        }
        for s in &fibre.symmetry_basis {
            worst = worst.max(relative_residual(&a, sigma_max, &s.to_vec10()));
        }
    }
    Check::from(NAME, worst <= cfg.residual_tol, format!("worst residual {worst:.3e}"))
}

fn commutator_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "symmetry algebra closes under commutators";
    let models = [
        isotropic(),
        match liquid_crystal_mu("1 + t") {
            Ok(m) => m,
            Err(e) => return Check::fail(NAME, e.to_string()),
        },
    ];
    let mut worst = 0.0f64;
    for model in &models {
        let fibre = match evolution_fibre(model, 0.9, cfg) {
            Ok(f) => f,
            Err(e) => return Check::fail(NAME, e.to_string()),
        };
        let frames = sample_frames(fibre.samples_used, round_seed(cfg, fibre.samples_used), cfg);
        let a = match assemble_system(model, 0.9, &frames) {
            Ok(a) => a,
            Err(e) => return Check::fail(NAME, e.to_string()),
        };
        let sigma_max = fibre.singular_values[0];
        for x in &fibre.symmetry_basis {
            for y in &fibre.symmetry_basis {
                let comm = x.theta * y.theta - y.theta * x.theta;
                if comm.norm() < 1e-12 {
                    continue;
                }
                let v = EvolutionTangent::new(0.0, comm).to_vec10();
                worst = worst.max(relative_residual(&a, sigma_max, &v));
            }
        }
    }
    Check::from(NAME, worst <= 1e-6, format!("worst residual {worst:.3e}"))
}

fn covariance_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "change of reference conjugates the null space";
    let model = isotropic();
    let c = Matrix3::new(1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.0, 0.1, 1.1);
    let moved = match model.change_reference(&c) {
        Ok(m) => m,
        Err(e) => return Check::fail(NAME, e.to_string()),
    };
    let fibre = match evolution_fibre(&model, 0.0, cfg) {
        Ok(f) => f,
        Err(e) => return Check::fail(NAME, e.to_string()),
    };
    let moved_fibre = match evolution_fibre(&moved, 0.0, cfg) {
        Ok(f) => f,
        Err(e) => return Check::fail(NAME, e.to_string()),
    };
    if (fibre.pointwise_dim, fibre.sharp_dim)
        != (moved_fibre.pointwise_dim, moved_fibre.sharp_dim)
    {
        return Check::fail(NAME, "dimensions changed under change of reference".to_string());
    }
    let frames = sample_frames(40, cfg.seed, cfg);
    let a = match assemble_system(&moved, 0.0, &frames) {
        Ok(a) => a,
        Err(e) => return Check::fail(NAME, e.to_string()),
    };
    let sigma_max = null_space(&a, cfg.rank_tol_rel).1[0];
    let c_inv = c.try_inverse().expect("well-conditioned test matrix");
    let mut worst = 0.0f64;
    for s in &fibre.symmetry_basis {
        let conj = EvolutionTangent::new(s.lambda, c * s.theta * c_inv);
        worst = worst.max(relative_residual(&a, sigma_max, &conj.to_vec10()));
    }
    Check::from(NAME, worst <= 1e-8, format!("worst residual {worst:.3e}"))
}

fn smooth_aging_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "monotone stiffness is smooth aging with constant fibre";
    let lc = match liquid_crystal_mu("1 + t") {
        Ok(m) => m,
        Err(e) => return Check::fail(NAME, e.to_string()),
    };
    match classify_interval(&lc, 0.0, 2.0, 21, cfg) {
        Ok(cls) => {
            let verdict = detect_smooth_aging(&cls);
            Check::from(
                NAME,
                verdict.smooth_aging && verdict.constant_fibre_dim == Some(5),
                format!("{verdict:?}"),
            )
        }
        Err(e) => Check::fail(NAME, e.to_string()),
    }
}

fn flow_closed_form_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "exp_decay flow matches its closed form";
    let model = exp_decay();
    let leaf = Leaf::remodeling_interval(0.0, 3.0);
    match integrate_process(&model, &leaf, 0.0, 0.015, cfg) {
        Ok(process) => {
            let mut worst = 0.0f64;
            for (i, &t) in process.grid.iter().enumerate() {
                let exact = Matrix3::identity() * (t / 3.0).exp();
                worst = worst.max((process.p_samples[i] - exact).abs().max());
            }
            let residual = match isomorphism_residual(&model, &process, 20, cfg.seed) {
                Ok(r) => r,
                Err(e) => return Check::fail(NAME, e.to_string()),
            };
            Check::from(
                NAME,
                worst <= 1e-8 && residual <= 1e-8,
                format!("closed-form deviation {worst:.3e}, residual {residual:.3e}"),
            )
        }
        Err(e) => Check::fail(NAME, e.to_string()),
    }
}

fn cocycle_defect_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "integrated processes satisfy the cocycle law";
    let leaf = Leaf::remodeling_interval(0.0, 3.0);
    match cocycle_check(&exp_decay(), &leaf, 0.015, cfg) {
        Ok(defect) => Check::from(NAME, defect <= 1e-6, format!("defect {defect:.3e}")),
        Err(e) => Check::fail(NAME, e.to_string()),
    }
}

fn maximality_check(cfg: &SolverConfig) -> Check {
    const NAME: &str = "piecewise model passes maximality";
    let model = piecewise_stiffness();
    match classify_interval(&model, -1.0, 1.0, 41, cfg) {
        Ok(cls) => {
            let leaves = extract_leaves(&cls);
            let remodeling = leaves
                .iter()
                .filter(|l| l.kind == LeafKind::RemodelingInterval)
                .count();
            let check = crate::foliation::check_maximality(
                &leaves,
                &[(-0.9, -0.2), (-0.75, -0.5)],
                &model,
                cls.spacing(),
                cfg,
            );
            Check::from(
                NAME,
                remodeling == 1 && check.passed(),
                format!("{remodeling} remodeling leaf/leaves, {} violation(s)", check.violations.len()),
            )
        }
        Err(e) => Check::fail(NAME, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_suite_passes_with_defaults() {
        let checks = run_suite(&SolverConfig::default());
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(checks.len() >= 10);
    }
}
