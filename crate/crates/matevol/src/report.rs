//! Machine-readable analysis reports.
//!
//! Reports are plain serde structs with a fixed field order, so two runs
//! with identical inputs and seed serialize to byte-identical JSON
//! (floats print in shortest round-trip form). Files are written
//! atomically: a temporary sibling is renamed over the target.

use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evolution::{EvolutionTangent, FibreResult, SolverConfig};
use crate::flow::RemodelingProcess;
use crate::foliation::{Leaf, LeafKind, SmoothAgingVerdict, TimeClassification};

pub const CSV_HEADER: &str = "t,pointwise_dim,sharp_dim,effective_sharp,sigma_min";

fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut rows = [[0.0; 3]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = m[(r, c)];
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentRecord {
    pub lambda: f64,
    /// Row-major 3x3 entries.
    pub theta: [[f64; 3]; 3],
}

impl From<&EvolutionTangent> for TangentRecord {
    fn from(t: &EvolutionTangent) -> Self {
        TangentRecord { lambda: t.lambda, theta: matrix_rows(&t.theta) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FibreRecord {
    pub t: f64,
    pub pointwise_dim: usize,
    pub sharp_dim: usize,
    pub symmetry_dim: usize,
    pub remodeling_direction: Option<TangentRecord>,
    pub symmetry_basis: Vec<TangentRecord>,
    pub singular_values: Vec<f64>,
    pub samples_used: usize,
}

impl From<&FibreResult> for FibreRecord {
    fn from(f: &FibreResult) -> Self {
        FibreRecord {
            t: f.t,
            pointwise_dim: f.pointwise_dim,
            sharp_dim: f.sharp_dim,
            symmetry_dim: f.symmetry_basis.len(),
            remodeling_direction: f.remodeling_direction.as_ref().map(TangentRecord::from),
            symmetry_basis: f.symmetry_basis.iter().map(TangentRecord::from).collect(),
            singular_values: f.singular_values.clone(),
            samples_used: f.samples_used,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub t0: f64,
    pub t1: f64,
    pub grid: usize,
    pub n_samples_initial: usize,
    pub n_samples_max: usize,
    pub rank_tol_rel: f64,
    pub residual_tol: f64,
    pub seed: u64,
    pub frame_det_min: f64,
    pub frame_cond_max: f64,
}

impl ConfigEcho {
    pub fn new(cfg: &SolverConfig, t0: f64, t1: f64, grid: usize) -> Self {
        ConfigEcho {
            t0,
            t1,
            grid,
            n_samples_initial: cfg.n_samples_initial,
            n_samples_max: cfg.n_samples_max,
            rank_tol_rel: cfg.rank_tol_rel,
            residual_tol: cfg.residual_tol,
            seed: cfg.seed,
            frame_det_min: cfg.frame_det_min,
            frame_cond_max: cfg.frame_cond_max,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstantRecord {
    pub t: f64,
    pub pointwise_dim: usize,
    pub sharp_dim: usize,
    pub effective_sharp: u8,
    /// The three smallest singular values of the assembled system,
    /// ascending.
    pub sigma_smallest: [f64; 3],
    pub samples_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafRecord {
    pub kind: &'static str,
    pub t_lo: f64,
    pub t_hi: f64,
    pub boundary_lo: bool,
    pub boundary_hi: bool,
}

impl From<&Leaf> for LeafRecord {
    fn from(l: &Leaf) -> Self {
        LeafRecord {
            kind: match l.kind {
                LeafKind::RemodelingInterval => "remodeling",
                LeafKind::AgingInstant => "aging",
            },
            t_lo: l.t_lo,
            t_hi: l.t_hi,
            boundary_lo: l.boundary_lo,
            boundary_hi: l.boundary_hi,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothAgingRecord {
    pub smooth_aging: bool,
    pub constant_fibre_dim: Option<usize>,
    pub dim_jump_at: Option<f64>,
}

impl From<&SmoothAgingVerdict> for SmoothAgingRecord {
    fn from(v: &SmoothAgingVerdict) -> Self {
        SmoothAgingRecord {
            smooth_aging: v.smooth_aging,
            constant_fibre_dim: v.constant_fibre_dim,
            dim_jump_at: v.dim_jump_at,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcessRecord {
    pub leaf_index: usize,
    pub t_ref: f64,
    pub step: f64,
    pub grid_points: usize,
    pub max_isomorphism_residual: f64,
    pub cocycle_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IssueRecord {
    pub index: usize,
    pub t: f64,
    pub message: String,
}

/// The full JSON report of a `classify` (or `process`) run; given the
/// same tool version and the echoed configuration, the run reproduces
/// byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub tool_version: &'static str,
    pub model_label: String,
    pub model_hash: String,
    pub config: ConfigEcho,
    pub instants: Vec<InstantRecord>,
    pub leaves: Vec<LeafRecord>,
    pub smooth_aging: SmoothAgingRecord,
    pub processes: Vec<ProcessRecord>,
    pub issues: Vec<IssueRecord>,
}

/// Full dump of an integrated remodeling process (matrices row-major).
#[derive(Debug, Clone, Serialize)]
pub struct ProcessDump {
    pub t_ref: f64,
    pub ref_index: usize,
    pub grid: Vec<f64>,
    pub p_samples: Vec<[[f64; 3]; 3]>,
    pub theta_used: Vec<TangentRecord>,
}

impl From<&RemodelingProcess> for ProcessDump {
    fn from(p: &RemodelingProcess) -> Self {
        ProcessDump {
            t_ref: p.t_ref,
            ref_index: p.ref_index,
            grid: p.grid.clone(),
            p_samples: p.p_samples.iter().map(matrix_rows).collect(),
            theta_used: p.theta_used.iter().map(TangentRecord::from).collect(),
        }
    }
}

pub fn build_report(
    model_label: &str,
    model_hash: &str,
    cfg: &SolverConfig,
    cls: &TimeClassification,
    leaves: &[Leaf],
    verdict: &SmoothAgingVerdict,
    processes: Vec<ProcessRecord>,
) -> AnalysisReport {
    let instants = cls
        .fibres
        .iter()
        .zip(&cls.effective_sharp)
        .map(|(f, &eff)| {
            let k = f.singular_values.len();
            InstantRecord {
                t: f.t,
                pointwise_dim: f.pointwise_dim,
                sharp_dim: f.sharp_dim,
                effective_sharp: eff,
                sigma_smallest: [
                    f.singular_values[k - 1],
                    f.singular_values[k - 2],
                    f.singular_values[k - 3],
                ],
                samples_used: f.samples_used,
            }
        })
        .collect();
    AnalysisReport {
        tool_version: env!("CARGO_PKG_VERSION"),
        model_label: model_label.to_string(),
        model_hash: model_hash.to_string(),
        config: ConfigEcho::new(cfg, cls.t0, cls.t1, cls.grid.len()),
        instants,
        leaves: leaves.iter().map(LeafRecord::from).collect(),
        smooth_aging: SmoothAgingRecord::from(verdict),
        processes,
        issues: cls
            .issues
            .iter()
            .map(|i| IssueRecord { index: i.index, t: i.t, message: i.message.clone() })
            .collect(),
    }
}

/// SHA-256 of raw bytes as lowercase hex; identifies the model file in
/// reports.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        use std::fmt::Write as _;
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serialization");
    bytes.push(b'\n');
    bytes
}

/// Grid CSV: one data row per grid instant under a fixed header;
/// `sigma_min` is the smallest singular value of the final assembled
/// system at that instant.
pub fn csv_bytes(cls: &TimeClassification) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (f, &eff) in cls.fibres.iter().zip(&cls.effective_sharp) {
        let sigma_min = f.singular_values[f.singular_values.len() - 1];
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            f.t, f.pointwise_dim, f.sharp_dim, eff, sigma_min
        ));
    }
    out.into_bytes()
}

/// Writes bytes atomically: a temporary file in the same directory is
/// flushed and then renamed over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "output path has no file name",
            ));
        }
    };
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
