//! Time-material symmetry analysis for evolving constitutive laws.
//!
//! Given the mechanical response `W(t, F)` of a fixed material particle
//! (a smooth map from time and a 3x3 deformation jet to an m-dimensional
//! value space), this crate solves the linear evolution equation
//!
//! ```text
//!   lambda * dW/dt + sum_{i,l,j} F^i_l Theta^l_j dW/dF^i_j = 0
//! ```
//!
//! over the ten unknowns `(lambda, Theta)` at each instant, splits the
//! null space into a remodeling direction and the time-material symmetry
//! algebra, classifies every instant as remodeling or aging, extracts the
//! maximal foliation of the time axis into remodeling intervals, and
//! integrates explicit remodeling processes `P(t)` with a posteriori
//! verification of the material-isomorphism contract.
//!
//! Module map:
//!
//! - [`expr`]: small expression language for constitutive components in
//!   the variables `t` and `F`, evaluated with exact forward-mode
//!   (dual-number) directional derivatives.
//! - [`model`]: constitutive models, the built-in model zoo (including a
//!   laminated liquid crystal), JSON model files, and the rule of change
//!   of reference configuration.
//! - [`evolution`]: per-instant assembly of the evolution equation over
//!   sampled frames and its rank-revealing null-space analysis.
//! - [`foliation`]: time-grid classification, spike demotion, leaf
//!   extraction, smooth-aging detection, and maximality checks.
//! - [`flow`]: jet-arrow algebra, RK4 integration of remodeling
//!   processes, isomorphism residuals, symmetry conjugation, and the
//!   cocycle check.
//! - [`report`]: machine-readable analysis reports (JSON + CSV).
//! - [`cli`]: command-line front end used by the `matevol` binary.
//! - [`verify`]: built-in property suite over the model zoo.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod evolution;
pub mod expr;
pub mod flow;
pub mod foliation;
pub mod model;
pub mod report;
pub mod verify;

pub use evolution::{EvolutionTangent, FibreResult, SolverConfig};
pub use foliation::{Leaf, LeafKind, TimeClassification};
pub use model::ConstitutiveModel;
