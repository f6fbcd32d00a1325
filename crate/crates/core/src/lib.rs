//! Time stepping for semilinear subdiffusion equations
//! `D_t^alpha u + L u + f(x, t, u) = 0` with an L2-type discrete Caputo
//! operator of order `3 - alpha` on graded temporal meshes.
//!
//! Besides the solver, the crate carries the verification tooling around it:
//! mesh-assumption diagnostics, the inverse-monotone (kappa/beta)
//! factorisation of the discrete operator, comparison-principle and barrier
//! trials, a Mittag-Leffler evaluator for exact reference solutions, and
//! convergence studies against the theoretical pointwise-in-time bounds.
//!
//! Data-parallel loops (row assembly, randomized trials, history
//! convolution, study cells) use rayon when the default `parallel` feature is
//! enabled and fall back to sequential loops otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caputo;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod mittag_leffler;
pub mod monotone;
pub mod numeric;
pub mod par;
pub mod spatial;
pub mod stepper;

pub use caputo::{
    assemble_l1, assemble_l2, caputo_monomial, truncation_profile, CaputoRows,
    DiscreteCaputoMatrix, Flavor, MonomialSum, RowAssembler, TruncationProfile,
};
pub use error::{Error, Result};
pub use mittag_leffler::ml_neg;
pub use mesh::{analyze_mesh, MeshAssumptionConfig, MeshDiagnostics, TemporalMesh};
pub use par::Exec;
