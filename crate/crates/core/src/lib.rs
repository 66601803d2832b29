//! End-to-end pipeline for learning symbolic preconditioner-parameter
//! policies: PDE-derived linear systems, parameterized preconditioners,
//! Krylov solvers, grid-search data generation, prefix-expression search
//! with a recurrent policy, and deployment benchmarks.
//!
//! Data-parallel sections (batch sampling, reward evaluation, per-instance
//! searches, benchmark cells) run on rayon when the `parallel` feature is
//! enabled (the default) and as plain loops otherwise; results are
//! identical either way.

pub mod datagen;
pub mod dense;
pub mod deploy;
pub mod expr;
pub mod krylov;
pub mod par;
pub mod policy;
pub mod precond;
pub mod problem;
pub mod sparse;

pub use sparse::CsrMatrix;

/// splitmix64 mixing step; derives independent per-item seeds from a
/// master seed so batches can be generated in parallel yet reproducibly.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
