//! Variational solvers for the fractional p-sub-Laplacian on stratified groups.
//!
//! The crate discretises a bounded domain of the abelian group `R^N` or the
//! Heisenberg group `H^n` on a cell-centred lattice, assembles the nonlocal
//! Gagliardo energy of `X_0^{s,p}(Ω)`, and provides
//!
//! * the first eigenpair of the fractional p-sub-Laplacian by constrained
//!   Rayleigh-quotient descent ([`eigen`]), with a dense linear oracle at `p = 2`;
//! * the two nonnegative solutions of the singular concave–convex problem
//!   `(-Δ_p)^s u = λ f u^{-δ} + g u^q` by the Nehari fibering method ([`nehari`]);
//! * batch checks of the qualitative properties of both problems ([`properties`]).
//!
//! All reported numbers use the Korányi gauge on `H^n`, an operator constant of 1
//! and ordered-pair double sums; see [`CONVENTION`].

pub mod cache;
pub mod config;
pub mod domain;
pub mod eigen;
pub mod error;
pub mod field;
pub mod group;
pub mod kernel;
pub mod nehari;
pub mod properties;
pub mod sphere;
pub mod variational;

pub use domain::{build_grid, DomainSpec, GridDomain, Shape};
pub use error::{Error, Result};
pub use field::Field;
pub use group::{GroupConfig, GroupPoint};
pub use kernel::{assemble, FracParams, KernelTable, TruncationPolicy};

/// Normalisation convention embedded in every output.
pub const CONVENTION: &str = "C_{Q,s,p}=1, ordered-pair double sum, Korányi gauge";

/// Version tag of the JSON/CSV/binary outputs.
pub const SCHEMA_VERSION: u32 = 1;
