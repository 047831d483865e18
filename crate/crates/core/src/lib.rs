//! Transition-layer energies for singular-perturbation functionals.
//!
//! The crate computes one-dimensional and periodic cell-problem energies,
//! mollifier limit densities, recovery-sequence energies and the surface
//! functionals built from them.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bundled;
pub mod cell1d;
pub mod cellnd;
pub mod error;
pub mod fields;
pub mod functionals;
pub mod mollifier;
pub mod numeric;
pub mod optim;
pub mod oracles;
pub mod poly;
pub mod recovery;
pub mod state;
pub mod surface;

pub use error::{Error, Result};
pub use fields::{
    validate, BoxDomain, CompositeJump, GraphInterface, PiecewiseField, Region, ValidationReport,
};
pub use functionals::{CatalogEntry, DensityConfig, EnergyDensity, SlotGradient, Slots};
pub use poly::{Monomial, Polynomial};
pub use state::{Block, ConstraintKind, StateLayout};
