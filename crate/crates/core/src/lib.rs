//! Analytic theory of wide fully-connected networks: NNGP/NTK kernel
//! recursions, signal-propagation criticality, exact GP inference and
//! gradient-flow training dynamics, and finite-width (1/n, L/n) corrections.
//!
//! Everything in this crate is a pure function of its inputs; all Monte Carlo
//! counterparts live in the companion `widthlab-netsim` crate.

pub mod arch;
pub mod cov;
pub mod criticality;
pub mod error;
pub mod finitewidth;
pub mod gauss;
pub mod gp;
pub mod kernel;
pub mod nonlin;
pub mod quadrature;
pub mod special;

pub use arch::{ArchKind, ArchSpec, ConvGeometry, WidthProfile};
pub use cov::Cov2;
pub use error::CoreError;
pub use nonlin::Nonlinearity;
pub use quadrature::QuadratureRule;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
