//! Robust, entropy-penalized utility maximization under convex portfolio
//! constraints.
//!
//! The crate is organized bottom-up:
//!
//! * [`constraint`]: constraint sets `K`, their support functions and
//!   barrier cones.
//! * [`market`]: asset paths, Girsanov densities, upper variation, wealth.
//! * [`bsde`]: the quadratic entropic BSDE for the robust value process and
//!   the worst-case measure.
//! * [`dual`]: budget functional, shadow-price calibration, the
//!   forward-backward fixed point and replicating portfolios.
//! * [`hjb`]: finite differences for the dual HJB equation under box
//!   constraints.
//! * [`scenario`]: scenario files, run modes and the benchmark suite.

pub mod bsde;
pub mod constraint;
pub mod dual;
pub mod error;
pub mod extended;
pub mod hjb;
pub mod market;
pub mod quadrature;
pub mod reference;
pub mod regression;
pub mod scenario;
pub mod stats;
pub mod utility;

pub use bsde::{BsdeConfig, BsdeSolution, RewardSpec};
pub use constraint::{ConstraintKind, ConstraintSet};
pub use dual::{DualConfig, DualState, RobustSolution};
pub use error::{Error, Result};
pub use extended::ExtendedReal;
pub use hjb::{DualValueSurface, Grid1D, HjbConfig};
pub use market::{KernelProcess, MarketParams, PathArray, PathGrid, PiecewiseConstant, Portfolio};
pub use stats::Estimate;
pub use utility::Utility;
