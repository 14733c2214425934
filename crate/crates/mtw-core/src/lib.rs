//! Numerical machinery for the regularity geometry of optimal-transport
//! cost functions: cost families with derivative bundles, c-exponential
//! maps and c-segments, discrete c-transforms with contact sets, sections
//! and their limiting c-hyperplanes, and three independent checkers for the
//! weak Ma-Trudinger-Wang condition.
//!
//! Everything is sampling-based: scans give falsification power and
//! evidence over continuous domains, never proof.

pub mod cexp;
pub mod cost;
pub mod error;
pub mod families;
pub mod geometry;
pub mod grid;
pub mod mtw;
pub mod sections;
pub mod transform;

pub use cost::{derivative_bundle, verify_a1a2, Cost, DerivativeBundle, TransposedCost};
pub use error::{MtwError, Result};
pub use families::{builtin_cost, default_domains, BUILTIN_NAMES};
pub use geometry::{point, DomainBox, Point};
