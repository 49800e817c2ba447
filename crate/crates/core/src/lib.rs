//! Numerical laboratory for large weighted Bergman spaces on the unit disk.
//!
//! The crate regularizes a radial weight through its convex minorant, builds
//! harmonic building blocks and Blaschke lattices, assembles invertible
//! non-cyclic functions level by level, and measures cyclicity through Gram
//! systems. Magnitudes are handled in the log domain throughout: weights
//! decay like two exponentials and nothing else survives `f64`.

pub mod error;
pub mod lattice;
pub mod blocks;
pub mod construct;
pub mod convexreg;
pub mod cyclolab;
pub mod numerics;
pub mod report;
pub mod weights;

pub use error::{Error, Result};
