//! Log-domain arithmetic, disk quadrature, root finding and piecewise-linear
//! functions shared by every other module.

mod logreal;
mod pwl;
mod quad;
mod root;

pub use logreal::{log_sum_exp, wrap_phase, LogComplex, LogReal, LseAccumulator};
pub use pwl::PiecewiseLinear;
pub use quad::{
    disk_integral, disk_integral_rings, gauss_legendre, local_disk_integral, local_points,
    radial_integral, Anchor, DiskMesh, DiskPoint, LocalFrame, LocalMesh, RadialNode,
};
pub use root::{bisect_monotone, DEFAULT_TOL};
