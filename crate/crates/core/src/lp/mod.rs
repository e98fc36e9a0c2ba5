//! Dense LP solver and polyhedral computation: simplex, double description,
//! dual vertex enumeration and H/V conversion.

mod dd;
mod exact;
mod polyhedron;
mod scalar;
mod simplex;

pub use dd::extreme_rays;
pub use exact::{independent_rows, nullspace, rank, rref, Mat};
pub use polyhedron::{
    convex_hull_hrep, enumerate_dual, format_decimal_constraint, format_rational_constraint,
    hrep_to_vrep, image_polytope_hrep, observation_points, vrep_of_simplex, DualPolyhedron,
    PolyhedronH, PolyhedronV, DUAL_ROW_CAP, HULL_DIM_CAP,
};
pub use scalar::{format_rational, Scalar, F64_TOL};
pub use simplex::{solve, LPResult, LpStatus, Sense, StandardLP};

pub use num_rational::BigRational;
