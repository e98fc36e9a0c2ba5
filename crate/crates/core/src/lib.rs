//! Sharp identified sets, testable implications and bootstrap inference for
//! treatment-effect parameters defined on generalized principal strata.
//!
//! The latent object is the distribution of a response type `R`, a pair of
//! maps `d -> Y(d)` and `z -> D(z)`. Under instrument exogeneity the observed
//! cell probabilities `p[yd|z]` are a linear image of that distribution, so
//! identified sets, their closed forms and the model's testable implications
//! all reduce to linear programming and polyhedral computation.

pub mod empirics;
pub mod error;
pub mod idset;
pub mod inference;
pub mod linsys;
pub mod lp;
pub mod model;
pub mod nonfinite;
pub mod replication;

pub use error::{Error, Result};
pub use model::{
    catalog, standard_parameter, CatalogOptions, GFunction, LatentDistribution, ModelFile,
    ParameterSpec, RelaxDirection, Relaxation, ResponseType, StrataModel, Support,
};
