//! Shared fixtures for the benchmarks.

use strata_core::empirics::ObservedDistribution;
use strata_core::linsys::{build_a, SystemMatrix};
use strata_core::model::{ParameterSpec, StrataModel};
use strata_core::{catalog, replication, standard_parameter, CatalogOptions, Support};

/// The three-valued example: model, ATE parameter on the 012 stratum, observed table.
pub fn three_valued() -> (StrataModel, ParameterSpec, ObservedDistribution) {
    let m = replication::cs_model();
    let param = standard_parameter("ate_contrast", &m, 1, 0, Some(replication::stratum_012(&m))).unwrap();
    (m, param, replication::table1_distribution())
}

/// Binary IV with no defiers and the complier ATE, on a sample of 2000.
pub fn binary_late() -> (StrataModel, ParameterSpec, ObservedDistribution) {
    let s = Support::integers(2, 2, 2).unwrap();
    let m = catalog("no_defier_generalized", &s, &CatalogOptions::default()).unwrap();
    let compliers = m.stratum_by_treatment(&[vec![0, 1]]);
    let param = standard_parameter("ate_contrast", &m, 1, 0, Some(compliers)).unwrap();
    let counts = vec![475, 275, 100, 150, 175, 75, 250, 500];
    let p = ObservedDistribution::from_counts(&s, counts).unwrap();
    (m, param, p)
}

pub fn system(m: &StrataModel, param: &ParameterSpec) -> SystemMatrix {
    build_a(m, param, 0.0, true).unwrap()
}
