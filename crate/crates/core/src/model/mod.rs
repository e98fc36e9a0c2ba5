//! Supports, response types, restriction sets and parameters.

mod catalog;
mod file;
mod parameter;
mod support;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{catalog, CatalogOptions, CATALOG_NAMES};
pub use file::{
    LabelValue, ModelFile, ParameterEntry, RelaxationEntry, RestrictionEntry, StratumEntry,
    SupportEntry,
};
pub use parameter::{standard_parameter, GFunction, ParameterSpec, PARAMETER_NAMES};
pub use support::{enumerate_response_types, ResponseType, Support, DEFAULT_TYPE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxDirection {
    AtMost,
    AtLeast,
}

/// Bounds the total mass of a set of response types by `epsilon` from above
/// or below. Types in the set may lie outside the admissible set; they then
/// become available to the latent distribution, but only up to the bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relaxation {
    pub types: Vec<usize>,
    pub direction: RelaxDirection,
    pub epsilon: f64,
}

/// A model for the latent response-type distribution: instrument exogeneity
/// plus `Q{R in admissible} = 1`, optionally relaxed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataModel {
    name: String,
    support: Support,
    admissible: Vec<usize>,
    relaxations: Vec<Relaxation>,
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

impl StrataModel {
    pub fn new(
        name: impl Into<String>,
        support: Support,
        admissible: Vec<usize>,
        relaxations: Vec<Relaxation>,
    ) -> Result<Self> {
        let total = support.n_response_types();
        let admissible = sorted_unique(admissible);
        if admissible.is_empty() {
            return Err(Error::InvalidModel("admissible set is empty".into()));
        }
        if admissible.iter().any(|&r| r as u128 >= total) {
            return Err(Error::InvalidModel("admissible type index out of range".into()));
        }
        let mut checked = Vec::with_capacity(relaxations.len());
        for rel in relaxations {
            if !(0.0..=1.0).contains(&rel.epsilon) || rel.epsilon.is_nan() {
                return Err(Error::InvalidModel(format!(
                    "relaxation epsilon {} outside [0, 1]",
                    rel.epsilon
                )));
            }
            let types = sorted_unique(rel.types);
            if types.is_empty() {
                return Err(Error::InvalidModel("relaxation with an empty type set".into()));
            }
            if types.iter().any(|&r| r as u128 >= total) {
                return Err(Error::InvalidModel("relaxation type index out of range".into()));
            }
            checked.push(Relaxation { types, ..rel });
        }
        Ok(Self { name: name.into(), support, admissible, relaxations: checked })
    }

    /// Model with the given treatment-map restriction, crossed with every
    /// outcome map.
    pub fn from_treatment_maps(
        name: impl Into<String>,
        support: Support,
        treatment_maps: &[Vec<u16>],
    ) -> Result<Self> {
        let tm = support.n_treatment_maps() as usize;
        let om = support.n_outcome_maps() as usize;
        let mut codes = Vec::new();
        for map in treatment_maps {
            if map.len() != support.nz() || map.iter().any(|&d| d as usize >= support.nd()) {
                return Err(Error::InvalidModel(format!("invalid treatment map {map:?}")));
            }
            codes.push(support.treatment_code(map));
        }
        support.check_cap(DEFAULT_TYPE_CAP)?;
        let admissible = (0..om).flat_map(|o| codes.iter().map(move |&t| o * tm + t)).collect();
        Self::new(name, support, admissible, Vec::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Sorted indices of the admissible response types.
    pub fn admissible(&self) -> &[usize] {
        &self.admissible
    }

    pub fn relaxations(&self) -> &[Relaxation] {
        &self.relaxations
    }

    pub fn with_relaxations(mut self, relaxations: Vec<Relaxation>) -> Result<Self> {
        let name = std::mem::take(&mut self.name);
        Self::new(name, self.support, self.admissible, relaxations)
    }

    pub fn is_admissible(&self, r: usize) -> bool {
        self.admissible.binary_search(&r).is_ok()
    }

    /// Types that may carry mass: the admissible set plus every relaxed type.
    pub fn mass_types(&self) -> Vec<usize> {
        let mut all = self.admissible.clone();
        for rel in &self.relaxations {
            all.extend_from_slice(&rel.types);
        }
        sorted_unique(all)
    }

    /// Distinct admissible treatment maps, in index order.
    pub fn treatment_maps(&self) -> Vec<Vec<u16>> {
        let tm = self.support.n_treatment_maps() as usize;
        let codes = sorted_unique(self.admissible.iter().map(|&r| r % tm).collect());
        codes.into_iter().map(|c| self.support.decode_treatment(c)).collect()
    }

    /// Admissible types whose treatment map is one of `maps`.
    pub fn stratum_by_treatment(&self, maps: &[Vec<u16>]) -> Vec<usize> {
        let tm = self.support.n_treatment_maps() as usize;
        let codes: Vec<usize> = maps.iter().map(|m| self.support.treatment_code(m)).collect();
        self.admissible.iter().copied().filter(|r| codes.contains(&(r % tm))).collect()
    }

    pub fn response_type(&self, r: usize) -> ResponseType {
        self.support.response_type(r)
    }
}

/// A latent distribution over response types, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    mass: BTreeMap<usize, f64>,
}

impl LatentDistribution {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(mass: BTreeMap<usize, f64>) -> Result<Self> {
        if mass.values().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidModel("latent masses must be finite and nonnegative".into()));
        }
        let total: f64 = mass.values().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidModel(format!("latent masses sum to {total}, not 1")));
        }
        Ok(Self { mass })
    }

    /// Normalizes nonnegative weights to a distribution.
    pub fn from_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut mass = BTreeMap::new();
        for (r, w) in weights {
            *mass.entry(r).or_insert(0.0) += w;
        }
        let total: f64 = mass.values().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidModel("weights must have positive total".into()));
        }
        mass.values_mut().for_each(|m| *m /= total);
        Self::new(mass)
    }

    pub fn point_mass(r: usize) -> Self {
        Self { mass: BTreeMap::from([(r, 1.0)]) }
    }

    pub fn mass(&self, r: usize) -> f64 {
        self.mass.get(&r).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mass.iter().map(|(&r, &m)| (r, m))
    }

    /// Parameter value `E[g(R) | R in conditioning]`, `None` when the
    /// conditioning set has zero mass.
    pub fn theta(&self, param: &ParameterSpec, support: &Support) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for &r in param.conditioning() {
            let m = self.mass(r);
            if m > 0.0 {
                num += m * param.g_at(support, r);
                den += m;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}
