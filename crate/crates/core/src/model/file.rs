//! JSON model files.
//!
//! ```json
//! {
//!   "support": {"y": [0, 1], "d": [0, 1, 2], "z": [0, 1, 2]},
//!   "restriction": {"catalog": "cheng_small_mono1"},
//!   "relaxations": [{"types": {"treatment_types": [["0","2","1"]]}, "direction": "at_most", "epsilon": 0.05}],
//!   "parameter": {"name": "ate_contrast", "d1": 1, "d2": 0,
//!                 "conditioning": {"treatment_types": [[0, 1, 2]]}}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    catalog, standard_parameter, CatalogOptions, GFunction, ParameterSpec, RelaxDirection,
    Relaxation, ResponseType, StrataModel, Support, DEFAULT_TYPE_CAP,
};
use crate::error::{Error, Result};

/// A support label written as a JSON number or string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl LabelValue {
    pub fn as_label(&self) -> String {
        match self {
            LabelValue::Int(i) => i.to_string(),
            LabelValue::Float(f) => f.to_string(),
            LabelValue::Text(s) => s.clone(),
        }
    }
}

impl From<&str> for LabelValue {
    fn from(s: &str) -> Self {
        LabelValue::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    pub y: Vec<LabelValue>,
    pub d: Vec<LabelValue>,
    pub z: Vec<LabelValue>,
}

impl SupportEntry {
    pub fn to_support(&self) -> Result<Support> {
        let labels = |v: &[LabelValue]| v.iter().map(LabelValue::as_label).collect::<Vec<_>>();
        Support::new(labels(&self.y), labels(&self.d), labels(&self.z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RestrictionEntry {
    Catalog {
        catalog: String,
        #[serde(default)]
        options: CatalogOptions,
    },
    /// Explicit admissible types, each `[outcome_map, treatment_map]`.
    Explicit { explicit: Vec<[Vec<LabelValue>; 2]> },
    /// Explicit treatment maps crossed with every outcome map.
    ExplicitTreatment { explicit_treatment: Vec<Vec<LabelValue>> },
}

/// A set of response types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StratumEntry {
    /// `"all"`, or comma-separated treatment maps such as `"012,010"`.
    Text(String),
    TreatmentTypes { treatment_types: Vec<Vec<LabelValue>> },
    ResponseTypes { response_types: Vec<[Vec<LabelValue>; 2]> },
}

impl Default for StratumEntry {
    fn default() -> Self {
        StratumEntry::Text("all".into())
    }
}

fn parse_map(
    support: &Support,
    values: &[LabelValue],
    len: usize,
    code: impl Fn(&str) -> Result<usize>,
) -> Result<Vec<u16>> {
    if values.len() != len {
        return Err(Error::InvalidModel(format!(
            "map has {} entries, expected {len}",
            values.len()
        )));
    }
    let _ = support;
    values.iter().map(|v| code(&v.as_label()).map(|c| c as u16)).collect()
}

fn parse_treatment(support: &Support, values: &[LabelValue]) -> Result<Vec<u16>> {
    parse_map(support, values, support.nz(), |l| support.d_code(l))
}

fn parse_response(support: &Support, pair: &[Vec<LabelValue>; 2]) -> Result<usize> {
    let outcome = parse_map(support, &pair[0], support.nd(), |l| support.y_code(l))?;
    let treatment = parse_treatment(support, &pair[1])?;
    Ok(support.type_index(&ResponseType { outcome, treatment }))
}

impl StratumEntry {
    /// Resolves to sorted type indices. Treatment-map strata range over the
    /// admissible types of `model`, or over all of the response-type space
    /// when `whole_space` is set.
    pub fn resolve(&self, model: &StrataModel, whole_space: bool) -> Result<Vec<usize>> {
        let support = model.support();
        let maps: Vec<Vec<u16>> = match self {
            StratumEntry::Text(t) if t.trim() == "all" => {
                return if whole_space {
                    let n = support.check_cap(DEFAULT_TYPE_CAP)?;
                    Ok((0..n).collect())
                } else {
                    Ok(model.admissible().to_vec())
                };
            }
            StratumEntry::Text(t) => t
                .split(',')
                .map(|m| support.parse_treatment_map(m.trim()))
                .collect::<Result<_>>()?,
            StratumEntry::TreatmentTypes { treatment_types } => treatment_types
                .iter()
                .map(|m| parse_treatment(support, m))
                .collect::<Result<_>>()?,
            StratumEntry::ResponseTypes { response_types } => {
                let mut out = response_types
                    .iter()
                    .map(|p| parse_response(support, p))
                    .collect::<Result<Vec<_>>>()?;
                out.sort_unstable();
                out.dedup();
                return Ok(out);
            }
        };
        let out = if whole_space {
            let tm = support.n_treatment_maps() as usize;
            let om = support.n_outcome_maps() as usize;
            let mut codes: Vec<usize> = maps.iter().map(|m| support.treatment_code(m)).collect();
            codes.sort_unstable();
            codes.dedup();
            (0..om).flat_map(|o| codes.iter().map(move |&t| o * tm + t)).collect()
        } else {
            model.stratum_by_treatment(&maps)
        };
        if out.is_empty() {
            return Err(Error::InvalidModel("stratum contains no response types".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationEntry {
    pub types: StratumEntry,
    pub direction: RelaxDirection,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGEntry {
    pub response_type: [Vec<LabelValue>; 2],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub d1: Option<LabelValue>,
    #[serde(default)]
    pub d2: Option<LabelValue>,
    #[serde(default)]
    pub conditioning: StratumEntry,
    /// Values of `g` by response type; unlisted types take `default_g`.
    #[serde(default)]
    pub custom_g: Option<Vec<CustomGEntry>>,
    #[serde(default)]
    pub default_g: f64,
}

impl ParameterEntry {
    pub fn build(&self, model: &StrataModel) -> Result<ParameterSpec> {
        let support = model.support();
        let conditioning = self.conditioning.resolve(model, false)?;
        if let Some(table) = &self.custom_g {
            let mut values = BTreeMap::new();
            for entry in table {
                values.insert(parse_response(support, &entry.response_type)?, entry.value);
            }
            let g = GFunction::Table { values, default: self.default_g };
            let name = self.name.clone().unwrap_or_else(|| "custom".into());
            return ParameterSpec::new(name, model, g, conditioning);
        }
        let name = self
            .name
            .as_deref()
            .ok_or_else(|| Error::InvalidModel("parameter needs `name` or `custom_g`".into()))?;
        let d_of = |v: &Option<LabelValue>, fallback: usize| match v {
            Some(l) => support.d_code(&l.as_label()),
            None => Ok(fallback),
        };
        let d1 = d_of(&self.d1, 1)?;
        let d2 = d_of(&self.d2, 0)?;
        standard_parameter(name, model, d1, d2, Some(conditioning))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub name: Option<String>,
    pub support: SupportEntry,
    pub restriction: RestrictionEntry,
    #[serde(default)]
    pub relaxations: Vec<RelaxationEntry>,
    #[serde(default)]
    pub parameter: Option<ParameterEntry>,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn model(&self) -> Result<StrataModel> {
        let support = self.support.to_support()?;
        let base = match &self.restriction {
            RestrictionEntry::Catalog { catalog: name, options } => {
                catalog(name, &support, options)?
            }
            RestrictionEntry::Explicit { explicit } => {
                let admissible = explicit
                    .iter()
                    .map(|p| parse_response(&support, p))
                    .collect::<Result<Vec<_>>>()?;
                StrataModel::new("explicit", support.clone(), admissible, Vec::new())?
            }
            RestrictionEntry::ExplicitTreatment { explicit_treatment } => {
                let maps = explicit_treatment
                    .iter()
                    .map(|m| parse_treatment(&support, m))
                    .collect::<Result<Vec<_>>>()?;
                StrataModel::from_treatment_maps("explicit_treatment", support.clone(), &maps)?
            }
        };
        let mut relaxations = Vec::with_capacity(self.relaxations.len());
        for rel in &self.relaxations {
            relaxations.push(Relaxation {
                types: rel.types.resolve(&base, true)?,
                direction: rel.direction,
                epsilon: rel.epsilon,
            });
        }
        let model = base.with_relaxations(relaxations)?;
        match &self.name {
            Some(name) => {
                StrataModel::new(name.clone(), model.support().clone(), model.admissible().to_vec(), model.relaxations().to_vec())
            }
            None => Ok(model),
        }
    }

    /// The parameter declared in the file, if any.
    pub fn parameter(&self, model: &StrataModel) -> Result<Option<ParameterSpec>> {
        self.parameter.as_ref().map(|p| p.build(model)).transpose()
    }
}
