use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ResponseType, StrataModel, Support};
use crate::error::{Error, Result};

pub const PARAMETER_NAMES: &[&str] =
    &["ate_contrast", "prob_benefit", "prob_no_harm", "relative_effect", "stratum_mass"];

/// The function `g` of a parameter `E[g(R) | R in conditioning]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GFunction {
    /// `Y(d1) - Y(d2)`.
    Contrast { d1: usize, d2: usize },
    /// `1{Y(d1) > Y(d2)}`.
    ProbBenefit { d1: usize, d2: usize },
    /// `1{Y(d1) >= Y(d2)}`.
    ProbNoHarm { d1: usize, d2: usize },
    /// `1{Y(d1) > Y(d2)} - 1{Y(d2) > Y(d1)}`.
    RelativeEffect { d1: usize, d2: usize },
    /// `Y(d)`.
    Outcome { d: usize },
    /// `1{R in set}`.
    Indicator { set: Vec<usize> },
    Constant { value: f64 },
    /// Explicit values by response-type index.
    Table { values: BTreeMap<usize, f64>, default: f64 },
}

/// A parameter `theta(Q) = E_Q[g(R) | R in conditioning]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    name: String,
    g: GFunction,
    conditioning: Vec<usize>,
    /// Numeric value of each outcome label: the label itself when it parses
    /// as a number, its code otherwise.
    outcome_values: Vec<f64>,
}

fn numeric_outcomes(support: &Support) -> Vec<f64> {
    support
        .y_values()
        .iter()
        .enumerate()
        .map(|(code, label)| label.trim().parse::<f64>().unwrap_or(code as f64))
        .collect()
}

impl ParameterSpec {
    pub fn new(
        name: impl Into<String>,
        model: &StrataModel,
        g: GFunction,
        conditioning: Vec<usize>,
    ) -> Result<Self> {
        let mut conditioning = conditioning;
        conditioning.sort_unstable();
        conditioning.dedup();
        if conditioning.is_empty() {
            return Err(Error::InvalidModel("conditioning set is empty".into()));
        }
        if let Some(r) = conditioning.iter().find(|&&r| !model.is_admissible(r)) {
            return Err(Error::InvalidModel(format!(
                "conditioning type {} is not admissible",
                model.support().type_label(&model.response_type(*r))
            )));
        }
        let nd = model.support().nd();
        let check_d = |d: usize| {
            if d >= nd {
                Err(Error::InvalidModel(format!("treatment code {d} outside support")))
            } else {
                Ok(())
            }
        };
        match &g {
            GFunction::Contrast { d1, d2 }
            | GFunction::ProbBenefit { d1, d2 }
            | GFunction::ProbNoHarm { d1, d2 }
            | GFunction::RelativeEffect { d1, d2 } => {
                check_d(*d1)?;
                check_d(*d2)?;
            }
            GFunction::Outcome { d } => check_d(*d)?,
            GFunction::Constant { value } if !value.is_finite() => {
                return Err(Error::InvalidModel("g must be finite".into()))
            }
            GFunction::Table { values, default } => {
                if !default.is_finite() || values.values().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("g must be finite".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            name: name.into(),
            g,
            conditioning,
            outcome_values: numeric_outcomes(model.support()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn g_function(&self) -> &GFunction {
        &self.g
    }

    /// Sorted conditioning set `R'`.
    pub fn conditioning(&self) -> &[usize] {
        &self.conditioning
    }

    pub fn in_conditioning(&self, r: usize) -> bool {
        self.conditioning.binary_search(&r).is_ok()
    }

    pub fn g(&self, r: &ResponseType, index: usize) -> f64 {
        let y = |d: usize| self.outcome_values[r.y(d)];
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match &self.g {
            GFunction::Contrast { d1, d2 } => y(*d1) - y(*d2),
            GFunction::ProbBenefit { d1, d2 } => ind(y(*d1) > y(*d2)),
            GFunction::ProbNoHarm { d1, d2 } => ind(y(*d1) >= y(*d2)),
            GFunction::RelativeEffect { d1, d2 } => ind(y(*d1) > y(*d2)) - ind(y(*d2) > y(*d1)),
            GFunction::Outcome { d } => y(*d),
            GFunction::Indicator { set } => ind(set.binary_search(&index).is_ok()),
            GFunction::Constant { value } => *value,
            GFunction::Table { values, default } => values.get(&index).copied().unwrap_or(*default),
        }
    }

    pub fn g_at(&self, support: &Support, index: usize) -> f64 {
        self.g(&support.response_type(index), index)
    }

    /// Whether the conditioning set is every admissible type, in which case
    /// its mass is identically one.
    pub fn conditions_on_everything(&self, model: &StrataModel) -> bool {
        model.relaxations().is_empty() && self.conditioning == model.admissible()
    }
}

/// Standard parameters by name.
///
/// `conditioning` defaults to the whole admissible set. For `stratum_mass` the
/// given set is the target stratum: the parameter becomes
/// `E[1{R in target} | R in admissible]`.
pub fn standard_parameter(
    name: &str,
    model: &StrataModel,
    d1: usize,
    d2: usize,
    conditioning: Option<Vec<usize>>,
) -> Result<ParameterSpec> {
    let cond = conditioning.unwrap_or_else(|| model.admissible().to_vec());
    let g = match name {
        "ate_contrast" => GFunction::Contrast { d1, d2 },
        "prob_benefit" => GFunction::ProbBenefit { d1, d2 },
        "prob_no_harm" => GFunction::ProbNoHarm { d1, d2 },
        "relative_effect" => GFunction::RelativeEffect { d1, d2 },
        "stratum_mass" => {
            let mut set = cond;
            set.sort_unstable();
            set.dedup();
            return ParameterSpec::new(
                name,
                model,
                GFunction::Indicator { set },
                model.admissible().to_vec(),
            );
        }
        other => return Err(Error::UnknownParameter(other.to_string())),
    };
    ParameterSpec::new(name, model, g, cond)
}
