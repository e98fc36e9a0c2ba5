//! Restriction sets used in the literature on multi-valued instruments and
//! treatments.

use serde::{Deserialize, Serialize};

use super::{StrataModel, Support, DEFAULT_TYPE_CAP};
use crate::error::{Error, Result};

pub const CATALOG_NAMES: &[&str] = &[
    "unrestricted",
    "perfect_compliance",
    "one_sided",
    "cheng_small_mono1",
    "cheng_small_mono12",
    "no_defier_generalized",
    "kline_walters",
    "klm_fields",
    "warp_i",
    "warp_ii",
    "warp_iii",
    "ordered_monotone",
    "mtr",
    "harmless",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogOptions {
    /// Additional outcome restriction (`mtr` or `harmless`) intersected with a
    /// treatment restriction.
    #[serde(default)]
    pub outcome_restriction: Option<String>,
}

const CHENG_SMALL_MONO12: &[[u16; 3]] = &[[0, 0, 0], [0, 1, 0], [0, 1, 2]];
const KLINE_WALTERS: &[[u16; 2]] = &[[0, 0], [0, 2], [1, 1], [1, 2], [2, 2]];
const KLM_FIELDS: &[[u16; 3]] =
    &[[0, 0, 0], [0, 0, 2], [0, 1, 0], [0, 1, 2], [1, 1, 1], [1, 1, 2], [2, 1, 2], [2, 2, 2]];
const WARP_I: &[[u16; 3]] =
    &[[0, 0, 0], [0, 0, 1], [0, 0, 2], [1, 0, 1], [1, 1, 1], [2, 0, 2], [2, 2, 2]];
const WARP_II: &[[u16; 3]] =
    &[[0, 0, 0], [0, 0, 2], [0, 1, 1], [0, 1, 2], [1, 1, 1], [2, 2, 2], [2, 1, 2]];
const WARP_III: &[[u16; 3]] =
    &[[0, 0, 0], [0, 1, 1], [1, 1, 1], [2, 0, 2], [2, 1, 1], [2, 1, 2], [2, 2, 2]];

type TreatmentRule = Box<dyn Fn(&[u16]) -> bool>;
type OutcomeRule = fn(&[u16]) -> bool;

fn require(support: &Support, name: &str, nd: Option<usize>, nz: Option<usize>) -> Result<()> {
    let ok_d = nd.map_or(true, |n| support.nd() == n);
    let ok_z = nz.map_or(true, |n| support.nz() == n);
    if ok_d && ok_z {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "`{name}` requires |D| = {} and |Z| = {}, got {} and {}",
            nd.map_or("any".to_string(), |n| n.to_string()),
            nz.map_or("any".to_string(), |n| n.to_string()),
            support.nd(),
            support.nz()
        )))
    }
}

fn require_square(support: &Support, name: &str) -> Result<()> {
    if support.nd() != support.nz() {
        return Err(Error::Dimension(format!(
            "`{name}` requires |D| = |Z|, got {} and {}",
            support.nd(),
            support.nz()
        )));
    }
    Ok(())
}

fn listed<const N: usize>(list: &'static [[u16; N]]) -> TreatmentRule {
    Box::new(move |t: &[u16]| list.iter().any(|row| row.as_slice() == t))
}

fn mtr(outcome: &[u16]) -> bool {
    outcome.windows(2).all(|w| w[1] >= w[0])
}

fn harmless(outcome: &[u16]) -> bool {
    outcome.iter().all(|&y| y >= outcome[0])
}

fn outcome_rule(name: &str) -> Result<OutcomeRule> {
    match name {
        "mtr" => Ok(mtr),
        "harmless" => Ok(harmless),
        other => Err(Error::UnknownCatalog(format!("outcome restriction {other}"))),
    }
}

fn treatment_rule(name: &str, support: &Support) -> Result<Option<TreatmentRule>> {
    let rule: TreatmentRule = match name {
        "unrestricted" | "mtr" | "harmless" => return Ok(None),
        "perfect_compliance" => {
            require_square(support, name)?;
            Box::new(|t: &[u16]| t.iter().enumerate().all(|(z, &d)| d as usize == z))
        }
        "one_sided" | "cheng_small_mono1" => {
            if name == "one_sided" {
                require_square(support, name)?;
            } else {
                require(support, name, Some(3), Some(3))?;
            }
            Box::new(|t: &[u16]| t.iter().enumerate().all(|(j, &d)| d == 0 || d as usize == j))
        }
        "cheng_small_mono12" => {
            require(support, name, Some(3), Some(3))?;
            listed(CHENG_SMALL_MONO12)
        }
        "no_defier_generalized" => {
            require_square(support, name)?;
            Box::new(|t: &[u16]| {
                (0..t.len()).all(|j| t[j] as usize == j || t.iter().all(|&d| d as usize != j))
            })
        }
        "kline_walters" => {
            require(support, name, Some(3), Some(2))?;
            listed(KLINE_WALTERS)
        }
        "klm_fields" => {
            require(support, name, Some(3), Some(3))?;
            listed(KLM_FIELDS)
        }
        "warp_i" => {
            require(support, name, Some(3), Some(3))?;
            listed(WARP_I)
        }
        "warp_ii" => {
            require(support, name, Some(3), Some(3))?;
            listed(WARP_II)
        }
        "warp_iii" => {
            require(support, name, Some(3), Some(3))?;
            listed(WARP_III)
        }
        "ordered_monotone" => Box::new(|t: &[u16]| t.windows(2).all(|w| w[1] >= w[0])),
        other => return Err(Error::UnknownCatalog(other.to_string())),
    };
    Ok(Some(rule))
}

/// Builds a named restriction set on `support`.
///
/// Treatment restrictions are crossed with every outcome map unless an outcome
/// restriction applies (`mtr`, `harmless`, or `options.outcome_restriction`).
pub fn catalog(name: &str, support: &Support, options: &CatalogOptions) -> Result<StrataModel> {
    let treatment = treatment_rule(name, support)?;
    let mut outcome_rules: Vec<OutcomeRule> = Vec::new();
    if name == "mtr" || name == "harmless" {
        outcome_rules.push(outcome_rule(name)?);
    }
    if let Some(extra) = &options.outcome_restriction {
        outcome_rules.push(outcome_rule(extra)?);
    }

    support.check_cap(DEFAULT_TYPE_CAP)?;
    let om = support.n_outcome_maps() as usize;
    let tm = support.n_treatment_maps() as usize;
    let treatment_codes: Vec<usize> = (0..tm)
        .filter(|&c| treatment.as_ref().map_or(true, |rule| rule(&support.decode_treatment(c))))
        .collect();
    let outcome_codes: Vec<usize> = (0..om)
        .filter(|&c| {
            let o = support.decode_outcome(c);
            outcome_rules.iter().all(|rule| rule(&o))
        })
        .collect();

    let admissible = outcome_codes
        .iter()
        .flat_map(|&o| treatment_codes.iter().map(move |&t| o * tm + t))
        .collect();
    let label = match &options.outcome_restriction {
        Some(extra) => format!("{name}+{extra}"),
        None => name.to_string(),
    };
    StrataModel::new(label, support.clone(), admissible, Vec::new())
}
