use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the size of the response-type space.
pub const DEFAULT_TYPE_CAP: usize = 10_000_000;

/// Finite supports of the outcome, treatment and instrument.
///
/// Labels are arbitrary strings; internally every value is referred to by its
/// position (its code) in the declared order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    y_values: Vec<String>,
    d_values: Vec<String>,
    z_values: Vec<String>,
}

/// One response type: a potential outcome for every treatment and a potential
/// treatment for every instrument value, stored as codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResponseType {
    pub outcome: Vec<u16>,
    pub treatment: Vec<u16>,
}

impl ResponseType {
    /// Potential outcome under treatment code `d`.
    #[inline]
    pub fn y(&self, d: usize) -> usize {
        self.outcome[d] as usize
    }

    /// Potential treatment under instrument code `z`.
    #[inline]
    pub fn d(&self, z: usize) -> usize {
        self.treatment[z] as usize
    }
}

fn check_axis(axis: &'static str, values: &[String]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InvalidSupport(format!(
            "{axis} support needs at least two values, got {}",
            values.len()
        )));
    }
    if values.len() > u16::MAX as usize {
        return Err(Error::InvalidSupport(format!("{axis} support is too large")));
    }
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(Error::InvalidSupport(format!("duplicate {axis} label `{v}`")));
        }
    }
    Ok(())
}

impl Support {
    pub fn new<S: Into<String>>(
        y_values: impl IntoIterator<Item = S>,
        d_values: impl IntoIterator<Item = S>,
        z_values: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let y_values: Vec<String> = y_values.into_iter().map(Into::into).collect();
        let d_values: Vec<String> = d_values.into_iter().map(Into::into).collect();
        let z_values: Vec<String> = z_values.into_iter().map(Into::into).collect();
        check_axis("outcome", &y_values)?;
        check_axis("treatment", &d_values)?;
        check_axis("instrument", &z_values)?;
        Ok(Self { y_values, d_values, z_values })
    }

    /// Integer-labelled support `{0..ny-1} x {0..nd-1} x {0..nz-1}`.
    pub fn integers(ny: usize, nd: usize, nz: usize) -> Result<Self> {
        let labels = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        Self::new(labels(ny), labels(nd), labels(nz))
    }

    pub fn y_values(&self) -> &[String] {
        &self.y_values
    }

    pub fn d_values(&self) -> &[String] {
        &self.d_values
    }

    pub fn z_values(&self) -> &[String] {
        &self.z_values
    }

    pub fn ny(&self) -> usize {
        self.y_values.len()
    }

    pub fn nd(&self) -> usize {
        self.d_values.len()
    }

    pub fn nz(&self) -> usize {
        self.z_values.len()
    }

    /// Number of observable cells `(y, d, z)`.
    pub fn n_cells(&self) -> usize {
        self.ny() * self.nd() * self.nz()
    }

    /// Canonical row of cell `(y, d, z)`: instrument outermost, then treatment,
    /// then outcome.
    #[inline]
    pub fn cell_index(&self, y: usize, d: usize, z: usize) -> usize {
        (z * self.nd() + d) * self.ny() + y
    }

    pub fn cell_of(&self, index: usize) -> (usize, usize, usize) {
        let y = index % self.ny();
        let rest = index / self.ny();
        (y, rest % self.nd(), rest / self.nd())
    }

    /// Human-readable cell name such as `p[10|2]`.
    pub fn cell_name(&self, index: usize) -> String {
        let (y, d, z) = self.cell_of(index);
        let (yl, dl, zl) = (&self.y_values[y], &self.d_values[d], &self.z_values[z]);
        if self.single_char_labels() {
            format!("p[{yl}{dl}|{zl}]")
        } else {
            format!("p[{yl},{dl}|{zl}]")
        }
    }

    fn single_char_labels(&self) -> bool {
        self.y_values
            .iter()
            .chain(&self.d_values)
            .chain(&self.z_values)
            .all(|l| l.chars().count() == 1)
    }

    pub fn y_code(&self, label: &str) -> Result<usize> {
        code_of("outcome", &self.y_values, label)
    }

    pub fn d_code(&self, label: &str) -> Result<usize> {
        code_of("treatment", &self.d_values, label)
    }

    pub fn z_code(&self, label: &str) -> Result<usize> {
        code_of("instrument", &self.z_values, label)
    }

    /// Number of outcome maps `|Y|^|D|`.
    pub fn n_outcome_maps(&self) -> u128 {
        (self.ny() as u128).saturating_pow(self.nd() as u32)
    }

    /// Number of treatment maps `|D|^|Z|`.
    pub fn n_treatment_maps(&self) -> u128 {
        (self.nd() as u128).saturating_pow(self.nz() as u32)
    }

    /// `|N| = |Y|^|D| * |D|^|Z|`, saturating.
    pub fn n_response_types(&self) -> u128 {
        self.n_outcome_maps().saturating_mul(self.n_treatment_maps())
    }

    /// Errors when `|N|` exceeds `cap`.
    pub fn check_cap(&self, cap: usize) -> Result<usize> {
        let count = self.n_response_types();
        if count > cap as u128 {
            return Err(Error::TooManyResponseTypes { count, cap });
        }
        Ok(count as usize)
    }

    pub fn outcome_code(&self, outcome: &[u16]) -> usize {
        outcome.iter().fold(0usize, |acc, &y| acc * self.ny() + y as usize)
    }

    pub fn treatment_code(&self, treatment: &[u16]) -> usize {
        treatment.iter().fold(0usize, |acc, &d| acc * self.nd() + d as usize)
    }

    /// Lexicographic index of a response type: outcome map first, then
    /// treatment map.
    pub fn type_index(&self, r: &ResponseType) -> usize {
        self.outcome_code(&r.outcome) * self.n_treatment_maps() as usize
            + self.treatment_code(&r.treatment)
    }

    pub fn decode_outcome(&self, mut code: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.nd()];
        for slot in out.iter_mut().rev() {
            *slot = (code % self.ny()) as u16;
            code /= self.ny();
        }
        out
    }

    pub fn decode_treatment(&self, mut code: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.nz()];
        for slot in out.iter_mut().rev() {
            *slot = (code % self.nd()) as u16;
            code /= self.nd();
        }
        out
    }

    pub fn response_type(&self, index: usize) -> ResponseType {
        let tm = self.n_treatment_maps() as usize;
        ResponseType {
            outcome: self.decode_outcome(index / tm),
            treatment: self.decode_treatment(index % tm),
        }
    }

    /// Label such as `010,012` (outcome map, treatment map). Multi-character
    /// labels are joined with `.`.
    pub fn type_label(&self, r: &ResponseType) -> String {
        let sep = if self.single_char_labels() { "" } else { "." };
        let ys: Vec<&str> = r.outcome.iter().map(|&y| self.y_values[y as usize].as_str()).collect();
        let ds: Vec<&str> = r.treatment.iter().map(|&d| self.d_values[d as usize].as_str()).collect();
        format!("{},{}", ys.join(sep), ds.join(sep))
    }

    /// Parses a treatment map written as concatenated single-character labels
    /// (`012`) or as `.`-separated labels (`0.1.2`).
    pub fn parse_treatment_map(&self, text: &str) -> Result<Vec<u16>> {
        let parts: Vec<String> = if text.contains('.') {
            text.split('.').map(|s| s.trim().to_string()).collect()
        } else {
            text.trim().chars().map(|c| c.to_string()).collect()
        };
        if parts.len() != self.nz() {
            return Err(Error::InvalidModel(format!(
                "treatment map `{text}` has {} entries, expected {}",
                parts.len(),
                self.nz()
            )));
        }
        parts.iter().map(|p| self.d_code(p).map(|c| c as u16)).collect()
    }
}

fn code_of(axis: &'static str, values: &[String], label: &str) -> Result<usize> {
    values
        .iter()
        .position(|v| v == label)
        .ok_or_else(|| Error::UnknownLabel { axis, label: label.to_string() })
}

/// All response types of `support` in lexicographic order (outcome map values
/// in treatment order, then treatment map values in instrument order).
pub fn enumerate_response_types(support: &Support, cap: usize) -> Result<Vec<ResponseType>> {
    let count = support.check_cap(cap)?;
    Ok((0..count).map(|i| support.response_type(i)).collect())
}
