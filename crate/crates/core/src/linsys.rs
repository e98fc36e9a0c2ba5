//! The linear system `A q = beta` linking latent response-type masses to
//! observable cell probabilities.
//!
//! Row layout: the `|M|` cells `(y, d, z)` (instrument outermost, then
//! treatment, then outcome), the mass row, the parameter row, then one row per
//! relaxation. Column layout: response types in index order, then one slack
//! column per relaxation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::empirics::ObservedDistribution;
use crate::error::{Error, Result};
use crate::model::{LatentDistribution, ParameterSpec, RelaxDirection, StrataModel, Support};

/// Largest number of columns built in unreduced mode.
pub const DENSE_COLUMN_CAP: usize = 200_000;

/// Default relative rank tolerance for the pseudoinverse.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowRole {
    Cell { y: usize, d: usize, z: usize },
    Mass,
    Param,
    Relaxation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Type(usize),
    Slack(usize),
}

#[derive(Debug, Clone)]
pub struct SystemMatrix {
    support: Support,
    matrix: DMatrix<f64>,
    columns: Vec<ColumnKind>,
    /// `g(r) 1{r in R'}` per column (zero on slacks).
    g_masked: Vec<f64>,
    /// `1{r in R'}` per column.
    conditioning: Vec<f64>,
    relax_targets: Vec<f64>,
    theta0: f64,
}

impl SystemMatrix {
    pub fn support(&self) -> &Support {
        &self.support
    }

    /// The full matrix `A`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_cells(&self) -> usize {
        self.support.n_cells()
    }

    pub fn mass_row(&self) -> usize {
        self.n_cells()
    }

    pub fn param_row(&self) -> usize {
        self.n_cells() + 1
    }

    pub fn n_relaxations(&self) -> usize {
        self.relax_targets.len()
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn columns(&self) -> &[ColumnKind] {
        &self.columns
    }

    pub fn row_role(&self, row: usize) -> RowRole {
        let m = self.n_cells();
        if row < m {
            let (y, d, z) = self.support.cell_of(row);
            RowRole::Cell { y, d, z }
        } else if row == m {
            RowRole::Mass
        } else if row == m + 1 {
            RowRole::Param
        } else {
            RowRole::Relaxation(row - m - 2)
        }
    }

    pub fn row_name(&self, row: usize) -> String {
        match self.row_role(row) {
            RowRole::Cell { .. } => self.support.cell_name(row),
            RowRole::Mass => "mass".into(),
            RowRole::Param => "param".into(),
            RowRole::Relaxation(k) => format!("relax[{k}]"),
        }
    }

    pub fn column_name(&self, col: usize) -> String {
        match self.columns[col] {
            ColumnKind::Type(r) => self.support.type_label(&self.support.response_type(r)),
            ColumnKind::Slack(k) => format!("slack[{k}]"),
        }
    }

    /// Column holding response type `r`, if retained.
    pub fn column_of(&self, r: usize) -> Option<usize> {
        let n_types = self.columns.len() - self.n_relaxations();
        self.columns[..n_types]
            .binary_search_by(|c| match c {
                ColumnKind::Type(t) => t.cmp(&r),
                ColumnKind::Slack(_) => std::cmp::Ordering::Greater,
            })
            .ok()
    }

    /// Row indices of `A0`: every row except the parameter row.
    pub fn a0_rows(&self) -> Vec<usize> {
        (0..self.nrows()).filter(|&i| i != self.param_row()).collect()
    }

    pub fn a0(&self) -> DMatrix<f64> {
        self.matrix.select_rows(&self.a0_rows())
    }

    /// Cell block `A1`.
    pub fn a1(&self) -> DMatrix<f64> {
        self.matrix.rows(0, self.n_cells()).into_owned()
    }

    /// `A(R')`: `A` with the parameter row replaced by `1{r in R'}`.
    pub fn a_conditioning(&self) -> DMatrix<f64> {
        let mut a = self.matrix.clone();
        let row = self.param_row();
        for (j, &v) in self.conditioning.iter().enumerate() {
            a[(row, j)] = v;
        }
        a
    }

    /// Objective `g(r) 1{r in R'}` per column.
    pub fn g_masked(&self) -> &[f64] {
        &self.g_masked
    }

    pub fn conditioning_indicator(&self) -> &[f64] {
        &self.conditioning
    }

    /// `beta(P)` or `beta(P, pi)`, including relaxation targets.
    pub fn beta(&self, p: &ObservedDistribution, tail_pi: Option<f64>) -> BetaVector {
        let mut b = beta_from_observed(p, tail_pi);
        b.relaxation = self.relax_targets.clone();
        b
    }

    /// `beta` built from raw cell values (used by the bootstrap).
    pub fn beta_from_cells(&self, cells: &[f64], tail_pi: Option<f64>) -> BetaVector {
        BetaVector {
            cells: cells.to_vec(),
            mass: 1.0,
            param: tail_pi.unwrap_or(0.0),
            relaxation: self.relax_targets.clone(),
        }
    }

    /// Dense CSV dump with a header of column labels.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend((0..self.ncols()).map(|j| self.column_name(j)));
        w.write_record(&header)?;
        for i in 0..self.nrows() {
            let mut rec = vec![self.row_name(i)];
            rec.extend((0..self.ncols()).map(|j| format!("{}", self.matrix[(i, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `beta = (cells, 1, pi or 0, relaxation targets)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    pub cells: Vec<f64>,
    pub mass: f64,
    pub param: f64,
    pub relaxation: Vec<f64>,
}

impl BetaVector {
    pub fn full(&self) -> DVector<f64> {
        let mut v = self.cells.clone();
        v.push(self.mass);
        v.push(self.param);
        v.extend_from_slice(&self.relaxation);
        DVector::from_vec(v)
    }

    /// `beta0`: every entry except the parameter row.
    pub fn without_param(&self) -> DVector<f64> {
        let mut v = self.cells.clone();
        v.push(self.mass);
        v.extend_from_slice(&self.relaxation);
        DVector::from_vec(v)
    }
}

pub fn beta_from_observed(p: &ObservedDistribution, tail_pi: Option<f64>) -> BetaVector {
    BetaVector {
        cells: p.cells().to_vec(),
        mass: 1.0,
        param: tail_pi.unwrap_or(0.0),
        relaxation: Vec::new(),
    }
}

/// Builds `A` at `theta0`. In reduced mode only the types that may carry mass
/// are kept; otherwise every response type is a column.
pub fn build_a(
    model: &StrataModel,
    param: &ParameterSpec,
    theta0: f64,
    reduced: bool,
) -> Result<SystemMatrix> {
    let support = model.support().clone();
    if let Some(&r) = param.conditioning().iter().find(|&&r| !model.is_admissible(r)) {
        return Err(Error::InvalidModel(format!(
            "parameter conditions on type {} outside the model",
            support.type_label(&support.response_type(r))
        )));
    }
    let mass_types = model.mass_types();
    let types: Vec<usize> = if reduced {
        mass_types.clone()
    } else {
        let n = support.check_cap(DENSE_COLUMN_CAP)?;
        (0..n).collect()
    };
    let relax = model.relaxations();
    let m = support.n_cells();
    let nrows = m + 2 + relax.len();
    let ncols = types.len() + relax.len();
    let mut a = DMatrix::<f64>::zeros(nrows, ncols);
    let mut g_masked = vec![0.0; ncols];
    let mut conditioning = vec![0.0; ncols];
    let mut columns = Vec::with_capacity(ncols);

    for (j, &r) in types.iter().enumerate() {
        let rt = support.response_type(r);
        for z in 0..support.nz() {
            let d = rt.d(z);
            a[(support.cell_index(rt.y(d), d, z), j)] = 1.0;
        }
        if mass_types.binary_search(&r).is_ok() {
            a[(m, j)] = 1.0;
        }
        if param.in_conditioning(r) {
            let g = param.g(&rt, r);
            a[(m + 1, j)] = g - theta0;
            g_masked[j] = g;
            conditioning[j] = 1.0;
        }
        for (k, rel) in relax.iter().enumerate() {
            if rel.types.binary_search(&r).is_ok() {
                a[(m + 2 + k, j)] = match rel.direction {
                    RelaxDirection::AtMost => 1.0,
                    RelaxDirection::AtLeast => -1.0,
                };
            }
        }
        columns.push(ColumnKind::Type(r));
    }
    let mut relax_targets = Vec::with_capacity(relax.len());
    for (k, rel) in relax.iter().enumerate() {
        a[(m + 2 + k, types.len() + k)] = 1.0;
        columns.push(ColumnKind::Slack(k));
        relax_targets.push(match rel.direction {
            RelaxDirection::AtMost => rel.epsilon,
            RelaxDirection::AtLeast => -rel.epsilon,
        });
    }
    Ok(SystemMatrix { support, matrix: a, columns, g_masked, conditioning, relax_targets, theta0 })
}

/// Moore-Penrose inverse with its column-space projector.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub pinv: DMatrix<f64>,
    /// `A A†`, the orthogonal projector onto the column space of `A`.
    pub projector: DMatrix<f64>,
    pub rank: usize,
}

/// SVD-based pseudoinverse; singular values at or below `rank_tol * sigma_max`
/// are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rank_tol: f64) -> PseudoInverse {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return PseudoInverse {
            pinv: DMatrix::zeros(n, m),
            projector: DMatrix::zeros(m, m),
            rank: 0,
        };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cut = rank_tol * smax;
    let keep: Vec<usize> = (0..sigma.len()).filter(|&k| sigma[k] > cut && sigma[k] > 0.0).collect();
    let mut pinv = DMatrix::zeros(n, m);
    let mut projector = DMatrix::zeros(m, m);
    for &k in &keep {
        let uk = u.column(k);
        let vk = v_t.row(k).transpose();
        pinv += (&vk * uk.transpose()) / sigma[k];
        projector += &uk * uk.transpose();
    }
    PseudoInverse { pinv, projector, rank: keep.len() }
}

/// Observable cells `A1 q` implied by a latent distribution.
pub fn latent_to_observed(q: &LatentDistribution, system: &SystemMatrix) -> Result<Vec<f64>> {
    let m = system.n_cells();
    let mut cells = vec![0.0; m];
    for (r, mass) in q.iter() {
        if mass == 0.0 {
            continue;
        }
        let j = system.column_of(r).ok_or_else(|| {
            Error::Dimension(format!(
                "latent mass on type {} which has no column",
                system.column_name_of_type(r)
            ))
        })?;
        for (i, cell) in cells.iter_mut().enumerate() {
            *cell += system.a()[(i, j)] * mass;
        }
    }
    Ok(cells)
}

impl SystemMatrix {
    fn column_name_of_type(&self, r: usize) -> String {
        self.support.type_label(&self.support.response_type(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, standard_parameter, CatalogOptions, Relaxation};

    fn cs_model(name: &str) -> StrataModel {
        catalog(name, &Support::integers(2, 3, 3).unwrap(), &CatalogOptions::default()).unwrap()
    }

    #[test]
    fn shapes() {
        let m = catalog("unrestricted", &Support::integers(2, 2, 2).unwrap(), &Default::default())
            .unwrap();
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.0, false).unwrap();
        assert_eq!((a.nrows(), a.ncols()), (10, 16));

        let m = cs_model("unrestricted");
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        assert_eq!(build_a(&m, &p, 0.0, false).unwrap().a().shape(), (20, 216));

        let m = cs_model("cheng_small_mono1");
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.0, true).unwrap();
        assert_eq!(a.a().shape(), (20, 32));
        // Unreduced under a restriction zeroes the mass row off the admissible set.
        let full = build_a(&m, &p, 0.0, false).unwrap();
        let total: f64 = full.a().row(full.mass_row()).sum();
        assert_eq!(total, 32.0);
    }

    #[test]
    fn entries_follow_definition() {
        let m = cs_model("cheng_small_mono1");
        let target = m.stratum_by_treatment(&[vec![0, 1, 2]]);
        let p = standard_parameter("ate_contrast", &m, 1, 0, Some(target.clone())).unwrap();
        let theta0 = 0.25;
        let a = build_a(&m, &p, theta0, true).unwrap();
        let s = a.support().clone();
        for (j, col) in a.columns().iter().enumerate() {
            let ColumnKind::Type(r) = *col else { unreachable!() };
            let rt = s.response_type(r);
            let ones: f64 = (0..s.n_cells()).map(|i| a.a()[(i, j)]).sum();
            assert_eq!(ones, 3.0);
            for i in 0..s.n_cells() {
                let (y, d, z) = s.cell_of(i);
                let want = (rt.y(d) == y && rt.d(z) == d) as u8 as f64;
                assert_eq!(a.a()[(i, j)], want);
            }
            let want = if target.contains(&r) { p.g(&rt, r) - theta0 } else { 0.0 };
            assert_eq!(a.a()[(a.param_row(), j)], want);
        }
    }

    #[test]
    fn relaxation_rows_and_slacks() {
        let s = Support::integers(2, 2, 2).unwrap();
        let base = catalog("no_defier_generalized", &s, &Default::default()).unwrap();
        let defiers: Vec<usize> = (0..16).filter(|&r| s.response_type(r).treatment == vec![1, 0]).collect();
        let m = base
            .with_relaxations(vec![Relaxation {
                types: defiers.clone(),
                direction: RelaxDirection::AtMost,
                epsilon: 0.05,
            }])
            .unwrap();
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.0, true).unwrap();
        assert_eq!(a.a().shape(), (11, 12 + 4 + 1));
        let row = a.nrows() - 1;
        for &r in &defiers {
            let j = a.column_of(r).unwrap();
            assert_eq!(a.a()[(row, j)], 1.0);
            assert_eq!(a.a()[(a.mass_row(), j)], 1.0);
        }
        assert_eq!(a.a()[(row, a.ncols() - 1)], 1.0);
        let obs = ObservedDistribution::uniform(&s);
        let b = a.beta(&obs, None).full();
        assert_eq!(b[b.len() - 1], 0.05);
    }

    #[test]
    fn pseudo_inverse_identities() {
        let id = DMatrix::<f64>::identity(4, 4);
        let pi = pseudo_inverse(&id, RANK_TOL);
        assert!((&pi.pinv - &id).norm() < 1e-12);

        let mut a = DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        a.set_column(3, &a.column(0).clone_owned());
        let pi = pseudo_inverse(&a, RANK_TOL);
        let apa = &a * &pi.pinv * &a;
        assert!((&apa - &a).norm() < 1e-8);
        let pap = &pi.pinv * &a * &pi.pinv;
        assert!((&pap - &pi.pinv).norm() < 1e-8);
        let sym1 = &a * &pi.pinv;
        assert!((&sym1 - sym1.transpose()).norm() < 1e-8);
        let sym2 = &pi.pinv * &a;
        assert!((&sym2 - sym2.transpose()).norm() < 1e-8);
    }

    #[test]
    fn projector_annihilates_columns() {
        let m = cs_model("cheng_small_mono1");
        let p = standard_parameter("prob_benefit", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.3, true).unwrap();
        let pi = pseudo_inverse(a.a(), RANK_TOL);
        let resid = (DMatrix::identity(20, 20) - &pi.projector) * a.a();
        assert!(resid.norm() < 1e-8);
    }

    #[test]
    fn point_mass_and_uniform_push_forward() {
        let m = cs_model("unrestricted");
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.0, true).unwrap();
        let s = m.support();
        let r = 77;
        let cells = latent_to_observed(&LatentDistribution::point_mass(r), &a).unwrap();
        let rt = s.response_type(r);
        for (i, &c) in cells.iter().enumerate() {
            let (y, d, z) = s.cell_of(i);
            assert_eq!(c, (rt.d(z) == d && rt.y(d) == y) as u8 as f64);
        }
        let q = LatentDistribution::from_weights((0..216).map(|r| (r, 1.0))).unwrap();
        let cells = latent_to_observed(&q, &a).unwrap();
        // Uniform types: D(z) uniform on 3 values and Y(d) uniform on 2, independently.
        assert!(cells.iter().all(|&c| (c - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn forward_direction_of_the_system() {
        let m = cs_model("cheng_small_mono1");
        let target = m.stratum_by_treatment(&[vec![0, 1, 2]]);
        let p = standard_parameter("ate_contrast", &m, 1, 0, Some(target)).unwrap();
        let q = LatentDistribution::from_weights(
            m.admissible().iter().map(|&r| (r, 1.0 + (r % 5) as f64)),
        )
        .unwrap();
        let theta = q.theta(&p, m.support()).unwrap();
        let a = build_a(&m, &p, theta, true).unwrap();
        let x = DVector::from_iterator(a.ncols(), m.admissible().iter().map(|&r| q.mass(r)));
        let cells = latent_to_observed(&q, &a).unwrap();
        let beta = a.beta_from_cells(&cells, None).full();
        assert!((a.a() * x - beta).amax() < 1e-12);
    }

    #[test]
    fn csv_dump_has_labels() {
        let m = catalog("perfect_compliance", &Support::integers(2, 2, 2).unwrap(), &Default::default())
            .unwrap();
        let p = standard_parameter("ate_contrast", &m, 1, 0, None).unwrap();
        let a = build_a(&m, &p, 0.0, true).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("row,\"00,01\""));
        assert_eq!(text.lines().count(), 11);
    }
}
