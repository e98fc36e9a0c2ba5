//! Observed cell distributions, data ingestion and the studentizing matrices.

use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Support;

const SUM_TOL: f64 = 1e-10;

/// Conditional cell probabilities `p[yd|z]`, instrument marginals and, for
/// sample data, the underlying counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDistribution {
    support: Support,
    cells: Vec<f64>,
    z_marginal: Vec<f64>,
    n: u64,
    counts: Option<Vec<u64>>,
}

impl ObservedDistribution {
    /// Population distribution given directly by its cells (`n = 0`).
    /// `z_marginal` defaults to uniform.
    pub fn from_probabilities(
        support: &Support,
        cells: Vec<f64>,
        z_marginal: Option<Vec<f64>>,
    ) -> Result<Self> {
        if cells.len() != support.n_cells() {
            return Err(Error::Dimension(format!(
                "expected {} cell probabilities, got {}",
                support.n_cells(),
                cells.len()
            )));
        }
        if cells.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidData("cell probabilities must be nonnegative".into()));
        }
        let block = support.ny() * support.nd();
        for (z, chunk) in cells.chunks(block).enumerate() {
            let s: f64 = chunk.iter().sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidData(format!(
                    "cells for z = {} sum to {s}, not 1",
                    support.z_values()[z]
                )));
            }
        }
        let nz = support.nz();
        let z_marginal = z_marginal.unwrap_or_else(|| vec![1.0 / nz as f64; nz]);
        if z_marginal.len() != nz
            || z_marginal.iter().any(|&w| !(w >= 0.0))
            || (z_marginal.iter().sum::<f64>() - 1.0).abs() > SUM_TOL
        {
            return Err(Error::InvalidData("instrument marginal is not a distribution".into()));
        }
        Ok(Self { support: support.clone(), cells, z_marginal, n: 0, counts: None })
    }

    /// Like [`from_probabilities`](Self::from_probabilities) but renormalizes
    /// each instrument block first (for rounded published tables).
    pub fn from_rounded(support: &Support, mut cells: Vec<f64>) -> Result<Self> {
        let block = support.ny() * support.nd();
        if cells.len() != support.n_cells() {
            return Err(Error::Dimension("wrong number of cells".into()));
        }
        for chunk in cells.chunks_mut(block) {
            let s: f64 = chunk.iter().sum();
            if !(s > 0.0) {
                return Err(Error::InvalidData("empty instrument block".into()));
            }
            chunk.iter_mut().for_each(|c| *c /= s);
        }
        Self::from_probabilities(support, cells, None)
    }

    /// Uniform cells in every instrument block.
    pub fn uniform(support: &Support) -> Self {
        let block = (support.ny() * support.nd()) as f64;
        Self::from_probabilities(support, vec![1.0 / block; support.n_cells()], None)
            .expect("uniform cells are valid")
    }

    /// Sample distribution from counts in canonical cell order.
    pub fn from_counts(support: &Support, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != support.n_cells() {
            return Err(Error::Dimension(format!(
                "expected {} counts, got {}",
                support.n_cells(),
                counts.len()
            )));
        }
        let block = support.ny() * support.nd();
        let n_z: Vec<u64> = counts.chunks(block).map(|c| c.iter().sum()).collect();
        if let Some(z) = n_z.iter().position(|&c| c == 0) {
            return Err(Error::UnseenInstrument(support.z_values()[z].clone()));
        }
        let n: u64 = n_z.iter().sum();
        let cells = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / n_z[i / block] as f64)
            .collect();
        let z_marginal = n_z.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self { support: support.clone(), cells, z_marginal, n, counts: Some(counts) })
    }

    /// Sample distribution from `(y, d, z)` label records.
    pub fn from_records<'a>(
        support: &Support,
        records: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self> {
        let mut counts = vec![0u64; support.n_cells()];
        for (y, d, z) in records {
            let i = support.cell_index(support.y_code(y)?, support.d_code(d)?, support.z_code(z)?);
            counts[i] += 1;
        }
        Self::from_counts(support, counts)
    }

    /// Reads CSV data with a header row: either `y,d,z` (one observation per
    /// row) or `y,d,z,count`.
    pub fn read_csv<R: Read>(support: &Support, input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_lowercase()).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(iy), Some(id), Some(iz)) = (col("y"), col("d"), col("z")) else {
            return Err(Error::InvalidData("CSV header must name columns y, d and z".into()));
        };
        let ic = col("count");
        let mut counts = vec![0u64; support.n_cells()];
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::InvalidData(format!("line {line}: {e}")))?;
            let field = |i: usize| {
                rec.get(i).ok_or_else(|| Error::InvalidData(format!("line {line}: missing field")))
            };
            let at = |e: Error| Error::InvalidData(format!("line {line}: {e}"));
            let y = support.y_code(field(iy)?).map_err(at)?;
            let d = support.d_code(field(id)?).map_err(at)?;
            let z = support.z_code(field(iz)?).map_err(at)?;
            let c = match ic {
                Some(i) => field(i)?.parse::<u64>().map_err(|_| {
                    Error::InvalidData(format!("line {line}: count must be a nonnegative integer"))
                })?,
                None => 1,
            };
            counts[support.cell_index(y, d, z)] += c;
        }
        Self::from_counts(support, counts)
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cell(&self, y: usize, d: usize, z: usize) -> f64 {
        self.cells[self.support.cell_index(y, d, z)]
    }

    pub fn z_marginal(&self) -> &[f64] {
        &self.z_marginal
    }

    /// Sample size, zero for population distributions.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    /// Observations per instrument value.
    pub fn stratum_sizes(&self) -> Option<Vec<u64>> {
        let block = self.support.ny() * self.support.nd();
        self.counts.as_ref().map(|c| c.chunks(block).map(|b| b.iter().sum()).collect())
    }

    /// Counts of an i.i.d. sample of size `n`: instrument strata from the
    /// instrument marginal, then cells within each stratum.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: u64) -> Result<Self> {
        let block = self.support.ny() * self.support.nd();
        let n_z = multinomial(rng, n, &self.z_marginal);
        let mut counts = Vec::with_capacity(self.cells.len());
        for (z, &nz) in n_z.iter().enumerate() {
            counts.extend(multinomial(rng, nz, &self.cells[z * block..(z + 1) * block]));
        }
        Self::from_counts(&self.support, counts)
    }

    /// Counts proportional to the population cells, rounded per stratum, for
    /// a sample of size about `n`.
    pub fn expected_counts(&self, n: u64) -> Result<Self> {
        let block = self.support.ny() * self.support.nd();
        let counts = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, &c)| (c * self.z_marginal[i / block] * n as f64).round() as u64)
            .collect();
        Self::from_counts(&self.support, counts)
    }

    /// Cells of one stratified bootstrap resample: within each instrument
    /// stratum, a multinomial draw of the stratum's size from its cells.
    pub fn bootstrap_cells<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let sizes = self
            .stratum_sizes()
            .ok_or_else(|| Error::Config("bootstrap requires sample counts".into()))?;
        let block = self.support.ny() * self.support.nd();
        let mut out = vec![0.0; self.cells.len()];
        for (z, &nz) in sizes.iter().enumerate() {
            let probs = &self.cells[z * block..(z + 1) * block];
            let draws = multinomial(rng, nz, probs);
            for (k, c) in draws.into_iter().enumerate() {
                out[z * block + k] = c as f64 / nz as f64;
            }
        }
        Ok(out)
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut rest: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = left;
            break;
        }
        let q = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 0.0 };
        let x = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out[k] = x;
        left -= x;
        rest -= p;
    }
    out
}

/// Asymptotic covariance of `sqrt(n)(beta_hat - beta)` embedded in a
/// `dim`-dimensional coordinate system whose leading coordinates are the cells.
/// Block `z` is `(diag(p_z) - p_z p_z') / P(Z = z)`; other coordinates are zero.
pub fn asymptotic_covariance(p: &ObservedDistribution, dim: usize) -> Result<DMatrix<f64>> {
    let s = p.support();
    let block = s.ny() * s.nd();
    if dim < s.n_cells() {
        return Err(Error::Dimension("covariance dimension below cell count".into()));
    }
    let mut sigma = DMatrix::zeros(dim, dim);
    for z in 0..s.nz() {
        let w = p.z_marginal()[z];
        if !(w > 0.0) {
            return Err(Error::UnseenInstrument(s.z_values()[z].clone()));
        }
        let off = z * block;
        for i in 0..block {
            let pi = p.cells()[off + i];
            for j in 0..block {
                let pj = p.cells()[off + j];
                let v = if i == j { pi - pi * pj } else { -pi * pj };
                sigma[(off + i, off + j)] = v / w;
            }
        }
    }
    Ok(sigma)
}

/// Eigenvalues of a covariance below this fraction of the largest are zero.
pub const PSD_RANK_TOL: f64 = 1e-13;

/// Symmetric PSD square root. Eigenvalues at rounding level (below
/// `PSD_RANK_TOL` times the largest, or negative) are set to zero so the root
/// has the same null space as `m`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let vals = eig.eigenvalues.map(|l| if l > PSD_RANK_TOL * lmax { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&root + root.transpose()) * 0.5
}

/// The studentizing matrices of the test statistic.
#[derive(Debug, Clone)]
pub struct StudentizerPair {
    /// Asymptotic covariance `Sigma` of `sqrt(n)(beta_hat - beta)`.
    pub covariance: DMatrix<f64>,
    /// PSD root of `(I - AA†) Sigma (I - AA†)`.
    pub omega_e: DMatrix<f64>,
    /// PSD root of `AA† Sigma (AA†)'`.
    pub omega_i: DMatrix<f64>,
}

/// Human-readable statement of the studentizer choice, echoed in reports.
pub const STUDENTIZER_DEFINITION: &str = "omega_e = psd_sqrt((I - AA+) S (I - AA+)), \
omega_i = psd_sqrt(AA+ S (AA+)'), S = stratified multinomial covariance of sqrt(n)(beta_hat - beta)";

impl StudentizerPair {
    /// PSD root of the covariance itself.
    pub fn covariance_root(&self) -> DMatrix<f64> {
        psd_sqrt(&self.covariance)
    }
}

/// Plug-in studentizers at `p` for a system whose column-space projector is
/// `projector` (`AA†`).
pub fn estimate_studentizers(
    p: &ObservedDistribution,
    projector: &DMatrix<f64>,
) -> Result<StudentizerPair> {
    let dim = projector.nrows();
    let sigma = asymptotic_covariance(p, dim)?;
    let resid = DMatrix::identity(dim, dim) - projector;
    let omega_e = psd_sqrt(&(&resid * &sigma * resid.transpose()));
    let omega_i = psd_sqrt(&(projector * &sigma * projector.transpose()));
    Ok(StudentizerPair { covariance: sigma, omega_e, omega_i })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary() -> Support {
        Support::integers(2, 2, 2).unwrap()
    }

    #[test]
    fn records_ingest() {
        let s = binary();
        let recs = vec![("1", "1", "1"); 3].into_iter().chain([("0", "0", "0")]);
        let p = ObservedDistribution::from_records(&s, recs).unwrap();
        assert_eq!(p.cell(1, 1, 1), 1.0);
        assert_eq!(p.cell(0, 0, 0), 1.0);
        assert_eq!(p.n(), 4);
        assert_eq!(p.z_marginal(), &[0.25, 0.75]);
    }

    #[test]
    fn unseen_instrument_is_named() {
        let s = binary();
        let err = ObservedDistribution::from_records(&s, [("1", "1", "1")]).unwrap_err();
        assert!(matches!(err, Error::UnseenInstrument(ref z) if z == "0"));
    }

    #[test]
    fn csv_schemas() {
        let s = binary();
        let micro = "y,d,z\n1,1,1\n0,0,0\n0,1,0\n";
        let p = ObservedDistribution::read_csv(&s, micro.as_bytes()).unwrap();
        assert_eq!(p.cell(0, 1, 0), 0.5);
        let agg = "y,d,z,count\n1,1,1,3\n0,0,0,1\n0,1,0,1\n";
        let p = ObservedDistribution::read_csv(&s, agg.as_bytes()).unwrap();
        assert_eq!(p.cell(1, 1, 1), 1.0);
        let bad = "y,d,z\n1,1,1\n0,5,0\n";
        let err = ObservedDistribution::read_csv(&s, bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(ObservedDistribution::read_csv(&s, "a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn count_scaling_leaves_cells() {
        let s = binary();
        let c = vec![3, 1, 4, 1, 5, 9, 2, 6];
        let p1 = ObservedDistribution::from_counts(&s, c.clone()).unwrap();
        let p2 = ObservedDistribution::from_counts(&s, c.iter().map(|x| x * 7).collect()).unwrap();
        assert_eq!(p1.cells(), p2.cells());
    }

    #[test]
    fn deterministic_data_has_zero_studentizers() {
        let s = binary();
        let p = ObservedDistribution::from_counts(&s, vec![10, 0, 0, 0, 0, 0, 0, 10]).unwrap();
        let proj = DMatrix::identity(10, 10);
        let st = estimate_studentizers(&p, &proj).unwrap();
        assert_eq!(st.covariance.amax(), 0.0);
        assert!(st.omega_e.amax() < 1e-12 && st.omega_i.amax() < 1e-12);
    }

    #[test]
    fn two_point_block() {
        let s = binary();
        // z = 0: half (0,0), half (0,1); z = 1 deterministic.
        let p = ObservedDistribution::from_counts(&s, vec![5, 0, 5, 0, 0, 0, 0, 10]).unwrap();
        let sigma = asymptotic_covariance(&p, 10).unwrap();
        let w = 0.5;
        assert!((sigma[(0, 0)] - 0.25 / w).abs() < 1e-15);
        assert!((sigma[(0, 2)] + 0.25 / w).abs() < 1e-15);
        let root = psd_sqrt(&sigma);
        assert!((&root * &root - &sigma).amax() < 1e-12);
        assert!(root.row(8).amax() == 0.0 && root.row(9).amax() == 0.0);
    }

    #[test]
    fn squares_match_definitions() {
        let s = Support::integers(2, 3, 3).unwrap();
        let counts: Vec<u64> = (0..18).map(|i| 1 + (i * 37 % 11) as u64).collect();
        let p = ObservedDistribution::from_counts(&s, counts).unwrap();
        let a = DMatrix::from_fn(20, 9, |i, j| ((i + 2 * j) % 3 == 0) as u8 as f64);
        let pi = crate::linsys::pseudo_inverse(&a, 1e-10);
        let st = estimate_studentizers(&p, &pi.projector).unwrap();
        let want_i = &pi.projector * &st.covariance * pi.projector.transpose();
        assert!((&st.omega_i * &st.omega_i - want_i).amax() < 1e-8);
        let r = DMatrix::identity(20, 20) - &pi.projector;
        let want_e = &r * &st.covariance * r.transpose();
        assert!((&st.omega_e * &st.omega_e - want_e).amax() < 1e-8);
        let root = st.covariance_root();
        assert!((&root * &root - &st.covariance).amax() < 1e-8);
        assert!((&st.omega_e - st.omega_e.transpose()).amax() < 1e-10);
        for m in [&st.omega_e, &st.omega_i] {
            let eig = SymmetricEigen::new(m.clone());
            assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
        }
    }

    #[test]
    fn multinomial_preserves_total() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = multinomial(&mut rng, 137, &[0.1, 0.0, 0.5, 0.4]);
            assert_eq!(d.iter().sum::<u64>(), 137);
            assert_eq!(d[1], 0);
        }
    }
}
