//! Bootstrap test of `H0: theta(Q) = theta0`, its inversion into a confidence
//! region, and the specification test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::{estimate_studentizers, ObservedDistribution, StudentizerPair, STUDENTIZER_DEFINITION};
use crate::error::{Error, Result};
use crate::idset::{identified_set, BoundStatus, GridConfig};
use crate::linsys::{build_a, pseudo_inverse, SystemMatrix, RANK_TOL};
use crate::lp::{solve, LpStatus, StandardLP};
use crate::model::{GFunction, ParameterSpec, StrataModel};

/// Eigenvalues of a studentizer (a matrix square root) below this fraction of
/// the largest are zero.
const EIG_TOL: f64 = 1e-6;
/// A residual component outside the studentizer's range larger than this
/// (relative to `1 + |beta|`) makes the equality part infinite.
const RANGE_TOL: f64 = 1e-8;
/// Residuals and suprema at rounding level are exact zeros.
const ZERO_TOL: f64 = 1e-12;
const SUP_TOL: f64 = 1e-10;
pub const CUT_GAP: f64 = 1e-7;

/// Both suprema are nonnegative (`s = 0` is feasible); values at solver
/// tolerance are zero.
fn snap(v: f64) -> f64 {
    if v <= SUP_TOL {
        0.0
    } else {
        v
    }
}
pub const MAX_CUTS: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub bootstrap_b: usize,
    /// `None` selects `min(1, 1 / sqrt(ln n))`.
    pub lambda_n: Option<f64>,
    pub seed: u64,
    /// `(lo, hi, n)` for the confidence region.
    pub theta_grid: Option<(f64, f64, usize)>,
    pub keep_draws: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { alpha: 0.05, bootstrap_b: 500, lambda_n: None, seed: 0, theta_grid: None, keep_draws: false }
    }
}

impl TestConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::Config("at least two bootstrap draws are required".into()));
        }
        if let Some(l) = self.lambda_n {
            if !(l.is_finite() && l <= 1.0) {
                return Err(Error::Config(format!("lambda_n must be finite and at most 1, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, n: u64) -> f64 {
        self.lambda_n.unwrap_or_else(|| auto_lambda(n))
    }
}

pub fn auto_lambda(n: u64) -> f64 {
    let l = (n as f64).ln();
    if l > 0.0 {
        (1.0 / l.sqrt()).min(1.0)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOutcome {
    pub theta0: Option<f64>,
    #[serde(with = "crate::nonfinite")]
    pub statistic: f64,
    #[serde(with = "crate::nonfinite")]
    pub critical_value: f64,
    pub reject: bool,
    #[serde(with = "crate::nonfinite")]
    pub equality_part: f64,
    #[serde(with = "crate::nonfinite")]
    pub inequality_part: f64,
    pub n: u64,
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub lambda_n: f64,
    pub seed: u64,
    #[serde(with = "crate::nonfinite")]
    pub restricted_criterion: f64,
    pub cutting_planes: usize,
    pub studentizer: String,
    pub warnings: Vec<String>,
    #[serde(with = "crate::nonfinite::opt_vec", default)]
    pub draws: Option<Vec<f64>>,
}

/// Value of a supremum: finite with its maximizer, or unbounded along a ray.
#[derive(Debug, Clone)]
pub enum Sup {
    Finite(f64, DVector<f64>),
    Unbounded(DVector<f64>),
}

impl Sup {
    pub fn value(&self) -> f64 {
        match self {
            Sup::Finite(v, _) => *v,
            Sup::Unbounded(_) => f64::INFINITY,
        }
    }
}

/// Everything about `A`, `A†` and the studentizers that does not change
/// across bootstrap draws.
pub struct TestSystem {
    pub a: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    pub studentizers: StudentizerPair,
    /// Rows at or beyond this index are fixed (mass, parameter, relaxations).
    pub n_cells: usize,
    pub tail: Vec<f64>,
    /// `Omega_e^+`.
    omega_e_pinv: DMatrix<f64>,
    /// Orthonormal basis of the null space of `Omega_e`, as columns.
    omega_e_null: DMatrix<f64>,
    /// Orthonormal basis of the column space of `A`, as columns.
    range_basis: DMatrix<f64>,
    /// `A† U` and `Omega_i U` for that basis `U`.
    pinv_u: DMatrix<f64>,
    omega_i_u: DMatrix<f64>,
    /// `A†' A†`.
    gram: DMatrix<f64>,
}

impl TestSystem {
    pub fn new(a: DMatrix<f64>, n_cells: usize, tail: Vec<f64>, studentizers: StudentizerPair) -> Result<Self> {
        let d = a.nrows();
        if studentizers.omega_e.nrows() != d || studentizers.omega_i.nrows() != d {
            return Err(Error::Dimension("studentizers do not match the rows of A".into()));
        }
        if n_cells + tail.len() != d {
            return Err(Error::Dimension("cells plus tail must match the rows of A".into()));
        }
        let pi = pseudo_inverse(&a, RANK_TOL);
        let eig = SymmetricEigen::new((&studentizers.omega_e + studentizers.omega_e.transpose()) * 0.5);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let cut = EIG_TOL * lmax.max(f64::MIN_POSITIVE);
        let mut omega_e_pinv = DMatrix::zeros(d, d);
        let mut null_cols = Vec::new();
        for k in 0..d {
            let u = eig.eigenvectors.column(k);
            let l = eig.eigenvalues[k];
            if l > cut {
                omega_e_pinv += (&u * u.transpose()) / l;
            } else {
                null_cols.push(u.into_owned());
            }
        }
        let omega_e_null = if null_cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&null_cols) };
        let peig = SymmetricEigen::new(pi.projector.clone());
        let basis: Vec<DVector<f64>> =
            (0..d).filter(|&k| peig.eigenvalues[k] > 0.5).map(|k| peig.eigenvectors.column(k).into_owned()).collect();
        let range_basis = if basis.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&basis) };
        let pinv_u = chop(&pi.pinv * &range_basis);
        let omega_i_u = chop(&studentizers.omega_i * &range_basis);
        let gram = pi.pinv.transpose() * &pi.pinv;
        Ok(Self {
            a,
            pinv: pi.pinv,
            projector: pi.projector,
            studentizers,
            n_cells,
            tail,
            omega_e_pinv,
            omega_e_null,
            range_basis,
            pinv_u,
            omega_i_u,
            gram,
        })
    }

    /// Plug-in system for `A` with cells from `p` and a fixed tail.
    pub fn plug_in(a: DMatrix<f64>, tail: Vec<f64>, p: &ObservedDistribution) -> Result<Self> {
        let pi = pseudo_inverse(&a, RANK_TOL);
        let st = estimate_studentizers(&regularized(p)?, &pi.projector)?;
        Self::new(a, p.support().n_cells(), tail, st)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn beta(&self, cells: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), cells.iter().chain(self.tail.iter()).copied())
    }

    /// `sup { <s, (I - AA†) w> : |Omega_e s|_1 <= 1 }`, unscaled.
    pub fn equality_sup(&self, w: &DVector<f64>) -> f64 {
        let v = w - &self.projector * w;
        let d = self.dim();
        let k = self.omega_e_null.ncols();
        let off = (self.omega_e_null.transpose() * &v).amax();
        if off > RANGE_TOL * (1.0 + w.amax()) {
            return f64::INFINITY;
        }
        if v.amax() <= ZERO_TOL * (1.0 + w.amax()) {
            return 0.0;
        }
        // With t = Omega_e s, the objective is <Omega_e^+ v, t> over t in the
        // range of Omega_e with |t|_1 <= 1.
        let z = &self.omega_e_pinv * &v;
        if k == 0 {
            return snap(z.amax());
        }
        // Variables t+ (d), t- (d), slack; rows N't = 0 and |t|_1 + slack = 1.
        let nv = 2 * d + 1;
        let mut m = DMatrix::zeros(k + 1, nv);
        for i in 0..k {
            for j in 0..d {
                let x = self.omega_e_null[(j, i)];
                m[(i, j)] = x;
                m[(i, d + j)] = -x;
            }
        }
        for j in 0..2 * d + 1 {
            m[(k, j)] = 1.0;
        }
        let mut b = DVector::zeros(k + 1);
        b[k] = 1.0;
        let mut c = DVector::zeros(nv);
        for j in 0..d {
            c[j] = z[j];
            c[d + j] = -z[j];
        }
        match solve(&StandardLP::max(c, m, b)) {
            Ok(r) if r.is_optimal() => snap(r.value),
            // t = 0 is always feasible; a failure here is numerical.
            _ => z.amax(),
        }
    }

    /// `sup { <A† s, A† w> : A† s <= 0, |Omega_i AA† s|_1 <= 1 }`, unscaled.
    ///
    /// Only the component of `s` in the column space of `A` matters, so the
    /// program runs over `s = U a` with `U` an orthonormal basis of that space.
    pub fn inequality_sup(&self, w: &DVector<f64>) -> Result<Sup> {
        let d = self.dim();
        let r = self.range_basis.ncols();
        let k = self.pinv.nrows();
        if r == 0 {
            return Ok(Sup::Finite(0.0, DVector::zeros(d)));
        }
        let c_a = self.range_basis.transpose() * (&self.gram * w);
        // Variables a+ (r), a- (r), t+ (d), t- (d), sigma (k), slack (1).
        let nv = 2 * r + 2 * d + k + 1;
        let rows = k + d + 1;
        let mut m = DMatrix::zeros(rows, nv);
        for i in 0..k {
            for j in 0..r {
                let x = self.pinv_u[(i, j)];
                m[(i, j)] = x;
                m[(i, r + j)] = -x;
            }
            m[(i, 2 * r + 2 * d + i)] = 1.0;
        }
        for i in 0..d {
            for j in 0..r {
                let x = self.omega_i_u[(i, j)];
                m[(k + i, j)] = x;
                m[(k + i, r + j)] = -x;
            }
            m[(k + i, 2 * r + i)] = -1.0;
            m[(k + i, 2 * r + d + i)] = 1.0;
        }
        for j in 2 * r..2 * r + 2 * d {
            m[(k + d, j)] = 1.0;
        }
        m[(k + d, nv - 1)] = 1.0;
        let mut b = DVector::zeros(rows);
        b[k + d] = 1.0;
        let mut c = DVector::zeros(nv);
        for j in 0..r {
            c[j] = c_a[j];
            c[r + j] = -c_a[j];
        }
        let res = solve(&StandardLP::max(c, m, b))?;
        let a = DVector::from_iterator(r, (0..r).map(|j| res.solution[j] - res.solution[r + j]));
        let s = &self.range_basis * &a;
        match res.status {
            LpStatus::Optimal => Ok(Sup::Finite(snap(res.value), s)),
            LpStatus::Unbounded => {
                let scale = a.amax().max(f64::MIN_POSITIVE);
                let a = a / scale;
                let ok = (&self.pinv_u * &a).max() <= 1e-9
                    && (&self.omega_i_u * &a).amax() <= 1e-9
                    && c_a.dot(&a) > 1e-12 * (1.0 + c_a.amax());
                if ok {
                    Ok(Sup::Unbounded(&self.range_basis * a))
                } else {
                    Err(Error::Numerical("inequality program returned an invalid ray".into()))
                }
            }
            LpStatus::Infeasible => Err(Error::Numerical("inequality program reported infeasible".into())),
        }
    }

    /// Whether some `x >= 0` meets the fixed tail rows. When not (e.g. `theta0`
    /// outside the range of `g` over the stratum) the null cannot hold.
    pub fn tail_feasible(&self) -> Result<bool> {
        let k = self.a.ncols();
        let nt = self.tail.len();
        let m = self.a.rows(self.n_cells, nt).into_owned();
        let r = solve(&StandardLP::min(DVector::zeros(k), m, DVector::from_vec(self.tail.clone())))?;
        Ok(r.status != LpStatus::Infeasible)
    }

    /// `(sqrt(n) * equality part, sqrt(n) * inequality part)` at `beta_hat`.
    pub fn statistic(&self, beta_hat: &DVector<f64>, n: u64) -> Result<(f64, f64)> {
        let rn = (n as f64).sqrt();
        let eq = self.equality_sup(beta_hat) * rn;
        let ineq = self.inequality_sup(beta_hat)?.value() * rn;
        Ok((eq, ineq))
    }

    /// `sup_s |<A† s, A†(beta_hat - b)>|` over the inequality set.
    fn criterion(&self, beta_hat: &DVector<f64>, b: &DVector<f64>) -> Result<(f64, Vec<Sup>)> {
        let w = beta_hat - b;
        let plus = self.inequality_sup(&w)?;
        let minus = self.inequality_sup(&(-w))?;
        Ok((plus.value().max(minus.value()), vec![plus, minus]))
    }

    /// Minimizes the criterion over `b = Ax`, `x >= 0`, tail of `b` fixed, by
    /// Kelley's cutting planes. Returns `(b, criterion, cuts)`.
    pub fn restricted_estimator(&self, beta_hat: &DVector<f64>) -> Result<(DVector<f64>, f64, usize)> {
        let k = self.a.ncols();
        let nt = self.tail.len();
        // Each cut: kappa + gamma'x <= eta (or <= 0 for rays).
        let mut cuts: Vec<(f64, DVector<f64>, bool)> = Vec::new();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut iterations = 0;
        loop {
            // Master: min eta over x >= 0 with the tail rows and the cuts.
            let nc = cuts.len();
            let nv = k + 1 + nc;
            let mut m = DMatrix::zeros(nt + nc, nv);
            let mut rhs = DVector::zeros(nt + nc);
            for t in 0..nt {
                for j in 0..k {
                    m[(t, j)] = self.a[(self.n_cells + t, j)];
                }
                rhs[t] = self.tail[t];
            }
            for (i, (kappa, gamma, optimality)) in cuts.iter().enumerate() {
                for j in 0..k {
                    m[(nt + i, j)] = -gamma[j];
                }
                if *optimality {
                    m[(nt + i, k)] = 1.0;
                }
                m[(nt + i, k + 1 + i)] = -1.0;
                rhs[nt + i] = *kappa;
            }
            let mut c = DVector::zeros(nv);
            c[k] = 1.0;
            let master = solve(&StandardLP::min(c, m, rhs))?;
            if master.status == LpStatus::Infeasible {
                return Err(Error::Numerical(format!(
                    "restricted estimator: no x >= 0 with the fixed tail ({} cuts)",
                    cuts.len()
                )));
            }
            let lower = master.value;
            let x = master.solution.rows(0, k).into_owned();
            let mut b = &self.a * &x;
            for t in 0..nt {
                b[self.n_cells + t] = self.tail[t];
            }
            let (value, sups) = self.criterion(beta_hat, &b)?;
            if best.as_ref().map_or(true, |(v, _)| value < *v) {
                best = Some((value, b.clone()));
            }
            let upper = best.as_ref().expect("set").0;
            if upper - lower < CUT_GAP {
                break;
            }
            if iterations >= MAX_CUTS {
                return Err(Error::Numerical(format!(
                    "restricted estimator did not converge: gap {:.3e} after {MAX_CUTS} cuts",
                    upper - lower
                )));
            }
            for (sign, sup) in [1.0, -1.0].into_iter().zip(sups) {
                let (s, optimality) = match sup {
                    Sup::Finite(_, s) => (s, true),
                    Sup::Unbounded(ray) => (ray, false),
                };
                // <c, sign (beta_hat - A x)> with c = A†'A† s.
                let cvec = &self.gram * &s;
                let kappa = sign * cvec.dot(beta_hat);
                let gamma = -(self.a.transpose() * &cvec) * sign;
                cuts.push((kappa, gamma, optimality));
            }
            iterations += 1;
        }
        let (value, b) = best.expect("at least one iterate");
        Ok((b, value, iterations))
    }

    /// One bootstrap replicate of the statistic.
    fn bootstrap_stat(
        &self,
        beta_hat: &DVector<f64>,
        beta_star: &DVector<f64>,
        shift: &DVector<f64>,
        n: u64,
    ) -> Result<f64> {
        let rn = (n as f64).sqrt();
        let diff = beta_star - beta_hat;
        let eq = self.equality_sup(&diff) * rn;
        let ineq = self.inequality_sup(&(diff * rn + shift))?.value();
        Ok(eq.max(ineq))
    }
}

/// Zeroes entries at rounding level relative to the largest one.
fn chop(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let cut = 1e-12 * m.amax();
    m.iter_mut().filter(|x| x.abs() <= cut).for_each(|x| *x = 0.0);
    m
}

/// Cells for the studentizers: instrument blocks with an empty cell are mixed
/// with the uniform distribution at weight `1 / (n_z + 1)` so the covariance
/// keeps the rank of the population one.
pub fn regularized(p: &ObservedDistribution) -> Result<ObservedDistribution> {
    let s = p.support();
    let block = s.ny() * s.nd();
    let sizes = p.stratum_sizes();
    let mut cells = p.cells().to_vec();
    for (z, chunk) in cells.chunks_mut(block).enumerate() {
        if chunk.iter().any(|&c| c <= 0.0) {
            let nz = sizes.as_ref().map_or(0, |v| v[z]) as f64;
            let w = 1.0 / (nz + 1.0);
            chunk.iter_mut().for_each(|c| *c = (1.0 - w) * *c + w / block as f64);
        }
    }
    ObservedDistribution::from_probabilities(s, cells, Some(p.z_marginal().to_vec()))
}

/// `higher` quantile: the smallest draw with at least `level` of the sample
/// at or below it.
pub fn quantile_higher(sorted: &[f64], level: f64) -> f64 {
    let b = sorted.len();
    let k = ((level * b as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(b) - 1]
}

fn sorted_draws(draws: &[f64]) -> Vec<f64> {
    let mut v = draws.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Bootstrap draws of the statistic under the null recentered at the
/// restricted estimator.
pub fn bootstrap_draws(
    system: &TestSystem,
    p: &ObservedDistribution,
    beta_restricted: &DVector<f64>,
    config: &TestConfig,
) -> Result<Vec<f64>> {
    let n = p.n();
    let beta_hat = system.beta(p.cells());
    // U_n(s) folds into the inequality objective as a shift of its argument.
    let shift = beta_restricted * (config.lambda_for(n) * (n as f64).sqrt());
    (0..config.bootstrap_b)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64);
            let cells = p.bootstrap_cells(&mut rng)?;
            system.bootstrap_stat(&beta_hat, &system.beta(&cells), &shift, n)
        })
        .collect()
}

/// Critical value `c_n(1 - alpha)` from the bootstrap draws.
pub fn critical_value(
    system: &TestSystem,
    p: &ObservedDistribution,
    beta_restricted: &DVector<f64>,
    config: &TestConfig,
) -> Result<f64> {
    config.validate()?;
    let draws = bootstrap_draws(system, p, beta_restricted, config)?;
    Ok(quantile_higher(&sorted_draws(&draws), 1.0 - config.alpha))
}

/// Range of `g` over the conditioning set; `theta(Q)` always lies inside it.
pub fn parameter_range(model: &StrataModel, param: &ParameterSpec) -> (f64, f64) {
    let s = model.support();
    param.conditioning().iter().map(|&r| param.g_at(s, r)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
        (lo.min(g), hi.max(g))
    })
}

fn run(system: &TestSystem, p: &ObservedDistribution, config: &TestConfig, theta0: Option<f64>) -> Result<TestOutcome> {
    run_in_range(system, p, config, theta0, true)
}

fn run_in_range(
    system: &TestSystem,
    p: &ObservedDistribution,
    config: &TestConfig,
    theta0: Option<f64>,
    in_range: bool,
) -> Result<TestOutcome> {
    config.validate()?;
    let n = p.n();
    if n == 0 || p.counts().is_none() {
        return Err(Error::Config("the test needs sample counts".into()));
    }
    let mut warnings = Vec::new();
    if config.bootstrap_b < 100 {
        warnings.push(format!("only {} bootstrap draws; at least 100 are recommended", config.bootstrap_b));
    }
    let beta_hat = system.beta(p.cells());
    let (eq, ineq) = system.statistic(&beta_hat, n)?;
    let statistic = eq.max(ineq);
    if !in_range || !system.tail_feasible()? {
        warnings.push(if in_range {
            "no latent distribution meets the mass and parameter rows; the null is impossible".into()
        } else {
            "theta0 lies outside the range of g over the stratum; the null is impossible".into()
        });
        return Ok(TestOutcome {
            theta0,
            statistic,
            critical_value: f64::NAN,
            reject: true,
            equality_part: eq,
            inequality_part: ineq,
            n,
            alpha: config.alpha,
            bootstrap_b: 0,
            lambda_n: config.lambda_for(n),
            seed: config.seed,
            restricted_criterion: f64::INFINITY,
            cutting_planes: 0,
            studentizer: STUDENTIZER_DEFINITION.to_string(),
            warnings,
            draws: None,
        });
    }
    let (beta_r, crit_r, cuts) = system.restricted_estimator(&beta_hat)?;
    let draws = bootstrap_draws(system, p, &beta_r, config)?;
    let critical = quantile_higher(&sorted_draws(&draws), 1.0 - config.alpha);
    if draws.iter().any(|d| d.is_infinite()) {
        warnings.push("some bootstrap draws are infinite".into());
    }
    Ok(TestOutcome {
        theta0,
        statistic,
        critical_value: critical,
        reject: statistic > critical,
        equality_part: eq,
        inequality_part: ineq,
        n,
        alpha: config.alpha,
        bootstrap_b: config.bootstrap_b,
        lambda_n: config.lambda_for(n),
        seed: config.seed,
        restricted_criterion: crit_r,
        cutting_planes: cuts,
        studentizer: STUDENTIZER_DEFINITION.to_string(),
        warnings,
        draws: config.keep_draws.then_some(draws),
    })
}

fn full_tail(system: &SystemMatrix) -> Vec<f64> {
    let beta = system.beta_from_cells(&vec![0.0; system.n_cells()], None);
    beta.full().as_slice()[system.n_cells()..].to_vec()
}

fn reduced_tail(system: &SystemMatrix) -> Vec<f64> {
    let beta = system.beta_from_cells(&vec![0.0; system.n_cells()], None);
    beta.without_param().as_slice()[system.n_cells()..].to_vec()
}

/// The plug-in test system for `H0: theta = theta0`.
pub fn parameter_system(
    theta0: f64,
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
) -> Result<TestSystem> {
    let system = build_a(model, param, theta0, true)?;
    TestSystem::plug_in(system.a().clone(), full_tail(&system), p)
}

/// Tests `theta(Q) = theta0`.
pub fn test(
    theta0: f64,
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    config: &TestConfig,
) -> Result<TestOutcome> {
    let system = parameter_system(theta0, model, param, p)?;
    let (lo, hi) = parameter_range(model, param);
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    run_in_range(&system, p, config, Some(theta0), theta0 >= lo - tol && theta0 <= hi + tol)
}

/// The plug-in test system for the model alone (`A0`, `beta0`).
pub fn specification_system(model: &StrataModel, p: &ObservedDistribution) -> Result<TestSystem> {
    let spec = ParameterSpec::new("model", model, GFunction::Constant { value: 0.0 }, model.admissible().to_vec())?;
    let system = build_a(model, &spec, 0.0, true)?;
    TestSystem::plug_in(system.a0(), reduced_tail(&system), p)
}

/// Tests whether some latent distribution in the model rationalizes `P`.
pub fn specification_test(model: &StrataModel, p: &ObservedDistribution, config: &TestConfig) -> Result<TestOutcome> {
    let system = specification_system(model, p)?;
    run(&system, p, config, None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta0: f64,
    #[serde(with = "crate::nonfinite")]
    pub statistic: f64,
    #[serde(with = "crate::nonfinite")]
    pub critical_value: f64,
    pub accept: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub alpha: f64,
    pub grid: Vec<GridPoint>,
    /// Maximal runs of accepted grid points, as `[first, last]`.
    pub intervals: Vec<(f64, f64)>,
    pub empty: bool,
    /// Estimated identified set used to center the default grid.
    pub plug_in_bounds: Option<(f64, f64)>,
}

const DEFAULT_GRID_N: usize = 41;
const GRID_PAD_STEPS: usize = 4;

/// The default `theta0` grid: the plug-in bounds (or the range of `g` over the
/// stratum if `P_hat` is outside the model) widened by four steps each side.
pub fn default_theta_grid(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
) -> Result<((f64, f64, usize), Option<(f64, f64)>)> {
    let cfg = GridConfig { grid_n: 201, ..Default::default() };
    let bounds = identified_set(model, param, p, &cfg)?;
    let plug = (bounds.status == BoundStatus::Nonempty).then_some((bounds.lower, bounds.upper));
    let (lo, hi) = match plug {
        Some(b) => b,
        None => parameter_range(model, param),
    };
    let n = DEFAULT_GRID_N;
    let step = if hi > lo { (hi - lo) / (n - 1) as f64 } else { 0.05 };
    let pad = GRID_PAD_STEPS as f64 * step;
    Ok(((lo - pad, hi + pad, n + 2 * GRID_PAD_STEPS), plug))
}

/// Inverts the test over a grid of `theta0` values.
pub fn confidence_region(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    config: &TestConfig,
) -> Result<ConfidenceRegion> {
    config.validate()?;
    let ((lo, hi, n), plug) = match config.theta_grid {
        Some(g) => (g, None),
        None => default_theta_grid(model, param, p)?,
    };
    let thetas = crate::idset::uniform_grid(lo, hi, n);
    let mut grid = Vec::with_capacity(thetas.len());
    for theta0 in thetas {
        let out = test(theta0, model, param, p, config)?;
        grid.push(GridPoint {
            theta0,
            statistic: out.statistic,
            critical_value: out.critical_value,
            accept: !out.reject,
        });
    }
    let mut intervals = Vec::new();
    let mut run_start: Option<f64> = None;
    let mut last = f64::NAN;
    for g in &grid {
        if g.accept {
            run_start.get_or_insert(g.theta0);
            last = g.theta0;
        } else if let Some(s) = run_start.take() {
            intervals.push((s, last));
        }
    }
    if let Some(s) = run_start {
        intervals.push((s, last));
    }
    Ok(ConfidenceRegion { alpha: config.alpha, empty: intervals.is_empty(), grid, intervals, plug_in_bounds: plug })
}
