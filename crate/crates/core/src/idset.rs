//! Sharp identified sets: consistency, the stratum-mass interval, and bounds
//! for the identified-mass and partially identified-mass cases.

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::ObservedDistribution;
use crate::error::{Error, Result};
use crate::linsys::{build_a, ColumnKind, SystemMatrix};
use crate::lp::{enumerate_dual, format_decimal_constraint, solve, LPResult, LpStatus, Scalar, StandardLP};
use crate::model::{GFunction, ParameterSpec, StrataModel};

/// Stratum masses at or below this are treated as zero.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Nonempty,
    /// No latent distribution in the model rationalizes `p`.
    EmptyModel,
    /// Every rationalizing distribution puts zero mass on the stratum.
    EmptyStratum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Consistency {
    pub feasible: bool,
    /// Farkas vector `y` with `y'A0 <= 0` and `y'beta0 > 0`.
    pub certificate: Option<Vec<f64>>,
    /// The violated implication `y'beta0(P) <= 0`, written over the cells.
    pub inequality: Option<String>,
    /// Amount by which the observed `p` violates it.
    pub violation: Option<f64>,
}

/// Feasibility of `A0 x = beta0`, `x >= 0`, with row names for reporting.
pub fn check_consistency_raw(
    a0: &DMatrix<f64>,
    beta0: &DVector<f64>,
    row_names: &[String],
) -> Result<Consistency> {
    let lp = StandardLP::min(DVector::zeros(a0.ncols()), a0.clone(), beta0.clone());
    let res = solve(&lp)?;
    match res.status {
        LpStatus::Infeasible => {
            let y = res.certificate;
            let scale = y.amax().max(f64::MIN_POSITIVE);
            let y = y / scale;
            // y'beta0 <= 0 splits into variable cells and constant rows.
            let (mut coefs, mut constant) = (Vec::new(), 0.0);
            let mut names = Vec::new();
            for (i, name) in row_names.iter().enumerate() {
                if name.starts_with("p[") {
                    coefs.push(y[i]);
                    names.push(name.clone());
                } else {
                    constant += y[i] * beta0[i];
                }
            }
            let text = format_decimal_constraint(&coefs, -constant, "<=", &names);
            let violation = y.dot(beta0);
            Ok(Consistency {
                feasible: false,
                certificate: Some(y.iter().copied().collect()),
                inequality: Some(text),
                violation: Some(violation),
            })
        }
        _ => Ok(Consistency { feasible: true, certificate: None, inequality: None, violation: None }),
    }
}

fn a0_row_names(system: &SystemMatrix) -> Vec<String> {
    system.a0_rows().iter().map(|&i| system.row_name(i)).collect()
}

/// Consistency of `p` with the model behind `system`.
pub fn check_consistency(system: &SystemMatrix, p: &ObservedDistribution) -> Result<Consistency> {
    let beta0 = system.beta(p, None).without_param();
    check_consistency_raw(&system.a0(), &beta0, &a0_row_names(system))
}

/// A system for the stratum-mass problem of `stratum` (the parameter row is
/// irrelevant there).
fn stratum_system(model: &StrataModel, stratum: &[usize]) -> Result<SystemMatrix> {
    let spec = ParameterSpec::new("stratum", model, GFunction::Constant { value: 1.0 }, stratum.to_vec())?;
    build_a(model, &spec, 0.0, true)
}

fn lp_pair(a: &DMatrix<f64>, b: &DVector<f64>, c: &[f64]) -> Result<(LPResult, LPResult)> {
    let c = DVector::from_column_slice(c);
    let lo = solve(&StandardLP::min(c.clone(), a.clone(), b.clone()))?;
    let hi = solve(&StandardLP::max(c, a.clone(), b.clone()))?;
    Ok((lo, hi))
}

fn infeasible_error(system: &SystemMatrix, p: &ObservedDistribution) -> Error {
    match check_consistency(system, p) {
        Ok(c) => Error::Infeasible(c.inequality.unwrap_or_else(|| "no certificate".into())),
        Err(e) => e,
    }
}

/// `[min, max]` of `Q{R in stratum}` over latent distributions in the model
/// that rationalize `p`.
pub fn stratum_mass_interval(
    model: &StrataModel,
    stratum: &[usize],
    p: &ObservedDistribution,
) -> Result<(f64, f64)> {
    let system = stratum_system(model, stratum)?;
    stratum_mass_on(&system, p)
}

fn stratum_mass_on(system: &SystemMatrix, p: &ObservedDistribution) -> Result<(f64, f64)> {
    let beta0 = system.beta(p, None).without_param();
    let (lo, hi) = lp_pair(&system.a0(), &beta0, system.conditioning_indicator())?;
    if lo.status == LpStatus::Infeasible || hi.status == LpStatus::Infeasible {
        return Err(infeasible_error(system, p));
    }
    if !lo.is_optimal() || !hi.is_optimal() {
        return Err(Error::Numerical("stratum-mass LP is unbounded".into()));
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    Ok((clamp(lo.value), clamp(hi.value.max(lo.value))))
}

/// A latent distribution attaining an endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub pi: f64,
    pub value: f64,
    /// `(type index, label, mass)` for the types with positive mass.
    pub masses: Vec<(usize, String, f64)>,
    /// Full solution vector over the system's columns (slacks included).
    #[serde(skip)]
    pub x: Vec<f64>,
}

fn witness(system: &SystemMatrix, x: &DVector<f64>, pi: f64, value: f64) -> Witness {
    let masses = system
        .columns()
        .iter()
        .enumerate()
        .filter_map(|(j, c)| match *c {
            ColumnKind::Type(r) if x[j] > 1e-12 => Some((r, system.column_name(j), x[j])),
            _ => None,
        })
        .collect();
    Witness { pi, value, masses, x: x.iter().copied().collect() }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid_points: usize,
    pub lp_solves: usize,
    pub skipped_pi: Vec<f64>,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundResult {
    pub status: BoundStatus,
    #[serde(with = "crate::nonfinite")]
    pub lower: f64,
    #[serde(with = "crate::nonfinite")]
    pub upper: f64,
    pub lower_attained: bool,
    pub upper_attained: bool,
    /// `Q{R in R'}` interval.
    pub pi_interval: Option<(f64, f64)>,
    pub method: String,
    pub diagnostics: Diagnostics,
    pub witness_lower: Option<Witness>,
    pub witness_upper: Option<Witness>,
    pub consistency: Option<Consistency>,
}

impl BoundResult {
    fn empty(status: BoundStatus, method: &str, consistency: Option<Consistency>) -> Self {
        Self {
            status,
            lower: f64::NAN,
            upper: f64::NAN,
            lower_attained: false,
            upper_attained: false,
            pi_interval: None,
            method: method.into(),
            diagnostics: Diagnostics::default(),
            witness_lower: None,
            witness_upper: None,
            consistency,
        }
    }

    pub fn is_nonempty(&self) -> bool {
        self.status == BoundStatus::Nonempty
    }
}

/// Bounds when `Q{R in R'} = mass` is identified: min and max of
/// `sum_r g(r) 1{r in R'} q(r) / mass` over `A0 q = beta0`, `q >= 0`.
pub fn bounds_identified_mass(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    mass: f64,
) -> Result<BoundResult> {
    let system = build_a(model, param, 0.0, true)?;
    identified_on(&system, p, mass)
}

fn identified_on(system: &SystemMatrix, p: &ObservedDistribution, mass: f64) -> Result<BoundResult> {
    let method = "identified_mass";
    if !(mass > MASS_TOL) {
        return Ok(BoundResult::empty(BoundStatus::EmptyStratum, method, None));
    }
    let beta0 = system.beta(p, None).without_param();
    let c: Vec<f64> = system.g_masked().iter().map(|g| g / mass).collect();
    let (lo, hi) = lp_pair(&system.a0(), &beta0, &c)?;
    if lo.status == LpStatus::Infeasible {
        let cons = check_consistency(system, p)?;
        return Ok(BoundResult::empty(BoundStatus::EmptyModel, method, Some(cons)));
    }
    if !lo.is_optimal() || !hi.is_optimal() {
        return Err(Error::Numerical("identified-mass LP is unbounded".into()));
    }
    Ok(BoundResult {
        status: BoundStatus::Nonempty,
        lower: lo.value,
        upper: hi.value,
        lower_attained: true,
        upper_attained: true,
        pi_interval: Some((mass, mass)),
        method: method.into(),
        diagnostics: Diagnostics { grid_points: 0, lp_solves: 2, ..Default::default() },
        witness_lower: Some(witness(system, &lo.solution, mass, lo.value)),
        witness_upper: Some(witness(system, &hi.solution, mass, hi.value)),
        consistency: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub grid_n: usize,
    pub pi_floor: f64,
    pub refine: usize,
    /// Replaces the sharp stratum-mass interval in the outer search.
    pub pi_override: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { grid_n: 1001, pi_floor: 1e-6, refine: 5, pi_override: None }
    }
}

/// Uniform grid of `n` points on `[lo, hi]` (one point when `lo == hi`).
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect()
}

/// Grid optimization of `f` over `[lo, hi]` followed by `refine` rounds that
/// bisect towards the best point. `f` returns `None` where undefined.
/// Returns `(argbest, best, payload)`; ties go to the smallest argument.
pub fn grid_optimize<T: Send>(
    lo: f64,
    hi: f64,
    n: usize,
    refine: usize,
    maximize: bool,
    f: impl Fn(f64) -> Option<(f64, T)> + Sync,
) -> Option<(f64, f64, T)> {
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let grid = uniform_grid(lo, hi, n);
    let evals: Vec<Option<(f64, T)>> = grid.par_iter().map(|&x| f(x)).collect();
    let mut best: Option<(usize, f64, T)> = None;
    for (k, e) in evals.into_iter().enumerate() {
        if let Some((v, t)) = e {
            if best.as_ref().map_or(true, |(_, bv, _)| better(v, *bv)) {
                best = Some((k, v, t));
            }
        }
    }
    let (k, mut bv, mut bt) = best?;
    let mut bx = grid[k];
    let mut step = if grid.len() > 1 { (hi - lo) / (grid.len() - 1) as f64 } else { 0.0 };
    for _ in 0..refine {
        if step <= 0.0 {
            break;
        }
        step /= 2.0;
        let cands: Vec<f64> = [bx - step, bx + step].into_iter().filter(|x| *x >= lo && *x <= hi).collect();
        let evals: Vec<Option<(f64, T)>> = cands.par_iter().map(|&x| f(x)).collect();
        for (x, e) in cands.into_iter().zip(evals) {
            if let Some((v, t)) = e {
                if better(v, bv) {
                    bx = x;
                    bv = v;
                    bt = t;
                }
            }
        }
    }
    Some((bx, bv, bt))
}

struct Inner {
    value: f64,
    x: DVector<f64>,
}

/// Two-step bounds: the outer search over `pi` in the stratum-mass interval
/// of inner LPs over `A(R') q = beta(P, pi)`, `q >= 0`.
pub fn bounds_partial_mass(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    config: &GridConfig,
) -> Result<BoundResult> {
    let system = build_a(model, param, 0.0, true)?;
    partial_on(&system, p, config)
}

fn partial_on(system: &SystemMatrix, p: &ObservedDistribution, config: &GridConfig) -> Result<BoundResult> {
    let method = "partial_mass";
    let sharp = match stratum_mass_on(system, p) {
        Ok(iv) => iv,
        Err(Error::Infeasible(_)) => {
            let cons = check_consistency(system, p)?;
            return Ok(BoundResult::empty(BoundStatus::EmptyModel, method, Some(cons)));
        }
        Err(e) => return Err(e),
    };
    let (pi_min, pi_max) = config.pi_override.unwrap_or(sharp);
    if !(pi_max > MASS_TOL) {
        let mut r = BoundResult::empty(BoundStatus::EmptyStratum, method, None);
        r.pi_interval = Some((pi_min, pi_max));
        return Ok(r);
    }
    let lo = pi_min.max(config.pi_floor);
    let hi = pi_max;
    let a_cond = system.a_conditioning();
    let g = DVector::from_column_slice(system.g_masked());
    let solves = std::sync::atomic::AtomicUsize::new(0);
    let skipped = std::sync::Mutex::new(Vec::<f64>::new());

    let inner = |pi: f64, maximize: bool| -> Option<(f64, Inner)> {
        let b = system.beta(p, Some(pi)).full();
        let lp = if maximize {
            StandardLP::max(g.clone(), a_cond.clone(), b)
        } else {
            StandardLP::min(g.clone(), a_cond.clone(), b)
        };
        solves.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        match solve(&lp) {
            Ok(res) if res.is_optimal() => Some((res.value / pi, Inner { value: res.value, x: res.solution })),
            _ => {
                skipped.lock().expect("lock").push(pi);
                None
            }
        }
    };

    let low = grid_optimize(lo, hi, config.grid_n, config.refine, false, |pi| inner(pi, false));
    let high = grid_optimize(lo, hi, config.grid_n, config.refine, true, |pi| inner(pi, true));
    let mut diagnostics = Diagnostics {
        grid_points: uniform_grid(lo, hi, config.grid_n).len(),
        lp_solves: solves.load(std::sync::atomic::Ordering::Relaxed) + 2,
        ..Default::default()
    };
    let mut skipped = skipped.into_inner().expect("lock");
    skipped.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    skipped.dedup();
    let inside = |x: f64| x > sharp.0 + 1e-9 && x < sharp.1 - 1e-9;
    if skipped.iter().any(|&x| inside(x)) {
        diagnostics.messages.push("inner LP infeasible strictly inside the stratum-mass interval".into());
    }
    if !skipped.is_empty() {
        diagnostics.messages.push(format!("{} grid values of pi skipped as infeasible", skipped.len()));
    }
    diagnostics.skipped_pi = skipped;
    if pi_min < config.pi_floor {
        diagnostics.messages.push(format!(
            "stratum mass can approach zero; outer search starts at pi_floor = {}",
            config.pi_floor
        ));
    }
    let (Some((pl, vl, il)), Some((pu, vu, iu))) = (low, high) else {
        let mut r = BoundResult::empty(BoundStatus::EmptyModel, method, None);
        r.pi_interval = Some((pi_min, pi_max));
        r.diagnostics = diagnostics;
        r.diagnostics.messages.push("every inner LP was infeasible".into());
        return Ok(r);
    };
    let open_at_floor = |x: f64| pi_min < config.pi_floor && (x - lo).abs() <= 1e-12;
    Ok(BoundResult {
        status: BoundStatus::Nonempty,
        lower: vl,
        upper: vu,
        lower_attained: !open_at_floor(pl),
        upper_attained: !open_at_floor(pu),
        pi_interval: Some((pi_min, pi_max)),
        method: method.into(),
        diagnostics,
        witness_lower: Some(witness(system, &il.x, pl, il.value / pl)),
        witness_upper: Some(witness(system, &iu.x, pu, iu.value / pu)),
        consistency: None,
    })
}

/// The identified set for `theta(Q) = E[g(R) | R in R']`: identified-mass
/// bounds when the stratum mass is a single value, the two-step search
/// otherwise.
pub fn identified_set(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    config: &GridConfig,
) -> Result<BoundResult> {
    let system = build_a(model, param, 0.0, true)?;
    if config.pi_override.is_none() {
        match stratum_mass_on(&system, p) {
            Ok((lo, hi)) if hi - lo <= MASS_TOL => {
                let mut r = identified_on(&system, p, hi)?;
                r.pi_interval = Some((lo, hi));
                return Ok(r);
            }
            Ok(_) => {}
            Err(Error::Infeasible(_)) => {
                let cons = check_consistency(&system, p)?;
                return Ok(BoundResult::empty(BoundStatus::EmptyModel, "consistency", Some(cons)));
            }
            Err(e) => return Err(e),
        }
    }
    partial_on(&system, p, config)
}

/// Closed-form endpoints from dual vertices: `lower = max_j e_j(P) / mass`,
/// `upper = min_j f_j(P) / mass`, each `e_j`, `f_j` affine in the cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedForm {
    pub lower_terms: Vec<String>,
    pub upper_terms: Vec<String>,
    pub lower_value: f64,
    pub upper_value: f64,
}

fn affine_text(coefs: &[BigRational], constant: &BigRational, names: &[String]) -> String {
    use crate::lp::format_rational_constraint;
    let line = format_rational_constraint(coefs, constant, "=", names);
    // "terms = c" -> "terms + c"
    let (lhs, rhs) = line.rsplit_once(" = ").expect("formatted with =");
    if rhs == "0" {
        lhs.to_string()
    } else if lhs == "0" {
        rhs.to_string()
    } else if let Some(neg) = rhs.strip_prefix('-') {
        format!("{lhs} - {neg}")
    } else {
        format!("{lhs} + {rhs}")
    }
}

/// Vertex expressions of the identified-mass bounds (exact arithmetic).
pub fn closed_form(
    model: &StrataModel,
    param: &ParameterSpec,
    p: &ObservedDistribution,
    mass: f64,
) -> Result<ClosedForm> {
    let system = build_a(model, param, 0.0, true)?;
    let a0 = system.a0();
    let beta0 = system.beta(p, None).without_param();
    let rows = system.a0_rows();
    let n_cells = system.n_cells();
    let names: Vec<String> = (0..n_cells).map(|i| system.row_name(i)).collect();
    let g = system.g_masked().to_vec();
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut terms = Vec::new();
    let mut values = Vec::new();
    for (c, flip) in [(&g, false), (&neg, true)] {
        let dual = enumerate_dual::<BigRational>(&a0, c)?;
        let mut t = Vec::new();
        for v in &dual.poly.vertices {
            let sign = if flip { BigRational::from_i64(-1) } else { BigRational::from_i64(1) };
            let coefs: Vec<BigRational> = v[..n_cells].iter().map(|x| x * &sign).collect();
            let mut constant = BigRational::from_i64(0);
            for k in n_cells..rows.len() {
                constant += &v[k] * &sign * BigRational::from_f64(beta0[k]);
            }
            t.push(affine_text(&coefs, &constant, &names));
        }
        t.sort();
        t.dedup();
        terms.push(t);
        let best = dual.max_value(beta0.as_slice());
        values.push(if flip { -best } else { best } / mass);
    }
    let upper_terms = terms.pop().expect("two passes");
    let lower_terms = terms.pop().expect("two passes");
    Ok(ClosedForm { lower_terms, upper_terms, lower_value: values[0], upper_value: values[1] })
}
