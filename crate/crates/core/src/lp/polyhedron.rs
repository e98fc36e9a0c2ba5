//! V- and H-representations, the dual vertex enumeration and the image
//! polytope of the observation map.

use nalgebra::DMatrix;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::dd::extreme_rays;
use super::exact::{independent_rows, nullspace, rref, Mat};
use super::scalar::{dot, format_rational, Scalar};
use crate::error::{Error, Result};
use crate::model::StrataModel;

/// Cap on the number of dual constraints (primal columns).
pub const DUAL_ROW_CAP: usize = 5000;
/// Cap on the dimension of the affine hull in `image_polytope_hrep`.
pub const HULL_DIM_CAP: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedronV<S> {
    pub vertices: Vec<Vec<S>>,
    /// Extreme rays, unit infinity norm.
    pub rays: Vec<Vec<S>>,
}

/// `{x : a'x = b for equalities, a'x <= b for inequalities}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedronH<S> {
    pub equalities: Vec<(Vec<S>, S)>,
    pub inequalities: Vec<(Vec<S>, S)>,
}

fn to_mat<S: Scalar>(m: &DMatrix<f64>) -> Mat<S> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| S::from_f64(m[(i, j)])).collect()).collect()
}

fn same_point<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.sub(y).is_zero())
}

fn dedup_points<S: Scalar>(points: Vec<Vec<S>>) -> Vec<Vec<S>> {
    let mut out: Vec<Vec<S>> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| same_point(q, &p)) {
            out.push(p);
        }
    }
    out
}

impl<S: Scalar> PolyhedronV<S> {
    pub fn to_f64(&self) -> PolyhedronV<f64> {
        let conv = |v: &Vec<Vec<S>>| v.iter().map(|p| p.iter().map(S::to_f64).collect()).collect();
        PolyhedronV { vertices: conv(&self.vertices), rays: conv(&self.rays) }
    }
}

impl<S: Scalar> PolyhedronH<S> {
    /// Inequality matrix `G` of `G x <= h`.
    pub fn g(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(self.inequalities.len(), n, |i, j| self.inequalities[i].0[j].to_f64())
    }

    /// Offsets `h` of `G x <= h`.
    pub fn h(&self) -> Vec<f64> {
        self.inequalities.iter().map(|(_, b)| b.to_f64()).collect()
    }

    pub fn dim(&self) -> usize {
        self.equalities
            .first()
            .or(self.inequalities.first())
            .map_or(0, |(a, _)| a.len())
    }

    /// Largest violation of any constraint at `x` (zero or negative when
    /// `x` lies inside).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eval = |a: &[S]| a.iter().zip(x).map(|(c, v)| c.to_f64() * v).sum::<f64>();
        let mut worst = f64::NEG_INFINITY;
        for (a, b) in &self.equalities {
            worst = worst.max((eval(a) - b.to_f64()).abs());
        }
        for (a, b) in &self.inequalities {
            worst = worst.max(eval(a) - b.to_f64());
        }
        worst
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }
}

/// Scales a rational constraint to primitive integer coefficients.
fn primitive(a: &mut Vec<BigRational>, b: &mut BigRational) {
    let mut lcm = num_bigint::BigInt::one();
    for x in a.iter().chain(std::iter::once(&*b)) {
        lcm = lcm.lcm(x.denom());
    }
    let scale = BigRational::from_integer(lcm);
    let mut ints: Vec<num_bigint::BigInt> = Vec::with_capacity(a.len() + 1);
    for x in a.iter_mut().chain(std::iter::once(&mut *b)) {
        *x = &*x * &scale;
        ints.push(x.numer().clone());
    }
    let g = ints.iter().fold(num_bigint::BigInt::zero(), |acc, v| acc.gcd(v));
    if !g.is_zero() && !g.is_one() {
        let g = BigRational::from_integer(g);
        for x in a.iter_mut().chain(std::iter::once(b)) {
            *x = &*x / &g;
        }
    }
}

/// Canonical scaling: primitive integers for rationals, unit infinity norm for
/// floats. Equalities are additionally given a positive leading coefficient.
fn canonical<S: Scalar>(a: &mut Vec<S>, b: &mut S, equality: bool) {
    if S::exact() {
        // Route through BigRational when S is BigRational.
        if let Some(ra) = (a as &mut dyn std::any::Any).downcast_mut::<Vec<BigRational>>() {
            let rb = (b as &mut dyn std::any::Any).downcast_mut::<BigRational>().expect("same type");
            primitive(ra, rb);
        }
    } else {
        let m = a.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max);
        if m > 0.0 {
            let s = S::from_f64(m);
            a.iter_mut().for_each(|x| *x = x.div(&s));
            *b = b.div(&s);
        }
    }
    if equality {
        if let Some(lead) = a.iter().find(|x| !x.is_zero()) {
            if lead.sign() < 0 {
                a.iter_mut().for_each(|x| *x = x.neg());
                *b = b.neg();
            }
        }
    }
}

/// Vertices and rays of `{r : A0' r <= c}`.
///
/// Linearly dependent rows of `A0` are dropped first (greedily, in row order),
/// which removes the lineality space and makes the polyhedron pointed; the
/// returned points put zero weight on the dropped rows. For any `beta0` in the
/// column space of `A0` the objective `beta0' r` is unaffected by the choice.
pub fn enumerate_dual<S: Scalar>(a0: &DMatrix<f64>, c: &[f64]) -> Result<DualPolyhedron<S>> {
    let (m, n) = a0.shape();
    if c.len() != n {
        return Err(Error::Dimension("cost vector length must equal the column count".into()));
    }
    if n > DUAL_ROW_CAP {
        return Err(Error::SizeGuard(format!(
            "dual has {n} constraints, above the cap of {DUAL_ROW_CAP}"
        )));
    }
    let rows: Mat<S> = to_mat(a0);
    let kept = independent_rows(&rows, &(0..m).collect::<Vec<_>>());
    let k = kept.len();
    // Homogenized cone in (r_kept, t): A_K' r - c t <= 0, -t <= 0.
    let mut g: Mat<S> = (0..n)
        .map(|j| {
            let mut row: Vec<S> = kept.iter().map(|&i| rows[i][j].clone()).collect();
            row.push(S::from_f64(c[j]).neg());
            row
        })
        .collect();
    let mut last = vec![S::zero(); k + 1];
    last[k] = S::one().neg();
    g.push(last);
    let cone = extreme_rays(&g, k + 1)?;

    let lift = |v: &[S]| {
        let mut full = vec![S::zero(); m];
        for (pos, &i) in kept.iter().enumerate() {
            full[i] = v[pos].clone();
        }
        full
    };
    let mut vertices = Vec::new();
    let mut rays = Vec::new();
    for ray in cone {
        let t = ray[k].clone();
        if t.sign() > 0 {
            let v: Vec<S> = ray[..k].iter().map(|x| x.div(&t)).collect();
            vertices.push(lift(&v));
        } else {
            rays.push(lift(&ray[..k]));
        }
    }
    Ok(DualPolyhedron { poly: PolyhedronV { vertices: dedup_points(vertices), rays }, kept_rows: kept })
}

#[derive(Debug, Clone)]
pub struct DualPolyhedron<S> {
    pub poly: PolyhedronV<S>,
    /// Rows of `A0` retained after dropping dependent ones.
    pub kept_rows: Vec<usize>,
}

impl<S: Scalar> DualPolyhedron<S> {
    /// `max_j beta' r_j` over the vertices; `+inf` if some ray has
    /// `beta' rho > 0`.
    pub fn max_value(&self, beta: &[f64]) -> f64 {
        let val = |v: &Vec<S>| v.iter().zip(beta).map(|(x, b)| x.to_f64() * b).sum::<f64>();
        if self.poly.rays.iter().any(|r| val(r) > 1e-9) {
            return f64::INFINITY;
        }
        self.poly.vertices.iter().map(val).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Vertices `e_r` of the response-type simplex over `admissible`, in `R^dim`.
pub fn vrep_of_simplex(admissible: &[usize], dim: usize) -> Result<PolyhedronV<f64>> {
    if admissible.is_empty() {
        return Err(Error::InvalidModel("admissible set is empty".into()));
    }
    let vertices = admissible
        .iter()
        .map(|&r| {
            if r >= dim {
                return Err(Error::Dimension(format!("type {r} outside dimension {dim}")));
            }
            let mut e = vec![0.0; dim];
            e[r] = 1.0;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolyhedronV { vertices, rays: Vec::new() })
}

/// H-representation of the convex hull of `points`.
///
/// Equalities span the affine hull. Facets come from the cone
/// `{(a, b) : a'u_i <= b}` over chart coordinates `u_i` (the pivot columns of
/// the point differences), lifted back by zero padding.
pub fn convex_hull_hrep<S: Scalar>(points: &[Vec<S>]) -> Result<PolyhedronH<S>> {
    let Some(v0) = points.first() else {
        return Err(Error::InvalidModel("no points".into()));
    };
    let n = v0.len();
    // Affine hull: nullspace of [V | -1].
    let hull_rows: Mat<S> = points
        .iter()
        .map(|p| {
            let mut r = p.clone();
            r.push(S::one().neg());
            r
        })
        .collect();
    let mut equalities = Vec::new();
    let mut eq_basis = nullspace(&hull_rows, n + 1);
    if !eq_basis.is_empty() {
        // Reduce the equality system for readability.
        rref(&mut eq_basis);
        for mut v in eq_basis.into_iter().filter(|v| v.iter().any(|x| !x.is_zero())) {
            let mut b = v.pop().expect("nonempty");
            canonical(&mut v, &mut b, true);
            equalities.push((v, b));
        }
    }

    let mut diffs: Mat<S> = points
        .iter()
        .skip(1)
        .map(|p| p.iter().zip(v0).map(|(x, y)| x.sub(y)).collect())
        .collect();
    let pivots = if diffs.is_empty() { Vec::new() } else { rref(&mut diffs) };
    let h = pivots.len();
    if h > HULL_DIM_CAP {
        return Err(Error::SizeGuard(format!(
            "hull dimension {h} exceeds the cap of {HULL_DIM_CAP}"
        )));
    }
    let mut inequalities: Vec<(Vec<S>, S)> = Vec::new();
    if h > 0 {
        let cone: Mat<S> = points
            .iter()
            .map(|p| {
                let mut r: Vec<S> = pivots.iter().map(|&j| p[j].clone()).collect();
                r.push(S::one().neg());
                r
            })
            .collect();
        for ray in extreme_rays(&cone, h + 1)? {
            if ray[..h].iter().all(|x| x.is_zero()) {
                continue;
            }
            let mut a = vec![S::zero(); n];
            for (k, &j) in pivots.iter().enumerate() {
                a[j] = ray[k].clone();
            }
            let mut b = ray[h].clone();
            canonical(&mut a, &mut b, false);
            if !inequalities.iter().any(|(x, y)| same_point(x, &a) && y.sub(&b).is_zero()) {
                inequalities.push((a, b));
            }
        }
    }
    Ok(PolyhedronH { equalities, inequalities })
}

/// Observation points `A1 e_r` for the given types.
pub fn observation_points<S: Scalar>(model: &StrataModel, types: &[usize]) -> Vec<Vec<S>> {
    let s = model.support();
    types
        .iter()
        .map(|&r| {
            let rt = s.response_type(r);
            let mut v = vec![S::zero(); s.n_cells()];
            for z in 0..s.nz() {
                let d = rt.d(z);
                v[s.cell_index(rt.y(d), d, z)] = S::one();
            }
            v
        })
        .collect()
}

/// The model's sharp testable implications: an H-representation of
/// `{A1 q : q in the simplex over the admissible set}`.
pub fn image_polytope_hrep<S: Scalar>(model: &StrataModel) -> Result<PolyhedronH<S>> {
    let points = dedup_points(observation_points::<S>(model, model.admissible()));
    convex_hull_hrep(&points)
}

/// V-representation of an H-polyhedron. Requires the polyhedron to be
/// pointed within its equality-defined affine subspace.
pub fn hrep_to_vrep<S: Scalar>(poly: &PolyhedronH<S>) -> Result<PolyhedronV<S>> {
    let n = poly.dim();
    // Particular solution and direction basis of the equality system.
    let mut aug: Mat<S> = poly
        .equalities
        .iter()
        .map(|(a, b)| {
            let mut r = a.clone();
            r.push(b.clone());
            r
        })
        .collect();
    let pivots = if aug.is_empty() { Vec::new() } else { rref(&mut aug) };
    if pivots.contains(&n) {
        return Ok(PolyhedronV { vertices: Vec::new(), rays: Vec::new() });
    }
    let mut x0 = vec![S::zero(); n];
    for (r, &p) in pivots.iter().enumerate() {
        x0[p] = aug[r][n].clone();
    }
    let eq_rows: Mat<S> = poly.equalities.iter().map(|(a, _)| a.clone()).collect();
    let basis: Vec<Vec<S>> = if eq_rows.is_empty() {
        (0..n)
            .map(|i| {
                let mut e = vec![S::zero(); n];
                e[i] = S::one();
                e
            })
            .collect()
    } else {
        nullspace(&eq_rows, n)
    };
    let k = basis.len();
    let at = |t: &[S]| -> Vec<S> {
        (0..n)
            .map(|i| basis.iter().zip(t).fold(x0[i].clone(), |acc, (b, ti)| acc.add(&b[i].mul(ti))))
            .collect()
    };
    if k == 0 {
        let inside = poly.inequalities.iter().all(|(a, b)| dot(a, &x0).sub(b).sign() <= 0);
        let vertices = if inside { vec![x0] } else { Vec::new() };
        return Ok(PolyhedronV { vertices, rays: Vec::new() });
    }
    let mut cone: Mat<S> = poly
        .inequalities
        .iter()
        .map(|(a, b)| {
            let mut row: Vec<S> = basis.iter().map(|bv| dot(a, bv)).collect();
            row.push(b.sub(&dot(a, &x0)).neg());
            row
        })
        .collect();
    let mut last = vec![S::zero(); k + 1];
    last[k] = S::one().neg();
    cone.push(last);
    let mut vertices = Vec::new();
    let mut rays = Vec::new();
    for ray in extreme_rays(&cone, k + 1)? {
        let s = ray[k].clone();
        if s.sign() > 0 {
            let t: Vec<S> = ray[..k].iter().map(|x| x.div(&s)).collect();
            vertices.push(at(&t));
        } else {
            let mut d: Vec<S> = (0..n)
                .map(|i| basis.iter().zip(&ray[..k]).fold(S::zero(), |acc, (b, ti)| acc.add(&b[i].mul(ti))))
                .collect();
            super::scalar::normalize_inf(&mut d);
            rays.push(d);
        }
    }
    Ok(PolyhedronV { vertices: dedup_points(vertices), rays })
}

fn format_terms(coefs: &[String], names: &[String]) -> String {
    let mut out = String::new();
    for (c, name) in coefs.iter().zip(names) {
        if c == "0" {
            continue;
        }
        let (neg, mag) = match c.strip_prefix('-') {
            Some(m) => (true, m),
            None => (false, c.as_str()),
        };
        if out.is_empty() {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        if mag != "1" {
            out.push_str(mag);
            out.push(' ');
        }
        out.push_str(name);
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// Formats `sum c_i name_i <rel> rhs` with rational coefficients.
pub fn format_rational_constraint(a: &[BigRational], b: &BigRational, rel: &str, names: &[String]) -> String {
    let coefs: Vec<String> = a.iter().map(format_rational).collect();
    format!("{} {rel} {}", format_terms(&coefs, names), format_rational(b))
}

/// Formats `sum c_i name_i <rel> rhs` with decimal coefficients.
pub fn format_decimal_constraint(a: &[f64], b: f64, rel: &str, names: &[String]) -> String {
    let fmt = |x: f64| {
        if x.abs() < 1e-12 {
            "0".to_string()
        } else {
            let s = format!("{x:.6}");
            let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
            if s == "-0" { "0".into() } else { s }
        }
    };
    let coefs: Vec<String> = a.iter().map(|&x| fmt(x)).collect();
    format!("{} {rel} {}", format_terms(&coefs, names), fmt(b))
}

impl PolyhedronH<BigRational> {
    /// One constraint per line over the given coordinate names.
    pub fn to_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        for (a, b) in &self.equalities {
            out.push_str(&format_rational_constraint(a, b, "=", names));
            out.push('\n');
        }
        for (a, b) in &self.inequalities {
            out.push_str(&format_rational_constraint(a, b, "<=", names));
            out.push('\n');
        }
        out
    }

    /// Inequalities that are not implied by nonnegativity of a single
    /// coordinate.
    pub fn nontrivial_inequalities(&self) -> Vec<&(Vec<BigRational>, BigRational)> {
        self.inequalities
            .iter()
            .filter(|(a, b)| {
                let nz = a.iter().filter(|x| !Zero::is_zero(*x)).count();
                !(nz == 1 && Zero::is_zero(b) && a.iter().any(|x| x.is_negative()))
            })
            .collect()
    }

    /// Inequalities not implied by `x >= 0` with each block summing to one,
    /// i.e. those that are not valid on the whole product of simplices.
    pub fn beyond_simplices(&self, blocks: &[std::ops::Range<usize>]) -> Vec<&(Vec<BigRational>, BigRational)> {
        self.inequalities
            .iter()
            .filter(|(a, b)| {
                let mut worst = <BigRational as Zero>::zero();
                for block in blocks {
                    let top = a[block.clone()].iter().max().cloned().unwrap_or_else(<BigRational as Zero>::zero);
                    worst += top;
                }
                worst > *b
            })
            .collect()
    }
}
