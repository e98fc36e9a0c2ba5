//! Dense two-phase simplex with Bland's rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
/// Ratio-test ties only pivot on entries at least this fraction of the
/// largest tied entry.
const PIVOT_REL: f64 = 1e-3;
const MAX_ITER: usize = 200_000;
/// Pivots between refactorizations of the tableau.
const REFACTOR_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Min,
    Max,
}

/// `opt c'x` subject to `M x = b`, `x >= 0`.
#[derive(Debug, Clone)]
pub struct StandardLP {
    pub c: DVector<f64>,
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sense: Sense,
}

impl StandardLP {
    pub fn new(c: DVector<f64>, m: DMatrix<f64>, b: DVector<f64>, sense: Sense) -> Self {
        Self { c, m, b, sense }
    }

    pub fn min(c: DVector<f64>, m: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self::new(c, m, b, Sense::Min)
    }

    pub fn max(c: DVector<f64>, m: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self::new(c, m, b, Sense::Max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LPResult {
    pub status: LpStatus,
    /// Optimal value; `+inf`/`-inf` by sense when infeasible or unbounded.
    pub value: f64,
    /// Optimal point, or an improving ray when unbounded; empty when
    /// infeasible.
    pub solution: DVector<f64>,
    /// Dual solution `y` with `b'y = value` when optimal (feasible for
    /// `M'y <= c` under `min`, `M'y >= c` under `max`); a Farkas vector with
    /// `y'M <= 0`, `y'b > 0` when infeasible.
    pub certificate: DVector<f64>,
    pub iterations: usize,
}

impl LPResult {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

struct Tableau {
    rows: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let w = self.width + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        self.t[r * w + c] = 1.0;
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                let row = &mut self.t[i * w..(i + 1) * w];
                for (x, pj) in row.iter_mut().zip(&prow) {
                    *x -= f * pj;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for (x, pj) in obj.iter_mut().zip(&prow) {
                *x -= f * pj;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Recomputes the tableau and reduced costs from the original data for
    /// the current basis, discarding accumulated rounding.
    fn refactor(&mut self, orig: &[f64], costs: &[f64], obj: &mut [f64]) {
        let w = self.width + 1;
        let mut bm = DMatrix::zeros(self.rows, self.rows);
        for (k, &j) in self.basis.iter().enumerate() {
            for i in 0..self.rows {
                bm[(i, k)] = orig[i * w + j];
            }
        }
        let Some(inv) = bm.lu().try_inverse() else {
            return;
        };
        let full = DMatrix::from_row_slice(self.rows, w, orig);
        let t = inv * full;
        if t.iter().any(|v| !v.is_finite()) {
            return;
        }
        for i in 0..self.rows {
            for j in 0..w {
                self.t[i * w + j] = t[(i, j)];
            }
            self.t[i * w + self.basis[i]] = 1.0;
        }
        for j in 0..w {
            let base = if j < self.width { costs[j] } else { 0.0 };
            let dot: f64 = (0..self.rows).map(|i| costs[self.basis[i]] * self.t[i * w + j]).sum();
            obj[j] = base - dot;
        }
        for &j in &self.basis {
            obj[j] = 0.0;
        }
    }

    /// Runs Bland's rule on `obj` (reduced costs with `-z` in the last slot)
    /// over columns `< allowed`. Returns the unbounded column if any. The
    /// tableau is refactored periodically and before either verdict.
    fn run(&mut self, obj: &mut [f64], allowed: usize, orig: &[f64], costs: &[f64]) -> Result<Option<usize>> {
        let mut since = 0usize;
        let mut fresh = false;
        loop {
            if self.iterations > MAX_ITER {
                return Err(Error::Numerical("simplex iteration limit reached".into()));
            }
            if since >= REFACTOR_EVERY {
                self.refactor(orig, costs, obj);
                since = 0;
                fresh = true;
            }
            let Some(c) = (0..allowed).find(|&j| obj[j] < -COST_TOL) else {
                if !fresh {
                    self.refactor(orig, costs, obj);
                    since = 0;
                    fresh = true;
                    continue;
                }
                return Ok(None);
            };
            // Ratio test: rows whose ratio is within tolerance of the minimum,
            // restricted to pivots not much smaller than the largest of them,
            // then the smallest basic index (Bland).
            let mut min_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    min_ratio = min_ratio.min(self.rhs(i).max(0.0) / a);
                }
            }
            let mut best: Option<(usize, f64)> = None;
            if min_ratio.is_finite() {
                let near = |i: usize| {
                    let a = self.at(i, c);
                    a > PIVOT_TOL && self.rhs(i).max(0.0) / a <= min_ratio + 1e-12 * (1.0 + min_ratio)
                };
                let amax = (0..self.rows).filter(|&i| near(i)).map(|i| self.at(i, c)).fold(0.0, f64::max);
                for i in (0..self.rows).filter(|&i| near(i) && self.at(i, c) >= PIVOT_REL * amax) {
                    if best.map_or(true, |(bi, _)| self.basis[i] < self.basis[bi]) {
                        best = Some((i, self.at(i, c)));
                    }
                }
            }
            match best {
                None if !fresh => {
                    self.refactor(orig, costs, obj);
                    since = 0;
                    fresh = true;
                }
                None => return Ok(Some(c)),
                Some((r, _)) => {
                    self.pivot(r, c, obj);
                    since += 1;
                    fresh = false;
                }
            }
        }
    }

    /// `c_B' B^-1`, read from the artificial columns.
    fn duals(&self, costs: &[f64], n: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|k| (0..self.rows).map(|i| costs[self.basis[i]] * self.at(i, n + k)).sum())
            .collect()
    }
}

/// Column `j` of `[M | I]`.
fn full_column(m: &DMatrix<f64>, j: usize) -> DVector<f64> {
    let (rows, n) = m.shape();
    if j < n {
        m.column(j).into_owned()
    } else {
        let mut e = DVector::zeros(rows);
        e[j - n] = 1.0;
        e
    }
}

/// Re-solves the basic system with an LU factorization for accuracy.
fn refine(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    basis: &[usize],
    costs: &[f64],
    x_b: &mut [f64],
    y: &mut [f64],
) {
    let rows = m.nrows();
    let mut bm = DMatrix::zeros(rows, rows);
    for (k, &j) in basis.iter().enumerate() {
        bm.set_column(k, &full_column(m, j));
    }
    let lu = bm.clone().lu();
    let cb = DVector::from_iterator(rows, basis.iter().map(|&j| costs[j]));
    if let Some(xs) = lu.solve(b) {
        let old = DVector::from_column_slice(x_b);
        let r_old = (&bm * &old - b).amax();
        let r_new = (&bm * &xs - b).amax();
        if xs.iter().all(|v| v.is_finite()) && r_new <= r_old {
            x_b.copy_from_slice(xs.as_slice());
        }
    }
    if let Some(ys) = bm.transpose().lu().solve(&cb) {
        let old = DVector::from_column_slice(y);
        let r_old = (bm.transpose() * &old - &cb).amax();
        let r_new = (bm.transpose() * &ys - &cb).amax();
        if ys.iter().all(|v| v.is_finite()) && r_new <= r_old {
            y.copy_from_slice(ys.as_slice());
        }
    }
}

pub fn solve(lp: &StandardLP) -> Result<LPResult> {
    let (rows, n) = lp.m.shape();
    if lp.c.len() != n || lp.b.len() != rows {
        return Err(Error::Dimension(format!(
            "LP with {rows}x{n} matrix, {} costs and {} right-hand sides",
            lp.c.len(),
            lp.b.len()
        )));
    }
    if lp.m.iter().chain(lp.c.iter()).chain(lp.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("LP data must be finite".into()));
    }
    let flip = if lp.sense == Sense::Max { -1.0 } else { 1.0 };
    // Row signs making the right-hand side nonnegative.
    let signs: Vec<f64> = lp.b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut ms = lp.m.clone();
    let mut bs = lp.b.clone();
    for i in 0..rows {
        if signs[i] < 0.0 {
            ms.row_mut(i).neg_mut();
            bs[i] = -bs[i];
        }
    }

    let width = n + rows;
    let mut t = vec![0.0; rows * (width + 1)];
    for i in 0..rows {
        let row = &mut t[i * (width + 1)..(i + 1) * (width + 1)];
        for j in 0..n {
            row[j] = ms[(i, j)];
        }
        row[n + i] = 1.0;
        row[width] = bs[i];
    }
    let orig = t.clone();
    let mut tab = Tableau { rows, width, t, basis: (n..n + rows).collect(), iterations: 0 };

    // Phase 1: minimize the sum of artificials.
    let mut costs1 = vec![0.0; width];
    costs1[n..].iter_mut().for_each(|c| *c = 1.0);
    let mut obj = vec![0.0; width + 1];
    for i in 0..rows {
        for j in 0..n {
            obj[j] -= tab.at(i, j);
        }
        obj[width] -= tab.rhs(i);
    }
    tab.run(&mut obj, n, &orig, &costs1)?;
    let infeas: f64 = (0..rows).filter(|&i| tab.basis[i] >= n).map(|i| tab.rhs(i).max(0.0)).sum();
    let scale = 1.0 + bs.iter().map(|v| v.abs()).sum::<f64>();
    if infeas > 1e-9 * scale {
        let mut y = tab.duals(&costs1, n);
        let mut x_b: Vec<f64> = (0..rows).map(|i| tab.rhs(i)).collect();
        refine(&ms, &bs, &tab.basis, &costs1, &mut x_b, &mut y);
        let cert = DVector::from_iterator(rows, (0..rows).map(|i| signs[i] * y[i]));
        let value = if lp.sense == Sense::Min { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(LPResult {
            status: LpStatus::Infeasible,
            value,
            solution: DVector::zeros(0),
            certificate: cert,
            iterations: tab.iterations,
        });
    }

    // Drive zero-level artificials out of the basis where possible.
    for i in 0..rows {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.at(i, j).abs() > PIVOT_TOL) {
                let mut dummy = vec![0.0; width + 1];
                tab.pivot(i, j, &mut dummy);
            }
        }
    }

    // Phase 2 on the original costs (minimization form).
    let mut costs2 = vec![0.0; width];
    for j in 0..n {
        costs2[j] = flip * lp.c[j];
    }
    let mut obj = vec![0.0; width + 1];
    obj[..n].copy_from_slice(&costs2[..n]);
    for i in 0..rows {
        let cb = costs2[tab.basis[i]];
        if cb != 0.0 {
            for j in 0..width {
                obj[j] -= cb * tab.at(i, j);
            }
            obj[width] -= cb * tab.rhs(i);
        }
    }
    if let Some(c) = tab.run(&mut obj, n, &orig, &costs2)? {
        let mut ray = DVector::zeros(n);
        ray[c] = 1.0;
        for i in 0..rows {
            if tab.basis[i] < n {
                ray[tab.basis[i]] = -tab.at(i, c);
            }
        }
        let value = if lp.sense == Sense::Min { f64::NEG_INFINITY } else { f64::INFINITY };
        return Ok(LPResult {
            status: LpStatus::Unbounded,
            value,
            solution: ray,
            certificate: DVector::zeros(0),
            iterations: tab.iterations,
        });
    }

    let mut x_b: Vec<f64> = (0..rows).map(|i| tab.rhs(i)).collect();
    let mut y = tab.duals(&costs2, n);
    refine(&ms, &bs, &tab.basis, &costs2, &mut x_b, &mut y);
    let mut x = DVector::zeros(n);
    for i in 0..rows {
        if tab.basis[i] < n {
            x[tab.basis[i]] = x_b[i];
        }
    }
    let value = lp.c.dot(&x);
    let cert = DVector::from_iterator(rows, (0..rows).map(|i| flip * signs[i] * y[i]));
    Ok(LPResult {
        status: LpStatus::Optimal,
        value,
        solution: x,
        certificate: cert,
        iterations: tab.iterations,
    })
}
