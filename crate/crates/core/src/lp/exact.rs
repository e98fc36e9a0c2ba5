//! Dense Gaussian elimination over a [`Scalar`].

use super::scalar::{argmax_abs, Scalar};

pub type Mat<S> = Vec<Vec<S>>;

/// Reduced row echelon form; returns the pivot columns.
pub fn rref<S: Scalar>(m: &mut Mat<S>) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let column: Vec<S> = (r..rows).map(|i| m[i][c].clone()).collect();
        let Some(off) = argmax_abs(&column) else { continue };
        m.swap(r, r + off);
        let p = m[r][c].clone();
        for x in m[r].iter_mut() {
            *x = x.div(&p);
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..cols {
                    let v = m[i][j].sub(&f.mul(&m[r][j]));
                    m[i][j] = v;
                }
            }
        }
        if !S::exact() {
            for i in 0..rows {
                for j in 0..cols {
                    if m[i][j].is_zero() {
                        m[i][j] = S::zero();
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank<S: Scalar>(m: &Mat<S>) -> usize {
    let mut work = m.clone();
    rref(&mut work).len()
}

/// Basis of `{x : m x = 0}`.
pub fn nullspace<S: Scalar>(m: &Mat<S>, cols: usize) -> Vec<Vec<S>> {
    let mut work = m.clone();
    let pivots = rref(&mut work);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![S::zero(); cols];
            v[f] = S::one();
            for (r, &p) in pivots.iter().enumerate() {
                v[p] = work[r][f].neg();
            }
            v
        })
        .collect()
}

/// Indices of a maximal linearly independent subset of rows, chosen greedily
/// in the given order.
pub fn independent_rows<S: Scalar>(m: &Mat<S>, order: &[usize]) -> Vec<usize> {
    let cols = m.first().map_or(0, Vec::len);
    // Echelon basis kept as (pivot column, normalized row).
    let mut basis: Vec<(usize, Vec<S>)> = Vec::new();
    let mut keep = Vec::new();
    for &i in order {
        let mut v = m[i].clone();
        for (pc, b) in &basis {
            if !v[*pc].is_zero() {
                let f = v[*pc].clone();
                for j in 0..cols {
                    v[j] = v[j].sub(&f.mul(&b[j]));
                }
            }
        }
        if let Some(pc) = argmax_abs(&v) {
            let p = v[pc].clone();
            for x in v.iter_mut() {
                *x = x.div(&p);
            }
            // Keep the basis fully reduced on pivot columns.
            for (_, b) in basis.iter_mut() {
                if !b[pc].is_zero() {
                    let f = b[pc].clone();
                    for j in 0..cols {
                        b[j] = b[j].sub(&f.mul(&v[j]));
                    }
                }
            }
            basis.push((pc, v));
            keep.push(i);
        }
    }
    keep
}

/// Solves the square system `m x = b`, `None` if singular.
pub fn solve<S: Scalar>(m: &Mat<S>, b: &[S]) -> Option<Vec<S>> {
    let n = m.len();
    let mut aug: Mat<S> = m
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.len() != n || pivots.iter().enumerate().any(|(i, &p)| p != i) {
        return None;
    }
    Some(aug.into_iter().map(|r| r[n].clone()).collect())
}
