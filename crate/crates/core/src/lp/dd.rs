//! Double description method for pointed polyhedral cones `{x : G x <= 0}`.

use super::exact::{independent_rows, solve, Mat};
use super::scalar::{dot, normalize_inf, Scalar};
use crate::error::{Error, Result};

#[derive(Clone)]
struct Ray<S> {
    v: Vec<S>,
    /// Bitset of processed constraints tight at this ray.
    tight: Vec<u64>,
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn count(bits: &[u64]) -> usize {
    bits.iter().map(|w| w.count_ones() as usize).sum()
}

fn and(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn contains(sup: &[u64], sub: &[u64]) -> bool {
    sup.iter().zip(sub).all(|(x, y)| x & y == *y)
}

/// Extreme rays of the cone `{x in R^d : G x <= 0}`, each scaled to unit
/// infinity norm. The cone must be pointed (`rank G = d`).
///
/// Constraints are inserted in row order after an initial simplicial cone on
/// the first `d` independent rows, so the output order is deterministic.
pub fn extreme_rays<S: Scalar>(g: &Mat<S>, d: usize) -> Result<Vec<Vec<S>>> {
    if d == 0 {
        return Ok(Vec::new());
    }
    let m = g.len();
    if g.iter().any(|row| row.len() != d) {
        return Err(Error::Dimension("constraint rows must match the cone dimension".into()));
    }
    let order: Vec<usize> = (0..m).collect();
    let basis = independent_rows(g, &order);
    if basis.len() < d {
        return Err(Error::Numerical(format!(
            "cone is not pointed: constraint rank {} below dimension {d}",
            basis.len()
        )));
    }
    let words = m.div_ceil(64);

    // Initial rays: columns of -G_S^{-1}; ray k is tight on every basis row but k.
    let gs: Mat<S> = basis.iter().map(|&i| g[i].clone()).collect();
    let mut rays: Vec<Ray<S>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut e = vec![S::zero(); d];
        e[k] = S::one().neg();
        let mut v = solve(&gs, &e).ok_or_else(|| Error::Numerical("singular initial basis".into()))?;
        normalize_inf(&mut v);
        let mut tight = vec![0u64; words];
        for (kk, &i) in basis.iter().enumerate() {
            if kk != k {
                set_bit(&mut tight, i);
            }
        }
        rays.push(Ray { v, tight });
    }

    let in_basis: Vec<bool> = (0..m).map(|i| basis.contains(&i)).collect();
    for i in (0..m).filter(|&i| !in_basis[i]) {
        let vals: Vec<S> = rays.iter().map(|r| dot(&g[i], &r.v)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&k| vals[k].sign() > 0).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&k| vals[k].sign() < 0).collect();
        if pos.is_empty() {
            for (k, r) in rays.iter_mut().enumerate() {
                if vals[k].sign() == 0 {
                    set_bit(&mut r.tight, i);
                }
            }
            continue;
        }
        let mut next: Vec<Ray<S>> = Vec::new();
        for &p in &pos {
            for &q in &neg {
                let common = and(&rays[p].tight, &rays[q].tight);
                if count(&common) + 2 < d {
                    continue;
                }
                let adjacent = (0..rays.len())
                    .all(|k| k == p || k == q || !contains(&rays[k].tight, &common));
                if !adjacent {
                    continue;
                }
                // Positive combination vanishing on row i.
                let a = vals[p].clone();
                let b = vals[q].neg();
                let mut v: Vec<S> = rays[q]
                    .v
                    .iter()
                    .zip(&rays[p].v)
                    .map(|(x, y)| x.mul(&a).add(&y.mul(&b)))
                    .collect();
                normalize_inf(&mut v);
                let mut tight = common;
                set_bit(&mut tight, i);
                next.push(Ray { v, tight });
            }
        }
        for (k, r) in rays.into_iter().enumerate() {
            if vals[k].sign() <= 0 {
                let mut r = r;
                if vals[k].sign() == 0 {
                    set_bit(&mut r.tight, i);
                }
                next.push(r);
            }
        }
        rays = next;
    }
    Ok(rays.into_iter().map(|r| r.v).collect())
}
