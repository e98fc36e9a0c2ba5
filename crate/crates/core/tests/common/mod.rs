#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use strata_core::empirics::ObservedDistribution;
use strata_core::linsys::{build_a, latent_to_observed};
use strata_core::model::{GFunction, LatentDistribution, ParameterSpec, StrataModel};

/// A random latent distribution on the model's types (flat Dirichlet).
pub fn random_latent<R: Rng>(model: &StrataModel, rng: &mut R) -> LatentDistribution {
    let w: Vec<(usize, f64)> = model.admissible().iter().map(|&r| (r, Exp1.sample(rng))).collect();
    LatentDistribution::from_weights(w).unwrap()
}

/// Sparse variant: each type is dropped with probability `drop`.
pub fn sparse_latent<R: Rng>(model: &StrataModel, rng: &mut R, drop: f64) -> LatentDistribution {
    loop {
        let mut w = Vec::new();
        for &r in model.admissible() {
            if !rng.random_bool(drop) {
                w.push((r, Exp1.sample(rng)));
            }
        }
        if !w.is_empty() {
            return LatentDistribution::from_weights(w).unwrap();
        }
    }
}

/// The observable distribution implied by `q`, with instrument marginal `z`.
pub fn push_forward(model: &StrataModel, q: &LatentDistribution, z: Option<Vec<f64>>) -> ObservedDistribution {
    let spec =
        ParameterSpec::new("any", model, GFunction::Constant { value: 0.0 }, model.admissible().to_vec()).unwrap();
    let system = build_a(model, &spec, 0.0, true).unwrap();
    let cells = latent_to_observed(q, &system).unwrap();
    ObservedDistribution::from_probabilities(model.support(), cells, z).unwrap()
}

pub fn binary() -> strata_core::Support {
    strata_core::Support::integers(2, 2, 2).unwrap()
}

pub fn catalog_model(name: &str, support: &strata_core::Support) -> StrataModel {
    strata_core::catalog(name, support, &strata_core::CatalogOptions::default()).unwrap()
}

/// Types of `model` whose treatment map is `(d(0), d(1), ...)`.
pub fn compliers(model: &StrataModel, map: &[u16]) -> Vec<usize> {
    model.stratum_by_treatment(&[map.to_vec()])
}

/// Observation pattern of each admissible type plus a row of ones.
pub fn fiber_system(model: &StrataModel, types: &[usize]) -> nalgebra::DMatrix<f64> {
    let s = model.support();
    let mut m = nalgebra::DMatrix::zeros(s.n_cells() + 1, types.len());
    for (j, &r) in types.iter().enumerate() {
        let t = s.response_type(r);
        for z in 0..s.nz() {
            let d = t.d(z);
            m[(s.cell_index(t.y(d), d, z), j)] = 1.0;
        }
        m[(s.n_cells(), j)] = 1.0;
    }
    m
}

/// Calls `visit` on every nonnegative solution of `m q = b` whose free
/// coordinates lie on the grid `{k / n}`; the pivot coordinates are solved
/// for. Returns the number of free coordinates.
pub fn fiber_grid(m: &nalgebra::DMatrix<f64>, b: &[f64], n: usize, mut visit: impl FnMut(&[f64])) -> usize {
    use strata_core::lp::rref;
    let cols = m.ncols();
    let mut aug: Vec<Vec<f64>> =
        (0..m.nrows()).map(|i| (0..cols).map(|j| m[(i, j)]).chain([b[i]]).collect()).collect();
    let pivots = rref(&mut aug);
    if pivots.contains(&cols) {
        return 0;
    }
    let free: Vec<usize> = (0..cols).filter(|j| !pivots.contains(j)).collect();
    let mut k = vec![0usize; free.len()];
    let mut q = vec![0.0; cols];
    loop {
        for (&j, &kj) in free.iter().zip(&k) {
            q[j] = kj as f64 / n as f64;
        }
        let mut ok = true;
        for (row, &pc) in pivots.iter().enumerate() {
            let v = aug[row][cols] - free.iter().map(|&j| aug[row][j] * q[j]).sum::<f64>();
            if v < -1e-12 {
                ok = false;
                break;
            }
            q[pc] = v.max(0.0);
        }
        if ok {
            visit(&q);
        }
        // next composition with sum <= n
        let mut i = 0;
        loop {
            if i == k.len() {
                return free.len();
            }
            k[i] += 1;
            if k.iter().sum::<usize>() <= n {
                break;
            }
            k[i] = 0;
            i += 1;
        }
    }
}

/// `E[g(R) | R in R']` for masses `q` on `types`; `None` when the stratum
/// has no mass.
pub fn theta_of(model: &StrataModel, param: &ParameterSpec, types: &[usize], q: &[f64]) -> Option<f64> {
    let s = model.support();
    let (mut num, mut den) = (0.0, 0.0);
    for (&r, &x) in types.iter().zip(q) {
        if param.in_conditioning(r) {
            num += param.g_at(s, r) * x;
            den += x;
        }
    }
    (den > 1e-12).then(|| num / den)
}

/// `max c'x` over an H-polyhedron whose points are nonnegative.
pub fn max_over_hrep(poly: &strata_core::lp::PolyhedronH<strata_core::lp::BigRational>, c: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    use strata_core::lp::{solve, Scalar, StandardLP};
    let n = c.len();
    let (ne, ni) = (poly.equalities.len(), poly.inequalities.len());
    let mut m = DMatrix::zeros(ne + ni, n + ni);
    let mut b = DVector::zeros(ne + ni);
    for (i, (a, rhs)) in poly.equalities.iter().chain(&poly.inequalities).enumerate() {
        for j in 0..n {
            m[(i, j)] = a[j].to_f64();
        }
        if i >= ne {
            m[(i, n + i - ne)] = 1.0;
        }
        b[i] = rhs.to_f64();
    }
    let mut cost = DVector::zeros(n + ni);
    cost.rows_mut(0, n).copy_from_slice(c);
    let res = solve(&StandardLP::max(cost, m, b)).unwrap();
    assert!(res.is_optimal(), "{:?}", res.status);
    res.value
}

/// Wald ratio on a binary design.
pub fn wald(p: &ObservedDistribution) -> f64 {
    let ey = |z| p.cell(1, 0, z) + p.cell(1, 1, z);
    let ed = |z| p.cell(0, 1, z) + p.cell(1, 1, z);
    (ey(1) - ey(0)) / (ed(1) - ed(0))
}

/// A random model on at most `max_types` types with a random stratum and
/// parameter, and a latent distribution on the `1 / steps` grid.
pub fn small_instance<R: Rng>(rng: &mut R, max_types: usize, steps: usize) -> (StrataModel, ParameterSpec, LatentDistribution) {
    let s = if rng.random_bool(0.5) { binary() } else { strata_core::Support::integers(2, 2, 3).unwrap() };
    // Few treatment maps crossed with several outcome maps, so that types
    // share observation patterns and the fiber over P is not a point.
    let tm = s.n_treatment_maps() as usize;
    let om = s.n_outcome_maps() as usize;
    let mut maps: Vec<usize> = (0..tm).collect();
    maps.shuffle(rng);
    let maps = &maps[..rng.random_range(1..=2)];
    let k = rng.random_range(3..=max_types).min(om * maps.len());
    let mut types: Vec<usize> = Vec::new();
    while types.len() < k {
        let r = rng.random_range(0..om) * tm + maps[rng.random_range(0..maps.len())];
        if !types.contains(&r) {
            types.push(r);
        }
    }
    let model = StrataModel::new("small", s, types.clone(), Vec::new()).unwrap();
    let stratum: Vec<usize> = {
        let mut st: Vec<usize> = types.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
        if st.is_empty() {
            st.push(types[0]);
        }
        st
    };
    let name = ["ate_contrast", "prob_benefit", "relative_effect"][rng.random_range(0..3)];
    let param = strata_core::standard_parameter(name, &model, 1, 0, Some(stratum)).unwrap();
    let mut counts = vec![0usize; k];
    for _ in 0..steps {
        counts[rng.random_range(0..k)] += 1;
    }
    let q = LatentDistribution::from_weights(types.iter().zip(&counts).map(|(&r, &c)| (r, c as f64))).unwrap();
    (model, param, q)
}

/// Brute force over the grid of latent distributions that reproduce `p`:
/// returns (min, max) of theta and the number of free coordinates.
pub fn brute_force(model: &StrataModel, param: &ParameterSpec, p: &strata_core::empirics::ObservedDistribution, steps: usize) -> (f64, f64, usize) {
    let types = model.admissible().to_vec();
    let m = fiber_system(model, &types);
    let mut b = p.cells().to_vec();
    b.push(1.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let free = fiber_grid(&m, &b, steps, |q| {
        if let Some(t) = theta_of(model, param, &types, q) {
            lo = lo.min(t);
            hi = hi.max(t);
        }
    });
    (lo, hi, free)
}

pub fn to_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Pearl's instrument inequalities for binary Y and Z as coefficient rows.
pub fn pearl_inequalities(n_d: usize) -> Vec<Vec<f64>> {
    // For each d and each choice of z per y: p(0, d, z0) + p(1, d, z1) <= 1.
    let s = binary();
    let mut out = Vec::new();
    for d in 0..n_d {
        for z0 in 0..2 {
            for z1 in 0..2 {
                let mut c = vec![0.0; s.n_cells()];
                c[s.cell_index(0, d, z0)] += 1.0;
                c[s.cell_index(1, d, z1)] += 1.0;
                out.push(c);
            }
        }
    }
    out
}

