mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use strata_core::empirics::ObservedDistribution;
use strata_core::idset::{self, GridConfig};
use strata_core::inference::{self, Sup, TestConfig, TestSystem};
use strata_core::lp::{solve, LpStatus, StandardLP};
use strata_core::{replication, standard_parameter, StrataModel};

fn no_defier() -> StrataModel {
    catalog_model("no_defier_generalized", &binary())
}

/// Binary cells where the instrument pushes treatment up and the treated
/// outcome down: outside the no-defier model.
fn pearl_cells() -> Vec<f64> {
    vec![0.1, 0.4, 0.4, 0.1, 0.4, 0.1, 0.1, 0.4]
}

fn counts(cells: &[f64], per_z: u64) -> Vec<u64> {
    cells.iter().map(|c| (c * per_z as f64).round() as u64).collect()
}

fn cfg(b: usize, seed: u64) -> TestConfig {
    TestConfig { bootstrap_b: b, seed, ..Default::default() }
}

#[test]
fn statistic_scales_with_root_n() {
    let model = no_defier();
    let s = model.support().clone();
    let small = ObservedDistribution::from_counts(&s, counts(&pearl_cells(), 250)).unwrap();
    let big = ObservedDistribution::from_counts(&s, counts(&pearl_cells(), 1000)).unwrap();
    assert_eq!(small.cells(), big.cells());
    let a = inference::specification_system(&model, &small).unwrap();
    let b = inference::specification_system(&model, &big).unwrap();
    let (ea, ia) = a.statistic(&a.beta(small.cells()), small.n()).unwrap();
    let (eb, ib) = b.statistic(&b.beta(big.cells()), big.n()).unwrap();
    assert!(ia > 0.0);
    assert!((ib - 2.0 * ia).abs() < 1e-9 * ib, "{ia} {ib}");
    assert!((eb - 2.0 * ea).abs() < 1e-9 * (1.0 + eb));
}

#[test]
fn critical_values_are_monotone_and_seeded() {
    let model = no_defier();
    let param = standard_parameter("ate_contrast", &model, 1, 0, Some(compliers(&model, &[0, 1]))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let pop = push_forward(&model, &random_latent(&model, &mut rng), None);
    let data = pop.sample(&mut rng, 800).unwrap();
    let sys = inference::parameter_system(0.1, &model, &param, &data).unwrap();
    let (beta_r, _, _) = sys.restricted_estimator(&sys.beta(data.cells())).unwrap();
    let mut last = f64::INFINITY;
    for alpha in [0.01, 0.05, 0.1, 0.2, 0.5] {
        let c = inference::critical_value(&sys, &data, &beta_r, &TestConfig { alpha, ..cfg(200, 4) }).unwrap();
        assert!(c <= last, "alpha {alpha}: {c} > {last}");
        last = c;
    }
    let keep = TestConfig { keep_draws: true, ..cfg(120, 9) };
    let one = inference::test(0.1, &model, &param, &data, &keep).unwrap();
    let two = inference::test(0.1, &model, &param, &data, &keep).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
    let other = inference::test(0.1, &model, &param, &data, &TestConfig { seed: 10, ..keep }).unwrap();
    assert_ne!(one.draws, other.draws);
}

/// Criterion of the restricted estimator, recomputed from the two suprema.
fn criterion(sys: &TestSystem, beta_hat: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let w = beta_hat - b;
    let plus = sys.inequality_sup(&w).unwrap().value();
    let minus = sys.inequality_sup(&(-w)).unwrap().value();
    plus.max(minus)
}

#[test]
fn restricted_estimator_beats_random_feasible_points() {
    let model = no_defier();
    let s = model.support().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = ObservedDistribution::from_counts(&s, counts(&pearl_cells(), 300)).unwrap();
    let sys = inference::specification_system(&model, &data).unwrap();
    assert_eq!(sys.tail, vec![1.0]);
    let beta_hat = sys.beta(data.cells());
    let (b, value, _) = sys.restricted_estimator(&beta_hat).unwrap();
    assert!(value > 0.0);
    assert!((criterion(&sys, &beta_hat, &b) - value).abs() < 1e-9);
    let k = sys.a.ncols();
    for _ in 0..100 {
        let x: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let t: f64 = x.iter().sum();
        let x = DVector::from_iterator(k, x.iter().map(|v| v / t));
        let other = &sys.a * x;
        assert!(value <= criterion(&sys, &beta_hat, &other) + 1e-7);
    }
    // At a model-consistent point the estimator returns it with zero criterion.
    let pop = push_forward(&model, &random_latent(&model, &mut rng), None);
    let counts = counts(pop.cells(), 10_000);
    let inside = ObservedDistribution::from_counts(&s, counts).unwrap();
    let sys = inference::specification_system(&model, &inside).unwrap();
    let q = push_forward(&model, &random_latent(&model, &mut rng), None);
    let beta = sys.beta(q.cells());
    let (b, value, _) = sys.restricted_estimator(&beta).unwrap();
    assert!(value < 1e-7, "{value}");
    assert!((b[b.len() - 1] - 1.0).abs() < 1e-12);
    let (eq, ineq) = sys.statistic(&beta, 1000).unwrap();
    assert_eq!((eq, ineq), (0.0, 0.0));
}

/// `sup { <s, (I - P) w> : |Omega_e s|_1 <= 1 }` as an LP in `s` itself.
fn equality_sup_direct(sys: &TestSystem, w: &DVector<f64>) -> f64 {
    let v = w - &sys.projector * w;
    let om = &sys.studentizers.omega_e;
    let d = sys.dim();
    // s+ (d), s- (d), t+ (d), t- (d), slack.
    let nv = 4 * d + 1;
    let mut m = DMatrix::zeros(d + 1, nv);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = om[(i, j)];
            m[(i, d + j)] = -om[(i, j)];
        }
        m[(i, 2 * d + i)] = -1.0;
        m[(i, 3 * d + i)] = 1.0;
    }
    for j in 2 * d..nv {
        m[(d, j)] = 1.0;
    }
    let mut b = DVector::zeros(d + 1);
    b[d] = 1.0;
    let mut c = DVector::zeros(nv);
    for j in 0..d {
        c[j] = v[j];
        c[d + j] = -v[j];
    }
    let r = solve(&StandardLP::max(c, m, b)).unwrap();
    match r.status {
        LpStatus::Optimal => r.value,
        LpStatus::Unbounded => f64::INFINITY,
        LpStatus::Infeasible => panic!("s = 0 is feasible"),
    }
}

#[test]
fn equality_part_matches_a_direct_program() {
    // Under perfect compliance the cells with d != z are never reached, so
    // noncompliant data has components outside the column space of A.
    let model = catalog_model("perfect_compliance", &binary());
    let param = standard_parameter("ate_contrast", &model, 1, 0, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (mut finite, mut positive) = (0, 0);
    for k in 0..40 {
        let good = push_forward(&model, &random_latent(&model, &mut rng), None);
        let noise: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let mix = 0.02 * (k % 5) as f64;
        let mut cells: Vec<f64> = good.cells().iter().zip(&noise).map(|(g, e)| (1.0 - mix) * g + mix * e).collect();
        for z in 0..2 {
            let t: f64 = cells[4 * z..4 * z + 4].iter().sum();
            cells[4 * z..4 * z + 4].iter_mut().for_each(|c| *c /= t);
        }
        let pop = ObservedDistribution::from_probabilities(model.support(), cells, None).unwrap();
        let data = pop.sample(&mut rng, 400 + 50 * k).unwrap();
        let sys = inference::parameter_system(0.1, &model, &param, &data).unwrap();
        let w = sys.beta(data.cells());
        let ours = sys.equality_sup(&w);
        let direct = equality_sup_direct(&sys, &w);
        if ours.is_finite() {
            finite += 1;
            if ours > 0.0 {
                positive += 1;
            }
            assert!((ours - direct).abs() < 1e-6 * (1.0 + direct), "{ours} vs {direct}");
        } else {
            assert!(direct > 1e6, "{direct}");
        }
    }
    assert!(finite > 0 && positive > 0, "{finite} {positive}");
}

#[test]
fn random_search_stays_below_the_suprema() {
    let cs = replication::cs_model();
    let param = standard_parameter("ate_contrast", &cs, 1, 0, Some(replication::stratum_012(&cs))).unwrap();
    let pop = replication::table1_distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let data = pop.sample(&mut rng, 2000).unwrap();
    let sys = inference::parameter_system(0.9, &cs, &param, &data).unwrap();
    let d = sys.dim();
    let w = sys.beta(data.cells());
    let sup = match sys.inequality_sup(&w).unwrap() {
        Sup::Finite(v, s) => (v, s),
        Sup::Unbounded(_) => panic!("bounded at this point"),
    };
    assert!(sup.0 > 0.0);
    let target = &sys.pinv * &w;
    let norm = |s: &DVector<f64>| (&sys.studentizers.omega_i * (&sys.projector * s)).abs().sum();
    let mut tried = 0;
    for k in 0..60_000 {
        let s = if k % 2 == 0 {
            // Around the maximizer.
            let e = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-0.05..0.05)));
            &sup.1 + e
        } else {
            let y = DVector::from_iterator(sys.a.ncols(), (0..sys.a.ncols()).map(|_| -rng.random_range(0.0..1.0)));
            &sys.pinv.transpose() * y
        };
        let u = &sys.pinv * &s;
        if u.max() > 1e-12 {
            continue;
        }
        let r = norm(&s);
        if r <= 1e-12 {
            continue;
        }
        let s = s / r;
        tried += 1;
        let val = (&sys.pinv * &s).dot(&target);
        assert!(val <= sup.0 + 1e-8, "{val} > {}", sup.0);
    }
    assert!(tried > 100, "{tried}");
    // Same for the equality part over the l1 ball of Omega_e s.
    let eq = sys.equality_sup(&w);
    if eq.is_finite() {
        let v = &w - &sys.projector * &w;
        for _ in 0..20_000 {
            let s = DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-1.0..1.0)));
            let r = (&sys.studentizers.omega_e * &s).abs().sum();
            if r > 1e-12 {
                assert!((s / r).dot(&v) <= eq + 1e-8);
            }
        }
    }
}

#[test]
fn statistic_vanishes_along_a_path_into_the_model() {
    let model = no_defier();
    let s = model.support().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let good = push_forward(&model, &random_latent(&model, &mut rng), None);
    let bad = pearl_cells();
    let mut values = Vec::new();
    for t in [0.0, 0.5, 0.9, 0.99, 0.999, 1.0] {
        let cells: Vec<f64> = bad.iter().zip(good.cells()).map(|(b, g)| (1.0 - t) * b + t * g).collect();
        let p = ObservedDistribution::from_probabilities(&s, cells, None).unwrap();
        let sys = inference::specification_system(&model, &p).unwrap();
        let (e, i) = sys.statistic(&sys.beta(p.cells()), 1000).unwrap();
        values.push(e.max(i));
    }
    assert!(values[0] > 0.0);
    assert_eq!(values[5], 0.0);
    assert!(values[4] < 0.01 * values[0], "{values:?}");
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{values:?}");
}

#[test]
fn parameter_statistic_zero_forces_specification_zero() {
    // Magnitudes are not ordered: the extra row changes A and its
    // pseudo-inverse. A zero parameter statistic does put beta_hat in the
    // model, so the specification statistic must vanish too.
    let model = no_defier();
    let param = standard_parameter("ate_contrast", &model, 1, 0, Some(compliers(&model, &[0, 1]))).unwrap();
    let s = model.support().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (mut zeros, mut positive_spec, mut above) = (0, 0, 0);
    for k in 0..100 {
        let pop = if k % 2 == 0 {
            push_forward(&model, &random_latent(&model, &mut rng), None)
        } else {
            let mix = rng.random_range(0.0..1.0);
            let good = push_forward(&model, &random_latent(&model, &mut rng), None);
            let cells: Vec<f64> = pearl_cells().iter().zip(good.cells()).map(|(b, g)| mix * b + (1.0 - mix) * g).collect();
            ObservedDistribution::from_probabilities(&s, cells, None).unwrap()
        };
        let data = pop.sample(&mut rng, 500).unwrap();
        let spec = inference::specification_system(&model, &data).unwrap();
        let (a, b) = spec.statistic(&spec.beta(data.cells()), data.n()).unwrap();
        let t_spec = a.max(b);
        if t_spec > 0.0 {
            positive_spec += 1;
        }
        let w = wald(&data);
        let mut thetas: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        if w.is_finite() && w.abs() <= 1.0 {
            thetas.push(w);
        }
        for theta0 in thetas {
            let par = inference::parameter_system(theta0, &model, &param, &data).unwrap();
            let (c, d) = par.statistic(&par.beta(data.cells()), data.n()).unwrap();
            let t_par = c.max(d);
            if t_par == 0.0 {
                zeros += 1;
                assert_eq!(t_spec, 0.0, "dataset {k}, theta0 {theta0}");
            }
            if t_spec > t_par + 1e-9 {
                above += 1;
            }
        }
    }
    assert!(zeros > 0 && positive_spec > 0, "{zeros} {positive_spec}");
    eprintln!("specification statistic above a parameter statistic at {above} (dataset, theta0) pairs");
}

#[test]
fn wald_value_is_accepted_and_far_values_rejected() {
    let model = no_defier();
    let param = standard_parameter("ate_contrast", &model, 1, 0, Some(compliers(&model, &[0, 1]))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let pop = push_forward(&model, &random_latent(&model, &mut rng), None);
    let data = pop.sample(&mut rng, 3000).unwrap();
    let w = wald(&data);
    let out = inference::test(w, &model, &param, &data, &cfg(200, 1)).unwrap();
    assert!(!out.reject, "{out:?}");
    assert!(out.statistic < 1e-6);
    let out = inference::test(w - 0.6, &model, &param, &data, &cfg(200, 1)).unwrap();
    assert!(out.reject);
    // Outside the range of g the null is impossible.
    let out = inference::test(1.5, &model, &param, &data, &cfg(200, 1)).unwrap();
    assert!(out.reject && out.critical_value.is_nan() && !out.warnings.is_empty());
}

#[test]
fn large_sample_tests_on_the_three_valued_example() {
    let cs = replication::cs_model();
    let param = standard_parameter("ate_contrast", &cs, 1, 0, Some(replication::stratum_012(&cs))).unwrap();
    let data = replication::table1_distribution().expected_counts(100_000).unwrap();
    let inside = inference::test(0.5, &cs, &param, &data, &cfg(200, 2)).unwrap();
    assert!(!inside.reject, "{inside:?}");
    let outside = inference::test(0.95, &cs, &param, &data, &cfg(200, 2)).unwrap();
    assert!(outside.reject, "{outside:?}");
}

#[test]
fn confidence_regions_nest_and_cover_the_plug_in_set() {
    let model = no_defier();
    let param = standard_parameter("ate_contrast", &model, 1, 0, Some(compliers(&model, &[0, 1]))).unwrap();
    let text = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/binary_iv/counts.csv")).unwrap();
    let data = ObservedDistribution::read_csv(model.support(), &text[..]).unwrap();
    let grid = Some((0.0, 0.6, 25));
    let wide = inference::confidence_region(&model, &param, &data, &TestConfig { alpha: 0.05, theta_grid: grid, ..cfg(150, 5) })
        .unwrap();
    let narrow = inference::confidence_region(&model, &param, &data, &TestConfig { alpha: 0.2, theta_grid: grid, ..cfg(150, 5) })
        .unwrap();
    for (a, b) in wide.grid.iter().zip(&narrow.grid) {
        assert_eq!(a.statistic, b.statistic);
        assert!(!b.accept || a.accept, "theta0 {}", a.theta0);
    }
    assert!(narrow.grid.iter().filter(|g| g.accept).count() < wide.grid.iter().filter(|g| g.accept).count());
    let single = inference::confidence_region(&model, &param, &data, &TestConfig { theta_grid: Some((0.25, 0.25, 1)), ..cfg(150, 5) })
        .unwrap();
    let direct = inference::test(0.25, &model, &param, &data, &cfg(150, 5)).unwrap();
    assert_eq!(single.grid[0].statistic, direct.statistic);
    assert_eq!(single.grid[0].critical_value, direct.critical_value);
    assert_eq!(single.grid[0].accept, !direct.reject);

    // At a large sample the region contains the estimated identified set.
    let cs = replication::cs_model();
    let param = standard_parameter("ate_contrast", &cs, 1, 0, Some(replication::stratum_012(&cs))).unwrap();
    let data = replication::table1_distribution().expected_counts(100_000).unwrap();
    let set = idset::identified_set(&cs, &param, &data, &GridConfig { grid_n: 401, ..Default::default() }).unwrap();
    let region = inference::confidence_region(
        &cs,
        &param,
        &data,
        &TestConfig { theta_grid: Some((set.lower, set.upper, 7)), ..cfg(100, 6) },
    )
    .unwrap();
    assert!(region.grid.iter().all(|g| g.accept), "{:?}", region.grid);
}

#[test]
fn specification_test_has_size_at_most_nominal() {
    let model = no_defier();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let pop = push_forward(&model, &random_latent(&model, &mut rng), None);
    let reps = 200;
    let mut rejections = 0;
    for r in 0..reps {
        let data = pop.sample(&mut rng, 500).unwrap();
        if inference::specification_test(&model, &data, &cfg(200, r)).unwrap().reject {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    let se = (0.05f64 * 0.95 / reps as f64).sqrt();
    assert!(rate <= 0.05 + 3.0 * se, "rejection rate {rate}");
}
