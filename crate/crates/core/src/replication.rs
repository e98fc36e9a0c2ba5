//! The three-valued instrument, three-valued treatment example with a binary
//! outcome: the stepwise bounds for the `012` stratum, the sharp alternative,
//! and the numerical tables used as golden values.
//!
//! Cell names follow `p[yd|z]`. `pi` is the mass of the `012` treatment map.

use std::io::Write;

use crate::empirics::ObservedDistribution;
use crate::error::Result;
use crate::idset::{grid_optimize, uniform_grid};
use crate::model::{catalog, CatalogOptions, LatentDistribution, ResponseType, StrataModel, Support};

/// Observed distribution, `(y, d, z, p)` with zero cells omitted.
pub const TABLE1: &[(usize, usize, usize, f64)] = &[
    (0, 0, 0, 0.764),
    (1, 0, 0, 0.236),
    (0, 0, 1, 0.412),
    (1, 0, 1, 0.107),
    (0, 1, 1, 0.301),
    (1, 1, 1, 0.180),
    (0, 0, 2, 0.117),
    (1, 0, 2, 0.169),
    (0, 2, 2, 0.475),
    (1, 2, 2, 0.239),
];

/// Treatment maps carrying latent mass, in column order of [`TABLE2`].
pub const TABLE2_TREATMENTS: [[u16; 3]; 4] = [[0, 0, 0], [0, 1, 0], [0, 0, 2], [0, 1, 2]];

/// Latent masses: rows are outcome maps `y0y1y2` in lexicographic order,
/// columns follow [`TABLE2_TREATMENTS`]. Printed values sum to 1.002.
pub const TABLE2: [[f64; 4]; 8] = [
    [0.002, 0.002, 0.017, 0.025],
    [0.002, 0.002, 0.002, 0.195],
    [0.101, 0.002, 0.272, 0.120],
    [0.002, 0.004, 0.014, 0.002],
    [0.002, 0.002, 0.022, 0.011],
    [0.034, 0.062, 0.015, 0.002],
    [0.002, 0.002, 0.006, 0.002],
    [0.024, 0.041, 0.002, 0.007],
];

pub fn cs_support() -> Support {
    Support::integers(2, 3, 3).expect("valid support")
}

/// The one-sided monotone model with the four treatment maps above.
pub fn cs_model() -> StrataModel {
    catalog("cheng_small_mono1", &cs_support(), &CatalogOptions::default()).expect("catalog model")
}

/// Type indices of the `012` stratum.
pub fn stratum_012(model: &StrataModel) -> Vec<usize> {
    model.stratum_by_treatment(&[vec![0, 1, 2]])
}

pub fn table1_distribution() -> ObservedDistribution {
    let s = cs_support();
    let mut cells = vec![0.0; s.n_cells()];
    for &(y, d, z, p) in TABLE1 {
        cells[s.cell_index(y, d, z)] = p;
    }
    ObservedDistribution::from_rounded(&s, cells).expect("table 1 is a distribution")
}

/// Latent masses of the worked example, renormalized to sum to one.
pub fn table2_latent() -> LatentDistribution {
    let s = cs_support();
    let mut weights = Vec::new();
    for (o, row) in TABLE2.iter().enumerate() {
        let outcome: Vec<u16> = (0..3).map(|k| ((o >> (2 - k)) & 1) as u16).collect();
        for (t, &w) in row.iter().enumerate() {
            let r = ResponseType { outcome: outcome.clone(), treatment: TABLE2_TREATMENTS[t].to_vec() };
            weights.push((s.type_index(&r), w));
        }
    }
    LatentDistribution::from_weights(weights).expect("positive weights")
}

/// The cell probabilities the closed forms use.
#[derive(Debug, Clone, Copy)]
pub struct CsCells {
    pub p00_0: f64,
    pub p10_0: f64,
    pub p00_1: f64,
    pub p10_1: f64,
    pub p01_1: f64,
    pub p11_1: f64,
    pub p00_2: f64,
    pub p10_2: f64,
    pub p02_2: f64,
    pub p12_2: f64,
}

impl CsCells {
    pub fn from_distribution(p: &ObservedDistribution) -> Self {
        let c = |y, d, z| p.cell(y, d, z);
        Self {
            p00_0: c(0, 0, 0),
            p10_0: c(1, 0, 0),
            p00_1: c(0, 0, 1),
            p10_1: c(1, 0, 1),
            p01_1: c(0, 1, 1),
            p11_1: c(1, 1, 1),
            p00_2: c(0, 0, 2),
            p10_2: c(1, 0, 2),
            p02_2: c(0, 2, 2),
            p12_2: c(1, 2, 2),
        }
    }

    /// `P(D = 1 | Z = 1)`.
    pub fn p1_1(&self) -> f64 {
        self.p01_1 + self.p11_1
    }

    /// `P(D = 2 | Z = 2)`.
    pub fn p2_2(&self) -> f64 {
        self.p02_2 + self.p12_2
    }

    /// `P(D = 0 | Z = 2)`.
    pub fn p0_2(&self) -> f64 {
        self.p00_2 + self.p10_2
    }
}

pub type Interval = (f64, f64);

/// Stepwise (non-sharp) interval for the `012` mass.
pub fn cs_pi_tilde(p: &ObservedDistribution) -> Interval {
    let c = CsCells::from_distribution(p);
    ((c.p1_1() - c.p0_2()).max(0.0), c.p1_1().min(c.p2_2()))
}

/// The four terms of the sharp lower and upper envelopes of the `012` mass.
pub fn cs_pi_sharp_terms(p: &ObservedDistribution) -> ([f64; 4], [f64; 4]) {
    let c = CsCells::from_distribution(p);
    let lower = [
        0.0,
        c.p01_1 + c.p11_1 - (c.p00_2 + c.p10_2),
        c.p10_0 - c.p10_1 - c.p10_2,
        1.0 - c.p00_1 - c.p00_2 - c.p10_0,
    ];
    let upper = [
        c.p01_1 + c.p11_1,
        c.p02_2 + c.p12_2,
        1.0 - c.p00_1 - c.p10_2,
        1.0 - c.p10_1 - c.p00_2,
    ];
    (lower, upper)
}

/// Sharp interval for the `012` mass.
pub fn cs_pi_sharp_closed_form(p: &ObservedDistribution) -> Interval {
    let (lo, hi) = cs_pi_sharp_terms(p);
    (lo.iter().copied().fold(f64::NEG_INFINITY, f64::max), hi.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Inner intervals at a fixed `pi`.
#[derive(Debug, Clone, Copy)]
pub struct InnerIntervals {
    /// Range of `E[Y(1) 1{R in 012}]`.
    pub y1_scaled: Interval,
    /// Range of `E[Y(0) 1{R in 012}]`.
    pub y0_scaled: Interval,
    /// The stepwise conditional form of the `Y(1)` interval, built from
    /// `P(Y = 1 | D = 1, Z = 1)` and `pi / P(D = 1 | Z = 1)`.
    pub y1_conditional: Interval,
    pub y0_conditional: Interval,
}

/// Inner intervals for `pi` in `(0, 1]`. The formulas are evaluated as
/// written; they need not describe a feasible set outside the sharp interval.
pub fn cs_inner_interval(p: &ObservedDistribution, pi: f64) -> InnerIntervals {
    let c = CsCells::from_distribution(p);
    let y1 = ((pi - c.p01_1).max(0.0), pi.min(c.p11_1));

    // Masses of the other treatment maps given pi.
    let pi_010 = c.p1_1() - pi;
    let pi_002 = c.p2_2() - pi;
    let pi_000 = 1.0 - c.p1_1() - c.p2_2() + pi;
    // E[Y(0) 1{012}] = k + E[Y(0) 1{000}].
    let k = c.p10_0 - c.p10_1 - c.p10_2;
    let y0 = (
        [0.0, k, k + c.p10_1 - pi_002, k + c.p10_2 - pi_010].into_iter().fold(f64::NEG_INFINITY, f64::max),
        [pi, k + pi_000, k + c.p10_1, k + c.p10_2].into_iter().fold(f64::INFINITY, f64::min),
    );

    let share = pi / c.p1_1();
    let p1_11 = c.p11_1 / c.p1_1();
    let y1_conditional = ((1.0 - (1.0 - p1_11) / share).max(0.0), (p1_11 / share).min(1.0));
    let y0_conditional = (y0.0 / pi, y0.1 / pi);
    InnerIntervals { y1_scaled: y1, y0_scaled: y0, y1_conditional, y0_conditional }
}

/// Difference bounds at `pi`: `[(L1 - U0) / pi, (U1 - L0) / pi]`.
pub fn cs_difference_at(p: &ObservedDistribution, pi: f64) -> Interval {
    let i = cs_inner_interval(p, pi);
    ((i.y1_scaled.0 - i.y0_scaled.1) / pi, (i.y1_scaled.1 - i.y0_scaled.0) / pi)
}

#[derive(Debug, Clone)]
pub struct FinalBounds {
    pub lower: f64,
    pub upper: f64,
    pub argmin_pi: f64,
    pub argmax_pi: f64,
    /// Grid values of `pi` where the upper curve is below the lower one.
    pub crossing: Vec<f64>,
}

/// Outer optimization of the difference bounds over `pi_interval`.
pub fn cs_final_bounds(p: &ObservedDistribution, pi_interval: Interval, grid_n: usize) -> FinalBounds {
    let (lo, hi) = (pi_interval.0.max(1e-12), pi_interval.1);
    let (argmin_pi, lower, _) =
        grid_optimize(lo, hi, grid_n, 5, false, |pi| Some((cs_difference_at(p, pi).0, ()))).expect("nonempty grid");
    let (argmax_pi, upper, _) =
        grid_optimize(lo, hi, grid_n, 5, true, |pi| Some((cs_difference_at(p, pi).1, ()))).expect("nonempty grid");
    let crossing = uniform_grid(lo, hi, grid_n)
        .into_iter()
        .filter(|&pi| {
            let (l, u) = cs_difference_at(p, pi);
            u < l - 1e-12
        })
        .collect();
    FinalBounds { lower, upper, argmin_pi, argmax_pi, crossing }
}

pub const FIGURE_HEADER: &str = "# pi: mass of the 012 stratum; lower, upper: difference bounds at pi; \
pi_tilde_lo, pi_tilde_hi: stepwise interval; pi_lo, pi_hi: sharp interval; in_sharp: pi inside the sharp interval";

/// Plot data over a uniform grid on the stepwise interval.
pub fn emit_figure_data<W: Write>(p: &ObservedDistribution, grid_n: usize, out: W) -> Result<()> {
    let tilde = cs_pi_tilde(p);
    let sharp = cs_pi_sharp_closed_form(p);
    let mut out = out;
    writeln!(out, "{FIGURE_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pi", "lower", "upper", "pi_tilde_lo", "pi_tilde_hi", "pi_lo", "pi_hi", "in_sharp"])?;
    for pi in uniform_grid(tilde.0, tilde.1, grid_n) {
        let (l, u) = if pi > 0.0 { cs_difference_at(p, pi) } else { (f64::NAN, f64::NAN) };
        let inside = pi >= sharp.0 - 1e-12 && pi <= sharp.1 + 1e-12;
        w.write_record([
            format!("{pi:.6}"),
            format!("{l:.6}"),
            format!("{u:.6}"),
            format!("{:.6}", tilde.0),
            format!("{:.6}", tilde.1),
            format!("{:.6}", sharp.0),
            format!("{:.6}", sharp.1),
            (inside as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn stepwise_interval_on_table1() {
        let (lo, hi) = cs_pi_tilde(&table1_distribution());
        assert!((lo - 0.195).abs() < TOL && (hi - 0.481).abs() < TOL, "{lo} {hi}");
    }

    #[test]
    fn stepwise_interval_without_treated() {
        let s = cs_support();
        let mut cells = vec![0.0; s.n_cells()];
        cells[s.cell_index(0, 0, 0)] = 1.0;
        cells[s.cell_index(0, 0, 1)] = 1.0;
        cells[s.cell_index(0, 0, 2)] = 0.5;
        cells[s.cell_index(0, 2, 2)] = 0.5;
        let p = ObservedDistribution::from_probabilities(&s, cells, None).unwrap();
        assert_eq!(cs_pi_tilde(&p), (0.0, 0.0));
    }

    #[test]
    fn sharp_interval_on_table1() {
        let p = table1_distribution();
        let (lo, hi) = cs_pi_sharp_closed_form(&p);
        assert!((lo - 0.235).abs() < TOL && (hi - 0.419).abs() < TOL, "{lo} {hi}");
        let (terms, _) = cs_pi_sharp_terms(&p);
        for (t, want) in terms.iter().zip([0.0, 0.195, -0.040, 0.235]) {
            assert!((t - want).abs() < TOL, "{t} vs {want}");
        }
    }

    #[test]
    fn inner_interval_examples() {
        let p = table1_distribution();
        let i = cs_inner_interval(&p, 0.3);
        assert!(i.y1_scaled.0.abs() < TOL && (i.y1_scaled.1 - 0.180).abs() < TOL);
        let i = cs_inner_interval(&p, 0.180);
        assert!((i.y1_scaled.1 - 0.180).abs() < TOL);
        for pi in [0.24, 0.3, 0.41] {
            let i = cs_inner_interval(&p, pi);
            assert!((i.y1_conditional.0 - i.y1_scaled.0 / pi).abs() < TOL);
            assert!((i.y1_conditional.1 - i.y1_scaled.1 / pi).abs() < TOL);
        }
    }

    #[test]
    fn final_bounds_on_table1() {
        let p = table1_distribution();
        let cs = cs_final_bounds(&p, cs_pi_tilde(&p), 2001);
        assert!((cs.lower + 0.219).abs() < 2e-3 && (cs.upper - 0.923).abs() < 2e-3, "{cs:?}");
        let sharp = cs_final_bounds(&p, cs_pi_sharp_closed_form(&p), 2001);
        assert!((sharp.lower + 0.219).abs() < 2e-3 && (sharp.upper - 0.766).abs() < 2e-3, "{sharp:?}");
        assert!(!cs.crossing.is_empty());
        let (slo, shi) = cs_pi_sharp_closed_form(&p);
        assert!(cs.crossing.iter().all(|&pi| pi < slo || pi > shi));
    }

    #[test]
    fn figure_rows() {
        let mut buf = Vec::new();
        emit_figure_data(&table1_distribution(), 101, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(rows.len(), 101);
        assert!(rows[0].starts_with("0.195000,"));
        assert!(rows[100].starts_with("0.481000,"));
        for r in rows {
            let f: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
            if f[7] == 1.0 {
                assert!(f[1] <= f[2] + 1e-9);
            }
            assert_eq!((f[5], f[6]), (0.235, 0.419));
        }
    }

    #[test]
    fn table2_sums() {
        let raw: f64 = TABLE2.iter().flatten().sum();
        assert!((raw - 1.0).abs() < 5e-3);
        let q = table2_latent();
        let m = cs_model();
        assert!(q.iter().all(|(r, _)| m.is_admissible(r)));
    }
}
