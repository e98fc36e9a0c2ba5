use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

/// Field arithmetic used by the polyhedral routines.
///
/// `f64` compares against a fixed tolerance; `BigRational` is exact.
pub trait Scalar: Clone + Debug + PartialEq + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(x: i64) -> Self;
    /// Converts a float. Rationals get the exact binary value.
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn abs(&self) -> Self;
    /// Sign with the type's notion of zero.
    fn sign(&self) -> i8;
    fn is_zero(&self) -> bool {
        self.sign() == 0
    }
    /// Whether values are compared exactly.
    fn exact() -> bool;
}

pub const F64_TOL: f64 = 1e-9;

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(x: i64) -> Self {
        x as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sign(&self) -> i8 {
        if *self > F64_TOL {
            1
        } else if *self < -F64_TOL {
            -1
        } else {
            0
        }
    }
    fn exact() -> bool {
        false
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(x: i64) -> Self {
        BigRational::from_integer(BigInt::from(x))
    }
    fn from_f64(x: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(x).expect("finite float")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn sign(&self) -> i8 {
        if self.is_positive() {
            1
        } else if self.is_negative() {
            -1
        } else {
            0
        }
    }
    fn exact() -> bool {
        true
    }
}

/// Index of the entry of largest magnitude among nonzeros.
pub(crate) fn argmax_abs<S: Scalar>(v: &[S]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        let a = x.to_f64().abs();
        if best.map_or(true, |(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

/// Scales `v` so its largest-magnitude entry has absolute value one.
pub(crate) fn normalize_inf<S: Scalar>(v: &mut [S]) {
    if let Some(i) = argmax_abs(v) {
        let s = v[i].abs();
        for x in v.iter_mut() {
            *x = x.div(&s);
        }
    }
    if !S::exact() {
        for x in v.iter_mut() {
            if x.is_zero() {
                *x = S::zero();
            }
        }
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc.add(&x.mul(y)))
}

/// Formats a rational as `p` or `p/q`.
pub fn format_rational(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}
