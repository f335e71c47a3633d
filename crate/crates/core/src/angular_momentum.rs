//! Wigner 3j/6j symbols and hyperfine-resolved D1 dipole matrix elements.
//!
//! All quantum numbers are carried doubled ([`HalfInt`]) so half-integers are
//! exact. The Racah sums are evaluated in exact rational arithmetic and only
//! the final square root is taken in floating point.

use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::Error;

/// A quantum number that is an integer or half-integer, stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_doubled(twice_value: i32) -> Self {
        HalfInt(twice_value)
    }

    pub const fn integer(n: i32) -> Self {
        HalfInt(2 * n)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Integer value, if this is an integer.
    pub const fn as_integer(self) -> Option<i32> {
        if self.is_integer() {
            Some(self.0 / 2)
        } else {
            None
        }
    }

    pub const fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }
}

impl From<i32> for HalfInt {
    fn from(n: i32) -> Self {
        HalfInt::integer(n)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

fn check_pair(j: HalfInt, m: HalfInt) -> Result<(), Error> {
    if j.twice() < 0 {
        return Err(Error::AngularMomentum(format!("negative angular momentum j = {j}")));
    }
    if m.twice().abs() > j.twice() {
        return Err(Error::AngularMomentum(format!("|m| = {} exceeds j = {j}", m.abs())));
    }
    if (j.twice() - m.twice()) % 2 != 0 {
        return Err(Error::AngularMomentum(format!(
            "projection m = {m} incompatible with j = {j}"
        )));
    }
    Ok(())
}

/// Doubled-argument triangle check including the integer-perimeter condition.
fn triad(a: i32, b: i32, c: i32) -> bool {
    a >= 0 && b >= 0 && c >= 0 && c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
}

fn factorial(n: i64) -> BigInt {
    debug_assert!(n >= 0);
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= k;
    }
    acc
}

/// Triangle coefficient (a+b-c)!(a-b+c)!(-a+b+c)!/(a+b+c+1)! with doubled inputs.
fn triangle_coefficient(a: i32, b: i32, c: i32) -> BigRational {
    let (a, b, c) = (i64::from(a), i64::from(b), i64::from(c));
    let num = factorial((a + b - c) / 2) * factorial((a - b + c) / 2) * factorial((-a + b + c) / 2);
    let den = factorial((a + b + c) / 2 + 1);
    BigRational::new(num, den)
}

/// `sign * sqrt(radicand)` rounded once at the end.
fn signed_sqrt(negative: bool, radicand: &BigRational) -> f64 {
    if radicand.is_zero() {
        return 0.0;
    }
    let magnitude = radicand.to_f64().unwrap_or(f64::NAN).sqrt();
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

type SymbolCache = RwLock<HashMap<[i32; 6], f64>>;

fn three_j_cache() -> &'static SymbolCache {
    static CACHE: OnceLock<SymbolCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn six_j_cache() -> &'static SymbolCache {
    static CACHE: OnceLock<SymbolCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn cached(cache: &SymbolCache, key: [i32; 6], eval: impl FnOnce() -> f64) -> f64 {
    if let Some(v) = cache.read().ok().and_then(|map| map.get(&key).copied()) {
        return v;
    }
    let v = eval();
    if let Ok(mut map) = cache.write() {
        map.insert(key, v);
    }
    v
}

/// Wigner 3j symbol `(j1 j2 j3; m1 m2 m3)`.
///
/// Returns exactly `0.0` when the triangle rule or `m1 + m2 + m3 = 0` fails.
/// A projection with `|m| > j` (or of the wrong integer/half-integer kind) is
/// a domain error.
pub fn wigner3j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m3: HalfInt,
) -> Result<f64, Error> {
    check_pair(j1, m1)?;
    check_pair(j2, m2)?;
    check_pair(j3, m3)?;
    let key = [j1.0, j2.0, j3.0, m1.0, m2.0, m3.0];
    if m1.0 + m2.0 + m3.0 != 0 || !triad(j1.0, j2.0, j3.0) {
        return Ok(0.0);
    }
    Ok(cached(three_j_cache(), key, || racah_3j(key)))
}

fn racah_3j([j1, j2, j3, m1, m2, m3]: [i32; 6]) -> f64 {
    // Work in integer units: every combination below is an integer once halved.
    let h = |x: i32| i64::from(x) / 2;
    let f = |x: i32| factorial(h(x));

    let mut radicand = triangle_coefficient(j1, j2, j3);
    let prefactor = f(j1 + m1) * f(j1 - m1) * f(j2 + m2) * f(j2 - m2) * f(j3 + m3) * f(j3 - m3);
    radicand *= BigRational::from_integer(prefactor);

    let k_min = [0, h(j2 - j3 - m1), h(j1 - j3 + m2)].into_iter().max().unwrap_or(0);
    let k_max = [h(j1 + j2 - j3), h(j1 - m1), h(j2 + m2)].into_iter().min().unwrap_or(-1);
    let mut sum = BigRational::zero();
    for k in k_min..=k_max {
        let den = factorial(k)
            * factorial(h(j3 - j2 + m1) + k)
            * factorial(h(j3 - j1 - m2) + k)
            * factorial(h(j1 + j2 - j3) - k)
            * factorial(h(j1 - m1) - k)
            * factorial(h(j2 + m2) - k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    let phase_odd = h(j1 - j2 - m3).rem_euclid(2) == 1;
    let negative = phase_odd ^ sum.is_negative();
    signed_sqrt(negative, &(radicand * &sum * &sum))
}

/// Wigner 6j symbol `{j1 j2 j3; j4 j5 j6}`.
///
/// Any of the four triads `(j1 j2 j3)`, `(j1 j5 j6)`, `(j4 j2 j6)`, `(j4 j5 j3)`
/// failing the triangle rule gives exactly `0.0`.
pub fn wigner6j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    j4: HalfInt,
    j5: HalfInt,
    j6: HalfInt,
) -> f64 {
    let key = [j1.0, j2.0, j3.0, j4.0, j5.0, j6.0];
    let [a, b, c, d, e, f] = key;
    if !(triad(a, b, c) && triad(a, e, f) && triad(d, b, f) && triad(d, e, c)) {
        return 0.0;
    }
    cached(six_j_cache(), key, || racah_6j(key))
}

fn racah_6j([a, b, c, d, e, f]: [i32; 6]) -> f64 {
    let h = |x: i32| i64::from(x) / 2;
    let radicand = triangle_coefficient(a, b, c)
        * triangle_coefficient(a, e, f)
        * triangle_coefficient(d, b, f)
        * triangle_coefficient(d, e, c);

    let sums = [h(a + b + c), h(a + e + f), h(d + b + f), h(d + e + c)];
    let caps = [h(a + b + d + e), h(a + c + d + f), h(b + c + e + f)];
    let k_min = sums.iter().copied().max().unwrap_or(0);
    let k_max = caps.iter().copied().min().unwrap_or(-1);
    let mut sum = BigRational::zero();
    for k in k_min..=k_max {
        let mut den = BigInt::one();
        for s in sums {
            den *= factorial(k - s);
        }
        for cap in caps {
            den *= factorial(cap - k);
        }
        let term = BigRational::new(factorial(k + 1), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    signed_sqrt(sum.is_negative(), &(radicand * &sum * &sum))
}

/// Nuclear spin of 133Cs.
pub const CS_NUCLEAR_SPIN: HalfInt = HalfInt::from_doubled(7);
/// Electronic angular momentum of 6S1/2 and 6P1/2.
pub const D1_J: HalfInt = HalfInt::from_doubled(1);

/// Absorption matrix element `<F' m'| d_q |F m>` on the Cs D1 line.
///
/// `amplitude` is in units of `<J'||d||J> / sqrt(2J+1)`, which makes the total
/// line strength out of every ground sublevel (summed over `F'`, `m'`, `q`)
/// equal to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DipoleElement {
    pub ground_f: HalfInt,
    pub ground_m: HalfInt,
    pub excited_f: HalfInt,
    pub excited_m: HalfInt,
    pub q: i32,
    pub amplitude: f64,
}

/// Hyperfine-resolved D1 dipole element via the Wigner–Eckart theorem.
///
/// Spherical component `q` raises the projection: the element vanishes unless
/// `excited_m = ground_m + q`.
pub fn dipole_element(
    ground_f: HalfInt,
    ground_m: HalfInt,
    excited_f: HalfInt,
    excited_m: HalfInt,
    q: i32,
) -> Result<DipoleElement, Error> {
    for (label, f) in [("ground", ground_f), ("excited", excited_f)] {
        if f != HalfInt::integer(3) && f != HalfInt::integer(4) {
            return Err(Error::AngularMomentum(format!(
                "{label} hyperfine level F = {f} is not part of the Cs D1 manifold (F must be 3 or 4)"
            )));
        }
    }
    check_pair(ground_f, ground_m)?;
    check_pair(excited_f, excited_m)?;
    if !(-1..=1).contains(&q) {
        return Err(Error::AngularMomentum(format!("spherical component q = {q} not in -1..=1")));
    }
    let mut element = DipoleElement {
        ground_f,
        ground_m,
        excited_f,
        excited_m,
        q,
        amplitude: 0.0,
    };
    let q_half = HalfInt::integer(q);
    if excited_m != ground_m + q_half {
        return Ok(element);
    }

    // <F' m'|d_q|F m> = (-1)^(F'-m') (F' 1 F; -m' q m) <F'||d||F>
    let three_j = wigner3j(excited_f, HalfInt::ONE, ground_f, -excited_m, q_half, ground_m)?;
    if three_j == 0.0 {
        return Ok(element);
    }
    // <F'||d||F> = (-1)^(J'+I+F+1) sqrt((2F+1)(2F'+1)) {J' F' I; F J 1} <J'||d||J>
    let six_j = wigner6j(D1_J, excited_f, CS_NUCLEAR_SPIN, ground_f, D1_J, HalfInt::ONE);
    let phase_exponent = (excited_f - excited_m).twice() / 2
        + (D1_J + CS_NUCLEAR_SPIN + ground_f + HalfInt::ONE).twice() / 2;
    let sign = if phase_exponent.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let degeneracy = f64::from((ground_f.twice() + 1) * (excited_f.twice() + 1));
    let normalization = f64::from(D1_J.twice() + 1).sqrt();
    element.amplitude = sign * three_j * six_j * degeneracy.sqrt() * normalization;
    Ok(element)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hi(twice: i32) -> HalfInt {
        HalfInt::from_doubled(twice)
    }

    #[test]
    fn three_j_reference_values() {
        let v = wigner3j(hi(2), hi(2), hi(0), hi(0), hi(0), hi(0)).unwrap();
        assert_abs_diff_eq!(v, -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        let v = wigner3j(hi(1), hi(1), hi(2), hi(1), hi(-1), hi(0)).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 6f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn three_j_selection_rules_are_exact_zeros() {
        // triangle violated
        assert_eq!(wigner3j(hi(2), hi(2), hi(6), hi(0), hi(0), hi(0)).unwrap(), 0.0);
        // m sum nonzero
        assert_eq!(wigner3j(hi(2), hi(2), hi(2), hi(2), hi(0), hi(0)).unwrap(), 0.0);
        // (1 1 1; 0 0 0) vanishes by parity
        assert_eq!(wigner3j(hi(2), hi(2), hi(2), hi(0), hi(0), hi(0)).unwrap(), 0.0);
    }

    #[test]
    fn three_j_rejects_projection_outside_range() {
        assert!(wigner3j(hi(2), hi(2), hi(2), hi(4), hi(-4), hi(0)).is_err());
        assert!(wigner3j(hi(2), hi(1), hi(1), hi(1), hi(-1), hi(0)).is_err());
    }

    #[test]
    fn six_j_reference_values() {
        assert_abs_diff_eq!(wigner6j(hi(1), hi(1), hi(2), hi(1), hi(1), hi(2)), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wigner6j(hi(2), hi(2), hi(2), hi(2), hi(2), hi(2)), 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(wigner6j(hi(2), hi(2), hi(8), hi(2), hi(2), hi(2)), 0.0);
    }

    #[test]
    fn six_j_column_permutations() {
        let base = wigner6j(hi(7), hi(1), hi(8), hi(1), hi(7), hi(2));
        assert!(base != 0.0);
        let perms = [
            wigner6j(hi(1), hi(7), hi(8), hi(7), hi(1), hi(2)),
            wigner6j(hi(8), hi(1), hi(7), hi(2), hi(7), hi(1)),
            // upper/lower swapped in columns one and three
            wigner6j(hi(1), hi(1), hi(2), hi(7), hi(7), hi(8)),
        ];
        for p in perms {
            assert_abs_diff_eq!(p, base, epsilon = 1e-15);
        }
    }

    #[test]
    fn forbidden_clock_pi_transition() {
        let d = dipole_element(4.into(), 0.into(), 4.into(), 0.into(), 0).unwrap();
        assert_eq!(d.amplitude, 0.0);
        let d = dipole_element(3.into(), 0.into(), 3.into(), 0.into(), 0).unwrap();
        assert_eq!(d.amplitude, 0.0);
    }

    #[test]
    fn selection_rule_on_projection() {
        let d = dipole_element(4.into(), 4.into(), 4.into(), 4.into(), 1).unwrap();
        assert_eq!(d.amplitude, 0.0);
    }

    #[test]
    fn clock_state_to_lower_excited_level() {
        // |4,0> -> |3',0>: 4/7 of the F'=3 strength 7/12
        let d = dipole_element(4.into(), 0.into(), 3.into(), 0.into(), 0).unwrap();
        assert_abs_diff_eq!(d.amplitude.powi(2), 1.0 / 3.0, epsilon = 1e-14);
        // sigma components carry the remaining 3/14 each
        let p = dipole_element(4.into(), 0.into(), 3.into(), 1.into(), 1).unwrap();
        assert_abs_diff_eq!(p.amplitude.powi(2), 7.0 / 12.0 * 3.0 / 14.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_levels_outside_d1() {
        assert!(dipole_element(5.into(), 0.into(), 4.into(), 0.into(), 0).is_err());
        assert!(dipole_element(4.into(), 0.into(), 2.into(), 0.into(), 0).is_err());
        assert!(dipole_element(4.into(), 0.into(), 4.into(), 1.into(), 2).is_err());
    }

    #[test]
    fn halfint_display() {
        assert_eq!(HalfInt::from_doubled(7).to_string(), "7/2");
        assert_eq!(HalfInt::integer(-3).to_string(), "-3");
    }
}
