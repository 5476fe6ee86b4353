//! Dual-mode arithmetic: exact rationals for enumeration, `f64` for the
//! convex solvers.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num::bigint::BigInt;
use num::{BigRational, One, Signed, ToPrimitive, Zero};

use crate::game::CostPolynomial;

pub type Rational = BigRational;

/// Relative slack used when comparing floating-point costs for strict
/// improvement. Exact arithmetic never uses it.
pub const FLOAT_IMPROVEMENT_SLACK: f64 = 1e-12;

pub trait Scalar:
    Clone
    + PartialOrd
    + Debug
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + 'static
{
    const EXACT: bool;

    fn from_rational(r: &Rational) -> Self;
    fn to_f64(&self) -> f64;
    fn to_rational(&self) -> Option<Rational>;
    fn eval_poly(poly: &CostPolynomial, x: &Self) -> Self;

    /// `candidate < current`, with float noise ignored.
    fn improves(candidate: &Self, current: &Self) -> bool;

    fn from_usize(n: usize) -> Self {
        Self::from_rational(&Rational::from_integer(BigInt::from(n)))
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_rational(r: &Rational) -> Self {
        rational_to_f64(r)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn to_rational(&self) -> Option<Rational> {
        None
    }

    fn eval_poly(poly: &CostPolynomial, x: &Self) -> Self {
        poly.eval(*x)
    }

    fn improves(candidate: &Self, current: &Self) -> bool {
        *candidate < *current - FLOAT_IMPROVEMENT_SLACK * (1.0 + current.abs())
    }

    fn from_usize(n: usize) -> Self {
        n as f64
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }

    fn to_rational(&self) -> Option<Rational> {
        Some(self.clone())
    }

    fn eval_poly(poly: &CostPolynomial, x: &Self) -> Self {
        poly.eval_exact(x)
    }

    fn improves(candidate: &Self, current: &Self) -> bool {
        candidate < current
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    if let Some(v) = num::ToPrimitive::to_f64(r) {
        if v.is_finite() {
            return v;
        }
    }
    // Huge numerators or denominators: fall back to a scaled division.
    let numer = r.numer().to_f64().unwrap_or(f64::NAN);
    let denom = r.denom().to_f64().unwrap_or(f64::NAN);
    numer / denom
}

/// Exact conversion of a finite float. NaN and infinities map to `None`.
pub fn rational_from_f64(x: f64) -> Option<Rational> {
    Rational::from_float(x)
}

pub fn rational(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn integer(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `"3"`, `"-2/7"`, `"0.125"` and `"1e-3"` exactly.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_decimal(num.trim())?;
        let den = parse_decimal(den.trim())?;
        if den.is_zero() {
            return None;
        }
        return Some(num / den);
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Option<Rational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if all_digits.is_empty() {
        BigInt::zero()
    } else {
        all_digits.parse().ok()?
    };
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = Rational::from_integer(numer);
    if scale >= 0 {
        value *= Rational::from_integer(num::pow(ten, scale as usize));
    } else {
        value /= Rational::from_integer(num::pow(ten, (-scale) as usize));
    }
    Some(if negative { -value } else { value })
}

/// Integer power of a rational (non-negative exponent).
pub fn rational_pow(base: &Rational, exp: u32) -> Rational {
    let mut acc = Rational::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Denominator/numerator bit sizes small enough that exact enumeration stays cheap.
pub fn is_small_rational(r: &Rational) -> bool {
    r.numer().abs().bits() <= 96 && r.denom().bits() <= 48
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals_exactly() {
        assert_eq!(parse_rational("8/7"), Some(rational(8, 7)));
        assert_eq!(parse_rational("0.9"), Some(rational(9, 10)));
        assert_eq!(parse_rational("-1.25e1"), Some(rational(-25, 2)));
        assert_eq!(parse_rational("3"), Some(integer(3)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(parse_rational(""), None);
        assert_eq!(parse_rational("1.5/0.5"), Some(integer(3)));
    }

    #[test]
    fn float_improvement_ignores_noise() {
        assert!(!f64::improves(&(1.0 - 1e-15), &1.0));
        assert!(f64::improves(&0.5, &1.0));
        assert!(Rational::improves(&rational(1, 3), &rational(1, 2)));
        assert!(!Rational::improves(&rational(1, 2), &rational(1, 2)));
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(10, 2), 45.0);
        assert_eq!(binomial(4, 0), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
    }
}
