use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RationalError {
    #[error("cannot parse {0:?} as a rational number")]
    Parse(String),
    #[error("zero denominator in {0:?}")]
    ZeroDenominator(String),
    #[error("amount {0} is negative")]
    Negative(String),
}

/// Parses `"7"`, `"3/4"`, `"-2"` or a decimal such as `"0.025"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational, RationalError> {
    let t = s.trim();
    let err = || RationalError::Parse(s.to_string());
    if let Some((n, d)) = t.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err())?;
        let d: BigInt = d.trim().parse().map_err(|_| err())?;
        if d.is_zero() {
            return Err(RationalError::ZeroDenominator(s.to_string()));
        }
        return Ok(BigRational::new(n, d));
    }
    if let Some((whole, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let negative = whole.starts_with('-');
        let whole_digits = whole.trim_start_matches(['-', '+']);
        let digits = format!("{}{}", if whole_digits.is_empty() { "0" } else { whole_digits }, frac);
        let mut n: BigInt = digits.parse().map_err(|_| err())?;
        if negative {
            n = -n;
        }
        let d = num_traits::pow(BigInt::from(10u32), frac.len());
        return Ok(BigRational::new(n, d));
    }
    let n: BigInt = t.parse().map_err(|_| err())?;
    Ok(BigRational::from_integer(n))
}

pub fn format_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// A non-negative exact amount of reward units.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(BigRational);

impl Money {
    pub fn zero() -> Self {
        Money(BigRational::zero())
    }

    pub fn from_integer(n: u64) -> Self {
        Money(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn new(numer: u64, denom: u64) -> Self {
        assert!(denom != 0, "zero denominator");
        Money(BigRational::new(numer.into(), denom.into()))
    }

    pub fn from_ratio(r: BigRational) -> Result<Self, RationalError> {
        if r.is_negative() {
            return Err(RationalError::Negative(format_rational(&r)));
        }
        Ok(Money(r))
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn into_ratio(self) -> BigRational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn times(&self, count: u64) -> Money {
        Money(&self.0 * BigRational::from_integer(count.into()))
    }

    /// Multiplies by a non-negative rational.
    pub fn scale(&self, factor: &BigRational) -> Money {
        assert!(!factor.is_negative(), "negative scale factor");
        Money(&self.0 * factor)
    }

    pub fn checked_sub(&self, other: &Money) -> Option<Money> {
        if other.0 > self.0 {
            None
        } else {
            Some(Money(&self.0 - &other.0))
        }
    }

    pub fn min_of(a: &Money, b: &Money) -> Money {
        if a <= b { a.clone() } else { b.clone() }
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl FromStr for Money {
    type Err = RationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Money::from_ratio(parse_rational(s)?)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Money> for &'a Money {
    type Output = Money;
    fn add(self, rhs: &Money) -> Money {
        Money(&self.0 + &rhs.0)
    }
}

impl AddAssign<&Money> for Money {
    fn add_assign(&mut self, rhs: &Money) {
        self.0 += &rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::zero(), |a, b| a + b)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RationalText::deserialize(d)?;
        raw.0.parse().map_err(serde::de::Error::custom)
    }
}

/// Accepts either a string (`"3/4"`, `"0.5"`) or a bare integer.
#[derive(Debug, Clone)]
pub struct RationalText(pub String);

impl<'de> Deserialize<'de> for RationalText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Int(i) => RationalText(i.to_string()),
            Raw::Text(s) => RationalText(s),
        })
    }
}

/// serde helpers for `BigRational` fields rendered as `"p/q"` strings.
pub mod rational_serde {
    use super::*;

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let raw = RationalText::deserialize(d)?;
        parse_rational(&raw.0).map_err(serde::de::Error::custom)
    }
}

pub mod option_rational_serde {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Option<BigRational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&format_rational(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigRational>, D::Error> {
        let raw = Option::<RationalText>::deserialize(d)?;
        raw.map(|t| parse_rational(&t.0).map_err(serde::de::Error::custom)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        assert_eq!(parse_rational("7").unwrap(), BigRational::from_integer(7.into()));
        assert_eq!(parse_rational("6/8").unwrap(), BigRational::new(3.into(), 4.into()));
        assert_eq!(parse_rational("0.025").unwrap(), BigRational::new(1.into(), 40.into()));
        assert_eq!(parse_rational("-1.5").unwrap(), BigRational::new((-3).into(), 2.into()));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1.").is_err());
    }

    #[test]
    fn money_rejects_negative() {
        assert!("-1".parse::<Money>().is_err());
        assert_eq!("1/2".parse::<Money>().unwrap(), Money::new(1, 2));
        assert_eq!(Money::new(4, 2).to_string(), "2");
        assert_eq!(Money::new(1, 3).to_string(), "1/3");
    }

    #[test]
    fn money_arithmetic_is_exact() {
        let third = Money::new(1, 3);
        let sum: Money = vec![third.clone(), third.clone(), third].into_iter().sum();
        assert_eq!(sum, Money::from_integer(1));
        assert_eq!(Money::from_integer(3).checked_sub(&Money::from_integer(4)), None);
    }

    #[test]
    fn money_serde_round_trip() {
        let m = Money::new(7, 3);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"7/3\"");
        assert_eq!(serde_json::from_str::<Money>(&json).unwrap(), m);
        assert_eq!(serde_json::from_str::<Money>("5").unwrap(), Money::from_integer(5));
    }
}
