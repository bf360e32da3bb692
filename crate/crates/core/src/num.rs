//! Exact rational arithmetic helpers and the high-precision float used by the
//! bound calculator.

use std::str::FromStr;

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational value. Costs, budgets, valuations and payments all use it.
pub type Q = BigRational;

/// Decimal float with [`HP_DIGITS`] significant digits.
pub type Hp = FBig<HalfEven, 10>;

pub const HP_DIGITS: usize = 60;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

/// Parses `"p/q"`, an integer, or a finite decimal such as `"0.685"`.
pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
        if d.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(Q::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer =
        BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| bad())?;
    let denom = num_traits::pow(BigInt::from(10), frac_part.len());
    let v = Q::new(numer, denom);
    Ok(if neg { -v } else { v })
}

/// Canonical text form: `"p/q"` in lowest terms, or `"p"` for integers.
pub fn render_q(v: &Q) -> String {
    if v.is_integer() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

pub fn q_to_f64(v: &Q) -> f64 {
    v.to_f64()
        .unwrap_or(if v.is_negative() { f64::MIN } else { f64::MAX })
}

pub fn hp(s: &str) -> Result<Hp> {
    Hp::from_str(s.trim())
        .map(|v| v.with_precision(HP_DIGITS).value())
        .map_err(|_| Error::Parse(format!("not a decimal number: {s:?}")))
}

pub fn hp_int(v: i64) -> Hp {
    Hp::from(v).with_precision(HP_DIGITS).value()
}

pub fn hp_from_q(v: &Q) -> Hp {
    let n = hp(&v.numer().to_string()).expect("integer literal");
    let d = hp(&v.denom().to_string()).expect("integer literal");
    n / d
}

pub fn hp_to_f64(v: &Hp) -> f64 {
    v.to_f64().value()
}

/// Short decimal rendering (20 significant digits) for reports.
pub fn hp_render(v: &Hp) -> String {
    let rounded = v.clone().with_precision(20).value();
    rounded.to_string()
}

/// Exact decimal text when the denominator divides a power of ten, else `"p/q"`.
pub fn render_decimal(v: &Q) -> String {
    let mut den = v.denom().clone();
    let mut scale = 0usize;
    let (two, five) = (BigInt::from(2), BigInt::from(5));
    for f in [&two, &five] {
        while (&den % f).is_zero() {
            den /= f;
        }
    }
    if den != BigInt::from(1) {
        return render_q(v);
    }
    let mut scaled = v.clone();
    while !scaled.is_integer() {
        scaled *= Q::from_integer(BigInt::from(10));
        scale += 1;
    }
    let digits = scaled.numer().abs().to_string();
    let sign = if v.is_negative() { "-" } else { "" };
    if scale == 0 {
        return format!("{sign}{digits}");
    }
    let padded = format!("{digits:0>width$}", width = scale + 1);
    let (int, frac) = padded.split_at(padded.len() - scale);
    format!("{sign}{int}.{frac}")
}

pub(crate) mod hp_string {
    use super::{hp, Hp};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Hp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hp, D::Error> {
        let s = String::deserialize(d)?;
        hp(&s).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod q_string {
    use super::{parse_q, render_q, Q};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Q, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&render_q(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        parse_q(&s).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod opt_q_string {
    use super::{parse_q, render_q, Q};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Q>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_some(&render_q(x)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Q>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| parse_q(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub(crate) mod q_vec_string {
    use super::{parse_q, render_q, Q};
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&render_q(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Q>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| parse_q(s).map_err(serde::de::Error::custom))
            .collect()
    }
}
