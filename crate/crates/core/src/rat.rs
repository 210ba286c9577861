//! Exact rational arithmetic for costs and budgets.
//!
//! Budget feasibility is a hard inequality, so every cost-carrying value
//! in this crate is an arbitrary-precision rational rather than a float.
//! Values serialize as strings: an integer (`"3"`), a terminating decimal
//! (`"0.35"`), or an `n/d` fraction when the decimal expansion does not
//! terminate (`"7/3"`). Parsing accepts all three forms.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::Error;

pub type Rat = BigRational;

/// Longest terminating decimal emitted before falling back to `n/d` form.
const MAX_DECIMAL_DIGITS: u32 = 64;

/// Exact rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact rational from an unsigned integer.
pub fn rat_uint(n: u64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion from a finite float.
pub fn rat_from_f64(x: f64) -> Result<Rat, Error> {
    Rat::from_float(x).ok_or_else(|| Error::InvalidNumber(format!("{x}")))
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parse `"3"`, `"-1.25"`, or `"7/3"` into an exact rational.
pub fn parse_rat(s: &str) -> Result<Rat, Error> {
    let s = s.trim();
    let err = || Error::InvalidNumber(s.to_string());
    if s.is_empty() {
        return Err(err());
    }
    if let Some((n, d)) = s.split_once('/') {
        let numer: BigInt = n.trim().parse().map_err(|_| err())?;
        let denom: BigInt = d.trim().parse().map_err(|_| err())?;
        if denom.is_zero() {
            return Err(err());
        }
        return Ok(Rat::new(numer, denom));
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !digits_ok(int_part) || !digits_ok(frac_part) {
        return Err(err());
    }
    let mut numer: BigInt = if int_part.is_empty() {
        BigInt::zero()
    } else {
        int_part.parse().map_err(|_| err())?
    };
    let mut denom = BigInt::one();
    if !frac_part.is_empty() {
        let frac: BigInt = frac_part.parse().map_err(|_| err())?;
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        numer = numer * &scale + frac;
        denom = scale;
    }
    Ok(Rat::new(numer * sign, denom))
}

/// Render exactly: integer, terminating decimal, or `n/d` fallback.
pub fn format_rat(r: &Rat) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    match terminating_digits(r.denom().magnitude()) {
        Some(digits) if digits <= MAX_DECIMAL_DIGITS => {
            let scale = BigInt::from(10u32).pow(digits);
            let scaled = (r * &scale).to_integer();
            let neg = scaled.is_negative();
            let mag = scaled.magnitude().to_string();
            let mag = if mag.len() <= digits as usize {
                format!("{:0>width$}", mag, width = digits as usize + 1)
            } else {
                mag
            };
            let split = mag.len() - digits as usize;
            let frac = mag[split..].trim_end_matches('0');
            let frac = if frac.is_empty() { "0" } else { frac };
            format!("{}{}.{}", if neg { "-" } else { "" }, &mag[..split], frac)
        }
        _ => format!("{}/{}", r.numer(), r.denom()),
    }
}

/// Decimal digits needed for an exact expansion, if `d` is of form 2^a·5^b.
fn terminating_digits(d: &BigUint) -> Option<u32> {
    let mut d = d.clone();
    let two = BigUint::from(2u32);
    let five = BigUint::from(5u32);
    let mut a = 0u32;
    let mut b = 0u32;
    while (&d % &two).is_zero() {
        d /= &two;
        a += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        b += 1;
    }
    if d.is_one() {
        Some(a.max(b))
    } else {
        None
    }
}

/// Approximate fixed-point rendering for CSV output.
pub fn format_rat_approx(r: &Rat, decimals: usize) -> String {
    format!("{:.*}", decimals, rat_to_f64(r))
}

/// Serde adapter: rational as exact string.
pub mod serde_rat {
    use super::{format_rat, parse_rat, Rat};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rat(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        let raw = String::deserialize(d)?;
        parse_rat(&raw).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter: optional rational as exact string or null.
pub mod serde_rat_opt {
    use super::{format_rat, parse_rat, Rat};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Rat>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&format_rat(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rat>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        raw.map(|s| parse_rat(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}
