//! Precision-controlled scalars.
//!
//! Exact values are `rug::Rational`. Transcendental constants (logarithms,
//! fractional powers) are evaluated with MPFR at a working precision above the
//! requested one and then *snapped* to a dyadic rational, so that every
//! downstream identity built from them holds exactly. Quantities whose
//! magnitude cannot be materialized (2^{-3n^2} for n ~ 10^7) live in
//! [`LogValue`].

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use rug::ops::Pow;
use rug::{Float, Integer, Rational};

use crate::error::{LabError, Result};

pub const DEFAULT_PRECISION: u32 = 256;
pub const MIN_PRECISION: u32 = 32;
const GUARD_BITS: u32 = 64;

pub fn check_precision(precision_bits: u32) -> Result<()> {
    if precision_bits < MIN_PRECISION {
        return Err(LabError::invalid(format!(
            "precision_bits must be at least {MIN_PRECISION}, got {precision_bits}"
        )));
    }
    Ok(())
}

/// Rounds `x` to the nearest multiple of 2^-bits.
pub fn snap_float(x: &Float, bits: u32) -> Rational {
    let q = x
        .to_rational()
        .expect("snap_float called on a non-finite value");
    let scaled: Rational = q << bits;
    let rounded = Rational::from(scaled.round());
    rounded >> bits
}

type LogKey = (Integer, u32);

fn log_cache() -> &'static RwLock<HashMap<LogKey, Rational>> {
    static CACHE: OnceLock<RwLock<HashMap<LogKey, Rational>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// The snapped constant λ_n ≈ ln(n+1), with |λ_n − ln(n+1)| ≤ 2^-precision_bits.
///
/// The result is a dyadic rational with denominator dividing 2^(precision_bits+1);
/// repeated calls return the identical value.
pub fn log_nat(n: u64, precision_bits: u32) -> Result<Rational> {
    log_nat_big(&Integer::from(n), precision_bits)
}

pub fn log_nat_big(n: &Integer, precision_bits: u32) -> Result<Rational> {
    if *n <= 0 {
        return Err(LabError::invalid("log_nat requires n >= 1"));
    }
    check_precision(precision_bits)?;
    let key = (n.clone(), precision_bits);
    if let Some(v) = log_cache().read().unwrap().get(&key) {
        return Ok(v.clone());
    }
    let arg = Integer::from(n + 1u32);
    let wp = precision_bits + GUARD_BITS + 32;
    let ln = Float::with_val(wp, &arg).ln();
    let snapped = snap_float(&ln, precision_bits + 1);
    // Concurrent writers insert the same value.
    log_cache()
        .write()
        .unwrap()
        .entry(key)
        .or_insert_with(|| snapped.clone());
    Ok(snapped)
}

/// Snapped `r^(num/den)` for positive `r`, within 2^-precision_bits.
pub fn snap_pow(r: &Rational, num: i32, den: u32, precision_bits: u32) -> Result<Rational> {
    if *r <= 0 {
        return Err(LabError::domain("fractional power of a non-positive value"));
    }
    if den == 0 {
        return Err(LabError::invalid("zero root index"));
    }
    let magnitude_bits = log2_floor_abs(r).unsigned_abs() as u32;
    let wp = precision_bits + GUARD_BITS + magnitude_bits.min(1 << 20);
    let root = Float::with_val(wp, r).root(den);
    let value = root.pow(num);
    Ok(snap_float(&value, precision_bits + 1))
}

/// Approximately floor(log2 |r|), from bit lengths; r must be nonzero.
fn log2_floor_abs(r: &Rational) -> i64 {
    r.numer().significant_bits() as i64 - r.denom().significant_bits() as i64
}

/// log2 |r| evaluated at `wp` bits. Handles values far outside the f64 range.
pub fn log2_rational(r: &Rational, wp: u32) -> Float {
    let num = Float::with_val(wp, &*r.numer().as_abs()).log2();
    let den = Float::with_val(wp, r.denom()).log2();
    num - den
}

fn is_power_of_two(i: &Integer) -> bool {
    *i > 0 && i.is_power_of_two()
}

/// Renders a rational as a decimal string with `digits` significant digits.
/// Integers are written out exactly.
pub fn decimal_string(r: &Rational, digits: usize) -> String {
    if *r.denom() == 1 {
        return r.numer().to_string();
    }
    let bits = (digits as f64 / std::f64::consts::LOG10_2).ceil() as u32 + 8;
    let f = Float::with_val(bits, r);
    f.to_string_radix(10, Some(digits))
}

/// Significant decimal digits carried by `precision_bits` binary digits.
pub fn decimal_digits(precision_bits: u32) -> usize {
    (precision_bits as f64 * std::f64::consts::LOG10_2).ceil() as usize
}

/// Exact rational text form: `p` or `p/q`.
pub fn exact_string(r: &Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `p`, `p/q`, or a decimal literal such as `-1.25e-3` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || LabError::invalid(format!("cannot parse '{s}' as a number"));
    if s.is_empty() {
        return Err(bad());
    }
    if s.contains('/') {
        return Rational::from_str_radix(s, 10).map_err(|_| bad());
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = Rational::from(Integer::from_str_radix(&digits, 10).map_err(|_| bad())?);
    let scale = exponent - frac_part.len() as i32;
    let ten = Rational::from(10);
    if scale >= 0 {
        value *= ten.pow(scale as u32);
    } else {
        value /= ten.pow((-scale) as u32);
    }
    if neg {
        value = -value;
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(r: &Rational) -> Sign {
        match r.cmp0() {
            Ordering::Less => Sign::Negative,
            Ordering::Equal => Sign::Zero,
            Ordering::Greater => Sign::Positive,
        }
    }

    pub fn mul(self, other: Sign) -> Sign {
        match (self, other) {
            (Sign::Zero, _) | (_, Sign::Zero) => Sign::Zero,
            (a, b) if a == b => Sign::Positive,
            _ => Sign::Negative,
        }
    }

    pub fn neg(self) -> Sign {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Zero => Sign::Zero,
            Sign::Positive => Sign::Negative,
        }
    }
}

/// Signed value stored as `sign · 2^log2mag`.
///
/// `lossy` is sticky: it is raised when an addition cancels below half the
/// working precision and is carried through every later operation.
#[derive(Clone, Debug)]
pub struct LogValue {
    sign: Sign,
    log2mag: Rational,
    precision_bits: u32,
    lossy: bool,
}

impl PartialEq for LogValue {
    fn eq(&self, other: &Self) -> bool {
        self.sign == other.sign && (self.sign == Sign::Zero || self.log2mag == other.log2mag)
    }
}

impl LogValue {
    pub fn zero(precision_bits: u32) -> Self {
        LogValue {
            sign: Sign::Zero,
            log2mag: Rational::new(),
            precision_bits,
            lossy: false,
        }
    }

    pub fn new(sign: Sign, log2mag: Rational, precision_bits: u32) -> Self {
        if sign == Sign::Zero {
            return Self::zero(precision_bits);
        }
        LogValue {
            sign,
            log2mag,
            precision_bits,
            lossy: false,
        }
    }

    /// Positive value 2^exponent.
    pub fn pow2(exponent: impl Into<Rational>, precision_bits: u32) -> Self {
        Self::new(Sign::Positive, exponent.into(), precision_bits)
    }

    /// Exact when |r| is a power of two, otherwise log2 snapped to the precision grid.
    pub fn from_rational(r: &Rational, precision_bits: u32) -> Self {
        let sign = Sign::of(r);
        if sign == Sign::Zero {
            return Self::zero(precision_bits);
        }
        let num = Integer::from(&*r.numer().as_abs());
        let log2mag = if is_power_of_two(&num) && is_power_of_two(r.denom()) {
            let e = num.significant_bits() as i64 - r.denom().significant_bits() as i64;
            Rational::from(e)
        } else {
            let wp = precision_bits + GUARD_BITS + 64;
            snap_float(&log2_rational(r, wp), precision_bits + 1)
        };
        Self::new(sign, log2mag, precision_bits)
    }

    /// Builds a value from a high-precision log2 magnitude.
    pub fn from_log2(sign: Sign, log2: &Float, precision_bits: u32) -> Self {
        Self::new(sign, snap_float(log2, precision_bits + 1), precision_bits)
    }

    /// Builds a positive value e^ln_value.
    pub fn from_ln(ln_value: &Float, precision_bits: u32) -> Self {
        let wp = ln_value.prec().max(precision_bits + GUARD_BITS);
        let log2e = Float::with_val(wp, 1).exp().log2();
        let l2 = Float::with_val(wp, ln_value * &log2e);
        Self::from_log2(Sign::Positive, &l2, precision_bits)
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn log2mag(&self) -> &Rational {
        &self.log2mag
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    pub fn is_zero(&self) -> bool {
        self.sign == Sign::Zero
    }

    pub fn with_lossy(mut self, lossy: bool) -> Self {
        self.lossy |= lossy;
        self
    }

    pub fn mul(&self, other: &LogValue) -> LogValue {
        let sign = self.sign.mul(other.sign);
        let prec = self.precision_bits.min(other.precision_bits);
        let lossy = self.lossy || other.lossy;
        if sign == Sign::Zero {
            return Self::zero(prec).with_lossy(lossy);
        }
        LogValue {
            sign,
            log2mag: Rational::from(&self.log2mag + &other.log2mag),
            precision_bits: prec,
            lossy,
        }
    }

    pub fn recip(&self) -> Result<LogValue> {
        if self.is_zero() {
            return Err(LabError::DegenerateInput("reciprocal of zero".into()));
        }
        Ok(LogValue {
            sign: self.sign,
            log2mag: Rational::from(-&self.log2mag),
            precision_bits: self.precision_bits,
            lossy: self.lossy,
        })
    }

    pub fn div(&self, other: &LogValue) -> Result<LogValue> {
        Ok(self.mul(&other.recip()?))
    }

    pub fn neg(&self) -> LogValue {
        LogValue {
            sign: self.sign.neg(),
            ..self.clone()
        }
    }

    /// |self|^e for a rational exponent (sign dropped).
    pub fn abs_pow(&self, e: &Rational) -> LogValue {
        if self.is_zero() {
            return self.clone();
        }
        LogValue {
            sign: Sign::Positive,
            log2mag: Rational::from(&self.log2mag * e),
            precision_bits: self.precision_bits,
            lossy: self.lossy,
        }
    }

    /// Sum via the factored form `max · (1 ± 2^Δ)`, Δ = min − max ≤ 0.
    pub fn add(&self, other: &LogValue) -> LogValue {
        let prec = self.precision_bits.min(other.precision_bits);
        let lossy = self.lossy || other.lossy;
        if self.is_zero() {
            return LogValue {
                precision_bits: prec,
                ..other.clone()
            }
            .with_lossy(lossy);
        }
        if other.is_zero() {
            return LogValue {
                precision_bits: prec,
                ..self.clone()
            }
            .with_lossy(lossy);
        }
        let (hi, lo) = if self.log2mag >= other.log2mag {
            (self, other)
        } else {
            (other, self)
        };
        let delta = Rational::from(&lo.log2mag - &hi.log2mag);
        let same_sign = hi.sign == lo.sign;
        // Below the resolution of the log2mag grid the correction vanishes.
        let cutoff = Rational::from(-(prec as i64) - 8);
        if delta < cutoff {
            return LogValue {
                sign: hi.sign,
                log2mag: hi.log2mag.clone(),
                precision_bits: prec,
                lossy,
            };
        }
        let wp = prec + GUARD_BITS;
        let pow = Float::with_val(wp, &delta).exp2();
        let factor = if same_sign {
            Float::with_val(wp, 1 + &pow)
        } else {
            Float::with_val(wp, 1 - &pow)
        };
        if factor.is_zero() {
            return Self::zero(prec).with_lossy(true);
        }
        let threshold = Float::with_val(wp, -((prec / 2) as i32)).exp2();
        let cancelled = !same_sign && factor < threshold;
        let corr = snap_float(&factor.log2(), prec + 1);
        LogValue {
            sign: hi.sign,
            log2mag: Rational::from(&hi.log2mag + &corr),
            precision_bits: prec,
            lossy: lossy || cancelled,
        }
    }

    pub fn sub(&self, other: &LogValue) -> LogValue {
        self.add(&other.neg())
    }

    /// Value as an MPFR float at `wp` bits; overflows to ±inf or 0 outside MPFR's range.
    pub fn to_float(&self, wp: u32) -> Float {
        match self.sign {
            Sign::Zero => Float::new(wp),
            s => {
                let v = Float::with_val(wp, &self.log2mag).exp2();
                if s == Sign::Negative {
                    -v
                } else {
                    v
                }
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self.sign {
            Sign::Zero => 0.0,
            s => {
                let l = self.log2mag.to_f64();
                let v = l.exp2();
                if s == Sign::Negative {
                    -v
                } else {
                    v
                }
            }
        }
    }

    pub fn log2_f64(&self) -> f64 {
        self.log2mag.to_f64()
    }
}

impl PartialOrd for LogValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                Sign::Zero => Ordering::Equal,
                Sign::Positive => self.log2mag.cmp(&other.log2mag),
                Sign::Negative => other.log2mag.cmp(&self.log2mag),
            },
            o => o,
        })
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = decimal_string(&self.log2mag, decimal_digits(self.precision_bits));
        match self.sign {
            Sign::Zero => write!(f, "0"),
            Sign::Positive => write!(f, "log2:{body}"),
            Sign::Negative => write!(f, "-log2:{body}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(sign: Sign, e: i64) -> LogValue {
        LogValue::new(sign, Rational::from(e), DEFAULT_PRECISION)
    }

    #[test]
    fn log_nat_rejects_bad_arguments() {
        assert!(matches!(log_nat(0, 64), Err(LabError::InvalidArgument(_))));
        assert!(matches!(log_nat(1, 31), Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn log_nat_is_deterministic_and_dyadic() {
        let a = log_nat(7, 128).unwrap();
        let b = log_nat(7, 128).unwrap();
        assert_eq!(a, b);
        assert!(a.denom().is_power_of_two());
        assert!(a.denom().significant_bits() <= 130);
    }

    #[test]
    fn log_nat_coarse_and_fine_agree() {
        let coarse = log_nat(1, 32).unwrap();
        let fine = log_nat(1, 64).unwrap();
        let diff = Rational::from(&coarse - &fine).abs();
        assert!(diff <= Rational::from((1, 1u64 << 32)));
    }

    #[test]
    fn log_nat_monotone() {
        let mut prev = log_nat(1, 64).unwrap();
        for n in 2..200u64 {
            let cur = log_nat(n, 64).unwrap();
            assert!(cur > prev, "n={n}");
            prev = cur;
        }
    }

    #[test]
    fn lv_mul_examples() {
        assert_eq!(lv(Sign::Positive, 3).mul(&lv(Sign::Positive, 4)), lv(Sign::Positive, 7));
        assert!(lv(Sign::Positive, 5).mul(&LogValue::zero(64)).is_zero());
        assert_eq!(
            lv(Sign::Negative, -10).mul(&lv(Sign::Negative, -10)),
            lv(Sign::Positive, -20)
        );
    }

    #[test]
    fn lv_add_examples() {
        assert_eq!(lv(Sign::Positive, 10).add(&lv(Sign::Positive, 10)), lv(Sign::Positive, 11));
        assert_eq!(lv(Sign::Positive, 0).add(&LogValue::zero(256)), lv(Sign::Positive, 0));
        let big = lv(Sign::Positive, 10000).add(&lv(Sign::Positive, 0));
        assert_eq!(big, lv(Sign::Positive, 10000));
        assert!(!big.is_lossy());
    }

    #[test]
    fn lv_add_flags_cancellation() {
        let a = LogValue::from_rational(&Rational::from(3), 64);
        let b = a.neg();
        let z = a.add(&b);
        assert!(z.is_zero());
        assert!(z.is_lossy());

        let x = LogValue::from_rational(&Rational::from(1), 64);
        let near_one = Rational::from(1) - Rational::from((1, 1u64 << 40));
        let y = LogValue::from_rational(&near_one, 64).neg();
        let s = x.add(&y);
        assert!(s.is_lossy());
        assert!(s.mul(&x).is_lossy());

        let y = LogValue::from_rational(&Rational::from((1, 4)), 64).neg();
        assert!(!x.add(&y).is_lossy());
    }

    #[test]
    fn from_rational_is_exact_on_powers_of_two() {
        let v = LogValue::from_rational(&Rational::from((1, 1u64 << 47)), 64);
        assert_eq!(*v.log2mag(), -47);
        let v = LogValue::from_rational(&Rational::from(-8), 64);
        assert_eq!(v.sign(), Sign::Negative);
        assert_eq!(*v.log2mag(), 3);
    }

    #[test]
    fn ordering_follows_log2mag() {
        assert!(lv(Sign::Positive, 3) < lv(Sign::Positive, 4));
        assert!(lv(Sign::Negative, 3) > lv(Sign::Negative, 4));
        assert!(lv(Sign::Negative, 3) < LogValue::zero(64));
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(parse_rational("3/4").unwrap(), Rational::from((3, 4)));
        assert_eq!(parse_rational("-1.25e-2").unwrap(), Rational::from((-1, 80)));
        assert_eq!(parse_rational("1e3").unwrap(), 1000);
        assert_eq!(parse_rational(".5").unwrap(), Rational::from((1, 2)));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn snap_pow_matches_roots() {
        let r = snap_pow(&Rational::from(64), 1, 6, 128).unwrap();
        assert_eq!(r, 2);
        let r = snap_pow(&Rational::from(8), -1, 3, 128).unwrap();
        assert_eq!(r, Rational::from((1, 2)));
    }
}
