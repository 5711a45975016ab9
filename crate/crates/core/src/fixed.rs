//! Signed two's-complement fixed-point arithmetic.
//!
//! [`FixedFormat`] describes an arbitrary `Q(total - frac).frac` layout and
//! carries the raw-integer kernels (encode, saturating add, rounded multiply,
//! rounded division, rounded square roots). [`Fixed24`] is the 24-bit format
//! with 16 fractional bits used throughout the bit-faithful inference path;
//! the sign bit is counted inside the 8 integer bits, so values span
//! `[-128, 128 - 2^-16]`.
//!
//! All conversions round to nearest, ties to even, and every result is
//! saturated into the representable range. Nothing ever wraps around.

use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use alloc::format;

use crate::error::{Error, Result};

/// How a value that falls between two representable raw integers is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Round to nearest, ties to even.
    #[default]
    NearestEven,
    /// Round toward negative infinity (plain arithmetic shift).
    Floor,
}

/// Bit layout of a signed fixed-point number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedFormat {
    total_bits: u32,
    frac_bits: u32,
    rounding: Rounding,
}

impl Default for FixedFormat {
    fn default() -> Self {
        Self::Q8_16
    }
}

impl FixedFormat {
    /// 24 bits total, 16 fractional, sign included in the integer part.
    pub const Q8_16: Self = Self {
        total_bits: 24,
        frac_bits: 16,
        rounding: Rounding::NearestEven,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(1 <= frac_bits && frac_bits < total_bits && total_bits <= 64) {
            return Err(Error::InvalidFormat(format!(
                "need 1 <= frac_bits < total_bits <= 64, got total={total_bits} frac={frac_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
            rounding: Rounding::NearestEven,
        })
    }

    pub const fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub const fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub const fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub const fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub const fn max_raw(&self) -> i64 {
        ((1i128 << (self.total_bits - 1)) - 1) as i64
    }

    pub const fn min_raw(&self) -> i64 {
        (-(1i128 << (self.total_bits - 1))) as i64
    }

    /// Value of one unit in the last place.
    pub fn ulp(&self) -> f64 {
        libm::ldexp(1.0, -(self.frac_bits as i32))
    }

    pub fn saturate(&self, wide: i128) -> i64 {
        wide.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }

    /// Quantizes a real number: `round(x * 2^frac)` saturated to the range.
    pub fn encode(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        // Scaling by a power of two is exact in binary floating point.
        let scaled = libm::ldexp(x, self.frac_bits as i32);
        let rounded = match self.rounding {
            Rounding::NearestEven => libm::rint(scaled),
            Rounding::Floor => libm::floor(scaled),
        };
        let bound = libm::ldexp(1.0, self.total_bits as i32 - 1);
        Ok(if rounded >= bound {
            self.max_raw()
        } else if rounded < -bound {
            self.min_raw()
        } else {
            rounded as i64
        })
    }

    pub fn decode(&self, raw: i64) -> f64 {
        libm::ldexp(raw as f64, -(self.frac_bits as i32))
    }

    pub fn add(&self, a: i64, b: i64) -> i64 {
        self.saturate(a as i128 + b as i128)
    }

    pub fn sub(&self, a: i64, b: i64) -> i64 {
        self.saturate(a as i128 - b as i128)
    }

    /// Full-width product, one rounding shift by `frac_bits`, then saturation.
    pub fn mul(&self, a: i64, b: i64) -> i64 {
        self.saturate(self.shift_round(a as i128 * b as i128, self.frac_bits))
    }

    /// Rounds a value carrying `frac_bits + shift` fractional bits down to
    /// `frac_bits`. Accumulators built from raw products use `shift = frac_bits`.
    pub fn shift_round(&self, value: i128, shift: u32) -> i128 {
        if shift == 0 {
            return value;
        }
        let floor = value >> shift;
        match self.rounding {
            Rounding::Floor => floor,
            Rounding::NearestEven => {
                let rem = value - (floor << shift);
                let half = 1i128 << (shift - 1);
                if rem > half || (rem == half && floor & 1 == 1) {
                    floor + 1
                } else {
                    floor
                }
            }
        }
    }

    /// `round(num / den)` with the format's rounding rule. `den` must be nonzero.
    pub fn div_round(&self, num: i128, den: i128) -> i128 {
        debug_assert!(den != 0);
        // 64-bit division is far cheaper and covers every Q8.16 quotient.
        match (i64::try_from(num), i64::try_from(den)) {
            (Ok(n), Ok(d)) if n != i64::MIN && d != i64::MIN => {
                let (n, d) = if d < 0 { (-n, -d) } else { (n, d) };
                let q = n.div_euclid(d);
                self.round_quotient(q as i128, (n - q * d) as i128, d as i128)
            }
            _ => {
                let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
                let q = num.div_euclid(den);
                self.round_quotient(q, num - q * den, den)
            }
        }
    }

    /// Rounds `q + rem / den` where `0 <= rem < den`.
    fn round_quotient(&self, q: i128, rem: i128, den: i128) -> i128 {
        match self.rounding {
            Rounding::Floor => q,
            Rounding::NearestEven => {
                let other = den - rem;
                if rem > other || (rem == other && q & 1 == 1) {
                    q + 1
                } else {
                    q
                }
            }
        }
    }

    /// Raw quotient `a / b` (both raw in this format), saturated. Division by
    /// zero saturates toward the sign of the numerator.
    pub fn div(&self, a: i64, b: i64) -> i64 {
        if b == 0 {
            return if a < 0 { self.min_raw() } else { self.max_raw() };
        }
        self.saturate(self.div_round((a as i128) << self.frac_bits, b as i128))
    }

    /// Raw `sqrt(a)` for `a >= 0`.
    pub fn sqrt(&self, a: i64) -> Result<i64> {
        if a < 0 {
            return Err(Error::Negative("sqrt"));
        }
        // sqrt(a / 2^f) * 2^f == sqrt(a * 2^f)
        let root = sqrt_ratio((a as u128) << self.frac_bits, 1, self.rounding);
        Ok(self.saturate(root as i128))
    }

    /// Raw `1 / sqrt(a)` for `a >= 0`; zero maps to the saturated maximum.
    pub fn recip_sqrt(&self, a: i64) -> Result<i64> {
        if a < 0 {
            return Err(Error::Negative("recip_sqrt"));
        }
        if a == 0 {
            return Ok(self.max_raw());
        }
        // 2^f / sqrt(a / 2^f) == sqrt(2^(3f) / a)
        if 3 * self.frac_bits > 126 {
            return Err(Error::InvalidFormat(format!(
                "recip_sqrt needs frac_bits <= 42, got {}",
                self.frac_bits
            )));
        }
        let num = 1u128 << (3 * self.frac_bits);
        let root = sqrt_ratio(num, a as u128, self.rounding);
        Ok(self.saturate(root.min(i128::MAX as u128) as i128))
    }
}

/// `round(sqrt(num / den))` computed exactly on integers.
pub(crate) fn sqrt_ratio(num: u128, den: u128, rounding: Rounding) -> u128 {
    debug_assert!(den > 0);
    let fits = |y: u128| -> bool {
        y.checked_mul(y)
            .and_then(|sq| sq.checked_mul(den))
            .is_some_and(|v| v <= num)
    };
    let mut y = libm::sqrt(num as f64 / den as f64) as u128;
    while y > 0 && !fits(y) {
        y -= 1;
    }
    while fits(y + 1) {
        y += 1;
    }
    match rounding {
        Rounding::Floor => y,
        Rounding::NearestEven => {
            // Compare (y + 1/2)^2 * den against num, scaled by 4.
            let odd = 2 * y + 1;
            let lhs = odd.checked_mul(odd).and_then(|sq| sq.checked_mul(den));
            let rhs = num.checked_mul(4);
            match (lhs, rhs) {
                (Some(l), Some(r)) if l < r => y + 1,
                (Some(l), Some(r)) if l == r && y & 1 == 1 => y + 1,
                (Some(_), Some(_)) | (None, _) => y,
                (Some(_), None) => y + 1,
            }
        }
    }
}

/// The 24-bit Q8.16 on-chip number format.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(transparent)]
pub struct Fixed24(i32);

impl Fixed24 {
    pub const FORMAT: FixedFormat = FixedFormat::Q8_16;
    pub const FRAC_BITS: u32 = 16;
    pub const MAX: Self = Self((1 << 23) - 1);
    pub const MIN: Self = Self(-(1 << 23));
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1 << 16);

    /// Wraps a raw value, or `None` if it does not fit in 24 bits.
    pub const fn from_raw(raw: i32) -> Option<Self> {
        if raw >= Self::MIN.0 && raw <= Self::MAX.0 {
            Some(Self(raw))
        } else {
            None
        }
    }

    pub(crate) fn from_wide(raw: i64) -> Self {
        Self(raw.clamp(Self::MIN.0 as i64, Self::MAX.0 as i64) as i32)
    }

    /// `round(value / 2^FRAC_BITS)`, ties to even.
    pub(crate) fn round_frac(value: i64) -> i64 {
        let floor = value >> Self::FRAC_BITS;
        let rem = value & ((1 << Self::FRAC_BITS) - 1);
        let half = 1 << (Self::FRAC_BITS - 1);
        floor + i64::from(rem > half || (rem == half && floor & 1 == 1))
    }

    pub const fn raw(self) -> i32 {
        self.0
    }

    pub fn encode(x: f64) -> Result<Self> {
        Ok(Self(Self::FORMAT.encode(x)? as i32))
    }

    /// Like [`Fixed24::encode`] but maps NaN to zero instead of failing.
    pub fn saturating_from_f64(x: f64) -> Self {
        if x.is_nan() {
            Self::ZERO
        } else {
            Self(Self::FORMAT.encode(x).unwrap_or(0) as i32)
        }
    }

    pub fn decode(self) -> f64 {
        Self::FORMAT.decode(self.0 as i64)
    }

    pub fn saturating_add(self, rhs: Self) -> Self {
        Self((self.0 + rhs.0).clamp(Self::MIN.0, Self::MAX.0))
    }

    pub fn saturating_sub(self, rhs: Self) -> Self {
        Self((self.0 - rhs.0).clamp(Self::MIN.0, Self::MAX.0))
    }

    pub fn saturating_mul(self, rhs: Self) -> Self {
        // 24-bit operands: the product fits in i64.
        Self::from_wide(Self::round_frac(self.0 as i64 * rhs.0 as i64))
    }

    pub fn saturating_div(self, rhs: Self) -> Self {
        Self::from_wide(Self::FORMAT.div(self.0 as i64, rhs.0 as i64))
    }

    pub fn sqrt(self) -> Result<Self> {
        Ok(Self::from_wide(Self::FORMAT.sqrt(self.0 as i64)?))
    }

    /// `1 / sqrt(self)`, correctly rounded; zero saturates to [`Fixed24::MAX`].
    pub fn recip_sqrt(self) -> Result<Self> {
        Ok(Self::from_wide(Self::FORMAT.recip_sqrt(self.0 as i64)?))
    }
}

impl fmt::Debug for Fixed24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed24({} = {:#08x})", self.decode(), self.0 & 0xff_ffff)
    }
}

impl fmt::Display for Fixed24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.decode(), f)
    }
}

impl Add for Fixed24 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.saturating_add(rhs)
    }
}

impl Sub for Fixed24 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.saturating_sub(rhs)
    }
}

impl Mul for Fixed24 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.saturating_mul(rhs)
    }
}

impl Neg for Fixed24 {
    type Output = Self;
    fn neg(self) -> Self {
        Self((-self.0).min(Self::MAX.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(x: f64) -> Fixed24 {
        Fixed24::encode(x).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(fx(0.5).raw(), 32768);
        assert_eq!(fx(0.0).raw(), 0);
        assert_eq!(fx(200.0).raw(), (1 << 23) - 1);
        assert_eq!(fx(-200.0), Fixed24::MIN);
        assert_eq!(fx(-128.0), Fixed24::MIN);
        assert_eq!(fx(128.0), Fixed24::MAX);
        assert!(Fixed24::encode(f64::NAN).is_err());
        assert!(Fixed24::encode(f64::INFINITY).is_err());
    }

    #[test]
    fn encode_ties_go_to_even() {
        let half_ulp = 0.5 / 65536.0;
        assert_eq!(fx(half_ulp).raw(), 0);
        assert_eq!(fx(3.0 * half_ulp).raw(), 2);
        assert_eq!(fx(-half_ulp).raw(), 0);
        assert_eq!(fx(-3.0 * half_ulp).raw(), -2);
    }

    #[test]
    fn add_examples() {
        assert_eq!(fx(1.25) + fx(-0.25), fx(1.0));
        assert_eq!(Fixed24::MAX + Fixed24::MAX, Fixed24::MAX);
        assert_eq!(Fixed24::MIN + Fixed24::MIN, Fixed24::MIN);
        assert_eq!(fx(3.5) + fx(4.25), fx(7.75));
    }

    #[test]
    fn mul_examples() {
        assert_eq!(fx(0.5) * fx(0.5), fx(0.25));
        assert_eq!(fx(1.5) * fx(-2.25), fx(-3.375));
        assert_eq!(Fixed24::MAX * fx(2.0), Fixed24::MAX);
        assert_eq!(Fixed24::MIN * fx(-1.0), Fixed24::MAX);
    }

    #[test]
    fn mul_identity_exhaustive() {
        for raw in Fixed24::MIN.raw()..=Fixed24::MAX.raw() {
            let x = Fixed24::from_raw(raw).unwrap();
            assert_eq!(x * Fixed24::ONE, x);
        }
    }

    #[test]
    fn roundtrip_exhaustive() {
        for raw in Fixed24::MIN.raw()..=Fixed24::MAX.raw() {
            let x = Fixed24::from_raw(raw).unwrap();
            assert_eq!(fx(x.decode()), x);
        }
    }

    #[test]
    fn from_raw_rejects_wide_values() {
        assert!(Fixed24::from_raw(1 << 23).is_none());
        assert!(Fixed24::from_raw(-(1 << 23) - 1).is_none());
    }

    #[test]
    fn recip_sqrt_examples() {
        let ulp = 1.0 / 65536.0;
        let close = |got: Fixed24, want: f64| (got.decode() - want).abs() <= 2.0 * ulp;
        assert!(close(fx(1.0).recip_sqrt().unwrap(), 1.0));
        assert!(close(fx(4.0).recip_sqrt().unwrap(), 0.5));
        assert!(close(fx(2.0).recip_sqrt().unwrap(), core::f64::consts::FRAC_1_SQRT_2));
        assert_eq!(Fixed24::ZERO.recip_sqrt().unwrap(), Fixed24::MAX);
        assert!(fx(-1.0).recip_sqrt().is_err());
        // Tiny inputs saturate instead of wrapping.
        assert_eq!(Fixed24::from_raw(1).unwrap().recip_sqrt().unwrap(), Fixed24::MAX);
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(fx(4.0).sqrt().unwrap(), fx(2.0));
        assert_eq!(fx(0.25).sqrt().unwrap(), fx(0.5));
        assert!(fx(-0.5).sqrt().is_err());
    }

    #[test]
    fn division() {
        assert_eq!(fx(3.0).saturating_div(fx(2.0)), fx(1.5));
        assert_eq!(fx(-3.0).saturating_div(fx(0.5)), fx(-6.0));
        assert_eq!(fx(1.0).saturating_div(Fixed24::ZERO), Fixed24::MAX);
        assert_eq!(fx(-1.0).saturating_div(Fixed24::ZERO), Fixed24::MIN);
        assert_eq!(fx(100.0).saturating_div(fx(0.5)), Fixed24::MAX);
    }

    #[test]
    fn format_validation() {
        assert!(FixedFormat::new(24, 16).is_ok());
        assert!(FixedFormat::new(64, 63).is_ok());
        assert!(FixedFormat::new(16, 16).is_err());
        assert!(FixedFormat::new(65, 16).is_err());
        assert!(FixedFormat::new(24, 0).is_err());
        assert_eq!(FixedFormat::new(24, 16).unwrap(), FixedFormat::Q8_16);
    }

    #[test]
    fn wide_formats_saturate() {
        let q = FixedFormat::new(64, 32).unwrap();
        assert_eq!(q.encode(1e30).unwrap(), i64::MAX);
        assert_eq!(q.encode(-1e30).unwrap(), i64::MIN);
        assert_eq!(q.mul(i64::MAX, i64::MAX), i64::MAX);
        let q = FixedFormat::new(12, 4).unwrap();
        assert_eq!(q.max_raw(), 2047);
        assert_eq!(q.encode(0.53).unwrap(), 8);
    }

    #[test]
    fn floor_rounding_truncates() {
        let q = FixedFormat::Q8_16.with_rounding(Rounding::Floor);
        assert_eq!(q.encode(0.75 / 65536.0).unwrap(), 0);
        assert_eq!(q.encode(-0.25 / 65536.0).unwrap(), -1);
        assert_eq!(q.shift_round(7, 2), 1);
    }
}
