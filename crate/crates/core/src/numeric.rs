//! Scalar abstraction shared by the float and fixed-point execution paths.
//!
//! Kernels in [`crate::nn`] are generic over [`Scalar`]. The float path uses
//! `f64`; the bit-faithful path uses [`Fixed24`], whose dot products keep
//! every raw product in a wide accumulator and round once at the end.

use core::fmt::Debug;

use crate::fixed::{sqrt_ratio, Fixed24, Rounding};

pub trait Scalar: Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// Dot-product accumulator.
    type Acc: Copy + Debug;

    const ZERO: Self;

    /// Converts a real number, saturating where the format requires it.
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    /// `self / rhs`; fixed point saturates on overflow or division by zero.
    fn div(self, rhs: Self) -> Self;
    fn max(self, rhs: Self) -> Self {
        if rhs > self {
            rhs
        } else {
            self
        }
    }

    fn acc_zero() -> Self::Acc;
    fn mac(acc: Self::Acc, a: Self, b: Self) -> Self::Acc;
    fn acc_add(a: Self::Acc, b: Self::Acc) -> Self::Acc;
    /// Rounds an accumulator and adds a bias.
    fn acc_finish(acc: Self::Acc, bias: Self) -> Self;

    /// `scale * x + offset` with a single rounding.
    fn scale_offset(x: Self, scale: Self, offset: Self) -> Self {
        Self::acc_finish(Self::mac(Self::acc_zero(), scale, x), offset)
    }

    /// Root-mean-square deviation of a `rows x cols` row-major block from its
    /// column means: `sqrt(1/rows * sum_r ||x_r - mu||^2)`.
    fn centered_rms(data: &[Self], rows: usize, cols: usize) -> Self;

    fn dot(w: &[Self], x: &[Self]) -> Self::Acc {
        w.iter()
            .zip(x)
            .fold(Self::acc_zero(), |acc, (&a, &b)| Self::mac(acc, a, b))
    }
}

/// Four independent partial sums; the tail lands in lane 0.
#[inline(always)]
fn dot_lanes<T: Copy, A: Copy>(w: &[T], x: &[T], zero: A, mac: impl Fn(A, T, T) -> A) -> [A; 4] {
    let mut acc = [zero; 4];
    let wc = w.chunks_exact(4);
    let xc = x.chunks_exact(4);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        for i in 0..4 {
            acc[i] = mac(acc[i], a[i], b[i]);
        }
    }
    for (&a, &b) in wr.iter().zip(xr) {
        acc[0] = mac(acc[0], a, b);
    }
    acc
}

impl Scalar for f64 {
    type Acc = f64;
    const ZERO: Self = 0.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    fn div(self, rhs: Self) -> Self {
        self / rhs
    }
    fn acc_zero() -> f64 {
        0.0
    }
    fn mac(acc: f64, a: f64, b: f64) -> f64 {
        acc + a * b
    }
    fn acc_add(a: f64, b: f64) -> f64 {
        a + b
    }
    fn acc_finish(acc: f64, bias: f64) -> f64 {
        acc + bias
    }
    fn scale_offset(x: f64, scale: f64, offset: f64) -> f64 {
        scale * x + offset
    }

    #[inline]
    fn dot(w: &[f64], x: &[f64]) -> f64 {
        let lanes = dot_lanes(w, x, 0.0, |acc, a, b| acc + a * b);
        (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
    }

    fn centered_rms(data: &[f64], rows: usize, cols: usize) -> f64 {
        debug_assert_eq!(data.len(), rows * cols);
        if rows == 0 {
            return 0.0;
        }
        let n = rows as f64;
        let mut total = 0.0;
        for c in 0..cols {
            let mean = (0..rows).map(|r| data[r * cols + c]).sum::<f64>() / n;
            total += (0..rows)
                .map(|r| {
                    let d = data[r * cols + c] - mean;
                    d * d
                })
                .sum::<f64>();
        }
        libm::sqrt(total / n)
    }
}

impl Scalar for Fixed24 {
    /// Sum of raw products, carrying 32 fractional bits.
    type Acc = i64;
    const ZERO: Self = Fixed24::ZERO;

    fn from_f64(x: f64) -> Self {
        Fixed24::saturating_from_f64(x)
    }
    fn to_f64(self) -> f64 {
        self.decode()
    }
    fn add(self, rhs: Self) -> Self {
        self.saturating_add(rhs)
    }
    fn sub(self, rhs: Self) -> Self {
        self.saturating_sub(rhs)
    }
    fn mul(self, rhs: Self) -> Self {
        self.saturating_mul(rhs)
    }
    fn div(self, rhs: Self) -> Self {
        self.saturating_div(rhs)
    }
    fn max(self, rhs: Self) -> Self {
        Ord::max(self, rhs)
    }
    fn acc_zero() -> i64 {
        0
    }
    #[inline]
    fn mac(acc: i64, a: Self, b: Self) -> i64 {
        // |a * b| < 2^46, so 2^17 products fit before the i64 can overflow;
        // wrapping ops only skip the redundant checks.
        acc.wrapping_add((a.raw() as i64).wrapping_mul(b.raw() as i64))
    }
    fn acc_add(a: i64, b: i64) -> i64 {
        a + b
    }
    #[inline]
    fn dot(w: &[Self], x: &[Self]) -> i64 {
        // Integer sums are exact, so lane order cannot change the result.
        dot_lanes(w, x, 0, Self::mac).iter().sum()
    }
    fn acc_finish(acc: i64, bias: Self) -> Self {
        if let Some(wide) = acc.checked_add((bias.raw() as i64) << Fixed24::FRAC_BITS) {
            return Fixed24::from_wide(Fixed24::round_frac(wide));
        }
        let fmt = Fixed24::FORMAT;
        let wide = acc as i128 + ((bias.raw() as i128) << Fixed24::FRAC_BITS);
        Fixed24::from_wide(fmt.saturate(fmt.shift_round(wide, Fixed24::FRAC_BITS)))
    }

    fn centered_rms(data: &[Self], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        if rows == 0 {
            return Fixed24::ZERO;
        }
        // rows^2 * sigma^2 = sum_c (rows * sum_r x^2 - (sum_r x)^2), exactly.
        let m = rows as i128;
        let mut total: i128 = 0;
        for c in 0..cols {
            let (s1, s2) = if rows <= 1 << 17 {
                // squares are below 2^46, so i64 sums cannot overflow here
                let (mut s1, mut s2) = (0i64, 0i64);
                for r in 0..rows {
                    let x = data[r * cols + c].raw() as i64;
                    s1 += x;
                    s2 += x * x;
                }
                (s1 as i128, s2 as i128)
            } else {
                (0..rows).fold((0i128, 0i128), |(s1, s2), r| {
                    let x = data[r * cols + c].raw() as i128;
                    (s1 + x, s2 + x * x)
                })
            };
            total += m * s2 - s1 * s1;
        }
        let root = sqrt_ratio(total as u128, (m * m) as u128, Rounding::NearestEven);
        Fixed24::from_wide(root.min(i64::MAX as u128) as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_dot_rounds_once() {
        // Each product 0.5 * 2^-16 would round to zero on its own (ties to even),
        // but the accumulated sum of four is exactly 2^-15.
        let half = Fixed24::encode(0.5).unwrap();
        let tiny = Fixed24::from_raw(1).unwrap();
        let w = [half; 4];
        let x = [tiny; 4];
        let y = Fixed24::acc_finish(Fixed24::dot(&w, &x), Fixed24::ZERO);
        assert_eq!(y.raw(), 2);
        let per_term = w
            .iter()
            .zip(&x)
            .fold(Fixed24::ZERO, |acc, (&a, &b)| acc + a * b);
        assert_eq!(per_term.raw(), 0);
    }

    #[test]
    fn centered_rms_matches_float() {
        let vals = [1.0, 3.0, -2.0, 0.5, 4.0, 1.25];
        let fx: alloc::vec::Vec<Fixed24> = vals.iter().map(|&v| Fixed24::from_f64(v)).collect();
        for (rows, cols) in [(6, 1), (3, 2), (2, 3)] {
            let a = f64::centered_rms(&vals, rows, cols);
            let b = Fixed24::centered_rms(&fx, rows, cols).decode();
            assert!((a - b).abs() <= 1.0 / 65536.0, "{rows}x{cols}: {a} vs {b}");
        }
        assert_eq!(f64::centered_rms(&[1.0, 3.0], 2, 1), 1.0);
        assert_eq!(Fixed24::centered_rms(&fx[..1], 1, 1), Fixed24::ZERO);
    }

    #[test]
    fn scale_offset_single_rounding() {
        let y = Fixed24::scale_offset(
            Fixed24::encode(1.5).unwrap(),
            Fixed24::encode(-2.25).unwrap(),
            Fixed24::encode(0.125).unwrap(),
        );
        assert_eq!(y, Fixed24::encode(-3.25).unwrap());
    }
}
