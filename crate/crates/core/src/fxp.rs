//! Fixed-point primitives shared by every kernel.
//!
//! Rounding is round-half-toward-+inf: add half an output ULP, then shift
//! arithmetically. All shifts on signed values are arithmetic.

use serde::{Deserialize, Serialize};

use crate::{KernelError, Result};

pub const MAX_WIDTH: u32 = 64;

/// Two's-complement value of `width` bits with `frac_bits` fractional bits.
/// The represented real number is `raw * 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedVal {
    raw: i64,
    width: u32,
    frac_bits: u32,
}

impl FixedVal {
    pub fn new(raw: i64, width: u32, frac_bits: u32) -> Result<Self> {
        if width == 0 || width > MAX_WIDTH {
            return Err(KernelError::InvalidConfig(format!("width {width} outside 1..=64")));
        }
        if !fits_signed(raw, width) {
            return Err(KernelError::WidthOverflow { raw, width });
        }
        Ok(Self { raw, width, frac_bits })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn to_f64(&self) -> f64 {
        self.raw as f64 * (-(self.frac_bits as f64)).exp2()
    }
}

/// True when `raw` is representable as a `width`-bit two's-complement integer.
pub fn fits_signed(raw: i64, width: u32) -> bool {
    if width >= 64 {
        return true;
    }
    let lo = -(1i64 << (width - 1));
    let hi = (1i64 << (width - 1)) - 1;
    (lo..=hi).contains(&raw)
}

/// True when `raw` is representable as a `width`-bit unsigned integer.
pub fn fits_unsigned(raw: u64, width: u32) -> bool {
    width >= 64 || raw < (1u64 << width)
}

/// Drops `n` fractional bits, rounding to nearest with ties toward +inf.
///
/// Panics if `n >= x.width()`; callers size their shifts statically.
pub fn round_shift_right(x: FixedVal, n: u32) -> FixedVal {
    assert!(n < x.width, "shift {n} out of range for width {}", x.width);
    FixedVal { raw: rshift_round_i64(x.raw, n), width: x.width, frac_bits: x.frac_bits.saturating_sub(n) }
}

/// Raw-integer form of [`round_shift_right`]: `floor((v + 2^(n-1)) / 2^n)`.
#[inline]
pub fn rshift_round_i64(v: i64, n: u32) -> i64 {
    if n == 0 {
        return v;
    }
    if n >= 64 {
        return 0;
    }
    // i128 so the half-ULP add never wraps at the top of the range
    ((v as i128 + (1i128 << (n - 1))) >> n) as i64
}

/// Unsigned variant of [`rshift_round_i64`].
#[inline]
pub fn rshift_round_u64(v: u64, n: u32) -> u64 {
    if n == 0 {
        return v;
    }
    if n > 64 {
        return 0;
    }
    ((v as u128 + (1u128 << (n - 1))) >> n) as u64
}

/// `min(max(x, lo), hi)`.
#[inline]
pub fn clip<T: Ord>(x: T, lo: T, hi: T) -> T {
    debug_assert!(lo <= hi);
    x.max(lo).min(hi)
}

/// Leading-one detector: index `p` with `2^p <= x < 2^(p+1)`.
#[inline]
pub fn leading_one(x: u64) -> Result<u32> {
    if x == 0 {
        return Err(KernelError::LodZero);
    }
    Ok(63 - x.leading_zeros())
}
