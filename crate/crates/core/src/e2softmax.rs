//! Log2-quantized softmax with online normalization.
//!
//! Stage 1 walks the input one slice at a time. Each slice's local maximum
//! updates the running maximum; when it grows, the partial sum is shifted
//! right by the Log2Exp code of the increase. Every element is then encoded
//! as a 4-bit code `k` standing for `2^-k`, and `2^-k` is added to the sum.
//!
//! Stage 2 adds each slice's correction (the code of `slice_max - global_max`)
//! to the stored codes and feeds the result through the approximate
//! log-based divider: a leading-one detector on the sum, a one-bit mantissa
//! select choosing between two constants, and a right shift.

use serde::{Deserialize, Serialize};

use crate::fxp::{clip, fits_unsigned, leading_one};
use crate::{KernelError, Result};

/// Width of the saturating register holding `correction + code`.
pub const K_TOTAL_BITS: u32 = 6;
const K_TOTAL_MAX: u32 = (1 << K_TOTAL_BITS) - 1;

/// Extra fractional bits so the `x>>1` and `x>>4` terms of the shift-add
/// are exact before the single rounding step.
const LOG2EXP_GUARD_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    /// Bit width `b` of the Log2Exp codes.
    pub code_bits: u32,
    /// Input real value is `q * 2^-input_scale_exp`.
    pub input_scale_exp: u32,
    /// Elements consumed per Stage-1 iteration.
    pub slice_len: usize,
    /// Fractional bits of the unsigned output.
    pub out_frac_bits: u32,
    pub sum_int_bits: u32,
    pub sum_frac_bits: u32,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self { code_bits: 4, input_scale_exp: 4, slice_len: 32, out_frac_bits: 8, sum_int_bits: 13, sum_frac_bits: 15 }
    }
}

impl SoftmaxConfig {
    pub fn with_scale_exp(mut self, f: u32) -> Self {
        self.input_scale_exp = f;
        self
    }

    pub fn with_slice_len(mut self, n: usize) -> Self {
        self.slice_len = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KernelError::InvalidConfig(m));
        if !(2..=6).contains(&self.code_bits) {
            return bad(format!("code_bits {} outside [2, 6]", self.code_bits));
        }
        if self.slice_len == 0 {
            return bad("slice_len must be at least 1".into());
        }
        if !(1..=16).contains(&self.out_frac_bits) {
            return bad(format!("out_frac_bits {} outside [1, 16]", self.out_frac_bits));
        }
        if self.input_scale_exp > 32 {
            return bad(format!("input_scale_exp {} above 32", self.input_scale_exp));
        }
        if self.sum_frac_bits < self.code_max() {
            return bad(format!("sum_frac_bits {} cannot hold 2^-{}", self.sum_frac_bits, self.code_max()));
        }
        if self.sum_int_bits == 0 || self.sum_int_bits + self.sum_frac_bits > 62 {
            return bad("sum register must be between 1 and 62 bits wide".into());
        }
        Ok(())
    }

    /// Largest code, `2^b - 1`.
    pub fn code_max(&self) -> u32 {
        (1 << self.code_bits) - 1
    }

    /// Longest vector whose reduced sum fits the accumulator.
    pub fn max_len(&self) -> usize {
        (1usize << self.sum_int_bits) - 1
    }
}

/// Log2Exp output `k`, standing for `2^-k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Log2ExpCode(u8);

impl Log2ExpCode {
    pub fn k(self) -> u32 {
        self.0 as u32
    }

    pub fn value(self) -> f64 {
        (-(self.0 as f64)).exp2()
    }
}

/// Reduced-sum register: unsigned, `int_bits.frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumAccumulator {
    raw: u64,
    int_bits: u32,
    frac_bits: u32,
}

impl SumAccumulator {
    pub fn new(raw: u64, int_bits: u32, frac_bits: u32) -> Result<Self> {
        if !fits_unsigned(raw, int_bits + frac_bits) {
            return Err(KernelError::AccumulatorOverflow("softmax sum"));
        }
        Ok(Self { raw, int_bits, frac_bits })
    }

    /// Register holding `value`, rounded to the nearest representable step.
    pub fn from_f64(value: f64, cfg: &SoftmaxConfig) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(KernelError::NonFinite);
        }
        let raw = (value * (cfg.sum_frac_bits as f64).exp2()).round() as u64;
        Self::new(raw, cfg.sum_int_bits, cfg.sum_frac_bits)
    }

    pub fn raw(&self) -> u64 {
        self.raw
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn to_f64(&self) -> f64 {
        self.raw as f64 * (-(self.frac_bits as f64)).exp2()
    }
}

/// Everything Stage 1 leaves in the buffers for Stage 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxState {
    pub codes: Vec<Log2ExpCode>,
    /// Running maximum after each slice, in quantized input units.
    pub slice_max: Vec<i64>,
    pub global_max: i64,
    pub sum: SumAccumulator,
    pub slice_len: usize,
}

/// Unsigned fixed-point probabilities with `frac_bits` fractional bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftmaxOutput {
    pub raw: Vec<u32>,
    pub frac_bits: u32,
}

impl SoftmaxOutput {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let scale = (-(self.frac_bits as f64)).exp2();
        self.raw.iter().map(|&r| r as f64 * scale).collect()
    }
}

/// Log2Exp unit: `clip(round(-d * 2^-f * 1.4375), 0, 2^b - 1)`.
///
/// `1.4375 = 1 + 1/2 - 1/16` is realized as `x + (x >> 1) - (x >> 4)`. The
/// difference is negated before the shift-add so that rounding happens on
/// the non-negative magnitude; with the guard bits the only inexact step is
/// the final half-up rounding at the binary point.
pub fn log2exp(d: i64, f: u32, b: u32) -> Result<Log2ExpCode> {
    if d > 0 {
        return Err(KernelError::PositiveExponentInput(d));
    }
    let code_max = (1u64 << b) - 1;
    let mag = (d.unsigned_abs() as u128) << LOG2EXP_GUARD_BITS;
    let t = mag + (mag >> 1) - (mag >> 4);
    let shift = f + LOG2EXP_GUARD_BITS;
    let rounded = (t + (1u128 << (shift - 1))) >> shift;
    let k = rounded.min(code_max as u128) as u64;
    Ok(Log2ExpCode(clip(k, 0, code_max) as u8))
}

/// The divider's two output constants `0.818` (`q = 0`) and `0.568`
/// (`q = 1`), rounded to `out_frac_bits` fractional bits.
pub fn divider_constants(out_frac_bits: u32) -> (u32, u32) {
    let render = |milli: u64| ((milli << out_frac_bits) + 500) / 1000;
    (render(818) as u32, render(568) as u32)
}

/// Approximate log-based division of `2^-k_total` by the reduced sum.
///
/// `k_s` is the leading-one position of the sum relative to its binary
/// point, `q` the bit just below the leading one. The output is the
/// selected constant shifted right (truncating) by `k_total + k_s`.
pub fn aldivision(k_total: u32, sum: &SumAccumulator, out_frac_bits: u32) -> Result<u32> {
    let lead = leading_one(sum.raw)?;
    if lead < sum.frac_bits {
        return Err(KernelError::SumBelowOne);
    }
    let k_s = lead - sum.frac_bits;
    let q = if lead == 0 { 0 } else { (sum.raw >> (lead - 1)) & 1 };
    let (c0, c1) = divider_constants(out_frac_bits);
    let constant = if q == 0 { c0 } else { c1 };
    let shift = k_total + k_s;
    Ok(if shift >= 32 { 0 } else { constant >> shift })
}

/// Configured softmax unit. Immutable once built; each call owns its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct E2Softmax {
    cfg: SoftmaxConfig,
}

impl E2Softmax {
    pub fn new(cfg: SoftmaxConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SoftmaxConfig {
        &self.cfg
    }

    fn encode(&self, d: i64) -> Result<Log2ExpCode> {
        log2exp(d, self.cfg.input_scale_exp, self.cfg.code_bits)
    }

    pub fn stage1(&self, x: &[i32]) -> Result<SoftmaxState> {
        let cfg = &self.cfg;
        if x.is_empty() {
            return Err(KernelError::EmptyVector);
        }
        if x.len() > cfg.max_len() {
            return Err(KernelError::SequenceTooLong { len: x.len(), max: cfg.max_len() });
        }

        let mut codes = Vec::with_capacity(x.len());
        let mut slice_max = Vec::with_capacity(x.len().div_ceil(cfg.slice_len));
        let mut running: Option<i64> = None;
        let mut sum: u64 = 0;

        for slice in x.chunks(cfg.slice_len) {
            let local = tree_max(slice);
            let m = match running {
                Some(prev) if prev >= local => prev,
                Some(prev) => {
                    // correction shift truncates, like the hardware shifter
                    let sub = self.encode(prev - local)?.k();
                    sum >>= sub;
                    local
                }
                None => local,
            };
            for &xi in slice {
                let code = self.encode(xi as i64 - m)?;
                sum += 1u64 << (cfg.sum_frac_bits - code.k());
                codes.push(code);
            }
            slice_max.push(m);
            running = Some(m);
        }

        let sum = SumAccumulator::new(sum, cfg.sum_int_bits, cfg.sum_frac_bits)?;
        Ok(SoftmaxState {
            codes,
            slice_max,
            global_max: running.expect("non-empty input has at least one slice"),
            sum,
            slice_len: cfg.slice_len,
        })
    }

    /// Saturated `correction + code` for every element.
    pub fn corrected_codes(&self, state: &SoftmaxState) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(state.codes.len());
        for (chunk, &m) in state.codes.chunks(state.slice_len).zip(&state.slice_max) {
            let sub = self.encode(m - state.global_max)?.k();
            out.extend(chunk.iter().map(|c| (sub + c.k()).min(K_TOTAL_MAX)));
        }
        Ok(out)
    }

    pub fn stage2(&self, state: &SoftmaxState) -> Result<SoftmaxOutput> {
        let raw = self
            .corrected_codes(state)?
            .into_iter()
            .map(|k| aldivision(k, &state.sum, self.cfg.out_frac_bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(SoftmaxOutput { raw, frac_bits: self.cfg.out_frac_bits })
    }

    pub fn run(&self, x: &[i32]) -> Result<SoftmaxOutput> {
        let state = self.stage1(x)?;
        self.stage2(&state)
    }
}

/// Convenience wrapper: validate `cfg` and run both stages.
pub fn e2softmax(x: &[i32], cfg: &SoftmaxConfig) -> Result<SoftmaxOutput> {
    E2Softmax::new(*cfg)?.run(x)
}

// Pairwise comparison tree, as in the max unit.
fn tree_max(xs: &[i32]) -> i64 {
    match xs.len() {
        0 => i64::MIN,
        1 => xs[0] as i64,
        n => tree_max(&xs[..n / 2]).max(tree_max(&xs[n / 2..])),
    }
}
