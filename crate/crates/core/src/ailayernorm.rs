//! Integer layer normalization with low-precision statistics.
//!
//! Stage 1 accumulates `E[x]` from the PTF-shifted inputs and `E[x^2]` from
//! a 4-bit compressed copy: each magnitude is squeezed to 4 bits plus a
//! one-bit shift select, squared through a 16-entry table, and shifted back
//! by `4s + 4 + 2*alpha`. The preprocess step turns the sums into a mean and
//! an inverse standard deviation (reciprocal constant plus an inverse-sqrt
//! table). Stage 2 applies `A * (x << alpha - mu) + B` with
//! `A = gamma * std_inv`.
//!
//! Register formats:
//! - mean and variance: signed/unsigned with [`STAT_FRAC_BITS`] fraction bits
//! - `std_inv`: unsigned with [`STD_INV_FRAC_BITS`] fraction bits
//! - affine constants and the pre-rounding output: [`AFFINE_FRAC_BITS`]

use serde::{Deserialize, Serialize};

use crate::calib::PTFParams;
use crate::fxp::{clip, fits_signed, fits_unsigned, leading_one, rshift_round_i64};
use crate::{KernelError, Result};

pub const STAT_FRAC_BITS: u32 = 16;
pub const STD_INV_FRAC_BITS: u32 = 32;
pub const AFFINE_FRAC_BITS: u32 = 16;
/// Significant bits kept in the `1/C` constant.
pub const RECIP_SIG_BITS: u32 = 16;

/// Squares of every 4-bit code.
pub const SQUARE_LUT: [u16; 16] = {
    let mut t = [0u16; 16];
    let mut i = 0;
    while i < 16 {
        t[i] = (i * i) as u16;
        i += 1;
    }
    t
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNormConfig {
    pub channels: usize,
    pub alpha_max: u32,
    pub ex_acc_bits: u32,
    pub ex2_acc_bits: u32,
    pub invsqrt_entries: usize,
    pub invsqrt_frac_bits: u32,
    /// Variance floor in units of `2^-STAT_FRAC_BITS`.
    pub eps_raw: u64,
    /// Apply the extra `<< 4` to `E[x^2]` before dividing by `C`. Off by
    /// default: the decompress shift already restores full magnitude, so
    /// this inflates the second moment 16x. Kept for comparison runs only.
    pub literal_ex2_shift: bool,
}

impl LayerNormConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            alpha_max: 3,
            ex_acc_bits: 24,
            ex2_acc_bits: 40,
            invsqrt_entries: 64,
            invsqrt_frac_bits: 16,
            eps_raw: 1,
            literal_ex2_shift: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KernelError::InvalidConfig(m));
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if self.alpha_max > 3 {
            return bad(format!("alpha_max {} above 3", self.alpha_max));
        }
        if !self.invsqrt_entries.is_power_of_two() || !(2..=4096).contains(&self.invsqrt_entries) {
            return bad(format!("invsqrt_entries {} not a power of two in [2, 4096]", self.invsqrt_entries));
        }
        if !(8..=30).contains(&self.invsqrt_frac_bits) {
            return bad(format!("invsqrt_frac_bits {} outside [8, 30]", self.invsqrt_frac_bits));
        }
        if self.eps_raw == 0 {
            return bad("eps_raw must be positive".into());
        }
        if self.ex_acc_bits > 63 || self.ex2_acc_bits > 63 {
            return bad("accumulators are at most 63 bits".into());
        }
        let c = self.channels as u128;
        let ex_worst = c * (255u128 << self.alpha_max);
        if ex_worst >= 1u128 << (self.ex_acc_bits - 1) {
            return bad(format!("{}-bit E[x] accumulator too narrow for C={}", self.ex_acc_bits, c));
        }
        let ex2_worst = (c * (max_decompressed() as u128)) << (2 * self.alpha_max);
        if ex2_worst >= 1u128 << self.ex2_acc_bits {
            return bad(format!("{}-bit E[x^2] accumulator too narrow for C={}", self.ex2_acc_bits, c));
        }
        Ok(())
    }
}

/// Largest value `square_decompress` produces at `alpha = 0`.
fn max_decompressed() -> u64 {
    (SQUARE_LUT[15] as u64) << 8
}

/// 4-bit compressed magnitude plus the shift-select flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressedVal {
    pub y: u8,
    pub s: bool,
}

/// 8-bit to 4-bit dynamic compression. Inputs with either of the top two
/// bits set drop 4 bits, the rest drop 2; both round half-up and saturate.
#[inline]
pub fn dynamic_compress(x: u8) -> CompressedVal {
    let x = x as u32;
    if x >> 6 != 0 {
        CompressedVal { y: clip((x + 8) >> 4, 0, 15) as u8, s: true }
    } else {
        CompressedVal { y: clip((x + 2) >> 2, 0, 15) as u8, s: false }
    }
}

/// Table square followed by the decompress and PTF shifts:
/// `y^2 << (4s + 4) << 2*alpha`.
#[inline]
pub fn square_decompress(c: CompressedVal, alpha: u32) -> u64 {
    let shift = 4 * c.s as u32 + 4;
    ((SQUARE_LUT[c.y as usize] as u64) << shift) << (2 * alpha)
}

/// Raw first and second moment sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// `sum (x_i - zp) << alpha_i`
    pub ex_raw: i64,
    /// `sum square_decompress(dynamic_compress(|x_i - zp|), alpha_i)`
    pub ex2_raw: u64,
}

/// Output of the preprocess unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Moments {
    /// Mean, `2^-STAT_FRAC_BITS` units.
    pub mu_raw: i64,
    /// Floored variance, `2^-STAT_FRAC_BITS` units.
    pub var_raw: u64,
    /// `1/sigma`, `2^-STD_INV_FRAC_BITS` units.
    pub std_inv_raw: u64,
}

impl Moments {
    pub fn mu(&self) -> f64 {
        self.mu_raw as f64 * (-(STAT_FRAC_BITS as f64)).exp2()
    }

    pub fn var(&self) -> f64 {
        self.var_raw as f64 * (-(STAT_FRAC_BITS as f64)).exp2()
    }

    pub fn std_inv(&self) -> f64 {
        self.std_inv_raw as f64 * (-(STD_INV_FRAC_BITS as f64)).exp2()
    }
}

/// `1/C` as `mant * 2^-shift` with [`RECIP_SIG_BITS`] significant bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reciprocal {
    pub mant: u64,
    pub shift: u32,
}

impl Reciprocal {
    pub fn of(c: usize) -> Self {
        let shift = RECIP_SIG_BITS + (c as u64).ilog2();
        let mant = ((1u128 << shift) + c as u128 / 2) / c as u128;
        Self { mant: mant as u64, shift }
    }

    /// `round(v / C)` carried to `frac` fractional bits.
    fn apply(&self, v: i128, frac: u32) -> i64 {
        let prod = v * self.mant as i128;
        let n = self.shift - frac;
        if n == 0 {
            return prod as i64;
        }
        ((prod + (1i128 << (n - 1))) >> n) as i64
    }
}

/// Inverse square root ROM: `entries` rows per half, indexed by the
/// mantissa bits below the leading one (rounded to nearest row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvSqrtTable {
    index_bits: u32,
    frac_bits: u32,
    /// `[r][j] = round((2^r * (1 + j/entries))^-1/2 * 2^frac_bits)`
    halves: [Vec<u32>; 2],
}

impl InvSqrtTable {
    pub fn new(entries: usize, frac_bits: u32) -> Self {
        let n = entries as f64;
        let scale = (frac_bits as f64).exp2();
        let half = |r: i32| -> Vec<u32> {
            (0..entries).map(|j| ((2f64.powi(r) * (1.0 + j as f64 / n)).powf(-0.5) * scale).round() as u32).collect()
        };
        Self { index_bits: entries.ilog2(), frac_bits, halves: [half(0), half(1)] }
    }

    pub fn entries(&self) -> usize {
        self.halves[0].len()
    }

    pub fn entry(&self, r: usize, j: usize) -> u32 {
        self.halves[r][j]
    }

    /// `v^-1/2` for `v = v_raw * 2^-v_frac`, returned with
    /// [`STD_INV_FRAC_BITS`] fractional bits.
    ///
    /// `v` is range-reduced to `m * 2^(2e + r)`, `m` in `[1, 2)`; the
    /// table supplies `(2^r m)^-1/2` and the result is shifted by `e`.
    pub fn lookup(&self, v_raw: u64, v_frac: u32) -> Result<u64> {
        let lead = leading_one(v_raw)?;
        let rem = v_raw - (1u64 << lead);
        let mut j = if lead >= self.index_bits {
            crate::fxp::rshift_round_u64(rem, lead - self.index_bits)
        } else {
            rem << (self.index_bits - lead)
        } as usize;
        let mut exp = lead as i32 - v_frac as i32;
        if j == self.entries() {
            // mantissa rounded up to 2.0
            j = 0;
            exp += 1;
        }
        let r = exp.rem_euclid(2) as usize;
        let e = exp.div_euclid(2);
        let entry = self.halves[r][j] as u64;
        let shift = STD_INV_FRAC_BITS as i32 - self.frac_bits as i32 - e;
        Ok(if shift >= 0 { entry << shift } else { crate::fxp::rshift_round_u64(entry, (-shift) as u32) })
    }
}

/// Per-channel affine weights quantized to 8 bits, plus the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub gamma_q: Vec<i8>,
    pub gamma_scale: f64,
    pub beta_q: Vec<i8>,
    pub beta_scale: f64,
    pub out_scale: f64,
    pub out_zp: u8,
}

impl AffineParams {
    /// Symmetric per-tensor 8-bit quantization of `gamma` and `beta`.
    pub fn quantize(gamma: &[f64], beta: &[f64], out_scale: f64, out_zp: u8) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(KernelError::Shape { expected: gamma.len(), got: beta.len() });
        }
        if gamma.iter().chain(beta).any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        let sym = |v: &[f64]| -> (Vec<i8>, f64) {
            let amax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let scale = if amax > 0.0 { amax / 127.0 } else { 1.0 };
            (v.iter().map(|x| (x / scale).round().clamp(-127.0, 127.0) as i8).collect(), scale)
        };
        let (gamma_q, gamma_scale) = sym(gamma);
        let (beta_q, beta_scale) = sym(beta);
        let p = Self { gamma_q, gamma_scale, beta_q, beta_scale, out_scale, out_zp };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_q.len() != self.beta_q.len() {
            return Err(KernelError::Shape { expected: self.gamma_q.len(), got: self.beta_q.len() });
        }
        let finite_pos = |s: f64| s.is_finite() && s > 0.0;
        if !finite_pos(self.out_scale) || !finite_pos(self.gamma_scale) || !finite_pos(self.beta_scale) {
            return Err(KernelError::InvalidConfig("affine scales must be finite and positive".into()));
        }
        Ok(())
    }

    /// `gamma / out_scale` per channel, [`AFFINE_FRAC_BITS`] fraction bits.
    fn gamma_consts(&self) -> Vec<i64> {
        let m = fixed(self.gamma_scale / self.out_scale, AFFINE_FRAC_BITS);
        self.gamma_q.iter().map(|&g| g as i64 * m).collect()
    }

    /// `beta / out_scale + out_zp` per channel, [`AFFINE_FRAC_BITS`] fraction bits.
    fn beta_consts(&self) -> Vec<i64> {
        let m = fixed(self.beta_scale / self.out_scale, AFFINE_FRAC_BITS);
        let zp = (self.out_zp as i64) << AFFINE_FRAC_BITS;
        self.beta_q.iter().map(|&b| b as i64 * m + zp).collect()
    }

    pub fn dequantize_output(&self, y: u8) -> f64 {
        (y as f64 - self.out_zp as f64) * self.out_scale
    }
}

fn fixed(v: f64, frac: u32) -> i64 {
    (v * (frac as f64).exp2()).round() as i64
}

/// Configured layer-norm unit. Immutable once built.
#[derive(Debug, Clone)]
pub struct AiLayerNorm {
    cfg: LayerNormConfig,
    recip: Reciprocal,
    table: InvSqrtTable,
}

impl AiLayerNorm {
    pub fn new(cfg: LayerNormConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            recip: Reciprocal::of(cfg.channels),
            table: InvSqrtTable::new(cfg.invsqrt_entries, cfg.invsqrt_frac_bits),
            cfg,
        })
    }

    pub fn config(&self) -> &LayerNormConfig {
        &self.cfg
    }

    pub fn table(&self) -> &InvSqrtTable {
        &self.table
    }

    fn check_shapes(&self, xq: &[u8], alphas: &[u32]) -> Result<()> {
        let c = self.cfg.channels;
        for got in [xq.len(), alphas.len()] {
            if got != c {
                return Err(KernelError::Shape { expected: c, got });
            }
        }
        if let Some(a) = alphas.iter().find(|&&a| a > self.cfg.alpha_max) {
            return Err(KernelError::InvalidConfig(format!("alpha {a} above alpha_max {}", self.cfg.alpha_max)));
        }
        Ok(())
    }

    pub fn stage1(&self, xq: &[u8], zp: i32, alphas: &[u32]) -> Result<Stats> {
        self.check_shapes(xq, alphas)?;
        let mut ex: i64 = 0;
        let mut ex2: u64 = 0;
        for (&x, &a) in xq.iter().zip(alphas) {
            let d = x as i64 - zp as i64;
            ex += d << a;
            let mag = d.unsigned_abs().min(255) as u8;
            ex2 += square_decompress(dynamic_compress(mag), a);
        }
        if !fits_signed(ex, self.cfg.ex_acc_bits) {
            return Err(KernelError::AccumulatorOverflow("E[x]"));
        }
        if !fits_unsigned(ex2, self.cfg.ex2_acc_bits) {
            return Err(KernelError::AccumulatorOverflow("E[x^2]"));
        }
        Ok(Stats { ex_raw: ex, ex2_raw: ex2 })
    }

    /// Inverse square root of a variance register, refusing values below
    /// the configured floor.
    pub fn inv_sqrt(&self, var_raw: u64) -> Result<u64> {
        if var_raw < self.cfg.eps_raw {
            return Err(KernelError::SubnormalVariance(var_raw));
        }
        self.table.lookup(var_raw, STAT_FRAC_BITS)
    }

    pub fn preprocess(&self, stats: &Stats) -> Result<Moments> {
        let ex2 = if self.cfg.literal_ex2_shift { (stats.ex2_raw as i128) << 4 } else { stats.ex2_raw as i128 };
        let mu_raw = self.recip.apply(stats.ex_raw as i128, STAT_FRAC_BITS);
        let ex2_mean = self.recip.apply(ex2, STAT_FRAC_BITS);
        let mu_sq = rshift_round_i64_wide((mu_raw as i128) * (mu_raw as i128), STAT_FRAC_BITS);
        let var = (ex2_mean as i128 - mu_sq).max(self.cfg.eps_raw as i128) as u64;
        Ok(Moments { mu_raw, var_raw: var, std_inv_raw: self.inv_sqrt(var)? })
    }

    pub fn stage2(
        &self,
        xq: &[u8],
        zp: i32,
        alphas: &[u32],
        moments: &Moments,
        affine: &AffineParams,
    ) -> Result<Vec<u8>> {
        self.check_shapes(xq, alphas)?;
        affine.validate()?;
        if affine.gamma_q.len() != self.cfg.channels {
            return Err(KernelError::Shape { expected: self.cfg.channels, got: affine.gamma_q.len() });
        }
        let gammas = affine.gamma_consts();
        let betas = affine.beta_consts();
        let std_inv = moments.std_inv_raw as i128;
        let out = xq
            .iter()
            .zip(alphas)
            .zip(gammas.iter().zip(&betas))
            .map(|((&x, &a), (&g, &b))| {
                // A = gamma * std_inv, AFFINE + STD_INV fraction bits
                let a_coef = g as i128 * std_inv;
                let xc = (((x as i64 - zp as i64) << a) << STAT_FRAC_BITS) - moments.mu_raw;
                let y = rshift_round_i64_wide(a_coef * xc as i128, STD_INV_FRAC_BITS + STAT_FRAC_BITS) as i64 + b;
                clip(rshift_round_i64(y, AFFINE_FRAC_BITS), 0, 255) as u8
            })
            .collect();
        Ok(out)
    }

    pub fn run(&self, xq: &[u8], ptf: &PTFParams, affine: &AffineParams) -> Result<Vec<u8>> {
        let stats = self.stage1(xq, ptf.zp, &ptf.alphas)?;
        let moments = self.preprocess(&stats)?;
        self.stage2(xq, ptf.zp, &ptf.alphas, &moments, affine)
    }
}

/// Convenience wrapper: build the unit for `ptf.alphas.len()` channels and run it.
pub fn ailayernorm(xq: &[u8], ptf: &PTFParams, affine: &AffineParams) -> Result<Vec<u8>> {
    AiLayerNorm::new(LayerNormConfig::new(ptf.alphas.len()))?.run(xq, ptf, affine)
}

fn rshift_round_i64_wide(v: i128, n: u32) -> i128 {
    (v + (1i128 << (n - 1))) >> n
}
