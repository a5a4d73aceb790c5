//! Post-training calibration: min-max scale and zero point, power-of-two
//! input scales for the softmax unit, and per-channel power-of-two factors
//! (PTF) for the layer-norm unit.
//!
//! Calibration runs offline, so it works in `f64` throughout.

use serde::{Deserialize, Serialize};

use crate::{KernelError, Result};

/// Largest power-of-two input exponent considered by [`calibrate_pow2`].
pub const MAX_POW2_EXP: u32 = 8;
/// Most negative quantized difference the softmax input may carry.
pub const POW2_DIFF_LIMIT: f64 = 128.0;

/// Layer scale, zero point and per-channel shift `alpha`.
/// Quantization is `clip(round(x / (2^alpha * scale)) + zp, 0, 2^bits - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTFParams {
    pub alphas: Vec<u32>,
    pub scale: f64,
    pub zp: i32,
    pub bits: u32,
}

impl PTFParams {
    pub fn channels(&self) -> usize {
        self.alphas.len()
    }

    fn qmax(&self) -> i64 {
        (1i64 << self.bits) - 1
    }

    pub fn quantize_one(&self, x: f64, alpha: u32) -> u8 {
        quantize_value(x, self.scale * (alpha as f64).exp2(), self.zp, self.qmax()) as u8
    }

    pub fn dequantize_one(&self, q: u8, alpha: u32) -> f64 {
        (q as f64 - self.zp as f64) * self.scale * (alpha as f64).exp2()
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

fn quantize_value(x: f64, step: f64, zp: i32, qmax: i64) -> i64 {
    let q = round_half_up(x / step) as i64 + zp as i64;
    q.clamp(0, qmax)
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(KernelError::EmptyVector);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    Ok(())
}

fn min_max(samples: &[f64]) -> (f64, f64) {
    samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Asymmetric min-max calibration. A constant tensor gets `scale = 1` and
/// a mid-range zero point.
pub fn calibrate_minmax(samples: &[f64], bits: u32) -> Result<(f64, i32)> {
    check_finite(samples)?;
    let qmax = (1i64 << bits) - 1;
    let (lo, hi) = min_max(samples);
    if hi == lo {
        return Ok((1.0, 1 << (bits - 1)));
    }
    let scale = (hi - lo) / qmax as f64;
    let zp = (round_half_up(-lo / scale) as i64).clamp(0, qmax);
    Ok((scale, zp as i32))
}

/// Largest exponent `f` in `[0, 8]` such that the most negative
/// row-relative difference `x - max(row)` still quantizes to no less than
/// `-128` at scale `2^-f`.
pub fn calibrate_pow2(samples: &[f64], row_len: usize) -> Result<u32> {
    check_finite(samples)?;
    if row_len == 0 || !samples.len().is_multiple_of(row_len) {
        return Err(KernelError::Shape { expected: row_len, got: samples.len() });
    }
    let worst = samples
        .chunks(row_len)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter().map(|x| x - m).fold(0.0f64, f64::min)
        })
        .fold(0.0f64, f64::min);
    let f =
        (0..=MAX_POW2_EXP).rev().find(|&f| round_half_up(-worst * (f as f64).exp2()) <= POW2_DIFF_LIMIT).unwrap_or(0);
    Ok(f)
}

/// PTF calibration over row-major `[.., C]` samples.
///
/// The layer scale comes from min-max calibration of the channel with the
/// smallest non-zero range, the zero point from min-max calibration of the
/// whole tensor. Each channel then takes the
/// `alpha` in `[0, alpha_max]` with the lowest mean squared quantization
/// error; ties go to the smaller `alpha`.
pub fn calibrate_ptf(samples: &[f64], channels: usize, bits: u32, alpha_max: u32) -> Result<PTFParams> {
    check_finite(samples)?;
    if channels == 0 || !samples.len().is_multiple_of(channels) {
        return Err(KernelError::Shape { expected: channels, got: samples.len() });
    }
    let per_channel: Vec<Vec<f64>> =
        (0..channels).map(|c| samples.iter().skip(c).step_by(channels).copied().collect()).collect();

    let narrowest = per_channel
        .iter()
        .map(|ch| {
            let (lo, hi) = min_max(ch);
            hi - lo
        })
        .enumerate()
        .filter(|&(_, r)| r > 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (scale, _) = calibrate_minmax(&per_channel[narrowest], bits)?;
    // the zero point follows the sign balance of the whole layer, so one
    // skewed narrow channel cannot push every other channel into clipping
    let (_, zp) = calibrate_minmax(samples, bits)?;

    let mut params = PTFParams { alphas: vec![0; channels], scale, zp, bits };
    for (c, ch) in per_channel.iter().enumerate() {
        params.alphas[c] = best_alpha(ch, &params, alpha_max);
    }
    Ok(params)
}

fn best_alpha(channel: &[f64], params: &PTFParams, alpha_max: u32) -> u32 {
    let mse = |alpha: u32| -> f64 {
        channel.iter().map(|&x| (x - params.dequantize_one(params.quantize_one(x, alpha), alpha)).powi(2)).sum::<f64>()
            / channel.len() as f64
    };
    let mut best = (0, mse(0));
    for alpha in 1..=alpha_max {
        let e = mse(alpha);
        if e < best.1 {
            best = (alpha, e);
        }
    }
    best.0
}

/// Elementwise PTF quantization of row-major `[.., C]` data.
pub fn quantize(x: &[f64], p: &PTFParams) -> Result<Vec<u8>> {
    let c = p.channels();
    if c == 0 || !x.len().is_multiple_of(c) {
        return Err(KernelError::Shape { expected: c, got: x.len() });
    }
    Ok(x.iter().enumerate().map(|(i, &v)| p.quantize_one(v, p.alphas[i % c])).collect())
}

pub fn dequantize(q: &[u8], p: &PTFParams) -> Result<Vec<f64>> {
    let c = p.channels();
    if c == 0 || !q.len().is_multiple_of(c) {
        return Err(KernelError::Shape { expected: c, got: q.len() });
    }
    Ok(q.iter().enumerate().map(|(i, &v)| p.dequantize_one(v, p.alphas[i % c])).collect())
}

/// Power-of-two-scale quantization of softmax logits to signed 8 bits.
pub fn quantize_pow2(x: &[f64], f: u32) -> Vec<i32> {
    let s = (f as f64).exp2();
    x.iter().map(|&v| (round_half_up(v * s) as i64).clamp(-128, 127) as i32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    #[test]
    fn minmax_examples() {
        let ramp: Vec<f64> = (0..=255).map(|v| v as f64).collect();
        assert_eq!(calibrate_minmax(&ramp, 8).unwrap(), (1.0, 0));
        let (s, zp) = calibrate_minmax(&[-1.0, 0.3, 1.0], 8).unwrap();
        assert_eq!(s, 2.0 / 255.0);
        assert_eq!(zp, 128);
        assert_eq!(calibrate_minmax(&[4.2; 10], 8).unwrap(), (1.0, 128));
        assert_eq!(calibrate_minmax(&[], 8), Err(KernelError::EmptyVector));
        assert_eq!(calibrate_minmax(&[1.0, f64::NAN], 8), Err(KernelError::NonFinite));
    }

    #[test]
    fn pow2_examples() {
        assert_eq!(calibrate_pow2(&[0.0, -3.0, -8.0, -1.5], 4).unwrap(), 4);
        assert_eq!(calibrate_pow2(&[10.0, -118.0], 2).unwrap(), 0);
        assert_eq!(calibrate_pow2(&[2.0, 2.0, 5.0, 5.0], 2).unwrap(), 8);
        // rows are judged relative to their own max
        assert_eq!(calibrate_pow2(&[100.0, 92.0, 0.0, -0.5], 2).unwrap(), 4);
        assert!(calibrate_pow2(&[1.0, 2.0, 3.0], 2).is_err());
        assert_eq!(calibrate_pow2(&[], 2), Err(KernelError::EmptyVector));
    }

    fn two_channel(scale2: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut r = CounterRng::new(seed);
        (0..n).flat_map(|_| [r.normal(), scale2 * r.normal()]).collect()
    }

    #[test]
    fn ptf_identical_channels_share_alpha() {
        let mut r = CounterRng::new(5);
        let data: Vec<f64> = (0..1000).flat_map(|_| [r.normal(); 4]).collect();
        let p = calibrate_ptf(&data, 4, 8, 3).unwrap();
        assert!(p.alphas.iter().all(|&a| a == p.alphas[0]));
        assert_eq!(p.alphas[0], 0);
    }

    #[test]
    fn ptf_wide_channel_gets_max_alpha() {
        let data = two_channel(8.0, 4000, 11);
        let p = calibrate_ptf(&data, 2, 8, 3).unwrap();
        assert_eq!(p.alphas, vec![0, 3]);
    }

    // Single channel: the search is over four candidates, so recompute the
    // MSE of each directly and take the first minimum.
    #[test]
    fn ptf_single_channel_matches_brute_force() {
        let mut r = CounterRng::new(3);
        let data: Vec<f64> = (0..500).map(|_| r.normal() * 3.0 + 1.0).collect();
        let p = calibrate_ptf(&data, 1, 8, 3).unwrap();
        let errs: Vec<f64> = (0..4)
            .map(|a: u32| {
                let step = p.scale * 2f64.powi(a as i32);
                data.iter()
                    .map(|&x| {
                        let q = ((x / step + 0.5).floor() + p.zp as f64).clamp(0.0, 255.0);
                        (x - (q - p.zp as f64) * step).powi(2)
                    })
                    .sum::<f64>()
            })
            .collect();
        let best = (0..4).fold(0, |b, a| if errs[a] < errs[b] { a } else { b });
        assert_eq!(p.alphas, vec![best as u32]);
    }

    #[test]
    fn quantize_examples() {
        let p = PTFParams { alphas: vec![0, 2], scale: 0.1, zp: 100, bits: 8 };
        assert_eq!(quantize(&[0.0, 0.0], &p).unwrap(), vec![100, 100]);
        let grid = [1.5, -2.0];
        let q = quantize(&grid, &p).unwrap();
        assert_eq!(q, vec![115, 95]);
        let back = dequantize(&q, &p).unwrap();
        assert!((back[0] - 1.5).abs() < 1e-12 && (back[1] + 2.0).abs() < 1e-12);
        assert!(quantize(&[1.0, 2.0, 3.0], &p).is_err());
    }

    #[test]
    fn pow2_quantization_saturates() {
        assert_eq!(quantize_pow2(&[0.0, -1.0, 0.03125, -100.0, 100.0], 4), vec![0, -16, 1, -128, 127]);
    }

    proptest! {
        #[test]
        fn quantization_error_within_half_step(x in prop::collection::vec(-4.0f64..4.0, 2..64), a0 in 0u32..4, a1 in 0u32..4) {
            let n = x.len() / 2 * 2;
            let x = &x[..n];
            let p = PTFParams { alphas: vec![a0, a1], scale: 8.0 / 255.0 / 8.0, zp: 128, bits: 8 };
            let q = quantize(x, &p).unwrap();
            let back = dequantize(&q, &p).unwrap();
            for (i, (&v, &b)) in x.iter().zip(&back).enumerate() {
                let step = p.scale * 2f64.powi(p.alphas[i % 2] as i32);
                let lo = (0.0 - 128.0) * step;
                let hi = (255.0 - 128.0) * step;
                if v >= lo && v <= hi {
                    prop_assert!((v - b).abs() <= 0.5 * step + 1e-12);
                }
            }
            // idempotent on representable values
            prop_assert_eq!(quantize(&back, &p).unwrap(), q);
        }

        #[test]
        fn ptf_alphas_in_range_and_deterministic(seed in any::<u64>(), c in 1usize..6, amax in 0u32..4) {
            let mut r = CounterRng::new(seed);
            let data: Vec<f64> = (0..c * 50).map(|i| r.normal() * (1 + i % c) as f64).collect();
            let p = calibrate_ptf(&data, c, 8, amax).unwrap();
            prop_assert!(p.alphas.iter().all(|&a| a <= amax));
            prop_assert!(p.zp >= 0 && p.zp <= 255 && p.scale > 0.0);
            prop_assert_eq!(calibrate_ptf(&data, c, 8, amax).unwrap(), p);
        }
    }
}
