//! Double-precision references and error metrics used to audit the kernels.

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;
use crate::{KernelError, Result};

/// Probability floor applied before taking logs in the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub max_abs_err: f64,
    pub mean_err: f64,
    pub mean_abs_err: f64,
    /// `sum |a - r| / sum |r|`
    pub rel_err: f64,
    /// `KL(ref || approx)` after renormalizing both; only defined when
    /// neither vector has negative entries.
    pub kl_div: Option<f64>,
    pub n: usize,
}

fn check(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(KernelError::EmptyVector);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax_ref(x: &[f64]) -> Result<Vec<f64>> {
    check(x)?;
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Layer normalization with population variance. `sigma` is
/// `sqrt(max(var, eps))`, so a constant row maps to `beta`.
pub fn layernorm_ref(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    check(x)?;
    for got in [gamma.len(), beta.len()] {
        if got != x.len() {
            return Err(KernelError::Shape { expected: x.len(), got });
        }
    }
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.max(eps).sqrt();
    Ok(x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| if sigma > 0.0 { (v - mu) / sigma * g + b } else { *b })
        .collect())
}

/// Mitchell's piecewise-linear `log2`: leading-one position plus the
/// remaining bits read as a binary fraction.
pub fn mitchell_log2(x: u64) -> Result<f64> {
    let (k, frac) = mitchell_parts(x)?;
    Ok(k as f64 + frac)
}

fn mitchell_parts(x: u64) -> Result<(i32, f64)> {
    let k = crate::fxp::leading_one(x)?;
    let frac = (x - (1u64 << k)) as f64 / (1u64 << k) as f64;
    Ok((k as i32, frac))
}

/// Mitchell division `x1 / x2`: subtract the approximate logs, then take
/// the approximate antilog, borrowing from the characteristic when the
/// fraction difference is negative.
pub fn mitchell_div(x1: u64, x2: u64) -> Result<f64> {
    let (k1, f1) = mitchell_parts(x1)?;
    let (k2, f2) = mitchell_parts(x2)?;
    let df = f1 - f2;
    Ok(if df < 0.0 { 2f64.powi(k1 - k2 - 1) * (2.0 + df) } else { 2f64.powi(k1 - k2) * (1.0 + df) })
}

/// Normalized divider error `delta * 2^(k_y + k_s + 1)` for mantissa `s`.
/// The plain one-bit divider uses `1 - q(s)`, the corrected one
/// `1.636 - q(s)`; the exact quotient contributes `2 / (1 + s)`.
pub fn divider_error_coeffs(s: f64) -> (f64, f64) {
    let q = (2.0 * s).floor() / 2.0;
    let exact = 2.0 / (1.0 + s);
    ((1.0 - q) - exact, (1.636 - q) - exact)
}

/// Closed form of the mean uncorrected coefficient over `s ~ U[0, 1)`:
/// `3/4 - 2 ln 2`.
pub fn divider_bias_analytic() -> f64 {
    0.75 - 2.0 * std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub pre_bias_coeff: f64,
    pub post_bias_coeff: f64,
    /// Standard error of the uncorrected mean.
    pub pre_std_err: f64,
    /// Standard error of the corrected mean.
    pub post_std_err: f64,
    pub n: u64,
}

/// Samples per Monte Carlo shard. Shard `i` reads the stream from word
/// `i * MC_SHARD`, and shard sums are merged in shard order.
pub const MC_SHARD: u64 = 1 << 16;

/// Monte Carlo estimate of the divider bias, `s ~ U[0, 1)`.
pub fn aldivision_bias_mc(n: u64, seed: u64) -> BiasEstimate {
    let mut pre = Moments2::default();
    let mut post = Moments2::default();
    let mut start = 0;
    while start < n {
        let len = MC_SHARD.min(n - start);
        let mut r = CounterRng::at(seed, start);
        let mut shard_pre = Moments2::default();
        let mut shard_post = Moments2::default();
        for _ in 0..len {
            let (a, b) = divider_error_coeffs(r.uniform());
            shard_pre.push(a);
            shard_post.push(b);
        }
        pre.merge(&shard_pre);
        post.merge(&shard_post);
        start += len;
    }
    BiasEstimate {
        pre_bias_coeff: pre.mean(),
        post_bias_coeff: post.mean(),
        pre_std_err: pre.std_err(),
        post_std_err: post.std_err(),
        n,
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments2 {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments2 {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(&mut self, o: &Moments2) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    fn std_err(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        let var = (self.sum_sq / n - self.mean().powi(2)).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }
}

pub fn compare(approx: &[f64], reference: &[f64]) -> Result<ErrorReport> {
    if approx.len() != reference.len() {
        return Err(KernelError::Shape { expected: reference.len(), got: approx.len() });
    }
    if approx.is_empty() {
        return Err(KernelError::EmptyVector);
    }
    let n = approx.len();
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    let mut sum_abs = 0.0;
    let mut ref_abs = 0.0;
    for (&a, &r) in approx.iter().zip(reference) {
        let e = a - r;
        max_abs = max_abs.max(e.abs());
        sum += e;
        sum_abs += e.abs();
        ref_abs += r.abs();
    }
    let rel_err = if ref_abs > 0.0 {
        sum_abs / ref_abs
    } else if sum_abs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ErrorReport {
        max_abs_err: max_abs,
        mean_err: sum / n as f64,
        mean_abs_err: sum_abs / n as f64,
        rel_err,
        kl_div: kl_divergence(reference, approx),
        n,
    })
}

fn kl_divergence(p: &[f64], q: &[f64]) -> Option<f64> {
    if p.iter().chain(q).any(|&v| v < 0.0) {
        return None;
    }
    let normalize = |v: &[f64]| -> Vec<f64> {
        let floored: Vec<f64> = v.iter().map(|&x| x.max(KL_FLOOR)).collect();
        let s: f64 = floored.iter().sum();
        floored.into_iter().map(|x| x / s).collect()
    };
    let (p, q) = (normalize(p), normalize(q));
    Some(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

/// Cosine similarity of two equal-length vectors; 1 when both are zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
