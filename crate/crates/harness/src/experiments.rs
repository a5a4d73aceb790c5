//! Experiment commands. Each returns a [`RunReport`] that depends only on
//! its arguments and seed.

use anyhow::{ensure, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sole_core::ailayernorm::{dynamic_compress, square_decompress, AffineParams, AiLayerNorm, LayerNormConfig};
use sole_core::calib::{calibrate_minmax, calibrate_pow2, calibrate_ptf, quantize, quantize_pow2, PTFParams};
use sole_core::e2softmax::{E2Softmax, SoftmaxConfig};
use sole_core::oracle::{aldivision_bias_mc, compare, cosine, divider_bias_analytic, layernorm_ref, softmax_ref};
use sole_core::pipemodel::{cycles_layernorm, cycles_softmax, PipeConfig};
use sole_core::rng::CounterRng;

use crate::report::{Criterion, RunReport};
use crate::tensor::TensorFile;

pub const DEFAULT_SEED: u64 = 1;

pub const BIAS_PRE_RANGE: (f64, f64) = (-0.65, -0.62);
pub const BIAS_POST_MAX: f64 = 0.01;
/// Below this many samples the bias criteria are reported as inconclusive.
pub const BIAS_MIN_CONCLUSIVE_N: u64 = 100_000;

pub const EX2_ERR_MAX_PCT: f64 = 0.5;
pub const SIGMA_ERR_MAX_PCT: f64 = 0.8;
/// Standard deviation, in integer steps, of the signed normal inputs.
pub const NORMAL_INPUT_SIGMA: f64 = 64.0;

/// Bound on `mean_abs_err * len` for Gaussian softmax rows.
pub const SOFTMAX_MAE_LEN_BOUND: f64 = 1.1;
pub const LAYERNORM_MAE_BOUND: f64 = 0.02;
pub const ATTN_COSINE_MIN: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Uniform,
    Normal,
    /// Multiples of 16 in `[0, 240]`, where compression is lossless.
    Multiple16,
}

impl Dist {
    pub fn name(self) -> &'static str {
        match self {
            Dist::Uniform => "uniform",
            Dist::Normal => "normal",
            Dist::Multiple16 => "multiple16",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Softmax,
    Layernorm,
}

pub fn bias_check(n: u64, seed: u64) -> Result<RunReport> {
    ensure!(n >= 2, "need at least 2 samples");
    let est = aldivision_bias_mc(n, seed);
    let mut r = RunReport::new("bias-check", Some(seed)).config("n", n);
    r.metric("pre_bias_coeff", est.pre_bias_coeff);
    r.metric("post_bias_coeff", est.post_bias_coeff);
    r.metric("pre_ci95", [est.pre_bias_coeff - 1.96 * est.pre_std_err, est.pre_bias_coeff + 1.96 * est.pre_std_err]);
    r.metric(
        "post_ci95",
        [est.post_bias_coeff - 1.96 * est.post_std_err, est.post_bias_coeff + 1.96 * est.post_std_err],
    );
    r.metric("analytic_pre_bias_coeff", divider_bias_analytic());
    let mut pre = Criterion::within("pre_bias_coeff", est.pre_bias_coeff, BIAS_PRE_RANGE.0, BIAS_PRE_RANGE.1);
    let mut post = Criterion::at_most("abs_post_bias_coeff", est.post_bias_coeff.abs(), BIAS_POST_MAX);
    if n < BIAS_MIN_CONCLUSIVE_N {
        pre = pre.inconclusive();
        post = post.inconclusive();
        r.note(format!("n < {BIAS_MIN_CONCLUSIVE_N}: confidence interval too wide to judge"));
    }
    r.criterion(pre);
    r.criterion(post);
    Ok(r)
}

/// Exact integer moments of the true and compressed squares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct SquareSums {
    n: u64,
    sum: i128,
    sq: u128,
    sq_c: u128,
}

impl SquareSums {
    fn push(&mut self, d: i64) {
        let m = d.unsigned_abs().min(255);
        self.n += 1;
        self.sum += d as i128;
        self.sq += (m * m) as u128;
        self.sq_c += square_decompress(dynamic_compress(m as u8), 0) as u128;
    }
}

pub fn compress_err(n: u64, seed: u64, dist: Dist) -> Result<RunReport> {
    ensure!(n >= 1, "need at least 1 sample");
    let mut rng = CounterRng::new(seed);
    let mut s = SquareSums::default();
    for _ in 0..n {
        let d = match dist {
            Dist::Uniform => rng.below(256) as i64,
            Dist::Multiple16 => 16 * rng.below(16) as i64,
            Dist::Normal => (rng.normal() * NORMAL_INPUT_SIGMA).round().clamp(-255.0, 255.0) as i64,
        };
        s.push(d);
    }
    let nf = n as f64;
    let mean = s.sum as f64 / nf;
    let ex2 = s.sq as f64 / nf;
    let ex2_c = s.sq_c as f64 / nf;
    let sigma = (ex2 - mean * mean).max(0.0).sqrt();
    let sigma_c = (ex2_c - mean * mean).max(0.0).sqrt();
    let pct = |a: f64, t: f64| if t == 0.0 { 0.0 } else { (a / t - 1.0) * 100.0 };
    let ex2_err = pct(ex2_c, ex2);
    let sigma_err = pct(sigma_c, sigma);

    let mut r = RunReport::new("compress-err", Some(seed)).config("n", n).config("dist", dist.name());
    r.metric("mean", mean);
    r.metric("ex2_true", ex2);
    r.metric("ex2_compressed", ex2_c);
    r.metric("ex2_rel_err_pct", ex2_err);
    r.metric("sigma_true", sigma);
    r.metric("sigma_compressed", sigma_c);
    r.metric("sigma_rel_err_pct", sigma_err);
    match dist {
        Dist::Uniform | Dist::Multiple16 => {
            r.criterion(Criterion::at_most("abs_ex2_rel_err_pct", ex2_err.abs(), EX2_ERR_MAX_PCT));
            r.criterion(Criterion::at_most("abs_sigma_rel_err_pct", sigma_err.abs(), SIGMA_ERR_MAX_PCT));
        }
        Dist::Normal => {
            r.criterion(Criterion::info("abs_ex2_rel_err_pct", ex2_err.abs()));
            r.criterion(Criterion::info("abs_sigma_rel_err_pct", sigma_err.abs()));
        }
    }
    Ok(r)
}

/// Row-major `[rows, len]` real data, generated or loaded.
#[derive(Debug, Clone)]
pub struct Rows {
    pub data: Vec<f64>,
    pub len: usize,
}

impl Rows {
    pub fn gaussian(rows: usize, len: usize, seed: u64) -> Self {
        Self { data: CounterRng::new(seed).normals(rows * len), len }
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let len = t.last_dim();
        ensure!(len >= 1 && !t.data.is_empty(), "tensor is empty");
        ensure!(t.data.iter().all(|v| v.is_finite()), "tensor has non-finite values");
        Ok(Self { data: t.to_f64(), len })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.len
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.len)
    }
}

fn first_argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_fidelity(rows: &Rows, f: Option<u32>, seed: Option<u64>) -> Result<RunReport> {
    let f = match f {
        Some(f) => f,
        None => calibrate_pow2(&rows.data, rows.len)?,
    };
    let unit = E2Softmax::new(SoftmaxConfig::default().with_scale_exp(f))?;
    let step = (-(f as f64)).exp2();
    let mut approx = Vec::with_capacity(rows.data.len());
    let mut reference = Vec::with_capacity(rows.data.len());
    let mut argmax_hits = 0usize;
    let mut worst_row_mae: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let xq = quantize_pow2(row, f);
        let deq: Vec<f64> = xq.iter().map(|&v| v as f64 * step).collect();
        let out = unit.run(&xq).with_context(|| format!("row {i}"))?.to_f64();
        let exp = softmax_ref(&deq)?;
        worst_row_mae = worst_row_mae.max(compare(&out, &exp)?.mean_abs_err);
        let top = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if out[first_argmax(row)] == top {
            argmax_hits += 1;
        }
        approx.extend(out);
        reference.extend(exp);
    }
    let err = compare(&approx, &reference)?;
    let argmax_rate = argmax_hits as f64 / rows.rows() as f64;
    let mae_x_len = err.mean_abs_err * rows.len as f64;

    let mut r = RunReport::new("softmax-fidelity", seed)
        .config("len", rows.len)
        .config("rows", rows.rows())
        .config("f", f)
        .config("slice_len", unit.config().slice_len)
        .config("out_frac_bits", unit.config().out_frac_bits);
    r.metric("error", err);
    r.metric("worst_row_mean_abs_err", worst_row_mae);
    r.metric("argmax_preservation", argmax_rate);
    r.metric("mean_abs_err_x_len", mae_x_len);
    r.criterion(Criterion::at_least("argmax_preservation", argmax_rate, 1.0));
    r.criterion(Criterion::at_most("mean_abs_err_x_len", mae_x_len, SOFTMAX_MAE_LEN_BOUND));
    r.note("reference is exact softmax of the power-of-two-quantized logits; bounds are regression-frozen");
    Ok(r)
}

pub fn layernorm_rows(rows: usize, channels: usize, seed: u64) -> Rows {
    Rows::gaussian(rows, channels, seed)
}

/// `gamma ~ 1 + 0.2 N`, `beta ~ 0.1 N`, drawn from a stream disjoint from
/// the activations.
pub fn layernorm_affine(channels: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = CounterRng::new(seed ^ 0xA5A5_A5A5_A5A5_A5A5);
    let gamma = (0..channels).map(|_| 1.0 + 0.2 * r.normal()).collect();
    let beta = (0..channels).map(|_| 0.1 * r.normal()).collect();
    (gamma, beta)
}

pub struct LayerNormRun {
    pub ptf: PTFParams,
    pub affine: AffineParams,
    pub approx: Vec<f64>,
    pub reference: Vec<f64>,
}

pub fn run_layernorm(rows: &Rows, gamma: &[f64], beta: &[f64]) -> Result<LayerNormRun> {
    let c = rows.len;
    let ptf = calibrate_ptf(&rows.data, c, 8, 3)?;
    let xq = quantize(&rows.data, &ptf)?;
    let mut reference = Vec::with_capacity(rows.data.len());
    for row in rows.iter() {
        reference.extend(layernorm_ref(row, gamma, beta, 0.0)?);
    }
    let (out_scale, out_zp) = calibrate_minmax(&reference, 8)?;
    let affine = AffineParams::quantize(gamma, beta, out_scale, out_zp as u8)?;
    let unit = AiLayerNorm::new(LayerNormConfig::new(c))?;
    let mut approx = Vec::with_capacity(rows.data.len());
    for (i, row) in xq.chunks(c).enumerate() {
        let out = unit.run(row, &ptf, &affine).with_context(|| format!("row {i}"))?;
        approx.extend(out.into_iter().map(|q| affine.dequantize_output(q)));
    }
    Ok(LayerNormRun { ptf, affine, approx, reference })
}

pub fn layernorm_fidelity(rows: &Rows, seed: u64) -> Result<RunReport> {
    let (gamma, beta) = layernorm_affine(rows.len, seed);
    let run = run_layernorm(rows, &gamma, &beta)?;
    let err = compare(&run.approx, &run.reference)?;
    let mut alpha_hist = [0usize; 4];
    for &a in &run.ptf.alphas {
        alpha_hist[a as usize] += 1;
    }
    let mut r =
        RunReport::new("layernorm-fidelity", Some(seed)).config("channels", rows.len).config("rows", rows.rows());
    r.metric("error", err);
    r.metric("input_scale", run.ptf.scale);
    r.metric("input_zp", run.ptf.zp);
    r.metric("alpha_histogram", alpha_hist);
    r.metric("output_scale", run.affine.out_scale);
    r.metric("output_zp", run.affine.out_zp);
    r.criterion(Criterion::at_most("mean_abs_err", err.mean_abs_err, LAYERNORM_MAE_BOUND));
    r.note("reference is double-precision layernorm of the unquantized input; bound is regression-frozen");
    Ok(r)
}

pub struct AttnRun {
    /// Per-row outputs of the exact path.
    pub exact: Vec<Vec<f64>>,
    /// Per-row outputs of the integer path.
    pub approx: Vec<Vec<f64>>,
    pub cosines: Vec<f64>,
    pub f: u32,
}

/// One attention head, `softmax(Q K^T / sqrt(dim)) V`, computed with the
/// exact softmax and with the integer unit.
pub fn attention_pair(q: &[f64], k: &[f64], v: &[f64], seq: usize, dim: usize) -> Result<AttnRun> {
    let inv = 1.0 / (dim as f64).sqrt();
    let scores: Vec<f64> = (0..seq * seq)
        .map(|ij| {
            let (i, j) = (ij / seq, ij % seq);
            q[i * dim..(i + 1) * dim].iter().zip(&k[j * dim..(j + 1) * dim]).map(|(a, b)| a * b).sum::<f64>() * inv
        })
        .collect();
    let f = calibrate_pow2(&scores, seq)?;
    let unit = E2Softmax::new(SoftmaxConfig::default().with_scale_exp(f))?;
    let mix = |p: &[f64]| -> Vec<f64> {
        (0..dim).map(|d| p.iter().enumerate().map(|(j, w)| w * v[j * dim + d]).sum()).collect()
    };
    let mut run = AttnRun { exact: Vec::new(), approx: Vec::new(), cosines: Vec::new(), f };
    for row in scores.chunks(seq) {
        let exact = mix(&softmax_ref(row)?);
        let approx = mix(&unit.run(&quantize_pow2(row, f))?.to_f64());
        run.cosines.push(cosine(&approx, &exact));
        run.exact.push(exact);
        run.approx.push(approx);
    }
    Ok(run)
}

pub fn attn_proxy(seq: usize, dim: usize, seed: u64) -> Result<RunReport> {
    ensure!(seq >= 1 && dim >= 1, "seq and dim must be >= 1");
    let mut rng = CounterRng::new(seed);
    let q = rng.normals(seq * dim);
    let k = rng.normals(seq * dim);
    let v = rng.normals(seq * dim);
    let run = attention_pair(&q, &k, &v, seq, dim)?;
    let mean = run.cosines.iter().sum::<f64>() / seq as f64;
    let min = run.cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut r = RunReport::new("attn-proxy", Some(seed)).config("seq", seq).config("dim", dim).config("f", run.f);
    r.metric("mean_cosine", mean);
    r.metric("min_cosine", min);
    r.criterion(Criterion::at_least("mean_cosine", mean, ATTN_COSINE_MIN));
    r.note("desk-scale stand-in for end-task accuracy; threshold is regression-frozen");
    Ok(r)
}

pub fn cycles(kind: UnitKind, len: u64, rows: u64, cfg: PipeConfig) -> Result<RunReport> {
    let model = match kind {
        UnitKind::Softmax => cycles_softmax,
        UnitKind::Layernorm => cycles_layernorm,
    };
    let pp = model(len, rows, &cfg.with_pingpong(true))?;
    let serial = model(len, rows, &cfg.with_pingpong(false))?;
    let mut r = RunReport::new("cycles", None)
        .config("kind", json!(kind))
        .config("len", len)
        .config("rows", rows)
        .config("vector_lanes", cfg.vector_lanes)
        .config("stage1_lat", cfg.stage1_lat)
        .config("stage2_lat", cfg.stage2_lat)
        .config("preprocess_lat", cfg.preprocess_lat);
    r.metric("beats_per_row", cfg.beats(len));
    r.metric("cycles_pingpong", pp);
    r.metric("cycles_serial", serial);
    r.metric("overlap_speedup", serial as f64 / pp as f64);
    r.criterion(Criterion::at_most("pingpong_over_serial", pp as f64 / serial as f64, 1.0));
    r.note("relative model: latencies are assumed placeholders, not measured hardware");
    Ok(r)
}

pub fn generate(rows: usize, cols: usize, dist: Dist, seed: u64) -> Result<TensorFile> {
    ensure!(rows >= 1 && cols >= 1, "rows and channels must be >= 1");
    let dims = vec![u32::try_from(rows)?, u32::try_from(cols)?];
    let mut rng = CounterRng::new(seed);
    let data = (0..rows * cols)
        .map(|_| match dist {
            Dist::Normal => rng.normal() as f32,
            Dist::Uniform => rng.uniform() as f32,
            Dist::Multiple16 => (16 * rng.below(16)) as f32,
        })
        .collect();
    Ok(TensorFile::new(dims, data)?)
}

pub fn calibrate(t: &TensorFile, channels: Option<usize>, bits: u32, alpha_max: u32) -> Result<PTFParams> {
    let c = channels.unwrap_or_else(|| t.last_dim());
    Ok(calibrate_ptf(&t.to_f64(), c, bits, alpha_max)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Status;

    #[test]
    fn bias_small_n_is_inconclusive() {
        let r = bias_check(1000, 3).unwrap();
        assert!(r.criteria.iter().all(|c| c.status == Status::Inconclusive));
        assert_eq!(r.exit_code(), crate::report::EXIT_INCONCLUSIVE);
    }

    #[test]
    fn lossless_inputs_have_zero_error() {
        let r = compress_err(10_000, 5, Dist::Multiple16).unwrap();
        assert_eq!(r.metrics["ex2_rel_err_pct"], 0.0);
        assert_eq!(r.metrics["sigma_rel_err_pct"], 0.0);
    }

    #[test]
    fn normal_compression_is_informational() {
        let r = compress_err(10_000, 5, Dist::Normal).unwrap();
        assert!(r.criteria.iter().all(|c| c.status == Status::Info));
    }

    #[test]
    fn single_element_softmax() {
        let rows = Rows { data: vec![0.3], len: 1 };
        let r = softmax_fidelity(&rows, Some(4), None).unwrap();
        assert_eq!(r.metrics["error"]["max_abs_err"], 47.0 / 256.0);
    }

    #[test]
    fn constant_rows_give_beta() {
        let c = 32;
        let data: Vec<f64> = [0.7, -0.3, 1.2].iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
        let rows = Rows { data, len: c };
        let (gamma, beta) = layernorm_affine(c, 9);
        let run = run_layernorm(&rows, &gamma, &beta).unwrap();
        assert!(run.ptf.alphas.iter().all(|&a| a == run.ptf.alphas[0]));
        for (y, b) in run.approx.iter().zip(beta.iter().cycle()) {
            assert!((y - b).abs() <= run.affine.out_scale, "{y} vs {b}");
        }
    }

    #[test]
    fn identical_query_rows_give_identical_outputs() {
        let (seq, dim) = (16, 8);
        let mut rng = CounterRng::new(4);
        let mut q = rng.normals(seq * dim);
        let row0 = q[..dim].to_vec();
        q[3 * dim..4 * dim].copy_from_slice(&row0);
        let k = rng.normals(seq * dim);
        let v = rng.normals(seq * dim);
        let run = attention_pair(&q, &k, &v, seq, dim).unwrap();
        assert_eq!(run.exact[0], run.exact[3]);
        assert_eq!(run.approx[0], run.approx[3]);
    }

    #[test]
    fn cycles_report_echoes_constants() {
        let r = cycles(UnitKind::Layernorm, 768, 4, PipeConfig::default()).unwrap();
        assert_eq!(r.config["preprocess_lat"], 8);
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn generate_shape() {
        let t = generate(3, 5, Dist::Normal, 1).unwrap();
        assert_eq!(t.dims, vec![3, 5]);
        assert_eq!(t, generate(3, 5, Dist::Normal, 1).unwrap());
    }
}
