//! Exhaustive checks of the small integer units against direct evaluation
//! of their defining formulas in floating point.

use sole_core::ailayernorm::{dynamic_compress, square_decompress, CompressedVal};
use sole_core::e2softmax::log2exp;
use sole_core::KernelError;

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

#[test]
fn dynamic_compress_all_inputs() {
    for x in 0u32..=255 {
        let s = x & 0b1100_0000 != 0;
        let step = if s { 16.0 } else { 4.0 };
        let y = round_half_up(x as f64 / step).clamp(0.0, 15.0) as u8;
        assert_eq!(dynamic_compress(x as u8), CompressedVal { y, s }, "x = {x}");
    }
}

#[test]
fn square_decompress_all_combinations() {
    let mut checked = 0;
    for y in 0u8..16 {
        for s in [false, true] {
            for alpha in 0u32..4 {
                // rebuild the magnitude, apply the power-of-two factor, square
                let step = if s { 16.0 } else { 4.0 };
                let expected = (y as f64 * step * (alpha as f64).exp2()).powi(2);
                assert_eq!(square_decompress(CompressedVal { y, s }, alpha) as f64, expected);
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 128);
}

#[test]
fn log2exp_all_nine_bit_differences() {
    for f in 0u32..=8 {
        for d in -256i64..=0 {
            let expected = round_half_up(-d as f64 * (-(f as f64)).exp2() * 1.4375).clamp(0.0, 15.0) as u32;
            assert_eq!(log2exp(d, f, 4).unwrap().k(), expected, "d = {d}, f = {f}");
        }
        for d in 1i64..=255 {
            assert_eq!(log2exp(d, f, 4), Err(KernelError::PositiveExponentInput(d)));
        }
    }
}

#[test]
fn squared_share_is_smaller_than_linear_share() {
    let mut violations = 0;
    for x1 in 1u64..=255 {
        for x2 in (x1 + 1)..=255 {
            // x1^2 / (x1^2 + x2^2) < x1 / (x1 + x2), cross-multiplied
            if x1 * x1 * (x1 + x2) >= x1 * (x1 * x1 + x2 * x2) {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn compression_statistics_over_full_input_range() {
    let n = 256.0;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut sq_c = 0.0;
    for x in 0u8..=255 {
        sum += x as f64;
        sq += (x as f64).powi(2);
        sq_c += square_decompress(dynamic_compress(x), 0) as f64;
    }
    let (mean, ex2, ex2_c) = (sum / n, sq / n, sq_c / n);
    let ex2_err = (ex2_c / ex2 - 1.0) * 100.0;
    let sigma_err = ((ex2_c - mean * mean).sqrt() / (ex2 - mean * mean).sqrt() - 1.0) * 100.0;
    assert!((ex2_err - -0.420_743_639_921_72).abs() < 1e-9, "{ex2_err}");
    assert!((sigma_err - -0.840_104_755_487_35).abs() < 1e-9, "{sigma_err}");
}
