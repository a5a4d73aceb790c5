use sole_core::calib::quantize_pow2;
use sole_core::e2softmax::{aldivision, E2Softmax, SoftmaxConfig, SumAccumulator};
use sole_core::oracle::{compare, softmax_ref};
use sole_core::rng::CounterRng;

const GRID: std::ops::RangeInclusive<i32> = -8..=7;

/// Two-pass reference: exact global max first, then one code per element
/// from the closed-form Log2Exp, sums and quotients in floating point.
fn two_pass(x: &[i32], f: u32) -> (Vec<u32>, f64, Vec<f64>) {
    let m = *x.iter().max().unwrap();
    let codes: Vec<u32> =
        x.iter().map(|&v| (((m - v) as f64 * (-(f as f64)).exp2() * 1.4375 + 0.5).floor()).min(15.0) as u32).collect();
    let sum: f64 = codes.iter().map(|&k| (-(k as f64)).exp2()).sum();
    let k_s = sum.log2().floor();
    let q = sum / k_s.exp2() >= 1.5;
    let constant = if q { 145.0 } else { 209.0 };
    let out = codes.iter().map(|&k| (constant / (k as f64 + k_s).exp2()).floor() / 256.0).collect();
    (codes, sum, out)
}

fn element_unit(f: u32) -> E2Softmax {
    E2Softmax::new(SoftmaxConfig::default().with_scale_exp(f).with_slice_len(1)).unwrap()
}

fn for_each_vector(len: usize, mut visit: impl FnMut(&[i32])) {
    let base = (*GRID.end() - *GRID.start() + 1) as usize;
    let mut x = vec![0i32; len];
    for mut idx in 0..base.pow(len as u32) {
        for v in x.iter_mut() {
            *v = GRID.start() + (idx % base) as i32;
            idx /= base;
        }
        visit(&x);
    }
}

#[test]
fn divider_outputs_at_zero_shift() {
    let one = SumAccumulator::from_f64(1.0, &SoftmaxConfig::default()).unwrap();
    let one_and_half = SumAccumulator::from_f64(1.5, &SoftmaxConfig::default()).unwrap();
    assert_eq!(aldivision(0, &one, 8).unwrap(), (0.818f64 * 256.0).round() as u32);
    assert_eq!(aldivision(0, &one_and_half, 8).unwrap(), (0.568f64 * 256.0).round() as u32);
}

#[test]
fn single_element_output() {
    let out = element_unit(4).run(&[37]).unwrap().to_f64();
    assert_eq!(out, vec![209.0 / 256.0]);
    let rep = compare(&out, &softmax_ref(&[37.0 / 16.0]).unwrap()).unwrap();
    assert_eq!(rep.max_abs_err, 47.0 / 256.0);
}

#[test]
fn max_first_vectors_match_two_pass() {
    for f in [0, 2, 4] {
        let unit = element_unit(f);
        for len in 1..=5 {
            for_each_vector(len, |x| {
                if x.iter().any(|&v| v > x[0]) {
                    return;
                }
                let state = unit.stage1(x).unwrap();
                let (codes, sum, out) = two_pass(x, f);
                assert_eq!(unit.corrected_codes(&state).unwrap(), codes, "{x:?}");
                assert_eq!(state.sum.to_f64(), sum, "{x:?}");
                assert_eq!(unit.stage2(&state).unwrap().to_f64(), out, "{x:?}");
            });
        }
    }
}

#[test]
fn ascending_vectors_match_two_pass_codes() {
    for f in [0, 2, 4] {
        let unit = element_unit(f);
        for len in 1..=5 {
            for_each_vector(len, |x| {
                if x.windows(2).any(|w| w[0] > w[1]) {
                    return;
                }
                let state = unit.stage1(x).unwrap();
                assert_eq!(unit.corrected_codes(&state).unwrap(), two_pass(x, f).0, "{x:?}");
            });
        }
    }
}

#[test]
fn slice_granularity_matches_per_element_on_constant_slices() {
    // with a single slice every element is encoded against the true max
    let mut r = CounterRng::new(3);
    for _ in 0..200 {
        let x: Vec<i32> = (0..32).map(|_| r.below(200) as i32 - 100).collect();
        let unit = E2Softmax::new(SoftmaxConfig::default().with_slice_len(32)).unwrap();
        let state = unit.stage1(&x).unwrap();
        let (codes, sum, out) = two_pass(&x, 4);
        assert_eq!(unit.corrected_codes(&state).unwrap(), codes);
        assert_eq!(state.sum.to_f64(), sum);
        assert_eq!(unit.stage2(&state).unwrap().to_f64(), out);
    }
}

#[test]
fn gaussian_rows_stay_close_to_reference() {
    let unit = E2Softmax::new(SoftmaxConfig::default()).unwrap();
    let mut r = CounterRng::new(2024);
    for len in [8usize, 64, 785, 1024] {
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let logits = r.normals(len);
            let xq = quantize_pow2(&logits, 4);
            let deq: Vec<f64> = xq.iter().map(|&v| v as f64 / 16.0).collect();
            let out = unit.run(&xq).unwrap().to_f64();
            let rep = compare(&out, &softmax_ref(&deq).unwrap()).unwrap();
            worst = worst.max(rep.mean_abs_err);
            let top = out.iter().cloned().fold(0.0, f64::max);
            let arg = (0..len).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
            assert_eq!(out[arg], top);
        }
        eprintln!("len {len}: worst row mean abs err {worst}");
        assert!(worst < 2.0 / len as f64, "len {len}: {worst}");
    }
}
