//! Closed-form cycle model of the two-stage softmax and layernorm units.
//!
//! Each stage streams one row in `ceil(len / lanes)` beats and then pays a
//! fixed latency. Without ping-pong buffering the stages of every row run
//! back to back. With it, a row enters a stage as soon as the previous row
//! has left it, so the steady state costs one slowest-stage time per row.
//! Latencies are placeholders; the numbers support relative studies only.

use serde::{Deserialize, Serialize};

use crate::{KernelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipeConfig {
    pub vector_lanes: u64,
    pub stage1_lat: u64,
    pub stage2_lat: u64,
    /// Scalar latency of the layernorm statistics stage (mean, variance,
    /// inverse square root).
    pub preprocess_lat: u64,
    pub pingpong: bool,
}

impl Default for PipeConfig {
    fn default() -> Self {
        Self { vector_lanes: 32, stage1_lat: 6, stage2_lat: 3, preprocess_lat: 8, pingpong: true }
    }
}

impl PipeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vector_lanes == 0 {
            return Err(KernelError::InvalidConfig("vector_lanes must be >= 1".into()));
        }
        if self.stage1_lat == 0 || self.stage2_lat == 0 || self.preprocess_lat == 0 {
            return Err(KernelError::InvalidConfig("latencies must be >= 1".into()));
        }
        Ok(())
    }

    pub fn beats(&self, len: u64) -> u64 {
        len.div_ceil(self.vector_lanes)
    }

    pub fn with_lanes(self, vector_lanes: u64) -> Self {
        Self { vector_lanes, ..self }
    }

    pub fn with_pingpong(self, pingpong: bool) -> Self {
        Self { pingpong, ..self }
    }
}

fn check_dims(len: u64, rows: u64) -> Result<()> {
    if len == 0 || rows == 0 {
        return Err(KernelError::InvalidConfig("length and rows must be >= 1".into()));
    }
    Ok(())
}

fn pipeline(stages: &[u64], rows: u64, pingpong: bool) -> u64 {
    let fill: u64 = stages.iter().sum();
    if pingpong {
        let slowest = stages.iter().copied().max().unwrap_or(0);
        fill + (rows - 1) * slowest
    } else {
        rows * fill
    }
}

pub fn cycles_softmax(len: u64, rows: u64, cfg: &PipeConfig) -> Result<u64> {
    cfg.validate()?;
    check_dims(len, rows)?;
    let b = cfg.beats(len);
    Ok(pipeline(&[b + cfg.stage1_lat, b + cfg.stage2_lat], rows, cfg.pingpong))
}

pub fn cycles_layernorm(channels: u64, rows: u64, cfg: &PipeConfig) -> Result<u64> {
    cfg.validate()?;
    check_dims(channels, rows)?;
    let b = cfg.beats(channels);
    Ok(pipeline(&[b + cfg.stage1_lat, cfg.preprocess_lat, b + cfg.stage2_lat], rows, cfg.pingpong))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> PipeConfig {
        PipeConfig { vector_lanes: 32, stage1_lat: 1, stage2_lat: 1, preprocess_lat: 1, pingpong: false }
    }

    #[test]
    fn one_beat_per_stage() {
        // two beats plus the two unit latencies
        assert_eq!(cycles_softmax(32, 1, &unit()).unwrap(), 2 + 2);
        assert_eq!(cycles_layernorm(32, 1, &unit()).unwrap(), 2 + 3);
    }

    #[test]
    fn overlap_reduces_two_rows() {
        let serial = unit();
        let pp = unit().with_pingpong(true);
        assert!(cycles_softmax(32, 2, &pp).unwrap() < cycles_softmax(32, 2, &serial).unwrap());
        assert!(cycles_layernorm(32, 2, &pp).unwrap() < cycles_layernorm(32, 2, &serial).unwrap());
    }

    #[test]
    fn regression_values() {
        let cfg = PipeConfig::default();
        // beats = 25; stages 31 and 28
        assert_eq!(cycles_softmax(785, 16, &cfg).unwrap(), 59 + 15 * 31);
        assert_eq!(cycles_softmax(785, 16, &cfg.with_pingpong(false)).unwrap(), 16 * 59);
        // beats = 24; stages 30, 8, 27
        assert_eq!(cycles_layernorm(768, 16, &cfg).unwrap(), 65 + 15 * 30);
        assert_eq!(cycles_layernorm(768, 16, &cfg.with_pingpong(false)).unwrap(), 16 * 65);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(cycles_softmax(0, 1, &unit()).is_err());
        assert!(cycles_softmax(1, 0, &unit()).is_err());
        assert!(cycles_softmax(1, 1, &unit().with_lanes(0)).is_err());
        let zero_lat = PipeConfig { stage2_lat: 0, ..unit() };
        assert!(cycles_layernorm(1, 1, &zero_lat).is_err());
    }

    fn any_cfg() -> impl Strategy<Value = PipeConfig> {
        (1u64..128, 1u64..20, 1u64..20, 1u64..20).prop_map(|(l, a, b, p)| PipeConfig {
            vector_lanes: l,
            stage1_lat: a,
            stage2_lat: b,
            preprocess_lat: p,
            pingpong: true,
        })
    }

    proptest! {
        #[test]
        fn pingpong_never_slower(cfg in any_cfg(), len in 1u64..5000, rows in 1u64..64) {
            let serial = cfg.with_pingpong(false);
            prop_assert!(cycles_softmax(len, rows, &cfg).unwrap() <= cycles_softmax(len, rows, &serial).unwrap());
            prop_assert!(cycles_layernorm(len, rows, &cfg).unwrap() <= cycles_layernorm(len, rows, &serial).unwrap());
        }

        #[test]
        fn monotone(cfg in any_cfg(), pp in any::<bool>(), len in 1u64..5000, rows in 1u64..64) {
            let cfg = cfg.with_pingpong(pp);
            for f in [cycles_softmax, cycles_layernorm] {
                let base = f(len, rows, &cfg).unwrap();
                prop_assert!(f(len + 1, rows, &cfg).unwrap() >= base);
                prop_assert!(f(len, rows + 1, &cfg).unwrap() > base);
            }
        }

        #[test]
        fn doubling_lanes(cfg in any_cfg(), pp in any::<bool>(), k in 2u64..40, extra in 0u64..64, rows in 1u64..64) {
            let cfg = cfg.with_pingpong(pp);
            let len = k * cfg.vector_lanes + extra % cfg.vector_lanes;
            let wide = cfg.with_lanes(cfg.vector_lanes * 2);
            for f in [cycles_softmax, cycles_layernorm] {
                let a = f(len, rows, &cfg).unwrap() as f64;
                let b = f(len, rows, &wide).unwrap() as f64;
                prop_assert!(a / b > 1.0 && a / b <= 2.0, "ratio {}", a / b);
            }
        }
    }
}
