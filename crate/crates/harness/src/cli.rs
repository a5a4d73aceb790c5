use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sole_core::pipemodel::PipeConfig;

use crate::experiments::{self as exp, Dist, Rows, UnitKind, DEFAULT_SEED};
use crate::report::{RunReport, EXIT_PASS};
use crate::tensor::TensorFile;
use crate::RUN_REPORT_SCHEMA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Parser)]
#[command(name = "sole", version, about = "Integer softmax and layernorm kernel experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed of the counter-based random stream.
    #[arg(long, global = true, env = "SOLE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random [rows, channels] tensor file (CSV when --out ends in .csv).
    Gen {
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 768)]
        channels: usize,
        #[arg(long, value_enum, default_value_t = Dist::Normal)]
        dist: Dist,
    },
    /// Fit per-channel power-of-two factors to a tensor and print them as JSON.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        /// Channel count; defaults to the innermost dimension.
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long, default_value_t = 8)]
        bits: u32,
        #[arg(long, default_value_t = 3)]
        alpha_max: u32,
    },
    /// Monte Carlo estimate of the divider bias before and after correction.
    BiasCheck {
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
    },
    /// Relative error of E(x^2) and sigma under dynamic compression.
    CompressErr {
        #[arg(long, default_value_t = 1 << 20)]
        n: u64,
        #[arg(long, value_enum, default_value_t = Dist::Uniform)]
        dist: Dist,
    },
    /// Integer softmax against exact softmax on Gaussian or loaded rows.
    SoftmaxFidelity {
        #[arg(long, default_value_t = 785)]
        len: usize,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        /// Input scale exponent; calibrated from the data when omitted.
        #[arg(long)]
        f: Option<u32>,
        /// Tensor file to use instead of generated rows.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Integer layernorm against exact layernorm on Gaussian or loaded rows.
    LayernormFidelity {
        #[arg(long, default_value_t = 768)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// One attention head with exact and integer softmax; per-row cosine.
    AttnProxy {
        #[arg(long, default_value_t = 64)]
        seq: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
    /// Pipeline cycle estimate with and without ping-pong buffering.
    Cycles {
        #[arg(long, value_enum, default_value_t = UnitKind::Softmax)]
        kind: UnitKind,
        /// Row length (sequence length or channel count).
        #[arg(long, visible_alias = "channels", default_value_t = 785)]
        len: u64,
        #[arg(long, default_value_t = 16)]
        rows: u64,
        #[arg(long, default_value_t = 32)]
        lanes: u64,
        #[arg(long, default_value_t = PipeConfig::default().stage1_lat)]
        stage1_lat: u64,
        #[arg(long, default_value_t = PipeConfig::default().stage2_lat)]
        stage2_lat: u64,
        #[arg(long, default_value_t = PipeConfig::default().preprocess_lat)]
        preprocess_lat: u64,
    },
    /// Print the JSON Schema of run reports.
    Schema,
}

fn rows_from(input: &Option<PathBuf>, generate: impl FnOnce() -> Rows) -> Result<Rows> {
    match input {
        Some(path) => {
            let t = TensorFile::load(path).with_context(|| format!("reading {}", path.display()))?;
            Rows::from_tensor(&t)
        }
        None => Ok(generate()),
    }
}

/// Runs one command, writes its output and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let seed = cli.seed;
    let report = match &cli.command {
        Command::Gen { rows, channels, dist } => {
            let Some(out) = &cli.out else { bail!("gen needs --out PATH") };
            let t = exp::generate(*rows, *channels, *dist, seed)?;
            t.save(out).with_context(|| format!("writing {}", out.display()))?;
            return Ok(EXIT_PASS);
        }
        Command::Calibrate { input, channels, bits, alpha_max } => {
            let t = TensorFile::load(input).with_context(|| format!("reading {}", input.display()))?;
            let p = exp::calibrate(&t, *channels, *bits, *alpha_max)?;
            emit(cli, &(serde_json::to_string_pretty(&p)? + "\n"))?;
            return Ok(EXIT_PASS);
        }
        Command::Schema => {
            emit(cli, RUN_REPORT_SCHEMA)?;
            return Ok(EXIT_PASS);
        }
        Command::BiasCheck { n } => exp::bias_check(*n, seed)?,
        Command::CompressErr { n, dist } => exp::compress_err(*n, seed, *dist)?,
        Command::SoftmaxFidelity { len, rows, f, input } => {
            let data = rows_from(input, || Rows::gaussian(*rows, *len, seed))?;
            exp::softmax_fidelity(&data, *f, input.is_none().then_some(seed))?
        }
        Command::LayernormFidelity { channels, rows, input } => {
            let data = rows_from(input, || exp::layernorm_rows(*rows, *channels, seed))?;
            exp::layernorm_fidelity(&data, seed)?
        }
        Command::AttnProxy { seq, dim } => exp::attn_proxy(*seq, *dim, seed)?,
        Command::Cycles { kind, len, rows, lanes, stage1_lat, stage2_lat, preprocess_lat } => {
            let cfg = PipeConfig {
                vector_lanes: *lanes,
                stage1_lat: *stage1_lat,
                stage2_lat: *stage2_lat,
                preprocess_lat: *preprocess_lat,
                pingpong: true,
            };
            exp::cycles(*kind, *len, *rows, cfg)?
        }
    };
    emit(cli, &render(&report, cli.format))?;
    Ok(report.exit_code())
}

pub fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
        Format::Text => report.to_text(),
    }
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}
