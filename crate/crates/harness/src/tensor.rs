//! Tensor files: a small binary container and plain CSV.
//!
//! Binary layout (little-endian): `b"SOLE"`, version byte `1`, `u32 ndim`,
//! `ndim` x `u32` dims, then `product(dims)` x `f32`, row-major.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SOLE";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic: expected \"SOLE\"")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("truncated payload: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dimension product overflows")]
    DimOverflow,
    #[error("rows have unequal lengths ({expected} vs {got} at row {row})")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("tensor must be 1- or 2-dimensional for CSV, got {0} dims")]
    CsvRank(usize),
    #[error("dims {dims:?} do not match {len} elements")]
    Shape { dims: Vec<u32>, len: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad number {0:?}")]
    Number(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub fn kind(&self) -> &'static str {
        match self {
            TensorError::BadMagic => "bad-magic",
            TensorError::BadVersion(_) => "bad-version",
            TensorError::Truncated { .. } => "truncated-payload",
            TensorError::TrailingBytes(_) => "trailing-bytes",
            TensorError::DimOverflow => "dim-overflow",
            TensorError::Ragged { .. } | TensorError::CsvRank(_) | TensorError::Shape { .. } => "shape-error",
            TensorError::Csv(_) | TensorError::Number(_) => "csv-error",
            TensorError::Io(_) => "io-error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, TensorError> {
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            Some(_) => Err(TensorError::Shape { dims, len: data.len() }),
            None => Err(TensorError::DimOverflow),
        }
    }

    /// Length of the innermost dimension (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(1) as usize
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.dims.len() + self.data.len()));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let need_header = |need: usize| {
            if bytes.len() < need {
                Err(TensorError::Truncated { need, have: bytes.len() })
            } else {
                Ok(())
            }
        };
        need_header(HEADER_LEN)?;
        if bytes[4] != VERSION {
            return Err(TensorError::BadVersion(bytes[4]));
        }
        let ndim = read_u32(bytes, 5) as usize;
        let dims_end = ndim.checked_mul(4).and_then(|n| n.checked_add(HEADER_LEN)).ok_or(TensorError::DimOverflow)?;
        need_header(dims_end)?;
        let dims: Vec<u32> = (0..ndim).map(|i| read_u32(bytes, HEADER_LEN + 4 * i)).collect();
        let need = element_count(&dims)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(dims_end))
            .ok_or(TensorError::DimOverflow)?;
        need_header(need)?;
        if bytes.len() > need {
            return Err(TensorError::TrailingBytes(bytes.len() - need));
        }
        let data =
            bytes[dims_end..need].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { dims, data })
    }

    /// One line per row of the innermost dimension, comma separated.
    pub fn to_csv(&self) -> Result<String, TensorError> {
        if self.dims.len() > 2 {
            return Err(TensorError::CsvRank(self.dims.len()));
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in self.data.chunks(self.last_dim().max(1)) {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| TensorError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    /// Parses CSV into a `[rows, cols]` tensor.
    pub fn from_csv(text: &str) -> Result<Self, TensorError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0u32;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let expected = *cols.get_or_insert(rec.len());
            if rec.len() != expected {
                return Err(TensorError::Ragged { row: i, expected, got: rec.len() });
            }
            for field in rec.iter() {
                let field = field.trim();
                data.push(field.parse::<f32>().map_err(|_| TensorError::Number(field.to_string()))?);
            }
            rows += 1;
        }
        Self::new(vec![rows, cols.unwrap_or(0) as u32], data)
    }

    /// Reads CSV when the extension is `.csv`, the binary format otherwise.
    pub fn load(path: &Path) -> Result<Self, TensorError> {
        if is_csv(path) {
            Self::from_csv(&fs::read_to_string(path)?)
        } else {
            Self::decode(&fs::read(path)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        if is_csv(path) {
            fs::write(path, self.to_csv()?)?;
        } else {
            fs::write(path, self.encode())?;
        }
        Ok(())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}
