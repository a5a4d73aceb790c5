use thiserror::Error;

pub type Result<T> = std::result::Result<T, KernelError>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("lod-zero: leading-one detector received zero")]
    LodZero,
    #[error("positive-exponent-input: difference {0} is above the running max")]
    PositiveExponentInput(i64),
    #[error("empty-vector")]
    EmptyVector,
    #[error("sequence-too-long: length {len} exceeds {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sum-below-one: reduced sum register holds less than 1.0")]
    SumBelowOne,
    #[error("shape-error: expected {expected} elements, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("subnormal-variance: variance register {0} is below the floor")]
    SubnormalVariance(u64),
    #[error("accumulator-overflow: {0} exceeded its declared width")]
    AccumulatorOverflow(&'static str),
    #[error("width-overflow: {raw} does not fit in {width} bits")]
    WidthOverflow { raw: i64, width: u32 },
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
}

impl KernelError {
    /// Stable short identifier, used in reports and by other-language ports.
    pub fn kind(&self) -> &'static str {
        match self {
            KernelError::LodZero => "lod-zero",
            KernelError::PositiveExponentInput(_) => "positive-exponent-input",
            KernelError::EmptyVector => "empty-vector",
            KernelError::SequenceTooLong { .. } => "sequence-too-long",
            KernelError::SumBelowOne => "sum-below-one",
            KernelError::Shape { .. } => "shape-error",
            KernelError::SubnormalVariance(_) => "subnormal-variance",
            KernelError::AccumulatorOverflow(_) => "accumulator-overflow",
            KernelError::WidthOverflow { .. } => "width-overflow",
            KernelError::NonFinite => "non-finite",
            KernelError::InvalidConfig(_) => "invalid-config",
        }
    }
}
