use thiserror::Error;

/// Errors raised anywhere along the transmit or receive chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported bandwidth NDLRB = {0} (expected 6, 15, 25, 50, 75 or 100)")]
    UnsupportedBandwidth(u32),
    #[error("antenna port {port} not configured (cell has {ports})")]
    InvalidPort { port: usize, ports: usize },

    #[error("IQ file length {0} is not a multiple of 8 bytes")]
    TruncatedFile(u64),
    #[error("no sample rate available for recording: {0}")]
    MissingMetadata(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("input of {0} bits is too short for tail-biting encoding")]
    InputTooShort(usize),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("odd number of bits ({0}) for QPSK mapping")]
    OddBitCount(usize),

    #[error("N_ID(2) = {0} is outside 0..=2")]
    InvalidNid2(u8),
    #[error("cell identity out of range: N_ID(1) = {nid1}, N_ID(2) = {nid2}")]
    OutOfRange { nid1: u16, nid2: u8 },
    #[error("no PSS found (best peak-to-mean {peak_to_mean:.2}, correlation {metric:.3})")]
    NoPssFound { peak_to_mean: f64, metric: f64 },
    #[error("no SSS found (best correlation {0:.3})")]
    NoSssFound(f64),

    #[error("grid dimensions do not match cell configuration")]
    DimensionMismatch,
    #[error("not enough samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("MIB field out of range: {0}")]
    InvalidFieldValue(String),
    #[error("PBCH CRC failed under every quarter/antenna hypothesis")]
    CrcFail,

    #[error("PCFICH confidence {0:.3} below threshold")]
    LowConfidence(f64),
    #[error("control region too small for a single CCE")]
    ControlRegionTooSmall,
    #[error("{requested} CCEs requested, control region holds {available}")]
    CapacityExceeded { requested: usize, available: usize },

    #[error("unsupported DCI format {0} for this cell")]
    UnsupportedFormat(String),
    #[error("DCI size mismatch: expected {expected} bits, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("malformed resource allocation: {0}")]
    MalformedRaField(String),
    #[error("bitmap length {actual}, expected {expected}")]
    WrongBitmapLength { expected: usize, actual: usize },
    #[error("RIV {riv} invalid for {n_rb} resource blocks")]
    InvalidRiv { riv: u32, n_rb: u16 },

    #[error("empty PRB allocation")]
    EmptyAllocation,
    #[error("empty input")]
    EmptyInput,
    #[error("schedule does not fit: {0}")]
    ScheduleOverflow(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
