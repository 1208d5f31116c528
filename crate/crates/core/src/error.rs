use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("analysis operator must be redundant (N > n), got {rows}x{cols}")]
    NotRedundant { rows: usize, cols: usize },
    #[error("S = Phi^T Phi is numerically singular (alpha = {alpha:e}); rows do not form a frame")]
    NotAFrame { alpha: f64 },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("R = A^T A + rho S could not be inverted: {0}")]
    SingularR(LinalgError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("q is undefined: alpha = {alpha:e} <= rho ||A^T A|| = {rho_ata:e}")]
    QUndefined { alpha: f64, rho_ata: f64 },
    #[error("B_in ({b_in}) must equal B_out ({b_out}) for this bound")]
    BInBOutMismatch { b_in: f64, b_out: f64 },
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("record schema version {found} does not match supported version {expected}")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
