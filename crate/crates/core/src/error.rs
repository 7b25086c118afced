//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; [`Error::kind`] yields a stable
//! machine-parsable code that the CLI prints ahead of the human-readable text.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate is NaN or infinite")]
    NonFinite,
    #[error("rectangle sides must be positive and finite (w={w}, h={h})")]
    InvalidSize { w: f64, h: f64 },
    #[error("corner order violated: expected x1 < x2 and y1 < y2")]
    InvalidCorners,
    #[error("points do not form a rectangle: opposite edges {a:.6} and {b:.6} differ by more than 5%")]
    NotARectangle { a: f64, b: f64 },

    #[error("input size {0} is not divisible by 32")]
    BadInputSize(u32),
    #[error("tensor shape does not match grid specs: {0}")]
    ShapeMismatch(String),
    #[error("object {id}: box or grasp outside image bounds")]
    OutOfBounds { id: u32 },

    #[error("score vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("relation graph contains a cycle")]
    CyclicGraph,
    #[error("scene support relation is cyclic or inconsistent")]
    BadScene,

    #[error("{groups} groups cannot fill {k} folds")]
    TooFewGroups { groups: usize, k: usize },

    #[error("line {line}: token {token:?} is not a number")]
    MalformedLine { line: usize, token: String },
    #[error("{extra} trailing line(s) starting at line {line} do not form a rectangle")]
    TruncatedFile { line: usize, extra: usize },
    #[error("line {line}: {source}")]
    BadRectangleGroup {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("object {id} rests on missing object {missing}")]
    DanglingSupport { id: u32, missing: u32 },
    #[error("support relation contains a cycle through object {id}")]
    CyclicSupport { id: u32 },
    #[error("duplicate object id {id}")]
    DuplicateId { id: u32 },
    #[error("grasp {index} does not belong to any object")]
    OrphanGrasp { index: usize },
    #[error("malformed document: {0}")]
    BadDocument(String),

    #[error("bad magic bytes: expected MTGD1")]
    BadMagic,
    #[error("payload truncated: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },

    #[error("invalid parameters: {0}")]
    BadParams(String),
}

impl Error {
    /// Stable machine-parsable code for this error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite => "NonFinite",
            Error::InvalidSize { .. } => "InvalidSize",
            Error::InvalidCorners => "InvalidCorners",
            Error::NotARectangle { .. } => "NotARectangle",
            Error::BadInputSize(_) => "BadInputSize",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::CyclicGraph => "CyclicGraph",
            Error::BadScene => "BadScene",
            Error::TooFewGroups { .. } => "TooFewGroups",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::BadRectangleGroup { .. } => "BadRectangleGroup",
            Error::DanglingSupport { .. } => "DanglingSupport",
            Error::CyclicSupport { .. } => "CyclicSupport",
            Error::DuplicateId { .. } => "DuplicateId",
            Error::OrphanGrasp { .. } => "OrphanGrasp",
            Error::BadDocument(_) => "BadDocument",
            Error::BadMagic => "BadMagic",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::BadParams(_) => "BadParams",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
