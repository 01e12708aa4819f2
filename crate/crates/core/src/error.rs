use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variant names double as the stable machine-readable codes printed by the
/// command-line front end (see [`Error::code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("multiple roots: `{0}` and `{1}`")]
    MultipleRoots(String, String),
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("node `{node}` references undefined parent `{parent}`")]
    OrphanNode { node: String, parent: String },
    #[error("hierarchy has no nodes")]
    EmptyHierarchy,
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("value {value} outside of {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("vector is not unit-norm (norm {norm}) in {what}")]
    NotNormalized { what: &'static str, norm: f64 },
    #[error("embedding coincides with proxies {0} and {1}")]
    AmbiguousLimit(usize, usize),
    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("degenerate zero vector in {0}")]
    ZeroVector(String),
    #[error("distance matrix is all zeros")]
    DegenerateMatrix,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("class {0} samples cancel to a zero mean")]
    ZeroMean(usize),
    #[error("class {0} is absent from the representatives")]
    AbsentClass(usize),
    #[error("proxy policy `{0}` does not allow this update")]
    WrongPolicy(&'static str),

    #[error("domain error: {0}")]
    DomainError(String),
    #[error("scale solver did not converge: s={s}, psi={psi}")]
    NoConvergence { s: f64, psi: f64 },
    #[error("empty batch")]
    EmptyBatch,

    #[error("zero embedding for input row {0}")]
    ZeroEmbedding(usize),
    #[error("forward cache is stale (model changed since forward pass)")]
    StaleCache,

    #[error("configuration conflict: {0}")]
    ConfigConflict(String),
    #[error("data schema error: {0}")]
    DataSchemaError(String),

    #[error("k={k} exceeds available {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("row {0} has constant ranks; correlation undefined")]
    ConstantRow(usize),
    #[error("missing HS@k for k={0}")]
    MissingK(usize),
    #[error("at least {needed} classes required, got {got}")]
    TooFewClasses { needed: usize, got: usize },

    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("non-finite feature in row {0}")]
    NonFiniteFeature(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("too many classes: {0} (cap 4096)")]
    TooManyClasses(usize),
    #[error("class set mismatch: {0}")]
    ClassSetMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Stable identifier used as the error prefix on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateId(_) => "DuplicateId",
            Error::MultipleRoots(..) => "MultipleRoots",
            Error::CycleDetected(_) => "CycleDetected",
            Error::OrphanNode { .. } => "OrphanNode",
            Error::EmptyHierarchy => "EmptyHierarchy",
            Error::UnknownClass(_) => "UnknownClass",
            Error::NegativeDistance(_) => "NegativeDistance",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::AmbiguousLimit(..) => "AmbiguousLimit",
            Error::InvalidLabel { .. } => "InvalidLabel",
            Error::ZeroVector(_) => "ZeroVector",
            Error::DegenerateMatrix => "DegenerateMatrix",
            Error::EmptyClass(_) => "EmptyClass",
            Error::ZeroMean(_) => "ZeroMean",
            Error::AbsentClass(_) => "AbsentClass",
            Error::WrongPolicy(_) => "WrongPolicy",
            Error::DomainError(_) => "DomainError",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::EmptyBatch => "EmptyBatch",
            Error::ZeroEmbedding(_) => "ZeroEmbedding",
            Error::StaleCache => "StaleCache",
            Error::ConfigConflict(_) => "ConfigConflict",
            Error::DataSchemaError(_) => "DataSchemaError",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::ConstantRow(_) => "ConstantRow",
            Error::MissingK(_) => "MissingK",
            Error::TooFewClasses { .. } => "TooFewClasses",
            Error::SchemaError(_) => "SchemaError",
            Error::NonFiniteFeature(_) => "NonFiniteFeature",
            Error::EmptyDataset => "EmptyDataset",
            Error::TooManyClasses(_) => "TooManyClasses",
            Error::ClassSetMismatch(_) => "ClassSetMismatch",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
            Error::Serialization(_) => "SerializationError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
