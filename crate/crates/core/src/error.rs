use ampforge_numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid residue '{residue}' at position {position}")]
    InvalidResidue { residue: char, position: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("no external embedding for sequence {0}")]
    MissingEmbedding(String),
    #[error("training set contains a single class")]
    SingleClass,
    #[error("record {id} is missing {field}")]
    MissingField { id: String, field: &'static str },
    #[error("cannot encode field: {0}")]
    Encoding(String),
    #[error("reward failed for {sequence}: {message}")]
    Reward { sequence: String, message: String },
    #[error("log-probability gap {gap:.3} exceeds {limit} at token {index}")]
    RatioOverflow { gap: f64, limit: f64, index: usize },
    #[error("sampling stagnated: {0}")]
    Stagnation(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
