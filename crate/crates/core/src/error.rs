use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("duplicate document id {0}")]
    DuplicateDocument(u32),

    #[error("line {line}: document {id} has no tokens after tokenization")]
    EmptyDocument { line: usize, id: u32 },

    #[error("duplicate query id {0}")]
    DuplicateQuery(u32),

    #[error("query {qid}: {msg}")]
    InvalidQuery { qid: u32, msg: String },

    #[error("query {qid} references unknown document {doc}")]
    UnknownRelevant { qid: u32, doc: u32 },

    #[error("unknown document id {0}")]
    UnknownDocument(u32),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("line {line}: {msg}")]
    Embedding { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
