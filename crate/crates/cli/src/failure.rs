use std::fmt;
use std::io;
use std::path::PathBuf;

use qreform::Error;

pub type Outcome<T> = Result<T, Failure>;

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable input: exit 2.
    Usage(String),
    /// The command ran but could not finish: exit 1.
    Runtime(String),
    /// An output exists and `--force` was not given: exit 3.
    Overwrite(PathBuf),
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(msg.to_string())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Overwrite(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
            Failure::Overwrite(p) => write!(f, "{} already exists; pass --force to overwrite", p.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io(io) if io.kind() == io::ErrorKind::NotFound => Failure::Usage(format!("no such file: {e}")),
            Error::Malformed { .. }
            | Error::DuplicateDocument(_)
            | Error::EmptyDocument { .. }
            | Error::DuplicateQuery(_)
            | Error::InvalidQuery { .. }
            | Error::UnknownRelevant { .. }
            | Error::EmptyCorpus
            | Error::Embedding { .. }
            | Error::Format(_)
            | Error::Config(_)
            | Error::Json(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}
