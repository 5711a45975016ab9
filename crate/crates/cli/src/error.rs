use std::io;

/// Failures while reading or writing one of the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("tensor `{name}`: unsupported dtype {dtype}")]
    Dtype { name: String, dtype: u8 },
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("unexpected tensor `{0}` for this configuration")]
    Unexpected(String),
    #[error(transparent)]
    Model(#[from] pointode_core::Error),
}

pub type FormatResult<T> = Result<T, FormatError>;

/// Re-tags an unexpected EOF with what was being read.
pub(crate) fn eof_as(what: impl Into<String>) -> impl FnOnce(io::Error) -> FormatError {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated(what.into())
        } else {
            FormatError::Io(e)
        }
    }
}

/// Top-level outcome of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("{0} propert{s} failed", s = if *.0 == 1 { "y" } else { "ies" })]
    Property(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Property(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.into())
    }
}

impl From<pointode_core::Error> for CliError {
    fn from(e: pointode_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.into())
    }
}
