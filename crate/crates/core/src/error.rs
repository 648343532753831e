use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A value that must be finite was NaN or infinite.
    #[error("numeric domain error: non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {name}: expected {expected}, found {found}")]
    Shape {
        name: String,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// A data-contract violation, e.g. a candidate group without exactly one positive.
    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: non-finite loss at batch {batch} of epoch {epoch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    pub fn shape(name: impl Into<String>, expected: impl core::fmt::Display, found: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            name: name.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
