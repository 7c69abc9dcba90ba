use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at graph node {node}")]
    NonFinite { node: usize },

    #[error("tensor contains a non-finite value at offset {index}")]
    NonFiniteData { index: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("enumeration needs {needed} paths, budget is {budget}")]
    Budget { needed: u64, budget: u64 },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
