use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("label {label} at (row {row}, col {col}) is out of range for {classes} classes")]
    Label {
        row: usize,
        col: usize,
        label: u32,
        classes: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("caption client failed: {0}")]
    Client(String),
    #[error("similarity provider failed: {0}")]
    Provider(String),
    #[error("non-finite loss at training step {step}")]
    Training { step: u64 },
    #[error("evaluation saw no labelled pixels")]
    EmptyEvaluation,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
