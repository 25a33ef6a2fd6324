use thiserror::Error;

/// Errors produced by the sampling and reconstruction routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("requested order {requested} exceeds reproduction order {available}")]
    OrderTooHigh { requested: usize, available: usize },

    #[error("kernel of order {0} has no pointwise derivative")]
    NoDerivative(usize),

    #[error("window centered at ({0}, {1}) does not fit inside the sample grid")]
    WindowOutOfRange(i64, i64),

    #[error("moment table is missing order ({0}, {1})")]
    MissingMoment(usize, usize),

    #[error("SNR is undefined for an all-zero sample grid")]
    ZeroSignal,

    #[error("constraint set is infeasible")]
    Infeasible,

    #[error("shape rejected: {0}")]
    ShapeRejected(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::OrderTooHigh { .. }
            | Error::NoDerivative(_)
            | Error::WindowOutOfRange(..)
            | Error::MissingMoment(..)
            | Error::ShapeRejected(_)
            | Error::ZeroSignal
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Image(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            Error::Infeasible | Error::Numerical(_) => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
