use thiserror::Error;

pub type Result<T> = std::result::Result<T, PteError>;

#[derive(Debug, Error)]
pub enum PteError {
    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("learner failure: {0}")]
    Learner(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<PteError>,
    },

    /// `R_S` has a singularity at `Δ = 0`; the caller gets `Δ̂` and its
    /// interval so the treatment-effect test can still be reported.
    #[error(
        "treatment effect too small; PTE ill-defined (delta = {delta:.6e}, \
         {level:.0}% CI [{ci_lower:.6e}, {ci_upper:.6e}])"
    )]
    PteIllDefined { delta: f64, ci_lower: f64, ci_upper: f64, level: f64 },

    #[error("null MSE degenerate (M_0 = {m_0:.3e})")]
    NullMseDegenerate { m_0: f64 },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: u64, column: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PteError {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        PteError::Fold { fold, source: Box::new(self) }
    }

    /// Strips fold context.
    pub fn root(&self) -> &PteError {
        match self {
            PteError::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}
