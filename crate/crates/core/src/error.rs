use thiserror::Error;

#[derive(Debug, Error)]
pub enum FgrError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("newton did not converge after {iterations} iterations (residual history {history:?})")]
    NoConvergence { iterations: usize, history: Vec<f64> },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("window violation: {0}")]
    Window(String),
    #[error("orbital stability violated: delta'(lambda) = {0:e}")]
    Stability(f64),
    #[error("spectral condition violated: {0}")]
    SpectralA(String),
    #[error("degenerate discrete mode pairing: {0}")]
    Degenerate(String),
    #[error("limiting absorption extrapolation failed: {reason} (trace {trace:?})")]
    Extrapolation { reason: String, trace: Vec<f64> },
    #[error("continuation failed at h = {h}: {reason}")]
    Continuation { h: f64, reason: String },
    #[error("frame lost: {0}")]
    FrameLoss(String),
    #[error("conservation drift {drift:e} exceeds {limit:e} at t = {t}")]
    Drift { drift: f64, limit: f64, t: f64 },
    #[error("formula transcription alarm: {0}")]
    Transcription(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<FgrError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FgrError {
    pub fn context(self, context: impl Into<String>) -> Self {
        FgrError::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, FgrError>;

pub trait ResultExt<T> {
    fn context(self, ctx: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, ctx: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(ctx))
    }
}
