use std::path::PathBuf;

/// Errors produced by the simulator, dataset tooling, trainers and evaluators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("peg does not fit in the hole even when centered (rz = {rz_deg} deg)")]
    DoesNotFit { rz_deg: f64 },
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("tactile rendering requested for a pose without contact")]
    NoContact,
    #[error("montage needs 4 frames of equal size: {0}")]
    Montage(String),
    #[error("token index {index} out of range for {axis} vocabulary of {size}")]
    TokenOutOfRange { axis: &'static str, index: usize, size: usize },
    #[error("missing modality: {0}")]
    MissingModality(&'static str),
    #[error("feature length {got} does not match architecture input {expected}")]
    FeatureShape { expected: usize, got: usize },
    #[error("non-finite {what} at {at}")]
    NonFinite { what: &'static str, at: String },
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("oracle policy needs simulator ground truth")]
    OracleRefused,
    #[error("policy transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("preference data: {0}")]
    Preference(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
