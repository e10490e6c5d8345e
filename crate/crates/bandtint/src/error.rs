use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image file {path}: {msg}")]
    ImageFile { path: String, msg: String },
    #[error("imaging: {0}")]
    Imaging(String),
    #[error("spectral: {0}")]
    Spectral(String),
    #[error("regions: {0}")]
    Regions(String),
    #[error("model: {0}")]
    Model(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error("training diverged at step {step}: loss is non-finite; parameter norms: {norms}")]
    Diverged { step: usize, norms: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
