//! Image buffers, quality metrics and the synthetic rain corpus.

mod buffer;
pub mod corpus;
mod metrics;
mod synth;

use std::path::PathBuf;

pub use buffer::ImageBuffer;
pub use corpus::{
    gen_corpus, generate_corpus, generate_pair, load_corpus, read_corpus_manifest, CorpusConfig,
    CorpusEntry, CorpusPair, MANIFEST_FILE,
};
pub use metrics::{mse, psnr, psnr_from_mse, ssim, SsimParams};
pub use synth::{degrade, synth_clean, DegradationKind, DegradationSpec, NIGHT_BRIGHTNESS};

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("invalid image dimensions {height}x{width}x{channels}")]
    InvalidDimensions {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("expected {expected} samples, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error("invalid SSIM parameters {0:?}")]
    InvalidSsimParams(SsimParams),
    #[error("cannot encode {0}-channel images")]
    UnsupportedChannels(usize),
    #[error("image codec: {0}")]
    Codec(String),
    #[error("unknown degradation type {0:?}")]
    UnknownKind(String),
    #[error("invalid corpus config: {0}")]
    InvalidCorpusConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}
