//! Backchannel prediction from acoustic context and interlocutor behavior.
//!
//! The crate covers feature extraction, corpus construction, the
//! classifier and its training loop, and the analyses run on trained
//! models.

pub mod analysis;
pub mod corpus;
pub mod dataset;
pub mod features;
pub mod model;
pub mod numerics;
pub mod provenance;
pub mod training;

use thiserror::Error;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable name of the failure kind.
    pub fn kind(&self) -> &'static str {
        use corpus::CorpusError as C;
        use features::FeatureError as F;
        use model::ModelError as M;
        match self {
            Error::Io(_) | Error::Feature(F::Io(_)) | Error::Corpus(C::Io(_)) | Error::Model(M::Io(_)) => "io",
            Error::Numerics(_) => "numerics",
            Error::Feature(F::UnsupportedSampleRate(_)) => "unsupported_sample_rate",
            Error::Feature(F::InsufficientContext { .. }) => "insufficient_context",
            Error::Feature(F::BadMagic | F::VersionMismatch { .. } | F::TruncatedFile) => "bad_feature_cache",
            Error::Feature(_) => "feature",
            Error::Corpus(_) => "corpus",
            Error::Model(M::UnknownInterlocutor(_)) => "unknown_interlocutor",
            Error::Model(M::MissingInput { .. }) => "missing_input",
            Error::Model(_) => "model",
            Error::Train(e) => e.kind(),
            Error::Analysis(e) => e.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
