use std::path::{Path, PathBuf};

use anagram_core::css::CssError;
use anagram_core::model::ModelError;
use anagram_core::patch::PatchError;
use anagram_core::rsa::RsaError;
use anagram_core::sampler::SampleError;
use anagram_core::schedule::ScheduleError;
use anagram_core::stats::StatsError;
use anagram_core::toy::ToyError;
use thiserror::Error;

use crate::archive::ArchiveError;

/// Every failure the harness reports, grouped by exit code.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::ConfigFile { .. } => 2,
            LabError::Io { .. } | LabError::Data(_) | LabError::Archive(_) => 3,
            LabError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
        move |source| LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<SampleError> for LabError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::NonFinite { .. } | SampleError::NonFiniteInput { .. } | SampleError::Denoiser { .. } => {
                LabError::Numeric(e.to_string())
            }
            SampleError::Config(_) | SampleError::UnknownCategory(_) | SampleError::Schedule(_) => {
                LabError::Config(e.to_string())
            }
            _ => LabError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for LabError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } | ModelError::Diverged { .. } => LabError::Numeric(e.to_string()),
            ModelError::Config(_) | ModelError::MaskBlock { .. } => LabError::Config(e.to_string()),
            _ => LabError::Data(e.to_string()),
        }
    }
}

impl From<CssError> for LabError {
    fn from(e: CssError) -> Self {
        match e {
            CssError::Model(m) => m.into(),
            CssError::NonFiniteLogits => LabError::Numeric(e.to_string()),
            CssError::CategoryMap(_) => LabError::Config(e.to_string()),
            _ => LabError::Data(e.to_string()),
        }
    }
}

impl From<RsaError> for LabError {
    fn from(e: RsaError) -> Self {
        match e {
            RsaError::Sample(s) => s.into(),
            RsaError::Model(m) => m.into(),
            RsaError::Css(c) => c.into(),
            RsaError::Stats(s) => s.into(),
            RsaError::TooFewCategories => LabError::Config(e.to_string()),
            _ => LabError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for LabError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::NonFinite | StatsError::ZeroVariance | StatsError::NotPositiveDefinite(_) => {
                LabError::Numeric(e.to_string())
            }
            _ => LabError::Data(e.to_string()),
        }
    }
}

impl From<PatchError> for LabError {
    fn from(e: PatchError) -> Self {
        LabError::Data(e.to_string())
    }
}

impl From<ScheduleError> for LabError {
    fn from(e: ScheduleError) -> Self {
        LabError::Config(e.to_string())
    }
}

impl From<ToyError> for LabError {
    fn from(e: ToyError) -> Self {
        LabError::Config(e.to_string())
    }
}
