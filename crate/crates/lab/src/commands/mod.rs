//! One function per subcommand. Each reads its config, writes reports under
//! the output directory and returns a one-line summary.

mod ablate;
mod eval;
mod rsa;
mod stats;
mod synthesize;
mod train;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use anagram_core::mask::MaskSpec;

use crate::error::LabError;

pub use ablate::ablate;
pub use eval::{eval, read_logits};
pub use rsa::rsa;
pub use stats::stats;
pub use synthesize::synthesize;
pub use train::train;
pub use verify::verify;

/// Settings shared by every command, mostly from global flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides the config's seed when set.
    pub seed: Option<u64>,
    /// Overrides the config's mask when set.
    pub mask: Option<MaskSpec>,
}

impl Context {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            out: out.into(),
            seed: None,
            mask: None,
        }
    }

    /// Directory against which the config's relative paths resolve.
    pub fn base(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn out_dir(&self, sub: &str) -> Result<PathBuf, LabError> {
        let dir = if sub.is_empty() {
            self.out.clone()
        } else {
            self.out.join(sub)
        };
        fs::create_dir_all(&dir).map_err(LabError::io(&dir))?;
        Ok(dir)
    }

    fn seed_or(&self, config_seed: Option<u64>, command: &str) -> Result<u64, LabError> {
        self.seed.or(config_seed).ok_or_else(|| {
            LabError::Config(format!(
                "{command} needs a seed: set \"seed\" in the config or pass --seed"
            ))
        })
    }
}
