//! Command-line surface.

use std::path::PathBuf;

use anagram_core::mask::MaskSpec;
use clap::{Parser, Subcommand};

use crate::commands::{self, Context};
use crate::error::LabError;

#[derive(Debug, Parser)]
#[command(
    name = "anagram-lab",
    version,
    about = "Synthesize patch anagrams and probe classifiers for configural shape"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ANAGRAM_LAB_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for pair-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Attention mask as `mode:radius@blocks`, e.g. `inside:2@0-3`.
    #[arg(long, global = true)]
    pub mask: Option<MaskSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample anagram pairs with the template denoiser.
    Synthesize,
    /// Re-check a manifest's pairs for identical patch multisets.
    Verify,
    /// Configural Shape Score of a model on a manifest.
    Eval,
    /// Per-block masked-attention sweep.
    Ablate,
    /// Layer-wise similarity profile on a control set.
    Rsa,
    /// Williams's test, Pearson correlation and shape bias.
    Stats,
    /// Train the toy arrangement models.
    Train,
}

impl Cli {
    pub fn context(&self) -> Result<Context, LabError> {
        let config = self
            .config
            .clone()
            .ok_or_else(|| LabError::Config("--config <path> is required".into()))?;
        Ok(Context {
            config,
            out: self.out.clone(),
            seed: self.seed,
            mask: self.mask.clone(),
        })
    }
}

pub fn run(command: Command, ctx: &Context) -> Result<String, LabError> {
    match command {
        Command::Synthesize => commands::synthesize(ctx),
        Command::Verify => commands::verify(ctx),
        Command::Eval => commands::eval(ctx),
        Command::Ablate => commands::ablate(ctx),
        Command::Rsa => commands::rsa(ctx),
        Command::Stats => commands::stats(ctx),
        Command::Train => commands::train(ctx),
    }
}
