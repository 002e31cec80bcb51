//! Manhattan-radius attention masks over a class token plus a patch grid.
//!
//! Token 0 is the class token, token `1 + k` is grid cell `k` (row-major).
//! The class-token query row is never restricted.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum MaskMode {
    #[default]
    None,
    /// Patch queries see only patch keys within the radius.
    Inside,
    /// Patch queries see only patch keys beyond the radius.
    Outside,
}

/// Whether patch queries may read the class token under a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum ClassKeyPolicy {
    /// The class token sits at distance 0 from every patch: visible under
    /// `inside`, hidden under `outside`. A saturating inside mask is then
    /// exactly the unmasked model.
    #[default]
    Local,
    /// The class token is hidden from patch queries under any mask.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskSpec {
    pub mode: MaskMode,
    pub radius: usize,
    pub target_blocks: BTreeSet<usize>,
    pub class_key: ClassKeyPolicy,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn at_block(mode: MaskMode, radius: usize, block: usize) -> Self {
        Self {
            mode,
            radius,
            target_blocks: BTreeSet::from([block]),
            class_key: ClassKeyPolicy::default(),
        }
    }

    pub fn applies_to(&self, block: usize) -> bool {
        self.mode != MaskMode::None && self.target_blocks.contains(&block)
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::None => "none",
            MaskMode::Inside => "inside",
            MaskMode::Outside => "outside",
        })
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mode == MaskMode::None {
            return f.write_str("none");
        }
        write!(f, "{}:{}@", self.mode, self.radius)?;
        let blocks: Vec<String> = self.target_blocks.iter().map(ToString::to_string).collect();
        f.write_str(&blocks.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad mask {input:?}: {reason} (expected <mode>:<radius>@<blocks>, e.g. inside:1@0,2-4)")]
pub struct MaskParseError {
    pub input: String,
    pub reason: &'static str,
}

impl FromStr for MaskMode {
    type Err = MaskParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(MaskMode::None),
            "inside" => Ok(MaskMode::Inside),
            "outside" => Ok(MaskMode::Outside),
            _ => Err(MaskParseError {
                input: s.to_string(),
                reason: "unknown mode",
            }),
        }
    }
}

impl FromStr for MaskSpec {
    type Err = MaskParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| MaskParseError {
            input: s.to_string(),
            reason,
        };
        if s == "none" {
            return Ok(MaskSpec::none());
        }
        let (mode, rest) = s.split_once(':').ok_or_else(|| err("missing ':'"))?;
        let mode: MaskMode = mode.parse().map_err(|_| err("unknown mode"))?;
        let (radius, blocks) = rest.split_once('@').ok_or_else(|| err("missing '@'"))?;
        let radius = radius
            .parse()
            .map_err(|_| err("radius is not a non-negative integer"))?;
        let mut target_blocks = BTreeSet::new();
        for part in blocks.split(',') {
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| err("bad block index"));
            match part.split_once('-') {
                Some((lo, hi)) => {
                    let (lo, hi) = (parse(lo)?, parse(hi)?);
                    if lo > hi {
                        return Err(err("empty block range"));
                    }
                    target_blocks.extend(lo..=hi);
                }
                None => {
                    target_blocks.insert(parse(part)?);
                }
            }
        }
        Ok(MaskSpec {
            mode,
            radius,
            target_blocks,
            class_key: ClassKeyPolicy::default(),
        })
    }
}

/// Square boolean allow-matrix over `tokens` tokens; `allowed(q, k)` means
/// query `q` may attend to key `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    tokens: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn all(tokens: usize) -> Self {
        Self {
            tokens,
            allow: vec![true; tokens * tokens],
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    #[inline]
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allow[query * self.tokens + key]
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allow[query * self.tokens..(query + 1) * self.tokens]
    }

    /// Copy in which every query with no visible key attends to itself only.
    pub fn with_self_fallback(&self) -> Self {
        let mut out = self.clone();
        for q in 0..self.tokens {
            if !self.row(q).iter().any(|&a| a) {
                out.allow[q * self.tokens + q] = true;
            }
        }
        out
    }
}

pub fn manhattan_distance(grid_side: usize, a: usize, b: usize) -> usize {
    let (ra, ca) = (a / grid_side, a % grid_side);
    let (rb, cb) = (b / grid_side, b % grid_side);
    ra.abs_diff(rb) + ca.abs_diff(cb)
}

/// Raw radius mask over `grid_side² + 1` tokens. Rows left empty (outside mode
/// at a saturating radius) are returned as is; attention resolves them with
/// [`AttentionMask::with_self_fallback`].
pub fn manhattan_mask(grid_side: usize, radius: usize, mode: MaskMode, class_key: ClassKeyPolicy) -> AttentionMask {
    let cells = grid_side * grid_side;
    let tokens = cells + 1;
    if mode == MaskMode::None {
        return AttentionMask::all(tokens);
    }
    let mut allow = vec![false; tokens * tokens];
    allow[..tokens].fill(true);
    let class_visible = match (class_key, mode) {
        (ClassKeyPolicy::Local, MaskMode::Inside) => true,
        (ClassKeyPolicy::Local, _) | (ClassKeyPolicy::Excluded, _) => false,
    };
    for q in 0..cells {
        let row = &mut allow[(q + 1) * tokens..(q + 2) * tokens];
        row[0] = class_visible;
        for k in 0..cells {
            let near = manhattan_distance(grid_side, q, k) <= radius;
            row[k + 1] = match mode {
                MaskMode::Inside => near,
                MaskMode::Outside => !near,
                MaskMode::None => true,
            };
        }
    }
    AttentionMask { tokens, allow }
}
