//! Permutations over grid cells and the patch compose/decompose operators.
//!
//! Cells are numbered row-major from zero. A [`Permutation`] `π` acts on a
//! patch sequence by placing patch `π(k)` in output cell `k`; this single
//! convention is shared by [`compose`] and [`permute_latent`], so
//! `permute_latent(z, π) == compose(&decompose(z, g)?, π)` for every `z`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::rng::{keyed, streams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatchError {
    #[error("map is not a bijection on 0..{size}: {reason}")]
    NotBijective { size: usize, reason: String },
    #[error("permutation sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("{height}x{width} canvas is not divisible into a {grid_side}x{grid_side} grid")]
    NotDivisible {
        height: usize,
        width: usize,
        grid_side: usize,
    },
    #[error("grid side must be positive")]
    ZeroGrid,
    #[error("{0} cells do not form a square grid")]
    NotSquare(usize),
    #[error("patches do not share one shape")]
    RaggedPatches,
    #[error("cannot exclude the identity from permutations of {0} cells")]
    TooFewCells(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// A bijection on `0..K`; `map[k]` is the image of `k`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "Vec<usize>", into = "Vec<usize>")
)]
pub struct Permutation {
    map: Vec<usize>,
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{:?}", self.map)
    }
}

impl Permutation {
    pub fn identity(size: usize) -> Self {
        Self {
            map: (0..size).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self, PatchError> {
        let size = map.len();
        let mut seen = vec![false; size];
        for &m in &map {
            if m >= size {
                return Err(PatchError::NotBijective {
                    size,
                    reason: alloc::format!("index {m} out of range"),
                });
            }
            if core::mem::replace(&mut seen[m], true) {
                return Err(PatchError::NotBijective {
                    size,
                    reason: alloc::format!("index {m} repeated"),
                });
            }
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn apply(&self, k: usize) -> usize {
        self.map[k]
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `self ∘ other`, i.e. `k ↦ self(other(k))`.
    pub fn compose(&self, other: &Permutation) -> Result<Self, PatchError> {
        if self.len() != other.len() {
            return Err(PatchError::SizeMismatch(self.len(), other.len()));
        }
        Ok(Self {
            map: other.map.iter().map(|&k| self.map[k]).collect(),
        })
    }

    /// Side of the square grid this permutation acts on.
    pub fn grid_side(&self) -> Result<usize, PatchError> {
        let k = self.len();
        let g = libm::sqrt(k as f64) as usize;
        [g.saturating_sub(1), g, g + 1]
            .into_iter()
            .find(|&s| s > 0 && s * s == k)
            .ok_or(PatchError::NotSquare(k))
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = PatchError;

    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        Self::from_map(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

/// Uniform draw from the symmetric group on `size` cells, deterministic per seed.
///
/// With `exclude_identity` the draw is uniform over the group minus the
/// identity (rejection sampling).
pub fn random_permutation(seed: u64, size: usize, exclude_identity: bool) -> Result<Permutation, PatchError> {
    if exclude_identity && size < 2 {
        return Err(PatchError::TooFewCells(size));
    }
    let mut rng = keyed(seed, streams::PERMUTATION);
    loop {
        let mut map: Vec<usize> = (0..size).collect();
        map.shuffle(&mut rng);
        let p = Permutation { map };
        if !(exclude_identity && p.is_identity()) {
            return Ok(p);
        }
    }
}

/// The ordered patches of a canvas, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMultiset {
    grid_side: usize,
    patches: Vec<Image>,
}

impl PatchMultiset {
    pub fn new(grid_side: usize, patches: Vec<Image>) -> Result<Self, PatchError> {
        if grid_side == 0 {
            return Err(PatchError::ZeroGrid);
        }
        if patches.len() != grid_side * grid_side {
            return Err(PatchError::NotSquare(patches.len()));
        }
        let shape = patches[0].shape();
        if patches.iter().any(|p| p.shape() != shape) {
            return Err(PatchError::RaggedPatches);
        }
        Ok(Self { grid_side, patches })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Image] {
        &self.patches
    }

    pub fn patch_shape(&self) -> (usize, usize, usize) {
        self.patches[0].shape()
    }

    /// 8-bit quantized bytes of every patch, sorted: the canonical form of the
    /// unordered multiset.
    pub fn canonical_bytes(&self) -> Vec<Vec<u8>> {
        let mut bytes: Vec<Vec<u8>> = self.patches.iter().map(Image::quantize).collect();
        bytes.sort_unstable();
        bytes
    }
}

fn check_grid(image: &Image, grid_side: usize) -> Result<(usize, usize), PatchError> {
    if grid_side == 0 {
        return Err(PatchError::ZeroGrid);
    }
    let (h, w, _) = image.shape();
    if h % grid_side != 0 || w % grid_side != 0 {
        return Err(PatchError::NotDivisible {
            height: h,
            width: w,
            grid_side,
        });
    }
    Ok((h / grid_side, w / grid_side))
}

/// Splits a canvas into `grid_side²` patches in row-major cell order.
pub fn decompose(image: &Image, grid_side: usize) -> Result<PatchMultiset, PatchError> {
    let (ph, pw) = check_grid(image, grid_side)?;
    let patches = (0..grid_side * grid_side)
        .map(|k| image.crop((k / grid_side) * ph, (k % grid_side) * pw, ph, pw))
        .collect();
    Ok(PatchMultiset { grid_side, patches })
}

/// Re-assembles patches so that output cell `k` holds patch `perm(k)`.
pub fn compose(patches: &PatchMultiset, perm: &Permutation) -> Result<Image, PatchError> {
    if perm.len() != patches.len() {
        return Err(PatchError::SizeMismatch(perm.len(), patches.len()));
    }
    let g = patches.grid_side;
    let (ph, pw, c) = patches.patch_shape();
    let mut out = Image::zeros(ph * g, pw * g, c);
    for (k, &src) in perm.as_slice().iter().enumerate() {
        out.paste(&patches.patches[src], (k / g) * ph, (k % g) * pw);
    }
    Ok(out)
}

fn move_cells(z: &Image, perm: &Permutation, inverse: bool) -> Result<Image, PatchError> {
    let g = perm.grid_side()?;
    let (ph, pw) = check_grid(z, g)?;
    let c = z.channels();
    let mut out = Image::zeros(z.height(), z.width(), c);
    for (k, &src) in perm.as_slice().iter().enumerate() {
        let (from, to) = if inverse { (k, src) } else { (src, k) };
        let (fy, fx) = ((from / g) * ph, (from % g) * pw);
        let (ty, tx) = ((to / g) * ph, (to % g) * pw);
        for y in 0..ph {
            for x in 0..pw {
                for ch in 0..c {
                    out.set(ty + y, tx + x, ch, z.get(fy + y, fx + x, ch));
                }
            }
        }
    }
    Ok(out)
}

/// The latent permutation operator: output cell `k` takes input cell `perm(k)`.
pub fn permute_latent(z: &Image, perm: &Permutation) -> Result<Image, PatchError> {
    move_cells(z, perm, false)
}

/// Undoes [`permute_latent`]: output cell `perm(k)` takes input cell `k`.
pub fn inverse_permute(z: &Image, perm: &Permutation) -> Result<Image, PatchError> {
    move_cells(z, perm, true)
}

/// Two views built from one patch multiset under different arrangements.
#[derive(Debug, Clone, PartialEq)]
pub struct AnagramPair {
    pub pair_id: String,
    pub canvas1: Image,
    pub canvas2: Image,
    pub label1: String,
    pub label2: String,
    /// Arrangement of view 2 relative to view 1: cell `k` of view 2 shows
    /// cell `permutation2(k)` of view 1.
    pub permutation2: Permutation,
}

/// Outcome of [`verify_anagram`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub multiset_equal: bool,
    pub histograms_equal: bool,
    /// Cells of view 1 whose quantized patch has no partner left in view 2.
    pub unmatched_cells1: Vec<usize>,
    /// Cells of view 2 whose quantized patch has no partner left in view 1.
    pub unmatched_cells2: Vec<usize>,
    /// Channels whose 256-bin histograms differ.
    pub histogram_channels: Vec<usize>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.multiset_equal && self.histograms_equal
    }
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "patch multisets and histograms identical");
        }
        if !self.multiset_equal {
            write!(
                f,
                "patch multisets differ (view1 cells {:?}, view2 cells {:?} unmatched)",
                self.unmatched_cells1, self.unmatched_cells2
            )?;
        }
        if !self.histograms_equal {
            if !self.multiset_equal {
                write!(f, "; ")?;
            }
            write!(f, "histograms differ in channels {:?}", self.histogram_channels)?;
        }
        Ok(())
    }
}

fn histograms(bytes: &[u8], channels: usize) -> Vec<[u32; 256]> {
    let mut hist = vec![[0u32; 256]; channels];
    for (i, &b) in bytes.iter().enumerate() {
        hist[i % channels][b as usize] += 1;
    }
    hist
}

/// Counts of each quantized patch; cells listed in order of appearance.
fn patch_index(patches: &PatchMultiset) -> BTreeMap<Vec<u8>, Vec<usize>> {
    let mut index: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for (k, p) in patches.patches().iter().enumerate() {
        index.entry(p.quantize()).or_default().push(k);
    }
    index
}

fn unmatched(mine: &BTreeMap<Vec<u8>, Vec<usize>>, theirs: &BTreeMap<Vec<u8>, Vec<usize>>) -> Vec<usize> {
    let mut cells: Vec<usize> = mine
        .iter()
        .flat_map(|(bytes, ks)| {
            let available = theirs.get(bytes).map_or(0, Vec::len);
            ks.iter().skip(available).copied()
        })
        .collect();
    cells.sort_unstable();
    cells
}

/// Checks that both views share one patch multiset and identical per-channel
/// histograms, all in 8-bit quantized space.
pub fn verify_anagram(pair: &AnagramPair) -> Result<Verification, PatchError> {
    pair.canvas1.same_shape(&pair.canvas2)?;
    let g = pair.permutation2.grid_side()?;
    let p1 = decompose(&pair.canvas1, g)?;
    let p2 = decompose(&pair.canvas2, g)?;
    let multiset_equal = p1.canonical_bytes() == p2.canonical_bytes();
    let (unmatched_cells1, unmatched_cells2) = if multiset_equal {
        (Vec::new(), Vec::new())
    } else {
        let (i1, i2) = (patch_index(&p1), patch_index(&p2));
        (unmatched(&i1, &i2), unmatched(&i2, &i1))
    };
    let c = pair.canvas1.channels();
    let h1 = histograms(&pair.canvas1.quantize(), c);
    let h2 = histograms(&pair.canvas2.quantize(), c);
    let histogram_channels: Vec<usize> = (0..c).filter(|&ch| h1[ch] != h2[ch]).collect();
    Ok(Verification {
        multiset_equal,
        histograms_equal: histogram_channels.is_empty(),
        unmatched_cells1,
        unmatched_cells2,
        histogram_channels,
    })
}
