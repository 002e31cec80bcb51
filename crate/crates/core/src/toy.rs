//! A toy task whose label lives only in the arrangement of patches, and
//! smooth per-category templates for the template denoiser.
//!
//! Every canvas holds a target glyph, an anchor glyph in one of the four
//! cells adjacent to it, four glyphs from each of two texture families and
//! blank cells. The label is the side of the target on which the anchor sits.
//! Both views of a pair contain exactly the same glyph instances, so the
//! unordered patch multiset can narrow the label to the pair's two
//! candidates but can never tell the two views apart.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::image::Image;
use crate::patch::{compose, decompose, AnagramPair, PatchError, Permutation};
use crate::rng::{child_seed, keyed, streams};

pub const DIRECTIONS: [&str; 4] = ["above", "below", "left", "right"];

const FAMILY_COLORS: [[f64; 3]; 4] = [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.2, 0.3, 0.9], [0.9, 0.8, 0.1]];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("the arrangement task needs a grid side of at least 4, got {0}")]
    GridTooSmall(usize),
    #[error("patch size must be at least 3 pixels, got {0}")]
    PatchTooSmall(usize),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Blank,
    Target,
    Anchor,
    Family(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrangementTask {
    pub grid_side: usize,
    pub patch_size: usize,
}

impl ArrangementTask {
    pub fn new(grid_side: usize, patch_size: usize) -> Result<Self, ToyError> {
        if grid_side < 4 {
            return Err(ToyError::GridTooSmall(grid_side));
        }
        if patch_size < 3 {
            return Err(ToyError::PatchTooSmall(patch_size));
        }
        Ok(Self { grid_side, patch_size })
    }

    pub fn categories(&self) -> Vec<String> {
        DIRECTIONS.iter().map(|s| s.to_string()).collect()
    }

    pub fn resolution(&self) -> usize {
        self.grid_side * self.patch_size
    }

    pub fn glyph(&self, glyph: Glyph) -> Image {
        let p = self.patch_size;
        let mid = p / 2;
        Image::from_fn(p, p, 3, |y, x, c| match glyph {
            Glyph::Blank => 0.5,
            Glyph::Target => f64::from(u8::from(y != mid && x != mid)),
            Glyph::Anchor => f64::from(u8::from(y != 0 && x != 0 && y != p - 1 && x != p - 1)),
            Glyph::Family(f) => {
                let on = match f % 4 {
                    0 => (y + x) % 2 == 0,
                    1 => y % 2 == 0,
                    2 => x % 2 == 0,
                    _ => y % 2 == 1 && x % 2 == 1,
                };
                FAMILY_COLORS[f % 4][c] * if on { 1.0 } else { 0.45 }
            }
        })
    }

    /// Cell of the anchor for a target at `cell`, if it lies on the grid.
    fn anchor_cell(&self, cell: usize, direction: usize) -> Option<usize> {
        let g = self.grid_side;
        let (r, c) = (cell / g, cell % g);
        match direction {
            0 if r > 0 => Some(cell - g),
            1 if r + 1 < g => Some(cell + g),
            2 if c > 0 => Some(cell - 1),
            3 if c + 1 < g => Some(cell + 1),
            _ => None,
        }
    }

    /// Random placement of item ids (0 target, 1 anchor, the rest in order)
    /// with the anchor on the `direction` side of the target. Returns the
    /// item shown in each cell.
    fn layout(&self, direction: usize, rng: &mut impl Rng) -> Vec<usize> {
        let k = self.grid_side * self.grid_side;
        let starts: Vec<usize> = (0..k).filter(|&c| self.anchor_cell(c, direction).is_some()).collect();
        let target = starts[rng.random_range(0..starts.len())];
        let anchor = self.anchor_cell(target, direction).expect("filtered above");
        let mut rest: Vec<usize> = (0..k).filter(|&c| c != target && c != anchor).collect();
        rest.shuffle(rng);
        let mut items = vec![0; k];
        items[anchor] = 1;
        for (item, cell) in rest.into_iter().enumerate() {
            items[cell] = item + 2;
        }
        items
    }

    fn item_glyph(item: usize, family1: usize, family2: usize) -> Glyph {
        match item {
            0 => Glyph::Target,
            1 => Glyph::Anchor,
            2..=5 => Glyph::Family(family1),
            6..=9 => Glyph::Family(family2),
            _ => Glyph::Blank,
        }
    }

    fn render(&self, items: &[usize], family1: usize, family2: usize) -> Result<Image, ToyError> {
        let res = self.resolution();
        let mut canvas = Image::zeros(res, res, 3);
        let g = self.grid_side;
        for (cell, &item) in items.iter().enumerate() {
            let glyph = self.glyph(Self::item_glyph(item, family1, family2));
            canvas.paste(&glyph, (cell / g) * self.patch_size, (cell % g) * self.patch_size);
        }
        Ok(canvas)
    }

    /// A single labelled canvas.
    pub fn image(&self, seed: u64, index: u64) -> Result<(Image, usize), ToyError> {
        let mut rng = keyed(child_seed(seed, index), streams::TOY_LAYOUT);
        let label = rng.random_range(0..4);
        let other = (label + rng.random_range(1..4)) % 4;
        let items = self.layout(label, &mut rng);
        Ok((self.render(&items, label, other)?, label))
    }

    /// Pair `index` of the stream for `seed`: labels `y1 ≠ y2`, the view-2
    /// arrangement drawn independently, and `π₂` read off the item positions.
    pub fn pair(&self, seed: u64, index: u64) -> Result<AnagramPair, ToyError> {
        let mut rng = keyed(child_seed(seed, index), streams::TOY_LAYOUT);
        let y1 = rng.random_range(0..4);
        let y2 = (y1 + rng.random_range(1..4)) % 4;
        let items1 = self.layout(y1, &mut rng);
        let items2 = self.layout(y2, &mut rng);
        let mut cell_of = vec![0; items1.len()];
        for (cell, &item) in items1.iter().enumerate() {
            cell_of[item] = cell;
        }
        let perm = Permutation::from_map(items2.iter().map(|&item| cell_of[item]).collect())?;
        let canvas1 = self.render(&items1, y1, y2)?;
        let canvas2 = compose(&decompose(&canvas1, self.grid_side)?, &perm)?;
        debug_assert_eq!(canvas2, self.render(&items2, y1, y2)?);
        Ok(AnagramPair {
            pair_id: alloc::format!("toy-{seed}-{index}"),
            canvas1,
            canvas2,
            label1: DIRECTIONS[y1].to_string(),
            label2: DIRECTIONS[y2].to_string(),
            permutation2: perm,
        })
    }

    pub fn pairs(&self, seed: u64, count: usize) -> Result<Vec<AnagramPair>, ToyError> {
        (0..count as u64).map(|i| self.pair(seed, i)).collect()
    }
}

/// One smooth, clearly distinct pattern in `[0, 1]` per category.
pub fn category_templates(categories: &[String], resolution: usize) -> BTreeMap<String, Image> {
    let n = resolution as f64;
    categories
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let fi = i as f64;
            let image = Image::from_fn(resolution, resolution, 3, |y, x, c| {
                let (u, v) = ((y as f64 + 0.5) / n, (x as f64 + 0.5) / n);
                let phase = fi * 1.7 + c as f64 * 2.1;
                let wave = libm::sin(core::f64::consts::TAU * ((1.0 + fi) * u + (2.0 + c as f64) * v) + phase);
                0.5 + 0.4 * wave
            });
            (name.clone(), image)
        })
        .collect()
}
