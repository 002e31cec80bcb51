//! A minimal pre-norm class-token patch transformer.
//!
//! patch embedding → + learned positions → `depth` × (LN → multi-head
//! self-attention → residual, LN → GELU MLP → residual) → LN → linear head on
//! the class token. Radius masks from [`crate::mask`] are applied to the
//! pre-softmax logits of the targeted blocks only.
//!
//! All parameters live in one flat buffer described by a [`TensorSlot`]
//! table whose names follow the common ViT checkpoint convention
//! (`patch_embed.proj.weight`, `blocks.{i}.attn.qkv.weight`, ...).

pub mod ops;
pub mod train;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::image::Image;
use crate::mask::{manhattan_mask, AttentionMask, MaskSpec};
use crate::rng::{gaussian, streams};
use ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, NormCache};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input is {got:?}, model expects {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("non-finite activations after block {block}")]
    NonFinite { block: usize },
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("mask targets block {block} but the model has {depth} blocks")]
    MaskBlock { block: usize, depth: usize },
    #[error("label {label} out of range for {categories} categories")]
    Label { label: usize, categories: usize },
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Patch(#[from] crate::patch::PatchError),
}

fn default_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase", deny_unknown_fields)
)]
pub struct ModelConfig {
    /// Tokens per grid side; the grid has `grid_side²` patch tokens.
    pub grid_side: usize,
    /// Pixels per patch side.
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    /// Output classes, in head order.
    pub categories: Vec<String>,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    #[cfg_attr(feature = "serde", serde(default = "default_eps"))]
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn tiny(grid_side: usize, patch_size: usize, categories: Vec<String>) -> Self {
        Self {
            grid_side,
            patch_size,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_dim: 64,
            categories,
            norm_mean: [0.5; 3],
            norm_std: [0.25; 3],
            layer_norm_eps: default_eps(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.grid_side * self.patch_size
    }

    pub fn cells(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn tokens(&self) -> usize {
        self.cells() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.grid_side == 0 || self.patch_size == 0 {
            return fail("grid side and patch size must be positive");
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail("embed dim must be a positive multiple of the head count");
        }
        if self.mlp_dim == 0 {
            return fail("mlp dim must be positive");
        }
        if self.categories.is_empty() {
            return fail("at least one category is required");
        }
        if self.norm_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return fail("normalization std must be positive");
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return fail("layer norm eps must be positive");
        }
        Ok(())
    }
}

/// A named, shaped view into the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// One named tensor as stored on disk (32-bit floats).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    norm1: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    norm2: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    slots: Vec<TensorSlot>,
    cls: usize,
    pos: usize,
    patch_w: usize,
    patch_b: usize,
    blocks: Vec<BlockLayout>,
    norm: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut slots = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            slots.push(TensorSlot {
                name,
                shape,
                offset: total,
                len,
            });
            total += len;
            total - len
        };
        let (d, t, m, p) = (c.embed_dim, c.tokens(), c.mlp_dim, c.patch_size);
        let cls = push("cls_token".into(), vec![1, 1, d]);
        let pos = push("pos_embed".into(), vec![1, t, d]);
        let patch_w = push("patch_embed.proj.weight".into(), vec![d, 3, p, p]);
        let patch_b = push("patch_embed.proj.bias".into(), vec![d]);
        let blocks = (0..c.depth)
            .map(|i| {
                let name = |s: &str| alloc::format!("blocks.{i}.{s}");
                let norm1 = push(name("norm1.weight"), vec![d]);
                push(name("norm1.bias"), vec![d]);
                let qkv_w = push(name("attn.qkv.weight"), vec![3 * d, d]);
                let qkv_b = push(name("attn.qkv.bias"), vec![3 * d]);
                let proj_w = push(name("attn.proj.weight"), vec![d, d]);
                let proj_b = push(name("attn.proj.bias"), vec![d]);
                let norm2 = push(name("norm2.weight"), vec![d]);
                push(name("norm2.bias"), vec![d]);
                let fc1_w = push(name("mlp.fc1.weight"), vec![m, d]);
                let fc1_b = push(name("mlp.fc1.bias"), vec![m]);
                let fc2_w = push(name("mlp.fc2.weight"), vec![d, m]);
                let fc2_b = push(name("mlp.fc2.bias"), vec![d]);
                BlockLayout {
                    norm1,
                    qkv_w,
                    qkv_b,
                    proj_w,
                    proj_b,
                    norm2,
                    fc1_w,
                    fc1_b,
                    fc2_w,
                    fc2_b,
                }
            })
            .collect();
        let norm = push("norm.weight".into(), vec![d]);
        push("norm.bias".into(), vec![d]);
        let head_w = push("head.weight".into(), vec![c.categories.len(), d]);
        let head_b = push("head.bias".into(), vec![c.categories.len()]);
        Self {
            slots,
            cls,
            pos,
            patch_w,
            patch_b,
            blocks,
            norm,
            head_w,
            head_b,
            total,
        }
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Class token after the embedding and after each block (`depth + 1` entries).
    pub class_tokens: Vec<Vec<f64>>,
    /// Class token after the final norm; the head's input.
    pub final_class_token: Vec<f64>,
    pub logits: Vec<f64>,
    /// Patch tokens (`cells × embed_dim`, row-major) after each block, when requested.
    pub patch_tokens: Option<Vec<Vec<f64>>>,
}

struct BlockCache {
    ln1: NormCache,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2: NormCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct Cache {
    patches: Vec<f64>,
    blocks: Vec<BlockCache>,
    ln_final: NormCache,
    y: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PatchTransformer {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PatchTransformer {
    /// Random initialization: N(0, 0.02²) for embeddings and the class token,
    /// N(0, 2/(fan_in + fan_out)) for linear weights, unit norms, zero biases.
    pub fn new_random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let noise = gaussian(seed, streams::MODEL_INIT, layout.total);
        let mut params = vec![0.0; layout.total];
        for slot in &layout.slots {
            let range = slot.offset..slot.offset + slot.len;
            let name = slot.name.as_str();
            let std = if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "norm.weight" {
                params[range].fill(1.0);
                continue;
            } else if name.ends_with(".bias") {
                continue;
            } else if name == "cls_token" || name == "pos_embed" {
                0.02
            } else {
                let fan_out = slot.shape[0];
                let fan_in = slot.len / fan_out;
                libm::sqrt(2.0 / (fan_in + fan_out) as f64)
            };
            for i in range {
                params[i] = noise[i] * std;
            }
        }
        Ok(Self { config, layout, params })
    }

    /// Overwrites the patch rows of the positional table with 2D sine-cosine
    /// codes (half the channels for the row, half for the column); the class
    /// row is zeroed. Training starts from a grid-aware geometry this way.
    pub fn init_sincos_positions(&mut self) {
        let (g, d) = (self.config.grid_side, self.config.embed_dim);
        let quarter = d / 4;
        let pos = self.layout.pos;
        self.params[pos..pos + d].fill(0.0);
        for k in 0..g * g {
            let row = &mut self.params[pos + (k + 1) * d..pos + (k + 2) * d];
            row.fill(0.0);
            for (half, coord) in [(0, k / g), (1, k % g)] {
                for i in 0..quarter {
                    let omega = 1.0 / libm::pow(10_000.0, i as f64 / quarter.max(1) as f64);
                    let angle = coord as f64 * omega;
                    row[half * 2 * quarter + i] = libm::sin(angle);
                    row[half * 2 * quarter + quarter + i] = libm::cos(angle);
                }
            }
        }
    }

    /// Assembles a model from named tensors; every slot must be present with
    /// its exact shape and nothing else may be supplied.
    pub fn from_tensors(config: ModelConfig, tensors: &[NamedTensor]) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        for t in tensors {
            if !layout.slots.iter().any(|s| s.name == t.name) {
                return Err(ModelError::UnexpectedTensor(t.name.clone()));
            }
        }
        for slot in &layout.slots {
            let t = tensors
                .iter()
                .find(|t| t.name == slot.name)
                .ok_or_else(|| ModelError::MissingTensor(slot.name.clone()))?;
            if t.shape != slot.shape || t.data.len() != slot.len {
                return Err(ModelError::TensorShape {
                    name: slot.name.clone(),
                    expected: slot.shape.clone(),
                    got: t.shape.clone(),
                });
            }
            for (p, &v) in params[slot.offset..slot.offset + slot.len].iter_mut().zip(&t.data) {
                *p = f64::from(v);
            }
        }
        Ok(Self { config, layout, params })
    }

    /// Parameters as 32-bit named tensors, in layout order.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.layout
            .slots
            .iter()
            .map(|s| NamedTensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: self.params[s.offset..s.offset + s.len]
                    .iter()
                    .map(|&v| v as f32)
                    .collect(),
            })
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn slots(&self) -> &[TensorSlot] {
        &self.layout.slots
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Per-channel `(x − mean)/std` with the model's statistics.
    pub fn normalize(&self, canvas: &Image) -> Image {
        let (mean, std) = (self.config.norm_mean, self.config.norm_std);
        Image::from_fn(canvas.height(), canvas.width(), canvas.channels(), |y, x, c| {
            (canvas.get(y, x, c) - mean[c % 3]) / std[c % 3]
        })
    }

    fn block_masks(&self, mask: &MaskSpec) -> Result<Vec<Option<AttentionMask>>, ModelError> {
        let depth = self.config.depth;
        if let Some(&block) = mask.target_blocks.iter().find(|&&b| b >= depth) {
            if mask.mode != crate::mask::MaskMode::None {
                return Err(ModelError::MaskBlock { block, depth });
            }
        }
        let resolved =
            manhattan_mask(self.config.grid_side, mask.radius, mask.mode, mask.class_key).with_self_fallback();
        Ok((0..depth)
            .map(|b| mask.applies_to(b).then(|| resolved.clone()))
            .collect())
    }

    fn extract_patches(&self, input: &Image) -> Result<Vec<f64>, ModelError> {
        let res = self.config.resolution();
        if input.shape() != (res, res, 3) {
            return Err(ModelError::InputShape {
                expected: (res, res, 3),
                got: input.shape(),
            });
        }
        let (g, p) = (self.config.grid_side, self.config.patch_size);
        let mut out = Vec::with_capacity(self.config.cells() * self.config.patch_dim());
        for k in 0..g * g {
            let (top, left) = ((k / g) * p, (k % g) * p);
            for c in 0..3 {
                for y in 0..p {
                    for x in 0..p {
                        out.push(input.get(top + y, left + x, c));
                    }
                }
            }
        }
        Ok(out)
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn run(
        &self,
        input: &Image,
        mask: &MaskSpec,
        keep_patch_tokens: bool,
    ) -> Result<(Cache, ForwardTrace), ModelError> {
        let c = &self.config;
        let (d, t, m, h) = (c.embed_dim, c.tokens(), c.mlp_dim, c.heads);
        let dh = c.head_dim();
        let l = &self.layout;
        let masks = self.block_masks(mask)?;
        let patches = self.extract_patches(input)?;
        let pd = c.patch_dim();
        let embedded = linear(
            &patches,
            c.cells(),
            self.slice(l.patch_w, d * pd),
            self.slice(l.patch_b, d),
            pd,
            d,
        );
        let pos = self.slice(l.pos, t * d);
        let mut x = vec![0.0; t * d];
        for i in 0..d {
            x[i] = self.params[l.cls + i] + pos[i];
        }
        for k in 0..c.cells() {
            for i in 0..d {
                x[(k + 1) * d + i] = embedded[k * d + i] + pos[(k + 1) * d + i];
            }
        }
        let mut class_tokens = vec![x[..d].to_vec()];
        let mut patch_tokens = keep_patch_tokens.then(Vec::new);
        let mut blocks = Vec::with_capacity(c.depth);
        let scale = 1.0 / libm::sqrt(dh as f64);
        for (bi, bl) in l.blocks.iter().enumerate() {
            let (h1, ln1) = layer_norm(
                &x,
                t,
                d,
                self.slice(bl.norm1, d),
                self.slice(bl.norm1 + d, d),
                c.layer_norm_eps,
            );
            let qkv = linear(
                &h1,
                t,
                self.slice(bl.qkv_w, 3 * d * d),
                self.slice(bl.qkv_b, 3 * d),
                d,
                3 * d,
            );
            let mut probs = vec![0.0; h * t * t];
            let mut attn = vec![0.0; t * d];
            for head in 0..h {
                for i in 0..t {
                    let row = &mut probs[(head * t + i) * t..(head * t + i + 1) * t];
                    let q = &qkv[i * 3 * d + head * dh..i * 3 * d + (head + 1) * dh];
                    for (j, s) in row.iter_mut().enumerate() {
                        let k = &qkv[j * 3 * d + d + head * dh..j * 3 * d + d + (head + 1) * dh];
                        *s = scale * ops::dot(q, k);
                        if let Some(mask) = &masks[bi] {
                            if !mask.allowed(i, j) {
                                *s += ops::MASK_NEG;
                            }
                        }
                    }
                    ops::softmax_in_place(row);
                    let out = &mut attn[i * d + head * dh..i * d + (head + 1) * dh];
                    for (j, &a) in row.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let v = &qkv[j * 3 * d + 2 * d + head * dh..j * 3 * d + 2 * d + (head + 1) * dh];
                        for e in 0..dh {
                            out[e] += a * v[e];
                        }
                    }
                }
            }
            let proj = linear(&attn, t, self.slice(bl.proj_w, d * d), self.slice(bl.proj_b, d), d, d);
            let x_mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
            let (h2, ln2) = layer_norm(
                &x_mid,
                t,
                d,
                self.slice(bl.norm2, d),
                self.slice(bl.norm2 + d, d),
                c.layer_norm_eps,
            );
            let u = linear(&h2, t, self.slice(bl.fc1_w, m * d), self.slice(bl.fc1_b, m), d, m);
            let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
            let mlp = linear(&g, t, self.slice(bl.fc2_w, d * m), self.slice(bl.fc2_b, d), m, d);
            let x_out: Vec<f64> = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
            if x_out.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { block: bi });
            }
            class_tokens.push(x_out[..d].to_vec());
            if let Some(pt) = patch_tokens.as_mut() {
                pt.push(x_out[d..].to_vec());
            }
            x = x_out;
            blocks.push(BlockCache {
                ln1,
                h1,
                qkv,
                probs,
                attn,
                ln2,
                h2,
                u,
                g,
            });
        }
        let (y, ln_final) = layer_norm(
            &x[..d],
            1,
            d,
            self.slice(l.norm, d),
            self.slice(l.norm + d, d),
            c.layer_norm_eps,
        );
        let n_cat = c.categories.len();
        let logits = linear(
            &y,
            1,
            self.slice(l.head_w, n_cat * d),
            self.slice(l.head_b, n_cat),
            d,
            n_cat,
        );
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: c.depth });
        }
        let trace = ForwardTrace {
            class_tokens,
            final_class_token: y.clone(),
            logits: logits.clone(),
            patch_tokens,
        };
        Ok((
            Cache {
                patches,
                blocks,
                ln_final,
                y,
                logits,
            },
            trace,
        ))
    }

    /// Forward pass on a normalized `resolution × resolution × 3` input.
    pub fn forward(&self, input: &Image, mask: &MaskSpec) -> Result<ForwardTrace, ModelError> {
        Ok(self.run(input, mask, false)?.1)
    }

    pub fn forward_with_patch_tokens(&self, input: &Image, mask: &MaskSpec) -> Result<ForwardTrace, ModelError> {
        Ok(self.run(input, mask, true)?.1)
    }

    /// Post-softmax attention of every block, `heads × tokens × tokens` each.
    pub fn attention_maps(&self, input: &Image, mask: &MaskSpec) -> Result<Vec<Vec<f64>>, ModelError> {
        let (cache, _) = self.run(input, mask, false)?;
        Ok(cache.blocks.into_iter().map(|b| b.probs).collect())
    }

    /// Softmax cross-entropy of the logits against `label`.
    pub fn loss(&self, input: &Image, label: usize, mask: &MaskSpec) -> Result<f64, ModelError> {
        self.check_label(label)?;
        let logits = self.forward(input, mask)?.logits;
        Ok(ops::log_sum_exp(&logits) - logits[label])
    }

    fn check_label(&self, label: usize) -> Result<(), ModelError> {
        let categories = self.config.categories.len();
        if label >= categories {
            return Err(ModelError::Label { label, categories });
        }
        Ok(())
    }

    /// Adds the cross-entropy gradient to `grad` (same layout as the
    /// parameters) and returns `(loss, logits)`.
    pub fn accumulate_gradient(
        &self,
        input: &Image,
        label: usize,
        mask: &MaskSpec,
        grad: &mut [f64],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_label(label)?;
        assert_eq!(grad.len(), self.layout.total, "gradient buffer size");
        let (cache, _) = self.run(input, mask, false)?;
        let loss = ops::log_sum_exp(&cache.logits) - cache.logits[label];
        let mut dlogits = cache.logits.clone();
        ops::softmax_in_place(&mut dlogits);
        dlogits[label] -= 1.0;
        self.backward(&cache, &dlogits, grad);
        Ok((loss, cache.logits))
    }

    fn backward(&self, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
        let c = &self.config;
        let (d, t, m, h) = (c.embed_dim, c.tokens(), c.mlp_dim, c.heads);
        let dh = c.head_dim();
        let l = &self.layout;
        let n_cat = c.categories.len();
        let scale = 1.0 / libm::sqrt(dh as f64);

        let (dw, db) = pair_mut(grad, l.head_w, n_cat * d, n_cat);
        let dy = linear_backward(&cache.y, dlogits, 1, self.slice(l.head_w, n_cat * d), d, n_cat, dw, db);
        let (dg, dbeta) = pair_mut(grad, l.norm, d, d);
        let dcls = layer_norm_backward(&dy, &cache.ln_final, 1, d, self.slice(l.norm, d), dg, dbeta);
        let mut dx = vec![0.0; t * d];
        dx[..d].copy_from_slice(&dcls);

        for (bl, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch
            let (dw, db) = pair_mut(grad, bl.fc2_w, d * m, d);
            let dgelu = linear_backward(&bc.g, &dx, t, self.slice(bl.fc2_w, d * m), m, d, dw, db);
            let du: Vec<f64> = dgelu.iter().zip(&bc.u).map(|(g, &u)| g * gelu_grad(u)).collect();
            let (dw, db) = pair_mut(grad, bl.fc1_w, m * d, m);
            let dh2 = linear_backward(&bc.h2, &du, t, self.slice(bl.fc1_w, m * d), d, m, dw, db);
            let (dg, dbeta) = pair_mut(grad, bl.norm2, d, d);
            let dln2 = layer_norm_backward(&dh2, &bc.ln2, t, d, self.slice(bl.norm2, d), dg, dbeta);
            let dx_mid: Vec<f64> = dx.iter().zip(&dln2).map(|(a, b)| a + b).collect();

            // attention branch
            let (dw, db) = pair_mut(grad, bl.proj_w, d * d, d);
            let dattn = linear_backward(&bc.attn, &dx_mid, t, self.slice(bl.proj_w, d * d), d, d, dw, db);
            let mut dqkv = vec![0.0; t * 3 * d];
            let mut da = vec![0.0; t];
            for head in 0..h {
                for i in 0..t {
                    let row = &bc.probs[(head * t + i) * t..(head * t + i + 1) * t];
                    let dout = &dattn[i * d + head * dh..i * d + (head + 1) * dh];
                    let mut weighted = 0.0;
                    for j in 0..t {
                        let v = &bc.qkv[j * 3 * d + 2 * d + head * dh..j * 3 * d + 2 * d + (head + 1) * dh];
                        da[j] = ops::dot(dout, v);
                        weighted += row[j] * da[j];
                        if row[j] != 0.0 {
                            let dv = &mut dqkv[j * 3 * d + 2 * d + head * dh..j * 3 * d + 2 * d + (head + 1) * dh];
                            for e in 0..dh {
                                dv[e] += row[j] * dout[e];
                            }
                        }
                    }
                    for j in 0..t {
                        let ds = row[j] * (da[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for e in 0..dh {
                            let q = bc.qkv[i * 3 * d + head * dh + e];
                            let k = bc.qkv[j * 3 * d + d + head * dh + e];
                            dqkv[i * 3 * d + head * dh + e] += ds * k;
                            dqkv[j * 3 * d + d + head * dh + e] += ds * q;
                        }
                    }
                }
            }
            let (dw, db) = pair_mut(grad, bl.qkv_w, 3 * d * d, 3 * d);
            let dh1 = linear_backward(&bc.h1, &dqkv, t, self.slice(bl.qkv_w, 3 * d * d), d, 3 * d, dw, db);
            let (dg, dbeta) = pair_mut(grad, bl.norm1, d, d);
            let dln1 = layer_norm_backward(&dh1, &bc.ln1, t, d, self.slice(bl.norm1, d), dg, dbeta);
            dx = dx_mid.iter().zip(&dln1).map(|(a, b)| a + b).collect();
        }

        for i in 0..d {
            grad[l.cls + i] += dx[i];
        }
        for (gp, v) in grad[l.pos..l.pos + t * d].iter_mut().zip(&dx) {
            *gp += v;
        }
        let pd = c.patch_dim();
        let (dw, db) = pair_mut(grad, l.patch_w, d * pd, d);
        linear_backward(
            &cache.patches,
            &dx[d..],
            c.cells(),
            self.slice(l.patch_w, d * pd),
            pd,
            d,
            dw,
            db,
        );
    }
}

/// Two adjacent regions `[offset, offset + a)` and `[offset + a, offset + a + b)`.
fn pair_mut(buf: &mut [f64], offset: usize, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    buf[offset..offset + a + b].split_at_mut(a)
}
