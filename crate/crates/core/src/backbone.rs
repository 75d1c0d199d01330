//! A compact ViT-style encoder: patchify, pre-norm attention/MLP blocks,
//! and a classification or frame-embedding head, with the 3D token layer
//! insertable before any block index (index L means after the last block).

use crate::error::{Error, Result};
use crate::geometry::{make_patch_grid, PatchGrid};
use crate::layer::{self, ControlMlp, LayerConfig, LayerOutput, LayerParams};
use crate::nn::{Affine, NormAffine};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// The geometric token layer.
    Trl3d,
    /// Parameter-matched residual MLP control for ablations.
    MlpControl,
}

#[derive(Clone)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Number of Transformer blocks, L.
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
    /// Block indices the token layer is applied before; empty for a plain
    /// ViT baseline. Duplicates allowed; index L applies after all blocks.
    pub insert_at: Vec<usize>,
    /// 0 selects the frame-embedding head.
    pub num_classes: usize,
    pub layer_cfg: LayerConfig,
    pub layer_kind: LayerKind,
}

impl BackboneConfig {
    /// Desk-scale defaults: 32px images, 4px patches (N = 64), L = 6,
    /// 3 heads, m = 48, one layer before block 2.
    pub fn desk_scale(num_classes: usize) -> BackboneConfig {
        BackboneConfig {
            image_size: 32,
            patch_size: 4,
            depth: 6,
            heads: 3,
            embed_dim: 48,
            insert_at: vec![2],
            num_classes,
            layer_cfg: LayerConfig::new(48),
            layer_kind: LayerKind::Trl3d,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if let Some(&bad) = self.insert_at.iter().find(|&&i| i > self.depth) {
            return Err(Error::InvalidArgument(format!(
                "insert index {bad} outside [0, {}]",
                self.depth
            )));
        }
        if self.layer_cfg.embed_dim != self.embed_dim {
            return Err(Error::InvalidArgument(
                "layer embed_dim must match backbone embed_dim".into(),
            ));
        }
        self.layer_cfg.validate()
    }
}

/// Tokens plus their patch-grid geometry.
pub struct TokenBatch {
    /// `[B, 1+N, m]` (or `[1+N, m]` straight out of [`Model::patchify`]).
    pub values: Tensor,
    pub has_cls: bool,
    pub grid: PatchGrid,
}

pub struct Block {
    pub ln1: NormAffine,
    pub wq: Affine,
    pub wk: Affine,
    pub wv: Affine,
    pub wo: Affine,
    pub ln2: NormAffine,
    pub fc1: Affine,
    pub fc2: Affine,
    heads: usize,
}

impl Block {
    fn init(m: usize, heads: usize, rng: &mut Rng) -> Block {
        Block {
            ln1: NormAffine::init(m),
            wq: Affine::init(m, m, rng),
            wk: Affine::init(m, m, rng),
            wv: Affine::init(m, m, rng),
            wo: Affine::init(m, m, rng),
            ln2: NormAffine::init(m),
            fc1: Affine::init(m, 4 * m, rng),
            fc2: Affine::init(4 * m, m, rng),
            heads,
        }
    }

    /// Multi-head self-attention over normalized tokens; also returns the
    /// attention probabilities `[B, H, S, S]`.
    pub fn attention(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        let shape = h.shape(); // [B, S, m]
        let (b, s, m) = (shape[0], shape[1], shape[2]);
        let dh = m / self.heads;
        let split = |t: &Tensor| -> Result<Tensor> {
            t.reshape(&[b, s, self.heads, dh])?.permute(&[0, 2, 1, 3])
        };
        let q = split(&self.wq.forward(h)?)?;
        let k = split(&self.wk.forward(h)?)?;
        let v = split(&self.wv.forward(h)?)?;
        let att = q
            .matmul(&k.t2()?)?
            .scale(1.0 / (dh as f64).sqrt())
            .softmax(3)?;
        let out = att
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, s, m])?;
        Ok((self.wo.forward(&out)?, att))
    }

    /// Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(x)).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (att, _) = self.attention(&self.ln1.forward(x)?)?;
        let x = x.add(&att)?;
        let h = self.ln2.forward(&x)?;
        let mlp = self.fc2.forward(&self.fc1.forward(&h)?.relu())?;
        x.add(&mlp)
    }

    fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.wo.collect(&format!("{prefix}.wo"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.fc1.collect(&format!("{prefix}.fc1"), out);
        self.fc2.collect(&format!("{prefix}.fc2"), out);
    }
}

enum Inserted {
    Trl3d(LayerParams),
    Control(ControlMlp),
}

pub struct Model {
    pub cfg: BackboneConfig,
    pub grid: PatchGrid,
    patch_proj: Affine,
    cls: Tensor,
    pos_emb: Tensor,
    blocks: Vec<Block>,
    head_norm: NormAffine,
    head: Affine,
    inserted: Vec<(usize, Inserted)>,
}

pub struct ForwardOutput {
    /// `[B, num_classes]` logits, or `[B, m]` unit-norm embeddings.
    pub output: Tensor,
    /// One entry per inserted layer instance, in application order.
    pub layer_outputs: Vec<LayerOutput>,
}

impl Model {
    /// Parameters are drawn from labeled child generators ("backbone",
    /// then "trl3d.{k}"), so a baseline and an inserted-layer model built
    /// from the same seed share identical backbone weights.
    pub fn init(cfg: BackboneConfig, rng: &Rng) -> Result<Model> {
        cfg.validate()?;
        let m = cfg.embed_dim;
        let n = cfg.num_patches();
        let side = cfg.grid_side();
        let grid = make_patch_grid(side, side)?;
        let mut brng = rng.derive("backbone");
        let patch_dim = cfg.patch_size * cfg.patch_size;
        let patch_proj = Affine::init(patch_dim, m, &mut brng);
        let cls = Tensor::uniform_fan_in(&[1, m], m, &mut brng).with_grad();
        let pos_emb = Tensor::uniform_fan_in(&[n + 1, m], m, &mut brng).with_grad();
        let blocks = (0..cfg.depth)
            .map(|_| Block::init(m, cfg.heads, &mut brng))
            .collect();
        let head_norm = NormAffine::init(m);
        let head_out = if cfg.num_classes == 0 { m } else { cfg.num_classes };
        let head = Affine::init(m, head_out, &mut brng);

        let mut inserted = Vec::new();
        for (k, &idx) in cfg.insert_at.iter().enumerate() {
            let mut lrng = rng.derive(&format!("trl3d.{k}"));
            let inst = match cfg.layer_kind {
                LayerKind::Trl3d => Inserted::Trl3d(LayerParams::init(&cfg.layer_cfg, &mut lrng)?),
                LayerKind::MlpControl => {
                    let target =
                        LayerParams::expected_param_count(m, cfg.layer_cfg.stem_hidden);
                    Inserted::Control(ControlMlp::init(m, target, &mut lrng))
                }
            };
            inserted.push((idx, inst));
        }
        Ok(Model {
            cfg,
            grid,
            patch_proj,
            cls,
            pos_emb,
            blocks,
            head_norm,
            head,
            inserted,
        })
    }

    /// Tokens for a single image `[H, W, 1]`: linear patch projection,
    /// learned 2D positional embedding, CLS prepended.
    pub fn patchify(&self, image: &Tensor) -> Result<TokenBatch> {
        let values = self.embed_images(std::slice::from_ref(image))?;
        let shape = values.shape();
        Ok(TokenBatch {
            values: values.reshape(&shape[1..])?,
            has_cls: true,
            grid: self.grid.clone(),
        })
    }

    fn embed_images(&self, images: &[Tensor]) -> Result<Tensor> {
        let hw = self.cfg.image_size;
        let p = self.cfg.patch_size;
        let side = self.cfg.grid_side();
        let n = self.cfg.num_patches();
        let b = images.len();
        let mut raw = Vec::with_capacity(b * n * p * p);
        for image in images {
            let shape = image.shape();
            if shape != vec![hw, hw, 1] {
                return Err(Error::InvalidShape {
                    op: "patchify",
                    msg: format!("expected [{hw}, {hw}, 1], got {shape:?}"),
                });
            }
            let data = image.data();
            for pr in 0..side {
                for pc in 0..side {
                    for dy in 0..p {
                        let y = pr * p + dy;
                        let x0 = pc * p;
                        raw.extend_from_slice(&data[y * hw + x0..y * hw + x0 + p]);
                    }
                }
            }
        }
        let patches = Tensor::from_vec(raw, &[b, n, p * p])?;
        let projected = self.patch_proj.forward(&patches)?; // [B, N, m]
        let m = self.cfg.embed_dim;
        let cls_row = Tensor::zeros(&[b, 1, m]).add(&self.cls.reshape(&[1, 1, m])?)?;
        let tokens = Tensor::concat(&[cls_row, projected], 1)?;
        tokens.add(&self.pos_emb)
    }

    fn apply_inserted(
        &self,
        inst: &Inserted,
        tokens: &Tensor,
        video: bool,
        outputs: &mut Vec<LayerOutput>,
    ) -> Result<Tensor> {
        match inst {
            Inserted::Trl3d(params) => {
                let out = if video {
                    layer::forward_video(tokens, true, &self.grid, &self.cfg.layer_cfg, params)?
                } else {
                    layer::forward_image_batch(
                        tokens,
                        true,
                        &self.grid,
                        &self.cfg.layer_cfg,
                        params,
                    )?
                };
                let t = out.tokens.clone();
                outputs.push(out);
                Ok(t)
            }
            Inserted::Control(mlp) => mlp.forward(tokens, true),
        }
    }

    fn encode(&self, mut tokens: Tensor, video: bool) -> Result<(Tensor, Vec<LayerOutput>)> {
        let mut outputs = Vec::new();
        for i in 0..=self.cfg.depth {
            for (idx, inst) in &self.inserted {
                if *idx == i {
                    tokens = self.apply_inserted(inst, &tokens, video, &mut outputs)?;
                }
            }
            if i < self.cfg.depth {
                tokens = self.blocks[i].forward(&tokens)?;
            }
        }
        Ok((tokens, outputs))
    }

    fn head_on_cls(&self, tokens: &Tensor) -> Result<Tensor> {
        let shape = tokens.shape(); // [B, S, m]
        let (b, m) = (shape[0], shape[2]);
        let cls = tokens.narrow(1, 0, 1)?.reshape(&[b, m])?;
        let h = self.head_norm.forward(&cls)?;
        let out = self.head.forward(&h)?;
        if self.cfg.num_classes == 0 {
            // unit-norm frame embeddings
            let sq = out.mul(&out)?.sum(Some(1))?.add_scalar(1e-24);
            let norm = sq.sqrt()?.reshape(&[b, 1])?;
            out.div(&norm)
        } else {
            Ok(out)
        }
    }

    /// Classify or embed a batch of images; cameras estimated per image.
    pub fn forward_images(&self, images: &[Tensor]) -> Result<ForwardOutput> {
        let tokens = self.embed_images(images)?;
        let (tokens, layer_outputs) = self.encode(tokens, false)?;
        Ok(ForwardOutput {
            output: self.head_on_cls(&tokens)?,
            layer_outputs,
        })
    }

    pub fn forward_image(&self, image: &Tensor) -> Result<ForwardOutput> {
        self.forward_images(std::slice::from_ref(image))
    }

    /// Per-frame embeddings (or logits) for a synchronized clip; the
    /// inserted layer runs in video mode (DT or JT per its config).
    pub fn forward_clip(&self, frames: &[Tensor]) -> Result<ForwardOutput> {
        let tokens = self.embed_images(frames)?;
        let (tokens, layer_outputs) = self.encode(tokens, true)?;
        Ok(ForwardOutput {
            output: self.head_on_cls(&tokens)?,
            layer_outputs,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.patch_proj.collect("backbone.patch_proj", &mut out);
        out.push(("backbone.cls".into(), self.cls.clone()));
        out.push(("backbone.pos_emb".into(), self.pos_emb.clone()));
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.collect(&format!("backbone.blocks.{i}"), &mut out);
        }
        self.head_norm.collect("backbone.head_norm", &mut out);
        self.head.collect("backbone.head", &mut out);
        for (k, (_, inst)) in self.inserted.iter().enumerate() {
            match inst {
                Inserted::Trl3d(p) => out.extend(p.named(&format!("trl3d.{k}."))),
                Inserted::Control(c) => out.extend(c.named(&format!("control.{k}."))),
            }
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}
