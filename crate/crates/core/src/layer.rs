//! The 3D token representation layer.
//!
//! Given backbone tokens, the layer estimates a pseudo-depth per token and
//! one camera (rotation as yaw/pitch/roll plus translation) per image or
//! per frame, lifts each token's patch-center (u, v) and depth to a
//! camera-frame point, transforms it into a shared world frame, and fuses
//! a learned embedding of the world coordinate back into the token. Token
//! count and width are unchanged; a CLS slot passes through untouched.
//!
//! Estimator topologies:
//! - depth head: Linear(m, m), ReLU, Linear(m, 1)
//! - camera stem: Linear(m, m), ReLU, Linear(m, m), ReLU,
//!   Linear(m, h), ReLU, Linear(h, h), then mean-pool over tokens
//! - rotation/translation heads: Linear(h, 3) each
//! - coordinate embedding: Linear(3, m), ReLU, Linear(m, m), final layer
//!   zero-initialized so the layer starts as the identity map

use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, PatchGrid};
use crate::nn::Affine;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordMode {
    /// Estimate depth, lift through the pinhole model, transform by the
    /// estimated camera.
    Depth,
    /// Regress the three world coordinates directly; no geometric
    /// constraint, grid (u, v) unused.
    DirectXyz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// tokens + embed_mlp(world coords)
    Embedding,
    /// project [tokens ; world coords] back to width m
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoStrategy {
    /// Divided-Temporal: one camera per frame.
    Dt,
    /// Joint-Temporal: a single camera pooled over all frames.
    Jt,
}

#[derive(Debug, Clone)]
pub struct LayerConfig {
    pub embed_dim: usize,
    pub focal: f64,
    pub coord_mode: CoordMode,
    pub fusion_mode: FusionMode,
    pub video_strategy: VideoStrategy,
    pub stem_hidden: usize,
}

impl LayerConfig {
    pub fn new(embed_dim: usize) -> LayerConfig {
        LayerConfig {
            embed_dim,
            focal: 1.0,
            coord_mode: CoordMode::Depth,
            fusion_mode: FusionMode::Embedding,
            video_strategy: VideoStrategy::Dt,
            stem_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 4 || self.stem_hidden < 3 {
            return Err(Error::InvalidArgument(format!(
                "layer config needs embed_dim >= 4 and stem_hidden >= 3, got {} / {}",
                self.embed_dim, self.stem_hidden
            )));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal must be positive, got {}",
                self.focal
            )));
        }
        Ok(())
    }
}

pub struct LayerParams {
    pub depth_mlp: [Affine; 2],
    pub stem: [Affine; 4],
    pub rot_head: Affine,
    pub trans_head: Affine,
    pub embed_mlp: [Affine; 2],
    pub concat_proj: Option<Affine>,
}

impl LayerParams {
    pub fn init(cfg: &LayerConfig, rng: &mut Rng) -> Result<LayerParams> {
        cfg.validate()?;
        let m = cfg.embed_dim;
        let h = cfg.stem_hidden;
        let coord_out = match cfg.coord_mode {
            CoordMode::Depth => 1,
            CoordMode::DirectXyz => 3,
        };
        Ok(LayerParams {
            depth_mlp: [Affine::init(m, m, rng), Affine::init(m, coord_out, rng)],
            stem: [
                Affine::init(m, m, rng),
                Affine::init(m, m, rng),
                Affine::init(m, h, rng),
                Affine::init(h, h, rng),
            ],
            rot_head: Affine::init(h, 3, rng),
            trans_head: Affine::init(h, 3, rng),
            embed_mlp: [Affine::init(3, m, rng), Affine::zeros(m, m)],
            concat_proj: match cfg.fusion_mode {
                FusionMode::Embedding => None,
                FusionMode::Concat => Some(Affine::init(m + 3, m, rng)),
            },
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.depth_mlp[0].collect(&format!("{prefix}depth_mlp.0"), &mut out);
        self.depth_mlp[1].collect(&format!("{prefix}depth_mlp.1"), &mut out);
        for (i, a) in self.stem.iter().enumerate() {
            a.collect(&format!("{prefix}stem.{i}"), &mut out);
        }
        self.rot_head.collect(&format!("{prefix}rot_head"), &mut out);
        self.trans_head.collect(&format!("{prefix}trans_head"), &mut out);
        self.embed_mlp[0].collect(&format!("{prefix}embed_mlp.0"), &mut out);
        self.embed_mlp[1].collect(&format!("{prefix}embed_mlp.1"), &mut out);
        if let Some(p) = &self.concat_proj {
            p.collect(&format!("{prefix}concat_proj"), &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named("").iter().map(|(_, t)| t.numel()).sum()
    }

    /// Closed-form parameter count of the default (depth + embedding)
    /// topology: 4 m^2 + 9 m + m h + h^2 + 8 h + 7.
    pub fn expected_param_count(m: usize, h: usize) -> usize {
        4 * m * m + 9 * m + m * h + h * h + 8 * h + 7
    }
}

pub struct LayerOutput {
    /// Same shape as the input tokens.
    pub tokens: Tensor,
    /// One scalar per patch token; in direct-xyz mode this is the
    /// regressed z component.
    pub pseudo_depth: Tensor,
    /// One entry per image/frame (a single shared entry under JT).
    pub extrinsics: Vec<CameraExtrinsics>,
    /// Recovered world coordinates, [.., N, 3].
    pub world_coords: Tensor,
}

/// Depth of each patch token, one scalar per token. Expects the CLS slot
/// to be excluded already. Requires a 1-wide depth head (depth mode).
pub fn estimate_pseudo_depth(tokens: &Tensor, params: &LayerParams) -> Result<Tensor> {
    if params.depth_mlp[1].out_dim() != 1 {
        return Err(Error::InvalidArgument(
            "pseudo-depth needs a 1-wide depth head; params are in direct-xyz mode".into(),
        ));
    }
    let d = coord_head(tokens, params)?;
    let mut shape = d.shape();
    shape.pop();
    d.reshape(&shape)
}

fn coord_head(tokens: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let h = params.depth_mlp[0].forward(tokens)?.relu();
    params.depth_mlp[1].forward(&h)
}

/// One camera estimated from all tokens of a single image (CLS excluded).
pub fn estimate_camera(tokens: &Tensor, params: &LayerParams) -> Result<CameraExtrinsics> {
    if tokens.rank() != 2 {
        return Err(Error::InvalidShape {
            op: "estimate_camera",
            msg: format!("expected [N, m], got {:?}", tokens.shape()),
        });
    }
    let n = tokens.shape()[0];
    let batched = tokens.reshape(&[1, n, tokens.shape()[1]])?;
    let (r, t) = camera_tensors(&batched, params, false)?;
    Ok(extract_extrinsics(&r, &t, 0))
}

/// Differentiable camera estimation. `joint` pools the stem over every
/// token of every batch item and yields a single camera; otherwise one
/// camera per leading-axis item.
fn camera_tensors(tokens: &Tensor, params: &LayerParams, joint: bool) -> Result<(Tensor, Tensor)> {
    let shape = tokens.shape(); // [B, N, m]
    let (b, n) = (shape[0], shape[1]);
    let mut x = tokens.clone();
    for (i, stage) in params.stem.iter().enumerate() {
        x = stage.forward(&x)?;
        if i < 3 {
            x = x.relu();
        }
    }
    let pooled = if joint {
        let h = x.shape()[2];
        x.reshape(&[b * n, h])?.mean(Some(0))?.reshape(&[1, h])?
    } else {
        x.mean(Some(1))?
    };
    let angles = params.rot_head.forward(&pooled)?; // [B|1, 3]
    let trans = params.trans_head.forward(&pooled)?; // [B|1, 3]
    let items = angles.shape()[0];
    let mut rotations = Vec::with_capacity(items);
    for i in 0..items {
        let a = angles.narrow(0, i, 1)?.reshape(&[3])?;
        rotations.push(rotation_from_angles(&a)?.reshape(&[1, 3, 3])?);
    }
    let r = Tensor::concat(&rotations, 0)?;
    Ok((r, trans))
}

/// Differentiable R = Rz(yaw) * Ry(pitch) * Rx(roll) from an angle
/// 3-vector. Matches [`crate::geometry::euler_to_rotation`] exactly.
pub fn rotation_from_angles(angles: &Tensor) -> Result<Tensor> {
    if angles.shape() != vec![3] {
        return Err(Error::InvalidShape {
            op: "rotation_from_angles",
            msg: format!("expected [3], got {:?}", angles.shape()),
        });
    }
    let yaw = angles.narrow(0, 0, 1)?;
    let pitch = angles.narrow(0, 1, 1)?;
    let roll = angles.narrow(0, 2, 1)?;
    let zero = Tensor::zeros(&[1]);
    let one = Tensor::full(&[1], 1.0);
    let (sy, cy) = (yaw.sin(), yaw.cos());
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let (sr, cr) = (roll.sin(), roll.cos());
    let rz = Tensor::concat(
        &[
            cy.clone(),
            sy.neg(),
            zero.clone(),
            sy.clone(),
            cy.clone(),
            zero.clone(),
            zero.clone(),
            zero.clone(),
            one.clone(),
        ],
        0,
    )?
    .reshape(&[3, 3])?;
    let ry = Tensor::concat(
        &[
            cp.clone(),
            zero.clone(),
            sp.clone(),
            zero.clone(),
            one.clone(),
            zero.clone(),
            sp.neg(),
            zero.clone(),
            cp.clone(),
        ],
        0,
    )?
    .reshape(&[3, 3])?;
    let rx = Tensor::concat(
        &[
            one.clone(),
            zero.clone(),
            zero.clone(),
            zero.clone(),
            cr.clone(),
            sr.neg(),
            zero.clone(),
            sr.clone(),
            cr.clone(),
        ],
        0,
    )?
    .reshape(&[3, 3])?;
    rz.matmul(&ry)?.matmul(&rx)
}

fn extract_extrinsics(r: &Tensor, t: &Tensor, item: usize) -> CameraExtrinsics {
    let rd = r.to_vec();
    let td = t.to_vec();
    let base = item * 9;
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = rd[base + i * 3 + j];
        }
    }
    CameraExtrinsics {
        r: m,
        t: [td[item * 3], td[item * 3 + 1], td[item * 3 + 2]],
    }
}

/// Forward over a single image's tokens `[1+N, m]` (CLS first when
/// `has_cls`).
pub fn forward_image(
    tokens: &Tensor,
    has_cls: bool,
    grid: &PatchGrid,
    cfg: &LayerConfig,
    params: &LayerParams,
) -> Result<LayerOutput> {
    if tokens.rank() != 2 {
        return Err(Error::InvalidShape {
            op: "forward_image",
            msg: format!("expected rank-2 tokens, got {:?}", tokens.shape()),
        });
    }
    let shape = tokens.shape();
    let batched = tokens.reshape(&[1, shape[0], shape[1]])?;
    let out = forward_inner(&batched, has_cls, grid, cfg, params, false)?;
    let n = grid.len();
    Ok(LayerOutput {
        tokens: out.tokens.reshape(&shape)?,
        pseudo_depth: out.pseudo_depth.reshape(&[n])?,
        extrinsics: out.extrinsics,
        world_coords: out.world_coords.reshape(&[n, 3])?,
    })
}

/// Forward over a batch of images `[B, 1+N, m]`; cameras are estimated
/// per item.
pub fn forward_image_batch(
    tokens: &Tensor,
    has_cls: bool,
    grid: &PatchGrid,
    cfg: &LayerConfig,
    params: &LayerParams,
) -> Result<LayerOutput> {
    forward_inner(tokens, has_cls, grid, cfg, params, false)
}

/// Forward over a clip `[T, 1+N, m]`. Divided-Temporal estimates one
/// camera per frame; Joint-Temporal pools every spatio-temporal token
/// into a single camera shared by all frames.
pub fn forward_video(
    tokens: &Tensor,
    has_cls: bool,
    grid: &PatchGrid,
    cfg: &LayerConfig,
    params: &LayerParams,
) -> Result<LayerOutput> {
    let joint = cfg.video_strategy == VideoStrategy::Jt;
    forward_inner(tokens, has_cls, grid, cfg, params, joint)
}

fn forward_inner(
    tokens: &Tensor,
    has_cls: bool,
    grid: &PatchGrid,
    cfg: &LayerConfig,
    params: &LayerParams,
    joint_camera: bool,
) -> Result<LayerOutput> {
    cfg.validate()?;
    if tokens.rank() != 3 {
        return Err(Error::InvalidShape {
            op: "trl3d forward",
            msg: format!("expected [B, tokens, m], got {:?}", tokens.shape()),
        });
    }
    let shape = tokens.shape();
    let (b, total, m) = (shape[0], shape[1], shape[2]);
    if m != cfg.embed_dim {
        return Err(Error::ShapeMismatch {
            op: "trl3d token width",
            lhs: shape.clone(),
            rhs: vec![cfg.embed_dim],
        });
    }
    let n = grid.len();
    let expected = if has_cls { n + 1 } else { n };
    if total != expected {
        return Err(Error::InvalidShape {
            op: "trl3d forward",
            msg: format!("{total} tokens for a {}x{} grid (expected {expected})", grid.rows, grid.cols),
        });
    }

    let (cls, patches) = if has_cls {
        (Some(tokens.narrow(1, 0, 1)?), tokens.narrow(1, 1, n)?)
    } else {
        (None, tokens.clone())
    };

    let coords = coord_head(&patches, params)?; // [B, N, 1|3]
    let (r, t) = camera_tensors(&patches, params, joint_camera)?;

    let (world, pseudo_depth) = match cfg.coord_mode {
        CoordMode::Depth => {
            let z = coords.clone(); // [B, N, 1]
            let u = Tensor::from_vec(grid.u.clone(), &[n, 1])?;
            let v = Tensor::from_vec(grid.v.clone(), &[n, 1])?;
            let x = z.mul(&u)?.scale(1.0 / cfg.focal);
            let y = z.mul(&v)?.scale(1.0 / cfg.focal);
            let p_cam = Tensor::concat(&[x, y, z], 2)?; // [B, N, 3]
            // p_world = R^T (p_cam + t), written row-wise as (p + t) R
            let items = t.shape()[0];
            let shifted = p_cam.add(&t.reshape(&[items, 1, 3])?)?;
            let world = shifted.matmul(&r)?;
            (world, coords.reshape(&[b, n])?)
        }
        CoordMode::DirectXyz => {
            let z = coords.narrow(2, 2, 1)?.reshape(&[b, n])?;
            (coords, z)
        }
    };

    let fused = match cfg.fusion_mode {
        FusionMode::Embedding => {
            let e = params.embed_mlp[0].forward(&world)?.relu();
            let e = params.embed_mlp[1].forward(&e)?;
            patches.add(&e)?
        }
        FusionMode::Concat => {
            let proj = params
                .concat_proj
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("concat mode without concat_proj".into()))?;
            let cat = Tensor::concat(&[patches.clone(), world.clone()], 2)?;
            proj.forward(&cat)?.relu()
        }
    };

    let out_tokens = match cls {
        Some(c) => Tensor::concat(&[c, fused], 1)?,
        None => fused,
    };

    let items = t.shape()[0];
    let extrinsics = (0..items).map(|i| extract_extrinsics(&r, &t, i)).collect();

    Ok(LayerOutput {
        tokens: out_tokens,
        pseudo_depth,
        extrinsics,
        world_coords: world,
    })
}

/// Parameter-matched control: a residual two-layer MLP standing in for
/// the geometric layer in ablations. Hidden width is chosen so the
/// parameter count best matches the layer it replaces.
pub struct ControlMlp {
    pub l1: Affine,
    pub l2: Affine,
}

impl ControlMlp {
    pub fn init(embed_dim: usize, target_params: usize, rng: &mut Rng) -> ControlMlp {
        let m = embed_dim;
        // params(k) = 2 m k + k + m
        let k = ((target_params.saturating_sub(m)) / (2 * m + 1)).max(1);
        ControlMlp {
            l1: Affine::init(m, k, rng),
            l2: Affine::init(k, m, rng),
        }
    }

    /// x + W2 relu(W1 x + b1) + b2 on patch tokens; CLS passes through.
    pub fn forward(&self, tokens: &Tensor, has_cls: bool) -> Result<Tensor> {
        let (cls, patches) = if has_cls {
            let n = tokens.shape()[1] - 1;
            (Some(tokens.narrow(1, 0, 1)?), tokens.narrow(1, 1, n)?)
        } else {
            (None, tokens.clone())
        };
        let h = self.l1.forward(&patches)?.relu();
        let out = patches.add(&self.l2.forward(&h)?)?;
        match cls {
            Some(c) => Tensor::concat(&[c, out], 1),
            None => Ok(out),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.l1.collect(&format!("{prefix}l1"), &mut out);
        self.l2.collect(&format!("{prefix}l2"), &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count()
    }
}
