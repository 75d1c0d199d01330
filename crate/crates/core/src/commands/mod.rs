//! CLI command implementations. Every command is a pure function of
//! (config, dataset bytes): identical config + seed reruns produce
//! byte-identical CSVs and checkpoints. Outputs land in the run directory
//! together with a manifest echoing the resolved configuration.

mod ablate;
mod eval;
mod gen_data;
mod gradcheck_cmd;
mod train;

pub use ablate::cmd_ablate;
pub use eval::{cmd_eval_align, cmd_eval_camera, cmd_eval_depth};
pub use gen_data::cmd_gen_data;
pub use gradcheck_cmd::cmd_gradcheck;
pub use train::{cmd_train_align, cmd_train_classify};

use crate::backbone::{BackboneConfig, LayerKind, Model};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layer::{CoordMode, FusionMode, LayerConfig, VideoStrategy};
use crate::rng::Rng;
use std::fs;
use std::path::{Path, PathBuf};

pub fn run_command(name: &str, cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let out = match out {
        Some(p) => p,
        None => default_out_dir(name, cfg)?,
    };
    fs::create_dir_all(&out)?;
    match name {
        "gen-data" => cmd_gen_data(cfg, &out)?,
        "train-classify" => cmd_train_classify(cfg, &out)?,
        "train-align" => cmd_train_align(cfg, &out)?,
        "eval-align" => cmd_eval_align(cfg, &out)?,
        "eval-depth" => cmd_eval_depth(cfg, &out)?,
        "eval-camera" => cmd_eval_camera(cfg, &out)?,
        "gradcheck" => cmd_gradcheck(cfg, &out)?,
        "ablate" => cmd_ablate(cfg, &out)?,
        other => return Err(Error::Config(format!("unknown command '{other}'"))),
    }
    write_manifest(&out, cfg)?;
    Ok(out)
}

fn default_out_dir(name: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let base = cfg.get_str("out_dir", "runs");
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(PathBuf::from(base).join(format!("{name}-{stamp}")))
}

pub(crate) fn write_manifest(out: &Path, cfg: &RunConfig) -> Result<()> {
    let body = format!(
        "library_version = {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.resolved_dump()
    );
    fs::write(out.join("manifest.txt"), body)?;
    Ok(())
}

/// CSV with a mandatory header row, '.', ',', '\n', UTF-8.
pub(crate) fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut body = String::with_capacity(rows.len() * 32 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

pub(crate) fn backbone_from_config(cfg: &RunConfig, num_classes: usize) -> Result<BackboneConfig> {
    let embed_dim = cfg.get_usize("embed_dim", 48)?;
    let mut layer_cfg = LayerConfig::new(embed_dim);
    layer_cfg.focal = cfg.get_f64("focal", 1.0)?;
    layer_cfg.stem_hidden = cfg.get_usize("stem_hidden", 32)?;
    layer_cfg.coord_mode = match cfg.get_str("coord_mode", "depth").as_str() {
        "depth" => CoordMode::Depth,
        "direct_xyz" => CoordMode::DirectXyz,
        other => return Err(Error::Config(format!("coord_mode '{other}'"))),
    };
    layer_cfg.fusion_mode = match cfg.get_str("fusion_mode", "embedding").as_str() {
        "embedding" => FusionMode::Embedding,
        "concat" => FusionMode::Concat,
        other => return Err(Error::Config(format!("fusion_mode '{other}'"))),
    };
    layer_cfg.video_strategy = match cfg.get_str("video_strategy", "dt").as_str() {
        "dt" => VideoStrategy::Dt,
        "jt" => VideoStrategy::Jt,
        other => return Err(Error::Config(format!("video_strategy '{other}'"))),
    };
    let layer_kind = match cfg.get_str("layer_kind", "trl3d").as_str() {
        "trl3d" => LayerKind::Trl3d,
        "mlp_control" => LayerKind::MlpControl,
        other => return Err(Error::Config(format!("layer_kind '{other}'"))),
    };
    Ok(BackboneConfig {
        image_size: cfg.get_usize("image_size", 32)?,
        patch_size: cfg.get_usize("patch_size", 4)?,
        depth: cfg.get_usize("depth", 6)?,
        heads: cfg.get_usize("heads", 3)?,
        embed_dim,
        insert_at: cfg.get_usize_list("insert_at", "2")?,
        num_classes,
        layer_cfg,
        layer_kind,
    })
}

pub(crate) fn init_model(cfg: &RunConfig, num_classes: usize) -> Result<(Model, u64)> {
    let seed = cfg.get_u64("seed", 0)?;
    let bcfg = backbone_from_config(cfg, num_classes)?;
    Ok((Model::init(bcfg, &Rng::new(seed))?, seed))
}

pub(crate) fn save_model(path: &Path, model: &Model) -> Result<()> {
    let entries = checkpoint::entries_from_params(&model.named_params());
    checkpoint::save(path, &entries)
}

pub(crate) fn load_into_model(path: &Path, model: &Model) -> Result<()> {
    let entries = checkpoint::load(path)?;
    checkpoint::restore_params(&entries, &model.named_params())
}
