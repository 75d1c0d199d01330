//! Dataset generation command.

use super::write_csv;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::synthdata::{
    generate_alignment_dataset, generate_classification_dataset, save_alignment,
    save_classification, AlignGenConfig, ClassGenConfig,
};
use std::path::Path;

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let seed = cfg.get_u64("seed", 0)?;
    match cfg.get_str("data_kind", "classification").as_str() {
        "classification" => {
            let gen = ClassGenConfig {
                classes: cfg.get_usize("classes", 4)?,
                scenes_per_class: cfg.get_usize("scenes_per_class", 12)?,
                test_scenes_per_class: cfg.get_usize("test_scenes_per_class", 4)?,
                views_per_scene: cfg.get_usize("views_per_scene", 2)?,
                cameras_train: cfg.get_usize("cameras_train", 8)?,
                cameras_unseen: cfg.get_usize("cameras_unseen", 4)?,
                image_size: cfg.get_usize("image_size", 16)?,
                patch_size: cfg.get_usize("patch_size", 4)?,
                radius_min: cfg.get_f64("radius_min", 2.5)?,
                radius_max: cfg.get_f64("radius_max", 3.5)?,
            };
            let ds = generate_classification_dataset(&gen, seed)?;
            save_classification(out, &ds)?;
            write_csv(
                &out.join("counts.csv"),
                "split,samples",
                &[
                    format!("train,{}", ds.train.len()),
                    format!("test,{}", ds.test.len()),
                    format!("test_unseen,{}", ds.test_unseen.len()),
                ],
            )
        }
        "alignment" => {
            let gen = AlignGenConfig {
                train_pairs: cfg.get_usize("train_pairs", 8)?,
                test_pairs: cfg.get_usize("test_pairs", 4)?,
                frames: cfg.get_usize("frames", 24)?,
                static_camera_pool: cfg.get_usize("static_camera_pool", 4)?,
                trajectory_pool: cfg.get_usize("trajectory_pool", 4)?,
                image_size: cfg.get_usize("image_size", 16)?,
                patch_size: cfg.get_usize("patch_size", 4)?,
                radius_min: cfg.get_f64("radius_min", 2.5)?,
                radius_max: cfg.get_f64("radius_max", 3.5)?,
            };
            let ds = generate_alignment_dataset(&gen, seed)?;
            save_alignment(out, &ds)?;
            write_csv(
                &out.join("counts.csv"),
                "split,pairs,frames",
                &[
                    format!("train,{},{}", ds.train.len(), gen.frames),
                    format!("test_seen,{},{}", ds.test_seen.len(), gen.frames),
                    format!("test_unseen,{},{}", ds.test_unseen.len(), gen.frames),
                ],
            )
        }
        other => Err(Error::Config(format!("data_kind '{other}'"))),
    }
}
