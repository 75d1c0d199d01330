//! One-command ablation sweep over the architecture variants: plain
//! backbone, parameter-matched MLP control, the geometric layer, and its
//! direct-xyz and concat-fusion variants, each trained over several seeds
//! on the classification task.

use super::train::{accuracy, classify_hyper, train_classifier};
use super::{backbone_from_config, write_csv};
use crate::backbone::{LayerKind, Model};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layer::{CoordMode, FusionMode};
use crate::rng::Rng;
use crate::synthdata::load_classification;
use std::path::Path;

pub const VARIANTS: &[&str] = &["baseline", "mlp_control", "trl3d", "direct_xyz", "concat"];

pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_classification(Path::new(&cfg.require_str("dataset")?))?;
    let num_classes = cfg.get_usize("num_classes", ds.config.classes)?;
    let base = backbone_from_config(cfg, num_classes)?;
    if base.insert_at.is_empty() {
        return Err(Error::Config(
            "ablate needs a non-empty insert_at for the layer variants".into(),
        ));
    }
    let hyper = classify_hyper(cfg)?;
    let seeds = cfg.get_usize("ablate_seeds", 3)?;
    let seed0 = cfg.get_u64("seed", 0)?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &variant in VARIANTS {
        let mut bcfg = base.clone();
        match variant {
            "baseline" => bcfg.insert_at = Vec::new(),
            "mlp_control" => bcfg.layer_kind = LayerKind::MlpControl,
            "trl3d" => {
                bcfg.layer_kind = LayerKind::Trl3d;
                bcfg.layer_cfg.coord_mode = CoordMode::Depth;
                bcfg.layer_cfg.fusion_mode = FusionMode::Embedding;
            }
            "direct_xyz" => {
                bcfg.layer_kind = LayerKind::Trl3d;
                bcfg.layer_cfg.coord_mode = CoordMode::DirectXyz;
            }
            "concat" => {
                bcfg.layer_kind = LayerKind::Trl3d;
                bcfg.layer_cfg.fusion_mode = FusionMode::Concat;
            }
            _ => unreachable!(),
        }
        let mut sum_test = 0.0;
        let mut sum_unseen = 0.0;
        for s in 0..seeds {
            let seed = seed0 + s as u64;
            let model = Model::init(bcfg.clone(), &Rng::new(seed))?;
            let mut rng = Rng::new(seed).derive("train.classify");
            train_classifier(&model, &ds, &hyper, &mut rng)?;
            let acc_train = accuracy(&model, &ds.train)?;
            let acc_test = accuracy(&model, &ds.test)?;
            let acc_unseen = accuracy(&model, &ds.test_unseen)?;
            rows.push(format!(
                "{variant},{seed},{acc_train},{acc_test},{acc_unseen}"
            ));
            sum_test += acc_test;
            sum_unseen += acc_unseen;
        }
        summary.push(format!(
            "{variant},{},{}",
            sum_test / seeds as f64,
            sum_unseen / seeds as f64
        ));
    }
    write_csv(
        &out.join("ablation.csv"),
        "variant,seed,acc_train,acc_test,acc_unseen",
        &rows,
    )?;
    write_csv(
        &out.join("ablation_summary.csv"),
        "variant,mean_acc_test,mean_acc_unseen",
        &summary,
    )
}
