//! Evaluation commands: alignment metrics over Seen/Unseen camera splits,
//! depth correlation against ground truth, and camera-trajectory
//! disparity at training checkpoints.

use super::train::clip_embeddings;
use super::{init_model, load_into_model, write_csv};
use crate::backbone::{LayerKind, Model};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layer::VideoStrategy;
use crate::metrics::{align_report, camera_eval, fisher_mean_r, pearson_r};
use crate::rng::Rng;
use crate::synthdata::{load_alignment, AlignmentPair};
use crate::tensor::Tensor;
use std::path::Path;

fn embedding_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let shape = t.shape();
    let (n, m) = (shape[0], shape[1]);
    let flat = t.to_vec();
    (0..n).map(|i| flat[i * m..(i + 1) * m].to_vec()).collect()
}

/// Alignment metrics are reported in the A -> B (static view to moving
/// view) direction; column names carry the `_uv` suffix to record that.
pub fn cmd_eval_align(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_alignment(Path::new(&cfg.require_str("dataset")?))?;
    let (model, _) = init_model(cfg, 0)?;
    load_into_model(Path::new(&cfg.require_str("checkpoint")?), &model)?;

    let header = "pair_id,n_frames,alignment_error_uv,cycle_error_uv,kendall_tau_uv";
    let mut summary_rows = Vec::new();
    for (split, pairs, file) in [
        ("seen", &ds.test_seen, "align_seen.csv"),
        ("unseen", &ds.test_unseen, "align_unseen.csv"),
    ] {
        let mut rows = Vec::new();
        let mut sums = (0.0, 0.0, 0.0);
        for pair in pairs {
            let u = embedding_rows(&clip_embeddings(&model, &pair.view_a)?);
            let v = embedding_rows(&clip_embeddings(&model, &pair.view_b)?);
            let rep = align_report(&u, &v)?;
            rows.push(format!(
                "{},{},{},{},{}",
                pair.id,
                u.len(),
                rep.alignment_error,
                rep.cycle_error,
                rep.kendall_tau
            ));
            sums.0 += rep.alignment_error;
            sums.1 += rep.cycle_error;
            sums.2 += rep.kendall_tau;
        }
        write_csv(&out.join(file), header, &rows)?;
        let n = pairs.len().max(1) as f64;
        summary_rows.push(format!(
            "{split},{},{},{},{}",
            pairs.len(),
            sums.0 / n,
            sums.1 / n,
            sums.2 / n
        ));
    }
    write_csv(
        &out.join("align_summary.csv"),
        "split,pairs,mean_alignment_error,mean_cycle_error,mean_kendall_tau",
        &summary_rows,
    )
}

fn require_trl3d(model: &Model) -> Result<()> {
    if model.cfg.insert_at.is_empty() || model.cfg.layer_kind != LayerKind::Trl3d {
        return Err(Error::Config(
            "this evaluation needs a model with at least one trl3d layer".into(),
        ));
    }
    Ok(())
}

/// One evaluation subset = one view of one test pair: pseudo-depth and
/// ground-truth patch depth flattened over frames, empty patches excluded.
fn depth_subsets(model: &Model, pairs: &[AlignmentPair]) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
    let mut subsets = Vec::new();
    for pair in pairs {
        for view in [&pair.view_a, &pair.view_b] {
            let images: Vec<Tensor> = view.iter().map(|f| f.image.clone()).collect();
            let fwd = model.forward_clip(&images)?;
            let depth = &fwd.layer_outputs[0].pseudo_depth; // [T, N]
            let dv = depth.to_vec();
            let n = depth.shape()[1];
            let mut est = Vec::new();
            let mut gt = Vec::new();
            let mut total = 0usize;
            for (f, frame) in view.iter().enumerate() {
                let g = frame.gt_depth.to_vec();
                total += g.len();
                for (cell, &gd) in g.iter().enumerate() {
                    if gd.is_finite() {
                        est.push(dv[f * n + cell]);
                        gt.push(gd);
                    }
                }
            }
            let coverage = est.len() as f64 / total.max(1) as f64;
            subsets.push((est, gt, coverage));
        }
    }
    Ok(subsets)
}

fn fisher_over_subsets(values: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<(f64, usize, f64)> {
    let mut rs = Vec::new();
    let mut coverage = 0.0;
    for (est, gt, cov) in values {
        if est.len() < 2 {
            continue;
        }
        match pearson_r(est, gt) {
            Ok(r) => rs.push(r.clamp(-0.999_999, 0.999_999)),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
        coverage += cov;
    }
    if rs.is_empty() {
        return Err(Error::Degenerate("no usable depth subsets".into()));
    }
    let n = rs.len();
    Ok((fisher_mean_r(&rs)?, n, coverage / n as f64))
}

/// Depth correlation for the trained model, an untrained twin, and a
/// random-prediction baseline, Fisher-averaged across subsets.
pub fn cmd_eval_depth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_alignment(Path::new(&cfg.require_str("dataset")?))?;
    let (trained, seed) = init_model(cfg, 0)?;
    require_trl3d(&trained)?;
    load_into_model(Path::new(&cfg.require_str("checkpoint")?), &trained)?;
    let (untrained, _) = init_model(cfg, 0)?;

    let pairs = &ds.test_seen;
    let trained_sub = depth_subsets(&trained, pairs)?;
    let untrained_sub = depth_subsets(&untrained, pairs)?;
    // random baseline: uniform draws in place of the estimated depth
    let mut rng = Rng::new(seed).derive("depth.random.baseline");
    let random_sub: Vec<(Vec<f64>, Vec<f64>, f64)> = trained_sub
        .iter()
        .map(|(est, gt, cov)| {
            let rand: Vec<f64> = est.iter().map(|_| rng.uniform()).collect();
            (rand, gt.clone(), *cov)
        })
        .collect();

    let mut rows = Vec::new();
    for (name, sub) in [
        ("trained", &trained_sub),
        ("untrained", &untrained_sub),
        ("random", &random_sub),
    ] {
        let (r, n, cov) = fisher_over_subsets(sub)?;
        rows.push(format!("{name},{r},{n},{cov}"));
    }
    write_csv(
        &out.join("depth_corr.csv"),
        "model,fisher_r,subsets,coverage",
        &rows,
    )
}

/// Camera disparity of the moving view (view B) against ground truth, for
/// each checkpoint listed in `checkpoints` (comma separated).
pub fn cmd_eval_camera(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_alignment(Path::new(&cfg.require_str("dataset")?))?;
    let (model, _) = init_model(cfg, 0)?;
    require_trl3d(&model)?;
    if model.cfg.layer_cfg.video_strategy != VideoStrategy::Dt {
        return Err(Error::Config(
            "camera evaluation needs per-frame cameras (video_strategy = dt)".into(),
        ));
    }
    let list = cfg.require_str("checkpoints")?;
    let mut rows = Vec::new();
    for ckpt in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        load_into_model(Path::new(ckpt), &model)?;
        let mut pos_sum = 0.0;
        let mut ori_sum = 0.0;
        let mut n = 0usize;
        for pair in &ds.test_seen {
            let images: Vec<Tensor> = pair.view_b.iter().map(|f| f.image.clone()).collect();
            let fwd = model.forward_clip(&images)?;
            let est = &fwd.layer_outputs[0].extrinsics;
            let gt: Vec<_> = pair.view_b.iter().map(|f| f.extrinsics.clone()).collect();
            let rep = camera_eval(est, &gt)?;
            pos_sum += rep.position_disparity;
            ori_sum += rep.orientation_disparity;
            n += 1;
        }
        rows.push(format!(
            "{ckpt},{n},{},{}",
            pos_sum / n.max(1) as f64,
            ori_sum / n.max(1) as f64
        ));
    }
    write_csv(
        &out.join("camera_disparity.csv"),
        "checkpoint,pairs,position_disparity,orientation_disparity",
        &rows,
    )
}
