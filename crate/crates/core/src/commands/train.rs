//! Training commands and the shared loops the ablation sweep reuses.

use super::{init_model, save_model, write_csv};
use crate::backbone::Model;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy_batch, tcn_loss, TcnConfig};
use crate::rng::Rng;
use crate::synthdata::{
    load_alignment, load_classification, AlignmentDataset, ClassificationDataset, ViewSample,
};
use crate::tensor::{backward, Sgd, Tensor};
use std::path::Path;

pub(crate) struct ClassifyHyper {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch: usize,
}

pub(crate) fn classify_hyper(cfg: &RunConfig) -> Result<ClassifyHyper> {
    Ok(ClassifyHyper {
        lr: cfg.get_f64("lr", 0.05)?,
        momentum: cfg.get_f64("momentum", 0.9)?,
        steps: cfg.get_usize("steps", 300)?,
        batch: cfg.get_usize("batch", 8)?,
    })
}

pub(crate) fn tcn_from_config(cfg: &RunConfig) -> Result<TcnConfig> {
    let tcn = TcnConfig {
        positive_window: cfg.get_usize("tcn_positive_window", 3)?,
        margin: cfg.get_f64("tcn_margin", 0.2)?,
        negatives_per_anchor: cfg.get_usize("tcn_negatives", 1)?,
    };
    tcn.validate()?;
    Ok(tcn)
}

/// Minibatch SGD on softmax cross-entropy; returns the per-step losses.
pub(crate) fn train_classifier(
    model: &Model,
    ds: &ClassificationDataset,
    hyper: &ClassifyHyper,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if ds.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let params = model.param_tensors();
    let mut opt = Sgd::new(hyper.lr, hyper.momentum);
    let mut losses = Vec::with_capacity(hyper.steps);
    for _ in 0..hyper.steps {
        let mut images = Vec::with_capacity(hyper.batch);
        let mut labels = Vec::with_capacity(hyper.batch);
        for _ in 0..hyper.batch {
            let s = &ds.train[rng.below(ds.train.len())];
            images.push(s.image.clone());
            labels.push(s.class_id);
        }
        let logits = model.forward_images(&images)?.output;
        let loss = cross_entropy_batch(&logits, &labels)?;
        losses.push(loss.item());
        backward(&loss)?;
        opt.step(&params)?;
    }
    Ok(losses)
}

pub(crate) fn accuracy(model: &Model, samples: &[ViewSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(16) {
        let images: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
        let logits = model.forward_images(&images)?.output;
        let pred = logits.argmax(Some(1))?;
        for (i, s) in chunk.iter().enumerate() {
            if pred.get(i) as usize == s.class_id {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn cmd_train_classify(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_classification(Path::new(&cfg.require_str("dataset")?))?;
    let num_classes = cfg.get_usize("num_classes", ds.config.classes)?;
    let (model, seed) = init_model(cfg, num_classes)?;
    let hyper = classify_hyper(cfg)?;
    let mut rng = Rng::new(seed).derive("train.classify");
    let losses = train_classifier(&model, &ds, &hyper, &mut rng)?;

    let rows: Vec<String> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}"))
        .collect();
    write_csv(&out.join("loss.csv"), "step,loss", &rows)?;
    write_csv(
        &out.join("accuracy.csv"),
        "split,accuracy",
        &[
            format!("train,{}", accuracy(&model, &ds.train)?),
            format!("test,{}", accuracy(&model, &ds.test)?),
            format!("test_unseen,{}", accuracy(&model, &ds.test_unseen)?),
        ],
    )?;
    save_model(&out.join("checkpoint.bin"), &model)
}

/// Frame embeddings `[T, m]` for one view of a pair.
pub(crate) fn clip_embeddings(model: &Model, frames: &[ViewSample]) -> Result<Tensor> {
    let images: Vec<Tensor> = frames.iter().map(|f| f.image.clone()).collect();
    Ok(model.forward_clip(&images)?.output)
}

/// TCN training over synchronized pairs, batch = one pair, symmetric in
/// the two views. `on_progress(percent, step)` fires at 0/50/100%.
pub(crate) fn train_aligner(
    model: &Model,
    ds: &AlignmentDataset,
    tcn: &TcnConfig,
    epochs: usize,
    lr: f64,
    momentum: f64,
    rng: &mut Rng,
    mut on_progress: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<Vec<f64>> {
    if ds.train.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    let params = model.param_tensors();
    let mut opt = Sgd::new(lr, momentum);
    let mut losses = Vec::new();
    on_progress(0, model)?;
    let half = epochs.div_ceil(2);
    for epoch in 0..epochs {
        // deterministic shuffle of pair order
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for &p in &order {
            let pair = &ds.train[p];
            let ea = clip_embeddings(model, &pair.view_a)?;
            let eb = clip_embeddings(model, &pair.view_b)?;
            let l_ab = tcn_loss(&ea, &eb, tcn, rng)?;
            let l_ba = tcn_loss(&eb, &ea, tcn, rng)?;
            let loss = l_ab.add(&l_ba)?.scale(0.5);
            losses.push(loss.item());
            backward(&loss)?;
            opt.step(&params)?;
        }
        if epoch + 1 == half {
            on_progress(50, model)?;
        }
    }
    on_progress(100, model)?;
    Ok(losses)
}

pub fn cmd_train_align(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_alignment(Path::new(&cfg.require_str("dataset")?))?;
    let (model, seed) = init_model(cfg, 0)?;
    let tcn = tcn_from_config(cfg)?;
    let epochs = cfg.get_usize("epochs", 10)?;
    let lr = cfg.get_f64("lr", 0.05)?;
    let momentum = cfg.get_f64("momentum", 0.9)?;
    let mut rng = Rng::new(seed).derive("train.align");
    let losses = train_aligner(
        &model,
        &ds,
        &tcn,
        epochs,
        lr,
        momentum,
        &mut rng,
        |pct, m| save_model(&out.join(format!("ckpt_{pct:03}.bin")), m),
    )?;
    let rows: Vec<String> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}"))
        .collect();
    write_csv(&out.join("loss.csv"), "step,loss", &rows)?;
    save_model(&out.join("checkpoint.bin"), &model)
}
