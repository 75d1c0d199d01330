//! Training objectives: softmax cross-entropy for classification and the
//! time-contrastive triplet loss for multi-view alignment.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// -log softmax(logits)[label] for a single example.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 1 {
        return Err(Error::InvalidShape {
            op: "cross_entropy",
            msg: format!("expected [K] logits, got {shape:?}"),
        });
    }
    if label >= shape[0] {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            shape[0]
        )));
    }
    let probs = logits.softmax(0)?;
    probs.narrow(0, label, 1)?.log()?.neg().sum(None)
}

/// Mean cross-entropy over a batch of logits `[B, K]`.
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::InvalidShape {
            op: "cross_entropy_batch",
            msg: format!("logits {shape:?} vs {} labels", labels.len()),
        });
    }
    let (b, k) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; b * k];
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        onehot[i * k + label] = 1.0;
    }
    let mask = Tensor::from_vec(onehot, &[b, k])?;
    let picked = logits.softmax(1)?.mul(&mask)?.sum(Some(1))?;
    picked.log()?.neg().mean(None)
}

#[derive(Debug, Clone)]
pub struct TcnConfig {
    /// Frames within this distance of the anchor index count as positive.
    pub positive_window: usize,
    pub margin: f64,
    pub negatives_per_anchor: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            positive_window: 3,
            margin: 0.2,
            negatives_per_anchor: 1,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.positive_window < 1 || self.margin <= 0.0 || self.negatives_per_anchor < 1 {
            return Err(Error::InvalidArgument(format!(
                "tcn config needs positive_window >= 1, margin > 0, negatives >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Time-contrastive triplet loss between two synchronized embedding
/// sequences `[T, m]`. For each anchor frame i of `anchors`, a positive
/// frame p with |p - i| <= window and negatives n with |n - i| > window
/// are drawn from `others`; the loss is the mean hinge
/// max(0, ||a_i - b_p||^2 - ||a_i - b_n||^2 + margin).
///
/// Draw order per anchor: positive first, then the negatives.
pub fn tcn_loss(
    anchors: &Tensor,
    others: &Tensor,
    cfg: &TcnConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let a_shape = anchors.shape();
    let b_shape = others.shape();
    if a_shape.len() != 2 || a_shape != b_shape {
        return Err(Error::ShapeMismatch {
            op: "tcn_loss views",
            lhs: a_shape,
            rhs: b_shape,
        });
    }
    let t = a_shape[0];
    let w = cfg.positive_window;
    if t < 2 * w + 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence of {t} frames is shorter than 2*positive_window+2 = {}",
            2 * w + 2
        )));
    }

    let mut pos_sel = vec![0.0; t * t];
    let mut neg_sels = vec![vec![0.0; t * t]; cfg.negatives_per_anchor];
    for i in 0..t {
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(t - 1);
        let p = lo + rng.below(hi - lo + 1);
        pos_sel[i * t + p] = 1.0;
        // negatives: anything outside the window
        let n_candidates = t - (hi - lo + 1);
        for sel in neg_sels.iter_mut() {
            let mut pick = rng.below(n_candidates);
            if pick >= lo {
                pick += hi - lo + 1;
            }
            sel[i * t + pick] = 1.0;
        }
    }

    let pos = Tensor::from_vec(pos_sel, &[t, t])?.matmul(others)?;
    let d_pos = squared_distance_rows(anchors, &pos)?;
    let mut hinges = Vec::with_capacity(cfg.negatives_per_anchor);
    for sel in neg_sels {
        let neg = Tensor::from_vec(sel, &[t, t])?.matmul(others)?;
        let d_neg = squared_distance_rows(anchors, &neg)?;
        hinges.push(d_pos.sub(&d_neg)?.add_scalar(cfg.margin).relu());
    }
    Tensor::concat(&hinges, 0)?.mean(None)
}

fn squared_distance_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.sub(b)?;
    d.mul(&d)?.sum(Some(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::zeros(&[10]);
        let loss = cross_entropy(&logits, 3).unwrap().item();
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn dominant_logit_drives_loss_to_zero() {
        let logits = Tensor::from_vec(vec![30.0, 0.0, 0.0], &[3]).unwrap();
        assert!(cross_entropy(&logits, 0).unwrap().item() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let logits = Tensor::zeros(&[3]);
        assert!(cross_entropy(&logits, 3).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = Tensor::from_vec(vec![0.5, -1.0, 2.0], &[3])
            .unwrap()
            .with_grad();
        let loss = cross_entropy(&logits, 2).unwrap();
        backward(&loss).unwrap();
        let g = logits.grad().unwrap();
        let probs = logits.detach().softmax(0).unwrap().to_vec();
        for k in 0..3 {
            let expect = probs[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((g[k] - expect).abs() < 1e-12);
        }

        // finite differences agree
        let base = [0.5, -1.0, 2.0];
        for i in 0..3 {
            let f = |v: &[f64]| {
                cross_entropy(&Tensor::from_vec(v.to_vec(), &[3]).unwrap(), 2)
                    .unwrap()
                    .item()
            };
            let mut plus = base;
            plus[i] += 1e-6;
            let mut minus = base;
            minus[i] -= 1e-6;
            let num = (f(&plus) - f(&minus)) / 2e-6;
            assert!((g[i] - num).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_form_matches_single_mean() {
        let logits = Tensor::from_vec(vec![0.5, -1.0, 2.0, 1.0, 1.0, -2.0], &[2, 3]).unwrap();
        let batch = cross_entropy_batch(&logits, &[2, 0]).unwrap().item();
        let a = cross_entropy(&logits.narrow(0, 0, 1).unwrap().reshape(&[3]).unwrap(), 2)
            .unwrap()
            .item();
        let b = cross_entropy(&logits.narrow(0, 1, 1).unwrap().reshape(&[3]).unwrap(), 0)
            .unwrap()
            .item();
        assert!((batch - (a + b) / 2.0).abs() < 1e-12);
    }

    fn rows(data: &[&[f64]]) -> Tensor {
        let m = data[0].len();
        let flat: Vec<f64> = data.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(flat, &[data.len(), m]).unwrap()
    }

    #[test]
    fn short_sequence_is_an_error() {
        let cfg = TcnConfig {
            positive_window: 1,
            ..TcnConfig::default()
        };
        let a = rows(&[&[0.0], &[1.0], &[2.0]]);
        let mut rng = Rng::new(0);
        assert!(tcn_loss(&a, &a, &cfg, &mut rng).is_err());
    }

    #[test]
    fn satisfied_margins_give_zero_loss() {
        // identical views on a steady ramp: any positive is at most 1
        // away, any negative at least 2 away, so every hinge clears the
        // margin and the loss is exactly zero
        let cfg = TcnConfig {
            positive_window: 1,
            margin: 0.2,
            negatives_per_anchor: 1,
        };
        let v = rows(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0]]);
        let mut rng = Rng::new(1);
        let loss = tcn_loss(&v, &v, &cfg, &mut rng).unwrap().item();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn equidistant_positive_and_negative_give_margin() {
        // all rows of the other view identical: d_pos == d_neg for any
        // draw, so every hinge equals exactly the margin
        let cfg = TcnConfig {
            positive_window: 1,
            margin: 0.2,
            negatives_per_anchor: 2,
        };
        let a = rows(&[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 2.0], &[0.5, 0.5]]);
        let same: &[f64] = &[3.0, -1.0];
        let b = rows(&[same, same, same, same]);
        let mut rng = Rng::new(2);
        let loss = tcn_loss(&a, &b, &cfg, &mut rng).unwrap().item();
        assert!((loss - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fixed_rng_case_matches_hand_computation() {
        // T=4, w=1, seed 7. Recorded draws (positive then negative per
        // anchor): p = [1, 0, 2, 3], n = [2, 3, 0, 0].
        // 1-d embeddings a = [0, 1, 2, 3], b = [0, 2, 4, 6], margin 0.5:
        //   i=0: d_pos = (0-2)^2 = 4, d_neg = (0-4)^2 = 16 -> hinge 0
        //   i=1: d_pos = (1-0)^2 = 1, d_neg = (1-6)^2 = 25 -> hinge 0
        //   i=2: d_pos = (2-4)^2 = 4, d_neg = (2-0)^2 = 4  -> hinge 0.5
        //   i=3: d_pos = (3-6)^2 = 9, d_neg = (3-0)^2 = 9  -> hinge 0.5
        // mean = 1.0 / 4 = 0.25
        let cfg = TcnConfig {
            positive_window: 1,
            margin: 0.5,
            negatives_per_anchor: 1,
        };
        let a = rows(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let b = rows(&[&[0.0], &[2.0], &[4.0], &[6.0]]);
        let drawn: Vec<usize> = {
            // replicate the documented draw sequence to keep the comment honest
            let mut r = Rng::new(7);
            let mut out = Vec::new();
            for i in 0..4usize {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(3);
                out.push(lo + r.below(hi - lo + 1)); // positive
                let mut pick = r.below(4 - (hi - lo + 1));
                if pick >= lo {
                    pick += hi - lo + 1;
                }
                out.push(pick); // negative
            }
            out
        };
        assert_eq!(drawn, vec![1, 2, 0, 3, 2, 0, 3, 0]);
        let mut rng = Rng::new(7);
        let loss = tcn_loss(&a, &b, &cfg, &mut rng).unwrap().item();
        assert!((loss - 0.25).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn loss_is_invariant_under_joint_orthogonal_transform() {
        let cfg = TcnConfig {
            positive_window: 1,
            margin: 0.3,
            negatives_per_anchor: 1,
        };
        let a = rows(&[
            &[1.0, 0.0, 0.5],
            &[0.0, 1.0, -0.5],
            &[2.0, 1.0, 0.0],
            &[-1.0, 0.5, 1.0],
            &[0.3, -0.7, 0.2],
            &[1.5, 1.5, -1.0],
        ]);
        let b = rows(&[
            &[0.9, 0.1, 0.4],
            &[0.1, 1.1, -0.4],
            &[1.9, 0.9, 0.1],
            &[-0.9, 0.4, 1.1],
            &[0.2, -0.6, 0.3],
            &[1.4, 1.6, -0.9],
        ]);
        let rot = crate::geometry::euler_to_rotation(crate::geometry::EulerAngles::new(
            0.7, -0.3, 1.1,
        ));
        let apply = |t: &Tensor| {
            let flat = t.to_vec();
            let mut out = Vec::with_capacity(flat.len());
            for row in flat.chunks(3) {
                let v = crate::geometry::mat_vec(&rot, &[row[0], row[1], row[2]]);
                out.extend_from_slice(&v);
            }
            Tensor::from_vec(out, &[6, 3]).unwrap()
        };
        let l1 = tcn_loss(&a, &b, &cfg, &mut Rng::new(5)).unwrap().item();
        let l2 = tcn_loss(&apply(&a), &apply(&b), &cfg, &mut Rng::new(5))
            .unwrap()
            .item();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn tcn_gradient_matches_finite_differences() {
        let cfg = TcnConfig {
            positive_window: 1,
            margin: 0.4,
            negatives_per_anchor: 1,
        };
        let a_data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b_data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.4).cos()).collect();
        let a = Tensor::from_vec(a_data.clone(), &[6, 2]).unwrap().with_grad();
        let b = Tensor::from_vec(b_data.clone(), &[6, 2]).unwrap().with_grad();
        let loss = tcn_loss(&a, &b, &cfg, &mut Rng::new(9)).unwrap();
        backward(&loss).unwrap();
        let (ga, gb) = (a.grad().unwrap(), b.grad().unwrap());

        let eps = 1e-6;
        for i in 0..12 {
            let mut plus = a_data.clone();
            plus[i] += eps;
            let mut minus = a_data.clone();
            minus[i] -= eps;
            let f = |v: Vec<f64>| {
                tcn_loss(
                    &Tensor::from_vec(v, &[6, 2]).unwrap(),
                    &Tensor::from_vec(b_data.clone(), &[6, 2]).unwrap(),
                    &cfg,
                    &mut Rng::new(9),
                )
                .unwrap()
                .item()
            };
            let num = (f(plus) - f(minus)) / (2.0 * eps);
            assert!((ga[i] - num).abs() < 1e-5, "a[{i}]: {} vs {num}", ga[i]);
        }
        for i in 0..12 {
            let mut plus = b_data.clone();
            plus[i] += eps;
            let mut minus = b_data.clone();
            minus[i] -= eps;
            let f = |v: Vec<f64>| {
                tcn_loss(
                    &Tensor::from_vec(a_data.clone(), &[6, 2]).unwrap(),
                    &Tensor::from_vec(v, &[6, 2]).unwrap(),
                    &cfg,
                    &mut Rng::new(9),
                )
                .unwrap()
                .item()
            };
            let num = (f(plus) - f(minus)) / (2.0 * eps);
            assert!((gb[i] - num).abs() < 1e-5, "b[{i}]: {} vs {num}", gb[i]);
        }
    }
}
