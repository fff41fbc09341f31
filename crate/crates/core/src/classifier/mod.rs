//! Per-domain output heads, the prediction and joint losses, the full model
//! and its training loop.

mod check;
mod config;
mod model;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use check::{
    full_gradient_check, gradient_check_suite, gradient_check_variants, ToyPair, TOY_FEATURES,
};
pub use config::{AblationMode, ClassWeighting, FeatureMode, PropagationChoice, TrainConfig};
pub use model::{
    loss_and_gradients, loss_only, DomainInput, ForwardOptions, GradientParts, GrlMode,
    LossBreakdown, ModelParams, StepOutput,
};
pub use train::{infer_target, train, train_target_only, EpochRecord, TrainReport, TrainedModel};

use crate::disentangle::glorot;
use crate::error::{Error, Result};
use crate::numerics::ops::{log_softmax_backward, log_softmax_rows};
use crate::numerics::Matrix;

/// Two classes: index 0 = no wetland, index 1 = wetland.
pub const NUM_CLASSES: usize = 2;

/// Linear map from latent rows to two logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Matrix,
    pub b: Matrix,
}

impl Head {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(hidden, NUM_CLASSES),
            b: Matrix::zeros(1, NUM_CLASSES),
        }
    }

    pub fn init<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        Self {
            w: glorot(hidden, NUM_CLASSES, rng),
            b: Matrix::zeros(1, NUM_CLASSES),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.rows())
    }
}

/// `f = l W + b`
pub fn predict_logits(latents: &Matrix, head: &Head) -> Result<Matrix> {
    if latents.cols() != head.w.rows() {
        return Err(Error::shape(
            "predict_logits",
            latents.shape(),
            head.w.shape(),
        ));
    }
    let mut out = latents.matmul(&head.w)?;
    out.add_row_broadcast(&head.b)?;
    Ok(out)
}

/// Per-class weights for the masked cells. `Balanced` weights each class by
/// `N / (C · N_c)`; absent classes get weight 0.
pub fn class_weights(labels: &[u8], mask: &[usize], weighting: ClassWeighting) -> [f64; 2] {
    match weighting {
        ClassWeighting::Off => [1.0, 1.0],
        ClassWeighting::Balanced => {
            let mut counts = [0usize; 2];
            for &i in mask {
                counts[usize::from(labels[i])] += 1;
            }
            let n = mask.len() as f64;
            let mut w = [0.0; 2];
            for c in 0..2 {
                if counts[c] > 0 {
                    w[c] = n / (NUM_CLASSES as f64 * counts[c] as f64);
                }
            }
            w
        }
    }
}

fn check_mask(logits: &Matrix, labels: &[u8], mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Batch("prediction loss over an empty mask".into()));
    }
    if logits.cols() != NUM_CLASSES || labels.len() != logits.rows() {
        return Err(Error::shape(
            "nll_loss",
            logits.shape(),
            (labels.len(), NUM_CLASSES),
        ));
    }
    if let Some(&bad) = mask.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::Batch(format!("mask index {bad} out of range")));
    }
    Ok(())
}

/// Weighted mean over masked cells of `−log softmax(f)[y]`.
pub fn nll_loss(
    logits: &Matrix,
    labels: &[u8],
    mask: &[usize],
    weighting: ClassWeighting,
) -> Result<f64> {
    check_mask(logits, labels, mask)?;
    let logp = log_softmax_rows(&logits.select_rows(mask));
    Ok(nll_from_log_probs(&logp, labels, mask, weighting))
}

fn nll_from_log_probs(
    logp: &Matrix,
    labels: &[u8],
    mask: &[usize],
    weighting: ClassWeighting,
) -> f64 {
    let w = class_weights(labels, mask, weighting);
    let mut total = 0.0;
    let mut norm = 0.0;
    for (r, &i) in mask.iter().enumerate() {
        let y = usize::from(labels[i]);
        total -= w[y] * logp.get(r, y);
        norm += w[y];
    }
    total / norm
}

/// Loss value plus `∂loss/∂logits` (zero rows outside the mask).
pub fn nll_loss_with_grad(
    logits: &Matrix,
    labels: &[u8],
    mask: &[usize],
    weighting: ClassWeighting,
) -> Result<(f64, Matrix)> {
    check_mask(logits, labels, mask)?;
    let logp = log_softmax_rows(&logits.select_rows(mask));
    let loss = nll_from_log_probs(&logp, labels, mask, weighting);
    let w = class_weights(labels, mask, weighting);
    let norm: f64 = mask.iter().map(|&i| w[usize::from(labels[i])]).sum();
    let mut grad_logp = Matrix::zeros(mask.len(), NUM_CLASSES);
    for (r, &i) in mask.iter().enumerate() {
        let y = usize::from(labels[i]);
        grad_logp.set(r, y, -w[y] / norm);
    }
    let grad_rows = log_softmax_backward(&logp, &grad_logp)?;
    let mut grad = Matrix::zeros(logits.rows(), NUM_CLASSES);
    grad.scatter_add_rows(mask, &grad_rows)?;
    Ok((loss, grad))
}

/// `L^s_pred + L^t_pred + λ L_dom`
pub fn total_loss(source_pred: f64, target_pred: f64, domain: f64, lambda: f64) -> f64 {
    source_pred + target_pred + lambda * domain
}

/// Row-wise softmax probability of the wetland class.
pub fn wetland_probabilities(logits: &Matrix) -> Vec<f64> {
    let logp = log_softmax_rows(logits);
    (0..logp.rows()).map(|r| logp.get(r, 1).exp()).collect()
}

/// Argmax class per row; ties go to class 0.
pub fn argmax_classes(logits: &Matrix) -> Vec<u8> {
    (0..logits.rows())
        .map(|r| u8::from(logits.get(r, 1) > logits.get(r, 0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_gives_uniform() {
        let l = Matrix::filled(3, 4, 1.5);
        let logits = predict_logits(&l, &Head::zeros(4)).unwrap();
        assert_eq!(logits, Matrix::zeros(3, 2));
        assert!(wetland_probabilities(&logits).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn equal_columns_give_equal_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut head = Head::init(3, &mut rng);
        for r in 0..3 {
            let v = head.w.get(r, 0);
            head.w.set(r, 1, v);
        }
        let l = Matrix::from_rows(&[&[0.1, -2.0, 3.0], &[1.0, 1.0, 1.0]]);
        let f = predict_logits(&l, &head).unwrap();
        for r in 0..2 {
            assert_eq!(f.get(r, 0), f.get(r, 1));
        }
        assert!(predict_logits(&Matrix::zeros(2, 4), &head).is_err());
    }

    #[test]
    fn head_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let head = Head::init(4, &mut rng);
        let l = Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let labels = [0u8, 1, 1, 0, 1];
        let mask = [0usize, 1, 2, 4];
        let logits = predict_logits(&l, &head).unwrap();
        let (_, gl) = nll_loss_with_grad(&logits, &labels, &mask, ClassWeighting::Off).unwrap();
        let gw = l.t_matmul(&gl).unwrap();
        let gb = gl.col_sums();
        let loss = |p: &[Matrix]| {
            let h = Head {
                w: p[0].clone(),
                b: p[1].clone(),
            };
            nll_loss(
                &predict_logits(&l, &h).unwrap(),
                &labels,
                &mask,
                ClassWeighting::Off,
            )
            .unwrap()
        };
        let r =
            finite_diff_check(loss, &[head.w.clone(), head.b.clone()], &[gw, gb], 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn nll_examples() {
        let uniform = Matrix::zeros(4, 2);
        let labels = [0u8, 1, 0, 1];
        let l = nll_loss(&uniform, &labels, &[0, 1, 2, 3], ClassWeighting::Off).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let sharp = Matrix::from_rows(&[&[50.0, -50.0], &[-50.0, 50.0]]);
        let l = nll_loss(&sharp, &[0, 1], &[0, 1], ClassWeighting::Off).unwrap();
        assert!(l < 1e-40);

        // only cell 0 counts
        let mixed = Matrix::from_rows(&[&[0.0, 0.0], &[100.0, -100.0]]);
        let l = nll_loss(&mixed, &[0, 1], &[0], ClassWeighting::Off).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        assert!(matches!(
            nll_loss(&uniform, &labels, &[], ClassWeighting::Off),
            Err(Error::Batch(_))
        ));
    }

    #[test]
    fn balanced_weights_equalize_classes() {
        let labels = [0u8, 0, 0, 1];
        let w = class_weights(&labels, &[0, 1, 2, 3], ClassWeighting::Balanced);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(w[1], 2.0);
        let only_neg = class_weights(&labels, &[0, 1], ClassWeighting::Balanced);
        assert_eq!(only_neg, [0.5, 0.0]);
        // a confident wrong answer on the rare class costs more when balanced
        let logits = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let off = nll_loss(&logits, &labels, &[0, 1, 2, 3], ClassWeighting::Off).unwrap();
        let bal = nll_loss(&logits, &labels, &[0, 1, 2, 3], ClassWeighting::Balanced).unwrap();
        assert!(bal > off);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 2.0, 5.0, 0.2), 4.0);
        assert_eq!(total_loss(1.0, 2.0, 5.0, 0.0), 3.0);
        assert_eq!(TrainConfig::with_seed(0).lambda, 0.2);
        // linear in lambda
        let at = |lam| total_loss(0.7, 0.4, 1.3, lam);
        assert!(((at(0.4) - at(0.2)) - (at(0.2) - at(0.0))).abs() < 1e-15);
    }
}
