//! Latent feature extractors, the domain discriminator and the weighted
//! domain loss. Source cells carry domain label 0 and target cells label 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{relu_backward, relu_elem, sigmoid};
use crate::numerics::Matrix;

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Which of the three extractors to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    SourceSpecific,
    Shared,
    TargetSpecific,
}

impl ExtractorKind {
    pub fn specific_for(domain: Domain) -> Self {
        match domain {
            Domain::Source => ExtractorKind::SourceSpecific,
            Domain::Target => ExtractorKind::TargetSpecific,
        }
    }
}

/// Glorot-uniform initialized matrix.
pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Two-layer perceptron: linear → ReLU → linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub pre: Matrix,
    pub hidden: Matrix,
    pub out: Matrix,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Matrix::zeros(input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, output),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w1: glorot(input, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(hidden, output, rng),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(1, self.b1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Matrix::zeros(1, self.b2.cols()),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<MlpCache> {
        if x.cols() != self.w1.rows() {
            return Err(Error::shape("mlp_forward", x.shape(), self.w1.shape()));
        }
        let mut pre = x.matmul(&self.w1)?;
        pre.add_row_broadcast(&self.b1)?;
        let hidden = relu_elem(&pre);
        let mut out = hidden.matmul(&self.w2)?;
        out.add_row_broadcast(&self.b2)?;
        Ok(MlpCache { pre, hidden, out })
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient
    /// when `need_input` is set.
    pub fn backward(
        &self,
        x: &Matrix,
        cache: &MlpCache,
        grad_out: &Matrix,
        grads: &mut Mlp,
        need_input: bool,
    ) -> Result<Option<Matrix>> {
        grads.w2.add_assign(&cache.hidden.t_matmul(grad_out)?)?;
        grads.b2.add_assign(&grad_out.col_sums())?;
        let grad_hidden = grad_out.matmul_t(&self.w2)?;
        let grad_pre = relu_backward(&cache.pre, &grad_hidden)?;
        grads.w1.add_assign(&x.t_matmul(&grad_pre)?)?;
        grads.b1.add_assign(&grad_pre.col_sums())?;
        if need_input {
            Ok(Some(grad_pre.matmul_t(&self.w1)?))
        } else {
            Ok(None)
        }
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Latent rows for every input cell.
pub fn extract(features: &Matrix, extractor: &Mlp) -> Result<Matrix> {
    Ok(extractor.forward(features)?.out)
}

/// Per-cell probability that a latent row came from the target domain.
pub fn discriminate(latents: &Matrix, disc: &Mlp) -> Result<Matrix> {
    if disc.output_width() != 1 {
        return Err(Error::shape(
            "discriminate",
            disc.w2.shape(),
            (disc.w2.rows(), 1),
        ));
    }
    Ok(disc.forward(latents)?.out.map(sigmoid))
}

/// Training-cell counts used to weight the two domains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBatch {
    pub source: usize,
    pub target: usize,
}

impl DomainBatch {
    pub fn new(source: usize, target: usize) -> Result<Self> {
        if source == 0 || target == 0 {
            return Err(Error::Batch(format!(
                "domain batch needs cells from both regions, got N_s={source}, N_t={target}"
            )));
        }
        Ok(Self { source, target })
    }

    /// `ρ = N_s / (N_s + N_t)`
    pub fn rho(&self) -> f64 {
        self.source as f64 / (self.source + self.target) as f64
    }

    pub fn weight(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Source => self.rho(),
            Domain::Target => 1.0 - self.rho(),
        }
    }
}

/// Mean binary cross-entropy of `probs` against a constant label.
pub fn bce(probs: &[f64], label: f64) -> f64 {
    let n = probs.len() as f64;
    let total: f64 = probs
        .iter()
        .map(|&p| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
        })
        .sum();
    total / n
}

/// Gradient of [`bce`] with respect to the pre-sigmoid logits.
/// Zero where the clamp is active.
pub fn bce_logit_grad(probs: &[f64], label: f64) -> Vec<f64> {
    let n = probs.len() as f64;
    probs
        .iter()
        .map(|&p| {
            if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                (p - label) / n
            } else {
                0.0
            }
        })
        .collect()
}

/// `ρ(L^s_com + L^s_spe) + (1−ρ)(L^t_com + L^t_spe)` with per-stream BCE.
pub fn domain_loss(
    com_source: &[f64],
    spe_source: &[f64],
    com_target: &[f64],
    spe_target: &[f64],
    batch: DomainBatch,
) -> Result<f64> {
    if com_source.len() != batch.source
        || spe_source.len() != batch.source
        || com_target.len() != batch.target
        || spe_target.len() != batch.target
    {
        return Err(Error::Batch(format!(
            "stream lengths ({}, {}, {}, {}) do not match N_s={}, N_t={}",
            com_source.len(),
            spe_source.len(),
            com_target.len(),
            spe_target.len(),
            batch.source,
            batch.target
        )));
    }
    let s = Domain::Source.label();
    let t = Domain::Target.label();
    let rho = batch.rho();
    Ok(rho * (bce(com_source, s) + bce(spe_source, s))
        + (1.0 - rho) * (bce(com_target, t) + bce(spe_target, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn to_vec(m: &Mlp) -> Vec<Matrix> {
        m.tensors().into_iter().cloned().collect()
    }

    fn from_vec(p: &[Matrix]) -> Mlp {
        Mlp {
            w1: p[0].clone(),
            b1: p[1].clone(),
            w2: p[2].clone(),
            b2: p[3].clone(),
        }
    }

    #[test]
    fn zero_extractor_gives_zero_latents() {
        let x = Matrix::filled(5, 4, 0.7);
        let e = Mlp::zeros(4, 3, 3);
        assert_eq!(extract(&x, &e).unwrap(), Matrix::zeros(5, 3));
    }

    #[test]
    fn identity_extractor_is_transparent_on_nonnegative_input() {
        let x = Matrix::from_rows(&[&[0.0, 1.0, 0.5], &[2.0, 0.0, 0.25]]);
        let e = Mlp {
            w1: Matrix::identity(3),
            b1: Matrix::zeros(1, 3),
            w2: Matrix::identity(3),
            b2: Matrix::zeros(1, 3),
        };
        assert_eq!(extract(&x, &e).unwrap(), x);
    }

    #[test]
    fn extractor_width_mismatch() {
        let e = Mlp::zeros(4, 3, 3);
        assert!(matches!(
            extract(&Matrix::zeros(2, 5), &e),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn extractor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(6, 5, &mut rng);
        let c = random(6, 4, &mut rng);
        let e = Mlp::init(5, 7, 4, &mut rng);
        // biases away from zero so ReLU kinks are not hit by the probe
        let mut e = e;
        e.b1 = random(1, 7, &mut rng).scale(0.3);
        let readout = |m: &Mlp| -> f64 {
            let out = extract(&x, m).unwrap();
            out.as_slice()
                .iter()
                .zip(c.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = e.forward(&x).unwrap();
        let mut g = e.zeros_like();
        e.backward(&x, &cache, &c, &mut g, false).unwrap();
        let r =
            finite_diff_check(|p| readout(&from_vec(p)), &to_vec(&e), &to_vec(&g), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_discriminator_is_half() {
        let d = Mlp::zeros(3, 3, 1);
        let p = discriminate(&Matrix::filled(4, 3, 2.0), &d).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn discriminator_range_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let l = random(8, 4, &mut rng).scale(3.0);
        let mut d = Mlp::init(4, 4, 1, &mut rng);
        d.b1 = random(1, 4, &mut rng).scale(0.3);
        let p = discriminate(&l, &d).unwrap();
        assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));

        // BCE against label 1 through the discriminator
        let loss = |m: &Mlp| -> f64 { bce(discriminate(&l, m).unwrap().as_slice(), 1.0) };
        let cache = d.forward(&l).unwrap();
        let probs = cache.out.map(sigmoid);
        let glogit = Matrix::from_vec(8, 1, bce_logit_grad(probs.as_slice(), 1.0)).unwrap();
        let mut g = d.zeros_like();
        d.backward(&l, &cache, &glogit, &mut g, false).unwrap();
        let r = finite_diff_check(|p| loss(&from_vec(p)), &to_vec(&d), &to_vec(&g), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn domain_loss_examples() {
        let b = DomainBatch::new(2, 2).unwrap();
        let hi = 1.0 - 1e-12;
        let lo = 1e-12;
        let l = domain_loss(&[lo, lo], &[lo, lo], &[hi, hi], &[hi, hi], b).unwrap();
        assert!(l < 1e-10, "{l}");
        let half = [0.5, 0.5];
        let l = domain_loss(&half, &half, &half, &half, b).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        assert_eq!(DomainBatch::new(3, 1).unwrap().rho(), 0.75);
    }

    #[test]
    fn domain_loss_errors() {
        assert!(matches!(DomainBatch::new(0, 3), Err(Error::Batch(_))));
        let b = DomainBatch::new(2, 1).unwrap();
        assert!(domain_loss(&[0.5], &[0.5], &[0.5], &[0.5], b).is_err());
    }

    #[test]
    fn domain_loss_is_permutation_invariant() {
        let b = DomainBatch::new(4, 3).unwrap();
        let cs = [0.1, 0.7, 0.3, 0.9];
        let ss = [0.2, 0.4, 0.6, 0.8];
        let ct = [0.5, 0.05, 0.95];
        let st = [0.33, 0.66, 0.99];
        let a = domain_loss(&cs, &ss, &ct, &st, b).unwrap();
        let b2 = domain_loss(
            &[0.9, 0.3, 0.1, 0.7],
            &[0.8, 0.2, 0.6, 0.4],
            &[0.95, 0.5, 0.05],
            &[0.99, 0.33, 0.66],
            b,
        )
        .unwrap();
        assert!((a - b2).abs() < 1e-14);
    }
}
