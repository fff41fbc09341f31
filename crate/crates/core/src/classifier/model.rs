use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassWeighting, FeatureMode, TrainConfig};
use super::{nll_loss_with_grad, predict_logits, total_loss, Head};
use crate::disentangle::{bce, bce_logit_grad, glorot, Domain, DomainBatch, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::grid::GridGraph;
use crate::numerics::ops::{grl_backward, sigmoid};
use crate::numerics::Matrix;
use crate::propagation::{
    propagate_backward, propagate_forward, PropagationConfig, PropagationTrace,
};

/// Every trainable array of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub specific_source: Mlp,
    pub shared: Mlp,
    pub specific_target: Mlp,
    pub discriminator: Mlp,
    pub attention_source: Matrix,
    pub attention_target: Matrix,
    pub head_source: Head,
    pub head_target: Head,
}

impl ModelParams {
    pub fn init(input_width: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            specific_source: Mlp::init(input_width, hidden, hidden, &mut rng),
            shared: Mlp::init(input_width, hidden, hidden, &mut rng),
            specific_target: Mlp::init(input_width, hidden, hidden, &mut rng),
            discriminator: Mlp::init(hidden, hidden, 1, &mut rng),
            attention_source: glorot(1, hidden, &mut rng),
            attention_target: glorot(1, hidden, &mut rng),
            head_source: Head::init(hidden, &mut rng),
            head_target: Head::init(hidden, &mut rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.shared.input_width()
    }

    pub fn hidden(&self) -> usize {
        self.shared.output_width()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            specific_source: self.specific_source.zeros_like(),
            shared: self.shared.zeros_like(),
            specific_target: self.specific_target.zeros_like(),
            discriminator: self.discriminator.zeros_like(),
            attention_source: Matrix::zeros(1, self.attention_source.cols()),
            attention_target: Matrix::zeros(1, self.attention_target.cols()),
            head_source: self.head_source.zeros_like(),
            head_target: self.head_target.zeros_like(),
        }
    }

    /// Stable, ordered parameter names.
    pub fn names() -> Vec<String> {
        let mut names = Vec::new();
        for m in [
            "specific_source",
            "shared",
            "specific_target",
            "discriminator",
        ] {
            for t in ["w1", "b1", "w2", "b2"] {
                names.push(format!("{m}.{t}"));
            }
        }
        names.push("attention_source".into());
        names.push("attention_target".into());
        for h in ["head_source", "head_target"] {
            names.push(format!("{h}.w"));
            names.push(format!("{h}.b"));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::with_capacity(22);
        out.extend(self.specific_source.tensors());
        out.extend(self.shared.tensors());
        out.extend(self.specific_target.tensors());
        out.extend(self.discriminator.tensors());
        out.push(&self.attention_source);
        out.push(&self.attention_target);
        out.push(&self.head_source.w);
        out.push(&self.head_source.b);
        out.push(&self.head_target.w);
        out.push(&self.head_target.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(22);
        out.extend(self.specific_source.tensors_mut());
        out.extend(self.shared.tensors_mut());
        out.extend(self.specific_target.tensors_mut());
        out.extend(self.discriminator.tensors_mut());
        out.push(&mut self.attention_source);
        out.push(&mut self.attention_target);
        out.push(&mut self.head_source.w);
        out.push(&mut self.head_source.b);
        out.push(&mut self.head_target.w);
        out.push(&mut self.head_target.b);
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        Self::names().into_iter().zip(self.tensors()).collect()
    }

    pub fn to_matrices(&self) -> Vec<Matrix> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Inverse of [`to_matrices`](Self::to_matrices); shapes must match `self`.
    pub fn with_matrices(&self, mats: &[Matrix]) -> Result<Self> {
        let mut out = self.clone();
        let slots = out.tensors_mut();
        if slots.len() != mats.len() {
            return Err(Error::shape(
                "with_matrices",
                (slots.len(), 1),
                (mats.len(), 1),
            ));
        }
        for (slot, m) in slots.into_iter().zip(mats) {
            slot.same_shape(m, "with_matrices")?;
            *slot = m.clone();
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn specific(&self, domain: Domain) -> &Mlp {
        match domain {
            Domain::Source => &self.specific_source,
            Domain::Target => &self.specific_target,
        }
    }

    fn specific_mut(&mut self, domain: Domain) -> &mut Mlp {
        match domain {
            Domain::Source => &mut self.specific_source,
            Domain::Target => &mut self.specific_target,
        }
    }

    pub fn attention(&self, domain: Domain) -> &Matrix {
        match domain {
            Domain::Source => &self.attention_source,
            Domain::Target => &self.attention_target,
        }
    }

    fn attention_mut(&mut self, domain: Domain) -> &mut Matrix {
        match domain {
            Domain::Source => &mut self.attention_source,
            Domain::Target => &mut self.attention_target,
        }
    }

    pub fn head(&self, domain: Domain) -> &Head {
        match domain {
            Domain::Source => &self.head_source,
            Domain::Target => &self.head_target,
        }
    }

    fn head_mut(&mut self, domain: Domain) -> &mut Head {
        match domain {
            Domain::Source => &mut self.head_source,
            Domain::Target => &mut self.head_target,
        }
    }

    /// `(l_spe, l_com)` for every cell of a region.
    pub fn latents(&self, domain: Domain, features: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((
            self.specific(domain).forward(features)?.out,
            self.shared.forward(features)?.out,
        ))
    }

    /// Class logits for every cell of a region, using that domain's
    /// extractor, attention vector and head.
    pub fn logits(
        &self,
        domain: Domain,
        features: &Matrix,
        graph: &GridGraph,
        options: &ForwardOptions,
    ) -> Result<Matrix> {
        let (spe, com) = self.latents(domain, features)?;
        let l0 = mix_latents(&spe, &com, options.features)?;
        let out = match &options.propagation {
            Some(cfg) => propagate_forward(&l0, graph, self.attention(domain), cfg)?
                .layers
                .pop()
                .expect("non-empty"),
            None => l0,
        };
        predict_logits(&out, self.head(domain))
    }
}

fn mix_latents(spe: &Matrix, com: &Matrix, mode: FeatureMode) -> Result<Matrix> {
    let (a, b) = match mode {
        FeatureMode::Both => (spe, com),
        FeatureMode::SharedOnly => (com, com),
        FeatureMode::SpecificOnly => (spe, spe),
    };
    crate::propagation::average_latents(a, b)
}

/// How gradients pass from the discriminator into the shared extractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GrlMode {
    /// Backward multiplies by `−mu`.
    Reverse(f64),
    /// No reversal; the shared extractor cooperates with the discriminator.
    Identity,
}

/// Switches that shape one forward/backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    pub lambda: f64,
    pub grl: GrlMode,
    pub domain_loss: bool,
    pub features: FeatureMode,
    pub propagation: Option<PropagationConfig>,
    pub class_weighting: ClassWeighting,
}

impl ForwardOptions {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            lambda: config.lambda,
            grl: GrlMode::Reverse(config.mu),
            domain_loss: config.domain_loss,
            features: config.features,
            propagation: config.propagation_config(),
            class_weighting: config.class_weighting,
        }
    }
}

/// One region's inputs to a training step.
#[derive(Clone, Copy, Debug)]
pub struct DomainInput<'a> {
    pub features: &'a Matrix,
    pub graph: &'a GridGraph,
    pub labels: &'a [u8],
    pub train: &'a [usize],
}

impl DomainInput<'_> {
    fn check(&self, params: &ModelParams) -> Result<()> {
        let n = self.graph.node_count();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::shape(
                "domain_input",
                self.features.shape(),
                (n, self.labels.len()),
            ));
        }
        if self.features.cols() != params.input_width() {
            return Err(Error::shape(
                "domain_input",
                self.features.shape(),
                (n, params.input_width()),
            ));
        }
        if self.train.is_empty() {
            return Err(Error::Batch("empty training mask".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub source_pred: f64,
    pub target_pred: f64,
    pub domain: f64,
    pub total: f64,
}

/// Gradient of the total loss, optionally split into the part flowing from
/// the prediction losses and the part flowing from `λ L_dom`.
#[derive(Clone, Debug)]
pub struct GradientParts {
    pub total: ModelParams,
    pub prediction: Option<ModelParams>,
    pub domain: Option<ModelParams>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    pub gradients: GradientParts,
    /// Target logits from this forward pass (parameters before the step).
    pub target_logits: Matrix,
}

struct DiscStream {
    input: Matrix,
    cache: MlpCache,
    probs: Vec<f64>,
}

impl DiscStream {
    fn run(disc: &Mlp, latents: &Matrix, rows: &[usize]) -> Result<Self> {
        let input = latents.select_rows(rows);
        let cache = disc.forward(&input)?;
        let probs = cache.out.as_slice().iter().map(|&z| sigmoid(z)).collect();
        Ok(Self {
            input,
            cache,
            probs,
        })
    }
}

struct DomainForward {
    domain: Domain,
    spe: MlpCache,
    com: MlpCache,
    trace: Option<PropagationTrace>,
    final_latents: Matrix,
    logits: Matrix,
    disc_spe: Option<DiscStream>,
    disc_com: Option<DiscStream>,
}

fn forward_domain(
    params: &ModelParams,
    domain: Domain,
    input: &DomainInput<'_>,
    options: &ForwardOptions,
    with_disc: bool,
) -> Result<DomainForward> {
    let spe = params.specific(domain).forward(input.features)?;
    let com = params.shared.forward(input.features)?;
    let l0 = mix_latents(&spe.out, &com.out, options.features)?;
    let (trace, final_latents) = match &options.propagation {
        Some(cfg) => {
            let t = propagate_forward(&l0, input.graph, params.attention(domain), cfg)?;
            let out = t.output().clone();
            (Some(t), out)
        }
        None => (None, l0),
    };
    let logits = predict_logits(&final_latents, params.head(domain))?;
    let (disc_spe, disc_com) = if with_disc {
        (
            Some(DiscStream::run(
                &params.discriminator,
                &spe.out,
                input.train,
            )?),
            Some(DiscStream::run(
                &params.discriminator,
                &com.out,
                input.train,
            )?),
        )
    } else {
        (None, None)
    };
    Ok(DomainForward {
        domain,
        spe,
        com,
        trace,
        final_latents,
        logits,
        disc_spe,
        disc_com,
    })
}

/// Upstream gradients at the two extractor outputs, kept per loss family.
struct ExtractorUpstream {
    spe_pred: Matrix,
    com_pred: Matrix,
    spe_dom: Matrix,
    com_dom: Matrix,
}

/// Backward of head, propagation and averaging; accumulates into `grads`
/// and returns the gradient at `(l_spe, l_com)`.
fn backward_prediction(
    params: &ModelParams,
    fwd: &DomainForward,
    input: &DomainInput<'_>,
    options: &ForwardOptions,
    grad_logits: &Matrix,
    grads: &mut ModelParams,
) -> Result<(Matrix, Matrix)> {
    let domain = fwd.domain;
    let head = params.head(domain);
    {
        let gh = grads.head_mut(domain);
        gh.w.add_assign(&fwd.final_latents.t_matmul(grad_logits)?)?;
        gh.b.add_assign(&grad_logits.col_sums())?;
    }
    let grad_final = grad_logits.matmul_t(&head.w)?;
    let grad_l0 = match (&options.propagation, &fwd.trace) {
        (Some(cfg), Some(trace)) => {
            let (gl0, ga) = propagate_backward(
                trace,
                input.graph,
                params.attention(domain),
                cfg,
                &grad_final,
            )?;
            grads.attention_mut(domain).add_assign(&ga)?;
            gl0
        }
        _ => grad_final,
    };
    let half = grad_l0.scale(0.5);
    let zeros = || Matrix::zeros(half.rows(), half.cols());
    Ok(match options.features {
        FeatureMode::Both => (half.clone(), half),
        FeatureMode::SharedOnly => (zeros(), half.add(&half)?),
        FeatureMode::SpecificOnly => (half.add(&half)?, zeros()),
    })
}

/// Backward of the two discriminator streams for one domain. Returns the
/// gradient at `(l_spe, l_com)` with the GRL applied on the shared stream.
fn backward_domain_streams(
    params: &ModelParams,
    fwd: &DomainForward,
    input: &DomainInput<'_>,
    scale: f64,
    grl: GrlMode,
    grads: &mut ModelParams,
) -> Result<(Matrix, Matrix)> {
    let label = fwd.domain.label();
    let n = fwd.spe.out.rows();
    let h = fwd.spe.out.cols();
    let mut out = Vec::with_capacity(2);
    for (stream, reverse) in [(&fwd.disc_spe, false), (&fwd.disc_com, true)] {
        let s = stream.as_ref().expect("discriminator streams present");
        let g: Vec<f64> = bce_logit_grad(&s.probs, label)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let glogit = Matrix::from_vec(g.len(), 1, g)?;
        let grad_in = params
            .discriminator
            .backward(&s.input, &s.cache, &glogit, &mut grads.discriminator, true)?
            .expect("requested");
        let grad_in = match (reverse, grl) {
            (true, GrlMode::Reverse(mu)) => grl_backward(&grad_in, mu),
            _ => grad_in,
        };
        let mut full = Matrix::zeros(n, h);
        full.scatter_add_rows(input.train, &grad_in)?;
        out.push(full);
    }
    let com = out.pop().expect("two streams");
    let spe = out.pop().expect("two streams");
    Ok((spe, com))
}

/// Joint loss and gradients for one step. `source = None` trains the target
/// branch alone, with no source terms and no domain loss.
pub fn loss_and_gradients(
    params: &ModelParams,
    source: Option<&DomainInput<'_>>,
    target: &DomainInput<'_>,
    options: &ForwardOptions,
    split_gradients: bool,
) -> Result<StepOutput> {
    target.check(params)?;
    if let Some(s) = source {
        s.check(params)?;
    }
    let with_disc = options.domain_loss && source.is_some();
    let batch = match source {
        Some(s) if with_disc => Some(DomainBatch::new(s.train.len(), target.train.len())?),
        _ => None,
    };

    let mut runs: Vec<(DomainForward, &DomainInput<'_>)> = Vec::with_capacity(2);
    if let Some(s) = source {
        runs.push((
            forward_domain(params, Domain::Source, s, options, with_disc)?,
            s,
        ));
    }
    runs.push((
        forward_domain(params, Domain::Target, target, options, with_disc)?,
        target,
    ));

    let mut losses = LossBreakdown::default();
    if let Some(b) = batch {
        let mut dom = 0.0;
        for (fwd, _) in &runs {
            let w = b.weight(fwd.domain);
            let label = fwd.domain.label();
            let spe = &fwd.disc_spe.as_ref().expect("present").probs;
            let com = &fwd.disc_com.as_ref().expect("present").probs;
            dom += w * (bce(com, label) + bce(spe, label));
        }
        losses.domain = dom;
    }

    let mut pred_grads = params.zeros_like();
    let mut dom_grads = params.zeros_like();
    let mut upstream: Vec<ExtractorUpstream> = Vec::with_capacity(2);
    for (fwd, input) in &runs {
        let (loss, glogits) = nll_loss_with_grad(
            &fwd.logits,
            input.labels,
            input.train,
            options.class_weighting,
        )?;
        match fwd.domain {
            Domain::Source => losses.source_pred = loss,
            Domain::Target => losses.target_pred = loss,
        }
        let (spe_pred, com_pred) =
            backward_prediction(params, fwd, input, options, &glogits, &mut pred_grads)?;
        let (spe_dom, com_dom) = match batch {
            Some(b) => {
                let scale = options.lambda * b.weight(fwd.domain);
                backward_domain_streams(params, fwd, input, scale, options.grl, &mut dom_grads)?
            }
            None => {
                let z = Matrix::zeros(spe_pred.rows(), spe_pred.cols());
                (z.clone(), z)
            }
        };
        upstream.push(ExtractorUpstream {
            spe_pred,
            com_pred,
            spe_dom,
            com_dom,
        });
    }
    losses.total = total_loss(
        losses.source_pred,
        losses.target_pred,
        losses.domain,
        options.lambda,
    );

    let gradients = if split_gradients {
        for ((fwd, input), up) in runs.iter().zip(&upstream) {
            let spe = params.specific(fwd.domain);
            spe.backward(
                input.features,
                &fwd.spe,
                &up.spe_pred,
                pred_grads.specific_mut(fwd.domain),
                false,
            )?;
            spe.backward(
                input.features,
                &fwd.spe,
                &up.spe_dom,
                dom_grads.specific_mut(fwd.domain),
                false,
            )?;
            params.shared.backward(
                input.features,
                &fwd.com,
                &up.com_pred,
                &mut pred_grads.shared,
                false,
            )?;
            params.shared.backward(
                input.features,
                &fwd.com,
                &up.com_dom,
                &mut dom_grads.shared,
                false,
            )?;
        }
        let mut total = pred_grads.clone();
        total.add_assign(&dom_grads)?;
        GradientParts {
            total,
            prediction: Some(pred_grads),
            domain: Some(dom_grads),
        }
    } else {
        let mut total = pred_grads;
        total.add_assign(&dom_grads)?;
        for ((fwd, input), up) in runs.iter().zip(&upstream) {
            let g_spe = up.spe_pred.add(&up.spe_dom)?;
            let g_com = up.com_pred.add(&up.com_dom)?;
            let spe = params.specific(fwd.domain);
            spe.backward(
                input.features,
                &fwd.spe,
                &g_spe,
                total.specific_mut(fwd.domain),
                false,
            )?;
            params
                .shared
                .backward(input.features, &fwd.com, &g_com, &mut total.shared, false)?;
        }
        GradientParts {
            total,
            prediction: None,
            domain: None,
        }
    };

    let target_logits = runs.pop().expect("target run").0.logits;
    Ok(StepOutput {
        losses,
        gradients,
        target_logits,
    })
}

/// Loss only, for finite-difference probes.
pub fn loss_only(
    params: &ModelParams,
    source: Option<&DomainInput<'_>>,
    target: &DomainInput<'_>,
    options: &ForwardOptions,
) -> Result<LossBreakdown> {
    Ok(loss_and_gradients(params, source, target, options, false)?.losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::check::{
        full_gradient_check, gradient_check_suite, ToyPair, TOY_FEATURES,
    };

    fn options(cfg: &TrainConfig) -> ForwardOptions {
        ForwardOptions::from_config(cfg)
    }

    #[test]
    fn full_model_gradient_check() {
        let mut cfg = TrainConfig::with_seed(0);
        cfg.hidden = 6;
        let r = full_gradient_check(&cfg, 71, 1e-5).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn gradient_check_across_variants() {
        for (name, r) in gradient_check_suite(5, 80).unwrap() {
            assert!(r.passes(1e-4), "{name}: {r:?}");
        }
    }

    fn split(mode: GrlMode, lambda: f64, seed: u64) -> GradientParts {
        let toy = ToyPair::new(seed);
        let params = toy.params(6, seed);
        let mut cfg = TrainConfig::with_seed(0);
        cfg.lambda = lambda;
        let opts = ForwardOptions {
            grl: mode,
            ..options(&cfg)
        };
        loss_and_gradients(&params, Some(&toy.source()), &toy.target(), &opts, true)
            .unwrap()
            .gradients
    }

    #[test]
    fn grl_scales_shared_domain_gradient_exactly() {
        for mu in [1.0, 0.5, 2.0] {
            let plain = split(GrlMode::Identity, 0.2, 5).domain.unwrap();
            let rev = split(GrlMode::Reverse(mu), 0.2, 5).domain.unwrap();
            for (a, b) in plain.shared.tensors().into_iter().zip(rev.shared.tensors()) {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert_eq!(*y, -mu * x);
                }
            }
            // discriminator and specific extractors are not reversed
            assert_eq!(plain.discriminator, rev.discriminator);
            assert_eq!(plain.specific_source, rev.specific_source);
            assert_eq!(plain.specific_target, rev.specific_target);
        }
    }

    #[test]
    fn no_dd_leaves_no_domain_gradient() {
        let toy = ToyPair::new(7);
        let params = toy.params(6, 7);
        let mut cfg = TrainConfig::with_seed(0);
        cfg.domain_loss = false;
        let out = loss_and_gradients(
            &params,
            Some(&toy.source()),
            &toy.target(),
            &options(&cfg),
            true,
        )
        .unwrap();
        let dom = out.gradients.domain.unwrap();
        assert!(dom.tensors().iter().all(|m| m.max_abs() == 0.0));
        assert_eq!(
            out.gradients.prediction.unwrap().shared,
            out.gradients.total.shared
        );
        assert_eq!(out.losses.domain, 0.0);

        // with the domain loss on, the shared extractor does get a contribution
        let on = split(GrlMode::Reverse(1.0), 0.2, 7).domain.unwrap();
        assert!(on.shared.w1.max_abs() > 0.0);
    }

    #[test]
    fn lambda_zero_matches_no_dd_gradient() {
        let toy = ToyPair::new(8);
        let params = toy.params(6, 8);
        let mut a = TrainConfig::with_seed(0);
        a.lambda = 0.0;
        let mut b = TrainConfig::with_seed(0);
        b.domain_loss = false;
        let run = |c: &TrainConfig| {
            loss_and_gradients(
                &params,
                Some(&toy.source()),
                &toy.target(),
                &options(c),
                false,
            )
            .unwrap()
        };
        let (ra, rb) = (run(&a), run(&b));
        assert_eq!(ra.gradients.total, rb.gradients.total);
        assert_eq!(ra.losses.total, rb.losses.total);
    }

    #[test]
    fn total_loss_linear_in_lambda() {
        let toy = ToyPair::new(9);
        let params = toy.params(6, 9);
        let at = |lambda: f64| {
            let mut c = TrainConfig::with_seed(0);
            c.lambda = lambda;
            loss_only(&params, Some(&toy.source()), &toy.target(), &options(&c)).unwrap()
        };
        let (l0, l1, l2) = (at(0.0), at(0.2), at(0.4));
        assert!(((l2.total - l1.total) - (l1.total - l0.total)).abs() < 1e-12);
        assert!((l1.total - l0.total - 0.2 * l1.domain).abs() < 1e-12);
    }

    #[test]
    fn split_gradients_sum_to_total() {
        let toy = ToyPair::new(90);
        let params = toy.params(6, 90);
        let opts = options(&TrainConfig::with_seed(0));
        let combined =
            loss_and_gradients(&params, Some(&toy.source()), &toy.target(), &opts, false).unwrap();
        let split =
            loss_and_gradients(&params, Some(&toy.source()), &toy.target(), &opts, true).unwrap();
        for (a, b) in combined
            .gradients
            .total
            .tensors()
            .into_iter()
            .zip(split.gradients.total.tensors())
        {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn target_only_has_no_source_or_domain_terms() {
        let toy = ToyPair::new(91);
        let params = toy.params(6, 91);
        let opts = options(&TrainConfig::with_seed(0));
        let out = loss_and_gradients(&params, None, &toy.target(), &opts, false).unwrap();
        assert_eq!(out.losses.source_pred, 0.0);
        assert_eq!(out.losses.domain, 0.0);
        let g = &out.gradients.total;
        assert_eq!(g.specific_source.w1.max_abs(), 0.0);
        assert_eq!(g.discriminator.w1.max_abs(), 0.0);
        assert_eq!(g.head_source.w.max_abs(), 0.0);
        assert!(g.head_target.w.max_abs() > 0.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let toy = ToyPair::new(92);
        let params = ModelParams::init(TOY_FEATURES + 1, 3, 1);
        let opts = options(&TrainConfig::with_seed(0));
        assert!(matches!(
            loss_and_gradients(&params, None, &toy.target(), &opts, false),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn names_align_with_tensors() {
        let p = ModelParams::init(7, 4, 0);
        assert_eq!(ModelParams::names().len(), p.tensors().len());
        let named = p.named_tensors();
        assert_eq!(named[0].0, "specific_source.w1");
        assert_eq!(named[0].1.shape(), (7, 4));
        assert_eq!(named[15].1.shape(), (1, 1));
        let back = p.with_matrices(&p.to_matrices()).unwrap();
        assert_eq!(back, p);
    }
}
