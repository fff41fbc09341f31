use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ClassWeighting, FeatureMode, PropagationChoice, TrainConfig};
use super::model::{
    loss_and_gradients, loss_only, DomainInput, ForwardOptions, GrlMode, ModelParams,
};
use crate::error::Result;
use crate::grid::{Connectivity, GridGraph};
use crate::numerics::{finite_diff_check, GradCheckReport, Matrix};

pub const TOY_FEATURES: usize = 5;

/// Two 3×3 regions with fixed labels and masks, random features.
#[derive(Clone, Debug)]
pub struct ToyPair {
    pub graph: GridGraph,
    pub source_features: Matrix,
    pub target_features: Matrix,
    pub source_labels: Vec<u8>,
    pub target_labels: Vec<u8>,
    pub source_train: Vec<usize>,
    pub target_train: Vec<usize>,
}

impl ToyPair {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = || {
            let data = (0..9 * TOY_FEATURES)
                .map(|_| rng.random_range(0.5..1.5))
                .collect();
            Matrix::from_vec(9, TOY_FEATURES, data).expect("sized")
        };
        let source_features = x();
        let target_features = x();
        Self {
            graph: GridGraph::build(3, 3, Connectivity::Four).expect("3×3"),
            source_features,
            target_features,
            source_labels: vec![1, 0, 0, 1, 1, 0, 0, 0, 1],
            target_labels: vec![0, 0, 1, 0, 1, 0, 1, 0, 0],
            source_train: vec![0, 1, 3, 4, 7, 8],
            target_train: vec![0, 2, 4, 5, 6],
        }
    }

    pub fn source(&self) -> DomainInput<'_> {
        DomainInput {
            features: &self.source_features,
            graph: &self.graph,
            labels: &self.source_labels,
            train: &self.source_train,
        }
    }

    pub fn target(&self) -> DomainInput<'_> {
        DomainInput {
            features: &self.target_features,
            graph: &self.graph,
            labels: &self.target_labels,
            train: &self.target_train,
        }
    }

    /// Initial parameters with nonzero biases, so no ReLU sits exactly on
    /// its kink.
    pub fn params(&self, hidden: usize, seed: u64) -> ModelParams {
        let mut out = ModelParams::init(TOY_FEATURES, hidden, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for (name, m) in ModelParams::names().iter().zip(out.tensors_mut()) {
            if name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".b") {
                for v in m.as_mut_slice() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        out
    }
}

/// Central differences of the total loss against the analytic gradient.
/// The GRL is set to identity: the reversed gradient is not a gradient of
/// the total loss.
pub fn full_gradient_check(
    config: &TrainConfig,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let toy = ToyPair::new(seed);
    let (src, tgt) = (toy.source(), toy.target());
    let params = toy.params(config.hidden, seed);
    let options = ForwardOptions {
        grl: GrlMode::Identity,
        ..ForwardOptions::from_config(config)
    };
    let analytic = loss_and_gradients(&params, Some(&src), &tgt, &options, false)?
        .gradients
        .total
        .to_matrices();
    let mut failure = None;
    let report = finite_diff_check(
        |p| {
            let loss = params
                .with_matrices(p)
                .and_then(|m| loss_only(&m, Some(&src), &tgt, &options));
            match loss {
                Ok(l) => l.total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &params.to_matrices(),
        &analytic,
        epsilon,
    );
    match failure {
        Some(e) => Err(e),
        None => report,
    }
}

/// Named configurations covering every branch of the model.
pub fn gradient_check_variants(hidden: usize) -> Vec<(&'static str, TrainConfig)> {
    let mut base = TrainConfig::with_seed(0);
    base.hidden = hidden;
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("full", base.clone()),
        ("three-layers", with(&|c| c.layers = 3)),
        (
            "gcn-style",
            with(&|c| c.propagation = PropagationChoice::GcnStyle),
        ),
        (
            "gat-style",
            with(&|c| c.propagation = PropagationChoice::GatStyle),
        ),
        ("no-ap", with(&|c| c.propagation = PropagationChoice::None)),
        ("recompute", with(&|c| c.recompute_edge_weights = true)),
        (
            "shared-only",
            with(&|c| c.features = FeatureMode::SharedOnly),
        ),
        (
            "specific-only",
            with(&|c| c.features = FeatureMode::SpecificOnly),
        ),
        (
            "balanced",
            with(&|c| c.class_weighting = ClassWeighting::Balanced),
        ),
        ("no-dd", with(&|c| c.domain_loss = false)),
    ]
}

/// Runs every variant; returns each report.
pub fn gradient_check_suite(
    hidden: usize,
    seed: u64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    gradient_check_variants(hidden)
        .into_iter()
        .enumerate()
        .map(|(k, (name, cfg))| Ok((name, full_gradient_check(&cfg, seed + k as u64, 1e-5)?)))
        .collect()
}
