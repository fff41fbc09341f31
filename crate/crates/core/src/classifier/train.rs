use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use super::config::{ClassWeighting, TrainConfig};
use super::model::{loss_and_gradients, ForwardOptions, ModelParams};
use super::{argmax_classes, nll_loss, wetland_probabilities};
use crate::dataset::RegionDataset;
use crate::disentangle::Domain;
use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::features::FeatureSchema;
use crate::grid::GridGraph;
use crate::numerics::{AdamState, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub source_pred: f64,
    pub target_pred: f64,
    pub domain: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    /// Target metrics of the returned parameters.
    pub val_metrics: Metrics,
    pub test_metrics: Metrics,
}

impl TrainReport {
    pub fn last_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }
}

/// Trained parameters plus everything needed to reproduce inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub schema: FeatureSchema,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    config: TrainConfig,
    schema: FeatureSchema,
    parameters: BTreeMap<String, TensorEntry>,
}

impl TrainedModel {
    pub fn options(&self) -> ForwardOptions {
        ForwardOptions::from_config(&self.config)
    }

    fn check_width(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.params.input_width() {
            return Err(Error::shape(
                "model_input",
                features.shape(),
                (features.rows(), self.params.input_width()),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, domain: Domain, features: &Matrix, graph: &GridGraph) -> Result<Matrix> {
        self.check_width(features)?;
        self.params.logits(domain, features, graph, &self.options())
    }

    /// Target-branch logits for a dataset encoded with this model's schema.
    pub fn target_logits(&self, data: &RegionDataset) -> Result<Matrix> {
        self.schema.compatible_with(&data.schema)?;
        self.logits(Domain::Target, &data.features, &data.graph)
    }

    pub fn predict(&self, data: &RegionDataset) -> Result<Vec<u8>> {
        Ok(argmax_classes(&self.target_logits(data)?))
    }

    pub fn to_json(&self) -> Result<String> {
        let parameters = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(name, m)| {
                (
                    name,
                    TensorEntry {
                        shape: [m.rows(), m.cols()],
                        data: m.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        let doc = ModelDocument {
            config: self.config.clone(),
            schema: self.schema.clone(),
            parameters,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("model file: {e}")))?;
        doc.config.validate()?;
        let template = ModelParams::init(doc.schema.encoded_width(), doc.config.hidden, 0);
        let mut mats = Vec::new();
        for (name, expected) in template.named_tensors() {
            let entry = doc
                .parameters
                .remove(&name)
                .ok_or_else(|| Error::Schema(format!("model file lacks parameter `{name}`")))?;
            let m = Matrix::from_vec(entry.shape[0], entry.shape[1], entry.data).map_err(|_| {
                Error::Schema(format!("parameter `{name}` data does not match its shape"))
            })?;
            if m.shape() != expected.shape() {
                return Err(Error::Schema(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    m.shape(),
                    expected.shape()
                )));
            }
            mats.push(m);
        }
        if let Some(extra) = doc.parameters.keys().next() {
            return Err(Error::Schema(format!(
                "unknown parameter `{extra}` in model file"
            )));
        }
        Ok(Self {
            params: template.with_matrices(&mats)?,
            config: doc.config,
            schema: doc.schema,
        })
    }
}

fn run(
    source: Option<&RegionDataset>,
    target: &RegionDataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if let Some(s) = source {
        s.schema.compatible_with(&target.schema)?;
        if s.input_width() != target.input_width() {
            return Err(Error::shape(
                "train",
                s.features.shape(),
                target.features.shape(),
            ));
        }
    }
    let mut params = ModelParams::init(target.input_width(), config.hidden, config.seed);
    let mut adam = AdamState::default();
    let options = ForwardOptions::from_config(config);
    let src_input = source.map(RegionDataset::input);
    let tgt_input = target.input();
    let val = &target.split.val;

    let mut epochs = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        let step = loss_and_gradients(&params, src_input.as_ref(), &tgt_input, &options, false)?;
        let l = step.losses;
        if !l.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: l.total,
            });
        }
        let preds = argmax_classes(&step.target_logits);
        let val_accuracy = Metrics::from_predictions(&preds, &target.labels, val)?.accuracy;
        let val_loss = nll_loss(
            &step.target_logits,
            &target.labels,
            val,
            ClassWeighting::Off,
        )?;
        epochs.push(EpochRecord {
            epoch,
            source_pred: l.source_pred,
            target_pred: l.target_pred,
            domain: l.domain,
            total: l.total,
            val_accuracy,
            val_loss,
        });
        if val_accuracy > best_acc || (val_accuracy == best_acc && val_loss < best_loss) {
            best_acc = val_accuracy;
            best_loss = val_loss;
            best_epoch = epoch;
            best = params.clone();
        }
        if epoch - best_epoch >= config.patience {
            stopped_early = true;
            debug!("early stop at epoch {epoch}, best {best_epoch}");
            break;
        }
        let grads = step.gradients.total;
        let mut slots = params.tensors_mut();
        adam.update(&mut slots, &grads.tensors(), config.lr)?;
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: l.total,
            });
        }
    }

    let model = TrainedModel {
        params: best,
        config: config.clone(),
        schema: target.schema.clone(),
    };
    let preds = model.predict(target)?;
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_accuracy: best_acc,
        stopped_early,
        val_metrics: Metrics::from_predictions(&preds, &target.labels, val)?,
        test_metrics: Metrics::from_predictions(&preds, &target.labels, &target.split.test)?,
    };
    Ok((model, report))
}

/// Joint training on a source and target region.
pub fn train(
    source: &RegionDataset,
    target: &RegionDataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    run(Some(source), target, config)
}

/// Same architecture on the target alone: no source terms, no domain loss.
pub fn train_target_only(
    target: &RegionDataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    run(None, target, config)
}

/// Softmax probability of the wetland class for every target cell.
pub fn infer_target(model: &TrainedModel, target: &RegionDataset) -> Result<Vec<f64>> {
    Ok(wetland_probabilities(&model.target_logits(target)?))
}
