//! Metrics, transfer gains, ablations, candidate ranking, latent export and
//! the epoch-time scaling probe.

use std::io::Write;
use std::time::Instant;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    argmax_classes, loss_and_gradients, train, train_target_only, AblationMode, ForwardOptions,
    ModelParams, TrainConfig, TrainedModel,
};
use crate::dataset::{prepare_pair, DatasetOptions, Region, RegionDataset};
use crate::disentangle::Domain;
use crate::error::{Error, Result};
use crate::features::split_masks;
use crate::numerics::ops::sigmoid;
use crate::numerics::AdamState;
use crate::synth::{generate_pair, SynthConfig};

/// Confusion counts with wetland as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    /// 0 when there are no positive cells; see `recall_defined`.
    pub recall: f64,
    pub recall_defined: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let total = tp + fp + tn + fn_;
        let positives = tp + fn_;
        Self {
            tp,
            fp,
            tn,
            fn_,
            accuracy: if total == 0 {
                0.0
            } else {
                (tp + tn) as f64 / total as f64
            },
            recall: if positives == 0 {
                0.0
            } else {
                tp as f64 / positives as f64
            },
            recall_defined: positives > 0,
        }
    }

    pub fn from_predictions(predictions: &[u8], labels: &[u8], mask: &[usize]) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::Batch("evaluation over an empty mask".into()));
        }
        if predictions.len() != labels.len() {
            return Err(Error::shape(
                "metrics",
                (predictions.len(), 1),
                (labels.len(), 1),
            ));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for &i in mask {
            let (p, y) = (
                *predictions
                    .get(i)
                    .ok_or_else(|| Error::Batch(format!("mask index {i} out of range")))?,
                labels[i],
            );
            match (p == 1, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self::from_counts(tp, fp, tn, fn_))
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Target-branch argmax metrics over `mask`.
pub fn evaluate(model: &TrainedModel, data: &RegionDataset, mask: &[usize]) -> Result<Metrics> {
    if mask.is_empty() {
        return Err(Error::Batch("evaluation over an empty mask".into()));
    }
    let preds = model.predict(data)?;
    Metrics::from_predictions(&preds, &data.labels, mask)
}

/// One paired run: transfer and target-only, same seed, same test mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGain {
    pub seed: u64,
    pub transfer: Metrics,
    pub baseline: Metrics,
}

impl SeedGain {
    pub fn gain(&self) -> f64 {
        self.transfer.accuracy - self.baseline.accuracy
    }
}

/// `config` with `seed` substituted, split options seeded the same way.
fn seeded(
    config: &TrainConfig,
    options: &DatasetOptions,
    seed: u64,
) -> (TrainConfig, DatasetOptions) {
    let mut c = config.clone();
    c.seed = seed;
    let mut o = *options;
    o.split_seed = seed;
    (c, o)
}

pub fn paired_gain(
    source: &Region,
    target: &Region,
    config: &TrainConfig,
    options: &DatasetOptions,
    seed: u64,
) -> Result<SeedGain> {
    let (c, o) = seeded(config, options, seed);
    let (ds, dt) = prepare_pair(source, target, &o)?;
    let (_, with) = train(&ds, &dt, &c)?;
    let (_, without) = train_target_only(&dt, &c)?;
    Ok(SeedGain {
        seed,
        transfer: with.test_metrics,
        baseline: without.test_metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub mean: Option<f64>,
    pub runs: Vec<SeedGain>,
    /// Failures from runs that did not finish.
    pub diagnostics: Vec<String>,
}

/// `entries[s][t]` = gain of transferring from region `s` to region `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    pub names: Vec<String>,
    pub entries: Vec<Vec<GainEntry>>,
}

impl GainMatrix {
    pub fn mean(&self, source: usize, target: usize) -> Option<f64> {
        self.entries[source][target].mean
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["source".to_string()];
        header.extend(self.names.iter().cloned());
        write_row(&mut w, &header)?;
        for (s, row) in self.entries.iter().enumerate() {
            let mut rec = vec![self.names[s].clone()];
            rec.extend(
                row.iter()
                    .map(|e| e.mean.map_or_else(String::new, |m| m.to_string())),
            );
            write_row(&mut w, &rec)?;
        }
        flush(w)
    }
}

/// Every ordered pair, `seeds.len()` paired runs each; diagonal is 0.
pub fn transfer_gain_matrix(
    regions: &[Region],
    config: &TrainConfig,
    options: &DatasetOptions,
    seeds: &[u64],
) -> Result<GainMatrix> {
    if regions.len() < 2 {
        return Err(Error::Argument(
            "gain matrix needs at least 2 regions".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::Argument("gain matrix needs at least 1 seed".into()));
    }
    let k = regions.len();
    let mut entries = Vec::with_capacity(k);
    for s in 0..k {
        let mut row = Vec::with_capacity(k);
        for t in 0..k {
            if s == t {
                row.push(GainEntry {
                    mean: Some(0.0),
                    runs: Vec::new(),
                    diagnostics: Vec::new(),
                });
                continue;
            }
            let mut runs = Vec::new();
            let mut diagnostics = Vec::new();
            for &seed in seeds {
                match paired_gain(&regions[s], &regions[t], config, options, seed) {
                    Ok(r) => runs.push(r),
                    Err(e) if e.is_numeric_failure() => {
                        warn!("{} → {} seed {seed}: {e}", regions[s].name, regions[t].name);
                        diagnostics.push(format!("seed {seed}: {e}"));
                    }
                    Err(e) => return Err(e),
                }
            }
            let mean = if runs.len() == seeds.len() {
                Some(runs.iter().map(SeedGain::gain).sum::<f64>() / runs.len() as f64)
            } else {
                None
            };
            row.push(GainEntry {
                mean,
                runs,
                diagnostics,
            });
        }
        entries.push(row);
    }
    Ok(GainMatrix {
        names: regions.iter().map(|r| r.name.clone()).collect(),
        entries,
    })
}

/// Each mode trained with identical seeds and data; target test metrics.
pub fn ablation_suite(
    source: &RegionDataset,
    target: &RegionDataset,
    config: &TrainConfig,
    modes: &[AblationMode],
) -> Result<Vec<(AblationMode, Metrics)>> {
    modes
        .iter()
        .map(|&m| Ok((m, train(source, target, &m.apply(config))?.1.test_metrics)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub probability: f64,
}

/// Non-wetland cells by descending wetland probability, ties by index.
pub fn rank_candidates(
    model: &TrainedModel,
    data: &RegionDataset,
    top_k: usize,
) -> Result<Vec<Candidate>> {
    if top_k == 0 {
        return Err(Error::Argument("top_k must be at least 1".into()));
    }
    let probs = crate::classifier::infer_target(model, data)?;
    Ok(rank_probabilities(
        &probs,
        &data.labels,
        data.graph.width(),
        top_k,
    ))
}

pub fn rank_probabilities(
    probs: &[f64],
    labels: &[u8],
    width: usize,
    top_k: usize,
) -> Vec<Candidate> {
    let mut cells: Vec<Candidate> = (0..probs.len())
        .filter(|&i| labels[i] == 0)
        .map(|i| Candidate {
            index: i,
            row: i / width,
            col: i % width,
            probability: probs[i],
        })
        .collect();
    cells.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(a.index.cmp(&b.index))
    });
    cells.truncate(top_k);
    cells
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Specific,
    Shared,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Specific => "specific",
            Stream::Shared => "shared",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub domain: Domain,
    pub stream: Stream,
    pub values: Vec<f64>,
}

/// Up to `sample_per_domain` cells per region, both streams per cell.
pub fn export_latents(
    model: &TrainedModel,
    source: &RegionDataset,
    target: &RegionDataset,
    sample_per_domain: usize,
    seed: u64,
) -> Result<Vec<LatentRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (domain, data) in [(Domain::Source, source), (Domain::Target, target)] {
        model.schema.compatible_with(&data.schema)?;
        let n = data.node_count();
        let take = if sample_per_domain > n {
            warn!(
                "{} has {n} cells; sampling all instead of {sample_per_domain}",
                domain.as_str()
            );
            n
        } else {
            sample_per_domain
        };
        let mut picked = sample(&mut rng, n, take).into_vec();
        picked.sort_unstable();
        let features = data.features.select_rows(&picked);
        let (spe, com) = model.params.latents(domain, &features)?;
        for r in 0..picked.len() {
            for (stream, m) in [(Stream::Specific, &spe), (Stream::Shared, &com)] {
                rows.push(LatentRow {
                    domain,
                    stream,
                    values: m.row(r).to_vec(),
                });
            }
        }
    }
    Ok(rows)
}

/// Balanced discriminator accuracy on each latent stream over all cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorAccuracy {
    pub specific: f64,
    pub shared: f64,
}

pub fn discriminator_accuracy(
    model: &TrainedModel,
    source: &RegionDataset,
    target: &RegionDataset,
) -> Result<DiscriminatorAccuracy> {
    let mut correct = [[0.0f64; 2]; 2];
    for (domain, data) in [(Domain::Source, source), (Domain::Target, target)] {
        let (spe, com) = model.params.latents(domain, &data.features)?;
        for (s, latents) in [spe, com].iter().enumerate() {
            let logits = model.params.discriminator.forward(latents)?.out;
            let hits = logits
                .as_slice()
                .iter()
                .filter(|&&z| (sigmoid(z) > 0.5) == (domain == Domain::Target))
                .count();
            correct[s][usize::from(domain == Domain::Target)] =
                hits as f64 / data.node_count() as f64;
        }
    }
    Ok(DiscriminatorAccuracy {
        specific: (correct[0][0] + correct[0][1]) / 2.0,
        shared: (correct[1][0] + correct[1][1]) / 2.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub width: usize,
    pub height: usize,
    pub edges: usize,
    pub seconds: f64,
}

/// Median wall time of one joint training epoch on square synthetic pairs,
/// after one warmup epoch.
pub fn scaling_probe(
    sides: &[usize],
    config: &TrainConfig,
    epochs: usize,
) -> Result<Vec<ScalingRow>> {
    if sides.len() < 3 {
        return Err(Error::Argument(
            "scaling probe needs at least 3 grid sizes".into(),
        ));
    }
    if epochs < 5 {
        return Err(Error::Argument(
            "scaling probe needs at least 5 timed epochs".into(),
        ));
    }
    let mut out = Vec::with_capacity(sides.len());
    for &side in sides {
        let mut sc = SynthConfig::with_seed(config.seed);
        sc.width = side;
        sc.height = side;
        let (rs, rt) = generate_pair(&sc, &sc)?;
        let (ds, dt) = prepare_pair(&rs, &rt, &DatasetOptions::with_seed(config.seed))?;
        let mut params = ModelParams::init(ds.input_width(), config.hidden, config.seed);
        let mut adam = AdamState::default();
        let options = ForwardOptions::from_config(config);
        let (si, ti) = (ds.input(), dt.input());
        let mut times = Vec::with_capacity(epochs);
        for e in 0..=epochs {
            let start = Instant::now();
            let step = loss_and_gradients(&params, Some(&si), &ti, &options, false)?;
            let mut slots = params.tensors_mut();
            adam.update(&mut slots, &step.gradients.total.tensors(), config.lr)?;
            if e > 0 {
                times.push(start.elapsed().as_secs_f64());
            }
        }
        times.sort_by(f64::total_cmp);
        out.push(ScalingRow {
            width: side,
            height: side,
            edges: ds.graph.edge_count() + dt.graph.edge_count(),
            seconds: times[times.len() / 2],
        });
    }
    Ok(out)
}

/// Per-doubling growth factor between two rows: `(t2/t1)^(1/log2(E2/E1))`.
pub fn per_doubling_factor(a: &ScalingRow, b: &ScalingRow) -> f64 {
    let doublings = (b.edges as f64 / a.edges as f64).log2();
    (b.seconds / a.seconds).powf(1.0 / doublings)
}

fn write_row<W: Write, S: AsRef<[u8]>>(w: &mut csv::Writer<W>, fields: &[S]) -> Result<()> {
    w.write_record(fields).map_err(csv_error)
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Io {
        path: "<output>".into(),
        source: e,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "name",
    "accuracy",
    "recall",
    "recall_defined",
    "tp",
    "fp",
    "tn",
    "fn",
];

pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_row(&mut w, &METRICS_HEADER)?;
    for (name, m) in rows {
        write_row(
            &mut w,
            &[
                name.clone(),
                m.accuracy.to_string(),
                m.recall.to_string(),
                m.recall_defined.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.tn.to_string(),
                m.fn_.to_string(),
            ],
        )?;
    }
    flush(w)
}

pub const CANDIDATES_HEADER: [&str; 5] = ["rank", "cell", "row", "col", "probability"];

pub fn write_candidates_csv<W: Write>(out: W, cells: &[Candidate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_row(&mut w, &CANDIDATES_HEADER)?;
    for (rank, c) in cells.iter().enumerate() {
        write_row(
            &mut w,
            &[
                (rank + 1).to_string(),
                c.index.to_string(),
                c.row.to_string(),
                c.col.to_string(),
                c.probability.to_string(),
            ],
        )?;
    }
    flush(w)
}

/// Header `domain,stream,l0..l{h-1}`.
pub fn write_latents_csv<W: Write>(out: W, rows: &[LatentRow], hidden: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["domain".to_string(), "stream".to_string()];
    header.extend((0..hidden).map(|k| format!("l{k}")));
    write_row(&mut w, &header)?;
    for r in rows {
        let mut rec = vec![r.domain.as_str().to_string(), r.stream.as_str().to_string()];
        rec.extend(r.values.iter().map(f64::to_string));
        write_row(&mut w, &rec)?;
    }
    flush(w)
}

pub const SCALING_HEADER: [&str; 4] = ["width", "height", "edges", "seconds"];

pub fn write_scaling_csv<W: Write>(out: W, rows: &[ScalingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_row(&mut w, &SCALING_HEADER)?;
    for r in rows {
        write_row(
            &mut w,
            &[
                r.width.to_string(),
                r.height.to_string(),
                r.edges.to_string(),
                r.seconds.to_string(),
            ],
        )?;
    }
    flush(w)
}

/// Fresh stratified-or-not masks for a dataset, e.g. to evaluate on a
/// different split seed.
pub fn resplit(data: &mut RegionDataset, options: &DatasetOptions) -> Result<()> {
    data.split = split_masks(
        data.node_count(),
        options.fractions,
        options.split_seed,
        options.stratify.then_some(data.labels.as_slice()),
    )?;
    Ok(())
}

/// Argmax predictions straight from a logits matrix.
pub fn metrics_from_logits(
    logits: &crate::Matrix,
    labels: &[u8],
    mask: &[usize],
) -> Result<Metrics> {
    Metrics::from_predictions(&argmax_classes(logits), labels, mask)
}
