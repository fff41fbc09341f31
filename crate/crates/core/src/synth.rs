//! Paired synthetic regions with controllable density, spatial correlation
//! and domain shift.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Region;
use crate::disentangle::Domain;
use crate::error::{Error, Result};
use crate::features::{CellRecord, FeatureDescriptor, FeatureSchema};
use crate::grid::GridGraph;

fn default_width() -> usize {
    64
}
fn default_density() -> f64 {
    0.1
}
fn default_scale() -> usize {
    3
}
fn default_cardinalities() -> Vec<u32> {
    vec![4, 6]
}
fn default_continuous() -> usize {
    4
}
fn default_shift() -> f64 {
    0.3
}
fn default_noise() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_width")]
    pub height: usize,
    #[serde(default = "default_density")]
    pub wetland_density: f64,
    /// Box-blur radius in cells.
    #[serde(default = "default_scale")]
    pub spatial_scale: usize,
    #[serde(default = "default_cardinalities")]
    pub categorical_cardinalities: Vec<u32>,
    #[serde(default = "default_continuous")]
    pub n_continuous: usize,
    /// Fraction of feature coefficients resampled for the target region.
    #[serde(default = "default_shift")]
    pub domain_shift: f64,
    /// Standard deviation of per-feature noise, in latent-field units.
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    /// 0 keeps the latent field smooth; 1 negates it on every other cell of
    /// a checkerboard, so neighbouring labels tend to disagree.
    #[serde(default)]
    pub heterophily: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            width: default_width(),
            height: default_width(),
            wetland_density: default_density(),
            spatial_scale: default_scale(),
            categorical_cardinalities: default_cardinalities(),
            n_continuous: default_continuous(),
            domain_shift: default_shift(),
            feature_noise: default_noise(),
            heterophily: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!(
                "grid {}×{} is smaller than 8×8",
                self.width, self.height
            ));
        }
        if !(self.wetland_density > 0.0 && self.wetland_density < 1.0) {
            return bad(format!(
                "wetland_density {} is outside (0, 1)",
                self.wetland_density
            ));
        }
        if !(0.0..=1.0).contains(&self.domain_shift) {
            return bad(format!(
                "domain_shift {} is outside [0, 1]",
                self.domain_shift
            ));
        }
        if !(0.0..=1.0).contains(&self.heterophily) {
            return bad(format!(
                "heterophily {} is outside [0, 1]",
                self.heterophily
            ));
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return bad(format!("feature_noise {} must be ≥ 0", self.feature_noise));
        }
        if let Some(c) = self.categorical_cardinalities.iter().find(|&&c| c < 2) {
            return bad(format!("categorical cardinality {c} is below 2"));
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut features: Vec<FeatureDescriptor> = self
            .categorical_cardinalities
            .iter()
            .enumerate()
            .map(|(k, &c)| FeatureDescriptor::categorical(format!("cat{k}"), c))
            .collect();
        features.extend(
            (0..self.n_continuous).map(|k| FeatureDescriptor::continuous(format!("cont{k}"))),
        );
        FeatureSchema::new(features)
    }
}

/// Weights linking the latent and secondary fields to each raw feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// `[primary weight, secondary weight]` per categorical feature, both
    /// applied to the feature's own secondary fields.
    pub categorical: Vec<[f64; 2]>,
    /// `[intercept, latent slope, secondary slope]` per continuous feature.
    pub continuous: Vec<[f64; 3]>,
}

fn signed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let m = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn sample_categorical<R: Rng>(rng: &mut R) -> [f64; 2] {
    [signed(rng, 0.5, 1.5), rng.random_range(0.5..1.0)]
}

fn sample_continuous<R: Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.random_range(3.0..5.0),
        signed(rng, 0.5, 1.5),
        rng.random_range(-0.5..0.5),
    ]
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Coefficients {
    pub fn sample(n_categorical: usize, n_continuous: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        Self {
            categorical: (0..n_categorical)
                .map(|_| sample_categorical(&mut rng))
                .collect(),
            continuous: (0..n_continuous)
                .map(|_| sample_continuous(&mut rng))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.categorical.len() + self.continuous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with `round(shift · len)` randomly chosen features redrawn.
    pub fn shifted(&self, shift: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 3);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        let count = (shift * self.len() as f64).round() as usize;
        let mut out = self.clone();
        for &k in &idx[..count.min(idx.len())] {
            if k < out.categorical.len() {
                out.categorical[k] = sample_categorical(&mut rng);
            } else {
                out.continuous[k - out.categorical.len()] = sample_continuous(&mut rng);
            }
        }
        out
    }
}

fn noise_field<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Mean over the in-bounds `(2r+1)²` window, separable.
pub fn box_blur(field: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let pass = |src: &[f64], len: usize, count: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let mut prefix = vec![0.0; len + 1];
            for k in 0..len {
                prefix[k + 1] = prefix[k] + src[at(line, k)];
            }
            for k in 0..len {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius + 1).min(len);
                out[at(line, k)] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            }
        }
        out
    };
    let rows = pass(field, width, height, &|r, c| r * width + c);
    pass(&rows, height, width, &|c, r| r * width + c)
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for x in v {
        *x = (*x - mean) / sd;
    }
}

fn smooth_field<R: Rng>(rng: &mut R, config: &SynthConfig) -> Vec<f64> {
    let n = config.width * config.height;
    let mut f = box_blur(
        &noise_field(rng, n),
        config.width,
        config.height,
        config.spatial_scale,
    );
    standardize(&mut f);
    f
}

/// Quantile bucket of every value, `0..buckets`.
fn quantile_buckets(values: &[f64], buckets: u32) -> Vec<u32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    let n = values.len() as u64;
    for (rank, &i) in order.iter().enumerate() {
        out[i] = (rank as u64 * u64::from(buckets) / n) as u32;
    }
    out
}

/// One region. `coefficients` must match the config's feature counts.
///
/// The latent field is offset so that wetland cells are exactly those with
/// a positive value: a sparse region is a drier region, and the feature
/// signature of a wetland cell does not depend on density.
pub fn generate_region(
    config: &SynthConfig,
    role: Domain,
    coefficients: &Coefficients,
) -> Result<Region> {
    config.validate()?;
    if coefficients.categorical.len() != config.categorical_cardinalities.len()
        || coefficients.continuous.len() != config.n_continuous
    {
        return Err(Error::Config(
            "coefficients do not match the feature counts".into(),
        ));
    }
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let k = (config.wetland_density * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::Generation(format!(
            "density {} on a {w}×{h} grid yields no wetland cells; use a larger grid",
            config.wetland_density
        )));
    }
    let stream = match role {
        Domain::Source => 1,
        Domain::Target => 2,
    };
    let mut rng = stream_rng(config.seed, stream);

    let smooth = smooth_field(&mut rng, config);
    let flip = 1.0 - 2.0 * config.heterophily;
    let mut latent: Vec<f64> = smooth
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            if (i / w + i % w) % 2 == 1 {
                flip * f
            } else {
                f
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    let mut labels = vec![0u8; n];
    for &i in &order[..k] {
        labels[i] = 1;
    }
    // shift the field so the wetland threshold sits at 0 in every region
    let threshold = if k < n {
        (latent[order[k - 1]] + latent[order[k]]) / 2.0
    } else {
        latent[order[k - 1]]
    };
    for v in &mut latent {
        *v -= threshold;
    }

    let noise = config.feature_noise;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (card, coef) in config
        .categorical_cardinalities
        .iter()
        .zip(&coefficients.categorical)
    {
        let primary = smooth_field(&mut rng, config);
        let secondary = smooth_field(&mut rng, config);
        let mixed: Vec<f64> = (0..n)
            .map(|i| {
                coef[0] * primary[i]
                    + coef[1] * secondary[i]
                    + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        columns.push(
            quantile_buckets(&mixed, *card)
                .into_iter()
                .map(f64::from)
                .collect(),
        );
    }
    for coef in &coefficients.continuous {
        let secondary = smooth_field(&mut rng, config);
        columns.push(
            (0..n)
                .map(|i| {
                    let v = coef[0]
                        + coef[1] * latent[i]
                        + coef[2] * secondary[i]
                        + noise * rng.sample::<f64, _>(StandardNormal);
                    v.max(0.0)
                })
                .collect(),
        );
    }
    let hand: Vec<f64> = (0..n)
        .map(|i| (2.0 - 1.5 * latent[i] + noise * rng.sample::<f64, _>(StandardNormal)).max(0.0))
        .collect();

    let records = (0..n)
        .map(|i| CellRecord {
            row: i / w,
            col: i % w,
            raw: columns.iter().map(|c| c[i]).collect(),
            hand_height: hand[i],
            wetland: labels[i],
        })
        .collect();
    Region::new(role.as_str(), w, h, config.schema(), records)
}

/// Source and target regions sharing coefficients, except for the target's
/// `domain_shift` fraction.
pub fn generate_pair(source: &SynthConfig, target: &SynthConfig) -> Result<(Region, Region)> {
    if source.categorical_cardinalities != target.categorical_cardinalities
        || source.n_continuous != target.n_continuous
    {
        return Err(Error::Config(
            "source and target configs declare different features".into(),
        ));
    }
    let base = Coefficients::sample(
        source.categorical_cardinalities.len(),
        source.n_continuous,
        source.seed,
    );
    let shifted = base.shifted(target.domain_shift, target.seed);
    Ok((
        generate_region(source, Domain::Source, &base)?,
        generate_region(target, Domain::Target, &shifted)?,
    ))
}

/// Fraction of undirected edges whose endpoints share a label; 1 when the
/// graph has no edges.
pub fn homophily(labels: &[u8], graph: &GridGraph) -> f64 {
    let mut same = 0usize;
    let mut total = 0usize;
    for (i, j) in graph.undirected_edges() {
        total += 1;
        same += usize::from(labels[i] == labels[j]);
    }
    if total == 0 {
        1.0
    } else {
        same as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Connectivity;

    fn cfg(seed: u64) -> SynthConfig {
        SynthConfig::with_seed(seed)
    }

    fn graph(c: &SynthConfig) -> GridGraph {
        GridGraph::build(c.width, c.height, Connectivity::Four).unwrap()
    }

    #[test]
    fn dense_density_on_64() {
        let mut c = cfg(1);
        c.wetland_density = 0.12;
        let coef = Coefficients::sample(2, 4, 1);
        let r = generate_region(&c, Domain::Source, &coef).unwrap();
        let f = r.wetland_fraction();
        assert!((f - 0.12).abs() <= 0.2 * 0.12, "{f}");
        assert!((f - 0.12).abs() <= 1.0 / 4096.0 + 1e-12);
    }

    #[test]
    fn sparse_density_on_128() {
        let mut c = cfg(2);
        c.width = 128;
        c.height = 128;
        c.wetland_density = 0.006;
        let r = generate_region(&c, Domain::Target, &Coefficients::sample(2, 4, 2)).unwrap();
        assert!((r.wetland_fraction() - 0.006).abs() <= 0.002);
    }

    #[test]
    fn zero_wetland_cells_is_an_error() {
        let mut c = cfg(3);
        c.width = 8;
        c.height = 8;
        c.wetland_density = 0.001;
        let err = generate_region(&c, Domain::Source, &Coefficients::sample(2, 4, 3)).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
        assert!(err.to_string().contains("larger grid"));
    }

    #[test]
    fn bit_identical_under_seed() {
        let c = cfg(4);
        let a = generate_pair(&c, &c).unwrap();
        let b = generate_pair(&c, &c).unwrap();
        assert_eq!(a, b);
        let other = generate_pair(&cfg(5), &cfg(5)).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn zero_shift_keeps_coefficients() {
        let base = Coefficients::sample(2, 4, 9);
        assert_eq!(base.shifted(0.0, 10), base);
        let full = base.shifted(1.0, 10);
        assert_ne!(full, base);
        let half = base.shifted(0.5, 10);
        let changed = base
            .continuous
            .iter()
            .zip(&half.continuous)
            .filter(|(a, b)| a != b)
            .count()
            + base
                .categorical
                .iter()
                .zip(&half.categorical)
                .filter(|(a, b)| a != b)
                .count();
        assert_eq!(changed, 3);
    }

    #[test]
    fn zero_shift_matches_feature_means() {
        let mut s = cfg(11);
        s.width = 96;
        s.height = 96;
        s.domain_shift = 0.0;
        let t = s.clone();
        let (rs, rt) = generate_pair(&s, &t).unwrap();
        for k in 0..s.schema().len() {
            let col = |r: &Region| r.records.iter().map(|c| c.raw[k]).collect::<Vec<_>>();
            let (a, b) = (col(&rs), col(&rt));
            let stats = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                (m, var / v.len() as f64)
            };
            let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
            let se = (va + vb).sqrt();
            assert!(
                (ma - mb).abs() < 3.0 * se.max(1e-12) + 1e-9,
                "feature {k}: {ma} vs {mb} (se {se})"
            );
        }
    }

    #[test]
    fn homophily_examples() {
        let g = GridGraph::build(4, 4, Connectivity::Four).unwrap();
        assert_eq!(homophily(&[1; 16], &g), 1.0);
        let checker: Vec<u8> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as u8).collect();
        assert_eq!(homophily(&checker, &g), 0.0);
        let single = GridGraph::build(1, 1, Connectivity::Four).unwrap();
        assert_eq!(homophily(&[0], &single), 1.0);
    }

    #[test]
    fn homophily_grows_with_scale() {
        let mut last = 0.0;
        for scale in [0, 2, 6] {
            let mut c = cfg(12);
            c.wetland_density = 0.3;
            c.spatial_scale = scale;
            let r = generate_region(&c, Domain::Source, &Coefficients::sample(2, 4, 12)).unwrap();
            let h = homophily(&r.labels(), &graph(&c));
            assert!(h > last, "scale {scale}: {h} ≤ {last}");
            last = h;
        }
    }

    #[test]
    fn heterophily_lowers_homophily() {
        let mut c = cfg(13);
        c.wetland_density = 0.4;
        c.heterophily = 1.0;
        let r = generate_region(&c, Domain::Source, &Coefficients::sample(2, 4, 13)).unwrap();
        assert!(homophily(&r.labels(), &graph(&c)) < 0.5);
    }

    #[test]
    fn wetland_cells_sit_low() {
        let c = cfg(14);
        let r = generate_region(&c, Domain::Source, &Coefficients::sample(2, 4, 14)).unwrap();
        let mean = |lab: u8| {
            let v: Vec<f64> = r
                .records
                .iter()
                .filter(|x| x.wetland == lab)
                .map(|x| x.hand_height)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(1) < mean(0));
    }

    #[test]
    fn box_blur_preserves_constants() {
        let f = vec![2.5; 30];
        assert!(box_blur(&f, 6, 5, 2)
            .iter()
            .all(|&x| (x - 2.5).abs() < 1e-12));
        let spike: Vec<f64> = (0..25).map(|i| f64::from(u8::from(i == 12))).collect();
        let b = box_blur(&spike, 5, 5, 1);
        assert!((b[12] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(0);
        c.wetland_density = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(0);
        c.width = 7;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<SynthConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        let c: SynthConfig = serde_json::from_str(r#"{"seed": 1}"#).unwrap();
        assert_eq!(c, cfg(1));
    }
}
