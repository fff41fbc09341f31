//! Raw cell records to the encoded feature matrix: one-hot categoricals,
//! max-normalized continuous values, and a binarized HAND column.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// HAND heights at or above this many meters encode as 1.
pub const HAND_THRESHOLD_M: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    /// Discrete codes `0..cardinality`, ordinal or not.
    Categorical { cardinality: u32 },
    /// Non-negative real. `max_value` is filled in by [`fit_schema`].
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_value: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureDescriptor {
    pub fn categorical(name: impl Into<String>, cardinality: u32) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous { max_value: None },
        }
    }

    fn encoded_width(&self) -> usize {
        match self.kind {
            FeatureKind::Categorical { cardinality } => cardinality as usize,
            FeatureKind::Continuous { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDescriptor>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDescriptor>) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Σ one-hot widths + continuous count + 1 (HAND).
    pub fn encoded_width(&self) -> usize {
        self.features
            .iter()
            .map(|f| f.encoded_width())
            .sum::<usize>()
            + 1
    }

    pub fn is_fitted(&self) -> bool {
        self.features.iter().all(|f| match f.kind {
            FeatureKind::Categorical { .. } => true,
            FeatureKind::Continuous { max_value } => max_value.is_some(),
        })
    }

    /// Same names and kinds, ignoring fitted maxima.
    pub fn compatible_with(&self, other: &FeatureSchema) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} features vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.features.iter().zip(&other.features) {
            let same_kind = match (&a.kind, &b.kind) {
                (
                    FeatureKind::Categorical { cardinality: x },
                    FeatureKind::Categorical { cardinality: y },
                ) => x == y,
                (FeatureKind::Continuous { .. }, FeatureKind::Continuous { .. }) => true,
                _ => false,
            };
            if a.name != b.name || !same_kind {
                return Err(Error::SchemaMismatch(format!(
                    "feature `{}` ({:?}) vs `{}` ({:?})",
                    a.name, a.kind, b.name, b.kind
                )));
            }
        }
        Ok(())
    }

    fn validate_declared(&self) -> Result<()> {
        for f in &self.features {
            if let FeatureKind::Categorical { cardinality } = f.kind {
                if cardinality < 2 {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` has cardinality {cardinality} (< 2)",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One raster cell before encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    /// One value per schema entry; categorical codes are stored as integral reals.
    pub raw: Vec<f64>,
    pub hand_height: f64,
    pub wetland: u8,
}

/// Fits continuous maxima over the union of both regions. Categorical
/// cardinalities come from `declared` unchanged.
pub fn fit_schema(
    declared: &FeatureSchema,
    source: &[CellRecord],
    target: &[CellRecord],
) -> Result<FeatureSchema> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Schema("both regions need at least one cell".into()));
    }
    declared.validate_declared()?;
    let arity = declared.len();
    for r in source.iter().chain(target) {
        if r.raw.len() != arity {
            return Err(Error::Schema(format!(
                "cell ({}, {}) has {} feature values, schema declares {arity}",
                r.row,
                r.col,
                r.raw.len()
            )));
        }
    }
    let mut fitted = declared.clone();
    for (k, f) in fitted.features.iter_mut().enumerate() {
        if let FeatureKind::Continuous { max_value } = &mut f.kind {
            let max = source
                .iter()
                .chain(target)
                .map(|r| r.raw[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if !(max > 0.0) || !max.is_finite() {
                return Err(Error::DegenerateFeature(f.name.clone()));
            }
            *max_value = Some(max);
        }
    }
    Ok(fitted)
}

/// Encodes records row by row in the order given.
pub fn encode(records: &[CellRecord], schema: &FeatureSchema) -> Result<Matrix> {
    if !schema.is_fitted() {
        return Err(Error::Schema(
            "schema has unfitted continuous features".into(),
        ));
    }
    let width = schema.encoded_width();
    let mut out = Matrix::zeros(records.len(), width);
    for (i, rec) in records.iter().enumerate() {
        let fail = |reason: String| Error::Encode {
            row: rec.row,
            col: rec.col,
            reason,
        };
        if rec.raw.len() != schema.len() {
            return Err(fail(format!(
                "{} values for {} features",
                rec.raw.len(),
                schema.len()
            )));
        }
        if !rec.hand_height.is_finite() {
            return Err(fail(format!("non-finite HAND height {}", rec.hand_height)));
        }
        let row = out.row_mut(i);
        let mut at = 0;
        for (f, &v) in schema.features.iter().zip(&rec.raw) {
            match f.kind {
                FeatureKind::Categorical { cardinality } => {
                    if v.fract() != 0.0 || v < 0.0 || v >= cardinality as f64 {
                        return Err(fail(format!(
                            "`{}` code {v} outside 0..{cardinality}",
                            f.name
                        )));
                    }
                    row[at + v as usize] = 1.0;
                    at += cardinality as usize;
                }
                FeatureKind::Continuous { max_value } => {
                    if !v.is_finite() {
                        return Err(fail(format!("`{}` value {v} is not finite", f.name)));
                    }
                    let max = max_value.expect("fitted");
                    row[at] = (v / max).clamp(0.0, 1.0);
                    at += 1;
                }
            }
        }
        row[at] = if rec.hand_height >= HAND_THRESHOLD_M {
            1.0
        } else {
            0.0
        };
    }
    Ok(out)
}

/// Disjoint train / validation / test node index lists, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.10,
            val: 0.40,
            test: 0.50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitMasks {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// True when the three lists are disjoint and cover `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

fn floor_sizes(n: usize, fr: &SplitFractions) -> (usize, usize) {
    let train = (n as f64 * fr.train).floor() as usize;
    let val = (n as f64 * fr.val).floor() as usize;
    (train, val)
}

/// Seeded uniform split. Sizes are floor-based with the remainder going to
/// test. With `stratify_by`, each label class is split separately.
pub fn split_masks(
    n_cells: usize,
    fractions: SplitFractions,
    seed: u64,
    stratify_by: Option<&[u8]>,
) -> Result<SplitMasks> {
    let total = fractions.train + fractions.val + fractions.test;
    if (total - 1.0).abs() > 1e-9
        || [fractions.train, fractions.val, fractions.test]
            .iter()
            .any(|&f| f <= 0.0)
    {
        return Err(Error::Split(format!(
            "fractions {:?} must be positive and sum to 1",
            fractions
        )));
    }
    if n_cells < 10 {
        return Err(Error::Split(format!("{n_cells} cells is fewer than 10")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = SplitMasks {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let groups: Vec<Vec<usize>> = match stratify_by {
        None => vec![(0..n_cells).collect()],
        Some(labels) => {
            if labels.len() != n_cells {
                return Err(Error::Split(format!(
                    "{} labels for {n_cells} cells",
                    labels.len()
                )));
            }
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 2];
            for (i, &l) in labels.iter().enumerate() {
                by_class[usize::from(l != 0)].push(i);
            }
            by_class.into_iter().filter(|g| !g.is_empty()).collect()
        }
    };
    let stratified = stratify_by.is_some();
    for mut group in groups {
        group.shuffle(&mut rng);
        let (mut tr, mut va) = floor_sizes(group.len(), &fractions);
        // keep a few members of a rare class in train and val
        if stratified && group.len() >= 3 {
            tr = tr.max(1);
            va = va.max(1);
        }
        masks.train.extend_from_slice(&group[..tr]);
        masks.val.extend_from_slice(&group[tr..tr + va]);
        masks.test.extend_from_slice(&group[tr + va..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    if masks.train.is_empty() || masks.val.is_empty() || masks.test.is_empty() {
        return Err(Error::Split(format!(
            "{n_cells} cells leave an empty split {:?}",
            masks.sizes()
        )));
    }
    Ok(masks)
}
