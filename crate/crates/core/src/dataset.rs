//! Regions as stored on disk and as fed to training.

use serde::{Deserialize, Serialize};

use crate::classifier::DomainInput;
use crate::error::{Error, Result};
use crate::features::{
    encode, fit_schema, split_masks, CellRecord, FeatureSchema, SplitFractions, SplitMasks,
};
use crate::grid::{Connectivity, GridGraph};
use crate::numerics::Matrix;

/// Raw raster region: dimensions, declared schema and one record per cell
/// in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub schema: FeatureSchema,
    pub records: Vec<CellRecord>,
}

impl Region {
    /// Sorts records into row-major order and checks full coverage.
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        schema: FeatureSchema,
        mut records: Vec<CellRecord>,
    ) -> Result<Self> {
        let name = name.into();
        if width == 0 || height == 0 {
            return Err(Error::Schema(format!(
                "region `{name}` has a zero dimension"
            )));
        }
        if records.len() != width * height {
            return Err(Error::Schema(format!(
                "region `{name}` has {} cells, expected {width}×{height}",
                records.len()
            )));
        }
        records.sort_by_key(|r| (r.row, r.col));
        for (i, r) in records.iter().enumerate() {
            if (r.row, r.col) != (i / width, i % width) {
                return Err(Error::Schema(format!(
                    "region `{name}`: cell ({}, {}) is duplicated or out of range",
                    r.row, r.col
                )));
            }
            if r.raw.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "region `{name}`: cell ({}, {}) has {} values, schema declares {}",
                    r.row,
                    r.col,
                    r.raw.len(),
                    schema.len()
                )));
            }
            if r.wetland > 1 {
                return Err(Error::Schema(format!(
                    "region `{name}`: cell ({}, {}) label {} is not 0/1",
                    r.row, r.col, r.wetland
                )));
            }
        }
        Ok(Self {
            name,
            width,
            height,
            schema,
            records,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.records.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.wetland).collect()
    }

    pub fn wetland_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.wetland == 1).count() as f64 / self.cell_count() as f64
    }
}

/// How a region becomes a graph with train/val/test masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub connectivity: Connectivity,
    pub fractions: SplitFractions,
    pub split_seed: u64,
    /// Split each label class separately.
    pub stratify: bool,
}

impl DatasetOptions {
    pub fn with_seed(split_seed: u64) -> Self {
        Self {
            connectivity: Connectivity::Four,
            fractions: SplitFractions::default(),
            split_seed,
            stratify: false,
        }
    }
}

/// Encoded region ready for full-graph training.
#[derive(Clone, Debug)]
pub struct RegionDataset {
    pub name: String,
    pub schema: FeatureSchema,
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub graph: GridGraph,
    pub split: SplitMasks,
}

impl RegionDataset {
    /// Encodes `region` with an already fitted schema.
    pub fn build(
        region: &Region,
        fitted: &FeatureSchema,
        options: &DatasetOptions,
    ) -> Result<Self> {
        region.schema.compatible_with(fitted)?;
        let features = encode(&region.records, fitted)?;
        let labels = region.labels();
        let graph = GridGraph::build(region.width, region.height, options.connectivity)?;
        let split = split_masks(
            region.cell_count(),
            options.fractions,
            options.split_seed,
            options.stratify.then_some(labels.as_slice()),
        )?;
        Ok(Self {
            name: region.name.clone(),
            schema: fitted.clone(),
            features,
            labels,
            graph,
            split,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn input_width(&self) -> usize {
        self.features.cols()
    }

    /// Borrowed view used by the training step, with the train mask.
    pub fn input(&self) -> DomainInput<'_> {
        DomainInput {
            features: &self.features,
            graph: &self.graph,
            labels: &self.labels,
            train: &self.split.train,
        }
    }
}

/// Fits one schema over both regions and encodes each. Both regions use the
/// same split options.
pub fn prepare_pair(
    source: &Region,
    target: &Region,
    options: &DatasetOptions,
) -> Result<(RegionDataset, RegionDataset)> {
    source.schema.compatible_with(&target.schema)?;
    let fitted = fit_schema(&source.schema, &source.records, &target.records)?;
    Ok((
        RegionDataset::build(source, &fitted, options)?,
        RegionDataset::build(target, &fitted, options)?,
    ))
}

/// Single region with its own fitted schema.
pub fn prepare_single(region: &Region, options: &DatasetOptions) -> Result<RegionDataset> {
    let fitted = fit_schema(&region.schema, &region.records, &region.records)?;
    RegionDataset::build(region, &fitted, options)
}
