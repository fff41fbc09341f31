//! Python bindings: regions, synthetic generation, training, evaluation
//! and the gradient check.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use wetland_core::classifier::{self, TrainedModel};
use wetland_core::dataset::{prepare_pair, DatasetOptions, Region, RegionDataset};
use wetland_core::eval::{self, Metrics};
use wetland_core::features::Split;
use wetland_core::grid::{Connectivity, GridGraph};
use wetland_core::io::{self, RunConfigFile};
use wetland_core::synth::{self, SynthConfig};
use wetland_core::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_numeric_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn run_config(json: Option<&str>, seed: u64) -> PyResult<RunConfigFile> {
    match json {
        Some(text) => RunConfigFile::parse(text, "<config>".as_ref()).map_err(to_py),
        None => Ok(RunConfigFile::with_seed(seed)),
    }
}

/// A raster region: per-cell features, HAND height and wetland label.
#[pyclass(name = "Region", module = "wetland", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRegion {
    inner: Region,
}

#[pymethods]
impl PyRegion {
    /// Reads `<prefix>.manifest.json` and `<prefix>.cells.csv`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_region(&path).map_err(to_py)?,
        })
    }

    fn save(&self, prefix: PathBuf) -> PyResult<()> {
        io::write_region(&self.inner, &prefix).map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner
            .schema
            .features
            .iter()
            .map(|f| f.name.clone())
            .collect()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels()
    }

    fn wetland_fraction(&self) -> f64 {
        self.inner.wetland_fraction()
    }

    /// Label homophily under 4-connectivity.
    fn homophily(&self) -> PyResult<f64> {
        let g = GridGraph::build(self.inner.width, self.inner.height, Connectivity::Four)
            .map_err(to_py)?;
        Ok(synth::homophily(&self.inner.labels(), &g))
    }

    fn __len__(&self) -> usize {
        self.inner.cell_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Region(name={:?}, width={}, height={}, density={:.4})",
            self.inner.name,
            self.inner.width,
            self.inner.height,
            self.inner.wetland_fraction()
        )
    }
}

#[pyclass(
    name = "Metrics",
    module = "wetland",
    frozen,
    get_all,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyMetrics {
    accuracy: f64,
    recall: Option<f64>,
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

impl From<Metrics> for PyMetrics {
    fn from(m: Metrics) -> Self {
        Self {
            accuracy: m.accuracy,
            recall: m.recall_defined.then_some(m.recall),
            tp: m.tp,
            fp: m.fp,
            tn: m.tn,
            fn_: m.fn_,
        }
    }
}

#[pymethods]
impl PyMetrics {
    fn __repr__(&self) -> String {
        let recall = self
            .recall
            .map_or_else(|| "None".to_string(), |r| format!("{r:.6}"));
        format!(
            "Metrics(accuracy={:.6}, recall={recall}, tp={}, fp={}, tn={}, fn={})",
            self.accuracy, self.tp, self.fp, self.tn, self.fn_
        )
    }
}

/// Trained parameters with their configuration and fitted schema.
#[pyclass(name = "Model", module = "wetland", frozen)]
struct PyModel {
    inner: TrainedModel,
}

impl PyModel {
    fn dataset(&self, region: &PyRegion, options: &DatasetOptions) -> PyResult<RegionDataset> {
        RegionDataset::build(&region.inner, &self.inner.schema, options).map_err(to_py)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_model(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&self.inner, &path).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainedModel::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }

    /// Wetland probability for every cell of `region`, row-major.
    fn probabilities(&self, region: &PyRegion) -> PyResult<Vec<f64>> {
        let data = self.dataset(region, &DatasetOptions::with_seed(self.inner.config.seed))?;
        classifier::infer_target(&self.inner, &data).map_err(to_py)
    }

    fn predict(&self, region: &PyRegion) -> PyResult<Vec<u8>> {
        let data = self.dataset(region, &DatasetOptions::with_seed(self.inner.config.seed))?;
        self.inner.predict(&data).map_err(to_py)
    }

    /// Metrics on one split (`train`, `val` or `test`); `config` is the run
    /// configuration JSON that defined the split.
    #[pyo3(signature = (region, split = "test", config = None))]
    fn evaluate(
        &self,
        region: &PyRegion,
        split: &str,
        config: Option<&str>,
    ) -> PyResult<PyMetrics> {
        let split: Split = split.parse().map_err(to_py)?;
        let options = run_config(config, self.inner.config.seed)?.dataset_options();
        let data = self.dataset(region, &options)?;
        Ok(eval::evaluate(&self.inner, &data, data.split.get(split))
            .map_err(to_py)?
            .into())
    }

    /// `(row, col, probability)` of the most wetland-like non-wetland cells.
    fn rank(&self, region: &PyRegion, top_k: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        let data = self.dataset(region, &DatasetOptions::with_seed(self.inner.config.seed))?;
        Ok(eval::rank_candidates(&self.inner, &data, top_k)
            .map_err(to_py)?
            .into_iter()
            .map(|c| (c.row, c.col, c.probability))
            .collect())
    }
}

/// Generates a source region and a target region sharing feature
/// coefficients except for a `shift` fraction.
#[pyfunction]
#[pyo3(signature = (seed, width = 64, height = 64, source_density = 0.1, target_density = 0.1, shift = 0.3, noise = 0.5, target_seed = None))]
#[allow(clippy::too_many_arguments)]
fn synth_pair(
    seed: u64,
    width: usize,
    height: usize,
    source_density: f64,
    target_density: f64,
    shift: f64,
    noise: f64,
    target_seed: Option<u64>,
) -> PyResult<(PyRegion, PyRegion)> {
    let mut s = SynthConfig::with_seed(seed);
    s.width = width;
    s.height = height;
    s.wetland_density = source_density;
    s.feature_noise = noise;
    let mut t = s.clone();
    t.seed = target_seed.unwrap_or(seed.wrapping_add(1));
    t.wetland_density = target_density;
    t.domain_shift = shift;
    let (rs, rt) = synth::generate_pair(&s, &t).map_err(to_py)?;
    Ok((PyRegion { inner: rs }, PyRegion { inner: rt }))
}

/// Joint training; returns the model and the target test metrics.
/// `config` is a run configuration JSON document.
#[pyfunction]
#[pyo3(signature = (source, target, config = None, seed = 0))]
fn train(
    source: &PyRegion,
    target: &PyRegion,
    config: Option<&str>,
    seed: u64,
) -> PyResult<(PyModel, PyMetrics)> {
    let cfg = run_config(config, seed)?;
    let (ds, dt) =
        prepare_pair(&source.inner, &target.inner, &cfg.dataset_options()).map_err(to_py)?;
    let (model, report) = classifier::train(&ds, &dt, &cfg.train).map_err(to_py)?;
    Ok((PyModel { inner: model }, report.test_metrics.into()))
}

/// Finite-difference check of every model variant on the toy pair;
/// `(variant, max relative error)` pairs.
#[pyfunction]
#[pyo3(signature = (hidden = 5, seed = 0))]
fn gradcheck(hidden: usize, seed: u64) -> PyResult<Vec<(String, f64)>> {
    Ok(classifier::gradient_check_suite(hidden, seed)
        .map_err(to_py)?
        .into_iter()
        .map(|(name, r)| (name.to_string(), r.max_rel_error))
        .collect())
}

#[pymodule]
fn wetland(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegion>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(synth_pair, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
