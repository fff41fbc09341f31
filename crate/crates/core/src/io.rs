//! Region Grid Files, run configuration files and model files.
//!
//! A region named `a` lives in `a.manifest.json` (dimensions and declared
//! schema) plus `a.cells.csv` (one row per cell, row-major).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{TrainConfig, TrainedModel};
use crate::dataset::{DatasetOptions, Region};
use crate::error::{Error, Result};
use crate::features::{CellRecord, FeatureSchema, SplitFractions};
use crate::grid::Connectivity;
use crate::synth::SynthConfig;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";
pub const CELLS_SUFFIX: &str = ".cells.csv";
pub const HAND_COLUMN: &str = "hand_height_m";
pub const LABEL_COLUMN: &str = "wetland_label";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub schema: FeatureSchema,
}

/// Strips a trailing manifest or cells suffix so either file names the region.
pub fn region_prefix(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [MANIFEST_SUFFIX, CELLS_SUFFIX] {
        if let Some(stem) = s.strip_suffix(suffix) {
            return PathBuf::from(stem);
        }
    }
    path.to_path_buf()
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, MANIFEST_SUFFIX)
}

pub fn cells_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, CELLS_SUFFIX)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        reason: e.to_string(),
    }
}

pub fn cells_header(schema: &FeatureSchema) -> Vec<String> {
    let mut h = vec!["row".to_string(), "col".to_string()];
    h.extend(schema.features.iter().map(|f| f.name.clone()));
    h.push(HAND_COLUMN.into());
    h.push(LABEL_COLUMN.into());
    h
}

/// Cell table as text: comma separated, LF line endings, shortest
/// round-trip decimal formatting.
pub fn cells_to_csv(region: &Region) -> String {
    let mut out = cells_header(&region.schema).join(",");
    out.push('\n');
    for r in &region.records {
        out.push_str(&format!("{},{}", r.row, r.col));
        for v in &r.raw {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", r.hand_height, r.wetland));
    }
    out
}

pub fn manifest_to_json(region: &Region) -> Result<String> {
    let m = Manifest {
        name: region.name.clone(),
        width: region.width,
        height: region.height,
        schema: region.schema.clone(),
    };
    let mut s = serde_json::to_string_pretty(&m).map_err(|e| Error::Schema(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes both files; returns their paths.
pub fn write_region(region: &Region, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (mp, cp) = (manifest_path(prefix), cells_path(prefix));
    write_text(&mp, &manifest_to_json(region)?)?;
    write_text(&cp, &cells_to_csv(region))?;
    Ok((mp, cp))
}

pub fn read_region(path: &Path) -> Result<Region> {
    let prefix = region_prefix(path);
    let mp = manifest_path(&prefix);
    let cp = cells_path(&prefix);
    let manifest: Manifest =
        serde_json::from_str(&read_text(&mp)?).map_err(|e| json_error(&mp, e))?;
    let text = read_text(&cp)?;
    let records = parse_cells(&text, &manifest.schema, &cp)?;
    Region::new(
        manifest.name,
        manifest.width,
        manifest.height,
        manifest.schema,
        records,
    )
    .map_err(|e| match e {
        Error::Schema(reason) => Error::Parse {
            path: cp.clone(),
            line: 0,
            reason,
        },
        other => other,
    })
}

/// Parses a cell table; errors carry the 1-based line number.
pub fn parse_cells(text: &str, schema: &FeatureSchema, path: &Path) -> Result<Vec<CellRecord>> {
    let fail = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| fail(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = cells_header(schema);
    if header != expected {
        return Err(fail(
            1,
            format!(
                "header {:?} does not match manifest order {:?}",
                header, expected
            ),
        ));
    }
    let nf = schema.len();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k)
                .parse::<usize>()
                .map_err(|e| fail(line, format!("column `{}`: {e}", expected[k])))
        };
        let real = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|e| fail(line, format!("column `{}`: {e}", expected[k])))
        };
        let raw = (0..nf).map(|k| real(2 + k)).collect::<Result<Vec<f64>>>()?;
        let wetland = match field(3 + nf) {
            "0" => 0,
            "1" => 1,
            other => return Err(fail(line, format!("wetland_label `{other}` is not 0 or 1"))),
        };
        records.push(CellRecord {
            row: int(0)?,
            col: int(1)?,
            raw,
            hand_height: real(2 + nf)?,
            wetland,
        });
    }
    Ok(records)
}

/// Everything a run can be configured with. Only `train.seed` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub stratify: bool,
}

impl RunConfigFile {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            train: TrainConfig::with_seed(seed),
            synth: None,
            connectivity: Connectivity::Four,
            split: SplitFractions::default(),
            stratify: false,
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
        c.train.validate()?;
        if let Some(s) = &c.synth {
            s.validate()?;
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            connectivity: self.connectivity,
            fractions: self.split,
            split_seed: self.train.seed,
            stratify: self.stratify,
        }
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    write_text(path, &model.to_json()?)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = read_text(path)?;
    TrainedModel::from_json(&text).map_err(|e| match e {
        Error::Schema(reason) => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureDescriptor;

    fn tiny() -> Region {
        let schema = FeatureSchema::new(vec![
            FeatureDescriptor::categorical("soil", 3),
            FeatureDescriptor::continuous("slope"),
        ]);
        let records = (0..4)
            .map(|i| CellRecord {
                row: i / 2,
                col: i % 2,
                raw: vec![(i % 3) as f64, 0.1 + i as f64 / 3.0],
                hand_height: 1.0 / (i as f64 + 1.0),
                wetland: u8::from(i == 2),
            })
            .collect();
        Region::new("tiny", 2, 2, schema, records).unwrap()
    }

    #[test]
    fn csv_layout() {
        let text = cells_to_csv(&tiny());
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "row,col,soil,slope,hand_height_m,wetland_label"
        );
        assert_eq!(lines.next().unwrap(), "0,0,0,0.1,1,0");
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn parse_round_trip() {
        let r = tiny();
        let text = cells_to_csv(&r);
        let back = parse_cells(&text, &r.schema, Path::new("x")).unwrap();
        assert_eq!(back, r.records);
        assert_eq!(
            cells_to_csv(&Region::new("tiny", 2, 2, r.schema.clone(), back).unwrap()),
            text
        );
    }

    #[test]
    fn parse_errors_name_the_line() {
        let r = tiny();
        let text = cells_to_csv(&r).replace("0,1,1,", "0,1,x,");
        let err = parse_cells(&text, &r.schema, Path::new("a.cells.csv")).unwrap_err();
        match err {
            Error::Parse { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, PathBuf::from("a.cells.csv"));
            }
            e => panic!("{e}"),
        }
        let bad_header = cells_to_csv(&r).replacen("slope", "aspect", 1);
        assert!(matches!(
            parse_cells(&bad_header, &r.schema, Path::new("a")),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_label = cells_to_csv(&r).replace(",1\n", ",2\n");
        assert!(parse_cells(&bad_label, &r.schema, Path::new("a")).is_err());
    }

    #[test]
    fn prefixes() {
        assert_eq!(
            region_prefix(Path::new("d/a.manifest.json")),
            PathBuf::from("d/a")
        );
        assert_eq!(
            region_prefix(Path::new("d/a.cells.csv")),
            PathBuf::from("d/a")
        );
        assert_eq!(region_prefix(Path::new("d/a")), PathBuf::from("d/a"));
        assert_eq!(cells_path(Path::new("d/a")), PathBuf::from("d/a.cells.csv"));
    }

    #[test]
    fn run_config_defaults_and_unknown_keys() {
        let p = Path::new("c.json");
        let c = RunConfigFile::parse(r#"{"train": {"seed": 4}}"#, p).unwrap();
        assert_eq!(c, RunConfigFile::with_seed(4));
        assert_eq!(c.connectivity.count(), 4);
        let c = RunConfigFile::parse(r#"{"train": {"seed": 4}, "connectivity": 8}"#, p).unwrap();
        assert_eq!(c.connectivity, Connectivity::Eight);
        assert!(RunConfigFile::parse(r#"{"train": {"seed": 4}, "connectivity": 6}"#, p).is_err());
        assert!(RunConfigFile::parse(r#"{"train": {}}"#, p).is_err());
        assert!(RunConfigFile::parse(r#"{"train": {"seed": 1}, "extra": 1}"#, p).is_err());
        let err =
            RunConfigFile::parse("{\n\"train\": {\"seed\": 1, \"lamda\": 2}}", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
