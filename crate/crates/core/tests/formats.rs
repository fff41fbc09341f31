use std::path::Path;

use proptest::prelude::*;
use wetland_core::dataset::Region;
use wetland_core::features::{CellRecord, FeatureDescriptor, FeatureSchema};
use wetland_core::io::{
    cells_to_csv, manifest_to_json, parse_cells, read_region, write_region, RunConfigFile,
};
use wetland_core::synth::{generate_pair, SynthConfig};
use wetland_core::Error;

fn synthetic(seed: u64, side: usize) -> (Region, Region) {
    let mut s = SynthConfig::with_seed(seed);
    s.width = side;
    s.height = side + 3;
    let mut t = s.clone();
    t.seed = seed + 1;
    t.wetland_density = 0.05;
    generate_pair(&s, &t).unwrap()
}

#[test]
fn region_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let (rs, rt) = synthetic(seed, 20);
        for region in [rs, rt] {
            let a = dir.path().join(format!("{}-{seed}", region.name));
            let (ma, ca) = write_region(&region, &a).unwrap();
            let back = read_region(&a).unwrap();
            assert_eq!(back, region);
            let b = dir.path().join(format!("{}-{seed}-again", region.name));
            let (mb, cb) = write_region(&back, &b).unwrap();
            assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
            assert_eq!(std::fs::read(ca).unwrap(), std::fs::read(cb).unwrap());
        }
    }
}

#[test]
fn either_file_names_the_region() {
    let dir = tempfile::tempdir().unwrap();
    let (rs, _) = synthetic(4, 10);
    let (m, c) = write_region(&rs, &dir.path().join("r")).unwrap();
    assert_eq!(read_region(&m).unwrap(), rs);
    assert_eq!(read_region(&c).unwrap(), rs);
}

#[test]
fn cell_table_is_lf_with_declared_header() {
    let (rs, _) = synthetic(5, 10);
    let text = cells_to_csv(&rs);
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 1 + 10 * 13);
    assert_eq!(
        text.lines().next().unwrap(),
        "row,col,cat0,cat1,cont0,cont1,cont2,cont3,hand_height_m,wetland_label"
    );
    assert!(manifest_to_json(&rs).unwrap().ends_with("}\n"));
}

#[test]
fn parse_errors_carry_line_numbers() {
    let (rs, _) = synthetic(6, 10);
    let text = cells_to_csv(&rs);
    let mut lines: Vec<&str> = text.lines().collect();
    lines[7] = "0,6,1,2,3";
    let broken = lines.join("\n");
    match parse_cells(&broken, &rs.schema, Path::new("r.cells.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
        other => panic!("expected parse error, got {other:?}"),
    }
    let header = text.replacen("cont0", "slope", 1);
    match parse_cells(&header, &rs.schema, Path::new("r.cells.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn run_config_defaults_and_unknown_keys() {
    let c = RunConfigFile::parse(r#"{"train": {"seed": 3}}"#, Path::new("c.json")).unwrap();
    assert_eq!(c, RunConfigFile::with_seed(3));
    assert_eq!(c.train.lambda, 0.2);
    assert_eq!(c.train.lr, 1e-3);
    assert_eq!(c.train.patience, 300);
    assert_eq!(c.train.layers, 2);
    assert_eq!(c.train.hidden, 64);
    assert_eq!(c.train.mu, 1.0);
    assert_eq!(c.connectivity.count(), 4);
    assert!(RunConfigFile::parse(r#"{"train": {}}"#, Path::new("c.json")).is_err());
    assert!(
        RunConfigFile::parse(r#"{"train": {"seed": 1}, "bogus": 2}"#, Path::new("c.json")).is_err()
    );
    let c = RunConfigFile::parse(
        r#"{"train": {"seed": 1}, "connectivity": 8, "synth": {"seed": 2, "wetland_density": 0.05}}"#,
        Path::new("c.json"),
    )
    .unwrap();
    assert_eq!(c.connectivity.count(), 8);
    assert_eq!(c.synth.unwrap().wetland_density, 0.05);
    assert!(RunConfigFile::parse(
        r#"{"train": {"seed": 1}, "connectivity": 6}"#,
        Path::new("c.json")
    )
    .is_err());
}

fn arbitrary_region() -> impl Strategy<Value = Region> {
    (1usize..6, 1usize..6, 2u32..5, 0usize..3).prop_flat_map(|(w, h, card, n_cont)| {
        let n = w * h;
        (
            proptest::collection::vec(0..card, n),
            proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, n_cont), n),
            proptest::collection::vec(0.0f64..50.0, n),
            proptest::collection::vec(0u8..2, n),
        )
            .prop_map(move |(cats, conts, hand, labels)| {
                let mut features = vec![FeatureDescriptor::categorical("soil", card)];
                features
                    .extend((0..n_cont).map(|k| FeatureDescriptor::continuous(format!("c{k}"))));
                let records = (0..n)
                    .map(|i| {
                        let mut raw = vec![f64::from(cats[i])];
                        raw.extend(&conts[i]);
                        CellRecord {
                            row: i / w,
                            col: i % w,
                            raw,
                            hand_height: hand[i],
                            wetland: labels[i],
                        }
                    })
                    .collect();
                Region::new("p", w, h, FeatureSchema::new(features), records).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_region_round_trips(region in arbitrary_region()) {
        let text = cells_to_csv(&region);
        let records = parse_cells(&text, &region.schema, Path::new("p.cells.csv")).unwrap();
        prop_assert_eq!(&records, &region.records);
        let again = Region::new("p", region.width, region.height, region.schema.clone(), records).unwrap();
        prop_assert_eq!(cells_to_csv(&again), text);
    }
}
