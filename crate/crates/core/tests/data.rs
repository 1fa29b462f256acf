mod common;

use std::path::Path;

use common::{raw_dir, schema_path};
use gatedtab::data::{
    correlation_matrix, encode, fit_encoders, load_csv, pearson_matrix, split_indices,
    synthetic_table, DataError, DatasetStats, PreparedData, RawTable, SchemaFile, SyntheticSpec,
    MISSING_CATEGORY,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEMA: &str = "name = toy\nlabel = y\npositive = yes\ncategorical = colour, size\ncontinuous = weight\nignore = id\n";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// 40 rows; `colour` cycles red/green, `weight` is the row number.
fn toy_csv(rows: usize) -> String {
    let mut out = String::from("id,colour,size,weight,y\n");
    for i in 0..rows {
        let colour = ["red", "green"][i % 2];
        let size = ["s", "m", "l"][i % 3];
        let y = if i % 4 == 0 { "yes" } else { "no" };
        out.push_str(&format!("{i},{colour},{size},{i},{y}\n"));
    }
    out
}

/// Published dataset statistics: rows, features, categorical, continuous, positive %.
struct Published {
    name: &'static str,
    rows: usize,
    features: usize,
    categorical: usize,
    continuous: usize,
    positive: f64,
}

const PUBLISHED: [Published; 3] = [
    Published { name: "bank_marketing", rows: 45_211, features: 16, categorical: 11, continuous: 5, positive: 11.7 },
    Published { name: "1995_income", rows: 32_561, features: 14, categorical: 9, continuous: 5, positive: 24.1 },
    Published { name: "blastchar", rows: 7_043, features: 19, categorical: 17, continuous: 2, positive: 26.5 },
];

#[test]
fn small_csv_parses_into_typed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "t.csv", "id,colour,size,weight,y\n1,red,s,1.5,yes\n2,blue,m,2,no\n3,red,l,-0.25,no\n");
    let table = load_csv(&csv, &SchemaFile::parse(SCHEMA).unwrap()).unwrap();
    assert_eq!(table.n_rows(), 3);
    assert_eq!(table.n_features(), 3);
    assert_eq!(table.categorical[0].values, ["red", "blue", "red"]);
    assert_eq!(table.continuous[0].values, [Some(1.5), Some(2.0), Some(-0.25)]);
    assert_eq!(table.labels, [1, 0, 0]);
}

#[test]
fn loading_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let schema = SchemaFile::parse(SCHEMA).unwrap();
    assert!(matches!(load_csv(dir.path().join("absent.csv"), &schema), Err(DataError::FileNotFound(_))));

    let csv = write(dir.path(), "a.csv", "id,colour,weight,y\n1,red,1,yes\n");
    match load_csv(&csv, &schema) {
        Err(DataError::MissingColumn(c)) => assert_eq!(c, "size"),
        other => panic!("{other:?}"),
    }

    let csv = write(dir.path(), "b.csv", "");
    assert!(matches!(load_csv(&csv, &schema), Err(DataError::Empty(_))));
    let csv = write(dir.path(), "c.csv", "id,colour,size,weight,y\n");
    assert!(matches!(load_csv(&csv, &schema), Err(DataError::Empty(_))));

    let csv = write(dir.path(), "d.csv", "id,colour,size,weight,y\n1,red,s,1,yes\n2,red,s,heavy,no\n");
    match load_csv(&csv, &schema) {
        Err(DataError::Parse { column, row, value }) => assert_eq!((column.as_str(), row, value.as_str()), ("weight", 2, "heavy")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn schema_file_errors() {
    assert!(SchemaFile::parse("positive = yes\ncategorical = a\n").is_err());
    assert!(SchemaFile::parse("label = y\npositive = yes\n").is_err());
    assert!(SchemaFile::parse("label = y\npositive = yes\ncategorical = a, a\n").is_err());
    let err = SchemaFile::parse("label = y\npositive = yes\ncategorical = a\ncolour = 3\n").unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
    let tsv = SchemaFile::parse("label = y\npositive = 1\ncontinuous = a\ndelimiter = \\t\nheader = false\ncolumns = a, y\n").unwrap();
    assert_eq!(tsv.delimiter, b'\t');
    assert_eq!(SchemaFile::parse(&tsv.to_text()).unwrap(), tsv);
}

#[test]
fn headerless_and_semicolon_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "h.csv", "3;x;1\n4;y;0\n");
    let schema = SchemaFile::parse("label = t\npositive = 1\ncategorical = c\ncontinuous = v\ndelimiter = ;\nheader = false\ncolumns = v, c, t\n").unwrap();
    let table = load_csv(&csv, &schema).unwrap();
    assert_eq!(table.continuous[0].values, [Some(3.0), Some(4.0)]);
    assert_eq!(table.labels, [1, 0]);
}

#[test]
fn missing_cells_become_a_category_or_the_training_median() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = toy_csv(40);
    text = text.replace("\n5,green,l,5,no\n", "\n5,?,l,,no\n");
    let csv = write(dir.path(), "m.csv", &text);
    let raw = load_csv(&csv, &SchemaFile::parse(SCHEMA).unwrap()).unwrap();
    assert_eq!(raw.categorical[0].values[5], MISSING_CATEGORY);
    assert_eq!(raw.continuous[0].values[5], None);

    let splits = split_indices(40, 0).unwrap();
    let schema = fit_encoders(&raw, &splits).unwrap();
    let data = encode(&raw, &schema).unwrap();
    let enc = &schema.continuous[0];
    let mut present: Vec<f64> = splits.train.iter().filter_map(|&i| raw.continuous[0].values[i]).collect();
    present.sort_by(f64::total_cmp);
    let mid = present.len() / 2;
    let median = if present.len() % 2 == 1 { present[mid] } else { (present[mid - 1] + present[mid]) / 2.0 };
    assert_eq!(enc.median, median);
    assert_eq!(data.cont_row(5)[0], (median - enc.mean) / enc.std);
}

#[test]
fn split_examples() {
    let s = split_indices(100, 3).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (65, 15, 20));
    let s = split_indices(7_043, 3).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (4_577, 1_056, 1_410));
    assert_eq!(split_indices(7_043, 3).unwrap(), s);
    assert_ne!(split_indices(7_043, 4).unwrap(), s);
    assert!(matches!(split_indices(19, 0), Err(DataError::TooFewRows { rows: 19, .. })));
}

#[test]
fn category_seen_only_outside_training_maps_to_the_reserved_id() {
    let mut raw = synthetic_table(&SyntheticSpec::default());
    let splits = split_indices(raw.n_rows(), 0).unwrap();
    let t = splits.test[0];
    raw.categorical[0].values[t] = "blue".into();
    let schema = fit_encoders(&raw, &splits).unwrap();
    let data = encode(&raw, &schema).unwrap();
    let enc = &schema.categorical[0];
    assert!(!enc.vocab.contains(&"blue".to_string()));
    assert_eq!(data.cat_row(t)[0], enc.unseen_id());
    assert_eq!(enc.unseen_id() as usize, enc.vocab.len());
    let ids: Vec<u32> = splits.train.iter().map(|&i| data.cat_row(i)[0]).collect();
    assert!(ids.iter().all(|&id| id < enc.unseen_id()));
}

#[test]
fn training_columns_are_standardized() {
    let spec = SyntheticSpec { n_rows: 1000, n_continuous: 4, ..SyntheticSpec::default() };
    let prepared = PreparedData::new(synthetic_table(&spec), 1).unwrap();
    let train = prepared.train();
    for j in 0..train.n_cont {
        let col: Vec<f64> = (0..train.n_rows()).map(|i| train.cont_row(i)[j]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!((std - 1.0).abs() < 1e-6, "{std}");
    }
}

#[test]
fn encoder_statistics_ignore_non_training_rows() {
    let raw = synthetic_table(&SyntheticSpec::default());
    let splits = split_indices(raw.n_rows(), 2).unwrap();
    let before = fit_encoders(&raw, &splits).unwrap();
    let mut perturbed = raw.clone();
    for &i in splits.test.iter().chain(&splits.validation) {
        perturbed.continuous[0].values[i] = Some(1e6);
        perturbed.categorical[1].values[i] = "never-seen".into();
    }
    assert_eq!(fit_encoders(&perturbed, &splits).unwrap(), before);
}

#[test]
fn encoding_is_idempotent_and_layouts_share_a_fingerprint() {
    let raw = synthetic_table(&SyntheticSpec::default());
    let splits = split_indices(raw.n_rows(), 0).unwrap();
    let schema = fit_encoders(&raw, &splits).unwrap();
    assert_eq!(encode(&raw, &schema).unwrap(), encode(&raw, &schema).unwrap());
    assert_eq!(raw.fingerprint(), schema.fingerprint());
    let other = fit_encoders(&raw, &split_indices(raw.n_rows(), 9).unwrap()).unwrap();
    assert_eq!(other.fingerprint(), schema.fingerprint());
    let mut renamed = raw.clone();
    renamed.continuous[0].name = "renamed".into();
    assert_ne!(renamed.fingerprint(), raw.fingerprint());
}

#[test]
fn constant_label_is_rejected() {
    let mut raw = synthetic_table(&SyntheticSpec::default());
    raw.labels.iter_mut().for_each(|y| *y = 0);
    let splits = split_indices(raw.n_rows(), 0).unwrap();
    assert!(matches!(fit_encoders(&raw, &splits), Err(DataError::ConstantLabel(_))));
}

#[test]
fn synthetic_tables_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = synthetic_table(&SyntheticSpec { n_rows: 60, ..SyntheticSpec::default() });
    raw.continuous[1].values[7] = None;
    let path = dir.path().join("s.csv");
    raw.write_csv(&path).unwrap();
    let schema = SchemaFile::parse(&raw.schema_file().to_text()).unwrap();
    assert_eq!(load_csv(&path, &schema).unwrap(), raw);
}

#[test]
fn shipped_schemas_match_the_published_feature_counts() {
    for p in &PUBLISHED {
        let schema = SchemaFile::read(schema_path(p.name)).unwrap();
        assert_eq!(schema.name, p.name);
        assert_eq!(schema.feature_count(), p.features, "{}", p.name);
        assert_eq!(schema.categorical.len(), p.categorical, "{}", p.name);
        assert_eq!(schema.continuous.len(), p.continuous, "{}", p.name);
    }
}

#[test]
fn available_datasets_match_their_published_statistics() {
    for p in &PUBLISHED {
        let csv = raw_dir().join(format!("{}.csv", p.name));
        if !csv.is_file() {
            eprintln!("{} not present at {}; skipped", p.name, csv.display());
            continue;
        }
        let raw = load_csv(&csv, &SchemaFile::read(schema_path(p.name)).unwrap()).unwrap();
        let stats = DatasetStats::of(&raw);
        assert_eq!(stats.n_rows, p.rows);
        assert_eq!((stats.n_features, stats.n_categorical, stats.n_continuous), (p.features, p.categorical, p.continuous));
        assert!((stats.positive_percent - p.positive).abs() <= 0.1, "{}: {}", p.name, stats.positive_percent);
    }
}

/// Textbook two-pass Pearson coefficient.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn correlation_examples() {
    let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let m = pearson_matrix(vec!["x".into(), "x2".into(), "neg".into(), "flat".into()], &[x.clone(), x.clone(), neg, vec![2.0; 10]]).unwrap();
    assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
    assert!((m.get(0, 2) + 1.0).abs() < 1e-12);
    assert_eq!(m.get(0, 3), 0.0);
    assert_eq!(m.get(3, 3), 1.0);
    assert!(pearson_matrix(vec!["x".into()], &[vec![1.0]]).is_err());
}

#[test]
fn correlation_matches_the_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cols: Vec<Vec<f64>> = (0..5).map(|_| (0..200).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
    let names = (0..5).map(|i| format!("c{i}")).collect();
    let m = pearson_matrix(names, &cols).unwrap();
    for i in 0..5 {
        assert_eq!(m.get(i, i), 1.0);
        for j in 0..5 {
            assert!((m.get(i, j) - m.get(j, i)).abs() <= 1e-12);
            if i != j {
                assert!((m.get(i, j) - pearson(&cols[i], &cols[j])).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn dataset_correlations_cover_features_and_label() {
    let prepared = PreparedData::new(synthetic_table(&SyntheticSpec::default()), 0).unwrap();
    let m = correlation_matrix(&prepared.dataset, &prepared.schema).unwrap();
    assert_eq!(m.names, ["cat0", "cat1", "cat2", "num0", "num1", "target"]);
    let csv = m.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "feature,cat0,cat1,cat2,num0,num1,target");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("cat0,1,"));
}

fn table_from(rows: usize, seed: u64) -> RawTable {
    synthetic_table(&SyntheticSpec { n_rows: rows, seed, ..SyntheticSpec::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_rows(n in 20usize..2000, seed in any::<u64>()) {
        let s = split_indices(n, seed).unwrap();
        prop_assert_eq!(s.train.len(), n * 65 / 100);
        prop_assert_eq!(s.validation.len(), n * 15 / 100);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn labels_and_ids_stay_in_range(rows in 20usize..200, seed in 0u64..100) {
        let prepared = PreparedData::new(table_from(rows, seed), seed).unwrap();
        let d = &prepared.dataset;
        prop_assert!(d.labels.iter().all(|&y| y == 0.0 || y == 1.0));
        let sizes = prepared.schema.vocab_sizes();
        for i in 0..d.n_rows() {
            for (id, v) in d.cat_row(i).iter().zip(&sizes) {
                prop_assert!((*id as usize) <= *v);
            }
        }
        prop_assert_eq!(d.cont.len(), d.n_rows() * d.n_cont);
    }
}
