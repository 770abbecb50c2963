use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;

use dynpmnn::data::{
    load_csv, split, synthetic_dataset, DataError, Dataset, FitGuard, Schema, Standardizer,
    SyntheticKind, DEFAULT_FRACTIONS,
};
use proptest::prelude::*;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn sample_text() -> String {
    std::fs::read_to_string(data_dir().join("california_housing_sample.csv")).unwrap()
}

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn column_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (
        m,
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

#[test]
fn sample_file_loads() {
    let table = load_csv(
        data_dir().join("california_housing_sample.csv"),
        &Schema::california(),
    )
    .unwrap();
    assert_eq!(table.rows(), 200);
    assert_eq!(table.n_features(), 8);
    assert!(table.rejected_lines().is_empty());
}

#[test]
fn full_file_loads_when_present() {
    let path = data_dir().join("california_housing.csv");
    if !path.exists() {
        eprintln!("skipping: {} not present", path.display());
        return;
    }
    let table = load_csv(&path, &Schema::california()).unwrap();
    assert_eq!((table.rows(), table.n_features()), (20640, 8));
}

#[test]
fn malformed_row_is_dropped_with_its_line() {
    let text = sample_text();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "1.0,2.0,oops,4,5,6,7,8,9";
    let f = write_temp(&(lines.join("\n") + "\n"));
    let table = load_csv(f.path(), &Schema::california()).unwrap();
    assert_eq!(table.rows(), 199);
    assert_eq!(table.rejected_lines(), &[6]);

    lines[5] = "1.0,2.0";
    let f = write_temp(&(lines.join("\n") + "\n"));
    assert_eq!(
        load_csv(f.path(), &Schema::california()).unwrap().rows(),
        199
    );
}

#[test]
fn load_errors() {
    let empty = write_temp("");
    assert!(matches!(
        load_csv(empty.path(), &Schema::california()),
        Err(DataError::SchemaMismatch(_))
    ));
    let missing = data_dir().join("no_such_file.csv");
    assert!(matches!(
        load_csv(missing, &Schema::california()),
        Err(DataError::FileNotFound(_))
    ));
    let text = sample_text().replacen("MedInc", "Income", 1);
    let renamed = write_temp(&text);
    assert!(matches!(
        load_csv(renamed.path(), &Schema::california()),
        Err(DataError::SchemaMismatch(_))
    ));
    let header_only = write_temp(sample_text().lines().next().unwrap());
    assert!(matches!(
        load_csv(header_only.path(), &Schema::california()),
        Err(DataError::Empty(_))
    ));
}

#[test]
fn california_split_sizes() {
    assert_eq!(
        split(20640, DEFAULT_FRACTIONS, 0).unwrap().sizes(),
        (14448, 4128, 2064)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn split_is_a_seeded_partition(rows in 1usize..3000, seed in any::<u64>()) {
        let s = split(rows, DEFAULT_FRACTIONS, seed).unwrap();
        let (tr, va, te) = s.sizes();
        prop_assert_eq!(tr + va + te, rows);
        prop_assert_eq!(va, (0.2 * rows as f64 + 1e-9).floor() as usize);
        prop_assert_eq!(te, (0.1 * rows as f64 + 1e-9).floor() as usize);
        let all: HashSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), rows);
        prop_assert!(all.iter().all(|&i| i < rows));
        prop_assert_eq!(s.clone(), split(rows, DEFAULT_FRACTIONS, seed).unwrap());
    }

    #[test]
    fn inverse_transform_round_trips(seed in 0u64..500) {
        let syn = synthetic_dataset(SyntheticKind::Linear, 50, 4, 0.3, seed);
        let rows: Vec<usize> = (0..50).collect();
        let st = Standardizer::fit(&syn.table, &rows, FitGuard::Permissive).unwrap();
        for r in 0..50 {
            let back = st.inverse_row(&st.transform_row(syn.table.row(r)));
            for (a, b) in back.iter().zip(syn.table.row(r)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let y = syn.table.target(r);
            prop_assert!((st.inverse_target(st.transform_target(y)) - y).abs() < 1e-12);
        }
    }
}

#[test]
fn training_split_is_standardized() {
    let table = load_csv(
        data_dir().join("california_housing_sample.csv"),
        &Schema::california(),
    )
    .unwrap();
    let ds = Dataset::prepare(&table, DEFAULT_FRACTIONS, 0).unwrap();
    for i in 0..8 {
        let (m, s) =
            column_stats(&ds.train.x.as_slice()[i * ds.train.len()..(i + 1) * ds.train.len()]);
        assert!(
            m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9,
            "feature {i}: {m} {s}"
        );
    }
    let (m, s) = column_stats(ds.train.y.as_slice());
    assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
}

#[test]
fn statistics_come_from_training_rows_only() {
    // Shift every non-training row; the fitted statistics must not move.
    let table = load_csv(
        data_dir().join("california_housing_sample.csv"),
        &Schema::california(),
    )
    .unwrap();
    let s = split(table.rows(), DEFAULT_FRACTIONS, 3).unwrap();
    let base = Standardizer::fit(&table, &s.train, FitGuard::Strict(&s)).unwrap();

    let train: HashSet<usize> = s.train.iter().copied().collect();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for r in 0..table.rows() {
        let shift = if train.contains(&r) { 0.0 } else { 1000.0 };
        features.extend(table.row(r).iter().map(|v| v + shift));
        targets.push(table.target(r) + shift);
    }
    let shifted = dynpmnn::data::RawTable::new(
        table.feature_names().to_vec(),
        table.target_name().to_string(),
        features,
        targets,
    )
    .unwrap();
    assert_eq!(
        Standardizer::fit(&shifted, &s.train, FitGuard::Strict(&s)).unwrap(),
        base
    );
    assert!(matches!(
        Standardizer::fit(&table, &s.validation, FitGuard::Strict(&s)),
        Err(DataError::Leakage(_))
    ));
}

#[test]
fn synthetic_linear_targets() {
    let clean = synthetic_dataset(SyntheticKind::Linear, 500, 5, 0.0, 1);
    for r in 0..500 {
        let dot: f64 = clean
            .table
            .row(r)
            .iter()
            .zip(&clean.weights)
            .map(|(a, b)| a * b)
            .sum();
        assert!((clean.table.target(r) - dot).abs() < 1e-12);
    }
    let noisy = synthetic_dataset(SyntheticKind::Linear, 5000, 5, 0.1, 1);
    let residuals: Vec<f64> = (0..5000)
        .map(|r| {
            let dot: f64 = noisy
                .table
                .row(r)
                .iter()
                .zip(&noisy.weights)
                .map(|(a, b)| a * b)
                .sum();
            noisy.table.target(r) - dot
        })
        .collect();
    let (_, s) = column_stats(&residuals);
    // sampling error of a std estimate from 5000 draws is about 1%
    assert!((s - 0.1).abs() < 0.005, "residual std {s}");
    let again = synthetic_dataset(SyntheticKind::Linear, 5000, 5, 0.1, 1);
    assert_eq!(again.table.targets(), noisy.table.targets());
}
