use std::fs;
use std::path::Path;

use deepgnn::data::{self, generate_sbm, load_dataset, store_dataset, Dataset, Meta};
use deepgnn::Error;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn fixture() -> (TempDir, Dataset<f32>) {
    let dir = TempDir::new().unwrap();
    let ds = generate_sbm::<f32>(3, 10, 0.4, 0.05, 5, 0.5, 12).unwrap();
    store_dataset(&ds, dir.path()).unwrap();
    (dir, ds)
}

fn read_meta(dir: &Path) -> Meta {
    serde_json::from_slice(&fs::read(dir.join(data::META_FILE)).unwrap()).unwrap()
}

/// Replaces `file` and refreshes its checksum so that only content checks can fail.
fn rewrite(dir: &Path, file: &str, bytes: &[u8]) {
    fs::write(dir.join(file), bytes).unwrap();
    let mut meta = read_meta(dir);
    meta.checksums
        .insert(file.into(), hex::encode(Sha256::digest(bytes)));
    fs::write(
        dir.join(data::META_FILE),
        serde_json::to_vec(&meta).unwrap(),
    )
    .unwrap();
}

fn dataset_field(err: Error) -> String {
    match err {
        Error::Dataset { field, .. } => field,
        other => panic!("expected a dataset error, got {other}"),
    }
}

#[test]
fn round_trip_is_bit_identical() {
    let (dir, ds) = fixture();
    let loaded = load_dataset::<f32>(dir.path()).unwrap();
    assert_eq!(loaded, ds);
    let again = TempDir::new().unwrap();
    store_dataset(&loaded, again.path()).unwrap();
    for file in [
        data::META_FILE,
        data::EDGES_FILE,
        data::FEATURES_FILE,
        data::LABELS_FILE,
        data::SPLITS_FILE,
    ] {
        assert_eq!(
            fs::read(dir.path().join(file)).unwrap(),
            fs::read(again.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn f64_load_widens_stored_values() {
    let (dir, ds) = fixture();
    let wide = load_dataset::<f64>(dir.path()).unwrap();
    assert_eq!(wide.features, ds.features.cast::<f64>());
    assert_eq!(wide.graph.edge_list(), ds.graph.edge_list());
}

#[test]
fn edges_are_symmetrized_and_cleaned() {
    let (dir, ds) = fixture();
    let mut raw = fs::read(dir.path().join(data::EDGES_FILE)).unwrap();
    let first: Vec<u8> = raw[..8].to_vec();
    raw.extend_from_slice(&first[4..]);
    raw.extend_from_slice(&first[..4]);
    raw.extend_from_slice(&3u32.to_le_bytes());
    raw.extend_from_slice(&3u32.to_le_bytes());
    rewrite(dir.path(), data::EDGES_FILE, &raw);
    let mut meta = read_meta(dir.path());
    meta.num_edges += 2;
    fs::write(
        dir.path().join(data::META_FILE),
        serde_json::to_vec(&meta).unwrap(),
    )
    .unwrap();
    let loaded = load_dataset::<f32>(dir.path()).unwrap();
    assert_eq!(loaded.graph.edge_list(), ds.graph.edge_list());
}

#[test]
fn checksum_mismatch_names_file() {
    let (dir, _) = fixture();
    let path = dir.path().join(data::FEATURES_FILE);
    let mut raw = fs::read(&path).unwrap();
    raw[0] ^= 1;
    fs::write(&path, raw).unwrap();
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), data::FEATURES_FILE);
}

#[test]
fn missing_file_reports_path() {
    let (dir, _) = fixture();
    fs::remove_file(dir.path().join(data::LABELS_FILE)).unwrap();
    match load_dataset::<f32>(dir.path()).unwrap_err() {
        Error::Io { path, .. } => assert!(path.ends_with(data::LABELS_FILE)),
        other => panic!("expected an io error, got {other}"),
    }
}

#[test]
fn out_of_range_edge_is_rejected() {
    let (dir, _) = fixture();
    let mut raw = fs::read(dir.path().join(data::EDGES_FILE)).unwrap();
    raw[4..8].copy_from_slice(&30u32.to_le_bytes());
    rewrite(dir.path(), data::EDGES_FILE, &raw);
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), data::EDGES_FILE);
}

#[test]
fn edge_count_must_match_meta() {
    let (dir, _) = fixture();
    let raw = fs::read(dir.path().join(data::EDGES_FILE)).unwrap();
    rewrite(dir.path(), data::EDGES_FILE, &raw[8..]);
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), "meta.num_edges");
}

#[test]
fn label_out_of_range_is_rejected() {
    let (dir, _) = fixture();
    let mut raw = fs::read(dir.path().join(data::LABELS_FILE)).unwrap();
    raw[0..2].copy_from_slice(&7u16.to_le_bytes());
    rewrite(dir.path(), data::LABELS_FILE, &raw);
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), "labels");
}

#[test]
fn truncated_features_are_rejected() {
    let (dir, _) = fixture();
    let raw = fs::read(dir.path().join(data::FEATURES_FILE)).unwrap();
    rewrite(dir.path(), data::FEATURES_FILE, &raw[..raw.len() - 4]);
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), data::FEATURES_FILE);
}

#[test]
fn overlapping_splits_are_rejected() {
    let (dir, ds) = fixture();
    let mut splits = ds.splits.clone();
    splits.test.push(splits.train[0]);
    rewrite(
        dir.path(),
        data::SPLITS_FILE,
        &serde_json::to_vec(&splits).unwrap(),
    );
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), "splits.test");
}

#[test]
fn missing_checksum_entry_is_rejected() {
    let (dir, _) = fixture();
    let mut meta = read_meta(dir.path());
    meta.checksums.remove(data::SPLITS_FILE);
    fs::write(
        dir.path().join(data::META_FILE),
        serde_json::to_vec(&meta).unwrap(),
    )
    .unwrap();
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(
        dataset_field(err),
        format!("meta.checksums.{}", data::SPLITS_FILE)
    );
}

#[test]
fn malformed_meta_is_rejected() {
    let (dir, _) = fixture();
    fs::write(dir.path().join(data::META_FILE), b"{\"name\": 3}").unwrap();
    let err = load_dataset::<f32>(dir.path()).unwrap_err();
    assert_eq!(dataset_field(err), data::META_FILE);
}

#[test]
fn sbm_within_block_degree_matches_expectation() {
    let (blocks, npb, p_in) = (3, 100, 0.1);
    let expected = (npb - 1) as f64 * p_in;
    let mut total = 0.0;
    for seed in 0..50 {
        let ds = generate_sbm::<f64>(blocks, npb, p_in, 0.0, 3, 0.0, seed).unwrap();
        total += 2.0 * ds.graph.num_edges() as f64 / ds.n() as f64;
    }
    let mean = total / 50.0;
    assert!(
        (mean - expected).abs() <= 0.1 * expected,
        "mean within-block degree {mean} vs {expected}"
    );
}

#[test]
fn sbm_splits_are_stratified() {
    let ds = generate_sbm::<f64>(4, 25, 0.2, 0.01, 4, 1.0, 3).unwrap();
    for (idx, per_block) in [
        (&ds.splits.train, 15),
        (&ds.splits.val, 5),
        (&ds.splits.test, 5),
    ] {
        for b in 0..4 {
            assert_eq!(
                idx.iter().filter(|&&i| ds.labels[i] == b).count(),
                per_block
            );
        }
    }
}
