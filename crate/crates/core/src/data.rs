//! Datasets: the canonical directory format and a synthetic block-model generator.
//!
//! A dataset directory holds
//!
//! | file          | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | `meta.json`   | `{name, n, d, num_classes, num_edges, checksums}`          |
//! | `edges.bin`   | little-endian `u32` pairs `(src, dst)`                     |
//! | `features.bin`| little-endian `f32`, row-major `n x d`                     |
//! | `labels.bin`  | little-endian `u16`, one per node                          |
//! | `splits.json` | `{"train": [...], "val": [...], "test": [...]}`            |
//!
//! `checksums` maps each of the four data file names to its SHA-256 hex digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::sparse::{CsrGraph, CsrMatrix};
use crate::tensor::Tensor;

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.bin";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub num_edges: usize,
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub name: String,
    pub graph: CsrGraph<T>,
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Splits,
}

impl<T: Scalar> PartialEq for Dataset<T> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.graph == other.graph
            && self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.splits == other.splits
    }
}

impl<T: Scalar> Dataset<T> {
    /// Checks shapes, label range, split disjointness and that every class
    /// appears in the training split.
    pub fn new(
        name: impl Into<String>,
        graph: CsrGraph<T>,
        features: Tensor<T>,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let n = graph.n();
        if features.rows() != n {
            return Err(Error::dataset(
                "features",
                format!("{} rows for {n} nodes", features.rows()),
            ));
        }
        if labels.len() != n {
            return Err(Error::dataset(
                "labels",
                format!("{} labels for {n} nodes", labels.len()),
            ));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::dataset(
                "labels",
                format!("node {i} has label {y} >= {num_classes} classes"),
            ));
        }
        let mut owner = vec![None; n];
        for (field, idx) in [
            ("splits.train", &splits.train),
            ("splits.val", &splits.val),
            ("splits.test", &splits.test),
        ] {
            if idx.is_empty() {
                return Err(Error::dataset(field, "empty split"));
            }
            for &i in idx {
                if i >= n {
                    return Err(Error::dataset(
                        field,
                        format!("index {i} out of range for {n} nodes"),
                    ));
                }
                if let Some(other) = owner[i].replace(field) {
                    return Err(Error::dataset(
                        field,
                        format!("index {i} also listed in {other}"),
                    ));
                }
            }
        }
        let mut seen = vec![false; num_classes];
        for &i in &splits.train {
            seen[labels[i]] = true;
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(Error::dataset(
                "splits.train",
                format!("class {c} has no training node"),
            ));
        }
        Ok(Self {
            name: name.into(),
            graph,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Features as a sparse matrix, for the input transform.
    pub fn feature_matrix(&self) -> Arc<CsrMatrix<T>> {
        Arc::new(CsrMatrix::from_dense(&self.features))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    let path = dir.join(file);
    fs::read(&path).map_err(|source| Error::Io { path, source })
}

fn write(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|source| Error::Io { path, source })
}

fn read_checked(dir: &Path, file: &str, meta: &Meta) -> Result<Vec<u8>> {
    let bytes = read(dir, file)?;
    let expected = meta
        .checksums
        .get(file)
        .ok_or_else(|| Error::dataset(format!("meta.checksums.{file}"), "missing checksum"))?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::dataset(
            file,
            format!("checksum mismatch: expected {expected}, got {actual}"),
        ));
    }
    Ok(bytes)
}

/// Loads and validates a dataset directory. Edges are symmetrized and
/// deduplicated and self-loops dropped.
pub fn load_dataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<Dataset<T>> {
    let dir = dir.as_ref();
    let meta: Meta = serde_json::from_slice(&read(dir, META_FILE)?)
        .map_err(|e| Error::dataset(META_FILE, e.to_string()))?;
    let (n, d) = (meta.n, meta.d);
    if n == 0 || d == 0 || meta.num_classes == 0 {
        return Err(Error::dataset(
            META_FILE,
            format!("degenerate sizes n={n} d={d} classes={}", meta.num_classes),
        ));
    }

    let raw = read_checked(dir, EDGES_FILE, &meta)?;
    if raw.len() % 8 != 0 {
        return Err(Error::dataset(
            EDGES_FILE,
            format!("{} bytes is not a whole number of u32 pairs", raw.len()),
        ));
    }
    let mut edges = Vec::with_capacity(raw.len() / 8);
    for (k, pair) in raw.chunks_exact(8).enumerate() {
        let src = u32::from_le_bytes(pair[..4].try_into().expect("4 bytes")) as usize;
        let dst = u32::from_le_bytes(pair[4..].try_into().expect("4 bytes")) as usize;
        if src >= n || dst >= n {
            return Err(Error::dataset(
                EDGES_FILE,
                format!("edge {k} ({src}, {dst}) out of range for {n} nodes"),
            ));
        }
        edges.push((src, dst));
    }
    if edges.len() != meta.num_edges {
        return Err(Error::dataset(
            "meta.num_edges",
            format!("{} declared, {} stored", meta.num_edges, edges.len()),
        ));
    }
    let graph = CsrGraph::from_edges(n, &edges, true)?;

    let raw = read_checked(dir, FEATURES_FILE, &meta)?;
    if raw.len() != n * d * 4 {
        return Err(Error::dataset(
            FEATURES_FILE,
            format!(
                "{} bytes, expected {} for {n}x{d} f32",
                raw.len(),
                n * d * 4
            ),
        ));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
        .collect();
    let features = Tensor::new(n, d, data)?;

    let raw = read_checked(dir, LABELS_FILE, &meta)?;
    if raw.len() != n * 2 {
        return Err(Error::dataset(
            LABELS_FILE,
            format!("{} bytes, expected {} for {n} u16 labels", raw.len(), n * 2),
        ));
    }
    let labels = raw
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")) as usize)
        .collect();

    let splits: Splits = serde_json::from_slice(&read_checked(dir, SPLITS_FILE, &meta)?)
        .map_err(|e| Error::dataset(SPLITS_FILE, e.to_string()))?;

    Dataset::new(meta.name, graph, features, labels, meta.num_classes, splits)
}

/// Writes `data` in the canonical format, one `(i, j)` pair with `i < j` per
/// undirected edge. Features are stored as `f32` and edge weights are not
/// stored.
pub fn store_dataset<T: Scalar>(data: &Dataset<T>, dir: impl AsRef<Path>) -> Result<Meta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if data.num_classes > u16::MAX as usize + 1 {
        return Err(Error::dataset(
            LABELS_FILE,
            format!("{} classes do not fit u16", data.num_classes),
        ));
    }
    let edge_list = data.graph.edge_list();
    let mut edges = Vec::with_capacity(edge_list.len() * 8);
    for (i, j) in &edge_list {
        edges.extend_from_slice(&(*i as u32).to_le_bytes());
        edges.extend_from_slice(&(*j as u32).to_le_bytes());
    }
    let features: Vec<u8> = data
        .features
        .data()
        .iter()
        .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
        .collect();
    let labels: Vec<u8> = data
        .labels
        .iter()
        .flat_map(|&y| (y as u16).to_le_bytes())
        .collect();

    let splits = serde_json::to_vec(&data.splits).expect("splits serialize");
    let mut checksums = BTreeMap::new();
    for (file, bytes) in [
        (EDGES_FILE, &edges),
        (FEATURES_FILE, &features),
        (LABELS_FILE, &labels),
        (SPLITS_FILE, &splits),
    ] {
        write(dir, file, bytes)?;
        checksums.insert(file.to_string(), sha256_hex(bytes));
    }
    let meta = Meta {
        name: data.name.clone(),
        n: data.n(),
        d: data.num_features(),
        num_classes: data.num_classes,
        num_edges: edge_list.len(),
        checksums,
    };
    let text = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write(dir, META_FILE, &text)?;
    Ok(meta)
}

/// Stochastic block model: `blocks` groups of `nodes_per_block` nodes, edges
/// with probability `p_in` inside a block and `p_out` across blocks.
/// Features are the one-hot block indicator (first `blocks` columns) plus
/// `noise`-scaled standard normal noise; labels are block ids; each block is
/// split 60/20/20 into train/val/test.
pub fn generate_sbm<T: Scalar>(
    blocks: usize,
    nodes_per_block: usize,
    p_in: f64,
    p_out: f64,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if blocks == 0 || nodes_per_block < 5 || d < blocks {
        return Err(Error::invalid(
            "generate_sbm",
            format!("need blocks >= 1, nodes_per_block >= 5 and d >= blocks; got {blocks}, {nodes_per_block}, {d}"),
        ));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(
                "generate_sbm",
                format!("edge probability {p} outside [0, 1]"),
            ));
        }
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid(
            "generate_sbm",
            format!("noise {noise} must be non-negative"),
        ));
    }
    let n = blocks * nodes_per_block;
    let block = |i: usize| i / nodes_per_block;
    let mut rng = Rng::substream(seed, Stream::Synthetic, &[0]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { p_in } else { p_out };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = CsrGraph::from_edges(n, &edges, true)?;
    let mut rng = Rng::substream(seed, Stream::Synthetic, &[1]);
    let features = Tensor::from_fn(n, d, |i, j| {
        let signal = if j == block(i) { 1.0 } else { 0.0 };
        T::of(signal + noise * rng.normal())
    });
    let labels = (0..n).map(block).collect();
    let mut rng = Rng::substream(seed, Stream::Split, &[]);
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let n_train = nodes_per_block * 3 / 5;
    let n_val = nodes_per_block / 5;
    for b in 0..blocks {
        let mut members: Vec<usize> = (b * nodes_per_block..(b + 1) * nodes_per_block).collect();
        rng.shuffle(&mut members);
        splits.train.extend_from_slice(&members[..n_train]);
        splits
            .val
            .extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort_unstable();
    }
    Dataset::new(
        format!("sbm-{blocks}x{nodes_per_block}"),
        graph,
        features,
        labels,
        blocks,
        splits,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_without_cross_edges_stays_in_blocks() {
        let ds = generate_sbm::<f64>(3, 20, 0.3, 0.0, 4, 0.1, 1).unwrap();
        for (i, j) in ds.graph.edge_list() {
            assert_eq!(i / 20, j / 20);
        }
        assert_eq!(ds.splits.train.len(), 36);
        assert_eq!(ds.splits.val.len(), 12);
        assert_eq!(ds.splits.test.len(), 12);
    }

    #[test]
    fn sbm_is_seeded() {
        let a = generate_sbm::<f64>(2, 10, 0.5, 0.1, 3, 0.5, 4).unwrap();
        let b = generate_sbm::<f64>(2, 10, 0.5, 0.1, 3, 0.5, 4).unwrap();
        assert_eq!(a, b);
        assert!(generate_sbm::<f64>(2, 10, 1.5, 0.1, 3, 0.5, 4).is_err());
        assert!(generate_sbm::<f64>(4, 10, 0.5, 0.1, 3, 0.5, 4).is_err());
    }

    #[test]
    fn dataset_rejects_overlapping_splits() {
        let g = CsrGraph::<f64>::empty(3);
        let splits = Splits {
            train: vec![0, 1],
            val: vec![1],
            test: vec![2],
        };
        let err = Dataset::new("x", g, Tensor::ones(3, 1), vec![0, 0, 0], 1, splits).unwrap_err();
        assert!(
            matches!(err, Error::Dataset { ref field, .. } if field == "splits.val"),
            "{err}"
        );
    }
}
