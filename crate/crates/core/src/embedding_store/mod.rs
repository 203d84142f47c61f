//! Embedding tables and their on-disk representation.
//!
//! A table is stored as a `.cemb` payload, an optional `.clbl` label file
//! with the same stem, and an optional `<stem>.manifest.json` sidecar.

pub mod format;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::{Manifest, PromptCell};

/// Tolerance on the row norm of tables flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("header declares {declared_bytes} payload bytes but file holds {payload_bytes}")]
    DimMismatch {
        declared_bytes: u64,
        payload_bytes: u64,
    },
    #[error("header declares dim = 0")]
    ZeroDim,
    #[error("header sizes overflow")]
    HeaderOverflow,
    #[error("row {row} has zero L2 norm")]
    ZeroNormRow { row: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::IoFailure {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Dense row-major `f32` matrix with per-row class labels.
///
/// Tables are immutable once built; every constructor validates the
/// invariants, so a value of this type is always well-formed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    data: Vec<f32>,
    dim: usize,
    labels: Option<Vec<u32>>,
    domain_ids: Option<Vec<u32>>,
    normalized: bool,
}

impl EmbeddingTable {
    pub fn new(
        data: Vec<f32>,
        dim: usize,
        labels: Option<Vec<u32>>,
        domain_ids: Option<Vec<u32>>,
        normalized: bool,
    ) -> Result<Self, StoreError> {
        let table = Self {
            data,
            dim,
            labels,
            domain_ids,
            normalized,
        };
        table.validate()?;
        Ok(table)
    }

    /// Unnormalized table from rows; convenient for tests and generators.
    pub fn from_rows(rows: &[Vec<f32>], labels: Option<Vec<u32>>) -> Result<Self, StoreError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(StoreError::InvariantViolation(
                "rows have differing lengths".into(),
            ));
        }
        Self::new(rows.concat(), dim, labels, None, false)
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if !self.data.len().is_multiple_of(self.dim) {
            return Err(StoreError::InvariantViolation(format!(
                "{} values do not fill rows of dim {}",
                self.data.len(),
                self.dim
            )));
        }
        let rows = self.num_rows();
        if let Some(labels) = &self.labels {
            if labels.len() != rows {
                return Err(StoreError::InvariantViolation(format!(
                    "{} labels for {rows} rows",
                    labels.len()
                )));
            }
        }
        if let Some(domains) = &self.domain_ids {
            if self.labels.is_none() {
                return Err(StoreError::InvariantViolation(
                    "domain ids require labels".into(),
                ));
            }
            if domains.len() != rows {
                return Err(StoreError::InvariantViolation(format!(
                    "{} domain ids for {rows} rows",
                    domains.len()
                )));
            }
        }
        if self.normalized {
            for i in 0..rows {
                let norm = l2_norm(self.row(i));
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(StoreError::InvariantViolation(format!(
                        "row {i} has norm {norm} but table is flagged normalized"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn domain_ids(&self) -> Option<&[u32]> {
        self.domain_ids.as_deref()
    }

    /// Replaces the label columns, keeping the embedding payload.
    pub fn with_labels(
        self,
        labels: Option<Vec<u32>>,
        domain_ids: Option<Vec<u32>>,
    ) -> Result<Self, StoreError> {
        Self::new(self.data, self.dim, labels, domain_ids, self.normalized)
    }

    /// Copies the selected rows (in the given order) into a new table.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let pick = |col: &Option<Vec<u32>>| {
            col.as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect::<Vec<_>>())
        };
        Self {
            data,
            dim: self.dim,
            labels: pick(&self.labels),
            domain_ids: pick(&self.domain_ids),
            normalized: self.normalized,
        }
    }
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Scales every row to unit L2 norm.
pub fn l2_normalize(table: &EmbeddingTable) -> Result<EmbeddingTable, StoreError> {
    let mut data = Vec::with_capacity(table.data.len());
    for (i, row) in table.rows().enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 || !norm.is_finite() {
            return Err(StoreError::ZeroNormRow { row: i });
        }
        data.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    EmbeddingTable::new(
        data,
        table.dim,
        table.labels.clone(),
        table.domain_ids.clone(),
        true,
    )
}

/// `foo/bar.cemb` -> `foo/bar.clbl`.
pub fn labels_path(embeddings: &Path) -> PathBuf {
    embeddings.with_extension("clbl")
}

/// `foo/bar.cemb` -> `foo/bar.manifest.json`.
pub fn manifest_path(embeddings: &Path) -> PathBuf {
    let stem = embeddings
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    embeddings.with_file_name(format!("{stem}.manifest.json"))
}

/// Loads a `.cemb` file, plus the sibling `.clbl` file if one exists.
pub fn load_table(path: &Path) -> Result<EmbeddingTable, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let raw = format::decode_embeddings(&bytes)?;

    let lbl_path = labels_path(path);
    let (labels, domain_ids) = if lbl_path.exists() {
        let bytes = fs::read(&lbl_path).map_err(|e| StoreError::io(&lbl_path, e))?;
        let raw_labels = format::decode_labels(&bytes)?;
        if raw_labels.labels.len() != raw.rows {
            return Err(StoreError::InvariantViolation(format!(
                "{} holds {} labels but {} has {} rows",
                lbl_path.display(),
                raw_labels.labels.len(),
                path.display(),
                raw.rows
            )));
        }
        (Some(raw_labels.labels), raw_labels.domain_ids)
    } else {
        (None, None)
    };
    EmbeddingTable::new(raw.data, raw.dim, labels, domain_ids, raw.normalized)
}

/// Writes the `.cemb` payload and, when the table carries labels, the
/// sibling `.clbl` file.
pub fn save_table(table: &EmbeddingTable, path: &Path) -> Result<(), StoreError> {
    table.validate()?;
    let bytes =
        format::encode_embeddings(table.num_rows(), table.dim, table.normalized, &table.data);
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))?;
    if let Some(labels) = &table.labels {
        let lbl_path = labels_path(path);
        let bytes = format::encode_labels(labels, table.domain_ids.as_deref());
        fs::write(&lbl_path, bytes).map_err(|e| StoreError::io(&lbl_path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..10)).collect();
        EmbeddingTable::new(data, dim, Some(labels), None, false).unwrap()
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
        dot / (l2_norm(a) * l2_norm(b))
    }

    #[test]
    fn round_trip_random_table_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cemb");
        let table = random_table(100, 64, 7);
        save_table(&table, &path).unwrap();
        let loaded = load_table(&path).unwrap();
        let bits = |t: &EmbeddingTable| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&table), bits(&loaded));
        assert_eq!(table, loaded);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.cemb");
        let b = dir.path().join("b.cemb");
        let table = random_table(17, 5, 3)
            .with_labels(Some(vec![1; 17]), Some((0..17).collect()))
            .unwrap();
        save_table(&table, &a).unwrap();
        save_table(&load_table(&a).unwrap(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(labels_path(&a)).unwrap(), fs::read(labels_path(&b)).unwrap());
    }

    #[test]
    fn empty_rows_table_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.cemb");
        let table = EmbeddingTable::new(vec![], 8, None, None, false).unwrap();
        save_table(&table, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, format::EMBEDDING_HEADER_LEN);
        let loaded = load_table(&path).unwrap();
        assert_eq!((loaded.num_rows(), loaded.dim()), (0, 8));
    }

    #[test]
    fn normalized_flag_with_long_row_is_rejected() {
        let err = EmbeddingTable::new(vec![1.0, 0.0, 2.0, 0.0], 2, None, None, true).unwrap_err();
        assert!(matches!(err, StoreError::InvariantViolation(_)));
    }

    #[test]
    fn save_rejects_flagged_long_row_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cemb");
        let bad = EmbeddingTable {
            data: vec![2.0, 0.0],
            dim: 2,
            labels: None,
            domain_ids: None,
            normalized: true,
        };
        assert!(matches!(save_table(&bad, &path), Err(StoreError::InvariantViolation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn label_count_must_match_rows() {
        assert!(EmbeddingTable::new(vec![1.0; 6], 3, Some(vec![0]), None, false).is_err());
        assert!(EmbeddingTable::new(vec![1.0; 6], 3, Some(vec![0, 1]), Some(vec![0]), false).is_err());
    }

    #[test]
    fn normalize_three_four_five() {
        let t = EmbeddingTable::from_rows(&[vec![3.0, 4.0]], None).unwrap();
        let n = l2_normalize(&t).unwrap();
        assert!(n.is_normalized());
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_leaves_unit_rows_alone() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]], None).unwrap();
        let n = l2_normalize(&t).unwrap();
        for (a, b) in t.data().iter().zip(n.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn normalize_reports_zero_row() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]], None).unwrap();
        assert!(matches!(l2_normalize(&t), Err(StoreError::ZeroNormRow { row: 1 })));
    }

    #[test]
    fn normalize_preserves_direction() {
        let t = random_table(50, 16, 11);
        let n = l2_normalize(&t).unwrap();
        for i in 0..t.num_rows() {
            assert!((cosine(t.row(i), n.row(i)) - 1.0).abs() < 1e-6);
            assert!((l2_norm(n.row(i)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn manifest_path_uses_stem() {
        assert_eq!(
            manifest_path(Path::new("out/cifar100_test.cemb")),
            PathBuf::from("out/cifar100_test.manifest.json")
        );
        assert_eq!(labels_path(Path::new("a/b.cemb")), PathBuf::from("a/b.clbl"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn load_inverts_save(rows in 0usize..20, dim in 1usize..12, seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.cemb");
            let table = random_table(rows, dim, seed);
            save_table(&table, &path).unwrap();
            prop_assert_eq!(load_table(&path).unwrap(), table);
        }

        #[test]
        fn normalize_is_idempotent(rows in 1usize..20, dim in 1usize..32, seed in any::<u64>()) {
            let t = random_table(rows, dim, seed);
            prop_assume!(t.rows().all(|r| l2_norm(r) > 1e-3));
            let once = l2_normalize(&t).unwrap();
            let twice = l2_normalize(&once).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn dot_equals_cosine_after_normalizing(dim in 1usize..64, seed in any::<u64>()) {
            let t = random_table(2, dim, seed);
            prop_assume!(t.rows().all(|r| l2_norm(r) > 1e-3));
            let n = l2_normalize(&t).unwrap();
            let dot: f64 = n.row(0).iter().zip(n.row(1)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            prop_assert!((dot - cosine(t.row(0), t.row(1))).abs() < 1e-5);
        }
    }
}
