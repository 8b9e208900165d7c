//! Streaming tabular ingestion: CSV parsing, label encoding, train-split
//! normalization statistics, deterministic 70:30 splitting, and mini-batch
//! iteration that never loads the full dataset into memory.
//!
//! Rows are assigned to train/test by hashing `(row_index, seed)`, so the
//! split is stable under streaming and identical across runs and machines.
//! Normalization statistics come from the training split only.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

/// Standard deviations below this floor normalize to zero instead of
/// blowing up.
pub const STD_FLOOR: f64 = 1e-8;

/// Which side of the 70:30 split a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic hash split: train with probability 0.70. Pure function of
/// `(row_index, seed)`, identical on every platform.
pub fn split_70_30(row_index: u64, seed: u64) -> Split {
    let h = splitmix64(row_index.wrapping_add(splitmix64(seed)));
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    if unit < 0.70 {
        Split::Train
    } else {
        Split::Test
    }
}

/// How to locate the label column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// Scan settings for [`scan_manifest`].
#[derive(Debug, Clone)]
pub struct ManifestOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub label_column: LabelColumn,
    pub split_seed: u64,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        ManifestOptions {
            delimiter: b',',
            has_header: true,
            label_column: LabelColumn::Name("class".into()),
            split_seed: 0,
        }
    }
}

/// Everything a stream needs to read one dataset deterministically:
/// schema, label encoding, and train-split normalization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub delimiter: u8,
    pub has_header: bool,
    pub label_column_index: usize,
    pub label_column_name: String,
    pub feature_columns: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Sorted class labels; position is the encoded class index.
    pub class_names: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub split_seed: u64,
    pub n_rows: u64,
    pub train_rows: u64,
}

impl DatasetManifest {
    pub fn n_features(&self) -> usize {
        self.feature_columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// The normalization and label context to carry in a checkpoint.
    pub fn to_preprocessing(&self) -> Preprocessing {
        Preprocessing {
            feature_names: self.feature_names.clone(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            class_names: self.class_names.clone(),
            label_column: self.label_column_name.clone(),
            split_seed: self.split_seed,
        }
    }
}

/// Feature normalization and label context a model was trained with;
/// carried in the checkpoint so evaluation reproduces training exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preprocessing {
    pub feature_names: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub class_names: Vec<String>,
    pub label_column: String,
    pub split_seed: u64,
}

impl Preprocessing {
    /// Builds a manifest for evaluating `path` under this stored context:
    /// the file supplies the rows, while normalization statistics, class
    /// encoding, and the split seed come from the checkpoint. Fails when
    /// the file's feature count does not match.
    pub fn eval_manifest(
        &self,
        path: impl AsRef<Path>,
        label_override: Option<&str>,
    ) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let mut reader = open_reader(path, b',', true)?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| row_error(path, 0, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let label_name = label_override.unwrap_or(&self.label_column);
        let label_column_index = match label_name.parse::<usize>() {
            Ok(index) if index < header.len() => index,
            Ok(index) => {
                return Err(Error::InvalidArgument(format!(
                    "label column {index} out of range for {} columns",
                    header.len()
                )))
            }
            Err(_) => header.iter().position(|h| h == label_name).ok_or_else(|| {
                Error::InvalidArgument(format!("unknown label column {label_name:?}"))
            })?,
        };
        let feature_columns: Vec<usize> =
            (0..header.len()).filter(|&c| c != label_column_index).collect();
        if feature_columns.len() != self.feature_names.len() {
            return Err(Error::Model(format!(
                "dataset has {} feature columns, model expects {}",
                feature_columns.len(),
                self.feature_names.len()
            )));
        }
        Ok(DatasetManifest {
            path: path.to_path_buf(),
            delimiter: b',',
            has_header: true,
            label_column_index,
            label_column_name: header[label_column_index].clone(),
            feature_names: feature_columns.iter().map(|&c| header[c].clone()).collect(),
            feature_columns,
            class_names: self.class_names.clone(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            split_seed: self.split_seed,
            n_rows: 0,
            train_rows: 0,
        })
    }

    /// Normalizes one raw feature row with the stored statistics.
    pub fn normalize_row(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_mean.len() {
            return Err(Error::LengthMismatch {
                op: "normalize_row",
                expected: self.feature_mean.len(),
                got: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (mean, std))| (v - mean) / std.max(STD_FLOOR))
            .collect())
    }
}

fn row_error(path: &Path, row: u64, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.display().to_string(),
        row,
        msg: msg.into(),
    }
}

fn open_reader(path: &Path, delimiter: u8, has_header: bool) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_header)
        .flexible(true)
        .from_reader(file))
}

/// One streaming pass over the file: resolves the label column, validates
/// every row, discovers the class set, and accumulates per-feature
/// mean/std over the training split only.
pub fn scan_manifest(path: impl AsRef<Path>, options: &ManifestOptions) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let mut reader = open_reader(path, options.delimiter, options.has_header)?;

    let header: Vec<String> = if options.has_header {
        reader
            .headers()
            .map_err(|e| row_error(path, 0, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect()
    } else {
        Vec::new()
    };

    let mut label_index: Option<usize> = None;
    let mut n_columns: Option<usize> = if header.is_empty() {
        None
    } else {
        Some(header.len())
    };
    if let Some(cols) = n_columns {
        label_index = Some(resolve_label(&options.label_column, Some(&header), cols)?);
    }

    let mut classes: BTreeSet<String> = BTreeSet::new();
    // Welford accumulators over the training split
    let mut count = 0u64;
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    let mut n_rows = 0u64;
    let mut train_rows = 0u64;

    for (idx, record) in reader.records().enumerate() {
        let row_no = idx as u64 + 1;
        let record = record.map_err(|e| row_error(path, row_no, e.to_string()))?;
        let cols = *n_columns.get_or_insert(record.len());
        if label_index.is_none() {
            label_index = Some(resolve_label(&options.label_column, None, cols)?);
        }
        let label_index = label_index.unwrap();
        if record.len() != cols {
            return Err(row_error(
                path,
                row_no,
                format!("expected {cols} fields, got {}", record.len()),
            ));
        }
        if mean.is_empty() {
            mean = vec![0.0; cols - 1];
            m2 = vec![0.0; cols - 1];
        }
        let mut features = Vec::with_capacity(cols - 1);
        for (c, cell) in record.iter().enumerate() {
            if c == label_index {
                classes.insert(cell.trim().to_string());
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    row_error(path, row_no, format!("non-numeric feature cell {c:?}: {cell:?}"))
                })?;
                if !v.is_finite() {
                    return Err(row_error(path, row_no, format!("non-finite cell {c}")));
                }
                features.push(v);
            }
        }
        if split_70_30(idx as u64, options.split_seed) == Split::Train {
            train_rows += 1;
            count += 1;
            for (f, &v) in features.iter().enumerate() {
                let delta = v - mean[f];
                mean[f] += delta / count as f64;
                m2[f] += delta * (v - mean[f]);
            }
        }
        n_rows += 1;
    }

    let n_columns = n_columns.ok_or_else(|| row_error(path, 0, "empty file"))?;
    let label_index = label_index.unwrap();
    if classes.is_empty() {
        return Err(row_error(path, 0, "no data rows"));
    }
    let std: Vec<f64> = m2
        .iter()
        .map(|&s| {
            if count > 1 {
                (s / (count - 1) as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let feature_columns: Vec<usize> = (0..n_columns).filter(|&c| c != label_index).collect();
    let feature_names: Vec<String> = feature_columns
        .iter()
        .map(|&c| {
            if options.has_header {
                header[c].clone()
            } else {
                format!("col{c}")
            }
        })
        .collect();
    let label_column_name = if options.has_header {
        header[label_index].clone()
    } else {
        format!("col{label_index}")
    };
    Ok(DatasetManifest {
        path: path.to_path_buf(),
        delimiter: options.delimiter,
        has_header: options.has_header,
        label_column_index: label_index,
        label_column_name,
        feature_columns,
        feature_names,
        class_names: classes.into_iter().collect(),
        feature_mean: mean,
        feature_std: std,
        split_seed: options.split_seed,
        n_rows,
        train_rows,
    })
}

fn resolve_label(
    spec: &LabelColumn,
    header: Option<&[String]>,
    n_columns: usize,
) -> Result<usize> {
    match spec {
        LabelColumn::Index(i) => {
            if *i >= n_columns {
                return Err(Error::InvalidArgument(format!(
                    "label column {i} out of range for {n_columns} columns"
                )));
            }
            Ok(*i)
        }
        LabelColumn::Name(name) => {
            let header = header.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "label column {name:?} needs a header row"
                ))
            })?;
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown label column {name:?}")))
        }
    }
}

/// One mini-batch of normalized features and encoded labels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `batch_size x n_features`, normalized.
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// A restartable source of mini-batches.
pub trait BatchStream {
    /// Rewinds to the start of an epoch; the epoch number seeds shuffling.
    fn reset(&mut self, epoch: u64) -> Result<()>;
    fn next_batch(&mut self) -> Result<Option<Batch>>;
}

/// Out-of-core mini-batch iterator over one split of a CSV dataset.
///
/// Rows stream through a bounded shuffle window; memory use is
/// `max(shuffle_buffer_rows, batch_size) x width`, independent of file
/// size. Iteration order is deterministic given the seed and epoch, and
/// every split row appears exactly once per epoch.
pub struct DatasetStream {
    manifest: DatasetManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    shuffle_buffer_rows: usize,
    class_lookup: HashMap<String, usize>,
    reader: Option<csv::Reader<std::fs::File>>,
    row_index: u64,
    buffer: Vec<(Vec<f64>, usize)>,
    draining: bool,
    rng: ChaCha8Rng,
}

impl DatasetStream {
    /// `shuffle_buffer_rows` defaults to the batch size when `None`.
    pub fn new(
        manifest: &DatasetManifest,
        split: Split,
        batch_size: usize,
        seed: u64,
        shuffle_buffer_rows: Option<usize>,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let class_lookup = manifest
            .class_names
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Ok(DatasetStream {
            manifest: manifest.clone(),
            split,
            batch_size,
            seed,
            shuffle_buffer_rows: shuffle_buffer_rows.unwrap_or(batch_size).max(1),
            class_lookup,
            reader: None,
            row_index: 0,
            buffer: Vec::new(),
            draining: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn normalize(&self, features: &mut [f64]) {
        for (v, (mean, std)) in features.iter_mut().zip(
            self.manifest
                .feature_mean
                .iter()
                .zip(&self.manifest.feature_std),
        ) {
            *v = (*v - mean) / std.max(STD_FLOOR);
        }
    }

    /// Reads forward to the next row belonging to this stream's split.
    fn read_split_row(&mut self) -> Result<Option<(Vec<f64>, usize)>> {
        let reader = self.reader.as_mut().expect("stream not reset");
        let path = &self.manifest.path;
        let mut record = csv::StringRecord::new();
        loop {
            let more = reader
                .read_record(&mut record)
                .map_err(|e| row_error(path, self.row_index + 1, e.to_string()))?;
            if !more {
                return Ok(None);
            }
            let row_no = self.row_index + 1;
            let assignment = split_70_30(self.row_index, self.manifest.split_seed);
            self.row_index += 1;
            if assignment != self.split {
                continue;
            }
            let expected = self.manifest.feature_columns.len() + 1;
            if record.len() != expected {
                return Err(row_error(
                    path,
                    row_no,
                    format!("expected {expected} fields, got {}", record.len()),
                ));
            }
            let mut features = Vec::with_capacity(self.manifest.feature_columns.len());
            for &c in &self.manifest.feature_columns {
                let cell = record.get(c).unwrap();
                let v: f64 = cell.trim().parse().map_err(|_| {
                    row_error(path, row_no, format!("non-numeric feature cell {c}: {cell:?}"))
                })?;
                features.push(v);
            }
            let label_cell = record
                .get(self.manifest.label_column_index)
                .unwrap()
                .trim();
            let label = *self.class_lookup.get(label_cell).ok_or_else(|| {
                row_error(path, row_no, format!("unknown class label {label_cell:?}"))
            })?;
            self.normalize(&mut features);
            return Ok(Some((features, label)));
        }
    }

    /// Next row in shuffle-window order.
    fn next_row(&mut self) -> Result<Option<(Vec<f64>, usize)>> {
        loop {
            if self.draining {
                return Ok(self.buffer.pop());
            }
            match self.read_split_row()? {
                Some(row) => {
                    if self.buffer.len() < self.shuffle_buffer_rows {
                        self.buffer.push(row);
                        continue;
                    }
                    let j = self.rng.random_range(0..self.buffer.len());
                    let out = std::mem::replace(&mut self.buffer[j], row);
                    return Ok(Some(out));
                }
                None => {
                    // shuffle the tail once, then pop from the end
                    for i in (1..self.buffer.len()).rev() {
                        let j = self.rng.random_range(0..=i);
                        self.buffer.swap(i, j);
                    }
                    self.draining = true;
                }
            }
        }
    }
}

impl BatchStream for DatasetStream {
    fn reset(&mut self, epoch: u64) -> Result<()> {
        self.reader = Some(open_reader(
            &self.manifest.path,
            self.manifest.delimiter,
            self.manifest.has_header,
        )?);
        self.row_index = 0;
        self.buffer.clear();
        self.draining = false;
        self.rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed) ^ epoch);
        Ok(())
    }

    fn next_batch(&mut self) -> Result<Option<Batch>> {
        if self.reader.is_none() {
            self.reset(0)?;
        }
        let width = self.manifest.n_features();
        let mut rows: Vec<f64> = Vec::with_capacity(self.batch_size * width);
        let mut labels = Vec::with_capacity(self.batch_size);
        while labels.len() < self.batch_size {
            match self.next_row()? {
                Some((features, label)) => {
                    rows.extend_from_slice(&features);
                    labels.push(label);
                }
                None => break,
            }
        }
        if labels.is_empty() {
            return Ok(None);
        }
        let features = Matrix::from_vec(labels.len(), width, rows)?;
        Ok(Some(Batch { features, labels }))
    }
}

/// In-memory batch source with full per-epoch shuffling; used for
/// synthetic data in checks and tests.
#[derive(Debug, Clone)]
pub struct MemoryStream {
    features: Matrix,
    labels: Vec<usize>,
    batch_size: usize,
    seed: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl MemoryStream {
    pub fn new(features: Matrix, labels: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                op: "MemoryStream::new",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let order = (0..labels.len()).collect();
        Ok(MemoryStream {
            features,
            labels,
            batch_size,
            seed,
            order,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl BatchStream for MemoryStream {
    fn reset(&mut self, epoch: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed) ^ epoch);
        self.order = (0..self.labels.len()).collect();
        for i in (1..self.order.len()).rev() {
            let j = rng.random_range(0..=i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
        Ok(())
    }

    fn next_batch(&mut self) -> Result<Option<Batch>> {
        if self.cursor >= self.order.len() {
            return Ok(None);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let width = self.features.cols();
        let mut rows = Vec::with_capacity((end - self.cursor) * width);
        let mut labels = Vec::with_capacity(end - self.cursor);
        for &idx in &self.order[self.cursor..end] {
            rows.extend_from_slice(self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        self.cursor = end;
        Ok(Some(Batch {
            features: Matrix::from_vec(labels.len(), width, rows)?,
            labels,
        }))
    }
}
