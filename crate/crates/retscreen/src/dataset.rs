//! Label-table loading, split manifests, and synthetic desk-scale fixtures.
//!
//! Splits are used exactly as provided: records are sorted by id, never
//! reshuffled or re-partitioned, so a manifest built twice from the same
//! inputs is byte-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("label file {0} not found or unreadable: {1}")]
    MissingFile(PathBuf, std::io::Error),
    #[error("label file {path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("label file row {row}: cannot parse `{value}` as {what}")]
    BadValue { row: usize, value: String, what: &'static str },
    #[error("label file row {row}: label {value} is not binary (must be 0 or 1)")]
    NonBinaryLabel { row: usize, value: String },
    #[error("duplicate id {0} in label file")]
    DuplicateId(u32),
    #[error("missing image files for ids: {}", format_ids(.0))]
    MissingImages(Vec<u32>),
    #[error("unreadable or corrupt image for id {id} at {path}: {reason}")]
    BadImage { id: u32, path: PathBuf, reason: String },
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest line {line}: {reason}")]
    BadManifestLine { line: usize, reason: String },
}

fn format_ids(ids: &[u32]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: u32,
    pub path: PathBuf,
    pub label: u8,
}

/// An ordered, deterministic split manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: String,
    pub records: Vec<SampleRecord>,
    pub class_counts: [u64; 2],
}

/// id -> binary label mapping parsed from a CSV file.
#[derive(Debug, Clone)]
pub struct LabelTable {
    pub labels: BTreeMap<u32, u8>,
    pub source: PathBuf,
}

/// Column names and the image filename template, configurable because the
/// dataset's file schema is a convention, not a contract.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub id_column: String,
    pub label_column: String,
    /// Filename template; `{id}` is replaced by the record id.
    pub filename_template: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            id_column: "ID".to_string(),
            label_column: "Disease_Risk".to_string(),
            filename_template: "{id}.png".to_string(),
        }
    }
}

impl IngestConfig {
    pub fn filename_for(&self, id: u32) -> String {
        self.filename_template.replace("{id}", &id.to_string())
    }
}

/// Majority/minority ratio of a split; `Undefined` for single-class splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImbalanceRatio {
    Ratio(f64),
    Undefined,
}

impl fmt::Display for ImbalanceRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImbalanceRatio::Ratio(r) => write!(f, "{r:.3}"),
            ImbalanceRatio::Undefined => write!(f, "undefined (single-class split)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub class_counts: [u64; 2],
    pub total: u64,
    pub imbalance: ImbalanceRatio,
}

/// Parse the labels CSV. Malformed rows are hard errors with the offending
/// row number; duplicate ids are rejected.
pub fn load_label_table(csv_path: &Path, cfg: &IngestConfig) -> Result<LabelTable, DatasetError> {
    let file = fs::File::open(csv_path)
        .map_err(|e| DatasetError::MissingFile(csv_path.to_path_buf(), e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let id_idx = headers
        .iter()
        .position(|h| h == cfg.id_column)
        .ok_or_else(|| DatasetError::MissingColumn {
            path: csv_path.to_path_buf(),
            column: cfg.id_column.clone(),
        })?;
    let label_idx = headers
        .iter()
        .position(|h| h == cfg.label_column)
        .ok_or_else(|| DatasetError::MissingColumn {
            path: csv_path.to_path_buf(),
            column: cfg.label_column.clone(),
        })?;

    let mut labels = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record?;
        let id_raw = record.get(id_idx).unwrap_or("");
        let id: u32 = id_raw.trim().parse().map_err(|_| DatasetError::BadValue {
            row,
            value: id_raw.to_string(),
            what: "an integer id",
        })?;
        let label_raw = record.get(label_idx).unwrap_or("");
        let label: i64 = label_raw.trim().parse().map_err(|_| DatasetError::BadValue {
            row,
            value: label_raw.to_string(),
            what: "an integer label",
        })?;
        if label != 0 && label != 1 {
            return Err(DatasetError::NonBinaryLabel {
                row,
                value: label_raw.to_string(),
            });
        }
        if labels.insert(id, label as u8).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok(LabelTable { labels, source: csv_path.to_path_buf() })
}

/// Build a split manifest from a label table and image directory. Every id
/// must resolve to a decodable image; missing files are reported all at
/// once, and a corrupt image is a hard error rather than a silent skip.
pub fn build_manifest(
    table: &LabelTable,
    image_dir: &Path,
    split_name: &str,
    cfg: &IngestConfig,
) -> Result<DatasetSplit, DatasetError> {
    let mut missing = Vec::new();
    let mut records = Vec::with_capacity(table.labels.len());
    for (&id, &label) in &table.labels {
        let path = image_dir.join(cfg.filename_for(id));
        if !path.is_file() {
            missing.push(id);
            continue;
        }
        // header decode; verifies the file is a parseable image
        if let Err(e) = image::image_dimensions(&path) {
            return Err(DatasetError::BadImage { id, path, reason: e.to_string() });
        }
        records.push(SampleRecord { id, path, label });
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingImages(missing));
    }
    if records.is_empty() {
        return Err(DatasetError::EmptySplit(split_name.to_string()));
    }
    // BTreeMap iteration already yields ids in ascending order
    let mut class_counts = [0u64; 2];
    for r in &records {
        class_counts[r.label as usize] += 1;
    }
    Ok(DatasetSplit {
        name: split_name.to_string(),
        records,
        class_counts,
    })
}

pub fn summarize_split(split: &DatasetSplit) -> Result<SplitSummary, DatasetError> {
    if split.records.is_empty() {
        return Err(DatasetError::EmptySplit(split.name.clone()));
    }
    let mut counts = [0u64; 2];
    for r in &split.records {
        counts[r.label as usize] += 1;
    }
    let imbalance = if counts[0] == 0 || counts[1] == 0 {
        ImbalanceRatio::Undefined
    } else {
        let majority = counts[0].max(counts[1]) as f64;
        let minority = counts[0].min(counts[1]) as f64;
        ImbalanceRatio::Ratio(majority / minority)
    };
    Ok(SplitSummary {
        class_counts: counts,
        total: counts[0] + counts[1],
        imbalance,
    })
}

/// Persist a manifest as `id,relative_path,label` lines in sorted order.
/// Paths are stored relative to `base_dir`.
pub fn write_manifest(
    split: &DatasetSplit,
    base_dir: &Path,
    out_path: &Path,
) -> Result<(), DatasetError> {
    let mut buf = String::new();
    for r in &split.records {
        let rel = r.path.strip_prefix(base_dir).unwrap_or(&r.path);
        buf.push_str(&format!("{},{},{}\n", r.id, rel.display(), r.label));
    }
    let mut file = fs::File::create(out_path).map_err(|source| DatasetError::Io {
        path: out_path.to_path_buf(),
        source,
    })?;
    file.write_all(buf.as_bytes()).map_err(|source| DatasetError::Io {
        path: out_path.to_path_buf(),
        source,
    })
}

/// Read a manifest written by [`write_manifest`]; paths are resolved against
/// `base_dir`.
pub fn read_manifest(
    manifest_path: &Path,
    base_dir: &Path,
    split_name: &str,
) -> Result<DatasetSplit, DatasetError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| DatasetError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    let mut class_counts = [0u64; 2];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(DatasetError::BadManifestLine {
                line: i + 1,
                reason: "expected id,relative_path,label".to_string(),
            });
        }
        let id: u32 = parts[0].parse().map_err(|_| DatasetError::BadManifestLine {
            line: i + 1,
            reason: format!("bad id `{}`", parts[0]),
        })?;
        let label: u8 = parts[2].parse().map_err(|_| DatasetError::BadManifestLine {
            line: i + 1,
            reason: format!("bad label `{}`", parts[2]),
        })?;
        if label > 1 {
            return Err(DatasetError::BadManifestLine {
                line: i + 1,
                reason: format!("label {label} is not binary"),
            });
        }
        class_counts[label as usize] += 1;
        records.push(SampleRecord {
            id,
            path: base_dir.join(parts[1]),
            label,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptySplit(split_name.to_string()));
    }
    Ok(DatasetSplit {
        name: split_name.to_string(),
        records,
        class_counts,
    })
}

/// Generate a separable synthetic split: class 0 images are dark, class 1
/// images bright, so mean intensity alone distinguishes them. Deterministic
/// for a fixed seed. Writes `2 * n_per_class` PNGs plus a labels CSV into
/// `out_dir` and returns the split.
pub fn generate_synthetic_fixture(
    n_per_class: u32,
    image_size: u32,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetSplit, DatasetError> {
    assert!(n_per_class >= 1, "n_per_class must be >= 1");
    fs::create_dir_all(out_dir).map_err(|source| DatasetError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut csv_body = String::from("ID,Disease_Risk\n");
    for id in 1..=(2 * n_per_class) {
        let label = u8::from(id > n_per_class);
        // dark range for normals, bright range for diseased
        let (lo, hi) = if label == 0 { (20u8, 100u8) } else { (150u8, 235u8) };
        let mut img = image::RgbImage::new(image_size, image_size);
        for pixel in img.pixels_mut() {
            pixel.0 = [
                rng.gen_range(lo..=hi),
                rng.gen_range(lo..=hi),
                rng.gen_range(lo..=hi),
            ];
        }
        let path = out_dir.join(format!("{id}.png"));
        img.save(&path).map_err(|e| DatasetError::BadImage {
            id,
            path: path.clone(),
            reason: e.to_string(),
        })?;
        csv_body.push_str(&format!("{id},{label}\n"));
        records.push(SampleRecord { id, path, label });
    }
    let csv_path = out_dir.join("labels.csv");
    fs::write(&csv_path, csv_body).map_err(|source| DatasetError::Io {
        path: csv_path,
        source,
    })?;
    Ok(DatasetSplit {
        name: "synthetic".to_string(),
        records,
        class_counts: [n_per_class as u64, n_per_class as u64],
    })
}
