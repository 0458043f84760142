//! Dataset manifests, BOLD matrix ingestion, run configuration, and the
//! seeded synthetic connectome generator.
//!
//! A dataset is a `manifest.csv` with columns `subject_id,label,path` plus one
//! CSV per subject holding the M x T BOLD matrix (M rows of T values, no
//! header). All paths are relative to the manifest's directory, and all
//! subjects must share the same (M, T) so the window count is uniform.

mod config;
mod synth;

pub use config::{default_config, load_run_config, ConfigError, RunConfig};
pub use synth::{generate_synthetic, SynthSpec};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gradcore::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("manifest contains no subjects")]
    Empty,
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("subject `{subject}`: label must be 0 or 1, got `{found}`")]
    BadLabel { subject: String, found: String },
    #[error("subject `{subject}` ({path}): {detail}")]
    BoldFile {
        subject: String,
        path: PathBuf,
        detail: String,
    },
    #[error("subject `{subject}`: expected shape {expected_m}x{expected_t}, found {found_m}x{found_t}")]
    ShapeMismatch {
        subject: String,
        expected_m: usize,
        expected_t: usize,
        found_m: usize,
        found_t: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One manifest row: a subject's identity, class label, and BOLD file path.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// 0 = control, 1 = case.
    pub label: u8,
    pub path: PathBuf,
}

/// Validated dataset index: every referenced file exists and parses to the
/// shared M x T shape.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<SubjectRecord>,
    pub m: usize,
    pub t: usize,
}

impl DatasetManifest {
    pub fn n_subjects(&self) -> usize {
        self.records.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// One subject's region-by-time signal matrix plus identity and label.
#[derive(Debug, Clone)]
pub struct BoldSeries {
    pub subject_id: String,
    pub label: u8,
    /// M x T matrix, one row per ROI.
    pub data: Tensor,
}

/// Manifest plus the parsed BOLD matrices, in manifest order.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub subjects: Vec<BoldSeries>,
}

/// Parses and fully validates a manifest (reads every BOLD file).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    load_dataset(path).map(|d| d.manifest)
}

/// Parses a manifest and returns it together with every subject's series.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset, DataError> {
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;

    let headers = reader.headers().map_err(|e| DataError::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let expected = ["subject_id", "label", "path"];
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(DataError::Manifest {
            path: path.to_path_buf(),
            detail: format!("header must be `subject_id,label,path`, got `{}`", found.join(",")),
        });
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if row.len() != 3 {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                detail: format!("expected 3 columns, got {}", row.len()),
            });
        }
        let subject_id = row[0].to_string();
        if !seen.insert(subject_id.clone()) {
            return Err(DataError::DuplicateSubject(subject_id));
        }
        let label: u8 = match &row[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::BadLabel {
                    subject: subject_id,
                    found: other.to_string(),
                })
            }
        };
        records.push(SubjectRecord {
            subject_id,
            label,
            path: dir.join(&row[2]),
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty);
    }

    let mut subjects = Vec::with_capacity(records.len());
    let mut shape: Option<(usize, usize)> = None;
    for record in &records {
        let data = load_bold_matrix(&record.path, &record.subject_id)?;
        let (m, t) = (data.rows(), data.cols());
        match shape {
            None => shape = Some((m, t)),
            Some((em, et)) => {
                if (m, t) != (em, et) {
                    return Err(DataError::ShapeMismatch {
                        subject: record.subject_id.clone(),
                        expected_m: em,
                        expected_t: et,
                        found_m: m,
                        found_t: t,
                    });
                }
            }
        }
        subjects.push(BoldSeries {
            subject_id: record.subject_id.clone(),
            label: record.label,
            data,
        });
    }
    let (m, t) = shape.expect("at least one record");
    Ok(LoadedDataset {
        manifest: DatasetManifest { records, m, t },
        subjects,
    })
}

/// Reads one M x T BOLD matrix: CSV, M rows of T values, no header.
pub fn load_bold_matrix(path: &Path, subject: &str) -> Result<Tensor, DataError> {
    let file_err = |detail: String| DataError::BoldFile {
        subject: subject.to_string(),
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| file_err(e.to_string()))?;
    let mut data = Vec::new();
    let mut t: Option<usize> = None;
    let mut rows = 0usize;
    for row in reader.records() {
        let row = row.map_err(|e| file_err(e.to_string()))?;
        match t {
            None => t = Some(row.len()),
            Some(width) => {
                if row.len() != width {
                    return Err(file_err(format!(
                        "row {rows} has {} values, expected {width}",
                        row.len()
                    )));
                }
            }
        }
        for field in row.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| file_err(format!("row {rows}: `{field}` is not a number")))?;
            data.push(v);
        }
        rows += 1;
    }
    let t = t.ok_or_else(|| file_err("file is empty".into()))?;
    if t == 0 {
        return Err(file_err("rows have no values".into()));
    }
    Tensor::matrix(rows, t, data).map_err(|e| file_err(e.to_string()))
}

/// Writes one BOLD matrix in the manifest's CSV convention.
pub fn write_bold_matrix(path: &Path, data: &Tensor) -> Result<(), DataError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (m, t) = (data.rows(), data.cols());
    for i in 0..m {
        let mut line = String::new();
        for j in 0..t {
            if j > 0 {
                line.push(',');
            }
            // shortest round-trip formatting: parsing reproduces the bits
            line.push_str(&format!("{}", data.at(i, j)));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(dir: &Path, rows: &[(&str, u8, &str)]) -> PathBuf {
        let path = dir.join("manifest.csv");
        let mut text = String::from("subject_id,label,path\n");
        for (id, label, file) in rows {
            text.push_str(&format!("{id},{label},{file}\n"));
        }
        fs::write(&path, text).unwrap();
        path
    }

    fn write_matrix(dir: &Path, name: &str, m: usize, t: usize) {
        let data: Vec<f64> = (0..m * t).map(|i| (i as f64 * 0.37).sin()).collect();
        let tensor = Tensor::matrix(m, t, data).unwrap();
        write_bold_matrix(&dir.join(name), &tensor).unwrap();
    }

    #[test]
    fn manifest_of_uniform_subjects_echoes_shape() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            write_matrix(dir.path(), &format!("s{i}.csv"), 16, 100);
        }
        let path = write_manifest(
            dir.path(),
            &[
                ("s0", 0, "s0.csv"),
                ("s1", 1, "s1.csv"),
                ("s2", 0, "s2.csv"),
                ("s3", 1, "s3.csv"),
            ],
        );
        let manifest = load_manifest(&path).unwrap();
        assert_eq!((manifest.m, manifest.t), (16, 100));
        assert_eq!(manifest.n_subjects(), 4);
        assert_eq!(manifest.labels(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn shape_mismatch_names_subject_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        write_matrix(dir.path(), "a.csv", 16, 100);
        write_matrix(dir.path(), "b.csv", 16, 90);
        let path = write_manifest(dir.path(), &[("a", 0, "a.csv"), ("b", 1, "b.csv")]);
        let err = load_manifest(&path).unwrap_err();
        match err {
            DataError::ShapeMismatch {
                subject,
                found_t,
                expected_t,
                ..
            } => {
                assert_eq!(subject, "b");
                assert_eq!((expected_t, found_t), (100, 90));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[]);
        assert!(matches!(load_manifest(&path).unwrap_err(), DataError::Empty));
    }

    #[test]
    fn duplicate_subject_id_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_matrix(dir.path(), "a.csv", 4, 10);
        let path = write_manifest(dir.path(), &[("a", 0, "a.csv"), ("a", 1, "a.csv")]);
        assert!(matches!(
            load_manifest(&path).unwrap_err(),
            DataError::DuplicateSubject(_)
        ));
    }

    #[test]
    fn bad_label_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_matrix(dir.path(), "a.csv", 4, 10);
        let path = write_manifest(dir.path(), &[("a", 0, "a.csv")]);
        let text = fs::read_to_string(&path).unwrap().replace("a,0,", "a,2,");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_manifest(&path).unwrap_err(),
            DataError::BadLabel { .. }
        ));
    }

    #[test]
    fn bold_matrix_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 1.7371).tan()).collect();
        let tensor = Tensor::matrix(3, 4, data).unwrap();
        let path = dir.path().join("m.csv");
        write_bold_matrix(&path, &tensor).unwrap();
        let back = load_bold_matrix(&path, "m").unwrap();
        assert_eq!(back.data(), tensor.data());
    }
}
