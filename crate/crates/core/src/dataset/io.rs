use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Split};
use crate::numeric::Matrix;

pub const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `label,f0,...,f{d-1}` rows. Floats use the shortest decimal form
/// that parses back to the same bits.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut header = String::from("label");
    for j in 0..dataset.feature_dim() {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(out, "{header}").map_err(io_err(path))?;
    for (i, &label) in dataset.labels.iter().enumerate() {
        let mut line = label.to_string();
        for v in dataset.features.row(i) {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Loads a CSV dataset, taking the class count from the largest label.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    load_impl(path, None, Split::Train)
}

/// Loads a CSV dataset whose labels must lie in `0..num_classes`.
pub fn load_csv_with_classes(path: &Path, num_classes: usize, split: Split) -> Result<Dataset, DataError> {
    load_impl(path, Some(num_classes), split)
}

fn load_impl(path: &Path, num_classes: Option<usize>, split: Split) -> Result<Dataset, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, msg: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = reader.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => {
            let header = header.map_err(io_err(path))?;
            let cols: Vec<&str> = header.trim().split(',').collect();
            if cols.first() != Some(&"label") {
                return Err(parse_err(1, "header must start with `label`".into()));
            }
            for (j, name) in cols[1..].iter().enumerate() {
                if *name != format!("f{j}") {
                    return Err(parse_err(1, format!("expected column f{j}, found `{name}`")));
                }
            }
            cols.len() - 1
        }
        None => return Err(DataError::Empty { path: path.to_path_buf() }),
    };

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(line_no, format!("expected {} fields, found {}", dim + 1, fields.len())));
        }
        let label: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("label `{}` is not a non-negative integer", fields[0])))?;
        if let Some(m) = num_classes {
            if label >= m {
                return Err(parse_err(line_no, format!("label {label} outside 0..{m}")));
            }
        }
        for f in &fields[1..] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("feature `{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("feature `{f}` is not finite")));
            }
            data.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::Empty { path: path.to_path_buf() });
    }
    let m = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&l| l + 1));
    let features = Matrix::new(labels.len(), dim, data).map_err(|e| parse_err(0, e.to_string()))?;
    Dataset::new(features, labels, m, split)
}

/// Dataset manifest tying the train/test CSVs together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_counts: Vec<usize>,
    pub train_csv: String,
    pub test_csv: String,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                msg: format!(
                    "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                    manifest.version
                ),
            });
        }
        if manifest.class_counts.len() != manifest.num_classes {
            return Err(DataError::Manifest {
                path: path.to_path_buf(),
                msg: format!(
                    "class_counts has {} entries for {} classes",
                    manifest.class_counts.len(),
                    manifest.num_classes
                ),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    fn resolve(manifest_path: &Path, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// Loads both splits, checking them against the manifest.
    pub fn load(&self, manifest_path: &Path) -> Result<(Dataset, Dataset), DataError> {
        let train_path = Self::resolve(manifest_path, &self.train_csv);
        let test_path = Self::resolve(manifest_path, &self.test_csv);
        let train = load_csv_with_classes(&train_path, self.num_classes, Split::Train)?;
        let test = load_csv_with_classes(&test_path, self.num_classes, Split::Test)?;
        for (ds, p) in [(&train, &train_path), (&test, &test_path)] {
            if ds.feature_dim() != self.feature_dim {
                return Err(DataError::Manifest {
                    path: p.clone(),
                    msg: format!(
                        "feature_dim {} does not match manifest feature_dim {}",
                        ds.feature_dim(),
                        self.feature_dim
                    ),
                });
            }
        }
        if train.class_counts != self.class_counts {
            return Err(DataError::Manifest {
                path: train_path,
                msg: "training class counts differ from manifest".into(),
            });
        }
        if let Some(c) = train.class_counts.iter().position(|&n| n == 0) {
            return Err(DataError::Manifest {
                path: train_path,
                msg: format!("class {c} has no training samples"),
            });
        }
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_lt, LtGenConfig};

    #[test]
    fn small_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0,f1\n1,0.5,-2\n0,3e-3,4.25\n").unwrap();
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.features.shape(), (2, 2));
        assert_eq!(ds.features.row(1), &[0.003, 4.25]);
        assert_eq!(ds.class_counts, vec![1, 1]);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0,f1\n").unwrap();
        assert!(matches!(load_csv(&p), Err(DataError::Empty { .. })));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0\n0,1.0\n1,abc\n").unwrap();
        match load_csv(&p) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "label,f0\n0,1.0,2.0\n").unwrap();
        assert!(matches!(load_csv(&p), Err(DataError::Parse { line: 2, .. })));
        fs::write(&p, "label,f0\n0,1.0\n5,2.0\n").unwrap();
        assert!(matches!(
            load_csv_with_classes(&p, 3, Split::Test),
            Err(DataError::Parse { line: 3, .. })
        ));
        fs::write(&p, "label,f0\n-1,1.0\n").unwrap();
        assert!(matches!(load_csv(&p), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = LtGenConfig {
            num_classes: 4,
            feature_dim: 5,
            max_count: 30,
            imbalance_factor: 10.0,
            test_per_class: 3,
            ..LtGenConfig::default()
        };
        let (train, _) = generate_lt(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.csv");
        write_csv(&train, &p).unwrap();
        let back = load_csv_with_classes(&p, 4, Split::Train).unwrap();
        assert_eq!(back.labels, train.labels);
        let same_bits = back
            .features
            .data()
            .iter()
            .zip(train.features.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
        assert_eq!(back.class_counts, train.class_counts);
    }

    #[test]
    fn manifest_version_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        fs::write(
            &p,
            r#"{"version":2,"num_classes":1,"feature_dim":1,"class_counts":[1],"train_csv":"a","test_csv":"b","seed":0}"#,
        )
        .unwrap();
        let msg = DatasetManifest::read(&p).unwrap_err().to_string();
        assert!(msg.contains("version 2"), "{msg}");
    }
}
