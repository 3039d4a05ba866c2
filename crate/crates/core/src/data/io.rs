use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffmath::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{DomainSequence, EvaluatedSequence, HeldOutLabels, LabeledDataset, UnlabeledDomain};

/// One domain as stored on disk. Rows with an empty label field are unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile<F> {
    pub features: Mat<F>,
    pub labels: Vec<Option<u32>>,
    pub time_index: F,
}

impl<F: Scalar> DatasetFile<F> {
    pub fn from_labeled(d: &LabeledDataset<F>) -> Self {
        DatasetFile {
            features: d.features().clone(),
            labels: d.labels().iter().map(|&y| Some(y)).collect(),
            time_index: d.time_index(),
        }
    }

    pub fn from_unlabeled(u: &UnlabeledDomain<F>, held_out: Option<&[u32]>) -> Self {
        DatasetFile {
            features: u.features.clone(),
            labels: match held_out {
                Some(l) => l.iter().map(|&y| Some(y)).collect(),
                None => vec![None; u.len()],
            },
            time_index: u.time_index,
        }
    }

    pub fn into_labeled(self, class_count: Option<usize>) -> Result<LabeledDataset<F>> {
        let labels: Option<Vec<u32>> = self.labels.iter().copied().collect();
        let labels = labels.ok_or_else(|| Error::InvalidArgument("labeled dataset has rows without labels".into()))?;
        match class_count {
            Some(c) => LabeledDataset::with_class_count(self.features, labels, c, self.time_index),
            None => LabeledDataset::new(self.features, labels, self.time_index),
        }
    }

    /// Features go to the training slot; labels, when every row has one,
    /// go to the held-out slot.
    pub fn into_unlabeled(self) -> Result<(UnlabeledDomain<F>, Option<Vec<u32>>)> {
        let labels: Option<Vec<u32>> = self.labels.iter().copied().collect();
        Ok((UnlabeledDomain::new(self.features, self.time_index)?, labels))
    }
}

fn header(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x_{i}")).chain(["label".into(), "time_index".into()]).collect()
}

pub fn save_dataset<F: Scalar>(path: impl AsRef<Path>, data: &DatasetFile<F>) -> Result<()> {
    let path = path.as_ref();
    let d = data.features.cols();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header(d)).map_err(|e| csv_err(path, e))?;
    let t = data.time_index.to_exact_string();
    for (row, label) in data.features.iter_rows().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|x| x.to_exact_string()).collect();
        rec.push(label.map_or(String::new(), |y| y.to_string()));
        rec.push(t.clone());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn load_dataset<F: Scalar>(path: impl AsRef<Path>) -> Result<DatasetFile<F>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let head = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = head.len();
    if cols < 3 {
        return Err(parse_err(1, "expected x_0..x_{D-1},label,time_index".into()));
    }
    let d = cols - 2;
    let want = header(d);
    if head.iter().zip(&want).any(|(a, b)| a != b) {
        return Err(parse_err(1, format!("header must be {}", want.join(","))));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut time_index: Option<F> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for k in 0..d {
            let tok = rec[k].trim();
            let v: F = tok
                .parse()
                .map_err(|_| parse_err(line, format!("column x_{k}: cannot parse {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column x_{k}: non-finite value {tok:?}")));
            }
            data.push(v);
        }
        let lab = rec[d].trim();
        labels.push(if lab.is_empty() {
            None
        } else {
            let y: u32 = lab.parse().map_err(|_| parse_err(line, format!("label: cannot parse {lab:?}")))?;
            if y == 0 {
                return Err(parse_err(line, "labels start at 1".into()));
            }
            Some(y)
        });
        let tok = rec[d + 1].trim();
        let t: F = tok.parse().map_err(|_| parse_err(line, format!("time_index: cannot parse {tok:?}")))?;
        if !t.is_finite() {
            return Err(parse_err(line, format!("time_index: non-finite value {tok:?}")));
        }
        match time_index {
            None => time_index = Some(t),
            Some(t0) if t0 != t => return Err(parse_err(line, format!("time_index {t} differs from {t0}"))),
            _ => {}
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(DatasetFile {
        features: Mat::from_vec(n, d, data)?,
        labels,
        time_index: time_index.unwrap_or_else(F::one),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub time_index: f64,
}

/// Sequence manifest: the source file first, then unlabeled domains in
/// ascending time order. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub class_count: usize,
    pub domains: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl SequenceManifest {
    pub fn load_sequence<F: Scalar>(&self, base: &Path) -> Result<EvaluatedSequence<F>> {
        let (first, rest) = self
            .domains
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("manifest lists no domains".into()))?;
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let check_t = |e: &ManifestEntry, t: F| -> Result<()> {
            if (t.to_f64_lossy() - e.time_index).abs() > super::TIME_EPS {
                return Err(Error::InvalidArgument(format!(
                    "{}: file time index {} disagrees with manifest {}",
                    e.path, t, e.time_index
                )));
            }
            Ok(())
        };
        let src_file: DatasetFile<F> = load_dataset(resolve(&first.path))?;
        check_t(first, src_file.time_index)?;
        let source = src_file.into_labeled(Some(self.class_count))?;
        let mut unlabeled = Vec::new();
        let mut held = Vec::new();
        for e in rest {
            let f: DatasetFile<F> = load_dataset(resolve(&e.path))?;
            check_t(e, f.time_index)?;
            let (u, labels) = f.into_unlabeled()?;
            unlabeled.push(u);
            held.push(labels);
        }
        Ok(EvaluatedSequence {
            sequence: DomainSequence::new(source, unlabeled)?,
            held_out: HeldOutLabels::new(held),
        })
    }
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &SequenceManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SequenceManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
