use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 8] = [
    "method",
    "alpha",
    "seed",
    "target_accuracy",
    "cycle_loss",
    "cycle_accuracy",
    "adjacent_max_w2",
    "wallclock_s",
];

pub const TRACE_COLUMNS: [&str; 7] = [
    "alpha",
    "step_index",
    "time_index",
    "dataset_kind",
    "step_accuracy_if_labeled",
    "cycle_loss",
    "cycle_accuracy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub target_accuracy: Option<f64>,
    pub cycle_loss: Option<f64>,
    pub cycle_accuracy: Option<f64>,
    pub adjacent_max_w2: Option<f64>,
    /// Left empty unless timing was requested, so reruns stay byte-identical.
    pub wallclock_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Overwrite,
    /// Adds rows to an existing report; a new file gets the header first.
    Append,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn check_report(report: &ExperimentReport) -> Result<()> {
    for r in &report.rows {
        for a in [r.target_accuracy, r.cycle_accuracy].into_iter().flatten() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidArgument(format!("accuracy {a} outside [0, 1]")));
            }
        }
        if let Some(w) = r.adjacent_max_w2 {
            if !(w >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative W2 {w}")));
            }
        }
        if r.method.contains([',', '\n', '"']) {
            return Err(Error::InvalidArgument(format!("method name {:?} is not CSV-safe", r.method)));
        }
    }
    Ok(())
}

fn header(config_hash: &str) -> String {
    format!("# config_hash={config_hash}\n{}\n", REPORT_COLUMNS.join(","))
}

/// Writes the report CSV: a `# config_hash=` comment line, the column
/// header, then one line per row. Appending to a file written under a
/// different hash adds a fresh comment line before the new rows.
pub fn emit_report(report: &ExperimentReport, path: &Path, config_hash: &str, mode: WriteMode) -> Result<()> {
    check_report(report)?;
    let mut body = String::new();
    for r in &report.rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            cell(r.alpha),
            r.seed,
            cell(r.target_accuracy),
            cell(r.cycle_loss),
            cell(r.cycle_accuracy),
            cell(r.adjacent_max_w2),
            cell(r.wallclock_s)
        ));
    }
    let existing = match mode {
        WriteMode::Append if path.exists() => Some(fs::read_to_string(path).map_err(|e| Error::io(path, e))?),
        _ => None,
    };
    match existing {
        Some(text) if !text.is_empty() => {
            let last_hash = text.lines().filter_map(|l| l.strip_prefix("# config_hash=")).last();
            let mut out = String::new();
            if !text.ends_with('\n') {
                out.push('\n');
            }
            if last_hash != Some(config_hash) {
                out.push_str(&format!("# config_hash={config_hash}\n"));
            }
            out.push_str(&body);
            let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
            f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
        }
        _ => write_atomic(path, &(header(config_hash) + &body)),
    }
}

/// One line of a per-run step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub alpha: f64,
    pub step_index: usize,
    pub time_index: f64,
    pub dataset_kind: String,
    pub step_accuracy_if_labeled: Option<f64>,
    pub cycle_loss: Option<f64>,
    pub cycle_accuracy: Option<f64>,
}

/// Writes a step trace under the same `# config_hash=` stamp as the report.
pub fn write_step_trace(rows: &[TraceRow], path: &Path, config_hash: &str) -> Result<()> {
    let mut out = format!("# config_hash={config_hash}\n{}\n", TRACE_COLUMNS.join(","));
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.alpha,
            r.step_index,
            r.time_index,
            r.dataset_kind,
            cell(r.step_accuracy_if_labeled),
            cell(r.cycle_loss),
            cell(r.cycle_accuracy)
        ));
    }
    write_atomic(path, &out)
}

/// Writes through a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64) -> ReportRow {
        ReportRow {
            method: "ours".into(),
            alpha: Some(0.5),
            seed,
            target_accuracy: Some(0.9),
            cycle_loss: Some(0.25),
            cycle_accuracy: Some(0.875),
            adjacent_max_w2: None,
            wallclock_s: None,
        }
    }

    fn data_rows(text: &str) -> usize {
        text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("method,")).count()
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_report(&ExperimentReport::default(), &p, "abc", WriteMode::Overwrite).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("# config_hash=abc\n{}\n", REPORT_COLUMNS.join(",")));
    }

    #[test]
    fn appending_two_runs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        for s in 0..2 {
            emit_report(&ExperimentReport { rows: vec![row(s)] }, &p, "abc", WriteMode::Append).unwrap();
        }
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(data_rows(&text), 2);
        assert_eq!(text.matches("# config_hash").count(), 1);
        assert!(text.contains("\nours,0.5,1,0.9,0.25,0.875,,\n"));
    }

    #[test]
    fn reemission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let rep = ExperimentReport { rows: vec![row(3), row(4)] };
        emit_report(&rep, &a, "h", WriteMode::Overwrite).unwrap();
        emit_report(&rep, &b, "h", WriteMode::Overwrite).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_invalid_rows_and_paths() {
        let mut r = row(0);
        r.target_accuracy = Some(1.5);
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&ExperimentReport { rows: vec![r] }, &dir.path().join("x.csv"), "h", WriteMode::Overwrite).is_err());
        let bad = dir.path().join("missing").join("x.csv");
        assert!(emit_report(&ExperimentReport::default(), &bad, "h", WriteMode::Overwrite).is_err());
    }
}
