//! Result tables across run directories.
//!
//! Rows are methods (`LDAM-DRW`, `+LoRot-E`, `+MoE(LoRot-E+ShuffleChannel)`,
//! ...), columns are dataset and imbalance ratio pairs, cells are final-epoch
//! test accuracy in percent. Several runs with the same method and column
//! (different seeds) are averaged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{read_index_file, DatasetName};
use crate::error::{Error, Result};
use crate::training::{method_label, read_metrics, TrainConfig};

pub const TABLE_TITLE: &str = "Imbalanced classification accuracy (%)";

/// Row order for well-known method labels; anything else follows in order
/// of first appearance.
const KNOWN_ROWS: [&str; 11] = [
    "LDAM-DRW",
    "ResNet 18",
    "ResNet 32",
    "TinyCNN",
    "+SSP",
    "+SLA-SD",
    "+LoRot-E",
    "+MoE(LoRot-E+Flip)",
    "+MoE(LoRot-E+ShuffleChannel)",
    "+MoE(LoRot-E+Flip+ShuffleChannel)",
    "+MoE(LoRot-E+ShuffleChannel+Flip)",
];

/// One finished (or partial) run, as read from its directory. This is also
/// the CSV record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub dataset: DatasetName,
    pub ratio: Option<f64>,
    pub epochs_logged: usize,
    /// Test accuracy of the last logged epoch, in percent.
    pub accuracy: f64,
    pub run_dir: PathBuf,
}

/// A table column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub dataset: DatasetName,
    pub ratio: Option<f64>,
}

impl Column {
    pub fn ratio_label(&self) -> String {
        self.ratio.map_or_else(|| "Val accuracy".to_owned(), |r| format!("{r}"))
    }

    fn rank(&self) -> (usize, f64) {
        let d = match self.dataset {
            DatasetName::Cifar10 => 0,
            DatasetName::Cifar100 => 1,
            DatasetName::TinyImagenet => 2,
            DatasetName::Synthetic => 3,
        };
        (d, self.ratio.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// Reads one run directory. A directory without `metrics.jsonl`, or with no
/// epochs in it, gives `Ok(None)`.
pub fn read_run(dir: &Path) -> Result<Option<RunResult>> {
    let metrics = read_metrics(&dir.join("metrics.jsonl"))?;
    let Some(last) = metrics.last() else {
        return Ok(None);
    };
    let config_path = dir.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: TrainConfig = serde_json::from_str(&text)?;
    let ratio = match &config.index_file {
        Some(path) => Some(read_index_file(path)?.header.ratio),
        None => config.imbalance_ratio,
    };
    Ok(Some(RunResult {
        method: method_label(&config),
        dataset: config.dataset.name,
        ratio,
        epochs_logged: metrics.len(),
        accuracy: 100.0 * last.test_acc,
        run_dir: dir.to_owned(),
    }))
}

/// Reads every directory, returning the runs found and one warning per
/// directory that was skipped.
pub fn collect_runs<P: AsRef<Path>>(dirs: &[P]) -> (Vec<RunResult>, Vec<String>) {
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let dir = dir.as_ref();
        match read_run(dir) {
            Ok(Some(run)) => runs.push(run),
            Ok(None) => warnings.push(format!("{}: no metrics, skipped", dir.display())),
            Err(e) => warnings.push(format!("{}: {e}, skipped", dir.display())),
        }
    }
    (runs, warnings)
}

pub fn build_table(runs: &[RunResult]) -> Table {
    let mut columns: Vec<Column> = Vec::new();
    for r in runs {
        let c = Column {
            dataset: r.dataset,
            ratio: r.ratio,
        };
        if !columns.contains(&c) {
            columns.push(c);
        }
    }
    columns.sort_by(|a, b| a.rank().partial_cmp(&b.rank()).expect("ratios are finite"));

    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.method.as_str()) {
            labels.push(&r.method);
        }
    }
    labels.sort_by_key(|l| KNOWN_ROWS.iter().position(|k| k == l).unwrap_or(KNOWN_ROWS.len()));

    let rows = labels
        .into_iter()
        .map(|label| {
            let cells = columns
                .iter()
                .map(|c| {
                    let hits: Vec<f64> = runs
                        .iter()
                        .filter(|r| r.method == label && r.dataset == c.dataset && r.ratio == c.ratio)
                        .map(|r| r.accuracy)
                        .collect();
                    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
                })
                .collect();
            (label.to_owned(), cells)
        })
        .collect();
    Table { columns, rows }
}

impl Table {
    /// Largest value in each column, if any.
    pub fn column_best(&self) -> Vec<Option<f64>> {
        (0..self.columns.len())
            .map(|j| {
                self.rows
                    .iter()
                    .filter_map(|(_, cells)| cells[j])
                    .fold(None, |best: Option<f64>, v| Some(best.map_or(v, |b| b.max(v))))
            })
            .collect()
    }

    /// Markdown with a dataset header row and an imbalance-ratio row, the
    /// best cell of each column in bold. Cells print with two decimals;
    /// a tie at that precision bolds every tied cell.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("{TABLE_TITLE}\n\n");
        let header: Vec<&str> = self.columns.iter().map(|c| c.dataset.display_name()).collect();
        let _ = writeln!(s, "| Dataset |{}", cells_line(header.iter().copied()));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.columns.len()));
        let ratios: Vec<String> = self.columns.iter().map(Column::ratio_label).collect();
        let _ = writeln!(s, "| Imbalance Ratio |{}", cells_line(ratios.iter().map(String::as_str)));
        let best: Vec<Option<String>> = self
            .column_best()
            .into_iter()
            .map(|b| b.map(|v| format!("{v:.2}")))
            .collect();
        for (label, cells) in &self.rows {
            let rendered: Vec<String> = cells
                .iter()
                .zip(&best)
                .map(|(cell, best)| match cell {
                    Some(v) => {
                        let text = format!("{v:.2}");
                        if best.as_deref() == Some(text.as_str()) {
                            format!("**{text}**")
                        } else {
                            text
                        }
                    }
                    None => "-".to_owned(),
                })
                .collect();
            let _ = writeln!(s, "| {label} |{}", cells_line(rendered.iter().map(String::as_str)));
        }
        s
    }
}

fn cells_line<'a>(cells: impl Iterator<Item = &'a str>) -> String {
    cells.map(|c| format!(" {c} |")).collect()
}

/// Writes one CSV record per run.
pub fn write_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for run in runs {
        writer.serialize(run).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<RunResult>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format {
            path: path.to_owned(),
            offset,
            message: format!("{kind:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(method: &str, dataset: DatasetName, ratio: Option<f64>, accuracy: f64) -> RunResult {
        RunResult {
            method: method.to_owned(),
            dataset,
            ratio,
            epochs_logged: 1,
            accuracy,
            run_dir: PathBuf::from(method),
        }
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let t = build_table(&[]);
        assert!(t.columns.is_empty() && t.rows.is_empty());
        assert!(t.to_markdown().starts_with(TABLE_TITLE));
    }

    #[test]
    fn two_runs_one_bold() {
        let runs = [
            result("+LoRot-E", DatasetName::Cifar10, Some(0.01), 70.5),
            result("LDAM-DRW", DatasetName::Cifar10, Some(0.01), 68.25),
        ];
        let md = build_table(&runs).to_markdown();
        assert_eq!(md.matches("**").count(), 2);
        assert!(md.contains("| +LoRot-E | **70.50** |"));
        assert!(md.contains("| LDAM-DRW | 68.25 |"));
        // baseline first, as in the published layout
        assert!(md.find("LDAM-DRW").unwrap() < md.find("+LoRot-E").unwrap());
    }

    #[test]
    fn columns_sorted_and_seeds_averaged() {
        let runs = [
            result("+LoRot-E", DatasetName::Cifar100, Some(0.01), 40.0),
            result("+LoRot-E", DatasetName::Cifar10, Some(0.05), 80.0),
            result("+LoRot-E", DatasetName::Cifar10, Some(0.01), 70.0),
            result("+LoRot-E", DatasetName::Cifar10, Some(0.01), 72.0),
        ];
        let t = build_table(&runs);
        let cols: Vec<_> = t.columns.iter().map(|c| (c.dataset, c.ratio)).collect();
        assert_eq!(
            cols,
            vec![
                (DatasetName::Cifar10, Some(0.01)),
                (DatasetName::Cifar10, Some(0.05)),
                (DatasetName::Cifar100, Some(0.01)),
            ]
        );
        assert_eq!(t.rows[0].1, vec![Some(71.0), Some(80.0), Some(40.0)]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let runs = vec![
            result("+MoE(LoRot-E+ShuffleChannel)", DatasetName::Cifar10, Some(0.02), 81.91234567),
            result("ResNet 18", DatasetName::TinyImagenet, None, 55.5),
        ];
        write_csv(&path, &runs).unwrap();
        assert_eq!(read_csv(&path).unwrap(), runs);
    }
}
