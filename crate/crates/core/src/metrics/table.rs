use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::checkpoint::write_atomic;

use super::MetricKind;

const CSV_HEADER: &str = "spec,init,epoch,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub spec: String,
    /// `R` or `P(<subset>)`.
    pub init: String,
    pub values: Vec<f64>,
}

/// Checkpoint-epoch results: one row per (model, initialization), one
/// column per saved epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: MetricKind,
    pub epochs: Vec<usize>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl MetricTable {
    pub fn new(metric: MetricKind, epochs: Vec<usize>) -> Self {
        Self {
            metric,
            epochs,
            rows: Vec::new(),
        }
    }

    /// Appends a row given as `(epoch, value)` pairs; its epochs must match
    /// the table's columns.
    pub fn push_row(&mut self, spec: &str, init: &str, cells: &[(usize, f64)]) -> Result<()> {
        let epochs: Vec<usize> = cells.iter().map(|c| c.0).collect();
        if epochs != self.epochs {
            return Err(Error::InvalidArgument(format!(
                "row {spec} {init} has epochs {epochs:?}, table has {:?}",
                self.epochs
            )));
        }
        self.rows.push(TableRow {
            spec: spec.to_string(),
            init: init.to_string(),
            values: cells.iter().map(|c| c.1).collect(),
        });
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.epochs.is_empty() {
            return Err(Error::InvalidArgument("metric table is empty".into()));
        }
        if self.epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "table epochs must be strictly increasing".into(),
            ));
        }
        for r in &self.rows {
            if r.values.len() != self.epochs.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {} {} has {} cells for {} epochs",
                    r.spec,
                    r.init,
                    r.values.len(),
                    self.epochs.len()
                )));
            }
            if r.spec.contains([',', '\n']) || r.init.contains([',', '\n']) {
                return Err(Error::InvalidArgument(format!(
                    "row label `{} {}` contains a separator",
                    r.spec, r.init
                )));
            }
        }
        Ok(())
    }

    /// Long-format CSV with columns `spec,init,epoch,metric,value`.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            for (e, v) in self.epochs.iter().zip(&r.values) {
                s.push_str(&format!("{},{},{e},{},{v}\n", r.spec, r.init, self.metric));
            }
        }
        Ok(s)
    }

    /// Rows in model-then-initialization order of first appearance, epochs
    /// as columns. Dice is shown in percent.
    pub fn to_markdown(&self) -> Result<String> {
        self.validate()?;
        let mut s = String::from("| Model | Init |");
        for e in &self.epochs {
            s.push_str(&format!(" {e} |"));
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---:|".repeat(self.epochs.len()));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("| {} | {} |", r.spec, r.init));
            for v in &r.values {
                match self.metric {
                    MetricKind::Dice => s.push_str(&format!(" {:.2} |", v * 100.0)),
                    MetricKind::L1 => s.push_str(&format!(" {v:.4} |")),
                }
            }
            s.push('\n');
        }
        Ok(s)
    }
}

pub fn emit_table(table: &MetricTable, path: &Path, format: TableFormat) -> Result<()> {
    let text = match format {
        TableFormat::Csv => table.to_csv()?,
        TableFormat::Markdown => table.to_markdown()?,
    };
    write_atomic(path, text.as_bytes())
}

/// Inverse of [`MetricTable::to_csv`].
pub fn parse_table_csv(text: &str) -> Result<MetricTable> {
    let mut lines = text.lines();
    let bad = |n: usize, msg: &str| Error::Data(format!("table csv line {n}: {msg}"));
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(bad(1, &format!("expected header `{CSV_HEADER}`")));
    }
    let mut metric = None;
    let mut epochs: Vec<usize> = Vec::new();
    let mut rows: Vec<TableRow> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n, "expected 5 fields"));
        }
        let epoch: usize = f[2].parse().map_err(|_| bad(n, "bad epoch"))?;
        let kind: MetricKind = f[3].parse().map_err(|_| bad(n, "bad metric"))?;
        let value: f64 = f[4].parse().map_err(|_| bad(n, "bad value"))?;
        if *metric.get_or_insert(kind) != kind {
            return Err(bad(n, "mixed metrics in one table"));
        }
        let same_row = rows.last().is_some_and(|r| r.spec == f[0] && r.init == f[1]);
        if !same_row {
            rows.push(TableRow {
                spec: f[0].to_string(),
                init: f[1].to_string(),
                values: Vec::new(),
            });
        }
        let first = rows.len() == 1;
        let row = rows.last_mut().expect("row pushed above");
        if first {
            epochs.push(epoch);
        } else if epochs.get(row.values.len()) != Some(&epoch) {
            return Err(bad(n, "row epochs differ from the first row"));
        }
        row.values.push(value);
    }
    let table = MetricTable {
        metric: metric.ok_or_else(|| bad(2, "no data rows"))?,
        epochs,
        rows,
    };
    table.validate()?;
    Ok(table)
}
