//! Dice and L1 metrics, checkpoint evaluation, tables and convergence plots.

pub mod eval;
pub mod plot;
pub mod table;

use serde::{Deserialize, Serialize};

use crate::data::ImageGrid;
use crate::error::{Error, Result};

pub use self::eval::{evaluate_checkpoints, evaluate_network, EvalOptions, MetricRow};
pub use self::plot::emit_convergence_plot;
pub use self::table::{emit_table, parse_table_csv, MetricTable, TableFormat, TableRow};

/// Probability threshold that turns a segmentation output into a mask.
pub const MASK_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Dice,
    L1,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Dice => "dice",
            MetricKind::L1 => "l1",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        *self == MetricKind::Dice
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(MetricKind::Dice),
            "l1" => Ok(MetricKind::L1),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` of two binary masks. Two empty masks
/// score 1.
pub fn dice(pred: &ImageGrid, gt: &ImageGrid) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "dice inputs {:?} and {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::InvalidArgument("dice needs binary masks".into()));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        let (p, g) = (p == 1.0, g == 1.0);
        inter += usize::from(p && g);
        total += usize::from(p) + usize::from(g);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Mean absolute difference of two equally shaped grids.
pub fn l1(pred: &ImageGrid, target: &ImageGrid) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "l1 inputs {:?} and {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.values().len().max(1) as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&a, &b)| f64::from((a - b).abs()))
        .sum::<f64>()
        / n)
}

/// Validation metric per epoch, plus the value before any training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub kind: MetricKind,
    /// Legend label, e.g. `U-Net_2_44 P(50k)`.
    pub label: String,
    pub initial: Option<f64>,
    /// `(epoch, value)` with epochs unique and strictly increasing.
    pub points: Vec<(usize, f64)>,
}

impl MetricSeries {
    pub fn new(kind: MetricKind, label: impl Into<String>) -> Self {
        Self {
            kind,
            label: label.into(),
            initial: None,
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, epoch: usize, value: f64) -> Result<()> {
        if self.points.last().is_some_and(|&(e, _)| e >= epoch) {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} does not follow {}",
                self.points.last().map(|p| p.0).unwrap_or(0)
            )));
        }
        self.points.push((epoch, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value_at(&self, epoch: usize) -> Option<f64> {
        if epoch == 0 {
            return self.initial;
        }
        self.points.iter().find(|p| p.0 == epoch).map(|p| p.1)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    /// First epoch whose value reaches `threshold` in the metric's good
    /// direction.
    pub fn first_epoch_reaching(&self, threshold: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|&&(_, v)| {
                if self.kind.higher_is_better() {
                    v >= threshold
                } else {
                    v <= threshold
                }
            })
            .map(|p| p.0)
    }

    /// Two-column CSV; the initial value, when known, is written as epoch 0.
    pub fn to_csv(&self, value_column: &str) -> String {
        let mut s = format!("epoch,{value_column}\n");
        if let Some(v) = self.initial {
            s.push_str(&format!("0,{v}\n"));
        }
        for (e, v) in &self.points {
            s.push_str(&format!("{e},{v}\n"));
        }
        s
    }
}
