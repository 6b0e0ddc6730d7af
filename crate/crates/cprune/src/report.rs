//! Gain arithmetic and the layer-dimensions table.

use std::fmt::Write as _;
use std::io::{Read, Write};

use cprune_core::{Network, WeightDims};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Lower is better (milliseconds).
    Latency,
    /// Higher is better (frames per second).
    Throughput,
}

#[derive(Debug, Error, PartialEq)]
pub enum GainError {
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("value after pruning must be finite, got {0}")]
    NonFinite(f64),
}

/// Percent gain of `after` over `before`: `(before - after) / before · 100`
/// for latency, `(after - before) / before · 100` for throughput.
pub fn compute_gain(before: f64, after: f64, direction: Direction) -> Result<f64, GainError> {
    if !(before > 0.0) || !before.is_finite() {
        return Err(GainError::NonPositiveBaseline(before));
    }
    if !after.is_finite() {
        return Err(GainError::NonFinite(after));
    }
    Ok(match direction {
        Direction::Latency => (before - after) / before * 100.0,
        Direction::Throughput => (after - before) / before * 100.0,
    })
}

/// Rounds half-up (toward +∞) to two decimals. The value is first snapped to
/// 1e-9 so that decimal halves stored just below the midpoint still round up.
pub fn round_half_up_2(x: f64) -> f64 {
    let scaled = (x * 100.0 * 1e6).round() / 1e6;
    (scaled + 0.5).floor() / 100.0
}

pub fn format_percent(x: f64) -> String {
    let r = round_half_up_2(x);
    // Avoid printing "-0.00".
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.2}%")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub setup: String,
    pub without_pruning: f64,
    pub after_pruning: f64,
    pub gain_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    pub direction: Direction,
    pub rows: Vec<GainRow>,
}

#[derive(Debug, Deserialize)]
struct GainInput {
    setup: String,
    without_pruning: f64,
    after_pruning: f64,
}

#[derive(Debug, Error)]
pub enum GainReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row `{setup}`: {source}")]
    Gain { setup: String, source: GainError },
}

impl GainReport {
    pub fn new(direction: Direction, rows: impl IntoIterator<Item = (String, f64, f64)>) -> Result<Self, GainReportError> {
        let rows = rows
            .into_iter()
            .map(|(setup, before, after)| match compute_gain(before, after, direction) {
                Ok(g) => Ok(GainRow { setup, without_pruning: before, after_pruning: after, gain_percent: g }),
                Err(source) => Err(GainReportError::Gain { setup, source }),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { direction, rows })
    }

    /// Reads `setup,without_pruning,after_pruning` rows.
    pub fn from_csv<R: Read>(input: R, direction: Direction) -> Result<Self, GainReportError> {
        let rows: Vec<GainInput> = csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>()?;
        Self::new(direction, rows.into_iter().map(|r| (r.setup, r.without_pruning, r.after_pruning)))
    }

    /// `setup,without_pruning,after_pruning,gain_percent` at full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let unit = match self.direction {
            Direction::Latency => "ms",
            Direction::Throughput => "fps",
        };
        let width = self.rows.iter().map(|r| r.setup.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<width$}  {:>14}  {:>14}  {:>8}\n", "setup", format!("without ({unit})"), format!("after ({unit})"), "gain");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>14}  {:>14}  {:>8}",
                r.setup,
                r.without_pruning,
                r.after_pruning,
                format_percent(r.gain_percent)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimsRow {
    pub layer: String,
    pub original: WeightDims,
    /// One entry per pruned model; `None` when the layer is missing there.
    pub pruned: Vec<Option<WeightDims>>,
}

impl DimsRow {
    pub fn filters_pruned(&self, model: usize) -> Option<usize> {
        self.pruned[model].map(|d| self.original.c_out.saturating_sub(d.c_out))
    }
}

/// Weight shapes of every conv layer of `original` next to the same layer
/// in each pruned model.
pub fn dims_rows(original: &Network, pruned: &[&Network]) -> Vec<DimsRow> {
    original
        .conv_ids()
        .into_iter()
        .map(|id| {
            let node = original.node(id);
            DimsRow {
                layer: node.name.clone(),
                original: node.weight_dims().expect("convs carry weights"),
                pruned: pruned
                    .iter()
                    .map(|p| p.find(&node.name).and_then(|pid| p.node(pid).weight_dims()))
                    .collect(),
            }
        })
        .collect()
}

fn tuple(d: Option<WeightDims>) -> String {
    d.map_or_else(|| "-".to_string(), |d| format!("({}, {}, {}, {})", d.c_out, d.c_in, d.kh, d.kw))
}

/// Text table: layer, original dims, then `(dims, # filters pruned)` per
/// pruned model under the given labels.
pub fn render_dims(rows: &[DimsRow], labels: &[String]) -> String {
    let mut header = vec!["Convolution Layer".to_string(), "Original Dimension".to_string()];
    for l in labels {
        header.push(l.clone());
        header.push("# Filters Pruned".to_string());
    }
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![r.layer.clone(), tuple(Some(r.original))];
        for (i, d) in r.pruned.iter().enumerate() {
            line.push(tuple(*d));
            line.push(r.filters_pruned(i).map_or_else(|| "-".to_string(), |n| n.to_string()));
        }
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
            out.push('\n');
        }
    }
    out
}
