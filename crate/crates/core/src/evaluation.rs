//! Classification metrics and detection latency.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with FDIA (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
    pub latency_ticks: Option<u64>,
    pub counts: ConfusionCounts,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    let mut degenerate = false;
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut degenerate);
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
        latency_ticks: None,
        counts: *c,
    }
}

/// Ticks from `onset` to the first raised flag at or after it.
pub fn detection_latency(flags: &[bool], onset: usize) -> Option<u64> {
    flags
        .get(onset..)?
        .iter()
        .position(|&f| f)
        .map(|d| d as u64)
}

/// Fraction of raised flags.
pub fn flag_rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

impl MetricsReport {
    pub fn with_latency(mut self, latency: Option<u64>) -> Self {
        self.latency_ticks = latency;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes a `t,<name…>` table of 0/1 series, one row per tick.
pub fn write_series_csv<W: Write>(
    ticks: &[u64],
    columns: &[(&str, &[bool])],
    writer: W,
) -> Result<()> {
    if columns.iter().any(|(_, c)| c.len() != ticks.len()) {
        return Err(Error::data("series columns differ in length"));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t"];
    header.extend(columns.iter().map(|c| c.0));
    w.write_record(&header)?;
    for (i, t) in ticks.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(columns.iter().map(|c| u8::from(c.1[i]).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
