//! Peak-detection scoring and summary statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::extract::Method;
use crate::waveform::RecordId;
use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scored {
    pub counts: ConfusionCounts,
    /// Repeated predicted indices that were collapsed.
    pub duplicates: usize,
}

/// Matches predictions to truths within `tolerance` samples.
///
/// Candidate pairs are taken in order of increasing distance (ties by
/// prediction, then truth index); a pair is accepted when both ends are still
/// free.
pub fn score_record(predicted: &[usize], truth: &[usize], n: usize, tolerance: usize) -> Result<Scored> {
    if let Some(&i) = predicted.iter().chain(truth).find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!("index {i} outside record of {n}")));
    }
    let mut pred = predicted.to_vec();
    pred.sort_unstable();
    pred.dedup();
    let duplicates = predicted.len() - pred.len();
    let mut truth = truth.to_vec();
    truth.sort_unstable();
    truth.dedup();

    let mut pairs = Vec::new();
    for (a, &p) in pred.iter().enumerate() {
        for (b, &t) in truth.iter().enumerate() {
            let d = p.abs_diff(t);
            if d <= tolerance {
                pairs.push((d, a, b));
            }
        }
    }
    pairs.sort_unstable();
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0u64;
    for (_, a, b) in pairs {
        if !pred_used[a] && !truth_used[b] {
            pred_used[a] = true;
            truth_used[b] = true;
            tp += 1;
        }
    }
    let fp = pred.len() as u64 - tp;
    let fn_ = truth.len() as u64 - tp;
    Ok(Scored {
        counts: ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: n as u64 - tp - fp - fn_,
        },
        duplicates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricRow {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
    pub mcc: f64,
}

pub const METRIC_NAMES: [&str; 6] = ["accuracy", "f1", "recall", "precision", "specificity", "mcc"];

impl MetricRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.accuracy,
            self.f1,
            self.recall,
            self.precision,
            self.specificity,
            self.mcc,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            accuracy: v[0],
            f1: v[1],
            recall: v[2],
            precision: v[3],
            specificity: v[4],
            mcc: v[5],
        }
    }
}

/// `num / den`, with 0/0 (or any zero denominator) mapped to 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn derive_metrics(c: &ConfusionCounts) -> MetricRow {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    MetricRow {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        specificity: ratio(tn, tn + fp),
        f1: ratio(2.0 * precision * recall, precision + recall),
        mcc: ratio(
            tp * tn - fp * fn_,
            ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        median: quantile(&sorted, 0.5),
        std,
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: Method,
    pub rows: Vec<(RecordId, MetricRow)>,
    /// Indexed like [`METRIC_NAMES`].
    pub summaries: [Summary; 6],
}

impl MetricReport {
    pub fn summary(&self, metric: &str) -> Option<&Summary> {
        METRIC_NAMES.iter().position(|m| *m == metric).map(|i| &self.summaries[i])
    }
}

pub fn aggregate(rows: Vec<(RecordId, MetricRow)>, method: Method) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let mut summaries = Vec::with_capacity(6);
    for k in 0..6 {
        let col: Vec<f64> = rows.iter().map(|(_, r)| r.values()[k]).collect();
        summaries.push(summarize(&col)?);
    }
    Ok(MetricReport {
        method,
        rows,
        summaries: summaries.try_into().expect("six metrics"),
    })
}

pub const METRICS_CSV_HEADER: &str = "record_id,method,accuracy,f1,recall,precision,specificity,mcc";

pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "{METRICS_CSV_HEADER}")?;
        for rep in reports {
            for (id, row) in &rep.rows {
                let v = row.values();
                writeln!(
                    w,
                    "{id},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                    rep.method, v[0], v[1], v[2], v[3], v[4], v[5]
                )?;
            }
        }
        Ok(())
    })
}

/// Per-record metric rows grouped by method.
pub fn read_metrics_csv(path: &Path) -> Result<BTreeMap<Method, Vec<(RecordId, MetricRow)>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<Method, Vec<(RecordId, MetricRow)>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != METRICS_CSV_HEADER {
                return Err(Error::Format(format!("unexpected header in {}", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 8 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected 8 columns".into(),
            });
        }
        let mut v = [0.0; 6];
        for k in 0..6 {
            v[k] = c[k + 2].parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad {}", METRIC_NAMES[k]),
            })?;
        }
        out.entry(c[1].parse()?)
            .or_default()
            .push((c[0].parse()?, MetricRow::from_values(v)));
    }
    Ok(out)
}

pub const SUMMARY_CSV_HEADER: &str = "method,metric,mean,median,std,count";

pub fn write_summary_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "{SUMMARY_CSV_HEADER}")?;
        for rep in reports {
            for (name, s) in METRIC_NAMES.iter().zip(&rep.summaries) {
                writeln!(w, "{},{name},{:?},{:?},{:?},{}", rep.method, s.mean, s.median, s.std, s.count)?;
            }
        }
        Ok(())
    })
}

pub const BOXPLOT_CSV_HEADER: &str =
    "method,metric,min,lower_whisker,q1,median,q3,upper_whisker,max,count";

/// Quartiles plus Tukey whiskers (most extreme point within 1.5 IQR).
pub fn write_boxplot_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_lines(path, |w| {
        writeln!(w, "{BOXPLOT_CSV_HEADER}")?;
        for rep in reports {
            for (k, (name, s)) in METRIC_NAMES.iter().zip(&rep.summaries).enumerate() {
                let iqr = s.q3 - s.q1;
                let (lo_fence, hi_fence) = (s.q1 - 1.5 * iqr, s.q3 + 1.5 * iqr);
                let col = rep.rows.iter().map(|(_, r)| r.values()[k]);
                let lower = col.clone().filter(|v| *v >= lo_fence).fold(f64::INFINITY, f64::min);
                let upper = col.filter(|v| *v <= hi_fence).fold(f64::NEG_INFINITY, f64::max);
                writeln!(
                    w,
                    "{},{name},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                    rep.method, s.min, lower, s.q1, s.median, s.q3, upper, s.max, s.count
                )?;
            }
        }
        Ok(())
    })
}

fn write_lines(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
