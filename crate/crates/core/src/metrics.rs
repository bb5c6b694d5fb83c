//! Per-class accuracy, per-tag equal error rate and their report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::Label(format!(
                "pair ({truth}, {predicted}) outside {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    /// Pools another matrix's counts into this one.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!("{} vs {} classes", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of all samples on the diagonal.
    pub fn overall_accuracy(&self) -> f64 {
        let correct: u64 = (0..self.k).map(|i| self.count(i, i)).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Per-class accuracy (diagonal over row sum) and its unweighted mean, as
    /// fractions in `[0, 1]`.
    pub fn accuracy(&self) -> Result<(Vec<f64>, f64)> {
        let mut per_class = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let n = self.row_sum(c);
            if n == 0 {
                return Err(Error::UndefinedClass(c));
            }
            per_class.push(self.count(c, c) as f64 / n as f64);
        }
        let avg = per_class.iter().sum::<f64>() / self.k as f64;
        Ok((per_class, avg))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn class_counts(targets: &[bool]) -> Result<(usize, usize)> {
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positive and {neg} negative targets; both must be present"
        )));
    }
    Ok((pos, neg))
}

/// Linear interpolation of the FPR/FNR crossing on an ordered sequence of ROC
/// points whose `fpr - fnr` is non-increasing, starting at `>= 0` and ending
/// at `<= 0`.
pub(crate) fn interpolate_crossing(points: &[(f64, f64)]) -> f64 {
    let d = |(fpr, fnr): (f64, f64)| fpr - fnr;
    let j = points
        .iter()
        .position(|&p| d(p) <= 0.0)
        .expect("the last ROC point has fpr - fnr <= 0");
    let (fb, nb) = points[j];
    if j == 0 || d(points[j]) == 0.0 {
        return fb;
    }
    let (fa, na) = points[j - 1];
    let (da, db) = (fa - na, fb - nb);
    let lambda = da / (da - db);
    fa + lambda * (fb - fa)
}

/// Equal error rate of `scores` against binary `targets`. A clip is predicted
/// positive when its score is at least the threshold; thresholds run over the
/// sorted distinct scores and then past the maximum.
pub fn eer(scores: &[f64], targets: &[bool]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::Shape(format!("{} scores for {} targets", scores.len(), targets.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let (pos, neg) = class_counts(targets)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // walk thresholds upward; everything below the threshold is predicted negative
    let (mut fn_count, mut tn_count) = (0usize, 0usize);
    let mut points = Vec::with_capacity(scores.len() + 1);
    let mut i = 0;
    while i < order.len() {
        points.push((
            (neg - tn_count) as f64 / neg as f64,
            fn_count as f64 / pos as f64,
        ));
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if targets[order[i]] {
                fn_count += 1;
            } else {
                tn_count += 1;
            }
            i += 1;
        }
    }
    points.push((0.0, 1.0));
    Ok(interpolate_crossing(&points))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub per_tag: Vec<f64>,
    pub average: f64,
}

/// EER per tag column; `scores` and `targets` are `n x K` row-major.
pub fn eer_per_tag(scores: &[f64], targets: &[bool], k: usize) -> Result<EerResult> {
    if k == 0 || scores.len() != targets.len() || scores.len() % k != 0 {
        return Err(Error::Shape("scores and targets must both be n x K".into()));
    }
    let n = scores.len() / k;
    let mut per_tag = Vec::with_capacity(k);
    for tag in 0..k {
        let s: Vec<f64> = (0..n).map(|i| scores[i * k + tag]).collect();
        let t: Vec<bool> = (0..n).map(|i| targets[i * k + tag]).collect();
        per_tag.push(eer(&s, &t).map_err(|e| match e {
            Error::DegenerateLabels(msg) => Error::DegenerateLabels(format!("tag {tag}: {msg}")),
            other => other,
        })?);
    }
    let average = per_tag.iter().sum::<f64>() / k as f64;
    Ok(EerResult { per_tag, average })
}

/// Summary written next to the per-class CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    /// Folds whose predictions were pooled into this report.
    pub folds: Vec<usize>,
    /// `pooled` when more than one fold is included.
    pub aggregation: String,
    /// `accuracy_percent` or `eer`.
    pub metric: String,
    pub average: f64,
    pub per_class: Vec<(String, f64)>,
}

impl Report {
    /// Per-class table with an empty baseline column.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Parse(format!("report csv: {e}"));
        w.write_record(["class", "baseline", &self.metric]).map_err(fail)?;
        for (name, v) in &self.per_class {
            w.write_record([name.as_str(), "", &format_value(*v)]).map_err(fail)?;
        }
        w.write_record(["average", "", &format_value(self.average)]).map_err(fail)?;
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("report csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.csv` and `<stem>.json` inside `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.4}")
}
