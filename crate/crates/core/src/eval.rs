//! Binary classification metrics, trace-level verdicts, and the KNN baseline.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Positive class is `Attack`.
pub fn confusion_matrix(pred: &[Label], truth: &[Label]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p.is_attack(), t.is_attack()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Confusion counts plus derived rates. A rate whose denominator is zero is
/// reported as 0 and named in `degenerate_flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub degenerate_flags: Vec<String>,
}

pub fn compute_metrics(c: Confusion) -> MetricsReport {
    let mut flags = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else {
            flags.push(name.to_string());
            0.0
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let accuracy = ratio("accuracy", tp + tn, tp + fp + tn + fn_);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let fpr = ratio("fpr", fp, fp + tn);
    let fnr = ratio("fnr", fn_, fn_ + tp);
    let f1 = if tp + fp > 0.0 && tp + fn_ > 0.0 {
        ratio("f1", 2.0 * precision * recall, precision + recall)
    } else {
        flags.push("f1".to_string());
        0.0
    };
    MetricsReport {
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        accuracy,
        precision,
        recall,
        f1,
        fpr,
        fnr,
        degenerate_flags: flags,
    }
}

pub fn metrics_for(pred: &[Label], truth: &[Label]) -> Result<MetricsReport> {
    Ok(compute_metrics(confusion_matrix(pred, truth)?))
}

impl MetricsReport {
    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }

    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,accuracy,precision,recall,f1,fpr,fnr";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.fpr,
            self.fnr
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub trace_id: String,
    pub score: f64,
    pub label: VerdictLabel,
    pub n_windows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Benign,
    Attack,
}

impl From<VerdictLabel> for Label {
    fn from(v: VerdictLabel) -> Label {
        match v {
            VerdictLabel::Benign => Label::Benign,
            VerdictLabel::Attack => Label::Attack,
        }
    }
}

/// Mean window probability, labeled attack iff `score >= threshold`.
pub fn classify_trace(trace_id: &str, window_probs: &[f64], threshold: f64) -> Result<Verdict> {
    if window_probs.is_empty() {
        return Err(Error::NoWindows(trace_id.to_string()));
    }
    let score = window_probs.iter().sum::<f64>() / window_probs.len() as f64;
    Ok(Verdict {
        trace_id: trace_id.to_string(),
        score,
        label: if score >= threshold {
            VerdictLabel::Attack
        } else {
            VerdictLabel::Benign
        },
        n_windows: window_probs.len(),
    })
}

/// Groups per-row probabilities by `trace_of_row` (rows of one trace must be
/// contiguous) and returns `(trace index, mean score)` in row order.
pub fn trace_scores(trace_of_row: &[usize], probs: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut start = 0;
    while start < probs.len() {
        let t = trace_of_row[start];
        let mut end = start;
        while end < probs.len() && trace_of_row[end] == t {
            end += 1;
        }
        let score = probs[start..end].iter().sum::<f64>() / (end - start) as f64;
        out.push((t, score));
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub window: MetricsReport,
    pub trace: MetricsReport,
    /// Test traces that were too short to yield a window.
    pub skipped_traces: usize,
}

/// Window-level and trace-level metrics from per-window probabilities.
pub fn evaluate_probs(matrix: &FeatureMatrix, probs: &[f64], threshold: f64) -> Result<EvalReport> {
    if probs.len() != matrix.rows {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: matrix.rows,
        });
    }
    let to_label = |p: f64| {
        if p >= threshold {
            Label::Attack
        } else {
            Label::Benign
        }
    };
    let window_pred: Vec<Label> = probs.iter().map(|&p| to_label(p)).collect();
    let window = metrics_for(&window_pred, &matrix.labels)?;

    let mut trace_pred = Vec::new();
    let mut trace_truth = Vec::new();
    let mut row = 0;
    for (_, score) in trace_scores(&matrix.trace_of_row, probs) {
        let t = matrix.trace_of_row[row];
        trace_truth.push(matrix.labels[row]);
        trace_pred.push(to_label(score));
        while row < matrix.rows && matrix.trace_of_row[row] == t {
            row += 1;
        }
    }
    Ok(EvalReport {
        window,
        trace: metrics_for(&trace_pred, &trace_truth)?,
        skipped_traces: matrix.skipped_traces.len(),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean k-nearest-neighbour majority vote. Equal distances prefer the
/// lower training index; a tied vote goes to benign.
pub fn knn_classify(
    train: &FeatureMatrix,
    queries: &FeatureMatrix,
    k: usize,
) -> Result<Vec<Label>> {
    if k == 0 || k > train.rows {
        return Err(Error::InvalidConfig(format!(
            "k = {k} must be in 1..={}",
            train.rows
        )));
    }
    if queries.cols != train.cols {
        return Err(Error::DimensionMismatch {
            expected: train.cols,
            found: queries.cols,
        });
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let out = queries
        .iter_rows()
        .map(|q| {
            best.clear();
            for (i, row) in train.iter_rows().enumerate() {
                let d = squared_distance(q, row);
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                // insert after every entry with distance <= d, keeping index order on ties
                let pos = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(pos, (d, i));
                best.truncate(k);
            }
            let attacks = best
                .iter()
                .filter(|&&(_, i)| train.labels[i].is_attack())
                .count();
            if 2 * attacks > best.len() {
                Label::Attack
            } else {
                Label::Benign
            }
        })
        .collect();
    Ok(out)
}

/// Trace-level KNN baseline: each trace is scored by the fraction of its
/// windows voted attack.
pub fn knn_evaluate(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    k: usize,
    threshold: f64,
) -> Result<EvalReport> {
    let votes: Vec<f64> = knn_classify(train, test, k)?
        .into_iter()
        .map(|l| l.as_u8() as f64)
        .collect();
    evaluate_probs(test, &votes, threshold)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window_len: usize,
    pub report: EvalReport,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "window_len,tp,fp,tn,fn,accuracy,precision,recall,f1,fpr,fnr,window_accuracy,window_f1,skipped_traces";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.window_len,
            self.report.trace.csv_fields(),
            self.report.window.accuracy,
            self.report.window.f1,
            self.report.skipped_traces
        )
    }
}

/// Re-runs split, featurization, PCA, training and evaluation for every
/// window length with otherwise identical configuration and seeds. Rows come
/// back in ascending window length; duplicates are dropped.
pub fn sweep_window_length(
    ds: &crate::dataset::Dataset,
    lengths: &[usize],
    cfg: &crate::pipeline::PipelineConfig,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(Error::InvalidConfig("no window lengths to sweep".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != lengths.len() {
        log::warn!("duplicate window lengths ignored: {lengths:?}");
    }
    sorted
        .into_iter()
        .map(|window_len| {
            let run_cfg = crate::pipeline::PipelineConfig {
                window_len,
                ..cfg.clone()
            };
            let run = crate::pipeline::run_central(ds, &run_cfg)?;
            log::info!("window {window_len}: trace f1 {:.4}", run.report.trace.f1);
            Ok(SweepRow {
                window_len,
                report: run.report,
            })
        })
        .collect()
}
