//! Sliding windows over traces and the three window representations:
//! scaled raw sequence ("trivial"), bag-of-syscalls counts, and TF-IDF.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, Trace};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_LEN: usize = 30;
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub trace_index: usize,
    pub start: usize,
    pub syscalls: Vec<u32>,
    pub label: Label,
}

/// Offsets `0, stride, 2*stride, ...` while `offset + len <= trace length`.
pub fn window_offsets(trace_len: usize, len: usize, stride: usize) -> impl Iterator<Item = usize> {
    let count = if len == 0 || stride == 0 || trace_len < len {
        0
    } else {
        (trace_len - len) / stride + 1
    };
    (0..count).map(move |i| i * stride)
}

pub fn window_trace(trace: &Trace, trace_index: usize, len: usize, stride: usize) -> Vec<Window> {
    window_offsets(trace.len(), len, stride)
        .map(|start| Window {
            trace_index,
            start,
            syscalls: trace.syscalls[start..start + len].to_vec(),
            label: trace.label,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Trivial,
    Count,
    Tfidf,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Trivial => "trivial",
            Representation::Count => "count",
            Representation::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trivial" => Ok(Representation::Trivial),
            "count" => Ok(Representation::Count),
            "tfidf" => Ok(Representation::Tfidf),
            other => Err(Error::InvalidConfig(format!(
                "unknown representation {other:?}"
            ))),
        }
    }
}

/// Syscall IDs seen in training windows, mapped to dense columns in ascending
/// ID order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: Vec<u32>,
}

impl Vocabulary {
    /// `ids` must be strictly ascending.
    pub fn from_sorted_ids(ids: Vec<u32>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "vocabulary ids must be strictly ascending".into(),
            ));
        }
        Ok(Vocabulary { ids })
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn column(&self, id: u32) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }
}

pub fn vocabulary_from<'a>(windows: impl IntoIterator<Item = &'a [u32]>) -> Result<Vocabulary> {
    let mut ids = Vec::new();
    let mut any = false;
    for w in windows {
        any = true;
        ids.extend_from_slice(w);
    }
    if !any {
        return Err(Error::EmptyInput("no training windows for the vocabulary"));
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(Vocabulary { ids })
}

pub fn build_vocabulary(train_windows: &[Window]) -> Result<Vocabulary> {
    vocabulary_from(train_windows.iter().map(|w| w.syscalls.as_slice()))
}

pub fn rep_trivial(window: &[u32], vocab_ceiling: usize) -> Result<Vec<f64>> {
    if vocab_ceiling <= 1 {
        return Err(Error::InvalidConfig(format!(
            "vocab ceiling {vocab_ceiling} must exceed 1"
        )));
    }
    let scale = (vocab_ceiling - 1) as f64;
    // IDs beyond the training ceiling saturate at 1.
    Ok(window
        .iter()
        .map(|&s| (s as f64 / scale).min(1.0))
        .collect())
}

pub fn rep_count(window: &[u32], vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![0.0; vocab.size()];
    for &s in window {
        if let Some(c) = vocab.column(s) {
            out[c] += 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfModel {
    pub idf: Vec<f64>,
    pub n_docs: usize,
    pub df: Vec<usize>,
}

impl IdfModel {
    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
        ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn from_df(n_docs: usize, df: Vec<usize>) -> Self {
        let idf = df.iter().map(|&d| Self::smoothed_idf(n_docs, d)).collect();
        IdfModel { idf, n_docs, df }
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }
}

/// Fits document frequencies over the rows of a training count matrix; each
/// row (window) is one document.
pub fn fit_idf(train_counts: &FeatureMatrix) -> Result<IdfModel> {
    if train_counts.rows == 0 {
        return Err(Error::EmptyInput("no training rows for idf"));
    }
    let mut df = vec![0usize; train_counts.cols];
    for row in train_counts.iter_rows() {
        for (d, &c) in df.iter_mut().zip(row) {
            if c > 0.0 {
                *d += 1;
            }
        }
    }
    Ok(IdfModel::from_df(train_counts.rows, df))
}

/// Weights counts by idf and L2-normalizes; a zero row stays zero.
pub fn transform_tfidf(counts: &[f64], idf: &IdfModel) -> Result<Vec<f64>> {
    if counts.len() != idf.dim() {
        return Err(Error::DimensionMismatch {
            expected: idf.dim(),
            found: counts.len(),
        });
    }
    let mut w: Vec<f64> = counts.iter().zip(&idf.idf).map(|(c, i)| c * i).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(w)
}

/// Dense row-major matrix of window features with per-row labels and the
/// dataset index of the trace each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub labels: Vec<Label>,
    pub trace_of_row: Vec<usize>,
    /// Traces that produced no window because they are shorter than `L`.
    pub skipped_traces: Vec<usize>,
}

impl FeatureMatrix {
    pub fn empty(cols: usize) -> Self {
        FeatureMatrix {
            rows: 0,
            cols,
            data: Vec::new(),
            labels: Vec::new(),
            trace_of_row: Vec::new(),
            skipped_traces: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64], label: Label, trace: usize) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.labels.push(label);
        self.trace_of_row.push(trace);
        self.rows += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-width matrix still has rows.
        let cols = self.cols;
        (0..self.rows).map(move |i| &self.data[i * cols..(i + 1) * cols])
    }

    pub fn label_values(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.as_u8() as f64).collect()
    }

    /// Same rows, labels and trace bookkeeping with new feature values.
    pub fn with_data(&self, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.rows * cols);
        FeatureMatrix {
            rows: self.rows,
            cols,
            data,
            labels: self.labels.clone(),
            trace_of_row: self.trace_of_row.clone(),
            skipped_traces: self.skipped_traces.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// CSV with header `label,trace,c0..c{k-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "label,trace")?;
        for c in 0..self.cols {
            write!(out, ",c{c}")?;
        }
        writeln!(out)?;
        for (i, row) in self.iter_rows().enumerate() {
            write!(out, "{},{}", self.labels[i].as_u8(), self.trace_of_row[i])?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Everything fitted on training windows that is needed to featurize new
/// traces the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub rep: Representation,
    pub window_len: usize,
    pub stride: usize,
    pub vocab_ceiling: usize,
    pub vocab: Vocabulary,
    pub idf: Option<IdfModel>,
}

impl Featurizer {
    /// Fits vocabulary and, for TF-IDF, document frequencies on the windows of
    /// the given training traces.
    pub fn fit(
        ds: &Dataset,
        train_indices: &[usize],
        rep: Representation,
        window_len: usize,
        stride: usize,
    ) -> Result<Self> {
        if window_len == 0 || stride == 0 {
            return Err(Error::InvalidConfig(
                "window length and stride must be >= 1".into(),
            ));
        }
        let windows = train_indices.iter().flat_map(|&i| {
            let t = &ds.traces[i];
            window_offsets(t.len(), window_len, stride).map(move |s| &t.syscalls[s..s + window_len])
        });
        let vocab = vocabulary_from(windows)?;
        let mut f = Featurizer {
            rep,
            window_len,
            stride,
            vocab_ceiling: ds.vocab_ceiling,
            vocab,
            idf: None,
        };
        if rep == Representation::Tfidf {
            let counts = Featurizer {
                rep: Representation::Count,
                ..f.clone()
            }
            .transform(ds, train_indices)?;
            f.idf = Some(fit_idf(&counts)?);
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        match self.rep {
            Representation::Trivial => self.window_len,
            Representation::Count | Representation::Tfidf => self.vocab.size(),
        }
    }

    pub fn window_features(&self, window: &[u32]) -> Result<Vec<f64>> {
        match self.rep {
            Representation::Trivial => rep_trivial(window, self.vocab_ceiling),
            Representation::Count => Ok(rep_count(window, &self.vocab)),
            Representation::Tfidf => {
                let idf = self.idf.as_ref().ok_or(Error::InvalidConfig(
                    "tfidf requires a fitted idf model".into(),
                ))?;
                transform_tfidf(&rep_count(window, &self.vocab), idf)
            }
        }
    }

    /// Rows ordered by (position in `traces`, window offset).
    pub fn transform_traces<'a>(
        &self,
        traces: impl IntoIterator<Item = (usize, &'a Trace)>,
    ) -> Result<FeatureMatrix> {
        let mut m = FeatureMatrix::empty(self.dim());
        for (index, trace) in traces {
            let mut any = false;
            for start in window_offsets(trace.len(), self.window_len, self.stride) {
                let row = self.window_features(&trace.syscalls[start..start + self.window_len])?;
                m.push_row(&row, trace.label, index);
                any = true;
            }
            if !any {
                m.skipped_traces.push(index);
            }
        }
        Ok(m)
    }

    pub fn transform(&self, ds: &Dataset, indices: &[usize]) -> Result<FeatureMatrix> {
        self.transform_traces(indices.iter().map(|&i| (i, &ds.traces[i])))
    }
}

/// Vocabulary and (optional) idf fitted on training windows.
#[derive(Debug, Clone, Default)]
pub struct Fitted {
    pub vocab: Vocabulary,
    pub idf: Option<IdfModel>,
}

pub fn featurize(
    ds: &Dataset,
    indices: &[usize],
    rep: Representation,
    window_len: usize,
    stride: usize,
    fitted: &Fitted,
) -> Result<FeatureMatrix> {
    if rep == Representation::Tfidf && fitted.idf.is_none() {
        return Err(Error::InvalidConfig(
            "tfidf requires a fitted idf model".into(),
        ));
    }
    Featurizer {
        rep,
        window_len,
        stride,
        vocab_ceiling: ds.vocab_ceiling,
        vocab: fitted.vocab.clone(),
        idf: fitted.idf.clone(),
    }
    .transform(ds, indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(syscalls: Vec<u32>) -> Trace {
        Trace {
            id: "t".into(),
            syscalls,
            label: Label::Attack,
        }
    }

    #[test]
    fn window_counts() {
        let t = trace((0..35).collect());
        let w = window_trace(&t, 0, 30, 5);
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 5]);
        assert_eq!(w[1].syscalls[0], 5);
        assert!(w
            .iter()
            .all(|w| w.syscalls.len() == 30 && w.label == Label::Attack));
        assert_eq!(window_trace(&trace((0..30).collect()), 0, 30, 10).len(), 1);
        assert!(window_trace(&trace((0..29).collect()), 0, 30, 10).is_empty());
    }

    #[test]
    fn vocabulary_sorted_distinct() {
        let mk = |s: Vec<u32>| Window {
            trace_index: 0,
            start: 0,
            syscalls: s,
            label: Label::Benign,
        };
        let v = build_vocabulary(&[mk(vec![1, 2]), mk(vec![2, 3])]).unwrap();
        assert_eq!(v.ids(), &[1, 2, 3]);
        assert_eq!(v.column(3), Some(2));
        assert_eq!(v.column(4), None);
        let v = build_vocabulary(&[mk(vec![5, 5, 5])]).unwrap();
        assert_eq!((v.size(), v.column(5)), (1, Some(0)));
        assert!(matches!(build_vocabulary(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn trivial_scaling() {
        assert_eq!(rep_trivial(&[0, 99], 100).unwrap(), vec![0.0, 1.0]);
        assert_eq!(rep_trivial(&[0, 0, 0], 100).unwrap(), vec![0.0; 3]);
        let v = rep_trivial(&[10, 20, 30], 101).unwrap();
        for (a, b) in v.iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(rep_trivial(&[0], 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn counts_ignore_oov() {
        let v = Vocabulary::from_sorted_ids(vec![1, 2, 3]).unwrap();
        assert_eq!(rep_count(&[1, 1, 3], &v), vec![2.0, 0.0, 1.0]);
        assert_eq!(rep_count(&[7, 8, 9], &v), vec![0.0; 3]);
    }

    #[test]
    fn idf_values() {
        let m = FeatureMatrix {
            rows: 2,
            cols: 3,
            data: vec![1.0, 1.0, 0.0, 2.0, 0.0, 0.0],
            labels: vec![Label::Benign; 2],
            trace_of_row: vec![0, 1],
            skipped_traces: vec![],
        };
        let idf = fit_idf(&m).unwrap();
        assert_eq!(idf.df, vec![2, 1, 0]);
        assert_eq!(idf.idf[0], 1.0);
        assert!((idf.idf[1] - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert!((idf.idf[2] - 2.098_612_288_668_11).abs() < 1e-12);
        assert!(matches!(
            fit_idf(&FeatureMatrix::empty(3)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn tfidf_examples() {
        let idf = IdfModel {
            idf: vec![1.0, 1.405465, 1.0],
            n_docs: 2,
            df: vec![2, 1, 2],
        };
        let w = transform_tfidf(&[2.0, 0.0, 1.0], &idf).unwrap();
        for (a, b) in w.iter().zip([0.894427, 0.0, 0.447214]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(transform_tfidf(&[0.0; 3], &idf).unwrap(), vec![0.0; 3]);
        let one = IdfModel::from_df(1, vec![0]);
        let one = IdfModel {
            idf: vec![2.0],
            ..one
        };
        assert_eq!(transform_tfidf(&[3.0], &one).unwrap(), vec![1.0]);
        assert!(matches!(
            transform_tfidf(&[1.0], &idf),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    fn two_trace_dataset() -> Dataset {
        Dataset::new(vec![
            Trace {
                id: "a".into(),
                syscalls: (0..50).map(|i| i % 7).collect(),
                label: Label::Benign,
            },
            Trace {
                id: "b".into(),
                syscalls: (0..40).map(|i| i % 9).collect(),
                label: Label::Attack,
            },
            Trace {
                id: "c".into(),
                syscalls: vec![1, 2, 3],
                label: Label::Attack,
            },
        ])
    }

    #[test]
    fn featurize_bookkeeping() {
        let ds = two_trace_dataset();
        let f = Featurizer::fit(&ds, &[0, 1], Representation::Count, 30, 10).unwrap();
        let m = f.transform(&ds, &[0, 1, 2]).unwrap();
        // 50 -> 3 windows, 40 -> 2 windows, 3 -> none
        assert_eq!(m.rows, 5);
        assert_eq!(m.trace_of_row, vec![0, 0, 0, 1, 1]);
        assert_eq!(m.labels[3], Label::Attack);
        assert_eq!(m.skipped_traces, vec![2]);
        assert_eq!(m.cols, 9);
        for row in m.iter_rows() {
            assert_eq!(row.iter().sum::<f64>(), 30.0);
        }

        let f = Featurizer::fit(&ds, &[0, 1], Representation::Trivial, 30, 10).unwrap();
        assert_eq!(f.transform(&ds, &[0]).unwrap().cols, 30);

        let fitted = Fitted {
            vocab: f.vocab.clone(),
            idf: None,
        };
        assert!(featurize(&ds, &[0], Representation::Tfidf, 30, 10, &fitted).is_err());
        assert_eq!(
            featurize(&ds, &[0], Representation::Count, 30, 10, &fitted)
                .unwrap()
                .rows,
            3
        );
    }

    #[test]
    fn tfidf_rows_are_unit_or_zero() {
        let ds = two_trace_dataset();
        let f = Featurizer::fit(&ds, &[0], Representation::Tfidf, 30, 10).unwrap();
        // trace 1 has ids 7 and 8 that trace 0 never used
        let m = f.transform(&ds, &[0, 1]).unwrap();
        assert!(m.is_finite());
        for row in m.iter_rows() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12 || n == 0.0);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn csv_header() {
        let ds = two_trace_dataset();
        let f = Featurizer::fit(&ds, &[1], Representation::Count, 30, 10).unwrap();
        let m = f.transform(&ds, &[1]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "label,trace,c0,c1,c2,c3,c4,c5,c6,c7,c8"
        );
        assert!(lines.next().unwrap().starts_with("1,1,"));
    }

    proptest! {
        #[test]
        fn count_sum_and_permutation(
            window in proptest::collection::vec(0u32..12, 1..40),
            vocab_ids in proptest::collection::btree_set(0u32..12, 1..12),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let vocab = Vocabulary::from_sorted_ids(vocab_ids.into_iter().collect()).unwrap();
            let counts = rep_count(&window, &vocab);
            let in_vocab = window.iter().filter(|&&s| vocab.column(s).is_some()).count();
            prop_assert_eq!(counts.iter().sum::<f64>(), in_vocab as f64);

            let idf = IdfModel::from_df(10, (0..vocab.size()).map(|i| i % 10).collect());
            let mut shuffled = window.clone();
            shuffled.shuffle(&mut crate::rng::rng_from(seed, &[]));
            prop_assert_eq!(&rep_count(&shuffled, &vocab), &counts);
            prop_assert_eq!(
                transform_tfidf(&rep_count(&shuffled, &vocab), &idf).unwrap(),
                transform_tfidf(&counts, &idf).unwrap()
            );
        }
    }

    #[test]
    fn trivial_is_order_sensitive() {
        let a = rep_trivial(&[1, 2, 3], 10).unwrap();
        let b = rep_trivial(&[3, 2, 1], 10).unwrap();
        assert_ne!(a, b);
    }
}
