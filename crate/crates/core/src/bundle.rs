//! JSON model bundle: everything needed to turn raw traces into verdicts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Trace;
use crate::error::{Error, Result};
use crate::eval::{classify_trace, trace_scores, Verdict};
use crate::features::{Featurizer, IdfModel, Representation, Vocabulary};
use crate::nn::{self, MlpParams};
use crate::pca::PcaModel;
use crate::pipeline::FittedPipeline;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub mode: String,
    pub seed: u64,
    pub dataset_fingerprint: String,
    /// Pipeline stages that actually ran, in order.
    pub stages: Vec<String>,
    /// Echo of the configuration the model was trained with.
    pub config: serde_json::Value,
}

/// Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u64,
    pub representation: Representation,
    pub window_len: usize,
    pub stride: usize,
    pub vocab_ceiling: usize,
    /// Syscall IDs in column order.
    pub vocabulary: Vec<u32>,
    pub idf: Option<IdfModel>,
    pub pca: Option<PcaModel>,
    pub mlp: MlpParams,
    pub metadata: TrainingMetadata,
}

impl ModelBundle {
    pub fn new(fitted: &FittedPipeline, mlp: MlpParams, metadata: TrainingMetadata) -> Self {
        let f = &fitted.featurizer;
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            representation: f.rep,
            window_len: f.window_len,
            stride: f.stride,
            vocab_ceiling: f.vocab_ceiling,
            vocabulary: f.vocab.ids().to_vec(),
            idf: f.idf.clone(),
            pca: fitted.pca.clone(),
            mlp,
            metadata,
        }
    }

    pub fn fitted(&self) -> Result<FittedPipeline> {
        Ok(FittedPipeline {
            featurizer: Featurizer {
                rep: self.representation,
                window_len: self.window_len,
                stride: self.stride,
                vocab_ceiling: self.vocab_ceiling,
                vocab: Vocabulary::from_sorted_ids(self.vocabulary.clone())?,
                idf: self.idf.clone(),
            },
            pca: self.pca.clone(),
        })
    }

    /// Checks every structural invariant; the error names the first failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.window_len == 0 {
            return Err("window_len".into());
        }
        if self.stride == 0 {
            return Err("stride".into());
        }
        if self.vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err("vocabulary order".into());
        }
        let feature_dim = match self.representation {
            Representation::Trivial => {
                if self.vocab_ceiling <= 1 {
                    return Err("vocab_ceiling".into());
                }
                self.window_len
            }
            Representation::Count | Representation::Tfidf => self.vocabulary.len(),
        };
        match (&self.idf, self.representation) {
            (None, Representation::Tfidf) => return Err("idf missing".into()),
            (Some(_), Representation::Trivial | Representation::Count) => {
                return Err("idf present for non-tfidf representation".into())
            }
            (Some(idf), _) => {
                if idf.idf.len() != self.vocabulary.len() || idf.df.len() != self.vocabulary.len() {
                    return Err("idf length".into());
                }
                if idf.idf.iter().any(|v| !v.is_finite() || *v < 1.0) {
                    return Err("idf values".into());
                }
                if idf.df.iter().any(|&d| d > idf.n_docs) {
                    return Err("idf document frequencies".into());
                }
            }
            (None, _) => {}
        }
        let input_dim = match &self.pca {
            Some(p) => {
                if p.n_features != feature_dim {
                    return Err("pca n_features".into());
                }
                p.validate()?;
                p.n_components
            }
            None => feature_dim,
        };
        self.mlp.validate()?;
        if self.mlp.dims[0] != input_dim {
            return Err("mlp input dimension".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::CorruptBundle(format!("invalid JSON: {e}")))?;
        let version = value
            .get("schema_version")
            .ok_or_else(|| Error::CorruptBundle("schema_version missing".into()))?
            .as_u64()
            .ok_or_else(|| Error::CorruptBundle("schema_version".into()))?;
        if version != SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema(version));
        }
        let bundle: ModelBundle =
            serde_json::from_value(value).map_err(|e| Error::CorruptBundle(e.to_string()))?;
        bundle.validate().map_err(Error::CorruptBundle)?;
        Ok(bundle)
    }

    /// Short content hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Per-window probabilities for one trace; empty when it is shorter than
    /// the window length.
    pub fn window_probs(&self, trace: &Trace) -> Result<Vec<f64>> {
        let m = self.fitted()?.transform_traces([(0, trace)])?;
        nn::predict_proba(&self.mlp, &m)
    }

    pub fn predict(&self, traces: &[Trace], threshold: f64) -> Result<Vec<Prediction>> {
        let fitted = self.fitted()?;
        let m = fitted.transform_traces(traces.iter().enumerate())?;
        let probs = nn::predict_proba(&self.mlp, &m)?;
        let mut scored = trace_scores(&m.trace_of_row, &probs).into_iter().peekable();
        let mut out = Vec::with_capacity(traces.len());
        let mut row = 0;
        for (i, t) in traces.iter().enumerate() {
            if scored.peek().is_some_and(|&(ti, _)| ti == i) {
                scored.next();
                let n = m.trace_of_row[row..]
                    .iter()
                    .take_while(|&&ti| ti == i)
                    .count();
                out.push(Prediction::Verdict(classify_trace(
                    &t.id,
                    &probs[row..row + n],
                    threshold,
                )?));
                row += n;
            } else {
                out.push(Prediction::NoWindows(t.id.clone()));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Verdict(Verdict),
    /// The trace is shorter than the window length.
    NoWindows(String),
}

pub fn save_model_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, bundle.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text)
}
