//! End-to-end experiment plumbing: split and balance traces, fit the
//! featurizer and PCA on training traces only, train the MLP, and evaluate on
//! held-out traces.

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::{balance_classes, split_train_test, Dataset, Trace};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, DEFAULT_THRESHOLD};
use crate::features::{
    FeatureMatrix, Featurizer, Representation, DEFAULT_STRIDE, DEFAULT_WINDOW_LEN,
};
use crate::nn::{self, MlpParams, TrainConfig, TrainOutcome, DEFAULT_HIDDEN};
use crate::pca::{fit_pca, ComponentSelection, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PcaMode {
    /// On for count and TF-IDF features, off for the trivial representation.
    #[default]
    Auto,
    On,
    Off,
}

impl PcaMode {
    pub fn enabled_for(self, rep: Representation) -> bool {
        match self {
            PcaMode::On => true,
            PcaMode::Off => false,
            PcaMode::Auto => rep != Representation::Trivial,
        }
    }
}

impl std::str::FromStr for PcaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PcaMode::Auto),
            "on" | "true" => Ok(PcaMode::On),
            "off" | "false" => Ok(PcaMode::Off),
            other => Err(Error::InvalidConfig(format!(
                "pca mode {other:?} is not on, off or auto"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rep: Representation,
    pub window_len: usize,
    pub stride: usize,
    pub pca: PcaMode,
    pub variance_target: f64,
    pub pca_components: Option<usize>,
    pub hidden: Vec<usize>,
    /// Seed for the train/test split and class balancing.
    pub seed: u64,
    pub test_fraction: f64,
    pub balance_test: bool,
    pub threshold: f64,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rep: Representation::Tfidf,
            window_len: DEFAULT_WINDOW_LEN,
            stride: DEFAULT_STRIDE,
            pca: PcaMode::Auto,
            variance_target: crate::pca::DEFAULT_VARIANCE_TARGET,
            pca_components: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
            test_fraction: 0.25,
            balance_test: true,
            threshold: DEFAULT_THRESHOLD,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Same seed for data handling and for training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn pca_selection(&self) -> ComponentSelection {
        match self.pca_components {
            Some(k) => ComponentSelection::Fixed(k),
            None => ComponentSelection::VarianceTarget(self.variance_target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified trace-level split, then 50/50 undersampling of the training
/// side (and of the test side when `balance_test` is set).
pub fn split_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<DataSplit> {
    let (train, test) = split_train_test(ds, cfg.test_fraction, cfg.seed)?;
    let train = balance_classes(&train, ds, cfg.seed)?;
    let test = if cfg.balance_test {
        balance_classes(&test, ds, cfg.seed ^ 0x7e57)?
    } else {
        test
    };
    Ok(DataSplit { train, test })
}

/// Featurizer plus optional PCA, both fitted on training traces.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    pub featurizer: Featurizer,
    pub pca: Option<PcaModel>,
}

impl FittedPipeline {
    pub fn input_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.n_components,
            None => self.featurizer.dim(),
        }
    }

    pub fn project(&self, m: FeatureMatrix) -> Result<FeatureMatrix> {
        match &self.pca {
            Some(p) => {
                let data = p.transform(&m.data, m.cols)?;
                Ok(m.with_data(p.n_components, data))
            }
            None => Ok(m),
        }
    }

    pub fn transform(&self, ds: &Dataset, indices: &[usize]) -> Result<FeatureMatrix> {
        self.project(self.featurizer.transform(ds, indices)?)
    }

    pub fn transform_traces<'a>(
        &self,
        traces: impl IntoIterator<Item = (usize, &'a Trace)>,
    ) -> Result<FeatureMatrix> {
        self.project(self.featurizer.transform_traces(traces)?)
    }

    /// Names of the stages this pipeline runs, in order.
    pub fn stages(&self) -> Vec<String> {
        let mut s = vec![
            "window".to_string(),
            format!("features:{}", self.featurizer.rep),
        ];
        if self.featurizer.idf.is_some() {
            s.push("idf".into());
        }
        if self.pca.is_some() {
            s.push("pca".into());
        }
        s.push("mlp".into());
        s
    }
}

/// Fitted pipeline and the transformed train/test matrices.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fitted: FittedPipeline,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

pub fn prepare(ds: &Dataset, split: &DataSplit, cfg: &PipelineConfig) -> Result<Prepared> {
    let featurizer = Featurizer::fit(ds, &split.train, cfg.rep, cfg.window_len, cfg.stride)?;
    let train_raw = featurizer.transform(ds, &split.train)?;
    if train_raw.rows == 0 {
        return Err(Error::TooFewSamples(format!(
            "no training trace is at least {} syscalls long",
            cfg.window_len
        )));
    }
    let pca = if cfg.pca.enabled_for(cfg.rep) {
        let model = fit_pca(
            &train_raw.data,
            train_raw.rows,
            train_raw.cols,
            cfg.pca_selection(),
        )?;
        if model.n_components == 0 {
            return Err(Error::DegenerateInput(
                "training features have zero variance".into(),
            ));
        }
        info!(
            "pca kept {} of {} dimensions ({:.4} of variance)",
            model.n_components,
            model.n_features,
            model.explained_variance_ratio.iter().sum::<f64>()
        );
        Some(model)
    } else {
        None
    };
    let fitted = FittedPipeline { featurizer, pca };
    let train = fitted.project(train_raw)?;
    let test = fitted.transform(ds, &split.test)?;
    Ok(Prepared {
        fitted,
        train,
        test,
    })
}

impl Prepared {
    pub fn mlp_dims(&self, hidden: &[usize]) -> Vec<usize> {
        nn::layer_dims(self.fitted.input_dim(), hidden)
    }

    pub fn evaluate(&self, params: &MlpParams, threshold: f64) -> Result<EvalReport> {
        let probs = nn::predict_proba(params, &self.test)?;
        eval::evaluate_probs(&self.test, &probs, threshold)
    }
}

#[derive(Debug, Clone)]
pub struct CentralRun {
    pub split: DataSplit,
    pub prepared: Prepared,
    pub params: MlpParams,
    pub epoch_losses: Vec<f64>,
    pub report: EvalReport,
}

pub fn train_central(prepared: &Prepared, cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let init = nn::init_mlp(&prepared.mlp_dims(&cfg.hidden), cfg.train.seed)?;
    nn::train(&init, &prepared.train, &cfg.train)
}

pub fn run_central(ds: &Dataset, cfg: &PipelineConfig) -> Result<CentralRun> {
    let split = split_dataset(ds, cfg)?;
    let prepared = prepare(ds, &split, cfg)?;
    info!(
        "training on {} windows from {} traces, testing on {} windows",
        prepared.train.rows,
        split.train.len(),
        prepared.test.rows
    );
    let outcome = train_central(&prepared, cfg)?;
    let report = prepared.evaluate(&outcome.params, cfg.threshold)?;
    Ok(CentralRun {
        split,
        prepared,
        params: outcome.params,
        epoch_losses: outcome.epoch_losses,
        report,
    })
}
