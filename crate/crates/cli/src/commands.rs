use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hids_core::alert::alert_for;
use hids_core::dataset::{
    self, generate_synthetic, parse_trace_file, partition_clients, write_dataset, Label,
};
use hids_core::eval::{knn_evaluate, sweep_window_length, SweepRow};
use hids_core::federated::{compare_fa_wfa, run_federated, Comparison};
use hids_core::nn::TrainConfig;
use hids_core::pipeline::{self, split_dataset, PipelineConfig};
use hids_core::{
    load_model_bundle, save_model_bundle, Dataset, FedConfig, ModelBundle, Prediction, SynthConfig,
    TrainingMetadata,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a, out),
        Command::Featurize(a) => featurize(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => evaluate(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Fedcompare(a) => fedcompare(a, out),
    }
}

/// Configuration echo stored in bundle metadata.
#[derive(Debug, Serialize, Deserialize)]
struct ConfigEcho {
    pipeline: PipelineConfig,
    federated: Option<FederatedEcho>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FederatedEcho {
    clients: usize,
    skew: f64,
    fed: FedConfig,
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?;
    emit(out, &text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn load_data(a: &DataArgs) -> Result<Dataset> {
    if !a.benign_dir.is_empty() {
        info!(
            "loading {} benign and {} attack directories",
            a.benign_dir.len(),
            a.attack_dir.len()
        );
        return Ok(dataset::load_labeled_dirs(&a.benign_dir, &a.attack_dir)?);
    }
    let root = match &a.data {
        Some(p) => p.clone(),
        None => std::env::var_os("ADFA_LD_ROOT")
            .map(PathBuf::from)
            .ok_or_else(|| {
                CliError::Usage(
                    "no dataset given: pass --data, --benign-dir/--attack-dir or set ADFA_LD_ROOT"
                        .into(),
                )
            })?,
    };
    info!("loading ADFA-LD layout from {}", root.display());
    let ds = dataset::load_adfa_dataset(&root)?;
    let (b, at) = ds.count_labels(&(0..ds.len()).collect::<Vec<_>>());
    info!("loaded {} traces ({b} benign, {at} attack)", ds.len());
    Ok(ds)
}

fn pipeline_config(f: &FeatureArgs, s: &SplitArgs, m: Option<&ModelArgs>) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        rep: f.rep,
        window_len: f.window_len,
        stride: f.stride,
        pca: f.pca,
        variance_target: f.variance_target,
        pca_components: f.pca_components,
        test_fraction: s.test_fraction,
        balance_test: s.balance_test,
        ..PipelineConfig::default()
    };
    if let Some(m) = m {
        cfg.hidden = m.hidden.clone();
        cfg.threshold = m.threshold;
        cfg.train = TrainConfig {
            lr: m.lr,
            momentum: m.momentum,
            batch_size: m.batch_size,
            epochs: m.epochs,
            seed: 0,
            l2: m.l2,
        };
    }
    cfg.with_seed(s.seed)
}

fn fed_config(cfg: &PipelineConfig, f: &FedArgs, aggregator: hids_core::Aggregator) -> FedConfig {
    FedConfig {
        n_rounds: f.rounds,
        local_epochs: f.local_epochs,
        aggregator,
        seed: cfg.seed,
        train: cfg.train.clone(),
    }
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_benign: a.n_benign,
        n_attack: a.n_attack,
        trace_len_min: a.len_min,
        trace_len_max: a.len_max,
        vocab_size: a.vocab,
        rho: a.rho,
    };
    let ds = generate_synthetic(&cfg)?;
    write_dataset(&ds, &cfg, &a.out)?;
    info!("wrote {} traces to {}", ds.len(), a.out.display());
    emit_json(
        out,
        &json!({
            "out": a.out.display().to_string(),
            "n_benign": cfg.n_benign,
            "n_attack": cfg.n_attack,
            "fingerprint": ds.fingerprint(),
        }),
    )
}

fn featurize(a: FeaturizeArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    let cfg = pipeline_config(&a.features, &a.split, None);
    let split = split_dataset(&ds, &cfg)?;
    let prepared = pipeline::prepare(&ds, &split, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(a.out.clone(), e))?;
    for (name, m) in [("train.csv", &prepared.train), ("test.csv", &prepared.test)] {
        let path = a.out.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::Io(path.clone(), e))?;
        let mut w = BufWriter::new(file);
        m.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Io(path.clone(), e))?;
    }
    let mut stages = prepared.fitted.stages();
    stages.pop();
    emit_json(
        out,
        &json!({
            "train_rows": prepared.train.rows,
            "test_rows": prepared.test.rows,
            "dim": prepared.train.cols,
            "stages": stages,
        }),
    )
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    let cfg = pipeline_config(&a.features, &a.split, Some(&a.model));
    cfg.train.validate()?;
    let split = split_dataset(&ds, &cfg)?;
    let prepared = pipeline::prepare(&ds, &split, &cfg)?;

    let (params, report, details, federated) = match a.mode {
        Mode::Central => {
            let outcome = pipeline::train_central(&prepared, &cfg)?;
            let report = prepared.evaluate(&outcome.params, cfg.threshold)?;
            let details = json!({ "evaluation": report, "epoch_losses": outcome.epoch_losses });
            (outcome.params, report, details, None)
        }
        Mode::Federated => {
            let fed = fed_config(&cfg, &a.fed, a.aggregator);
            let shards = partition_clients(&split.train, a.fed.clients, a.skew, cfg.seed)?;
            info!(
                "{} clients with {:?} traces",
                shards.len(),
                shards.iter().map(|s| s.sample_count).collect::<Vec<_>>()
            );
            let run = run_federated(&prepared, &shards, &cfg.hidden, cfg.threshold, &fed)?;
            let report = prepared.evaluate(&run.params, cfg.threshold)?;
            let details = json!({ "evaluation": report, "rounds": run.records });
            let echo = FederatedEcho {
                clients: a.fed.clients,
                skew: a.skew,
                fed,
            };
            (run.params, report, details, Some(echo))
        }
    };

    let mode = match a.mode {
        Mode::Central => "central".to_string(),
        Mode::Federated => format!("federated:{}", a.aggregator),
    };
    let meta = TrainingMetadata {
        mode,
        seed: cfg.seed,
        dataset_fingerprint: ds.fingerprint(),
        stages: prepared.fitted.stages(),
        config: serde_json::to_value(ConfigEcho {
            pipeline: cfg.clone(),
            federated,
        })
        .map_err(|e| CliError::Internal(e.to_string()))?,
    };
    let bundle = ModelBundle::new(&prepared.fitted, params, meta);
    save_model_bundle(&bundle, &a.out)?;
    info!("wrote model {} ({})", a.out.display(), bundle.fingerprint());
    if let Some(path) = &a.report {
        write_file(
            path,
            &(serde_json::to_string_pretty(&details).expect("report serializes") + "\n"),
        )?;
    }
    emit_json(out, &report.trace)
}

/// Pipeline configuration recorded in the bundle, or defaults for bundles
/// written by other tools.
fn recorded_config(bundle: &ModelBundle) -> PipelineConfig {
    match serde_json::from_value::<ConfigEcho>(bundle.metadata.config.clone()) {
        Ok(echo) => echo.pipeline,
        Err(_) => {
            warn!("bundle carries no pipeline configuration; using defaults for the split");
            PipelineConfig::default().with_seed(bundle.metadata.seed)
        }
    }
}

fn evaluate(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_model_bundle(&a.model)?;
    let ds = load_data(&a.data)?;
    let mut cfg = recorded_config(&bundle);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.test_fraction {
        cfg.test_fraction = f;
    }
    if let Some(b) = a.balance_test {
        cfg.balance_test = b;
    }
    let threshold = a.threshold.unwrap_or(cfg.threshold);
    let split = split_dataset(&ds, &cfg)?;
    let indices = match a.split {
        EvalSplit::Test => split.test.clone(),
        EvalSplit::All => (0..ds.len()).collect(),
    };
    let fitted = bundle.fitted()?;
    let matrix = fitted.transform(&ds, &indices)?;
    let probs = hids_core::nn::predict_proba(&bundle.mlp, &matrix)?;
    let report = hids_core::eval::evaluate_probs(&matrix, &probs, threshold)?;
    let knn = if a.knn {
        let train = fitted.transform(&ds, &split.train)?;
        Some(knn_evaluate(&train, &matrix, a.knn_k, threshold)?)
    } else {
        None
    };
    emit_json(out, &json!({ "model": report, "knn": knn }))
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_model_bundle(&a.model)?;
    let threshold = a
        .threshold
        .unwrap_or_else(|| recorded_config(&bundle).threshold);
    let traces = a
        .traces
        .iter()
        .map(|p| {
            let mut t = parse_trace_file(p, Label::Benign)?;
            t.id = p.display().to_string();
            Ok(t)
        })
        .collect::<std::result::Result<Vec<_>, hids_core::Error>>()?;
    let fingerprint = bundle.fingerprint();
    let timestamp = a
        .fixed_clock
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));

    let mut alerts = Vec::new();
    for p in bundle.predict(&traces, threshold)? {
        match p {
            Prediction::Verdict(v) => {
                emit_json(out, &v)?;
                if let Some(alert) = alert_for(&v, threshold, &fingerprint, &timestamp) {
                    warn!(
                        "intrusion alert: {} score {:.4}",
                        alert.trace_id, alert.score
                    );
                    alerts.push(alert);
                }
            }
            Prediction::NoWindows(id) => {
                warn!(
                    "{id}: shorter than the window length {}; no verdict",
                    bundle.window_len
                );
                emit_json(
                    out,
                    &json!({ "warning": "no_windows", "trace_id": id, "window_len": bundle.window_len }),
                )?;
            }
        }
    }
    if let Some(path) = &a.alert_log {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::Io(path.clone(), e))?;
        let mut w = BufWriter::new(file);
        for alert in &alerts {
            let line =
                serde_json::to_string(alert).map_err(|e| CliError::Internal(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| CliError::Io(path.clone(), e))?;
        }
        w.flush().map_err(|e| CliError::Io(path.clone(), e))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    let cfg = pipeline_config(&a.features, &a.split, Some(&a.model));
    cfg.train.validate()?;
    let rows = sweep_window_length(&ds, &a.lengths, &cfg)?;
    emit(out, SweepRow::CSV_HEADER)?;
    for row in rows {
        emit(out, &row.csv())?;
    }
    Ok(())
}

fn fedcompare(a: FedcompareArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_data(&a.data)?;
    let cfg = pipeline_config(&a.features, &a.split, Some(&a.model));
    cfg.train.validate()?;
    let split = split_dataset(&ds, &cfg)?;
    let prepared = pipeline::prepare(&ds, &split, &cfg)?;
    let shards = partition_clients(&split.train, a.fed.clients, a.skew, cfg.seed)?;
    let fed = fed_config(&cfg, &a.fed, hids_core::Aggregator::Wfa);
    let cmp: Comparison = compare_fa_wfa(
        &prepared,
        &shards,
        &cfg.hidden,
        cfg.threshold,
        &fed,
        a.n_seeds,
    )?;
    info!(
        "median final accuracy: FA {:.4}, WFA {:.4}",
        cmp.median_accuracy_fa, cmp.median_accuracy_wfa
    );
    emit(out, Comparison::CSV_HEADER)?;
    for row in cmp.csv_rows() {
        emit(out, &row)?;
    }
    if let Some(path) = &a.records {
        let shard_sizes: Vec<usize> = shards.iter().map(|s| s.sample_count).collect();
        let doc = json!({ "shard_sizes": shard_sizes, "comparison": cmp });
        write_file(
            path,
            &(serde_json::to_string_pretty(&doc).expect("records serialize") + "\n"),
        )?;
    }
    Ok(())
}
