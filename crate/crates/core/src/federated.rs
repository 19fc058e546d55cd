//! In-process federated training simulation with Federated Averaging (FA)
//! and sample-count Weighted Federated Averaging (WFA).
//!
//! Each round every client trains a copy of the global model on its own
//! shard and hands back only its parameters and sample count. The server
//! combines those by a convex combination and evaluates the result on the
//! held-out test set.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::ClientShard;
use crate::error::{Error, Result};
use crate::eval::{median, MetricsReport};
use crate::features::FeatureMatrix;
use crate::nn::{self, EpochStream, MlpParams, TrainConfig};
use crate::pipeline::Prepared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregator {
    #[serde(rename = "FA")]
    Fa,
    #[serde(rename = "WFA")]
    Wfa,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Fa => "FA",
            Aggregator::Wfa => "WFA",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fa" => Ok(Aggregator::Fa),
            "wfa" => Ok(Aggregator::Wfa),
            _ => Err(Error::InvalidConfig(format!("unknown aggregator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub n_rounds: usize,
    pub local_epochs: usize,
    pub aggregator: Aggregator,
    pub seed: u64,
    /// Optimizer settings for local updates; `epochs` and `seed` are ignored.
    pub train: TrainConfig,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            n_rounds: 10,
            local_epochs: 5,
            aggregator: Aggregator::Wfa,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

/// Training rows owned by one client. Only [`local_update`] can read them.
#[derive(Debug, Clone)]
pub struct ClientData {
    client_id: usize,
    sample_count: usize,
    rows: FeatureMatrix,
}

impl ClientData {
    /// Gathers the rows of `pooled` whose trace belongs to `shard`.
    pub fn from_shard(pooled: &FeatureMatrix, shard: &ClientShard) -> Self {
        let mut rows = FeatureMatrix::empty(pooled.cols);
        for r in 0..pooled.rows {
            let t = pooled.trace_of_row[r];
            if shard.trace_indices.binary_search(&t).is_ok() {
                rows.push_row(pooled.row(r), pooled.labels[r], t);
            }
        }
        ClientData {
            client_id: shard.client_id,
            sample_count: shard.sample_count,
            rows,
        }
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn n_windows(&self) -> usize {
        self.rows.rows
    }
}

/// What a client sends back: parameters and its sample count, nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub params: MlpParams,
    pub sample_count: usize,
}

/// Trains a copy of `global` on the client's rows for `cfg.local_epochs`.
/// The shuffle stream is keyed by client id and the round's global epoch
/// indices, and momentum starts from zero.
pub fn local_update(
    global: &MlpParams,
    client: &ClientData,
    cfg: &FedConfig,
    round: usize,
) -> Result<(ClientUpdate, f64)> {
    if client.rows.rows == 0 {
        return Err(Error::EmptyShard(client.client_id));
    }
    let stream = EpochStream {
        seed: cfg.seed,
        stream: client.client_id as u64,
    };
    let out = nn::train_epochs(
        global,
        &client.rows,
        &cfg.train,
        stream,
        round * cfg.local_epochs,
        cfg.local_epochs,
    )?;
    let loss = out.epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok((
        ClientUpdate {
            params: out.params,
            sample_count: client.sample_count,
        },
        loss,
    ))
}

/// `p_0 + sum_k a_k (p_k - p_0)` with `sum_k a_k = 1`. Equal to the plain
/// weighted mean, but identical inputs come back bit-for-bit unchanged.
fn convex_combination(params: &[&MlpParams], coeffs: &[f64]) -> Result<MlpParams> {
    let first = *params
        .first()
        .ok_or(Error::EmptyInput("no client parameters"))?;
    if let Some(k) = params.iter().position(|p| !p.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "client {k} has dims {:?}, expected {:?}",
            params[k].dims, first.dims
        )));
    }
    let mut out = first.clone();
    for (p, &a) in params.iter().zip(coeffs).skip(1) {
        for ((o, &v), &base) in out.values_mut().zip(p.values()).zip(first.values()) {
            *o += a * (v - base);
        }
    }
    Ok(out)
}

/// Unweighted elementwise mean.
pub fn aggregate_fa(clients: &[ClientUpdate]) -> Result<MlpParams> {
    let params: Vec<&MlpParams> = clients.iter().map(|c| &c.params).collect();
    let a = 1.0 / clients.len().max(1) as f64;
    convex_combination(&params, &vec![a; clients.len()])
}

/// Elementwise mean weighted by `n_k / sum(n)`.
pub fn aggregate_wfa(clients: &[ClientUpdate]) -> Result<MlpParams> {
    if let Some(c) = clients.iter().find(|c| c.sample_count == 0) {
        return Err(Error::InvalidConfig(format!(
            "client sample count must be positive, got {}",
            c.sample_count
        )));
    }
    let total: usize = clients.iter().map(|c| c.sample_count).sum();
    let coeffs: Vec<f64> = clients
        .iter()
        .map(|c| c.sample_count as f64 / total as f64)
        .collect();
    let params: Vec<&MlpParams> = clients.iter().map(|c| &c.params).collect();
    convex_combination(&params, &coeffs)
}

pub fn aggregate(aggregator: Aggregator, clients: &[ClientUpdate]) -> Result<MlpParams> {
    match aggregator {
        Aggregator::Fa => aggregate_fa(clients),
        Aggregator::Wfa => aggregate_wfa(clients),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean loss of each client's last local epoch, by client id.
    pub per_client_loss: Vec<f64>,
    /// Trace-level metrics of the aggregated model on the test set.
    pub global_metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub params: MlpParams,
    pub records: Vec<RoundRecord>,
}

/// Runs `cfg.n_rounds` rounds over the given shards. Features and PCA are the
/// ones already fitted on the pooled training set in `prepared`.
pub fn run_federated(
    prepared: &Prepared,
    shards: &[ClientShard],
    hidden: &[usize],
    threshold: f64,
    cfg: &FedConfig,
) -> Result<FederatedRun> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("no client shards"));
    }
    cfg.train.validate()?;
    let mut clients: Vec<ClientData> = shards
        .iter()
        .map(|s| ClientData::from_shard(&prepared.train, s))
        .collect();
    clients.sort_by_key(|c| c.client_id);
    if let Some(c) = clients.iter().find(|c| c.rows.rows == 0) {
        return Err(Error::EmptyShard(c.client_id));
    }

    let mut global = nn::init_mlp(&prepared.mlp_dims(hidden), cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.n_rounds);
    for round in 0..cfg.n_rounds {
        let mut updates = Vec::with_capacity(clients.len());
        let mut losses = Vec::with_capacity(clients.len());
        for client in &clients {
            let (update, loss) = local_update(&global, client, cfg, round)?;
            updates.push(update);
            losses.push(loss);
        }
        global = aggregate(cfg.aggregator, &updates)?;
        let report = prepared.evaluate(&global, threshold)?;
        info!(
            "{} round {}: accuracy {:.4} f1 {:.4}",
            cfg.aggregator, round, report.trace.accuracy, report.trace.f1
        );
        records.push(RoundRecord {
            round,
            per_client_loss: losses,
            global_metrics: report.trace,
        });
    }
    Ok(FederatedRun {
        params: global,
        records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRun {
    pub aggregator: Aggregator,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Trace-level test accuracy after the last round.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub runs: Vec<ComparisonRun>,
    pub median_accuracy_fa: f64,
    pub median_accuracy_wfa: f64,
}

impl Comparison {
    pub const CSV_HEADER: &'static str = "aggregator,seed,round,accuracy,f1,fpr,fnr";

    pub fn csv_rows(&self) -> Vec<String> {
        self.runs
            .iter()
            .flat_map(|run| {
                run.records.iter().map(move |r| {
                    let m = &r.global_metrics;
                    format!(
                        "{},{},{},{},{},{},{}",
                        run.aggregator, run.seed, r.round, m.accuracy, m.f1, m.fpr, m.fnr
                    )
                })
            })
            .collect()
    }

    pub fn accuracies(&self, aggregator: Aggregator) -> Vec<(u64, f64)> {
        self.runs
            .iter()
            .filter(|r| r.aggregator == aggregator)
            .map(|r| (r.seed, r.accuracy))
            .collect()
    }
}

/// Runs FA and WFA for seeds `cfg.seed .. cfg.seed + n_seeds` on the same
/// shards.
pub fn compare_fa_wfa(
    prepared: &Prepared,
    shards: &[ClientShard],
    hidden: &[usize],
    threshold: f64,
    cfg: &FedConfig,
    n_seeds: usize,
) -> Result<Comparison> {
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("n_seeds must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(2 * n_seeds);
    for aggregator in [Aggregator::Fa, Aggregator::Wfa] {
        for s in 0..n_seeds as u64 {
            let run_cfg = FedConfig {
                aggregator,
                seed: cfg.seed.wrapping_add(s),
                ..cfg.clone()
            };
            let run = run_federated(prepared, shards, hidden, threshold, &run_cfg)?;
            let accuracy = run
                .records
                .last()
                .map_or(f64::NAN, |r| r.global_metrics.accuracy);
            runs.push(ComparisonRun {
                aggregator,
                seed: run_cfg.seed,
                records: run.records,
                accuracy,
            });
        }
    }
    let med = |a: Aggregator| {
        let v: Vec<f64> = runs
            .iter()
            .filter(|r| r.aggregator == a)
            .map(|r| r.accuracy)
            .collect();
        median(&v)
    };
    Ok(Comparison {
        median_accuracy_fa: med(Aggregator::Fa),
        median_accuracy_wfa: med(Aggregator::Wfa),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    fn scalar(w: f64, n: usize) -> ClientUpdate {
        ClientUpdate {
            params: MlpParams {
                dims: vec![1, 1],
                weights: vec![vec![w]],
                biases: vec![vec![0.0]],
            },
            sample_count: n,
        }
    }

    #[test]
    fn fa_is_mean() {
        let out = aggregate_fa(&[scalar(2.0, 1), scalar(4.0, 1)]).unwrap();
        assert_eq!(out.weights[0][0], 3.0);
        let single = scalar(1.7, 3);
        assert_eq!(
            aggregate_fa(std::slice::from_ref(&single)).unwrap(),
            single.params
        );
    }

    #[test]
    fn wfa_is_weighted_mean() {
        let out = aggregate_wfa(&[scalar(2.0, 1), scalar(4.0, 3)]).unwrap();
        assert_eq!(out.weights[0][0], 3.5);
        assert!(matches!(
            aggregate_wfa(&[scalar(2.0, 0), scalar(4.0, 3)]),
            Err(Error::InvalidConfig(_))
        ));
        // a dominating client pulls the result toward itself
        let out = aggregate_wfa(&[scalar(2.0, 1), scalar(4.0, 1_000_000)]).unwrap();
        assert!((out.weights[0][0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn identical_clients_are_fixed_point() {
        let p = nn::init_mlp(&[5, 7, 1], 3).unwrap();
        let c = ClientUpdate {
            params: p.clone(),
            sample_count: 4,
        };
        let many = vec![
            c.clone(),
            ClientUpdate {
                sample_count: 9,
                ..c.clone()
            },
            c,
        ];
        assert_eq!(aggregate_fa(&many).unwrap(), p);
        assert_eq!(aggregate_wfa(&many).unwrap(), p);
    }

    #[test]
    fn shape_and_empty_errors() {
        let a = scalar(1.0, 1);
        let b = ClientUpdate {
            params: nn::init_mlp(&[2, 1], 0).unwrap(),
            sample_count: 1,
        };
        assert!(matches!(
            aggregate_fa(&[a, b]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(aggregate_fa(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(aggregate_wfa(&[]), Err(Error::EmptyInput(_))));
    }

    fn client(rows: usize) -> ClientData {
        let mut m = FeatureMatrix::empty(2);
        for i in 0..rows {
            let l = if i % 2 == 0 {
                Label::Benign
            } else {
                Label::Attack
            };
            m.push_row(&[i as f64 / rows as f64, (i % 2) as f64], l, i);
        }
        ClientData {
            client_id: 0,
            sample_count: rows,
            rows: m,
        }
    }

    #[test]
    fn local_update_basics() {
        let global = nn::init_mlp(&[2, 4, 1], 1).unwrap();
        let cfg = FedConfig {
            local_epochs: 0,
            ..FedConfig::default()
        };
        let (u, _) = local_update(&global, &client(10), &cfg, 3).unwrap();
        assert_eq!(u.params, global);
        assert_eq!(u.sample_count, 10);

        let cfg = FedConfig::default();
        let (a, _) = local_update(&global, &client(10), &cfg, 1).unwrap();
        let (b, _) = local_update(&global, &client(10), &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, global);
        assert!(matches!(
            local_update(&global, &client(0), &cfg, 0),
            Err(Error::EmptyShard(0))
        ));
    }

    #[test]
    fn aggregator_parsing() {
        assert_eq!("fa".parse::<Aggregator>().unwrap(), Aggregator::Fa);
        assert_eq!("WFA".parse::<Aggregator>().unwrap(), Aggregator::Wfa);
        assert!("avg".parse::<Aggregator>().is_err());
        assert_eq!(serde_json::to_string(&Aggregator::Wfa).unwrap(), "\"WFA\"");
    }
}
