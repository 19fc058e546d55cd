use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use hids_core::features::{Representation, DEFAULT_STRIDE, DEFAULT_WINDOW_LEN};
use hids_core::pipeline::PcaMode;
use hids_core::Aggregator;

#[derive(Debug, Parser)]
#[command(
    name = "hids",
    version,
    about = "Host intrusion detection on system-call traces, trained centrally or across simulated federated clients"
)]
pub struct Cli {
    /// Flat JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

pub const SUBCOMMANDS: [&str; 7] = [
    "gen",
    "featurize",
    "train",
    "eval",
    "predict",
    "sweep",
    "fedcompare",
];

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset in the ADFA-LD layout.
    Gen(GenArgs),
    /// Export featurized train/test windows as CSV.
    Featurize(FeaturizeArgs),
    /// Train a model and write a model bundle.
    Train(TrainArgs),
    /// Evaluate a model bundle on a dataset.
    Eval(EvalArgs),
    /// Score trace files with a model bundle and emit alerts.
    Predict(PredictArgs),
    /// Compare window lengths with otherwise identical settings.
    Sweep(SweepArgs),
    /// Compare FA and WFA aggregation over several seeds.
    Fedcompare(FedcompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n_benign: usize,
    #[arg(long, default_value_t = 400)]
    pub n_attack: usize,
    #[arg(long, default_value_t = 60)]
    pub len_min: usize,
    #[arg(long, default_value_t = 160)]
    pub len_max: usize,
    /// Number of distinct syscall IDs.
    #[arg(long, default_value_t = 200)]
    pub vocab: usize,
    /// Per-step probability that an attack trace emits a hot-set syscall.
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// ADFA-LD root directory. Defaults to $ADFA_LD_ROOT.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["benign_dir", "attack_dir"])]
    pub data: Option<PathBuf>,
    /// Directory of benign traces (repeatable), for non-ADFA layouts.
    #[arg(long, value_name = "DIR", requires = "attack_dir")]
    pub benign_dir: Vec<PathBuf>,
    /// Directory of attack traces (repeatable), for non-ADFA layouts.
    #[arg(long, value_name = "DIR", requires = "benign_dir")]
    pub attack_dir: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    #[arg(long, default_value_t = Representation::Tfidf)]
    pub rep: Representation,
    #[arg(long, default_value_t = DEFAULT_WINDOW_LEN)]
    pub window_len: usize,
    #[arg(long, default_value_t = DEFAULT_STRIDE)]
    pub stride: usize,
    /// on, off or auto (on for count/tfidf, off for trivial).
    #[arg(long, default_value = "auto")]
    pub pca: PcaMode,
    #[arg(long, default_value_t = 0.95)]
    pub variance_target: f64,
    /// Keep exactly this many components instead of using the variance target.
    #[arg(long)]
    pub pca_components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Undersample the test set to 50/50 as well.
    #[arg(long, default_value_t = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub balance_test: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Centralized training epochs.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

#[derive(Debug, Args)]
pub struct FedArgs {
    #[arg(long, default_value_t = 4)]
    pub clients: usize,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 5)]
    pub local_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Central,
    Federated,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Directory for train.csv and test.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Mode::Central)]
    pub mode: Mode,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fed: FedArgs,
    /// Client size skew in [0, 1]; 0 is an even split.
    #[arg(long, default_value_t = 0.0)]
    pub skew: f64,
    #[arg(long, default_value_t = Aggregator::Wfa)]
    pub aggregator: Aggregator,
    /// Model bundle output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Optional detailed report (both metric levels, losses, round records).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// Held-out side of the split recorded in the bundle.
    Test,
    /// Every trace in the dataset.
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Overrides the split seed recorded in the bundle.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub balance_test: Option<bool>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also report the k-nearest-neighbour baseline fitted on the training split.
    #[arg(long, default_value_t = false, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub knn: bool,
    #[arg(long, default_value_t = hids_core::eval::DEFAULT_KNN_K)]
    pub knn_k: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Trace files, one syscall sequence each.
    #[arg(required = true, value_name = "TRACE")]
    pub traces: Vec<PathBuf>,
    /// Defaults to the threshold the model was trained with.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Append alert records (JSON lines) to this file.
    #[arg(long, value_name = "FILE")]
    pub alert_log: Option<PathBuf>,
    #[arg(long, hide = true, value_name = "ISO8601")]
    pub fixed_clock: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    pub lengths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct FedcompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fed: FedArgs,
    #[arg(long, default_value_t = 1.0)]
    pub skew: f64,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: usize,
    /// Write every run's per-round records as JSON.
    #[arg(long, value_name = "FILE")]
    pub records: Option<PathBuf>,
}

/// Value of `--config FILE` / `--config=FILE` anywhere in argv.
pub fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn long_flags(cmd: &clap::Command) -> Vec<String> {
    cmd.get_arguments()
        .filter_map(|a| a.get_long())
        .map(str::to_string)
        .collect()
}

/// Splices config-file entries into argv right after the subcommand name, as
/// `--flag=value`, skipping any flag already given on the command line. Keys
/// that only other subcommands understand are ignored, so one file can serve
/// every subcommand.
pub fn merge_config(argv: &[String], config: &serde_json::Value) -> Result<Vec<String>, String> {
    use clap::CommandFactory;

    let map = config
        .as_object()
        .ok_or_else(|| "config file must contain a JSON object".to_string())?;
    let Some(pos) = argv
        .iter()
        .skip(1)
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
    else {
        return Ok(argv.to_vec());
    };
    let pos = pos + 2;
    let cli = Cli::command();
    let sub = cli
        .find_subcommand(&argv[pos - 1])
        .expect("known subcommand");
    let own = long_flags(sub);
    let any: Vec<String> = cli.get_subcommands().flat_map(long_flags).collect();
    let mut injected = Vec::new();
    for (key, value) in map {
        let name = key.replace('_', "-");
        if name == "config" {
            return Err("config files cannot include other config files".into());
        }
        if !own.contains(&name) {
            if any.contains(&name) {
                continue;
            }
            return Err(format!("unknown config key {key:?}"));
        }
        let flag = format!("--{name}");
        let given = argv[pos..]
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given || value.is_null() {
            continue;
        }
        let text = match value {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Bool(_) | serde_json::Value::Number(_) => value.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    _ => Err(format!("config key {key:?}: unsupported list element {v}")),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            _ => {
                return Err(format!(
                    "config key {key:?}: nested objects are not supported"
                ))
            }
        };
        injected.push(format!("{flag}={text}"));
    }
    let mut out = argv[..pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use serde_json::json;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_beat_config() {
        let a = argv("hids train --config c.json --window-len 20 --out m.json");
        let merged = merge_config(
            &a,
            &json!({"window_len": 40, "stride": 5, "hidden": [8, 4], "seed": null}),
        )
        .unwrap();
        assert_eq!(
            merged,
            argv("hids train --hidden=8,4 --stride=5 --config c.json --window-len 20 --out m.json")
        );
        let cli = Cli::try_parse_from(&merged).unwrap();
        let Command::Train(t) = cli.command else {
            panic!()
        };
        assert_eq!(t.features.window_len, 20);
        assert_eq!(t.features.stride, 5);
        assert_eq!(t.model.hidden, vec![8, 4]);
        assert_eq!(t.split.seed, 0);
    }

    #[test]
    fn config_path_forms() {
        assert_eq!(
            config_path(&argv("hids gen --config=a.json")),
            Some("a.json".into())
        );
        assert_eq!(
            config_path(&argv("hids --config b.json gen")),
            Some("b.json".into())
        );
        assert_eq!(config_path(&argv("hids gen --out x")), None);
    }

    #[test]
    fn rejects_nested_config() {
        assert!(merge_config(&argv("hids gen"), &json!({"a": {"b": 1}})).is_err());
        assert!(merge_config(&argv("hids gen"), &json!([1])).is_err());
        assert!(merge_config(&argv("hids gen"), &json!({"no_such_flag": 1})).is_err());
    }

    #[test]
    fn keys_for_other_subcommands_are_skipped() {
        let a = argv("hids gen --out d");
        let merged = merge_config(&a, &json!({"epochs": 3, "seed": 9})).unwrap();
        assert_eq!(merged, argv("hids gen --seed=9 --out d"));
    }

    #[test]
    fn balance_test_accepts_explicit_false() {
        let cli = Cli::try_parse_from(argv("hids featurize --data d --out o --balance-test=false"))
            .unwrap();
        let Command::Featurize(f) = cli.command else {
            panic!()
        };
        assert!(!f.split.balance_test);
        let cli =
            Cli::try_parse_from(argv("hids featurize --data d --out o --balance-test")).unwrap();
        let Command::Featurize(f) = cli.command else {
            panic!()
        };
        assert!(f.split.balance_test);
    }
}
