//! Trace ingestion, synthetic trace generation, and index bookkeeping
//! (train/test split, class balancing, client partitioning).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, rng_from};

pub const TRAINING_DIR: &str = "Training_Data_Master";
pub const VALIDATION_DIR: &str = "Validation_Data_Master";
pub const ATTACK_DIR: &str = "Attack_Data_Master";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign = 0,
    Attack = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Benign),
            1 => Some(Label::Attack),
            _ => None,
        }
    }

    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub id: String,
    pub syscalls: Vec<u32>,
    pub label: Label,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.syscalls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syscalls.is_empty()
    }

    /// Space-separated decimal form, the same layout the trace files use.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.syscalls.len() * 4);
        for (i, s) in self.syscalls.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&s.to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub traces: Vec<Trace>,
    /// One more than the largest syscall ID the dataset may contain.
    pub vocab_ceiling: usize,
}

impl Dataset {
    pub fn new(traces: Vec<Trace>) -> Self {
        let vocab_ceiling = traces
            .iter()
            .flat_map(|t| t.syscalls.iter())
            .max()
            .map_or(1, |&m| m as usize + 1);
        Dataset {
            traces,
            vocab_ceiling,
        }
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn label_of(&self, index: usize) -> Label {
        self.traces[index].label
    }

    pub fn count_labels(&self, indices: &[usize]) -> (usize, usize) {
        indices
            .iter()
            .fold((0, 0), |(b, a), &i| match self.label_of(i) {
                Label::Benign => (b + 1, a),
                Label::Attack => (b, a + 1),
            })
    }

    /// Content hash over ids, labels and syscalls, as a short hex string.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.vocab_ceiling as u64).to_le_bytes());
        for t in &self.traces {
            hasher.update(t.id.as_bytes());
            hasher.update([0, t.label.as_u8()]);
            hasher.update((t.syscalls.len() as u64).to_le_bytes());
            for s in &t.syscalls {
                hasher.update(s.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses whitespace-separated syscall numbers. `path` is only used for error
/// messages.
pub fn parse_trace_text(text: &str, path: &Path, label: Label) -> Result<Trace> {
    let mut syscalls = Vec::new();
    for (index, token) in text.split_ascii_whitespace().enumerate() {
        let id = token.parse::<u32>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            token: token.to_string(),
            index,
        })?;
        syscalls.push(id);
    }
    if syscalls.is_empty() {
        return Err(Error::EmptyTrace {
            path: path.to_path_buf(),
        });
    }
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Trace {
        id,
        syscalls,
        label,
    })
}

pub fn parse_trace_file(path: &Path, label: Label) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_text(&text, path, label)
}

/// All regular files below `dir`, sorted by path.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            let ft = entry.file_type().map_err(|e| Error::io(&path, e))?;
            if ft.is_dir() {
                stack.push(path);
            } else if ft.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_files(files: &[PathBuf], label: Label, traces: &mut Vec<Trace>) -> Result<()> {
    for f in files {
        traces.push(parse_trace_file(f, label)?);
    }
    Ok(())
}

/// Loads the ADFA-LD directory layout. Benign directories are read before the
/// attack directory; files within each are read in path order.
pub fn load_adfa_dataset(root: &Path) -> Result<Dataset> {
    let dirs = [TRAINING_DIR, VALIDATION_DIR, ATTACK_DIR].map(|name| root.join(name));
    for (dir, name) in dirs.iter().zip([TRAINING_DIR, VALIDATION_DIR, ATTACK_DIR]) {
        if !dir.is_dir() {
            return Err(Error::MissingDirectory(name.to_string()));
        }
    }
    let [train, valid, attack] = dirs;
    load_labeled_dirs(&[train, valid], &[attack])
}

/// Generic layout: every file below a benign dir is label 0, every file below
/// an attack dir label 1.
pub fn load_labeled_dirs(benign_dirs: &[PathBuf], attack_dirs: &[PathBuf]) -> Result<Dataset> {
    let mut traces = Vec::new();
    for (dirs, label) in [(benign_dirs, Label::Benign), (attack_dirs, Label::Attack)] {
        for dir in dirs {
            if !dir.is_dir() {
                return Err(Error::MissingDirectory(dir.display().to_string()));
            }
            load_files(&files_under(dir)?, label, &mut traces)?;
        }
    }
    Ok(Dataset::new(traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_benign: usize,
    pub n_attack: usize,
    pub trace_len_min: usize,
    pub trace_len_max: usize,
    pub vocab_size: usize,
    /// Per-step probability that an attack trace emits from the hot set.
    pub rho: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_benign: 400,
            n_attack: 400,
            trace_len_min: 60,
            trace_len_max: 160,
            vocab_size: 200,
            rho: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trace_len_min == 0 || self.trace_len_min > self.trace_len_max {
            return Err(Error::InvalidConfig(format!(
                "trace length range [{}, {}] is empty",
                self.trace_len_min, self.trace_len_max
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho {} outside [0, 1]",
                self.rho
            )));
        }
        // (s+1) and (s+7) must be distinct states and leave room for the rest.
        if self.vocab_size < 8 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} is below the minimum of 8",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn hot_set_size(&self) -> usize {
        self.vocab_size.div_ceil(20)
    }
}

struct MarkovChain {
    vocab: u32,
}

impl MarkovChain {
    /// 40% to s+1, 40% to s+7, 20% uniform over the remaining states.
    fn step(&self, state: u32, rng: &mut rng::Rng) -> u32 {
        let v = self.vocab;
        let a = (state + 1) % v;
        let b = (state + 7) % v;
        let u: f64 = rng.gen();
        if u < 0.4 {
            a
        } else if u < 0.8 {
            b
        } else {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let mut x = rng.gen_range(0..v - 2);
            if x >= lo {
                x += 1;
            }
            if x >= hi {
                x += 1;
            }
            x
        }
    }
}

/// Seeded Markov-chain trace generator. Attack traces follow the same chain
/// but with probability `rho` per step emit from a seed-chosen hot set.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let vocab = cfg.vocab_size as u32;
    let chain = MarkovChain { vocab };
    let mut rng = rng_from(cfg.seed, &[rng::TAG_SYNTH]);
    let hot: Vec<u32> = rand::seq::index::sample(&mut rng, cfg.vocab_size, cfg.hot_set_size())
        .into_iter()
        .map(|i| i as u32)
        .collect();

    let mut traces = Vec::with_capacity(cfg.n_benign + cfg.n_attack);
    let plan = [
        (Label::Benign, cfg.n_benign, "benign"),
        (Label::Attack, cfg.n_attack, "attack"),
    ];
    for (label, count, prefix) in plan {
        for i in 0..count {
            let len = rng.gen_range(cfg.trace_len_min..=cfg.trace_len_max);
            let mut syscalls = Vec::with_capacity(len);
            let mut state = rng.gen_range(0..vocab);
            for t in 0..len {
                if t > 0 {
                    state = chain.step(state, &mut rng);
                }
                if label.is_attack() && rng.gen::<f64>() < cfg.rho {
                    state = hot[rng.gen_range(0..hot.len())];
                }
                syscalls.push(state);
            }
            traces.push(Trace {
                id: format!("{prefix}_{i:05}.txt"),
                syscalls,
                label,
            });
        }
    }
    Ok(Dataset {
        traces,
        vocab_ceiling: cfg.vocab_size,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: SynthConfig,
    /// Relative file path to label (0 benign, 1 attack).
    pub files: BTreeMap<String, u8>,
}

/// Writes a dataset in the ADFA-LD directory layout plus `manifest.json`.
pub fn write_dataset(ds: &Dataset, cfg: &SynthConfig, root: &Path) -> Result<()> {
    let attack_family = Path::new(ATTACK_DIR).join("Synthetic_1");
    for dir in [
        Path::new(TRAINING_DIR),
        Path::new(VALIDATION_DIR),
        &attack_family,
    ] {
        let full = root.join(dir);
        fs::create_dir_all(&full).map_err(|e| Error::io(&full, e))?;
    }
    let mut files = BTreeMap::new();
    for t in &ds.traces {
        let rel = match t.label {
            Label::Benign => Path::new(TRAINING_DIR).join(&t.id),
            Label::Attack => attack_family.join(&t.id),
        };
        let full = root.join(&rel);
        fs::write(&full, t.to_text() + "\n").map_err(|e| Error::io(&full, e))?;
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(key, t.label.as_u8());
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config: cfg.clone(),
        files,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn indices_by_label(ds: &Dataset, indices: impl IntoIterator<Item = usize>) -> [Vec<usize>; 2] {
    let mut by_label = [Vec::new(), Vec::new()];
    for i in indices {
        by_label[ds.label_of(i).as_u8() as usize].push(i);
    }
    by_label
}

/// Stratified trace-level split. Each class contributes
/// `floor(test_fraction * n_class)` traces to the test side. Both outputs are
/// sorted ascending.
pub fn split_train_test(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let by_label = indices_by_label(ds, 0..ds.len());
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_label.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::TooFewSamples(format!(
                "class {class} has {} traces, need at least 2",
                members.len()
            )));
        }
        let mut rng = rng_from(seed, &[rng::TAG_SPLIT, class as u64]);
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).floor() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Undersamples the majority class to the minority count. Output is sorted.
pub fn balance_classes(indices: &[usize], ds: &Dataset, seed: u64) -> Result<Vec<usize>> {
    let [mut benign, mut attack] = indices_by_label(ds, indices.iter().copied());
    if benign.is_empty() || attack.is_empty() {
        return Err(Error::TooFewSamples(format!(
            "balancing needs both classes, got {} benign and {} attack",
            benign.len(),
            attack.len()
        )));
    }
    let keep = benign.len().min(attack.len());
    let mut rng = rng_from(seed, &[rng::TAG_BALANCE]);
    for members in [&mut benign, &mut attack] {
        if members.len() > keep {
            members.shuffle(&mut rng);
            members.truncate(keep);
        }
    }
    let mut out = benign;
    out.extend(attack);
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub trace_indices: Vec<usize>,
    pub sample_count: usize,
}

impl ClientShard {
    fn new(client_id: usize, mut trace_indices: Vec<usize>) -> Self {
        trace_indices.sort_unstable();
        let sample_count = trace_indices.len();
        ClientShard {
            client_id,
            trace_indices,
            sample_count,
        }
    }
}

/// Target share of client `k` under size skew: a blend of the uniform share
/// and a linearly increasing share `2(k+1) / (n(n+1))`.
pub fn skew_share(k: usize, n_clients: usize, skew: f64) -> f64 {
    let n = n_clients as f64;
    (1.0 - skew) / n + skew * 2.0 * (k as f64 + 1.0) / (n * (n + 1.0))
}

/// Largest-remainder apportionment of `total` items by `shares`. Ties in the
/// remainder go to the lower index.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    // The small epsilon keeps exact integers such as 30.000000000000004 or
    // 29.999999999999996 from losing a unit to rounding noise.
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

pub fn partition_clients(
    train_indices: &[usize],
    n_clients: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if n_clients == 0 {
        return Err(Error::InvalidConfig("n_clients must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::InvalidConfig(format!("skew {skew} outside [0, 1]")));
    }
    if n_clients > train_indices.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_clients} clients for {} training traces",
            train_indices.len()
        )));
    }
    let mut pool = train_indices.to_vec();
    pool.shuffle(&mut rng_from(seed, &[rng::TAG_PARTITION]));

    let shards = if skew == 0.0 {
        let mut buckets = vec![Vec::new(); n_clients];
        for (pos, idx) in pool.into_iter().enumerate() {
            buckets[pos % n_clients].push(idx);
        }
        buckets
    } else {
        let shares: Vec<f64> = (0..n_clients)
            .map(|k| skew_share(k, n_clients, skew))
            .collect();
        let sizes = apportion(pool.len(), &shares);
        let mut rest = pool.as_slice();
        sizes
            .into_iter()
            .map(|size| {
                let (head, tail) = rest.split_at(size);
                rest = tail;
                head.to_vec()
            })
            .collect()
    };
    Ok(shards
        .into_iter()
        .enumerate()
        .map(|(k, idx)| ClientShard::new(k, idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn labeled(n_benign: usize, n_attack: usize) -> Dataset {
        let mk = |i: usize, label| Trace {
            id: format!("t{i}"),
            syscalls: vec![i as u32 % 5 + 1; 3],
            label,
        };
        let traces = (0..n_benign)
            .map(|i| mk(i, Label::Benign))
            .chain((0..n_attack).map(|i| mk(n_benign + i, Label::Attack)))
            .collect();
        Dataset::new(traces)
    }

    #[test]
    fn parses_tokens_in_order() {
        let t = parse_trace_text("6 6 63 6 42", Path::new("a/UTD-1.txt"), Label::Benign).unwrap();
        assert_eq!(t.syscalls, vec![6, 6, 63, 6, 42]);
        assert_eq!(t.id, "UTD-1.txt");
        let t = parse_trace_text(" 1\n\t2  3\r\n", Path::new("x"), Label::Attack).unwrap();
        assert_eq!(t.syscalls, vec![1, 2, 3]);
    }

    #[test]
    fn empty_trace_is_rejected() {
        assert!(matches!(
            parse_trace_text("", Path::new("e"), Label::Benign),
            Err(Error::EmptyTrace { .. })
        ));
        assert!(matches!(
            parse_trace_text(" \n ", Path::new("e"), Label::Benign),
            Err(Error::EmptyTrace { .. })
        ));
    }

    #[test]
    fn bad_token_reports_index() {
        match parse_trace_text("6 xx 9", Path::new("f"), Label::Benign) {
            Err(Error::Parse { token, index, .. }) => {
                assert_eq!(token, "xx");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_trace_text("-3", Path::new("f"), Label::Benign).is_err());
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let cfg = SynthConfig {
            n_benign: 100,
            n_attack: 50,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count_labels(&(0..a.len()).collect::<Vec<_>>()), (100, 50));
        for t in &a.traces {
            assert!(t.len() >= cfg.trace_len_min && t.len() <= cfg.trace_len_max);
            assert!(t.syscalls.iter().all(|&s| (s as usize) < cfg.vocab_size));
        }
    }

    #[test]
    fn rho_zero_attacks_follow_benign_chain() {
        let cfg = SynthConfig {
            n_benign: 0,
            n_attack: 200,
            rho: 0.0,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.traces.iter().all(|t| t.label == Label::Attack));
        // With no hot-set emissions, roughly 80% of transitions are s+1 or s+7.
        let (mut chain, mut total) = (0usize, 0usize);
        for t in &ds.traces {
            for w in t.syscalls.windows(2) {
                let v = cfg.vocab_size as u32;
                total += 1;
                if w[1] == (w[0] + 1) % v || w[1] == (w[0] + 7) % v {
                    chain += 1;
                }
            }
        }
        let frac = chain as f64 / total as f64;
        assert!((frac - 0.8).abs() < 0.02, "chain fraction {frac}");
    }

    #[test]
    fn attack_traces_concentrate_on_hot_set() {
        let cfg = SynthConfig {
            n_benign: 100,
            n_attack: 100,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let mut counts = vec![[0usize; 2]; cfg.vocab_size];
        for t in &ds.traces {
            for &s in &t.syscalls {
                counts[s as usize][t.label.as_u8() as usize] += 1;
            }
        }
        let enriched = counts.iter().filter(|c| c[1] > 5 * c[0].max(1)).count();
        assert_eq!(enriched, cfg.hot_set_size());
    }

    #[test]
    fn invalid_synth_config() {
        let cfg = SynthConfig {
            trace_len_min: 10,
            trace_len_max: 5,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = SynthConfig {
            rho: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn stratified_split_counts() {
        let ds = labeled(80, 20);
        let (train, test) = split_train_test(&ds, 0.25, 3).unwrap();
        assert_eq!(ds.count_labels(&test), (20, 5));
        assert_eq!(ds.count_labels(&train), (60, 15));
        assert_eq!(split_train_test(&ds, 0.25, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_needs_two_per_class() {
        let ds = labeled(10, 1);
        assert!(matches!(
            split_train_test(&ds, 0.3, 0),
            Err(Error::TooFewSamples(_))
        ));
        assert!(matches!(
            split_train_test(&labeled(10, 4), 1.0, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn balance_undersamples_majority() {
        let ds = labeled(80, 20);
        let all: Vec<usize> = (0..100).collect();
        let bal = balance_classes(&all, &ds, 9).unwrap();
        assert_eq!(ds.count_labels(&bal), (20, 20));
        assert!((80..100).all(|i| bal.contains(&i)));

        let ds = labeled(30, 30);
        let all: Vec<usize> = (0..60).collect();
        assert_eq!(balance_classes(&all, &ds, 1).unwrap(), all);

        let ds = labeled(10, 0);
        let all: Vec<usize> = (0..10).collect();
        assert!(matches!(
            balance_classes(&all, &ds, 1),
            Err(Error::TooFewSamples(_))
        ));
    }

    #[test]
    fn iid_partition_sizes() {
        let idx: Vec<usize> = (0..100).collect();
        let shards = partition_clients(&idx, 4, 0.0, 5).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.sample_count).collect();
        assert_eq!(sizes, vec![25, 25, 25, 25]);
        let shards = partition_clients(&idx[..10], 3, 0.0, 5).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.sample_count).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
    }

    #[test]
    fn skewed_partition_sizes() {
        // shares 2(k+1)/20 -> 0.1, 0.2, 0.3, 0.4 of 100
        let idx: Vec<usize> = (0..100).collect();
        let shards = partition_clients(&idx, 4, 1.0, 5).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.sample_count).collect();
        assert_eq!(sizes, vec![10, 20, 30, 40]);
    }

    #[test]
    fn largest_remainder_tie_goes_low() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.5, 0.25, 0.25]), vec![3, 2, 2]);
    }

    #[test]
    fn partition_errors_and_identity() {
        let idx: Vec<usize> = (0..5).collect();
        assert!(matches!(
            partition_clients(&idx, 6, 0.0, 0),
            Err(Error::InvalidConfig(_))
        ));
        let shards = partition_clients(&idx, 1, 0.7, 0).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].trace_indices, idx);
    }

    proptest! {
        #[test]
        fn parse_then_serialize_is_identity(ids in proptest::collection::vec(0u32..100_000, 1..50)) {
            let text = ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            let t = parse_trace_text(&text, Path::new("p"), Label::Benign).unwrap();
            prop_assert_eq!(t.to_text(), text);
        }

        #[test]
        fn partition_is_disjoint_and_exhaustive(
            n in 1usize..300,
            clients in 1usize..8,
            skew in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            prop_assume!(clients <= n);
            let idx: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let shards = partition_clients(&idx, clients, skew, seed).unwrap();
            prop_assert_eq!(shards.len(), clients);
            let total: usize = shards.iter().map(|s| s.sample_count).sum();
            prop_assert_eq!(total, n);
            let mut seen = HashSet::new();
            for s in &shards {
                prop_assert_eq!(s.sample_count, s.trace_indices.len());
                for &i in &s.trace_indices {
                    prop_assert!(seen.insert(i));
                }
            }
            prop_assert_eq!(seen, idx.into_iter().collect::<HashSet<_>>());
        }

        #[test]
        fn split_balance_never_cross(n0 in 2usize..60, n1 in 2usize..60, seed in any::<u64>()) {
            let ds = labeled(n0, n1);
            let (train, test) = split_train_test(&ds, 0.3, seed).unwrap();
            let test_set: HashSet<usize> = test.iter().copied().collect();
            prop_assert!(train.iter().all(|i| !test_set.contains(i)));
            prop_assert_eq!(train.len() + test.len(), n0 + n1);
            let bal = balance_classes(&train, &ds, seed).unwrap();
            let (b, a) = ds.count_labels(&bal);
            prop_assert_eq!(b, a);
            prop_assert!(bal.iter().all(|i| !test_set.contains(i)));
            prop_assert_eq!(bal.iter().collect::<HashSet<_>>().len(), bal.len());
        }
    }
}
