//! Feed-forward binary classifier: ReLU hidden layers, sigmoid output,
//! binary cross-entropy with L2 weight decay, mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{self, rng_from};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub dims: Vec<usize>,
    /// `weights[l]` is `dims[l+1] x dims[l]`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "l2 {} must be non-negative",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Architecture `[d_in, hidden..., 1]`.
pub fn layer_dims(d_in: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![d_in];
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "an MLP needs at least an input and an output layer".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer widths must be positive: {dims:?}"
        )));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::InvalidConfig(format!(
            "output layer must have width 1: {dims:?}"
        )));
    }
    Ok(())
}

/// Xavier-uniform weights, zero biases.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpParams> {
    check_dims(dims)?;
    let mut rng = rng_from(seed, &[rng::TAG_INIT]);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
        );
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpParams {
        dims: dims.to_vec(),
        weights,
        biases,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            dims: self.dims.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Every parameter, weights before biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn n_params(&self) -> usize {
        self.values().count()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.dims == other.dims
            && self
                .weights
                .iter()
                .map(Vec::len)
                .eq(other.weights.iter().map(Vec::len))
            && self
                .biases
                .iter()
                .map(Vec::len)
                .eq(other.biases.iter().map(Vec::len))
    }

    /// Shape and finiteness check; the error names the first offending array.
    pub fn validate(&self) -> std::result::Result<(), String> {
        check_dims(&self.dims).map_err(|e| format!("dims: {e}"))?;
        let layers = self.dims.len() - 1;
        if self.weights.len() != layers {
            return Err("weights layer count".into());
        }
        if self.biases.len() != layers {
            return Err("biases layer count".into());
        }
        for l in 0..layers {
            if self.weights[l].len() != self.dims[l] * self.dims[l + 1] {
                return Err(format!("weights[{l}] shape"));
            }
            if self.biases[l].len() != self.dims[l + 1] {
                return Err(format!("biases[{l}] shape"));
            }
        }
        if !self.values().all(|x| x.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }

    /// Pre-activations and activations of every layer for one input.
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.n_layers());
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    self.biases[l][j] + row.iter().zip(a).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            let last = l + 1 == self.n_layers();
            let next = if last {
                z.iter().map(|&v| sigmoid(v)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            zs.push(z);
            acts.push(next);
        }
        (zs, acts)
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let (zs, _) = self.forward_trace(x);
        Ok(zs.last().unwrap()[0])
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: len,
            });
        }
        Ok(())
    }
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<f64> {
    params.check_input(x.len())?;
    let (_, acts) = params.forward_trace(x);
    Ok(acts.last().unwrap()[0])
}

pub fn predict_proba(params: &MlpParams, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    params.check_input(matrix.cols)?;
    matrix.iter_rows().map(|row| forward(params, row)).collect()
}

/// Mean clamped BCE plus `(l2/2) * |W|^2` over weights (biases are not
/// decayed), with gradients from backpropagation.
pub fn loss_and_grad(
    params: &MlpParams,
    batch_x: &[f64],
    batch_y: &[f64],
    l2: f64,
) -> Result<(f64, MlpParams)> {
    let d = params.input_dim();
    if batch_x.len() != batch_y.len() * d {
        return Err(Error::DimensionMismatch {
            expected: batch_y.len() * d,
            found: batch_x.len(),
        });
    }
    let n = batch_y.len();
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    if n > 0 {
        let inv_n = 1.0 / n as f64;
        for (x, &y) in batch_x.chunks_exact(d).zip(batch_y) {
            let (zs, acts) = params.forward_trace(x);
            let p = acts.last().unwrap()[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();

            // dL/dz at the sigmoid output
            let mut delta = vec![(acts.last().unwrap()[0] - y) * inv_n];
            for l in (0..params.n_layers()).rev() {
                let fan_in = params.dims[l];
                let a_prev = &acts[l];
                let gw = &mut grad.weights[l];
                for (j, &dj) in delta.iter().enumerate() {
                    grad.biases[l][j] += dj;
                    for (g, &a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(a_prev) {
                        *g += dj * a;
                    }
                }
                if l > 0 {
                    let w = &params.weights[l];
                    let z_prev = &zs[l - 1];
                    let mut prev = vec![0.0; fan_in];
                    for (j, &dj) in delta.iter().enumerate() {
                        for (p, &wji) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                            *p += wji * dj;
                        }
                    }
                    for (p, &z) in prev.iter_mut().zip(z_prev) {
                        if z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        loss *= inv_n;
    }
    if l2 > 0.0 {
        let mut sq = 0.0;
        for (gw, w) in grad.weights.iter_mut().zip(&params.weights) {
            for (g, &w) in gw.iter_mut().zip(w) {
                *g += l2 * w;
                sq += w * w;
            }
        }
        loss += 0.5 * l2 * sq;
    }
    Ok((loss, grad))
}

/// Identifies an independent PRNG stream for per-epoch shuffles. Epoch `e`
/// of stream `(seed, stream)` always shuffles the same way, regardless of
/// how the epochs are split across training calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochStream {
    pub seed: u64,
    pub stream: u64,
}

impl EpochStream {
    pub fn central(seed: u64) -> Self {
        EpochStream { seed, stream: 0 }
    }

    pub fn epoch_rng(&self, epoch: usize) -> rng::Rng {
        rng_from(self.seed, &[rng::TAG_EPOCH, self.stream, epoch as u64])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Runs epochs `first_epoch .. first_epoch + n_epochs` of mini-batch SGD with
/// momentum. The velocity buffer starts at zero at the beginning of every
/// epoch, so the result depends only on the epoch indices, not on how the
/// epochs are grouped into calls.
pub fn train_epochs(
    params: &MlpParams,
    matrix: &FeatureMatrix,
    cfg: &TrainConfig,
    stream: EpochStream,
    first_epoch: usize,
    n_epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_input(matrix.cols)?;
    let labels = matrix.label_values();
    let d = matrix.cols;
    let mut params = params.clone();
    let mut epoch_losses = Vec::with_capacity(n_epochs);
    let mut order: Vec<usize> = (0..matrix.rows).collect();
    let mut bx = Vec::with_capacity(cfg.batch_size * d);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for epoch in first_epoch..first_epoch + n_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream.epoch_rng(epoch));
        let mut velocity = params.zeros_like();
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(matrix.row(i));
                by.push(labels[i]);
            }
            let (loss, grad) = loss_and_grad(&params, &bx, &by, cfg.l2)?;
            total += loss * batch.len() as f64;
            for ((v, g), p) in velocity
                .values_mut()
                .zip(grad.values())
                .zip(params.values_mut())
            {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
        }
        epoch_losses.push(if matrix.rows > 0 {
            total / matrix.rows as f64
        } else {
            0.0
        });
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}

/// Centralized training: epochs `0..cfg.epochs` on stream `(cfg.seed, 0)`.
pub fn train(
    params: &MlpParams,
    matrix: &FeatureMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_epochs(
        params,
        matrix,
        cfg,
        EpochStream::central(cfg.seed),
        0,
        cfg.epochs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    fn matrix(rows: &[[f64; 2]], labels: &[u8]) -> FeatureMatrix {
        let mut m = FeatureMatrix::empty(2);
        for (i, (r, &l)) in rows.iter().zip(labels).enumerate() {
            m.push_row(r, Label::from_u8(l).unwrap(), i);
        }
        m
    }

    #[test]
    fn init_shapes_and_determinism() {
        let p = init_mlp(&[4, 1], 3).unwrap();
        assert_eq!(p.weights.len(), 1);
        assert_eq!(p.weights[0].len(), 4);
        assert_eq!(p.biases, vec![vec![0.0]]);
        assert_eq!(
            init_mlp(&[5, 8, 1], 9).unwrap(),
            init_mlp(&[5, 8, 1], 9).unwrap()
        );
        assert_ne!(
            init_mlp(&[5, 8, 1], 9).unwrap(),
            init_mlp(&[5, 8, 1], 10).unwrap()
        );
        let bound = (6.0f64 / 13.0).sqrt();
        assert!(init_mlp(&[5, 8, 1], 9).unwrap().weights[0]
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(matches!(init_mlp(&[4, 2], 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(init_mlp(&[4], 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn forward_examples() {
        let mut p = init_mlp(&[3, 5, 1], 1).unwrap();
        p.values_mut().for_each(|v| *v = 0.0);
        assert_eq!(forward(&p, &[1.0, -2.0, 3.0]).unwrap(), 0.5);

        let single = MlpParams {
            dims: vec![1, 1],
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        assert_eq!(forward(&single, &[0.0]).unwrap(), 0.5);
        let two = MlpParams {
            weights: vec![vec![2.0]],
            ..single
        };
        assert!((forward(&two, &[1.0]).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert!(matches!(
            forward(&two, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bce_at_half() {
        let p = MlpParams {
            dims: vec![1, 1],
            weights: vec![vec![0.0]],
            biases: vec![vec![0.0]],
        };
        let (loss, _) = loss_and_grad(&p, &[0.3], &[1.0], 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_is_mean_invariant() {
        let p = init_mlp(&[3, 4, 1], 2).unwrap();
        let x = [0.1, -0.4, 0.9, 1.2, 0.3, -0.7];
        let y = [1.0, 0.0];
        let xx: Vec<f64> = x.iter().chain(&x).copied().collect();
        let yy = [1.0, 0.0, 1.0, 0.0];
        let (l1, g1) = loss_and_grad(&p, &x, &y, 1e-3).unwrap();
        let (l2, g2) = loss_and_grad(&p, &xx, &yy, 1e-3).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = init_mlp(&[2, 3, 1], 0).unwrap();
        let m = matrix(&[[0.0, 1.0], [1.0, 0.0]], &[0, 1]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&p, &m, &cfg).unwrap();
        assert_eq!(out.params, p);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn epochs_split_across_calls_match() {
        let p = init_mlp(&[2, 6, 1], 4).unwrap();
        let rows: Vec<[f64; 2]> = (0..40)
            .map(|i| [i as f64 / 40.0, (i % 7) as f64 / 7.0])
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let m = matrix(&rows, &labels);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let whole = train(&p, &m, &cfg).unwrap();
        let s = EpochStream::central(11);
        let a = train_epochs(&p, &m, &cfg, s, 0, 2).unwrap();
        let b = train_epochs(&a.params, &m, &cfg, s, 2, 4).unwrap();
        assert_eq!(whole.params, b.params);
        assert_eq!(train(&p, &m, &cfg).unwrap().params, whole.params);
    }

    #[test]
    fn probabilities_follow_logit() {
        let p = init_mlp(&[2, 4, 1], 8).unwrap();
        let m = matrix(
            &[[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5], [2.0, -1.0]],
            &[0, 0, 1, 1],
        );
        let probs = predict_proba(&p, &m).unwrap();
        assert_eq!(probs.len(), 4);
        let logits: Vec<f64> = m.iter_rows().map(|r| p.logit(r).unwrap()).collect();
        for i in 0..4 {
            for j in 0..4 {
                if logits[i] < logits[j] {
                    assert!(probs[i] < probs[j]);
                }
            }
        }
    }

    #[test]
    fn validate_names_bad_array() {
        let mut p = init_mlp(&[3, 2, 1], 0).unwrap();
        p.weights[0].pop();
        assert_eq!(p.validate().unwrap_err(), "weights[0] shape");
    }
}
