//! Principal component analysis over the sample covariance, diagonalized with
//! cyclic Jacobi rotations.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_TARGET: f64 = 0.95;
pub const MAX_COMPONENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSelection {
    /// Smallest k whose cumulative explained-variance ratio reaches the target,
    /// capped at `min(d, MAX_COMPONENTS)`.
    VarianceTarget(f64),
    Fixed(usize),
}

impl Default for ComponentSelection {
    fn default() -> Self {
        ComponentSelection::VarianceTarget(DEFAULT_VARIANCE_TARGET)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub n_features: usize,
    pub n_components: usize,
    pub mean: Vec<f64>,
    /// `n_components x n_features`, row-major, orthonormal rows.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Sum of all covariance eigenvalues, kept or not.
    pub total_variance: f64,
    /// Set when the training rows had no variance; the model then has k = 0.
    pub degenerate: bool,
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Row i is the unit eigenvector for `values[i]`.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of the symmetric `n x n` matrix `a`
/// (row-major). Results are sorted by descending eigenvalue.
pub fn jacobi_eigen(a: &[f64], n: usize) -> SymmetricEigen {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = m.iter().map(|x| x * x).sum();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * m[p * n + q] * m[p * n + q])
            .sum();
        if off == 0.0 || off <= frob * 1e-32 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    SymmetricEigen {
        values: order.iter().map(|&i| m[i * n + i]).collect(),
        vectors: order
            .iter()
            .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
            .collect(),
        sweeps,
    }
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Column means and the `d x d` sample covariance (divisor n - 1).
pub fn covariance(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, x) in mean.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = vec![0.0; cols * cols];
    let mut centered = vec![0.0; cols];
    for r in 0..rows {
        for (c, (x, m)) in centered
            .iter_mut()
            .zip(data[r * cols..(r + 1) * cols].iter().zip(&mean))
        {
            *c = x - m;
        }
        for i in 0..cols {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..cols {
                cov[i * cols + j] += ci * centered[j];
            }
        }
    }
    let denom = (rows - 1) as f64;
    for i in 0..cols {
        for j in i..cols {
            let v = cov[i * cols + j] / denom;
            cov[i * cols + j] = v;
            cov[j * cols + i] = v;
        }
    }
    (mean, cov)
}

pub fn fit_pca(
    data: &[f64],
    rows: usize,
    cols: usize,
    selection: ComponentSelection,
) -> Result<PcaModel> {
    if rows < 2 {
        return Err(Error::TooFewSamples(format!(
            "pca needs at least 2 rows, got {rows}"
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            found: data.len(),
        });
    }
    if data.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidConfig("pca input contains NaN".into()));
    }
    let (mean, cov) = covariance(data, rows, cols);
    let eig = jacobi_eigen(&cov, cols);
    let values: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();

    let scale = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    if total <= 1e-20 * scale {
        warn!("pca input has no variance; returning an empty projection");
        return Ok(PcaModel {
            n_features: cols,
            n_components: 0,
            mean,
            components: Vec::new(),
            explained_variance: Vec::new(),
            explained_variance_ratio: Vec::new(),
            total_variance: total,
            degenerate: true,
        });
    }

    let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();
    let k = match selection {
        ComponentSelection::Fixed(k) => {
            if k > cols {
                return Err(Error::InvalidConfig(format!(
                    "requested {k} components from {cols} features"
                )));
            }
            k
        }
        ComponentSelection::VarianceTarget(target) => {
            if !(target > 0.0 && target <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "variance target {target} outside (0, 1]"
                )));
            }
            let cap = cols.min(MAX_COMPONENTS);
            let mut cumulative = 0.0;
            let mut k = cap;
            for (i, r) in ratios.iter().enumerate().take(cap) {
                cumulative += r;
                if cumulative >= target - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };

    let mut components = Vec::with_capacity(k * cols);
    for vec in eig.vectors.into_iter().take(k) {
        let mut vec = vec;
        fix_sign(&mut vec);
        components.extend(vec);
    }
    Ok(PcaModel {
        n_features: cols,
        n_components: k,
        mean,
        components,
        explained_variance: values[..k].to_vec(),
        explained_variance_ratio: ratios[..k].to_vec(),
        total_variance: total,
        degenerate: false,
    })
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn transform_row(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.n_components {
            let dot = self
                .component(i)
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(c, (x, m))| c * (x - m))
                .sum();
            out.push(dot);
        }
    }

    /// Projects an `n x d` row-major matrix to `n x k`.
    pub fn transform(&self, data: &[f64], cols: usize) -> Result<Vec<f64>> {
        if cols != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: cols,
            });
        }
        let rows = data.len().checked_div(cols).unwrap_or(0);
        let mut out = Vec::with_capacity(rows * self.n_components);
        let mut buf = Vec::with_capacity(self.n_components);
        for r in 0..rows {
            self.transform_row(&data[r * cols..(r + 1) * cols], &mut buf);
            out.extend_from_slice(&buf);
        }
        Ok(out)
    }

    /// Maps `n x k` coordinates back to `n x d`: `coords * components + mean`.
    pub fn inverse(&self, coords: &[f64], cols: usize) -> Result<Vec<f64>> {
        if cols != self.n_components {
            return Err(Error::DimensionMismatch {
                expected: self.n_components,
                found: cols,
            });
        }
        let d = self.n_features;
        let rows = coords.len().checked_div(cols).unwrap_or(0);
        let mut out = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let mut x = self.mean.clone();
            for (i, &z) in coords[r * cols..(r + 1) * cols].iter().enumerate() {
                for (xj, cj) in x.iter_mut().zip(self.component(i)) {
                    *xj += z * cj;
                }
            }
            out.extend(x);
        }
        Ok(out)
    }

    /// Checks the structural invariants of a fitted (or deserialized) model.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (k, d) = (self.n_components, self.n_features);
        if self.mean.len() != d {
            return Err("pca mean length".into());
        }
        if self.components.len() != k * d {
            return Err("pca components shape".into());
        }
        if self.explained_variance.len() != k || self.explained_variance_ratio.len() != k {
            return Err("pca explained variance length".into());
        }
        if self.explained_variance.windows(2).any(|w| w[1] > w[0]) {
            return Err("pca explained variance order".into());
        }
        if self.explained_variance_ratio.iter().sum::<f64>() > 1.0 + 1e-8 {
            return Err("pca explained variance ratio sum".into());
        }
        if !self
            .components
            .iter()
            .chain(&self.mean)
            .all(|x| x.is_finite())
        {
            return Err("pca non-finite values".into());
        }
        for i in 0..k {
            for j in i..k {
                let dot: f64 = self
                    .component(i)
                    .iter()
                    .zip(self.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(format!("pca components[{i}] orthonormality"));
                }
            }
        }
        Ok(())
    }
}
