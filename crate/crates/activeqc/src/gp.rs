//! Exact Gaussian-process regression over 2-D normalized coordinates.
//!
//! The quality surface is a GP with an isotropic squared-exponential kernel.
//! Fitting factorizes `K + sigma_n^2 I + jitter I` by Cholesky, escalating the
//! jitter from 1e-8 by factors of ten up to 1e-4 before giving up. The model
//! keeps the factor and the solved weight vector, so prediction is a pair of
//! triangular solves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const JITTER_INIT: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("no training data")]
    NoTrainingData,
    #[error("inputs ({inputs}) and targets ({targets}) differ in length")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("kernel matrix stayed ill-conditioned up to jitter {max_jitter}")]
    IllConditioned { max_jitter: f64 },
    #[error("hyperparameter values must be positive")]
    InvalidHyperparams,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("no hyperparameter candidate produced a well-conditioned fit")]
    SelectionFailed,
    #[error("serialized model is malformed: {0}")]
    Malformed(String),
}

/// Kernel and noise hyperparameters plus the prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub prior_mean: f64,
}

impl GpHyperparams {
    /// Benchmark defaults on coordinates normalized to the unit square.
    pub fn benchmark_default(prior_mean: f64) -> Self {
        Self {
            lengthscale: 0.1,
            signal_variance: 0.05,
            noise_variance: 1e-4,
            prior_mean,
        }
    }

    fn validate(&self) -> Result<(), GpError> {
        if self.lengthscale > 0.0
            && self.signal_variance > 0.0
            && self.noise_variance >= 0.0
            && self.prior_mean.is_finite()
        {
            Ok(())
        } else {
            Err(GpError::InvalidHyperparams)
        }
    }
}

/// Squared-exponential kernel `sigma_f^2 exp(-|x1-x2|^2 / (2 l^2))`.
pub fn rbf_kernel(x1: [f64; 2], x2: [f64; 2], hyper: &GpHyperparams) -> f64 {
    let d0 = x1[0] - x2[0];
    let d1 = x1[1] - x2[1];
    let l2 = hyper.lengthscale * hyper.lengthscale;
    hyper.signal_variance * (-(d0 * d0 + d1 * d1) / (2.0 * l2)).exp()
}

/// A fitted GP: training data, the lower Cholesky factor of the regularized
/// kernel matrix (row-major), and the weight vector.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<[f64; 2]>,
    targets: Vec<f64>,
    hyper: GpHyperparams,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

/// Serialized model state; the factorization is rebuilt on load.
#[derive(Debug, Serialize, Deserialize)]
struct GpModelState {
    hyper: GpHyperparams,
    inputs: Vec<[f64; 2]>,
    targets: Vec<f64>,
}

/// In-place Cholesky of a row-major symmetric matrix. Returns false when a
/// pivot is not strictly positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn backward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Fits a GP to the given coordinates and targets.
pub fn gp_fit(
    inputs: &[[f64; 2]],
    targets: &[f64],
    hyper: GpHyperparams,
) -> Result<GpModel, GpError> {
    hyper.validate()?;
    if inputs.is_empty() {
        return Err(GpError::NoTrainingData);
    }
    if inputs.len() != targets.len() {
        return Err(GpError::LengthMismatch {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    let n = inputs.len();
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = rbf_kernel(inputs[i], inputs[j], &hyper);
            base[i * n + j] = k;
            base[j * n + i] = k;
        }
    }

    let mut jitter = JITTER_INIT;
    loop {
        let mut chol = base.clone();
        for i in 0..n {
            chol[i * n + i] += hyper.noise_variance + jitter;
        }
        if cholesky_in_place(&mut chol, n) {
            let mut alpha: Vec<f64> = targets.iter().map(|&t| t - hyper.prior_mean).collect();
            forward_solve(&chol, n, &mut alpha);
            backward_solve(&chol, n, &mut alpha);
            return Ok(GpModel {
                inputs: inputs.to_vec(),
                targets: targets.to_vec(),
                hyper,
                chol,
                alpha,
                jitter,
            });
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX {
            return Err(GpError::IllConditioned {
                max_jitter: JITTER_MAX,
            });
        }
    }
}

impl GpModel {
    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn inputs(&self) -> &[[f64; 2]] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor, row-major n x n.
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    /// Predictive mean and variance at one query point. Variance is clamped
    /// at zero.
    pub fn predict_one(&self, query: [f64; 2]) -> (f64, f64) {
        let n = self.inputs.len();
        let mut kstar: Vec<f64> = self
            .inputs
            .iter()
            .map(|&x| rbf_kernel(x, query, &self.hyper))
            .collect();
        let mean = self.hyper.prior_mean
            + kstar
                .iter()
                .zip(&self.alpha)
                .map(|(k, a)| k * a)
                .sum::<f64>();
        forward_solve(&self.chol, n, &mut kstar);
        let explained: f64 = kstar.iter().map(|v| v * v).sum();
        let var = (self.hyper.signal_variance - explained).max(0.0);
        (mean, var)
    }

    /// Predictive means and variances at many query points.
    pub fn predict(&self, queries: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        for &q in queries {
            let (m, v) = self.predict_one(q);
            means.push(m);
            vars.push(v);
        }
        (means, vars)
    }

    /// Log marginal likelihood of the training targets under the model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len();
        let fit_term: f64 = self
            .targets
            .iter()
            .zip(&self.alpha)
            .map(|(&t, &a)| (t - self.hyper.prior_mean) * a)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit_term - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// JSON state (hyperparameters, inputs, targets) for step-by-step replay.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&GpModelState {
            hyper: self.hyper,
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        })
        .expect("gp state serializes")
    }

    /// Rebuilds a model from [`GpModel::to_json`] output.
    pub fn from_json(json: &str) -> Result<Self, GpError> {
        let state: GpModelState =
            serde_json::from_str(json).map_err(|e| GpError::Malformed(e.to_string()))?;
        gp_fit(&state.inputs, &state.targets, state.hyper)
    }
}

/// Picks the grid candidate with the highest log marginal likelihood, first
/// index winning ties. Candidates that fail to factorize are skipped.
pub fn select_hyperparams(
    inputs: &[[f64; 2]],
    targets: &[f64],
    grid: &[GpHyperparams],
) -> Result<GpHyperparams, GpError> {
    if grid.is_empty() {
        return Err(GpError::EmptyGrid);
    }
    let mut best: Option<(f64, GpHyperparams)> = None;
    for &cand in grid {
        if let Ok(model) = gp_fit(inputs, targets, cand) {
            let lml = model.log_marginal_likelihood();
            if best.map_or(true, |(b, _)| lml > b) {
                best = Some((lml, cand));
            }
        }
    }
    best.map(|(_, h)| h).ok_or(GpError::SelectionFailed)
}

/// Log-spaced 3x3x3 grid around `base` with the given spread factor per axis
/// (values base/f, base, base*f). The prior mean is shared.
pub fn hyperparam_grid(base: GpHyperparams, factor: f64) -> Vec<GpHyperparams> {
    let scales = [1.0 / factor, 1.0, factor];
    let mut grid = Vec::with_capacity(27);
    for &sl in &scales {
        for &sf in &scales {
            for &sn in &scales {
                grid.push(GpHyperparams {
                    lengthscale: base.lengthscale * sl,
                    signal_variance: base.signal_variance * sf,
                    noise_variance: base.noise_variance * sn,
                    prior_mean: base.prior_mean,
                });
            }
        }
    }
    grid
}
