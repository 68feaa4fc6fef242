//! Small dense encoder-decoder networks.
//!
//! The base network is a stack of fully connected layers with rectified
//! hidden units and an identity output, with the latent representation read
//! at a fixed interior position. A multitask variant attaches a mirror
//! decoder from the latent back to the input size; the error model flavor
//! maps its output through a softplus so predictions stay nonnegative.

mod train;

pub use train::{
    gradient_check, predict_errors, train_error_model, train_model, TrainConfig,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, stream};

/// Tag separating the mirror-decoder init stream from the base stream so the
/// base weights do not depend on whether a decoder is attached.
const RECON_SEED_TAG: u64 = 0x7265636F;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network needs at least 3 layer sizes, got {0}")]
    TooFewLayers(usize),
    #[error("latent index {idx} is not interior to {layers} layer sizes")]
    LatentNotInterior { idx: usize, layers: usize },
    #[error("layer sizes must be positive")]
    ZeroWidth,
    #[error("input length {got} does not match network input {expected}")]
    InputShape { got: usize, expected: usize },
    #[error("target length {got} does not match network output {expected}")]
    TargetShape { got: usize, expected: usize },
    #[error("reconstruction targets required when the multitask weight is positive")]
    MissingReconTargets,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("training config must have positive epochs, batch size and learning rate")]
    BadConfig,
    #[error("empty training set")]
    EmptyDataset,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed parameter file: {0}")]
    Malformed(String),
}

/// Layer widths (input through output) and the latent position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    latent_index: usize,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, latent_index: usize) -> Result<Self, NnError> {
        if layer_sizes.len() < 3 {
            return Err(NnError::TooFewLayers(layer_sizes.len()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NnError::ZeroWidth);
        }
        if latent_index == 0 || latent_index >= layer_sizes.len() - 1 {
            return Err(NnError::LatentNotInterior {
                idx: latent_index,
                layers: layer_sizes.len(),
            });
        }
        Ok(Self {
            layer_sizes,
            latent_index,
        })
    }

    /// Forward structure-property network: patch to loop.
    pub fn im2spec(patch_dim: usize, loop_len: usize) -> Self {
        Self::new(vec![patch_dim, 128, 64, 16, 64, 128, loop_len], 3).unwrap()
    }

    /// Inverse network: loop to the reduced central patch.
    pub fn spec2im(loop_len: usize, patch_out_dim: usize) -> Self {
        Self::new(vec![loop_len, 128, 64, 16, 64, 32, patch_out_dim], 3).unwrap()
    }

    /// Surrogate error regressor over latent vectors.
    pub fn error_model(latent_dim: usize) -> Self {
        Self::new(vec![latent_dim, 32, 1], 1).unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn latent_index(&self) -> usize {
        self.latent_index
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn latent_dim(&self) -> usize {
        self.layer_sizes[self.latent_index]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Weights `(out, in)` and bias `(out,)` of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All parameters of a network, including the optional mirror decoder and
/// the output map flavor.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: NetSpec,
    pub layers: Vec<DenseLayer>,
    pub recon_layers: Option<Vec<DenseLayer>>,
    pub softplus_output: bool,
    pub rng_seed: u64,
}

fn glorot_layers(sizes: &[usize], seed: u64) -> Vec<DenseLayer> {
    let mut rng = stream(seed, &[]);
    sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            });
            DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect()
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> ModelParams {
    ModelParams {
        layers: glorot_layers(spec.layer_sizes(), seed),
        spec: spec.clone(),
        recon_layers: None,
        softplus_output: false,
        rng_seed: seed,
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Activations of one forward pass: `acts[k]` is the output of layer `k`
/// (`acts[0]` is the input batch); `recon_acts` mirrors this for the
/// reconstruction branch when present.
pub struct ForwardPass {
    pub acts: Vec<Array2<f64>>,
    pub recon_acts: Option<Vec<Array2<f64>>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }

    pub fn latent(&self, spec: &NetSpec) -> &Array2<f64> {
        &self.acts[spec.latent_index()]
    }

    pub fn recon_output(&self) -> Option<&Array2<f64>> {
        self.recon_acts.as_ref().map(|r| r.last().unwrap())
    }
}

pub(crate) fn stack_forward_internal(
    layers: &[DenseLayer],
    input: &Array2<f64>,
    softplus_output: bool,
) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.clone());
    for (i, layer) in layers.iter().enumerate() {
        let mut z = acts[i].dot(&layer.weights.t());
        z += &layer.bias;
        if i + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
        } else if softplus_output {
            z.mapv_inplace(softplus);
        }
        acts.push(z);
    }
    acts
}

impl ModelParams {
    /// Attaches a mirror decoder `latent -> 64 -> 128 -> input` initialized
    /// from a derived seed; the base weights are untouched.
    pub fn with_recon_decoder(mut self) -> Self {
        let sizes = [
            self.spec.latent_dim(),
            64,
            128,
            self.spec.input_dim(),
        ];
        self.recon_layers = Some(glorot_layers(
            &sizes,
            derive_seed(self.rng_seed, &[RECON_SEED_TAG]),
        ));
        self
    }

    /// Maps the final output through a softplus (error-model flavor).
    pub fn with_softplus_output(mut self) -> Self {
        self.softplus_output = true;
        self
    }

    /// Full forward pass over a batch with rows as samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardPass, NnError> {
        if input.ncols() != self.spec.input_dim() {
            return Err(NnError::InputShape {
                got: input.ncols(),
                expected: self.spec.input_dim(),
            });
        }
        let acts = stack_forward_internal(&self.layers, &input.to_owned(), self.softplus_output);
        let recon_acts = self.recon_layers.as_ref().map(|rl| {
            let latent = acts[self.spec.latent_index()].clone();
            stack_forward_internal(rl, &latent, false)
        });
        Ok(ForwardPass { acts, recon_acts })
    }

    /// Single-sample forward returning the output and the latent vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|_| NnError::InputShape {
                got: input.len(),
                expected: self.spec.input_dim(),
            })?;
        let pass = self.forward_batch(x.view())?;
        Ok((
            pass.output().row(0).to_vec(),
            pass.latent(&self.spec).row(0).to_vec(),
        ))
    }

    /// Outputs only, for evaluation.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let mut pass = self.forward_batch(input)?;
        Ok(pass.acts.pop().unwrap())
    }

    /// Latent vectors only.
    pub fn latents_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let mut pass = self.forward_batch(input)?;
        Ok(pass.acts.swap_remove(self.spec.latent_index()))
    }

    /// Mean squared error per row of a prediction batch against targets.
    pub fn per_sample_mse(pred: &Array2<f64>, targets: ArrayView2<f64>) -> Vec<f64> {
        pred.axis_iter(Axis(0))
            .zip(targets.axis_iter(Axis(0)))
            .map(|(p, t)| {
                let d = &p - &t;
                d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
            })
            .collect()
    }
}

/// JSON shape header accompanying the flat binary parameter file.
#[derive(Debug, Serialize, Deserialize)]
struct ShapeHeader {
    layer_sizes: Vec<usize>,
    latent_index: usize,
    recon_sizes: Option<Vec<usize>>,
    softplus_output: bool,
    rng_seed: u64,
}

fn tensor_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn push_layers(layers: &[DenseLayer], out: &mut Vec<f64>) {
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
}

fn take_layers(sizes: &[usize], data: &mut std::slice::Iter<f64>) -> Option<Vec<DenseLayer>> {
    sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut weights = Vec::with_capacity(fan_out * fan_in);
            for _ in 0..fan_out * fan_in {
                weights.push(*data.next()?);
            }
            let mut bias = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                bias.push(*data.next()?);
            }
            Some(DenseLayer {
                weights: Array2::from_shape_vec((fan_out, fan_in), weights).ok()?,
                bias: Array1::from_vec(bias),
            })
        })
        .collect()
}

/// Writes `<base>.shape.json` and `<base>.f64` (little-endian doubles, base
/// layers then mirror-decoder layers, each as weights row-major then bias).
pub fn save_params(params: &ModelParams, base: &std::path::Path) -> Result<(), NnError> {
    let recon_sizes = params.recon_layers.as_ref().map(|rl| {
        let mut sizes = vec![rl[0].weights.ncols()];
        sizes.extend(rl.iter().map(|l| l.weights.nrows()));
        sizes
    });
    let header = ShapeHeader {
        layer_sizes: params.spec.layer_sizes().to_vec(),
        latent_index: params.spec.latent_index(),
        recon_sizes,
        softplus_output: params.softplus_output,
        rng_seed: params.rng_seed,
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(base.with_extension("shape.json"), json)?;

    let mut flat = Vec::new();
    push_layers(&params.layers, &mut flat);
    if let Some(rl) = &params.recon_layers {
        push_layers(rl, &mut flat);
    }
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(base.with_extension("f64"), bytes)?;
    Ok(())
}

/// Reads parameters written by [`save_params`].
pub fn load_params(base: &std::path::Path) -> Result<ModelParams, NnError> {
    let json = std::fs::read_to_string(base.with_extension("shape.json"))?;
    let header: ShapeHeader =
        serde_json::from_str(&json).map_err(|e| NnError::Malformed(e.to_string()))?;
    let bytes = std::fs::read(base.with_extension("f64"))?;
    if bytes.len() % 8 != 0 {
        return Err(NnError::Malformed("binary length not a multiple of 8".into()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let expected = tensor_count(&header.layer_sizes)
        + header.recon_sizes.as_ref().map_or(0, |s| tensor_count(s));
    if data.len() != expected {
        return Err(NnError::Malformed(format!(
            "expected {expected} values, found {}",
            data.len()
        )));
    }
    let spec = NetSpec::new(header.layer_sizes, header.latent_index)?;
    let mut iter = data.iter();
    let layers = take_layers(spec.layer_sizes(), &mut iter)
        .ok_or_else(|| NnError::Malformed("truncated base layers".into()))?;
    let recon_layers = match &header.recon_sizes {
        Some(sizes) => Some(
            take_layers(sizes, &mut iter)
                .ok_or_else(|| NnError::Malformed("truncated decoder layers".into()))?,
        ),
        None => None,
    };
    Ok(ModelParams {
        spec,
        layers,
        recon_layers,
        softplus_output: header.softplus_output,
        rng_seed: header.rng_seed,
    })
}
