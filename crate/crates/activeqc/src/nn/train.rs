//! Mini-batch training with Adam moments, the analytic backward pass, the
//! finite-difference gradient check and the surrogate error model.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{init_params, DenseLayer, ModelParams, NetSpec, NnError};
use crate::rng::stream;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimization settings. `multitask_weight` scales the reconstruction loss
/// of the mirror decoder; zero disables that branch entirely.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub multitask_weight: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            multitask_weight: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.multitask_weight < 0.0
        {
            return Err(NnError::BadConfig);
        }
        Ok(())
    }
}

/// Per-layer weight and bias gradients.
struct StackGrads {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
}

impl StackGrads {
    fn zeros_like(layers: &[DenseLayer]) -> Self {
        Self {
            w: layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            b: layers.iter().map(|l| Array1::zeros(l.bias.dim())).collect(),
        }
    }
}

struct Grads {
    base: StackGrads,
    recon: Option<StackGrads>,
}

fn relu_mask_mul(d: &mut Array2<f64>, act: &Array2<f64>) {
    ndarray::Zip::from(d).and(act).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Backprops one dense stack given the gradient at its output. Returns the
/// gradient at the stack input. `acts[k]` is the output of layer `k`.
fn stack_backward(
    layers: &[DenseLayer],
    acts: &[Array2<f64>],
    mut d_out: Array2<f64>,
    grads: &mut StackGrads,
    extra_at: Option<(usize, &Array2<f64>)>,
) -> Array2<f64> {
    let n = layers.len();
    for i in (0..n).rev() {
        if let Some((idx, extra)) = extra_at {
            if i + 1 == idx {
                d_out += extra;
            }
        }
        // hidden layers carry the rectifier mask
        if i < n - 1 {
            relu_mask_mul(&mut d_out, &acts[i + 1]);
        }
        grads.w[i] = d_out.t().dot(&acts[i]);
        grads.b[i] = d_out.sum_axis(Axis(0));
        d_out = d_out.dot(&layers[i].weights);
    }
    d_out
}

/// Forward + loss + analytic gradients on one batch. Returns the scalar loss
/// (prediction MSE plus the weighted reconstruction MSE).
fn batch_loss_and_grads(
    params: &ModelParams,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    recon_targets: Option<&Array2<f64>>,
    lambda: f64,
    grads: &mut Grads,
) -> f64 {
    let use_recon = lambda > 0.0 && params.recon_layers.is_some();
    let acts = super::stack_forward_internal(&params.layers, x, params.softplus_output);
    let out = acts.last().unwrap();
    let b = x.nrows() as f64;
    let d_out_dim = out.ncols() as f64;

    let diff = out - targets;
    let main_loss = diff.iter().map(|v| v * v).sum::<f64>() / (b * d_out_dim);
    let mut d_main = diff * (2.0 / (b * d_out_dim));
    if params.softplus_output {
        // d softplus(z)/dz recovered from the stored output s: 1 - exp(-s)
        ndarray::Zip::from(&mut d_main)
            .and(out)
            .for_each(|g, &s| *g *= 1.0 - (-s).exp());
    }

    let mut recon_loss = 0.0;
    let mut d_latent_extra: Option<Array2<f64>> = None;
    if use_recon {
        let rl = params.recon_layers.as_ref().unwrap();
        let rt = recon_targets.expect("validated recon targets");
        let latent = &acts[params.spec.latent_index()];
        let racts = super::stack_forward_internal(rl, latent, false);
        let rout = racts.last().unwrap();
        let rdim = rout.ncols() as f64;
        let rdiff = rout - rt;
        recon_loss = rdiff.iter().map(|v| v * v).sum::<f64>() / (b * rdim);
        let d_rec = rdiff * (2.0 * lambda / (b * rdim));
        let rgrads = grads.recon.as_mut().expect("recon grads allocated");
        d_latent_extra = Some(stack_backward(rl, &racts, d_rec, rgrads, None));
    }

    stack_backward(
        &params.layers,
        &acts,
        d_main,
        &mut grads.base,
        d_latent_extra
            .as_ref()
            .map(|d| (params.spec.latent_index(), d)),
    );
    main_loss + lambda * recon_loss
}

/// Loss only, used by the finite-difference probe.
fn batch_loss(
    params: &ModelParams,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    recon_targets: Option<&Array2<f64>>,
    lambda: f64,
) -> f64 {
    let acts = super::stack_forward_internal(&params.layers, x, params.softplus_output);
    let out = acts.last().unwrap();
    let b = x.nrows() as f64;
    let diff = out - targets;
    let mut loss = diff.iter().map(|v| v * v).sum::<f64>() / (b * out.ncols() as f64);
    if lambda > 0.0 {
        if let (Some(rl), Some(rt)) = (&params.recon_layers, recon_targets) {
            let latent = &acts[params.spec.latent_index()];
            let racts = super::stack_forward_internal(rl, latent, false);
            let rout = racts.last().unwrap();
            let rdiff = rout - rt;
            loss += lambda * rdiff.iter().map(|v| v * v).sum::<f64>() / (b * rout.ncols() as f64);
        }
    }
    loss
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    fn zeros_like(layers: &[DenseLayer]) -> Self {
        Self {
            m_w: layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            v_w: layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            m_b: layers.iter().map(|l| Array1::zeros(l.bias.dim())).collect(),
            v_b: layers.iter().map(|l| Array1::zeros(l.bias.dim())).collect(),
        }
    }

    fn update(&mut self, layers: &mut [DenseLayer], grads: &StackGrads, lr: f64, t: f64) {
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for (i, layer) in layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grads.w[i])
                .and(&mut self.m_w[i])
                .and(&mut self.v_w[i])
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&grads.b[i])
                .and(&mut self.m_b[i])
                .and(&mut self.v_b[i])
                .for_each(|p, &g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                });
        }
    }
}

fn validate_dataset(
    params: &ModelParams,
    inputs: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    recon_targets: Option<&ArrayView2<f64>>,
    lambda: f64,
) -> Result<(), NnError> {
    if inputs.nrows() == 0 {
        return Err(NnError::EmptyDataset);
    }
    if inputs.ncols() != params.spec.input_dim() {
        return Err(NnError::InputShape {
            got: inputs.ncols(),
            expected: params.spec.input_dim(),
        });
    }
    if targets.ncols() != params.spec.output_dim() || targets.nrows() != inputs.nrows() {
        return Err(NnError::TargetShape {
            got: targets.ncols(),
            expected: params.spec.output_dim(),
        });
    }
    if lambda > 0.0 && params.recon_layers.is_some() {
        match recon_targets {
            Some(rt) => {
                let expected = params
                    .recon_layers
                    .as_ref()
                    .unwrap()
                    .last()
                    .unwrap()
                    .weights
                    .nrows();
                if rt.ncols() != expected || rt.nrows() != inputs.nrows() {
                    return Err(NnError::TargetShape {
                        got: rt.ncols(),
                        expected,
                    });
                }
            }
            None => return Err(NnError::MissingReconTargets),
        }
    }
    Ok(())
}

/// Trains `params` in place by seed-deterministic mini-batch Adam descent on
/// the mean-squared prediction loss plus `multitask_weight` times the
/// reconstruction loss. Returns the per-epoch mean loss history.
pub fn train_model(
    params: &mut ModelParams,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    recon_targets: Option<ArrayView2<f64>>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, NnError> {
    cfg.validate()?;
    let lambda = cfg.multitask_weight;
    validate_dataset(params, &inputs, &targets, recon_targets.as_ref(), lambda)?;

    let use_recon = lambda > 0.0 && params.recon_layers.is_some();
    let mut grads = Grads {
        base: StackGrads::zeros_like(&params.layers),
        recon: params
            .recon_layers
            .as_ref()
            .filter(|_| use_recon)
            .map(|rl| StackGrads::zeros_like(rl)),
    };
    let mut adam_base = AdamState::zeros_like(&params.layers);
    let mut adam_recon = params
        .recon_layers
        .as_ref()
        .filter(|_| use_recon)
        .map(|rl| AdamState::zeros_like(rl));

    let n = inputs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(cfg.rng_seed, &[]);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut t = 0.0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = inputs.select(Axis(0), chunk);
            let bt = targets.select(Axis(0), chunk);
            let brt = recon_targets
                .as_ref()
                .filter(|_| use_recon)
                .map(|rt| rt.select(Axis(0), chunk));
            let loss =
                batch_loss_and_grads(params, &bx, &bt, brt.as_ref(), lambda, &mut grads);
            epoch_loss += loss * chunk.len() as f64;
            t += 1.0;
            adam_base.update(&mut params.layers, &grads.base, cfg.learning_rate, t);
            if let (Some(adam), Some(rg), Some(rl)) =
                (adam_recon.as_mut(), grads.recon.as_ref(), params.recon_layers.as_mut())
            {
                adam.update(rl, rg, cfg.learning_rate, t);
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(NnError::Divergence { epoch });
        }
        history.push(mean_loss);
    }
    Ok(history)
}

/// All parameter tensors of a model as (is_recon, layer, is_bias) handles.
fn coordinate_space(params: &ModelParams, include_recon: bool) -> Vec<(bool, usize, bool, usize)> {
    let mut coords = Vec::new();
    for (li, layer) in params.layers.iter().enumerate() {
        coords.push((false, li, false, layer.weights.len()));
        coords.push((false, li, true, layer.bias.len()));
    }
    if include_recon {
        if let Some(rl) = &params.recon_layers {
            for (li, layer) in rl.iter().enumerate() {
                coords.push((true, li, false, layer.weights.len()));
                coords.push((true, li, true, layer.bias.len()));
            }
        }
    }
    coords
}

fn param_mut(params: &mut ModelParams, tensor: (bool, usize, bool), flat: usize) -> &mut f64 {
    let (is_recon, li, is_bias) = tensor;
    let layer = if is_recon {
        &mut params.recon_layers.as_mut().unwrap()[li]
    } else {
        &mut params.layers[li]
    };
    if is_bias {
        &mut layer.bias[flat]
    } else {
        layer.weights.as_slice_mut().unwrap().get_mut(flat).unwrap()
    }
}

fn analytic_grad_at(grads: &Grads, tensor: (bool, usize, bool), flat: usize) -> f64 {
    let (is_recon, li, is_bias) = tensor;
    let stack = if is_recon {
        grads.recon.as_ref().unwrap()
    } else {
        &grads.base
    };
    if is_bias {
        stack.b[li][flat]
    } else {
        *stack.w[li].as_slice().unwrap().get(flat).unwrap()
    }
}

/// Shifts biases so every hidden pre-activation stays clear of the rectifier
/// kink for this sample; finite differences would otherwise cross it.
fn nudge_kinks(params: &mut ModelParams, x: &Array2<f64>, lambda: f64, margin: f64) {
    for _ in 0..8 {
        let mut changed = false;
        // base stack pre-activations
        let mut a = x.clone();
        let n = params.layers.len();
        let mut latent = None;
        for i in 0..n {
            let mut z = a.dot(&params.layers[i].weights.t());
            z += &params.layers[i].bias;
            if i < n - 1 {
                for (col, zv) in z.row(0).iter().enumerate() {
                    if zv.abs() < margin {
                        params.layers[i].bias[col] += 2.0 * margin;
                        changed = true;
                    }
                }
                if changed {
                    break;
                }
                z.mapv_inplace(|v| v.max(0.0));
            }
            if i + 1 == params.spec.latent_index() {
                latent = Some(z.clone());
            }
            a = z;
        }
        if changed {
            continue;
        }
        if lambda > 0.0 {
            if let (Some(rl_len), Some(mut ra)) =
                (params.recon_layers.as_ref().map(|r| r.len()), latent)
            {
                for j in 0..rl_len {
                    let rl = params.recon_layers.as_mut().unwrap();
                    let mut z = ra.dot(&rl[j].weights.t());
                    z += &rl[j].bias;
                    if j < rl_len - 1 {
                        for (col, zv) in z.row(0).iter().enumerate() {
                            if zv.abs() < margin {
                                rl[j].bias[col] += 2.0 * margin;
                                changed = true;
                            }
                        }
                        if changed {
                            break;
                        }
                        z.mapv_inplace(|v| v.max(0.0));
                    }
                    ra = z;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// Compares analytic gradients to central finite differences (step 1e-5) on
/// at least 50 randomly chosen parameters and returns the worst relative
/// error. Rectifier kinks near the operating point are perturbed away first.
pub fn gradient_check(
    params: &ModelParams,
    input: &[f64],
    target: &[f64],
    recon_target: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<f64, NnError> {
    const H: f64 = 1e-5;
    let lambda = cfg.multitask_weight;
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
        .map_err(|_| NnError::InputShape {
            got: input.len(),
            expected: params.spec.input_dim(),
        })?;
    let t = Array2::from_shape_vec((1, target.len()), target.to_vec())
        .map_err(|_| NnError::TargetShape {
            got: target.len(),
            expected: params.spec.output_dim(),
        })?;
    let rt = recon_target.map(|r| Array2::from_shape_vec((1, r.len()), r.to_vec()).unwrap());
    validate_dataset(params, &x.view(), &t.view(), rt.as_ref().map(|r| r.view()).as_ref(), lambda)?;

    let mut work = params.clone();
    nudge_kinks(&mut work, &x, lambda, 1e-3);

    let use_recon = lambda > 0.0 && work.recon_layers.is_some();
    let mut grads = Grads {
        base: StackGrads::zeros_like(&work.layers),
        recon: work
            .recon_layers
            .as_ref()
            .filter(|_| use_recon)
            .map(|rl| StackGrads::zeros_like(rl)),
    };
    batch_loss_and_grads(&work, &x, &t, rt.as_ref(), lambda, &mut grads);

    let coords = coordinate_space(&work, use_recon);
    let total: usize = coords.iter().map(|c| c.3).sum();
    let n_probe = 60.min(total);
    let mut rng = stream(cfg.rng_seed, &[0x6B636863]);
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_probe {
        let mut pick = rng.random_range(0..total);
        let mut tensor = (false, 0usize, false);
        let mut flat = 0usize;
        for &(is_recon, li, is_bias, len) in &coords {
            if pick < len {
                tensor = (is_recon, li, is_bias);
                flat = pick;
                break;
            }
            pick -= len;
        }
        let analytic = analytic_grad_at(&grads, tensor, flat);
        let original = *param_mut(&mut work, tensor, flat);
        *param_mut(&mut work, tensor, flat) = original + H;
        let plus = batch_loss(&work, &x, &t, rt.as_ref(), lambda);
        *param_mut(&mut work, tensor, flat) = original - H;
        let minus = batch_loss(&work, &x, &t, rt.as_ref(), lambda);
        *param_mut(&mut work, tensor, flat) = original;
        let fd = (plus - minus) / (2.0 * H);
        let rel = (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-5);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Trains the surrogate error regressor on latent vectors and raw per-sample
/// errors. Errors enter in `log(1+e)` space; the network output passes
/// through a softplus so log-space predictions stay nonnegative.
pub fn train_error_model(
    latents: ArrayView2<f64>,
    errors: &[f64],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>), NnError> {
    if latents.nrows() != errors.len() || errors.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let spec = NetSpec::error_model(latents.ncols());
    let mut model = init_params(&spec, cfg.rng_seed).with_softplus_output();
    let targets =
        Array2::from_shape_vec((errors.len(), 1), errors.iter().map(|e| e.ln_1p()).collect())
            .expect("target shape");
    let cfg = TrainConfig {
        multitask_weight: 0.0,
        ..*cfg
    };
    let history = train_model(&mut model, latents, targets.view(), None, &cfg)?;
    Ok((model, history))
}

/// Predicted per-sample errors, inverse-transformed from log space. Always
/// nonnegative.
pub fn predict_errors(model: &ModelParams, latents: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
    let out = model.predict_batch(latents)?;
    Ok(out.column(0).iter().map(|&s| s.exp_m1().max(0.0)).collect())
}
