//! Pool-based active-learning loop, per-trial metrics, aggregation and
//! statistics.
//!
//! A trial owns one generated dataset and split (derived from the base seed
//! and the trial index, shared by every strategy within the trial) and runs
//! the acquisition loop for a fixed number of steps. Each step retrains the
//! models from scratch, scores the remaining pool, measures the selected
//! batch through the virtual instrument and evaluates test error over the
//! remaining pool. `ActiveQC` additionally fits the quality GP on every
//! measured sample's mean-R² score, re-gates the training set and gates
//! candidate scores.

pub mod io;
pub mod maps;
pub mod stats;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    select_batch, strategy_scores, AcquisitionError, AcquisitionRecord, AcquisitionWeights,
    DistanceMode, Strategy, StrategyInputs,
};
use crate::data::{
    build_dataset, make_split, DataError, Dataset, DatasetConfig, DatasetSplit, VirtualInstrument,
};
use crate::gp::{gp_fit, hyperparam_grid, select_hyperparams, GpError, GpHyperparams, GpModel};
use crate::nn::{
    init_params, predict_errors, train_error_model, train_model, ModelParams, NetSpec, NnError,
    TrainConfig,
};
use crate::rng::{derive_seed, stream};
use stats::{sem, welch_t_test, WelchResult};

const TAG_DATASET: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_MODEL: u64 = 3;
const TAG_ERROR_MODEL: u64 = 4;
const TAG_RANDOM: u64 = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("welch test needs at least 2 values per sample, got {n_a} and {n_b}")]
    WelchSampleTooSmall { n_a: usize, n_b: usize },
    #[error("noisy ratio of an empty training set is undefined")]
    EmptyTrainingSet,
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed results artifact: {0}")]
    Malformed(String),
}

/// Direction of the structure-property mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Im2Spec,
    Spec2Im,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Im2Spec => "im2spec",
            Task::Spec2Im => "spec2im",
        }
    }
}

/// Quality threshold: one value for every step, or a per-step schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSchedule {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl TauSchedule {
    /// Threshold for a 1-based step index.
    pub fn at(&self, step: usize) -> f64 {
        match self {
            TauSchedule::Constant(t) => *t,
            TauSchedule::PerStep(v) => v[step - 1],
        }
    }
}

/// Whether quality gating retroactively excludes already-measured samples
/// from training or only filters acquisitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    Retroactive,
    AcquisitionOnly,
}

/// Optimizer settings shared by every per-step retraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Reconstruction-branch weight used by the multitask strategy.
    pub multitask_weight: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            multitask_weight: 1.0,
        }
    }
}

/// Full experiment description; serializable next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub strategies: Vec<Strategy>,
    pub weights: AcquisitionWeights,
    pub tau: TauSchedule,
    pub batch_fraction: f64,
    pub n_steps: usize,
    pub n_trials: usize,
    pub base_seed: u64,
    pub dataset: DatasetConfig,
    pub train: TrainSettings,
    pub distance_mode: DistanceMode,
    pub gating: GatingMode,
    /// Side length of the reduced Spec2Im output patch.
    pub spec2im_output_side: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Im2Spec,
            strategies: Strategy::all().to_vec(),
            weights: AcquisitionWeights::benchmark_default(),
            tau: TauSchedule::Constant(0.90),
            batch_fraction: 0.005,
            n_steps: 25,
            n_trials: 30,
            base_seed: 73,
            dataset: DatasetConfig::default(),
            train: TrainSettings::default(),
            distance_mode: DistanceMode::SumToTraining,
            gating: GatingMode::Retroactive,
            spec2im_output_side: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::BadConfig(m));
        if self.strategies.is_empty() {
            return err("no strategies configured".into());
        }
        if self.n_steps == 0 || self.n_trials == 0 {
            return err("n_steps and n_trials must be positive".into());
        }
        if !(self.batch_fraction > 0.0) {
            return err("batch_fraction must be positive".into());
        }
        AcquisitionWeights::new(self.weights.alpha, self.weights.beta, self.weights.gamma)
            .map_err(|e| HarnessError::BadConfig(e.to_string()))?;
        if let TauSchedule::PerStep(v) = &self.tau {
            if v.len() < self.n_steps {
                return err(format!(
                    "tau schedule has {} entries for {} steps",
                    v.len(),
                    self.n_steps
                ));
            }
        }
        if self.dataset.grid_size < self.dataset.patch_size {
            return err("grid smaller than patch".into());
        }
        if self.spec2im_output_side == 0 || self.spec2im_output_side > self.dataset.patch_size {
            return err("spec2im output side must fit in the patch".into());
        }
        let n = self.dataset.centers_per_side().pow(2);
        if n < 3 {
            return err("dataset too small to split".into());
        }
        let n_seed = ((0.01 * n as f64).floor() as usize).max(1);
        let n_val = (0.09 * n as f64).floor() as usize;
        let n_pool = n - n_seed - n_val;
        let k = self.batch_size_for_pool(n_pool);
        if k == 0 || n_pool < k * self.n_steps {
            return err(format!(
                "pool of {n_pool} cannot serve {} steps of batch {k}",
                self.n_steps
            ));
        }
        Ok(())
    }

    /// Batch size: `ceil(batch_fraction * initial pool size)`.
    pub fn batch_size_for_pool(&self, n_pool: usize) -> usize {
        (self.batch_fraction * n_pool as f64).ceil() as usize
    }

    fn net_spec(&self) -> NetSpec {
        let p2 = self.dataset.patch_size * self.dataset.patch_size;
        match self.task {
            Task::Im2Spec => NetSpec::im2spec(p2, self.dataset.loop_len),
            Task::Spec2Im => NetSpec::spec2im(
                self.dataset.loop_len,
                self.spec2im_output_side * self.spec2im_output_side,
            ),
        }
    }
}

/// Dataset views for one task: model inputs plus raw and clean targets, one
/// row per sample.
pub(crate) struct TaskData {
    pub inputs: Array2<f64>,
    pub targets_raw: Array2<f64>,
    pub targets_clean: Array2<f64>,
}

impl TaskData {
    fn build(ds: &Dataset, task: Task, out_side: usize) -> Self {
        let n = ds.n_samples();
        let p = ds.config.patch_size;
        match task {
            Task::Im2Spec => {
                let inputs = rows_to_array(n, p * p, ds.samples.iter().map(|s| s.patch.as_slice()));
                let targets_raw = rows_to_array(
                    n,
                    ds.config.loop_len,
                    ds.samples.iter().map(|s| s.loop_values.as_slice()),
                );
                let targets_clean = rows_to_array(
                    n,
                    ds.config.loop_len,
                    ds.samples.iter().map(|s| s.loop_clean.as_slice()),
                );
                Self {
                    inputs,
                    targets_raw,
                    targets_clean,
                }
            }
            Task::Spec2Im => {
                let inputs = rows_to_array(
                    n,
                    ds.config.loop_len,
                    ds.samples.iter().map(|s| s.loop_values.as_slice()),
                );
                let offset = (p - out_side) / 2;
                let mut centers = Array2::zeros((n, out_side * out_side));
                for (i, s) in ds.samples.iter().enumerate() {
                    for r in 0..out_side {
                        for c in 0..out_side {
                            centers[[i, r * out_side + c]] =
                                s.patch[(offset + r) * p + (offset + c)];
                        }
                    }
                }
                let targets_clean = centers.clone();
                Self {
                    inputs,
                    targets_raw: centers,
                    targets_clean,
                }
            }
        }
    }

    fn select_rows(src: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
        src.select(Axis(0), ids)
    }
}

fn rows_to_array<'a>(
    n: usize,
    d: usize,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Array2<f64> {
    let mut flat = Vec::with_capacity(n * d);
    for r in rows {
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, d), flat).expect("row shapes agree")
}

/// Metrics recorded at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mse_clean: f64,
    pub mse_raw: f64,
    pub noisy_ratio: f64,
    pub retained_count: usize,
    pub batch_ids: Vec<usize>,
    pub skipped: bool,
}

/// Per-step acquisition log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    /// Effective gate threshold (after any relaxation); `None` for ungated
    /// strategies.
    pub tau_used: Option<f64>,
    pub tau_relaxed: bool,
    /// Training ids used this step (after re-gating for ActiveQC).
    pub retained_ids: Vec<usize>,
    pub records: Vec<AcquisitionRecord>,
    /// Serialized quality-GP state for step-by-step replay (ActiveQC only).
    pub gp_state: Option<String>,
}

/// Everything one seeded trial produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub trial: usize,
    pub steps: Vec<StepMetrics>,
    pub log: Vec<StepLog>,
    pub seed_ids: Vec<usize>,
    pub corrupted_ids: Vec<usize>,
    pub centers_per_side: usize,
    /// Audit counters: how often the quality GP was fit and the error model
    /// trained during this trial.
    pub gp_fit_count: usize,
    pub error_model_count: usize,
}

/// Fraction of the given training set carrying the corruption flag.
pub fn noisy_ratio(training_ids: &[usize], corrupted: &[bool]) -> Result<f64, HarnessError> {
    if training_ids.is_empty() {
        return Err(HarnessError::EmptyTrainingSet);
    }
    let hits = training_ids.iter().filter(|&&id| corrupted[id]).count();
    Ok(hits as f64 / training_ids.len() as f64)
}

fn mean_mse(pred: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let diff = pred - targets;
    diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
}

/// GP hyperparameter selection for the quality surface: a 3x3x3 log-spaced
/// grid around the benchmark defaults, prior mean at the target mean.
fn fit_quality_gp(coords: &[[f64; 2]], targets: &[f64]) -> Result<GpModel, GpError> {
    let m0 = targets.iter().sum::<f64>() / targets.len() as f64;
    let grid = hyperparam_grid(GpHyperparams::benchmark_default(m0), 4.0);
    let hyper = select_hyperparams(coords, targets, &grid)?;
    gp_fit(coords, targets, hyper)
}

struct TrialState<'a> {
    ds: &'a Dataset,
    task: &'a TaskData,
    instrument: VirtualInstrument<'a>,
    measured: Vec<usize>,
    pool: Vec<usize>,
    batch_size: usize,
    spec: NetSpec,
}

impl TrialState<'_> {
    fn measured_coords(&self) -> Vec<[f64; 2]> {
        self.measured.iter().map(|&id| self.ds.coords(id)).collect()
    }

    fn measured_quality(&self) -> Vec<f64> {
        self.measured
            .iter()
            .map(|&id| self.ds.samples[id].quality.q.clamp(0.0, 1.0))
            .collect()
    }
}

fn array_to_latents(latents: Array2<f64>) -> Vec<Vec<f64>> {
    latents.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

/// Runs one acquisition step. Returns the metrics and the log entry.
#[allow(clippy::too_many_arguments)]
fn run_step(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    state: &mut TrialState<'_>,
    trial: usize,
    step: usize,
    corrupted: &[bool],
    counters: &mut (usize, usize),
) -> Result<(StepMetrics, StepLog), HarnessError> {
    let strategy_idx = strategy as u64;
    let tau = cfg.tau.at(step);

    // quality surface and retroactive re-gating
    let (gp, mut retained): (Option<GpModel>, Vec<usize>) = if strategy.uses_quality_gate() {
        let gp = fit_quality_gp(&state.measured_coords(), &state.measured_quality())?;
        counters.0 += 1;
        let retained = match cfg.gating {
            GatingMode::Retroactive => state
                .measured
                .iter()
                .cloned()
                .filter(|&id| gp.predict_one(state.ds.coords(id)).0 >= tau)
                .collect(),
            GatingMode::AcquisitionOnly => state.measured.clone(),
        };
        (Some(gp), retained)
    } else {
        (None, state.measured.clone())
    };
    // an empty retained set cannot train anything; fall back to all measured
    if retained.is_empty() {
        retained = state.measured.clone();
    }

    // per-step retraining from scratch
    let train_inputs = TaskData::select_rows(&state.task.inputs, &retained);
    let train_targets = TaskData::select_rows(&state.task.targets_raw, &retained);
    let model_seed = derive_seed(cfg.base_seed, &[TAG_MODEL, trial as u64, strategy_idx, step as u64]);
    let multitask = strategy.uses_multitask();
    let mut model = if multitask {
        init_params(&state.spec, model_seed).with_recon_decoder()
    } else {
        init_params(&state.spec, model_seed)
    };
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        multitask_weight: if multitask {
            cfg.train.multitask_weight
        } else {
            0.0
        },
        rng_seed: model_seed,
    };
    train_model(
        &mut model,
        train_inputs.view(),
        train_targets.view(),
        multitask.then(|| train_inputs.view()),
        &train_cfg,
    )?;

    // candidate scoring
    let mut records = if strategy.uses_components() {
        let train_latents = array_to_latents(model.latents_batch(train_inputs.view())?);
        let pool_inputs = TaskData::select_rows(&state.task.inputs, &state.pool);
        let cand_latents = array_to_latents(model.latents_batch(pool_inputs.view())?);
        let train_pred = model.predict_batch(train_inputs.view())?;
        let train_errors = ModelParams::per_sample_mse(&train_pred, train_targets.view());
        let em_seed = derive_seed(
            cfg.base_seed,
            &[TAG_ERROR_MODEL, trial as u64, strategy_idx, step as u64],
        );
        let em_cfg = TrainConfig {
            rng_seed: em_seed,
            multitask_weight: 0.0,
            ..train_cfg
        };
        let latents_arr = rows_to_array(
            train_latents.len(),
            state.spec.latent_dim(),
            train_latents.iter().map(|v| v.as_slice()),
        );
        let (error_model, _) = train_error_model(latents_arr.view(), &train_errors, &em_cfg)?;
        counters.1 += 1;
        let cand_arr = rows_to_array(
            cand_latents.len(),
            state.spec.latent_dim(),
            cand_latents.iter().map(|v| v.as_slice()),
        );
        let raw_errors = predict_errors(&error_model, cand_arr.view())?;
        let q_hat: Option<Vec<f64>> = gp.as_ref().map(|g| {
            state
                .pool
                .iter()
                .map(|&id| g.predict_one(state.ds.coords(id)).0)
                .collect()
        });
        let inputs = StrategyInputs {
            candidate_ids: &state.pool,
            raw_errors: Some(&raw_errors),
            candidate_latents: Some(&cand_latents),
            training_latents: Some(&train_latents),
            q_hat: q_hat.as_deref(),
            tau,
            weights: cfg.weights,
            distance_mode: cfg.distance_mode,
        };
        let mut rng = stream(cfg.base_seed, &[TAG_RANDOM, trial as u64, strategy_idx, step as u64]);
        strategy_scores(strategy, &inputs, &mut rng)?
    } else {
        let inputs = StrategyInputs {
            candidate_ids: &state.pool,
            raw_errors: None,
            candidate_latents: None,
            training_latents: None,
            q_hat: None,
            tau,
            weights: cfg.weights,
            distance_mode: cfg.distance_mode,
        };
        let mut rng = stream(cfg.base_seed, &[TAG_RANDOM, trial as u64, strategy_idx, step as u64]);
        strategy_scores(strategy, &inputs, &mut rng)?
    };

    // selection, with one tau-relaxation retry for a gated empty batch
    let gated: Vec<f64> = records.iter().map(|r| r.a).collect();
    let mut tau_used = strategy.uses_quality_gate().then_some(tau);
    let mut tau_relaxed = false;
    let mut skipped = false;
    let selection = match select_batch(&state.pool, &gated, state.batch_size) {
        Ok(sel) => sel,
        Err(AcquisitionError::EmptyBatch) if strategy.uses_quality_gate() => {
            let relaxed = tau / 2.0;
            for r in &mut records {
                r.a = match r.q_hat {
                    Some(q) if q >= relaxed => r.s,
                    _ => 0.0,
                };
            }
            tau_used = Some(relaxed);
            tau_relaxed = true;
            let regated: Vec<f64> = records.iter().map(|r| r.a).collect();
            match select_batch(&state.pool, &regated, state.batch_size) {
                Ok(sel) => sel,
                Err(AcquisitionError::EmptyBatch) => {
                    skipped = true;
                    Vec::new()
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(e) => return Err(e.into()),
    };

    for r in &mut records {
        r.selected = selection.contains(&r.id);
    }

    // measure the batch and update the pool
    for &id in &selection {
        state.instrument.measure(id)?;
        state.measured.push(id);
    }
    state.pool.retain(|id| !selection.contains(id));

    // evaluate on the remaining pool
    let pool_inputs = TaskData::select_rows(&state.task.inputs, &state.pool);
    let pred = model.predict_batch(pool_inputs.view())?;
    let mse_clean = mean_mse(&pred, &TaskData::select_rows(&state.task.targets_clean, &state.pool));
    let mse_raw = mean_mse(&pred, &TaskData::select_rows(&state.task.targets_raw, &state.pool));

    let metrics = StepMetrics {
        step,
        mse_clean,
        mse_raw,
        noisy_ratio: noisy_ratio(&retained, corrupted)?,
        retained_count: retained.len(),
        batch_ids: selection,
        skipped,
    };
    let log = StepLog {
        step,
        tau_used,
        tau_relaxed,
        retained_ids: retained,
        records,
        gp_state: gp.as_ref().map(|g| g.to_json()),
    };
    Ok((metrics, log))
}

/// Runs one strategy through one seeded trial. The dataset and split derive
/// from `(base_seed, trial)` only, so every strategy in a trial shares them.
pub fn run_trial(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    trial: usize,
) -> Result<TrialResult, HarnessError> {
    cfg.validate()?;
    let mut ds_cfg = cfg.dataset.clone();
    ds_cfg.seed = derive_seed(cfg.base_seed, &[TAG_DATASET, trial as u64]);
    let ds = build_dataset(&ds_cfg)?;
    let split = trial_split(cfg, &ds, trial)?;
    let task = TaskData::build(&ds, cfg.task, cfg.spec2im_output_side);
    let corrupted: Vec<bool> = ds.samples.iter().map(|s| s.corrupted).collect();

    let mut instrument = VirtualInstrument::new(&ds);
    for &id in &split.seed_ids {
        instrument.measure(id)?;
    }

    let mut state = TrialState {
        ds: &ds,
        task: &task,
        instrument,
        measured: split.seed_ids.clone(),
        pool: split.pool_ids.clone(),
        batch_size: cfg.batch_size_for_pool(split.pool_ids.len()),
        spec: cfg.net_spec(),
    };

    let mut steps = Vec::with_capacity(cfg.n_steps);
    let mut log = Vec::with_capacity(cfg.n_steps);
    let mut counters = (0usize, 0usize);
    for step in 1..=cfg.n_steps {
        let (m, l) = run_step(cfg, strategy, &mut state, trial, step, &corrupted, &mut counters)?;
        steps.push(m);
        log.push(l);
    }

    Ok(TrialResult {
        strategy,
        trial,
        steps,
        log,
        seed_ids: split.seed_ids,
        corrupted_ids: ds
            .samples
            .iter()
            .filter(|s| s.corrupted)
            .map(|s| s.id)
            .collect(),
        centers_per_side: ds.centers_per_side(),
        gp_fit_count: counters.0,
        error_model_count: counters.1,
    })
}

fn trial_split(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    trial: usize,
) -> Result<DatasetSplit, HarnessError> {
    Ok(make_split(
        ds.n_samples(),
        derive_seed(cfg.base_seed, &[TAG_SPLIT, trial as u64]),
    )?)
}

/// Per-step aggregate over trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepAggregate {
    pub step: usize,
    pub mse_clean_mean: f64,
    pub mse_clean_sem: f64,
    pub mse_raw_mean: f64,
    pub mse_raw_sem: f64,
    pub noisy_ratio_mean: f64,
    pub noisy_ratio_sem: f64,
    pub retained_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyAggregate {
    pub strategy: Strategy,
    pub per_step: Vec<StepAggregate>,
}

/// One Welch comparison in the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WelchComparison {
    pub metric: String,
    pub step: usize,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    #[serde(flatten)]
    pub result: WelchResult,
}

/// Complete experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<StrategyAggregate>,
    pub welch: Vec<WelchComparison>,
}

impl ExperimentResult {
    pub fn trials_for(&self, strategy: Strategy) -> Vec<&TrialResult> {
        let mut v: Vec<&TrialResult> = self
            .trials
            .iter()
            .filter(|t| t.strategy == strategy)
            .collect();
        v.sort_by_key(|t| t.trial);
        v
    }

    /// Per-trial values of a step metric for one strategy, ordered by trial.
    pub fn metric_over_trials(
        &self,
        strategy: Strategy,
        step: usize,
        metric: impl Fn(&StepMetrics) -> f64,
    ) -> Vec<f64> {
        self.trials_for(strategy)
            .iter()
            .map(|t| metric(&t.steps[step - 1]))
            .collect()
    }
}

fn aggregate_strategy(cfg: &ExperimentConfig, trials: &[&TrialResult]) -> Vec<StepAggregate> {
    (1..=cfg.n_steps)
        .map(|step| {
            let col = |f: &dyn Fn(&StepMetrics) -> f64| -> Vec<f64> {
                trials.iter().map(|t| f(&t.steps[step - 1])).collect()
            };
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let sem_of = |v: &[f64]| if v.len() >= 2 { sem(v) } else { 0.0 };
            let mse_clean = col(&|m| m.mse_clean);
            let mse_raw = col(&|m| m.mse_raw);
            let ratio = col(&|m| m.noisy_ratio);
            let retained = col(&|m| m.retained_count as f64);
            StepAggregate {
                step,
                mse_clean_mean: mean(&mse_clean),
                mse_clean_sem: sem_of(&mse_clean),
                mse_raw_mean: mean(&mse_raw),
                mse_raw_sem: sem_of(&mse_raw),
                noisy_ratio_mean: mean(&ratio),
                noisy_ratio_sem: sem_of(&ratio),
                retained_mean: mean(&retained),
            }
        })
        .collect()
}

/// Welch comparisons of ActiveQC against every other configured strategy on
/// clean-target MSE over the final three steps, plus the final-step noisy
/// ratio against Random.
fn welch_summary(cfg: &ExperimentConfig, result: &ExperimentResult) -> Vec<WelchComparison> {
    let mut out = Vec::new();
    if cfg.n_trials < 2 || !cfg.strategies.contains(&Strategy::ActiveQc) {
        return out;
    }
    let last3 = (cfg.n_steps.saturating_sub(2).max(1))..=cfg.n_steps;
    for step in last3 {
        for &other in &cfg.strategies {
            if other == Strategy::ActiveQc {
                continue;
            }
            let a = result.metric_over_trials(Strategy::ActiveQc, step, |m| m.mse_clean);
            let b = result.metric_over_trials(other, step, |m| m.mse_clean);
            if let Ok(r) = welch_t_test(&a, &b) {
                out.push(WelchComparison {
                    metric: "mse_clean".into(),
                    step,
                    strategy_a: Strategy::ActiveQc,
                    strategy_b: other,
                    result: r,
                });
            }
        }
    }
    if cfg.strategies.contains(&Strategy::Random) {
        let a = result.metric_over_trials(Strategy::ActiveQc, cfg.n_steps, |m| m.noisy_ratio);
        let b = result.metric_over_trials(Strategy::Random, cfg.n_steps, |m| m.noisy_ratio);
        if let Ok(r) = welch_t_test(&a, &b) {
            out.push(WelchComparison {
                metric: "noisy_ratio".into(),
                step: cfg.n_steps,
                strategy_a: Strategy::ActiveQc,
                strategy_b: Strategy::Random,
                result: r,
            });
        }
    }
    out
}

/// Runs every configured strategy across every trial. Trials are independent
/// and run in parallel; results and aggregates are reduced in a fixed order,
/// so the output is deterministic for a given config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let jobs: Vec<(Strategy, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.n_trials).map(move |t| (s, t)))
        .collect();
    let trials: Result<Vec<TrialResult>, HarnessError> = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(cfg, s, t))
        .collect();
    let trials = trials?;

    let mut result = ExperimentResult {
        config: cfg.clone(),
        trials,
        aggregates: Vec::new(),
        welch: Vec::new(),
    };
    result.aggregates = cfg
        .strategies
        .iter()
        .map(|&s| StrategyAggregate {
            strategy: s,
            per_step: aggregate_strategy(cfg, &result.trials_for(s)),
        })
        .collect();
    result.welch = welch_summary(cfg, &result);
    Ok(result)
}
