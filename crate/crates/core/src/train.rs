//! Rate-distortion training and sequential λ chaining.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::FocalParams;
use crate::model::{CompressionModel, ModelConfig};
use crate::nn::{adam_step, AdamParams, AdamState};
use crate::tensor::Tensor4D;

/// Fine-tuning budget of every chained model after the first, as a fraction
/// of the first model's steps.
pub const DEFAULT_FINE_TUNE_FRACTION: f64 = 0.125;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lambda: f64,
    pub model: ModelConfig,
    pub focal: FocalParams,
    pub adam: AdamParams,
    pub steps: usize,
    pub seed: u64,
    /// Warm start; must share `model`'s configuration.
    pub init: Option<CompressionModel>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, lambda: f64, steps: usize, seed: u64) -> Self {
        TrainConfig {
            lambda,
            model,
            focal: FocalParams::default(),
            adam: AdamParams::default(),
            steps,
            seed,
            init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if let Some(init) = &self.init {
            if *init.config() != self.model {
                return Err(Error::ModelMismatch(format!(
                    "warm-start model {:?} differs from {:?}",
                    init.config(),
                    self.model
                )));
            }
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Estimated bits per occupied voxel over the batch.
    pub rate_bpp: f64,
    /// Mean focal loss per block.
    pub focal: f64,
    /// Mean `bits + lambda * focal` per block.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Loss of the finished, f32-rounded model on the noise draw of step 0.
    pub final_loss: f64,
    pub wall_time: Duration,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,rate_bpp_estimate,focal_loss,total_loss\n");
        for r in &self.steps {
            writeln!(out, "{},{},{},{}", r.step, r.rate_bpp, r.focal, r.total)
                .expect("write to string");
        }
        out
    }
}

/// Noise draws depend only on the seed and the step, so a warm-started run
/// sees the same step-0 noise as its donor's final evaluation.
fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn check_dataset(dataset: &[Tensor4D], config: &ModelConfig) -> Result<usize> {
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let b = config.block_size;
    let mut occupied = 0usize;
    for (i, x) in dataset.iter().enumerate() {
        if x.shape() != [b, b, b, 1] {
            return Err(Error::Shape(format!(
                "block {i} has shape {:?}, expected {b}^3",
                x.shape()
            )));
        }
        occupied += x.data().iter().filter(|&&v| v >= 0.5).count();
    }
    Ok(occupied.max(1))
}

/// Batch loss of `model` on the noise of `step`, with gradients when asked.
fn batch_loss(
    model: &CompressionModel,
    dataset: &[Tensor4D],
    cfg: &TrainConfig,
    step: usize,
    occupied: usize,
    mut grads: Option<&mut Vec<f64>>,
) -> Result<StepRecord> {
    let mut rng = step_rng(cfg.seed, step);
    let mut bits = 0.0;
    let mut focal = 0.0;
    let mut acc = grads.as_ref().map(|_| model.zero_gradients());
    for x in dataset {
        let t = model.evaluate_block(x, &mut rng, cfg.focal, cfg.lambda, acc.as_mut())?;
        bits += t.bits();
        focal += t.focal;
    }
    let n = dataset.len() as f64;
    if let (Some(out), Some(acc)) = (grads.as_deref_mut(), acc) {
        out.clear();
        out.extend(acc.weights.to_flat());
        out.extend(acc.density);
        out.iter_mut().for_each(|g| *g /= n);
    }
    Ok(StepRecord {
        step,
        rate_bpp: bits / occupied as f64,
        focal: focal / n,
        total: (bits + cfg.lambda * focal) / n,
    })
}

/// Trains one model on the whole dataset every step.
pub fn train_model(
    cfg: &TrainConfig,
    dataset: &[Tensor4D],
) -> Result<(CompressionModel, TrainLog)> {
    train_from(cfg, dataset, None).map(|(model, log, _)| (model, log))
}

/// Training loop. `optimizer` resumes the moments of an earlier run; a fresh
/// Adam state would take a full-size step on every parameter at once.
fn train_from(
    cfg: &TrainConfig,
    dataset: &[Tensor4D],
    optimizer: Option<AdamState>,
) -> Result<(CompressionModel, TrainLog, AdamState)> {
    cfg.validate()?;
    let occupied = check_dataset(dataset, &cfg.model)?;
    let start = Instant::now();
    let mut model = match &cfg.init {
        Some(m) => m.clone(),
        None => CompressionModel::new(cfg.model, cfg.seed)?,
    };
    let mut params = model.params_flat();
    let mut state = match optimizer {
        Some(state) if state.m.len() == params.len() => state,
        Some(state) => {
            return Err(Error::Config(format!(
                "optimizer state has {} entries, model has {}",
                state.m.len(),
                params.len()
            )))
        }
        None => AdamState::new(params.len()),
    };
    let mut grads = Vec::with_capacity(params.len());
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let record = batch_loss(&model, dataset, cfg, step, occupied, Some(&mut grads))?;
        if !record.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                message: format!("loss {}", record.total),
            });
        }
        records.push(record);
        adam_step(&mut params, &grads, &mut state, cfg.adam)?;
        model.load_params_flat(&params)?;
        params = model.params_flat();
    }
    model.snap_to_f32();
    let final_loss = batch_loss(&model, dataset, cfg, 0, occupied, None)?.total;
    if !final_loss.is_finite() {
        return Err(Error::Training {
            step: cfg.steps,
            message: format!("final loss {final_loss}"),
        });
    }
    Ok((
        model,
        TrainLog {
            steps: records,
            final_loss,
            wall_time: start.elapsed(),
        },
        state,
    ))
}

/// One trained tradeoff of a sequential chain.
#[derive(Debug, Clone)]
pub struct ChainedModel {
    pub lambda: f64,
    pub model: CompressionModel,
    pub log: TrainLog,
}

/// Steps given to every chained model after the first.
pub fn fine_tune_steps(steps: usize, fraction: f64) -> usize {
    ((steps as f64 * fraction).ceil() as usize).max(1)
}

/// Trains the first λ with the full budget, then warm-starts each following
/// λ from its predecessor with `fraction` of the budget, carrying the
/// optimizer moments along. λs must be strictly descending so the chain goes
/// from high to low rate.
pub fn sequential_train(
    lambdas: &[f64],
    base: &TrainConfig,
    dataset: &[Tensor4D],
    fraction: f64,
) -> Result<Vec<ChainedModel>> {
    if lambdas.len() < 2 {
        return Err(Error::Config(
            "sequential training needs at least two lambdas".into(),
        ));
    }
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Config(format!(
            "lambdas {lambdas:?} are not strictly descending"
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fine-tune fraction {fraction} outside (0, 1]"
        )));
    }
    let mut chain: Vec<ChainedModel> = Vec::with_capacity(lambdas.len());
    let mut optimizer = None;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.lambda = lambda;
        if let Some(prev) = chain.last() {
            cfg.init = Some(prev.model.clone());
            cfg.steps = fine_tune_steps(base.steps, fraction);
        }
        let (model, log, state) =
            train_from(&cfg, dataset, optimizer.take()).map_err(|e| match e {
                Error::Training { step, message } => Error::Training {
                    step,
                    message: format!("model {i} (lambda {lambda}): {message}"),
                },
                other => other,
            })?;
        optimizer = Some(state);
        chain.push(ChainedModel { lambda, model, log });
    }
    Ok(chain)
}
