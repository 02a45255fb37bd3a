//! Minibatch training of one boundary-pair regressor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{cyclic_shift, flip_horizontal, DatasetRecord, ShiftSets};
use crate::error::{Error, Result};
use crate::geometry::{BBox, LocalizerStack};
use crate::models::{forward, ArchitectureConfig, BoxAxis, Mode, Model, StackInput};
use crate::nn::optim::AdamConfig;
use crate::nn::{Adam, Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub bn_momentum: f64,
    pub seed: u64,
    /// Adds a mirrored copy of every training stack.
    pub flip: bool,
    /// Random cyclic shifts per sample and epoch; `None` disables them.
    pub shifts: Option<ShiftSets>,
    /// Stops after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub schedule: LrSchedule,
}

/// Learning rate over the course of training, relative to `adam.lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `adam.lr` down to `adam.lr * floor` at the last step.
    Cosine { floor: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::Cosine { floor: 0.05 }
    }
}

impl LrSchedule {
    /// Multiplier for step `step` (0-based) of `total`.
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::Cosine { floor } => {
                let t = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            adam: AdamConfig::default(),
            bn_momentum: 0.1,
            seed: 0,
            flip: true,
            shifts: Some(ShiftSets::scaled(64)),
            max_steps: None,
            schedule: LrSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub rejected_shifts: usize,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,steps,train_loss,val_loss\n");
        for e in &self.epochs {
            let v = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.steps, e.train_loss, v));
        }
        out
    }
}

/// Normalized target pair for one axis.
pub fn target_pair(label: &BBox, axis: BoxAxis, height: usize, width: usize) -> [f64; 2] {
    match axis {
        BoxAxis::TopBottom => [label.top / height as f64, label.bottom / height as f64],
        BoxAxis::LeftRight => [label.left / width as f64, label.right / width as f64],
    }
}

fn targets(samples: &[(&LocalizerStack, BBox)], axis: BoxAxis) -> Result<Tensor<f32>> {
    let data: Vec<f64> = samples
        .iter()
        .flat_map(|(s, l)| target_pair(l, axis, s.height(), s.width()))
        .collect();
    Tensor::from_f64(&[samples.len(), 2], &data)
}

/// Mean squared error in inference mode over `records`.
pub fn validation_loss(model: &Model, records: &[&DatasetRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let mut total = 0.0;
    for chunk in records.chunks(16) {
        let stacks: Vec<&LocalizerStack> = chunk.iter().map(|r| &r.stack).collect();
        let preds = model.predict_normalized(&stacks)?;
        for (p, r) in preds.iter().zip(chunk) {
            let t = target_pair(&r.label, model.axis(), r.stack.height(), r.stack.width());
            total += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
        }
    }
    Ok(total / (2 * records.len()) as f64)
}

/// Trains one instance; returns the weights with the lowest validation loss
/// (or the final weights when `val` is empty).
pub fn train(
    arch: &ArchitectureConfig,
    axis: BoxAxis,
    train_set: &[&DatasetRecord],
    val: &[&DatasetRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    let mut model = Model::new(arch.clone(), axis, cfg.seed)?;
    let mut pool: Vec<(LocalizerStack, BBox)> = train_set.iter().map(|r| (r.stack.clone(), r.label)).collect();
    if cfg.flip {
        for r in train_set {
            pool.push(flip_horizontal(&r.stack, &r.label)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut step_losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut rejected = 0;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let limit_reached = |n: usize| cfg.max_steps.is_some_and(|m| n >= m);
    let mut total_steps = cfg.epochs * pool.len().div_ceil(cfg.batch_size);
    if let Some(m) = cfg.max_steps {
        total_steps = total_steps.min(m);
    }
    for epoch in 0..cfg.epochs {
        if limit_reached(step_losses.len()) {
            break;
        }
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            if limit_reached(step_losses.len()) {
                break;
            }
            let mut owned = Vec::with_capacity(batch.len());
            for &i in batch {
                let (s, l) = &pool[i];
                match &cfg.shifts {
                    Some(sets) => {
                        let (dx, dy) = sets.sample(&mut rng);
                        let out = cyclic_shift(s, l, dx, dy)?;
                        rejected += out.rejected as usize;
                        owned.push((out.stack, out.label));
                    }
                    None => owned.push((s.clone(), *l)),
                }
            }
            let samples: Vec<(&LocalizerStack, BBox)> = owned.iter().map(|(s, l)| (s, *l)).collect();
            adam.config.lr = cfg.adam.lr * cfg.schedule.factor(step_losses.len(), total_steps);
            let loss = step(&mut model, &mut adam, &samples, cfg.bn_momentum)?;
            step_losses.push(loss);
            sum += loss;
            count += 1;
        }
        let val_loss = if val.is_empty() { None } else { Some(validation_loss(&model, val)?) };
        epochs.push(EpochLog {
            epoch,
            steps: step_losses.len(),
            train_loss: if count > 0 { sum / count as f64 } else { f64::NAN },
            val_loss,
        });
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score <= *b) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(TrainOutcome {
        model,
        step_losses,
        epochs,
        best_epoch,
        rejected_shifts: rejected,
    })
}

/// One forward/backward/update; returns the batch loss.
fn step(model: &mut Model, adam: &mut Adam, samples: &[(&LocalizerStack, BBox)], momentum: f64) -> Result<f64> {
    let inputs: Vec<StackInput<f32>> = samples.iter().map(|(s, _)| StackInput::from_stack(s)).collect();
    let target = targets(samples, model.axis())?;
    let mut g = Graph::new();
    let f = forward(&model.header.config, &model.params, &mut g, &inputs, Mode::Train)?;
    let loss_var = g.mse(f.output, target)?;
    let loss = g.value(loss_var).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = g.backward(loss_var)?.params();
    adam.step(&mut model.params.trainable, &grads)?;
    for (prefix, stats) in &f.batch_stats {
        model.params.update_running(prefix, stats, momentum)?;
    }
    Ok(loss)
}
