//! Mini-batch training with Adam, early stopping on the dev objective and
//! grid search.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{encode_instances, Example, Preprocessed};
use crate::model::{ModelConfig, ModelError, ModelParameters};
use crate::nn::AdamMoments;
use crate::objectives::{forward, total_loss_and_grad, Batch, Latents, LossBreakdown, Noise, ObjectiveError};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    /// Carries the best parameters seen before the loss went non-finite.
    #[error("training diverged in epoch {epoch}: {cause}")]
    Diverged {
        epoch: usize,
        cause: String,
        last_finite: Box<ModelParameters>,
        history: Box<TrainHistory>,
    },
}

/// How the auxiliary `p(d | z)` map is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxUpdate {
    /// Fit `softmax(aux(θ))` to the detached role posteriors.
    #[default]
    Fit,
    /// Follow the gradient of the total objective like every other weight.
    Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub aux_update: AuxUpdate,
    /// Hyperparameter name → values, consumed by [`grid_search`].
    #[serde(default)]
    pub grid: Option<BTreeMap<String, Vec<f64>>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            clip_norm: Some(5.0),
            aux_update: AuxUpdate::Fit,
            grid: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Encoded examples plus the vocabulary's stop flags.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub stop_flags: Vec<bool>,
}

impl Dataset {
    pub fn from_preprocessed(pre: &Preprocessed, context_excludes_target: bool) -> Self {
        Self {
            train: encode_instances(&pre.split.train, &pre.vocab, context_excludes_target),
            dev: encode_instances(&pre.split.dev, &pre.vocab, context_excludes_target),
            stop_flags: pre.vocab.stop_flags().to_vec(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.stop_flags.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub dev: LossBreakdown,
    /// Value used for early stopping; the dev total unless overridden.
    pub dev_score: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 before any epoch finished.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn train_totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train.total).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "epoch,l_z,l_d,l_x,l_mi,total,dev_l_z,dev_l_d,dev_l_x,dev_l_mi,dev_total,wall_time_secs"
        )?;
        for e in &self.epochs {
            let (t, d) = (&e.train, &e.dev);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
                e.epoch, t.l_z, t.l_d, t.l_x, t.l_mi, t.total, d.l_z, d.l_d, d.l_x, d.l_mi, d.total, e.wall_time_secs
            )?;
        }
        Ok(())
    }
}

/// Patience-based stopping rule on a score that should increase.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: usize,
    best_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_epoch: 0,
            best_score: f64::NEG_INFINITY,
        }
    }

    /// Record the score of `epoch` (1-based, increasing). Only strict
    /// improvements reset the counter.
    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }
}

/// Adam over every tensor of a [`ModelParameters`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    step: i32,
    moments: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(params: &ModelParameters, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            step: 0,
            moments: params.tensors().iter().map(|(_, _, v)| AdamMoments::new(v.len())).collect(),
        }
    }

    /// Descend `grad`.
    pub fn step(&mut self, params: &mut ModelParameters, grad: &ModelParameters) {
        self.step += 1;
        let grads = grad.tensors();
        for (((_, p), (_, _, g)), m) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.moments) {
            m.update(p, g, self.step, self.learning_rate);
        }
    }
}

pub fn gradient_norm(grad: &ModelParameters) -> f64 {
    grad.tensors()
        .iter()
        .flat_map(|(_, _, v)| v.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grad` so its global norm is at most `max_norm`.
pub fn clip_gradient(grad: &mut ModelParameters, max_norm: f64) -> f64 {
    let norm = gradient_norm(grad);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in grad.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Example order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "shuffle", epoch as u64));
    order
}

/// Objective on `examples` with deterministic latents, averaged over
/// batches weighted by size.
pub fn evaluate(
    examples: &[Example],
    params: &ModelParameters,
    config: &ModelConfig,
    stop_flags: &[bool],
    batch_size: usize,
) -> Result<LossBreakdown, ObjectiveError> {
    let mut acc = LossBreakdown::default();
    if examples.is_empty() {
        return Ok(acc);
    }
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::from_examples(chunk, config.vocab_size);
        let fwd = forward(&batch, params, config, stop_flags, Latents::Deterministic)?;
        acc.scaled_add(&fwd.breakdown, chunk.len() as f64 / examples.len() as f64);
    }
    Ok(acc)
}

/// Train with the dev total as the early-stopping score.
pub fn train(
    data: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParameters, TrainHistory), TrainError> {
    train_with_monitor(data, model, config, |_, dev| dev.total)
}

/// As [`train`], with `monitor(epoch, dev_breakdown)` supplying the score
/// that early stopping maximizes.
pub fn train_with_monitor(
    data: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    mut monitor: impl FnMut(usize, &LossBreakdown) -> f64,
) -> Result<(ModelParameters, TrainHistory), TrainError> {
    model.validate()?;
    config.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(TrainError::InvalidConfig("train and dev splits must be non-empty".into()));
    }
    if data.vocab_size() != model.vocab_size {
        return Err(TrainError::InvalidConfig(format!(
            "dataset vocabulary has {} words, model expects {}",
            data.vocab_size(),
            model.vocab_size
        )));
    }

    let mut params = ModelParameters::init(model, config.seed);
    let mut best = params.clone();
    let mut optimizer = Adam::new(&params, config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = TrainHistory::default();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let order = epoch_order(data.train.len(), config.seed, epoch);
        let mut noise_rng = rng_for(config.seed, "noise", epoch as u64);
        let mut train_acc = LossBreakdown::default();
        let n = data.train.len() as f64;

        let diverged = |cause: String, best: &ModelParameters, history: &TrainHistory| TrainError::Diverged {
            epoch,
            cause,
            last_finite: Box::new(best.clone()),
            history: Box::new(history.clone()),
        };

        // Batches are densified on a helper thread, at most four ahead.
        let step_result = std::thread::scope(|scope| -> Result<(), TrainError> {
            let (tx, rx) = sync_channel::<Batch>(4);
            let order = &order;
            scope.spawn(move || {
                for rows in order.chunks(config.batch_size) {
                    let batch = Batch::from_examples(rows.iter().map(|&i| &data.train[i]), model.vocab_size);
                    if tx.send(batch).is_err() {
                        break;
                    }
                }
            });
            for batch in rx {
                let noise = Noise::sample(batch.len(), model.topics, model.roles, &mut noise_rng);
                let (loss, grads) = total_loss_and_grad(&batch, &params, model, &data.stop_flags, &noise)
                    .map_err(|e| diverged(e.to_string(), &best, &history))?;
                train_acc.scaled_add(&loss, batch.len() as f64 / n);
                let mut grad = grads.loss;
                if config.aux_update == AuxUpdate::Fit {
                    grad.mi_aux = grads.aux_fit;
                }
                if let Some(max) = config.clip_norm {
                    clip_gradient(&mut grad, max);
                }
                optimizer.step(&mut params, &grad);
                if !params.is_finite() {
                    return Err(diverged("non-finite parameters after update".into(), &best, &history));
                }
            }
            Ok(())
        });
        step_result?;

        let dev = evaluate(&data.dev, &params, model, &data.stop_flags, config.batch_size)
            .map_err(|e| diverged(e.to_string(), &best, &history))?;
        let score = monitor(epoch, &dev);
        let decision = stopper.update(epoch, score);
        if decision == StopDecision::Improved {
            best.clone_from(&params);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train: train_acc,
            dev,
            dev_score: score,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        history.best_epoch = stopper.best_epoch();
        if decision == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}

/// One cell of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub settings: BTreeMap<String, f64>,
    pub best_dev_total: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the selected configuration.
    pub best: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParameters,
    pub history: TrainHistory,
}

impl GridResult {
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let keys: Vec<&String> = self.cells.first().map(|c| c.settings.keys().collect()).unwrap_or_default();
        let header: Vec<&str> = keys.iter().map(|k| k.as_str()).collect();
        writeln!(out, "{},best_dev_total,best_epoch,epochs_run,selected", header.join(","))?;
        for (i, cell) in self.cells.iter().enumerate() {
            let values: Vec<String> = keys.iter().map(|k| cell.settings[*k].to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                values.join(","),
                cell.best_dev_total,
                cell.best_epoch,
                cell.epochs_run,
                u8::from(i == self.best)
            )?;
        }
        Ok(())
    }
}

/// Hyperparameter names accepted by [`grid_search`].
pub const GRID_KEYS: &[&str] = &[
    "lambda",
    "learning_rate",
    "batch_size",
    "topics",
    "roles",
    "tau",
    "stop_penalty",
    "topic_hidden",
    "disc_hidden",
];

/// Apply one named hyperparameter value.
pub fn apply_setting(model: &mut ModelConfig, train: &mut TrainConfig, key: &str, value: f64) -> Result<(), TrainError> {
    let count = |v: f64| -> Result<usize, TrainError> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(TrainError::InvalidConfig(format!("{key} must be a whole number, got {v}")))
        }
    };
    match key {
        "lambda" => model.lambda = value,
        "learning_rate" | "lr" => train.learning_rate = value,
        "batch_size" => train.batch_size = count(value)?,
        "topics" => model.topics = count(value)?,
        "roles" | "discourse" => model.roles = count(value)?,
        "tau" => model.tau = value,
        "stop_penalty" => model.stop_penalty = value,
        "topic_hidden" => model.topic_hidden = count(value)?,
        "disc_hidden" => model.disc_hidden = count(value)?,
        other => return Err(TrainError::InvalidConfig(format!("unknown grid key {other:?}"))),
    }
    Ok(())
}

/// Cartesian product of the grid, keys in sorted order.
pub fn grid_cells(grid: &BTreeMap<String, Vec<f64>>) -> Vec<BTreeMap<String, f64>> {
    let mut cells = vec![BTreeMap::new()];
    for (key, values) in grid {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |&v| {
                    let mut c = cell.clone();
                    c.insert(key.clone(), v);
                    c
                })
            })
            .collect();
    }
    cells
}

/// Train every cell of `grid` and keep the one with the highest best dev
/// total; ties go to the earlier cell.
pub fn grid_search(
    data: &Dataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    grid: &BTreeMap<String, Vec<f64>>,
) -> Result<GridResult, TrainError> {
    use rayon::prelude::*;

    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(TrainError::InvalidConfig("grid must have at least one value per key".into()));
    }
    let settings = grid_cells(grid);
    let mut configs = Vec::with_capacity(settings.len());
    for cell in &settings {
        let (mut m, mut t) = (base_model.clone(), base_train.clone());
        t.grid = None;
        for (k, &v) in cell {
            apply_setting(&mut m, &mut t, k, v)?;
        }
        configs.push((m, t));
    }
    let runs: Vec<Result<(ModelParameters, TrainHistory), TrainError>> =
        configs.par_iter().map(|(m, t)| train(data, m, t)).collect();

    let mut cells = Vec::with_capacity(runs.len());
    let mut outcomes = Vec::with_capacity(runs.len());
    for (setting, run) in settings.into_iter().zip(runs) {
        let (params, history) = run?;
        let best_dev_total = history.best().map_or(f64::NEG_INFINITY, |e| e.dev.total);
        cells.push(GridCell {
            settings: setting,
            best_dev_total,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
        });
        outcomes.push((params, history));
    }
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.best_dev_total > cells[best].best_dev_total {
            best = i;
        }
    }
    let (params, history) = outcomes.swap_remove(best);
    let (model, train) = configs.swap_remove(best);
    Ok(GridResult {
        cells,
        best,
        model,
        train,
        params,
        history,
    })
}
