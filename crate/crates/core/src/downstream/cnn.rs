use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{classification_metrics, DownstreamError, Holdout, Metrics};
use crate::corpus::Example;
use crate::model::{infer_batch, ModelConfig, ModelParameters};
use crate::nn::{argmax, log_softmax, softmax, Affine, AdamMoments};
use crate::objectives::{encoder_backward, total_loss_and_grad, Batch, Noise};
use crate::seed::rng_for;
use crate::trainer::{clip_gradient, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub embedding_dim: usize,
    /// Convolution widths in tokens; each gets `feature_maps` filters.
    pub widths: Vec<usize>,
    pub feature_maps: usize,
    /// Dropout rate on the pooled convolution features during training.
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight on the topic model's negated objective in joint training.
    /// Zero leaves only the classifier loss.
    pub topic_loss_weight: f64,
    /// Clip the global gradient norm of each step.
    pub clip_norm: Option<f64>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 200,
            widths: vec![3, 4, 5],
            feature_maps: 100,
            dropout: 0.5,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            topic_loss_weight: 1.0,
            clip_norm: Some(5.0),
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        if self.embedding_dim == 0 || self.feature_maps == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(DownstreamError::Invalid("embedding size, widths and feature maps must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(DownstreamError::Invalid("learning rate, epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DownstreamError::Invalid("dropout must lie in [0, 1)".into()));
        }
        if !(self.topic_loss_weight >= 0.0) {
            return Err(DownstreamError::Invalid("topic loss weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// What the classifier sees besides the word sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CnnMode {
    /// Words only.
    CnnOnly,
    /// Words plus `[θ; π]` from a frozen topic model.
    Separate,
    /// Words plus `[θ; π]`, with the topic model trained alongside.
    Joint,
}

/// One classification example: vocabulary ids in order, its bag-of-words
/// view for the topic model, and a class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMessage {
    pub tokens: Vec<usize>,
    pub example: Example,
    pub label: usize,
}

/// Convolutional text classifier with max-over-time pooling whose pooled
/// vector is concatenated with optional extra features.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCnn {
    /// Row 0 is padding and stays zero; word `i` is row `i + 1`.
    pub embedding: Array2<f64>,
    /// One map per width, `(width · embedding_dim) × feature_maps`.
    pub filters: Vec<Affine>,
    pub output: Affine,
    pub widths: Vec<usize>,
    pub extra_features: usize,
}

struct Trace {
    ids: Vec<usize>,
    /// Pooled values before dropout.
    pooled: Vec<f64>,
    windows: Vec<Array2<f64>>,
    argmax: Vec<Vec<usize>>,
    /// Inverted-dropout multipliers of the pooled features.
    mask: Option<Array1<f64>>,
    hidden: Array1<f64>,
    logits: Array1<f64>,
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &ArrayView1<f64>, label: usize) -> f64 {
    -log_softmax(logits)[label]
}

impl TextCnn {
    pub fn new(vocab_size: usize, classes: usize, extra_features: usize, config: &CnnConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "cnn-init", 0);
        let e = config.embedding_dim;
        let mut embedding = Array2::from_shape_simple_fn((vocab_size + 1, e), || {
            rand::Rng::random_range(&mut rng, -0.25..=0.25)
        });
        embedding.row_mut(0).fill(0.0);
        let filters = config
            .widths
            .iter()
            .map(|&w| Affine::uniform(w * e, config.feature_maps, (1.0 / (w * e) as f64).sqrt(), &mut rng))
            .collect();
        let hidden = config.widths.len() * config.feature_maps + extra_features;
        let output = Affine::uniform(hidden, classes, (1.0 / hidden as f64).sqrt(), &mut rng);
        Self {
            embedding,
            filters,
            output,
            widths: config.widths.clone(),
            extra_features,
        }
    }

    pub fn classes(&self) -> usize {
        self.output.outputs()
    }

    fn zeros_like(&self) -> Self {
        Self {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            filters: self.filters.iter().map(Affine::zeros_like).collect(),
            output: self.output.zeros_like(),
            widths: self.widths.clone(),
            extra_features: self.extra_features,
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embedding.as_slice().expect("contiguous")];
        for f in self.filters.iter().chain(std::iter::once(&self.output)) {
            out.push(f.weight.as_slice().expect("contiguous"));
            out.push(f.bias.as_slice().expect("contiguous"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embedding.as_slice_mut().expect("contiguous")];
        for f in self.filters.iter_mut().chain(std::iter::once(&mut self.output)) {
            out.push(f.weight.as_slice_mut().expect("contiguous"));
            out.push(f.bias.as_slice_mut().expect("contiguous"));
        }
        out
    }

    fn forward(&self, tokens: &[usize], extra: &ArrayView1<f64>, mask: Option<Array1<f64>>) -> Trace {
        let e = self.embedding.ncols();
        let widest = self.widths.iter().copied().max().unwrap_or(1);
        let mut ids: Vec<usize> = tokens.iter().map(|&t| t + 1).collect();
        ids.resize(ids.len().max(widest), 0);

        let mut windows = Vec::with_capacity(self.widths.len());
        let mut argmax_rows = Vec::with_capacity(self.widths.len());
        let mut hidden = Vec::with_capacity(self.output.inputs());
        for (&w, filter) in self.widths.iter().zip(&self.filters) {
            let positions = ids.len() - w + 1;
            let mut u = Array2::zeros((positions, w * e));
            for r in 0..positions {
                for j in 0..w {
                    u.slice_mut(s![r, j * e..(j + 1) * e]).assign(&self.embedding.row(ids[r + j]));
                }
            }
            let pre = filter.forward(&u.view());
            let mut best = Vec::with_capacity(pre.ncols());
            for col in pre.columns() {
                let r = argmax(&col);
                best.push(r);
                hidden.push(col[r].max(0.0));
            }
            windows.push(u);
            argmax_rows.push(best);
        }
        let pooled = hidden.clone();
        if let Some(m) = &mask {
            hidden.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
        }
        hidden.extend(extra.iter().copied());
        let hidden = Array1::from(hidden);
        let logits = self.output.forward_one(&hidden.view());
        Trace {
            ids,
            pooled,
            windows,
            argmax: argmax_rows,
            mask,
            hidden,
            logits,
        }
    }

    /// Accumulate gradients for upstream `d_logits`; returns the gradient
    /// with respect to the extra features.
    fn backward(&self, trace: &Trace, d_logits: &Array1<f64>, grad: &mut TextCnn) -> Array1<f64> {
        let e = self.embedding.ncols();
        let h = trace.hidden.view().insert_axis(Axis(1));
        grad.output.weight += &h.dot(&d_logits.view().insert_axis(Axis(0)));
        grad.output.bias += d_logits;
        let mut d_hidden = self.output.weight.dot(d_logits);
        if let Some(m) = &trace.mask {
            d_hidden.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }

        let maps = self.filters.first().map_or(0, Affine::outputs);
        for (i, (&w, filter)) in self.widths.iter().zip(&self.filters).enumerate() {
            let u = &trace.windows[i];
            let mut d_u = Array2::<f64>::zeros(u.raw_dim());
            for f in 0..maps {
                let slot = i * maps + f;
                let g = d_hidden[slot];
                if g == 0.0 || trace.pooled[slot] <= 0.0 {
                    continue;
                }
                let r = trace.argmax[i][f];
                grad.filters[i].weight.column_mut(f).scaled_add(g, &u.row(r));
                grad.filters[i].bias[f] += g;
                d_u.row_mut(r).scaled_add(g, &filter.weight.column(f));
            }
            for r in 0..d_u.nrows() {
                for j in 0..w {
                    let id = trace.ids[r + j];
                    if id != 0 {
                        grad.embedding.row_mut(id).scaled_add(1.0, &d_u.slice(s![r, j * e..(j + 1) * e]));
                    }
                }
            }
        }
        d_hidden.slice(s![self.widths.len() * maps..]).to_owned()
    }

    pub fn logits(&self, tokens: &[usize], extra: &ArrayView1<f64>) -> Array1<f64> {
        self.forward(tokens, extra, None).logits
    }

    pub fn predict(&self, tokens: &[usize], extra: &ArrayView1<f64>) -> usize {
        argmax(&self.logits(tokens, extra).view())
    }

    /// Mean cross-entropy of a batch; accumulates parameter gradients and
    /// returns the per-row gradient with respect to the extra features.
    fn batch_grad<R: Rng + ?Sized>(
        &self,
        messages: &[&LabeledMessage],
        extra: &Array2<f64>,
        dropout: f64,
        rng: &mut R,
        grad: &mut TextCnn,
    ) -> (f64, Array2<f64>) {
        let pooled = self.widths.len() * self.filters.first().map_or(0, Affine::outputs);
        let n = messages.len() as f64;
        let mut loss = 0.0;
        let mut d_extra = Array2::zeros((messages.len(), self.extra_features));
        for (row, m) in messages.iter().enumerate() {
            let mask = (dropout > 0.0).then(|| {
                Array1::from_shape_simple_fn(pooled, || {
                    if rng.random::<f64>() < dropout {
                        0.0
                    } else {
                        1.0 / (1.0 - dropout)
                    }
                })
            });
            let trace = self.forward(&m.tokens, &extra.row(row), mask);
            loss += cross_entropy(&trace.logits.view(), m.label);
            let mut d = softmax(&trace.logits.view());
            d[m.label] -= 1.0;
            d /= n;
            let dx = self.backward(&trace, &d, grad);
            d_extra.row_mut(row).assign(&dx);
        }
        (loss / n, d_extra)
    }
}

struct CnnAdam {
    step: i32,
    moments: Vec<AdamMoments>,
}

impl CnnAdam {
    fn new(cnn: &TextCnn) -> Self {
        Self {
            step: 0,
            moments: cnn.tensors().iter().map(|t| AdamMoments::new(t.len())).collect(),
        }
    }

    fn step(&mut self, cnn: &mut TextCnn, grad: &TextCnn, learning_rate: f64) {
        self.step += 1;
        for ((p, g), m) in cnn.tensors_mut().into_iter().zip(grad.tensors()).zip(&mut self.moments) {
            m.update(p, g, self.step, learning_rate);
        }
        cnn.embedding.row_mut(0).fill(0.0);
    }
}

fn squared_norm<'a>(tensors: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    tensors.into_iter().flat_map(|t| t.iter()).map(|g| g * g).sum()
}

/// Labeled messages with a train / held-out partition.
#[derive(Debug, Clone, Copy)]
pub struct CnnTask<'a> {
    pub messages: &'a [LabeledMessage],
    pub classes: usize,
    pub vocab_size: usize,
    pub split: &'a Holdout,
}

/// Topic model attached to a run.
#[derive(Debug, Clone, Copy)]
pub struct TopicModel<'a> {
    pub params: &'a ModelParameters,
    pub config: &'a ModelConfig,
    pub stop_flags: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct CnnRun {
    pub mode: CnnMode,
    pub cnn: TextCnn,
    /// Topic parameters after training; changed only in joint mode.
    pub params: Option<ModelParameters>,
    pub train_loss: Vec<f64>,
    pub metrics: Metrics,
}

fn features_for(messages: &[&LabeledMessage], params: Option<&ModelParameters>) -> Array2<f64> {
    match params {
        None => Array2::zeros((messages.len(), 0)),
        Some(p) => {
            let batch = Batch::from_examples(messages.iter().map(|m| &m.example), p.vocab_size());
            let (theta, pi) = infer_batch(p, &batch.messages, &batch.contexts);
            ndarray::concatenate![Axis(1), theta, pi]
        }
    }
}

/// Train a [`TextCnn`] in the given mode and score it on the held-out rows.
pub fn train_text_cnn(
    task: &CnnTask<'_>,
    mode: CnnMode,
    topic: Option<TopicModel<'_>>,
    config: &CnnConfig,
    seed: u64,
) -> Result<CnnRun, DownstreamError> {
    config.validate()?;
    if task.split.train.is_empty() || task.split.test.is_empty() {
        return Err(DownstreamError::Empty("train and held-out splits must be non-empty"));
    }
    let mut present: Vec<usize> = task.split.train.iter().map(|&i| task.messages[i].label).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(DownstreamError::SingleClass);
    }
    if let Some(m) = task.messages.iter().find(|m| m.label >= task.classes) {
        return Err(DownstreamError::Invalid(format!("class {} out of range", m.label)));
    }
    if let Some(m) = task.messages.iter().find(|m| m.tokens.iter().any(|&t| t >= task.vocab_size)) {
        return Err(DownstreamError::Invalid(format!("token id beyond vocabulary in {:?}", m.tokens)));
    }
    let topic = match (mode, topic) {
        (CnnMode::CnnOnly, _) => None,
        (_, Some(t)) => {
            t.config.validate()?;
            Some(t)
        }
        (_, None) => return Err(DownstreamError::Invalid("this mode needs a topic model".into())),
    };
    let extra = topic.map_or(0, |t| t.params.topics() + t.params.roles());

    let mut cnn = TextCnn::new(task.vocab_size, task.classes, extra, config, seed);
    let mut cnn_adam = CnnAdam::new(&cnn);
    let mut params = topic.map(|t| t.params.clone());
    let mut topic_adam = params.as_ref().map(|p| Adam::new(p, config.learning_rate));

    let frozen: Option<Array2<f64>> = match mode {
        CnnMode::Separate => {
            let all: Vec<&LabeledMessage> = task.messages.iter().collect();
            Some(features_for(&all, params.as_ref()))
        }
        _ => None,
    };

    let mut order = task.split.train.clone();
    let mut train_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_for(seed, "cnn-shuffle", epoch as u64));
        let mut noise_rng = rng_for(seed, "cnn-noise", epoch as u64);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledMessage> = chunk.iter().map(|&i| &task.messages[i]).collect();
            let feats = match (&frozen, mode) {
                (Some(f), _) => f.select(Axis(0), chunk),
                (None, CnnMode::Joint) => features_for(&batch, params.as_ref()),
                (None, _) => Array2::zeros((batch.len(), 0)),
            };
            let mut grad = cnn.zeros_like();
            let (loss, d_feats) = cnn.batch_grad(&batch, &feats, config.dropout, &mut noise_rng, &mut grad);
            total += loss;
            batches += 1;

            let mut topic_grad = None;
            if let (CnnMode::Joint, Some(p), Some(t)) = (mode, params.as_ref(), topic) {
                let k = p.topics();
                let bow = Batch::from_examples(batch.iter().map(|m| &m.example), p.vocab_size());
                let d_theta = d_feats.slice(s![.., ..k]).to_owned();
                let d_pi = d_feats.slice(s![.., k..]).to_owned();
                let mut g = encoder_backward(&bow, p, &d_theta, &d_pi);
                if config.topic_loss_weight > 0.0 {
                    let noise = Noise::sample(bow.len(), k, p.roles(), &mut noise_rng);
                    let (_, grads) = total_loss_and_grad(&bow, p, t.config, t.stop_flags, &noise)?;
                    for ((_, a), (_, _, b)) in g.tensors_mut().into_iter().zip(grads.loss.tensors()) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += config.topic_loss_weight * y);
                    }
                    g.mi_aux = grads.aux_fit;
                }
                topic_grad = Some(g);
            }

            // Each component is clipped on its own norm; the topic objective
            // is a sum over words and would otherwise swamp the classifier.
            if let Some(max) = config.clip_norm {
                let norm = squared_norm(grad.tensors()).sqrt();
                if norm > max {
                    grad.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v *= max / norm));
                }
                if let Some(g) = &mut topic_grad {
                    clip_gradient(g, max);
                }
            }
            cnn_adam.step(&mut cnn, &grad, config.learning_rate);
            if let (Some(p), Some(g), Some(adam)) = (params.as_mut(), &topic_grad, topic_adam.as_mut()) {
                adam.step(p, g);
            }
        }
        let mean = total / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(DownstreamError::Invalid(format!("classifier loss diverged in epoch {}", epoch + 1)));
        }
        train_loss.push(mean);
    }

    let test: Vec<&LabeledMessage> = task.split.test.iter().map(|&i| &task.messages[i]).collect();
    let feats = match &frozen {
        Some(f) => f.select(Axis(0), &task.split.test),
        None => features_for(&test, if mode == CnnMode::Joint { params.as_ref() } else { None }),
    };
    let predicted: Vec<usize> = test
        .iter()
        .enumerate()
        .map(|(r, m)| cnn.predict(&m.tokens, &feats.row(r)))
        .collect();
    let gold: Vec<usize> = test.iter().map(|m| m.label).collect();
    let metrics = classification_metrics(&predicted, &gold, task.classes)?;
    Ok(CnnRun {
        mode,
        cnn,
        params,
        train_loss,
        metrics,
    })
}

/// Separate-train baseline (frozen `[θ; π]`) and joint training from the
/// same pretrained topic model, seed and split.
#[derive(Debug, Clone)]
pub struct JointReport {
    pub separate: CnnRun,
    pub joint: CnnRun,
}

pub fn joint_train(
    task: &CnnTask<'_>,
    pretrained: TopicModel<'_>,
    config: &CnnConfig,
    seed: u64,
) -> Result<JointReport, DownstreamError> {
    let separate = train_text_cnn(task, CnnMode::Separate, Some(pretrained), config, seed)?;
    let joint = train_text_cnn(task, CnnMode::Joint, Some(pretrained), config, seed)?;
    Ok(JointReport { separate, joint })
}
