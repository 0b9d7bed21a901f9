//! Variational encoder/decoder over conversation and message bag-of-words.
//!
//! The topic encoder maps a conversation vector to a Gaussian latent `z`,
//! turned into a topic mixture `θ = softmax(f_θ(z))`. The discourse encoder
//! maps the target message to role probabilities `π`, relaxed into a
//! near-one-hot `d` with Gumbel-softmax. The decoder produces the word
//! distribution `β = softmax(f_φT(θ) + f_φD(d))`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BowVector;
use crate::nn::{argmax, log_softmax, one_hot, relu, softmax, softmax_rows, Affine, PROB_FLOOR};
use crate::seed::rng_for;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected length {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

/// Which distribution stands in for `p(d)` in the mutual-information term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MiMarginal {
    /// Within-batch mean of the role posteriors.
    #[default]
    Batch,
    Uniform,
}

impl std::str::FromStr for MiMarginal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(Self::Batch),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown mi_marginal {other:?} (expected batch or uniform)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of topics `K`.
    pub topics: usize,
    /// Number of discourse roles `D`.
    pub roles: usize,
    pub vocab_size: usize,
    pub topic_hidden: usize,
    /// Hidden width of the discourse encoder; 0 means a single affine map.
    pub disc_hidden: usize,
    /// Gumbel-softmax temperature.
    pub tau: f64,
    /// Weight of the mutual-information penalty.
    pub lambda: f64,
    /// Logit subtracted from stop-flagged words in the topic likelihood.
    pub stop_penalty: f64,
    #[serde(default)]
    pub mi_marginal: MiMarginal,
}

impl ModelConfig {
    pub const DEFAULT_TOPIC_HIDDEN: usize = 200;
    pub const DEFAULT_DISC_HIDDEN: usize = 100;
    pub const DEFAULT_TAU: f64 = 0.5;
    pub const DEFAULT_LAMBDA: f64 = 0.01;
    pub const DEFAULT_STOP_PENALTY: f64 = 5.0;

    pub fn new(topics: usize, roles: usize, vocab_size: usize) -> Self {
        Self {
            topics,
            roles,
            vocab_size,
            topic_hidden: Self::DEFAULT_TOPIC_HIDDEN,
            disc_hidden: Self::DEFAULT_DISC_HIDDEN,
            tau: Self::DEFAULT_TAU,
            lambda: Self::DEFAULT_LAMBDA,
            stop_penalty: Self::DEFAULT_STOP_PENALTY,
            mi_marginal: MiMarginal::Batch,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.topics < 2 {
            return bad(format!("topics must be at least 2, got {}", self.topics));
        }
        if self.roles < 2 {
            return bad(format!("roles must be at least 2, got {}", self.roles));
        }
        if self.vocab_size < 1 {
            return bad("vocabulary is empty".into());
        }
        if self.topic_hidden < 1 {
            return bad("topic_hidden must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.stop_penalty >= 0.0 && self.stop_penalty.is_finite()) {
            return bad(format!("stop_penalty must be non-negative, got {}", self.stop_penalty));
        }
        Ok(())
    }
}

/// All learnable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// `f_e`: conversation BoW → hidden (ReLU).
    pub topic_hidden: Affine,
    /// `f_μ`
    pub mu: Affine,
    /// `f_σ`, producing log σ.
    pub log_sigma: Affine,
    /// Optional hidden layer (ReLU) of `f_π`.
    pub disc_hidden: Option<Affine>,
    /// Output layer of `f_π`.
    pub disc_logits: Affine,
    /// `f_θ`: z → topic-mixture logits.
    pub topic_mixture: Affine,
    /// `f_φT`: θ → vocabulary logits; weight rows are topic-word logits.
    pub topic_words: Affine,
    /// `f_φD`: d → vocabulary logits; weight rows are role-word logits.
    pub disc_words: Affine,
    /// Affine map θ → role logits parameterizing `p(d | z)`.
    pub mi_aux: Affine,
}

/// Uniform initialization half-width for weights.
pub const INIT_SCALE: f64 = 0.05;

impl ModelParameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (v, k, d) = (config.vocab_size, config.topics, config.roles);
        let disc_in = if config.disc_hidden > 0 { config.disc_hidden } else { v };
        Self {
            topic_hidden: Affine::zeros(v, config.topic_hidden),
            mu: Affine::zeros(config.topic_hidden, k),
            log_sigma: Affine::zeros(config.topic_hidden, k),
            disc_hidden: (config.disc_hidden > 0).then(|| Affine::zeros(v, config.disc_hidden)),
            disc_logits: Affine::zeros(disc_in, d),
            topic_mixture: Affine::zeros(k, k),
            topic_words: Affine::zeros(k, v),
            disc_words: Affine::zeros(d, v),
            mi_aux: Affine::zeros(k, d),
        }
    }

    /// Weights uniform in ±[`INIT_SCALE`], biases zero, drawn from a
    /// generator derived from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init", 0);
        let mut params = Self::zeros(config);
        for (_, layer) in params.layers_mut() {
            *layer = Affine::uniform(layer.inputs(), layer.outputs(), INIT_SCALE, &mut rng);
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, layer) in out.layers_mut() {
            *layer = layer.zeros_like();
        }
        out
    }

    pub fn layers(&self) -> Vec<(&'static str, &Affine)> {
        let mut out = vec![
            ("topic_encoder.hidden", &self.topic_hidden),
            ("topic_encoder.mu", &self.mu),
            ("topic_encoder.log_sigma", &self.log_sigma),
        ];
        if let Some(h) = &self.disc_hidden {
            out.push(("disc_encoder.hidden", h));
        }
        out.extend([
            ("disc_encoder.logits", &self.disc_logits),
            ("topic_mixture", &self.topic_mixture),
            ("topic_decoder", &self.topic_words),
            ("disc_decoder", &self.disc_words),
            ("mi_aux", &self.mi_aux),
        ]);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(&'static str, &mut Affine)> {
        let mut out = vec![
            ("topic_encoder.hidden", &mut self.topic_hidden),
            ("topic_encoder.mu", &mut self.mu),
            ("topic_encoder.log_sigma", &mut self.log_sigma),
        ];
        if let Some(h) = &mut self.disc_hidden {
            out.push(("disc_encoder.hidden", h));
        }
        out.extend([
            ("disc_encoder.logits", &mut self.disc_logits),
            ("topic_mixture", &mut self.topic_mixture),
            ("topic_decoder", &mut self.topic_words),
            ("disc_decoder", &mut self.disc_words),
            ("mi_aux", &mut self.mi_aux),
        ]);
        out
    }

    /// Every tensor as `(name, shape, values)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, layer) in self.layers() {
            out.push((
                format!("{name}.weight"),
                layer.weight.shape().to_vec(),
                layer.weight.as_slice().expect("weights are contiguous"),
            ));
            out.push((
                format!("{name}.bias"),
                layer.bias.shape().to_vec(),
                layer.bias.as_slice().expect("biases are contiguous"),
            ));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (name, layer) in self.layers_mut() {
            out.push((
                format!("{name}.weight"),
                layer.weight.as_slice_mut().expect("weights are contiguous"),
            ));
            out.push((
                format!("{name}.bias"),
                layer.bias.as_slice_mut().expect("biases are contiguous"),
            ));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|(_, l)| l.is_finite())
    }

    pub fn vocab_size(&self) -> usize {
        self.topic_words.outputs()
    }

    pub fn topics(&self) -> usize {
        self.topic_words.inputs()
    }

    pub fn roles(&self) -> usize {
        self.disc_words.inputs()
    }

    fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), ModelError> {
        if expected == actual {
            Ok(())
        } else {
            Err(ModelError::Shape {
                what,
                expected,
                actual,
            })
        }
    }

    /// `(μ, log σ)` of `q(z | c)`.
    pub fn encode_topic(&self, context: &BowVector) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
        Self::check_len("conversation vector", self.vocab_size(), context.dim())?;
        let x = context.to_array();
        let hidden = self.topic_hidden.forward_one(&x.view()).mapv(|v| v.max(0.0));
        Ok((
            self.mu.forward_one(&hidden.view()),
            self.log_sigma.forward_one(&hidden.view()),
        ))
    }

    /// `θ = softmax(f_θ(z))`.
    pub fn topic_mixture(&self, z: &ArrayView1<f64>) -> Array1<f64> {
        softmax(&self.topic_mixture.forward_one(z).view())
    }

    /// Role logits `f_π(x)` before the softmax.
    pub fn discourse_logits(&self, message: &ArrayView1<f64>) -> Array1<f64> {
        match &self.disc_hidden {
            Some(h) => {
                let hidden = h.forward_one(message).mapv(|v| v.max(0.0));
                self.disc_logits.forward_one(&hidden.view())
            }
            None => self.disc_logits.forward_one(message),
        }
    }

    /// `π = softmax(f_π(x))`.
    pub fn encode_discourse(&self, message: &BowVector) -> Result<Array1<f64>, ModelError> {
        Self::check_len("message vector", self.vocab_size(), message.dim())?;
        Ok(softmax(&self.discourse_logits(&message.to_array().view()).view()))
    }

    /// Vocabulary logits `f_φT(θ) + f_φD(d)`.
    pub fn decoder_logits(&self, theta: &ArrayView1<f64>, d: &ArrayView1<f64>) -> Array1<f64> {
        self.topic_words.forward_one(theta) + self.disc_words.forward_one(d)
    }

    /// Word distribution `β`, shared by every word position of the message.
    pub fn decode(&self, theta: &ArrayView1<f64>, d: &ArrayView1<f64>) -> Array1<f64> {
        softmax(&self.decoder_logits(theta, d).view())
    }

    /// `φ^T`: row-wise softmax of the topic decoder weights (K × V), read
    /// in the centered form of [`centered_rows`].
    pub fn topic_word_matrix(&self) -> Array2<f64> {
        softmax_rows(&centered_rows(&self.topic_words.weight))
    }

    /// `φ^D`: as [`ModelParameters::topic_word_matrix`] for the discourse
    /// decoder (D × V).
    pub fn discourse_word_matrix(&self) -> Array2<f64> {
        softmax_rows(&centered_rows(&self.disc_words.weight))
    }

    /// `p(w | z)` for a topic mixture: softmax of `f_φT(θ)`.
    pub fn topic_word_probs(&self, theta: &ArrayView1<f64>) -> Array1<f64> {
        softmax(&self.topic_words.forward_one(theta).view())
    }

    /// `p(w | d)` for a role vector: softmax of `f_φD(d)`.
    pub fn discourse_word_probs(&self, d: &ArrayView1<f64>) -> Array1<f64> {
        softmax(&self.disc_words.forward_one(d).view())
    }

    /// Deterministic evaluation path: `θ` from `μ` (no sampling) and the
    /// hard role at `argmax π`.
    pub fn infer(&self, message: &BowVector, context: &BowVector) -> Result<Inference, ModelError> {
        let (mu, _) = self.encode_topic(context)?;
        let theta = self.topic_mixture(&mu.view());
        let pi = self.encode_discourse(message)?;
        let role = argmax(&pi.view());
        Ok(Inference {
            theta,
            d_hard: one_hot(pi.len(), role),
            pi,
            role,
        })
    }
}

/// Subtract the column means across rows.
///
/// The decoders only ever see inputs on the simplex (`θ`, `d`), so adding
/// one vector to every weight row is indistinguishable from adding it to
/// the bias. Removing the shared part picks the representative whose rows
/// carry only what distinguishes one topic (or role) from the others.
pub fn centered_rows(weight: &Array2<f64>) -> Array2<f64> {
    match weight.mean_axis(Axis(0)) {
        Some(mean) => weight - &mean,
        None => weight.clone(),
    }
}

/// Deterministic latents for one message.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub theta: Array1<f64>,
    pub pi: Array1<f64>,
    pub d_hard: Array1<f64>,
    pub role: usize,
}

/// Variational state of the topic latent for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicLatent {
    pub mu: Array1<f64>,
    pub log_sigma: Array1<f64>,
    pub z: Array1<f64>,
    pub theta: Array1<f64>,
}

/// Variational state of the discourse latent for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseLatent {
    pub pi: Array1<f64>,
    pub d: Array1<f64>,
}

/// Reparameterized Gaussian draw `z = μ + exp(log σ) ⊙ ε`.
pub fn sample_topic(mu: &ArrayView1<f64>, log_sigma: &ArrayView1<f64>, epsilon: &ArrayView1<f64>) -> Array1<f64> {
    assert_eq!(mu.len(), log_sigma.len());
    assert_eq!(mu.len(), epsilon.len());
    mu + &(log_sigma.mapv(f64::exp) * epsilon)
}

/// Gumbel-softmax relaxation `d = softmax((log π + g) / τ)`; `π` is floored
/// at [`PROB_FLOOR`] before the log.
pub fn sample_discourse(pi: &ArrayView1<f64>, tau: f64, gumbel: &ArrayView1<f64>) -> Array1<f64> {
    assert_eq!(pi.len(), gumbel.len());
    let logits = pi.mapv(|p| p.max(PROB_FLOOR).ln()) + gumbel;
    softmax(&(logits / tau).view())
}

pub fn standard_normal<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || StandardNormal.sample(rng))
}

/// Standard Gumbel draws `−log(−log u)`, `u ∈ (0, 1)`.
pub fn gumbel<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

/// Full stochastic forward pass for a single example.
pub fn sample_latents<R: Rng + ?Sized>(
    params: &ModelParameters,
    config: &ModelConfig,
    message: &BowVector,
    context: &BowVector,
    rng: &mut R,
) -> Result<(TopicLatent, DiscourseLatent), ModelError> {
    let (mu, log_sigma) = params.encode_topic(context)?;
    let eps = standard_normal(mu.len(), rng);
    let z = sample_topic(&mu.view(), &log_sigma.view(), &eps.view());
    let theta = params.topic_mixture(&z.view());
    let pi = params.encode_discourse(message)?;
    let g = gumbel(pi.len(), rng);
    let d = sample_discourse(&pi.view(), config.tau, &g.view());
    Ok((
        TopicLatent {
            mu,
            log_sigma,
            z,
            theta,
        },
        DiscourseLatent { pi, d },
    ))
}

/// Batched deterministic inference: rows of `θ` and `π` for a batch.
pub fn infer_batch(params: &ModelParameters, messages: &Array2<f64>, contexts: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let hidden = relu(&params.topic_hidden.forward(&contexts.view()));
    let mu = params.mu.forward(&hidden.view());
    let theta = softmax_rows(&params.topic_mixture.forward(&mu.view()));
    let disc_in = match &params.disc_hidden {
        Some(h) => relu(&h.forward(&messages.view())),
        None => messages.clone(),
    };
    let pi = softmax_rows(&params.disc_logits.forward(&disc_in.view()));
    (theta, pi)
}

/// Log-probabilities of a role vector, floored.
pub fn floored_log(p: &ArrayView1<f64>) -> Array1<f64> {
    p.mapv(|v| v.max(PROB_FLOOR).ln())
}

/// Role probabilities directly from logits, via log-softmax for stability.
pub fn role_log_probs(logits: &ArrayView1<f64>) -> Array1<f64> {
    log_softmax(logits)
}

/// Mean of the rows of `m`.
pub fn row_mean(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("non-empty batch")
}
