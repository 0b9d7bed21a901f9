//! Training objectives and their analytic gradients.
//!
//! The objective being maximized is
//! `L = L_z + L_d + L_x − λ·L_MI`, averaged over a batch:
//!
//! * `L_z`: topic-decoder log-likelihood of the conversation vector (with
//!   stop-flagged words penalized) minus `KL(q(z|c) ‖ N(0, I))`;
//! * `L_d`: discourse-decoder log-likelihood of the message minus
//!   `KL(q(d|x) ‖ Uniform)`;
//! * `L_x`: log-likelihood of the message under the joint decoder;
//! * `L_MI`: `KL(p(d|z) ‖ p(d))`, with `p(d|z)` given by an auxiliary
//!   affine map of `θ` and `p(d)` the batch mean of `π` (or uniform).
//!
//! Expectations use one reparameterized sample per example.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BowVector, Example};
use crate::model::{gumbel, standard_normal, MiMarginal, ModelConfig, ModelParameters};
use crate::nn::{
    argmax, log_softmax, log_softmax_rows, relu, relu_backward, softmax_rows, softmax_rows_backward,
    Affine, PROB_FLOOR,
};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("reference distribution is zero at index {0} where the other has mass")]
    ZeroSupport(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Per-batch means of each term, natural log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_z: f64,
    pub l_d: f64,
    pub l_x: f64,
    pub l_mi: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(l_z: f64, l_d: f64, l_x: f64, l_mi: f64, lambda: f64) -> Self {
        Self {
            l_z,
            l_d,
            l_x,
            l_mi,
            total: l_z + l_d + l_x - lambda * l_mi,
        }
    }

    fn check_finite(&self) -> Result<(), ObjectiveError> {
        for (name, value) in [
            ("l_z", self.l_z),
            ("l_d", self.l_d),
            ("l_x", self.l_x),
            ("l_mi", self.l_mi),
            ("total", self.total),
        ] {
            if !value.is_finite() {
                return Err(ObjectiveError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Weighted accumulation used for epoch averages.
    pub fn scaled_add(&mut self, other: &LossBreakdown, weight: f64) {
        self.l_z += weight * other.l_z;
        self.l_d += weight * other.l_d;
        self.l_x += weight * other.l_x;
        self.l_mi += weight * other.l_mi;
        self.total += weight * other.total;
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I))` in closed form.
pub fn gaussian_kld(mu: &ArrayView1<f64>, log_sigma: &ArrayView1<f64>) -> Result<f64, ObjectiveError> {
    if mu.len() != log_sigma.len() {
        return Err(ObjectiveError::Invalid(format!(
            "mu has length {}, log_sigma {}",
            mu.len(),
            log_sigma.len()
        )));
    }
    if mu.iter().chain(log_sigma.iter()).any(|v| !v.is_finite()) {
        return Err(ObjectiveError::NonFinite("gaussian_kld input"));
    }
    let kl = -0.5
        * mu.iter()
            .zip(log_sigma.iter())
            .map(|(&m, &ls)| 1.0 + 2.0 * ls - m * m - (2.0 * ls).exp())
            .sum::<f64>();
    Ok(kl.max(0.0))
}

/// `Σ q_i log(q_i / p_i)` with `0·log 0 = 0`.
pub fn categorical_kld(q: &ArrayView1<f64>, p: &ArrayView1<f64>) -> Result<f64, ObjectiveError> {
    if q.len() != p.len() {
        return Err(ObjectiveError::Invalid(format!(
            "distributions have lengths {} and {}",
            q.len(),
            p.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p.iter()).enumerate() {
        if qi <= 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return Err(ObjectiveError::ZeroSupport(i));
        }
        total += qi * (qi / pi).ln();
    }
    Ok(total.max(0.0))
}

fn log_likelihood(counts: &BowVector, log_probs: &ArrayView1<f64>) -> f64 {
    counts
        .entries()
        .iter()
        .map(|&(i, c)| f64::from(c) * log_probs[i as usize])
        .sum()
}

/// Topic-side lower bound for one example: conversation log-likelihood under
/// `softmax(f_φT(θ) − Δ·stop)` minus the Gaussian KL term.
pub fn loss_z(
    context: &BowVector,
    theta: &ArrayView1<f64>,
    mu: &ArrayView1<f64>,
    log_sigma: &ArrayView1<f64>,
    params: &ModelParameters,
    stop_flags: &[bool],
    stop_penalty: f64,
) -> Result<f64, ObjectiveError> {
    let mut logits = params.topic_words.forward_one(theta);
    for (l, &stop) in logits.iter_mut().zip(stop_flags) {
        if stop {
            *l -= stop_penalty;
        }
    }
    let log_p = log_softmax(&logits.view());
    Ok(log_likelihood(context, &log_p.view()) - gaussian_kld(mu, log_sigma)?)
}

/// Discourse-side lower bound for one example: message log-likelihood under
/// `softmax(f_φD(d))` minus `KL(π ‖ Uniform)`.
pub fn loss_d(
    message: &BowVector,
    pi: &ArrayView1<f64>,
    d: &ArrayView1<f64>,
    params: &ModelParameters,
) -> Result<f64, ObjectiveError> {
    let log_p = log_softmax(&params.disc_words.forward_one(d).view());
    let uniform = Array1::from_elem(pi.len(), 1.0 / pi.len() as f64);
    Ok(log_likelihood(message, &log_p.view()) - categorical_kld(pi, &uniform.view())?)
}

/// Reconstruction log-likelihood `Σ_w x_w log β_w`.
pub fn loss_x(message: &BowVector, beta: &ArrayView1<f64>) -> f64 {
    let log_beta = beta.mapv(|b| b.max(PROB_FLOOR).ln());
    log_likelihood(message, &log_beta.view())
}

/// `KL(softmax(aux(θ)) ‖ marginal)` for one example.
pub fn mi_loss(theta: &ArrayView1<f64>, aux: &Affine, marginal: &ArrayView1<f64>) -> Result<f64, ObjectiveError> {
    let q = crate::nn::softmax(&aux.forward_one(theta).view());
    categorical_kld(&q.view(), marginal)
}

/// Dense mini-batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub messages: Array2<f64>,
    pub contexts: Array2<f64>,
}

impl Batch {
    pub fn from_examples<'a, I>(examples: I, vocab_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a Example>,
        I::IntoIter: ExactSizeIterator,
    {
        let iter = examples.into_iter();
        let n = iter.len();
        let mut messages = Array2::zeros((n, vocab_size));
        let mut contexts = Array2::zeros((n, vocab_size));
        for (row, ex) in iter.enumerate() {
            ex.message.add_into(messages.row_mut(row).as_slice_mut().expect("row-major"));
            ex.context.add_into(contexts.row_mut(row).as_slice_mut().expect("row-major"));
        }
        Self { messages, contexts }
    }

    pub fn len(&self) -> usize {
        self.messages.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Standard-normal and Gumbel draws for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub epsilon: Array2<f64>,
    pub gumbel: Array2<f64>,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(batch: usize, topics: usize, roles: usize, rng: &mut R) -> Self {
        let mut epsilon = Array2::zeros((batch, topics));
        let mut g = Array2::zeros((batch, roles));
        for b in 0..batch {
            epsilon.row_mut(b).assign(&standard_normal(topics, rng));
            g.row_mut(b).assign(&gumbel(roles, rng));
        }
        Self { epsilon, gumbel: g }
    }

    pub fn zeros(batch: usize, topics: usize, roles: usize) -> Self {
        Self {
            epsilon: Array2::zeros((batch, topics)),
            gumbel: Array2::zeros((batch, roles)),
        }
    }

    /// Rows in the given order; used to permute a batch together with its noise.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            epsilon: self.epsilon.select(Axis(0), rows),
            gumbel: self.gumbel.select(Axis(0), rows),
        }
    }
}

/// How the latents are produced in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Latents<'a> {
    /// One reparameterized sample per example.
    Sampled(&'a Noise),
    /// `z = μ` and the hard role `argmax π`.
    Deterministic,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    enc_pre: Array2<f64>,
    enc_hidden: Array2<f64>,
    pub mu: Array2<f64>,
    pub log_sigma: Array2<f64>,
    pub z: Array2<f64>,
    pub theta: Array2<f64>,
    disc_pre: Option<Array2<f64>>,
    disc_in: Array2<f64>,
    log_pi: Array2<f64>,
    pub pi: Array2<f64>,
    pub d: Array2<f64>,
    topic_probs: Array2<f64>,
    disc_probs: Array2<f64>,
    pub beta: Array2<f64>,
    aux_log_q: Array2<f64>,
    aux_q: Array2<f64>,
    /// The `p(d)` used by the mutual-information term.
    pub marginal: Array1<f64>,
    log_marginal: Array1<f64>,
    mi: Array1<f64>,
    pub per_example: Vec<LossBreakdown>,
    pub breakdown: LossBreakdown,
}

fn stop_mask(stop_flags: &[bool], vocab_size: usize) -> Result<Array1<f64>, ObjectiveError> {
    if stop_flags.len() != vocab_size {
        return Err(ObjectiveError::Invalid(format!(
            "{} stop flags for vocabulary of {}",
            stop_flags.len(),
            vocab_size
        )));
    }
    Ok(stop_flags.iter().map(|&s| f64::from(u8::from(s))).collect())
}

fn row_dot(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.dot(b)
}

/// Batched forward pass computing every latent and objective term.
pub fn forward(
    batch: &Batch,
    params: &ModelParameters,
    config: &ModelConfig,
    stop_flags: &[bool],
    latents: Latents<'_>,
) -> Result<Forward, ObjectiveError> {
    forward_with_marginal(batch, params, config, stop_flags, latents, None)
}

/// As [`forward`], optionally pinning the role marginal `p(d)` of the
/// mutual-information term instead of deriving it from the batch.
///
/// The marginal is a constant as far as gradients are concerned, so a
/// finite-difference check of [`total_loss_and_grad`] must hold it at the
/// value [`Forward::marginal`] reports for the unperturbed parameters.
pub fn forward_with_marginal(
    batch: &Batch,
    params: &ModelParameters,
    config: &ModelConfig,
    stop_flags: &[bool],
    latents: Latents<'_>,
    fixed_marginal: Option<&Array1<f64>>,
) -> Result<Forward, ObjectiveError> {
    let n = batch.len();
    if n == 0 {
        return Err(ObjectiveError::Invalid("empty batch".into()));
    }
    let (k, d_roles) = (params.topics(), params.roles());
    let stop = stop_mask(stop_flags, params.vocab_size())?;

    // Topic encoder.
    let enc_pre = params.topic_hidden.forward(&batch.contexts.view());
    let enc_hidden = relu(&enc_pre);
    let mu = params.mu.forward(&enc_hidden.view());
    let log_sigma = params.log_sigma.forward(&enc_hidden.view());
    let z = match latents {
        Latents::Sampled(noise) => &mu + &(log_sigma.mapv(f64::exp) * &noise.epsilon),
        Latents::Deterministic => mu.clone(),
    };
    let theta = softmax_rows(&params.topic_mixture.forward(&z.view()));

    // Discourse encoder.
    let (disc_pre, disc_in) = match &params.disc_hidden {
        Some(h) => {
            let pre = h.forward(&batch.messages.view());
            let act = relu(&pre);
            (Some(pre), act)
        }
        None => (None, batch.messages.clone()),
    };
    let log_pi = log_softmax_rows(&params.disc_logits.forward(&disc_in.view()));
    let pi = log_pi.mapv(f64::exp);
    let d = match latents {
        Latents::Sampled(noise) => {
            let floor = PROB_FLOOR.ln();
            let y = (log_pi.mapv(|v| v.max(floor)) + &noise.gumbel) / config.tau;
            softmax_rows(&y)
        }
        Latents::Deterministic => {
            let mut hard = Array2::zeros((n, d_roles));
            for (b, row) in pi.rows().into_iter().enumerate() {
                hard[[b, argmax(&row)]] = 1.0;
            }
            hard
        }
    };

    // Decoders.
    let topic_logits = params.topic_words.forward(&theta.view());
    let disc_logits = params.disc_words.forward(&d.view());
    let log_topic = log_softmax_rows(&(&topic_logits - &(&stop * config.stop_penalty)));
    let log_disc = log_softmax_rows(&disc_logits);
    let log_beta = log_softmax_rows(&(&topic_logits + &disc_logits));

    // Mutual-information term.
    let aux_log_q = log_softmax_rows(&params.mi_aux.forward(&theta.view()));
    let aux_q = aux_log_q.mapv(f64::exp);
    let marginal = match (fixed_marginal, config.mi_marginal) {
        (Some(m), _) => {
            if m.len() != d_roles {
                return Err(ObjectiveError::Invalid(format!(
                    "marginal has {} entries for {d_roles} roles",
                    m.len()
                )));
            }
            m.clone()
        }
        (None, MiMarginal::Batch) => pi.mean_axis(Axis(0)).expect("non-empty batch"),
        (None, MiMarginal::Uniform) => Array1::from_elem(d_roles, 1.0 / d_roles as f64),
    };
    let log_marginal = marginal.mapv(|p| p.max(PROB_FLOOR).ln());

    let ln_roles = (d_roles as f64).ln();
    let mut per_example = Vec::with_capacity(n);
    let mut mi = Array1::zeros(n);
    for b in 0..n {
        let c = batch.contexts.row(b);
        let x = batch.messages.row(b);
        let kl_z = -0.5
            * (0..k)
                .map(|j| {
                    let (m, ls) = (mu[[b, j]], log_sigma[[b, j]]);
                    1.0 + 2.0 * ls - m * m - (2.0 * ls).exp()
                })
                .sum::<f64>();
        let neg_entropy: f64 = pi.row(b).iter().zip(log_pi.row(b).iter()).map(|(p, lp)| p * lp).sum();
        let kl_d = neg_entropy + ln_roles;
        let l_z = row_dot(&c, &log_topic.row(b)) - kl_z;
        let l_d = row_dot(&x, &log_disc.row(b)) - kl_d;
        let l_x = row_dot(&x, &log_beta.row(b));
        let q = aux_q.row(b);
        let mi_b: f64 = q
            .iter()
            .zip(aux_log_q.row(b).iter())
            .zip(log_marginal.iter())
            .map(|((qv, lq), lm)| qv * (lq - lm))
            .sum();
        mi[b] = mi_b;
        per_example.push(LossBreakdown::combine(l_z, l_d, l_x, mi_b, config.lambda));
    }

    let inv = 1.0 / n as f64;
    let mut mean = LossBreakdown::default();
    for term in &per_example {
        mean.scaled_add(term, inv);
    }
    let breakdown = LossBreakdown::combine(mean.l_z, mean.l_d, mean.l_x, mean.l_mi, config.lambda);
    breakdown.check_finite()?;

    Ok(Forward {
        enc_pre,
        enc_hidden,
        mu,
        log_sigma,
        z,
        theta,
        disc_pre,
        disc_in,
        log_pi,
        pi,
        d,
        topic_probs: log_topic.mapv(f64::exp),
        disc_probs: log_disc.mapv(f64::exp),
        beta: log_beta.mapv(f64::exp),
        aux_log_q,
        aux_q,
        marginal,
        log_marginal,
        mi,
        per_example,
        breakdown,
    })
}

/// Batch objective without gradients.
pub fn total_loss(
    batch: &Batch,
    params: &ModelParameters,
    config: &ModelConfig,
    stop_flags: &[bool],
    latents: Latents<'_>,
) -> Result<LossBreakdown, ObjectiveError> {
    forward(batch, params, config, stop_flags, latents).map(|f| f.breakdown)
}

/// Gradients produced by [`total_loss_and_grad`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient of the negated objective `−L` for every parameter.
    pub loss: ModelParameters,
    /// Gradient of the auxiliary map's own fitting loss: cross-entropy of
    /// `softmax(aux(θ))` against the (detached) role posteriors `π`.
    pub aux_fit: Affine,
}

/// Objective and analytic gradient of its negation for a sampled batch.
pub fn total_loss_and_grad(
    batch: &Batch,
    params: &ModelParameters,
    config: &ModelConfig,
    stop_flags: &[bool],
    noise: &Noise,
) -> Result<(LossBreakdown, Gradients), ObjectiveError> {
    let fwd = forward(batch, params, config, stop_flags, Latents::Sampled(noise))?;
    let grads = backward(batch, params, config, noise, &fwd);
    Ok((fwd.breakdown, grads))
}

/// Gradient of the objective with respect to `θ` and `π`'s logits is
/// accumulated here, then negated so the result descends `−L`.
fn backward(batch: &Batch, params: &ModelParameters, config: &ModelConfig, noise: &Noise, fwd: &Forward) -> Gradients {
    let n = batch.len();
    let s = 1.0 / n as f64;
    let mut grad = params.zeros_like();

    let counts_c = batch.contexts.sum_axis(Axis(1)).insert_axis(Axis(1));
    let counts_x = batch.messages.sum_axis(Axis(1)).insert_axis(Axis(1));

    // d(log-likelihood)/d(logits) = counts − N·p
    let d_recon_x = (&batch.messages - &(&fwd.beta * &counts_x)) * s;
    let d_topic_logits = (&batch.contexts - &(&fwd.topic_probs * &counts_c)) * s + &d_recon_x;
    let d_disc_logits = (&batch.messages - &(&fwd.disc_probs * &counts_x)) * s + &d_recon_x;

    let mut d_theta = params
        .topic_words
        .backward(&fwd.theta.view(), &d_topic_logits, &mut grad.topic_words);
    let d_d = params
        .disc_words
        .backward(&fwd.d.view(), &d_disc_logits, &mut grad.disc_words);

    // −λ·mean KL(q ‖ m) through the auxiliary logits; m is held fixed.
    let mut d_aux = fwd.aux_q.clone();
    for b in 0..n {
        let mi_b = fwd.mi[b];
        for j in 0..d_aux.ncols() {
            let g = fwd.aux_log_q[[b, j]] - fwd.log_marginal[j] - mi_b;
            d_aux[[b, j]] *= -config.lambda * s * g;
        }
    }
    d_theta += &params.mi_aux.backward(&fwd.theta.view(), &d_aux, &mut grad.mi_aux);

    // Topic path: θ = softmax(f_θ(z)), z = μ + σ ⊙ ε.
    let d_theta_logits = softmax_rows_backward(&fwd.theta, &d_theta);
    let d_z = params
        .topic_mixture
        .backward(&fwd.z.view(), &d_theta_logits, &mut grad.topic_mixture);
    let sigma = fwd.log_sigma.mapv(f64::exp);
    let d_mu = &d_z - &(&fwd.mu * s);
    let mut d_log_sigma = &d_z * &sigma * &noise.epsilon;
    Zip::from(&mut d_log_sigma)
        .and(&fwd.log_sigma)
        .for_each(|g, &ls| *g += s * (1.0 - (2.0 * ls).exp()));
    let mut d_hidden = params.mu.backward(&fwd.enc_hidden.view(), &d_mu, &mut grad.mu);
    d_hidden += &params
        .log_sigma
        .backward(&fwd.enc_hidden.view(), &d_log_sigma, &mut grad.log_sigma);
    relu_backward(&fwd.enc_pre, &mut d_hidden);
    params
        .topic_hidden
        .backward_params(&batch.contexts.view(), &d_hidden, &mut grad.topic_hidden);

    // Discourse path: d = softmax((max(log π, log floor) + g)/τ).
    let d_y = softmax_rows_backward(&fwd.d, &d_d);
    let floor = PROB_FLOOR.ln();
    let mut d_log_pi = d_y / config.tau;
    Zip::from(&mut d_log_pi).and(&fwd.log_pi).for_each(|g, &lp| {
        if lp < floor {
            *g = 0.0;
        }
    });
    // log π = log_softmax(u): du = dlogπ − π·Σ dlogπ
    let row_sums = d_log_pi.sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut d_u = &d_log_pi - &(&fwd.pi * &row_sums);
    // −KL(π ‖ uniform): d/du of Σ π log π is π ⊙ (log π − Σ π log π)
    for b in 0..n {
        let neg_entropy: f64 = fwd.pi.row(b).dot(&fwd.log_pi.row(b));
        for j in 0..d_u.ncols() {
            d_u[[b, j]] -= s * fwd.pi[[b, j]] * (fwd.log_pi[[b, j]] - neg_entropy);
        }
    }
    let mut d_disc_in = params
        .disc_logits
        .backward(&fwd.disc_in.view(), &d_u, &mut grad.disc_logits);
    if let (Some(layer), Some(pre), Some(g)) = (&params.disc_hidden, &fwd.disc_pre, &mut grad.disc_hidden) {
        relu_backward(pre, &mut d_disc_in);
        layer.backward_params(&batch.messages.view(), &d_disc_in, g);
    }

    for (_, layer) in grad.layers_mut() {
        layer.weight.mapv_inplace(|v| -v);
        layer.bias.mapv_inplace(|v| -v);
    }

    // Fit of p(d|z) to the posteriors: d/da of −Σ π log q is (q − π).
    let mut aux_fit = params.mi_aux.zeros_like();
    let d_fit = (&fwd.aux_q - &fwd.pi) * s;
    params.mi_aux.backward_params(&fwd.theta.view(), &d_fit, &mut aux_fit);

    Gradients { loss: grad, aux_fit }
}

/// Gradient of a downstream loss that reads the deterministic features
/// `θ = softmax(f_θ(μ))` and `π`, given `d_theta` and `d_pi` (both
/// `batch × K` / `batch × D`). Decoder and auxiliary entries stay zero.
pub fn encoder_backward(
    batch: &Batch,
    params: &ModelParameters,
    d_theta: &Array2<f64>,
    d_pi: &Array2<f64>,
) -> ModelParameters {
    let mut grad = params.zeros_like();

    let enc_pre = params.topic_hidden.forward(&batch.contexts.view());
    let enc_hidden = relu(&enc_pre);
    let mu = params.mu.forward(&enc_hidden.view());
    let theta = softmax_rows(&params.topic_mixture.forward(&mu.view()));
    let d_theta_logits = softmax_rows_backward(&theta, d_theta);
    let d_mu = params
        .topic_mixture
        .backward(&mu.view(), &d_theta_logits, &mut grad.topic_mixture);
    let mut d_hidden = params.mu.backward(&enc_hidden.view(), &d_mu, &mut grad.mu);
    relu_backward(&enc_pre, &mut d_hidden);
    params
        .topic_hidden
        .backward_params(&batch.contexts.view(), &d_hidden, &mut grad.topic_hidden);

    let disc_pre = params.disc_hidden.as_ref().map(|h| h.forward(&batch.messages.view()));
    let disc_in = match &disc_pre {
        Some(pre) => relu(pre),
        None => batch.messages.clone(),
    };
    let pi = softmax_rows(&params.disc_logits.forward(&disc_in.view()));
    let d_u = softmax_rows_backward(&pi, d_pi);
    let mut d_disc_in = params.disc_logits.backward(&disc_in.view(), &d_u, &mut grad.disc_logits);
    if let (Some(layer), Some(pre), Some(g)) = (&params.disc_hidden, &disc_pre, &mut grad.disc_hidden) {
        relu_backward(pre, &mut d_disc_in);
        layer.backward_params(&batch.messages.view(), &d_disc_in, g);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_discourse, sample_topic};
    use crate::seed::rng_for;
    use ndarray::array;

    fn small_config() -> ModelConfig {
        ModelConfig {
            topic_hidden: 6,
            disc_hidden: 4,
            ..ModelConfig::new(3, 2, 8)
        }
    }

    fn random_examples(n: usize, v: usize, seed: u64) -> Vec<Example> {
        let mut rng = rng_for(seed, "examples", 0);
        (0..n)
            .map(|_| {
                let msg: Vec<u32> = (0..v).map(|_| rng.random_range(0..3)).collect();
                let extra: Vec<u32> = (0..v).map(|_| rng.random_range(0..2)).collect();
                let message = BowVector::from_dense(&msg);
                let context = message.add(&BowVector::from_dense(&extra));
                Example { message, context }
            })
            .collect()
    }

    #[test]
    fn gaussian_kld_closed_forms() {
        assert_eq!(gaussian_kld(&array![0.0].view(), &array![0.0].view()).unwrap(), 0.0);
        assert!((gaussian_kld(&array![1.0].view(), &array![0.0].view()).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            gaussian_kld(&array![f64::NAN].view(), &array![0.0].view()),
            Err(ObjectiveError::NonFinite("gaussian_kld input"))
        );
    }

    #[test]
    fn categorical_kld_closed_forms() {
        let u = array![0.25, 0.25, 0.25, 0.25];
        assert_eq!(categorical_kld(&u.view(), &u.view()).unwrap(), 0.0);
        let one_hot = array![0.0, 1.0, 0.0, 0.0];
        assert!((categorical_kld(&one_hot.view(), &u.view()).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(
            categorical_kld(&array![0.5, 0.5].view(), &array![1.0, 0.0].view()),
            Err(ObjectiveError::ZeroSupport(1))
        );
        // zero in p is fine where q is zero too
        assert!(categorical_kld(&array![1.0, 0.0].view(), &array![1.0, 0.0].view()).is_ok());
    }

    #[test]
    fn loss_z_edge_cases() {
        let cfg = small_config();
        let params = ModelParameters::zeros(&cfg);
        let theta = array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let mu = array![0.5, 0.0, -1.0];
        let ls = array![0.1, 0.0, 0.2];
        let stop = vec![false; 8];
        let kl = gaussian_kld(&mu.view(), &ls.view()).unwrap();
        let empty = loss_z(&BowVector::zeros(8), &theta.view(), &mu.view(), &ls.view(), &params, &stop, 0.0).unwrap();
        assert!((empty + kl).abs() < 1e-15);
        let c = BowVector::from_dense(&[1, 0, 2, 0, 0, 3, 0, 1]);
        let zero_mu = array![0.0, 0.0, 0.0];
        let full = loss_z(&c, &theta.view(), &zero_mu.view(), &zero_mu.view(), &params, &stop, 0.0).unwrap();
        assert!((full + 7.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_stop_penalty_removes_stop_mass() {
        // 5-word toy vocabulary, words 3 and 4 are stop words.
        let mut params = ModelParameters::zeros(&ModelConfig {
            topic_hidden: 2,
            disc_hidden: 0,
            ..ModelConfig::new(2, 2, 5)
        });
        params.topic_words.weight = array![[0.3, -0.2, 0.1, 0.4, 0.0], [0.0, 0.5, -0.1, 0.2, 0.3]];
        let theta = array![0.6, 0.4];
        let mut logits = params.topic_words.forward_one(&theta.view());
        for i in [3, 4] {
            logits[i] -= 20.0;
        }
        let p = crate::nn::softmax(&logits.view());
        assert!(p[3] + p[4] <= 1e-6);
        // And loss_z sees the same distribution.
        let stop = [false, false, false, true, true];
        let zero = array![0.0, 0.0];
        let only_stop = BowVector::from_dense(&[0, 0, 0, 1, 0]);
        let l = loss_z(&only_stop, &theta.view(), &zero.view(), &zero.view(), &params, &stop, 20.0).unwrap();
        assert!((l - p[3].ln()).abs() < 1e-9);
    }

    #[test]
    fn loss_d_edge_cases() {
        let cfg = ModelConfig {
            topic_hidden: 2,
            disc_hidden: 0,
            ..ModelConfig::new(2, 4, 6)
        };
        let params = ModelParameters::zeros(&cfg);
        let uniform = array![0.25, 0.25, 0.25, 0.25];
        let x = BowVector::from_dense(&[2, 0, 1, 0, 0, 1]);
        let l = loss_d(&x, &uniform.view(), &uniform.view(), &params).unwrap();
        assert!((l + 4.0 * 6f64.ln()).abs() < 1e-12);
        let hard = array![0.0, 0.0, 1.0, 0.0];
        let l = loss_d(&BowVector::zeros(6), &hard.view(), &hard.view(), &params).unwrap();
        assert!((l + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_x_examples() {
        assert_eq!(loss_x(&BowVector::zeros(3), &array![0.2, 0.3, 0.5].view()), 0.0);
        let u = array![0.25, 0.25, 0.25, 0.25];
        assert!((loss_x(&BowVector::from_dense(&[1, 2, 0, 3]), &u.view()) + 6.0 * 4f64.ln()).abs() < 1e-12);
        let got = loss_x(&BowVector::from_dense(&[2, 1, 0]), &array![0.5, 0.25, 0.25].view());
        assert!((got - (2.0 * 0.5f64.ln() + 0.25f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn mi_loss_examples() {
        let aux = Affine::zeros(3, 4);
        let theta = array![0.2, 0.3, 0.5];
        let uniform = array![0.25, 0.25, 0.25, 0.25];
        assert!(mi_loss(&theta.view(), &aux, &uniform.view()).unwrap().abs() < 1e-15);
        let mut peaked = Affine::zeros(3, 4);
        peaked.bias = array![800.0, 0.0, 0.0, 0.0];
        let got = mi_loss(&theta.view(), &peaked, &uniform.view()).unwrap();
        assert!((got - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batched_forward_matches_single_example_functions() {
        let cfg = small_config();
        let params = ModelParameters::init(&cfg, 3);
        let stop = vec![false, true, false, false, true, false, false, false];
        let examples = random_examples(5, 8, 1);
        let batch = Batch::from_examples(&examples, 8);
        let noise = Noise::sample(5, 3, 2, &mut rng_for(2, "noise", 0));
        let fwd = forward(&batch, &params, &cfg, &stop, Latents::Sampled(&noise)).unwrap();
        let mut sums = [0.0; 4];
        for (b, ex) in examples.iter().enumerate() {
            let (mu, ls) = params.encode_topic(&ex.context).unwrap();
            let z = sample_topic(&mu.view(), &ls.view(), &noise.epsilon.row(b));
            let theta = params.topic_mixture(&z.view());
            let pi = params.encode_discourse(&ex.message).unwrap();
            let d = sample_discourse(&pi.view(), cfg.tau, &noise.gumbel.row(b));
            let beta = params.decode(&theta.view(), &d.view());
            sums[0] += loss_z(&ex.context, &theta.view(), &mu.view(), &ls.view(), &params, &stop, cfg.stop_penalty).unwrap();
            sums[1] += loss_d(&ex.message, &pi.view(), &d.view(), &params).unwrap();
            sums[2] += loss_x(&ex.message, &beta.view());
            let marginal = fwd.pi.mean_axis(Axis(0)).unwrap();
            sums[3] += mi_loss(&theta.view(), &params.mi_aux, &marginal.view()).unwrap();
        }
        let n = examples.len() as f64;
        let got = fwd.breakdown;
        for (a, b) in [got.l_z, got.l_d, got.l_x, got.l_mi].iter().zip(sums) {
            assert!((a - b / n).abs() < 1e-9, "{a} vs {}", b / n);
        }
    }

    #[test]
    fn lambda_zero_total_is_plain_sum() {
        let cfg = ModelConfig { lambda: 0.0, ..small_config() };
        let params = ModelParameters::init(&cfg, 5);
        let examples = random_examples(4, 8, 2);
        let batch = Batch::from_examples(&examples, 8);
        let noise = Noise::sample(4, 3, 2, &mut rng_for(1, "noise", 0));
        let b = total_loss(&batch, &params, &cfg, &[false; 8], Latents::Sampled(&noise)).unwrap();
        assert_eq!(b.total, b.l_z + b.l_d + b.l_x);
        let shifted = LossBreakdown::combine(b.l_z, b.l_d, b.l_x + 0.75, b.l_mi, 0.3);
        let base = LossBreakdown::combine(b.l_z, b.l_d, b.l_x, b.l_mi, 0.3);
        assert!((shifted.total - base.total - 0.75).abs() < 1e-12);
    }

    #[test]
    fn order_of_examples_does_not_matter() {
        let cfg = small_config();
        let params = ModelParameters::init(&cfg, 8);
        let examples = random_examples(6, 8, 4);
        let noise = Noise::sample(6, 3, 2, &mut rng_for(3, "noise", 0));
        let perm = [4, 1, 5, 0, 3, 2];
        let permuted: Vec<Example> = perm.iter().map(|&i| examples[i].clone()).collect();
        let a = total_loss(&Batch::from_examples(&examples, 8), &params, &cfg, &[false; 8], Latents::Sampled(&noise)).unwrap();
        let pn = noise.select(&perm);
        let b = total_loss(&Batch::from_examples(&permuted, 8), &params, &cfg, &[false; 8], Latents::Sampled(&pn)).unwrap();
        assert!((a.total - b.total).abs() < 1e-9);
    }

    #[test]
    fn non_finite_term_is_named() {
        let cfg = small_config();
        let mut params = ModelParameters::init(&cfg, 1);
        params.log_sigma.bias.fill(1e6);
        let examples = random_examples(2, 8, 5);
        let err = total_loss(&Batch::from_examples(&examples, 8), &params, &cfg, &[false; 8], Latents::Deterministic)
            .unwrap_err();
        assert_eq!(err, ObjectiveError::NonFinite("l_z"));
    }
}
