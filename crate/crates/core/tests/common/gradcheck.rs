//! Central finite differences over every parameter of the topic model.

use convo_td::corpus::{BowVector, Example};
use convo_td::model::{ModelConfig, ModelParameters};
use convo_td::nn::Affine;
use convo_td::seed::rng_for;
use rand::Rng;
use convo_td::objectives::{forward, forward_with_marginal, total_loss_and_grad, Batch, Latents, Noise};

/// Per-tensor relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

pub fn check_all(
    batch: &Batch,
    params: &ModelParameters,
    config: &ModelConfig,
    stop: &[bool],
    noise: &Noise,
    step: f64,
) -> Vec<TensorCheck> {
    let (_, grads) = total_loss_and_grad(batch, params, config, stop, noise).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .loss
        .tensors()
        .into_iter()
        .map(|(name, _, v)| (name, v.to_vec()))
        .collect();

    // p(d) is detached in the analytic gradient: hold it at its base value.
    let marginal = forward(batch, params, config, stop, Latents::Sampled(noise))
        .unwrap()
        .marginal;
    let neg_objective = |p: &ModelParameters| -> f64 {
        -forward_with_marginal(batch, p, config, stop, Latents::Sampled(noise), Some(&marginal))
            .unwrap()
            .breakdown
            .total
    };

    let mut out = Vec::new();
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1[i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1[i] -= step;
            numeric[i] = (neg_objective(&plus) - neg_objective(&minus)) / (2.0 * step);
        }
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel_error = if denom == 0.0 { 0.0 } else { diff / denom };
        out.push(TensorCheck {
            name: name.clone(),
            rel_error,
            analytic_norm: na,
        });
    }
    out
}

/// A random batch of `n` examples whose contexts contain their messages.
pub fn problem(vocab: usize, n: usize, seed: u64) -> (Batch, Vec<bool>) {
    let mut rng = rng_for(seed, "gradcheck-data", 0);
    let examples: Vec<Example> = (0..n)
        .map(|_| {
            let msg: Vec<u32> = (0..vocab).map(|_| u32::from(rng.random_bool(0.3)) * rng.random_range(1..3)).collect();
            let other: Vec<u32> = (0..vocab).map(|_| u32::from(rng.random_bool(0.2))).collect();
            let message = BowVector::from_dense(&msg);
            Example {
                context: message.add(&BowVector::from_dense(&other)),
                message,
            }
        })
        .collect();
    let stop = (0..vocab).map(|i| i % 7 == 0).collect();
    (Batch::from_examples(&examples, vocab), stop)
}

/// Parameters large enough that every gradient is far from zero.
pub fn scaled_params(config: &ModelConfig, seed: u64) -> ModelParameters {
    let mut rng = rng_for(seed, "gradcheck-init", 0);
    let mut params = ModelParameters::zeros(config);
    for (_, layer) in params.layers_mut() {
        // Shrink wide layers so activations stay out of saturation.
        let scale = 0.4 * (4.0 / layer.inputs() as f64).sqrt().min(1.0);
        let mut fresh = Affine::uniform(layer.inputs(), layer.outputs(), scale, &mut rng);
        fresh.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        *layer = fresh;
    }
    params
}
