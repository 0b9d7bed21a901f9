mod common;

use common::gradcheck::{check_all, problem, scaled_params};
use convo_td::model::{MiMarginal, ModelConfig};
use convo_td::objectives::Noise;
use convo_td::seed::rng_for;

fn run(config: ModelConfig, seed: u64) {
    let (batch, stop) = problem(config.vocab_size, 4, seed);
    let params = scaled_params(&config, seed);
    let noise = Noise::sample(4, config.topics, config.roles, &mut rng_for(seed, "gradcheck-noise", 0));
    for check in check_all(&batch, &params, &config, &stop, &noise, 1e-5) {
        assert!(
            check.rel_error < 1e-4,
            "{}: relative error {:.3e} (|grad| = {:.3e})",
            check.name,
            check.rel_error,
            check.analytic_norm
        );
        assert!(check.analytic_norm > 0.0, "{} has an all-zero gradient", check.name);
    }
}

#[test]
fn gradients_with_hidden_discourse_layer() {
    run(
        ModelConfig {
            topic_hidden: 5,
            disc_hidden: 4,
            lambda: 0.7,
            ..ModelConfig::new(3, 2, 12)
        },
        1,
    );
}

#[test]
fn gradients_with_linear_discourse_encoder_and_uniform_marginal() {
    run(
        ModelConfig {
            topic_hidden: 4,
            disc_hidden: 0,
            lambda: 0.3,
            mi_marginal: MiMarginal::Uniform,
            ..ModelConfig::new(3, 3, 10)
        },
        2,
    );
}

