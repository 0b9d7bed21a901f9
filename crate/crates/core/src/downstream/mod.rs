//! Message representations for classification: `[θ; π]` features, hashtag
//! proxy labels, a linear max-margin classifier, and a convolutional
//! classifier trained separately from or jointly with the topic model.

mod cnn;
mod hashtags;
mod linear;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{encode_instance, BowVector, ConversationInstance, Example, Vocabulary};
use crate::model::{infer_batch, ModelError, ModelParameters};
use crate::objectives::{Batch, ObjectiveError};
use crate::seed::rng_for;

pub use cnn::{
    cross_entropy, joint_train, train_text_cnn, CnnConfig, CnnMode, CnnRun, CnnTask, JointReport, LabeledMessage, TextCnn,
    TopicModel,
};
pub use hashtags::{build_hashtag_labels, ClassifiedCorpus, HashtagOptions};
pub use linear::{classification_metrics, confusion_matrix, train_classifier, LinearClassifier, LinearConfig, Metrics};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("classification needs at least two classes")]
    SingleClass,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Row indices of a train / held-out partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Hold out `test_fraction` of `n` rows. With `groups`, whole groups (for
/// example conversations) go to one side so no context leaks across.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64, groups: Option<&[usize]>) -> Result<Holdout, DownstreamError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DownstreamError::Invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let group_of: Vec<usize> = match groups {
        Some(g) if g.len() != n => return Err(DownstreamError::LengthMismatch(g.len(), n)),
        Some(g) => g.to_vec(),
        None => (0..n).collect(),
    };
    let mut distinct = group_of.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(DownstreamError::Empty("need at least two groups to hold out"));
    }
    distinct.shuffle(&mut rng_for(seed, "holdout", 0));
    let held = ((distinct.len() as f64 * test_fraction).round() as usize).clamp(1, distinct.len() - 1);
    let test_groups: std::collections::HashSet<usize> = distinct[..held].iter().copied().collect();
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| test_groups.contains(&group_of[i]));
    Ok(Holdout { train, test })
}

/// `[θ; π]` for one message: conversation-level `θ` at the posterior mean,
/// message-level `π`.
pub fn extract_features(message: &BowVector, context: &BowVector, params: &ModelParameters) -> Result<Array1<f64>, ModelError> {
    let inf = params.infer(message, context)?;
    Ok(concatenate![Axis(0), inf.theta, inf.pi])
}

const FEATURE_CHUNK: usize = 256;

/// [`extract_features`] for many examples, one row each.
pub fn extract_features_batch(examples: &[Example], params: &ModelParameters) -> Result<Array2<f64>, DownstreamError> {
    let v = params.vocab_size();
    if let Some(bad) = examples.iter().find(|e| e.message.dim() != v || e.context.dim() != v) {
        return Err(DownstreamError::Invalid(format!(
            "example of dimension {} for a vocabulary of {v}",
            bad.message.dim()
        )));
    }
    let parts: Vec<Array2<f64>> = examples
        .par_chunks(FEATURE_CHUNK)
        .map(|chunk| {
            let batch = Batch::from_examples(chunk, v);
            let (theta, pi) = infer_batch(params, &batch.messages, &batch.contexts);
            concatenate![Axis(1), theta, pi]
        })
        .collect();
    let width = params.topics() + params.roles();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(if views.is_empty() {
        Array2::zeros((0, width))
    } else {
        concatenate(Axis(0), &views).expect("equal widths")
    })
}

/// Vocabulary ids of `tokens` in order; unknown words are dropped.
pub fn token_ids<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().filter_map(|t| vocab.index_of(t.as_ref())).collect()
}

/// Every message of `instances` as a [`LabeledMessage`], in order, with
/// labels from `label_of(instance, message)`; messages labeled `None`
/// are skipped.
pub fn labeled_messages<F>(
    instances: &[ConversationInstance],
    vocab: &Vocabulary,
    context_excludes_target: bool,
    mut label_of: F,
) -> Vec<LabeledMessage>
where
    F: FnMut(usize, usize) -> Option<usize>,
{
    let mut out = Vec::new();
    for (c, inst) in instances.iter().enumerate() {
        let examples = encode_instance(inst, vocab, context_excludes_target);
        for (m, (tokens, example)) in inst.messages.iter().zip(examples).enumerate() {
            if let Some(label) = label_of(c, m) {
                out.push(LabeledMessage {
                    tokens: token_ids(tokens, vocab),
                    example,
                    label,
                });
            }
        }
    }
    out
}

/// Raw message word counts, the bag-of-words baseline.
pub fn bow_features(examples: &[Example], vocab_size: usize) -> Array2<f64> {
    let mut out = Array2::zeros((examples.len(), vocab_size));
    for (mut row, ex) in out.rows_mut().into_iter().zip(examples) {
        ex.message.add_into(row.as_slice_mut().expect("row-major"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn zero_model_gives_uniform_segments() {
        let cfg = ModelConfig::new(4, 3, 6);
        let params = ModelParameters::zeros(&cfg);
        let x = BowVector::from_dense(&[1, 0, 2, 0, 1, 0]);
        let f = extract_features(&x, &x, &params).unwrap();
        assert_eq!(f.len(), 7);
        for &v in f.iter().take(4) {
            assert!((v - 0.25).abs() < 1e-12);
        }
        for &v in f.iter().skip(4) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_single() {
        let cfg = ModelConfig::new(3, 2, 5);
        let params = ModelParameters::init(&cfg, 3);
        let examples: Vec<Example> = (0..7u32)
            .map(|i| {
                let message = BowVector::from_dense(&[i % 2, 1, 0, i % 3, 2]);
                let context = message.add(&BowVector::from_dense(&[1, 0, i % 4, 0, 0]));
                Example { message, context }
            })
            .collect();
        let batch = extract_features_batch(&examples, &params).unwrap();
        for (row, ex) in batch.rows().into_iter().zip(&examples) {
            let single = extract_features(&ex.message, &ex.context, &params).unwrap();
            for (a, b) in row.iter().zip(single.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((row.iter().take(3).sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((row.iter().skip(3).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grouped_holdout_keeps_groups_whole() {
        let groups: Vec<usize> = (0..40).map(|i| i / 4).collect();
        let h = holdout_split(40, 0.1, 7, Some(&groups)).unwrap();
        assert_eq!(h.test.len(), 4);
        let g = groups[h.test[0]];
        assert!(h.test.iter().all(|&i| groups[i] == g));
        assert_eq!(h.train.len() + h.test.len(), 40);
        assert_eq!(h, holdout_split(40, 0.1, 7, Some(&groups)).unwrap());
    }
}
