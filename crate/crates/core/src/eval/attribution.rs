use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::model::ModelParameters;
use crate::nn::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Topic,
    Discourse,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub word: String,
    pub tag: Tag,
    /// `p(w | z)`; absent for unknown words.
    pub p_topic: Option<f64>,
    /// `p(w | d)`; absent for unknown words.
    pub p_discourse: Option<f64>,
}

/// Tag each token as topic or discourse by comparing `p(w | z)` with
/// `p(w | d)`. Ties go to discourse; out-of-vocabulary tokens are
/// `Unknown`.
///
/// `p(w | z)` is the topic distribution the model was trained against,
/// `softmax(f_φT(θ) − Δ·stop)`. Without the penalty the decoder bias that
/// compensates for it would hand stop-flagged words to the topic side.
pub fn word_attribution<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    theta: &ArrayView1<f64>,
    d_hard: &ArrayView1<f64>,
    params: &ModelParameters,
    stop_penalty: f64,
) -> Vec<WordAttribution> {
    let mut logits = params.topic_words.forward_one(theta);
    for (l, &stop) in logits.iter_mut().zip(vocab.stop_flags()) {
        if stop {
            *l -= stop_penalty;
        }
    }
    let p_topic = softmax(&logits.view());
    let p_disc = params.discourse_word_probs(d_hard);
    tokens
        .iter()
        .map(|t| {
            let word = t.as_ref().to_string();
            match vocab.index_of(&word) {
                Some(i) => {
                    let (pt, pd) = (p_topic[i], p_disc[i]);
                    WordAttribution {
                        word,
                        tag: if pt > pd { Tag::Topic } else { Tag::Discourse },
                        p_topic: Some(pt),
                        p_discourse: Some(pd),
                    }
                }
                None => WordAttribution {
                    word,
                    tag: Tag::Unknown,
                    p_topic: None,
                    p_discourse: None,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::array;

    #[test]
    fn zero_decoders_tag_discourse() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), 1, false), ("b".into(), 1, false)]).unwrap();
        let params = ModelParameters::zeros(&ModelConfig::new(2, 2, 2));
        let out = word_attribution(&["a", "b", "zz"], &vocab, &array![0.5, 0.5].view(), &array![1.0, 0.0].view(), &params, 5.0);
        assert_eq!(out[0].tag, Tag::Discourse);
        assert_eq!(out[0].p_topic, Some(0.5));
        assert_eq!(out[1].tag, Tag::Discourse);
        assert_eq!(out[2].tag, Tag::Unknown);
    }

    #[test]
    fn larger_topic_probability_wins() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), 1, false), ("b".into(), 1, false)]).unwrap();
        let mut params = ModelParameters::zeros(&ModelConfig::new(2, 2, 2));
        params.topic_words.weight[[0, 0]] = 3.0;
        let out = word_attribution(&["a", "b"], &vocab, &array![1.0, 0.0].view(), &array![1.0, 0.0].view(), &params, 5.0);
        assert_eq!(out[0].tag, Tag::Topic);
        assert_eq!(out[1].tag, Tag::Discourse);
    }

    #[test]
    fn stop_penalty_moves_stop_words_to_discourse() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), 1, true), ("b".into(), 1, false)]).unwrap();
        let mut params = ModelParameters::zeros(&ModelConfig::new(2, 2, 2));
        params.topic_words.bias[0] = 5.0;
        let theta = array![1.0, 0.0];
        let d = array![1.0, 0.0];
        let raw = word_attribution(&["a"], &vocab, &theta.view(), &d.view(), &params, 0.0);
        assert_eq!(raw[0].tag, Tag::Topic);
        let out = word_attribution(&["a", "b"], &vocab, &theta.view(), &d.view(), &params, 5.0);
        assert_eq!(out[0].tag, Tag::Discourse);
        assert!((out[0].p_topic.unwrap() - 0.5).abs() < 1e-12);
    }
}
