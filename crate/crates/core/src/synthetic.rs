//! Conversations sampled from a planted model with known topic and role
//! word distributions, following the model's own generative story:
//!
//! * per conversation `z ~ N(0, I)` and `θ = softmax(s·z)`;
//! * per message a role `d` drawn uniformly, then `N` words from
//!   `β = softmax(W_Tᵀθ + W_Dᵀd)`.
//!
//! Each topic and each role owns a disjoint block of words with graded
//! logits, so the top words of every planted row are unambiguous.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_instance, split_dataset, ConversationInstance, CorpusError, Example, RawPost, Split, Vocabulary};
use crate::nn::{argmax, softmax, softmax_rows};
use crate::seed::rng_for;
use crate::trainer::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub conversations: usize,
    pub messages_per_conversation: usize,
    pub topics: usize,
    pub roles: usize,
    pub vocab_size: usize,
    /// Words owned by each topic and each role.
    pub block: usize,
    /// Logit of the first word of a topic block; later words step down by
    /// `grade`.
    pub topic_strength: f64,
    /// As `topic_strength` for role blocks.
    pub role_strength: f64,
    pub grade: f64,
    /// Scale `s` applied to `z` before the softmax; larger means purer topics.
    pub theta_scale: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Put role words on the stop list, as function words would be in
    /// real threads.
    pub role_words_stop: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            conversations: 2000,
            messages_per_conversation: 4,
            topics: 5,
            roles: 4,
            vocab_size: 200,
            block: 12,
            topic_strength: 5.0,
            role_strength: 5.0,
            grade: 0.15,
            theta_scale: 3.0,
            min_len: 8,
            max_len: 14,
            role_words_stop: true,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    /// Threads of very short messages about one clear topic each, where a
    /// single message says little and the thread around it says a lot.
    pub fn short_messages(seed: u64) -> Self {
        Self {
            conversations: 2000,
            messages_per_conversation: 6,
            theta_scale: 8.0,
            min_len: 2,
            max_len: 4,
            seed,
            ..Default::default()
        }
    }
}

/// A sampled corpus together with the distributions that generated it.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub config: PlantedConfig,
    pub vocab: Vocabulary,
    /// `W_T`, topics × vocabulary.
    pub topic_logits: Array2<f64>,
    /// `W_D`, roles × vocabulary.
    pub role_logits: Array2<f64>,
    pub instances: Vec<ConversationInstance>,
    /// `θ` of every conversation.
    pub thetas: Vec<Array1<f64>>,
    /// Role of every message, per conversation.
    pub roles: Vec<Vec<usize>>,
}

pub fn topic_word(k: usize, j: usize) -> String {
    format!("topic{k}_{j:02}")
}

pub fn role_word(r: usize, j: usize) -> String {
    format!("role{r}_{j:02}")
}

impl PlantedCorpus {
    pub fn generate(config: &PlantedConfig) -> Result<Self, CorpusError> {
        let (k, d, v, b) = (config.topics, config.roles, config.vocab_size, config.block);
        if k == 0 || d == 0 || b == 0 || (k + d) * b > v {
            return Err(CorpusError::InvalidArgument(format!(
                "{k} topics and {d} roles with {b} words each do not fit a vocabulary of {v}"
            )));
        }
        if config.min_len == 0 || config.min_len > config.max_len || config.messages_per_conversation == 0 {
            return Err(CorpusError::InvalidArgument("message lengths must satisfy 1 ≤ min ≤ max".into()));
        }

        let mut words = Vec::with_capacity(v);
        for t in 0..k {
            words.extend((0..b).map(|j| topic_word(t, j)));
        }
        for r in 0..d {
            words.extend((0..b).map(|j| role_word(r, j)));
        }
        words.extend((0..v - (k + d) * b).map(|j| format!("filler{j:03}")));

        let mut topic_logits = Array2::zeros((k, v));
        for t in 0..k {
            for j in 0..b {
                topic_logits[[t, t * b + j]] = config.topic_strength - config.grade * j as f64;
            }
        }
        let mut role_logits = Array2::zeros((d, v));
        for r in 0..d {
            for j in 0..b {
                role_logits[[r, (k + r) * b + j]] = config.role_strength - config.grade * j as f64;
            }
        }

        let mut rng = rng_for(config.seed, "planted", 0);
        let mut counts = vec![0u64; v];
        let mut instances = Vec::with_capacity(config.conversations);
        let mut thetas = Vec::with_capacity(config.conversations);
        let mut roles = Vec::with_capacity(config.conversations);
        for c in 0..config.conversations {
            let z = Array1::from_shape_simple_fn(k, || -> f64 { StandardNormal.sample(&mut rng) });
            let theta = softmax(&(z * config.theta_scale).view());
            let topic_part = theta.dot(&topic_logits);
            let mut ids = Vec::new();
            let mut messages = Vec::new();
            let mut conv_roles = Vec::new();
            for m in 0..config.messages_per_conversation {
                let role = rng.random_range(0..d);
                let beta = softmax(&(&topic_part + &role_logits.row(role)).view());
                let dist = WeightedIndex::new(beta.iter().copied()).expect("softmax is a valid distribution");
                let len = rng.random_range(config.min_len..=config.max_len);
                let mut message = Vec::with_capacity(len);
                for _ in 0..len {
                    let w = dist.sample(&mut rng);
                    counts[w] += 1;
                    message.push(words[w].clone());
                }
                ids.push(format!("c{c}m{m}"));
                messages.push(message);
                conv_roles.push(role);
            }
            instances.push(ConversationInstance { ids, messages });
            thetas.push(theta);
            roles.push(conv_roles);
        }

        let stop_from = k * b;
        let stop_to = if config.role_words_stop { (k + d) * b } else { stop_from };
        let vocab = Vocabulary::from_entries(
            words
                .into_iter()
                .zip(counts)
                .enumerate()
                .map(|(i, (w, c))| (w, c, (stop_from..stop_to).contains(&i)))
                .collect(),
        )?;
        Ok(Self {
            config: config.clone(),
            vocab,
            topic_logits,
            role_logits,
            instances,
            thetas,
            roles,
        })
    }

    /// Planted `φ^T`.
    pub fn topic_word_matrix(&self) -> Array2<f64> {
        softmax_rows(&self.topic_logits)
    }

    /// Planted `φ^D`.
    pub fn role_word_matrix(&self) -> Array2<f64> {
        softmax_rows(&self.role_logits)
    }

    /// Dominant topic of every conversation.
    pub fn dominant_topics(&self) -> Vec<usize> {
        self.thetas.iter().map(|t| argmax(&t.view())).collect()
    }

    /// Conversation indices split by `ratios`.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<Split<usize>, CorpusError> {
        split_dataset((0..self.instances.len()).collect(), ratios, seed)
    }

    /// One example per message of the given conversations, in order.
    pub fn examples(&self, conversations: &[usize]) -> Vec<Example> {
        conversations
            .iter()
            .flat_map(|&c| encode_instance(&self.instances[c], &self.vocab, false))
            .collect()
    }

    /// Planted role of every message of the given conversations, aligned
    /// with [`PlantedCorpus::examples`].
    pub fn message_roles(&self, conversations: &[usize]) -> Vec<usize> {
        conversations.iter().flat_map(|&c| self.roles[c].iter().copied()).collect()
    }

    /// Dominant topic repeated for every message, aligned with
    /// [`PlantedCorpus::examples`].
    pub fn message_topics(&self, conversations: &[usize]) -> Vec<usize> {
        let dominant = self.dominant_topics();
        conversations
            .iter()
            .flat_map(|&c| std::iter::repeat_n(dominant[c], self.roles[c].len()))
            .collect()
    }

    pub fn dataset(&self, split: &Split<usize>) -> Dataset {
        Dataset {
            train: self.examples(&split.train),
            dev: self.examples(&split.dev),
            stop_flags: self.vocab.stop_flags().to_vec(),
        }
    }

    /// Messages as reply chains; each post's label is its planted role
    /// (`act{r}`), and with `hashtags` every message also carries the
    /// hashtag `#topic{k}` of its conversation's dominant topic.
    pub fn to_posts(&self, hashtags: bool) -> Vec<RawPost> {
        let dominant = self.dominant_topics();
        let mut posts = Vec::new();
        for (c, inst) in self.instances.iter().enumerate() {
            for (m, (id, tokens)) in inst.ids.iter().zip(&inst.messages).enumerate() {
                let mut text = tokens.join(" ");
                if hashtags {
                    text.push_str(&format!(" #topic{}", dominant[c]));
                }
                let parent = (m > 0).then(|| inst.ids[m - 1].as_str());
                let mut post = RawPost::new(id.clone(), parent, text);
                post.label = Some(format!("act{}", self.roles[c][m]));
                posts.push(post);
            }
        }
        posts
    }
}
