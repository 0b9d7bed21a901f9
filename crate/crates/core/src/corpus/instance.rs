use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tree::{flatten_to_paths, ConversationTree, RawPost};
use super::vocab::{vectorize, BowVector, Vocabulary};
use super::CorpusError;
use crate::seed::rng_for;

/// One root-to-leaf path of a reply tree: the messages in reply order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationInstance {
    pub ids: Vec<String>,
    #[serde(rename = "tokens")]
    pub messages: Vec<Vec<String>>,
}

impl ConversationInstance {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Flatten each tree and attach the tokens of every message on the path.
pub fn instances_from_trees(
    trees: &[ConversationTree],
    tokens_by_id: &HashMap<String, Vec<String>>,
) -> Result<Vec<ConversationInstance>, CorpusError> {
    let mut out = Vec::new();
    for tree in trees {
        for path in flatten_to_paths(tree) {
            let messages = path
                .iter()
                .map(|id| {
                    tokens_by_id
                        .get(id)
                        .cloned()
                        .ok_or_else(|| CorpusError::Format(format!("no text for post {id:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(ConversationInstance { ids: path, messages });
        }
    }
    Ok(out)
}

/// A (target message, conversation context) training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub message: BowVector,
    pub context: BowVector,
}

/// One example per message of the instance. The context is the whole
/// conversation vector, minus the target when `context_excludes_target`.
pub fn encode_instance(
    instance: &ConversationInstance,
    vocab: &Vocabulary,
    context_excludes_target: bool,
) -> Vec<Example> {
    let messages: Vec<BowVector> = instance.messages.iter().map(|m| vectorize(m, vocab)).collect();
    let conversation = messages
        .iter()
        .fold(BowVector::zeros(vocab.len()), |acc, m| acc.add(m));
    messages
        .into_iter()
        .map(|message| {
            let context = if context_excludes_target {
                conversation.subtract(&message)
            } else {
                conversation.clone()
            };
            Example { message, context }
        })
        .collect()
}

pub fn encode_instances(
    instances: &[ConversationInstance],
    vocab: &Vocabulary,
    context_excludes_target: bool,
) -> Vec<Example> {
    instances
        .iter()
        .flat_map(|inst| encode_instance(inst, vocab, context_excludes_target))
        .collect()
}

/// Train / dev / test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffle with a generator derived from `seed`, then cut by `ratios`.
///
/// Sizes are rounded to the nearest integer; every split with a non-zero
/// ratio receives at least one item, and the train split absorbs rounding.
pub fn split_dataset<T>(
    mut items: Vec<T>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Split<T>, CorpusError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    let n = items.len();
    if n < needed {
        return Err(CorpusError::TooFewForSplit { have: n, need: needed });
    }

    let mut sizes = [0usize; 3];
    for i in 1..3 {
        if ratios[i] > 0.0 {
            sizes[i] = ((ratios[i] * n as f64).round() as usize).max(1);
        }
    }
    let reserved_for_train = usize::from(ratios[0] > 0.0);
    while sizes[1] + sizes[2] + reserved_for_train > n {
        let shrink = if sizes[1] >= sizes[2] { 1 } else { 2 };
        sizes[shrink] -= 1;
    }
    sizes[0] = n - sizes[1] - sizes[2];

    items.shuffle(&mut rng_for(seed, "split", 0));
    let test = items.split_off(sizes[0] + sizes[1]);
    let dev = items.split_off(sizes[0]);
    Ok(Split { train: items, dev, test })
}

/// Split whole trees so that paths sharing a root never straddle splits.
pub fn split_by_tree(
    instances: Vec<ConversationInstance>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Split<ConversationInstance>, CorpusError> {
    let mut groups: Vec<Vec<ConversationInstance>> = Vec::new();
    let mut by_root: HashMap<String, usize> = HashMap::new();
    for inst in instances {
        let root = inst.ids.first().cloned().unwrap_or_default();
        let slot = *by_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(inst);
    }
    let split = split_dataset(groups, ratios, seed)?;
    let flat = |g: Vec<Vec<ConversationInstance>>| g.into_iter().flatten().collect();
    Ok(Split {
        train: flat(split.train),
        dev: flat(split.dev),
        test: flat(split.test),
    })
}

/// Convenience: posts → trees → instances with normalized tokens.
pub fn instances_from_posts(
    posts: &[RawPost],
    tokenize: impl Fn(&str) -> Vec<String>,
) -> Result<Vec<ConversationInstance>, CorpusError> {
    let trees = super::tree::build_trees(posts)?;
    let tokens: HashMap<String, Vec<String>> = posts
        .iter()
        .map(|p| (p.id.clone(), tokenize(&p.text)))
        .collect();
    instances_from_trees(&trees, &tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_ten_ten_on_ten_items() {
        let split = split_dataset((0..10).collect(), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(
            (split.train.len(), split.dev.len(), split.test.len()),
            (8, 1, 1)
        );
        let mut all: Vec<i32> = split.train.iter().chain(&split.dev).chain(&split.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn all_train_ratio() {
        let split = split_dataset(vec![1, 2, 3], [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(split.train.len(), 3);
        assert!(split.dev.is_empty() && split.test.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = split_dataset((0..50).collect::<Vec<_>>(), [0.8, 0.1, 0.1], 11).unwrap();
        let b = split_dataset((0..50).collect::<Vec<_>>(), [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!(a, b);
        let c = split_dataset((0..50).collect::<Vec<_>>(), [0.8, 0.1, 0.1], 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn too_few_items_rejected() {
        let err = split_dataset(vec![1, 2], [0.8, 0.1, 0.1], 0).unwrap_err();
        assert!(matches!(err, CorpusError::TooFewForSplit { have: 2, need: 3 }));
        assert!(split_dataset(vec![1, 2, 3], [0.5, 0.6, -0.1], 0).is_err());
    }

    #[test]
    fn small_splits_get_one_each() {
        let split = split_dataset((0..3).collect::<Vec<_>>(), [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((split.train.len(), split.dev.len(), split.test.len()), (1, 1, 1));
    }

    #[test]
    fn tree_split_keeps_paths_together() {
        let mut insts = Vec::new();
        for t in 0..20 {
            for leaf in 0..3 {
                insts.push(ConversationInstance {
                    ids: vec![format!("r{t}"), format!("r{t}-{leaf}")],
                    messages: vec![vec![], vec![]],
                });
            }
        }
        let split = split_by_tree(insts, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!(split.train.len(), 48);
        for inst in &split.dev {
            assert!(!split.train.iter().any(|t| t.ids[0] == inst.ids[0]));
        }
    }

    #[test]
    fn context_can_exclude_target() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), 1, false), ("b".into(), 1, false)]).unwrap();
        let inst = ConversationInstance {
            ids: vec!["1".into(), "2".into()],
            messages: vec![vec!["a".into()], vec!["a".into(), "b".into()]],
        };
        let incl = encode_instance(&inst, &vocab, false);
        assert_eq!(incl[0].context.to_dense(), vec![2, 1]);
        let excl = encode_instance(&inst, &vocab, true);
        assert_eq!(excl[0].context.to_dense(), vec![1, 1]);
        assert_eq!(excl[1].context.to_dense(), vec![1, 0]);
    }
}
