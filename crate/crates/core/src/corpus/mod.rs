//! Thread ingestion: reply trees, root-to-leaf instances, tokenization,
//! vocabulary and bag-of-words encoding.

mod instance;
mod tokenize;
mod tree;
mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use instance::{
    encode_instance, encode_instances, instances_from_posts, instances_from_trees, split_by_tree,
    split_dataset, ConversationInstance, Example, Split,
};
pub use tokenize::{
    extract_hashtags, is_mostly_ascii, is_punctuation_token, normalize_tokens, HASH_TAG,
    MENTION_TAG, URL_TAG,
};
pub use tree::{build_trees, flatten_to_paths, ConversationTree, RawPost};
pub use vocab::{build_vocabulary, vectorize, vectorize_conversation, BowVector, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("post on line {line} has an empty id")]
    EmptyId { line: usize },
    #[error("reply cycle among posts {0:?}")]
    Cycle(Vec<String>),
    #[error("{have} instances cannot fill {need} non-empty splits")]
    TooFewForSplit { have: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path).map(BufReader::new).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CorpusError> {
    File::create(path).map(BufWriter::new).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One JSON object per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            CorpusError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| CorpusError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_posts(path: &Path) -> Result<Vec<RawPost>, CorpusError> {
    read_jsonl(path)
}

/// Whitespace-trimmed, non-empty, non-`#` lines of a text file.
pub fn read_word_list(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let mut words = HashSet::new();
    for line in open(path)?.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() && !word.starts_with("# ") {
            words.insert(word.to_string());
        }
    }
    Ok(words)
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary, CorpusError> {
    Vocabulary::read_tsv(open(path)?)
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<(), CorpusError> {
    let mut out = create(path)?;
    vocab.write_tsv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    pub min_count: u64,
    pub stop_list: HashSet<String>,
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Drop posts whose letters are mostly non-ASCII.
    pub ascii_only: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            min_count: 20,
            stop_list: HashSet::new(),
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
            ascii_only: false,
        }
    }
}

/// Result of preprocessing a post dump.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub vocab: Vocabulary,
    pub split: Split<ConversationInstance>,
}

/// Posts → trees → instances → tree-level split; the vocabulary is built
/// from the training split only. Tokens are kept as produced by the
/// tokenizer; out-of-vocabulary words are dropped at vectorization time.
pub fn preprocess(posts: &[RawPost], options: &PreprocessOptions) -> Result<Preprocessed, CorpusError> {
    let kept: Vec<RawPost>;
    let posts = if options.ascii_only {
        kept = posts
            .iter()
            .filter(|p| is_mostly_ascii(&p.text, 0.9))
            .cloned()
            .collect();
        &kept[..]
    } else {
        posts
    };
    let instances = instances_from_posts(posts, normalize_tokens)?;
    let split = split_by_tree(instances, options.ratios, options.seed)?;
    let vocab = build_vocabulary(&split.train, options.min_count, &options.stop_list)?;
    Ok(Preprocessed { vocab, split })
}

impl Preprocessed {
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_vocabulary(&dir.join(VOCAB_FILE), &self.vocab)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.split.train)?;
        write_jsonl(&dir.join(DEV_FILE), &self.split.dev)?;
        write_jsonl(&dir.join(TEST_FILE), &self.split.test)?;
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self, CorpusError> {
        let read_split = |name: &str| -> Result<Vec<ConversationInstance>, CorpusError> {
            let path = dir.join(name);
            if path.exists() {
                read_jsonl(&path)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self {
            vocab: read_vocabulary(&dir.join(VOCAB_FILE))?,
            split: Split {
                train: read_jsonl(&dir.join(TRAIN_FILE))?,
                dev: read_split(DEV_FILE)?,
                test: read_split(TEST_FILE)?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_writes_and_reads_back() {
        let mut posts = Vec::new();
        for t in 0..10 {
            posts.push(RawPost::new(format!("{t}"), None, "Gun control now!"));
            posts.push(RawPost::new(format!("{t}a"), Some(&format!("{t}")), "@x what? #guns"));
        }
        let opts = PreprocessOptions {
            min_count: 2,
            ..Default::default()
        };
        let pre = preprocess(&posts, &opts).unwrap();
        assert_eq!(pre.split.train.len(), 8);
        assert!(pre.vocab.index_of("HASH").is_some());
        assert!(pre.vocab.is_stop(pre.vocab.index_of("!").unwrap()));

        let dir = tempfile::tempdir().unwrap();
        pre.write_to(dir.path()).unwrap();
        let back = Preprocessed::read_from(dir.path()).unwrap();
        assert_eq!(back.vocab, pre.vocab);
        assert_eq!(back.split, pre.split);
    }
}
