use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::Array1;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::instance::ConversationInstance;
use super::tokenize::is_punctuation_token;
use super::CorpusError;

/// Word list with counts and stop flags. Index order is descending corpus
/// count with ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    stop: Vec<bool>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from `(word, count, stop)` triples already in index order.
    pub fn from_entries(entries: Vec<(String, u64, bool)>) -> Result<Self, CorpusError> {
        let mut vocab = Vocabulary::default();
        for (word, count, stop) in entries {
            if vocab.index.contains_key(&word) {
                return Err(CorpusError::Format(format!("duplicate vocabulary word {word:?}")));
            }
            vocab.index.insert(word.clone(), vocab.words.len());
            vocab.words.push(word);
            vocab.counts.push(count);
            vocab.stop.push(stop);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn is_stop(&self, index: usize) -> bool {
        self.stop[index]
    }

    pub fn stop_flags(&self) -> &[bool] {
        &self.stop
    }

    /// Hex SHA-256 over the newline-joined word list; identifies the
    /// vocabulary a checkpoint was trained against.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for word in &self.words {
            hasher.update(word.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
        }
        hex
    }

    /// TSV rows: index, word, count, stop flag (0/1).
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            writeln!(out, "{i}\t{word}\t{}\t{}", self.counts[i], u8::from(self.stop[i]))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = || CorpusError::Format(format!("vocabulary line {}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad());
            }
            let index: usize = fields[0].parse().map_err(|_| bad())?;
            if index != entries.len() {
                return Err(bad());
            }
            let count: u64 = fields[2].parse().map_err(|_| bad())?;
            let stop = match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            entries.push((fields[1].to_string(), count, stop));
        }
        Self::from_entries(entries)
    }
}

/// Count tokens over the distinct messages of `corpus` (a message shared by
/// several root-to-leaf paths is counted once) and keep words seen at least
/// `min_count` times.
pub fn build_vocabulary(
    corpus: &[ConversationInstance],
    min_count: u64,
    stop_list: &HashSet<String>,
) -> Result<Vocabulary, CorpusError> {
    if min_count == 0 {
        return Err(CorpusError::InvalidArgument("min_count must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut messages: Vec<&Vec<String>> = Vec::new();
    for instance in corpus {
        for (id, tokens) in instance.ids.iter().zip(&instance.messages) {
            if seen.insert(id.as_str()) {
                messages.push(tokens);
            }
        }
    }

    let counts: HashMap<&str, u64> = messages
        .par_chunks(1024)
        .map(|chunk| {
            let mut local: HashMap<&str, u64> = HashMap::new();
            for tokens in chunk {
                for t in tokens.iter() {
                    *local.entry(t.as_str()).or_default() += 1;
                }
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(
        kept.into_iter()
            .map(|(w, c)| {
                let stop = stop_list.contains(w) || is_punctuation_token(w);
                (w.to_string(), c, stop)
            })
            .collect(),
    )
}

/// Sparse count vector over a vocabulary of size `dim`. Entries are sorted
/// by index and hold strictly positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowVector {
    dim: usize,
    entries: Vec<(u32, u32)>,
}

impl BowVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for i in indices {
            assert!(i < dim, "index {i} out of range for dimension {dim}");
            *map.entry(i as u32).or_default() += 1;
        }
        Self {
            dim,
            entries: map.into_iter().collect(),
        }
    }

    pub fn from_dense(counts: &[u32]) -> Self {
        Self {
            dim: counts.len(),
            entries: counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| u64::from(c)).sum()
    }

    pub fn get(&self, index: usize) -> u32 {
        self.entries
            .binary_search_by_key(&(index as u32), |&(i, _)| i)
            .map_or(0, |pos| self.entries[pos].1)
    }

    pub fn to_dense(&self) -> Vec<u32> {
        let mut out = vec![0; self.dim];
        for &(i, c) in &self.entries {
            out[i as usize] = c;
        }
        out
    }

    pub fn to_array(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim);
        self.add_into(out.as_slice_mut().expect("fresh array is contiguous"));
        out
    }

    /// Add the counts into a dense row.
    pub fn add_into(&self, row: &mut [f64]) {
        for &(i, c) in &self.entries {
            row[i as usize] += f64::from(c);
        }
    }

    pub fn add(&self, other: &BowVector) -> BowVector {
        assert_eq!(self.dim, other.dim, "bag-of-words dimensions differ");
        let mut merged: BTreeMap<u32, u32> = self.entries.iter().copied().collect();
        for &(i, c) in &other.entries {
            *merged.entry(i).or_default() += c;
        }
        BowVector {
            dim: self.dim,
            entries: merged.into_iter().collect(),
        }
    }

    /// Element-wise difference; `other` must be dominated by `self`.
    pub fn subtract(&self, other: &BowVector) -> BowVector {
        assert_eq!(self.dim, other.dim, "bag-of-words dimensions differ");
        let mut merged: BTreeMap<u32, u32> = self.entries.iter().copied().collect();
        for &(i, c) in &other.entries {
            let slot = merged.get_mut(&i).expect("subtrahend not dominated");
            *slot = slot.checked_sub(c).expect("subtrahend not dominated");
        }
        BowVector {
            dim: self.dim,
            entries: merged.into_iter().filter(|&(_, c)| c > 0).collect(),
        }
    }
}

/// Count in-vocabulary tokens; out-of-vocabulary tokens are ignored.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> BowVector {
    BowVector::from_indices(
        vocab.len(),
        tokens.iter().filter_map(|t| vocab.index_of(t.as_ref())),
    )
}

/// Conversation vector: the sum of all message vectors of the instance.
pub fn vectorize_conversation(instance: &ConversationInstance, vocab: &Vocabulary) -> BowVector {
    instance
        .messages
        .iter()
        .fold(BowVector::zeros(vocab.len()), |acc, m| acc.add(&vectorize(m, vocab)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(messages: &[&[&str]]) -> ConversationInstance {
        ConversationInstance {
            ids: (0..messages.len()).map(|i| format!("m{i}")).collect(),
            messages: messages
                .iter()
                .map(|m| m.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn abc() -> Vocabulary {
        Vocabulary::from_entries(vec![
            ("a".into(), 3, false),
            ("b".into(), 2, false),
            ("c".into(), 1, false),
        ])
        .unwrap()
    }

    #[test]
    fn min_count_boundary() {
        let mut msgs: Vec<Vec<&str>> = Vec::new();
        for i in 0..20 {
            let mut m = vec!["keep"];
            if i < 19 {
                m.push("drop");
            }
            msgs.push(m);
        }
        let refs: Vec<&[&str]> = msgs.iter().map(Vec::as_slice).collect();
        let vocab = build_vocabulary(&[instance(&refs)], 20, &HashSet::new()).unwrap();
        assert_eq!(vocab.index_of("keep"), Some(0));
        assert_eq!(vocab.index_of("drop"), None);
    }

    #[test]
    fn empty_corpus_gives_empty_vocabulary() {
        let vocab = build_vocabulary(&[], 1, &HashSet::new()).unwrap();
        assert_eq!(vocab.len(), 0);
    }

    #[test]
    fn zero_min_count_rejected() {
        assert!(build_vocabulary(&[], 0, &HashSet::new()).is_err());
    }

    #[test]
    fn order_and_stop_flags() {
        let inst = instance(&[&["b", "a", "!", "the"], &["a", "b", "!"], &["zz"]]);
        let stop: HashSet<String> = ["the".to_string()].into();
        let vocab = build_vocabulary(&[inst], 1, &stop).unwrap();
        assert_eq!(vocab.words(), &["!", "a", "b", "the", "zz"]);
        assert!(vocab.is_stop(0));
        assert!(!vocab.is_stop(1));
        assert!(vocab.is_stop(3));
    }

    #[test]
    fn shared_messages_count_once() {
        let a = instance(&[&["w"], &["x"]]);
        let b = ConversationInstance {
            ids: vec!["m0".into(), "m9".into()],
            messages: vec![vec!["w".into()], vec!["y".into()]],
        };
        let vocab = build_vocabulary(&[a, b], 2, &HashSet::new()).unwrap();
        assert_eq!(vocab.len(), 0);
    }

    #[test]
    fn vectorize_examples() {
        let vocab = abc();
        assert_eq!(vectorize(&["a", "a", "b"], &vocab).to_dense(), vec![2, 1, 0]);
        assert_eq!(vectorize(&["q"], &vocab).to_dense(), vec![0, 0, 0]);
        let conv = vectorize_conversation(&instance(&[&["a"], &["a", "b"]]), &vocab);
        assert_eq!(conv.to_dense(), vec![2, 1, 0]);
    }

    #[test]
    fn tsv_round_trip() {
        let vocab = abc();
        let mut buf = Vec::new();
        vocab.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().next(), Some("0\ta\t3\t0"));
        let back = Vocabulary::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.fingerprint(), vocab.fingerprint());
    }

    #[test]
    fn subtract_removes_target() {
        let total = BowVector::from_dense(&[2, 1, 0]);
        let part = BowVector::from_dense(&[1, 1, 0]);
        assert_eq!(total.subtract(&part).to_dense(), vec![1, 0, 0]);
    }
}
