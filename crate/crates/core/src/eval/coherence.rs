use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Smoothing added to the joint probability.
pub const NPMI_EPSILON: f64 = 1e-12;

/// Window counts for a fixed set of words.
///
/// A document of `L` tokens yields `L − w + 1` sliding windows of `w`
/// tokens, or a single window when `L ≤ w`. A word counts once per window
/// however often it occurs there.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceCounts {
    pub windows: u64,
    pub single: HashMap<String, u64>,
    pub joint: HashMap<(String, String), u64>,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Default)]
struct Partial {
    windows: u64,
    single: Vec<u64>,
    joint: HashMap<(u32, u32), u64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.windows += other.windows;
        if self.single.len() < other.single.len() {
            self.single.resize(other.single.len(), 0);
        }
        for (i, c) in other.single.into_iter().enumerate() {
            self.single[i] += c;
        }
        for (k, c) in other.joint {
            *self.joint.entry(k).or_default() += c;
        }
        self
    }
}

impl CooccurrenceCounts {
    pub fn count<S: AsRef<str> + Sync>(documents: &[Vec<S>], words: &HashSet<String>, window: usize) -> Result<Self, EvalError> {
        if window == 0 {
            return Err(EvalError::Invalid("window must be at least 1".into()));
        }
        let mut ids: Vec<&String> = words.iter().collect();
        ids.sort();
        let index: HashMap<&str, u32> = ids.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();

        let total = documents
            .par_iter()
            .map(|doc| {
                let mut part = Partial {
                    single: vec![0; ids.len()],
                    ..Default::default()
                };
                let tokens: Vec<Option<u32>> = doc.iter().map(|t| index.get(t.as_ref()).copied()).collect();
                let n_windows = if tokens.len() <= window { 1 } else { tokens.len() - window + 1 };
                let mut present: Vec<u32> = Vec::new();
                for start in 0..n_windows {
                    let end = (start + window).min(tokens.len());
                    present.clear();
                    present.extend(tokens[start..end].iter().flatten().copied());
                    present.sort_unstable();
                    present.dedup();
                    part.windows += 1;
                    for (a, &i) in present.iter().enumerate() {
                        part.single[i as usize] += 1;
                        for &j in &present[a + 1..] {
                            *part.joint.entry((i, j)).or_default() += 1;
                        }
                    }
                }
                part
            })
            .reduce(Partial::default, Partial::merge);

        let single = ids
            .iter()
            .enumerate()
            .map(|(i, w)| ((*w).clone(), total.single.get(i).copied().unwrap_or(0)))
            .collect();
        let joint = total
            .joint
            .into_iter()
            .map(|((i, j), c)| (ordered(ids[i as usize], ids[j as usize]), c))
            .collect();
        Ok(Self {
            windows: total.windows,
            single,
            joint,
        })
    }

    pub fn single(&self, w: &str) -> u64 {
        self.single.get(w).copied().unwrap_or(0)
    }

    pub fn joint(&self, a: &str, b: &str) -> u64 {
        self.joint.get(&ordered(a, b)).copied().unwrap_or(0)
    }
}

/// NPMI from window counts. Zero joint count gives −1; a pair present in
/// every window gives 1.
pub fn pair_npmi(count_a: u64, count_b: u64, count_ab: u64, windows: u64) -> f64 {
    if count_ab == 0 {
        return -1.0;
    }
    let n = windows as f64;
    let p_ab = count_ab as f64 / n;
    if p_ab >= 1.0 {
        return 1.0;
    }
    let p_a = count_a as f64 / n;
    let p_b = count_b as f64 / n;
    let joint = p_ab + NPMI_EPSILON;
    (joint / (p_a * p_b)).ln() / -joint.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCoherence {
    /// Mean pair NPMI; `None` when no pair could be scored.
    pub score: Option<f64>,
    pub pairs_scored: usize,
    pub pairs_skipped: usize,
    /// Topic words that never occur in the reference corpus.
    pub missing_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub window: usize,
    pub topics: Vec<TopicCoherence>,
    /// Mean over topics that have a score.
    pub mean: Option<f64>,
    /// Fraction of word pairs that were scored.
    pub coverage: f64,
}

/// Sliding-window NPMI coherence of each topic's word list against a
/// tokenized reference corpus.
pub fn npmi_coherence<S: AsRef<str> + Sync>(
    topics: &[Vec<String>],
    documents: &[Vec<S>],
    window: usize,
) -> Result<Coherence, EvalError> {
    let words: HashSet<String> = topics.iter().flatten().cloned().collect();
    let counts = CooccurrenceCounts::count(documents, &words, window)?;
    Ok(coherence_from_counts(topics, &counts, window))
}

fn coherence_from_counts(topics: &[Vec<String>], counts: &CooccurrenceCounts, window: usize) -> Coherence {
    let mut out = Vec::with_capacity(topics.len());
    let (mut scored_all, mut total_all) = (0usize, 0usize);
    for topic in topics {
        let mut missing: Vec<String> = topic.iter().filter(|w| counts.single(w) == 0).cloned().collect();
        missing.dedup();
        let (mut sum, mut scored, mut skipped) = (0.0, 0usize, 0usize);
        for i in 0..topic.len() {
            for j in i + 1..topic.len() {
                let (a, b) = (&topic[i], &topic[j]);
                let (ca, cb) = (counts.single(a), counts.single(b));
                if ca == 0 || cb == 0 {
                    skipped += 1;
                    continue;
                }
                sum += pair_npmi(ca, cb, counts.joint(a, b), counts.windows);
                scored += 1;
            }
        }
        scored_all += scored;
        total_all += scored + skipped;
        out.push(TopicCoherence {
            score: (scored > 0).then(|| sum / scored as f64),
            pairs_scored: scored,
            pairs_skipped: skipped,
            missing_words: missing,
        });
    }
    let scores: Vec<f64> = out.iter().filter_map(|t| t.score).collect();
    Coherence {
        window,
        mean: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        coverage: if total_all == 0 { 0.0 } else { scored_all as f64 / total_all as f64 },
        topics: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter().map(|d| d.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn always_together_scores_one() {
        let d = docs(&["a b x", "y z", "b a", "q"]);
        let c = npmi_coherence(&[vec!["a".into(), "b".into()]], &d, 10).unwrap();
        assert!((c.topics[0].score.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn never_together_scores_minus_one() {
        let d = docs(&["a x", "b y", "q"]);
        let c = npmi_coherence(&[vec!["a".into(), "b".into()]], &d, 10).unwrap();
        assert_eq!(c.topics[0].score, Some(-1.0));
    }

    #[test]
    fn missing_words_skip_pairs() {
        let d = docs(&["a b", "a c"]);
        let c = npmi_coherence(&[vec!["a".into(), "b".into(), "zzz".into()]], &d, 10).unwrap();
        assert_eq!(c.topics[0].pairs_scored, 1);
        assert_eq!(c.topics[0].pairs_skipped, 2);
        assert_eq!(c.topics[0].missing_words, vec!["zzz".to_string()]);
        assert!((c.coverage - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn windows_slide() {
        let d = docs(&["a b c d"]);
        let words: HashSet<String> = ["a", "d", "b"].iter().map(|s| s.to_string()).collect();
        let c = CooccurrenceCounts::count(&d, &words, 2).unwrap();
        assert_eq!(c.windows, 3);
        assert_eq!(c.single("b"), 2);
        assert_eq!(c.joint("a", "b"), 1);
        assert_eq!(c.joint("a", "d"), 0);
        assert!(CooccurrenceCounts::count(&d, &words, 0).is_err());
    }
}
