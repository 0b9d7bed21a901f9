//! Intrinsic evaluation: top words, coherence, clustering agreement,
//! recovery of planted distributions and per-word attribution.

mod align;
mod attribution;
mod cluster;
mod coherence;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;

pub use align::{align_clusters, hungarian_max, jensen_shannon, mean_cross_jsd, top_indices, Alignment};
pub use attribution::{word_attribution, Tag, WordAttribution};
pub use cluster::{
    alignment_matrix, cluster_scores, entropy, homogeneity, purity, variation_of_information, AlignmentMatrix,
    ClusterScore,
};
pub use coherence::{npmi_coherence, pair_npmi, Coherence, CooccurrenceCounts, TopicCoherence};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("requested {requested} words from a vocabulary of {available}")]
    TooManyWords { requested: usize, available: usize },
    #[error("length mismatch: {left} assignments vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("row count mismatch: {left} vs {right}")]
    RowMismatch { left: usize, right: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Ranked words of one row of a word matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWords {
    pub indices: Vec<usize>,
    pub words: Vec<String>,
    pub probs: Vec<f64>,
}

/// Top-N words for every row of a topic or role matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub n: usize,
    pub rows: Vec<RankedWords>,
}

impl TopicSummary {
    /// One line per row: `row\tword1 word2 ...`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\n", r.words.join(" ")));
        }
        out
    }

    pub fn word_lists(&self) -> Vec<Vec<String>> {
        self.rows.iter().map(|r| r.words.clone()).collect()
    }
}

/// Rank each row by descending probability, ties by lower index; with
/// `exclude_stop`, stop-flagged words are skipped.
pub fn top_n_words(matrix: &Array2<f64>, vocab: &Vocabulary, n: usize, exclude_stop: bool) -> Result<TopicSummary, EvalError> {
    if matrix.ncols() != vocab.len() {
        return Err(EvalError::Invalid(format!(
            "matrix has {} columns for a vocabulary of {}",
            matrix.ncols(),
            vocab.len()
        )));
    }
    let available = if exclude_stop {
        vocab.stop_flags().iter().filter(|s| !**s).count()
    } else {
        vocab.len()
    };
    if n > available {
        return Err(EvalError::TooManyWords { requested: n, available });
    }
    let rows = matrix
        .rows()
        .into_iter()
        .map(|row| {
            let indices: Vec<usize> = top_indices(&row, usize::MAX)
                .into_iter()
                .filter(|&i| !(exclude_stop && vocab.is_stop(i)))
                .take(n)
                .collect();
            RankedWords {
                words: indices.iter().map(|&i| vocab.word(i).to_string()).collect(),
                probs: indices.iter().map(|&i| row[i]).collect(),
                indices,
            }
        })
        .collect();
    Ok(TopicSummary { n, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_entries((0..n).map(|i| (format!("w{i}"), 1, i == 1)).collect()).unwrap()
    }

    #[test]
    fn top_two_of_simple_row() {
        let s = top_n_words(&array![[0.5, 0.3, 0.2]], &vocab(3), 2, false).unwrap();
        assert_eq!(s.rows[0].indices, vec![0, 1]);
        assert_eq!(s.rows[0].words, vec!["w0", "w1"]);
    }

    #[test]
    fn uniform_row_uses_index_order() {
        let s = top_n_words(&array![[0.25, 0.25, 0.25, 0.25]], &vocab(4), 3, false).unwrap();
        assert_eq!(s.rows[0].indices, vec![0, 1, 2]);
    }

    #[test]
    fn stop_words_can_be_skipped() {
        let s = top_n_words(&array![[0.2, 0.5, 0.3]], &vocab(3), 2, true).unwrap();
        assert_eq!(s.rows[0].indices, vec![2, 0]);
        assert!(top_n_words(&array![[0.2, 0.5, 0.3]], &vocab(3), 3, true).is_err());
        assert!(matches!(
            top_n_words(&array![[0.2, 0.5, 0.3]], &vocab(3), 4, false),
            Err(EvalError::TooManyWords { requested: 4, available: 3 })
        ));
    }
}
