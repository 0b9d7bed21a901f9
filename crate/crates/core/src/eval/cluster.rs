use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub purity: f64,
    pub homogeneity: f64,
    pub vi: f64,
}

struct Contingency {
    joint: Vec<f64>,
    clusters: Vec<f64>,
    labels: Vec<f64>,
}

fn contingency<A: Eq + Hash, L: Eq + Hash>(assignments: &[A], labels: &[L]) -> Result<Contingency, EvalError> {
    if assignments.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: assignments.len(),
            right: labels.len(),
        });
    }
    if assignments.is_empty() {
        return Err(EvalError::Empty("no items to score"));
    }
    let mut a_ids = HashMap::new();
    let mut l_ids = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    for (a, l) in assignments.iter().zip(labels) {
        let next = a_ids.len();
        let ai = *a_ids.entry(a).or_insert(next);
        let next = l_ids.len();
        let li = *l_ids.entry(l).or_insert(next);
        *cells.entry((ai, li)).or_default() += 1.0;
    }
    let mut clusters = vec![0.0; a_ids.len()];
    let mut label_totals = vec![0.0; l_ids.len()];
    let mut joint = Vec::with_capacity(cells.len());
    for (&(a, l), &c) in &cells {
        clusters[a] += c;
        label_totals[l] += c;
        joint.push(c);
    }
    Ok(Contingency {
        joint,
        clusters,
        labels: label_totals,
    })
}

/// Entropy (natural log) of a distribution given by counts.
pub fn entropy(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

impl Contingency {
    fn joint_entropy(&self) -> f64 {
        entropy(&self.joint)
    }

    /// `H(labels | clusters)`
    fn label_given_cluster(&self) -> f64 {
        (self.joint_entropy() - entropy(&self.clusters)).max(0.0)
    }

    /// `H(clusters | labels)`
    fn cluster_given_label(&self) -> f64 {
        (self.joint_entropy() - entropy(&self.labels)).max(0.0)
    }
}

/// Fraction of items whose label is the majority label of their cluster.
pub fn purity<A: Eq + Hash, L: Eq + Hash>(assignments: &[A], labels: &[L]) -> Result<f64, EvalError> {
    if assignments.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: assignments.len(),
            right: labels.len(),
        });
    }
    if assignments.is_empty() {
        return Err(EvalError::Empty("no items to score"));
    }
    let mut by_cluster: HashMap<&A, HashMap<&L, usize>> = HashMap::new();
    for (a, l) in assignments.iter().zip(labels) {
        *by_cluster.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = by_cluster.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / assignments.len() as f64)
}

/// `1 − H(labels | clusters) / H(labels)`, or 1 when the labels have zero
/// entropy.
pub fn homogeneity<A: Eq + Hash, L: Eq + Hash>(assignments: &[A], labels: &[L]) -> Result<f64, EvalError> {
    let c = contingency(assignments, labels)?;
    let h_l = entropy(&c.labels);
    if h_l <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - c.label_given_cluster() / h_l).clamp(0.0, 1.0))
}

/// `H(labels | clusters) + H(clusters | labels)`.
pub fn variation_of_information<A: Eq + Hash, L: Eq + Hash>(assignments: &[A], labels: &[L]) -> Result<f64, EvalError> {
    let c = contingency(assignments, labels)?;
    Ok(c.label_given_cluster() + c.cluster_given_label())
}

pub fn cluster_scores<A: Eq + Hash, L: Eq + Hash>(assignments: &[A], labels: &[L]) -> Result<ClusterScore, EvalError> {
    Ok(ClusterScore {
        purity: purity(assignments, labels)?,
        homogeneity: homogeneity(assignments, labels)?,
        vi: variation_of_information(assignments, labels)?,
    })
}

/// Label × role matrix of message fractions; rows in label order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix<L> {
    pub labels: Vec<L>,
    pub rows: Array2<f64>,
    /// Labels with no messages; their rows are all zero.
    pub empty_rows: Vec<usize>,
}

impl<L: std::fmt::Display> AlignmentMatrix<L> {
    /// Heatmap CSV: header `label,role_0,...`, one row per label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for r in 0..self.rows.ncols() {
            out.push_str(&format!(",role_{r}"));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(self.rows.rows()) {
            out.push_str(&label.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Entry `(l, r)` is the fraction of label-`l` messages assigned role `r`.
/// `declared` adds labels that may have no messages.
pub fn alignment_matrix<L: Ord + Clone>(
    assignments: &[usize],
    labels: &[L],
    roles: usize,
    declared: &[L],
) -> Result<AlignmentMatrix<L>, EvalError> {
    if assignments.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: assignments.len(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= roles) {
        return Err(EvalError::Invalid(format!("role {bad} out of range for {roles} roles")));
    }
    let set: BTreeSet<L> = labels.iter().chain(declared).cloned().collect();
    let ordered: Vec<L> = set.into_iter().collect();
    let mut rows = Array2::<f64>::zeros((ordered.len(), roles));
    for (&a, l) in assignments.iter().zip(labels) {
        let i = ordered.binary_search(l).expect("label collected above");
        rows[[i, a]] += 1.0;
    }
    let mut empty_rows = Vec::new();
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        } else {
            empty_rows.push(i);
        }
    }
    Ok(AlignmentMatrix {
        labels: ordered,
        rows,
        empty_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_clusterings() {
        let a = [0, 0, 1, 2, 2];
        let s = cluster_scores(&a, &["x", "x", "y", "z", "z"]).unwrap();
        assert_eq!(s.purity, 1.0);
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
        assert!(s.vi.abs() < 1e-12);
    }

    #[test]
    fn single_cluster_two_classes() {
        assert_eq!(purity(&[0, 0, 0, 0], &[1, 1, 2, 2]).unwrap(), 0.5);
        assert_eq!(homogeneity(&[0, 0, 1, 1], &[5, 5, 5, 5]).unwrap(), 1.0);
    }

    #[test]
    fn independent_two_by_two() {
        let vi = variation_of_information(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((vi - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(purity(&[0, 1], &[0]), Err(EvalError::LengthMismatch { .. })));
        assert!(homogeneity::<usize, usize>(&[], &[]).is_err());
    }

    #[test]
    fn alignment_hand_case() {
        let m = alignment_matrix(&[0, 1, 1], &["q", "q", "s"], 2, &[]).unwrap();
        assert_eq!(m.labels, vec!["q", "s"]);
        assert_eq!(m.rows, array![[0.5, 0.5], [0.0, 1.0]]);
        let m = alignment_matrix(&[1, 0], &["a", "b"], 2, &["c"]).unwrap();
        assert_eq!(m.rows, array![[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(m.empty_rows, vec![2]);
    }
}
