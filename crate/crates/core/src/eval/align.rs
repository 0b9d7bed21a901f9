use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::nn::PROB_FLOOR;

/// Indices of `row` by descending value, ties by lower index, at most `n`.
pub fn top_indices(row: &ArrayView1<f64>, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Maximum-weight perfect matching on a square matrix.
/// Returns `assignment[row] = column`.
pub fn hungarian_max(weights: &Array2<f64>) -> Result<Vec<usize>, EvalError> {
    let n = weights.nrows();
    if weights.ncols() != n {
        return Err(EvalError::RowMismatch {
            left: n,
            right: weights.ncols(),
        });
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(EvalError::Invalid("non-finite weight".into()));
    }
    // Shortest augmenting paths with potentials, minimizing −weight.
    // Rows and columns are 1-based; index 0 is the virtual source.
    let cost = |i: usize, j: usize| -weights[[i - 1, j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched[j] - 1] = j - 1;
    }
    Ok(assignment)
}

fn cosine(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    let denom = a.dot(a).sqrt() * b.dot(b).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[learned_row] = planted_row`.
    pub permutation: Vec<usize>,
    pub similarities: Vec<f64>,
    /// Per matched pair, shared fraction of the two top-`top_n` lists.
    pub overlaps: Vec<f64>,
    pub mean_overlap: f64,
}

/// Match learned rows to planted rows maximizing summed cosine similarity,
/// then score each pair by top-`top_n` word overlap.
pub fn align_clusters(learned: &Array2<f64>, planted: &Array2<f64>, top_n: usize) -> Result<Alignment, EvalError> {
    if learned.nrows() != planted.nrows() {
        return Err(EvalError::RowMismatch {
            left: learned.nrows(),
            right: planted.nrows(),
        });
    }
    if learned.ncols() != planted.ncols() {
        return Err(EvalError::Invalid(format!(
            "column count mismatch: {} vs {}",
            learned.ncols(),
            planted.ncols()
        )));
    }
    if learned.nrows() == 0 || top_n == 0 {
        return Err(EvalError::Empty("nothing to align"));
    }
    let n = learned.nrows();
    let sim = Array2::from_shape_fn((n, n), |(i, j)| cosine(&learned.row(i), &planted.row(j)));
    let permutation = hungarian_max(&sim)?;
    let k = top_n.min(learned.ncols());
    let mut similarities = Vec::with_capacity(n);
    let mut overlaps = Vec::with_capacity(n);
    for (i, &j) in permutation.iter().enumerate() {
        similarities.push(sim[[i, j]]);
        let a = top_indices(&learned.row(i), k);
        let b = top_indices(&planted.row(j), k);
        let shared = a.iter().filter(|x| b.contains(x)).count();
        overlaps.push(shared as f64 / k as f64);
    }
    let mean_overlap = overlaps.iter().sum::<f64>() / n as f64;
    Ok(Alignment {
        permutation,
        similarities,
        overlaps,
        mean_overlap,
    })
}

/// Jensen-Shannon divergence, natural log; in `[0, ln 2]`.
pub fn jensen_shannon(p: &ArrayView1<f64>, q: &ArrayView1<f64>) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q.iter()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m.max(PROB_FLOOR)).ln();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m.max(PROB_FLOOR)).ln();
        }
    }
    js.max(0.0)
}

/// Mean JSD over every (row of `a`, row of `b`) pair.
pub fn mean_cross_jsd(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for r in a.rows() {
        for s in b.rows() {
            total += jensen_shannon(&r, &s);
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_alignment() {
        let m = array![[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]];
        let a = align_clusters(&m, &m, 2).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.mean_overlap, 1.0);
    }

    #[test]
    fn permuted_rows_recovered() {
        let planted = array![[0.7, 0.2, 0.1, 0.0], [0.1, 0.1, 0.8, 0.0], [0.0, 0.1, 0.1, 0.8]];
        let learned = array![[0.0, 0.1, 0.1, 0.8], [0.7, 0.2, 0.1, 0.0], [0.1, 0.1, 0.8, 0.0]];
        let a = align_clusters(&learned, &planted, 2).unwrap();
        assert_eq!(a.permutation, vec![2, 0, 1]);
        assert_eq!(a.mean_overlap, 1.0);
    }

    #[test]
    fn row_mismatch_rejected() {
        let a = array![[1.0, 0.0]];
        let b = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(align_clusters(&a, &b, 1), Err(EvalError::RowMismatch { .. })));
    }

    #[test]
    fn jsd_bounds() {
        let p = array![1.0, 0.0];
        let q = array![0.0, 1.0];
        assert!((jensen_shannon(&p.view(), &q.view()) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(jensen_shannon(&p.view(), &p.view()), 0.0);
    }
}
