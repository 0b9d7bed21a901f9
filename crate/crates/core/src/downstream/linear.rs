use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DownstreamError;
use crate::nn::argmax;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
}

/// `confusion[gold][predicted]`.
pub fn confusion_matrix(predicted: &[usize], gold: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        m[g][p] += 1;
    }
    m
}

/// Accuracy and macro-F1 over `classes` labels; a class absent from the
/// gold labels contributes F1 = 0.
pub fn classification_metrics(predicted: &[usize], gold: &[usize], classes: usize) -> Result<Metrics, DownstreamError> {
    if predicted.len() != gold.len() {
        return Err(DownstreamError::LengthMismatch(predicted.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(DownstreamError::Empty("no predictions to score"));
    }
    if let Some(&c) = predicted.iter().chain(gold).find(|&&c| c >= classes) {
        return Err(DownstreamError::Invalid(format!("class {c} out of range for {classes} classes")));
    }
    let m = confusion_matrix(predicted, gold, classes);
    let correct: usize = (0..classes).map(|c| m[c][c]).sum();
    let mut per_class_f1 = Vec::with_capacity(classes);
    let mut support = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = m[c][c] as f64;
        let gold_c: usize = m[c].iter().sum();
        let pred_c: usize = (0..classes).map(|g| m[g][c]).sum();
        support.push(gold_c);
        let f1 = if gold_c == 0 || tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (gold_c + pred_c) as f64
        };
        per_class_f1.push(f1);
    }
    Ok(Metrics {
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / classes as f64,
        per_class_f1,
        support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    /// Regularization strength of the max-margin objective.
    pub lambda: f64,
    pub epochs: usize,
    /// Standardize features with training-set mean and deviation.
    pub standardize: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 30,
            standardize: true,
        }
    }
}

/// Multiclass linear max-margin classifier (Crammer–Singer hinge),
/// trained by Pegasos-style stochastic subgradient steps with iterate
/// averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `classes × features`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl LinearClassifier {
    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }

    fn prepare(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        (x - &self.mean) / &self.scale
    }

    pub fn scores(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&self.prepare(x)) + &self.bias
    }

    pub fn predict(&self, x: &ArrayView1<f64>) -> usize {
        argmax(&self.scores(x).view())
    }

    pub fn predict_all(&self, features: &Array2<f64>) -> Vec<usize> {
        features.rows().into_iter().map(|r| self.predict(&r)).collect()
    }

    pub fn fit(
        features: &Array2<f64>,
        labels: &[usize],
        classes: usize,
        config: &LinearConfig,
        seed: u64,
    ) -> Result<Self, DownstreamError> {
        let (n, dim) = features.dim();
        if n != labels.len() {
            return Err(DownstreamError::LengthMismatch(n, labels.len()));
        }
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            return Err(DownstreamError::SingleClass);
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= classes) {
            return Err(DownstreamError::Invalid(format!("class {c} out of range for {classes} classes")));
        }
        if !(config.lambda > 0.0) || config.epochs == 0 {
            return Err(DownstreamError::Invalid("lambda and epochs must be positive".into()));
        }

        let (mean, scale) = if config.standardize {
            let mean = features.mean_axis(Axis(0)).expect("non-empty");
            let std = features.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
            (mean, std)
        } else {
            (Array1::zeros(dim), Array1::ones(dim))
        };
        let x = (features - &mean) / &scale;

        let mut w = Array2::<f64>::zeros((classes, dim));
        let mut b = Array1::<f64>::zeros(classes);
        let mut w_avg = w.clone();
        let mut b_avg = b.clone();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_for(seed, "linear", 0);
        let mut t = 0usize;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (config.lambda * (t as f64 + 1.0 / config.lambda));
                let xi = x.row(i);
                let y = labels[i];
                let scores = w.dot(&xi) + &b;
                let mut rival = usize::MAX;
                let mut rival_score = f64::NEG_INFINITY;
                for c in 0..classes {
                    if c != y && scores[c] > rival_score {
                        rival = c;
                        rival_score = scores[c];
                    }
                }
                w *= 1.0 - eta * config.lambda;
                if rival != usize::MAX && 1.0 + rival_score - scores[y] > 0.0 {
                    w.row_mut(y).scaled_add(eta, &xi);
                    w.row_mut(rival).scaled_add(-eta, &xi);
                    b[y] += eta;
                    b[rival] -= eta;
                }
                let k = 1.0 / t as f64;
                w_avg *= 1.0 - k;
                w_avg.scaled_add(k, &w);
                b_avg *= 1.0 - k;
                b_avg.scaled_add(k, &b);
            }
        }
        Ok(Self {
            weight: w_avg,
            bias: b_avg,
            mean,
            scale,
        })
    }
}

/// Fit on the training rows and score on the held-out rows.
pub fn train_classifier(
    features: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    split: &super::Holdout,
    config: &LinearConfig,
    seed: u64,
) -> Result<(LinearClassifier, Metrics), DownstreamError> {
    let x_train = features.select(Axis(0), &split.train);
    let y_train: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let clf = LinearClassifier::fit(&x_train, &y_train, classes, config, seed)?;
    let x_test = features.select(Axis(0), &split.test);
    let y_test: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let metrics = classification_metrics(&clf.predict_all(&x_test), &y_test, classes)?;
    Ok((clf, metrics))
}
