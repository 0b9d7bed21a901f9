//! Small dense-layer toolkit shared by the topic model and the classifiers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;

/// `x ↦ x·W + b` with `W` stored input-major (`in × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Weights uniform in `[-scale, scale]`, zero bias.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-scale..=scale));
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    pub fn forward_one(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulate parameter gradients for upstream gradient `dy` and return
    /// the gradient with respect to the input.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Affine) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    /// As [`Affine::backward`] without the input gradient.
    pub fn backward_params(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Affine) {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zero the gradient where the pre-activation was not positive.
pub fn relu_backward(pre: &Array2<f64>, dy: &mut Array2<f64>) {
    ndarray::Zip::from(dy).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn softmax(logits: &ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

pub fn log_softmax(logits: &ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.fold(0.0, |acc, &v| acc + (v - max).exp()).ln() + max;
    logits.mapv(|v| v - lse)
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let s = softmax(&row.view());
        row.assign(&s);
    }
    out
}

pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let s = log_softmax(&row.view());
        row.assign(&s);
    }
    out
}

/// Backward pass of a row-wise softmax: `dx = p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let inner = (probs * dprobs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(dprobs - &inner)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(len: usize, index: usize) -> Array1<f64> {
    let mut out = Array1::zeros(len);
    out[index] = 1.0;
    out
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Bias-corrected Adam update of `params` descending `grad`; `step`
    /// counts from 1.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], step: i32, learning_rate: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        let c1 = 1.0 - ADAM_BETA1.powi(step);
        let c2 = 1.0 - ADAM_BETA2.powi(step);
        for i in 0..params.len() {
            let g = grad[i];
            // Moments of a gradient that stays at zero decay into subnormals,
            // which are very slow on most CPUs; flush them.
            self.m[i] = flush(ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g);
            self.v[i] = flush(ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g);
            params[i] -= learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPSILON);
        }
    }
}
