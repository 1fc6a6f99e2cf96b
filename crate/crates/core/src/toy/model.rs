//! Shared-encoder, multi-head softmax classifier with closed-form
//! gradients: `h = tanh(W_e x + b_e)`, `logits_t = W_t h + b_t`.

use std::collections::BTreeMap;

use serde::Serialize;

use super::data::{normal, Example};
use super::rng;
use super::ToyError;

/// Dense affine map, weights stored row-major (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Affine {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut rng::Stream) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        Affine {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal(rng) * scale).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiHeadModel {
    pub encoder: Affine,
    /// One classification head per task, keyed by task id.
    pub heads: BTreeMap<String, Affine>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: u32,
    pub p_pred: f64,
    pub probabilities: Vec<f64>,
}

impl MultiHeadModel {
    /// Randomly initialised model. The encoder and every head draw from
    /// their own seeded stream.
    pub fn new(input_dim: usize, hidden_dim: usize, heads: &[(&str, usize)], seed: u64) -> Self {
        let encoder = Affine::random(input_dim, hidden_dim, &mut rng::stream(seed, "init", "encoder"));
        let heads = heads
            .iter()
            .map(|&(task, classes)| {
                let head = Affine::random(hidden_dim, classes, &mut rng::stream(seed, "init", task));
                (task.to_string(), head)
            })
            .collect();
        MultiHeadModel { encoder, heads }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, heads: &[(&str, usize)]) -> Self {
        MultiHeadModel {
            encoder: Affine::zeros(input_dim, hidden_dim),
            heads: heads
                .iter()
                .map(|&(task, classes)| (task.to_string(), Affine::zeros(hidden_dim, classes)))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.inputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.outputs
    }

    pub fn head(&self, task: &str) -> Result<&Affine, ToyError> {
        self.heads
            .get(task)
            .ok_or_else(|| ToyError::MissingHead(task.to_string()))
    }

    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.encoder.apply(x).into_iter().map(f64::tanh).collect()
    }

    pub fn logits(&self, task: &str, x: &[f64]) -> Result<Vec<f64>, ToyError> {
        Ok(self.head(task)?.apply(&self.hidden(x)))
    }

    pub fn predict(&self, task: &str, x: &[f64]) -> Result<Prediction, ToyError> {
        let probabilities = softmax(&self.logits(task, x)?);
        let (label, &p_pred) = probabilities
            .iter()
            .enumerate()
            .fold((0, &probabilities[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
        Ok(Prediction {
            label: label as u32,
            p_pred,
            probabilities,
        })
    }

    /// Mean softmax cross-entropy of `task`'s head over `batch`.
    pub fn loss(&self, task: &str, batch: &[&Example]) -> Result<f64, ToyError> {
        let head = self.head(task)?;
        let mut total = 0.0;
        for ex in batch {
            let logits = head.apply(&self.hidden(&ex.features));
            total += log_sum_exp(&logits) - logits[ex.label as usize];
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its exact gradient with respect to every parameter. The
    /// gradient has the model's shape; heads other than `task` are zero.
    pub fn loss_and_grad(&self, task: &str, batch: &[&Example]) -> Result<(f64, MultiHeadModel), ToyError> {
        let head = self.head(task)?;
        let mut grad = self.zeros_like();
        let n = batch.len() as f64;
        let mut total = 0.0;
        let hidden_dim = self.hidden_dim();
        let input_dim = self.input_dim();
        {
            let (genc, gheads) = (&mut grad.encoder, &mut grad.heads);
            let ghead = gheads.get_mut(task).expect("same shape");
            for ex in batch {
                let x = &ex.features;
                let h = self.hidden(x);
                let logits = head.apply(&h);
                let lse = log_sum_exp(&logits);
                total += lse - logits[ex.label as usize];

                // dL/dlogits = (softmax - onehot) / n
                let dz: Vec<f64> = logits
                    .iter()
                    .enumerate()
                    .map(|(k, z)| ((z - lse).exp() - f64::from(k == ex.label as usize)) / n)
                    .collect();
                let mut dh = vec![0.0; hidden_dim];
                for (k, dzk) in dz.iter().enumerate() {
                    let row = &head.weights[k * hidden_dim..(k + 1) * hidden_dim];
                    let grow = &mut ghead.weights[k * hidden_dim..(k + 1) * hidden_dim];
                    for j in 0..hidden_dim {
                        grow[j] += dzk * h[j];
                        dh[j] += dzk * row[j];
                    }
                    ghead.bias[k] += dzk;
                }
                for j in 0..hidden_dim {
                    let da = dh[j] * (1.0 - h[j] * h[j]);
                    let grow = &mut genc.weights[j * input_dim..(j + 1) * input_dim];
                    for (g, xi) in grow.iter_mut().zip(x) {
                        *g += da * xi;
                    }
                    genc.bias[j] += da;
                }
            }
        }
        Ok((total / n, grad))
    }

    pub fn zeros_like(&self) -> MultiHeadModel {
        MultiHeadModel {
            encoder: Affine::zeros(self.encoder.inputs, self.encoder.outputs),
            heads: self
                .heads
                .iter()
                .map(|(k, h)| (k.clone(), Affine::zeros(h.inputs, h.outputs)))
                .collect(),
        }
    }

    /// All parameters in a fixed order: encoder weights and bias, then each
    /// head (by task id) weights and bias.
    pub fn params(&self) -> Vec<f64> {
        self.encoder
            .params()
            .chain(self.heads.values().flat_map(Affine::params))
            .copied()
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.encoder
            .params_mut()
            .chain(self.heads.values_mut().flat_map(Affine::params_mut))
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    /// `self -= lr * grad`.
    pub fn step(&mut self, grad: &MultiHeadModel, lr: f64) {
        for (p, g) in self.params_mut().zip(grad.params()) {
            *p -= lr * g;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(features: &[f64], label: u32) -> Example {
        Example {
            id: "x".into(),
            features: features.to_vec(),
            label,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MultiHeadModel::zeros(2, 3, &[("a", 4)]);
        let p = m.predict("a", &[1.0, -2.0]).unwrap();
        assert_eq!(p.label, 0);
        assert!(p.probabilities.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        let e = ex(&[1.0, 2.0], 2);
        assert!((m.loss("a", &[&e]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(m.predict("b", &[0.0, 0.0]), Err(ToyError::MissingHead(_))));
    }

    #[test]
    fn params_round_trip_order() {
        let m = MultiHeadModel::new(3, 4, &[("b", 2), ("a", 3)], 5);
        assert_eq!(m.num_params(), 3 * 4 + 4 + 4 * 3 + 3 + 4 * 2 + 2);
        let mut copy = m.zeros_like();
        for (p, v) in copy.params_mut().zip(m.params()) {
            *p = v;
        }
        assert_eq!(copy, m);
    }

    #[test]
    fn loss_and_grad_agree_on_loss() {
        let m = MultiHeadModel::new(3, 5, &[("a", 3)], 1);
        let batch = [ex(&[0.1, -0.4, 1.2], 0), ex(&[2.0, 0.3, -0.7], 2)];
        let refs: Vec<&Example> = batch.iter().collect();
        let (l, g) = m.loss_and_grad("a", &refs).unwrap();
        assert_eq!(l, m.loss("a", &refs).unwrap());
        assert_eq!(g.num_params(), m.num_params());
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
