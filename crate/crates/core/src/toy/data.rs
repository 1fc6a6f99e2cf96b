//! Synthetic Gaussian-blob classification tasks with label noise and a
//! covariate-shifted out-of-distribution split.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{self, Stream};
use super::ToyError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub task_id: String,
    pub num_classes: usize,
    pub input_dim: usize,
    /// One mean per class, each of length `input_dim`.
    pub cluster_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    /// Fraction of training labels reassigned to a different class.
    pub label_noise_rate: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_test: usize,
    pub ood_mean_shift: Vec<f64>,
    pub ood_noise_std: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    /// Spec with class means drawn on a sphere of `radius`, no shift and no
    /// label noise. Callers adjust the remaining fields as needed.
    pub fn blobs(task_id: &str, num_classes: usize, input_dim: usize, radius: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "means", task_id);
        let cluster_means = (0..num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm * radius).collect()
            })
            .collect();
        SyntheticTaskSpec {
            task_id: task_id.to_string(),
            num_classes,
            input_dim,
            cluster_means,
            noise_std: 1.0,
            label_noise_rate: 0.0,
            n_train: 1000,
            n_eval: 200,
            n_test: 500,
            ood_mean_shift: vec![0.0; input_dim],
            ood_noise_std: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::InvalidSpec(format!("{}: {msg}", self.task_id)));
        if !is_valid_id(&self.task_id) {
            return bad("task_id must be non-empty [A-Za-z0-9_.] characters".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.input_dim < 2 {
            return bad(format!("input_dim {} < 2", self.input_dim));
        }
        if self.cluster_means.len() != self.num_classes
            || self.cluster_means.iter().any(|m| m.len() != self.input_dim)
        {
            return bad("cluster_means must be num_classes × input_dim".into());
        }
        if self.cluster_means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("cluster_means must be finite".into());
        }
        for i in 0..self.num_classes {
            for j in 0..i {
                if self.cluster_means[i] == self.cluster_means[j] {
                    return bad(format!("classes {j} and {i} share a mean"));
                }
            }
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be > 0", self.noise_std));
        }
        if !(0.0..1.0).contains(&self.label_noise_rate) {
            return bad(format!("label_noise_rate {} not in [0, 1)", self.label_noise_rate));
        }
        if self.n_train == 0 {
            return bad("n_train must be ≥ 1".into());
        }
        if self.ood_mean_shift.len() != self.input_dim
            || self.ood_mean_shift.iter().any(|v| !v.is_finite())
        {
            return bad("ood_mean_shift must have input_dim finite entries".into());
        }
        if !(self.ood_noise_std > 0.0 && self.ood_noise_std.is_finite()) {
            return bad(format!("ood_noise_std {} must be > 0", self.ood_noise_std));
        }
        Ok(())
    }
}

/// Identifiers end up in file names, so keep them to a safe alphabet.
pub(crate) fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    pub label: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Eval,
    Test,
    Ood,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
    pub test: Vec<Example>,
    /// Shifted copy of the test distribution, `n_test` examples.
    pub ood: Vec<Example>,
    /// Training ids whose label was flipped by label noise.
    pub flipped: BTreeSet<String>,
}

impl TaskData {
    pub fn split(&self, split: EvalSplit) -> &[Example] {
        match split {
            EvalSplit::Train => &self.train,
            EvalSplit::Eval => &self.eval,
            EvalSplit::Test => &self.test,
            EvalSplit::Ood => &self.ood,
        }
    }
}

fn draw(
    rng: &mut Stream,
    spec: &SyntheticTaskSpec,
    prefix: &str,
    n: usize,
    shift: Option<&[f64]>,
    std: f64,
) -> Vec<Example> {
    let width = n.to_string().len().max(5);
    (0..n)
        .map(|i| {
            let label = i % spec.num_classes;
            let mean = &spec.cluster_means[label];
            let features = mean
                .iter()
                .enumerate()
                .map(|(d, m)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + shift.map_or(0.0, |s| s[d]) + std * z
                })
                .collect();
            Example {
                id: format!("{prefix}{i:0width$}"),
                features,
                label: label as u32,
            }
        })
        .collect()
}

pub fn generate_dataset(spec: &SyntheticTaskSpec) -> Result<TaskData, ToyError> {
    spec.validate()?;
    let id = &spec.task_id;
    let stream = |purpose: &str| rng::stream(spec.seed, purpose, id);

    let mut train = draw(&mut stream("train"), spec, &format!("{id}-"), spec.n_train, None, spec.noise_std);
    let eval = draw(&mut stream("eval"), spec, &format!("{id}-eval-"), spec.n_eval, None, spec.noise_std);
    let test = draw(&mut stream("test"), spec, &format!("{id}-test-"), spec.n_test, None, spec.noise_std);
    let ood = draw(
        &mut stream("ood"),
        spec,
        &format!("{id}-ood-"),
        spec.n_test,
        Some(&spec.ood_mean_shift),
        spec.ood_noise_std,
    );

    let mut noise = stream("label-noise");
    let n_flip = (spec.label_noise_rate * spec.n_train as f64).round() as usize;
    let mut chosen = index::sample(&mut noise, spec.n_train, n_flip).into_vec();
    chosen.sort_unstable();
    let k = spec.num_classes as u32;
    let mut flipped = BTreeSet::new();
    for i in chosen {
        let offset = noise.random_range(1..k);
        let ex = &mut train[i];
        ex.label = (ex.label + offset) % k;
        flipped.insert(ex.id.clone());
    }

    Ok(TaskData {
        task_id: id.clone(),
        num_classes: spec.num_classes,
        input_dim: spec.input_dim,
        train,
        eval,
        test,
        ood,
        flipped,
    })
}

/// Standard normal sample; exposed for model initialisation.
pub(crate) fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
