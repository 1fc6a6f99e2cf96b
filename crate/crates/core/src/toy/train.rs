//! Minibatch SGD over one or two tasks sharing an encoder, per-epoch
//! dynamics logging, evaluation and the gradient check.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{EvalSplit, Example, TaskData};
use super::model::MultiHeadModel;
use super::rng;
use super::ToyError;
use crate::dynamics::{ingest_run, PredictionRecord, Split, TrainingDynamics};
use crate::selection::SelectionResult;

/// How batches of different tasks are interleaved within an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Batch k of every task before batch k+1 of any task.
    #[default]
    RoundRobin,
    /// Next task drawn with probability proportional to its remaining batches.
    Proportional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.1,
            batch_size: 32,
            seed: 0,
            schedule: Schedule::RoundRobin,
        }
    }
}

/// Training examples of one task, in a fixed order.
#[derive(Clone, Debug)]
pub struct TrainSet<'a> {
    pub task_id: &'a str,
    pub examples: Vec<&'a Example>,
}

impl<'a> TrainSet<'a> {
    pub fn full(data: &'a TaskData) -> Self {
        TrainSet {
            task_id: &data.task_id,
            examples: data.train.iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// One run per task, in input order; run id `<run_label>-<task_id>`.
    pub dynamics: Vec<TrainingDynamics>,
    /// Mean per-example training loss of each epoch, per task.
    pub epoch_losses: BTreeMap<String, Vec<f64>>,
}

pub fn run_id(run_label: &str, task_id: &str) -> String {
    format!("{run_label}-{task_id}")
}

/// Trains `model` on the full training split of each task and logs the
/// end-of-epoch predictions on that split.
pub fn train(
    model: &mut MultiHeadModel,
    tasks: &[&TaskData],
    cfg: &TrainConfig,
    run_label: &str,
) -> Result<TrainOutcome, ToyError> {
    let sets: Vec<TrainSet<'_>> = tasks.iter().map(|t| TrainSet::full(t)).collect();
    let (losses, records) = fit(model, &sets, cfg, Some(run_label))?;
    let dynamics = sets
        .iter()
        .zip(records)
        .map(|(set, recs)| {
            ingest_run(recs, &run_id(run_label, set.task_id)).map_err(ToyError::from)
        })
        .collect::<Result<_, _>>()?;
    Ok(TrainOutcome {
        dynamics,
        epoch_losses: losses,
    })
}

type FitOutput = (BTreeMap<String, Vec<f64>>, Vec<Vec<PredictionRecord>>);

/// The SGD loop shared by first- and second-stage training. Shuffling uses
/// one stream per task, keyed by task id, so a task's batch order does not
/// depend on which other tasks are present.
pub fn fit(
    model: &mut MultiHeadModel,
    sets: &[TrainSet<'_>],
    cfg: &TrainConfig,
    log_as: Option<&str>,
) -> Result<FitOutput, ToyError> {
    if cfg.batch_size == 0 {
        return Err(ToyError::InvalidConfig("batch_size must be ≥ 1".into()));
    }
    for set in sets {
        model.head(set.task_id)?;
        if let Some(ex) = set.examples.iter().find(|e| e.features.len() != model.input_dim()) {
            return Err(ToyError::DimensionMismatch {
                expected: model.input_dim(),
                got: ex.features.len(),
                example_id: ex.id.clone(),
            });
        }
    }
    let mut shufflers: Vec<rng::Stream> = sets
        .iter()
        .map(|s| rng::stream(cfg.seed, "shuffle", s.task_id))
        .collect();
    let mut scheduler = rng::stream(cfg.seed, "schedule", "");
    let mut losses: BTreeMap<String, Vec<f64>> =
        sets.iter().map(|s| (s.task_id.to_string(), Vec::new())).collect();
    let mut records: Vec<Vec<PredictionRecord>> = vec![Vec::new(); sets.len()];

    for epoch in 1..=cfg.epochs {
        let batches: Vec<Vec<Vec<&Example>>> = sets
            .iter()
            .zip(shufflers.iter_mut())
            .map(|(set, rng)| {
                let mut order = set.examples.clone();
                order.shuffle(rng);
                order.chunks(cfg.batch_size).map(<[_]>::to_vec).collect()
            })
            .collect();
        let plan = schedule(&batches, cfg.schedule, &mut scheduler);

        let mut sums = vec![0.0; sets.len()];
        for (task, k) in plan {
            let batch = &batches[task][k];
            let (loss, grad) = model.loss_and_grad(sets[task].task_id, batch)?;
            if !loss.is_finite() {
                return Err(ToyError::NonfiniteLoss {
                    task: sets[task].task_id.to_string(),
                    epoch,
                });
            }
            sums[task] += loss * batch.len() as f64;
            model.step(&grad, cfg.lr);
        }
        for (i, set) in sets.iter().enumerate() {
            if !set.examples.is_empty() {
                let mean = sums[i] / set.examples.len() as f64;
                losses.get_mut(set.task_id).unwrap().push(mean);
            }
        }

        if let Some(label) = log_as {
            for (i, set) in sets.iter().enumerate() {
                let run = run_id(label, set.task_id);
                for ex in &set.examples {
                    let p = model.predict(set.task_id, &ex.features)?;
                    records[i].push(PredictionRecord {
                        run_id: run.clone(),
                        example_id: ex.id.clone(),
                        epoch: epoch as u32,
                        split: Split::Train,
                        true_label: ex.label,
                        pred_label: p.label,
                        p_pred: p.p_pred,
                        p_true: Some(p.probabilities[ex.label as usize]),
                    });
                }
            }
        }
    }
    Ok((losses, records))
}

fn schedule<T>(batches: &[Vec<T>], kind: Schedule, rng: &mut rng::Stream) -> Vec<(usize, usize)> {
    match kind {
        Schedule::RoundRobin => {
            let longest = batches.iter().map(Vec::len).max().unwrap_or(0);
            (0..longest)
                .flat_map(|k| {
                    batches
                        .iter()
                        .enumerate()
                        .filter(move |(_, b)| k < b.len())
                        .map(move |(t, _)| (t, k))
                })
                .collect()
        }
        Schedule::Proportional => {
            let mut next = vec![0usize; batches.len()];
            let mut remaining: usize = batches.iter().map(Vec::len).sum();
            let mut plan = Vec::with_capacity(remaining);
            while remaining > 0 {
                let mut pick = rng.random_range(0..remaining);
                let task = (0..batches.len())
                    .find(|&t| {
                        let left = batches[t].len() - next[t];
                        if pick < left {
                            true
                        } else {
                            pick -= left;
                            false
                        }
                    })
                    .expect("pick < remaining");
                plan.push((task, next[task]));
                next[task] += 1;
                remaining -= 1;
            }
            plan
        }
    }
}

/// Continues training on the selected examples only. Subset order follows
/// the training split, so selecting everything reproduces plain continued
/// training batch for batch.
pub fn second_stage(
    model: &mut MultiHeadModel,
    subsets: &[(&TaskData, &SelectionResult)],
    cfg: &TrainConfig,
) -> Result<(), ToyError> {
    let mut sets = Vec::new();
    for (data, selection) in subsets {
        let known: BTreeSet<&str> = data.train.iter().map(|e| e.id.as_str()).collect();
        if let Some(foreign) = selection.example_ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(ToyError::UnknownExampleId {
                task: data.task_id.clone(),
                example_id: foreign.clone(),
            });
        }
        let examples: Vec<&Example> = data
            .train
            .iter()
            .filter(|e| selection.example_ids.contains(&e.id))
            .collect();
        if examples.is_empty() {
            warn!("second stage: empty subset for task `{}`", data.task_id);
            continue;
        }
        sets.push(TrainSet {
            task_id: &data.task_id,
            examples,
        });
    }
    if sets.is_empty() {
        warn!("second stage: nothing selected, model left unchanged");
        return Ok(());
    }
    fit(model, &sets, cfg, None)?;
    Ok(())
}

/// Fraction of argmax-correct predictions on one split.
pub fn evaluate(model: &MultiHeadModel, data: &TaskData, split: EvalSplit) -> Result<f64, ToyError> {
    accuracy(model, &data.task_id, data.split(split))
}

pub fn accuracy(model: &MultiHeadModel, task: &str, examples: &[Example]) -> Result<f64, ToyError> {
    model.head(task)?;
    if examples.is_empty() {
        return Err(ToyError::EmptySplit(task.to_string()));
    }
    let mut correct = 0usize;
    for ex in examples {
        if model.predict(task, &ex.features)?.label == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub max_relative_error: f64,
    /// Index (in [`MultiHeadModel::params`] order) of the worst parameter.
    pub worst_param: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient of `task`'s mean loss on `batch` with
/// central finite differences for every parameter.
pub fn grad_check(
    model: &MultiHeadModel,
    task: &str,
    batch: &[&Example],
    tolerance: f64,
) -> Result<GradCheckReport, ToyError> {
    grad_check_with(model, task, batch, tolerance, |m, t, b| {
        m.loss_and_grad(t, b).map(|(_, g)| g)
    })
}

/// [`grad_check`] against an arbitrary gradient routine.
pub fn grad_check_with<F>(
    model: &MultiHeadModel,
    task: &str,
    batch: &[&Example],
    tolerance: f64,
    gradient: F,
) -> Result<GradCheckReport, ToyError>
where
    F: Fn(&MultiHeadModel, &str, &[&Example]) -> Result<MultiHeadModel, ToyError>,
{
    if batch.is_empty() {
        return Err(ToyError::EmptySplit(task.to_string()));
    }
    let analytic = gradient(model, task, batch)?.params();
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    for (k, &a) in analytic.iter().enumerate() {
        let original = model.params()[k];
        *probe.params_mut().nth(k).unwrap() = original + FD_STEP;
        let up = probe.loss(task, batch)?;
        *probe.params_mut().nth(k).unwrap() = original - FD_STEP;
        let down = probe.loss(task, batch)?;
        *probe.params_mut().nth(k).unwrap() = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, k);
        }
    }
    Ok(GradCheckReport {
        params_checked: analytic.len(),
        max_relative_error: worst.0,
        worst_param: worst.1,
        tolerance,
        passed: worst.0 < tolerance,
    })
}
