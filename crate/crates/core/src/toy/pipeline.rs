//! End-to-end two-stage experiment: single- and multi-setting first-stage
//! runs, SOI analysis, heatmap-based selection, second-stage fine-tuning
//! and ID/OOD evaluation, with every artifact kept in memory until the
//! whole run has succeeded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{generate_dataset, EvalSplit, SyntheticTaskSpec, TaskData};
use super::model::MultiHeadModel;
use super::rng::derive_seed;
use super::train::{evaluate, run_id, second_stage, train, Schedule, TrainConfig};
use super::ToyError;
use crate::cartography::{self, build_map, region_histogram, Metric, Region, RegionThresholds};
use crate::dynamics::{TrainingDynamics, LOG_FORMAT_VERSION};
use crate::selection::{select_with, SelectOptions, SelectionResult, Strategy, SubsetManifest};
use crate::soi::{classify_run, default_cutoff, Census, SoiAssignment, SoiCategory};
use crate::transitions::{build_heatmap, TransitionMatrix};
use crate::Error;

fn default_name() -> String {
    "experiment".into()
}
fn default_hidden_dim() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    32
}
fn default_stage1_epochs() -> usize {
    10
}
fn default_stage2_epochs() -> usize {
    4
}

/// Experiment description, read from JSON. Everything except `seed` and
/// `tasks` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    /// One task (single-setting only) or two (adds the shared-encoder pair run).
    pub tasks: Vec<SyntheticTaskSpec>,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_stage1_epochs")]
    pub stage1_epochs: usize,
    #[serde(default = "default_stage2_epochs")]
    pub stage2_epochs: usize,
    /// Second-stage step size; `learning_rate` when absent.
    #[serde(default)]
    pub stage2_learning_rate: Option<f64>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub include_une: bool,
    /// Early/late cutoff epoch; half of `stage1_epochs` when absent.
    #[serde(default)]
    pub cutoff: Option<usize>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub thresholds: RegionThresholds,
}

impl ExperimentConfig {
    /// Two related tasks on a shared 8-dimensional input space, 2,000
    /// training examples each with 10% label noise, 10 + 4 epochs and
    /// strategy III.
    pub fn reference(seed: u64) -> Self {
        let task = |id: &str, classes: usize, radius: f64, shift: f64| {
            let mut spec = SyntheticTaskSpec::blobs(id, classes, 8, radius, derive_seed(seed, "task", id));
            spec.noise_std = 1.0;
            spec.label_noise_rate = 0.1;
            spec.n_train = 2000;
            spec.n_eval = 400;
            spec.n_test = 1000;
            spec.ood_mean_shift = (0..8).map(|d| if d % 2 == 0 { shift } else { -shift }).collect();
            spec.ood_noise_std = 1.4;
            spec
        };
        ExperimentConfig {
            name: "reference".into(),
            seed,
            tasks: vec![task("alpha", 3, 2.0, 0.35), task("beta", 2, 1.6, 0.3)],
            hidden_dim: default_hidden_dim(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            stage1_epochs: default_stage1_epochs(),
            stage2_epochs: default_stage2_epochs(),
            stage2_learning_rate: Some(0.01),
            strategy: Strategy::III,
            include_une: false,
            cutoff: None,
            schedule: Schedule::RoundRobin,
            metric: Metric::PPred,
            thresholds: RegionThresholds::default(),
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff.unwrap_or_else(|| default_cutoff(self.stage1_epochs))
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::InvalidConfig(msg));
        if !(1..=2).contains(&self.tasks.len()) {
            return bad(format!("expected 1 or 2 tasks, got {}", self.tasks.len()));
        }
        if self.tasks.len() == 2 {
            if self.tasks[0].task_id == self.tasks[1].task_id {
                return bad("task ids must differ".into());
            }
            if self.tasks[0].input_dim != self.tasks[1].input_dim {
                return bad("tasks sharing an encoder need the same input_dim".into());
            }
        }
        if self.hidden_dim == 0 || self.batch_size == 0 || self.stage1_epochs == 0 {
            return bad("hidden_dim, batch_size and stage1_epochs must be ≥ 1".into());
        }
        for lr in std::iter::once(self.learning_rate).chain(self.stage2_learning_rate) {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("learning rate {lr} must be finite and ≥ 0"));
            }
        }
        let cutoff = self.cutoff();
        if cutoff == 0 || cutoff > self.stage1_epochs {
            return bad(format!("cutoff {cutoff} outside 1..={}", self.stage1_epochs));
        }
        for spec in &self.tasks {
            spec.validate()?;
        }
        Ok(())
    }

    fn train_config(&self, epochs: usize, purpose: &str, label: &str) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: self.learning_rate,
            batch_size: self.batch_size,
            seed: derive_seed(self.seed, purpose, label),
            schedule: self.schedule,
        }
    }

    fn new_model(&self, label: &str, tasks: &[&TaskData]) -> MultiHeadModel {
        let heads: Vec<(&str, usize)> = tasks.iter().map(|t| (t.task_id.as_str(), t.num_classes)).collect();
        MultiHeadModel::new(
            tasks[0].input_dim,
            self.hidden_dim,
            &heads,
            derive_seed(self.seed, "init", label),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Accuracy {
    pub id: f64,
    pub ood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskAccuracies {
    pub task_id: String,
    pub single_setting: Accuracy,
    /// First-stage multi-setting model; absent for single-task configs.
    pub multi_setting: Option<Accuracy>,
    pub second_stage: Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task_id: String,
    pub setting: String,
    pub epochs: usize,
    pub cutoff: usize,
    pub census: Census,
    /// Census restricted to training examples whose label was flipped.
    pub flipped_census: Census,
    pub epoch_losses: Vec<f64>,
    pub regions: BTreeMap<SoiCategory, BTreeMap<Region, usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSelection {
    pub task_id: String,
    pub manifest: SubsetManifest,
    pub source_cells: Vec<(SoiCategory, SoiCategory)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub strategy: Strategy,
    pub include_une: bool,
    pub per_task: Vec<TaskSelection>,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub log_format_version: String,
    pub config: ExperimentConfig,
    pub cartography_metric: Metric,
    pub notes: Vec<String>,
    pub runs: Vec<RunSummary>,
    pub transitions: Vec<TransitionMatrix>,
    pub selection: SelectionSummary,
    pub accuracies: Vec<TaskAccuracies>,
}

impl PipelineReport {
    /// Categories with a non-zero count in at least one run.
    pub fn categories_present(&self) -> BTreeSet<SoiCategory> {
        SoiCategory::ALL
            .into_iter()
            .filter(|&c| self.runs.iter().any(|r| r.census[c] > 0))
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// A file produced by the pipeline, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub report: PipelineReport,
    pub artifacts: Vec<Artifact>,
    pub final_model: MultiHeadModel,
}

impl Experiment {
    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

struct Run<'a> {
    setting: &'static str,
    data: &'a TaskData,
    dynamics: TrainingDynamics,
    assignment: SoiAssignment,
    losses: Vec<f64>,
}

/// Runs the whole experiment in memory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment, Error> {
    config.validate()?;
    let datasets: Vec<TaskData> = config
        .tasks
        .iter()
        .map(generate_dataset)
        .collect::<Result<_, _>>()?;
    let cutoff = config.cutoff();
    let stage1 = |purpose: &str, label: &str| config.train_config(config.stage1_epochs, purpose, label);

    let mut runs: Vec<Run<'_>> = Vec::new();
    let mut single_models = Vec::new();
    for data in &datasets {
        let label = "single";
        let key = run_id(label, &data.task_id);
        let mut model = config.new_model(&key, &[data]);
        let mut outcome = train(&mut model, &[data], &stage1("train", &key), label)?;
        let dynamics = outcome.dynamics.remove(0);
        let losses = outcome.epoch_losses.remove(&data.task_id).unwrap_or_default();
        let assignment = classify_run(&dynamics, cutoff)?;
        runs.push(Run {
            setting: "single",
            data,
            dynamics,
            assignment,
            losses,
        });
        single_models.push(model);
    }

    let pair = datasets.len() == 2;
    let mut multi_model = None;
    if pair {
        let label = "multi";
        let refs: Vec<&TaskData> = datasets.iter().collect();
        let mut model = config.new_model(label, &refs);
        let outcome = train(&mut model, &refs, &stage1("train", label), label)?;
        for (data, dynamics) in datasets.iter().zip(outcome.dynamics) {
            let assignment = classify_run(&dynamics, cutoff)?;
            runs.push(Run {
                setting: "multi",
                data,
                dynamics,
                assignment,
                losses: outcome.epoch_losses[&data.task_id].clone(),
            });
        }
        multi_model = Some(model);
    }

    let assignment_of = |setting: &str, task: &str| {
        runs.iter()
            .find(|r| r.setting == setting && r.data.task_id == task)
            .map(|r| &r.assignment)
            .expect("every task has its runs")
    };
    let target_setting = if pair { "multi" } else { "single" };

    let mut heatmaps = Vec::new();
    let mut selections: Vec<SelectionResult> = Vec::new();
    let opts = SelectOptions {
        include_une: config.include_une,
        intersect: false,
    };
    for data in &datasets {
        let a = assignment_of("single", &data.task_id);
        let b = assignment_of(target_setting, &data.task_id);
        heatmaps.push(build_heatmap(a, b)?);
        selections.push(select_with(config.strategy, a, b, opts)?);
    }

    let stage1_acc = |model: &MultiHeadModel, data: &TaskData| -> Result<Accuracy, Error> {
        Ok(Accuracy {
            id: evaluate(model, data, EvalSplit::Test)?,
            ood: evaluate(model, data, EvalSplit::Ood)?,
        })
    };

    let mut final_model = match &multi_model {
        Some(m) => m.clone(),
        None => single_models[0].clone(),
    };
    let subsets: Vec<(&TaskData, &SelectionResult)> = datasets.iter().zip(selections.iter()).collect();
    let mut stage2 = config.train_config(config.stage2_epochs, "stage2", target_setting);
    stage2.lr = config.stage2_learning_rate.unwrap_or(config.learning_rate);
    second_stage(&mut final_model, &subsets, &stage2)?;

    let mut accuracies = Vec::new();
    for (i, data) in datasets.iter().enumerate() {
        accuracies.push(TaskAccuracies {
            task_id: data.task_id.clone(),
            single_setting: stage1_acc(&single_models[i], data)?,
            multi_setting: multi_model.as_ref().map(|m| stage1_acc(m, data)).transpose()?,
            second_stage: stage1_acc(&final_model, data)?,
        });
    }

    let mut artifacts = Vec::new();
    let mut summaries = Vec::new();
    for run in &runs {
        let id = run.dynamics.run_id().to_string();
        let mut jsonl = Vec::new();
        run.dynamics.write_jsonl(&mut jsonl).map_err(crate::dynamics::DynamicsError::from)?;
        artifacts.push(Artifact {
            path: format!("runs/{id}/dynamics.jsonl"),
            bytes: jsonl,
        });
        let mut soi_csv = Vec::new();
        run.assignment.write_csv(&mut soi_csv)?;
        artifacts.push(Artifact {
            path: format!("soi/{id}.csv"),
            bytes: soi_csv,
        });

        let points = build_map(&run.dynamics, &run.assignment, &config.thresholds, config.metric)?;
        let mut carto_csv = Vec::new();
        cartography::write_csv(&points, &mut carto_csv).map_err(crate::cartography::CartographyError::from)?;
        artifacts.push(Artifact {
            path: format!("cartography/{id}.csv"),
            bytes: carto_csv,
        });
        artifacts.push(Artifact {
            path: format!("cartography/{id}.svg"),
            bytes: cartography::render_map(&points, &id)?.into_bytes(),
        });

        let mut flipped_census = Census::default();
        for ex_id in &run.data.flipped {
            if let Some(c) = run.assignment.category(ex_id) {
                flipped_census.add(c);
            }
        }
        summaries.push(RunSummary {
            run_id: id,
            task_id: run.data.task_id.clone(),
            setting: run.setting.to_string(),
            epochs: run.dynamics.num_epochs(),
            cutoff,
            census: run.assignment.census(),
            flipped_census,
            epoch_losses: run.losses.clone(),
            regions: region_histogram(&points),
        });
    }

    for m in &heatmaps {
        let stem = format!("heatmaps/{}__{}", m.source_run, m.target_run);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).map_err(crate::transitions::TransitionError::from)?;
        artifacts.push(Artifact {
            path: format!("{stem}.csv"),
            bytes: csv,
        });
        artifacts.push(Artifact {
            path: format!("{stem}.svg"),
            bytes: m.render_svg().into_bytes(),
        });
    }

    let strategy = config.strategy;
    let mut union = BTreeSet::new();
    let mut per_task = Vec::new();
    for (data, sel) in datasets.iter().zip(&selections) {
        union.extend(sel.example_ids.iter().cloned());
        subset_artifacts(&mut artifacts, &format!("subsets/{strategy}__{}", data.task_id), sel);
        per_task.push(TaskSelection {
            task_id: data.task_id.clone(),
            manifest: sel.manifest(),
            source_cells: sel.source_cells.clone(),
        });
    }
    let join = |f: fn(&SelectionResult) -> &String| {
        selections.iter().map(|s| f(s).as_str()).collect::<Vec<_>>().join(",")
    };
    let combined = SelectionResult {
        strategy,
        source_run: join(|s| &s.source_run),
        target_run: join(|s| &s.target_run),
        include_une: config.include_une,
        example_ids: union,
        source_cells: strategy.cells().to_vec(),
    };
    subset_artifacts(&mut artifacts, &format!("subsets/{strategy}"), &combined);

    let mut notes = vec![
        "dynamics are end-of-epoch predictions on the training split".to_string(),
        "optimizer is plain minibatch SGD; hidden width, learning rate and batch size are toolkit defaults unless set in the config".to_string(),
        format!("cartography coordinates use the {} series", config.metric.label()),
    ];
    if pair {
        notes.push("second stage trains the multi-setting model jointly on the union of per-task selections, each routed to its own head".to_string());
    } else {
        notes.push("single-task config: heatmaps compare the single-setting run with itself and the second stage continues the single-setting model".to_string());
    }

    let report = PipelineReport {
        log_format_version: LOG_FORMAT_VERSION.to_string(),
        config: config.clone(),
        cartography_metric: config.metric,
        notes,
        runs: summaries,
        transitions: heatmaps,
        selection: SelectionSummary {
            strategy,
            include_une: config.include_une,
            total: combined.len(),
            per_task,
        },
        accuracies,
    };
    artifacts.push(Artifact {
        path: "report.json".into(),
        bytes: report.to_json(),
    });

    Ok(Experiment {
        report,
        artifacts,
        final_model,
    })
}

fn subset_artifacts(artifacts: &mut Vec<Artifact>, stem: &str, sel: &SelectionResult) {
    let mut ids = Vec::new();
    crate::selection::write_ids(&sel.example_ids, &mut ids).expect("writing to memory");
    artifacts.push(Artifact {
        path: format!("{stem}.txt"),
        bytes: ids,
    });
    let mut manifest = serde_json::to_vec_pretty(&sel.manifest()).expect("manifest serializes");
    manifest.push(b'\n');
    artifacts.push(Artifact {
        path: format!("{stem}.json"),
        bytes: manifest,
    });
}

/// Runs the experiment and writes every artifact under `out_dir`. The
/// directory is replaced as a whole, so a failed run leaves nothing behind
/// and an earlier output stays untouched.
pub fn run_pipeline(config: &ExperimentConfig, out_dir: &Path) -> Result<PipelineReport, Error> {
    let experiment = run_experiment(config)?;
    let files: Vec<(&str, &[u8])> = experiment
        .artifacts
        .iter()
        .map(|a| (a.path.as_str(), a.bytes.as_slice()))
        .collect();
    crate::write_dir_atomically(out_dir, &files)?;
    Ok(experiment.report)
}
