//! Training-dynamics logs: the JSON Lines record format and its assembly
//! into dense per-run matrices (examples × epochs).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Version of the on-disk log format, reported by `soi --version`.
pub const LOG_FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("field `{field}` out of range: {value}")]
    FieldOutOfRange { field: &'static str, value: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error("duplicate record for example `{example_id}` at epoch {epoch}")]
    DuplicateCell { example_id: String, epoch: u32 },
    #[error("example `{example_id}` has no record for epoch {epoch}")]
    MissingCell { example_id: String, epoch: u32 },
    #[error("example `{example_id}` has true_label {first} and {second}")]
    InconsistentTrueLabel {
        example_id: String,
        first: u32,
        second: u32,
    },
    #[error("example `{example_id}` is logged under splits {first} and {second}")]
    InconsistentSplit {
        example_id: String,
        first: Split,
        second: Split,
    },
    #[error("run `{0}` has no records")]
    EmptyRun(String),
    #[error("log contains several runs ({0}); pick one")]
    AmbiguousRun(String),
    #[error("unknown example `{0}`")]
    UnknownExample(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl DynamicsError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedLine(_) => "dynamics_log.malformed_line",
            Self::FieldOutOfRange { .. } => "dynamics_log.field_out_of_range",
            Self::MissingField(_) => "dynamics_log.missing_field",
            Self::AtLine { source, .. } => source.code(),
            Self::DuplicateCell { .. } => "dynamics_log.duplicate_cell",
            Self::MissingCell { .. } => "dynamics_log.missing_cell",
            Self::InconsistentTrueLabel { .. } => "dynamics_log.inconsistent_true_label",
            Self::InconsistentSplit { .. } => "dynamics_log.inconsistent_split",
            Self::EmptyRun(_) => "dynamics_log.empty_run",
            Self::AmbiguousRun(_) => "dynamics_log.ambiguous_run",
            Self::UnknownExample(_) => "dynamics_log.unknown_example",
            Self::Io(_) => "dynamics_log.io_failure",
        }
    }

    /// The error with any line-number wrapper removed.
    pub fn kind(&self) -> &DynamicsError {
        match self {
            Self::AtLine { source, .. } => source.kind(),
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(DynamicsError::FieldOutOfRange {
                field: "split",
                value: format!("{other:?}"),
            }),
        }
    }
}

/// One (run, example, epoch) observation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub run_id: String,
    pub example_id: String,
    pub epoch: u32,
    pub split: Split,
    pub true_label: u32,
    pub pred_label: u32,
    /// Probability of the predicted (highest-scoring) class.
    pub p_pred: f64,
    /// Probability of the gold class, when the producer logged it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.pred_label == self.true_label
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if self.epoch < 1 {
            return Err(out_of_range("epoch", self.epoch));
        }
        if !(0.0..=1.0).contains(&self.p_pred) {
            return Err(out_of_range("p_pred", self.p_pred));
        }
        if let Some(p_true) = self.p_true {
            if !(0.0..=1.0).contains(&p_true) || p_true > self.p_pred {
                return Err(out_of_range("p_true", p_true));
            }
        }
        Ok(())
    }
}

fn out_of_range(field: &'static str, value: impl fmt::Display) -> DynamicsError {
    DynamicsError::FieldOutOfRange {
        field,
        value: value.to_string(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&'static str]) -> Result<&'a Value, DynamicsError> {
    names
        .iter()
        .find_map(|name| obj.get(*name).filter(|v| !v.is_null()))
        .ok_or(DynamicsError::MissingField(names[0]))
}

fn string_field(obj: &Map<String, Value>, names: &[&'static str]) -> Result<String, DynamicsError> {
    match field(obj, names)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(DynamicsError::MalformedLine(format!(
            "`{}` must be a string, got {other}",
            names[0]
        ))),
    }
}

fn count_field(obj: &Map<String, Value>, name: &'static str) -> Result<u32, DynamicsError> {
    let value = field(obj, &[name])?;
    let n = value.as_number().ok_or_else(|| {
        DynamicsError::MalformedLine(format!("`{name}` must be an integer, got {value}"))
    })?;
    if let Some(u) = n.as_u64() {
        u32::try_from(u).map_err(|_| out_of_range(name, u))
    } else if n.is_i64() {
        Err(out_of_range(name, n))
    } else {
        Err(DynamicsError::MalformedLine(format!(
            "`{name}` must be an integer, got {n}"
        )))
    }
}

fn prob_field(value: &Value, name: &'static str) -> Result<f64, DynamicsError> {
    value.as_f64().ok_or_else(|| {
        DynamicsError::MalformedLine(format!("`{name}` must be a number, got {value}"))
    })
}

/// Parses one log line. Unknown keys are ignored; `run` is accepted as an
/// alias of `run_id`.
pub fn parse_record(line: &str) -> Result<PredictionRecord, DynamicsError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| DynamicsError::MalformedLine(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(DynamicsError::MalformedLine("expected a JSON object".into()));
    };

    let split = match field(&obj, &["split"])? {
        Value::String(s) => s.parse()?,
        other => {
            return Err(DynamicsError::MalformedLine(format!(
                "`split` must be a string, got {other}"
            )))
        }
    };
    let p_true = match obj.get("p_true") {
        None | Some(Value::Null) => None,
        Some(v) => Some(prob_field(v, "p_true")?),
    };
    let record = PredictionRecord {
        run_id: string_field(&obj, &["run_id", "run"])?,
        example_id: string_field(&obj, &["example_id"])?,
        epoch: count_field(&obj, "epoch")?,
        split,
        true_label: count_field(&obj, "true_label")?,
        pred_label: count_field(&obj, "pred_label")?,
        p_pred: prob_field(field(&obj, &["p_pred"])?, "p_pred")?,
        p_true,
    };
    record.validate()?;
    Ok(record)
}

/// Parses a whole JSON Lines stream. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, DynamicsError> {
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    lines
        .par_iter()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            parse_record(line).map_err(|e| DynamicsError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Per-example series inside a [`TrainingDynamics`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleDynamics {
    pub true_label: u32,
    pub split: Split,
    pub pred_labels: Vec<u32>,
    pub correctness: Vec<bool>,
    pub p_pred: Vec<f64>,
    /// Present only when every epoch carried `p_true`.
    pub p_true: Option<Vec<f64>>,
}

/// Dense, validated dynamics matrix for one run. Examples are kept in
/// lexicographic id order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDynamics {
    run_id: String,
    num_epochs: usize,
    examples: BTreeMap<String, ExampleDynamics>,
}

impl TrainingDynamics {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn num_epochs(&self) -> usize {
        self.num_epochs
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &BTreeMap<String, ExampleDynamics> {
        &self.examples
    }

    pub fn example(&self, example_id: &str) -> Result<&ExampleDynamics, DynamicsError> {
        self.examples
            .get(example_id)
            .ok_or_else(|| DynamicsError::UnknownExample(example_id.to_string()))
    }

    pub fn correctness_sequence(&self, example_id: &str) -> Result<&[bool], DynamicsError> {
        Ok(&self.example(example_id)?.correctness)
    }

    pub fn has_p_true(&self) -> bool {
        self.examples.values().all(|e| e.p_true.is_some())
    }

    /// Records in canonical order: by example id, then epoch.
    pub fn to_records(&self) -> Vec<PredictionRecord> {
        let mut out = Vec::with_capacity(self.examples.len() * self.num_epochs);
        for (id, ex) in &self.examples {
            for t in 0..self.num_epochs {
                out.push(PredictionRecord {
                    run_id: self.run_id.clone(),
                    example_id: id.clone(),
                    epoch: t as u32 + 1,
                    split: ex.split,
                    true_label: ex.true_label,
                    pred_label: ex.pred_labels[t],
                    p_pred: ex.p_pred[t],
                    p_true: ex.p_true.as_ref().map(|p| p[t]),
                });
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.to_records() {
            writeln!(out, "{}", record.to_json_line())?;
        }
        Ok(())
    }
}

/// Free-function form of [`TrainingDynamics::correctness_sequence`].
pub fn correctness_sequence<'a>(
    dynamics: &'a TrainingDynamics,
    example_id: &str,
) -> Result<&'a [bool], DynamicsError> {
    dynamics.correctness_sequence(example_id)
}

/// Assembles the records belonging to `run_id` into a dense matrix.
///
/// Records of other runs are skipped. The number of epochs is the largest
/// epoch seen; every example must have exactly one record for each epoch.
/// The result (and the error, if any) depends only on the multiset of
/// records, never on their order.
pub fn ingest_run<I>(records: I, run_id: &str) -> Result<TrainingDynamics, DynamicsError>
where
    I: IntoIterator<Item = PredictionRecord>,
{
    let mut cells: Vec<PredictionRecord> =
        records.into_iter().filter(|r| r.run_id == run_id).collect();
    if cells.is_empty() {
        return Err(DynamicsError::EmptyRun(run_id.to_string()));
    }
    for cell in &cells {
        cell.validate()?;
    }
    cells.sort_by(|a, b| {
        (&a.example_id, a.epoch, a.true_label, a.pred_label, a.split)
            .cmp(&(&b.example_id, b.epoch, b.true_label, b.pred_label, b.split))
            .then(a.p_pred.total_cmp(&b.p_pred))
    });
    let num_epochs = cells.iter().map(|c| c.epoch).max().unwrap_or(0) as usize;

    let mut examples = BTreeMap::new();
    for group in cells.chunk_by(|a, b| a.example_id == b.example_id) {
        let id = &group[0].example_id;
        for pair in group.windows(2) {
            if pair[0].epoch == pair[1].epoch {
                return Err(DynamicsError::DuplicateCell {
                    example_id: id.clone(),
                    epoch: pair[0].epoch,
                });
            }
        }
        if let Some(missing) = (1..=num_epochs as u32)
            .zip(group.iter().map(|c| c.epoch).chain(std::iter::repeat(0)))
            .find(|(expected, got)| expected != got)
        {
            return Err(DynamicsError::MissingCell {
                example_id: id.clone(),
                epoch: missing.0,
            });
        }
        let first = &group[0];
        if let Some(other) = group.iter().find(|c| c.true_label != first.true_label) {
            return Err(DynamicsError::InconsistentTrueLabel {
                example_id: id.clone(),
                first: first.true_label,
                second: other.true_label,
            });
        }
        if let Some(other) = group.iter().find(|c| c.split != first.split) {
            return Err(DynamicsError::InconsistentSplit {
                example_id: id.clone(),
                first: first.split,
                second: other.split,
            });
        }
        let p_true: Option<Vec<f64>> = group.iter().map(|c| c.p_true).collect();
        examples.insert(
            id.clone(),
            ExampleDynamics {
                true_label: first.true_label,
                split: first.split,
                pred_labels: group.iter().map(|c| c.pred_label).collect(),
                correctness: group.iter().map(PredictionRecord::is_correct).collect(),
                p_pred: group.iter().map(|c| c.p_pred).collect(),
                p_true,
            },
        );
    }

    Ok(TrainingDynamics {
        run_id: run_id.to_string(),
        num_epochs,
        examples,
    })
}

/// Distinct run ids in a record set, sorted.
pub fn run_ids(records: &[PredictionRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.run_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Ingests `run_id` if given, otherwise the only run present in `records`.
pub fn ingest_single(
    records: Vec<PredictionRecord>,
    run_id: Option<&str>,
) -> Result<TrainingDynamics, DynamicsError> {
    match run_id {
        Some(id) => ingest_run(records, id),
        None => {
            let ids = run_ids(&records);
            match ids.as_slice() {
                [] => Err(DynamicsError::EmptyRun(String::new())),
                [only] => {
                    let only = only.clone();
                    ingest_run(records, &only)
                }
                many => Err(DynamicsError::AmbiguousRun(many.join(", "))),
            }
        }
    }
}
