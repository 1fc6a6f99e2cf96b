//! Subsets of interest: forgetting/recollecting event counting and the
//! six-way classification of correctness sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Index;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TrainingDynamics;

#[derive(Debug, Error)]
pub enum SoiError {
    #[error("correctness sequence is empty")]
    EmptySequence,
    #[error("cutoff {cutoff} outside 1..={epochs}")]
    CutoffOutOfRange { cutoff: usize, epochs: usize },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("bad SOI table row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl SoiError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySequence => "soi.empty_sequence",
            Self::CutoffOutOfRange { .. } => "soi.cutoff_out_of_range",
            Self::UnknownCategory(_) => "soi.unknown_category",
            Self::BadRow { .. } => "soi.bad_row",
            Self::Csv(_) => "soi.io_failure",
        }
    }
}

/// The six subsets of interest, in canonical axis order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SoiCategory {
    #[serde(rename = "UNE")]
    Une,
    #[serde(rename = "ACE")]
    Ace,
    #[serde(rename = "1t-FRGE")]
    Frge1t,
    #[serde(rename = "ge2t-FRGE")]
    FrgeGe2t,
    #[serde(rename = "ELE")]
    Ele,
    #[serde(rename = "LLE")]
    Lle,
}

impl SoiCategory {
    pub const ALL: [SoiCategory; 6] = [
        SoiCategory::Une,
        SoiCategory::Ace,
        SoiCategory::Frge1t,
        SoiCategory::FrgeGe2t,
        SoiCategory::Ele,
        SoiCategory::Lle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// ASCII label used in CSV files and manifests.
    pub fn label(self) -> &'static str {
        match self {
            SoiCategory::Une => "UNE",
            SoiCategory::Ace => "ACE",
            SoiCategory::Frge1t => "1t-FRGE",
            SoiCategory::FrgeGe2t => "ge2t-FRGE",
            SoiCategory::Ele => "ELE",
            SoiCategory::Lle => "LLE",
        }
    }

    /// Label used on figures.
    pub fn display_label(self) -> &'static str {
        match self {
            SoiCategory::FrgeGe2t => "≥2t-FRGE",
            other => other.label(),
        }
    }

    pub fn is_forgettable(self) -> bool {
        matches!(self, SoiCategory::Frge1t | SoiCategory::FrgeGe2t)
    }
}

impl fmt::Display for SoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SoiCategory {
    type Err = SoiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UNE" => Ok(SoiCategory::Une),
            "ACE" => Ok(SoiCategory::Ace),
            "1t-FRGE" => Ok(SoiCategory::Frge1t),
            "ge2t-FRGE" | "≥2t-FRGE" => Ok(SoiCategory::FrgeGe2t),
            "ELE" => Ok(SoiCategory::Ele),
            "LLE" => Ok(SoiCategory::Lle),
            other => Err(SoiError::UnknownCategory(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub forgetting: u32,
    /// 0→1 transitions after the first forgetting event. Earlier 0→1
    /// transitions are initial learning.
    pub recollecting: u32,
    /// 1-based epoch of the first correct prediction.
    pub first_correct_epoch: Option<u32>,
    pub last_epoch_correct: bool,
}

pub fn count_events(seq: &[bool]) -> Result<EventCounts, SoiError> {
    let last = *seq.last().ok_or(SoiError::EmptySequence)?;
    let mut forgetting = 0;
    let mut recollecting = 0;
    for pair in seq.windows(2) {
        match (pair[0], pair[1]) {
            (true, false) => forgetting += 1,
            (false, true) if forgetting > 0 => recollecting += 1,
            _ => {}
        }
    }
    Ok(EventCounts {
        forgetting,
        recollecting,
        first_correct_epoch: seq.iter().position(|&b| b).map(|i| i as u32 + 1),
        last_epoch_correct: last,
    })
}

/// Category of a sequence already summarised as `events`.
pub fn category_from_events(events: &EventCounts, cutoff: usize) -> SoiCategory {
    match (events.forgetting, events.recollecting, events.first_correct_epoch) {
        (0, _, Some(1)) if events.last_epoch_correct => SoiCategory::Ace,
        (1, r, _) if r >= 1 => SoiCategory::Frge1t,
        (_, r, _) if r >= 1 => SoiCategory::FrgeGe2t,
        (f, _, _) if f >= 1 => SoiCategory::Une,
        (_, _, None) => SoiCategory::Une,
        (_, _, Some(first)) if first as usize <= cutoff => SoiCategory::Ele,
        _ => SoiCategory::Lle,
    }
}

/// Classifies a correctness sequence. `cutoff` is the last epoch (1-based)
/// at which a first correct prediction still counts as early learning.
pub fn classify(seq: &[bool], cutoff: usize) -> Result<SoiCategory, SoiError> {
    let events = count_events(seq)?;
    check_cutoff(cutoff, seq.len())?;
    Ok(category_from_events(&events, cutoff))
}

fn check_cutoff(cutoff: usize, epochs: usize) -> Result<(), SoiError> {
    if cutoff == 0 || cutoff > epochs {
        return Err(SoiError::CutoffOutOfRange { cutoff, epochs });
    }
    Ok(())
}

/// Default early/late cutoff: half the epochs, rounded down (at least 1).
pub fn default_cutoff(num_epochs: usize) -> usize {
    (num_epochs / 2).max(1)
}

/// Per-category counts, indexed in canonical order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census(pub [usize; 6]);

impl Census {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn non_empty(&self) -> usize {
        self.0.iter().filter(|&&n| n > 0).count()
    }

    pub fn add(&mut self, category: SoiCategory) {
        self.0[category.index()] += 1;
    }
}

impl Index<SoiCategory> for Census {
    type Output = usize;

    fn index(&self, category: SoiCategory) -> &usize {
        &self.0[category.index()]
    }
}

impl Serialize for Census {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(6))?;
        for category in SoiCategory::ALL {
            map.serialize_entry(category.label(), &self[category])?;
        }
        map.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SoiEntry {
    pub category: SoiCategory,
    pub events: EventCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoiAssignment {
    pub run_id: String,
    /// `None` when loaded from a table that does not record it.
    pub late_cutoff: Option<usize>,
    pub entries: BTreeMap<String, SoiEntry>,
}

impl SoiAssignment {
    pub fn census(&self) -> Census {
        let mut census = Census::default();
        for entry in self.entries.values() {
            census.add(entry.category);
        }
        census
    }

    pub fn category(&self, example_id: &str) -> Option<SoiCategory> {
        self.entries.get(example_id).map(|e| e.category)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub const CSV_HEADER: [&'static str; 6] = [
        "example_id",
        "category",
        "forgetting",
        "recollecting",
        "first_correct_epoch",
        "last_correct",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SoiError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (id, entry) in &self.entries {
            let ev = &entry.events;
            w.write_record([
                id.as_str(),
                entry.category.label(),
                &ev.forgetting.to_string(),
                &ev.recollecting.to_string(),
                &ev.first_correct_epoch.map(|e| e.to_string()).unwrap_or_default(),
                if ev.last_epoch_correct { "true" } else { "false" },
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Loads a table written by [`write_csv`](Self::write_csv). Rows whose
    /// category contradicts their event counts are rejected.
    pub fn read_csv<R: Read>(input: R, run_id: &str) -> Result<Self, SoiError> {
        let mut reader = csv::Reader::from_reader(input);
        let header = reader.headers()?.clone();
        if header.iter().ne(Self::CSV_HEADER) {
            return Err(SoiError::BadRow {
                row: 0,
                reason: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut entries = BTreeMap::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let bad = |reason: String| SoiError::BadRow { row: i + 1, reason };
            let int = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("`{s}`: {e}")));
            let category: SoiCategory = row[1].parse()?;
            let events = EventCounts {
                forgetting: int(&row[2])?,
                recollecting: int(&row[3])?,
                first_correct_epoch: match &row[4] {
                    "" => None,
                    s => Some(int(s)?),
                },
                last_epoch_correct: match &row[5] {
                    "true" => true,
                    "false" => false,
                    s => return Err(bad(format!("last_correct `{s}`"))),
                },
            };
            if !consistent(category, &events) {
                return Err(bad(format!("category {category} contradicts its event counts")));
            }
            if entries
                .insert(row[0].to_string(), SoiEntry { category, events })
                .is_some()
            {
                return Err(bad(format!("duplicate example `{}`", &row[0])));
            }
        }
        Ok(SoiAssignment {
            run_id: run_id.to_string(),
            late_cutoff: None,
            entries,
        })
    }
}

fn consistent(category: SoiCategory, ev: &EventCounts) -> bool {
    let learned_once = ev.forgetting == 0 && ev.first_correct_epoch.is_some() && ev.last_epoch_correct;
    ev.recollecting <= ev.forgetting
        && match category {
            SoiCategory::Ace => learned_once && ev.first_correct_epoch == Some(1),
            SoiCategory::Ele | SoiCategory::Lle => learned_once,
            SoiCategory::Frge1t => ev.forgetting == 1 && ev.recollecting >= 1,
            SoiCategory::FrgeGe2t => ev.forgetting >= 2 && ev.recollecting >= 1,
            SoiCategory::Une => ev.recollecting == 0 && !ev.last_epoch_correct,
        }
}

/// Classifies every example of a run.
pub fn classify_run(dynamics: &TrainingDynamics, cutoff: usize) -> Result<SoiAssignment, SoiError> {
    let epochs = dynamics.num_epochs();
    check_cutoff(cutoff, epochs)?;
    let entries = dynamics
        .examples()
        .iter()
        .map(|(id, ex)| {
            let events = count_events(&ex.correctness)?;
            let category = category_from_events(&events, cutoff);
            Ok((id.clone(), SoiEntry { category, events }))
        })
        .collect::<Result<_, SoiError>>()?;
    Ok(SoiAssignment {
        run_id: dynamics.run_id().to_string(),
        late_cutoff: Some(cutoff),
        entries,
    })
}
