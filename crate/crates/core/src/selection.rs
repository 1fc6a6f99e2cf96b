//! Second-stage fine-tuning set selection over a pair of SOI assignments
//! (source = single-setting run, target = multi-setting run).

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::soi::{SoiAssignment, SoiCategory};
use crate::transitions::{align, TransitionError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Alignment(#[from] TransitionError),
    #[error("unknown strategy `{0}` (expected I, II, III, IV, V or VI)")]
    UnknownStrategy(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SelectionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Alignment(TransitionError::ExampleSetMismatch { .. }) => {
                "selection.example_set_mismatch"
            }
            Self::Alignment(TransitionError::EmptyIntersection(..)) => {
                "selection.empty_intersection"
            }
            Self::Alignment(TransitionError::Io(_)) | Self::Io { .. } => "selection.io_failure",
            Self::UnknownStrategy(_) => "selection.unknown_strategy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::I,
        Strategy::II,
        Strategy::III,
        Strategy::IV,
        Strategy::V,
        Strategy::VI,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::I => "I",
            Strategy::II => "II",
            Strategy::III => "III",
            Strategy::IV => "IV",
            Strategy::V => "V",
            Strategy::VI => "VI",
        }
    }

    /// Heatmap cells the strategy draws from; empty for IV, V and VI, which
    /// are defined on a single run or on the whole set.
    pub fn cells(self) -> &'static [(SoiCategory, SoiCategory)] {
        match self {
            Strategy::I => &DEGRADING_CELLS,
            Strategy::II => &DIAGONAL_WITHOUT_ACE_ELE,
            Strategy::III => &DIAGONAL_WITHOUT_ACE,
            Strategy::IV | Strategy::V | Strategy::VI => &[],
        }
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::III
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SelectionError::UnknownStrategy(s.to_string()))
    }
}

use SoiCategory::{Ace, Ele, Frge1t, FrgeGe2t, Lle, Une};

/// Strategy I: moves from a more favorable to a less favorable behavior.
pub const DEGRADING_CELLS: [(SoiCategory, SoiCategory); 9] = [
    (Ace, Frge1t),
    (Ele, Frge1t),
    (Lle, Frge1t),
    (Lle, FrgeGe2t),
    (Ele, FrgeGe2t),
    (Ace, FrgeGe2t),
    (Frge1t, FrgeGe2t),
    (Ace, Lle),
    (Ele, Lle),
];

/// Strategy II: diagonal without ACE→ACE and ELE→ELE.
pub const DIAGONAL_WITHOUT_ACE_ELE: [(SoiCategory, SoiCategory); 4] =
    [(Une, Une), (Frge1t, Frge1t), (FrgeGe2t, FrgeGe2t), (Lle, Lle)];

/// Strategy III: diagonal without ACE→ACE.
pub const DIAGONAL_WITHOUT_ACE: [(SoiCategory, SoiCategory); 5] = [
    (Une, Une),
    (Frge1t, Frge1t),
    (FrgeGe2t, FrgeGe2t),
    (Ele, Ele),
    (Lle, Lle),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectOptions {
    /// Strategies IV/V also take never-learned (UNE) examples.
    pub include_une: bool,
    /// Restrict to shared examples instead of failing on a mismatch.
    pub intersect: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub source_run: String,
    pub target_run: String,
    pub include_une: bool,
    pub example_ids: BTreeSet<String>,
    pub source_cells: Vec<(SoiCategory, SoiCategory)>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }

    pub fn manifest(&self) -> SubsetManifest {
        SubsetManifest {
            strategy: self.strategy,
            source_run: self.source_run.clone(),
            target_run: self.target_run.clone(),
            count: self.len(),
            include_une: self.include_une,
        }
    }
}

pub fn select(
    strategy: Strategy,
    a: &SoiAssignment,
    b: &SoiAssignment,
) -> Result<SelectionResult, SelectionError> {
    select_with(strategy, a, b, SelectOptions::default())
}

pub fn select_with(
    strategy: Strategy,
    a: &SoiAssignment,
    b: &SoiAssignment,
    opts: SelectOptions,
) -> Result<SelectionResult, SelectionError> {
    let pairs = align(a, b, opts.intersect)?;
    let forgettable =
        |c: SoiCategory| c.is_forgettable() || (opts.include_une && c == SoiCategory::Une);
    let cells = strategy.cells();
    let keep = |from: SoiCategory, to: SoiCategory| match strategy {
        Strategy::I | Strategy::II | Strategy::III => cells.contains(&(from, to)),
        Strategy::IV => forgettable(from),
        Strategy::V => forgettable(to),
        Strategy::VI => true,
    };
    let example_ids = pairs
        .iter()
        .filter(|&&(_, from, to)| keep(from, to))
        .map(|&(id, _, _)| id.to_string())
        .collect();
    Ok(SelectionResult {
        strategy,
        source_run: a.run_id.clone(),
        target_run: b.run_id.clone(),
        include_une: opts.include_une,
        example_ids,
        source_cells: cells.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub strategy: Strategy,
    pub source_run: String,
    pub target_run: String,
    pub count: usize,
    pub include_une: bool,
}

/// Sidecar manifest path: the subset path with a `.json` extension.
pub fn manifest_path(subset: &Path) -> PathBuf {
    subset.with_extension("json")
}

/// Writes the ids one per line plus the JSON manifest next to it. Returns
/// the manifest path.
pub fn export_subset(result: &SelectionResult, out: &Path) -> Result<PathBuf, SelectionError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SelectionError::Io { path, source }
    };
    let mut text = String::new();
    for id in &result.example_ids {
        text.push_str(id);
        text.push('\n');
    }
    crate::write_file(out, text.as_bytes()).map_err(io(out))?;
    let manifest = manifest_path(out);
    let mut json = serde_json::to_vec_pretty(&result.manifest()).expect("manifest serializes");
    json.push(b'\n');
    crate::write_file(&manifest, &json).map_err(io(&manifest))?;
    Ok(manifest)
}

/// Reads a subset file (one id per line, blank lines ignored).
pub fn read_subset<R: BufRead>(input: R) -> std::io::Result<Vec<String>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| l.map(|l| l.trim().to_string()))
        .collect()
}

pub fn write_ids<W: Write>(ids: &BTreeSet<String>, mut out: W) -> std::io::Result<()> {
    for id in ids {
        writeln!(out, "{id}")?;
    }
    Ok(())
}
