//! SOI transition heatmaps: how examples move between categories from a
//! single-setting run (rows) to a multi-setting run (columns).

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::soi::{SoiAssignment, SoiCategory};
use crate::svg::{self, Svg};

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error(
        "runs `{source_run}` and `{target_run}` cover different examples: {} only in source{}, {} only in target{}",
        only_in_source.len(), preview(only_in_source), only_in_target.len(), preview(only_in_target)
    )]
    ExampleSetMismatch {
        source_run: String,
        target_run: String,
        only_in_source: Vec<String>,
        only_in_target: Vec<String>,
    },
    #[error("runs `{0}` and `{1}` share no examples")]
    EmptyIntersection(String, String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn preview(ids: &[String]) -> String {
    if ids.is_empty() {
        return String::new();
    }
    let head: Vec<&str> = ids.iter().take(3).map(String::as_str).collect();
    let more = if ids.len() > 3 { ", ..." } else { "" };
    format!(" ({}{more})", head.join(", "))
}

impl TransitionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::ExampleSetMismatch { .. } => "transitions.example_set_mismatch",
            Self::EmptyIntersection(..) => "transitions.empty_intersection",
            Self::Io(_) => "transitions.io_failure",
        }
    }
}

/// One shared example with its category in each run.
pub(crate) type Pair<'a> = (&'a str, SoiCategory, SoiCategory);

/// Joins two assignments on example id. Without `intersect`, differing
/// example sets are an error; with it, unshared ids are dropped (logged).
pub(crate) fn align<'a>(
    a: &'a SoiAssignment,
    b: &'a SoiAssignment,
    intersect: bool,
) -> Result<Vec<Pair<'a>>, TransitionError> {
    let only_in_source: Vec<String> = a
        .entries
        .keys()
        .filter(|id| !b.entries.contains_key(*id))
        .cloned()
        .collect();
    let only_in_target: Vec<String> = b
        .entries
        .keys()
        .filter(|id| !a.entries.contains_key(*id))
        .cloned()
        .collect();
    if !(only_in_source.is_empty() && only_in_target.is_empty()) {
        if !intersect {
            return Err(TransitionError::ExampleSetMismatch {
                source_run: a.run_id.clone(),
                target_run: b.run_id.clone(),
                only_in_source,
                only_in_target,
            });
        }
        log::warn!(
            "intersecting `{}` and `{}`: dropping {} + {} unshared examples",
            a.run_id,
            b.run_id,
            only_in_source.len(),
            only_in_target.len()
        );
    }
    let pairs: Vec<Pair<'a>> = a
        .entries
        .iter()
        .filter_map(|(id, ea)| b.entries.get(id).map(|eb| (id.as_str(), ea.category, eb.category)))
        .collect();
    if pairs.is_empty() {
        return Err(TransitionError::EmptyIntersection(
            a.run_id.clone(),
            b.run_id.clone(),
        ));
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionMatrix {
    pub source_run: String,
    pub target_run: String,
    /// `counts[i][j]`: examples in category `i` under the source run and
    /// category `j` under the target run, in [`SoiCategory::ALL`] order.
    pub counts: [[usize; 6]; 6],
    pub row_sums: [usize; 6],
    pub col_sums: [usize; 6],
    pub total: usize,
}

impl TransitionMatrix {
    fn from_pairs(source_run: &str, target_run: &str, pairs: &[Pair<'_>]) -> Self {
        let mut counts = [[0usize; 6]; 6];
        for &(_, from, to) in pairs {
            counts[from.index()][to.index()] += 1;
        }
        let mut row_sums = [0; 6];
        let mut col_sums = [0; 6];
        for i in 0..6 {
            for j in 0..6 {
                row_sums[i] += counts[i][j];
                col_sums[j] += counts[i][j];
            }
        }
        TransitionMatrix {
            source_run: source_run.to_string(),
            target_run: target_run.to_string(),
            counts,
            row_sums,
            col_sums,
            total: row_sums.iter().sum(),
        }
    }

    pub fn cell(&self, from: SoiCategory, to: SoiCategory) -> usize {
        self.counts[from.index()][to.index()]
    }

    pub fn transpose(&self) -> TransitionMatrix {
        let mut counts = [[0usize; 6]; 6];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                counts[j][i] = n;
            }
        }
        TransitionMatrix {
            source_run: self.target_run.clone(),
            target_run: self.source_run.clone(),
            counts,
            row_sums: self.col_sums,
            col_sums: self.row_sums,
            total: self.total,
        }
    }

    pub fn is_diagonal(&self) -> bool {
        (0..6).all(|i| (0..6).all(|j| i == j || self.counts[i][j] == 0))
    }

    /// 8×8 table: header row and column of category names plus `SUM`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let labels: Vec<&str> = SoiCategory::ALL.iter().map(|c| c.label()).collect();
        writeln!(out, "from\\to,{},SUM", labels.join(","))?;
        for (i, label) in labels.iter().enumerate() {
            let cells: Vec<String> = self.counts[i].iter().map(usize::to_string).collect();
            writeln!(out, "{label},{},{}", cells.join(","), self.row_sums[i])?;
        }
        let cols: Vec<String> = self.col_sums.iter().map(usize::to_string).collect();
        writeln!(out, "SUM,{},{}", cols.join(","), self.total)
    }

    pub fn render_svg(&self) -> String {
        const CELL: f64 = 70.0;
        const LEFT: f64 = 110.0;
        const TOP: f64 = 90.0;
        let size = LEFT + 7.0 * CELL + 30.0;
        let mut doc = Svg::new(size as u32, (TOP + 7.0 * CELL + 30.0) as u32);
        doc.text(
            size / 2.0,
            24.0,
            14,
            "middle",
            "#000000",
            &format!("{} → {}", self.source_run, self.target_run),
        );
        doc.text(LEFT + 3.5 * CELL, TOP - 40.0, 12, "middle", "#333333", &self.target_run);
        doc.rotated_text(20.0, TOP + 3.5 * CELL, 12, &self.source_run);

        let labels: Vec<&str> = SoiCategory::ALL
            .iter()
            .map(|c| c.display_label())
            .chain(std::iter::once("Σ"))
            .collect();
        for (k, label) in labels.iter().enumerate() {
            let c = k as f64;
            doc.text(LEFT + (c + 0.5) * CELL, TOP - 10.0, 12, "middle", "#000000", label);
            doc.text(LEFT - 10.0, TOP + (c + 0.5) * CELL + 4.0, 12, "end", "#000000", label);
        }

        let inner_max = self.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        let marg_max = self
            .row_sums
            .iter()
            .chain(self.col_sums.iter())
            .copied()
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        for i in 0..7 {
            for j in 0..7 {
                let (value, scale, marginal) = match (i, j) {
                    (6, 6) => (self.total, self.total.max(1) as f64, true),
                    (6, j) => (self.col_sums[j], marg_max, true),
                    (i, 6) => (self.row_sums[i], marg_max, true),
                    (i, j) => (self.counts[i][j], inner_max, false),
                };
                let t = value as f64 / scale;
                let fill = if marginal {
                    grey_ramp(t)
                } else {
                    svg::blue_ramp(t)
                };
                let x = LEFT + j as f64 * CELL;
                let y = TOP + i as f64 * CELL;
                doc.rect(x, y, CELL, CELL, &fill, Some("#ffffff"));
                let ink = if t > 0.55 { "#ffffff" } else { "#000000" };
                doc.text(x + CELL / 2.0, y + CELL / 2.0 + 5.0, 14, "middle", ink, &value.to_string());
            }
        }
        doc.finish()
    }
}

fn grey_ramp(t: f64) -> String {
    let v = (235.0 - 150.0 * t.clamp(0.0, 1.0)).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

pub fn build_heatmap(a: &SoiAssignment, b: &SoiAssignment) -> Result<TransitionMatrix, TransitionError> {
    build_heatmap_with(a, b, false)
}

/// Like [`build_heatmap`]; `intersect` restricts both runs to their shared
/// examples instead of failing on a mismatch.
pub fn build_heatmap_with(
    a: &SoiAssignment,
    b: &SoiAssignment,
    intersect: bool,
) -> Result<TransitionMatrix, TransitionError> {
    let pairs = align(a, b, intersect)?;
    Ok(TransitionMatrix::from_pairs(&a.run_id, &b.run_id, &pairs))
}
