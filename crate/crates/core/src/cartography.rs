//! Dataset cartography: per-example confidence and variability of the
//! logged probability series, region assignment and SOI-colored maps.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TrainingDynamics;
use crate::soi::{SoiAssignment, SoiCategory};
use crate::svg::{self, Svg};

#[derive(Debug, Error)]
pub enum CartographyError {
    #[error("probability series is empty")]
    EmptySequence,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("dynamics run `{dynamics}` and assignment run `{assignment}` cover different examples")]
    ExampleSetMismatch { dynamics: String, assignment: String },
    #[error("run `{0}` has no gold-class probabilities")]
    MissingTrueProbabilities(String),
    #[error("no points to draw")]
    NothingToRender,
    #[error("unknown metric `{0}` (expected p_pred or p_true)")]
    UnknownMetric(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CartographyError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySequence => "cartography.empty_sequence",
            Self::InvalidThresholds(_) => "cartography.invalid_thresholds",
            Self::ExampleSetMismatch { .. } => "cartography.example_set_mismatch",
            Self::MissingTrueProbabilities(_) => "cartography.missing_true_probabilities",
            Self::NothingToRender => "cartography.nothing_to_render",
            Self::UnknownMetric(_) => "cartography.unknown_metric",
            Self::Io(_) => "cartography.io_failure",
        }
    }
}

/// Mean of the series, accumulated as offsets from the first element so a
/// constant series returns that constant exactly.
pub fn confidence(probs: &[f64]) -> Result<f64, CartographyError> {
    let first = *probs.first().ok_or(CartographyError::EmptySequence)?;
    let shift: f64 = probs.iter().map(|p| p - first).sum::<f64>() / probs.len() as f64;
    Ok((first + shift).clamp(0.0, 1.0))
}

/// Population standard deviation (divides by the number of epochs).
pub fn variability(probs: &[f64]) -> Result<f64, CartographyError> {
    let mean = confidence(probs)?;
    let first = probs[0];
    let offset = mean - first;
    let sq: f64 = probs
        .iter()
        .map(|p| {
            let d = (p - first) - offset;
            d * d
        })
        .sum();
    Ok((sq / probs.len() as f64).sqrt().min(0.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    EasyToLearn,
    HardToLearn,
    Ambiguous,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::EasyToLearn, Region::HardToLearn, Region::Ambiguous];

    pub fn label(self) -> &'static str {
        match self {
            Region::EasyToLearn => "easy_to_learn",
            Region::HardToLearn => "hard_to_learn",
            Region::Ambiguous => "ambiguous",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct RegionThresholds {
    var_cutoff: f64,
    conf_cutoff: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    var_cutoff: f64,
    conf_cutoff: f64,
}

impl TryFrom<RawThresholds> for RegionThresholds {
    type Error = CartographyError;

    fn try_from(raw: RawThresholds) -> Result<Self, Self::Error> {
        RegionThresholds::new(raw.var_cutoff, raw.conf_cutoff)
    }
}

impl RegionThresholds {
    pub fn new(var_cutoff: f64, conf_cutoff: f64) -> Result<Self, CartographyError> {
        if !(var_cutoff > 0.0 && var_cutoff <= 0.5) {
            return Err(CartographyError::InvalidThresholds(format!(
                "var_cutoff {var_cutoff} not in (0, 0.5]"
            )));
        }
        if !(conf_cutoff > 0.0 && conf_cutoff < 1.0) {
            return Err(CartographyError::InvalidThresholds(format!(
                "conf_cutoff {conf_cutoff} not in (0, 1)"
            )));
        }
        Ok(RegionThresholds {
            var_cutoff,
            conf_cutoff,
        })
    }

    pub fn var_cutoff(&self) -> f64 {
        self.var_cutoff
    }

    pub fn conf_cutoff(&self) -> f64 {
        self.conf_cutoff
    }
}

impl Default for RegionThresholds {
    fn default() -> Self {
        RegionThresholds {
            var_cutoff: 0.2,
            conf_cutoff: 0.5,
        }
    }
}

pub fn assign_region(confidence: f64, variability: f64, t: &RegionThresholds) -> Region {
    if variability >= t.var_cutoff {
        Region::Ambiguous
    } else if confidence >= t.conf_cutoff {
        Region::EasyToLearn
    } else {
        Region::HardToLearn
    }
}

/// Which probability series feeds the coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Probability of the predicted class.
    #[default]
    PPred,
    /// Probability of the gold class.
    PTrue,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::PPred => "p_pred",
            Metric::PTrue => "p_true",
        }
    }
}

impl FromStr for Metric {
    type Err = CartographyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_pred" => Ok(Metric::PPred),
            "p_true" => Ok(Metric::PTrue),
            other => Err(CartographyError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CartographyPoint {
    pub example_id: String,
    pub confidence: f64,
    pub variability: f64,
    pub region: Region,
    pub category: SoiCategory,
}

pub fn build_map(
    dynamics: &TrainingDynamics,
    assignment: &SoiAssignment,
    thresholds: &RegionThresholds,
    metric: Metric,
) -> Result<Vec<CartographyPoint>, CartographyError> {
    let same_ids = dynamics.len() == assignment.len()
        && dynamics
            .examples()
            .keys()
            .zip(assignment.entries.keys())
            .all(|(a, b)| a == b);
    if !same_ids {
        return Err(CartographyError::ExampleSetMismatch {
            dynamics: dynamics.run_id().to_string(),
            assignment: assignment.run_id.clone(),
        });
    }
    if metric == Metric::PTrue && !dynamics.has_p_true() {
        return Err(CartographyError::MissingTrueProbabilities(
            dynamics.run_id().to_string(),
        ));
    }
    dynamics
        .examples()
        .iter()
        .zip(assignment.entries.values())
        .map(|((id, ex), entry)| {
            let series = match metric {
                Metric::PPred => &ex.p_pred,
                Metric::PTrue => ex.p_true.as_ref().expect("checked above"),
            };
            let confidence = confidence(series)?;
            let variability = variability(series)?;
            Ok(CartographyPoint {
                example_id: id.clone(),
                confidence,
                variability,
                region: assign_region(confidence, variability, thresholds),
                category: entry.category,
            })
        })
        .collect()
}

/// Count of points per (category, region).
pub fn region_histogram(points: &[CartographyPoint]) -> BTreeMap<SoiCategory, BTreeMap<Region, usize>> {
    let mut hist: BTreeMap<SoiCategory, BTreeMap<Region, usize>> = SoiCategory::ALL
        .iter()
        .map(|&c| (c, Region::ALL.iter().map(|&r| (r, 0)).collect()))
        .collect();
    for p in points {
        *hist.get_mut(&p.category).unwrap().get_mut(&p.region).unwrap() += 1;
    }
    hist
}

pub fn write_csv<W: Write>(points: &[CartographyPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "example_id,confidence,variability,region,category")?;
    for p in points {
        writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            p.example_id,
            p.confidence,
            p.variability,
            p.region,
            p.category.label()
        )?;
    }
    Ok(())
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Scatter of variability (x, 0..0.5) against confidence (y, 0..1), one
/// marker shape and color per category, legend with counts.
pub fn render_map(points: &[CartographyPoint], title: &str) -> Result<String, CartographyError> {
    if points.is_empty() {
        return Err(CartographyError::NothingToRender);
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + v / 0.5 * plot_w;
    let py = |c: f64| TOP + (1.0 - c) * plot_h;

    let mut doc = Svg::new(WIDTH as u32, HEIGHT as u32);
    doc.text(WIDTH / 2.0, 24.0, 15, "middle", "#000000", title);
    doc.rect(LEFT, TOP, plot_w, plot_h, "#ffffff", Some("#333333"));

    for i in 0..=5 {
        let v = i as f64 * 0.1;
        let x = px(v);
        doc.line(x, TOP + plot_h, x, TOP + plot_h + 5.0, "#333333", 1.0);
        doc.text(x, TOP + plot_h + 18.0, 11, "middle", "#333333", &format!("{v:.1}"));
    }
    for i in 0..=5 {
        let c = i as f64 * 0.2;
        let y = py(c);
        doc.line(LEFT - 5.0, y, LEFT, y, "#333333", 1.0);
        doc.text(LEFT - 8.0, y + 4.0, 11, "end", "#333333", &format!("{c:.1}"));
    }
    doc.text(LEFT + plot_w / 2.0, HEIGHT - 18.0, 13, "middle", "#000000", "variability");
    doc.rotated_text(20.0, TOP + plot_h / 2.0, 13, "confidence");

    for p in points {
        doc.marker(p.category, px(p.variability), py(p.confidence), 3.0);
    }

    let mut counts = [0usize; 6];
    for p in points {
        counts[p.category.index()] += 1;
    }
    let lx = WIDTH - RIGHT + 20.0;
    doc.text(lx, TOP + 6.0, 12, "start", "#000000", "category (n)");
    let present = SoiCategory::ALL.iter().filter(|c| counts[c.index()] > 0);
    for (row, &category) in present.enumerate() {
        let y = TOP + 28.0 + row as f64 * 22.0;
        doc.marker(category, lx + 6.0, y - 4.0, 5.0);
        doc.text(
            lx + 18.0,
            y,
            12,
            "start",
            svg::category_color(category),
            &format!("{} ({})", category.display_label(), counts[category.index()]),
        );
    }
    Ok(doc.finish())
}
