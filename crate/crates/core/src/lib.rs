//! Training-dynamics analysis toolkit.
//!
//! Per-epoch prediction logs ([`dynamics`]) are classified into six
//! subsets of interest ([`soi`]), placed on a confidence/variability map
//! ([`cartography`]), compared across runs with transition heatmaps
//! ([`transitions`]) and turned into second-stage fine-tuning subsets
//! ([`selection`]). [`toy`] produces genuine dynamics from a small
//! shared-encoder network and drives the whole two-stage experiment.

pub mod cartography;
pub mod dynamics;
pub mod selection;
pub mod soi;
mod svg;
pub mod toy;
pub mod transitions;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cartography::{CartographyError, CartographyPoint, Metric, Region, RegionThresholds};
pub use dynamics::{DynamicsError, PredictionRecord, TrainingDynamics};
pub use selection::{SelectionError, SelectionResult, Strategy};
pub use soi::{Census, EventCounts, SoiAssignment, SoiCategory, SoiError};
pub use toy::ToyError;
pub use transitions::{TransitionError, TransitionMatrix};

/// Any error surfaced by the toolkit, tagged with a module-prefixed code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Soi(#[from] SoiError),
    #[error(transparent)]
    Cartography(#[from] CartographyError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dynamics(e) => e.code(),
            Error::Soi(e) => e.code(),
            Error::Cartography(e) => e.code(),
            Error::Transition(e) => e.code(),
            Error::Selection(e) => e.code(),
            Error::Toy(e) => e.code(),
            Error::Io { .. } => "io.failure",
            Error::Json { .. } => "config.invalid_json",
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Materialises `files` (relative path, contents) as the directory `dir`.
///
/// Files are written to a sibling staging directory that is renamed into
/// place only after every write succeeded; any previous `dir` is replaced.
pub fn write_dir_atomically(dir: &Path, files: &[(&str, &[u8])]) -> Result<(), Error> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Io {
            path: dir.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "output directory has no name"),
        })?
        .to_string_lossy()
        .into_owned();
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(Error::io(parent))?;
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    let backup = parent.join(format!(".{name}.previous-{}", std::process::id()));

    let result = (|| {
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(Error::io(&staging))?;
        }
        for (rel, bytes) in files {
            let path = staging.join(rel);
            write_file(&path, bytes).map_err(Error::io(&path))?;
        }
        let had_previous = dir.exists();
        if had_previous {
            fs::rename(dir, &backup).map_err(Error::io(dir))?;
        }
        if let Err(e) = fs::rename(&staging, dir) {
            if had_previous {
                let _ = fs::rename(&backup, dir);
            }
            return Err(Error::io(dir)(e));
        }
        if had_previous {
            fs::remove_dir_all(&backup).map_err(Error::io(&backup))?;
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}
