//! Experiment drivers behind the command-line harness. Every driver is a pure
//! function of its inputs and seed; trials run in parallel on independent
//! worlds and are reported in a fixed order.

pub mod knot_tying;
pub mod running_stitch;
pub mod servo_convergence;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use knot_tying::{run_knot_tying, KnotReport, KnotSetup};
pub use running_stitch::{run_running_stitch, StitchReport, StitchSetup};
pub use servo_convergence::{run_servo_convergence, ConvergenceReport, ConvergenceSetup};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RunningStitch,
    KnotTying,
    ServoConvergence,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::RunningStitch => "running_stitch",
            ExperimentKind::KnotTying => "knot_tying",
            ExperimentKind::ServoConvergence => "servo_convergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub trials: usize,
    /// Commanded stitch sizes, millimetres.
    pub sizes_mm: Vec<f64>,
    pub targets: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn running_stitch(sizes_mm: Vec<f64>, trials: usize, seed: u64) -> Self {
        Self {
            kind: ExperimentKind::RunningStitch,
            trials,
            sizes_mm,
            targets: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::InvalidSpec(
                "trials must be at least 1".into(),
            ));
        }
        if self.kind == ExperimentKind::RunningStitch {
            if self.sizes_mm.is_empty() {
                return Err(ExperimentError::InvalidSpec("no stitch sizes given".into()));
            }
            if let Some(d) = self.sizes_mm.iter().find(|d| !(1.0..=5.0).contains(*d)) {
                return Err(ExperimentError::InvalidSpec(format!(
                    "stitch size {d} mm outside [1, 5] mm"
                )));
            }
            if self.targets == 0 {
                return Err(ExperimentError::InvalidSpec(
                    "targets per trial must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Seed of trial `index` within stream `stream`, decorrelated from neighbours.
pub fn trial_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one acceptance-tagged check inside a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Formats a float for CSV output; NaN becomes an empty field.
pub(crate) fn csv_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.9e}")
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}
