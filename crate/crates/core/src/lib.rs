// Index loops over parallel channel/bin arrays read better than zipped
// iterator chains in the numeric kernels here.
#![allow(clippy::needless_range_loop)]

//! Ground perturbation detection for treadmill walking from lower-limb
//! kinematic states.
//!
//! The pipeline ingests marker + force-plate recordings, assembles a
//! 16-dimensional local-frame state vector per sample, maintains rolling
//! per-gait-phase deviation bands over the preceding gait cycles, and flags
//! a perturbation when the aggregate deviation value crosses a threshold.
//! A whole-body angular momentum baseline detector, a threshold sweep,
//! a deterministic synthetic gait generator, and PCA/report tooling round
//! out the toolkit.

pub mod analysis;
pub mod baseline;
pub mod detector;
pub mod gait;
pub mod ingest;
pub mod kinematics;
pub mod optimize;
pub mod stats;
pub mod synth;

pub use detector::{DetectorConfig, DetectorSession, PipelineConfig, RunMode, TrialRun};
pub use ingest::TrialRecording;
pub use kinematics::{StateVector, STATE_COUNT, STATE_NAMES};
