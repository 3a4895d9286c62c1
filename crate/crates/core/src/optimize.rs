//! Data-driven threshold selection: sweep a grid of thresholds over a
//! labeled trial set and pick the one minimizing false detections plus
//! missed perturbations.
//!
//! The deviation trace of each trial is computed once with truth-driven
//! window exclusion, which makes it independent of the threshold;
//! thresholding is then a pure post-process, so the sweep costs one
//! detector run per trial no matter how fine the grid is.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    self, classify_and_delay, DetectorError, PipelineConfig, RunMode, TrialClassification,
};
use crate::gait::GaitCycle;
use crate::ingest::{PerturbationLabel, TrialRecording};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRange {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
}

impl Default for SweepRange {
    fn default() -> Self {
        Self {
            t_min: 0.01,
            t_max: 1.0,
            step: 0.001,
        }
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("empty trial set")]
    EmptyTrialSet,
    #[error("invalid sweep range: {0}")]
    InvalidRange(&'static str),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Ascending threshold grid, inclusive of both ends.
pub fn threshold_grid(range: &SweepRange) -> Result<Vec<f64>, SweepError> {
    if range.t_min.is_nan() || range.t_max.is_nan() || range.t_min >= range.t_max {
        return Err(SweepError::InvalidRange("t_min must be below t_max"));
    }
    if range.step.is_nan() || range.step <= 0.0 {
        return Err(SweepError::InvalidRange("step must be positive"));
    }
    let count = ((range.t_max - range.t_min) / range.step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| range.t_min + k as f64 * range.step).collect())
}

/// Threshold-independent per-trial material the sweep re-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial_id: String,
    pub phi: Vec<Option<f64>>,
    pub cycles: Vec<GaitCycle>,
    pub calibration_end: Option<usize>,
    pub truth: Option<PerturbationLabel>,
}

/// Aggregate performance at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub true_pos: u32,
    pub false_pos: u32,
    pub true_neg: u32,
    pub false_neg: u32,
    pub mean_delay_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<ThresholdRow>,
    /// Index of the row [`select_threshold`] favors.
    pub chosen: usize,
}

impl SweepResult {
    pub fn chosen_row(&self) -> &ThresholdRow {
        &self.rows[self.chosen]
    }
}

/// Run the detector once per trial and cache the deviation traces.
pub fn compute_traces(
    trials: &[TrialRecording],
    config: &PipelineConfig,
) -> Result<Vec<TrialTrace>, SweepError> {
    if trials.is_empty() {
        return Err(SweepError::EmptyTrialSet);
    }
    trials
        .par_iter()
        .map(|trial| {
            let run = detector::run_trial(trial, config, RunMode::TruthExcluded)?;
            Ok(TrialTrace {
                trial_id: trial.trial_id.clone(),
                phi: run.phi_trace(),
                cycles: run.segmentation.cycles,
                calibration_end: run.calibration_end,
                truth: trial.perturbation,
            })
        })
        .collect()
}

/// Score one trace at one threshold.
pub fn classify_trace(
    trace: &TrialTrace,
    threshold: f64,
    tp_window_cycles: f64,
) -> Result<TrialClassification, DetectorError> {
    classify_and_delay(
        &trace.phi,
        &trace.cycles,
        trace.calibration_end,
        trace.truth.as_ref(),
        threshold,
        tp_window_cycles,
    )
}

/// Sweep a threshold grid over cached traces.
pub fn sweep_traces(
    traces: &[TrialTrace],
    range: &SweepRange,
    tp_window_cycles: f64,
) -> Result<SweepResult, SweepError> {
    if traces.is_empty() {
        return Err(SweepError::EmptyTrialSet);
    }
    let grid = threshold_grid(range)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &threshold in &grid {
        let mut tp = 0u32;
        let mut fp = 0u32;
        let mut tn = 0u32;
        let mut fn_ = 0u32;
        let mut delay_sum = 0.0;
        let mut delay_n = 0u32;
        for trace in traces {
            let c = classify_trace(trace, threshold, tp_window_cycles)?;
            tp += c.true_pos;
            fp += c.false_pos;
            tn += c.true_neg;
            fn_ += c.false_neg;
            if let Some(d) = c.delay_pct {
                delay_sum += d;
                delay_n += 1;
            }
        }
        let total = tp + fp + tn + fn_;
        rows.push(ThresholdRow {
            threshold,
            accuracy: if total > 0 {
                (tp + tn) as f64 / total as f64
            } else {
                0.0
            },
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fn_,
            mean_delay_pct: (delay_n > 0).then(|| delay_sum / delay_n as f64),
        });
    }
    let chosen = select_index(&rows);
    Ok(SweepResult { rows, chosen })
}

/// One detector run per trial, then threshold the cached traces.
pub fn sweep(
    trials: &[TrialRecording],
    config: &PipelineConfig,
    range: &SweepRange,
) -> Result<SweepResult, SweepError> {
    let traces = compute_traces(trials, config)?;
    sweep_traces(&traces, range, config.detector.tp_window_cycles)
}

fn select_index(rows: &[ThresholdRow]) -> usize {
    let key = |r: &ThresholdRow| {
        (
            r.false_pos + r.false_neg,
            r.mean_delay_pct.unwrap_or(f64::INFINITY),
        )
    };
    let mut best = 0;
    for (i, row) in rows.iter().enumerate().skip(1) {
        let (kb, db) = key(&rows[best]);
        let (ki, di) = key(row);
        if ki < kb || (ki == kb && di < db) {
            best = i;
        }
        // Equal on both criteria keeps the earlier (smaller) threshold.
    }
    best
}

/// The threshold minimizing FP + FN, ties broken by smaller mean delay,
/// then by smaller threshold.
pub fn select_threshold(result: &SweepResult) -> f64 {
    result.rows[select_index(&result.rows)].threshold
}

/// CSV dump of a sweep (`threshold,accuracy,fp,fn,tp,tn,mean_delay_pct`).
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("threshold,accuracy,fp,fn,tp,tn,mean_delay_pct\n");
    for r in &result.rows {
        let delay = r.mean_delay_pct.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.threshold, r.accuracy, r.false_pos, r.false_neg, r.true_pos, r.true_neg, delay
        ));
    }
    out
}
