//! The perturbation detector: per-state band exceedance, the aggregate
//! stability deviation value, streaming threshold detection, per-cycle
//! labeling, and delay measurement.
//!
//! Two equivalent drivers exist. [`DetectorSession`] consumes one sample at
//! a time (the real-time path). [`run_trial`] walks a recorded trial
//! cycle-by-cycle (the batch path). Given the same inputs and window
//! policy, both produce bit-identical outputs; the test suite holds them
//! to that.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{self, GaitCycle, GaitError, Segmentation};
use crate::ingest::{self, IngestError, PerturbationLabel, TrialRecording};
use crate::kinematics::{self, KinematicsError, StateOptions, StateVector, STATE_COUNT};
use crate::stats::{PhaseBandModel, StatsError};

/// Detector tuning. `threshold_phi` is the detection threshold on the
/// aggregate deviation value; `band_k` the sigma multiplier defining each
/// state's steady band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub threshold_phi: f64,
    pub band_k: f64,
    pub window_cycles: usize,
    pub epsilon: f64,
    pub bins: usize,
    /// A true perturbation counts as detected only if a crossing occurs
    /// within this many onset-cycle durations after onset.
    pub tp_window_cycles: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_phi: 0.125,
            band_k: 2.0,
            window_cycles: 10,
            epsilon: 1e-6,
            bins: 100,
            tp_window_cycles: 1.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.threshold_phi.is_nan() || self.threshold_phi <= 0.0 || self.threshold_phi >= 1.0 {
            return Err(DetectorError::Config("threshold_phi must be in (0, 1)"));
        }
        if self.band_k.is_nan() || self.band_k <= 0.0 {
            return Err(DetectorError::Config("band_k must be > 0"));
        }
        if self.window_cycles == 0 {
            return Err(DetectorError::Config("window_cycles must be >= 1"));
        }
        if self.bins < 2 {
            return Err(DetectorError::Config("bins must be >= 2"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(DetectorError::Config("epsilon must be > 0"));
        }
        if self.tp_window_cycles.is_nan() || self.tp_window_cycles <= 0.0 {
            return Err(DetectorError::Config("tp_window_cycles must be > 0"));
        }
        Ok(())
    }
}

/// Everything needed to run the detector over a raw trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub states: StateOptions,
    /// Heel-strike threshold on the right vertical GRF, newtons.
    pub grf_threshold_n: f64,
    /// Event debounce, seconds.
    pub refractory_s: f64,
    /// Longest marker gap repaired during ingest, frames.
    pub max_gap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            states: StateOptions::default(),
            grf_threshold_n: 20.0,
            refractory_s: 0.4,
            max_gap: ingest::DEFAULT_MAX_GAP,
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("perturbation onset {onset} falls outside the segmented region")]
    OnsetOutsideSegmentation { onset: usize },
}

/// Signed band exceedance of one state: distance beyond `band_k` standard
/// deviations from the mean, zero inside the band.
pub fn alpha(x: f64, mean: f64, sd: f64, band_k: f64) -> (f64, i8) {
    let dev = x - mean;
    let mag = dev.abs() - band_k * sd;
    if mag > 0.0 {
        (mag, if dev > 0.0 { 1 } else { -1 })
    } else {
        (0.0, 0)
    }
}

/// Aggregate stability deviation: mean over states of a / (2c + a), with
/// 0/0 terms contributing zero. Each term is at most 1, so one deviating
/// state alone can never push the value past 1/16.
pub fn phi(alphas: &[f64; STATE_COUNT], covs: &[f64; STATE_COUNT]) -> f64 {
    let mut sum = 0.0;
    for s in 0..STATE_COUNT {
        let a = alphas[s];
        let denom = 2.0 * covs[s] + a;
        if a > 0.0 && denom > 0.0 {
            sum += a / denom;
        }
    }
    sum / STATE_COUNT as f64
}

/// Nearest phase bin for a phase in [0, 100); wraps at the top so 99.9%
/// maps to bin 0.
pub fn phase_bin(phase: f64, bins: usize) -> usize {
    let b = (phase * bins as f64 / 100.0).round() as usize;
    b % bins
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleLabel {
    Perturbed,
    Unperturbed,
}

/// Per-sample detector output. Serializes to the streaming JSONL record:
/// `{"i":..,"phase":..,"phi":..,"alpha":[..],"detected":..}`. `alpha`
/// entries are signed exceedances; `detected` latches once per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleOutput {
    pub i: usize,
    pub phase: Option<f64>,
    pub phi: Option<f64>,
    pub alpha: [f64; STATE_COUNT],
    pub detected: bool,
}

/// Per-cycle summary. `label` is `None` while the band model is still
/// calibrating; `pushed` records whether the cycle entered the rolling
/// statistics window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub plausible: bool,
    pub label: Option<CycleLabel>,
    pub crossing_phase: Option<f64>,
    pub pushed: bool,
}

/// Which cycles are kept out of the rolling statistics window.
///
/// `Detection` flags cycles containing a threshold crossing (the live
/// rule). `TruthWindow` flags cycles overlapping a known perturbation
/// response window, which keeps the deviation trace independent of the
/// detection threshold so sweeps can reuse it. After any flagged cycle one
/// further unflagged cycle must elapse before pushing resumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionPolicy {
    Detection,
    TruthWindow { onset: usize, until: usize },
    PushAll,
}

/// Streaming detector over one trial. Feed samples strictly in order with
/// their precomputed phase and a flag marking heel-strike samples.
pub struct DetectorSession {
    config: DetectorConfig,
    sample_rate: f64,
    policy: ExclusionPolicy,
    band: PhaseBandModel,
    buffer: Vec<StateVector>,
    buffer_start: usize,
    open: bool,
    cooldown: u8,
    cycles: Vec<CycleRecord>,
    detection_sample: Option<usize>,
    calibration_end: Option<usize>,
    skipped_samples: usize,
    next_index: usize,
    current_crossed: bool,
    current_crossing_phase: Option<f64>,
}

impl DetectorSession {
    pub fn new(
        config: DetectorConfig,
        sample_rate: f64,
        policy: ExclusionPolicy,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        let band = PhaseBandModel::new(config.window_cycles, config.bins, config.epsilon)?;
        Ok(Self {
            config,
            sample_rate,
            policy,
            band,
            buffer: Vec::new(),
            buffer_start: 0,
            open: false,
            cooldown: 0,
            cycles: Vec::new(),
            detection_sample: None,
            calibration_end: None,
            skipped_samples: 0,
            next_index: 0,
            current_crossed: false,
            current_crossing_phase: None,
        })
    }

    /// Process one sample. `cycle_boundary` is true at every heel strike;
    /// the boundary sample closes the previous cycle and starts the next.
    pub fn step(
        &mut self,
        state: &StateVector,
        phase: Option<f64>,
        cycle_boundary: bool,
    ) -> SampleOutput {
        let i = self.next_index;
        self.next_index += 1;
        let mut out = SampleOutput {
            i,
            phase,
            phi: None,
            alpha: [0.0; STATE_COUNT],
            detected: false,
        };

        if cycle_boundary && self.open {
            // The boundary sample is the interpolation anchor closing the
            // span, and the first sample of the next cycle.
            self.buffer.push(*state);
            self.finalize_cycle(i);
            self.buffer.clear();
            self.open = false;
        }

        match phase {
            None => self.skipped_samples += 1,
            Some(ph) => {
                if !self.open {
                    self.open = true;
                    self.buffer.clear();
                    self.buffer_start = i;
                    self.current_crossed = false;
                    self.current_crossing_phase = None;
                }
                self.buffer.push(*state);
                if self.band.is_valid() {
                    let bin = phase_bin(ph, self.config.bins);
                    let mean = self.band.mean_at(bin);
                    let sd = self.band.sd_at(bin);
                    let covs = self.band.cov_at(bin);
                    let mut mags = [0.0; STATE_COUNT];
                    for s in 0..STATE_COUNT {
                        let (mag, sign) = alpha(state.0[s], mean[s], sd[s], self.config.band_k);
                        mags[s] = mag;
                        out.alpha[s] = mag * sign as f64;
                    }
                    let value = phi(&mags, covs);
                    out.phi = Some(value);
                    if value >= self.config.threshold_phi {
                        if !self.current_crossed {
                            self.current_crossed = true;
                            self.current_crossing_phase = Some(ph);
                        }
                        if self.detection_sample.is_none() {
                            self.detection_sample = Some(i);
                        }
                    }
                }
            }
        }

        out.detected = self.detection_sample.is_some();
        out
    }

    fn finalize_cycle(&mut self, end: usize) {
        let start = self.buffer_start;
        let duration_s = (end - start) as f64 / self.sample_rate;
        let plausible = (gait::MIN_CYCLE_S..=gait::MAX_CYCLE_S).contains(&duration_s);
        let was_valid = self.band.is_valid();
        let label = was_valid.then_some(if self.current_crossed {
            CycleLabel::Perturbed
        } else {
            CycleLabel::Unperturbed
        });
        let flagged = match self.policy {
            ExclusionPolicy::Detection => self.current_crossed,
            ExclusionPolicy::TruthWindow { onset, until } => start <= until && end > onset,
            ExclusionPolicy::PushAll => false,
        };
        let mut pushed = false;
        if flagged {
            self.cooldown = 1;
        } else if self.cooldown > 0 {
            self.cooldown -= 1;
        } else if plausible {
            let matrix = gait::resample_span(&self.buffer, self.band.bins())
                .expect("cycle spans hold at least two samples");
            self.band
                .push_cycle(matrix)
                .expect("resampled matrix matches model bins");
            pushed = true;
            if self.calibration_end.is_none() && self.band.is_valid() {
                self.calibration_end = Some(end);
            }
        }
        self.cycles.push(CycleRecord {
            index: self.cycles.len(),
            start,
            end,
            plausible,
            label,
            crossing_phase: self.current_crossing_phase,
            pushed,
        });
        self.current_crossed = false;
        self.current_crossing_phase = None;
    }

    pub fn detection_sample(&self) -> Option<usize> {
        self.detection_sample
    }

    pub fn calibration_end(&self) -> Option<usize> {
        self.calibration_end
    }

    pub fn cycles(&self) -> &[CycleRecord] {
        &self.cycles
    }

    pub fn skipped_samples(&self) -> usize {
        self.skipped_samples
    }

    pub fn band(&self) -> &PhaseBandModel {
        &self.band
    }

    pub fn into_band(self) -> PhaseBandModel {
        self.band
    }
}

/// Full detector output for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub trial_id: String,
    pub samples: Vec<SampleOutput>,
    pub cycles: Vec<CycleRecord>,
    pub detection_sample: Option<usize>,
    /// First sample evaluated against a full statistics window.
    pub calibration_end: Option<usize>,
    pub skipped_samples: usize,
    pub segmentation: Segmentation,
    pub band: PhaseBandModel,
}

impl TrialRun {
    pub fn phi_trace(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.phi).collect()
    }

    pub fn classify(
        &self,
        truth: Option<&PerturbationLabel>,
        threshold: f64,
        tp_window_cycles: f64,
    ) -> Result<TrialClassification, DetectorError> {
        let phi: Vec<Option<f64>> = self.phi_trace();
        classify_and_delay(
            &phi,
            &self.segmentation.cycles,
            self.calibration_end,
            truth,
            threshold,
            tp_window_cycles,
        )
    }
}

/// How the statistics window treats perturbation responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Exclusion driven by detector crossings (deployment behavior).
    Live,
    /// Exclusion driven by the ground-truth label, keeping the deviation
    /// trace independent of the threshold (sweep behavior).
    TruthExcluded,
}

/// Gap-fill a trial and compute its state sequence and segmentation.
pub fn prepare(
    trial: &TrialRecording,
    config: &PipelineConfig,
) -> Result<(Vec<StateVector>, Segmentation), DetectorError> {
    let (filled, _report) = ingest::fill_trial_gaps(trial, config.max_gap);
    let states = kinematics::build_state_sequence(&filled, &config.states)?;
    let events = gait::detect_heel_strikes(
        &filled.grf_right_z,
        filled.sample_rate,
        config.grf_threshold_n,
        config.refractory_s,
    );
    let segmentation = gait::segment_and_phase(&events, filled.n_frames(), filled.sample_rate)?;
    Ok((states, segmentation))
}

fn resolve_policy(
    mode: RunMode,
    truth: Option<&PerturbationLabel>,
    cycles: &[GaitCycle],
    tp_window_cycles: f64,
) -> Result<ExclusionPolicy, DetectorError> {
    match mode {
        RunMode::Live => Ok(ExclusionPolicy::Detection),
        RunMode::TruthExcluded => match truth {
            None => Ok(ExclusionPolicy::PushAll),
            Some(t) => {
                let cycle = cycles
                    .iter()
                    .find(|c| c.contains(t.onset_sample))
                    .ok_or(DetectorError::OnsetOutsideSegmentation {
                        onset: t.onset_sample,
                    })?;
                let until =
                    t.onset_sample + (tp_window_cycles * cycle.len() as f64).round() as usize;
                Ok(ExclusionPolicy::TruthWindow {
                    onset: t.onset_sample,
                    until,
                })
            }
        },
    }
}

/// Batch detector: full segmentation first, then per-cycle statistics and
/// the deviation value for every sample, walking cycles in order.
pub fn run_trial(
    trial: &TrialRecording,
    config: &PipelineConfig,
    mode: RunMode,
) -> Result<TrialRun, DetectorError> {
    config.detector.validate()?;
    let (states, segmentation) = prepare(trial, config)?;
    let policy = resolve_policy(
        mode,
        trial.perturbation.as_ref(),
        &segmentation.cycles,
        config.detector.tp_window_cycles,
    )?;
    let n = states.len();
    let det = &config.detector;

    let mut samples: Vec<SampleOutput> = (0..n)
        .map(|i| SampleOutput {
            i,
            phase: segmentation.phase[i],
            phi: None,
            alpha: [0.0; STATE_COUNT],
            detected: false,
        })
        .collect();

    let mut band = PhaseBandModel::new(det.window_cycles, det.bins, det.epsilon)?;
    let mut cycles = Vec::with_capacity(segmentation.cycles.len());
    let mut cooldown: u8 = 0;
    let mut detection_sample = None;
    let mut calibration_end = None;

    for (index, cycle) in segmentation.cycles.iter().enumerate() {
        let valid = band.is_valid();
        let mut crossed = false;
        let mut crossing_phase = None;
        if valid {
            for i in cycle.start..cycle.end {
                let ph = segmentation.phase[i].expect("phase defined inside cycle");
                let bin = phase_bin(ph, det.bins);
                let mean = band.mean_at(bin);
                let sd = band.sd_at(bin);
                let covs = band.cov_at(bin);
                let mut mags = [0.0; STATE_COUNT];
                for s in 0..STATE_COUNT {
                    let (mag, sign) = alpha(states[i].0[s], mean[s], sd[s], det.band_k);
                    mags[s] = mag;
                    samples[i].alpha[s] = mag * sign as f64;
                }
                let value = phi(&mags, covs);
                samples[i].phi = Some(value);
                if value >= det.threshold_phi {
                    if !crossed {
                        crossed = true;
                        crossing_phase = Some(ph);
                    }
                    if detection_sample.is_none() {
                        detection_sample = Some(i);
                    }
                }
            }
        }

        let label = valid.then_some(if crossed {
            CycleLabel::Perturbed
        } else {
            CycleLabel::Unperturbed
        });
        let flagged = match policy {
            ExclusionPolicy::Detection => crossed,
            ExclusionPolicy::TruthWindow { onset, until } => {
                cycle.start <= until && cycle.end > onset
            }
            ExclusionPolicy::PushAll => false,
        };
        let mut pushed = false;
        if flagged {
            cooldown = 1;
        } else if cooldown > 0 {
            cooldown -= 1;
        } else if cycle.plausible {
            let matrix = gait::resample_cycle(&states, cycle, det.bins)?;
            band.push_cycle(matrix)?;
            pushed = true;
            if calibration_end.is_none() && band.is_valid() {
                calibration_end = Some(cycle.end);
            }
        }
        cycles.push(CycleRecord {
            index,
            start: cycle.start,
            end: cycle.end,
            plausible: cycle.plausible,
            label,
            crossing_phase,
            pushed,
        });
    }

    if let Some(d) = detection_sample {
        for s in samples.iter_mut().skip(d) {
            s.detected = true;
        }
    }
    let skipped_samples = segmentation.phase.iter().filter(|p| p.is_none()).count();

    Ok(TrialRun {
        trial_id: trial.trial_id.clone(),
        samples,
        cycles,
        detection_sample,
        calibration_end,
        skipped_samples,
        segmentation,
        band,
    })
}

/// Streaming detector: drives a [`DetectorSession`] sample by sample over
/// a recorded trial.
pub fn stream_trial(
    trial: &TrialRecording,
    config: &PipelineConfig,
    mode: RunMode,
) -> Result<TrialRun, DetectorError> {
    let (states, segmentation) = prepare(trial, config)?;
    let policy = resolve_policy(
        mode,
        trial.perturbation.as_ref(),
        &segmentation.cycles,
        config.detector.tp_window_cycles,
    )?;
    let mut session = DetectorSession::new(config.detector.clone(), trial.sample_rate, policy)?;
    let mut samples = Vec::with_capacity(states.len());
    let mut next_event = 0usize;
    for (i, state) in states.iter().enumerate() {
        let boundary = segmentation.events.get(next_event) == Some(&i);
        if boundary {
            next_event += 1;
        }
        samples.push(session.step(state, segmentation.phase[i], boundary));
    }
    Ok(TrialRun {
        trial_id: trial.trial_id.clone(),
        samples,
        cycles: session.cycles.clone(),
        detection_sample: session.detection_sample,
        calibration_end: session.calibration_end,
        skipped_samples: session.skipped_samples,
        segmentation,
        band: session.into_band(),
    })
}

/// Per-trial confusion counts and detection delay.
///
/// Counting unit is the post-calibration gait cycle, except that the
/// response window of a true perturbation collapses into a single unit:
/// a crossing inside it is the trial's true positive, its absence the
/// false negative, and cycles overlapping it are never false positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialClassification {
    pub true_pos: u32,
    pub false_pos: u32,
    pub true_neg: u32,
    pub false_neg: u32,
    /// Delay of the first in-window crossing, percent of the onset cycle.
    pub delay_pct: Option<f64>,
    pub first_window_crossing: Option<usize>,
    pub classified_cycles: usize,
}

impl TrialClassification {
    pub fn total_units(&self) -> u32 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn correct_units(&self) -> u32 {
        self.true_pos + self.true_neg
    }
}

fn cycle_has_crossing(phi: &[Option<f64>], cycle: &GaitCycle, threshold: f64) -> bool {
    phi[cycle.start..cycle.end]
        .iter()
        .any(|v| v.is_some_and(|x| x >= threshold))
}

/// Score one trial's deviation trace against its ground truth at a given
/// threshold. Pure in the trace, so a sweep can call it repeatedly.
pub fn classify_and_delay(
    phi: &[Option<f64>],
    cycles: &[GaitCycle],
    calibration_end: Option<usize>,
    truth: Option<&PerturbationLabel>,
    threshold: f64,
    tp_window_cycles: f64,
) -> Result<TrialClassification, DetectorError> {
    let mut out = TrialClassification {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
        delay_pct: None,
        first_window_crossing: None,
        classified_cycles: 0,
    };

    let classified: Vec<&GaitCycle> = match calibration_end {
        Some(ce) => cycles.iter().filter(|c| c.start >= ce).collect(),
        None => Vec::new(),
    };
    out.classified_cycles = classified.len();

    let window = match truth {
        Some(t) => {
            let onset_cycle = cycles
                .iter()
                .find(|c| c.contains(t.onset_sample))
                .ok_or(DetectorError::OnsetOutsideSegmentation {
                    onset: t.onset_sample,
                })?;
            let dur = onset_cycle.len();
            let until = t.onset_sample + (tp_window_cycles * dur as f64).round() as usize;
            let hi = until.min(phi.len().saturating_sub(1));
            let first = (t.onset_sample..=hi)
                .find(|&i| phi[i].is_some_and(|v| v >= threshold));
            match first {
                Some(i) => {
                    out.true_pos = 1;
                    out.first_window_crossing = Some(i);
                    out.delay_pct = Some(100.0 * (i - t.onset_sample) as f64 / dur as f64);
                }
                None => out.false_neg = 1,
            }
            Some((t.onset_sample, until))
        }
        None => None,
    };

    for cycle in classified {
        if let Some((onset, until)) = window {
            if cycle.start <= until && cycle.end > onset {
                continue; // inside the response window, covered by TP/FN
            }
        }
        if cycle_has_crossing(phi, cycle, threshold) {
            out.false_pos += 1;
        } else {
            out.true_neg += 1;
        }
    }

    Ok(out)
}
