//! Gait events and phase: heel strikes from vertical GRF, stride
//! segmentation, per-sample phase in percent, and phase-grid resampling of
//! state trajectories.

use thiserror::Error;

use crate::kinematics::{StateVector, STATE_COUNT};

/// Strides shorter or longer than this are kept for classification but
/// never feed the rolling statistics.
pub const MIN_CYCLE_S: f64 = 0.4;
pub const MAX_CYCLE_S: f64 = 2.5;

/// One gait cycle: right heel strike to the next right heel strike.
/// `end` is the sample index of the closing heel strike (exclusive as a
/// sample range, and simultaneously the start of the next cycle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitCycle {
    pub start: usize,
    pub end: usize,
    pub duration_s: f64,
    pub plausible: bool,
}

impl GaitCycle {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, sample: usize) -> bool {
        sample >= self.start && sample < self.end
    }
}

/// Segmentation of a trial into cycles plus per-sample phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub events: Vec<usize>,
    pub cycles: Vec<GaitCycle>,
    /// Phase in [0, 100) inside a cycle, `None` before the first and from
    /// the last heel strike onward.
    pub phase: Vec<Option<f64>>,
}

/// A stack of phase-resampled cycles (each `bins` rows by 16 states).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub bins: usize,
    pub cycles: Vec<Vec<[f64; STATE_COUNT]>>,
}

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("need at least 2 heel strikes, found {0}")]
    InsufficientEvents(usize),
    #[error("event index {0} outside trial of {1} frames")]
    EventOutOfRange(usize, usize),
    #[error("events must be strictly increasing")]
    UnorderedEvents,
    #[error("cycle [{start}, {end}) outside state sequence of {frames} frames")]
    OutOfRange {
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("need at least 2 phase bins, got {0}")]
    InvalidBins(usize),
    #[error("cycle span of {0} samples is too short to resample")]
    SpanTooShort(usize),
}

/// Heel strikes as upward threshold crossings of the vertical GRF, with a
/// refractory suppression window after each accepted event.
pub fn detect_heel_strikes(
    grf_z: &[f64],
    sample_rate: f64,
    threshold_n: f64,
    refractory_s: f64,
) -> Vec<usize> {
    let refractory = (refractory_s * sample_rate).round() as usize;
    let mut events = Vec::new();
    let mut last: Option<usize> = None;
    for i in 1..grf_z.len() {
        if grf_z[i] >= threshold_n && grf_z[i - 1] < threshold_n {
            if let Some(prev) = last {
                if i - prev < refractory {
                    continue;
                }
            }
            events.push(i);
            last = Some(i);
        }
    }
    events
}

/// Build cycles from consecutive heel strikes and assign each sample its
/// phase. Phase is 100 * (sample - start) / (end - start), resetting to 0
/// at every event.
pub fn segment_and_phase(
    events: &[usize],
    n_frames: usize,
    sample_rate: f64,
) -> Result<Segmentation, GaitError> {
    if events.len() < 2 {
        return Err(GaitError::InsufficientEvents(events.len()));
    }
    if events.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GaitError::UnorderedEvents);
    }
    if let Some(&last) = events.last() {
        if last >= n_frames {
            return Err(GaitError::EventOutOfRange(last, n_frames));
        }
    }

    let cycles: Vec<GaitCycle> = events
        .windows(2)
        .map(|w| {
            let duration_s = (w[1] - w[0]) as f64 / sample_rate;
            GaitCycle {
                start: w[0],
                end: w[1],
                duration_s,
                plausible: (MIN_CYCLE_S..=MAX_CYCLE_S).contains(&duration_s),
            }
        })
        .collect();

    let mut phase = vec![None; n_frames];
    for c in &cycles {
        let dur = (c.end - c.start) as f64;
        for i in c.start..c.end {
            phase[i] = Some(100.0 * (i - c.start) as f64 / dur);
        }
    }

    Ok(Segmentation {
        events: events.to_vec(),
        cycles,
        phase,
    })
}

/// Resample a closed cycle span (`start..=end` samples, so length
/// `duration + 1`) onto `bins` evenly spaced phases by linear
/// interpolation. Bin k sits at phase k * 100 / bins.
pub fn resample_span(
    span: &[StateVector],
    bins: usize,
) -> Result<Vec<[f64; STATE_COUNT]>, GaitError> {
    if bins < 2 {
        return Err(GaitError::InvalidBins(bins));
    }
    if span.len() < 2 {
        return Err(GaitError::SpanTooShort(span.len()));
    }
    let dur = (span.len() - 1) as f64;
    let mut grid = Vec::with_capacity(bins);
    for k in 0..bins {
        let pos = k as f64 * dur / bins as f64;
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let a = &span[i0].0;
        let b = &span[i0 + 1].0;
        let mut row = [0.0; STATE_COUNT];
        for s in 0..STATE_COUNT {
            row[s] = a[s] * (1.0 - frac) + b[s] * frac;
        }
        grid.push(row);
    }
    Ok(grid)
}

/// Resample one cycle out of a full state sequence.
pub fn resample_cycle(
    states: &[StateVector],
    cycle: &GaitCycle,
    bins: usize,
) -> Result<Vec<[f64; STATE_COUNT]>, GaitError> {
    if cycle.start >= cycle.end || cycle.end >= states.len() {
        return Err(GaitError::OutOfRange {
            start: cycle.start,
            end: cycle.end,
            frames: states.len(),
        });
    }
    resample_span(&states[cycle.start..=cycle.end], bins)
}

/// Resample every cycle of a segmentation onto a shared phase grid.
pub fn phase_grid(
    states: &[StateVector],
    cycles: &[GaitCycle],
    bins: usize,
) -> Result<PhaseGrid, GaitError> {
    let mut grid_cycles = Vec::with_capacity(cycles.len());
    for c in cycles {
        grid_cycles.push(resample_cycle(states, c, bins)?);
    }
    Ok(PhaseGrid {
        bins,
        cycles: grid_cycles,
    })
}
