//! Benchmark detector: a fixed sigma band on precomputed whole-body
//! angular momentum channels. The band is fitted on a handful of steady
//! cycles preceding the evaluation region; detection fires the first time
//! either plane leaves it.

use thiserror::Error;

use crate::gait::GaitCycle;

/// Allowed history window, cycles.
pub const MIN_HISTORY_CYCLES: usize = 3;
pub const MAX_HISTORY_CYCLES: usize = 5;
/// Default sigma multiplier.
pub const DEFAULT_K: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelBand {
    pub mean: f64,
    pub sd: f64,
}

impl ChannelBand {
    /// Strictly outside the band; a zero-sigma band has zero width, so any
    /// deviation from the mean triggers.
    pub fn exceeds(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() > k * self.sd
    }
}

/// Fitted bands for the two momentum planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbamBand {
    pub sagittal: ChannelBand,
    pub frontal: ChannelBand,
    pub history_cycles: usize,
    pub k: f64,
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need {want} history cycles, only {got} available")]
    InsufficientHistory { got: usize, want: usize },
    #[error("history must span {MIN_HISTORY_CYCLES}-{MAX_HISTORY_CYCLES} cycles, got {0}")]
    InvalidHistoryCount(usize),
    #[error("cycle [{start}, {end}) outside channel of {len} samples")]
    CycleOutOfRange { start: usize, end: usize, len: usize },
}

/// Mean and population sigma over the concatenated samples of the last
/// `n_cycles` of `cycles`.
pub fn fit_channel(
    series: &[f64],
    cycles: &[GaitCycle],
    n_cycles: usize,
) -> Result<ChannelBand, BaselineError> {
    if !(MIN_HISTORY_CYCLES..=MAX_HISTORY_CYCLES).contains(&n_cycles) {
        return Err(BaselineError::InvalidHistoryCount(n_cycles));
    }
    if cycles.len() < n_cycles {
        return Err(BaselineError::InsufficientHistory {
            got: cycles.len(),
            want: n_cycles,
        });
    }
    let window = &cycles[cycles.len() - n_cycles..];
    let mut count = 0usize;
    let mut sum = 0.0;
    for c in window {
        if c.end > series.len() || c.start >= c.end {
            return Err(BaselineError::CycleOutOfRange {
                start: c.start,
                end: c.end,
                len: series.len(),
            });
        }
        for &v in &series[c.start..c.end] {
            sum += v;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    for c in window {
        for &v in &series[c.start..c.end] {
            let d = v - mean;
            ss += d * d;
        }
    }
    Ok(ChannelBand {
        mean,
        sd: (ss / count as f64).sqrt(),
    })
}

/// Fit both planes over the same pre-onset cycles.
pub fn fit_band(
    sagittal: &[f64],
    frontal: &[f64],
    cycles: &[GaitCycle],
    n_cycles: usize,
    k: f64,
) -> Result<WbamBand, BaselineError> {
    Ok(WbamBand {
        sagittal: fit_channel(sagittal, cycles, n_cycles)?,
        frontal: fit_channel(frontal, cycles, n_cycles)?,
        history_cycles: n_cycles,
        k,
    })
}

/// First sample at or after `from_sample` where one channel leaves its
/// band.
pub fn detect_channel(
    series: &[f64],
    band: &ChannelBand,
    k: f64,
    from_sample: usize,
) -> Option<usize> {
    (from_sample..series.len()).find(|&i| band.exceeds(series[i], k))
}

/// First sample at or after `from_sample` where either plane leaves its
/// band.
pub fn detect_wbam(
    sagittal: &[f64],
    frontal: &[f64],
    band: &WbamBand,
    from_sample: usize,
) -> Option<usize> {
    let n = sagittal.len().min(frontal.len());
    (from_sample..n).find(|&i| {
        band.sagittal.exceeds(sagittal[i], band.k) || band.frontal.exceeds(frontal[i], band.k)
    })
}

/// Binary violation trace for downstream cycle scoring: `None` before
/// `from_sample`, then 1.0 where either plane is outside its band and 0.0
/// inside. Thresholding it at any value in (0, 1] reproduces the
/// detector's crossings.
pub fn exceedance_trace(
    sagittal: &[f64],
    frontal: &[f64],
    band: &WbamBand,
    from_sample: usize,
) -> Vec<Option<f64>> {
    let n = sagittal.len().min(frontal.len());
    (0..n)
        .map(|i| {
            if i < from_sample {
                None
            } else {
                let out = band.sagittal.exceeds(sagittal[i], band.k)
                    || band.frontal.exceeds(frontal[i], band.k);
                Some(if out { 1.0 } else { 0.0 })
            }
        })
        .collect()
}
