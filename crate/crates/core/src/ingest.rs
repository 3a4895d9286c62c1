//! Trial CSV ingest, channel validation, and marker gap repair.
//!
//! A trial is a fixed-layout CSV (header below) carrying eight 3D markers,
//! two vertical ground reaction force channels, and optionally two
//! normalized whole-body angular momentum channels. Empty marker cells are
//! gaps; short gaps are repaired by polynomial interpolation before any
//! kinematics are computed. A perturbation ground-truth label travels in a
//! JSON sidecar, never in the CSV itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel for an absent marker coordinate.
pub const MISSING: f64 = f64::NAN;

/// True when a cell holds no measurement.
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

pub const MARKER_NAMES: [&str; 8] = [
    "rasis", "lasis", "rpsis", "lpsis", "rheel", "lheel", "rtoe", "ltoe",
];
pub const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];
/// 8 markers x 3 axes.
pub const MARKER_CHANNELS: usize = 24;

pub const AX_X: usize = 0;
pub const AX_Y: usize = 1;
pub const AX_Z: usize = 2;

/// Marker identities in canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Rasis,
    Lasis,
    Rpsis,
    Lpsis,
    Rheel,
    Lheel,
    Rtoe,
    Ltoe,
}

impl Marker {
    pub const ALL: [Marker; 8] = [
        Marker::Rasis,
        Marker::Lasis,
        Marker::Rpsis,
        Marker::Lpsis,
        Marker::Rheel,
        Marker::Lheel,
        Marker::Rtoe,
        Marker::Ltoe,
    ];

    pub fn index(self) -> usize {
        match self {
            Marker::Rasis => 0,
            Marker::Lasis => 1,
            Marker::Rpsis => 2,
            Marker::Lpsis => 3,
            Marker::Rheel => 4,
            Marker::Lheel => 5,
            Marker::Rtoe => 6,
            Marker::Ltoe => 7,
        }
    }

    pub fn name(self) -> &'static str {
        MARKER_NAMES[self.index()]
    }
}

/// Flat channel index for a marker axis.
pub fn channel_index(marker: Marker, axis: usize) -> usize {
    marker.index() * 3 + axis
}

/// One time sample of all eight markers. Coordinates may be [`MISSING`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerFrame {
    pub positions: [[f64; 3]; 8],
}

impl MarkerFrame {
    pub fn get(&self, marker: Marker) -> [f64; 3] {
        self.positions[marker.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Trip,
    Slip,
    Translation,
}

impl PerturbationKind {
    /// Belt kinds act through the right treadmill belt.
    pub fn is_belt(self) -> bool {
        matches!(self, PerturbationKind::Trip | PerturbationKind::Slip)
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::Trip => "trip",
            PerturbationKind::Slip => "slip",
            PerturbationKind::Translation => "translation",
        }
    }
}

/// Compass direction of a ground translation in the horizontal plane.
/// `N` is the walking direction (+x), `E` is the subject's right (-y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
    ];

    /// Unit vector (x anteroposterior, y mediolateral-left).
    pub fn unit(self) -> [f64; 2] {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Direction::N => [1.0, 0.0],
            Direction::NE => [d, -d],
            Direction::E => [0.0, -1.0],
            Direction::SE => [-d, -d],
            Direction::S => [-1.0, 0.0],
            Direction::SW => [-d, d],
            Direction::W => [0.0, 1.0],
            Direction::NW => [d, d],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::NE => "NE",
            Direction::E => "E",
            Direction::SE => "SE",
            Direction::S => "S",
            Direction::SW => "SW",
            Direction::W => "W",
            Direction::NW => "NW",
        }
    }
}

/// Ground-truth perturbation annotation, stored in a `.label.json` sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationLabel {
    pub onset_sample: usize,
    pub kind: PerturbationKind,
    pub direction: Option<Direction>,
    /// Meters for translations, m/s^2 for belt kinds.
    pub magnitude: f64,
}

/// A time-synchronized recording of one walking trial.
///
/// All channels share the frame count; marker channels are stored
/// column-major (24 channels of length `n_frames`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub trial_id: String,
    pub sample_rate: f64,
    pub markers: Vec<Vec<f64>>,
    pub grf_right_z: Vec<f64>,
    pub grf_left_z: Vec<f64>,
    pub wbam_sagittal: Option<Vec<f64>>,
    pub wbam_frontal: Option<Vec<f64>>,
    pub perturbation: Option<PerturbationLabel>,
}

impl TrialRecording {
    pub fn n_frames(&self) -> usize {
        self.grf_right_z.len()
    }

    pub fn marker_channel(&self, marker: Marker, axis: usize) -> &[f64] {
        &self.markers[channel_index(marker, axis)]
    }

    pub fn frame(&self, i: usize) -> MarkerFrame {
        let mut positions = [[0.0; 3]; 8];
        for (m, pos) in positions.iter_mut().enumerate() {
            for (a, c) in pos.iter_mut().enumerate() {
                *c = self.markers[m * 3 + a][i];
            }
        }
        MarkerFrame { positions }
    }

    pub fn has_wbam(&self) -> bool {
        self.wbam_sagittal.is_some() && self.wbam_frontal.is_some()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !self.sample_rate.is_finite() || self.sample_rate <= 0.0 {
            return Err(IngestError::InvalidSampleRate(self.sample_rate));
        }
        let n = self.n_frames();
        if n < 2 {
            return Err(IngestError::TooFewFrames(n));
        }
        if self.markers.len() != MARKER_CHANNELS {
            return Err(IngestError::ChannelCount(self.markers.len()));
        }
        let mut lens = vec![self.grf_left_z.len()];
        lens.extend(self.markers.iter().map(|c| c.len()));
        if let Some(w) = &self.wbam_sagittal {
            lens.push(w.len());
        }
        if let Some(w) = &self.wbam_frontal {
            lens.push(w.len());
        }
        if lens.iter().any(|&l| l != n) {
            return Err(IngestError::ChannelLengthMismatch);
        }
        if self.wbam_sagittal.is_some() != self.wbam_frontal.is_some() {
            return Err(IngestError::PartialWbam);
        }
        if let Some(label) = &self.perturbation {
            if label.onset_sample >= n {
                return Err(IngestError::OnsetOutOfRange {
                    onset: label.onset_sample,
                    frames: n,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: ground reaction force is not a finite number")]
    NonFiniteForce { row: usize, column: String },
    #[error("row {row}, column {column}: cannot parse cell")]
    BadCell { row: usize, column: String },
    #[error("row {row}: timestamp disagrees with sample rate")]
    TimestampMismatch { row: usize },
    #[error("trial has {0} frames, need at least 2")]
    TooFewFrames(usize),
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(f64),
    #[error("expected {MARKER_CHANNELS} marker channels, found {0}")]
    ChannelCount(usize),
    #[error("channel lengths differ")]
    ChannelLengthMismatch,
    #[error("only one of the two momentum channels is present")]
    PartialWbam,
    #[error("label onset {onset} outside trial of {frames} frames")]
    OnsetOutOfRange { onset: usize, frames: usize },
    #[error("series starts or ends with a missing sample")]
    GapAtBoundary,
    #[error("label sidecar: {0}")]
    BadLabel(String),
}

fn expected_header(with_wbam: bool) -> String {
    let mut cols = vec!["t".to_string()];
    for m in MARKER_NAMES {
        for a in AXIS_NAMES {
            cols.push(format!("{m}_{a}"));
        }
    }
    cols.push("grf_r_z".into());
    cols.push("grf_l_z".into());
    if with_wbam {
        cols.push("wbam_sag".into());
        cols.push("wbam_front".into());
    }
    cols.join(",")
}

fn header_column(idx: usize) -> String {
    expected_header(true)
        .split(',')
        .nth(idx)
        .unwrap_or("?")
        .to_string()
}

/// Parse a trial from CSV text. Empty marker cells become [`MISSING`];
/// everything else must be a finite number. The `t` column is only checked
/// for consistency with `sample_rate`.
pub fn parse_trial(csv_text: &str, sample_rate: f64) -> Result<TrialRecording, IngestError> {
    if !sample_rate.is_finite() || sample_rate <= 0.0 {
        return Err(IngestError::InvalidSampleRate(sample_rate));
    }
    let mut lines = csv_text.lines();
    let header = lines
        .next()
        .ok_or_else(|| IngestError::MalformedHeader("empty input".into()))?
        .trim_end_matches('\r');

    let with_wbam = if header == expected_header(false) {
        false
    } else if header == expected_header(true) {
        true
    } else {
        // Report the first column that deviates from the fixed layout.
        let got: Vec<&str> = header.split(',').collect();
        let want_full = expected_header(true);
        let want: Vec<&str> = want_full.split(',').collect();
        let detail = want
            .iter()
            .enumerate()
            .find(|(i, w)| got.get(*i) != Some(w))
            .map(|(i, w)| format!("expected column `{w}` at position {i}"))
            .unwrap_or_else(|| "unexpected trailing columns".to_string());
        return Err(IngestError::MalformedHeader(detail));
    };

    let n_cols = if with_wbam { 29 } else { 27 };
    let mut markers: Vec<Vec<f64>> = vec![Vec::new(); MARKER_CHANNELS];
    let mut grf_r = Vec::new();
    let mut grf_l = Vec::new();
    let mut wbam_sag = Vec::new();
    let mut wbam_front = Vec::new();

    for (row_idx, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = row_idx + 1; // 1-based data row for diagnostics
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(IngestError::RaggedRows {
                row,
                expected: n_cols,
                found: cells.len(),
            });
        }

        let t: f64 = cells[0]
            .parse()
            .map_err(|_| IngestError::BadCell {
                row,
                column: "t".into(),
            })?;
        let expected_t = (row - 1) as f64 / sample_rate;
        if !t.is_finite() || (t - expected_t).abs() > 0.5 / sample_rate {
            return Err(IngestError::TimestampMismatch { row });
        }

        for ch in 0..MARKER_CHANNELS {
            let cell = cells[1 + ch];
            if cell.is_empty() {
                markers[ch].push(MISSING);
            } else {
                let v: f64 = cell.parse().map_err(|_| IngestError::BadCell {
                    row,
                    column: header_column(1 + ch),
                })?;
                if !v.is_finite() {
                    return Err(IngestError::BadCell {
                        row,
                        column: header_column(1 + ch),
                    });
                }
                markers[ch].push(v);
            }
        }

        for (off, out) in [&mut grf_r, &mut grf_l].into_iter().enumerate() {
            let idx = 1 + MARKER_CHANNELS + off;
            let v: f64 = cells[idx].parse().map_err(|_| IngestError::NonFiniteForce {
                row,
                column: header_column(idx),
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteForce {
                    row,
                    column: header_column(idx),
                });
            }
            out.push(v);
        }

        if with_wbam {
            for off in 0..2 {
                let idx = 1 + MARKER_CHANNELS + 2 + off;
                let v: f64 = cells[idx].parse().map_err(|_| IngestError::BadCell {
                    row,
                    column: header_column(idx),
                })?;
                if !v.is_finite() {
                    return Err(IngestError::BadCell {
                        row,
                        column: header_column(idx),
                    });
                }
                if off == 0 {
                    wbam_sag.push(v);
                } else {
                    wbam_front.push(v);
                }
            }
        }
    }

    let trial = TrialRecording {
        trial_id: String::new(),
        sample_rate,
        markers,
        grf_right_z: grf_r,
        grf_left_z: grf_l,
        wbam_sagittal: with_wbam.then_some(wbam_sag),
        wbam_frontal: with_wbam.then_some(wbam_front),
        perturbation: None,
    };
    trial.validate()?;
    Ok(trial)
}

fn fmt_cell(v: f64) -> String {
    if is_missing(v) {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Serialize a trial back to the ingest CSV layout. Floats round-trip
/// exactly through [`parse_trial`].
pub fn write_trial(trial: &TrialRecording) -> String {
    let with_wbam = trial.has_wbam();
    let n = trial.n_frames();
    let mut out = String::with_capacity(n * 200);
    out.push_str(&expected_header(with_wbam));
    out.push('\n');
    for i in 0..n {
        let t = i as f64 / trial.sample_rate;
        out.push_str(&format!("{t}"));
        for ch in 0..MARKER_CHANNELS {
            out.push(',');
            out.push_str(&fmt_cell(trial.markers[ch][i]));
        }
        out.push(',');
        out.push_str(&format!("{}", trial.grf_right_z[i]));
        out.push(',');
        out.push_str(&format!("{}", trial.grf_left_z[i]));
        if with_wbam {
            out.push(',');
            out.push_str(&format!("{}", trial.wbam_sagittal.as_ref().unwrap()[i]));
            out.push(',');
            out.push_str(&format!("{}", trial.wbam_frontal.as_ref().unwrap()[i]));
        }
        out.push('\n');
    }
    out
}

/// A run of consecutive missing samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapSpan {
    pub start: usize,
    pub len: usize,
}

/// Gaps that could not be repaired, per channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapReport {
    pub oversized: Vec<(String, GapSpan)>,
    pub boundary: Vec<(String, GapSpan)>,
}

impl GapReport {
    pub fn is_clean(&self) -> bool {
        self.oversized.is_empty() && self.boundary.is_empty()
    }
}

/// Default repair limit in frames.
pub const DEFAULT_MAX_GAP: usize = 25;

fn lagrange_eval(pts: &[(f64, f64)], x: f64) -> f64 {
    let mut acc = 0.0;
    for (j, &(xj, yj)) in pts.iter().enumerate() {
        let mut term = yj;
        for (m, &(xm, _)) in pts.iter().enumerate() {
            if m != j {
                term *= (x - xm) / (xj - xm);
            }
        }
        acc += term;
    }
    acc
}

fn fill_gaps_core(
    series: &[f64],
    max_gap: usize,
) -> (Vec<f64>, Vec<GapSpan>, Vec<GapSpan>) {
    let n = series.len();
    let mut out = series.to_vec();
    let mut oversized = Vec::new();
    let mut boundary = Vec::new();

    let mut i = 0;
    while i < n {
        if !is_missing(series[i]) {
            i += 1;
            continue;
        }
        let g0 = i;
        while i < n && is_missing(series[i]) {
            i += 1;
        }
        let g1 = i - 1;
        let len = g1 - g0 + 1;
        let span = GapSpan { start: g0, len };
        if g0 == 0 || g1 == n - 1 {
            boundary.push(span);
            continue;
        }
        if len > max_gap {
            oversized.push(span);
            continue;
        }

        // Nearest known samples, up to two on each side, skipping other gaps.
        let mut left = Vec::new();
        let mut j = g0;
        while j > 0 && left.len() < 2 {
            j -= 1;
            if !is_missing(series[j]) {
                left.push((j as f64, series[j]));
            }
        }
        left.reverse();
        let mut right = Vec::new();
        let mut j = g1 + 1;
        while j < n && right.len() < 2 {
            if !is_missing(series[j]) {
                right.push((j as f64, series[j]));
            }
            j += 1;
        }

        if left.len() == 2 && right.len() == 2 {
            let pts = [left[0], left[1], right[0], right[1]];
            for k in g0..=g1 {
                out[k] = lagrange_eval(&pts, k as f64);
            }
        } else if !left.is_empty() && !right.is_empty() {
            let (x0, y0) = *left.last().unwrap();
            let (x1, y1) = right[0];
            for k in g0..=g1 {
                let w = (k as f64 - x0) / (x1 - x0);
                out[k] = y0 + w * (y1 - y0);
            }
        } else {
            // No anchor on one side beyond an unrepairable boundary run.
            oversized.push(span);
        }
    }
    (out, oversized, boundary)
}

/// Repair interior gaps of at most `max_gap` samples. Cubic interpolation
/// through the two nearest known samples on each side, falling back to
/// linear when fewer are available. Longer gaps are left untouched and
/// reported. Errors if the series starts or ends missing.
pub fn fill_gaps(series: &[f64], max_gap: usize) -> Result<(Vec<f64>, Vec<GapSpan>), IngestError> {
    let (filled, oversized, boundary) = fill_gaps_core(series, max_gap);
    if !boundary.is_empty() {
        return Err(IngestError::GapAtBoundary);
    }
    Ok((filled, oversized))
}

/// Repair every marker channel of a trial. Boundary and oversized gaps do
/// not abort ingestion; they are reported and the samples stay missing.
/// Downstream state assembly fails only if it actually needs one of them.
pub fn fill_trial_gaps(
    trial: &TrialRecording,
    max_gap: usize,
) -> (TrialRecording, GapReport) {
    let mut out = trial.clone();
    let mut report = GapReport::default();
    for ch in 0..MARKER_CHANNELS {
        let name = header_column(1 + ch);
        let (filled, oversized, boundary) = fill_gaps_core(&trial.markers[ch], max_gap);
        out.markers[ch] = filled;
        report
            .oversized
            .extend(oversized.into_iter().map(|s| (name.clone(), s)));
        report
            .boundary
            .extend(boundary.into_iter().map(|s| (name.clone(), s)));
    }
    (out, report)
}

/// Parse a `.label.json` sidecar.
pub fn parse_label(json_text: &str) -> Result<PerturbationLabel, IngestError> {
    serde_json::from_str(json_text).map_err(|e| IngestError::BadLabel(e.to_string()))
}

/// Serialize a perturbation label to the sidecar schema.
pub fn write_label(label: &PerturbationLabel) -> String {
    serde_json::to_string_pretty(label).expect("label serializes")
}
