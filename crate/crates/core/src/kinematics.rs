//! Local-frame kinematic states: COM estimate, relative positions, and
//! velocities, assembled into the 16-dimensional state vector the detector
//! tracks.
//!
//! Relative states live in two local frames so that slow global drift of
//! the subject on the treadmill cancels out: heel positions are expressed
//! about the global COM, and the COM itself about the horizontal midpoint
//! between the heels. Velocity states are derivatives of the global
//! positions by default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{is_missing, Marker, MarkerFrame, TrialRecording, AX_X, AX_Y, AX_Z};

pub const STATE_COUNT: usize = 16;

/// Canonical state ordering shared by every module: eight relative
/// positions, then eight velocities.
pub const STATE_NAMES: [&str; STATE_COUNT] = [
    "rheel_rel_com_x",
    "rheel_rel_com_y",
    "rheel_rel_com_z",
    "lheel_rel_com_x",
    "lheel_rel_com_y",
    "lheel_rel_com_z",
    "com_rel_midfeet_x",
    "com_rel_midfeet_y",
    "rheel_vel_x",
    "rheel_vel_y",
    "rheel_vel_z",
    "lheel_vel_x",
    "lheel_vel_y",
    "lheel_vel_z",
    "com_vel_x",
    "com_vel_y",
];

/// The 16 kinematic states at one time sample, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_COUNT]);

impl StateVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        STATE_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.0[i])
    }
}

/// Which positions the velocity states differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityFrame {
    #[default]
    Global,
    Relative,
}

/// Knobs for state assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateOptions {
    /// Centered moving-average width (odd samples) applied to positions
    /// before differentiation; 1 disables smoothing.
    pub smooth_window: usize,
    pub velocity_frame: VelocityFrame,
}

impl Default for StateOptions {
    fn default() -> Self {
        Self {
            smooth_window: 5,
            velocity_frame: VelocityFrame::Global,
        }
    }
}

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("marker {marker} missing at frame {frame}")]
    MissingMarker { marker: &'static str, frame: usize },
    #[error("series of {0} samples is too short to differentiate")]
    TooShort(usize),
    #[error("smoothing window must be odd and >= 1, got {0}")]
    InvalidWindow(usize),
}

const PELVIS: [Marker; 4] = [Marker::Rasis, Marker::Lasis, Marker::Rpsis, Marker::Lpsis];

/// Global COM estimate: arithmetic mean of the four pelvic markers.
pub fn compute_com(frame: &MarkerFrame) -> Result<[f64; 3], KinematicsError> {
    let mut com = [0.0; 3];
    for m in PELVIS {
        let p = frame.get(m);
        for (axis, c) in com.iter_mut().enumerate() {
            if is_missing(p[axis]) {
                return Err(KinematicsError::MissingMarker {
                    marker: m.name(),
                    frame: 0,
                });
            }
            *c += p[axis];
        }
    }
    for c in com.iter_mut() {
        *c *= 0.25;
    }
    Ok(com)
}

/// The eight relative position states of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePositions {
    /// Heel minus COM, all three axes.
    pub rheel_rel_com: [f64; 3],
    pub lheel_rel_com: [f64; 3],
    /// COM minus the horizontal midpoint between the heels (x, y only; the
    /// vertical component is deliberately omitted).
    pub com_rel_midfeet: [f64; 2],
}

/// Relative position states for one frame given its COM.
pub fn relative_states(
    frame: &MarkerFrame,
    com: [f64; 3],
) -> Result<RelativePositions, KinematicsError> {
    let rheel = frame.get(Marker::Rheel);
    let lheel = frame.get(Marker::Lheel);
    for (m, p) in [(Marker::Rheel, rheel), (Marker::Lheel, lheel)] {
        if p.iter().any(|&v| is_missing(v)) {
            return Err(KinematicsError::MissingMarker {
                marker: m.name(),
                frame: 0,
            });
        }
    }
    let rheel_rel_com = [rheel[0] - com[0], rheel[1] - com[1], rheel[2] - com[2]];
    let lheel_rel_com = [lheel[0] - com[0], lheel[1] - com[1], lheel[2] - com[2]];
    let midfeet = [(rheel[0] + lheel[0]) * 0.5, (rheel[1] + lheel[1]) * 0.5];
    let com_rel_midfeet = [com[0] - midfeet[0], com[1] - midfeet[1]];
    Ok(RelativePositions {
        rheel_rel_com,
        lheel_rel_com,
        com_rel_midfeet,
    })
}

/// Centered moving average with symmetric shrink at the edges, so linear
/// trends pass through unchanged everywhere.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, KinematicsError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(KinematicsError::InvalidWindow(window));
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let n = series.len();
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let h = half.min(i).min(n - 1 - i);
        let lo = i - h;
        let hi = i + h;
        let sum: f64 = series[lo..=hi].iter().sum();
        out.push(sum / (hi - lo + 1) as f64);
    }
    Ok(out)
}

/// Numerical derivative in per-second units: central difference on the
/// interior, one-sided at the ends, after optional moving-average
/// smoothing of the position series.
pub fn differentiate(
    series: &[f64],
    sample_rate: f64,
    smooth_window: usize,
) -> Result<Vec<f64>, KinematicsError> {
    let n = series.len();
    if n < 3 {
        return Err(KinematicsError::TooShort(n));
    }
    let s = moving_average(series, smooth_window)?;
    let mut v = Vec::with_capacity(n);
    v.push((s[1] - s[0]) * sample_rate);
    for i in 1..n - 1 {
        v.push((s[i + 1] - s[i - 1]) * sample_rate * 0.5);
    }
    v.push((s[n - 1] - s[n - 2]) * sample_rate);
    Ok(v)
}

fn require_finite(
    channel: &[f64],
    marker: Marker,
) -> Result<(), KinematicsError> {
    if let Some(frame) = channel.iter().position(|&v| is_missing(v)) {
        return Err(KinematicsError::MissingMarker {
            marker: marker.name(),
            frame,
        });
    }
    Ok(())
}

/// Assemble one [`StateVector`] per frame for a whole trial. Marker gaps on
/// the pelvis and heel channels must already be repaired; toe channels are
/// not consulted.
pub fn build_state_sequence(
    trial: &TrialRecording,
    options: &StateOptions,
) -> Result<Vec<StateVector>, KinematicsError> {
    let n = trial.n_frames();
    if n < 3 {
        return Err(KinematicsError::TooShort(n));
    }
    for m in PELVIS.into_iter().chain([Marker::Rheel, Marker::Lheel]) {
        for axis in [AX_X, AX_Y, AX_Z] {
            require_finite(trial.marker_channel(m, axis), m)?;
        }
    }

    // Global COM per axis from the pelvic markers.
    let mut com = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (axis, out) in com.iter_mut().enumerate() {
        for m in PELVIS {
            let ch = trial.marker_channel(m, axis);
            for (o, &v) in out.iter_mut().zip(ch) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= 0.25;
        }
    }

    let rheel: Vec<&[f64]> = (0..3).map(|a| trial.marker_channel(Marker::Rheel, a)).collect();
    let lheel: Vec<&[f64]> = (0..3).map(|a| trial.marker_channel(Marker::Lheel, a)).collect();

    // Relative position series.
    let mut rel_r = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut rel_l = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut rel_c = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for axis in 0..3 {
            rel_r[axis][i] = rheel[axis][i] - com[axis][i];
            rel_l[axis][i] = lheel[axis][i] - com[axis][i];
        }
        for axis in 0..2 {
            let mid = (rheel[axis][i] + lheel[axis][i]) * 0.5;
            rel_c[axis][i] = com[axis][i] - mid;
        }
    }

    let rate = trial.sample_rate;
    let w = options.smooth_window;
    let diff = |s: &[f64]| differentiate(s, rate, w);

    type AxisSeries = Vec<Vec<f64>>;
    let (vr, vl, vc): (AxisSeries, AxisSeries, AxisSeries) =
        match options.velocity_frame {
            VelocityFrame::Global => (
                rheel.iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
                lheel.iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
                com[..2].iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
            ),
            VelocityFrame::Relative => (
                rel_r.iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
                rel_l.iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
                rel_c.iter().map(|s| diff(s)).collect::<Result<_, _>>()?,
            ),
        };

    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        states.push(StateVector([
            rel_r[0][i],
            rel_r[1][i],
            rel_r[2][i],
            rel_l[0][i],
            rel_l[1][i],
            rel_l[2][i],
            rel_c[0][i],
            rel_c[1][i],
            vr[0][i],
            vr[1][i],
            vr[2][i],
            vl[0][i],
            vl[1][i],
            vl[2][i],
            vc[0][i],
            vc[1][i],
        ]));
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{channel_index, MARKER_CHANNELS};
    use proptest::prelude::*;

    fn frame_with(positions: [[f64; 3]; 8]) -> MarkerFrame {
        MarkerFrame { positions }
    }

    fn pelvic_frame(rasis: [f64; 3], lasis: [f64; 3], rpsis: [f64; 3], lpsis: [f64; 3]) -> MarkerFrame {
        frame_with([rasis, lasis, rpsis, lpsis, [0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]])
    }

    #[test]
    fn com_of_symmetric_quad_is_center() {
        let f = pelvic_frame(
            [0.1, 0.05, 1.0],
            [0.1, -0.05, 1.0],
            [-0.1, 0.05, 1.0],
            [-0.1, -0.05, 1.0],
        );
        assert_eq!(compute_com(&f).unwrap(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn com_of_identical_markers_is_that_point() {
        let p = [0.3, -0.2, 0.97];
        let f = pelvic_frame(p, p, p, p);
        assert_eq!(compute_com(&f).unwrap(), p);
    }

    #[test]
    fn com_hand_mean() {
        let f = pelvic_frame(
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        );
        assert_eq!(compute_com(&f).unwrap(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn com_with_missing_pelvic_marker_errors() {
        let f = pelvic_frame(
            [1.0, 0.0, 0.0],
            [0.0, crate::ingest::MISSING, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        );
        assert!(matches!(
            compute_com(&f),
            Err(KinematicsError::MissingMarker { marker: "lasis", .. })
        ));
    }

    #[test]
    fn heel_relative_to_com_is_plain_subtraction() {
        let mut positions = [[0.0; 3]; 8];
        positions[Marker::Rheel.index()] = [0.3, 0.1, 0.05];
        positions[Marker::Lheel.index()] = [0.0, -0.1, 0.05];
        let f = frame_with(positions);
        let rel = relative_states(&f, [0.2, 0.0, 1.0]).unwrap();
        let got = rel.rheel_rel_com;
        assert!((got[0] - 0.1).abs() < 1e-15);
        assert!((got[1] - 0.1).abs() < 1e-15);
        assert!((got[2] + 0.95).abs() < 1e-15);
    }

    #[test]
    fn com_relative_to_midfeet_hand_value() {
        let mut positions = [[0.0; 3]; 8];
        positions[Marker::Rheel.index()] = [0.4, 0.1, 0.05];
        positions[Marker::Lheel.index()] = [0.0, -0.1, 0.05];
        let f = frame_with(positions);
        let rel = relative_states(&f, [0.25, 0.02, 1.0]).unwrap();
        // midpoint (0.2, 0.0); com - midpoint = (0.05, 0.02)
        assert!((rel.com_rel_midfeet[0] - 0.05).abs() < 1e-15);
        assert!((rel.com_rel_midfeet[1] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn com_at_midfeet_gives_zero() {
        let mut positions = [[0.0; 3]; 8];
        positions[Marker::Rheel.index()] = [0.4, 0.1, 0.05];
        positions[Marker::Lheel.index()] = [0.0, -0.1, 0.05];
        let f = frame_with(positions);
        let rel = relative_states(&f, [0.2, 0.0, 1.0]).unwrap();
        assert_eq!(rel.com_rel_midfeet, [0.0, 0.0]);
    }

    #[test]
    fn derivative_of_linear_signal_is_exact() {
        let series: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let v = differentiate(&series, 100.0, 1).unwrap();
        for &vi in &v[1..v.len() - 1] {
            assert!((vi - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let series = vec![3.7; 20];
        let v = differentiate(&series, 100.0, 5).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn central_difference_is_exact_for_quadratic() {
        // x(t) = t^2 at 100 Hz: (x(t+h) - x(t-h)) / 2h = 2t exactly.
        let rate = 100.0;
        let series: Vec<f64> = (0..200).map(|i| (i as f64 / rate).powi(2)).collect();
        let v = differentiate(&series, rate, 1).unwrap();
        for i in 1..series.len() - 1 {
            let t = i as f64 / rate;
            assert!((v[i] - 2.0 * t).abs() < 1e-9, "i={i} v={} want {}", v[i], 2.0 * t);
        }
    }

    #[test]
    fn too_short_series_errors() {
        assert!(matches!(
            differentiate(&[1.0, 2.0], 100.0, 1),
            Err(KinematicsError::TooShort(2))
        ));
    }

    #[test]
    fn even_window_errors() {
        assert!(matches!(
            moving_average(&[1.0, 2.0, 3.0], 2),
            Err(KinematicsError::InvalidWindow(2))
        ));
    }

    fn constant_trial(n: usize) -> TrialRecording {
        let mut markers = Vec::with_capacity(MARKER_CHANNELS);
        for ch in 0..MARKER_CHANNELS {
            markers.push(vec![ch as f64 * 0.05; n]);
        }
        TrialRecording {
            trial_id: "test".into(),
            sample_rate: 100.0,
            markers,
            grf_right_z: vec![700.0; n],
            grf_left_z: vec![650.0; n],
            wbam_sagittal: None,
            wbam_frontal: None,
            perturbation: None,
        }
    }

    #[test]
    fn stationary_subject_has_zero_velocities() {
        let trial = constant_trial(30);
        let states = build_state_sequence(&trial, &StateOptions::default()).unwrap();
        assert_eq!(states.len(), 30);
        for s in &states {
            for &v in &s.0[8..16] {
                assert!(v.abs() < 1e-9);
            }
        }
        // Position states constant across frames.
        for s in &states[1..] {
            assert_eq!(s.0[..8], states[0].0[..8]);
        }
    }

    #[test]
    fn rigid_translation_leaves_relative_states_and_sets_velocity() {
        // Every marker advances +0.01 m/frame in x at 100 Hz => 1.0 m/s.
        let mut trial = constant_trial(40);
        for m in 0..8 {
            let ch = m * 3; // x channel
            for (i, v) in trial.markers[ch].iter_mut().enumerate() {
                *v += 0.01 * i as f64;
            }
        }
        let states = build_state_sequence(&trial, &StateOptions::default()).unwrap();
        let baseline = build_state_sequence(&constant_trial(40), &StateOptions::default()).unwrap();
        for (s, b) in states.iter().zip(&baseline) {
            for k in 0..8 {
                assert!((s.0[k] - b.0[k]).abs() < 1e-12, "state {k}");
            }
        }
        // Interior samples: all x velocities 1.0, y/z velocities 0.
        for s in &states[3..37] {
            assert!((s.get("rheel_vel_x").unwrap() - 1.0).abs() < 1e-9);
            assert!((s.get("lheel_vel_x").unwrap() - 1.0).abs() < 1e-9);
            assert!((s.get("com_vel_x").unwrap() - 1.0).abs() < 1e-9);
            assert_eq!(s.get("rheel_vel_y").unwrap(), 0.0);
            assert_eq!(s.get("lheel_vel_z").unwrap(), 0.0);
        }
    }

    #[test]
    fn state_sequence_shape() {
        let trial = constant_trial(17);
        let states = build_state_sequence(&trial, &StateOptions::default()).unwrap();
        assert_eq!(states.len(), trial.n_frames());
        assert_eq!(states[0].0.len(), STATE_COUNT);
        assert_eq!(STATE_NAMES.len(), STATE_COUNT);
    }

    #[test]
    fn missing_heel_after_fill_errors_with_frame() {
        let mut trial = constant_trial(10);
        trial.markers[channel_index(Marker::Rheel, 2)][4] = crate::ingest::MISSING;
        match build_state_sequence(&trial, &StateOptions::default()) {
            Err(KinematicsError::MissingMarker { marker, frame }) => {
                assert_eq!(marker, "rheel");
                assert_eq!(frame, 4);
            }
            other => panic!("expected MissingMarker, got {other:?}"),
        }
    }

    #[test]
    fn relative_velocity_frame_is_drift_blind() {
        let mut trial = constant_trial(40);
        for m in 0..8 {
            let ch = m * 3;
            for (i, v) in trial.markers[ch].iter_mut().enumerate() {
                *v += 0.01 * i as f64;
            }
        }
        let opts = StateOptions {
            smooth_window: 1,
            velocity_frame: VelocityFrame::Relative,
        };
        let states = build_state_sequence(&trial, &opts).unwrap();
        for s in &states {
            for &v in &s.0[8..16] {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn constant_offset_never_changes_relative_states(
            dx in -50.0f64..50.0,
            dy in -50.0f64..50.0,
            dz in -50.0f64..50.0,
        ) {
            let base = constant_trial(20);
            let mut shifted = base.clone();
            for m in 0..8 {
                for (axis, d) in [dx, dy, dz].into_iter().enumerate() {
                    for v in shifted.markers[m * 3 + axis].iter_mut() {
                        *v += d;
                    }
                }
            }
            let a = build_state_sequence(&base, &StateOptions::default()).unwrap();
            let b = build_state_sequence(&shifted, &StateOptions::default()).unwrap();
            for (sa, sb) in a.iter().zip(&b) {
                for k in 0..8 {
                    prop_assert!((sa.0[k] - sb.0[k]).abs() < 1e-12);
                }
                for k in 8..16 {
                    // Constant offset adds nothing to any velocity.
                    prop_assert!((sa.0[k] - sb.0[k]).abs() < 1e-9);
                }
            }
        }
    }
}
