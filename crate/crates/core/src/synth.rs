//! Deterministic synthetic treadmill gait with labeled perturbations.
//!
//! Trials come from a periodic kinematic template in the treadmill frame:
//! pelvic markers oscillate about a fixed point, heels ride the belt
//! backward through stance and swing forward along a smooth return path,
//! and vertical GRF is a smoothed rectangular pulse spanning stance.
//! Perturbations warp the template from a known onset sample — belt kinds
//! add a velocity pulse to the right heel while it is in stance, ground
//! translations displace both feet immediately with the pelvis following
//! through a short lag — so every trial carries exact ground truth.
//! Identical parameters and seed reproduce a trial byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    channel_index, Direction, Marker, PerturbationKind, PerturbationLabel, TrialRecording,
    AX_X, AX_Y, AX_Z, MARKER_CHANNELS,
};

/// Stance occupies this fraction of the stride for each foot.
pub const STANCE_FRAC: f64 = 0.62;
/// Rate at which the belt returns to speed after a pulse, m/s^2. Chosen so
/// the mechanical disturbance dies out within the following stride.
pub const BELT_RECOVERY: f64 = 3.0;
/// First-order lag between foot displacement and the pelvis response, s.
const COM_LAG_S: f64 = 0.22;
/// Fraction of the belt-driven heel displacement the pelvis follows.
const BELT_COM_COUPLING: f64 = 0.45;
/// Vertical pelvis drop per m/s of imposed foot speed, m. Limb flexion
/// under a disturbed foot briefly lowers the body.
const DIP_GAIN: f64 = 0.03;
/// The dip is a reflex-scale response, faster than the horizontal lag.
const DIP_LAG_S: f64 = 0.1;

const PELVIS_HEIGHT: f64 = 0.95;
const HEEL_HEIGHT: f64 = 0.045;
const SWING_LIFT: f64 = 0.08;
const HEEL_Y_WOBBLE: f64 = 0.025;
const PELVIS_OSC_X: f64 = 0.012;
const PELVIS_SWAY_Y: f64 = 0.03;
const PELVIS_OSC_Z: f64 = 0.014;
const BODY_WEIGHT_N: f64 = 716.0;
const GRF_RAMP_FRAC: f64 = 0.05;
const WBAM_SAG_AMP: f64 = 0.018;
const WBAM_FRONT_AMP: f64 = 0.02;

/// Pelvic marker offsets from the pelvis center (x, y, z).
const PELVIS_OFFSETS: [(Marker, [f64; 3]); 4] = [
    (Marker::Rasis, [0.09, -0.12, 0.0]),
    (Marker::Lasis, [0.09, 0.12, 0.0]),
    (Marker::Rpsis, [-0.09, -0.05, 0.0]),
    (Marker::Lpsis, [-0.09, 0.05, 0.0]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitModelParams {
    /// Treadmill belt speed, m/s.
    pub walking_speed: f64,
    /// Stride (right heel strike to right heel strike), s.
    pub stride_duration: f64,
    pub sample_rate: f64,
    /// Lateral distance between the heels, m.
    pub step_width: f64,
    /// White Gaussian noise added to every marker coordinate, m.
    pub noise_sd: f64,
    pub seed: u64,
    pub trial_duration_s: f64,
}

impl Default for GaitModelParams {
    fn default() -> Self {
        Self {
            walking_speed: 1.25,
            stride_duration: 1.0,
            sample_rate: 100.0,
            step_width: 0.2,
            noise_sd: 0.003,
            seed: 42,
            trial_duration_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Stride index of the onset; must leave room for calibration.
    pub onset_stride: usize,
    /// Onset position within that stride, percent of the gait cycle.
    pub onset_phase: f64,
    /// m/s^2 for belt kinds, meters for translations.
    pub magnitude: f64,
    /// Belt pulse length, or translation ramp time, s.
    pub duration_s: f64,
    /// Horizontal direction; translations only.
    pub direction: Option<Direction>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            kind: PerturbationKind::Trip,
            onset_stride: 12,
            onset_phase: 25.0,
            magnitude: 3.0,
            duration_s: 0.5,
            direction: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid gait parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(&'static str),
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn smoothstep01(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Treadmill-frame heel x through one stride: backward at belt speed in
/// stance, cubic-Hermite forward return in swing with matched endpoint
/// velocities.
fn heel_x(p: f64, speed: f64, stride: f64) -> f64 {
    let travel = speed * stride * STANCE_FRAC;
    let x_td = travel * 0.5;
    if p < STANCE_FRAC {
        x_td - speed * stride * p
    } else {
        let u = (p - STANCE_FRAC) / (1.0 - STANCE_FRAC);
        let x_lo = x_td - travel;
        let m = -speed * stride * (1.0 - STANCE_FRAC);
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * x_lo + h10 * m + h01 * x_td + h11 * m
    }
}

fn heel_z(p: f64) -> f64 {
    if p < STANCE_FRAC {
        HEEL_HEIGHT
    } else {
        let u = (p - STANCE_FRAC) / (1.0 - STANCE_FRAC);
        HEEL_HEIGHT + SWING_LIFT * (std::f64::consts::PI * u).sin().powi(2)
    }
}

fn grf_pulse(p: f64) -> f64 {
    let r = GRF_RAMP_FRAC;
    if !(0.0..STANCE_FRAC).contains(&p) {
        0.0
    } else if p < r {
        BODY_WEIGHT_N * (std::f64::consts::FRAC_PI_2 * p / r).sin().powi(2)
    } else if p > STANCE_FRAC - r {
        let q = (STANCE_FRAC - p) / r;
        BODY_WEIGHT_N * (std::f64::consts::FRAC_PI_2 * q).sin().powi(2)
    } else {
        BODY_WEIGHT_N
    }
}

/// Right-belt surface velocity offset from steady speed, in heel-motion
/// sign convention: positive slows the backward stance drift (trip),
/// negative speeds it up (slip). Zero for translations.
pub fn belt_delta_velocity(
    kind: PerturbationKind,
    magnitude: f64,
    duration_s: f64,
    tau: f64,
) -> f64 {
    let sign = match kind {
        PerturbationKind::Trip => 1.0,
        PerturbationKind::Slip => -1.0,
        PerturbationKind::Translation => return 0.0,
    };
    if tau < 0.0 {
        return 0.0;
    }
    if tau < duration_s {
        sign * magnitude * tau
    } else {
        sign * (magnitude * duration_s - BELT_RECOVERY * (tau - duration_s)).max(0.0)
    }
}

/// Closed-form time integral of [`belt_delta_velocity`] assuming
/// uninterrupted belt contact.
pub fn belt_delta_displacement(
    kind: PerturbationKind,
    magnitude: f64,
    duration_s: f64,
    tau: f64,
) -> f64 {
    let sign = match kind {
        PerturbationKind::Trip => 1.0,
        PerturbationKind::Slip => -1.0,
        PerturbationKind::Translation => return 0.0,
    };
    if tau <= 0.0 {
        return 0.0;
    }
    let d = duration_s;
    let a = magnitude;
    let pulse_area = 0.5 * a * d * d;
    if tau <= d {
        return sign * 0.5 * a * tau * tau;
    }
    let t_rec = a * d / BELT_RECOVERY;
    let tr = (tau - d).min(t_rec);
    sign * (pulse_area + a * d * tr - 0.5 * BELT_RECOVERY * tr * tr)
}

fn validate_params(params: &GaitModelParams) -> Result<(), SynthError> {
    let positive = [
        params.walking_speed,
        params.stride_duration,
        params.sample_rate,
        params.step_width,
        params.trial_duration_s,
    ];
    if positive.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(SynthError::InvalidParams("all parameters must be positive"));
    }
    if !params.noise_sd.is_finite() || params.noise_sd < 0.0 {
        return Err(SynthError::InvalidParams("noise_sd must be >= 0"));
    }
    if params.trial_duration_s * params.sample_rate < 3.0 {
        return Err(SynthError::InvalidParams("trial too short"));
    }
    Ok(())
}

fn validate_spec(
    spec: &PerturbationSpec,
    params: &GaitModelParams,
    n_frames: usize,
) -> Result<usize, SynthError> {
    if !spec.magnitude.is_finite() || spec.magnitude <= 0.0 {
        return Err(SynthError::InvalidSpec("magnitude must be positive"));
    }
    if !spec.duration_s.is_finite() || spec.duration_s <= 0.0 {
        return Err(SynthError::InvalidSpec("duration_s must be positive"));
    }
    if !(0.0..100.0).contains(&spec.onset_phase) {
        return Err(SynthError::InvalidSpec("onset_phase must be in [0, 100)"));
    }
    if spec.onset_stride < 11 {
        return Err(SynthError::InvalidSpec(
            "onset_stride must be >= 11 so band calibration completes first",
        ));
    }
    match spec.kind {
        PerturbationKind::Trip | PerturbationKind::Slip => {
            if spec.direction.is_some() {
                return Err(SynthError::InvalidSpec(
                    "belt perturbations have no direction",
                ));
            }
            if spec.onset_phase / 100.0 >= STANCE_FRAC {
                return Err(SynthError::InvalidSpec(
                    "belt perturbations require right-foot stance contact at onset",
                ));
            }
        }
        PerturbationKind::Translation => {
            if spec.direction.is_none() {
                return Err(SynthError::InvalidSpec("translation requires a direction"));
            }
        }
    }
    let spc = params.stride_duration * params.sample_rate;
    let onset = ((spec.onset_stride as f64 + spec.onset_phase / 100.0) * spc).round() as usize;
    if onset + (2.0 * spc) as usize >= n_frames {
        return Err(SynthError::InvalidSpec(
            "trial too short for the requested onset",
        ));
    }
    Ok(onset)
}

/// Generate one trial. The returned recording carries its ground-truth
/// label when a perturbation spec is given.
pub fn generate_trial(
    params: &GaitModelParams,
    spec: Option<&PerturbationSpec>,
) -> Result<TrialRecording, SynthError> {
    validate_params(params)?;
    let rate = params.sample_rate;
    let dt = 1.0 / rate;
    let stride = params.stride_duration;
    let n = (params.trial_duration_s * rate).round() as usize;
    let onset = match spec {
        Some(s) => Some(validate_spec(s, params, n)?),
        None => None,
    };

    let mut markers = vec![vec![0.0; n]; MARKER_CHANNELS];
    let mut grf_r = vec![0.0; n];
    let mut grf_l = vec![0.0; n];
    let mut wbam_sag = vec![0.0; n];
    let mut wbam_front = vec![0.0; n];

    let tau_pi = 2.0 * std::f64::consts::PI;
    let half_w = params.step_width * 0.5;

    for i in 0..n {
        let t = i as f64 / rate;
        let p = frac(t / stride);
        let pl = frac(p + 0.5);

        let pelvis = [
            PELVIS_OSC_X * (2.0 * tau_pi * p + 0.4).sin(),
            -PELVIS_SWAY_Y * (tau_pi * (p - 0.05)).sin(),
            PELVIS_HEIGHT + PELVIS_OSC_Z * (2.0 * tau_pi * p - 0.3).cos(),
        ];
        for (m, off) in PELVIS_OFFSETS {
            for a in 0..3 {
                markers[channel_index(m, a)][i] = pelvis[a] + off[a];
            }
        }

        let rheel = [
            heel_x(p, params.walking_speed, stride),
            -half_w - HEEL_Y_WOBBLE * (tau_pi * p).cos(),
            heel_z(p),
        ];
        let lheel = [
            heel_x(pl, params.walking_speed, stride),
            half_w + HEEL_Y_WOBBLE * (tau_pi * pl).cos(),
            heel_z(pl),
        ];
        for a in 0..3 {
            markers[channel_index(Marker::Rheel, a)][i] = rheel[a];
            markers[channel_index(Marker::Lheel, a)][i] = lheel[a];
        }
        // Toes ride with their heel; unused by the detector but kept for
        // marker-set fidelity.
        for (heel, toe, ysign) in [
            (rheel, Marker::Rtoe, -1.0),
            (lheel, Marker::Ltoe, 1.0),
        ] {
            markers[channel_index(toe, AX_X)][i] = heel[0] + 0.16;
            markers[channel_index(toe, AX_Y)][i] = heel[1] + ysign * 0.015;
            markers[channel_index(toe, AX_Z)][i] = heel[2] - 0.005;
        }

        grf_r[i] = grf_pulse(p);
        grf_l[i] = grf_pulse(pl);
        wbam_sag[i] = WBAM_SAG_AMP * (2.0 * tau_pi * p + 0.8).sin();
        wbam_front[i] = WBAM_FRONT_AMP * (tau_pi * pl + 2.1).sin();
    }

    // Perturbation warp on top of the periodic template.
    if let (Some(spec), Some(onset)) = (spec, onset) {
        let lag_alpha = 1.0 - (-dt / COM_LAG_S).exp();
        let dip_alpha = 1.0 - (-dt / DIP_LAG_S).exp();
        match spec.kind {
            PerturbationKind::Trip | PerturbationKind::Slip => {
                // Heel displacement accumulates while the right foot rides
                // the belt and re-targets across swing; the pelvis follows
                // a lagged fraction of it and dips with the imposed speed.
                let swing_tc = (1.0 - STANCE_FRAC) * stride * 0.25;
                let swing_decay = (-dt / swing_tc).exp();
                let mut disp = 0.0;
                let mut lag = 0.0;
                let mut dip = 0.0;
                for i in onset..n {
                    let tau = (i - onset) as f64 * dt;
                    let p = frac(i as f64 / (stride * rate));
                    let dv = belt_delta_velocity(spec.kind, spec.magnitude, spec.duration_s, tau);
                    let mut dip_target = 0.0;
                    if p < STANCE_FRAC {
                        disp += dv * dt;
                        dip_target = DIP_GAIN * dv.abs();
                    } else {
                        disp *= swing_decay;
                    }
                    lag += lag_alpha * (BELT_COM_COUPLING * disp - lag);
                    dip += dip_alpha * (dip_target - dip);
                    markers[channel_index(Marker::Rheel, AX_X)][i] += disp;
                    markers[channel_index(Marker::Rtoe, AX_X)][i] += disp;
                    for (m, _) in PELVIS_OFFSETS {
                        markers[channel_index(m, AX_X)][i] += lag;
                        markers[channel_index(m, AX_Z)][i] -= dip;
                    }
                }
            }
            PerturbationKind::Translation => {
                let [ux, uy] = spec.direction.expect("validated").unit();
                let mut lag = 0.0;
                let mut dip = 0.0;
                for i in onset..n {
                    let tau = (i - onset) as f64 * dt;
                    let u = tau / spec.duration_s;
                    let d = spec.magnitude * smoothstep01(u);
                    let ramp_speed = if (0.0..1.0).contains(&u) {
                        spec.magnitude * 6.0 * u * (1.0 - u) / spec.duration_s
                    } else {
                        0.0
                    };
                    lag += lag_alpha * (d - lag);
                    dip += dip_alpha * (DIP_GAIN * ramp_speed - dip);
                    for m in [Marker::Rheel, Marker::Lheel, Marker::Rtoe, Marker::Ltoe] {
                        markers[channel_index(m, AX_X)][i] += ux * d;
                        markers[channel_index(m, AX_Y)][i] += uy * d;
                    }
                    for (m, _) in PELVIS_OFFSETS {
                        markers[channel_index(m, AX_X)][i] += ux * lag;
                        markers[channel_index(m, AX_Y)][i] += uy * lag;
                        markers[channel_index(m, AX_Z)][i] -= dip;
                    }
                }
            }
        }

        // Momentum response: a short damped oscillation on both planes.
        let ref_mag = if spec.kind.is_belt() { 3.0 } else { 0.10 };
        let amp = 0.10 * spec.magnitude / ref_mag;
        let span = (0.8 * rate) as usize;
        for i in onset..n.min(onset + span) {
            let tau = (i - onset) as f64 * dt;
            let env = (std::f64::consts::PI * tau / 0.8).sin().powi(2);
            let burst = amp * (tau_pi * tau / 0.35).sin() * env;
            wbam_sag[i] += burst;
            wbam_front[i] += 0.8 * burst;
        }
    }

    // Seeded measurement noise, channel-major for reproducibility.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    if params.noise_sd > 0.0 {
        let dist = Normal::new(0.0, params.noise_sd).expect("valid sigma");
        for ch in markers.iter_mut() {
            for v in ch.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        let wdist = Normal::new(0.0, params.noise_sd * 0.5).expect("valid sigma");
        for ch in [&mut wbam_sag, &mut wbam_front] {
            for v in ch.iter_mut() {
                *v += wdist.sample(&mut rng);
            }
        }
    }

    let label = spec.map(|s| PerturbationLabel {
        onset_sample: onset.expect("onset computed with spec"),
        kind: s.kind,
        direction: s.direction,
        magnitude: s.magnitude,
    });

    Ok(TrialRecording {
        trial_id: String::new(),
        sample_rate: rate,
        markers,
        grf_right_z: grf_r,
        grf_left_z: grf_l,
        wbam_sagittal: Some(wbam_sag),
        wbam_frontal: Some(wbam_front),
        perturbation: label,
    })
}

/// One row of a trial matrix: a perturbation family to cross with
/// magnitudes and onset phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixKind {
    pub kind: PerturbationKind,
    pub direction: Option<Direction>,
    pub duration_s: f64,
}

impl MatrixKind {
    pub fn trip() -> Self {
        Self {
            kind: PerturbationKind::Trip,
            direction: None,
            duration_s: 0.5,
        }
    }

    pub fn slip() -> Self {
        Self {
            kind: PerturbationKind::Slip,
            direction: None,
            duration_s: 0.5,
        }
    }

    pub fn translation(direction: Direction) -> Self {
        Self {
            kind: PerturbationKind::Translation,
            direction: Some(direction),
            duration_s: 0.2,
        }
    }

    fn tag(&self) -> String {
        match self.direction {
            Some(d) => format!("{}_{}", self.kind.name(), d.name()),
            None => self.kind.name().to_string(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Cartesian product of kinds x magnitudes x phases, each cell seeded
/// distinctly from the base seed, plus one unperturbed control trial per
/// kind. Trial ids sort in generation order.
pub fn generate_matrix(
    base: &GaitModelParams,
    kinds: &[MatrixKind],
    magnitudes: &[f64],
    phases: &[f64],
    onset_stride: usize,
) -> Result<Vec<TrialRecording>, SynthError> {
    if kinds.is_empty() || magnitudes.is_empty() || phases.is_empty() {
        return Err(SynthError::InvalidParams("matrix axes must be non-empty"));
    }
    let mut trials = Vec::new();
    let mut cell = 0u64;
    for mk in kinds {
        let mut next_seed = || {
            cell += 1;
            splitmix64(base.seed ^ cell.wrapping_mul(0x9E3779B97F4A7C15))
        };
        let control_params = GaitModelParams {
            seed: next_seed(),
            ..base.clone()
        };
        let mut control = generate_trial(&control_params, None)?;
        control.trial_id = format!("t{:03}_{}_control", trials.len(), mk.tag());
        trials.push(control);

        for &magnitude in magnitudes {
            for &phase in phases {
                let spec = PerturbationSpec {
                    kind: mk.kind,
                    onset_stride,
                    onset_phase: phase,
                    magnitude,
                    duration_s: mk.duration_s,
                    direction: mk.direction,
                };
                let params = GaitModelParams {
                    seed: next_seed(),
                    ..base.clone()
                };
                let mut trial = generate_trial(&params, Some(&spec))?;
                trial.trial_id = format!(
                    "t{:03}_{}_m{}_p{}",
                    trials.len(),
                    mk.tag(),
                    magnitude,
                    phase
                );
                trials.push(trial);
            }
        }
    }
    Ok(trials)
}
