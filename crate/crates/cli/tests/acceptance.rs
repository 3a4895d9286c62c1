//! Acceptance suite: one test per release criterion, each printing its
//! pass line (run with `--nocapture` to see them). Tolerances and
//! thresholds are pinned here, not configurable.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaitpd_core::analysis;
use gaitpd_core::baseline::{self, ChannelBand};
use gaitpd_core::detector::{self, phi, DetectorConfig, DetectorSession, ExclusionPolicy,
    PipelineConfig, RunMode};
use gaitpd_core::gait::GaitCycle;
use gaitpd_core::ingest::{self, Direction, PerturbationKind, PerturbationLabel, TrialRecording};
use gaitpd_core::kinematics::STATE_COUNT;
use gaitpd_core::optimize::{self, SweepRange};
use gaitpd_core::synth::{self, GaitModelParams, MatrixKind, PerturbationSpec};

const THRESHOLD: f64 = 0.125;

fn benchmark_matrix() -> Vec<TrialRecording> {
    let base = GaitModelParams::default();
    let mut trials = synth::generate_matrix(
        &base,
        &[MatrixKind::trip(), MatrixKind::slip()],
        &[3.0],
        &[10.0, 25.0, 40.0],
        12,
    )
    .unwrap();
    let translations: Vec<MatrixKind> = [Direction::N, Direction::E, Direction::S, Direction::W]
        .into_iter()
        .map(MatrixKind::translation)
        .collect();
    trials.extend(
        synth::generate_matrix(&base, &translations, &[0.05, 0.10, 0.15], &[10.0, 25.0, 40.0], 12)
            .unwrap(),
    );
    for (i, t) in trials.iter_mut().enumerate() {
        t.trial_id = format!("t{i:03}");
    }
    trials
}

fn mixed_trials(count: usize) -> Vec<TrialRecording> {
    (0..count as u64)
        .map(|seed| {
            let params = GaitModelParams {
                seed,
                trial_duration_s: 20.0,
                ..GaitModelParams::default()
            };
            let spec = match seed % 4 {
                0 => None,
                1 => Some(PerturbationSpec::default()),
                2 => Some(PerturbationSpec {
                    kind: PerturbationKind::Slip,
                    onset_phase: 35.0,
                    ..PerturbationSpec::default()
                }),
                _ => Some(PerturbationSpec {
                    kind: PerturbationKind::Translation,
                    magnitude: 0.1,
                    duration_s: 0.2,
                    direction: Some(Direction::ALL[(seed % 8) as usize]),
                    ..PerturbationSpec::default()
                }),
            };
            synth::generate_trial(&params, spec.as_ref()).unwrap()
        })
        .collect()
}

#[test]
fn criterion_01_streaming_matches_batch_bit_for_bit() {
    let start = Instant::now();
    let trials = mixed_trials(20);
    for trial in &trials {
        let config = PipelineConfig::default();
        let batch = detector::run_trial(trial, &config, RunMode::Live).unwrap();
        let stream = detector::stream_trial(trial, &config, RunMode::Live).unwrap();
        assert_eq!(batch.samples.len(), stream.samples.len());
        for (a, b) in batch.samples.iter().zip(&stream.samples) {
            assert_eq!(a.phi.map(f64::to_bits), b.phi.map(f64::to_bits), "sample {}", a.i);
            assert_eq!(a.alpha.map(f64::to_bits), b.alpha.map(f64::to_bits));
            assert_eq!(a.detected, b.detected);
            assert_eq!(a.phase.map(f64::to_bits), b.phase.map(f64::to_bits));
        }
        assert_eq!(batch.cycles, stream.cycles);
        assert_eq!(batch.detection_sample, stream.detection_sample);
        assert_eq!(batch.calibration_end, stream.calibration_end);
        assert_eq!(batch.skipped_samples, stream.skipped_samples);
        assert_eq!(batch.band, stream.band);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: streaming == batch on 20 trials, bit-for-bit, in {elapsed:?}"
    );
}

#[test]
fn criterion_02_formula_unit_suite() {
    let tol = 1e-9;

    // Band exceedance.
    let (mag, sign) = detector::alpha(1.35, 1.0, 0.1, 2.0);
    assert!((mag - 0.15).abs() < tol && sign == 1);
    let (mag, sign) = detector::alpha(0.50, 1.0, 0.1, 2.0);
    assert!((mag - 0.30).abs() < tol && sign == -1);

    // Aggregate deviation, two-state view.
    let mut alphas = [0.0; STATE_COUNT];
    let mut covs = [0.0; STATE_COUNT];
    alphas[0] = 0.15;
    covs[0] = 0.1;
    covs[1] = 0.2;
    let two_state = phi(&alphas, &covs) * STATE_COUNT as f64 / 2.0;
    assert!((two_state - 0.15 / 0.35 / 2.0).abs() < tol);

    // Coefficient of variation with magnitude convention.
    assert!((gaitpd_core::stats::cov(-0.5, 0.1, 1e-6) - 0.2).abs() < tol);

    // Cubic gap fill reproduces a quadratic.
    let series = [0.0, 1.0, ingest::MISSING, 9.0, 16.0];
    let (filled, _) = ingest::fill_gaps(&series, 25).unwrap();
    assert!((filled[2] - 4.0).abs() < tol);

    // 2x2 closed-form eigendecomposition.
    let s3 = 3.0_f64.sqrt();
    let rows = vec![
        vec![s3, s3],
        vec![-s3, -s3],
        vec![1.0, -1.0],
        vec![-1.0, 1.0],
    ];
    let p = analysis::pca(&rows, 2, false).unwrap();
    assert!((p.explained_variance[0] - 3.0).abs() < tol);
    assert!((p.explained_variance[1] - 1.0).abs() < tol);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    assert!((p.components[0][0] - inv_sqrt2).abs() < tol);
    assert!((p.components[0][1] - inv_sqrt2).abs() < tol);

    // Delay arithmetic in percent of the onset cycle.
    let mut trace: Vec<Option<f64>> = vec![Some(0.0); 3000];
    trace[1431] = Some(0.9);
    let cycles: Vec<GaitCycle> = (0..2)
        .map(|k| GaitCycle {
            start: 700 + k * 1000,
            end: 700 + (k + 1) * 1000,
            duration_s: 10.0,
            plausible: true,
        })
        .collect();
    let truth = PerturbationLabel {
        onset_sample: 1200,
        kind: PerturbationKind::Trip,
        direction: None,
        magnitude: 3.0,
    };
    let c = detector::classify_and_delay(&trace, &cycles, Some(700), Some(&truth), THRESHOLD, 1.5)
        .unwrap();
    assert!((c.delay_pct.unwrap() - 23.1).abs() < tol);

    // Belt pulse integral: 3.0 m/s^2 for 0.5 s is 1.5 m/s, and the closed
    // displacement form agrees with quadrature of the velocity profile.
    let v = synth::belt_delta_velocity(PerturbationKind::Slip, 3.0, 0.5, 0.5);
    assert!((v + 1.5).abs() < tol);
    for tau in [0.2, 0.5, 0.8, 1.2] {
        let steps = 400_000;
        let h = tau / steps as f64;
        let mut acc = 0.0;
        for k in 0..steps {
            let a = synth::belt_delta_velocity(PerturbationKind::Trip, 3.0, 0.5, k as f64 * h);
            let b =
                synth::belt_delta_velocity(PerturbationKind::Trip, 3.0, 0.5, (k + 1) as f64 * h);
            acc += 0.5 * (a + b) * h;
        }
        let closed = synth::belt_delta_displacement(PerturbationKind::Trip, 3.0, 0.5, tau);
        assert!((acc - closed).abs() < tol, "tau {tau}: {acc} vs {closed}");
    }

    println!("[PASS] criterion 2: formula unit suite within 1e-9");
}

#[test]
fn criterion_03_synthetic_benchmark_accuracy_fp_delay() {
    let start = Instant::now();
    let trials = benchmark_matrix();
    assert!(trials.len() >= 40, "only {} trials", trials.len());

    let config = PipelineConfig::default();
    let mut total = 0u32;
    let mut correct = 0u32;
    let mut unpert_fp = 0u32;
    let mut unpert_cycles = 0u32;
    let mut delays = Vec::new();
    for trial in &trials {
        let run = detector::run_trial(trial, &config, RunMode::Live).unwrap();
        let c = run
            .classify(trial.perturbation.as_ref(), THRESHOLD, 1.5)
            .unwrap();
        total += c.total_units();
        correct += c.correct_units();
        if trial.perturbation.is_none() {
            unpert_fp += c.false_pos;
            unpert_cycles += c.classified_cycles as u32;
        }
        if let Some(d) = c.delay_pct {
            delays.push(d);
        }
    }
    let accuracy = correct as f64 / total as f64;
    let fp_rate = unpert_fp as f64 / unpert_cycles as f64;
    let worst_delay = delays.iter().copied().fold(0.0_f64, f64::max);
    let elapsed = start.elapsed();

    assert!(accuracy >= 0.95, "accuracy {accuracy:.4}");
    assert!(fp_rate <= 0.02, "unperturbed FP rate {fp_rate:.4}");
    assert!(!delays.is_empty());
    assert!(worst_delay <= 50.0, "worst delay {worst_delay:.1}%");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 3: {} trials, accuracy {accuracy:.4}, unperturbed FP rate {fp_rate:.4}, \
worst TP delay {worst_delay:.1}%, in {elapsed:?}",
        trials.len()
    );
}

#[test]
fn criterion_04_threshold_monotonicity_and_selection() {
    let trials = benchmark_matrix();
    let config = PipelineConfig::default();
    let range = SweepRange {
        t_min: 0.01,
        t_max: 0.99,
        step: 0.01,
    };
    let result = optimize::sweep(&trials, &config, &range).unwrap();
    for pair in result.rows.windows(2) {
        assert!(
            pair[1].false_pos <= pair[0].false_pos,
            "FP increased between {} and {}",
            pair[0].threshold,
            pair[1].threshold
        );
        assert!(
            pair[1].false_neg >= pair[0].false_neg,
            "FN decreased between {} and {}",
            pair[0].threshold,
            pair[1].threshold
        );
    }
    let chosen = optimize::select_threshold(&result);
    let chosen_err = result.chosen_row().false_pos + result.chosen_row().false_neg;
    let min_err = result
        .rows
        .iter()
        .map(|r| r.false_pos + r.false_neg)
        .min()
        .unwrap();
    assert_eq!(chosen_err, min_err);
    println!(
        "[PASS] criterion 4: FP/FN monotone over {} thresholds; selected {chosen} at the \
global FP+FN minimum ({min_err})",
        result.rows.len()
    );
}

#[test]
fn criterion_05_sweep_caching_equivalence() {
    let trials = mixed_trials(5);
    let config = PipelineConfig::default();
    let range = SweepRange {
        t_min: 0.05,
        t_max: 0.55,
        step: 0.05,
    };
    let grid = optimize::threshold_grid(&range).unwrap();
    assert_eq!(grid.len(), 11);

    let cached = optimize::sweep(&trials, &config, &range).unwrap();

    // Naive route: a fresh detector run over every trial for every single
    // threshold, classified directly.
    for (row, threshold) in cached.rows.iter().zip(&grid) {
        let mut tp = 0u32;
        let mut fp = 0u32;
        let mut tn = 0u32;
        let mut fn_ = 0u32;
        let mut delay_sum = 0.0;
        let mut delay_n = 0u32;
        for trial in &trials {
            let run = detector::run_trial(trial, &config, RunMode::TruthExcluded).unwrap();
            let c = run
                .classify(trial.perturbation.as_ref(), *threshold, 1.5)
                .unwrap();
            tp += c.true_pos;
            fp += c.false_pos;
            tn += c.true_neg;
            fn_ += c.false_neg;
            if let Some(d) = c.delay_pct {
                delay_sum += d;
                delay_n += 1;
            }
        }
        assert_eq!(
            (row.true_pos, row.false_pos, row.true_neg, row.false_neg),
            (tp, fp, tn, fn_),
            "threshold {threshold}"
        );
        let naive_delay = (delay_n > 0).then(|| delay_sum / delay_n as f64);
        assert_eq!(
            row.mean_delay_pct.map(f64::to_bits),
            naive_delay.map(f64::to_bits),
            "threshold {threshold}"
        );
    }
    println!("[PASS] criterion 5: cached sweep equals naive recomputation on 5 trials x 11 thresholds");
}

#[test]
fn criterion_06_wbam_band_contract_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fired = 0;
    for trial in 0..1000 {
        let cycle_len = rng.gen_range(40..120);
        let n_cycles = rng.gen_range(3..=5);
        let mean = rng.gen_range(-1.0..1.0);
        let sd = rng.gen_range(0.01..0.5);
        let history_len = cycle_len * n_cycles;
        let eval_len = rng.gen_range(50..300);
        let mut series: Vec<f64> = (0..history_len + eval_len)
            .map(|_| mean + sd * rng.gen_range(-1.5..1.5))
            .collect();

        let cycles: Vec<GaitCycle> = (0..n_cycles)
            .map(|k| GaitCycle {
                start: k * cycle_len,
                end: (k + 1) * cycle_len,
                duration_s: 1.0,
                plausible: true,
            })
            .collect();
        let band = baseline::fit_channel(&series, &cycles, n_cycles).unwrap();
        assert!(band.sd > 0.0);

        // Inside the band nothing may fire.
        let lo = band.mean - 0.999 * 4.0 * band.sd;
        let hi = band.mean + 0.999 * 4.0 * band.sd;
        for v in series[history_len..].iter_mut() {
            *v = v.clamp(lo, hi);
        }
        assert_eq!(
            baseline::detect_channel(&series, &band, 4.0, history_len),
            None,
            "trial {trial} fired inside the band"
        );

        // A 5-sigma excursion must fire at exactly its sample.
        let at = history_len + rng.gen_range(0..eval_len);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        series[at] = band.mean + sign * 5.0 * band.sd;
        let det = baseline::detect_channel(&series, &band, 4.0, history_len);
        assert_eq!(det, Some(at), "trial {trial}");
        assert!(ChannelBand { mean: band.mean, sd: band.sd }.exceeds(series[at], 4.0));
        fired += 1;
    }
    assert_eq!(fired, 1000);
    println!("[PASS] criterion 6: momentum band fired on 1000/1000 injected excursions, never inside the band");
}

#[test]
fn criterion_07_drift_immunity() {
    let params = GaitModelParams {
        seed: 77,
        ..GaitModelParams::default()
    };
    let base = synth::generate_trial(&params, None).unwrap();
    let mut drifted = base.clone();
    let rate = drifted.sample_rate;
    for m in 0..8 {
        let ch = m * 3; // anteroposterior channel of each marker
        for (i, v) in drifted.markers[ch].iter_mut().enumerate() {
            *v += 0.2 * i as f64 / rate;
        }
    }
    let config = PipelineConfig::default();
    let (states_a, _) = detector::prepare(&base, &config).unwrap();
    let (states_b, _) = detector::prepare(&drifted, &config).unwrap();
    for (a, b) in states_a.iter().zip(&states_b) {
        for s in 0..8 {
            assert!(
                (a.0[s] - b.0[s]).abs() <= 1e-9,
                "relative state {s} moved by {}",
                (a.0[s] - b.0[s]).abs()
            );
        }
    }
    let run = detector::run_trial(&drifted, &config, RunMode::Live).unwrap();
    assert_eq!(run.detection_sample, None, "drift caused a detection");
    println!("[PASS] criterion 7: 0.2 m/s whole-body drift leaves relative states within 1e-9 and triggers nothing");
}

#[test]
fn criterion_08_phi_bounds_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let mut alphas = [0.0; STATE_COUNT];
        let mut covs = [0.0; STATE_COUNT];
        for s in 0..STATE_COUNT {
            alphas[s] = if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..1e6)
            };
            covs[s] = rng.gen_range(1e-9..1e3);
        }
        let v = phi(&alphas, &covs);
        assert!((0.0..1.0).contains(&v), "phi {v} out of [0,1)");

        // Exactly one nonzero exceedance cannot reach 1/16.
        let idx = rng.gen_range(0..STATE_COUNT);
        let mut single = [0.0; STATE_COUNT];
        single[idx] = rng.gen_range(1e-9..1e9);
        let v = phi(&single, &covs);
        assert!(v < 1.0 / 16.0, "single-state phi {v}");
    }
    println!("[PASS] criterion 8: phi in [0,1) and single-state bound < 1/16 over 10^4 random cases");
}

#[test]
fn criterion_09_step_throughput() {
    // Precompute a steady trial's states and segmentation, then time the
    // per-sample step alone, single-threaded.
    let params = GaitModelParams {
        seed: 5,
        trial_duration_s: 60.0,
        ..GaitModelParams::default()
    };
    let trial = synth::generate_trial(&params, None).unwrap();
    let config = PipelineConfig::default();
    let (states, seg) = detector::prepare(&trial, &config).unwrap();
    let boundaries: Vec<bool> = {
        let mut b = vec![false; states.len()];
        for &e in &seg.events {
            b[e] = true;
        }
        b
    };

    let passes = 20;
    let start = Instant::now();
    let mut latched = 0usize;
    for _ in 0..passes {
        let mut session = DetectorSession::new(
            DetectorConfig::default(),
            trial.sample_rate,
            ExclusionPolicy::Detection,
        )
        .unwrap();
        for i in 0..states.len() {
            let out = session.step(&states[i], seg.phase[i], boundaries[i]);
            if out.detected {
                latched += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let samples = passes * states.len();
    let rate = samples as f64 / elapsed;
    assert_eq!(latched, 0);
    assert!(
        rate >= 1e5,
        "only {rate:.0} samples/s ({samples} samples in {elapsed:.3}s)"
    );
    println!(
        "[PASS] criterion 9: detector step sustains {:.2}M samples/s single-threaded",
        rate / 1e6
    );
}

#[test]
fn criterion_10_cli_byte_determinism() {
    let bin = env!("CARGO_BIN_EXE_gaitpd");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"perturbation": {"kind": "trip", "onset_stride": 12, "onset_phase": 20.0,
            "magnitude": 3.0, "duration_s": 0.5, "direction": null},
            "sweep": {"t_min": 0.05, "t_max": 0.3, "step": 0.01}}"#,
    )
    .unwrap();

    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    run(&["simulate", "--config", "cfg.json", "--out", "a.csv"]);
    run(&["simulate", "--config", "cfg.json", "--out", "b.csv"]);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "simulate output differs between runs");
    let la = std::fs::read(dir.path().join("a.label.json")).unwrap();
    let lb = std::fs::read(dir.path().join("b.label.json")).unwrap();
    assert_eq!(la, lb);

    run(&[
        "matrix",
        "--out-dir",
        "set",
        "--belt-magnitudes",
        "3.0",
        "--translation-magnitudes",
        "0.1",
        "--directions",
        "N,E",
        "--phases",
        "20,35",
    ]);
    run(&["sweep", "--in-dir", "set", "--config", "cfg.json", "--out", "s1.csv"]);
    run(&["sweep", "--in-dir", "set", "--config", "cfg.json", "--out", "s2.csv"]);
    let s1 = std::fs::read(dir.path().join("s1.csv")).unwrap();
    let s2 = std::fs::read(dir.path().join("s2.csv")).unwrap();
    assert_eq!(s1, s2, "sweep output differs between runs");

    println!("[PASS] criterion 10: simulate and sweep are byte-identical across runs");
}

// Shared sanity check: the benchmark fixture really covers all three
// perturbation families plus controls.
#[test]
fn benchmark_fixture_composition() {
    let trials = benchmark_matrix();
    let mut kinds = std::collections::BTreeMap::new();
    for t in &trials {
        let key = match t.perturbation {
            None => "control",
            Some(l) => l.kind.name(),
        };
        *kinds.entry(key).or_insert(0usize) += 1;
    }
    assert_eq!(kinds["trip"], 3);
    assert_eq!(kinds["slip"], 3);
    assert_eq!(kinds["translation"], 36);
    assert_eq!(kinds["control"], 6);
    // Unique ids, sorted order stable.
    let mut ids: Vec<&str> = trials.iter().map(|t| t.trial_id.as_str()).collect();
    let orig = ids.clone();
    ids.sort();
    ids.dedup();
    assert_eq!(ids, orig);
}
