//! Operator entry point: simulate labeled trials, stream the detector over
//! recordings, fit and run the momentum baseline, sweep thresholds, run
//! PCA inspections, and aggregate evaluation reports.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use gaitpd_core::analysis::{self, DetectorIdentity, TrialRow};
use gaitpd_core::baseline;
use gaitpd_core::detector::{self, classify_and_delay, RunMode, TrialRun};
use gaitpd_core::gait;
use gaitpd_core::ingest::{self, Direction, TrialRecording};
use gaitpd_core::optimize;
use gaitpd_core::synth::{self, MatrixKind};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "gaitpd",
    version,
    about = "Ground perturbation detection from lower-limb kinematic states",
    after_long_help = config::default_config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic trial (CSV + label sidecar when perturbed).
    Simulate {
        /// JSON run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path; the label sidecar lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a labeled trial matrix (kinds x magnitudes x phases plus
    /// per-kind unperturbed controls).
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Belt pulse magnitudes, m/s^2.
        #[arg(long, value_delimiter = ',', default_value = "3.0")]
        belt_magnitudes: Vec<f64>,
        /// Ground translation magnitudes, meters.
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15")]
        translation_magnitudes: Vec<f64>,
        /// Translation directions (N, NE, E, SE, S, SW, W, NW).
        #[arg(long, value_delimiter = ',', default_value = "N,E,S,W",
              value_parser = parse_direction)]
        directions: Vec<Direction>,
        /// Onset phases, percent of the gait cycle.
        #[arg(long, value_delimiter = ',', default_value = "10,25,40")]
        phases: Vec<f64>,
        #[arg(long, default_value_t = 12)]
        onset_stride: usize,
        /// Skip the belt rows.
        #[arg(long)]
        no_belt: bool,
        /// Skip the translation rows.
        #[arg(long)]
        no_translation: bool,
    },
    /// Stream the kinematic detector over a trial CSV.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        /// Ground-truth sidecar; defaults to `<in>.label.json` when present.
        #[arg(long)]
        label: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Detection threshold on the stability deviation value.
        #[arg(long)]
        threshold: Option<f64>,
        /// Sampling rate of the CSV, Hz (config value when omitted).
        #[arg(long)]
        rate: Option<f64>,
        /// Per-sample JSONL detection stream.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the final per-phase band statistics as CSV.
        #[arg(long)]
        bands_out: Option<PathBuf>,
    },
    /// Run the momentum-band baseline detector over a trial CSV.
    Baseline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        label: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Steady cycles used to fit the band (3-5).
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(3..=5))]
        cycles: u8,
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Threshold parameter sweep over a directory of labeled trials.
    Sweep {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Principal component inspection of a trial's state trajectories.
    Pca {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Skip per-state standardization before the decomposition.
        #[arg(long)]
        no_standardize: bool,
        #[arg(long)]
        rate: Option<f64>,
        /// Component/variance summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample score dump CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Evaluate a detector over a directory of labeled trials.
    Evaluate {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorArg::Kinematic)]
        detector: DetectorArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Momentum baseline: trigger on either plane, or average the
        /// per-plane results.
        #[arg(long, value_enum, default_value_t = WbamModeArg::Either)]
        wbam_mode: WbamModeArg,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(3..=5))]
        wbam_cycles: u8,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    Kinematic,
    Wbam,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WbamModeArg {
    Either,
    Average,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::ALL
        .into_iter()
        .find(|d| d.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown direction `{s}` (expected one of N,NE,E,SE,S,SW,W,NW)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(threads) = std::env::var("GAITPD_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gaitpd: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

fn label_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("label.json")
}

fn trial_id_for(csv: &Path) -> String {
    csv.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trial".to_string())
}

fn load_trial(csv: &Path, rate: f64, label: Option<&Path>) -> Result<TrialRecording> {
    let text =
        fs::read_to_string(csv).with_context(|| format!("cannot read {}", csv.display()))?;
    let mut trial = ingest::parse_trial(&text, rate)
        .with_context(|| format!("parsing {}", csv.display()))?;
    trial.trial_id = trial_id_for(csv);
    let label_path = label
        .map(Path::to_path_buf)
        .unwrap_or_else(|| label_path_for(csv));
    if label_path.exists() {
        let text = fs::read_to_string(&label_path)
            .with_context(|| format!("cannot read {}", label_path.display()))?;
        trial.perturbation = Some(
            ingest::parse_label(&text)
                .with_context(|| format!("parsing {}", label_path.display()))?,
        );
        trial.validate().context("label does not match trial")?;
    } else if label.is_some() {
        bail!("label file {} not found", label_path.display());
    }
    Ok(trial)
}

fn load_dir(dir: &Path, rate: f64) -> Result<Vec<TrialRecording>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .csv trials in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| load_trial(p, rate, None))
        .collect()
}

fn write_trial_files(trial: &TrialRecording, csv_path: &Path) -> Result<()> {
    fs::write(csv_path, ingest::write_trial(trial))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    if let Some(label) = &trial.perturbation {
        let sidecar = label_path_for(csv_path);
        fs::write(&sidecar, ingest::write_label(label))
            .with_context(|| format!("writing {}", sidecar.display()))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.gait_model.seed = seed;
            }
            let mut trial = synth::generate_trial(&cfg.gait_model, cfg.perturbation.as_ref())?;
            trial.trial_id = trial_id_for(&out);
            write_trial_files(&trial, &out)?;
            println!(
                "{}",
                json!({
                    "trial_id": trial.trial_id,
                    "frames": trial.n_frames(),
                    "sample_rate": trial.sample_rate,
                    "perturbation": trial.perturbation,
                    "csv": out.display().to_string(),
                })
            );
            Ok(())
        }

        Command::Matrix {
            config,
            out_dir,
            belt_magnitudes,
            translation_magnitudes,
            directions,
            phases,
            onset_stride,
            no_belt,
            no_translation,
        } => {
            let cfg = load_config(config.as_deref())?;
            fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut trials = Vec::new();
            if !no_belt {
                trials.extend(synth::generate_matrix(
                    &cfg.gait_model,
                    &[MatrixKind::trip(), MatrixKind::slip()],
                    &belt_magnitudes,
                    &phases,
                    onset_stride,
                )?);
            }
            if !no_translation {
                let kinds: Vec<MatrixKind> = directions
                    .iter()
                    .map(|&d| MatrixKind::translation(d))
                    .collect();
                trials.extend(synth::generate_matrix(
                    &cfg.gait_model,
                    &kinds,
                    &translation_magnitudes,
                    &phases,
                    onset_stride,
                )?);
            }
            if trials.is_empty() {
                bail!("matrix is empty: both belt and translation rows disabled");
            }
            // Re-sequence ids so the union stays unique and sorted.
            for (i, trial) in trials.iter_mut().enumerate() {
                let tail = trial.trial_id.split_once('_').map_or("trial", |x| x.1);
                trial.trial_id = format!("t{i:03}_{tail}");
                let path = out_dir.join(format!("{}.csv", trial.trial_id));
                write_trial_files(trial, &path)?;
            }
            println!(
                "{}",
                json!({
                    "trials": trials.len(),
                    "perturbed": trials.iter().filter(|t| t.perturbation.is_some()).count(),
                    "out_dir": out_dir.display().to_string(),
                })
            );
            Ok(())
        }

        Command::Detect {
            input,
            label,
            config,
            threshold,
            rate,
            out,
            bands_out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = threshold {
                cfg.pipeline.detector.threshold_phi = t;
            }
            let rate = rate.unwrap_or(cfg.gait_model.sample_rate);
            let trial = load_trial(&input, rate, label.as_deref())?;
            let run = detector::stream_trial(&trial, &cfg.pipeline, RunMode::Live)?;
            if let Some(out) = &out {
                write_jsonl(&run, out)?;
            }
            if let Some(path) = &bands_out {
                fs::write(path, run.band.dump_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let classification = trial
                .perturbation
                .as_ref()
                .map(|truth| {
                    run.classify(
                        Some(truth),
                        cfg.pipeline.detector.threshold_phi,
                        cfg.pipeline.detector.tp_window_cycles,
                    )
                })
                .transpose()?;
            let perturbed = run
                .cycles
                .iter()
                .filter(|c| c.label == Some(detector::CycleLabel::Perturbed))
                .count();
            println!(
                "{}",
                json!({
                    "trial_id": run.trial_id,
                    "threshold": cfg.pipeline.detector.threshold_phi,
                    "detection_sample": run.detection_sample,
                    "calibration_end": run.calibration_end,
                    "cycles": run.cycles.len(),
                    "perturbed_cycles": perturbed,
                    "skipped_samples": run.skipped_samples,
                    "classification": classification,
                })
            );
            Ok(())
        }

        Command::Baseline {
            input,
            label,
            config,
            cycles,
            rate,
        } => {
            let cfg = load_config(config.as_deref())?;
            let rate = rate.unwrap_or(cfg.gait_model.sample_rate);
            let trial = load_trial(&input, rate, label.as_deref())?;
            let outcome = wbam_outcome(&trial, &cfg, cycles as usize, WbamChannelMode::Either)?;
            let delay = trial
                .perturbation
                .as_ref()
                .zip(outcome.detection)
                .and_then(|(t, det)| {
                    let cycle = outcome
                        .cycles
                        .iter()
                        .find(|c| c.contains(t.onset_sample))?;
                    (det >= t.onset_sample)
                        .then(|| 100.0 * (det - t.onset_sample) as f64 / cycle.len() as f64)
                });
            println!(
                "{}",
                json!({
                    "trial_id": trial.trial_id,
                    "history_cycles": cycles,
                    "from_sample": outcome.from_sample,
                    "detection_sample": outcome.detection,
                    "delay_pct": delay,
                    "sagittal": {"mean": outcome.band.sagittal.mean, "sd": outcome.band.sagittal.sd},
                    "frontal": {"mean": outcome.band.frontal.mean, "sd": outcome.band.frontal.sd},
                })
            );
            Ok(())
        }

        Command::Sweep {
            in_dir,
            config,
            out,
            rate,
        } => {
            let cfg = load_config(config.as_deref())?;
            let rate = rate.unwrap_or(cfg.gait_model.sample_rate);
            let trials = load_dir(&in_dir, rate)?;
            let result = optimize::sweep(&trials, &cfg.pipeline, &cfg.sweep)?;
            fs::write(&out, optimize::sweep_csv(&result))
                .with_context(|| format!("writing {}", out.display()))?;
            let chosen = result.chosen_row();
            println!(
                "{}",
                json!({
                    "trials": trials.len(),
                    "thresholds": result.rows.len(),
                    "chosen_threshold": optimize::select_threshold(&result),
                    "accuracy": chosen.accuracy,
                    "fp": chosen.false_pos,
                    "fn": chosen.false_neg,
                    "mean_delay_pct": chosen.mean_delay_pct,
                    "csv": out.display().to_string(),
                })
            );
            Ok(())
        }

        Command::Pca {
            input,
            config,
            k,
            no_standardize,
            rate,
            out,
            scores,
        } => {
            let cfg = load_config(config.as_deref())?;
            let rate = rate.unwrap_or(cfg.gait_model.sample_rate);
            let trial = load_trial(&input, rate, None)?;
            let (states, _seg) = detector::prepare(&trial, &cfg.pipeline)?;
            let rows: Vec<Vec<f64>> = states.iter().map(|s| s.0.to_vec()).collect();
            let result = analysis::pca(&rows, k, !no_standardize)?;
            let summary = json!({
                "trial_id": trial.trial_id,
                "samples": rows.len(),
                "components": result.components,
                "explained_variance": result.explained_variance,
                "explained_variance_ratio": result.explained_variance_ratio(),
                "dropped_states": result.dropped,
                "standardized": result.standardized,
            });
            if let Some(path) = &out {
                fs::write(path, serde_json::to_string_pretty(&summary)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = &scores {
                fs::write(path, analysis::scores_csv(&result))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{summary}");
            Ok(())
        }

        Command::Evaluate {
            in_dir,
            detector: which,
            config,
            threshold,
            wbam_mode,
            wbam_cycles,
            rate,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = threshold {
                cfg.pipeline.detector.threshold_phi = t;
            }
            let rate = rate.unwrap_or(cfg.gait_model.sample_rate);
            let trials = load_dir(&in_dir, rate)?;
            match which {
                DetectorArg::Kinematic => {
                    let rows: Result<Vec<TrialRow>> = trials
                        .par_iter()
                        .map(|t| kinematic_row(t, &cfg))
                        .collect();
                    let report = analysis::evaluate(&rows?, DetectorIdentity::Kinematic)?;
                    fs::write(&out, analysis::report_json(&report))
                        .with_context(|| format!("writing {}", out.display()))?;
                    println!(
                        "{}",
                        json!({
                            "detector": "kinematic",
                            "trials": trials.len(),
                            "accuracy": report.accuracy,
                            "tp": report.true_pos, "fp": report.false_pos,
                            "tn": report.true_neg, "fn": report.false_neg,
                            "delay_mean_pct": report.delay_mean_pct,
                            "delay_sd_pct": report.delay_sd_pct,
                            "report": out.display().to_string(),
                        })
                    );
                }
                DetectorArg::Wbam => {
                    let n = wbam_cycles as usize;
                    match wbam_mode {
                        WbamModeArg::Either => {
                            let rows: Result<Vec<TrialRow>> = trials
                                .par_iter()
                                .map(|t| wbam_row(t, &cfg, n, WbamChannelMode::Either))
                                .collect();
                            let report = analysis::evaluate(&rows?, DetectorIdentity::Wbam)?;
                            fs::write(&out, analysis::report_json(&report))
                                .with_context(|| format!("writing {}", out.display()))?;
                            println!(
                                "{}",
                                json!({
                                    "detector": "wbam", "mode": "either",
                                    "trials": trials.len(),
                                    "accuracy": report.accuracy,
                                    "tp": report.true_pos, "fp": report.false_pos,
                                    "tn": report.true_neg, "fn": report.false_neg,
                                    "delay_mean_pct": report.delay_mean_pct,
                                    "report": out.display().to_string(),
                                })
                            );
                        }
                        WbamModeArg::Average => {
                            let mut reports = Vec::new();
                            for mode in
                                [WbamChannelMode::Sagittal, WbamChannelMode::Frontal]
                            {
                                let rows: Result<Vec<TrialRow>> = trials
                                    .par_iter()
                                    .map(|t| wbam_row(t, &cfg, n, mode))
                                    .collect();
                                reports.push(analysis::evaluate(&rows?, DetectorIdentity::Wbam)?);
                            }
                            let accuracy =
                                (reports[0].accuracy + reports[1].accuracy) / 2.0;
                            let delay = match (
                                reports[0].delay_mean_pct,
                                reports[1].delay_mean_pct,
                            ) {
                                (Some(a), Some(b)) => Some((a + b) / 2.0),
                                (a, b) => a.or(b),
                            };
                            let doc = json!({
                                "detector": "wbam", "mode": "average",
                                "accuracy": accuracy,
                                "delay_mean_pct": delay,
                                "sagittal": reports[0],
                                "frontal": reports[1],
                            });
                            fs::write(&out, serde_json::to_string_pretty(&doc)?)
                                .with_context(|| format!("writing {}", out.display()))?;
                            println!(
                                "{}",
                                json!({
                                    "detector": "wbam", "mode": "average",
                                    "trials": trials.len(),
                                    "accuracy": accuracy,
                                    "delay_mean_pct": delay,
                                    "report": out.display().to_string(),
                                })
                            );
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

fn write_jsonl(run: &TrialRun, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(run.samples.len() * 160);
    for sample in &run.samples {
        serde_json::to_writer(&mut buf, sample)?;
        buf.push(b'\n');
    }
    let mut file =
        fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    file.write_all(&buf)?;
    Ok(())
}

fn kinematic_row(trial: &TrialRecording, cfg: &RunConfig) -> Result<TrialRow> {
    let run = detector::run_trial(trial, &cfg.pipeline, RunMode::Live)?;
    let classification = run.classify(
        trial.perturbation.as_ref(),
        cfg.pipeline.detector.threshold_phi,
        cfg.pipeline.detector.tp_window_cycles,
    )?;
    Ok(TrialRow {
        trial_id: trial.trial_id.clone(),
        truth_kind: trial.perturbation.map(|p| p.kind),
        classification,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WbamChannelMode {
    Either,
    Sagittal,
    Frontal,
}

struct WbamOutcome {
    band: baseline::WbamBand,
    from_sample: usize,
    detection: Option<usize>,
    trace: Vec<Option<f64>>,
    cycles: Vec<gait::GaitCycle>,
}

/// Fit the momentum band on steady cycles (pre-onset when the trial is
/// labeled, the leading cycles otherwise) and scan forward from the end of
/// the fit region.
fn wbam_outcome(
    trial: &TrialRecording,
    cfg: &RunConfig,
    n_cycles: usize,
    mode: WbamChannelMode,
) -> Result<WbamOutcome> {
    let (sag, front) = match (&trial.wbam_sagittal, &trial.wbam_frontal) {
        (Some(s), Some(f)) => (s.as_slice(), f.as_slice()),
        _ => bail!("trial {} carries no momentum channels", trial.trial_id),
    };
    let events = gait::detect_heel_strikes(
        &trial.grf_right_z,
        trial.sample_rate,
        cfg.pipeline.grf_threshold_n,
        cfg.pipeline.refractory_s,
    );
    let seg = gait::segment_and_phase(&events, trial.n_frames(), trial.sample_rate)?;
    let history: Vec<gait::GaitCycle> = match &trial.perturbation {
        Some(t) => seg
            .cycles
            .iter()
            .filter(|c| c.end <= t.onset_sample && c.plausible)
            .copied()
            .collect(),
        None => seg
            .cycles
            .iter()
            .filter(|c| c.plausible)
            .take(n_cycles)
            .copied()
            .collect(),
    };
    let band = baseline::fit_band(sag, front, &history, n_cycles, baseline::DEFAULT_K)?;
    let from_sample = history.last().map(|c| c.end).unwrap_or(0);
    let (detection, trace) = match mode {
        WbamChannelMode::Either => (
            baseline::detect_wbam(sag, front, &band, from_sample),
            baseline::exceedance_trace(sag, front, &band, from_sample),
        ),
        WbamChannelMode::Sagittal => (
            baseline::detect_channel(sag, &band.sagittal, band.k, from_sample),
            channel_trace(sag, &band.sagittal, band.k, from_sample),
        ),
        WbamChannelMode::Frontal => (
            baseline::detect_channel(front, &band.frontal, band.k, from_sample),
            channel_trace(front, &band.frontal, band.k, from_sample),
        ),
    };
    Ok(WbamOutcome {
        band,
        from_sample,
        detection,
        trace,
        cycles: seg.cycles,
    })
}

fn channel_trace(
    series: &[f64],
    band: &baseline::ChannelBand,
    k: f64,
    from: usize,
) -> Vec<Option<f64>> {
    series
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            (i >= from).then(|| if band.exceeds(v, k) { 1.0 } else { 0.0 })
        })
        .collect()
}

fn wbam_row(
    trial: &TrialRecording,
    cfg: &RunConfig,
    n_cycles: usize,
    mode: WbamChannelMode,
) -> Result<TrialRow> {
    let outcome = wbam_outcome(trial, cfg, n_cycles, mode)?;
    let classification = classify_and_delay(
        &outcome.trace,
        &outcome.cycles,
        Some(outcome.from_sample),
        trial.perturbation.as_ref(),
        0.5,
        cfg.pipeline.detector.tp_window_cycles,
    )?;
    Ok(TrialRow {
        trial_id: trial.trial_id.clone(),
        truth_kind: trial.perturbation.map(|p| p.kind),
        classification,
    })
}
