//! The four subcommands, operating on a run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fdia_core::akf::Variant;
use fdia_core::attack::inject_series;
use fdia_core::evaluation::{confusion, detection_latency, metrics, write_series_csv, MetricsReport};
use fdia_core::fusion::{fuse_streams, write_fused_csv, FusionVerdict};
use fdia_core::nn::{self, is_attack, probabilities, write_history_csv, Checkpoint, EpochLoss};
use fdia_core::numerics::Matrix;
use fdia_core::passive::{run_passive, write_verdicts_csv, PassiveRun, Thresholds};
use fdia_core::pipeline::{dataset_from_trace, prepare, RawDataset};
use fdia_core::signal::{simulate as simulate_trace, Trace};
use fdia_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Seeds};

pub const MANIFEST: &str = "manifest.json";
pub const TRACE: &str = "trace.csv";
pub const LABELS: &str = "labels.csv";
pub const DATASET: &str = "dataset.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const HISTORY: &str = "history.csv";
pub const TRAIN_METRICS: &str = "train_metrics.json";
pub const VERDICTS_PASSIVE: &str = "verdicts_passive.csv";
pub const VERDICTS_CLASSIC: &str = "verdicts_classic.csv";
pub const VERDICTS_ACTIVE: &str = "verdicts_active.csv";
pub const VERDICTS_FUSED: &str = "verdicts_fused.csv";
pub const METRICS: &str = "metrics.json";
pub const SERIES: &str = "series.csv";
pub const REPORT: &str = "report.json";

/// Detector names, in report order.
pub const DETECTORS: [&str; 4] = ["improved_akf", "classic_akf", "gru_cnn", "fused"];

/// Record of what has been run in a directory and with which seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seeds: Seeds,
    pub config: ExperimentConfig,
    pub stages: BTreeSet<String>,
    pub artifacts: BTreeSet<String>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::data(format!("cannot create run directory {}: {e}", dir.display())))
}

/// Adds a stage and its artifacts to the directory's manifest.
fn record(cfg: &ExperimentConfig, stage: &str, artifacts: &[&str]) -> Result<()> {
    let path = cfg.output.join(MANIFEST);
    let mut manifest = match path.exists() {
        true => read_json::<Manifest>(&path)?,
        false => Manifest {
            seeds: cfg.seeds(),
            config: cfg.clone(),
            stages: BTreeSet::new(),
            artifacts: BTreeSet::new(),
        },
    };
    manifest.seeds = cfg.seeds();
    manifest.config = cfg.clone();
    manifest.stages.insert(stage.to_owned());
    manifest.artifacts.insert(MANIFEST.to_owned());
    manifest.artifacts.extend(artifacts.iter().map(|a| (*a).to_owned()));
    write_json(&path, &manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub samples: usize,
    pub attacked_ticks: usize,
}

/// Simulates the bus, injects the attack and writes the trace, the labels
/// and the classifier dataset.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulateSummary> {
    let dir = &cfg.output;
    prepare_dir(dir)?;
    let clean = simulate_trace(&cfg.signal, cfg.initial.state(), cfg.samples)?;
    let mut scenario = cfg.attack.clone();
    scenario.resolve(cfg.signal.omega, None)?;
    let ticks: Vec<u64> = clean.measurements.iter().map(|m| m.t).collect();
    let (z, labels) = inject_series(&ticks, &clean.z_values(), &scenario)?;
    let trace = clean.with_measurements(&z)?;

    trace.write_csv(create(&dir.join(TRACE))?)?;
    write_labels(&dir.join(LABELS), &ticks, &labels)?;
    dataset_from_trace(&ticks, &z, Some(&labels), cfg.signal.omega)?
        .write_csv(create(&dir.join(DATASET))?)?;
    record(cfg, "simulate", &[TRACE, LABELS, DATASET])?;
    Ok(SimulateSummary {
        samples: ticks.len(),
        attacked_ticks: labels.iter().filter(|&&l| l == 1).count(),
    })
}

fn write_labels(path: &Path, ticks: &[u64], labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "label"])?;
    for (t, l) in ticks.iter().zip(labels) {
        w.write_record(&[t.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<u64, bool>> {
    let file =
        File::open(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = BTreeMap::new();
    for rec in r.deserialize() {
        let (t, label): (u64, u8) = rec?;
        out.insert(t, label == 1);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train_windows: usize,
    pub test_windows: usize,
    pub test: MetricsReport,
    pub history: Vec<EpochLoss>,
}

/// Prepares the dataset, trains the classifier and scores it on the
/// held-out split.
pub fn train(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<TrainMetrics> {
    let dir = &cfg.output;
    prepare_dir(dir)?;
    let default_path = dir.join(DATASET);
    let path = dataset.unwrap_or(&default_path);
    let raw = RawDataset::load(path)
        .map_err(|e| Error::data(format!("cannot load dataset {}: {e}", path.display())))?;
    let prepared = prepare(&raw, &cfg.pipeline)?;
    let arch = cfg.network.architecture(raw.width(), cfg.pipeline.window_len);
    let (net, history) = nn::train(arch, &prepared.train, Some(&prepared.test), &cfg.network.train)?;

    let preds = prepared
        .test
        .windows
        .iter()
        .map(|w| nn::predict(&net, w))
        .collect::<Result<Vec<bool>>>()?;
    let truth: Vec<bool> = prepared.test.labels.iter().map(|&l| l == 1).collect();
    let report = metrics(&confusion(&preds, &truth)?);

    Checkpoint::new(net, Some(prepared.standardizer)).save(&dir.join(CHECKPOINT))?;
    write_history_csv(&history, create(&dir.join(HISTORY))?)?;
    let summary = TrainMetrics {
        train_windows: prepared.train.len(),
        test_windows: prepared.test.len(),
        test: report,
        history,
    };
    write_json(&dir.join(TRAIN_METRICS), &summary)?;
    record(cfg, "train", &[CHECKPOINT, HISTORY, TRAIN_METRICS])?;
    Ok(summary)
}

/// Per-tick classifier output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveVerdict {
    pub t: u64,
    pub p_attack: f64,
    pub flag: bool,
}

/// Classifies the window ending at every tick with a full history.
pub fn active_verdicts(ck: &Checkpoint, trace: &Trace, omega: f64) -> Result<Vec<ActiveVerdict>> {
    let arch = ck.network.arch;
    let ticks: Vec<u64> = trace.measurements.iter().map(|m| m.t).collect();
    let ds = dataset_from_trace(&ticks, &trace.z_values(), None, omega)?;
    if ds.width() != arch.input_dim {
        return Err(Error::data(format!(
            "checkpoint expects {} features, trace provides {}",
            arch.input_dim,
            ds.width()
        )));
    }
    let mut rows = ds.complete_rows()?;
    if let Some(st) = &ck.standardizer {
        rows.iter_mut().for_each(|r| st.apply_row(r));
    }
    let len = arch.window_len;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(len - 1));
    for end in len - 1..rows.len() {
        let data: Vec<f64> = rows[end + 1 - len..=end].concat();
        let probs = probabilities(&ck.network, &Matrix::from_vec(len, arch.input_dim, data))?;
        out.push(ActiveVerdict {
            t: ticks[end],
            p_attack: probs[1],
            flag: is_attack(&probs),
        });
    }
    Ok(out)
}

fn write_active_csv(path: &Path, verdicts: &[ActiveVerdict]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "p_attack", "flag"])?;
    for v in verdicts {
        w.write_record(&[v.t.to_string(), v.p_attack.to_string(), u8::from(v.flag).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectMetrics {
    /// First tick included in the scores (after threshold calibration).
    pub evaluated_from: u64,
    pub onset: Option<u64>,
    pub thresholds: BTreeMap<String, Thresholds>,
    pub detectors: BTreeMap<String, MetricsReport>,
    /// Numerical trouble met by a detector, such as filter divergence.
    pub failures: BTreeMap<String, String>,
}

/// Flags aligned to `ticks`; ticks a detector never reached count as clean.
fn align(ticks: &[u64], flags: &BTreeMap<u64, bool>) -> Vec<bool> {
    ticks.iter().map(|t| flags.get(t).copied().unwrap_or(false)).collect()
}

fn passive_flags(run: &PassiveRun) -> BTreeMap<u64, bool> {
    run.verdicts.iter().map(|v| (v.t, v.flag)).collect()
}

/// Runs both filters, the classifier (unless `passive_only`), fuses the
/// configured filter's residual verdict with the classifier's, and scores
/// every detector against the labels.
pub fn detect(
    cfg: &ExperimentConfig,
    passive_only: bool,
    checkpoint: Option<&Path>,
) -> Result<DetectMetrics> {
    let dir = &cfg.output;
    let trace_path = dir.join(TRACE);
    let trace = Trace::read_csv(
        File::open(&trace_path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", trace_path.display())))?,
    )?;
    let labels = read_labels(&dir.join(LABELS))?;
    let Some(first) = trace.measurements.first() else {
        return Err(Error::data("trace is empty"));
    };

    let active = if passive_only {
        None
    } else {
        let default_path = dir.join(CHECKPOINT);
        let path = checkpoint.unwrap_or(&default_path);
        if !path.exists() {
            return Err(Error::config(format!(
                "no checkpoint at {}; run `fdia train` first or pass --passive-only",
                path.display()
            )));
        }
        let ck = Checkpoint::load(path)?;
        Some(active_verdicts(&ck, &trace, cfg.signal.omega)?)
    };

    let filter_cfg = cfg.filter_config(first.z);
    let improved = run_passive(&trace, &filter_cfg, Variant::Improved, &cfg.thresholds)?;
    let classic = run_passive(&trace, &filter_cfg, Variant::Classic, &cfg.thresholds)?;
    let primary = match cfg.filter.variant {
        Variant::Improved => &improved,
        Variant::Classic => &classic,
    };
    let active_pairs: Vec<(u64, bool)> = active
        .iter()
        .flatten()
        .map(|v| (v.t, v.flag))
        .collect();
    let fused: Vec<FusionVerdict> = fuse_streams(&primary.verdicts, &active_pairs);

    write_verdicts_csv(&improved.verdicts, create(&dir.join(VERDICTS_PASSIVE))?)?;
    write_verdicts_csv(&classic.verdicts, create(&dir.join(VERDICTS_CLASSIC))?)?;
    write_fused_csv(&fused, create(&dir.join(VERDICTS_FUSED))?)?;
    if let Some(a) = &active {
        write_active_csv(&dir.join(VERDICTS_ACTIVE), a)?;
    }

    let ticks: Vec<u64> = trace.measurements.iter().map(|m| m.t).collect();
    let truth = align(&ticks, &labels);
    let mut streams: Vec<(&str, Vec<bool>)> = vec![
        ("improved_akf", align(&ticks, &passive_flags(&improved))),
        ("classic_akf", align(&ticks, &passive_flags(&classic))),
    ];
    if !active_pairs.is_empty() || active.is_some() {
        streams.push(("gru_cnn", align(&ticks, &active_pairs.iter().copied().collect())));
    }
    streams.push((
        "fused",
        align(&ticks, &fused.iter().map(|f| (f.t, f.flag_fused)).collect()),
    ));

    let start = (cfg.thresholds.burn_in + cfg.thresholds.warmup).min(ticks.len());
    let onset = (cfg.attack.duration > 0 && cfg.attack.selection.any())
        .then_some(cfg.attack.onset)
        .filter(|&o| ticks[start..].contains(&o));
    let mut detectors = BTreeMap::new();
    for (name, flags) in &streams {
        let report = metrics(&confusion(&flags[start..], &truth[start..])?);
        let latency = onset.and_then(|o| {
            let idx = ticks.iter().position(|&t| t == o)?;
            detection_latency(flags, idx)
        });
        detectors.insert((*name).to_owned(), report.with_latency(latency));
    }

    let mut thresholds = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for (name, run) in [("improved_akf", &improved), ("classic_akf", &classic)] {
        if let Some(t) = run.residual {
            thresholds.insert(name.to_owned(), t);
        }
        if let Some(f) = &run.failure {
            failures.insert(name.to_owned(), f.clone());
        }
    }
    let summary = DetectMetrics {
        evaluated_from: ticks.get(start).copied().unwrap_or(0),
        onset,
        thresholds,
        detectors,
        failures,
    };
    write_json(&dir.join(METRICS), &summary)?;

    let mut columns: Vec<(String, &[bool])> = vec![("label".to_owned(), &truth[..])];
    columns.extend(streams.iter().map(|(n, f)| (format!("flag_{n}"), &f[..])));
    let named: Vec<(&str, &[bool])> = columns.iter().map(|(n, f)| (n.as_str(), *f)).collect();
    write_series_csv(&ticks, &named, create(&dir.join(SERIES))?)?;

    let mut artifacts = vec![VERDICTS_PASSIVE, VERDICTS_CLASSIC, VERDICTS_FUSED, METRICS, SERIES];
    if active.is_some() {
        artifacts.push(VERDICTS_ACTIVE);
    }
    record(cfg, "detect", &artifacts)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub detector: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub latency_ticks: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub evaluated_from: u64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14}{:>10}{:>11}{:>9}{:>8}{:>10}\n",
            "detector", "accuracy", "precision", "recall", "f1", "latency"
        );
        for r in &self.rows {
            let latency = r.latency_ticks.map_or_else(|| "-".to_owned(), |l| l.to_string());
            s.push_str(&format!(
                "{:<14}{:>10.4}{:>11.4}{:>9.4}{:>8.4}{:>10}\n",
                r.detector, r.accuracy, r.precision, r.recall, r.f1, latency
            ));
        }
        s
    }
}

/// Consolidates a finished run into `report.json`.
pub fn report(run_dir: &Path) -> Result<Report> {
    let required = [
        MANIFEST,
        METRICS,
        VERDICTS_PASSIVE,
        VERDICTS_CLASSIC,
        VERDICTS_ACTIVE,
        VERDICTS_FUSED,
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !run_dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "run directory {} is missing: {}",
            run_dir.display(),
            missing.join(", ")
        )));
    }
    let m: DetectMetrics = read_json(&run_dir.join(METRICS))?;
    let rows = DETECTORS
        .iter()
        .map(|name| {
            let r = m
                .detectors
                .get(*name)
                .ok_or_else(|| Error::data(format!("{METRICS} has no entry for {name}")))?;
            Ok(ReportRow {
                detector: (*name).to_owned(),
                accuracy: r.accuracy,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
                latency_ticks: r.latency_ticks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = Report {
        evaluated_from: m.evaluated_from,
        rows,
    };
    write_json(&run_dir.join(REPORT), &report)?;
    Ok(report)
}

/// Run directory named by a config file, for commands that only need it.
pub fn output_dir(config: &Path) -> Result<PathBuf> {
    Ok(ExperimentConfig::load(config)?.output)
}
