//! Acceptance suite: one line per criterion, non-zero exit if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{gradcheck, oracle, scenarios, stress};
use fdia_cli::{run, ExperimentConfig};
use fdia_core::akf::Variant;
use fdia_core::dc::{chi_square_threshold, objective, wls_estimate, DcSystem};
use fdia_core::fusion::FusionVerdict;
use fdia_core::nn::Architecture;
use fdia_core::numerics::{Matrix, Vector};
use fdia_core::passive::{decide, Thresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn stealth_invisibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(n + 1..=12);
        let h = Matrix::from_vec(m, n, (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let sigmas: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..0.1)).collect();
        let weights: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
        let sys = DcSystem::new(h.clone(), weights, 13.28).unwrap();
        let x = Vector::from((0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let noise = Vector::from(sigmas.iter().map(|s| s * rng.random_range(-1.7..1.7)).collect::<Vec<_>>());
        let z = h.mat_vec(&x).unwrap().add(&noise).unwrap();
        let d = Vector::from((0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());

        let x_hat = wls_estimate(&sys, &z).unwrap();
        let clean = objective(&sys, &z, &x_hat).unwrap();
        let z_att = z.add(&h.mat_vec(&d).unwrap()).unwrap();
        let attacked = objective(&sys, &z_att, &x_hat.add(&d).unwrap()).unwrap();
        worst = worst.max((attacked - clean).abs() / clean.abs().max(f64::MIN_POSITIVE));
    }
    outcome(worst <= 1e-9, format!("1000 systems, worst relative change {worst:.2e}"))
}

fn chi_square_anchor() -> Outcome {
    let t = chi_square_threshold(4, 0.01).unwrap();
    let rel = (t - 13.34).abs() / 13.34;
    outcome(rel <= 0.02, format!("threshold {t:.4}, {:.2}% from 13.34", rel * 100.0))
}

fn residual_anchor() -> Outcome {
    let th = Thresholds::new(5.7177 / 3.0, 3.0).unwrap();
    let high = decide(23.6210, &th);
    let low = decide(1.2723, &th);
    outcome(high && !low, format!("23.6210 -> attack={high}, 1.2723 -> attack={low}"))
}

fn covariance_nonnegativity() -> Outcome {
    let long = stress::two_state_min_diag(100_000);
    let fx = stress::load_fixture();
    let states = fx.filter.states();
    let improved = stress::fixture_improved_min_diag(&fx);
    let classic = stress::fixture_classic_breakdown(&fx);
    outcome(
        long >= 0.0 && states >= 10 && improved >= 0.0 && classic.is_some(),
        format!(
            "2-state min diag {long:.2e}; {states}-state improved min diag {improved:.2e}; classic breakdown at step {classic:?}"
        ),
    )
}

fn filter_oracle() -> Outcome {
    let classic = oracle::three_step_deviation(true);
    let improved = oracle::three_step_deviation(false);
    outcome(
        classic <= 1e-12 && improved <= 1e-12,
        format!("classic {classic:.1e}, improved {improved:.1e}"),
    )
}

fn false_alarm_rate() -> Outcome {
    let rate = scenarios::clean_false_alarm_rate(100_000, 5);
    outcome(rate <= 0.005, format!("{:.3}% of 100000 clean samples flagged", rate * 100.0))
}

fn small_injection_latency() -> Outcome {
    let trace = scenarios::r3_trace(7);
    let improved = scenarios::r3_latency(&trace, Variant::Improved);
    let classic = scenarios::r3_latency(&trace, Variant::Classic);
    let passed = match (improved, classic) {
        (Some(i), Some(c)) => i <= 5 && i <= c,
        (Some(i), None) => i <= 5,
        (None, _) => false,
    };
    outcome(passed, format!("improved latency {improved:?}, classic latency {classic:?}"))
}

fn gradient_check() -> Outcome {
    let arch = Architecture::tiny(3);
    let (err, name) = gradcheck::worst_error(arch, None);
    outcome(
        arch.hidden == 4 && err <= gradcheck::TOLERANCE,
        format!("worst relative error {err:.2e} ({name})"),
    )
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Per-detector recall from a finished run's metrics.
fn recalls(dir: &Path) -> BTreeMap<String, f64> {
    let text = std::fs::read_to_string(dir.join(run::METRICS)).unwrap();
    let m: run::DetectMetrics = serde_json::from_str(&text).unwrap();
    m.detectors.into_iter().map(|(k, v)| (k, v.recall)).collect()
}

struct ToyRun {
    seed: u64,
    accuracy: f64,
    windows: usize,
    recalls: BTreeMap<String, f64>,
}

fn toy_training(scratch: &Path) -> (Outcome, Vec<ToyRun>) {
    let base = ExperimentConfig::load(&workspace_root().join("configs/toy_training.json")).unwrap();
    let runs: Vec<ToyRun> = std::thread::scope(|s| {
        let handles: Vec<_> = [0u64, 1, 2]
            .into_iter()
            .map(|seed| {
                let mut cfg = base.clone();
                cfg.set_seed(seed);
                cfg.output = scratch.join(format!("toy_{seed}"));
                s.spawn(move || {
                    run::simulate(&cfg).unwrap();
                    let m = run::train(&cfg, None).unwrap();
                    run::detect(&cfg, false, None).unwrap();
                    ToyRun {
                        seed,
                        accuracy: m.test.accuracy,
                        windows: m.train_windows + m.test_windows,
                        recalls: recalls(&cfg.output),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let good = runs.iter().filter(|r| r.accuracy >= 0.90).count();
    let enough = runs.iter().all(|r| r.windows >= 2000);
    let detail = runs
        .iter()
        .map(|r| format!("seed {} acc {:.4} ({} windows)", r.seed, r.accuracy, r.windows))
        .collect::<Vec<_>>()
        .join("; ");
    (outcome(good >= 2 && enough, detail), runs)
}

fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs/toy_training.json")).unwrap();
    cfg.samples = 2000;
    cfg.attack.onset = 1600;
    cfg.network.hidden = 16;
    cfg.network.train.epochs = 2;
    cfg.output = dir.to_path_buf();
    cfg
}

fn fusion_properties(toy: &[ToyRun], extra: &[BTreeMap<String, f64>]) -> Outcome {
    let mut table_ok = true;
    for n in [false, true] {
        for gc in [false, true] {
            table_ok &= FusionVerdict::new(0, 0.0, n, gc).flag_fused == (n || gc);
        }
    }
    let mut worst_margin = f64::INFINITY;
    for r in toy.iter().map(|t| &t.recalls).chain(extra) {
        let best = r["improved_akf"].max(r["gru_cnn"]);
        worst_margin = worst_margin.min(r["fused"] - best);
    }
    outcome(
        table_ok && worst_margin >= 0.0,
        format!(
            "truth table {}; fused recall minus best component over {} runs >= {worst_margin:.4}",
            if table_ok { "exact" } else { "wrong" },
            toy.len() + extra.len()
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn pipeline(cfg: &ExperimentConfig) -> Duration {
    let start = Instant::now();
    run::simulate(cfg).unwrap();
    run::train(cfg, None).unwrap();
    run::detect(cfg, false, None).unwrap();
    start.elapsed()
}

fn determinism(scratch: &Path) -> (Outcome, BTreeMap<String, f64>) {
    let cfg = small_config(&scratch.join("determinism"));
    let first_time = pipeline(&cfg);
    let first = snapshot(&cfg.output);
    let recall = recalls(&cfg.output);
    std::fs::remove_dir_all(&cfg.output).unwrap();
    let second_time = pipeline(&cfg);
    let second = snapshot(&cfg.output);
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    let same_set = first.len() == second.len();
    (
        outcome(
            same_set && differing.is_empty() && second_time < first_time * 2 + Duration::from_secs(1),
            format!(
                "{} artifacts compared, {} differ; runs took {:.1}s and {:.1}s",
                first.len(),
                differing.len(),
                first_time.as_secs_f64(),
                second_time.as_secs_f64()
            ),
        ),
        recall,
    )
}

fn report(index: usize, name: &str, budget: Duration, started: Instant, o: Outcome) -> bool {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let passed = o.passed && in_time;
    println!(
        "[{}] {index:>2} {name}: {} ({:.2}s{})",
        if passed { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        if in_time { String::new() } else { format!(", budget {:.0}s", budget.as_secs_f64()) }
    );
    passed
}

fn main() {
    let scratch = TempDir::new().unwrap();
    let secs = Duration::from_secs;
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "stealth invisibility", secs(5), t, stealth_invisibility());
    let t = Instant::now();
    all &= report(2, "chi-square threshold", Duration::from_millis(1), t, chi_square_anchor());
    let t = Instant::now();
    all &= report(3, "residual decisions", Duration::from_millis(1), t, residual_anchor());
    let t = Instant::now();
    all &= report(4, "covariance non-negativity", secs(30), t, covariance_nonnegativity());
    let t = Instant::now();
    all &= report(5, "filter transcription", secs(1), t, filter_oracle());
    let t = Instant::now();
    all &= report(6, "false-alarm rate", secs(30), t, false_alarm_rate());
    let t = Instant::now();
    all &= report(7, "5% injection latency", secs(10), t, small_injection_latency());
    let t = Instant::now();
    all &= report(8, "gradient check", secs(60), t, gradient_check());

    let t = Instant::now();
    let (o, toy) = toy_training(scratch.path());
    all &= report(9, "toy training accuracy", secs(600), t, o);

    let t0 = Instant::now();
    let (det, det_recalls) = determinism(scratch.path());
    let det_elapsed = t0.elapsed();

    let t = Instant::now();
    all &= report(10, "fusion properties", secs(1), t, fusion_properties(&toy, &[det_recalls]));
    all &= report(11, "deterministic artifacts", det_elapsed + secs(1), t0, det);

    if !all {
        std::process::exit(1);
    }
}
