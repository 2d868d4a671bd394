//! Threshold detectors on adaptive-filter outputs.
//!
//! Two metrics are computed per tick:
//!
//! * the Euclidean deviation `|H x⁻ − z|` between the predicted and the
//!   received measurement, and
//! * the normalized state residual `‖x − x̂‖ / (‖x‖·‖x̂‖)`, evaluated with the
//!   prediction `x⁻` as the reference state, since the true state is not
//!   observable online.
//!
//! A tick is flagged when a metric reaches `k·σ` (`k = 3` by default). The
//! spread `σ` is calibrated on an attack-free stretch after the filter has
//! settled. Both metrics are magnitudes, so `σ` is taken from their signed
//! counterparts (metric × sign of the innovation): the `k·σ` band on the
//! magnitude is then the usual two-sided `k·σ` test.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::akf::{run_until_failure, FilterConfig, StepOutput, Variant};
use crate::error::{Error, Result};
use crate::numerics::{norm2, Vector};
use crate::signal::Trace;

pub const MIN_CALIBRATION_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub sigma: f64,
    pub k: f64,
}

impl Thresholds {
    pub fn new(sigma: f64, k: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::DegenerateSigma);
        }
        if !(k > 0.0) {
            return Err(Error::config(format!("threshold multiplier must be positive, got {k}")));
        }
        Ok(Self { sigma, k })
    }

    /// `k·σ`
    pub fn level(&self) -> f64 {
        self.k * self.sigma
    }
}

/// Sample standard deviation (n − 1 denominator) of an attack-free window.
pub fn calibrate_sigma(clean_metrics: &[f64]) -> Result<f64> {
    let n = clean_metrics.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_CALIBRATION_SAMPLES,
            got: n,
        });
    }
    let mean = clean_metrics.iter().sum::<f64>() / n as f64;
    let var = clean_metrics
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::DegenerateSigma);
    }
    Ok(sigma)
}

/// `|estimated − observed|`
pub fn euclidean_deviation(estimated: f64, observed: f64) -> f64 {
    (estimated - observed).abs()
}

/// `‖x − x̂‖ / (‖x‖·‖x̂‖)`
pub fn residual_metric(x: &Vector, x_hat: &Vector) -> Result<f64> {
    let nx = norm2(x);
    let nh = norm2(x_hat);
    if nx == 0.0 || nh == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(norm2(&x.sub(x_hat)?) / (nx * nh))
}

/// Attack when the metric reaches `k·σ`.
pub fn decide(metric: f64, th: &Thresholds) -> bool {
    metric >= th.level()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub k: f64,
    /// Ticks skipped while the filter settles.
    pub burn_in: usize,
    /// Attack-free ticks used to estimate σ.
    pub warmup: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            k: 3.0,
            burn_in: 1000,
            warmup: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassiveVerdict {
    pub t: u64,
    pub euclidean_d: f64,
    pub residual_r: f64,
    pub flag_euclidean: bool,
    /// Residual-test decision; the value fused with the active path.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveRun {
    pub variant: Variant,
    pub verdicts: Vec<PassiveVerdict>,
    pub euclidean: Option<Thresholds>,
    pub residual: Option<Thresholds>,
    /// Why the run stopped early or could not be calibrated.
    pub failure: Option<String>,
}

impl PassiveRun {
    pub fn residual_flags(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| v.flag).collect()
    }

    pub fn euclidean_flags(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| v.flag_euclidean).collect()
    }
}

struct Metrics {
    euclidean: f64,
    euclidean_signed: f64,
    residual: f64,
    residual_signed: f64,
}

fn step_metrics(step: &StepOutput) -> Result<Metrics> {
    let innovation = step.z[0] - step.z_pred[0];
    let euclidean = euclidean_deviation(step.z_pred[0], step.z[0]);
    let residual = residual_metric(&step.x_pred, &step.x_hat)?;
    let sign = if innovation < 0.0 { -1.0 } else { 1.0 };
    Ok(Metrics {
        euclidean,
        euclidean_signed: innovation,
        residual,
        residual_signed: sign * residual,
    })
}

/// Runs the filter over a trace, calibrates both thresholds on ticks
/// `[burn_in, burn_in + warmup)` and flags every later tick.
///
/// Numerical failures (filter divergence, degenerate calibration) do not
/// abort the run: verdicts stop at the failing tick, or carry no flags if
/// calibration failed, and the reason is kept in `failure`.
pub fn run_passive(
    trace: &Trace,
    cfg: &FilterConfig,
    variant: Variant,
    calib: &CalibrationConfig,
) -> Result<PassiveRun> {
    if !(calib.k > 0.0) {
        return Err(Error::config("threshold multiplier must be positive"));
    }
    let (steps, filter_failure) = run_until_failure(trace, cfg, variant)?;
    let mut failure = filter_failure.map(|e| e.to_string());

    let mut metrics = Vec::with_capacity(steps.len());
    for s in &steps {
        match step_metrics(s) {
            Ok(m) => metrics.push(m),
            Err(e) => {
                failure.get_or_insert_with(|| format!("tick {}: {e}", s.tick));
                break;
            }
        }
    }

    let window = calib.burn_in..calib.burn_in + calib.warmup;
    let thresholds = if metrics.len() < window.end {
        failure.get_or_insert_with(|| {
            format!(
                "only {} filtered ticks, calibration needs {}",
                metrics.len(),
                window.end
            )
        });
        None
    } else {
        let calibrate = |f: fn(&Metrics) -> f64| -> Result<Thresholds> {
            let vals: Vec<f64> = metrics[window.clone()].iter().map(f).collect();
            Thresholds::new(calibrate_sigma(&vals)?, calib.k)
        };
        match (
            calibrate(|m| m.euclidean_signed),
            calibrate(|m| m.residual_signed),
        ) {
            (Ok(e), Ok(r)) => Some((e, r)),
            (Err(err), _) | (_, Err(err)) => {
                failure.get_or_insert_with(|| format!("calibration: {err}"));
                None
            }
        }
    };

    let verdicts = steps
        .iter()
        .zip(&metrics)
        .enumerate()
        .map(|(i, (s, m))| {
            let armed = i >= window.end;
            let (fe, fr) = match (&thresholds, armed) {
                (Some((e, r)), true) => (decide(m.euclidean, e), decide(m.residual, r)),
                _ => (false, false),
            };
            PassiveVerdict {
                t: s.tick,
                euclidean_d: m.euclidean,
                residual_r: m.residual,
                flag_euclidean: fe,
                flag: fr,
            }
        })
        .collect();

    Ok(PassiveRun {
        variant,
        verdicts,
        euclidean: thresholds.map(|t| t.0),
        residual: thresholds.map(|t| t.1),
        failure,
    })
}

/// Writes `t,euclidean_d,residual_r,flag`.
pub fn write_verdicts_csv<W: Write>(verdicts: &[PassiveVerdict], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "euclidean_d", "residual_r", "flag"])?;
    for v in verdicts {
        w.write_record(&[
            v.t.to_string(),
            v.euclidean_d.to_string(),
            v.residual_r.to_string(),
            u8::from(v.flag).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
