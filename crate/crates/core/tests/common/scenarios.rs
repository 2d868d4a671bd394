//! Simulated single-phase traces for the detector tests.

use fdia_core::akf::{FilterConfig, Variant};
use fdia_core::attack::{inject_series, AttackKind, AttackScenario, DutyCycle, SensorSelection};
use fdia_core::evaluation::{detection_latency, flag_rate};
use fdia_core::passive::{run_passive, CalibrationConfig};
use fdia_core::signal::{simulate, SignalParams, SignalState, Trace};

pub const OMEGA: f64 = 2.0 * std::f64::consts::PI / 50.0;
pub const R3_SAMPLES: usize = 3254;
pub const R3_ONSET: u64 = 2271;

pub fn params(seed: u64) -> SignalParams {
    SignalParams {
        omega: OMEGA,
        sigma_process: 0.0002,
        sigma_meas: 0.002,
        seed,
    }
}

pub fn initial() -> SignalState {
    SignalState::from_amplitude_phase(0.9905, 72.97f64.to_radians())
}

/// A 5 % scaling of the measurement from tick 2271, switched on for 50 of
/// every 100 ticks.
pub fn r3_attack() -> AttackScenario {
    AttackScenario {
        selection: SensorSelection::all(1),
        kind: AttackKind::FractionScale { fraction: 0.05 },
        onset: R3_ONSET,
        duration: 10_000,
        interval: Some(DutyCycle { period: 100, on: 50 }),
    }
}

pub fn r3_trace(seed: u64) -> Trace {
    let clean = simulate(&params(seed), initial(), R3_SAMPLES).unwrap();
    let ticks: Vec<u64> = clean.measurements.iter().map(|m| m.t).collect();
    let (z, _) = inject_series(&ticks, &clean.z_values(), &r3_attack()).unwrap();
    clean.with_measurements(&z).unwrap()
}

/// Ticks from onset to the first residual flag.
pub fn r3_latency(trace: &Trace, variant: Variant) -> Option<u64> {
    let cfg = FilterConfig::for_signal(&params(0), trace.measurements[0].z);
    let run = run_passive(trace, &cfg, variant, &CalibrationConfig::default()).unwrap();
    detection_latency(&run.residual_flags(), R3_ONSET as usize)
}

/// Euclidean-detector flag rate over `evaluated` clean samples after
/// calibration.
pub fn clean_false_alarm_rate(evaluated: usize, seed: u64) -> f64 {
    let calib = CalibrationConfig::default();
    let armed_from = calib.burn_in + calib.warmup;
    let trace = simulate(&params(seed), initial(), armed_from + evaluated).unwrap();
    let cfg = FilterConfig::for_signal(&params(seed), trace.measurements[0].z);
    let run = run_passive(&trace, &cfg, Variant::Improved, &calib).unwrap();
    assert!(run.failure.is_none(), "{:?}", run.failure);
    let flags = run.euclidean_flags();
    assert_eq!(flags.len() - armed_from, evaluated);
    flag_rate(&flags[armed_from..])
}
