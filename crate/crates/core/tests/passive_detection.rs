//! Detector behaviour on simulated single-phase traces.

mod common;

use common::scenarios::{clean_false_alarm_rate, r3_latency, r3_trace};
use fdia_core::akf::Variant;

#[test]
fn euclidean_false_alarm_rate_on_clean_stream() {
    let rate = clean_false_alarm_rate(100_000, 5);
    assert!(rate <= 0.005, "false alarm rate {rate}");
}

#[test]
fn improved_filter_detects_scaling_attack_quickly() {
    for seed in 0..6 {
        let trace = r3_trace(seed);
        let lat = r3_latency(&trace, Variant::Improved)
            .unwrap_or_else(|| panic!("seed {seed}: improved never flagged"));
        assert!(lat <= 5, "seed {seed}: latency {lat}");
        if let Some(c) = r3_latency(&trace, Variant::Classic) {
            assert!(lat <= c, "seed {seed}: improved {lat} later than classic {c}");
        }
    }
}
