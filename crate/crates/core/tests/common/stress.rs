//! Ten-state filter stress case and the long two-state run.

use fdia_core::akf::{Filter, FilterConfig, ObservationModel, Variant};
use fdia_core::numerics::{Matrix, Vector};
use fdia_core::signal::{simulate, SignalParams, SignalState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Truth {
    pub sigma_process: f64,
    pub sigma_meas: f64,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Deserialize)]
pub struct Fixture {
    pub filter: FilterConfig,
    pub truth: Truth,
}

pub fn load_fixture() -> Fixture {
    serde_json::from_str(include_str!("../fixtures/stress_10_state.json")).unwrap()
}

/// Measurements from the fixture's own linear model.
pub fn fixture_measurements(f: &Fixture) -> Vec<Vector> {
    let cfg = &f.filter;
    let ObservationModel::Fixed { h } = &cfg.observation else {
        panic!("stress fixture uses a fixed observation matrix");
    };
    let mut rng = ChaCha8Rng::seed_from_u64(f.truth.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let n = cfg.states();
    let mut x = Vector::from((0..n).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>());
    let mut out = Vec::with_capacity(f.truth.steps);
    for _ in 0..f.truth.steps {
        let clean = h.mat_vec(&x).unwrap();
        out.push(Vector::from(
            clean.iter().map(|v| v + f.truth.sigma_meas * gauss()).collect::<Vec<_>>(),
        ));
        let next = cfg.b.mat_vec(&x).unwrap();
        x = Vector::from(
            next.iter().map(|v| v + f.truth.sigma_process * gauss()).collect::<Vec<_>>(),
        );
    }
    out
}

pub fn min_diag(m: &Matrix) -> f64 {
    m.diag().into_iter().fold(f64::INFINITY, f64::min)
}

/// Smallest diagonal entry of M̂ seen over a long improved-filter run on
/// the two-state sinusoid model.
pub fn two_state_min_diag(steps: usize) -> f64 {
    let params = SignalParams {
        omega: 2.0 * std::f64::consts::PI / 50.0,
        sigma_process: 0.0002,
        sigma_meas: 0.002,
        seed: 31,
    };
    let trace = simulate(&params, SignalState::from_amplitude_phase(0.99, 1.27), steps).unwrap();
    let cfg = FilterConfig::for_signal(&params, trace.measurements[0].z);
    let mut f = Filter::new(cfg, Variant::Improved).unwrap();
    let mut worst = f64::INFINITY;
    for m in &trace.measurements {
        f.step_scalar(m.t, m.z).unwrap();
        worst = worst.min(min_diag(&f.state().m_hat));
    }
    worst
}

/// Smallest M̂ diagonal entry of the improved filter on the fixture.
pub fn fixture_improved_min_diag(f: &Fixture) -> f64 {
    let mut filter = Filter::new(f.filter.clone(), Variant::Improved).unwrap();
    let mut worst = f64::INFINITY;
    for (t, z) in fixture_measurements(f).iter().enumerate() {
        filter.step(t as u64, z).unwrap();
        worst = worst.min(min_diag(&filter.state().m_hat));
    }
    worst
}

/// Step at which the classic filter first shows a negative M̂ or N̂
/// diagonal entry or fails outright.
pub fn fixture_classic_breakdown(f: &Fixture) -> Option<usize> {
    let mut filter = Filter::new(f.filter.clone(), Variant::Classic).unwrap();
    for (t, z) in fixture_measurements(f).iter().enumerate() {
        match filter.step(t as u64, z) {
            Ok(_) => {
                let s = filter.state();
                if min_diag(&s.m_hat) < 0.0 || min_diag(&s.n_hat) < 0.0 {
                    return Some(t);
                }
            }
            Err(_) => return Some(t),
        }
    }
    None
}
