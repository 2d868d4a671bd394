//! Two-state sinusoidal voltage process.
//!
//! The state holds the in-phase and quadrature components of a single-point
//! voltage phasor, `x1 = V_a cos ψ` and `x2 = V_a sin ψ`. The state is a
//! random walk (`B = I`) and each tick yields one scalar measurement
//! `z(t) = [cos ωt, −sin ωt]·x(t) + ζ(t)`, i.e. `V_a cos(ωt + ψ)` plus noise.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub x1: f64,
    pub x2: f64,
}

impl SignalState {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn from_amplitude_phase(amplitude: f64, phase: f64) -> Self {
        Self {
            x1: amplitude * phase.cos(),
            x2: amplitude * phase.sin(),
        }
    }

    pub fn to_vector(self) -> Vector {
        Vector::from(vec![self.x1, self.x2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    /// Angular frequency in radians per tick.
    pub omega: f64,
    pub sigma_process: f64,
    pub sigma_meas: f64,
    pub seed: u64,
}

impl SignalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::config(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.sigma_process >= 0.0 && self.sigma_meas >= 0.0) {
            return Err(Error::config("noise standard deviations must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: u64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<SignalState>,
    pub measurements: Vec<Measurement>,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    t: u64,
    x1: f64,
    x2: f64,
    z: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn z_values(&self) -> Vec<f64> {
        self.measurements.iter().map(|m| m.z).collect()
    }

    /// Replaces the measurement values, keeping ticks and states.
    pub fn with_measurements(&self, z: &[f64]) -> Result<Trace> {
        if z.len() != self.len() {
            return Err(Error::data(format!(
                "expected {} measurements, got {}",
                self.len(),
                z.len()
            )));
        }
        Ok(Trace {
            states: self.states.clone(),
            measurements: self
                .measurements
                .iter()
                .zip(z)
                .map(|(m, &z)| Measurement { t: m.t, z })
                .collect(),
        })
    }

    /// Writes `t,x1,x2,z`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (s, m) in self.states.iter().zip(&self.measurements) {
            w.serialize(TraceRow {
                t: m.t,
                x1: s.x1,
                x2: s.x2,
                z: m.z,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trace> {
        let mut r = csv::Reader::from_reader(reader);
        let mut states = Vec::new();
        let mut measurements: Vec<Measurement> = Vec::new();
        for row in r.deserialize() {
            let row: TraceRow = row?;
            if let Some(last) = measurements.last() {
                if row.t <= last.t {
                    return Err(Error::data(format!(
                        "trace ticks must be strictly increasing (t={} after t={})",
                        row.t, last.t
                    )));
                }
            }
            states.push(SignalState::new(row.x1, row.x2));
            measurements.push(Measurement { t: row.t, z: row.z });
        }
        Ok(Trace {
            states,
            measurements,
        })
    }
}

/// The 1×2 observation row `[cos ωt, −sin ωt]`.
pub fn observation_row(t: u64, omega: f64) -> Matrix {
    let phase = omega * t as f64;
    Matrix::row_vector(&[phase.cos(), -phase.sin()])
}

/// Noiseless measurement `H(t)·x`.
pub fn measure(state: SignalState, t: u64, omega: f64) -> f64 {
    let phase = omega * t as f64;
    phase.cos() * state.x1 - phase.sin() * state.x2
}

/// Runs the random-walk state and noisy scalar measurements for `n` ticks,
/// starting at tick 0.
pub fn simulate(params: &SignalParams, initial: SignalState, n: usize) -> Result<Trace> {
    params.validate()?;
    if n == 0 {
        return Err(Error::config("trace length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut states = Vec::with_capacity(n);
    let mut measurements = Vec::with_capacity(n);
    let mut x = initial;
    for t in 0..n as u64 {
        let meas_noise = params.sigma_meas * gauss();
        measurements.push(Measurement {
            t,
            z: measure(x, t, params.omega) + meas_noise,
        });
        states.push(x);
        x = SignalState {
            x1: x.x1 + params.sigma_process * gauss(),
            x2: x.x2 + params.sigma_process * gauss(),
        };
    }
    Ok(Trace {
        states,
        measurements,
    })
}

/// `(V_a, ψ)` with `V_a = |x|` and `ψ = atan2(x2, x1)`.
pub fn amplitude_phase(s: SignalState) -> (f64, f64) {
    (s.x1.hypot(s.x2), s.x2.atan2(s.x1))
}
