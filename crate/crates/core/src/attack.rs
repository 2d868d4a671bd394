//! False data injection.
//!
//! An attack adds `Φ·y_ac(t)` to the clean measurement vector, where `Φ`
//! selects the compromised sensors. Three sequence shapes are supported: a
//! sinusoid, a fraction of the live measurement, and the stealthy vector
//! `ac = Hd` that shifts a WLS estimate by `d` without changing its residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm2, Matrix, Vector};

/// Diagonal of the sensor selection matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorSelection(pub Vec<bool>);

impl SensorSelection {
    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&d| d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    RandomSinusoid {
        amplitude: f64,
        /// Attack frequency in rad/tick; filled from the signal when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        omega: Option<f64>,
    },
    Stealthy {
        d: Vec<f64>,
        /// `H·d`; computed by [`AttackScenario::resolve`] when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ac: Option<Vec<f64>>,
    },
    FractionScale {
        fraction: f64,
    },
}

/// Repeating on/off pattern inside the attack window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyCycle {
    pub period: u64,
    pub on: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    #[serde(rename = "sensors")]
    pub selection: SensorSelection,
    #[serde(flatten)]
    pub kind: AttackKind,
    pub onset: u64,
    pub duration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<DutyCycle>,
}

/// Relative frequency of the sinusoidal attack when none is configured.
pub const DEFAULT_SINUSOID_RATIO: f64 = 0.7;

impl AttackScenario {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AttackKind::FractionScale { fraction } if !(*fraction > 0.0) => {
                return Err(Error::config("fraction attack requires fraction > 0"));
            }
            AttackKind::RandomSinusoid { amplitude, .. } if !amplitude.is_finite() => {
                return Err(Error::config("sinusoid amplitude must be finite"));
            }
            _ => {}
        }
        if let Some(dc) = self.interval {
            if dc.period == 0 || dc.on == 0 || dc.on > dc.period {
                return Err(Error::config(format!(
                    "duty cycle needs 0 < on <= period, got on={} period={}",
                    dc.on, dc.period
                )));
            }
        }
        Ok(())
    }

    /// Fills defaults that depend on the surrounding experiment: the
    /// sinusoid frequency (0.7 of the signal's) and the stealthy `ac = Hd`.
    pub fn resolve(&mut self, signal_omega: f64, h: Option<&Matrix>) -> Result<()> {
        match &mut self.kind {
            AttackKind::RandomSinusoid { omega, .. } if omega.is_none() => {
                *omega = Some(DEFAULT_SINUSOID_RATIO * signal_omega);
            }
            AttackKind::Stealthy { d, ac } if ac.is_none() => {
                let h = h.ok_or_else(|| {
                    Error::config("stealthy attack needs a Jacobian to compute ac = Hd")
                })?;
                *ac = Some(build_stealthy(h, &Vector::from(d.clone()))?.into_inner());
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether tick `t` falls inside the active part of the attack window.
    pub fn is_active(&self, t: u64) -> bool {
        if t < self.onset || t - self.onset >= self.duration {
            return false;
        }
        match self.interval {
            Some(dc) => (t - self.onset) % dc.period < dc.on,
            None => true,
        }
    }

    /// Ground-truth label: 1 when at least one sensor is being tampered.
    pub fn label(&self, t: u64) -> u8 {
        u8::from(self.is_active(t) && self.selection.any())
    }
}

/// `z_t + Φ·y_ac(t)` inside the active window, `z_t` unchanged outside.
pub fn inject(z_t: &Vector, scenario: &AttackScenario, t: u64) -> Result<Vector> {
    if scenario.selection.len() != z_t.len() {
        return Err(Error::data(format!(
            "sensor selection covers {} sensors, measurement has {}",
            scenario.selection.len(),
            z_t.len()
        )));
    }
    if !scenario.is_active(t) {
        return Ok(z_t.clone());
    }
    let mut out = z_t.clone();
    for (i, &selected) in scenario.selection.0.iter().enumerate() {
        if !selected {
            continue;
        }
        let y = match &scenario.kind {
            AttackKind::RandomSinusoid { amplitude, omega } => {
                let omega = omega.ok_or_else(|| {
                    Error::config("sinusoid attack frequency unresolved; call resolve()")
                })?;
                amplitude * (omega * t as f64).sin()
            }
            AttackKind::FractionScale { fraction } => fraction * z_t[i],
            AttackKind::Stealthy { ac, .. } => {
                let ac = ac.as_ref().ok_or_else(|| {
                    Error::config("stealthy attack vector unresolved; call resolve()")
                })?;
                if ac.len() != z_t.len() {
                    return Err(Error::data(format!(
                        "stealthy vector has {} entries, measurement has {}",
                        ac.len(),
                        z_t.len()
                    )));
                }
                ac[i]
            }
        };
        out[i] += y;
    }
    Ok(out)
}

/// Injects a scalar measurement stream (single sensor). Returns the
/// attacked values and per-tick labels.
pub fn inject_series(
    ticks: &[u64],
    z: &[f64],
    scenario: &AttackScenario,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut attacked = Vec::with_capacity(z.len());
    let mut labels = Vec::with_capacity(z.len());
    for (&t, &v) in ticks.iter().zip(z) {
        attacked.push(inject(&Vector::from(vec![v]), scenario, t)?[0]);
        labels.push(scenario.label(t));
    }
    Ok((attacked, labels))
}

/// The stealthy injection `ac = H·d`.
pub fn build_stealthy(h: &Matrix, d: &Vector) -> Result<Vector> {
    Ok(h.mat_vec(d)?)
}

/// Attacked residual `‖(z + ac) − H(x̂ + d)‖` and its triangle bound
/// `‖z − Hx̂‖ + ‖ac − Hd‖`.
pub fn attacked_residual_bound(
    z: &Vector,
    ac: &Vector,
    h: &Matrix,
    x_hat: &Vector,
    d: &Vector,
) -> Result<(f64, f64)> {
    let attacked = z.add(ac)?.sub(&h.mat_vec(&x_hat.add(d)?)?)?;
    let clean = z.sub(&h.mat_vec(x_hat)?)?;
    let mismatch = ac.sub(&h.mat_vec(d)?)?;
    Ok((norm2(&attacked), norm2(&clean) + norm2(&mismatch)))
}
