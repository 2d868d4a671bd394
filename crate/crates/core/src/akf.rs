//! Adaptive Kalman filtering with online noise-statistics estimation.
//!
//! Two variants share the predict step
//!
//! ```text
//! Q⁻ = B Q Bᵀ + U M̂ Uᵀ        x⁻ = B x̂ + U p̂
//! ```
//!
//! and the gain/correction `E = Q⁻Hᵀ(HQ⁻Hᵀ + N̂)⁻¹`, `x̂ = x⁻ + E e`,
//! `Q = (I − EH)Q⁻`. They differ in how the noise statistics evolve:
//!
//! * [`Variant::Classic`] adapts the process-noise mean `p̂` and covariance
//!   `M̂`, the measurement-noise mean `ŝ` and covariance `N̂`. Both covariance
//!   updates subtract a mean-square-error term, so their diagonals can go
//!   negative and the filter can diverge.
//! * [`Variant::Improved`] holds `N̂` at a known value, drops `ŝ`, and forms
//!   `M̂` from `E e eᵀ Eᵀ` only. Every term is positive semidefinite, so the
//!   diagonal of `M̂` stays non-negative.
//!
//! All forgetting uses `c_k = (1 − g)/(1 − g^{k+1})`, where `k` counts
//! recursion steps: `k = 0` is the initial condition and the first
//! measurement is processed at `k = 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::signal::{observation_row, SignalParams, Trace};

pub const DEFAULT_FORGETTING: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Classic,
    Improved,
}

/// Observation matrix as a function of the measurement tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObservationModel {
    /// `[cos ωt, −sin ωt]`
    Sinusoid { omega: f64 },
    Fixed { h: Matrix },
}

impl ObservationModel {
    pub fn at(&self, tick: u64) -> Matrix {
        match self {
            ObservationModel::Sinusoid { omega } => observation_row(tick, *omega),
            ObservationModel::Fixed { h } => h.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterInit {
    pub x0: Vector,
    pub q0: Matrix,
    pub m0: Matrix,
    pub n0: Matrix,
    pub p0: Vector,
    pub s0: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub b: Matrix,
    pub u: Matrix,
    pub observation: ObservationModel,
    /// Forgetting factor `g` in (0, 1).
    pub forgetting: f64,
    /// Measurement-noise covariance held fixed by the improved variant.
    pub n_fixed: Matrix,
    pub init: FilterInit,
}

impl FilterConfig {
    /// Default setup for the two-state voltage model, seeded from the first
    /// measurement: `x̂₀ = [z₀, 0]`, `Q₀ = I`, `M̂₀ = σ_p² I`, `N̂₀ = σ_m²`.
    pub fn for_signal(params: &SignalParams, z0: f64) -> Self {
        let sp2 = params.sigma_process * params.sigma_process;
        let sm2 = params.sigma_meas * params.sigma_meas;
        Self {
            b: Matrix::identity(2),
            u: Matrix::identity(2),
            observation: ObservationModel::Sinusoid {
                omega: params.omega,
            },
            forgetting: DEFAULT_FORGETTING,
            n_fixed: Matrix::from_diag(&[sm2]),
            init: FilterInit {
                x0: Vector::from(vec![z0, 0.0]),
                q0: Matrix::identity(2),
                m0: Matrix::from_diag(&[sp2, sp2]),
                n0: Matrix::from_diag(&[sm2]),
                p0: Vector::zeros(2),
                s0: Vector::zeros(1),
            },
        }
    }

    pub fn states(&self) -> usize {
        self.b.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        let i = &self.init;
        let square = |m: &Matrix, k: usize| m.shape() == (k, k);
        if !(self.forgetting > 0.0 && self.forgetting < 1.0) {
            return Err(Error::config(format!(
                "forgetting factor must lie in (0, 1), got {}",
                self.forgetting
            )));
        }
        if !square(&self.b, n) || self.u.rows() != n || !square(&i.q0, n) || i.x0.len() != n {
            return Err(Error::config("filter state dimensions are inconsistent"));
        }
        let k = self.u.cols();
        if !square(&i.m0, k) || i.p0.len() != k {
            return Err(Error::config("process-noise dimensions do not match U"));
        }
        let m = i.n0.rows();
        if !square(&i.n0, m) || !square(&self.n_fixed, m) || i.s0.len() != m {
            return Err(Error::config("measurement-noise dimensions are inconsistent"));
        }
        let h = self.observation.at(0);
        if h.shape() != (m, n) {
            return Err(Error::config(format!(
                "observation matrix is {:?}, expected {m}x{n}",
                h.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// Completed recursion steps.
    pub t: u64,
    pub x_hat: Vector,
    pub q: Matrix,
    pub p_hat: Vector,
    pub m_hat: Matrix,
    pub s_hat: Vector,
    pub n_hat: Matrix,
}

impl FilterState {
    pub fn initial(cfg: &FilterConfig) -> Self {
        let i = &cfg.init;
        Self {
            t: 0,
            x_hat: i.x0.clone(),
            q: i.q0.clone(),
            p_hat: i.p0.clone(),
            m_hat: i.m0.clone(),
            s_hat: i.s0.clone(),
            n_hat: i.n0.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Measurement tick.
    pub tick: u64,
    pub z: Vector,
    pub x_pred: Vector,
    pub x_hat: Vector,
    pub residual: Vector,
    pub gain: Matrix,
    /// `H x⁻`, the measurement predicted before seeing `z`.
    pub z_pred: Vector,
}

impl StepOutput {
    /// First residual component; the whole vector for scalar measurements.
    pub fn e(&self) -> f64 {
        self.residual[0]
    }
}

/// `c_t = (1 − g)/(1 − g^{t+1})`.
pub fn weighting_coefficient(t: u64, g: f64) -> f64 {
    let exp = i32::try_from(t.saturating_add(1)).unwrap_or(i32::MAX);
    (1.0 - g) / (1.0 - g.powi(exp))
}

/// `Q⁻ = BQBᵀ + UM̂Uᵀ`, `x⁻ = Bx̂ + Up̂`.
pub fn predict(state: &FilterState, cfg: &FilterConfig) -> Result<(Vector, Matrix)> {
    let b = &cfg.b;
    let u = &cfg.u;
    let q_pred = b
        .mat_mul(&state.q)?
        .mat_mul(&b.transpose())?
        .add(&u.mat_mul(&state.m_hat)?.mat_mul(&u.transpose())?)?;
    let x_pred = b.mat_vec(&state.x_hat)?.add(&u.mat_vec(&state.p_hat)?)?;
    Ok((x_pred, q_pred))
}

struct Correction {
    h: Matrix,
    gain: Matrix,
    x_hat: Vector,
    q: Matrix,
    q_pred: Matrix,
    x_pred: Vector,
}

fn correct(
    state: &FilterState,
    cfg: &FilterConfig,
    tick: u64,
    residual: &Vector,
    x_pred: Vector,
    q_pred: Matrix,
    n_hat: &Matrix,
) -> Result<Correction> {
    let h = cfg.observation.at(tick);
    let ht = h.transpose();
    let innovation_cov = h.mat_mul(&q_pred)?.mat_mul(&ht)?.add(n_hat)?;
    let inv = innovation_cov
        .inverse()
        .map_err(|source| Error::SingularInnovation {
            t: state.t + 1,
            source,
        })?;
    let gain = q_pred.mat_mul(&ht)?.mat_mul(&inv)?;
    let x_hat = x_pred.add(&gain.mat_vec(residual)?)?;
    let n = cfg.states();
    let q = Matrix::identity(n)
        .sub(&gain.mat_mul(&h)?)?
        .mat_mul(&q_pred)?
        .symmetrize()?;
    Ok(Correction {
        h,
        gain,
        x_hat,
        q,
        q_pred,
        x_pred,
    })
}

fn blend(old: &Matrix, new: &Matrix, c: f64) -> Result<Matrix> {
    Ok(old.scale(1.0 - c).add(&new.scale(c))?)
}

fn blend_vec(old: &Vector, new: &Vector, c: f64) -> Result<Vector> {
    Ok(old.scale(1.0 - c).add(&new.scale(c))?)
}

fn check_finite(next: &FilterState) -> Result<()> {
    let t = next.t;
    if !next.x_hat.is_finite() {
        return Err(Error::Diverged { t, what: "state estimate" });
    }
    if !next.q.is_finite() {
        return Err(Error::Diverged { t, what: "error covariance" });
    }
    if !next.m_hat.is_finite() || !next.p_hat.is_finite() {
        return Err(Error::Diverged { t, what: "process-noise estimate" });
    }
    if !next.n_hat.is_finite() || !next.s_hat.is_finite() {
        return Err(Error::Diverged { t, what: "measurement-noise estimate" });
    }
    Ok(())
}

/// One step of the classic adaptive filter.
pub fn update_classic(
    state: &FilterState,
    tick: u64,
    z: &Vector,
    cfg: &FilterConfig,
) -> Result<(FilterState, StepOutput)> {
    let k = state.t + 1;
    let c = weighting_coefficient(k, cfg.forgetting);
    let (x_pred, q_pred) = predict(state, cfg)?;
    let h = cfg.observation.at(tick);
    let z_pred = h.mat_vec(&x_pred)?;
    let raw = z.sub(&z_pred)?;
    let residual = raw.sub(&state.s_hat)?;

    let corr = correct(state, cfg, tick, &residual, x_pred, q_pred, &state.n_hat)?;
    let b = &cfg.b;

    let drift = corr.x_hat.sub(&b.mat_vec(&state.x_hat)?)?;
    let p_hat = blend_vec(&state.p_hat, &drift, c)?;

    let ge = corr.gain.mat_vec(&residual)?;
    let prev_q = b.mat_mul(&state.q)?.mat_mul(&b.transpose())?;
    let m_target = Matrix::outer(&ge, &ge).add(&corr.q)?.sub(&prev_q)?;
    let m_hat = blend(&state.m_hat, &m_target, c)?;

    let s_hat = blend_vec(&state.s_hat, &raw, c)?;

    let hqh = corr.h.mat_mul(&corr.q_pred)?.mat_mul(&corr.h.transpose())?;
    let n_target = Matrix::outer(&residual, &residual).sub(&hqh)?;
    let n_hat = blend(&state.n_hat, &n_target, c)?;

    let next = FilterState {
        t: k,
        x_hat: corr.x_hat.clone(),
        q: corr.q,
        p_hat,
        m_hat,
        s_hat,
        n_hat,
    };
    check_finite(&next)?;
    Ok((
        next,
        StepOutput {
            tick,
            z: z.clone(),
            x_pred: corr.x_pred,
            x_hat: corr.x_hat,
            residual,
            gain: corr.gain,
            z_pred,
        },
    ))
}

/// One step of the improved (non-negative definite) filter.
pub fn update_improved(
    state: &FilterState,
    tick: u64,
    z: &Vector,
    cfg: &FilterConfig,
) -> Result<(FilterState, StepOutput)> {
    let k = state.t + 1;
    let c = weighting_coefficient(k, cfg.forgetting);
    let (x_pred, q_pred) = predict(state, cfg)?;
    let h = cfg.observation.at(tick);
    let z_pred = h.mat_vec(&x_pred)?;
    let residual = z.sub(&z_pred)?;

    let corr = correct(state, cfg, tick, &residual, x_pred, q_pred, &cfg.n_fixed)?;

    let drift = corr.x_hat.sub(&cfg.b.mat_vec(&state.x_hat)?)?;
    let p_hat = blend_vec(&state.p_hat, &drift, c)?;

    let ge = corr.gain.mat_vec(&residual)?;
    let m_hat = blend(&state.m_hat, &Matrix::outer(&ge, &ge), c)?;

    let next = FilterState {
        t: k,
        x_hat: corr.x_hat.clone(),
        q: corr.q,
        p_hat,
        m_hat,
        s_hat: Vector::zeros(state.s_hat.len()),
        n_hat: cfg.n_fixed.clone(),
    };
    check_finite(&next)?;
    Ok((
        next,
        StepOutput {
            tick,
            z: z.clone(),
            x_pred: corr.x_pred,
            x_hat: corr.x_hat,
            residual,
            gain: corr.gain,
            z_pred,
        },
    ))
}

/// A filter instance owning its state.
#[derive(Debug, Clone)]
pub struct Filter {
    cfg: FilterConfig,
    variant: Variant,
    state: FilterState,
}

impl Filter {
    pub fn new(cfg: FilterConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        let state = FilterState::initial(&cfg);
        Ok(Self {
            cfg,
            variant,
            state,
        })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Processes one measurement. On error the state is left untouched.
    pub fn step(&mut self, tick: u64, z: &Vector) -> Result<StepOutput> {
        let (next, out) = match self.variant {
            Variant::Classic => update_classic(&self.state, tick, z, &self.cfg)?,
            Variant::Improved => update_improved(&self.state, tick, z, &self.cfg)?,
        };
        self.state = next;
        Ok(out)
    }

    pub fn step_scalar(&mut self, tick: u64, z: f64) -> Result<StepOutput> {
        self.step(tick, &Vector::from(vec![z]))
    }
}

/// Filters a whole trace, failing on the first numerical error.
pub fn run(trace: &Trace, cfg: &FilterConfig, variant: Variant) -> Result<Vec<StepOutput>> {
    let (steps, failure) = run_until_failure(trace, cfg, variant)?;
    match failure {
        Some(err) => Err(err),
        None => Ok(steps),
    }
}

/// Filters a trace and keeps the outputs produced before a numerical
/// failure, returning the failure alongside them. Configuration errors are
/// still returned as `Err`.
pub fn run_until_failure(
    trace: &Trace,
    cfg: &FilterConfig,
    variant: Variant,
) -> Result<(Vec<StepOutput>, Option<Error>)> {
    if trace.is_empty() {
        return Err(Error::data("cannot filter an empty trace"));
    }
    let mut filter = Filter::new(cfg.clone(), variant)?;
    let mut out = Vec::with_capacity(trace.len());
    for m in &trace.measurements {
        match filter.step_scalar(m.t, m.z) {
            Ok(step) => out.push(step),
            Err(e) => return Ok((out, Some(e))),
        }
    }
    Ok((out, None))
}

/// Writes `t,z,x_pred1,x_pred2,x_hat1,x_hat2,e,gain1,gain2` for the
/// two-state scalar model.
pub fn write_run_csv<W: Write>(steps: &[StepOutput], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t", "z", "x_pred1", "x_pred2", "x_hat1", "x_hat2", "e", "gain1", "gain2",
    ])?;
    for s in steps {
        if s.x_hat.len() != 2 || s.z.len() != 1 {
            return Err(Error::data("run log requires the two-state scalar model"));
        }
        let g = s.gain.as_slice();
        w.write_record(&[
            s.tick.to_string(),
            s.z[0].to_string(),
            s.x_pred[0].to_string(),
            s.x_pred[1].to_string(),
            s.x_hat[0].to_string(),
            s.x_hat[1].to_string(),
            s.e().to_string(),
            g[0].to_string(),
            g[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
