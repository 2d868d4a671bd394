//! DC-model weighted least squares and chi-square bad-data detection.
//!
//! `z = Hx + e`; the estimate minimizes `g(x) = (z − Hx)ᵀ W (z − Hx)` and
//! the measurement set is declared bad when `g(x̂) > μ`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve, Matrix, Vector};

pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DcSystem {
    h: Matrix,
    weights: Vec<f64>,
    mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsResult {
    pub g_value: f64,
    pub flagged: bool,
}

/// On-disk form: `{"H": [[...]], "weights": [...], "significance": 0.01}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcSystemFile {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default = "default_significance")]
    pub significance: f64,
}

fn default_significance() -> f64 {
    DEFAULT_SIGNIFICANCE
}

impl DcSystem {
    /// Builds a system with an explicit threshold `mu`.
    pub fn new(h: Matrix, weights: Vec<f64>, mu: f64) -> Result<Self> {
        let (m, n) = h.shape();
        if m < n || n == 0 {
            return Err(Error::config(format!(
                "Jacobian must have at least as many rows as columns, got {m}x{n}"
            )));
        }
        if weights.len() != m {
            return Err(Error::config(format!(
                "expected {m} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::config("weights must be positive and finite"));
        }
        if !(mu > 0.0) {
            return Err(Error::config("chi-square threshold must be positive"));
        }
        Ok(Self { h, weights, mu })
    }

    /// Threshold from the chi-square quantile with `m − n` degrees of freedom.
    pub fn with_significance(h: Matrix, weights: Vec<f64>, significance: f64) -> Result<Self> {
        let dof = h.rows().saturating_sub(h.cols());
        if dof == 0 {
            return Err(Error::config(
                "chi-square test needs more measurements than states",
            ));
        }
        let mu = chi_square_threshold(dof, significance)?;
        Self::new(h, weights, mu)
    }

    /// Weights `1/σᵢ²` from per-channel noise levels.
    pub fn from_sigmas(h: Matrix, sigmas: &[f64], significance: f64) -> Result<Self> {
        if sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("channel sigmas must be positive"));
        }
        let weights = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
        Self::with_significance(h, weights, significance)
    }

    pub fn from_file(file: DcSystemFile) -> Result<Self> {
        let h = Matrix::from_rows(&file.h)?;
        Self::with_significance(h, file.weights, file.significance)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn measurements(&self) -> usize {
        self.h.rows()
    }

    pub fn states(&self) -> usize {
        self.h.cols()
    }

    /// Estimate, objective and flag in one go.
    pub fn evaluate(&self, z: &Vector) -> Result<(Vector, WlsResult)> {
        let x_hat = wls_estimate(self, z)?;
        let g_value = objective(self, z, &x_hat)?;
        Ok((
            x_hat,
            WlsResult {
                g_value,
                flagged: bad_data_check(g_value, self.mu),
            },
        ))
    }
}

/// Solves the normal equations `HᵀWH·x̂ = HᵀWz`.
pub fn wls_estimate(sys: &DcSystem, z: &Vector) -> Result<Vector> {
    let (m, n) = sys.h.shape();
    if z.len() != m {
        return Err(Error::data(format!("expected {m} measurements, got {}", z.len())));
    }
    let mut gain = Matrix::zeros(n, n);
    let mut rhs = Vector::zeros(n);
    for k in 0..m {
        let row = sys.h.row(k);
        let w = sys.weights[k];
        for i in 0..n {
            rhs[i] += row[i] * w * z[k];
            for j in 0..n {
                gain[(i, j)] += row[i] * w * row[j];
            }
        }
    }
    Ok(solve(&gain, &rhs)?)
}

/// `(z − Hx̂)ᵀ W (z − Hx̂)`.
pub fn objective(sys: &DcSystem, z: &Vector, x_hat: &Vector) -> Result<f64> {
    let fitted = sys.h.mat_vec(x_hat)?;
    let resid = z.sub(&fitted)?;
    Ok(resid
        .iter()
        .zip(&sys.weights)
        .map(|(r, w)| r * w * r)
        .sum())
}

/// Bad data is declared only when `g` strictly exceeds `mu`.
pub fn bad_data_check(g_value: f64, mu: f64) -> bool {
    g_value > mu
}

/// Upper-tail quantile of χ²(dof) at the given significance.
///
/// One and two degrees of freedom have closed forms (squared normal
/// quantile, and `−2 ln α`); larger dof use the Wilson–Hilferty cube
/// approximation, within 1% of the exact quantile for significance levels
/// between 0.01 and 0.5.
pub fn chi_square_threshold(dof: usize, significance: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::config("chi-square dof must be at least 1"));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::config(format!(
            "significance must be in (0, 1), got {significance}"
        )));
    }
    Ok(match dof {
        1 => normal_quantile(1.0 - significance / 2.0).powi(2),
        2 => -2.0 * significance.ln(),
        _ => {
            let k = dof as f64;
            let z = normal_quantile(1.0 - significance);
            let a = 2.0 / (9.0 * k);
            k * (1.0 - a + z * a.sqrt()).powi(3)
        }
    })
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e−9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
