//! Scalar transcription of the classic and improved filter updates.

use fdia_core::akf::{update_classic, update_improved, FilterConfig, FilterState};
use fdia_core::numerics::{Matrix, Vector};
use fdia_core::signal::SignalParams;

type M2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy)]
struct Scalar {
    x: [f64; 2],
    q: M2,
    p: [f64; 2],
    m: M2,
    s: f64,
    n: f64,
}

fn to_m2(m: &Matrix) -> M2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// `A X Aᵀ` written out.
fn sandwich(a: &M2, x: &M2) -> M2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[i][j] += a[i][k] * x[k][l] * a[j][l];
                }
            }
        }
    }
    out
}

fn oracle_step(st: &Scalar, b: &M2, u: &M2, k: u64, g: f64, omega: f64, tick: u64, z: f64,
               classic: bool, n_fixed: f64) -> Scalar {
    let c = (1.0 - g) / (1.0 - g.powi(k as i32 + 1));
    let xp = [
        b[0][0] * st.x[0] + b[0][1] * st.x[1] + u[0][0] * st.p[0] + u[0][1] * st.p[1],
        b[1][0] * st.x[0] + b[1][1] * st.x[1] + u[1][0] * st.p[0] + u[1][1] * st.p[1],
    ];
    let bqb = sandwich(b, &st.q);
    let umu = sandwich(u, &st.m);
    let qp = [
        [bqb[0][0] + umu[0][0], bqb[0][1] + umu[0][1]],
        [bqb[1][0] + umu[1][0], bqb[1][1] + umu[1][1]],
    ];
    let h = [(omega * tick as f64).cos(), -(omega * tick as f64).sin()];
    let zp = h[0] * xp[0] + h[1] * xp[1];
    let raw = z - zp;
    let e = if classic { raw - st.s } else { raw };
    let hqh = h[0] * (qp[0][0] * h[0] + qp[0][1] * h[1]) + h[1] * (qp[1][0] * h[0] + qp[1][1] * h[1]);
    let s_cov = hqh + if classic { st.n } else { n_fixed };
    let qh = [qp[0][0] * h[0] + qp[0][1] * h[1], qp[1][0] * h[0] + qp[1][1] * h[1]];
    let gain = [qh[0] / s_cov, qh[1] / s_cov];
    let xh = [xp[0] + gain[0] * e, xp[1] + gain[1] * e];
    let mut qn = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            qn[i][j] = qp[i][j] - gain[i] * (h[0] * qp[0][j] + h[1] * qp[1][j]);
        }
    }
    let off = 0.5 * (qn[0][1] + qn[1][0]);
    qn[0][1] = off;
    qn[1][0] = off;

    let bx = [
        b[0][0] * st.x[0] + b[0][1] * st.x[1],
        b[1][0] * st.x[0] + b[1][1] * st.x[1],
    ];
    let p = [
        (1.0 - c) * st.p[0] + c * (xh[0] - bx[0]),
        (1.0 - c) * st.p[1] + c * (xh[1] - bx[1]),
    ];
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let target = if classic {
                gain[i] * e * e * gain[j] + qn[i][j] - bqb[i][j]
            } else {
                gain[i] * e * e * gain[j]
            };
            m[i][j] = (1.0 - c) * st.m[i][j] + c * target;
        }
    }
    let (s, n) = if classic {
        ((1.0 - c) * st.s + c * raw, (1.0 - c) * st.n + c * (e * e - hqh))
    } else {
        (0.0, n_fixed)
    };
    Scalar { x: xh, q: qn, p, m, s, n }
}

/// Difference scaled by the larger magnitude, or absolute below 1.
fn deviation(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn worst_deviation(core: &FilterState, o: &Scalar) -> f64 {
    let q = to_m2(&core.q);
    let m = to_m2(&core.m_hat);
    let mut worst = deviation(core.s_hat[0], o.s).max(deviation(core.n_hat[(0, 0)], o.n));
    for i in 0..2 {
        worst = worst
            .max(deviation(core.x_hat[i], o.x[i]))
            .max(deviation(core.p_hat[i], o.p[i]));
        for j in 0..2 {
            worst = worst
                .max(deviation(q[i][j], o.q[i][j]))
                .max(deviation(m[i][j], o.m[i][j]));
        }
    }
    worst
}

fn config() -> FilterConfig {
    let params = SignalParams {
        omega: 0.3,
        sigma_process: 0.05,
        sigma_meas: 0.2,
        seed: 0,
    };
    let mut cfg = FilterConfig::for_signal(&params, 0.7);
    // Non-trivial dynamics so every product in the transcription matters.
    cfg.b = Matrix::from_rows(&[vec![0.99, 0.05], vec![-0.03, 0.97]]).unwrap();
    cfg.u = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.0, 0.9]]).unwrap();
    cfg.init.q0 = Matrix::from_rows(&[vec![0.8, 0.1], vec![0.1, 0.5]]).unwrap();
    cfg.init.p0 = Vector::from(vec![0.01, -0.02]);
    cfg.init.s0 = Vector::from(vec![0.05]);
    cfg
}

/// Largest deviation between the library and the transcription over three
/// consecutive updates.
pub fn three_step_deviation(classic: bool) -> f64 {
    let cfg = config();
    let omega = 0.3;
    let measurements = [(0u64, 0.71), (1, 0.52), (2, 0.18)];
    let mut core = FilterState::initial(&cfg);
    let i = &cfg.init;
    let mut oracle = Scalar {
        x: [i.x0[0], i.x0[1]],
        q: to_m2(&i.q0),
        p: [i.p0[0], i.p0[1]],
        m: to_m2(&i.m0),
        s: i.s0[0],
        n: i.n0[(0, 0)],
    };
    let (b, u) = (to_m2(&cfg.b), to_m2(&cfg.u));
    let mut worst = 0.0f64;
    for (step, &(tick, z)) in measurements.iter().enumerate() {
        let zv = Vector::from(vec![z]);
        core = if classic {
            update_classic(&core, tick, &zv, &cfg).unwrap().0
        } else {
            update_improved(&core, tick, &zv, &cfg).unwrap().0
        };
        let k = step as u64 + 1;
        oracle = oracle_step(&oracle, &b, &u, k, cfg.forgetting, omega, tick, z, classic,
                             cfg.n_fixed[(0, 0)]);
        worst = worst.max(worst_deviation(&core, &oracle));
    }
    worst
}
