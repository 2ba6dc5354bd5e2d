//! Regularized least-squares identification of the compartmental model.
//!
//! The fit minimizes the open-loop simulation error of measured glucose, the
//! mode the model is actually used in. The structure keeps that tractable:
//! the insulin and carb chains depend only on the inputs and `(p4, p5)`, and
//! with `p0` eliminated through the basal identity
//! `p0 = p1*G_b + p2*U_b` the simulated glucose deviation is linear in
//! `(p2, p3)` once `p1` is fixed:
//!
//! ```text
//! y1[k] - G_b = p2 * F2[k] + p3 * F3[k]
//! F2[k+1] = (1 - T*p1) F2[k] - T (y2[k] - U_b)
//! F3[k+1] = (1 - T*p1) F3[k] + T y4[k]
//! ```
//!
//! So the outer search runs Nelder-Mead over `log(p1, p4, p5)` from a coarse
//! grid of starts, and the inner problem is a 2x2 ridge regression of the
//! measured glucose deviation on the filtered chain responses. The ridge
//! penalizes rms-scaled coefficients, making the weight dimensionless.
//! Positivity of `p1..p5` comes from the log parameterization outside and a
//! projection floor inside. The basal pair is read from the fasting segment
//! before the first carb intake.

use crate::compartmental::{ModelInput, ModelParams};
use crate::error::{Error, Result};

/// One measured input-output sequence used for identification.
#[derive(Debug, Clone)]
pub struct Recording {
    pub inputs: Vec<ModelInput>,
    /// Measured glucose [mg/dL], aligned so `glucose[k]` precedes `inputs[k]`.
    pub glucose: Vec<f64>,
}

/// Lower bound applied to the linear parameters after the ridge solve.
const P_LIN_FLOOR: f64 = 1e-8;
/// Bounds for glucose effectiveness [1/min].
const P1_MIN: f64 = 1e-5;
const P1_MAX: f64 = 0.5;
/// Bounds for the absorption time constants [min].
const TAU_MIN: f64 = 2.0;
const TAU_MAX: f64 = 600.0;
const NM_MAX_ITERS: usize = 2000;

/// Fits `ModelParams` to recordings by ridge-regularized open-loop glucose
/// prediction error.
pub fn fit_rls(recordings: &[Recording], t: f64, ridge: f64) -> Result<ModelParams> {
    if recordings.is_empty() {
        return Err(Error::DegenerateData("no recordings provided".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParams(format!("sampling time must be positive, got {t}")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParams(format!("ridge weight must be non-negative, got {ridge}")));
    }
    for (i, rec) in recordings.iter().enumerate() {
        if rec.inputs.len() != rec.glucose.len() {
            return Err(Error::ShapeMismatch(format!(
                "recording {i}: {} inputs vs {} glucose samples",
                rec.inputs.len(),
                rec.glucose.len()
            )));
        }
        if rec.inputs.len() < 2 {
            return Err(Error::DegenerateData(format!("recording {i} has fewer than 2 samples")));
        }
    }

    let (g_b, u_b) = fasting_pair(recordings, t)?;

    let carbs_present = recordings
        .iter()
        .any(|rec| rec.inputs.iter().any(|inp| inp.r > 0.0));
    let insulin_varies = recordings.iter().any(|rec| {
        rec.inputs
            .iter()
            .any(|inp| (inp.u - rec.inputs[0].u).abs() > 1e-12)
    });
    if !carbs_present && !insulin_varies {
        return Err(Error::DegenerateData(
            "constant inputs over all recordings cannot excite the model".into(),
        ));
    }

    let objective = |x: &[f64; 3]| -> f64 {
        let p1 = x[0].exp().clamp(P1_MIN, P1_MAX.min(0.99 / t));
        let p4 = x[1].exp().clamp(TAU_MIN, TAU_MAX);
        let p5 = x[2].exp().clamp(TAU_MIN, TAU_MAX);
        match inner_ridge(recordings, t, ridge, g_b, u_b, p1, p4, p5) {
            Ok((_, j)) => j,
            Err(_) => f64::INFINITY,
        }
    };

    // Coarse grid of starts, refined by Nelder-Mead in log space.
    let p1_grid = [0.002_f64, 0.005, 0.012];
    let tau_grid = [15.0_f64, 35.0, 70.0, 140.0];
    let mut best_start = [p1_grid[0].ln(), tau_grid[0].ln(), tau_grid[0].ln()];
    let mut best_j = f64::INFINITY;
    for &p1 in &p1_grid {
        for &tau4 in &tau_grid {
            for &tau5 in &tau_grid {
                let x = [p1.ln(), tau4.ln(), tau5.ln()];
                let j = objective(&x);
                if j < best_j {
                    best_j = j;
                    best_start = x;
                }
            }
        }
    }
    if !best_j.is_finite() {
        return Err(Error::DegenerateData(
            "identification objective not finite anywhere on the start grid".into(),
        ));
    }

    let (x_opt, converged) = nelder_mead_3d(&objective, best_start, 0.4, NM_MAX_ITERS);
    if !converged {
        return Err(Error::NonConvergence(format!(
            "parameter search exceeded {NM_MAX_ITERS} iterations"
        )));
    }

    let p1 = x_opt[0].exp().clamp(P1_MIN, P1_MAX.min(0.99 / t));
    let p4 = x_opt[1].exp().clamp(TAU_MIN, TAU_MAX);
    let p5 = x_opt[2].exp().clamp(TAU_MIN, TAU_MAX);
    let (theta, _) = inner_ridge(recordings, t, ridge, g_b, u_b, p1, p4, p5)?;
    let params = ModelParams::with_consistent_egp(p1, theta[0], theta[1], p4, p5, g_b, u_b);
    params.validate()?;
    Ok(params)
}

/// Mean glucose and insulin rate over the pre-meal fasting window.
fn fasting_pair(recordings: &[Recording], t: f64) -> Result<(f64, f64)> {
    let mut g_sum = 0.0;
    let mut u_sum = 0.0;
    let mut n = 0usize;
    for rec in recordings {
        let first_carb = rec
            .inputs
            .iter()
            .position(|inp| inp.r > 0.0)
            .unwrap_or(rec.inputs.len());
        let window = first_carb.max(1).min(rec.inputs.len());
        for k in 0..window {
            g_sum += rec.glucose[k];
            u_sum += rec.inputs[k].u / t;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateData("empty fasting window".into()));
    }
    let g_b = g_sum / n as f64;
    let u_b = u_sum / n as f64;
    if !(g_b > 0.0) {
        return Err(Error::DegenerateData(format!("non-positive fasting glucose estimate {g_b}")));
    }
    Ok((g_b, u_b.max(0.0)))
}

/// Ridge regression of simulated glucose deviation on the filtered chain
/// responses for fixed `(p1, p4, p5)`. Returns `([p2, p3], objective)`.
#[allow(clippy::too_many_arguments)]
fn inner_ridge(
    recordings: &[Recording],
    t: f64,
    ridge: f64,
    g_b: f64,
    u_b: f64,
    p1: f64,
    p4: f64,
    p5: f64,
) -> Result<([f64; 2], f64)> {
    let mut gram = [[0.0_f64; 2]; 2];
    let mut rhs = [0.0_f64; 2];
    let mut m = 0usize;

    let decay1 = 1.0 - t * p1;
    // Chain and filter sweep shared by both passes.
    let sweep = |mut visit: Box<dyn FnMut(f64, f64, f64) + '_>| {
        for rec in recordings {
            let n = rec.inputs.len();
            // Chains from the fasting equilibrium, filters from zero.
            let (mut y2, mut y3, mut y4, mut y5) = (u_b, u_b, 0.0_f64, 0.0_f64);
            let (mut f2, mut f3) = (0.0_f64, 0.0_f64);
            for k in 0..n {
                visit(rec.glucose[k] - g_b, f2, f3);

                let inp = rec.inputs[k];
                f2 = decay1 * f2 - t * (y2 - u_b);
                f3 = decay1 * f3 + t * y4;
                let (d4, g4) = (1.0 - t / p4, t / p4);
                let (d5, g5) = (1.0 - t / p5, t / p5);
                let y2n = d4 * y2 + g4 * y3;
                let y3n = d4 * y3 + g4 * inp.u / t;
                let y4n = d5 * y4 + g5 * y5;
                let y5n = d5 * y5 + g5 * inp.r / t;
                y2 = y2n;
                y3 = y3n;
                y4 = y4n;
                y5 = y5n;
            }
        }
    };

    sweep(Box::new(|target, f2, f3| {
        let f = [f2, f3];
        for i in 0..2 {
            for j in 0..2 {
                gram[i][j] += f[i] * f[j];
            }
            rhs[i] += f[i] * target;
        }
        m += 1;
    }));
    if m == 0 {
        return Err(Error::DegenerateData("no samples available".into()));
    }
    let mf = m as f64;
    for i in 0..2 {
        for j in 0..2 {
            gram[i][j] /= mf;
        }
        rhs[i] /= mf;
    }

    // Ridge in rms-scaled coordinates: theta_scaled = D theta with
    // D = diag(rms of each regressor).
    let mut scale = [0.0_f64; 2];
    for i in 0..2 {
        scale[i] = gram[i][i].sqrt();
        if scale[i] < 1e-12 {
            return Err(Error::DegenerateData(
                "a regressor is constant; inputs do not excite the model".into(),
            ));
        }
    }
    let mut gram_s = [[0.0_f64; 2]; 2];
    let mut rhs_s = [0.0_f64; 2];
    for i in 0..2 {
        for j in 0..2 {
            gram_s[i][j] = gram[i][j] / (scale[i] * scale[j]);
        }
        gram_s[i][i] += ridge;
        rhs_s[i] = rhs[i] / scale[i];
    }

    let det = gram_s[0][0] * gram_s[1][1] - gram_s[0][1] * gram_s[1][0];
    if det.abs() <= 1e-14 {
        return Err(Error::DegenerateData(
            "singular normal equations: inputs do not excite the model".into(),
        ));
    }
    let theta_s = [
        (rhs_s[0] * gram_s[1][1] - rhs_s[1] * gram_s[0][1]) / det,
        (rhs_s[1] * gram_s[0][0] - rhs_s[0] * gram_s[1][0]) / det,
    ];
    let theta = [
        (theta_s[0] / scale[0]).max(P_LIN_FLOOR),
        (theta_s[1] / scale[1]).max(P_LIN_FLOOR),
    ];

    // Objective at the projected point: the residual sum is accumulated
    // directly (the expanded quadratic form cancels catastrophically near
    // a perfect fit).
    let mut sse = 0.0;
    sweep(Box::new(|target, f2, f3| {
        let resid = target - theta[0] * f2 - theta[1] * f3;
        sse += resid * resid;
    }));
    let mut penalty = 0.0;
    for i in 0..2 {
        let ts = theta[i] * scale[i];
        penalty += ts * ts;
    }
    Ok((theta, sse / mf + ridge * penalty))
}

/// Minimal Nelder-Mead in 3 dimensions. Returns the best point and whether
/// the simplex contracted below tolerance within the iteration cap.
fn nelder_mead_3d<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    start: [f64; 3],
    step: f64,
    max_iters: usize,
) -> ([f64; 3], bool) {
    const DIM: usize = 3;
    let mut pts: Vec<[f64; 3]> = vec![start; DIM + 1];
    for i in 0..DIM {
        pts[i + 1][i] += step;
    }
    let mut vals: Vec<f64> = pts.iter().map(f).collect();

    let add = |a: &[f64; 3], b: &[f64; 3], wa: f64, wb: f64| -> [f64; 3] {
        [
            wa * a[0] + wb * b[0],
            wa * a[1] + wb * b[1],
            wa * a[2] + wb * b[2],
        ]
    };

    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..=DIM).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[DIM];
        let second_worst = order[DIM - 1];

        let spread = (vals[worst] - vals[best]).abs();
        let size: f64 = (0..DIM)
            .map(|d| (pts[worst][d] - pts[best][d]).abs())
            .sum();
        if spread < 1e-13 * (1.0 + vals[best].abs()) && size < 1e-9 {
            return (pts[best], true);
        }

        let mut centroid = [0.0; 3];
        for (i, pt) in pts.iter().enumerate() {
            if i != worst {
                for d in 0..DIM {
                    centroid[d] += pt[d] / DIM as f64;
                }
            }
        }

        let reflect = add(&centroid, &pts[worst], 2.0, -1.0);
        let fr = f(&reflect);
        if fr < vals[best] {
            let expand = add(&centroid, &pts[worst], 3.0, -2.0);
            let fe = f(&expand);
            if fe < fr {
                pts[worst] = expand;
                vals[worst] = fe;
            } else {
                pts[worst] = reflect;
                vals[worst] = fr;
            }
        } else if fr < vals[second_worst] {
            pts[worst] = reflect;
            vals[worst] = fr;
        } else {
            let contract = add(&centroid, &pts[worst], 0.5, 0.5);
            let fc = f(&contract);
            if fc < vals[worst] {
                pts[worst] = contract;
                vals[worst] = fc;
            } else {
                for i in 0..=DIM {
                    if i != best {
                        pts[i] = add(&pts[best], &pts[i], 0.5, 0.5);
                        vals[i] = f(&pts[i]);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..=DIM).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    (pts[order[0]], false)
}
