//! 5-state linear compartmental model of glucose-insulin dynamics.
//!
//! State vector `y = [y1..y5]`: blood glucose `y1` [mg/dL], insulin action
//! and absorption `y2, y3` [U/min], carbohydrate absorption `y4, y5` [g/min].
//! Inputs are exogenous insulin `u` [U] and carbohydrate intake `r` [g] per
//! sampling interval. Continuous dynamics
//!
//! ```text
//! dy/dt = A y + B u + E,    glucose output = C y
//! ```
//!
//! are discretized by forward Euler (`A_d = T*A + I`, `B_d = T*B`,
//! `E_d = T*E`) and rolled out as `y[k+1] = A_d y[k] + B_d u[k] + E_d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the basal consistency identity `p0 = p1*G_b + p2*U_b`.
pub const BASAL_CONSISTENCY_TOL: f64 = 1e-9;

/// Physiological parameter set plus the fasting basal pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Endogenous glucose production [mg/(dL·min)].
    pub p0: f64,
    /// Glucose effectiveness [1/min].
    pub p1: f64,
    /// Insulin sensitivity [mg/(dL·U)].
    pub p2: f64,
    /// Carbohydrate factor [mg/(dL·g)].
    pub p3: f64,
    /// Insulin absorption time constant [min].
    pub p4: f64,
    /// Meal absorption time constant [min].
    pub p5: f64,
    /// Basal (fasting) glucose [mg/dL].
    #[serde(rename = "G_b")]
    pub g_b: f64,
    /// Basal insulin delivery rate [U/min].
    #[serde(rename = "U_b")]
    pub u_b: f64,
}

impl ModelParams {
    /// Builds a parameter set with `p0` derived from the basal pair, so the
    /// fasting equilibrium identity holds exactly.
    pub fn with_consistent_egp(p1: f64, p2: f64, p3: f64, p4: f64, p5: f64, g_b: f64, u_b: f64) -> Self {
        ModelParams {
            p0: p1 * g_b + p2 * u_b,
            p1,
            p2,
            p3,
            p4,
            p5,
            g_b,
            u_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("p3", self.p3),
            ("p4", self.p4),
            ("p5", self.p5),
            ("G_b", self.g_b),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if !(self.p0 >= 0.0) || !self.p0.is_finite() {
            return Err(Error::InvalidParams(format!("p0 must be non-negative, got {}", self.p0)));
        }
        if !(self.u_b >= 0.0) || !self.u_b.is_finite() {
            return Err(Error::InvalidParams(format!("U_b must be non-negative, got {}", self.u_b)));
        }
        let resid = self.p0 - self.p1 * self.g_b - self.p2 * self.u_b;
        if resid.abs() > BASAL_CONSISTENCY_TOL {
            return Err(Error::InvalidParams(format!(
                "basal consistency violated: p0 - p1*G_b - p2*U_b = {resid:e}"
            )));
        }
        Ok(())
    }
}

/// One minute-resolution exogenous input sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    /// Insulin delivered during the interval [U].
    pub u: f64,
    /// Carbohydrates ingested during the interval [g].
    pub r: f64,
}

impl ModelInput {
    pub const ZERO: ModelInput = ModelInput { u: 0.0, r: 0.0 };
}

/// Full model state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub y: [f64; 5],
}

impl PatientState {
    pub fn glucose(&self) -> f64 {
        self.y[0]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.y.iter().all(|&v| v >= 0.0)
    }
}

/// Continuous matrices and their forward-Euler discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: [[f64; 5]; 5],
    pub b: [[f64; 2]; 5],
    pub e: [f64; 5],
    pub c: [f64; 5],
    pub a_d: [[f64; 5]; 5],
    pub b_d: [[f64; 2]; 5],
    pub e_d: [f64; 5],
    /// Sampling time [min].
    pub t: f64,
}

impl LinearModel {
    /// One discrete step `A_d y + B_d u + E_d`.
    pub fn step(&self, y: &[f64; 5], input: ModelInput) -> [f64; 5] {
        let mut next = [0.0; 5];
        for i in 0..5 {
            let row = &self.a_d[i];
            next[i] = row[0] * y[0] + row[1] * y[1] + row[2] * y[2] + row[3] * y[3] + row[4] * y[4]
                + self.b_d[i][0] * input.u
                + self.b_d[i][1] * input.r
                + self.e_d[i];
        }
        next
    }
}

/// Builds the continuous-time matrices and their Euler discretization.
pub fn build_linear_model(params: &ModelParams, t: f64) -> Result<LinearModel> {
    params.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParams(format!("sampling time must be positive, got {t}")));
    }
    let (p1, p2, p3, p4, p5) = (params.p1, params.p2, params.p3, params.p4, params.p5);
    let mut a = [[0.0; 5]; 5];
    a[0][0] = -p1;
    a[0][1] = -p2;
    a[0][3] = p3;
    a[1][1] = -1.0 / p4;
    a[1][2] = 1.0 / p4;
    a[2][2] = -1.0 / p4;
    a[3][3] = -1.0 / p5;
    a[3][4] = 1.0 / p5;
    a[4][4] = -1.0 / p5;

    let mut b = [[0.0; 2]; 5];
    b[2][0] = 1.0 / p4;
    b[4][1] = 1.0 / p5;

    let e = [params.p0, 0.0, 0.0, 0.0, 0.0];
    let c = [1.0, 0.0, 0.0, 0.0, 0.0];

    let mut a_d = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            a_d[i][j] = t * a[i][j] + if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut b_d = [[0.0; 2]; 5];
    for i in 0..5 {
        for j in 0..2 {
            b_d[i][j] = t * b[i][j];
        }
    }
    let mut e_d = [0.0; 5];
    for i in 0..5 {
        e_d[i] = t * e[i];
    }

    Ok(LinearModel {
        a,
        b,
        e,
        c,
        a_d,
        b_d,
        e_d,
        t,
    })
}

/// Fasting equilibrium `[G_b, U_b, U_b, 0, 0]`.
///
/// This is a fixed point of the dynamics under the constant basal input
/// `(U_b, 0)`: the insulin chain sits at `U_b`, the carb chain at zero, and
/// basal consistency makes the glucose drift vanish.
pub fn equilibrium_state(params: &ModelParams) -> Result<PatientState> {
    params.validate()?;
    Ok(PatientState {
        y: [params.g_b, params.u_b, params.u_b, 0.0, 0.0],
    })
}

/// Open-loop rollout. Returns the states at steps `1..=N` given `y0` and the
/// inputs applied during steps `0..N`.
pub fn simulate(model: &LinearModel, y0: &PatientState, inputs: &[ModelInput]) -> Vec<PatientState> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut y = y0.y;
    for &inp in inputs {
        y = model.step(&y, inp);
        out.push(PatientState { y });
    }
    out
}

/// Insulin-on-board: insulin delivered but not yet acted, `p4*(y2 + y3)` [U].
pub fn iob(state: &PatientState, params: &ModelParams) -> f64 {
    params.p4 * (state.y[1] + state.y[2])
}

/// Rate of glucose appearance in plasma, `p3*y4` [mg/(dL·min)].
pub fn ra(state: &PatientState, params: &ModelParams) -> f64 {
    params.p3 * state.y[3]
}
