//! Surrogate virtual patient: the ground-truth generator.
//!
//! The patient shares the compartmental structure of the linear model but is
//! deliberately nonlinear and time-varying, so the identified linear model is
//! mis-specified against it:
//!
//! - insulin sensitivity follows a circadian profile,
//!   `p2(t) = p2 * (1 + a * sin(2*pi*((t mod 1440) - phase)/1440))`;
//! - the bilinear glucose drain `-p2*y2` saturates as
//!   `-p2(t) * y2 / (1 + gain * y2 / U_b)`;
//! - states are clamped at zero (the physiological floor);
//! - optional i.i.d. Gaussian CGM noise is added to the glucose output.
//!
//! With amplitude, gain and noise all zero the patient reduces exactly to the
//! forward-Euler rollout of the linear model.
//!
//! The saturation shifts the fasting equilibrium, so the basal rate that
//! holds glucose at `G_b` is `U_b / (1 - gain)` rather than `U_b`; see
//! [`VirtualPatientConfig::titrated_basal`]. Scenario basal rates and the
//! initial insulin compartments use that titrated value.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compartmental::{build_linear_model, ModelParams, PatientState};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scenario::{Scenario, MINUTES_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualPatientConfig {
    pub base_params: ModelParams,
    /// Relative amplitude of the insulin-sensitivity modulation, in [0, 1).
    pub circadian_amplitude_frac: f64,
    /// Minute of day at which sensitivity peaks (sine phase reference).
    pub circadian_phase_min: f64,
    /// Saturation strength of insulin action; 0 disables it. Must be < 1.
    pub nonlinearity_gain: f64,
    /// CGM noise standard deviation [mg/dL].
    pub cgm_noise_std_mgdl: f64,
    pub seed: u64,
}

impl VirtualPatientConfig {
    pub fn validate(&self) -> Result<()> {
        self.base_params.validate()?;
        if !(0.0..1.0).contains(&self.circadian_amplitude_frac) {
            return Err(Error::InvalidConfig(format!(
                "circadian amplitude must lie in [0, 1), got {}",
                self.circadian_amplitude_frac
            )));
        }
        if !(0.0..1.0).contains(&self.nonlinearity_gain) {
            return Err(Error::InvalidConfig(format!(
                "nonlinearity gain must lie in [0, 1), got {}",
                self.nonlinearity_gain
            )));
        }
        if self.cgm_noise_std_mgdl < 0.0 {
            return Err(Error::InvalidConfig("CGM noise std must be non-negative".into()));
        }
        Ok(())
    }

    /// Basal rate holding fasting glucose at `G_b` under the saturating
    /// insulin action: `U_b / (1 - gain)`.
    pub fn titrated_basal(&self) -> f64 {
        self.base_params.u_b / (1.0 - self.nonlinearity_gain)
    }

    /// Effective insulin sensitivity at an absolute minute.
    pub fn p2_effective(&self, t_min: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI
            * ((t_min % MINUTES_PER_DAY) as f64 - self.circadian_phase_min)
            / MINUTES_PER_DAY as f64;
        self.base_params.p2 * (1.0 + self.circadian_amplitude_frac * phase.sin())
    }
}

/// Noise-free states, measured glucose and the per-minute effective p2.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrace {
    /// True state at each minute; `states[k]` precedes `inputs[k]`.
    pub states: Vec<PatientState>,
    pub measured_glucose: Vec<f64>,
    pub p2_eff: Vec<f64>,
}

const BLOWUP_GUARD: f64 = 1e6;

/// Rolls the surrogate patient over a scenario. Deterministic given the
/// config (including its noise seed).
pub fn simulate_patient(config: &VirtualPatientConfig, scenario: &Scenario) -> Result<GroundTruthTrace> {
    config.validate()?;
    let n = scenario.len_min();
    if n == 0 {
        return Err(Error::DegenerateData("empty scenario".into()));
    }
    let p = &config.base_params;
    let t = 1.0_f64;
    let model = build_linear_model(p, t)?;
    let basal = config.titrated_basal();
    let mut rng = seeded(config.seed);

    let mut y = [p.g_b, basal, basal, 0.0, 0.0];
    let mut states = Vec::with_capacity(n);
    let mut measured = Vec::with_capacity(n);
    let mut p2_eff_log = Vec::with_capacity(n);

    for (k, inp) in scenario.inputs.iter().enumerate() {
        let p2_eff = config.p2_effective(k);
        states.push(PatientState { y });
        p2_eff_log.push(p2_eff);
        let noise: f64 = rng.sample(StandardNormal);
        measured.push(y[0] + config.cgm_noise_std_mgdl * noise);

        // Same discrete arithmetic as the linear model, except that the
        // glucose row swaps the bilinear drain for the saturating,
        // circadian-modulated one. With zero amplitude and gain the two
        // coincide bit for bit.
        let mut next = [0.0_f64; 5];
        for i in 0..5 {
            let row = &model.a_d[i];
            let insulin_term = if i == 0 {
                -(t * p2_eff) * y[1] / (1.0 + config.nonlinearity_gain * y[1] / p.u_b)
            } else {
                row[1] * y[1]
            };
            next[i] = row[0] * y[0] + insulin_term + row[2] * y[2] + row[3] * y[3] + row[4] * y[4]
                + model.b_d[i][0] * inp.u
                + model.b_d[i][1] * inp.r
                + model.e_d[i];
        }
        y = [
            next[0].max(0.0),
            next[1].max(0.0),
            next[2].max(0.0),
            next[3].max(0.0),
            next[4].max(0.0),
        ];

        if y.iter().any(|v| v.abs() > BLOWUP_GUARD || !v.is_finite()) {
            return Err(Error::UnstableConfiguration(format!(
                "state exceeded {BLOWUP_GUARD:e} at minute {k}"
            )));
        }
    }

    Ok(GroundTruthTrace {
        states,
        measured_glucose: measured,
        p2_eff: p2_eff_log,
    })
}

/// Perturbs the template's physiology by independent uniform +/-`spread_frac`
/// factors on `p1..p5`, `G_b` and `U_b`, rederiving `p0` from the basal
/// identity. Each patient also receives its own noise seed from the master
/// stream.
pub fn generate_cohort(
    template: &VirtualPatientConfig,
    n_patients: usize,
    spread_frac: f64,
    seed: u64,
) -> Result<Vec<VirtualPatientConfig>> {
    template.validate()?;
    if !(0.0..1.0).contains(&spread_frac) {
        return Err(Error::InvalidConfig(format!(
            "cohort spread must lie in [0, 1), got {spread_frac}"
        )));
    }
    let mut rng = seeded(seed);
    let base = &template.base_params;
    let mut cohort = Vec::with_capacity(n_patients);
    for _ in 0..n_patients {
        let mut factor = || -> f64 {
            if spread_frac == 0.0 {
                1.0
            } else {
                rng.random_range(1.0 - spread_frac..=1.0 + spread_frac)
            }
        };
        let params = ModelParams::with_consistent_egp(
            base.p1 * factor(),
            base.p2 * factor(),
            base.p3 * factor(),
            base.p4 * factor(),
            base.p5 * factor(),
            base.g_b * factor(),
            base.u_b * factor(),
        );
        let patient_seed = rng.random::<u64>();
        cohort.push(VirtualPatientConfig {
            base_params: params,
            seed: patient_seed,
            ..template.clone()
        });
    }
    Ok(cohort)
}

/// Documented nominal adult physiology used as the cohort template.
pub fn nominal_params() -> ModelParams {
    ModelParams::with_consistent_egp(0.005, 35.0, 4.0, 50.0, 40.0, 120.0, 0.02)
}
