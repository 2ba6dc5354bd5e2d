//! Test metrics and the cohort comparison report.
//!
//! RMSE and goodness of fit (GoF) are computed on glucose in physical units.
//! GoF per sequence:
//!
//! ```text
//! GoF = (100 / N) * sum_k (1 - |y[k] - yhat[k]| / |y[k] - mean(y)|)
//! ```
//!
//! Samples where the measurement equals the sequence mean (denominator below
//! 1e-9) are skipped and `N` reduced accordingly; the skip count is reported.
//! GoF is at most 100, reached only by exact predictions; it can be negative
//! when predictions are worse than the mean predictor.

use serde::{Deserialize, Serialize};

use crate::compartmental::{
    build_linear_model, equilibrium_state, iob, ra, simulate, ModelInput, ModelParams, PatientState,
};
use crate::error::{Error, Result};
use crate::gru::N_Y;
use crate::loss::predict_states;
use crate::patient::GroundTruthTrace;
use crate::standardize::Standardizer;

const GOF_DEGENERATE_TOL: f64 = 1e-9;

/// Root mean squared error [mg/dL].
pub fn rmse(y_meas: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_meas.is_empty() {
        return Err(Error::DegenerateData("empty sequences".into()));
    }
    if y_meas.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} measurements vs {} predictions",
            y_meas.len(),
            y_pred.len()
        )));
    }
    let acc: f64 = y_meas
        .iter()
        .zip(y_pred)
        .map(|(m, p)| (m - p) * (m - p))
        .sum();
    Ok((acc / y_meas.len() as f64).sqrt())
}

/// Goodness of fit [%] with the degenerate-sample skip rule. Returns the
/// value and the number of skipped samples.
pub fn gof_with_skips(y_meas: &[f64], y_pred: &[f64]) -> Result<(f64, usize)> {
    if y_meas.is_empty() {
        return Err(Error::DegenerateData("empty sequences".into()));
    }
    if y_meas.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} measurements vs {} predictions",
            y_meas.len(),
            y_pred.len()
        )));
    }
    let mean = y_meas.iter().sum::<f64>() / y_meas.len() as f64;
    let mut acc = 0.0;
    let mut counted = 0usize;
    for (m, p) in y_meas.iter().zip(y_pred) {
        let denom = (m - mean).abs();
        if denom < GOF_DEGENERATE_TOL {
            continue;
        }
        acc += 1.0 - (m - p).abs() / denom;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::DegenerateData(
            "constant measurement sequence leaves no valid GoF samples".into(),
        ));
    }
    Ok((100.0 * acc / counted as f64, y_meas.len() - counted))
}

pub fn gof(y_meas: &[f64], y_pred: &[f64]) -> Result<f64> {
    gof_with_skips(y_meas, y_pred).map(|(v, _)| v)
}

/// Linear interpolation between order statistics; `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// One trained model to evaluate: the network with its standardizer plus the
/// identified linear model it was trained against.
#[derive(Debug, Clone)]
pub struct PatientModel {
    pub id: String,
    pub gru: crate::gru::GruParams,
    pub standardizer: Standardizer,
    pub linear_params: ModelParams,
}

/// Held-out data for one patient.
#[derive(Debug, Clone)]
pub struct PatientTestData {
    pub inputs: Vec<ModelInput>,
    pub trace: GroundTruthTrace,
    /// The virtual patient's actual physiology, used for true IOB/Ra.
    pub true_params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub id: String,
    pub rmse_birnn_mgdl: f64,
    pub rmse_linear_mgdl: f64,
    pub gof_birnn_pct: f64,
    pub gof_linear_pct: f64,
    pub gof_skipped_birnn: usize,
    pub gof_skipped_linear: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Quartiles {
    fn of(values: &[f64]) -> Self {
        Quartiles {
            median: percentile(values, 0.5),
            p25: percentile(values, 0.25),
            p75: percentile(values, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub rmse_birnn_mgdl: Quartiles,
    pub rmse_linear_mgdl: Quartiles,
    pub gof_birnn_pct: Quartiles,
    pub gof_linear_pct: Quartiles,
    pub percentile_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub patients: Vec<PatientMetrics>,
    pub cohort: CohortSummary,
    /// Patients where the network beats the linear baseline on GoF.
    pub birnn_gof_wins: usize,
}

/// Per-minute traces for one patient, ready for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientTraces {
    pub glucose_true: Vec<f64>,
    pub glucose_birnn: Vec<f64>,
    pub glucose_linear: Vec<f64>,
    pub iob_true: Vec<f64>,
    pub iob_birnn: Vec<f64>,
    pub iob_linear: Vec<f64>,
    pub ra_true: Vec<f64>,
    pub ra_birnn: Vec<f64>,
    pub ra_linear: Vec<f64>,
}

/// Open-loop comparison of the network and the linear baseline on one
/// patient's test data.
pub fn evaluate_patient(model: &PatientModel, data: &PatientTestData) -> Result<(PatientMetrics, PatientTraces)> {
    let n = data.inputs.len();
    if data.trace.measured_glucose.len() != n || data.trace.states.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "trace length {} vs {} inputs",
            data.trace.measured_glucose.len(),
            n
        )));
    }

    // Network prediction in physical units; output k estimates the state at
    // time k, matching the training alignment.
    let birnn_states = predict_states(&model.gru, &data.inputs, &model.standardizer)?;

    // Linear baseline from its own equilibrium.
    let lin_model = build_linear_model(&model.linear_params, 1.0)?;
    let y0 = equilibrium_state(&model.linear_params)?;
    let sim = simulate(&lin_model, &y0, &data.inputs[..n - 1]);
    let mut linear_states: Vec<PatientState> = Vec::with_capacity(n);
    linear_states.push(y0);
    linear_states.extend(sim);

    let meas = &data.trace.measured_glucose;
    let glucose_birnn: Vec<f64> = birnn_states.iter().map(|s| s[0]).collect();
    let glucose_linear: Vec<f64> = linear_states.iter().map(|s| s.y[0]).collect();

    let rmse_birnn = rmse(meas, &glucose_birnn)?;
    let rmse_linear = rmse(meas, &glucose_linear)?;
    let (gof_birnn, sk_b) = gof_with_skips(meas, &glucose_birnn)?;
    let (gof_linear, sk_l) = gof_with_skips(meas, &glucose_linear)?;

    let to_state = |s: &[f64; N_Y]| PatientState { y: *s };
    let traces = PatientTraces {
        glucose_true: meas.clone(),
        glucose_birnn,
        glucose_linear,
        iob_true: data.trace.states.iter().map(|s| iob(s, &data.true_params)).collect(),
        iob_birnn: birnn_states.iter().map(|s| iob(&to_state(s), &model.linear_params)).collect(),
        iob_linear: linear_states.iter().map(|s| iob(s, &model.linear_params)).collect(),
        ra_true: data.trace.states.iter().map(|s| ra(s, &data.true_params)).collect(),
        ra_birnn: birnn_states.iter().map(|s| ra(&to_state(s), &model.linear_params)).collect(),
        ra_linear: linear_states.iter().map(|s| ra(s, &model.linear_params)).collect(),
    };

    Ok((
        PatientMetrics {
            id: model.id.clone(),
            rmse_birnn_mgdl: rmse_birnn,
            rmse_linear_mgdl: rmse_linear,
            gof_birnn_pct: gof_birnn,
            gof_linear_pct: gof_linear,
            gof_skipped_birnn: sk_b,
            gof_skipped_linear: sk_l,
        },
        traces,
    ))
}

/// Evaluates every patient and aggregates the cohort summary. Models and
/// data are matched positionally.
pub fn evaluate_cohort(
    models: &[PatientModel],
    test_data: &[PatientTestData],
    config_hash: Option<String>,
) -> Result<(EvalReport, Vec<PatientTraces>)> {
    if models.len() != test_data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models vs {} test datasets",
            models.len(),
            test_data.len()
        )));
    }
    if models.is_empty() {
        return Err(Error::DegenerateData("empty cohort".into()));
    }
    let mut patients = Vec::with_capacity(models.len());
    let mut traces = Vec::with_capacity(models.len());
    for (model, data) in models.iter().zip(test_data) {
        let (metrics, trace) = evaluate_patient(model, data)?;
        patients.push(metrics);
        traces.push(trace);
    }

    let collect = |f: fn(&PatientMetrics) -> f64| -> Vec<f64> { patients.iter().map(f).collect() };
    let cohort = CohortSummary {
        rmse_birnn_mgdl: Quartiles::of(&collect(|p| p.rmse_birnn_mgdl)),
        rmse_linear_mgdl: Quartiles::of(&collect(|p| p.rmse_linear_mgdl)),
        gof_birnn_pct: Quartiles::of(&collect(|p| p.gof_birnn_pct)),
        gof_linear_pct: Quartiles::of(&collect(|p| p.gof_linear_pct)),
        percentile_method: "linear-interpolation".to_string(),
    };
    let birnn_gof_wins = patients
        .iter()
        .filter(|p| p.gof_birnn_pct > p.gof_linear_pct)
        .count();

    Ok((
        EvalReport {
            config_hash,
            patients,
            cohort,
            birnn_gof_wins,
        },
        traces,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        let y = vec![100.0, 120.0, 140.0];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);

        let offset: Vec<f64> = y.iter().map(|v| v + 7.5).collect();
        assert!((rmse(&y, &offset).unwrap() - 7.5).abs() < 1e-12);

        // Residuals [3, 4] -> sqrt((9 + 16) / 2) = sqrt(12.5).
        let meas = vec![10.0, 10.0];
        let pred = vec![13.0, 6.0];
        assert!((rmse(&meas, &pred).unwrap() - 12.5_f64.sqrt()).abs() < 1e-12);

        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_scales_linearly_with_residuals() {
        let y = vec![0.0; 4];
        let r = vec![1.0, -2.0, 3.0, -4.0];
        let r2: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        let a = rmse(&y, &r).unwrap();
        let b = rmse(&y, &r2).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn gof_perfect_and_mean_predictions() {
        let y = vec![100.0, 120.0, 140.0, 90.0];
        assert_eq!(gof(&y, &y).unwrap(), 100.0);

        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mean_pred = vec![mean; y.len()];
        assert_eq!(gof(&y, &mean_pred).unwrap(), 0.0);
    }

    #[test]
    fn gof_skips_degenerate_samples() {
        // Middle sample equals the mean (130) and is skipped; remaining two
        // terms give 100 * (1/2) * ((1 - 10/30) + 1) = 83.33..
        let y = vec![100.0, 130.0, 160.0];
        let pred = vec![110.0, 500.0, 160.0];
        let (g, skipped) = gof_with_skips(&y, &pred).unwrap();
        assert_eq!(skipped, 1);
        assert!((g - 100.0 * (5.0 / 6.0)).abs() < 1e-9, "{g}");

        let constant = vec![100.0; 5];
        assert!(gof(&constant, &constant).is_err());
    }

    #[test]
    fn gof_is_bounded_by_100_and_exactness() {
        let y = vec![80.0, 120.0, 160.0, 100.0];
        let mut rng = crate::rng::seeded(2);
        use rand::Rng;
        for _ in 0..200 {
            let pred: Vec<f64> = y.iter().map(|v| v + rng.random_range(-50.0..50.0)).collect();
            let g = gof(&y, &pred).unwrap();
            assert!(g <= 100.0);
            if (g - 100.0).abs() < 1e-12 {
                for (a, b) in y.iter().zip(&pred) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.25), 1.75);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&[5.0], 0.5), 5.0);
    }

    #[test]
    fn singleton_cohort_median_is_the_patient() {
        let q = Quartiles::of(&[42.5]);
        assert_eq!(q.median, 42.5);
        assert_eq!(q.p25, 42.5);
        assert_eq!(q.p75, 42.5);
    }
}
