//! Per-channel standardization fitted on training data.
//!
//! Seven channels in fixed order: insulin `u`, carbs `r`, then the five
//! model states `y1..y5`. Means and standard deviations are pooled over every
//! timestep of every training episode (population convention). The same
//! fitted object is reused unchanged on validation and test data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Episode;

pub const N_CHANNELS: usize = 7;
/// Channel indices.
pub const CH_U: usize = 0;
pub const CH_R: usize = 1;
pub const CH_Y: usize = 2; // y1..y5 occupy 2..7

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; N_CHANNELS],
    pub std: [f64; N_CHANNELS],
    /// Channels whose std hit the floor (constant in the training data).
    #[serde(default)]
    pub floored: Vec<usize>,
}

impl Standardizer {
    /// Identity transform, handy in tests.
    pub fn identity() -> Self {
        Standardizer {
            mean: [0.0; N_CHANNELS],
            std: [1.0; N_CHANNELS],
            floored: vec![],
        }
    }

    pub fn standardize_input(&self, u: f64, r: f64) -> [f64; 2] {
        [
            (u - self.mean[CH_U]) / self.std[CH_U],
            (r - self.mean[CH_R]) / self.std[CH_R],
        ]
    }

    pub fn standardize_state(&self, y: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = (y[i] - self.mean[CH_Y + i]) / self.std[CH_Y + i];
        }
        out
    }

    pub fn destandardize_state(&self, s: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = self.mean[CH_Y + i] + self.std[CH_Y + i] * s[i];
        }
        out
    }

    pub fn standardize_glucose(&self, y1: f64) -> f64 {
        (y1 - self.mean[CH_Y]) / self.std[CH_Y]
    }

    pub fn destandardize_glucose(&self, s: f64) -> f64 {
        self.mean[CH_Y] + self.std[CH_Y] * s
    }

    pub fn y_mean(&self) -> [f64; 5] {
        self.mean[CH_Y..].try_into().unwrap()
    }

    pub fn y_std(&self) -> [f64; 5] {
        self.std[CH_Y..].try_into().unwrap()
    }
}

/// Fits channel means and stds pooled over all timesteps of the episodes.
pub fn fit_standardizer(train_eps: &[Episode]) -> Result<Standardizer> {
    if train_eps.is_empty() || train_eps.iter().all(|e| e.len() == 0) {
        return Err(Error::DegenerateData("no training data to standardize".into()));
    }
    let mut sum = [0.0_f64; N_CHANNELS];
    let mut sumsq = [0.0_f64; N_CHANNELS];
    let mut n = 0usize;
    for ep in train_eps {
        for k in 0..ep.len() {
            let row = [
                ep.inputs[k].u,
                ep.inputs[k].r,
                ep.glucose_meas[k],
                ep.aux_states[k][0],
                ep.aux_states[k][1],
                ep.aux_states[k][2],
                ep.aux_states[k][3],
            ];
            for (c, v) in row.iter().enumerate() {
                sum[c] += v;
                sumsq[c] += v * v;
            }
            n += 1;
        }
    }
    let nf = n as f64;
    let mut mean = [0.0; N_CHANNELS];
    let mut std = [0.0; N_CHANNELS];
    let mut floored = vec![];
    for c in 0..N_CHANNELS {
        mean[c] = sum[c] / nf;
        let var = (sumsq[c] / nf - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt();
        if std[c] < STD_FLOOR {
            std[c] = STD_FLOOR;
            floored.push(c);
        }
    }
    Ok(Standardizer { mean, std, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compartmental::ModelInput;

    fn episode_from_rows(rows: &[[f64; 7]]) -> Episode {
        Episode {
            inputs: rows.iter().map(|r| ModelInput { u: r[0], r: r[1] }).collect(),
            glucose_meas: rows.iter().map(|r| r[2]).collect(),
            aux_states: rows.iter().map(|r| [r[3], r[4], r[5], r[6]]).collect(),
            y0_ref: [0.0; 5],
        }
    }

    #[test]
    fn two_point_channel_population_convention() {
        let ep = episode_from_rows(&[[1.0; 7], [3.0; 7]]);
        let s = fit_standardizer(&[ep]).unwrap();
        for c in 0..N_CHANNELS {
            assert_eq!(s.mean[c], 2.0);
            assert_eq!(s.std[c], 1.0);
        }
        assert!(s.floored.is_empty());
    }

    #[test]
    fn round_trip_is_identity() {
        let ep = episode_from_rows(&[
            [0.1, 2.0, 120.0, 0.02, 0.02, 0.5, 1.0],
            [0.2, 0.0, 150.0, 0.04, 0.03, 0.2, 0.4],
            [0.0, 5.0, 90.0, 0.01, 0.02, 0.8, 1.5],
        ]);
        let s = fit_standardizer(&[ep]).unwrap();
        let y = [133.0, 0.05, 0.01, 0.7, 0.2];
        let back = s.destandardize_state(&s.standardize_state(&y));
        for i in 0..5 {
            assert!((back[i] - y[i]).abs() < 1e-12);
        }
        let [su, sr] = s.standardize_input(0.15, 3.0);
        assert!((su * s.std[CH_U] + s.mean[CH_U] - 0.15).abs() < 1e-12);
        assert!((sr * s.std[CH_R] + s.mean[CH_R] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_floored() {
        let ep = episode_from_rows(&[
            [0.02, 1.0, 120.0, 0.0, 0.0, 0.0, 0.0],
            [0.02, 2.0, 121.0, 0.0, 0.0, 0.0, 0.0],
        ]);
        let s = fit_standardizer(&[ep]).unwrap();
        assert!(s.floored.contains(&0));
        assert!(s.floored.contains(&3));
        assert_eq!(s.std[0], 1e-8);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(fit_standardizer(&[]).is_err());
    }
}
