//! Full-batch Adam training with validation-based early stopping.
//!
//! Each iteration evaluates the augmented loss and its gradient over all
//! training episodes (fresh auxiliary subset per evaluation), clips the
//! gradient at a global norm of 10, and applies one Adam update. Every
//! `kappa_val` iterations the standardized glucose MSE is computed on the
//! validation set; the parameters are stored whenever it improves, and
//! training stops after `rho_val` consecutive non-improving checks or at
//! `kappa_max` iterations. The stored best is returned.

use serde::{Deserialize, Serialize};

use crate::compartmental::ModelParams;
use crate::error::{Error, Result};
use crate::gru::{init_params, GruParams};
use crate::loss::{augmented_loss_and_gradient, data_loss, Episode, LossWeights};
use crate::rng::seeded;
use crate::standardize::{fit_standardizer, Standardizer};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate.
    pub eta: f64,
    /// Maximum number of iterations.
    pub kappa_max: usize,
    /// Validation interval in iterations.
    pub kappa_val: usize,
    /// Early-stopping patience in failed validation checks.
    pub rho_val: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub n_hu: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.kappa_val == 0 || self.kappa_val > self.kappa_max {
            return Err(Error::InvalidConfig(format!(
                "kappa_val must lie in [1, kappa_max], got {} vs {}",
                self.kappa_val, self.kappa_max
            )));
        }
        if self.rho_val == 0 {
            return Err(Error::InvalidConfig("rho_val must be >= 1".into()));
        }
        if self.n_hu == 0 {
            return Err(Error::InvalidConfig("n_hu must be >= 1".into()));
        }
        self.weights.validate()
    }
}

impl Default for TrainConfig {
    /// Published defaults: eta 0.01, 500 iterations, validation every 5,
    /// patience 20, weights [0.5, 0.25, 0.25], xi 0.5, 96 hidden units.
    fn default() -> Self {
        TrainConfig {
            eta: 0.01,
            kappa_max: 500,
            kappa_val: 5,
            rho_val: 20,
            weights: LossWeights {
                alpha_d: 0.5,
                alpha_b: 0.25,
                alpha_a: 0.25,
                xi: 0.5,
            },
            seed: 42,
            n_hu: 96,
        }
    }
}

/// One history row per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub l_d: f64,
    pub l_b: f64,
    pub l_a: f64,
    /// Present on validation-check iterations.
    pub val_mse: Option<f64>,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: GruParams,
    pub best_iter: usize,
    pub best_val_mse: f64,
    pub history: Vec<HistoryRow>,
    pub standardizer: Standardizer,
    /// True when the patience rule ended training before `kappa_max`.
    pub early_stopped: bool,
}

struct Adam {
    m: GruParams,
    v: GruParams,
    step: usize,
}

impl Adam {
    fn new(n_hu: usize) -> Self {
        Adam {
            m: GruParams::zeros(n_hu),
            v: GruParams::zeros(n_hu),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut GruParams, grads: &GruParams, eta: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= eta * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Scales the gradient down to `GRAD_CLIP_NORM` when its global norm exceeds
/// it. Returns whether clipping was applied.
fn clip_global_norm(grads: &mut GruParams) -> bool {
    let mut sq = 0.0;
    for (_, t) in grads.tensors() {
        for v in t {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > GRAD_CLIP_NORM {
        let scale = GRAD_CLIP_NORM / norm;
        for (_, t) in grads.tensors_mut() {
            for v in t.iter_mut() {
                *v *= scale;
            }
        }
        true
    } else {
        false
    }
}

/// Trains a network against the identified model `p`. The standardizer is
/// fitted on the training episodes only and reused for validation.
pub fn train(
    config: &TrainConfig,
    train_eps: &[Episode],
    val_eps: &[Episode],
    p: &ModelParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_eps.is_empty() || val_eps.is_empty() {
        return Err(Error::DegenerateData("training and validation sets must be non-empty".into()));
    }
    let standardizer = fit_standardizer(train_eps)?;
    let mut params = init_params(config.n_hu, config.seed)?;
    // Subset draws use their own stream, decoupled from weight init.
    let mut rng = seeded(config.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut adam = Adam::new(config.n_hu);

    let mut history = Vec::with_capacity(config.kappa_max);
    let mut best: Option<GruParams> = None;
    let mut best_iter = 0usize;
    let mut best_val = f64::INFINITY;
    let mut failed_checks = 0usize;
    let mut early_stopped = false;

    for iter in 1..=config.kappa_max {
        let step = augmented_loss_and_gradient(&params, p, train_eps, &standardizer, &config.weights, &mut rng);
        let (breakdown, mut grads) = match step {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { at_iter: iter }),
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged { at_iter: iter });
        }
        let clipped = clip_global_norm(&mut grads);
        adam.update(&mut params, &grads, config.eta);

        let mut row = HistoryRow {
            iter,
            loss: breakdown.total,
            l_d: breakdown.l_d,
            l_b: breakdown.l_b,
            l_a: breakdown.l_a,
            val_mse: None,
            clipped,
        };

        if iter % config.kappa_val == 0 {
            let val = data_loss(&params, val_eps, &standardizer)?;
            row.val_mse = Some(val);
            if val.is_finite() && val < best_val {
                best_val = val;
                best = Some(params.clone());
                best_iter = iter;
                failed_checks = 0;
            } else {
                failed_checks += 1;
                if failed_checks >= config.rho_val {
                    history.push(row);
                    early_stopped = true;
                    break;
                }
            }
        }
        history.push(row);
    }

    let best = best.ok_or(Error::Diverged { at_iter: history.len() })?;
    Ok(TrainOutcome {
        best,
        best_iter,
        best_val_mse: best_val,
        history,
        standardizer,
        early_stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compartmental::ModelInput;
    use crate::patient::nominal_params;

    /// Flat episode with a constant glucose target in physical units.
    fn flat_episode(n: usize, glucose: f64, carb: f64) -> Episode {
        let mut inputs = vec![ModelInput { u: 0.02, r: 0.0 }; n];
        // A little input variety so channels are not all constant.
        for k in (0..n).step_by(7) {
            inputs[k].r = carb;
        }
        Episode {
            inputs,
            glucose_meas: (0..n).map(|k| glucose + (k % 3) as f64).collect(),
            aux_states: (0..n).map(|k| [0.02, 0.02, (k % 5) as f64 * 0.1, 0.0]).collect(),
            y0_ref: [glucose, 0.02, 0.02, 0.0, 0.0],
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            eta: 0.01,
            kappa_max: 40,
            kappa_val: 5,
            rho_val: 3,
            weights: LossWeights { alpha_d: 1.0, alpha_b: 0.0, alpha_a: 0.0, xi: 0.5 },
            seed: 7,
            n_hu: 6,
        }
    }

    #[test]
    fn defaults_match_published_values() {
        let c = TrainConfig::default();
        assert_eq!(c.eta, 0.01);
        assert_eq!(c.kappa_max, 500);
        assert_eq!(c.kappa_val, 5);
        assert_eq!(c.rho_val, 20);
        assert_eq!(c.weights.alpha_d, 0.5);
        assert_eq!(c.weights.alpha_b, 0.25);
        assert_eq!(c.weights.alpha_a, 0.25);
        assert_eq!(c.weights.xi, 0.5);
        assert_eq!(c.n_hu, 96);
        c.validate().unwrap();
    }

    #[test]
    fn training_is_deterministic() {
        let p = nominal_params();
        let config = quick_config();
        let train_eps = [flat_episode(60, 120.0, 20.0)];
        let val_eps = [flat_episode(40, 121.0, 15.0)];
        let a = train(&config, &train_eps, &val_eps, &p).unwrap();
        let b = train(&config, &train_eps, &val_eps, &p).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_iter, b.best_iter);
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let p = nominal_params();
        let mut config = quick_config();
        config.kappa_max = 120;
        config.rho_val = 24;
        let train_eps = [flat_episode(80, 120.0, 25.0)];
        let val_eps = [flat_episode(80, 120.0, 25.0)];
        let out = train(&config, &train_eps, &val_eps, &p).unwrap();
        let first = out.history.first().unwrap().loss;
        let last_losses: Vec<f64> = out.history.iter().rev().take(5).map(|r| r.loss).collect();
        let avg_last = last_losses.iter().sum::<f64>() / last_losses.len() as f64;
        assert!(avg_last < first, "loss did not decrease: {first} -> {avg_last}");
    }

    #[test]
    fn best_attains_minimum_logged_validation_mse() {
        let p = nominal_params();
        let config = quick_config();
        let train_eps = [flat_episode(60, 120.0, 20.0)];
        let val_eps = [flat_episode(40, 118.0, 10.0)];
        let out = train(&config, &train_eps, &val_eps, &p).unwrap();
        let min_logged = out
            .history
            .iter()
            .filter_map(|r| r.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mse, min_logged);
        // The stored parameters reproduce that MSE exactly.
        let recomputed = data_loss(&out.best, &val_eps, &out.standardizer).unwrap();
        assert_eq!(recomputed, out.best_val_mse);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let p = nominal_params();
        let config = quick_config();
        let eps = [flat_episode(30, 120.0, 20.0)];
        assert!(train(&config, &[], &eps, &p).is_err());
        assert!(train(&config, &eps, &[], &p).is_err());
    }

    #[test]
    fn divergent_learning_rate_reports_divergence() {
        let p = nominal_params();
        let mut config = quick_config();
        // Absurd learning rate overflows the squared error within two steps.
        config.eta = 1e200;
        config.kappa_max = 30;
        let train_eps = [flat_episode(30, 120.0, 20.0)];
        let val_eps = [flat_episode(30, 120.0, 20.0)];
        match train(&config, &train_eps, &val_eps, &p) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
