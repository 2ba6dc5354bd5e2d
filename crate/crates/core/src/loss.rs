//! Augmented training loss and its exact gradient.
//!
//! The loss on a set of episodes combines three terms,
//! `L = alpha_D * L_D + alpha_B * L_B + alpha_A * L_A`:
//!
//! - `L_D`: mean over episodes of the per-episode mean squared standardized
//!   glucose error between network output and measurement;
//! - `L_B`: mean squared one-step residual of the network outputs against
//!   the discretized compartmental dynamics, summed over steps `0..N-2` and
//!   divided by `N`. Outputs are de-standardized to physical units before the
//!   matrices apply, and the residual is re-normalized componentwise by the
//!   state stds so the term shares the scale of `L_D`;
//! - `L_A`: the mean of three auxiliary penalties: the state loss (squared
//!   distance to the linear model's states over a random index subset), the
//!   zero loss (squared distance of the first output from the equilibrium)
//!   and the positivity loss (squared negative part of the physical states
//!   over the same subset, normalized by the state stds).
//!
//! The subset holds `ceil(xi * N)` indices drawn without replacement, fresh
//! on every loss evaluation but shared between a value and its paired
//! gradient. Gradients are exact reverse-mode derivatives, backpropagated
//! through the full rollout with no truncation.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::compartmental::{build_linear_model, equilibrium_state, simulate, ModelInput, ModelParams};
use crate::error::{Error, Result};
use crate::gru::{matvec, matvec_t_acc, outer_acc, step_into, GruParams, N_U, N_Y};
use crate::rng::PortableRng;
use crate::standardize::Standardizer;

/// One training sequence: exogenous inputs, measured glucose, and the
/// identified linear model's auxiliary states on the same inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub inputs: Vec<ModelInput>,
    /// Measured glucose [mg/dL]; `glucose_meas[k]` precedes `inputs[k]`.
    pub glucose_meas: Vec<f64>,
    /// Linear-model states `y2..y5` aligned with `glucose_meas`.
    pub aux_states: Vec<[f64; 4]>,
    /// Fasting equilibrium of the identified model, target of the zero loss.
    pub y0_ref: [f64; 5],
}

impl Episode {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.glucose_meas.len() != self.inputs.len() || self.aux_states.len() != self.inputs.len() {
            return Err(Error::ShapeMismatch(format!(
                "episode sequences disagree: {} inputs, {} glucose, {} aux",
                self.inputs.len(),
                self.glucose_meas.len(),
                self.aux_states.len()
            )));
        }
        Ok(())
    }
}

/// Builds an episode by simulating the identified model over the inputs to
/// obtain the auxiliary states.
pub fn build_episode(inputs: Vec<ModelInput>, glucose_meas: Vec<f64>, params: &ModelParams) -> Result<Episode> {
    if inputs.is_empty() {
        return Err(Error::DegenerateData("episode needs at least one sample".into()));
    }
    if glucose_meas.len() != inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs vs {} glucose samples",
            inputs.len(),
            glucose_meas.len()
        )));
    }
    let model = build_linear_model(params, 1.0)?;
    let y0 = equilibrium_state(params)?;
    let n = inputs.len();
    let sim = simulate(&model, &y0, &inputs[..n - 1]);
    let mut aux_states = Vec::with_capacity(n);
    aux_states.push([y0.y[1], y0.y[2], y0.y[3], y0.y[4]]);
    for st in &sim {
        aux_states.push([st.y[1], st.y[2], st.y[3], st.y[4]]);
    }
    Ok(Episode {
        inputs,
        glucose_meas,
        aux_states,
        y0_ref: y0.y,
    })
}

/// Loss component weights and the auxiliary subset fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_d: f64,
    pub alpha_b: f64,
    pub alpha_a: f64,
    /// Fraction of time steps in the auxiliary subset, in [0, 1].
    pub xi: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let alphas = [self.alpha_d, self.alpha_b, self.alpha_a];
        if alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if alphas.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidConfig("at least one loss weight must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::InvalidConfig(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        Ok(())
    }
}

/// Value of the augmented loss with every component broken out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_d: f64,
    pub l_b: f64,
    pub l_a: f64,
    pub l_a_state: f64,
    pub l_a_zero: f64,
    pub l_a_pos: f64,
}

/// Episode data pre-standardized for the network.
#[derive(Debug, Clone)]
pub(crate) struct PreparedEpisode {
    pub x_std: Vec<[f64; N_U]>,
    pub u_phys: Vec<[f64; N_U]>,
    pub glucose_std: Vec<f64>,
    pub aux_std: Vec<[f64; 4]>,
    pub y0_std: [f64; N_Y],
}

impl PreparedEpisode {
    pub fn len(&self) -> usize {
        self.x_std.len()
    }
}

pub(crate) fn prepare_episodes(episodes: &[Episode], std: &Standardizer) -> Result<Vec<PreparedEpisode>> {
    if episodes.is_empty() {
        return Err(Error::DegenerateData("empty episode list".into()));
    }
    episodes
        .iter()
        .map(|ep| {
            ep.validate()?;
            if ep.is_empty() {
                return Err(Error::DegenerateData("episode with zero samples".into()));
            }
            let n = ep.len();
            let mut x_std = Vec::with_capacity(n);
            let mut u_phys = Vec::with_capacity(n);
            let mut glucose_std = Vec::with_capacity(n);
            let mut aux_std = Vec::with_capacity(n);
            let y_mean = std.y_mean();
            let y_std = std.y_std();
            for k in 0..n {
                let inp = ep.inputs[k];
                x_std.push(std.standardize_input(inp.u, inp.r));
                u_phys.push([inp.u, inp.r]);
                glucose_std.push(std.standardize_glucose(ep.glucose_meas[k]));
                let mut a = [0.0; 4];
                for i in 0..4 {
                    a[i] = (ep.aux_states[k][i] - y_mean[i + 1]) / y_std[i + 1];
                }
                aux_std.push(a);
            }
            Ok(PreparedEpisode {
                x_std,
                u_phys,
                glucose_std,
                aux_std,
                y0_std: std.standardize_state(&ep.y0_ref),
            })
        })
        .collect()
}

/// Draws the auxiliary index subset for every episode: `ceil(xi * N)`
/// distinct indices, kept sorted so accumulation order is fixed.
pub fn draw_subsets(rng: &mut PortableRng, lengths: &[usize], xi: f64) -> Result<Vec<Vec<usize>>> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::InvalidConfig(format!("xi must lie in [0, 1], got {xi}")));
    }
    lengths
        .iter()
        .map(|&n| {
            let count = (xi * n as f64).ceil() as usize;
            if count == 0 {
                return Err(Error::InvalidConfig(
                    "xi = 0 leaves the auxiliary subset empty".into(),
                ));
            }
            let mut idx = sample(rng, n, count.min(n)).into_vec();
            idx.sort_unstable();
            Ok(idx)
        })
        .collect()
}

/// Mean squared standardized glucose error, averaged per episode then over
/// episodes.
pub fn data_loss(params: &GruParams, episodes: &[Episode], std: &Standardizer) -> Result<f64> {
    params.validate()?;
    let prepared = prepare_episodes(episodes, std)?;
    let mut total = 0.0;
    for ep in &prepared {
        let outputs = crate::gru::rollout(params, &ep.x_std, &crate::gru::HiddenState::zeros(params.n_hu))?;
        let mut acc = 0.0;
        for (y, t) in outputs.iter().zip(&ep.glucose_std) {
            let d = y[0] - t;
            acc += d * d;
        }
        total += acc / ep.len() as f64;
    }
    Ok(total / prepared.len() as f64)
}

/// One-step dynamics residual loss against the discretized model (T = 1).
pub fn biological_loss(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
) -> Result<f64> {
    let weights = LossWeights { alpha_d: 0.0, alpha_b: 1.0, alpha_a: 0.0, xi: 1.0 };
    let breakdown = evaluate(params, p, episodes, std, &weights, None, None)?;
    Ok(breakdown.l_b)
}

/// Auxiliary loss: (state + zero + positivity) / 3, subset drawn from `rng`.
pub fn auxiliary_loss(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    xi: f64,
    rng: &mut PortableRng,
) -> Result<f64> {
    let weights = LossWeights { alpha_d: 0.0, alpha_b: 0.0, alpha_a: 1.0, xi };
    let lengths: Vec<usize> = episodes.iter().map(|e| e.len()).collect();
    let subsets = draw_subsets(rng, &lengths, xi)?;
    let breakdown = evaluate(params, p, episodes, std, &weights, Some(&subsets), None)?;
    Ok(breakdown.l_a)
}

/// Weighted total with components `[L_D, L_B, L_A]`. Components with zero
/// weight are skipped and reported as zero.
pub fn augmented_loss(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    weights: &LossWeights,
    rng: &mut PortableRng,
) -> Result<(f64, [f64; 3])> {
    let subsets = maybe_draw(rng, episodes, weights)?;
    let b = evaluate(params, p, episodes, std, weights, subsets.as_deref(), None)?;
    Ok((b.total, [b.l_d, b.l_b, b.l_a]))
}

/// Exact gradient of the augmented loss. The subset is drawn once and shared
/// between the (discarded) value and the gradient.
pub fn gradient(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    weights: &LossWeights,
    rng: &mut PortableRng,
) -> Result<GruParams> {
    let (_, grads) = augmented_loss_and_gradient(params, p, episodes, std, weights, rng)?;
    Ok(grads)
}

/// One loss term, selectable for gradient verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTerm {
    Data,
    Biological,
    AuxState,
    AuxZero,
    AuxPositivity,
}

/// Value and exact gradient of a single loss term. Subset-dependent terms
/// consume one draw from `rng`, shared between value and gradient, so a
/// cloned generator reproduces the same term value.
pub fn loss_term_and_gradient(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    term: LossTerm,
    xi: f64,
    rng: &mut PortableRng,
) -> Result<(f64, GruParams)> {
    let (weights, aux_w) = match term {
        LossTerm::Data => (
            LossWeights { alpha_d: 1.0, alpha_b: 0.0, alpha_a: 0.0, xi },
            AUX_BUNDLE,
        ),
        LossTerm::Biological => (
            LossWeights { alpha_d: 0.0, alpha_b: 1.0, alpha_a: 0.0, xi },
            AUX_BUNDLE,
        ),
        LossTerm::AuxState => (
            LossWeights { alpha_d: 0.0, alpha_b: 0.0, alpha_a: 1.0, xi },
            [1.0, 0.0, 0.0],
        ),
        LossTerm::AuxZero => (
            LossWeights { alpha_d: 0.0, alpha_b: 0.0, alpha_a: 1.0, xi },
            [0.0, 1.0, 0.0],
        ),
        LossTerm::AuxPositivity => (
            LossWeights { alpha_d: 0.0, alpha_b: 0.0, alpha_a: 1.0, xi },
            [0.0, 0.0, 1.0],
        ),
    };
    let subsets = maybe_draw(rng, episodes, &weights)?;
    let mut grads = GruParams::zeros(params.n_hu);
    let b = evaluate_weighted(params, p, episodes, std, &weights, aux_w, subsets.as_deref(), Some(&mut grads))?;
    Ok((b.total, grads))
}

/// Loss and gradient from a single subset draw (one forward/backward pass).
pub fn augmented_loss_and_gradient(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    weights: &LossWeights,
    rng: &mut PortableRng,
) -> Result<(LossBreakdown, GruParams)> {
    let subsets = maybe_draw(rng, episodes, weights)?;
    let mut grads = GruParams::zeros(params.n_hu);
    let breakdown = evaluate(params, p, episodes, std, weights, subsets.as_deref(), Some(&mut grads))?;
    for (name, tensor) in grads.tensors() {
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok((breakdown, grads))
}

fn maybe_draw(
    rng: &mut PortableRng,
    episodes: &[Episode],
    weights: &LossWeights,
) -> Result<Option<Vec<Vec<usize>>>> {
    weights.validate()?;
    if weights.alpha_a > 0.0 {
        let lengths: Vec<usize> = episodes.iter().map(|e| e.len()).collect();
        Ok(Some(draw_subsets(rng, &lengths, weights.xi)?))
    } else {
        Ok(None)
    }
}

/// Rollout tape for one episode: everything backpropagation needs.
struct Tape {
    n: usize,
    n_hu: usize,
    /// `(n + 1) x n_hu`; row 0 is h0 = 0.
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    hc: Vec<f64>,
    /// `R_h h[k]` before gating.
    q: Vec<f64>,
    /// Standardized outputs, `n x N_Y`.
    y: Vec<f64>,
}

fn forward_tape(params: &GruParams, xs: &[[f64; N_U]]) -> Tape {
    let n = xs.len();
    let nh = params.n_hu;
    let mut tape = Tape {
        n,
        n_hu: nh,
        h: vec![0.0; (n + 1) * nh],
        r: vec![0.0; n * nh],
        z: vec![0.0; n * nh],
        hc: vec![0.0; n * nh],
        q: vec![0.0; n * nh],
        y: vec![0.0; n * N_Y],
    };
    for k in 0..n {
        let (h_prev, h_rest) = tape.h.split_at_mut((k + 1) * nh);
        let h_k = &h_prev[k * nh..];
        let h_next = &mut h_rest[..nh];
        step_into(
            params,
            &xs[k],
            h_k,
            &mut tape.r[k * nh..(k + 1) * nh],
            &mut tape.z[k * nh..(k + 1) * nh],
            &mut tape.q[k * nh..(k + 1) * nh],
            &mut tape.hc[k * nh..(k + 1) * nh],
            h_next,
        );
        let y = &mut tape.y[k * N_Y..(k + 1) * N_Y];
        matvec(&params.w_y, h_next, y, N_Y, nh);
        for (yi, b) in y.iter_mut().zip(&params.b_y) {
            *yi += b;
        }
    }
    tape
}

/// The auxiliary loss averages its three penalties.
const AUX_BUNDLE: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

fn evaluate(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    weights: &LossWeights,
    subsets: Option<&[Vec<usize>]>,
    grads: Option<&mut GruParams>,
) -> Result<LossBreakdown> {
    evaluate_weighted(params, p, episodes, std, weights, AUX_BUNDLE, subsets, grads)
}

/// Evaluates the weighted loss over episodes, optionally accumulating the
/// exact gradient. `aux_w` weights the three auxiliary penalties inside
/// `L_A`. Episodes are processed in order and reduced sequentially, so
/// results do not depend on any batching.
#[allow(clippy::too_many_arguments)]
fn evaluate_weighted(
    params: &GruParams,
    p: &ModelParams,
    episodes: &[Episode],
    std: &Standardizer,
    weights: &LossWeights,
    aux_w: [f64; 3],
    subsets: Option<&[Vec<usize>]>,
    mut grads: Option<&mut GruParams>,
) -> Result<LossBreakdown> {
    params.validate()?;
    weights.validate()?;
    let prepared = prepare_episodes(episodes, std)?;
    let model = build_linear_model(p, 1.0)?;
    if weights.alpha_a > 0.0 {
        let subs = subsets.ok_or_else(|| Error::InvalidConfig("auxiliary loss requires a subset".into()))?;
        if subs.len() != prepared.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} subsets for {} episodes",
                subs.len(),
                prepared.len()
            )));
        }
    }
    if weights.alpha_b > 0.0 {
        if let Some(ep) = prepared.iter().find(|ep| ep.len() < 2) {
            return Err(Error::DegenerateData(format!(
                "dynamics residual needs at least 2 steps, episode has {}",
                ep.len()
            )));
        }
    }

    let n_eps = prepared.len() as f64;
    let y_std = std.y_std();
    let y_mean = std.y_mean();
    // Jacobian of the normalized residual w.r.t. the standardized output:
    // M[i][j] = A_d[i][j] * std_j / std_i.
    let mut m_jac = [[0.0_f64; N_Y]; N_Y];
    for i in 0..N_Y {
        for j in 0..N_Y {
            m_jac[i][j] = model.a_d[i][j] * y_std[j] / y_std[i];
        }
    }

    let mut sum_d = 0.0;
    let mut sum_b = 0.0;
    let mut sum_a = 0.0;
    let mut sum_a_state = 0.0;
    let mut sum_a_zero = 0.0;
    let mut sum_a_pos = 0.0;

    for (e_idx, ep) in prepared.iter().enumerate() {
        let n = ep.len();
        let nf = n as f64;
        let tape = forward_tape(params, &ep.x_std);
        let subset = subsets.map(|s| s[e_idx].as_slice()).unwrap_or(&[]);

        let mut dy = if grads.is_some() {
            vec![0.0_f64; n * N_Y]
        } else {
            Vec::new()
        };
        let w_ep = 1.0 / n_eps;

        // Data term.
        if weights.alpha_d > 0.0 {
            let mut acc = 0.0;
            for k in 0..n {
                let d = tape.y[k * N_Y] - ep.glucose_std[k];
                acc += d * d;
                if !dy.is_empty() {
                    dy[k * N_Y] += w_ep * weights.alpha_d * (2.0 / nf) * d;
                }
            }
            sum_d += acc / nf;
        }

        // Dynamics residual term.
        if weights.alpha_b > 0.0 {
            let mut acc = 0.0;
            for k in 0..n - 1 {
                let g_k = destd(&tape.y[k * N_Y..], &y_mean, &y_std);
                let g_k1 = destd(&tape.y[(k + 1) * N_Y..], &y_mean, &y_std);
                let mut rho = [0.0_f64; N_Y];
                for i in 0..N_Y {
                    let mut phys = model.e_d[i]
                        + model.b_d[i][0] * ep.u_phys[k][0]
                        + model.b_d[i][1] * ep.u_phys[k][1]
                        - g_k1[i];
                    for j in 0..N_Y {
                        phys += model.a_d[i][j] * g_k[j];
                    }
                    rho[i] = phys / y_std[i];
                    acc += rho[i] * rho[i];
                }
                if !dy.is_empty() {
                    let c = w_ep * weights.alpha_b * 2.0 / nf;
                    for j in 0..N_Y {
                        let mut back = 0.0;
                        for i in 0..N_Y {
                            back += rho[i] * m_jac[i][j];
                        }
                        dy[k * N_Y + j] += c * back;
                        dy[(k + 1) * N_Y + j] -= c * rho[j];
                    }
                }
            }
            sum_b += acc / nf;
        }

        // Auxiliary terms.
        if weights.alpha_a > 0.0 {
            let m = subset.len() as f64;
            let w_state = w_ep * weights.alpha_a * aux_w[0];
            let w_zero = w_ep * weights.alpha_a * aux_w[1];
            let w_pos = w_ep * weights.alpha_a * aux_w[2];

            let mut acc_state = 0.0;
            let mut acc_pos = 0.0;
            for &k in subset {
                let g_k = destd(&tape.y[k * N_Y..], &y_mean, &y_std);
                for i in 1..N_Y {
                    let d = tape.y[k * N_Y + i] - ep.aux_std[k][i - 1];
                    acc_state += d * d;
                    if !dy.is_empty() {
                        dy[k * N_Y + i] += w_state * (2.0 / m) * d;
                    }
                    if g_k[i] < 0.0 {
                        let phi = -g_k[i] / y_std[i];
                        acc_pos += phi * phi;
                        if !dy.is_empty() {
                            dy[k * N_Y + i] += w_pos * (2.0 / m) * g_k[i] / y_std[i];
                        }
                    }
                }
            }
            let l_state = acc_state / m;
            let l_pos = acc_pos / m;

            let mut l_zero = 0.0;
            for i in 0..N_Y {
                let d = tape.y[i] - ep.y0_std[i];
                l_zero += d * d;
                if !dy.is_empty() {
                    dy[i] += w_zero * 2.0 * d;
                }
            }

            sum_a_state += l_state;
            sum_a_zero += l_zero;
            sum_a_pos += l_pos;
            sum_a += aux_w[0] * l_state + aux_w[1] * l_zero + aux_w[2] * l_pos;
        }

        if let Some(g) = grads.as_deref_mut() {
            backward_tape(params, &tape, &ep.x_std, &dy, g);
        }
    }

    let l_d = sum_d / n_eps;
    let l_b = sum_b / n_eps;
    let l_a = sum_a / n_eps;
    let total = weights.alpha_d * l_d + weights.alpha_b * l_b + weights.alpha_a * l_a;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (L_D={l_d}, L_B={l_b}, L_A={l_a})"
        )));
    }
    Ok(LossBreakdown {
        total,
        l_d,
        l_b,
        l_a,
        l_a_state: sum_a_state / n_eps,
        l_a_zero: sum_a_zero / n_eps,
        l_a_pos: sum_a_pos / n_eps,
    })
}

#[inline]
fn destd(s: &[f64], mean: &[f64; N_Y], std: &[f64; N_Y]) -> [f64; N_Y] {
    let mut out = [0.0; N_Y];
    for i in 0..N_Y {
        out[i] = mean[i] + std[i] * s[i];
    }
    out
}

/// Backpropagation through time over one episode's tape. `dy` holds the
/// already-weighted gradient of the loss w.r.t. every standardized output.
fn backward_tape(params: &GruParams, tape: &Tape, xs: &[[f64; N_U]], dy: &[f64], grads: &mut GruParams) {
    let n = tape.n;
    let nh = tape.n_hu;
    let mut carry = vec![0.0_f64; nh];
    let mut ghp = vec![0.0_f64; nh];
    let mut g_ar = vec![0.0_f64; nh];
    let mut g_az = vec![0.0_f64; nh];
    let mut g_ah = vec![0.0_f64; nh];
    let mut g_q = vec![0.0_f64; nh];

    for k in (0..n).rev() {
        let gy = &dy[k * N_Y..(k + 1) * N_Y];
        let h_k = &tape.h[k * nh..(k + 1) * nh];
        let h_next = &tape.h[(k + 1) * nh..(k + 2) * nh];
        let r = &tape.r[k * nh..(k + 1) * nh];
        let z = &tape.z[k * nh..(k + 1) * nh];
        let hc = &tape.hc[k * nh..(k + 1) * nh];
        let q = &tape.q[k * nh..(k + 1) * nh];

        // Gradient w.r.t. h[k+1]: output layer plus the recurrent carry.
        ghp.copy_from_slice(&carry);
        matvec_t_acc(&params.w_y, gy, &mut ghp, N_Y, nh);
        outer_acc(&mut grads.w_y, gy, h_next);
        for (b, g) in grads.b_y.iter_mut().zip(gy) {
            *b += g;
        }

        for i in 0..nh {
            let gz = ghp[i] * (h_k[i] - hc[i]);
            let ghc = ghp[i] * (1.0 - z[i]);
            let gah = ghc * (1.0 - hc[i] * hc[i]);
            let gr = gah * q[i];
            g_q[i] = gah * r[i];
            g_ar[i] = gr * r[i] * (1.0 - r[i]);
            g_az[i] = gz * z[i] * (1.0 - z[i]);
            g_ah[i] = gah;
        }

        outer_acc(&mut grads.w_r, &g_ar, &xs[k]);
        outer_acc(&mut grads.w_z, &g_az, &xs[k]);
        outer_acc(&mut grads.w_h, &g_ah, &xs[k]);
        outer_acc(&mut grads.r_r, &g_ar, h_k);
        outer_acc(&mut grads.r_z, &g_az, h_k);
        outer_acc(&mut grads.r_h, &g_q, h_k);
        for i in 0..nh {
            grads.b_r[i] += g_ar[i];
            grads.b_z[i] += g_az[i];
            grads.b_h[i] += g_ah[i];
        }

        for i in 0..nh {
            carry[i] = ghp[i] * z[i];
        }
        matvec_t_acc(&params.r_r, &g_ar, &mut carry, nh, nh);
        matvec_t_acc(&params.r_z, &g_az, &mut carry, nh, nh);
        matvec_t_acc(&params.r_h, &g_q, &mut carry, nh, nh);
    }
}

/// Lean rollout used by evaluation: standardized outputs for raw inputs.
pub fn predict_states(
    params: &GruParams,
    inputs: &[ModelInput],
    std: &Standardizer,
) -> Result<Vec<[f64; N_Y]>> {
    let xs: Vec<[f64; N_U]> = inputs.iter().map(|i| std.standardize_input(i.u, i.r)).collect();
    let outputs = crate::gru::rollout(params, &xs, &crate::gru::HiddenState::zeros(params.n_hu))?;
    Ok(outputs.iter().map(|s| std.destandardize_state(s)).collect())
}
