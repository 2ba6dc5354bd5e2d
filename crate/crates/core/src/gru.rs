//! Single-layer GRU state-space network with a fully connected output layer.
//!
//! Gates and state update:
//!
//! ```text
//! r[k] = sigmoid(W_r u[k] + R_r h[k] + b_r)
//! z[k] = sigmoid(W_z u[k] + R_z h[k] + b_z)
//! hc[k] = tanh(W_h u[k] + r[k] .* (R_h h[k]) + b_h)
//! h[k+1] = (1 - z[k]) .* hc[k] + z[k] .* h[k]
//! y[k] = W_y h[k+1] + b_y
//! ```
//!
//! Inputs are the standardized `(insulin, carbs)` pair, outputs the five
//! standardized model states. Matrices are stored row-major in flat `Vec`s;
//! the training loop leans on the small matvec kernels at the bottom of this
//! module.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Network input width: insulin and carbs.
pub const N_U: usize = 2;
/// Network output width: the five model states.
pub const N_Y: usize = 5;

/// Identifier of the initialization scheme stored in checkpoints.
pub const INIT_SCHEME: &str = "glorot-uniform-io/uniform-recurrent-invsqrt";

/// All learnable parameters. Also reused as the gradient container, since a
/// gradient has exactly this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub n_hu: usize,
    /// Input weights, `n_hu x 2` row-major.
    pub w_r: Vec<f64>,
    pub w_z: Vec<f64>,
    pub w_h: Vec<f64>,
    /// Recurrent weights, `n_hu x n_hu` row-major.
    pub r_r: Vec<f64>,
    pub r_z: Vec<f64>,
    pub r_h: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_h: Vec<f64>,
    /// Output weights, `5 x n_hu` row-major.
    pub w_y: Vec<f64>,
    pub b_y: Vec<f64>,
}

impl GruParams {
    pub fn zeros(n_hu: usize) -> Self {
        GruParams {
            n_hu,
            w_r: vec![0.0; n_hu * N_U],
            w_z: vec![0.0; n_hu * N_U],
            w_h: vec![0.0; n_hu * N_U],
            r_r: vec![0.0; n_hu * n_hu],
            r_z: vec![0.0; n_hu * n_hu],
            r_h: vec![0.0; n_hu * n_hu],
            b_r: vec![0.0; n_hu],
            b_z: vec![0.0; n_hu],
            b_h: vec![0.0; n_hu],
            w_y: vec![0.0; N_Y * n_hu],
            b_y: vec![0.0; N_Y],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_hu;
        if n == 0 {
            return Err(Error::ShapeMismatch("n_hu must be >= 1".into()));
        }
        let shapes = [
            ("w_r", self.w_r.len(), n * N_U),
            ("w_z", self.w_z.len(), n * N_U),
            ("w_h", self.w_h.len(), n * N_U),
            ("r_r", self.r_r.len(), n * n),
            ("r_z", self.r_z.len(), n * n),
            ("r_h", self.r_h.len(), n * n),
            ("b_r", self.b_r.len(), n),
            ("b_z", self.b_z.len(), n),
            ("b_h", self.b_h.len(), n),
            ("w_y", self.w_y.len(), N_Y * n),
            ("b_y", self.b_y.len(), N_Y),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: {got} entries, expected {want}")));
            }
        }
        for (name, tensor) in self.tensors() {
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {name}")));
            }
        }
        Ok(())
    }

    /// Named views over every tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &Vec<f64>); 11] {
        [
            ("w_r", &self.w_r),
            ("w_z", &self.w_z),
            ("w_h", &self.w_h),
            ("r_r", &self.r_r),
            ("r_z", &self.r_z),
            ("r_h", &self.r_h),
            ("b_r", &self.b_r),
            ("b_z", &self.b_z),
            ("b_h", &self.b_h),
            ("w_y", &self.w_y),
            ("b_y", &self.b_y),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 11] {
        [
            ("w_r", &mut self.w_r),
            ("w_z", &mut self.w_z),
            ("w_h", &mut self.w_h),
            ("r_r", &mut self.r_r),
            ("r_z", &mut self.r_z),
            ("r_h", &mut self.r_h),
            ("b_r", &mut self.b_r),
            ("b_z", &mut self.b_z),
            ("b_h", &mut self.b_h),
            ("w_y", &mut self.w_y),
            ("b_y", &mut self.b_y),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Hidden state of the recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

impl HiddenState {
    pub fn zeros(n_hu: usize) -> Self {
        HiddenState(vec![0.0; n_hu])
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One GRU step followed by the output layer.
pub fn gru_cell(params: &GruParams, input: &[f64; N_U], h: &HiddenState) -> Result<(HiddenState, [f64; N_Y])> {
    params.validate()?;
    if h.0.len() != params.n_hu {
        return Err(Error::ShapeMismatch(format!(
            "hidden state has {} entries, expected {}",
            h.0.len(),
            params.n_hu
        )));
    }
    let n = params.n_hu;
    let mut pre_r = vec![0.0; n];
    let mut pre_z = vec![0.0; n];
    let mut rh = vec![0.0; n];
    let mut pre_h = vec![0.0; n];
    let mut h_next = vec![0.0; n];

    step_into(
        params,
        input,
        &h.0,
        &mut pre_r,
        &mut pre_z,
        &mut rh,
        &mut pre_h,
        &mut h_next,
    );

    let mut y = [0.0; N_Y];
    matvec(&params.w_y, &h_next, &mut y, N_Y, n);
    for (yi, b) in y.iter_mut().zip(&params.b_y) {
        *yi += b;
    }
    Ok((HiddenState(h_next), y))
}

/// Core step shared by `gru_cell` and the training tape. On return the
/// buffers hold the gate activations `r`, `z`, the product `R_h h`, the
/// candidate `hc` and the next hidden state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_into(
    params: &GruParams,
    input: &[f64; N_U],
    h: &[f64],
    r: &mut [f64],
    z: &mut [f64],
    rh: &mut [f64],
    hc: &mut [f64],
    h_next: &mut [f64],
) {
    let n = params.n_hu;
    matvec(&params.r_r, h, r, n, n);
    matvec(&params.r_z, h, z, n, n);
    matvec(&params.r_h, h, rh, n, n);
    for i in 0..n {
        let wr = params.w_r[i * N_U] * input[0] + params.w_r[i * N_U + 1] * input[1];
        let wz = params.w_z[i * N_U] * input[0] + params.w_z[i * N_U + 1] * input[1];
        let wh = params.w_h[i * N_U] * input[0] + params.w_h[i * N_U + 1] * input[1];
        r[i] = sigmoid(wr + r[i] + params.b_r[i]);
        z[i] = sigmoid(wz + z[i] + params.b_z[i]);
        hc[i] = (wh + r[i] * rh[i] + params.b_h[i]).tanh();
        h_next[i] = (1.0 - z[i]) * hc[i] + z[i] * h[i];
    }
}

/// Open-loop rollout from `h0`, returning the output at every step.
pub fn rollout(params: &GruParams, inputs: &[[f64; N_U]], h0: &HiddenState) -> Result<Vec<[f64; N_Y]>> {
    params.validate()?;
    if inputs.is_empty() {
        return Err(Error::DegenerateData("empty input sequence".into()));
    }
    if h0.0.len() != params.n_hu {
        return Err(Error::ShapeMismatch(format!(
            "hidden state has {} entries, expected {}",
            h0.0.len(),
            params.n_hu
        )));
    }
    let n = params.n_hu;
    let mut h = h0.0.clone();
    let mut h_next = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rh = vec![0.0; n];
    let mut hc = vec![0.0; n];
    let mut out = Vec::with_capacity(inputs.len());
    for input in inputs {
        step_into(params, input, &h, &mut r, &mut z, &mut rh, &mut hc, &mut h_next);
        std::mem::swap(&mut h, &mut h_next);
        let mut y = [0.0; N_Y];
        matvec(&params.w_y, &h, &mut y, N_Y, n);
        for (yi, b) in y.iter_mut().zip(&params.b_y) {
            *yi += b;
        }
        out.push(y);
    }
    Ok(out)
}

/// Seeded initialization: Glorot-uniform input and output weights, uniform
/// recurrent weights scaled by `1/sqrt(n_hu)`, zero biases.
pub fn init_params(n_hu: usize, seed: u64) -> Result<GruParams> {
    if n_hu == 0 {
        return Err(Error::ShapeMismatch("n_hu must be >= 1".into()));
    }
    let mut rng = seeded(seed);
    let mut params = GruParams::zeros(n_hu);

    let a_in = (6.0 / (N_U + n_hu) as f64).sqrt();
    let a_rec = 1.0 / (n_hu as f64).sqrt();
    let a_out = (6.0 / (n_hu + N_Y) as f64).sqrt();

    let fill = |tensor: &mut [f64], bound: f64, rng: &mut crate::rng::PortableRng| {
        for v in tensor.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    };
    fill(&mut params.w_r, a_in, &mut rng);
    fill(&mut params.w_z, a_in, &mut rng);
    fill(&mut params.w_h, a_in, &mut rng);
    fill(&mut params.r_r, a_rec, &mut rng);
    fill(&mut params.r_z, a_rec, &mut rng);
    fill(&mut params.r_h, a_rec, &mut rng);
    fill(&mut params.w_y, a_out, &mut rng);
    Ok(params)
}

// Dense kernels. Matrices are row-major `rows x cols`.

#[inline]
pub(crate) fn matvec(mat: &[f64], x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, row) in out.iter_mut().zip(mat.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (m, xv) in row.iter().zip(x) {
            acc += m * xv;
        }
        *o = acc;
    }
}

/// `out += mat^T * x`, accumulating row by row so access stays sequential.
#[inline]
pub(crate) fn matvec_t_acc(mat: &[f64], x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (xi, row) in x.iter().zip(mat.chunks_exact(cols)) {
        if *xi != 0.0 {
            for (o, m) in out.iter_mut().zip(row) {
                *o += xi * m;
            }
        }
    }
}

/// Rank-1 update `grad += a * b^T`.
#[inline]
pub(crate) fn outer_acc(grad: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(grad.len(), a.len() * b.len());
    for (ai, row) in a.iter().zip(grad.chunks_exact_mut(b.len())) {
        if *ai != 0.0 {
            for (g, bv) in row.iter_mut().zip(b) {
                *g += ai * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the gate equations, scalar by scalar. Kept
    /// free of the shared kernels so it can serve as an independent oracle.
    pub(crate) fn scalar_reference_cell(
        p: &GruParams,
        u: &[f64; N_U],
        h: &[f64],
    ) -> (Vec<f64>, [f64; N_Y]) {
        let n = p.n_hu;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h_next = vec![0.0; n];
        for i in 0..n {
            let mut ar = p.b_r[i];
            let mut az = p.b_z[i];
            let mut ah = p.b_h[i];
            for j in 0..N_U {
                ar += p.w_r[i * N_U + j] * u[j];
                az += p.w_z[i * N_U + j] * u[j];
                ah += p.w_h[i * N_U + j] * u[j];
            }
            let mut rr = 0.0;
            let mut rz = 0.0;
            let mut rh = 0.0;
            for j in 0..n {
                rr += p.r_r[i * n + j] * h[j];
                rz += p.r_z[i * n + j] * h[j];
                rh += p.r_h[i * n + j] * h[j];
            }
            let r = sig(ar + rr);
            let z = sig(az + rz);
            let hc = (ah + r * rh).tanh();
            h_next[i] = (1.0 - z) * hc + z * h[i];
        }
        let mut y = [0.0; N_Y];
        for i in 0..N_Y {
            let mut acc = p.b_y[i];
            for j in 0..n {
                acc += p.w_y[i * n + j] * h_next[j];
            }
            y[i] = acc;
        }
        (h_next, y)
    }

    #[test]
    fn zero_params_zero_state_fixed_point() {
        let p = GruParams::zeros(6);
        let h = HiddenState::zeros(6);
        let (h1, y) = gru_cell(&p, &[0.3, -0.7], &h).unwrap();
        // sigma(0) = 0.5 gates a zero candidate onto a zero state.
        assert!(h1.0.iter().all(|&v| v == 0.0));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_bias_passes_through_zero_weights() {
        let mut p = GruParams::zeros(4);
        p.b_y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let h = HiddenState::zeros(4);
        for input in [[0.0, 0.0], [1.5, -2.0]] {
            let (_, y) = gru_cell(&p, &input, &h).unwrap();
            assert_eq!(y, [1.0, 2.0, 3.0, 4.0, 5.0]);
        }
    }

    #[test]
    fn cell_matches_scalar_reference_on_random_cases() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(42);
        for case in 0..100 {
            let n = rng.random_range(1..=6);
            let mut p = init_params(n, rng.random()).unwrap();
            for (_, t) in p.tensors_mut() {
                for v in t.iter_mut() {
                    if *v == 0.0 {
                        *v = rng.random_range(-0.5..0.5);
                    }
                }
            }
            let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let h0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
            let (h_fast, y_fast) = gru_cell(&p, &u, &HiddenState(h0.clone())).unwrap();
            let (h_ref, y_ref) = scalar_reference_cell(&p, &u, &h0);
            for i in 0..n {
                assert!((h_fast.0[i] - h_ref[i]).abs() <= 1e-12, "case {case} h[{i}]");
            }
            for i in 0..N_Y {
                assert!((y_fast[i] - y_ref[i]).abs() <= 1e-12, "case {case} y[{i}]");
            }
        }
    }

    #[test]
    fn rollout_composes_cell_steps() {
        let p = init_params(5, 9).unwrap();
        let mut rng = crate::rng::seeded(10);
        use rand::Rng;
        let inputs: Vec<[f64; 2]> = (0..32)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let ys = rollout(&p, &inputs, &HiddenState::zeros(5)).unwrap();
        let mut h = HiddenState::zeros(5);
        for (k, input) in inputs.iter().enumerate() {
            let (h_next, y) = gru_cell(&p, input, &h).unwrap();
            h = h_next;
            assert_eq!(ys[k], y, "step {k}");
        }
    }

    #[test]
    fn rollout_is_deterministic() {
        let p = init_params(8, 3).unwrap();
        let inputs = vec![[0.5, -0.25]; 64];
        let a = rollout(&p, &inputs, &HiddenState::zeros(8)).unwrap();
        let b = rollout(&p, &inputs, &HiddenState::zeros(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_everything_rolls_out_to_zero() {
        let p = GruParams::zeros(3);
        let inputs = vec![[0.0, 0.0]; 16];
        for y in rollout(&p, &inputs, &HiddenState::zeros(3)).unwrap() {
            assert_eq!(y, [0.0; N_Y]);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(96, 5).unwrap();
        let b = init_params(96, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w_r.len(), 96 * 2);
        assert_eq!(a.w_y.len(), 5 * 96);
        let bound = (6.0_f64 / (2.0 + 96.0)).sqrt();
        assert!(a.w_r.iter().all(|v| v.abs() < bound));
        let rec_bound = 1.0 / 96.0_f64.sqrt();
        assert!(a.r_r.iter().all(|v| v.abs() < rec_bound));
        assert!(a.b_r.iter().all(|&v| v == 0.0));
        let c = init_params(96, 6).unwrap();
        assert_ne!(a.w_r, c.w_r);
    }

    #[test]
    fn hidden_state_stays_in_open_unit_ball() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(77);
        for _ in 0..20 {
            let n = rng.random_range(1..=12);
            let p = init_params(n, rng.random()).unwrap();
            let inputs: Vec<[f64; 2]> = (0..50)
                .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
                .collect();
            let mut h = HiddenState::zeros(n);
            for input in &inputs {
                let (h_next, _) = gru_cell(&p, input, &h).unwrap();
                h = h_next;
                assert!(h.0.iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = init_params(4, 1).unwrap();
        let h = HiddenState::zeros(5);
        assert!(matches!(gru_cell(&p, &[0.0, 0.0], &h), Err(Error::ShapeMismatch(_))));
    }
}
