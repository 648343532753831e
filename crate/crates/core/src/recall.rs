//! LSTM cell with a Recall gate.
//!
//! The knowledge vector `kb` acts as a global memory that is constant over a
//! conversation. At every step the gate
//!
//! ```text
//! r_t = σ(W_ri [h_{t-1}, x_t] + W_rc c_{t-1} + W_rk kb + b_r)
//! ```
//!
//! decides how much of `kb` enters the cell:
//!
//! ```text
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ c_input + r_t ⊙ kb
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! Forget, input, output and candidate are computed exactly as in
//! [`crate::lstm`]. Because `kb` is added to the cell elementwise, its
//! dimension must equal the hidden dimension.

use alloc::vec;
use alloc::vec::Vec;

use crate::lstm::{self, CellState, LstmParams, LstmTrace, WEIGHT_INIT_SCALE};
use crate::math::{self, sigmoid_scalar, RealMatrix, RealVector};
use crate::params::{push_matrix, push_matrix_mut, push_vector, push_vector_mut, BlockMut, BlockRef, Parameters};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RlstmParams {
    pub base: LstmParams,
    /// `hidden × (hidden + input)`, reads `[h_{t-1}, x_t]`.
    pub w_ri: RealMatrix,
    /// `hidden × hidden`, full matrix on `c_{t-1}`.
    pub w_rc: RealMatrix,
    /// `hidden × hidden`, reads `kb`.
    pub w_rk: RealMatrix,
    pub b_r: RealVector,
}

impl RlstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RlstmParams {
            base: LstmParams::zeros(hidden, input),
            w_ri: RealMatrix::zeros(hidden, hidden + input),
            w_rc: RealMatrix::zeros(hidden, hidden),
            w_rk: RealMatrix::zeros(hidden, hidden),
            b_r: RealVector::zeros(hidden),
        }
    }

    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let base = LstmParams::init(hidden, input, rng);
        RlstmParams {
            base,
            w_ri: RealMatrix::uniform(hidden, hidden + input, WEIGHT_INIT_SCALE, rng),
            w_rc: RealMatrix::uniform(hidden, hidden, WEIGHT_INIT_SCALE, rng),
            w_rk: RealMatrix::uniform(hidden, hidden, WEIGHT_INIT_SCALE, rng),
            b_r: RealVector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.base.hidden()
    }

    pub fn input(&self) -> usize {
        self.base.input()
    }

    pub fn validate(&self, hidden: usize, input: usize) -> Result<()> {
        self.base.validate(hidden, input)?;
        self.w_ri.check_shape("w_ri", hidden, hidden + input)?;
        self.w_rc.check_shape("w_rc", hidden, hidden)?;
        self.w_rk.check_shape("w_rk", hidden, hidden)?;
        if self.b_r.dim() != hidden {
            return Err(Error::shape("b_r", hidden, self.b_r.dim()));
        }
        Ok(())
    }

    pub(crate) fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>, prefix: &str) {
        self.base.push_blocks(out, prefix);
        push_matrix(out, prefix, "w_ri", &self.w_ri);
        push_matrix(out, prefix, "w_rc", &self.w_rc);
        push_matrix(out, prefix, "w_rk", &self.w_rk);
        push_vector(out, prefix, "b_r", &self.b_r);
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<BlockMut<'a>>, prefix: &str) {
        self.base.push_blocks_mut(out, prefix);
        push_matrix_mut(out, prefix, "w_ri", &mut self.w_ri);
        push_matrix_mut(out, prefix, "w_rc", &mut self.w_rc);
        push_matrix_mut(out, prefix, "w_rk", &mut self.w_rk);
        push_vector_mut(out, prefix, "b_r", &mut self.b_r);
    }
}

impl Parameters for RlstmParams {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        self.push_blocks(&mut out, "");
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        self.push_blocks_mut(&mut out, "");
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallStepTrace {
    /// Standard gate values; `base.c` and `base.h` are the final cell outputs.
    pub base: LstmTrace,
    pub r: Vec<f64>,
    pub kb: Vec<f64>,
}

impl RecallStepTrace {
    pub fn state(&self) -> CellState {
        self.base.state()
    }
}

pub(crate) fn rlstm_step_raw(
    p: &RlstmParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
    kb: &[f64],
) -> Result<RecallStepTrace> {
    let hidden = p.hidden();
    if kb.len() != hidden {
        return Err(Error::shape("knowledge vector kb", hidden, kb.len()));
    }
    let mut base = lstm::gate_forward(&p.base, h_prev, c_prev, x)?;
    let mut r = p.b_r.to_vec();
    p.w_ri.matvec_acc(&base.z, &mut r);
    p.w_rc.matvec_acc(c_prev, &mut r);
    p.w_rk.matvec_acc(kb, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    for k in 0..hidden {
        base.c[k] += r[k] * kb[k];
    }
    lstm::finish_output(&mut base);
    Ok(RecallStepTrace {
        base,
        r,
        kb: kb.to_vec(),
    })
}

/// One Recall-gate LSTM step.
pub fn rlstm_step(
    params: &RlstmParams,
    prev: &CellState,
    x: &RealVector,
    kb: &RealVector,
) -> Result<(CellState, RecallStepTrace)> {
    params.validate(params.hidden(), x.dim())?;
    let t = rlstm_step_raw(params, &prev.h, &prev.c, x, kb)?;
    Ok((t.state(), t))
}

/// Runs the cell over `xs` from the zero state with a fixed `kb`.
pub(crate) fn forward_sequence<'a, I>(p: &RlstmParams, xs: I, kb: &[f64]) -> Result<Vec<RecallStepTrace>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let zeros = vec![0.0; p.hidden()];
    let mut traces: Vec<RecallStepTrace> = Vec::new();
    for x in xs {
        let t = match traces.last() {
            Some(prev) => rlstm_step_raw(p, &prev.base.h, &prev.base.c, x, kb)?,
            None => rlstm_step_raw(p, &zeros, &zeros, x, kb)?,
        };
        traces.push(t);
    }
    Ok(traces)
}

pub fn rlstm_forward(params: &RlstmParams, xs: &[RealVector], kb: &RealVector) -> Result<Vec<RecallStepTrace>> {
    if let Some(x) = xs.first() {
        params.validate(params.hidden(), x.dim())?;
    }
    forward_sequence(params, xs.iter().map(|x| x.as_slice()), kb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallGrads {
    pub params: RlstmParams,
    pub inputs: Vec<Vec<f64>>,
    /// Summed over every step, since `kb` is shared across the sequence.
    pub kb: Vec<f64>,
}

/// Accumulating reverse pass; returns input gradients and adds the `kb`
/// gradient into `dkb`.
pub(crate) fn backward_into(
    p: &RlstmParams,
    traces: &[RecallStepTrace],
    grad_h_final: &[f64],
    grads: &mut RlstmParams,
    dkb: &mut [f64],
) -> Result<Vec<Vec<f64>>> {
    let hidden = p.hidden();
    if grad_h_final.len() != hidden || dkb.len() != hidden {
        return Err(Error::Internal("gradient buffers do not match hidden size".into()));
    }
    let mut dh = grad_h_final.to_vec();
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); traces.len()];
    for (step, t) in traces.iter().enumerate().rev() {
        if t.base.hidden() != hidden || t.base.z.len() != p.w_ri.cols() || t.kb.len() != hidden {
            return Err(Error::Internal("recall trace does not match parameters".into()));
        }
        let dc = lstm::cell_grad(&t.base, &dh, &dc_next);
        let (mut dz, mut dc_prev) = lstm::gate_backward(&p.base, &mut grads.base, &t.base, &dh, &dc);
        let mut da_r = vec![0.0; hidden];
        for k in 0..hidden {
            dkb[k] += dc[k] * t.r[k];
            let dr = dc[k] * t.kb[k];
            da_r[k] = dr * t.r[k] * (1.0 - t.r[k]);
        }
        grads.w_ri.outer_acc(&da_r, &t.base.z);
        grads.w_rc.outer_acc(&da_r, &t.base.c_prev);
        grads.w_rk.outer_acc(&da_r, &t.kb);
        math::add_assign(&mut grads.b_r, &da_r);
        p.w_ri.matvec_t_acc(&da_r, &mut dz);
        p.w_rc.matvec_t_acc(&da_r, &mut dc_prev);
        p.w_rk.matvec_t_acc(&da_r, dkb);
        dh = dz[..hidden].to_vec();
        dxs[step] = dz[hidden..].to_vec();
        dc_next = dc_prev;
    }
    Ok(dxs)
}

/// Exact gradients of a loss whose gradient on the final hidden state is
/// `grad_h_final`.
pub fn rlstm_backward(params: &RlstmParams, traces: &[RecallStepTrace], grad_h_final: &[f64]) -> Result<RecallGrads> {
    let mut grads = params.zeros_like();
    let mut dkb = vec![0.0; params.hidden()];
    let inputs = backward_into(params, traces, grad_h_final, &mut grads, &mut dkb)?;
    Ok(RecallGrads {
        params: grads,
        inputs,
        kb: dkb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::lstm_step;
    use crate::math::{finite_diff_grad, relative_error, tanh};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn rv(xs: &[f64]) -> RealVector {
        RealVector::new(xs.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut Rng, n: usize, s: f64) -> RealVector {
        RealVector::new((0..n).map(|_| rng.uniform(-s, s)).collect()).unwrap()
    }

    fn random_params(rng: &mut Rng, hidden: usize, input: usize, s: f64) -> RlstmParams {
        let mut p = RlstmParams::zeros(hidden, input);
        for b in p.blocks_mut() {
            b.data.iter_mut().for_each(|x| *x = rng.uniform(-s, s));
        }
        p
    }

    #[test]
    fn hand_evaluated_step() {
        let p = RlstmParams::zeros(1, 1);
        let (s, t) = rlstm_step(&p, &CellState::zeros(1), &rv(&[0.3]), &rv(&[2.0])).unwrap();
        assert_eq!(t.r, vec![0.5]);
        assert_eq!(s.c[0], 1.0);
        assert!((s.h[0] - 0.3807970779778824).abs() < 1e-12);
    }

    #[test]
    fn kb_dimension_must_match_hidden() {
        let p = RlstmParams::zeros(3, 2);
        let err = rlstm_step(&p, &CellState::zeros(3), &rv(&[0.0, 0.0]), &rv(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn large_kb_weights_saturate_the_gate() {
        let mut rng = Rng::new(21);
        let mut p = random_params(&mut rng, 4, 3, 0.1);
        let kb = rv(&[1.0, -1.0, 0.5, -0.5]);
        let x = random_vec(&mut rng, 3, 1.0);
        p.w_rk = RealMatrix::identity(4);
        p.w_rk.scale(100.0);
        let (_, t) = rlstm_step(&p, &CellState::zeros(4), &x, &kb).unwrap();
        for k in 0..4 {
            let term = (t.r[k] * kb[k]).abs();
            if kb[k] > 0.0 {
                assert!(t.r[k] > 0.999 && (term - kb[k].abs()).abs() < 1e-3 * kb[k].abs());
            } else {
                assert!(t.r[k] < 1e-3 && term < 1e-3);
            }
        }
        let expected_h0 = t.base.o[0] * tanh(t.base.c[0]);
        assert_eq!(t.base.h[0], expected_h0);
    }

    proptest! {
        #[test]
        fn zero_kb_reduces_to_lstm(seed in any::<u64>(), hidden in 1usize..8, input in 1usize..6) {
            let mut rng = Rng::new(seed);
            let p = random_params(&mut rng, hidden, input, 1.0);
            let prev = CellState { h: random_vec(&mut rng, hidden, 0.9), c: random_vec(&mut rng, hidden, 2.0) };
            let x = random_vec(&mut rng, input, 2.0);
            let (s, t) = rlstm_step(&p, &prev, &x, &RealVector::zeros(hidden)).unwrap();
            let plain = lstm_step(&p.base, &prev, &x).unwrap();
            prop_assert_eq!(s, plain);
            prop_assert!(t.r.iter().all(|&r| r > 0.0 && r < 1.0));
        }
    }

    #[test]
    fn zero_output_gradient() {
        let mut rng = Rng::new(2);
        let p = random_params(&mut rng, 3, 2, 0.5);
        let xs = [random_vec(&mut rng, 2, 1.0), random_vec(&mut rng, 2, 1.0)];
        let kb = random_vec(&mut rng, 3, 1.0);
        let traces = rlstm_forward(&p, &xs, &kb).unwrap();
        let g = rlstm_backward(&p, &traces, &[0.0; 3]).unwrap();
        assert!(g.params.blocks().iter().all(|b| b.data.iter().all(|&x| x == 0.0)));
        assert!(g.kb.iter().chain(g.inputs.iter().flatten()).all(|&x| x == 0.0));
    }

    struct GradientErrors {
        /// Largest per-coordinate relative error.
        coordinate: f64,
        /// Largest per-block relative error, with the norm of the block as `|·|`.
        block: f64,
        kb_grad: Vec<f64>,
    }

    /// Finite-difference comparison over every parameter block, every input
    /// vector and `kb`.
    fn gradient_errors(seed: u64, hidden: usize, input: usize, len: usize, zero_kb: bool) -> GradientErrors {
        let mut rng = Rng::new(seed);
        let p = random_params(&mut rng, hidden, input, 0.5);
        let xs: Vec<RealVector> = (0..len).map(|_| random_vec(&mut rng, input, 1.0)).collect();
        let kb = if zero_kb {
            RealVector::zeros(hidden)
        } else {
            random_vec(&mut rng, hidden, 1.0)
        };
        let w: Vec<f64> = (0..hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |p: &RlstmParams, xs: &[RealVector], kb: &RealVector| {
            let traces = rlstm_forward(p, xs, kb).unwrap();
            math::dot(&traces.last().unwrap().base.h, &w)
        };
        let traces = rlstm_forward(&p, &xs, &kb).unwrap();
        let g = rlstm_backward(&p, &traces, &w).unwrap();
        let mut errs = GradientErrors {
            coordinate: 0.0,
            block: 0.0,
            kb_grad: g.kb.clone(),
        };
        let mut check = |analytic: &[f64], numeric: &[f64]| {
            for (a, n) in analytic.iter().zip(numeric) {
                errs.coordinate = errs.coordinate.max(relative_error(*a, *n));
            }
            errs.block = errs
                .block
                .max(crate::gradcheck::block_relative_error(analytic, numeric));
        };
        let n_blocks = p.blocks().len();
        for bi in 0..n_blocks {
            let theta = RealVector::new(p.blocks()[bi].data.to_vec()).unwrap();
            let numeric = finite_diff_grad(
                |th| {
                    let mut q = p.clone();
                    q.blocks_mut()[bi].data.copy_from_slice(th);
                    loss(&q, &xs, &kb)
                },
                &theta,
                1e-5,
            )
            .unwrap();
            check(g.params.blocks()[bi].data, &numeric);
        }
        for t in 0..len {
            let numeric = finite_diff_grad(
                |th| {
                    let mut ys = xs.clone();
                    ys[t].copy_from_slice(th);
                    loss(&p, &ys, &kb)
                },
                &xs[t],
                1e-5,
            )
            .unwrap();
            check(&g.inputs[t], &numeric);
        }
        let numeric_kb =
            finite_diff_grad(|th| loss(&p, &xs, &RealVector::new(th.to_vec()).unwrap()), &kb, 1e-5).unwrap();
        check(&g.kb, &numeric_kb);
        errs
    }

    #[test]
    fn backward_matches_finite_differences_seed_7() {
        let e = gradient_errors(7, 4, 4, 3, false);
        assert!(e.coordinate < 1e-4, "max coordinate relative error {}", e.coordinate);
    }

    #[test]
    fn backward_matches_finite_differences_many_seeds() {
        for seed in 0..20 {
            let hidden = 1 + (seed as usize % 16);
            let len = 1 + (seed as usize % 5);
            let e = gradient_errors(seed, hidden, 3, len, false);
            assert!(e.block < 1e-4, "seed {seed}: max block relative error {}", e.block);
        }
    }

    #[test]
    fn kb_gradient_nonzero_at_zero_kb() {
        let e = gradient_errors(7, 4, 4, 3, true);
        assert!(e.coordinate < 1e-4);
        let dkb = e.kb_grad;
        assert!(dkb.iter().any(|&g| g.abs() > 1e-6), "{dkb:?}");
    }
}
