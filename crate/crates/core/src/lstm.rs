//! Standard LSTM cell, the sentence encoder built on it, and language-model
//! pretraining of the encoder.
//!
//! Gate order is fixed as forget, input, output, candidate (`f, i, o, c`) in
//! both parameter listings and checkpoints. Every gate reads the concatenation
//! `z = [h_{t-1}, x_t]`; there are no peephole connections.

use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::math::{self, exp, ln, sigmoid_scalar, tanh, RealMatrix, RealVector};
use crate::params::{push_matrix, push_matrix_mut, push_vector, push_vector_mut, BlockMut, BlockRef, Parameters};
use crate::rng::Rng;
use crate::{Error, Result};

/// Weight range for freshly initialised cells.
pub const WEIGHT_INIT_SCALE: f64 = 0.1;
/// Initial forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: RealMatrix,
    pub w_i: RealMatrix,
    pub w_o: RealMatrix,
    pub w_c: RealMatrix,
    pub b_f: RealVector,
    pub b_i: RealVector,
    pub b_o: RealVector,
    pub b_c: RealVector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || RealMatrix::zeros(hidden, hidden + input);
        LstmParams {
            w_f: w(),
            w_i: w(),
            w_o: w(),
            w_c: w(),
            b_f: RealVector::zeros(hidden),
            b_i: RealVector::zeros(hidden),
            b_o: RealVector::zeros(hidden),
            b_c: RealVector::zeros(hidden),
        }
    }

    /// Weights `Uniform[-0.1, 0.1]`, biases zero except `b_f = 1`.
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        for m in [&mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c] {
            *m = RealMatrix::uniform(hidden, hidden + input, WEIGHT_INIT_SCALE, rng);
        }
        p.b_f.iter_mut().for_each(|b| *b = FORGET_BIAS_INIT);
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_f.dim()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }

    /// Checks that every block agrees with `hidden` and `input`.
    pub fn validate(&self, hidden: usize, input: usize) -> Result<()> {
        for (name, m) in [
            ("w_f", &self.w_f),
            ("w_i", &self.w_i),
            ("w_o", &self.w_o),
            ("w_c", &self.w_c),
        ] {
            m.check_shape(name, hidden, hidden + input)?;
        }
        for (name, b) in [
            ("b_f", &self.b_f),
            ("b_i", &self.b_i),
            ("b_o", &self.b_o),
            ("b_c", &self.b_c),
        ] {
            if b.dim() != hidden {
                return Err(Error::shape(name, hidden, b.dim()));
            }
        }
        Ok(())
    }

    pub(crate) fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>, prefix: &str) {
        push_matrix(out, prefix, "w_f", &self.w_f);
        push_matrix(out, prefix, "w_i", &self.w_i);
        push_matrix(out, prefix, "w_o", &self.w_o);
        push_matrix(out, prefix, "w_c", &self.w_c);
        push_vector(out, prefix, "b_f", &self.b_f);
        push_vector(out, prefix, "b_i", &self.b_i);
        push_vector(out, prefix, "b_o", &self.b_o);
        push_vector(out, prefix, "b_c", &self.b_c);
    }

    pub(crate) fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<BlockMut<'a>>, prefix: &str) {
        push_matrix_mut(out, prefix, "w_f", &mut self.w_f);
        push_matrix_mut(out, prefix, "w_i", &mut self.w_i);
        push_matrix_mut(out, prefix, "w_o", &mut self.w_o);
        push_matrix_mut(out, prefix, "w_c", &mut self.w_c);
        push_vector_mut(out, prefix, "b_f", &mut self.b_f);
        push_vector_mut(out, prefix, "b_i", &mut self.b_i);
        push_vector_mut(out, prefix, "b_o", &mut self.b_o);
        push_vector_mut(out, prefix, "b_c", &mut self.b_c);
    }
}

impl Parameters for LstmParams {
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
pub struct CellState {
    pub h: RealVector,
    pub c: RealVector,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: RealVector::zeros(hidden),
            c: RealVector::zeros(hidden),
        }
    }
}

/// Everything one forward step produces that its backward step needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    /// `[h_{t-1}, x_t]`
    pub z: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub c_input: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmTrace {
    pub fn hidden(&self) -> usize {
        self.c.len()
    }

    pub fn state(&self) -> CellState {
        CellState {
            h: RealVector::from_vec_unchecked(self.h.clone()),
            c: RealVector::from_vec_unchecked(self.c.clone()),
        }
    }
}

pub(crate) fn concat(h: &[f64], x: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(h.len() + x.len());
    z.extend_from_slice(h);
    z.extend_from_slice(x);
    z
}

fn affine(w: &RealMatrix, b: &[f64], z: &[f64]) -> Vec<f64> {
    let mut a = b.to_vec();
    w.matvec_acc(z, &mut a);
    a
}

/// Computes `f, i, o, c_input` and `f⊙c_prev + i⊙c_input`, leaving the
/// final cell value to the caller.
pub(crate) fn gate_forward(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<LstmTrace> {
    let hidden = p.hidden();
    if x.len() != p.input() {
        return Err(Error::shape("lstm input x", p.input(), x.len()));
    }
    if h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::shape("lstm previous state", hidden, h_prev.len()));
    }
    let z = concat(h_prev, x);
    let mut f = affine(&p.w_f, &p.b_f, &z);
    let mut i = affine(&p.w_i, &p.b_i, &z);
    let mut o = affine(&p.w_o, &p.b_o, &z);
    let mut c_input = affine(&p.w_c, &p.b_c, &z);
    f.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    i.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    o.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    c_input.iter_mut().for_each(|v| *v = tanh(*v));
    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * c_input[k]).collect();
    Ok(LstmTrace {
        z,
        c_prev: c_prev.to_vec(),
        f,
        i,
        o,
        c_input,
        c,
        tanh_c: Vec::new(),
        h: Vec::new(),
    })
}

/// Fills `tanh_c` and `h = o ⊙ tanh(c)` once `c` is final.
pub(crate) fn finish_output(t: &mut LstmTrace) {
    t.tanh_c = t.c.iter().map(|&c| tanh(c)).collect();
    t.h = t.o.iter().zip(&t.tanh_c).map(|(o, tc)| o * tc).collect();
}

pub(crate) fn lstm_step_raw(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<LstmTrace> {
    let mut t = gate_forward(p, h_prev, c_prev, x)?;
    finish_output(&mut t);
    Ok(t)
}

/// One standard LSTM step.
pub fn lstm_step(params: &LstmParams, prev: &CellState, x: &RealVector) -> Result<CellState> {
    Ok(lstm_step_traced(params, prev, x)?.state())
}

pub fn lstm_step_traced(params: &LstmParams, prev: &CellState, x: &RealVector) -> Result<LstmTrace> {
    params.validate(params.hidden(), x.dim())?;
    lstm_step_raw(params, &prev.h, &prev.c, x)
}

/// Runs the cell from the zero state and returns one trace per input.
pub(crate) fn forward_sequence<'a, I>(p: &LstmParams, xs: I) -> Result<Vec<LstmTrace>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let hidden = p.hidden();
    let mut traces: Vec<LstmTrace> = Vec::new();
    let zeros = vec![0.0; hidden];
    for x in xs {
        let t = match traces.last() {
            Some(prev) => lstm_step_raw(p, &prev.h, &prev.c, x)?,
            None => lstm_step_raw(p, &zeros, &zeros, x)?,
        };
        traces.push(t);
    }
    Ok(traces)
}

pub(crate) fn final_hidden(traces: &[LstmTrace], hidden: usize) -> Vec<f64> {
    traces.last().map(|t| t.h.clone()).unwrap_or_else(|| vec![0.0; hidden])
}

/// Final hidden state of the encoder over `token_vectors`; the zero vector for
/// an empty sentence.
pub fn encode_sentence(params: &LstmParams, token_vectors: &[RealVector]) -> Result<RealVector> {
    let traces = encode_sentence_traced(params, token_vectors)?;
    Ok(RealVector::from_vec_unchecked(final_hidden(&traces, params.hidden())))
}

pub fn encode_sentence_traced(params: &LstmParams, token_vectors: &[RealVector]) -> Result<Vec<LstmTrace>> {
    if let Some(x) = token_vectors.first() {
        params.validate(params.hidden(), x.dim())?;
    }
    forward_sequence(params, token_vectors.iter().map(|v| v.as_slice()))
}

/// Total gradient on `c_t` given the gradient on `h_t` and on `c_t` from step `t+1`.
pub(crate) fn cell_grad(t: &LstmTrace, dh: &[f64], dc_next: &[f64]) -> Vec<f64> {
    (0..t.hidden())
        .map(|k| dc_next[k] + dh[k] * t.o[k] * (1.0 - t.tanh_c[k] * t.tanh_c[k]))
        .collect()
}

/// Backprop through the four standard gates for one step.
///
/// `dc` is the total gradient on `c_t`. Accumulates parameter gradients into
/// `grads` and returns `(dz, dc_prev)` where `dz` covers `[h_{t-1}, x_t]`.
pub(crate) fn gate_backward(
    p: &LstmParams,
    grads: &mut LstmParams,
    t: &LstmTrace,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = t.hidden();
    let mut da_f = vec![0.0; hidden];
    let mut da_i = vec![0.0; hidden];
    let mut da_o = vec![0.0; hidden];
    let mut da_c = vec![0.0; hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let d_o = dh[k] * t.tanh_c[k];
        let d_f = dc[k] * t.c_prev[k];
        let d_i = dc[k] * t.c_input[k];
        let d_cin = dc[k] * t.i[k];
        dc_prev[k] = dc[k] * t.f[k];
        da_f[k] = d_f * t.f[k] * (1.0 - t.f[k]);
        da_i[k] = d_i * t.i[k] * (1.0 - t.i[k]);
        da_o[k] = d_o * t.o[k] * (1.0 - t.o[k]);
        da_c[k] = d_cin * (1.0 - t.c_input[k] * t.c_input[k]);
    }
    let mut dz = vec![0.0; t.z.len()];
    for (w, gw, gb, da) in [
        (&p.w_f, &mut grads.w_f, &mut grads.b_f, &da_f),
        (&p.w_i, &mut grads.w_i, &mut grads.b_i, &da_i),
        (&p.w_o, &mut grads.w_o, &mut grads.b_o, &da_o),
        (&p.w_c, &mut grads.w_c, &mut grads.b_c, &da_c),
    ] {
        gw.outer_acc(da, &t.z);
        math::add_assign(gb, da);
        w.matvec_t_acc(da, &mut dz);
    }
    (dz, dc_prev)
}

/// Reverse-mode pass over a whole sequence.
///
/// `grad_h[t]` is the external gradient on `h_t` (empty slices count as
/// zero). Parameter gradients are accumulated into `grads`; the returned
/// vectors are the gradients on each input `x_t`.
pub fn backward_sequence(
    p: &LstmParams,
    traces: &[LstmTrace],
    grad_h: &[&[f64]],
    grads: &mut LstmParams,
) -> Result<Vec<Vec<f64>>> {
    if grad_h.len() != traces.len() {
        return Err(Error::Internal(alloc::format!(
            "{} output gradients for {} traced steps",
            grad_h.len(),
            traces.len()
        )));
    }
    let hidden = p.hidden();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![Vec::new(); traces.len()];
    for (step, t) in traces.iter().enumerate().rev() {
        if t.hidden() != hidden || t.z.len() != p.w_f.cols() {
            return Err(Error::Internal("trace does not match parameters".into()));
        }
        let mut dh = dh_next.clone();
        if !grad_h[step].is_empty() {
            math::add_assign(&mut dh, grad_h[step]);
        }
        let dc = cell_grad(t, &dh, &dc_next);
        let (dz, dc_prev) = gate_backward(p, grads, t, &dh, &dc);
        dh_next = dz[..hidden].to_vec();
        dxs[step] = dz[hidden..].to_vec();
        dc_next = dc_prev;
    }
    Ok(dxs)
}

/// Gradient of a loss on the final hidden state only.
pub fn backward_final(
    p: &LstmParams,
    traces: &[LstmTrace],
    grad_h_final: &[f64],
    grads: &mut LstmParams,
) -> Result<Vec<Vec<f64>>> {
    let n = traces.len();
    let mut gh: Vec<&[f64]> = vec![&[]; n];
    if n > 0 {
        gh[n - 1] = grad_h_final;
    }
    backward_sequence(p, traces, &gh, grads)
}

/// Softmax read-out used only while pretraining the encoder as a language model.
#[derive(Debug, Clone, PartialEq)]
pub struct LmHead {
    pub w: RealMatrix,
    pub b: RealVector,
}

impl Parameters for LmHead {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        push_matrix(&mut out, "lm", "w", &self.w);
        push_vector(&mut out, "lm", "b", &self.b);
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        push_matrix_mut(&mut out, "lm", "w", &mut self.w);
        push_vector_mut(&mut out, "lm", "b", &mut self.b);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 0,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: LstmParams,
    /// Mean next-token cross-entropy over the corpus: index 0 before training,
    /// index `e` after epoch `e`.
    pub losses: Vec<f64>,
}

impl PretrainOutcome {
    pub fn perplexities(&self) -> Vec<f64> {
        self.losses.iter().map(|&l| exp(l)).collect()
    }
}

struct LmStep {
    loss: f64,
    predictions: usize,
}

fn lm_sentence(
    params: &LstmParams,
    head: &LmHead,
    table: &EmbeddingTable,
    ids: &[usize],
    grads: Option<(&mut LstmParams, &mut LmHead)>,
) -> Result<LmStep> {
    if ids.len() < 2 {
        return Ok(LmStep {
            loss: 0.0,
            predictions: 0,
        });
    }
    let inputs = &ids[..ids.len() - 1];
    let traces = forward_sequence(params, inputs.iter().map(|&i| table.row(i)))?;
    let vocab = head.w.rows();
    let mut loss = 0.0;
    let mut dhs: Vec<Vec<f64>> = Vec::with_capacity(traces.len());
    let mut grads = grads;
    for (t, trace) in traces.iter().enumerate() {
        let mut logits = head.b.to_vec();
        head.w.matvec_acc(&trace.h, &mut logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| exp(l - max)).sum();
        let target = ids[t + 1];
        loss += -(logits[target] - max - ln(sum));
        if let Some((_, lm)) = grads.as_mut() {
            let mut d: Vec<f64> = logits.iter().map(|&l| exp(l - max) / sum).collect();
            d[target] -= 1.0;
            lm.w.outer_acc(&d, &trace.h);
            math::add_assign(&mut lm.b, &d);
            let mut dh = vec![0.0; trace.hidden()];
            head.w.matvec_t_acc(&d, &mut dh);
            dhs.push(dh);
        }
        debug_assert!(target < vocab);
    }
    if let Some((gp, _)) = grads {
        let refs: Vec<&[f64]> = dhs.iter().map(|v| v.as_slice()).collect();
        backward_sequence(params, &traces, &refs, gp)?;
    }
    Ok(LmStep {
        loss,
        predictions: traces.len(),
    })
}

fn lm_corpus_loss(params: &LstmParams, head: &LmHead, table: &EmbeddingTable, corpus: &[Vec<usize>]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in corpus {
        let r = lm_sentence(params, head, table, s, None)?;
        total += r.loss;
        n += r.predictions;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Pretrains the encoder as a next-token language model with per-sentence SGD.
///
/// The embedding table is read-only here; the softmax read-out is discarded.
pub fn lm_pretrain(
    params: &LstmParams,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    corpus: &[Vec<alloc::string::String>],
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Config("language-model corpus is empty".into()));
    }
    params.validate(params.hidden(), table.dim())?;
    let ids: Vec<Vec<usize>> = corpus.iter().map(|s| vocab.encode(s)).collect();
    let mut rng = Rng::new(config.seed);
    let mut head = LmHead {
        w: RealMatrix::uniform(vocab.len(), params.hidden(), WEIGHT_INIT_SCALE, &mut rng),
        b: RealVector::zeros(vocab.len()),
    };
    let mut params = params.clone();
    let mut losses = vec![lm_corpus_loss(&params, &head, table, &ids)?];
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        for (batch, &s) in order.iter().enumerate() {
            let mut gp = params.zeros_like();
            let mut gh = head.zeros_like();
            let r = lm_sentence(&params, &head, table, &ids[s], Some((&mut gp, &mut gh)))?;
            if r.predictions == 0 {
                continue;
            }
            if !r.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            let scale = -config.learning_rate / r.predictions as f64;
            params.add_scaled(&gp, scale)?;
            head.add_scaled(&gh, scale)?;
        }
        losses.push(lm_corpus_loss(&params, &head, table, &ids)?);
    }
    Ok(PretrainOutcome { params, losses })
}
