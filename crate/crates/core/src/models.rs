//! Conversation classifiers: the Recall-gate model and its baselines.
//!
//! Every kind shares the same front end. Word embeddings feed a sentence
//! encoder that turns each utterance into a vector, and kinds that use
//! background knowledge sum triggered attribute embeddings into a knowledge
//! vector. The kinds differ only in how those vectors become a single logit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::ConversationSample;
use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::kb::{rank_attributes, KnowledgeBase, KnowledgeVector};
use crate::lstm::{self, LstmParams, LstmTrace, WEIGHT_INIT_SCALE};
use crate::math::{self, sigmoid_scalar, tanh, RealMatrix, RealVector};
use crate::params::{
    push_matrix, push_matrix_mut, push_scalar, push_scalar_mut, push_vector, push_vector_mut, BlockMut, BlockRef,
    Parameters,
};
use crate::recall::{self, RecallStepTrace, RlstmParams};
use crate::rng::Rng;
use crate::{Error, Result};

/// Default number of utterance slots in the MLP input.
pub const DEFAULT_MAX_TURNS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Mlp,
    MlpKb,
    Lstm,
    LstmKb,
    AffinityRnn,
    AffinityLstm,
    Rlstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Mlp,
        ModelKind::MlpKb,
        ModelKind::Lstm,
        ModelKind::LstmKb,
        ModelKind::AffinityRnn,
        ModelKind::AffinityLstm,
        ModelKind::Rlstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::MlpKb => "mlp_kb",
            ModelKind::Lstm => "lstm",
            ModelKind::LstmKb => "lstm_kb",
            ModelKind::AffinityRnn => "affinity_rnn",
            ModelKind::AffinityLstm => "affinity_lstm",
            ModelKind::Rlstm => "rlstm",
        }
    }

    pub fn uses_kb(self) -> bool {
        matches!(self, ModelKind::MlpKb | ModelKind::LstmKb | ModelKind::Rlstm)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "affinity" => Ok(ModelKind::AffinityLstm),
            "mlp+kb" => Ok(ModelKind::MlpKb),
            "lstm+kb" => Ok(ModelKind::LstmKb),
            "r_lstm" => Ok(ModelKind::Rlstm),
            _ => ModelKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| Error::Config(alloc::format!("unknown model kind '{s}'"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer widths. `word` is the embedding width, `sentence` the encoder
/// output, `knowledge` the attribute embedding width and `conversation` the
/// width of the conversation-level layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub word: usize,
    pub sentence: usize,
    pub knowledge: usize,
    pub conversation: usize,
}

impl Dims {
    pub fn ubuntu() -> Self {
        Dims {
            word: 300,
            sentence: 200,
            knowledge: 200,
            conversation: 200,
        }
    }

    pub fn tieba() -> Self {
        Self::uniform(100)
    }

    pub fn uniform(n: usize) -> Self {
        Dims {
            word: n,
            sentence: n,
            knowledge: n,
            conversation: n,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ubuntu" => Ok(Self::ubuntu()),
            "tieba" => Ok(Self::tieba()),
            _ => Err(Error::Config(alloc::format!(
                "unknown dims preset '{name}' (expected ubuntu or tieba)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dims: Dims,
    /// Utterance slots in the MLP input, response included.
    pub max_turns: usize,
    /// Attributes summed into the knowledge vector.
    pub top_n: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dims: Dims) -> Self {
        ModelConfig {
            kind,
            dims,
            max_turns: DEFAULT_MAX_TURNS,
            top_n: crate::kb::DEFAULT_TOP_N,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.word == 0 || d.sentence == 0 || d.knowledge == 0 || d.conversation == 0 {
            return Err(Error::Config("every dimension must be positive".into()));
        }
        if self.max_turns < 2 {
            return Err(Error::Config("max_turns must be at least 2".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        match self.kind {
            ModelKind::Rlstm if d.knowledge != d.conversation => Err(Error::Config(alloc::format!(
                "rlstm needs knowledge dim == conversation dim, got {} and {}",
                d.knowledge,
                d.conversation
            ))),
            ModelKind::LstmKb if d.knowledge != d.sentence => Err(Error::Config(alloc::format!(
                "lstm_kb feeds the knowledge vector as a time step and needs knowledge dim == sentence dim, got {} and {}",
                d.knowledge,
                d.sentence
            ))),
            _ => Ok(()),
        }
    }
}

/// `σ(w·h + b)` on the final conversation state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: RealVector,
    pub b: f64,
}

impl ClassifierHead {
    pub fn zeros(dim: usize) -> Self {
        ClassifierHead {
            w: RealVector::zeros(dim),
            b: 0.0,
        }
    }

    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        ClassifierHead {
            w: RealVector::from_vec_unchecked(
                (0..dim)
                    .map(|_| rng.uniform(-WEIGHT_INIT_SCALE, WEIGHT_INIT_SCALE))
                    .collect(),
            ),
            b: 0.0,
        }
    }

    pub fn logit(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.w.dim() {
            return Err(Error::shape("classifier head w", self.w.dim(), h.len()));
        }
        Ok(math::dot(&self.w, h) + self.b)
    }

    fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>) {
        push_vector(out, "head", "w", &self.w);
        push_scalar(out, "head", "b", &self.b);
    }

    fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<BlockMut<'a>>) {
        push_vector_mut(out, "head", "w", &mut self.w);
        push_scalar_mut(out, "head", "b", &mut self.b);
    }

    /// Accumulates head gradients for `dlogit` and returns the gradient on `h`.
    fn backward(&self, grads: &mut ClassifierHead, h: &[f64], dlogit: f64) -> Vec<f64> {
        for (g, x) in grads.w.iter_mut().zip(h) {
            *g += dlogit * x;
        }
        grads.b += dlogit;
        self.w.iter().map(|w| dlogit * w).collect()
    }
}

/// Bilinear relevance `σ(cᵀ M r + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityParams {
    pub m: RealMatrix,
    pub b: f64,
}

impl AffinityParams {
    pub fn zeros(dim: usize) -> Self {
        AffinityParams {
            m: RealMatrix::zeros(dim, dim),
            b: 0.0,
        }
    }

    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        AffinityParams {
            m: RealMatrix::uniform(dim, dim, WEIGHT_INIT_SCALE, rng),
            b: 0.0,
        }
    }

    fn logit(&self, c: &[f64], r: &[f64]) -> Result<f64> {
        let n = self.m.rows();
        if self.m.cols() != n {
            return Err(Error::shape("affinity M columns", n, self.m.cols()));
        }
        if c.len() != n || r.len() != n {
            return Err(Error::shape(
                "affinity context/response vector",
                n,
                if c.len() != n { c.len() } else { r.len() },
            ));
        }
        Ok(math::dot(c, &self.m.matvec(r)) + self.b)
    }
}

/// Range of the uniform draw for MLP weights and biases. Random biases and a
/// wide range move the tanh layer off the flat saddle at the origin, where it
/// cannot express products of its inputs.
pub const MLP_INIT_SCALE: f64 = 1.0;

/// Hidden layer `tanh(W x + b)` of the MLP baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w: RealMatrix,
    pub b: RealVector,
}

impl MlpParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        MlpParams {
            w: RealMatrix::zeros(hidden, input),
            b: RealVector::zeros(hidden),
        }
    }

    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let w = RealMatrix::uniform(hidden, input, MLP_INIT_SCALE, rng);
        let b = (0..hidden)
            .map(|_| rng.uniform(-MLP_INIT_SCALE, MLP_INIT_SCALE))
            .collect();
        MlpParams {
            w,
            b: RealVector::from_vec_unchecked(b),
        }
    }
}

/// Vanilla recurrence `h_t = tanh(W [h_{t-1}, x_t] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w: RealMatrix,
    pub b: RealVector,
}

impl RnnParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RnnParams {
            w: RealMatrix::zeros(hidden, hidden + input),
            b: RealVector::zeros(hidden),
        }
    }

    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        RnnParams {
            w: RealMatrix::uniform(hidden, hidden + input, WEIGHT_INIT_SCALE, rng),
            b: RealVector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.dim()
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RnnTrace {
    z: Vec<f64>,
    h: Vec<f64>,
}

fn rnn_forward<'a, I>(p: &RnnParams, xs: I) -> Result<Vec<RnnTrace>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let hidden = p.hidden();
    let mut traces: Vec<RnnTrace> = Vec::new();
    for x in xs {
        if x.len() != p.input() {
            return Err(Error::shape("rnn input x", p.input(), x.len()));
        }
        let z = match traces.last() {
            Some(prev) => lstm::concat(&prev.h, x),
            None => lstm::concat(&vec![0.0; hidden], x),
        };
        let mut h = p.b.to_vec();
        p.w.matvec_acc(&z, &mut h);
        h.iter_mut().for_each(|v| *v = tanh(*v));
        traces.push(RnnTrace { z, h });
    }
    Ok(traces)
}

fn rnn_backward_final(p: &RnnParams, traces: &[RnnTrace], dh_final: &[f64], grads: &mut RnnParams) -> Vec<Vec<f64>> {
    let hidden = p.hidden();
    let mut dh = dh_final.to_vec();
    let mut dxs = vec![Vec::new(); traces.len()];
    for (step, t) in traces.iter().enumerate().rev() {
        let da: Vec<f64> = (0..hidden).map(|k| dh[k] * (1.0 - t.h[k] * t.h[k])).collect();
        grads.w.outer_acc(&da, &t.z);
        math::add_assign(&mut grads.b, &da);
        let mut dz = vec![0.0; t.z.len()];
        p.w.matvec_t_acc(&da, &mut dz);
        dh = dz[..hidden].to_vec();
        dxs[step] = dz[hidden..].to_vec();
    }
    dxs
}

/// Sentence encoder shared by every utterance of a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Lstm(LstmParams),
    Rnn(RnnParams),
}

enum EncoderTrace {
    Lstm(Vec<LstmTrace>),
    Rnn(Vec<RnnTrace>),
}

impl Encoder {
    pub fn hidden(&self) -> usize {
        match self {
            Encoder::Lstm(p) => p.hidden(),
            Encoder::Rnn(p) => p.hidden(),
        }
    }

    pub fn input(&self) -> usize {
        match self {
            Encoder::Lstm(p) => p.input(),
            Encoder::Rnn(p) => p.input(),
        }
    }

    fn forward<'a, I>(&self, xs: I) -> Result<(EncoderTrace, Vec<f64>)>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let hidden = self.hidden();
        Ok(match self {
            Encoder::Lstm(p) => {
                let t = lstm::forward_sequence(p, xs)?;
                let h = lstm::final_hidden(&t, hidden);
                (EncoderTrace::Lstm(t), h)
            }
            Encoder::Rnn(p) => {
                let t = rnn_forward(p, xs)?;
                let h = t.last().map(|s| s.h.clone()).unwrap_or_else(|| vec![0.0; hidden]);
                (EncoderTrace::Rnn(t), h)
            }
        })
    }

    fn backward(&self, trace: &EncoderTrace, dh: &[f64], grads: &mut Encoder) -> Result<Vec<Vec<f64>>> {
        match (self, trace, grads) {
            (Encoder::Lstm(p), EncoderTrace::Lstm(t), Encoder::Lstm(g)) => lstm::backward_final(p, t, dh, g),
            (Encoder::Rnn(p), EncoderTrace::Rnn(t), Encoder::Rnn(g)) => Ok(rnn_backward_final(p, t, dh, g)),
            _ => Err(Error::Internal("encoder gradient buffer has the wrong kind".into())),
        }
    }

    /// Final state over `tokens`; zero for an empty sentence.
    pub fn encode(&self, tokens: &[RealVector]) -> Result<RealVector> {
        let (_, h) = self.forward(tokens.iter().map(|v| v.as_slice()))?;
        Ok(RealVector::from_vec_unchecked(h))
    }

    fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>) {
        match self {
            Encoder::Lstm(p) => p.push_blocks(out, "encoder"),
            Encoder::Rnn(p) => {
                push_matrix(out, "rnn", "w", &p.w);
                push_vector(out, "rnn", "b", &p.b);
            }
        }
    }

    fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<BlockMut<'a>>) {
        match self {
            Encoder::Lstm(p) => p.push_blocks_mut(out, "encoder"),
            Encoder::Rnn(p) => {
                push_matrix_mut(out, "rnn", "w", &mut p.w);
                push_vector_mut(out, "rnn", "b", &mut p.b);
            }
        }
    }
}

/// Conversation-level layer of each model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Mlp {
        layer: MlpParams,
        head: ClassifierHead,
        append_kb: bool,
        max_turns: usize,
    },
    Lstm {
        cell: LstmParams,
        head: ClassifierHead,
        prepend_kb: bool,
    },
    Rlstm {
        cell: RlstmParams,
        head: ClassifierHead,
    },
    Affinity(AffinityParams),
}

impl Scorer {
    fn push_blocks<'a>(&'a self, out: &mut Vec<BlockRef<'a>>) {
        match self {
            Scorer::Mlp { layer, head, .. } => {
                push_matrix(out, "mlp", "w", &layer.w);
                push_vector(out, "mlp", "b", &layer.b);
                head.push_blocks(out);
            }
            Scorer::Lstm { cell, head, .. } => {
                cell.push_blocks(out, "conversation");
                head.push_blocks(out);
            }
            Scorer::Rlstm { cell, head } => {
                cell.push_blocks(out, "conversation");
                head.push_blocks(out);
            }
            Scorer::Affinity(a) => {
                push_matrix(out, "affinity", "m", &a.m);
                push_scalar(out, "affinity", "b", &a.b);
            }
        }
    }

    fn push_blocks_mut<'a>(&'a mut self, out: &mut Vec<BlockMut<'a>>) {
        match self {
            Scorer::Mlp { layer, head, .. } => {
                push_matrix_mut(out, "mlp", "w", &mut layer.w);
                push_vector_mut(out, "mlp", "b", &mut layer.b);
                head.push_blocks_mut(out);
            }
            Scorer::Lstm { cell, head, .. } => {
                cell.push_blocks_mut(out, "conversation");
                head.push_blocks_mut(out);
            }
            Scorer::Rlstm { cell, head } => {
                cell.push_blocks_mut(out, "conversation");
                head.push_blocks_mut(out);
            }
            Scorer::Affinity(a) => {
                push_matrix_mut(out, "affinity", "m", &mut a.m);
                push_scalar_mut(out, "affinity", "b", &mut a.b);
            }
        }
    }
}

/// Encoder outputs for one conversation plus its knowledge vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationInput {
    /// Context utterances, then the query, then the candidate response.
    pub utterance_vectors: Vec<RealVector>,
    pub kb_vector: KnowledgeVector,
}

impl ConversationInput {
    fn slices(&self) -> Result<Vec<&[f64]>> {
        if self.utterance_vectors.is_empty() {
            return Err(Error::Data("conversation input has no utterances".into()));
        }
        Ok(self.utterance_vectors.iter().map(|v| v.as_slice()).collect())
    }
}

struct MlpTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    /// `(utterance index, offset in input)` for every occupied slot.
    slots: Vec<(usize, usize)>,
    kb_offset: Option<usize>,
}

fn mlp_forward(layer: &MlpParams, utts: &[&[f64]], kb: Option<&[f64]>, max_turns: usize) -> Result<MlpTrace> {
    let n = utts.len();
    let dim = utts.first().map_or(0, |u| u.len());
    let utt_block = max_turns * dim;
    let expected = utt_block + kb.map_or(0, <[f64]>::len);
    if layer.w.cols() != expected {
        return Err(Error::shape("mlp input", layer.w.cols(), expected));
    }
    let first = n.saturating_sub(max_turns);
    if first > 0 {
        log::warn!("conversation has {n} utterances, keeping the last {max_turns}");
    }
    let kept = n - first;
    let mut input = vec![0.0; expected];
    let mut slots = Vec::with_capacity(kept);
    for (j, u) in utts.iter().enumerate().skip(first) {
        if u.len() != dim {
            return Err(Error::shape("mlp utterance vector", dim, u.len()));
        }
        let offset = (max_turns - kept + (j - first)) * dim;
        input[offset..offset + dim].copy_from_slice(u);
        slots.push((j, offset));
    }
    if let Some(kb) = kb {
        input[utt_block..].copy_from_slice(kb);
    }
    let mut hidden = layer.b.to_vec();
    layer.w.matvec_acc(&input, &mut hidden);
    hidden.iter_mut().for_each(|v| *v = tanh(*v));
    Ok(MlpTrace {
        input,
        hidden,
        slots,
        kb_offset: kb.map(|_| utt_block),
    })
}

/// Gradients on utterance vectors and the knowledge vector.
struct InputGrads {
    utterances: Vec<Vec<f64>>,
    kb: Vec<f64>,
}

fn mlp_backward(
    layer: &MlpParams,
    grads: &mut MlpParams,
    t: &MlpTrace,
    dhidden: &[f64],
    n_utts: usize,
    dim: usize,
    kb_dim: usize,
) -> InputGrads {
    let da: Vec<f64> = dhidden.iter().zip(&t.hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
    grads.w.outer_acc(&da, &t.input);
    math::add_assign(&mut grads.b, &da);
    let mut din = vec![0.0; t.input.len()];
    layer.w.matvec_t_acc(&da, &mut din);
    let mut utterances = vec![vec![0.0; dim]; n_utts];
    for &(j, off) in &t.slots {
        utterances[j].copy_from_slice(&din[off..off + dim]);
    }
    let kb = match t.kb_offset {
        Some(off) => din[off..].to_vec(),
        None => vec![0.0; kb_dim],
    };
    InputGrads { utterances, kb }
}

fn lstm_sequence<'a>(utts: &[&'a [f64]], kb: Option<&'a [f64]>) -> Vec<&'a [f64]> {
    kb.into_iter().chain(utts.iter().copied()).collect()
}

/// Recall-gate LSTM over the utterance vectors (response last), then the head.
pub fn score_rlstm(params: &RlstmParams, head: &ClassifierHead, input: &ConversationInput) -> Result<f64> {
    let utts = input.slices()?;
    let traces = recall::forward_sequence(params, utts, &input.kb_vector.vector)?;
    let h = &traces
        .last()
        .ok_or_else(|| Error::Internal("no recall steps".into()))?
        .base
        .h;
    Ok(sigmoid_scalar(head.logit(h)?))
}

/// Standard LSTM over the utterance vectors, optionally preceded by the
/// knowledge vector as an extra first step.
pub fn score_lstm(
    params: &LstmParams,
    head: &ClassifierHead,
    input: &ConversationInput,
    prepend_kb: bool,
) -> Result<f64> {
    let utts = input.slices()?;
    let kb = prepend_kb.then_some(input.kb_vector.vector.as_slice());
    let traces = lstm::forward_sequence(params, lstm_sequence(&utts, kb))?;
    Ok(sigmoid_scalar(
        head.logit(&lstm::final_hidden(&traces, params.hidden()))?,
    ))
}

/// One tanh layer over the right-aligned concatenation of utterance vectors,
/// optionally followed by the knowledge vector.
pub fn score_mlp(
    layer: &MlpParams,
    head: &ClassifierHead,
    input: &ConversationInput,
    append_kb: bool,
    max_turns: usize,
) -> Result<f64> {
    let utts = input.slices()?;
    let kb = append_kb.then_some(input.kb_vector.vector.as_slice());
    let t = mlp_forward(layer, &utts, kb, max_turns)?;
    Ok(sigmoid_scalar(head.logit(&t.hidden)?))
}

/// `σ(cᵀ M r + b)`.
pub fn score_affinity(params: &AffinityParams, context_vec: &RealVector, response_vec: &RealVector) -> Result<f64> {
    Ok(sigmoid_scalar(params.logit(context_vec, response_vec)?))
}

/// A conversation with tokens and triggered attributes mapped to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Context utterances, the query, then the candidate response.
    pub utterances: Vec<Vec<usize>>,
    /// Attribute rows summed into the knowledge vector.
    pub attributes: Vec<usize>,
    pub label: f64,
    pub group_id: u64,
}

/// Every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub words: EmbeddingTable,
    /// Attribute embeddings, present only for kinds that use knowledge.
    pub attrs: Option<EmbeddingTable>,
    pub encoder: Encoder,
    pub scorer: Scorer,
}

impl Parameters for ModelParams {
    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        push_matrix(&mut out, "", "words", &self.words.matrix);
        if let Some(a) = &self.attrs {
            push_matrix(&mut out, "", "attributes", &a.matrix);
        }
        self.encoder.push_blocks(&mut out);
        self.scorer.push_blocks(&mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let mut out = Vec::new();
        push_matrix_mut(&mut out, "", "words", &mut self.words.matrix);
        if let Some(a) = &mut self.attrs {
            push_matrix_mut(&mut out, "", "attributes", &mut a.matrix);
        }
        self.encoder.push_blocks_mut(&mut out);
        self.scorer.push_blocks_mut(&mut out);
        out
    }
}

enum ScorerTrace {
    Mlp(MlpTrace),
    Lstm(Vec<LstmTrace>),
    Rlstm(Vec<RecallStepTrace>),
    Affinity { c: Vec<f64>, r: Vec<f64> },
}

struct ForwardTrace {
    /// Token index sequences, one per encoder run.
    sequences: Vec<Vec<usize>>,
    encoder: Vec<EncoderTrace>,
    vectors: Vec<Vec<f64>>,
    kb: Vec<f64>,
    attributes: Vec<usize>,
    scorer: ScorerTrace,
    logit: f64,
}

impl ModelParams {
    /// Fresh parameters. Each component draws from its own sub-stream of
    /// `rng`, so e.g. replacing the word table does not shift other draws.
    pub fn init(config: &ModelConfig, word_vocab: usize, attr_vocab: usize, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let words = EmbeddingTable::random(word_vocab, d.word, &mut rng.fork(1));
        let attrs = config
            .kind
            .uses_kb()
            .then(|| EmbeddingTable::random(attr_vocab, d.knowledge, &mut rng.fork(2)));
        let mut enc_rng = rng.fork(3);
        let encoder = match config.kind {
            ModelKind::AffinityRnn => Encoder::Rnn(RnnParams::init(d.sentence, d.word, &mut enc_rng)),
            _ => Encoder::Lstm(LstmParams::init(d.sentence, d.word, &mut enc_rng)),
        };
        let mut r = rng.fork(4);
        let scorer = match config.kind {
            ModelKind::Mlp | ModelKind::MlpKb => {
                let append_kb = config.kind == ModelKind::MlpKb;
                let input = config.max_turns * d.sentence + if append_kb { d.knowledge } else { 0 };
                Scorer::Mlp {
                    layer: MlpParams::init(d.conversation, input, &mut r),
                    head: ClassifierHead::init(d.conversation, &mut r),
                    append_kb,
                    max_turns: config.max_turns,
                }
            }
            ModelKind::Lstm | ModelKind::LstmKb => Scorer::Lstm {
                cell: LstmParams::init(d.conversation, d.sentence, &mut r),
                head: ClassifierHead::init(d.conversation, &mut r),
                prepend_kb: config.kind == ModelKind::LstmKb,
            },
            ModelKind::Rlstm => Scorer::Rlstm {
                cell: RlstmParams::init(d.conversation, d.sentence, &mut r),
                head: ClassifierHead::init(d.conversation, &mut r),
            },
            ModelKind::AffinityRnn | ModelKind::AffinityLstm => {
                Scorer::Affinity(AffinityParams::init(d.sentence, &mut r))
            }
        };
        Ok(ModelParams {
            words,
            attrs,
            encoder,
            scorer,
        })
    }

    /// Copies word vectors into the attribute rows of the same tokens.
    /// Does nothing without an attribute table or when widths differ.
    pub fn tie_attributes(&mut self, words: &Vocabulary, attrs: &Vocabulary) {
        let Some(table) = &mut self.attrs else { return };
        if table.dim() != self.words.dim() {
            return;
        }
        for (a, token) in attrs.tokens().iter().enumerate().skip(2) {
            if let Some(w) = words.get(token) {
                table.matrix.row_mut(a).copy_from_slice(self.words.row(w));
            }
        }
    }

    fn embed<'a>(&'a self, seq: &[usize]) -> Result<Vec<&'a [f64]>> {
        let rows = self.words.vocab_size();
        seq.iter()
            .map(|&i| {
                if i < rows {
                    Ok(self.words.row(i))
                } else {
                    Err(Error::Data(alloc::format!(
                        "word index {i} outside a table of {rows} rows"
                    )))
                }
            })
            .collect()
    }

    fn knowledge(&self, attributes: &[usize]) -> Result<Vec<f64>> {
        let Some(table) = &self.attrs else {
            return Ok(Vec::new());
        };
        let mut kb = vec![0.0; table.dim()];
        for &a in attributes {
            if a >= table.vocab_size() {
                return Err(Error::Data(alloc::format!(
                    "attribute index {a} outside a table of {} rows",
                    table.vocab_size()
                )));
            }
            math::add_assign(&mut kb, table.row(a));
        }
        Ok(kb)
    }

    fn forward(&self, ex: &Example) -> Result<ForwardTrace> {
        if ex.utterances.len() < 2 {
            return Err(Error::Data(alloc::format!(
                "example needs a query and a response, got {} utterances",
                ex.utterances.len()
            )));
        }
        let sequences: Vec<Vec<usize>> = match self.scorer {
            Scorer::Affinity(_) => {
                let n = ex.utterances.len();
                vec![ex.utterances[..n - 1].concat(), ex.utterances[n - 1].clone()]
            }
            _ => ex.utterances.clone(),
        };
        let mut encoder = Vec::with_capacity(sequences.len());
        let mut vectors = Vec::with_capacity(sequences.len());
        for seq in &sequences {
            let (t, h) = self.encoder.forward(self.embed(seq)?)?;
            encoder.push(t);
            vectors.push(h);
        }
        let kb = self.knowledge(&ex.attributes)?;
        let utts: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
        let (scorer, logit) = match &self.scorer {
            Scorer::Mlp {
                layer,
                head,
                append_kb,
                max_turns,
            } => {
                let t = mlp_forward(layer, &utts, append_kb.then_some(kb.as_slice()), *max_turns)?;
                let z = head.logit(&t.hidden)?;
                (ScorerTrace::Mlp(t), z)
            }
            Scorer::Lstm { cell, head, prepend_kb } => {
                let t = lstm::forward_sequence(cell, lstm_sequence(&utts, prepend_kb.then_some(kb.as_slice())))?;
                let z = head.logit(&lstm::final_hidden(&t, cell.hidden()))?;
                (ScorerTrace::Lstm(t), z)
            }
            Scorer::Rlstm { cell, head } => {
                let t = recall::forward_sequence(cell, utts, &kb)?;
                let z = head.logit(&t[t.len() - 1].base.h)?;
                (ScorerTrace::Rlstm(t), z)
            }
            Scorer::Affinity(a) => {
                let z = a.logit(utts[0], utts[1])?;
                (
                    ScorerTrace::Affinity {
                        c: vectors[0].clone(),
                        r: vectors[1].clone(),
                    },
                    z,
                )
            }
        };
        if !logit.is_finite() {
            return Err(Error::NonFinite("model logit".into()));
        }
        Ok(ForwardTrace {
            sequences,
            encoder,
            vectors,
            kb,
            attributes: ex.attributes.clone(),
            scorer,
            logit,
        })
    }

    pub fn logit(&self, ex: &Example) -> Result<f64> {
        Ok(self.forward(ex)?.logit)
    }

    /// Confidence in (0,1) that the response fits the conversation.
    pub fn score(&self, ex: &Example) -> Result<f64> {
        Ok(sigmoid_scalar(self.logit(ex)?))
    }

    /// Binary cross-entropy of the example.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        Ok(crate::train::bce_loss(self.score(ex)?, ex.label))
    }

    /// Adds the gradient of the example's loss to `grads` and returns the loss.
    pub fn loss_and_grad(&self, ex: &Example, grads: &mut ModelParams) -> Result<f64> {
        let fw = self.forward(ex)?;
        let s = sigmoid_scalar(fw.logit);
        self.backward(&fw, s - ex.label, grads)?;
        Ok(crate::train::bce_loss(s, ex.label))
    }

    fn backward(&self, fw: &ForwardTrace, dlogit: f64, grads: &mut ModelParams) -> Result<()> {
        let n = fw.vectors.len();
        let dim = self.encoder.hidden();
        let kb_dim = fw.kb.len();
        let ig = match (&self.scorer, &fw.scorer, &mut grads.scorer) {
            (
                Scorer::Mlp { layer, head, .. },
                ScorerTrace::Mlp(t),
                Scorer::Mlp {
                    layer: g_layer,
                    head: g_head,
                    ..
                },
            ) => {
                let dh = head.backward(g_head, &t.hidden, dlogit);
                mlp_backward(layer, g_layer, t, &dh, n, dim, kb_dim)
            }
            (
                Scorer::Lstm { cell, head, prepend_kb },
                ScorerTrace::Lstm(t),
                Scorer::Lstm {
                    cell: g_cell,
                    head: g_head,
                    ..
                },
            ) => {
                let dh = head.backward(g_head, &lstm::final_hidden(t, cell.hidden()), dlogit);
                let mut dxs = lstm::backward_final(cell, t, &dh, g_cell)?;
                let kb = if *prepend_kb { dxs.remove(0) } else { vec![0.0; kb_dim] };
                InputGrads { utterances: dxs, kb }
            }
            (
                Scorer::Rlstm { cell, head },
                ScorerTrace::Rlstm(t),
                Scorer::Rlstm {
                    cell: g_cell,
                    head: g_head,
                },
            ) => {
                let h = &t[t.len() - 1].base.h;
                let dh = head.backward(g_head, h, dlogit);
                let mut dkb = vec![0.0; kb_dim];
                let dxs = recall::backward_into(cell, t, &dh, g_cell, &mut dkb)?;
                InputGrads {
                    utterances: dxs,
                    kb: dkb,
                }
            }
            (Scorer::Affinity(a), ScorerTrace::Affinity { c, r }, Scorer::Affinity(g)) => {
                g.m.outer_acc(&c.iter().map(|x| dlogit * x).collect::<Vec<_>>(), r);
                g.b += dlogit;
                let dc: Vec<f64> = a.m.matvec(r).into_iter().map(|x| dlogit * x).collect();
                let mut dr = vec![0.0; r.len()];
                a.m.matvec_t_acc(c, &mut dr);
                dr.iter_mut().for_each(|x| *x *= dlogit);
                InputGrads {
                    utterances: vec![dc, dr],
                    kb: Vec::new(),
                }
            }
            _ => return Err(Error::Internal("gradient buffer has a different model kind".into())),
        };

        for ((seq, trace), du) in fw.sequences.iter().zip(&fw.encoder).zip(&ig.utterances) {
            if seq.is_empty() {
                continue;
            }
            let dxs = self.encoder.backward(trace, du, &mut grads.encoder)?;
            if self.words.trainable {
                for (&w, dx) in seq.iter().zip(&dxs) {
                    math::add_assign(grads.words.matrix.row_mut(w), dx);
                }
            }
        }
        if let (Some(table), Some(g)) = (&self.attrs, &mut grads.attrs) {
            if table.trainable && !ig.kb.is_empty() {
                for &a in &fw.attributes {
                    math::add_assign(g.matrix.row_mut(a), &ig.kb);
                }
            }
        }
        Ok(())
    }
}

/// Parameters together with the vocabularies needed to read raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationModel {
    pub config: ModelConfig,
    pub words: Vocabulary,
    pub attrs: Vocabulary,
    pub params: ModelParams,
}

impl ConversationModel {
    /// Fresh model. Attribute rows whose token is also a word start as a copy
    /// of that word's vector when the two widths agree.
    pub fn new(config: ModelConfig, words: Vocabulary, attrs: Vocabulary, rng: &Rng) -> Result<Self> {
        let mut params = ModelParams::init(&config, words.len(), attrs.len(), rng)?;
        params.tie_attributes(&words, &attrs);
        Ok(ConversationModel {
            config,
            words,
            attrs,
            params,
        })
    }

    /// Maps tokens to indices and triggers knowledge from context and query.
    /// Kinds without knowledge get no attributes.
    pub fn prepare(&self, sample: &ConversationSample, kb: &KnowledgeBase) -> Example {
        let mut utterances: Vec<Vec<usize>> = sample.context.iter().map(|u| self.words.encode(u)).collect();
        utterances.push(self.words.encode(&sample.query));
        utterances.push(self.words.encode(&sample.response));
        let attributes = if self.config.kind.uses_kb() {
            let history: Vec<&String> = sample.history().collect();
            rank_attributes(kb, &history, self.config.top_n)
                .into_iter()
                .filter_map(|(a, _)| self.attrs.get(&a))
                .collect()
        } else {
            Vec::new()
        };
        Example {
            utterances,
            attributes,
            label: f64::from(sample.label),
            group_id: sample.group_id,
        }
    }

    pub fn score(&self, sample: &ConversationSample, kb: &KnowledgeBase) -> Result<f64> {
        self.params.score(&self.prepare(sample, kb))
    }
}
