//! Finite-difference verification of analytic gradients.
//!
//! Each parameter block is compared as a whole: the error of a block is
//! `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` with Euclidean norms, so coordinates whose
//! true gradient sits at the finite-difference noise floor cannot fail a
//! correct block on their own. The largest per-coordinate relative error is
//! reported alongside for diagnosis.

use alloc::string::String;
use alloc::vec::Vec;

use crate::embedding::Vocabulary;
use crate::math::{finite_diff_grad, norm, relative_error, RealVector};
use crate::models::{Dims, Example, ModelConfig, ModelKind, ModelParams};
use crate::params::Parameters;
use crate::rng::Rng;
use crate::{Error, Result};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted block error.
pub const TOLERANCE: f64 = 1e-4;
/// Largest hidden size accepted by [`check_model`].
pub const MAX_HIDDEN: usize = 32;
/// Longest sequence accepted by [`check_model`].
pub const MAX_SEQ_LEN: usize = 8;

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`
pub fn block_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub size: usize,
    pub error: f64,
    pub max_coordinate_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    /// The block with the largest error.
    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks.iter().max_by(|a, b| a.error.total_cmp(&b.error))
    }

    pub fn max_error(&self) -> f64 {
        self.worst().map_or(0.0, |b| b.error)
    }

    pub fn max_coordinate_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_coordinate_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < TOLERANCE
    }

    /// Blocks at or above the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &BlockCheck> {
        self.blocks.iter().filter(|b| b.error.is_nan() || b.error >= TOLERANCE)
    }
}

/// Compares `analytic` against central differences of `loss` around `params`,
/// block by block.
pub fn check_gradients<P, F>(params: &P, analytic: &P, mut loss: F, h: f64) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let grads = analytic.blocks();
    let n_blocks = params.blocks().len();
    if grads.len() != n_blocks {
        return Err(Error::Internal("gradient has a different block layout".into()));
    }
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(n_blocks);
    for (bi, g) in grads.iter().enumerate() {
        let theta = RealVector::new(params.blocks()[bi].data.to_vec())?;
        if g.data.len() != theta.dim() || g.name != params.blocks()[bi].name {
            return Err(Error::shape(g.name.clone(), theta.dim(), g.data.len()));
        }
        let numeric = finite_diff_grad(
            |th| {
                probe.blocks_mut()[bi].data.copy_from_slice(th);
                loss(&probe).unwrap_or(f64::NAN)
            },
            &theta,
            h,
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(alloc::format!("loss while probing block {}", g.name)),
            other => other,
        })?;
        probe.blocks_mut()[bi].data.copy_from_slice(&theta);
        let max_coordinate_error = g
            .data
            .iter()
            .zip(numeric.iter())
            .map(|(a, b)| relative_error(*a, *b))
            .fold(0.0, f64::max);
        out.push(BlockCheck {
            name: g.name.clone(),
            size: theta.dim(),
            error: block_relative_error(g.data, &numeric),
            max_coordinate_error,
        });
    }
    Ok(GradCheckReport { blocks: out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    pub kind: ModelKind,
    pub seed: u64,
    pub hidden: usize,
    pub seq_len: usize,
    /// Test hook: perturb this block of the analytic gradient before comparing.
    pub corrupt: Option<String>,
}

impl ModelCheck {
    pub fn new(kind: ModelKind, seed: u64, hidden: usize, seq_len: usize) -> Self {
        ModelCheck {
            kind,
            seed,
            hidden,
            seq_len,
            corrupt: None,
        }
    }
}

const CHECK_VOCAB: usize = 12;
const CHECK_ATTRS: usize = 6;
const CHECK_PARAM_SCALE: f64 = 0.5;

/// A random conversation with up to `seq_len` utterances of up to `seq_len`
/// tokens each (at least query and response).
fn random_example(rng: &mut Rng, seq_len: usize, uses_kb: bool) -> Example {
    let turns = seq_len.max(2);
    let utterances = (0..turns)
        .map(|_| {
            let len = 1 + rng.below(seq_len);
            (0..len).map(|_| rng.below(CHECK_VOCAB)).collect()
        })
        .collect();
    let attributes = if uses_kb {
        let mut a: Vec<usize> = (0..CHECK_ATTRS).collect();
        rng.shuffle(&mut a);
        a.truncate(1 + rng.below(3));
        a
    } else {
        Vec::new()
    };
    Example {
        utterances,
        attributes,
        label: if rng.below(2) == 0 { 0.0 } else { 1.0 },
        group_id: 0,
    }
}

/// Builds a small random model of `check.kind` and verifies every parameter
/// block, embeddings included, on one random conversation.
pub fn check_model(check: &ModelCheck) -> Result<GradCheckReport> {
    if check.hidden == 0 || check.hidden > MAX_HIDDEN || check.seq_len == 0 || check.seq_len > MAX_SEQ_LEN {
        return Err(Error::Config(alloc::format!(
            "gradient checks run at hidden 1..={MAX_HIDDEN} and sequence length 1..={MAX_SEQ_LEN}"
        )));
    }
    let mut config = ModelConfig::new(check.kind, Dims::uniform(check.hidden));
    config.max_turns = check.seq_len.max(2);
    let rng = Rng::new(check.seed);
    let mut params = ModelParams::init(&config, CHECK_VOCAB, CHECK_ATTRS, &rng)?;
    let mut r = rng.fork(5);
    for b in params.blocks_mut() {
        b.data
            .iter_mut()
            .for_each(|x| *x = r.uniform(-CHECK_PARAM_SCALE, CHECK_PARAM_SCALE));
    }
    let ex = random_example(&mut rng.fork(6), check.seq_len, check.kind.uses_kb());

    let mut grads = params.zeros_like();
    params.loss_and_grad(&ex, &mut grads)?;
    if let Some(name) = &check.corrupt {
        let mut blocks = grads.blocks_mut();
        let b = blocks
            .iter_mut()
            .find(|b| &b.name == name)
            .ok_or_else(|| Error::Config(alloc::format!("no parameter block named '{name}'")))?;
        b.data.iter_mut().for_each(|g| *g = *g * 1.5 + 1e-3);
    }
    check_gradients(&params, &grads, |p| p.loss(&ex), STEP)
}

/// Block names of a model kind, in checkpoint order.
pub fn block_names(kind: ModelKind) -> Result<Vec<String>> {
    let config = ModelConfig::new(kind, Dims::uniform(2));
    let p = ModelParams::init(&config, Vocabulary::new().len(), 2, &Rng::new(0))?;
    Ok(p.blocks().into_iter().map(|b| b.name).collect())
}

/// Per-seed dimensions used for sweeps: hidden cycles through 1..=16 and the
/// sequence length through 1..=5.
pub fn sweep_dims(seed: u64) -> (usize, usize) {
    (1 + (seed % 16) as usize, 1 + (seed % 5) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_error_examples() {
        assert_eq!(block_relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((block_relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 29.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(block_relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn every_kind_passes_at_seed_7() {
        for kind in ModelKind::ALL {
            let r = check_model(&ModelCheck::new(kind, 7, 4, 3)).unwrap();
            let w = r.worst().unwrap();
            assert!(r.passed(), "{kind}: block {} error {}", w.name, w.error);
        }
    }

    #[test]
    fn corrupted_gradient_fails_and_names_block() {
        let mut c = ModelCheck::new(ModelKind::Rlstm, 7, 4, 3);
        c.corrupt = Some("conversation.w_rk".into());
        let r = check_model(&c).unwrap();
        assert!(!r.passed());
        let failing: Vec<&str> = r.failures().map(|b| b.name.as_str()).collect();
        assert_eq!(failing, ["conversation.w_rk"]);
        c.corrupt = Some("nope".into());
        assert!(check_model(&c).is_err());
    }

    #[test]
    fn affinity_covers_bilinear_encoder_and_embeddings() {
        let names = block_names(ModelKind::AffinityLstm).unwrap();
        for n in ["words", "encoder.w_f", "encoder.b_c", "affinity.m", "affinity.b"] {
            assert!(names.iter().any(|x| x == n), "{n} missing from {names:?}");
        }
        let names = block_names(ModelKind::AffinityRnn).unwrap();
        assert!(names.iter().any(|x| x == "rnn.w"));
    }

    #[test]
    fn kb_kinds_include_attribute_table() {
        for kind in ModelKind::ALL {
            let names = block_names(kind).unwrap();
            assert_eq!(names.iter().any(|x| x == "attributes"), kind.uses_kb(), "{kind}");
        }
    }

    #[test]
    fn rejects_oversized_checks() {
        assert!(check_model(&ModelCheck::new(ModelKind::Lstm, 0, 33, 3)).is_err());
        assert!(check_model(&ModelCheck::new(ModelKind::Lstm, 0, 4, 9)).is_err());
    }
}
