//! Vocabularies and trainable embedding tables.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math::{RealMatrix, RealVector};
use crate::rng::Rng;
use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const UNK_INDEX: usize = 0;
pub const PAD_INDEX: usize = 1;

/// Range of the uniform distribution used for rows without pretrained values.
pub const INIT_SCALE: f64 = 0.1;

/// Bijective token ↔ index map. `<unk>` is always index 0 and `<pad>` index 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            index: BTreeMap::new(),
            tokens: Vec::new(),
        };
        v.insert(UNK);
        v.insert(PAD);
        v
    }

    /// Builds a vocabulary from a token stream, most frequent first, ties
    /// lexicographic. Tokens seen fewer than `min_count` times are left out.
    pub fn from_counts<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::new();
        for (t, _) in ranked {
            v.insert(t);
        }
        v
    }

    /// Inserts a token if absent and returns its index.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_or_unk(t.as_ref())).collect()
    }
}

/// A `vocab_size × embed_dim` table, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: RealMatrix,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn random(vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        EmbeddingTable {
            matrix: RealMatrix::uniform(vocab_size, dim, INIT_SCALE, rng),
            trainable: true,
        }
    }

    /// Rows for tokens present in both `entries` and `vocab` are copied; every
    /// other row is drawn from `Uniform[-0.1, 0.1]`. The random draws happen
    /// for all rows first so the result does not depend on which tokens the
    /// entries cover.
    pub fn from_entries<I>(vocab: &Vocabulary, dim: usize, entries: I, rng: &mut Rng) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = Self::random(vocab.len(), dim, rng);
        for (token, values) in entries {
            if values.len() != dim {
                return Err(Error::shape(
                    alloc::format!("embedding row '{token}'"),
                    dim,
                    values.len(),
                ));
            }
            if let Some(i) = vocab.get(&token) {
                RealVector::new(values.clone())?;
                table.matrix.row_mut(i).copy_from_slice(&values);
            }
        }
        Ok(table)
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.matrix.row(index)
    }

    /// One vector per token; unknown tokens map to the `<unk>` row.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S], vocab: &Vocabulary) -> Result<Vec<RealVector>> {
        if self.vocab_size() != vocab.len() {
            return Err(Error::shape("embedding table rows", vocab.len(), self.vocab_size()));
        }
        Ok(tokens
            .iter()
            .map(|t| RealVector::from_vec_unchecked(self.row(vocab.index_or_unk(t.as_ref())).to_vec()))
            .collect())
    }
}
