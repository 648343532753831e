//! Conversations, tokenisation, turn filtering and positive/negative sample
//! construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::rng::Rng;
use crate::{Error, Result};

/// One turn, already tokenised.
pub type Utterance = Vec<String>;

/// Minimum corpus size for sample construction: each test group needs nine
/// responses borrowed from other conversations.
pub const MIN_CORPUS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    /// Whitespace-separated words.
    #[default]
    Word,
    /// One token per Unicode scalar, whitespace dropped.
    Char,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Utterance {
        match self {
            Tokenizer::Word => text.split_whitespace().map(str::to_string).collect(),
            Tokenizer::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_string())
                .collect(),
        }
    }

    /// Inverse of [`tokenize`](Self::tokenize) up to whitespace normalisation.
    pub fn join<S: AsRef<str>>(self, tokens: &[S]) -> String {
        let sep = match self {
            Tokenizer::Word => " ",
            Tokenizer::Char => "",
        };
        let mut out = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push_str(sep);
            }
            out.push_str(t.as_ref());
        }
        out
    }
}

impl FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Tokenizer::Word),
            "char" => Ok(Tokenizer::Char),
            _ => Err(Error::Config(alloc::format!(
                "unknown tokenizer '{s}' (expected word or char)"
            ))),
        }
    }
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tokenizer::Word => "word",
            Tokenizer::Char => "char",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    utterances: Vec<Utterance>,
}

impl Conversation {
    /// Fails unless there are at least two non-empty utterances.
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.len() < 2 {
            return Err(Error::Data(alloc::format!(
                "a conversation needs at least 2 utterances, got {}",
                utterances.len()
            )));
        }
        if utterances.iter().any(Vec::is_empty) {
            return Err(Error::Data("empty utterance".into()));
        }
        Ok(Conversation { utterances })
    }

    /// Tokenises raw turns, dropping turns that tokenise to nothing.
    ///
    /// Returns the conversation (if at least two turns survive) and the
    /// number of dropped turns.
    pub fn from_texts<S: AsRef<str>>(texts: &[S], tokenizer: Tokenizer) -> (Option<Self>, usize) {
        let mut dropped = 0;
        let mut utterances = Vec::with_capacity(texts.len());
        for t in texts {
            let u = tokenizer.tokenize(t.as_ref());
            if u.is_empty() {
                dropped += 1;
            } else {
                utterances.push(u);
            }
        }
        (Self::new(utterances).ok(), dropped)
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn turn_count(&self) -> usize {
        self.utterances.len()
    }

    pub fn response(&self) -> &Utterance {
        &self.utterances[self.utterances.len() - 1]
    }
}

/// Turn count → number of conversations.
pub fn turn_histogram(convs: &[Conversation]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for c in convs {
        *h.entry(c.turn_count()).or_insert(0) += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<Conversation>,
    /// Histogram of the input, before filtering.
    pub histogram: BTreeMap<usize, usize>,
}

/// Keeps conversations with `min_turns ≤ turn_count ≤ max_turns`.
pub fn filter_turns(convs: Vec<Conversation>, min_turns: usize, max_turns: usize) -> Result<FilterOutcome> {
    if min_turns > max_turns {
        return Err(Error::Config(alloc::format!(
            "min_turns {min_turns} exceeds max_turns {max_turns}"
        )));
    }
    let histogram = turn_histogram(&convs);
    let kept = convs
        .into_iter()
        .filter(|c| (min_turns..=max_turns).contains(&c.turn_count()))
        .collect();
    Ok(FilterOutcome { kept, histogram })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    /// Negatives drawn per positive: one for training, nine otherwise.
    pub fn negatives(self) -> usize {
        match self {
            Split::Train => 1,
            Split::Valid | Split::Test => 9,
        }
    }

    pub fn group_size(self) -> usize {
        self.negatives() + 1
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(alloc::format!(
                "unknown split '{s}' (expected train, valid or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationSample {
    pub context: Vec<Utterance>,
    pub query: Utterance,
    pub response: Utterance,
    pub label: u8,
    pub group_id: u64,
}

impl ConversationSample {
    /// Context followed by query: the text knowledge is triggered from.
    pub fn history(&self) -> impl Iterator<Item = &String> {
        self.context.iter().flatten().chain(self.query.iter())
    }
}

fn positive(conv: &Conversation, group_id: u64) -> ConversationSample {
    let u = conv.utterances();
    let n = u.len();
    ConversationSample {
        context: u[..n - 2].to_vec(),
        query: u[n - 2].clone(),
        response: u[n - 1].clone(),
        label: 1,
        group_id,
    }
}

/// Draws `k` distinct conversation indices other than `own` whose response
/// differs from `own`'s.
fn draw_negatives(convs: &[Conversation], own: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let target = convs[own].response();
    let eligible = |j: usize| j != own && convs[j].response() != target;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut seen = BTreeSet::new();
    for _ in 0..64 * k {
        if chosen.len() == k {
            return Ok(chosen);
        }
        let j = rng.below(convs.len());
        if eligible(j) && seen.insert(j) {
            chosen.push(j);
        }
    }
    if chosen.len() == k {
        return Ok(chosen);
    }
    // Rejection sampling stalled: the eligible pool is small, so enumerate it.
    let mut pool: Vec<usize> = (0..convs.len())
        .filter(|&j| eligible(j) && !seen.contains(&j))
        .collect();
    if chosen.len() + pool.len() < k {
        return Err(Error::Config(alloc::format!(
            "conversation {own}: only {} other conversations have a different response, {k} negatives needed",
            chosen.len() + pool.len()
        )));
    }
    while chosen.len() < k {
        let idx = rng.below(pool.len());
        chosen.push(pool.swap_remove(idx));
    }
    Ok(chosen)
}

/// Samples for one conversation: its negatives with the positive inserted at
/// a random position, so ranking ties cannot favor it. Each conversation draws from its own sub-stream, so any subset of groups
/// can be built independently and in any order.
pub fn build_group(convs: &[Conversation], index: usize, split: Split, rng: &Rng) -> Result<Vec<ConversationSample>> {
    if convs.len() < MIN_CORPUS {
        return Err(Error::Config(alloc::format!(
            "sample construction needs at least {MIN_CORPUS} conversations, got {}",
            convs.len()
        )));
    }
    let mut sub = rng.fork(split.stream()).fork(index as u64);
    let pos = positive(&convs[index], index as u64);
    let mut group = Vec::with_capacity(split.group_size());
    for j in draw_negatives(convs, index, split.negatives(), &mut sub)? {
        group.push(ConversationSample {
            response: convs[j].response().clone(),
            label: 0,
            ..pos.clone()
        });
    }
    let at = sub.below(group.len() + 1);
    group.insert(at, pos);
    Ok(group)
}

/// Positive/negative samples for every conversation, grouped by conversation
/// index.
pub fn build_samples(convs: &[Conversation], split: Split, rng: &Rng) -> Result<Vec<ConversationSample>> {
    let mut out = Vec::with_capacity(convs.len() * split.group_size());
    for i in 0..convs.len() {
        out.extend(build_group(convs, i, split, rng)?);
    }
    Ok(out)
}

/// Splits a flat sample list into contiguous groups by `group_id`, checking
/// that each group holds exactly one positive.
pub fn group_samples(samples: &[ConversationSample]) -> Result<Vec<&[ConversationSample]>> {
    let mut groups = Vec::new();
    let mut seen = BTreeSet::new();
    let mut start = 0;
    while start < samples.len() {
        let id = samples[start].group_id;
        let end = start + samples[start..].iter().take_while(|s| s.group_id == id).count();
        if !seen.insert(id) {
            return Err(Error::Data(alloc::format!("group {id} is not contiguous")));
        }
        let group = &samples[start..end];
        let positives = group.iter().filter(|s| s.label == 1).count();
        if positives != 1 {
            return Err(Error::Data(alloc::format!(
                "group {id} has {positives} positives, expected exactly 1"
            )));
        }
        if let Some(bad) = group.iter().find(|s| s.label > 1) {
            return Err(Error::Data(alloc::format!("group {id} has label {}", bad.label)));
        }
        groups.push(group);
        start = end;
    }
    Ok(groups)
}
