//! Accuracy and Recall@k over candidate groups.
//!
//! A group holds one positive and its negatives, contiguous in input order.
//! Candidates are ranked by score descending with ties broken by input order,
//! and Recall@k is the fraction of groups whose positive ranks within the top
//! k. Groups of ten also report "1 in 2 R@1" on the pair made of the positive
//! and the first negative.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::models::{Example, ModelParams};
use crate::train::Executor;
use crate::{Error, Result};

/// Score at or above which a candidate is predicted positive.
pub const THRESHOLD: f64 = 0.5;

/// Cut-offs reported for groups of ten.
pub const TEN_WAY_KS: [usize; 4] = [1, 2, 3, 5];

/// How the "m in 10 R@m" columns are read.
pub const RECALL_NOTE: &str =
    "m in 10 R@k counts a group when its single positive ranks within the top k of 10 candidates";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub group_id: u64,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRank {
    pub group_id: u64,
    pub size: usize,
    /// 1-based rank of the positive.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub samples: usize,
    /// `(k, group_size) → recall`
    pub recall_at: BTreeMap<(usize, usize), f64>,
    pub groups: Vec<GroupRank>,
}

impl EvalReport {
    /// Metric columns in table order, e.g. `("1 in 10 R@1", 0.61)`.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = alloc::vec![(String::from("Acc"), self.accuracy)];
        if let Some(&r) = self.recall_at.get(&(1, 2)) {
            out.push((String::from("1 in 2 R@1"), r));
        }
        for ((k, n), &r) in &self.recall_at {
            if *n != 2 {
                out.push((alloc::format!("{k} in {n} R@{k}"), r));
            }
        }
        out
    }

    /// `R@1 ≤ R@2 ≤ …` for every group size.
    pub fn is_monotone(&self) -> bool {
        let mut last: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(_, n), &r) in &self.recall_at {
            if last.get(&n).is_some_and(|&prev| r < prev) {
                return false;
            }
            last.insert(n, r);
        }
        true
    }
}

/// Rank of the candidate at `pos` within `scores`: one plus the number of
/// candidates scored higher or scored equal and listed earlier.
fn rank_of(scores: &[f64], pos: usize) -> usize {
    let s = scores[pos];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x > s || (x == s && i < pos))
        .count()
}

fn split_groups(candidates: &[ScoredCandidate]) -> Result<Vec<&[ScoredCandidate]>> {
    let mut groups = Vec::new();
    let mut seen = alloc::collections::BTreeSet::new();
    let mut start = 0;
    while start < candidates.len() {
        let id = candidates[start].group_id;
        let len = candidates[start..].iter().take_while(|c| c.group_id == id).count();
        let g = &candidates[start..start + len];
        if !seen.insert(id) {
            return Err(Error::Data(alloc::format!("group {id} is not contiguous")));
        }
        let positives = g.iter().filter(|c| c.label == 1).count();
        if positives != 1 || g.iter().any(|c| c.label > 1) {
            return Err(Error::Data(alloc::format!(
                "group {id} has {positives} positives, expected exactly 1"
            )));
        }
        if len != 2 && len != 10 {
            return Err(Error::Data(alloc::format!(
                "group {id} has {len} candidates, expected 2 or 10"
            )));
        }
        if let Some(c) = g.iter().find(|c| !c.score.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("score in group {}", c.group_id)));
        }
        groups.push(g);
        start += len;
    }
    Ok(groups)
}

/// Accuracy and Recall@k over contiguous candidate groups.
pub fn evaluate(candidates: &[ScoredCandidate]) -> Result<EvalReport> {
    if candidates.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let groups = split_groups(candidates)?;
    let correct = candidates
        .iter()
        .filter(|c| (c.score >= THRESHOLD) == (c.label == 1))
        .count();

    let mut hits: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ranks = Vec::with_capacity(groups.len());
    let mut pair_hits = 0;
    for g in &groups {
        let scores: Vec<f64> = g.iter().map(|c| c.score).collect();
        let pos = g.iter().position(|c| c.label == 1).unwrap_or(0);
        let rank = rank_of(&scores, pos);
        let n = g.len();
        ranks.push(GroupRank {
            group_id: g[0].group_id,
            size: n,
            rank,
        });
        if n == 10 {
            *totals.entry(10).or_insert(0) += 1;
            for k in TEN_WAY_KS {
                *hits.entry((k, 10)).or_insert(0) += usize::from(rank <= k);
            }
        }
        // The pair: the positive and the first negative, in input order.
        let neg = g.iter().position(|c| c.label == 0).unwrap_or(0);
        let (a, b) = if pos < neg { (pos, neg) } else { (neg, pos) };
        let pair = [scores[a], scores[b]];
        pair_hits += usize::from(rank_of(&pair, usize::from(pos > neg)) == 1);
    }

    let mut recall_at = BTreeMap::new();
    recall_at.insert((1, 2), pair_hits as f64 / groups.len() as f64);
    for ((k, n), h) in hits {
        recall_at.insert((k, n), h as f64 / totals[&n] as f64);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / candidates.len() as f64,
        samples: candidates.len(),
        recall_at,
        groups: ranks,
    })
}

/// Scores every example, in parallel, keeping input order.
pub fn score_examples<E: Executor>(
    params: &ModelParams,
    examples: &[Example],
    exec: &E,
) -> Result<Vec<ScoredCandidate>> {
    exec.map(examples.len(), |i| {
        let ex = &examples[i];
        Ok(ScoredCandidate {
            group_id: ex.group_id,
            label: u8::from(ex.label >= 0.5),
            score: params.score(ex)?,
        })
    })
    .into_iter()
    .collect()
}
