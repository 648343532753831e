//! Loose-structured knowledge base: domain term extraction, windowed
//! entity–attribute pair counting and per-conversation knowledge triggering.
//!
//! The base is a flat `entity → (attribute → count)` map. Entities and
//! attributes come from the same filtered term vocabulary, so every stored
//! term can act as an entity key and pairs are stored in both directions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::math::{ln, RealVector};
use crate::{Error, Result};

/// Co-occurrence window used when none is configured.
pub const DEFAULT_WINDOW: usize = 5;
/// Attributes kept per triggered context when none is configured.
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermRecord {
    pub tfidf: f64,
    /// Entropy of the term's occurrence distribution over domain documents.
    pub entropy: f64,
    pub domain_freq: f64,
    pub general_freq: f64,
    /// `domain_freq · ln(domain_freq / general_freq)`
    pub kl_contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermStats {
    pub terms: BTreeMap<String, TermRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermExtraction {
    /// Selected terms, highest KL contribution first.
    pub vocabulary: Vec<String>,
    /// Statistics for every domain term, selected or not.
    pub stats: TermStats,
}

impl TermExtraction {
    pub fn vocabulary_set(&self) -> BTreeSet<String> {
        self.vocabulary.iter().cloned().collect()
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Selects domain terms by KL contribution against a general corpus.
///
/// Term frequencies on both sides use add-one smoothing over the joint type
/// count, so terms missing from the general corpus get a finite score. Only
/// terms whose tf-idf is at least the median tf-idf of all domain terms are
/// candidates; candidates are ranked by KL contribution descending, then
/// lexicographically.
pub fn extract_terms(domain: &[Vec<String>], general: &[Vec<String>], top_k: usize) -> Result<TermExtraction> {
    if domain.is_empty() || general.is_empty() {
        return Err(Error::Config(
            "term extraction needs non-empty domain and general corpora".into(),
        ));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }

    // term -> per-document counts in the domain corpus
    let mut per_doc: BTreeMap<&str, Vec<(usize, u64)>> = BTreeMap::new();
    let mut domain_total = 0u64;
    for (d, doc) in domain.iter().enumerate() {
        let mut local: BTreeMap<&str, u64> = BTreeMap::new();
        for t in doc {
            *local.entry(t.as_str()).or_insert(0) += 1;
            domain_total += 1;
        }
        for (t, c) in local {
            per_doc.entry(t).or_default().push((d, c));
        }
    }
    let mut general_counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut general_total = 0u64;
    for doc in general {
        for t in doc {
            *general_counts.entry(t.as_str()).or_insert(0) += 1;
            general_total += 1;
        }
    }
    let types: BTreeSet<&str> = per_doc.keys().chain(general_counts.keys()).copied().collect();
    let v = types.len() as f64;
    let n_docs = domain.len() as f64;

    let mut stats = TermStats::default();
    for (&term, docs) in &per_doc {
        let count: u64 = docs.iter().map(|&(_, c)| c).sum();
        let df = docs.len() as f64;
        let tf = count as f64 / domain_total as f64;
        let idf = ln((1.0 + n_docs) / (1.0 + df)) + 1.0;
        let entropy = -docs
            .iter()
            .map(|&(_, c)| {
                let p = c as f64 / count as f64;
                p * ln(p)
            })
            .sum::<f64>();
        let domain_freq = (count as f64 + 1.0) / (domain_total as f64 + v);
        let g = general_counts.get(term).copied().unwrap_or(0);
        let general_freq = (g as f64 + 1.0) / (general_total as f64 + v);
        stats.terms.insert(
            String::from(term),
            TermRecord {
                tfidf: tf * idf,
                entropy,
                domain_freq,
                general_freq,
                kl_contribution: domain_freq * ln(domain_freq / general_freq),
            },
        );
    }

    let mut tfidfs: Vec<f64> = stats.terms.values().map(|r| r.tfidf).collect();
    let floor = median(&mut tfidfs);
    let mut ranked: Vec<(&String, &TermRecord)> = stats.terms.iter().filter(|(_, r)| r.tfidf >= floor).collect();
    ranked.sort_by(|a, b| b.1.kl_contribution.total_cmp(&a.1.kl_contribution).then(a.0.cmp(b.0)));
    let vocabulary = ranked.into_iter().take(top_k).map(|(t, _)| t.clone()).collect();
    Ok(TermExtraction { vocabulary, stats })
}

/// `entity → (attribute → count)` with strictly positive counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    pairs: BTreeMap<String, BTreeMap<String, u64>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` to the pair; a zero count is ignored.
    pub fn add(&mut self, entity: &str, attribute: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .pairs
            .entry(String::from(entity))
            .or_default()
            .entry(String::from(attribute))
            .or_insert(0) += count;
    }

    pub fn count(&self, entity: &str, attribute: &str) -> u64 {
        self.pairs
            .get(entity)
            .and_then(|a| a.get(attribute))
            .copied()
            .unwrap_or(0)
    }

    pub fn attributes_of(&self, entity: &str) -> Option<&BTreeMap<String, u64>> {
        self.pairs.get(entity)
    }

    pub fn contains_entity(&self, entity: &str) -> bool {
        self.pairs.contains_key(entity)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    /// Every distinct attribute, sorted.
    pub fn attributes(&self) -> BTreeSet<&str> {
        self.pairs.values().flat_map(|m| m.keys().map(String::as_str)).collect()
    }

    /// Number of stored pairs.
    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(entity, attribute, count)` sorted by entity, then attribute.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.pairs
            .iter()
            .flat_map(|(e, m)| m.iter().map(move |(a, &c)| (e.as_str(), a.as_str(), c)))
    }

    pub fn merge(&mut self, other: &KnowledgeBase) {
        for (e, a, c) in other.iter() {
            self.add(e, a, c);
        }
    }

    /// Drops every pair with a count below `min_count`.
    pub fn prune(&mut self, min_count: u64) {
        for m in self.pairs.values_mut() {
            m.retain(|_, c| *c >= min_count);
        }
        self.pairs.retain(|_, m| !m.is_empty());
    }

    /// An attribute vocabulary covering every stored attribute, in sorted order.
    pub fn attribute_vocabulary(&self) -> Vocabulary {
        let mut v = Vocabulary::new();
        for a in self.attributes() {
            v.insert(a);
        }
        v
    }
}

fn count_document(doc: &[String], vocab: &BTreeSet<String>, window: usize, kb: &mut KnowledgeBase) {
    let hits: Vec<(usize, &str)> = doc
        .iter()
        .enumerate()
        .filter(|(_, t)| vocab.contains(t.as_str()))
        .map(|(i, t)| (i, t.as_str()))
        .collect();
    for (k, &(i, a)) in hits.iter().enumerate() {
        for &(j, b) in hits[k + 1..].iter().take_while(|&&(j, _)| j - i < window) {
            debug_assert!(j > i);
            if a != b {
                kb.add(a, b, 1);
                kb.add(b, a, 1);
            }
        }
    }
}

/// Counts co-occurring vocabulary terms within a sliding window.
///
/// Every position pair `i < j` with `j − i < window` whose tokens are both in
/// `vocab` and differ increments `(tᵢ, tⱼ)` and `(tⱼ, tᵢ)`. Identical tokens
/// never pair with themselves.
pub fn count_pairs(corpus: &[Vec<String>], vocab: &BTreeSet<String>, window: usize) -> Result<KnowledgeBase> {
    if window < 2 {
        return Err(Error::Config(alloc::format!("window must be at least 2, got {window}")));
    }
    let mut kb = KnowledgeBase::new();
    for doc in corpus {
        count_document(doc, vocab, window, &mut kb);
    }
    Ok(kb)
}

/// Counts a single document; the building block for parallel counting with a
/// final [`KnowledgeBase::merge`].
pub fn count_pairs_document(doc: &[String], vocab: &BTreeSet<String>, window: usize) -> Result<KnowledgeBase> {
    count_pairs(core::slice::from_ref(&doc.to_vec()), vocab, window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeVector {
    pub vector: RealVector,
    pub contributing_attributes: Vec<String>,
}

/// Attributes of the entities mentioned in `context`, ranked by summed count
/// descending and then lexicographically, truncated to `top_n`.
///
/// Mentions are exact token matches against the entity keys, treated as a set.
pub fn rank_attributes<S: AsRef<str>>(kb: &KnowledgeBase, context: &[S], top_n: usize) -> Vec<(String, u64)> {
    let entities: BTreeSet<&str> = context
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| kb.contains_entity(t))
        .collect();
    let mut summed: BTreeMap<&str, u64> = BTreeMap::new();
    for e in entities {
        if let Some(attrs) = kb.attributes_of(e) {
            for (a, &c) in attrs {
                *summed.entry(a.as_str()).or_insert(0) += c;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = summed.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|(a, c)| (String::from(a), c))
        .collect()
}

/// Sums the embeddings of the top attributes triggered by `context`.
///
/// Returns the zero vector with no contributing attributes when no entity
/// matches.
pub fn trigger<S: AsRef<str>>(
    kb: &KnowledgeBase,
    context: &[S],
    attr_table: &EmbeddingTable,
    attr_vocab: &Vocabulary,
    top_n: usize,
) -> Result<KnowledgeVector> {
    if top_n == 0 {
        return Err(Error::Config("top_n must be at least 1".into()));
    }
    if attr_table.vocab_size() != attr_vocab.len() {
        return Err(Error::shape(
            "attribute table rows",
            attr_vocab.len(),
            attr_table.vocab_size(),
        ));
    }
    let attrs: Vec<String> = rank_attributes(kb, context, top_n)
        .into_iter()
        .map(|(a, _)| a)
        .collect();
    let mut vector = RealVector::zeros(attr_table.dim());
    for a in &attrs {
        crate::math::add_assign(&mut vector, attr_table.row(attr_vocab.index_or_unk(a)));
    }
    Ok(KnowledgeVector {
        vector,
        contributing_attributes: attrs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    /// Quadratic double loop over all position pairs.
    fn brute_force_pairs(
        corpus: &[Vec<String>],
        vocab: &BTreeSet<String>,
        window: usize,
    ) -> BTreeMap<(String, String), u64> {
        let mut out = BTreeMap::new();
        for d in corpus {
            for i in 0..d.len() {
                for j in 0..d.len() {
                    if i < j && j - i < window && vocab.contains(&d[i]) && vocab.contains(&d[j]) && d[i] != d[j] {
                        *out.entry((d[i].clone(), d[j].clone())).or_insert(0) += 1;
                        *out.entry((d[j].clone(), d[i].clone())).or_insert(0) += 1;
                    }
                }
            }
        }
        out
    }

    fn as_map(kb: &KnowledgeBase) -> BTreeMap<(String, String), u64> {
        kb.iter().map(|(e, a, c)| ((e.to_string(), a.to_string()), c)).collect()
    }

    #[test]
    fn window_two_on_abc() {
        let kb = count_pairs(&[doc("a b c")], &set(&["a", "b", "c"]), 2).unwrap();
        let expected = brute_force_pairs(&[doc("a b c")], &set(&["a", "b", "c"]), 2);
        assert_eq!(as_map(&kb), expected);
        assert_eq!(kb.len(), 4);
        assert_eq!(kb.count("a", "b"), 1);
        assert_eq!(kb.count("c", "b"), 1);
        assert_eq!(kb.count("a", "c"), 0);
    }

    #[test]
    fn window_three_adds_ac() {
        let kb = count_pairs(&[doc("a b c")], &set(&["a", "b", "c"]), 3).unwrap();
        assert_eq!(kb.len(), 6);
        assert_eq!(kb.count("a", "c"), 1);
        assert_eq!(kb.count("c", "a"), 1);
    }

    #[test]
    fn no_vocab_terms_leave_kb_empty() {
        let kb = count_pairs(&[doc("x y z"), vec![]], &set(&["a"]), 5).unwrap();
        assert!(kb.is_empty());
        assert!(count_pairs(&[doc("a")], &set(&["a"]), 1).is_err());
    }

    proptest! {
        #[test]
        fn counting_matches_brute_force(
            docs in proptest::collection::vec(proptest::collection::vec(0u8..12, 0..60), 1..8),
            window in 2usize..9,
        ) {
            let corpus: Vec<Vec<String>> = docs
                .iter()
                .map(|d| d.iter().map(|t| alloc::format!("t{t}")).collect())
                .collect();
            let vocab: BTreeSet<String> = (0..8).map(|t| alloc::format!("t{t}")).collect();
            let kb = count_pairs(&corpus, &vocab, window).unwrap();
            prop_assert_eq!(as_map(&kb), brute_force_pairs(&corpus, &vocab, window));
        }
    }

    #[test]
    fn merge_equals_joint_count() {
        let corpus = vec![doc("a b a c"), doc("c b b a")];
        let vocab = set(&["a", "b", "c"]);
        let mut merged = KnowledgeBase::new();
        for d in &corpus {
            merged.merge(&count_pairs_document(d, &vocab, 3).unwrap());
        }
        assert_eq!(merged, count_pairs(&corpus, &vocab, 3).unwrap());
    }

    #[test]
    fn prune_drops_rare_pairs() {
        let mut kb = KnowledgeBase::new();
        kb.add("a", "x", 3);
        kb.add("a", "y", 1);
        kb.add("b", "y", 1);
        kb.prune(2);
        assert_eq!(kb.len(), 1);
        assert!(!kb.contains_entity("b"));
    }

    /// Direct evaluation of the smoothed KL contribution for one term.
    fn kl_by_hand(c_dom: f64, n_dom: f64, c_gen: f64, n_gen: f64, types: f64) -> f64 {
        let p = (c_dom + 1.0) / (n_dom + types);
        let q = (c_gen + 1.0) / (n_gen + types);
        p * (p / q).ln()
    }

    #[test]
    fn domain_terms_rank_first() {
        let domain: Vec<Vec<String>> = (0..100).map(|_| doc("ubuntu kernel panic")).collect();
        let general: Vec<Vec<String>> = (0..100).map(|_| doc("the cat sat")).collect();
        let out = extract_terms(&domain, &general, 10).unwrap();
        assert_eq!(out.vocabulary, vec!["kernel", "panic", "ubuntu"]);
        let expected = kl_by_hand(100.0, 300.0, 0.0, 300.0, 6.0);
        for t in ["kernel", "panic", "ubuntu"] {
            let r = out.stats.terms[t];
            assert!((r.kl_contribution - expected).abs() < 1e-15);
            assert!(r.kl_contribution > 0.0);
            // One occurrence in each of 100 documents.
            assert!((r.entropy - (100.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_corpora_rank_lexicographically() {
        let corpus = vec![doc("zeta alpha mid alpha"), doc("mid beta zeta"), doc("alpha beta")];
        let out = extract_terms(&corpus, &corpus, 10).unwrap();
        assert!(out.stats.terms.values().all(|r| r.kl_contribution == 0.0));
        let mut sorted = out.vocabulary.clone();
        sorted.sort();
        assert_eq!(out.vocabulary, sorted);
        assert!(!out.vocabulary.is_empty());
    }

    #[test]
    fn top_k_larger_than_candidates() {
        let domain = vec![doc("a b"), doc("a c")];
        let general = vec![doc("x")];
        let out = extract_terms(&domain, &general, 100).unwrap();
        let candidates = out.stats.terms.values().filter(|r| {
            let mut t: Vec<f64> = out.stats.terms.values().map(|r| r.tfidf).collect();
            r.tfidf >= median(&mut t)
        });
        assert_eq!(out.vocabulary.len(), candidates.count());
        assert!(extract_terms(&domain, &general, 0).is_err());
        assert!(extract_terms(&[], &general, 3).is_err());
    }

    #[test]
    fn extraction_is_deterministic() {
        let domain = vec![doc("gpu driver crash gpu"), doc("kernel driver")];
        let general = vec![doc("the driver went home"), doc("a cat")];
        assert_eq!(
            extract_terms(&domain, &general, 3).unwrap(),
            extract_terms(&domain, &general, 3).unwrap()
        );
    }

    fn example_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.add("A", "x", 3);
        kb.add("A", "y", 1);
        kb.add("B", "y", 2);
        kb.add("B", "z", 1);
        kb
    }

    fn attr_setup(kb: &KnowledgeBase) -> (Vocabulary, EmbeddingTable) {
        let v = kb.attribute_vocabulary();
        let t = EmbeddingTable::random(v.len(), 3, &mut Rng::new(8));
        (v, t)
    }

    /// Scores every attribute by a linear scan and sorts the full list.
    fn brute_force_rank(kb: &KnowledgeBase, context: &[&str], n: usize) -> Vec<String> {
        let mut scored: Vec<(String, u64)> = Vec::new();
        for a in kb.attributes() {
            let mut total = 0;
            let mut seen = BTreeSet::new();
            for e in context {
                if seen.insert(*e) {
                    total += kb.count(e, a);
                }
            }
            if total > 0 {
                scored.push((a.to_string(), total));
            }
        }
        scored.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        scored.into_iter().take(n).map(|(a, _)| a).collect()
    }

    #[test]
    fn trigger_example_ties_lexicographic() {
        let kb = example_kb();
        let (v, t) = attr_setup(&kb);
        let ctx = ["hello", "A", "and", "B"];
        let kv = trigger(&kb, &ctx, &t, &v, 2).unwrap();
        assert_eq!(kv.contributing_attributes, vec!["x", "y"]);
        assert_eq!(kv.contributing_attributes, brute_force_rank(&kb, &ctx, 2));
        let mut expected = t.row(v.get("x").unwrap()).to_vec();
        crate::math::add_assign(&mut expected, t.row(v.get("y").unwrap()));
        assert_eq!(kv.vector.as_slice(), expected.as_slice());
    }

    #[test]
    fn trigger_without_entities_is_zero() {
        let kb = example_kb();
        let (v, t) = attr_setup(&kb);
        let kv = trigger(&kb, &["nothing", "here"], &t, &v, 10).unwrap();
        assert!(kv.vector.is_zero());
        assert!(kv.contributing_attributes.is_empty());
        assert!(trigger(&kb, &["A"], &t, &v, 0).is_err());
    }

    #[test]
    fn trigger_uses_all_when_fewer_than_top_n() {
        let kb = example_kb();
        let (v, t) = attr_setup(&kb);
        let kv = trigger(&kb, &["A", "B"], &t, &v, 10).unwrap();
        assert_eq!(kv.contributing_attributes, vec!["x", "y", "z"]);
    }

    proptest! {
        #[test]
        fn trigger_properties(
            pairs in proptest::collection::vec((0u8..6, 0u8..10, 1u64..5), 0..30),
            context in proptest::collection::vec(0u8..10, 0..12),
            top_n in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut kb = KnowledgeBase::new();
            for (e, a, c) in &pairs {
                kb.add(&alloc::format!("e{e}"), &alloc::format!("a{a}"), *c);
            }
            let (v, _) = attr_setup(&kb);
            let t = EmbeddingTable::random(v.len(), 4, &mut Rng::new(seed));
            let ctx: Vec<String> = context.iter().map(|e| alloc::format!("e{e}")).collect();
            let mut shuffled = ctx.clone();
            Rng::new(seed).shuffle(&mut shuffled);

            let a = trigger(&kb, &ctx, &t, &v, top_n).unwrap();
            let b = trigger(&kb, &shuffled, &t, &v, top_n).unwrap();
            prop_assert_eq!(&a, &b);

            let refs: Vec<&str> = ctx.iter().map(String::as_str).collect();
            prop_assert_eq!(&a.contributing_attributes, &brute_force_rank(&kb, &refs, top_n));

            let bound: f64 = a
                .contributing_attributes
                .iter()
                .map(|x| crate::math::norm(t.row(v.get(x).unwrap())))
                .sum();
            prop_assert!(a.vector.norm() <= bound + 1e-12);
        }
    }
}
