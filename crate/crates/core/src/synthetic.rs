//! A generated conversation corpus where the right response depends only on
//! background knowledge.
//!
//! Each conversation mentions one entity somewhere in its history, and the
//! true response names that entity's attribute. Entities are split into
//! disjoint train, validation and test sets, so on held-out conversations the
//! entity token itself carries no learned signal: only a model that looks the
//! entity up in the knowledge base can pick the right response.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{build_samples, Conversation, ConversationSample, Split};
use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::eval::{evaluate, score_examples, EvalReport};
use crate::kb::{count_pairs, KnowledgeBase};
use crate::models::{ConversationModel, Dims, Example, ModelConfig, ModelKind};
use crate::params::OptimizerKind;
use crate::rng::Rng;
use crate::train::{train, Executor, TrainConfig, TrainReport};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub conversations: usize,
    pub entities: usize,
    pub attributes: usize,
    pub fillers: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Fractions of entities reserved for validation and test.
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            conversations: 2000,
            entities: 2000,
            attributes: 10,
            fillers: 60,
            min_turns: 3,
            max_turns: 7,
            valid_fraction: 0.1,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
    /// Two-token "entity attribute" documents the knowledge base is counted from.
    pub kb_corpus: Vec<Vec<String>>,
    pub attribute_of: BTreeMap<String, String>,
}

fn entity(i: usize) -> String {
    alloc::format!("ent{i}")
}

fn attribute(i: usize) -> String {
    alloc::format!("attr{i}")
}

fn filler(rng: &mut Rng, fillers: usize, len: usize) -> Vec<String> {
    (0..len).map(|_| alloc::format!("w{}", rng.below(fillers))).collect()
}

fn conversation(rng: &mut Rng, config: &SyntheticConfig, ent: &str, attr: &str) -> Conversation {
    let turns = config.min_turns + rng.below(config.max_turns - config.min_turns + 1);
    let mut utterances: Vec<Vec<String>> = (0..turns - 1)
        .map(|_| {
            let n = 2 + rng.below(3);
            filler(rng, config.fillers, n)
        })
        .collect();
    let at = rng.below(turns - 1);
    let pos = rng.below(utterances[at].len() + 1);
    utterances[at].insert(pos, String::from(ent));
    let n = 1 + rng.below(2);
    let mut response = filler(rng, config.fillers, n);
    let pos = rng.below(response.len() + 1);
    response.insert(pos, String::from(attr));
    utterances.push(response);
    Conversation::new(utterances).expect("generated conversations have at least two non-empty turns")
}

/// Generates the corpus deterministically from `config.seed`.
pub fn generate(config: &SyntheticConfig) -> SyntheticTask {
    let rng = Rng::new(config.seed);
    let mut map_rng = rng.fork(0);
    let attribute_of: BTreeMap<String, String> = (0..config.entities)
        .map(|e| (entity(e), attribute(map_rng.below(config.attributes))))
        .collect();

    let mut ids: Vec<usize> = (0..config.entities).collect();
    rng.fork(1).shuffle(&mut ids);
    let n_test = libm::round(config.entities as f64 * config.test_fraction) as usize;
    let n_valid = libm::round(config.entities as f64 * config.valid_fraction) as usize;
    let test_ids = &ids[..n_test];
    let valid_ids = &ids[n_test..n_test + n_valid];
    let train_ids = &ids[n_test + n_valid..];

    let mut conv_rng = rng.fork(2);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..config.conversations {
        let (pool, out) = match c % 10 {
            x if (x as f64) < 10.0 * config.test_fraction => (test_ids, &mut test),
            x if (x as f64) < 10.0 * (config.test_fraction + config.valid_fraction) => (valid_ids, &mut valid),
            _ => (train_ids, &mut train),
        };
        let e = entity(pool[conv_rng.below(pool.len())]);
        let a = attribute_of[&e].clone();
        out.push(conversation(&mut conv_rng, config, &e, &a));
    }

    let kb_corpus = attribute_of
        .iter()
        .map(|(e, a)| alloc::vec![e.clone(), a.clone()])
        .collect();
    SyntheticTask {
        train,
        valid,
        test,
        kb_corpus,
        attribute_of,
    }
}

impl SyntheticTask {
    /// Entity–attribute pairs counted from the knowledge documents.
    pub fn knowledge_base(&self) -> Result<KnowledgeBase> {
        let vocab: BTreeSet<String> = self.kb_corpus.iter().flatten().cloned().collect();
        count_pairs(&self.kb_corpus, &vocab, 2)
    }

    /// Stand-in for vectors pretrained on an open-domain corpus: one
    /// `Uniform[-1, 1]` vector per training token.
    pub fn pretrained_vectors(&self, dim: usize, rng: &Rng) -> Vec<(String, Vec<f64>)> {
        let mut rng = rng.clone();
        self.word_vocabulary()
            .tokens()
            .iter()
            .skip(2)
            .map(|t| (t.clone(), (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()))
            .collect()
    }

    /// Word vocabulary of the training conversations only, so held-out
    /// entities map to `<unk>`.
    pub fn word_vocabulary(&self) -> Vocabulary {
        Vocabulary::from_counts(
            self.train
                .iter()
                .flat_map(|c| c.utterances().iter().flatten().map(String::as_str)),
            1,
        )
    }
}

/// Training settings the experiment is calibrated for: width 32 everywhere,
/// Adam at 0.01, batches of 16.
pub fn experiment_config(kind: ModelKind, seed: u64) -> TrainConfig {
    let mut config = TrainConfig::new(ModelConfig::new(kind, Dims::uniform(32)));
    config.learning_rate = 0.01;
    config.batch_size = 16;
    config.optimizer = OptimizerKind::adam();
    config.seed = seed;
    config
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub training: TrainReport,
    /// On balanced held-out pairs (one positive, one negative).
    pub pairs: EvalReport,
    /// On held-out groups of ten.
    pub groups: EvalReport,
}

/// Trains `config.model.kind` on the task and evaluates it on the held-out
/// entities.
pub fn run_experiment<E: Executor>(task: &SyntheticTask, config: &TrainConfig, exec: &E) -> Result<ExperimentOutcome> {
    config.validate()?;
    let kb = task.knowledge_base()?;
    let rng = Rng::new(config.seed);
    let model_config: ModelConfig = config.model;
    let mut model = ConversationModel::new(
        model_config,
        task.word_vocabulary(),
        kb.attribute_vocabulary(),
        &rng.fork(10),
    )?;

    let vectors = task.pretrained_vectors(model_config.dims.word, &rng.fork(12));
    model.params.words =
        EmbeddingTable::from_entries(&model.words, model_config.dims.word, vectors, &mut rng.fork(13))?;
    let (words, attrs) = (model.words.clone(), model.attrs.clone());
    model.params.tie_attributes(&words, &attrs);
    let prepare = |samples: Vec<ConversationSample>, model: &ConversationModel| -> Vec<Example> {
        samples.iter().map(|s| model.prepare(s, &kb)).collect()
    };
    let sample_rng = rng.fork(11);
    let train_set = prepare(build_samples(&task.train, Split::Train, &sample_rng)?, &model);
    let valid_set = prepare(build_samples(&task.valid, Split::Train, &sample_rng.fork(1))?, &model);
    let test_pairs = prepare(build_samples(&task.test, Split::Train, &sample_rng.fork(2))?, &model);
    let test_groups = prepare(build_samples(&task.test, Split::Test, &sample_rng.fork(3))?, &model);

    let training = train(&mut model, &train_set, &valid_set, config, exec)?;
    let pairs = evaluate(&score_examples(&model.params, &test_pairs, exec)?)?;
    let groups = evaluate(&score_examples(&model.params, &test_groups, exec)?)?;
    Ok(ExperimentOutcome {
        training,
        pairs,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_split_by_entity() {
        let config = SyntheticConfig {
            conversations: 300,
            ..SyntheticConfig::default()
        };
        let a = generate(&config);
        assert_eq!(a, generate(&config));
        assert_eq!(a.train.len() + a.valid.len() + a.test.len(), 300);
        let mentioned = |convs: &[Conversation]| -> BTreeSet<String> {
            convs
                .iter()
                .flat_map(|c| c.utterances().iter().flatten())
                .filter(|t| t.starts_with("ent"))
                .cloned()
                .collect()
        };
        let (tr, va, te) = (mentioned(&a.train), mentioned(&a.valid), mentioned(&a.test));
        assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && va.is_disjoint(&te));
        for c in a.train.iter().chain(&a.test) {
            assert!((3..=7).contains(&c.turn_count()));
            let ent = c.utterances().iter().flatten().find(|t| t.starts_with("ent")).unwrap();
            assert!(c.response().contains(&a.attribute_of[ent]));
        }
    }

    #[test]
    fn knowledge_base_links_each_entity_to_its_attribute() {
        let task = generate(&SyntheticConfig::default());
        let kb = task.knowledge_base().unwrap();
        for (e, a) in &task.attribute_of {
            let attrs = kb.attributes_of(e).unwrap();
            assert_eq!(attrs.len(), 1);
            assert_eq!(attrs[a], 1);
        }
        let vocab = task.word_vocabulary();
        let held_out = task.test[0]
            .utterances()
            .iter()
            .flatten()
            .find(|t| t.starts_with("ent"))
            .unwrap();
        assert_eq!(vocab.get(held_out), None);
    }
}
