use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rlstm_core::data::{build_group, filter_turns, group_samples, Conversation, ConversationSample, Split, Tokenizer};
use rlstm_core::embedding::{EmbeddingTable, Vocabulary};
use rlstm_core::eval::{evaluate, score_examples, EvalReport};
use rlstm_core::gradcheck::{check_model, sweep_dims, GradCheckReport, ModelCheck};
use rlstm_core::kb::{count_pairs, extract_terms, KnowledgeBase, TermExtraction, DEFAULT_TOP_N, DEFAULT_WINDOW};
use rlstm_core::models::{ConversationModel, Dims, Example, ModelConfig, ModelKind, DEFAULT_MAX_TURNS};
use rlstm_core::params::OptimizerKind;
use rlstm_core::train::{train, Executor, TrainConfig, TrainReport};
use rlstm_core::Rng;
use serde_json::json;

use crate::cli::{BuildDatasetArgs, Cli, Command, EvalArgs, GradcheckArgs, KbExtractArgs, ScoreArgs, TrainArgs};
use crate::config::ConfigFile;
use crate::error::{CliError, Result};
use crate::exec::RayonExecutor;
use crate::formats::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::formats::corpus::{load_corpus, load_documents};
use crate::formats::embeddings::parse_embeddings;
use crate::formats::kb::{load_kb, save_kb};
use crate::formats::report::{format_report_text, report_json};
use crate::formats::samples::{load_samples, save_samples};
use crate::formats::{read_text, write_text};
use crate::manifest::{manifest_path, ManifestBuilder};

pub const DEFAULT_TOP_TERMS: usize = 1000;
pub const DEFAULT_MIN_TURNS: usize = 3;
pub const DEFAULT_MAX_CONVERSATION_TURNS: usize = 7;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.1;
/// Documents counted per parallel job in `kb-extract`.
const DOCS_PER_JOB: usize = 256;

struct Context {
    file: ConfigFile,
    exec: RayonExecutor,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = file.resolve_opt(cli.threads, "threads")?;
    let ctx = Context {
        exec: RayonExecutor::new(threads)?,
        file,
    };
    match cli.command {
        Command::KbExtract(a) => kb_extract(&ctx, a),
        Command::BuildDataset(a) => build_dataset(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Score(a) => score_cmd(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
    }
}

fn tokenizer(ctx: &Context, flag: Option<String>) -> Result<Tokenizer> {
    Ok(ctx.file.resolve(flag, "tokenizer", "word".to_string())?.parse()?)
}

fn parse_dims(s: &str) -> Result<Dims> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Input(format!("--dims expects four comma-separated sizes, got '{s}'")))?;
    match v[..] {
        [word, sentence, knowledge, conversation] => Ok(Dims {
            word,
            sentence,
            knowledge,
            conversation,
        }),
        _ => Err(CliError::Input(format!(
            "--dims expects four comma-separated sizes, got '{s}'"
        ))),
    }
}

pub fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "momentum" => Ok(OptimizerKind::Momentum { beta: 0.9 }),
        "adam" => Ok(OptimizerKind::adam()),
        _ => Err(CliError::Input(format!(
            "unknown optimizer '{s}' (expected sgd, momentum or adam)"
        ))),
    }
}

/// Extracts terms, counts their co-occurrences over the domain corpus in
/// parallel and drops pairs seen fewer than `min_count` times.
pub fn build_kb<E: Executor>(
    domain: &[Vec<String>],
    general: &[Vec<String>],
    top_terms: usize,
    window: usize,
    min_count: u64,
    exec: &E,
) -> Result<(TermExtraction, KnowledgeBase)> {
    count_pairs(&[], &Default::default(), window)?;
    let terms = extract_terms(domain, general, top_terms)?;
    let vocab = terms.vocabulary_set();
    let chunks: Vec<&[Vec<String>]> = domain.chunks(DOCS_PER_JOB).collect();
    let parts = exec.map(chunks.len(), |i| count_pairs(chunks[i], &vocab, window));
    let mut kb = KnowledgeBase::new();
    for part in parts {
        kb.merge(&part?);
    }
    kb.prune(min_count);
    Ok((terms, kb))
}

fn format_term_stats(terms: &TermExtraction) -> String {
    let mut out = String::from("term\ttfidf\tentropy\tdomain_freq\tgeneral_freq\tkl_contribution\n");
    for t in &terms.vocabulary {
        let r = &terms.stats.terms[t];
        writeln!(
            out,
            "{t}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}",
            r.tfidf, r.entropy, r.domain_freq, r.general_freq, r.kl_contribution
        )
        .unwrap();
    }
    out
}

fn kb_extract(ctx: &Context, a: KbExtractArgs) -> Result<()> {
    let window = ctx.file.resolve(a.window, "window", DEFAULT_WINDOW)?;
    let top_terms = ctx.file.resolve(a.top_terms, "top_terms", DEFAULT_TOP_TERMS)?;
    let min_count = ctx.file.resolve(a.min_count, "min_count", 1)?;
    let tok = tokenizer(ctx, a.tokenizer)?;
    let mut m = ManifestBuilder::new("kb-extract", ctx.exec.threads());
    m.input(&a.domain)?.input(&a.general)?;
    m.config("window", window)
        .config("top_terms", top_terms)
        .config("min_count", min_count)
        .config("tokenizer", tok);

    let domain = load_documents(&a.domain, tok)?;
    let general = load_documents(&a.general, tok)?;
    let (terms, kb) = build_kb(&domain, &general, top_terms, window, min_count, &ctx.exec)?;
    save_kb(&a.out, &kb)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(p) = &a.stats {
        write_text(p, &format_term_stats(&terms))?;
        outputs.push(p);
    }
    let entities = kb.entities().count();
    m.result("terms", json!(terms.vocabulary.len()))
        .result("pairs", json!(kb.len()))
        .result("entities", json!(entities));
    m.write(&outputs)?;
    println!(
        "{} terms, {} pairs over {entities} entities written to {}",
        terms.vocabulary.len(),
        kb.len(),
        a.out.display()
    );
    Ok(())
}

/// [`build_group`] for every conversation, in parallel, concatenated in
/// conversation order; identical to a serial build.
pub fn build_samples_parallel<E: Executor>(
    convs: &[Conversation],
    split: Split,
    rng: &Rng,
    exec: &E,
) -> Result<Vec<ConversationSample>> {
    let groups = exec.map(convs.len(), |i| build_group(convs, i, split, rng));
    let mut out = Vec::with_capacity(convs.len() * split.group_size());
    for g in groups {
        out.extend(g?);
    }
    Ok(out)
}

/// Shuffles conversation indices with `rng` and cuts them into train, valid
/// and test. Each part keeps corpus order.
pub fn partition(n: usize, valid_fraction: f64, test_fraction: f64, rng: &Rng) -> Result<[Vec<usize>; 3]> {
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(valid_fraction) || !ok(test_fraction) || valid_fraction + test_fraction > 1.0 {
        return Err(CliError::Input(format!(
            "split fractions must lie in [0, 1] and sum to at most 1, got valid {valid_fraction} and test {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.clone().shuffle(&mut idx);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_valid = ((n as f64 * valid_fraction).round() as usize).min(n - n_test);
    let mut test = idx[..n_test].to_vec();
    let mut valid = idx[n_test..n_test + n_valid].to_vec();
    let mut train = idx[n_test + n_valid..].to_vec();
    for part in [&mut train, &mut valid, &mut test] {
        part.sort_unstable();
    }
    Ok([train, valid, test])
}

fn build_dataset(ctx: &Context, a: BuildDatasetArgs) -> Result<()> {
    let min_turns = ctx.file.resolve(a.min_turns, "min_turns", DEFAULT_MIN_TURNS)?;
    let max_turns = ctx
        .file
        .resolve(a.max_turns, "max_turns", DEFAULT_MAX_CONVERSATION_TURNS)?;
    let valid_fraction = ctx
        .file
        .resolve(a.valid_fraction, "valid_fraction", DEFAULT_SPLIT_FRACTION)?;
    let test_fraction = ctx
        .file
        .resolve(a.test_fraction, "test_fraction", DEFAULT_SPLIT_FRACTION)?;
    let seed = ctx.file.resolve(a.seed, "seed", 0)?;
    let tok = tokenizer(ctx, a.tokenizer)?;
    let mut m = ManifestBuilder::new("build-dataset", ctx.exec.threads());
    m.input(&a.corpus)?;
    m.seed(seed)
        .config("min_turns", min_turns)
        .config("max_turns", max_turns)
        .config("valid_fraction", valid_fraction)
        .config("test_fraction", test_fraction)
        .config("tokenizer", tok)
        .config("strict", !a.lenient);

    let corpus = load_corpus(&a.corpus, tok, !a.lenient)?;
    let loaded = corpus.conversations.len();
    let filtered = filter_turns(corpus.conversations, min_turns, max_turns)?;
    let mut hist = String::from("turns\tconversations\n");
    for (t, c) in &filtered.histogram {
        writeln!(hist, "{t}\t{c}").unwrap();
    }
    let rng = Rng::new(seed);
    let parts = partition(filtered.kept.len(), valid_fraction, test_fraction, &rng.fork(0))?;

    let hist_path = a.out_dir.join("turns.tsv");
    write_text(&hist_path, &hist)?;
    let mut outputs: Vec<PathBuf> = vec![hist_path];
    let mut summary = serde_json::Map::new();
    for (split, idx) in [Split::Train, Split::Valid, Split::Test].into_iter().zip(&parts) {
        if idx.is_empty() {
            continue;
        }
        let convs: Vec<Conversation> = idx.iter().map(|&i| filtered.kept[i].clone()).collect();
        let samples = build_samples_parallel(&convs, split, &rng.fork(1), &ctx.exec)?;
        let path = a.out_dir.join(format!("{split}.jsonl"));
        save_samples(&path, &samples, tok)?;
        println!("{split}: {} conversations, {} samples", convs.len(), samples.len());
        summary.insert(
            split.to_string(),
            json!({"conversations": convs.len(), "samples": samples.len()}),
        );
        outputs.push(path);
    }
    m.result("loaded", json!(loaded))
        .result("kept", json!(filtered.kept.len()))
        .result("dropped_utterances", json!(corpus.dropped_utterances))
        .result("skipped_records", json!(corpus.skipped_records))
        .result("malformed_lines", json!(corpus.malformed_lines))
        .result("splits", summary.into());
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    m.write(&refs)?;
    println!(
        "kept {} of {loaded} conversations with {min_turns} to {max_turns} turns",
        filtered.kept.len()
    );
    Ok(())
}

/// The knowledge base a model kind needs: loaded for kinds that use one,
/// empty (with a warning if a path was given) for the rest.
fn knowledge_for(kind: ModelKind, path: Option<&Path>, m: Option<&mut ManifestBuilder>) -> Result<KnowledgeBase> {
    match (kind.uses_kb(), path) {
        (true, Some(p)) => {
            if let Some(m) = m {
                m.input(p)?;
            }
            load_kb(p)
        }
        (true, None) => Err(CliError::Input(format!("model {kind} needs a knowledge base (--kb)"))),
        (false, Some(_)) => {
            log::warn!("model {kind} does not use a knowledge base; --kb ignored");
            Ok(KnowledgeBase::new())
        }
        (false, None) => Ok(KnowledgeBase::new()),
    }
}

fn prepare_all<E: Executor>(
    model: &ConversationModel,
    samples: &[ConversationSample],
    kb: &KnowledgeBase,
    exec: &E,
) -> Vec<Example> {
    exec.map(samples.len(), |i| model.prepare(&samples[i], kb))
}

fn samples_vocabulary(samples: &[ConversationSample]) -> Vocabulary {
    Vocabulary::from_counts(
        samples
            .iter()
            .flat_map(|s| s.context.iter().flatten().chain(&s.query).chain(&s.response))
            .map(String::as_str),
        1,
    )
}

/// Replaces random word rows (and attribute rows of the same width) with the
/// vectors found in an embeddings file.
fn apply_embeddings(model: &mut ConversationModel, path: &Path, rng: &Rng) -> Result<()> {
    let (dim, entries) = parse_embeddings(&read_text(path)?, path)?;
    let word_dim = model.config.dims.word;
    if let Some(d) = dim.filter(|&d| d != word_dim) {
        return Err(CliError::Input(format!(
            "{} holds {d}-dimensional vectors but the word dimension is {word_dim}",
            path.display()
        )));
    }
    model.params.words =
        EmbeddingTable::from_entries(&model.words, word_dim, entries.iter().cloned(), &mut rng.fork(0))?;
    if let Some(attrs) = &mut model.params.attrs {
        if attrs.dim() == word_dim {
            *attrs = EmbeddingTable::from_entries(&model.attrs, word_dim, entries, &mut rng.fork(1))?;
        }
    }
    let (words, attr_vocab) = (model.words.clone(), model.attrs.clone());
    model.params.tie_attributes(&words, &attr_vocab);
    Ok(())
}

fn format_history(report: &TrainReport) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_loss\n");
    for e in &report.history {
        writeln!(out, "{}\t{:.16e}\t{:.16e}", e.epoch, e.train_loss, e.valid_loss).unwrap();
    }
    out
}

fn train_cmd(ctx: &Context, a: TrainArgs) -> Result<()> {
    let f = &ctx.file;
    let kind: ModelKind = f.resolve(a.model, "model", "rlstm".to_string())?.parse()?;
    let preset = f.resolve(a.dims_preset, "dims_preset", "tieba".to_string())?;
    let dims = match f.resolve_opt(a.dims, "dims")? {
        Some(s) => parse_dims(&s)?,
        None => Dims::preset(&preset)?,
    };
    let top_n_given = f.resolve_opt(a.top_n, "top_n")?;
    if top_n_given.is_some() && !kind.uses_kb() {
        log::warn!("model {kind} does not use a knowledge base; --top-n ignored");
    }
    let mut model_config = ModelConfig::new(kind, dims);
    model_config.top_n = top_n_given.unwrap_or(DEFAULT_TOP_N);
    model_config.max_turns = f.resolve(a.max_turns, "max_turns", DEFAULT_MAX_TURNS)?;
    let mut config = TrainConfig::new(model_config);
    config.seed = f.resolve(a.seed, "seed", 0)?;
    config.max_epochs = f.resolve(a.epochs, "epochs", config.max_epochs)?;
    config.learning_rate = f.resolve(a.lr, "lr", config.learning_rate)?;
    config.batch_size = f.resolve(a.batch_size, "batch_size", config.batch_size)?;
    let optimizer = f.resolve(a.optimizer, "optimizer", "sgd".to_string())?;
    config.optimizer = parse_optimizer(&optimizer)?;
    config.validate()?;
    let tok = tokenizer(ctx, a.tokenizer)?;

    let mut m = ManifestBuilder::new("train", ctx.exec.threads());
    m.seed(config.seed)
        .config("model", kind)
        .config(
            "dims",
            format!(
                "{},{},{},{}",
                dims.word, dims.sentence, dims.knowledge, dims.conversation
            ),
        )
        .config("top_n", model_config.top_n)
        .config("max_turns", model_config.max_turns)
        .config("epochs", config.max_epochs)
        .config("lr", config.learning_rate)
        .config("batch_size", config.batch_size)
        .config("optimizer", &optimizer)
        .config("tokenizer", tok);
    m.input(&a.samples)?;
    let kb = knowledge_for(kind, a.kb.as_deref(), Some(&mut m))?;

    let all = load_samples(&a.samples, tok)?;
    let (train_samples, valid_samples) = match &a.valid {
        Some(p) => {
            m.input(p)?;
            (all, load_samples(p, tok)?)
        }
        None => all.into_iter().partition(|s| s.group_id % 10 != 9),
    };
    if train_samples.is_empty() || valid_samples.is_empty() {
        return Err(CliError::Input(
            "training and validation sets must both be non-empty".into(),
        ));
    }

    let rng = Rng::new(config.seed);
    let attrs = if kind.uses_kb() {
        kb.attribute_vocabulary()
    } else {
        Vocabulary::new()
    };
    let mut model = ConversationModel::new(model_config, samples_vocabulary(&train_samples), attrs, &rng.fork(10))?;
    if let Some(p) = &a.embeddings {
        m.input(p)?;
        apply_embeddings(&mut model, p, &rng.fork(12))?;
    }
    let train_set = prepare_all(&model, &train_samples, &kb, &ctx.exec);
    let valid_set = prepare_all(&model, &valid_samples, &kb, &ctx.exec);
    log::info!(
        "training {kind} on {} samples ({} validation), {} words, {} attributes",
        train_set.len(),
        valid_set.len(),
        model.words.len(),
        model.attrs.len()
    );
    let report = train(&mut model, &train_set, &valid_set, &config, &ctx.exec)?;

    save_checkpoint(&a.out, &Checkpoint { model, tokenizer: tok })?;
    let mut history_path = a.out.as_os_str().to_os_string();
    history_path.push(".history.tsv");
    let history_path = PathBuf::from(history_path);
    write_text(&history_path, &format_history(&report))?;
    let history: Vec<_> = report
        .history
        .iter()
        .map(|e| json!({"epoch": e.epoch, "train_loss": e.train_loss, "valid_loss": e.valid_loss}))
        .collect();
    m.result("history", history.into())
        .result("best_epoch", json!(report.best_epoch))
        .result("stopped_early", json!(report.stopped_early));
    m.write(&[&a.out, &history_path])?;
    for e in &report.history {
        println!(
            "epoch {}: train loss {:.6}, valid loss {:.6}",
            e.epoch, e.train_loss, e.valid_loss
        );
    }
    println!(
        "kept epoch {}{}; checkpoint written to {}",
        report.best_epoch,
        if report.stopped_early {
            " (validation loss rose)"
        } else {
            ""
        },
        a.out.display()
    );
    Ok(())
}

/// Scores grouped samples with a checkpoint and computes the report.
pub fn evaluate_checkpoint<E: Executor>(
    ck: &Checkpoint,
    samples: &[ConversationSample],
    kb: &KnowledgeBase,
    exec: &E,
) -> Result<EvalReport> {
    group_samples(samples)?;
    let examples = prepare_all(&ck.model, samples, kb, exec);
    Ok(evaluate(&score_examples(&ck.model.params, &examples, exec)?)?)
}

fn eval_cmd(ctx: &Context, a: EvalArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("eval", ctx.exec.threads());
    m.input(&a.checkpoint)?.input(&a.samples)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let kind = ck.model.config.kind;
    let kb = knowledge_for(kind, a.kb.as_deref(), Some(&mut m))?;
    let samples = load_samples(&a.samples, ck.tokenizer)?;
    let report = evaluate_checkpoint(&ck, &samples, &kb, &ctx.exec)?;
    let text = format_report_text(&report);
    print!("{text}");
    if let Some(out) = &a.out {
        let mut json_path = out.as_os_str().to_os_string();
        json_path.push(".json");
        let json_path = PathBuf::from(json_path);
        let manifest = manifest_path(out).display().to_string();
        write_text(out, &text)?;
        write_text(
            &json_path,
            &(serde_json::to_string_pretty(&report_json(&report, &manifest)).unwrap() + "\n"),
        )?;
        m.config("model", kind);
        m.write(&[out, &json_path])?;
    }
    Ok(())
}

fn score_cmd(ctx: &Context, a: ScoreArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("score", ctx.exec.threads());
    m.input(&a.checkpoint)?.input(&a.samples)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let kb = knowledge_for(ck.model.config.kind, a.kb.as_deref(), Some(&mut m))?;
    let samples = load_samples(&a.samples, ck.tokenizer)?;
    let examples = prepare_all(&ck.model, &samples, &kb, &ctx.exec);
    let scored = score_examples(&ck.model.params, &examples, &ctx.exec)?;
    let mut out = String::from("group\tlabel\tscore\n");
    for c in &scored {
        writeln!(out, "{}\t{}\t{:.16e}", c.group_id, c.label, c.score).unwrap();
    }
    match &a.out {
        Some(p) => {
            write_text(p, &out)?;
            m.write(&[p])?;
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn check_line(check: &ModelCheck, r: &GradCheckReport) -> String {
    let worst = r.worst().map_or("-", |b| b.name.as_str());
    format!(
        "{} seed {} hidden {} seq {}: max block error {:.3e} ({worst}), max coordinate error {:.3e}: {}",
        check.kind,
        check.seed,
        check.hidden,
        check.seq_len,
        r.max_error(),
        r.max_coordinate_error(),
        if r.passed() { "pass" } else { "FAIL" }
    )
}

fn gradcheck(ctx: &Context, a: GradcheckArgs) -> Result<()> {
    let model = ctx.file.resolve(a.model, "model", "rlstm".to_string())?;
    let kinds: Vec<ModelKind> = if model == "all" {
        ModelKind::ALL.to_vec()
    } else {
        vec![model.parse()?]
    };
    let first = ctx.file.resolve(a.seed, "seed", 0)?;
    if a.seeds == 0 {
        return Err(CliError::Input("--seeds must be at least 1".into()));
    }
    let jobs: Vec<ModelCheck> = kinds
        .iter()
        .flat_map(|&kind| {
            (first..first + a.seeds).map(move |seed| {
                let (h, s) = sweep_dims(seed);
                ModelCheck::new(kind, seed, a.hidden.unwrap_or(h), a.seq_len.unwrap_or(s))
            })
        })
        .map(|mut c| {
            c.corrupt = a.corrupt_block.clone();
            c
        })
        .collect();
    let results = ctx.exec.map(jobs.len(), |i| check_model(&jobs[i]));
    let mut worst: Option<(String, f64)> = None;
    let (mut max_error, mut max_coord) = (0.0f64, 0.0f64);
    for (job, r) in jobs.iter().zip(results) {
        let r = r?;
        println!("{}", check_line(job, &r));
        if a.blocks {
            for b in &r.blocks {
                println!(
                    "  {:<24} {:>6} {:.3e} {:.3e}",
                    b.name, b.size, b.error, b.max_coordinate_error
                );
            }
        }
        max_error = max_error.max(r.max_error());
        max_coord = max_coord.max(r.max_coordinate_error());
        for b in r.failures() {
            if worst.as_ref().is_none_or(|(_, e)| b.error.total_cmp(e).is_gt()) {
                worst = Some((format!("{}/{}", job.kind, b.name), b.error));
            }
        }
    }
    println!(
        "{} checks, max block error {max_error:.3e}, max coordinate error {max_coord:.3e}: {}",
        jobs.len(),
        if worst.is_none() { "pass" } else { "FAIL" }
    );
    match worst {
        Some((block, error)) => Err(CliError::GradientMismatch { block, error }),
        None => Ok(()),
    }
}
