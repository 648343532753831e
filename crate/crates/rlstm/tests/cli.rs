use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlstm::formats::checkpoint::{save_checkpoint, Checkpoint};
use rlstm::formats::samples::save_samples;
use rlstm_core::data::{ConversationSample, Tokenizer};
use rlstm_core::embedding::Vocabulary;
use rlstm_core::models::{ConversationModel, Dims, ModelConfig, ModelKind};
use rlstm_core::params::Parameters;
use rlstm_core::Rng;
use tempfile::TempDir;

fn rlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlstm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A corpus where the response names the attribute of an entity mentioned
/// earlier, plus knowledge documents pairing entities with attributes.
fn write_corpus(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut rng = Rng::new(3);
    let mut corpus = String::new();
    for _ in 0..120 {
        let e = rng.below(20);
        let turns = 3 + rng.below(4);
        let mut utts: Vec<String> = (0..turns - 1)
            .map(|_| {
                (0..3)
                    .map(|_| format!("w{}", rng.below(25)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        utts[0] = format!("{} ent{e}", utts[0]);
        utts.push(format!("w{} attr{}", rng.below(25), e % 4));
        corpus += &serde_json::json!({ "utterances": utts }).to_string();
        corpus.push('\n');
    }
    let domain: String = (0..20).map(|e| format!("ent{e} attr{}\n", e % 4)).collect();
    let general: String = (0..50)
        .map(|i| format!("w{} w{} w{}\n", i % 25, (i * 7) % 25, (i * 3) % 25))
        .collect();
    let paths = (
        dir.join("corpus.jsonl"),
        dir.join("domain.txt"),
        dir.join("general.txt"),
    );
    fs::write(&paths.0, corpus).unwrap();
    fs::write(&paths.1, domain).unwrap();
    fs::write(&paths.2, general).unwrap();
    paths
}

#[test]
fn missing_input_is_an_input_error() {
    let out = rlstm(&["eval", "/nonexistent/model.ckpt", "/nonexistent/test.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn unknown_flag_is_an_input_error() {
    assert_eq!(code(&rlstm(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&rlstm(&["--threads", "0", "gradcheck"])), 2);
}

#[test]
fn window_controls_pair_distance() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d.txt"), "a b c\n").unwrap();
    fs::write(dir.path().join("g.txt"), "x y z\n").unwrap();
    let read = |w: &str| {
        let out = dir.path().join(format!("kb{w}.tsv"));
        let r = rlstm(&[
            "kb-extract",
            s(&dir.path().join("d.txt")),
            s(&dir.path().join("g.txt")),
            s(&out),
            "--window",
            w,
        ]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        fs::read_to_string(out).unwrap()
    };
    assert_eq!(read("2"), "a\tb\t1\nb\ta\t1\nb\tc\t1\nc\tb\t1\n");
    assert_eq!(read("3"), "a\tb\t1\na\tc\t1\nb\ta\t1\nb\tc\t1\nc\ta\t1\nc\tb\t1\n");
    let r = rlstm(&[
        "kb-extract",
        s(&dir.path().join("d.txt")),
        s(&dir.path().join("g.txt")),
        s(&dir.path().join("x.tsv")),
        "--window",
        "1",
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn pipeline_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let (corpus, domain, general) = write_corpus(dir.path());
    let kb = dir.path().join("kb.tsv");
    assert_eq!(code(&rlstm(&["kb-extract", s(&domain), s(&general), s(&kb)])), 0);

    let mut checkpoints = Vec::new();
    for threads in ["1", "4"] {
        let data = dir.path().join(format!("data{threads}"));
        let out = rlstm(&[
            "--threads",
            threads,
            "build-dataset",
            s(&corpus),
            "-o",
            s(&data),
            "--seed",
            "7",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        for split in ["train", "valid", "test"] {
            assert!(data.join(format!("{split}.jsonl")).exists());
            assert!(data.join(format!("{split}.jsonl.manifest.json")).exists());
        }
        let ckpt = dir.path().join(format!("model{threads}.ckpt"));
        let out = rlstm(&[
            "--threads",
            threads,
            "train",
            s(&data.join("train.jsonl")),
            "--valid",
            s(&data.join("valid.jsonl")),
            "--kb",
            s(&kb),
            "--model",
            "rlstm",
            "--dims",
            "6,6,6,6",
            "--epochs",
            "2",
            "-o",
            s(&ckpt),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(dir.path().join(format!("model{threads}.ckpt.history.tsv")).exists());
        checkpoints.push((data, ckpt));
    }
    let (d1, c1) = &checkpoints[0];
    let (d4, c4) = &checkpoints[1];
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "turns.tsv"] {
        assert_eq!(fs::read(d1.join(f)).unwrap(), fs::read(d4.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(c1).unwrap(), fs::read(c4).unwrap());

    let report = dir.path().join("report.txt");
    let out = rlstm(&[
        "eval",
        s(c1),
        s(&d1.join("test.jsonl")),
        "--kb",
        s(&kb),
        "-o",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(stdout(&out), text);
    for key in [
        "Acc=",
        "1 in 2 R@1=",
        "1 in 10 R@1=",
        "2 in 10 R@2=",
        "3 in 10 R@3=",
        "5 in 10 R@5=",
    ] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.txt.json")).unwrap()).unwrap();
    assert_eq!(json["groups"], 12);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.txt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let out = rlstm(&["eval", s(c1), s(&d1.join("test.jsonl"))]);
    assert_eq!(code(&out), 2, "knowledge-based checkpoints need --kb");
}

#[test]
fn knowledge_flags_warn_for_plain_models() {
    let dir = TempDir::new().unwrap();
    let (corpus, domain, general) = write_corpus(dir.path());
    let kb = dir.path().join("kb.tsv");
    assert_eq!(code(&rlstm(&["kb-extract", s(&domain), s(&general), s(&kb)])), 0);
    let data = dir.path().join("data");
    assert_eq!(code(&rlstm(&["build-dataset", s(&corpus), "-o", s(&data)])), 0);
    let ckpt = dir.path().join("lstm.ckpt");
    let out = rlstm(&[
        "train",
        s(&data.join("train.jsonl")),
        "--model",
        "lstm",
        "--top-n",
        "5",
        "--dims",
        "4,4,4,4",
        "--epochs",
        "1",
        "-o",
        s(&ckpt),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("--top-n ignored"));
}

#[test]
fn malformed_groups_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &oracle_checkpoint()).unwrap();
    let samples: Vec<ConversationSample> = (0..3).map(|i| sample("good", u8::from(i == 0), 0)).collect();
    let path = dir.path().join("bad.jsonl");
    save_samples(&path, &samples, Tokenizer::Word).unwrap();
    let out = rlstm(&["eval", s(&ckpt), s(&path)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("group 0"));
}

#[test]
fn corrupted_gradient_exits_with_numeric_code() {
    let out = rlstm(&["gradcheck", "--model", "rlstm", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let out = rlstm(&["gradcheck", "--model", "rlstm", "--corrupt-block", "conversation.w_rk"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("conversation.w_rk"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d.txt"), "a b c\n").unwrap();
    fs::write(dir.path().join("g.txt"), "x y z\n").unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# kb settings\nwindow = 3\nmystery = 1\n").unwrap();
    let out_path = dir.path().join("kb.tsv");
    let out = rlstm(&[
        "--config",
        s(&cfg),
        "kb-extract",
        s(&dir.path().join("d.txt")),
        s(&dir.path().join("g.txt")),
        s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("mystery"));
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 6);

    fs::write(&cfg, "window = 3\nwindow = 4\n").unwrap();
    let out = rlstm(&[
        "--config",
        s(&cfg),
        "kb-extract",
        s(&dir.path().join("d.txt")),
        s(&dir.path().join("g.txt")),
        s(&out_path),
    ]);
    assert_eq!(code(&out), 2);
}

fn sample(response: &str, label: u8, group_id: u64) -> ConversationSample {
    ConversationSample {
        context: Vec::new(),
        query: vec!["hello".into()],
        response: response.split(' ').map(String::from).collect(),
        label,
        group_id,
    }
}

fn set(model: &mut ConversationModel, block: &str, row: usize, col: usize, value: f64) {
    let mut blocks = model.params.blocks_mut();
    let b = blocks.iter_mut().find(|b| b.name == block).unwrap();
    let cols = b.cols;
    b.data[row * cols + col] = value;
}

/// An MLP model that scores about 0.88 when the response contains "good"
/// and about 0.12 otherwise.
fn oracle_checkpoint() -> Checkpoint {
    let words = Vocabulary::from_counts(["hello", "good", "bad", "other"], 1);
    let mut config = ModelConfig::new(ModelKind::Mlp, Dims::uniform(2));
    config.max_turns = 2;
    let mut model = ConversationModel::new(config, words, Vocabulary::new(), &Rng::new(0)).unwrap();
    for b in model.params.blocks_mut() {
        b.data.fill(0.0);
    }
    let good = model.words.get("good").unwrap();
    set(&mut model, "words", good, 0, 1.0);
    set(&mut model, "encoder.b_i", 0, 0, 10.0);
    set(&mut model, "encoder.b_o", 0, 0, 10.0);
    set(&mut model, "encoder.w_c", 0, 2, 3.0);
    set(&mut model, "mlp.w", 0, 2, 1.0);
    set(&mut model, "head.w", 0, 0, 10.0);
    set(&mut model, "head.b", 0, 0, -2.0);
    Checkpoint {
        model,
        tokenizer: Tokenizer::Word,
    }
}

#[test]
fn perfect_scorer_gets_full_marks() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("oracle.ckpt");
    save_checkpoint(&ckpt, &oracle_checkpoint()).unwrap();
    let mut samples = Vec::new();
    for g in 0..5u64 {
        let pos = (g as usize * 3) % 10;
        for i in 0..10 {
            let response = if i == pos {
                "other good"
            } else if i % 2 == 0 {
                "bad"
            } else {
                "other bad"
            };
            samples.push(sample(response, u8::from(i == pos), g));
        }
    }
    samples.push(sample("bad", 0, 9));
    samples.push(sample("good", 1, 9));
    let path = dir.path().join("test.jsonl");
    save_samples(&path, &samples, Tokenizer::Word).unwrap();

    let out = rlstm(&["eval", s(&ckpt), s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for line in [
        "Acc=1.000000",
        "1 in 2 R@1=1.000000",
        "1 in 10 R@1=1.000000",
        "5 in 10 R@5=1.000000",
        "samples=52",
        "groups=6",
    ] {
        assert!(text.lines().any(|l| l == line), "{line} missing from\n{text}");
    }

    let out = rlstm(&["score", s(&ckpt), s(&path)]);
    assert_eq!(code(&out), 0);
    let rows: Vec<Vec<String>> = stdout(&out)
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 52);
    for r in rows {
        let score: f64 = r[2].parse().unwrap();
        assert_eq!(score >= 0.5, r[1] == "1", "{r:?}");
    }
}

#[test]
fn rlstm_rejects_mismatched_knowledge_width() {
    let dir = TempDir::new().unwrap();
    let (corpus, domain, general) = write_corpus(dir.path());
    let kb = dir.path().join("kb.tsv");
    assert_eq!(code(&rlstm(&["kb-extract", s(&domain), s(&general), s(&kb)])), 0);
    let data = dir.path().join("data");
    assert_eq!(code(&rlstm(&["build-dataset", s(&corpus), "-o", s(&data)])), 0);
    let ckpt = dir.path().join("m.ckpt");
    let out = rlstm(&[
        "train",
        s(&data.join("train.jsonl")),
        "--kb",
        s(&kb),
        "--dims",
        "8,8,4,8",
        "-o",
        s(&ckpt),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!ckpt.exists());
}

#[test]
fn eval_reproduces_on_rerun() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("oracle.ckpt");
    save_checkpoint(&ckpt, &oracle_checkpoint()).unwrap();
    let samples: Vec<ConversationSample> = (0..20u64)
        .flat_map(|g| {
            (0..2).map(move |i| sample(if (g + i) % 3 == 0 { "good" } else { "bad other" }, u8::from(i == 1), g))
        })
        .collect();
    let path = dir.path().join("pairs.jsonl");
    save_samples(&path, &samples, Tokenizer::Word).unwrap();
    let report = dir.path().join("report.txt");
    let run = |threads: &str| {
        let out = rlstm(&["--threads", threads, "eval", s(&ckpt), s(&path), "-o", s(&report)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (stdout(&out), fs::read(dir.path().join("report.txt.json")).unwrap())
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn affinity_gradcheck_covers_bilinear_encoder_and_embeddings() {
    let out = rlstm(&["gradcheck", "--model", "affinity", "--seed", "7", "--blocks"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for block in ["affinity.m", "affinity.b", "encoder.w_f", "words"] {
        assert!(
            text.lines().any(|l| l.trim_start().starts_with(block)),
            "{block} missing from\n{text}"
        );
    }
}
