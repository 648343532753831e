//! Text checkpoints.
//!
//! ```text
//! rlstm-checkpoint 1
//! model rlstm
//! dims 300 200 200 200
//! max_turns 8
//! top_n 10
//! tokenizer word
//! vocabulary words 3
//! <unk>
//! <pad>
//! ubuntu
//! vocabulary attributes 2
//! <unk>
//! <pad>
//! block words 3 300
//! <one row of values per line>
//! ...
//! end
//! ```
//!
//! Blocks appear in the model's parameter order and loading checks every
//! name and shape. Values carry seventeen significant digits, so a save and
//! load cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use rlstm_core::data::Tokenizer;
use rlstm_core::embedding::{Vocabulary, PAD, UNK};
use rlstm_core::models::{ConversationModel, Dims, ModelConfig, ModelKind};
use rlstm_core::params::Parameters;
use rlstm_core::{Error as CoreError, Rng};

use super::{read_text, write_text};
use crate::error::{CliError, Result};

pub const MAGIC: &str = "rlstm-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ConversationModel,
    pub tokenizer: Tokenizer,
}

pub fn format_checkpoint(ck: &Checkpoint) -> String {
    let m = &ck.model;
    let c = &m.config;
    let d = c.dims;
    let mut out = String::new();
    writeln!(out, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(out, "model {}", c.kind).unwrap();
    writeln!(out, "dims {} {} {} {}", d.word, d.sentence, d.knowledge, d.conversation).unwrap();
    writeln!(out, "max_turns {}", c.max_turns).unwrap();
    writeln!(out, "top_n {}", c.top_n).unwrap();
    writeln!(out, "tokenizer {}", ck.tokenizer).unwrap();
    for (name, vocab) in [("words", &m.words), ("attributes", &m.attrs)] {
        writeln!(out, "vocabulary {name} {}", vocab.len()).unwrap();
        for t in vocab.tokens() {
            writeln!(out, "{t}").unwrap();
        }
    }
    for b in m.params.blocks() {
        writeln!(out, "block {} {} {}", b.name, b.rows, b.cols).unwrap();
        for row in b.data.chunks(b.cols.max(1)) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(CliError::format(
                self.path,
                self.line + 1,
                "unexpected end of checkpoint",
            )),
        }
    }

    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::format(self.path, self.line, message)
    }

    /// The fields after `key` on the next line.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(key) {
            return Err(self.err(format!("expected '{key}'")));
        }
        Ok(fields.collect())
    }

    fn keyed_one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        match self.keyed(key)?[..] {
            [v] => v.parse().map_err(|_| self.err(format!("bad value '{v}' for {key}"))),
            _ => Err(self.err(format!("expected one value after '{key}'"))),
        }
    }

    fn vocabulary(&mut self, name: &str) -> Result<Vocabulary> {
        let fields = self.keyed("vocabulary")?;
        let n: usize = match fields[..] {
            [n, count] if n == name => count.parse().map_err(|_| self.err("bad vocabulary size"))?,
            _ => return Err(self.err(format!("expected 'vocabulary {name} <size>'"))),
        };
        let mut vocab = Vocabulary::new();
        for i in 0..n {
            let token = self.next()?;
            let expected_special = [UNK, PAD].get(i);
            match expected_special {
                Some(&s) if token != s => return Err(self.err(format!("entry {i} of {name} must be {s}"))),
                Some(_) => {}
                None => {
                    if token.is_empty() || token.chars().any(char::is_whitespace) {
                        return Err(self.err("vocabulary tokens must be non-empty and contain no whitespace"));
                    }
                    if vocab.insert(token) != i {
                        return Err(self.err(format!("duplicate token '{token}'")));
                    }
                }
            }
        }
        if n < 2 {
            return Err(self.err(format!("{name} vocabulary must hold {UNK} and {PAD}")));
        }
        Ok(vocab)
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Checkpoint> {
    let mut lines = Lines {
        path,
        iter: text.lines().enumerate(),
        line: 0,
    };
    let version: u32 = lines.keyed_one(MAGIC)?;
    if version != FORMAT_VERSION {
        return Err(lines.err(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind: ModelKind = lines.keyed_one::<String>("model")?.parse()?;
    let dims = match lines.keyed("dims")?[..] {
        [w, s, k, c] => {
            let p = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| lines.err(format!("bad dimension '{v}'")))
            };
            Dims {
                word: p(w)?,
                sentence: p(s)?,
                knowledge: p(k)?,
                conversation: p(c)?,
            }
        }
        _ => return Err(lines.err("expected four dimensions")),
    };
    let mut config = ModelConfig::new(kind, dims);
    config.max_turns = lines.keyed_one("max_turns")?;
    config.top_n = lines.keyed_one("top_n")?;
    let tokenizer: Tokenizer = lines.keyed_one::<String>("tokenizer")?.parse()?;
    let words = lines.vocabulary("words")?;
    let attrs = lines.vocabulary("attributes")?;

    let mut model = ConversationModel::new(config, words, attrs, &Rng::new(0))?;
    for block in model.params.blocks_mut() {
        let fields = lines.keyed("block")?;
        let [name, rows, cols] = fields[..] else {
            return Err(lines.err("expected 'block <name> <rows> <cols>'"));
        };
        if name != block.name {
            return Err(CoreError::shape("checkpoint block order", &block.name, name).into());
        }
        let shape = format!("{rows}x{cols}");
        let expected = format!("{}x{}", block.rows, block.cols);
        if shape != expected {
            return Err(CoreError::shape(block.name.clone(), expected, shape).into());
        }
        for row in block.data.chunks_mut(block.cols.max(1)) {
            let line = lines.next()?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != row.len() {
                return Err(lines.err(format!(
                    "block {} expects {} values per row, found {}",
                    block.name,
                    row.len(),
                    values.len()
                )));
            }
            for (slot, v) in row.iter_mut().zip(values) {
                *slot = match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => x,
                    _ => return Err(lines.err(format!("'{v}' is not a finite number"))),
                };
            }
        }
    }
    match lines.next()? {
        "end" => Ok(Checkpoint { model, tokenizer }),
        other => Err(lines.err(format!("expected 'end', found '{other}'"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&read_text(path)?, path)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_text(path, &format_checkpoint(ck))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: ModelKind) -> Checkpoint {
        let words = Vocabulary::from_counts(["gpu", "fan", "hot", "gpu"], 1);
        let attrs = Vocabulary::from_counts(["fan", "driver"], 1);
        let mut config = ModelConfig::new(kind, Dims::uniform(3));
        config.top_n = 4;
        Checkpoint {
            model: ConversationModel::new(config, words, attrs, &Rng::new(5)).unwrap(),
            tokenizer: Tokenizer::Word,
        }
    }

    #[test]
    fn round_trip_every_kind() {
        for kind in ModelKind::ALL {
            let ck = model(kind);
            let text = format_checkpoint(&ck);
            let back = parse_checkpoint(&text, Path::new("m.ckpt")).unwrap();
            assert_eq!(back, ck, "{kind}");
            assert_eq!(format_checkpoint(&back), text);
        }
    }

    #[test]
    fn shape_mismatch_is_a_shape_error() {
        let text = format_checkpoint(&model(ModelKind::Rlstm)).replace("dims 3 3 3 3", "dims 3 3 4 4");
        let e = parse_checkpoint(&text, Path::new("m")).unwrap_err();
        assert!(matches!(e, CliError::Core(CoreError::Shape { .. })), "{e}");
    }

    #[test]
    fn truncation_and_bad_values_are_reported() {
        let text = format_checkpoint(&model(ModelKind::Lstm));
        let cut = &text[..text.len() / 2];
        assert!(parse_checkpoint(cut, Path::new("m")).is_err());
        let bad = text.replacen("e-", "x-", 1);
        assert!(matches!(
            parse_checkpoint(&bad, Path::new("m")),
            Err(CliError::Format { .. })
        ));
        let v2 = text.replacen("rlstm-checkpoint 1", "rlstm-checkpoint 2", 1);
        assert!(parse_checkpoint(&v2, Path::new("m")).is_err());
    }
}
