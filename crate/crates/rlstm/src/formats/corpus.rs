//! Conversation corpora (`{"utterances": [...]}` per line) and plain-text
//! document collections (one document per line).

use std::path::Path;

use rlstm_core::data::{Conversation, Tokenizer};
use serde::Deserialize;

use super::{content_lines, read_text};
use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    utterances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusLoad {
    pub conversations: Vec<Conversation>,
    /// Empty utterance strings removed from otherwise usable records.
    pub dropped_utterances: usize,
    /// Records left with fewer than two utterances.
    pub skipped_records: usize,
    /// Malformed lines skipped outside strict mode.
    pub malformed_lines: usize,
}

/// In strict mode the first malformed line is an error; otherwise it is
/// skipped and counted.
pub fn parse_corpus(text: &str, path: &Path, tokenizer: Tokenizer, strict: bool) -> Result<CorpusLoad> {
    let mut out = CorpusLoad::default();
    for (line, raw) in content_lines(text) {
        let record: CorpusRecord = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) if strict => return Err(CliError::format(path, line, e.to_string())),
            Err(e) => {
                log::warn!("{}:{line}: skipped: {e}", path.display());
                out.malformed_lines += 1;
                continue;
            }
        };
        let (conv, dropped) = Conversation::from_texts(&record.utterances, tokenizer);
        out.dropped_utterances += dropped;
        match conv {
            Some(c) => out.conversations.push(c),
            None => out.skipped_records += 1,
        }
    }
    if out.dropped_utterances > 0 {
        log::warn!(
            "{}: dropped {} empty utterances",
            path.display(),
            out.dropped_utterances
        );
    }
    if out.skipped_records > 0 {
        log::warn!(
            "{}: skipped {} records with fewer than two utterances",
            path.display(),
            out.skipped_records
        );
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, tokenizer: Tokenizer, strict: bool) -> Result<CorpusLoad> {
    parse_corpus(&read_text(path)?, path, tokenizer, strict)
}

/// Tokenized non-blank lines.
pub fn load_documents(path: &Path, tokenizer: Tokenizer) -> Result<Vec<Vec<String>>> {
    Ok(content_lines(&read_text(path)?)
        .map(|(_, l)| tokenizer.tokenize(l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: &str = "c.jsonl";

    #[test]
    fn parses_records_in_order() {
        let text = r#"{"utterances": ["hi there", "hello", "bye"]}
{"utterances": ["a", "b"]}

{"utterances": ["x y", "z"]}
"#;
        let c = parse_corpus(text, Path::new(P), Tokenizer::Word, true).unwrap();
        assert_eq!(c.conversations.len(), 3);
        assert_eq!(c.conversations[0].utterances()[0], ["hi", "there"]);
        assert_eq!(c.conversations[2].turn_count(), 2);
    }

    #[test]
    fn empty_records_are_counted() {
        let text = "{\"utterances\": []}\n{\"utterances\": [\"a\", \"\", \"b\"]}\n";
        let c = parse_corpus(text, Path::new(P), Tokenizer::Word, true).unwrap();
        assert_eq!(c.conversations.len(), 1);
        assert_eq!(c.skipped_records, 1);
        assert_eq!(c.dropped_utterances, 1);
    }

    #[test]
    fn strict_mode_stops_at_first_bad_line() {
        let text = "{\"utterances\": [\"a\", \"b\"]}\n{\"utterances\": 3}\nnot json\n";
        let e = parse_corpus(text, Path::new(P), Tokenizer::Word, true).unwrap_err();
        assert!(e.to_string().starts_with("c.jsonl:2:"), "{e}");
        let c = parse_corpus(text, Path::new(P), Tokenizer::Word, false).unwrap();
        assert_eq!((c.conversations.len(), c.malformed_lines), (1, 2));
    }

    #[test]
    fn character_tokenizer() {
        let text = "{\"utterances\": [\"你好 吗\", \"好\"]}\n";
        let c = parse_corpus(text, Path::new(P), Tokenizer::Char, true).unwrap();
        assert_eq!(c.conversations[0].utterances()[0], ["你", "好", "吗"]);
    }
}
