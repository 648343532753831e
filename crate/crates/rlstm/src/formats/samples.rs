//! Samples, one JSON record per line:
//! `{"context": [...], "query": "...", "response": "...", "label": 0|1, "group": id}`.

use std::path::Path;

use rlstm_core::data::{ConversationSample, Tokenizer};
use serde::{Deserialize, Serialize};

use super::{content_lines, read_text, write_text};
use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    context: Vec<String>,
    query: String,
    response: String,
    label: u8,
    group: u64,
}

pub fn format_samples(samples: &[ConversationSample], tokenizer: Tokenizer) -> String {
    let mut out = String::new();
    for s in samples {
        let record = SampleRecord {
            context: s.context.iter().map(|u| tokenizer.join(u)).collect(),
            query: tokenizer.join(&s.query),
            response: tokenizer.join(&s.response),
            label: s.label,
            group: s.group_id,
        };
        out.push_str(&serde_json::to_string(&record).expect("sample records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_samples(text: &str, path: &Path, tokenizer: Tokenizer) -> Result<Vec<ConversationSample>> {
    content_lines(text)
        .map(|(line, raw)| {
            let r: SampleRecord = serde_json::from_str(raw).map_err(|e| CliError::format(path, line, e.to_string()))?;
            if r.label > 1 {
                return Err(CliError::format(
                    path,
                    line,
                    format!("label must be 0 or 1, found {}", r.label),
                ));
            }
            Ok(ConversationSample {
                context: r.context.iter().map(|u| tokenizer.tokenize(u)).collect(),
                query: tokenizer.tokenize(&r.query),
                response: tokenizer.tokenize(&r.response),
                label: r.label,
                group_id: r.group,
            })
        })
        .collect()
}

pub fn load_samples(path: &Path, tokenizer: Tokenizer) -> Result<Vec<ConversationSample>> {
    parse_samples(&read_text(path)?, path, tokenizer)
}

pub fn save_samples(path: &Path, samples: &[ConversationSample], tokenizer: Tokenizer) -> Result<()> {
    write_text(path, &format_samples(samples, tokenizer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn round_trip() {
        let samples = vec![ConversationSample {
            context: vec![words("my gpu is hot"), words("which one")],
            query: words("the \"big\" one"),
            response: words("check the fan"),
            label: 1,
            group_id: 7,
        }];
        let text = format_samples(&samples, Tokenizer::Word);
        assert!(text.starts_with(r#"{"context":["my gpu is hot","which one"],"query""#));
        assert!(text.contains(r#""label":1,"group":7}"#));
        assert_eq!(parse_samples(&text, Path::new("s"), Tokenizer::Word).unwrap(), samples);
    }

    #[test]
    fn rejects_bad_labels_with_line_number() {
        let text = "{\"context\":[],\"query\":\"q\",\"response\":\"r\",\"label\":1,\"group\":0}\n\
                    {\"context\":[],\"query\":\"q\",\"response\":\"r\",\"label\":2,\"group\":0}\n";
        let e = parse_samples(text, Path::new("s"), Tokenizer::Word).unwrap_err();
        assert!(e.to_string().starts_with("s:2:"), "{e}");
    }
}
