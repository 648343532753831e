//! Knowledge-base TSV: `entity<TAB>attribute<TAB>count`, sorted by entity then
//! attribute.

use std::fmt::Write as _;
use std::path::Path;

use rlstm_core::kb::KnowledgeBase;

use super::{content_lines, read_text, write_text};
use crate::error::{CliError, Result};

pub fn format_kb(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for (e, a, c) in kb.iter() {
        writeln!(out, "{e}\t{a}\t{c}").unwrap();
    }
    out
}

pub fn parse_kb(text: &str, path: &Path) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::new();
    for (line, raw) in content_lines(text) {
        let fields: Vec<&str> = raw.split('\t').collect();
        let [entity, attribute, count] = fields[..] else {
            return Err(CliError::format(
                path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        if entity.is_empty() || attribute.is_empty() {
            return Err(CliError::format(path, line, "empty entity or attribute"));
        }
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| CliError::format(path, line, format!("count '{count}' is not a non-negative integer")))?;
        if count == 0 {
            return Err(CliError::format(path, line, "counts must be positive"));
        }
        if kb.count(entity, attribute) > 0 {
            return Err(CliError::format(
                path,
                line,
                format!("duplicate pair {entity}/{attribute}"),
            ));
        }
        kb.add(entity, attribute, count);
    }
    Ok(kb)
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    parse_kb(&read_text(path)?, path)
}

pub fn save_kb(path: &Path, kb: &KnowledgeBase) -> Result<()> {
    write_text(path, &format_kb(kb))
}
