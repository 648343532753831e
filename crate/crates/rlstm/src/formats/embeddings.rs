//! Text embeddings: `token v1 v2 … vD`, one token per line.

use std::fmt::Write as _;
use std::path::Path;

use rlstm_core::embedding::{EmbeddingTable, Vocabulary};
use rlstm_core::Rng;

use super::{content_lines, read_text, write_text};
use crate::error::{CliError, Result};

pub type Entries = Vec<(String, Vec<f64>)>;

/// Rows of an embeddings file and their common width (`None` when empty).
pub fn parse_embeddings(text: &str, path: &Path) -> Result<(Option<usize>, Entries)> {
    let mut dim = None;
    let mut out = Vec::new();
    for (line, raw) in content_lines(text) {
        let mut fields = raw.split_whitespace();
        let token = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::format(path, line, format!("'{f}' is not a finite number"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(CliError::format(path, line, format!("token '{token}' has no values")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CliError::format(
                    path,
                    line,
                    format!("expected {d} values as on earlier lines, found {}", values.len()),
                ))
            }
            Some(_) => {}
        }
        out.push((token, values));
    }
    Ok((dim, out))
}

/// A table for `vocab`: rows found in the file are copied, the rest are drawn
/// from `Uniform[-0.1, 0.1]`. The width is the file's, or `default_dim` for an
/// empty file.
pub fn load_text_embeddings(path: &Path, vocab: &Vocabulary, default_dim: usize, rng: &Rng) -> Result<EmbeddingTable> {
    let (dim, entries) = parse_embeddings(&read_text(path)?, path)?;
    let dim = dim.unwrap_or(default_dim);
    let covered = entries.iter().filter(|(t, _)| vocab.get(t).is_some()).count();
    log::info!("{}: {covered} of {} vocabulary rows found", path.display(), vocab.len());
    Ok(EmbeddingTable::from_entries(vocab, dim, entries, &mut rng.clone())?)
}

/// Seventeen significant digits, so reading the text back is exact.
pub fn format_embeddings(table: &EmbeddingTable, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (i, token) in vocab.tokens().iter().enumerate() {
        out.push_str(token);
        for v in table.row(i) {
            write!(out, " {v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_text_embeddings(path: &Path, table: &EmbeddingTable, vocab: &Vocabulary) -> Result<()> {
    write_text(path, &format_embeddings(table, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new();
        tokens.iter().for_each(|t| {
            v.insert(t);
        });
        v
    }

    #[test]
    fn round_trip_is_exact() {
        let v = vocab(&["gpu", "kernel", "driver"]);
        let mut rng = Rng::new(3);
        let mut table = EmbeddingTable::random(v.len(), 4, &mut rng);
        table.matrix.row_mut(2)[0] = 1.0 / 3.0;
        table.matrix.row_mut(3)[1] = -2.5e-300;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        save_text_embeddings(&path, &table, &v).unwrap();
        let back = load_text_embeddings(&path, &v, 4, &Rng::new(99)).unwrap();
        assert_eq!(back.matrix, table.matrix);
    }

    #[test]
    fn inconsistent_width_names_the_line() {
        let text = format!("a {}\nb {}\n", vec!["0.1"; 100].join(" "), vec!["0.1"; 200].join(" "));
        let e = parse_embeddings(&text, Path::new("e.txt")).unwrap_err();
        assert!(e.to_string().starts_with("e.txt:2:"), "{e}");
    }

    #[test]
    fn width_comes_from_the_file() {
        let text = format!("a {}\nb {}\n", vec!["0.5"; 300].join(" "), vec!["0.25"; 300].join(" "));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, text).unwrap();
        let v = vocab(&["b", "zzz"]);
        let t = load_text_embeddings(&path, &v, 16, &Rng::new(0)).unwrap();
        assert_eq!(t.dim(), 300);
        assert!(t.row(2).iter().all(|&x| x == 0.25));
        assert!(t.row(3).iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn empty_file_gives_a_random_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "").unwrap();
        let v = vocab(&["a", "b", "c"]);
        let t = load_text_embeddings(&path, &v, 8, &Rng::new(0)).unwrap();
        assert_eq!((t.vocab_size(), t.dim()), (5, 8));
        assert!(t.matrix.as_slice().iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn rejects_non_numbers() {
        assert!(parse_embeddings("a 0.1 nan\n", Path::new("e")).is_err());
        assert!(parse_embeddings("a 0.1 x\n", Path::new("e")).is_err());
        assert!(parse_embeddings("a\n", Path::new("e")).is_err());
    }
}
