use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vocab::Vocab;
use crate::autodiff::Tensor;
use crate::encoders::init_embedding;
use crate::error::{invalid, LcmError, Result};

/// Loads a word-per-line embedding file (`token v1 ... vdim`) into a
/// `|V| x dim` table. Rows of tokens missing from the file keep the seeded
/// initialization; returns the table and the fraction of non-reserved
/// vocabulary tokens found in the file.
pub fn load_pretrained_embeddings(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<(Tensor, f64)> {
    if dim == 0 {
        return Err(invalid("embedding dim must be positive"));
    }
    let mut table = init_embedding(vocab.len(), dim, seed);
    let mut covered = vec![false; vocab.len()];
    let reader = BufReader::new(std::fs::File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(LcmError::Format {
                line: i + 1,
                message: format!("expected {dim} values after the token, found {}", values.len()),
            });
        }
        let Some(id) = vocab.get(token) else { continue };
        let row: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| LcmError::Format { line: i + 1, message: e.to_string() })?;
        let id = id as usize;
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
        covered[id] = true;
    }
    let total = vocab.tokens().len();
    let hits = covered.iter().filter(|&&c| c).count();
    let coverage = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Ok((table, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::build_vocab;

    #[test]
    fn full_coverage_copies_rows() {
        let vocab = build_vocab(&["a b"], 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 0.5 -1.25\nb 3 4\nzzz 9 9\n").unwrap();
        let (t, cov) = load_pretrained_embeddings(&path, &vocab, 2, 1).unwrap();
        assert_eq!(cov, 1.0);
        assert_eq!(t.row(vocab.id("a") as usize), &[0.5, -1.25]);
        assert_eq!(t.row(vocab.id("b") as usize), &[3.0, 4.0]);
    }

    #[test]
    fn empty_file_falls_back_to_seeded_rows() {
        let vocab = build_vocab(&["a b"], 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "").unwrap();
        let (t, cov) = load_pretrained_embeddings(&path, &vocab, 3, 4).unwrap();
        assert_eq!(cov, 0.0);
        assert_eq!(t, init_embedding(vocab.len(), 3, 4));
    }

    #[test]
    fn wrong_arity_cites_line() {
        let vocab = build_vocab(&["a b"], 1, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 1 2\nb 1 2 3\n").unwrap();
        match load_pretrained_embeddings(&path, &vocab, 2, 0) {
            Err(LcmError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
