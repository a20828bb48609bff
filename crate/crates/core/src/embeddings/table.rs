use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::vocab::{hex_digest, Vocabulary, BOS, NUMBER, PAD, UNK};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix};
use crate::scalar::Scalar;

/// Half-width of the uniform init for rows missing from a word-vector file.
pub const MISSING_ROW_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Fixed pre-trained vectors; never updated by training.
    Frozen,
    /// Initial vectors trained with the rest of the model.
    Trainable,
}

/// `V × d` word-vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    pub vectors: Matrix<T>,
    pub mode: EmbeddingMode,
}

/// Result of reading a word-vector file against a vocabulary.
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings<T> {
    pub matrix: EmbeddingMatrix<T>,
    /// Fraction of vocabulary rows found in the file.
    pub coverage: f64,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(vectors: Matrix<T>, mode: EmbeddingMode) -> Self {
        Self { vectors, mode }
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, id: usize) -> &[T] {
        self.vectors.row(id)
    }

    pub fn is_trainable(&self) -> bool {
        self.mode == EmbeddingMode::Trainable
    }

    /// SHA-256 of the raw bit patterns, for checking frozen tables stay untouched.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for x in self.vectors.as_slice() {
            h.update(x.as_f64().to_bits().to_le_bytes());
        }
        hex_digest(h)
    }

    /// Writes the `"V d"` header followed by one `word v1 … vd` line per row.
    pub fn write_text<W: Write>(&self, vocab: &Vocabulary, mut w: W) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::dim(format!(
                "vocabulary has {} tokens, matrix has {} rows",
                vocab.len(),
                self.vocab_size()
            )));
        }
        writeln!(w, "{} {}", self.vocab_size(), self.dim())?;
        for (id, tok) in vocab.tokens().iter().enumerate() {
            write!(w, "{tok}")?;
            for x in self.row(id) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reads a word-vector text stream into a matrix aligned with `vocab`.
///
/// Rows for words absent from the stream (including the special tokens) are
/// drawn uniformly from `[-0.1, 0.1]` using `seed`.
pub fn load_embeddings<T: Scalar, R: BufRead>(
    source: R,
    vocab: &Vocabulary,
    dim: usize,
    mode: EmbeddingMode,
    seed: u64,
) -> Result<LoadedEmbeddings<T>> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Matrix::<T>::uniform(vocab.len(), dim, MISSING_ROW_INIT, &mut rng);
    let mut found = vec![false; vocab.len()];
    let mut first = true;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if d != dim {
                    return Err(Error::format(
                        lineno,
                        format!("header declares dimension {d}, expected {dim}"),
                    ));
                }
                continue;
            }
        }
        if fields.len() != dim + 1 {
            return Err(Error::format(
                lineno,
                format!("expected {dim} values, found {}", fields.len() - 1),
            ));
        }
        let Some(id) = vocab.id(fields[0]) else {
            continue;
        };
        if found[id] {
            continue;
        }
        let row = vectors.row_mut(id);
        for (slot, text) in row.iter_mut().zip(&fields[1..]) {
            let v: T = text
                .parse()
                .map_err(|_| Error::format(lineno, format!("invalid number {text:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(lineno, format!("non-finite value {text:?}")));
            }
            *slot = v;
        }
        found[id] = true;
    }
    let coverage = found.iter().filter(|&&f| f).count() as f64 / vocab.len() as f64;
    Ok(LoadedEmbeddings {
        matrix: EmbeddingMatrix::new(vectors, mode),
        coverage,
    })
}

/// Whether `id` may be emitted by generation when specials are excluded.
///
/// EOS stays eligible because it terminates generation.
pub fn is_generation_excluded(id: usize) -> bool {
    matches!(id, PAD | BOS | UNK | NUMBER)
}

/// Vocabulary id whose row has the highest cosine similarity with `v`.
///
/// Ties resolve to the lowest id; zero rows are never selected.
pub fn nearest_word<T: Scalar>(
    v: &[T],
    emb: &EmbeddingMatrix<T>,
    exclude_specials: bool,
) -> Result<usize> {
    if v.len() != emb.dim() {
        return Err(Error::dim(format!(
            "query has length {}, embeddings have dimension {}",
            v.len(),
            emb.dim()
        )));
    }
    let nv = norm(v);
    if nv == T::zero() {
        return Err(Error::DegenerateInput("nearest word of a zero vector".into()));
    }
    let mut best: Option<(usize, T)> = None;
    for id in 0..emb.vocab_size() {
        if exclude_specials && is_generation_excluded(id) {
            continue;
        }
        let row = emb.row(id);
        let nr = norm(row);
        if nr == T::zero() {
            continue;
        }
        let sim = dot(v, row) / (nv * nr);
        match best {
            Some((_, b)) if sim <= b => {}
            _ => best = Some((id, sim)),
        }
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::DegenerateInput("no eligible non-zero embedding rows".into()))
}

/// Cosine similarity of `v` against every row; zero rows score `-1`.
pub fn similarities<T: Scalar>(v: &[T], emb: &EmbeddingMatrix<T>) -> Vec<T> {
    let nv = norm(v);
    (0..emb.vocab_size())
        .map(|id| {
            let row = emb.row(id);
            let nr = norm(row);
            if nv == T::zero() || nr == T::zero() {
                -T::one()
            } else {
                dot(v, row) / (nv * nr)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::vocab::EOS;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_words(words.iter().map(|s| s.to_string())).unwrap()
    }

    fn full_stream(v: &Vocabulary, dim: usize) -> (String, Vec<Vec<f64>>) {
        let mut text = String::new();
        let mut rows = Vec::new();
        for (i, t) in v.tokens().iter().enumerate() {
            let row: Vec<f64> = (0..dim).map(|j| (i * dim + j) as f64 * 0.125 - 1.0).collect();
            text.push_str(t);
            for x in &row {
                text.push_str(&format!(" {x}"));
            }
            text.push('\n');
            rows.push(row);
        }
        (text, rows)
    }

    #[test]
    fn full_coverage_copies_rows() {
        let v = vocab(&["hello", "world"]);
        let (text, rows) = full_stream(&v, 4);
        let loaded =
            load_embeddings::<f64, _>(text.as_bytes(), &v, 4, EmbeddingMode::Frozen, 1).unwrap();
        assert_eq!(loaded.coverage, 1.0);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(loaded.matrix.row(i), r.as_slice());
        }
    }

    #[test]
    fn empty_stream_initializes_randomly() {
        let v = vocab(&["a"]);
        let loaded =
            load_embeddings::<f64, _>(&b""[..], &v, 3, EmbeddingMode::Trainable, 9).unwrap();
        assert_eq!(loaded.coverage, 0.0);
        assert!(loaded
            .matrix
            .vectors
            .as_slice()
            .iter()
            .all(|x| x.abs() <= MISSING_ROW_INIT));
        let again =
            load_embeddings::<f64, _>(&b""[..], &v, 3, EmbeddingMode::Trainable, 9).unwrap();
        assert_eq!(loaded.matrix, again.matrix);
    }

    #[test]
    fn header_and_dimension_checks() {
        let v = vocab(&["a", "b"]);
        let row = |w: &str, n: usize| format!("{w}{}\n", " 0.5".repeat(n));
        let ok = format!("2 300\n{}{}", row("a", 300), row("b", 300));
        assert!(load_embeddings::<f64, _>(ok.as_bytes(), &v, 300, EmbeddingMode::Frozen, 0).is_ok());
        let bad = format!("2 300\n{}", row("a", 299));
        match load_embeddings::<f64, _>(bad.as_bytes(), &v, 300, EmbeddingMode::Frozen, 0) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let v = vocab(&["x", "y", "z"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = EmbeddingMatrix::new(Matrix::<f64>::glorot(v.len(), 5, &mut rng), EmbeddingMode::Frozen);
        let mut buf = Vec::new();
        m.write_text(&v, &mut buf).unwrap();
        let back = load_embeddings::<f64, _>(&buf[..], &v, 5, EmbeddingMode::Frozen, 0).unwrap();
        assert_eq!(back.coverage, 1.0);
        assert_eq!(back.matrix.fingerprint(), m.fingerprint());
    }

    #[test]
    fn nearest_word_examples() {
        let v = vocab(&["hello", "other"]);
        let mut m = Matrix::<f64>::zeros(v.len(), 2);
        m.row_mut(EOS).copy_from_slice(&[0.3, -0.7]);
        m.row_mut(5).copy_from_slice(&[1.0, 0.0]);
        m.row_mut(6).copy_from_slice(&[0.0, 1.0]);
        let emb = EmbeddingMatrix::new(m, EmbeddingMode::Frozen);
        assert_eq!(nearest_word(&[1.0, 0.0], &emb, true).unwrap(), 5);
        // cos(-hello, hello) = -1, cos(-hello, other) = 0, cos(-hello, eos) ≈ -0.39
        assert_eq!(nearest_word(&[-1.0, 0.0], &emb, true).unwrap(), 6);
        assert!(matches!(
            nearest_word(&[0.0, 0.0], &emb, true),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn nearest_word_ties_pick_lowest_id() {
        let v = vocab(&["a", "b"]);
        let mut m = Matrix::<f64>::zeros(v.len(), 2);
        m.row_mut(5).copy_from_slice(&[1.0, 1.0]);
        m.row_mut(6).copy_from_slice(&[1.0, 1.0]);
        let emb = EmbeddingMatrix::new(m, EmbeddingMode::Frozen);
        assert_eq!(nearest_word(&[2.0, 2.0], &emb, true).unwrap(), 5);
    }

    #[test]
    fn nearest_word_recovers_each_generic_row() {
        let v = vocab(&["a", "b", "c", "d"]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let emb = EmbeddingMatrix::new(Matrix::<f64>::glorot(v.len(), 6, &mut rng), EmbeddingMode::Frozen);
        for id in 0..v.len() {
            assert_eq!(nearest_word(emb.row(id), &emb, false).unwrap(), id);
        }
    }
}
