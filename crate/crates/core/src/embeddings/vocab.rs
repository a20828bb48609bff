use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUMBER: usize = 4;

/// Surface forms of the reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<NUMBER>"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Bijective token ↔ id mapping with the reserved tokens at ids 0–4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized sentences.
    ///
    /// Words with frequency `>= min_count` are kept, most frequent first with
    /// lexicographic tie-break, truncated so the total size is at most `max_size`.
    pub fn build<I, S>(sentences: I, min_count: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if max_size < NUM_SPECIAL {
            return Err(Error::Config(format!(
                "vocabulary size must be at least {NUM_SPECIAL}, got {max_size}"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for sentence in sentences {
            for tok in sentence.as_ref() {
                seen_any = true;
                if SPECIAL_TOKENS.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_SPECIAL);
        Self::from_words(ranked.into_iter().map(|(w, _)| w))
    }

    /// Specials followed by `words` in the given order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Result<Self> {
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Full token list in id order; the first five must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL
            || tokens[..NUM_SPECIAL]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::format(
                1,
                "vocabulary must start with <PAD> <BOS> <EOS> <UNK> <NUMBER>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::format(i + 1, format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Surface tokens for `ids`, dropping PAD, BOS and EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK]).to_string())
            .collect()
    }

    /// One token per line, in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }

    /// SHA-256 over the newline-joined token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn builds_with_specials_first() {
        let v = Vocabulary::build([sent("a a b")], 1, 100).unwrap();
        assert_eq!(
            v.tokens(),
            &["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<NUMBER>", "a", "b"]
        );
    }

    #[test]
    fn min_count_excludes_rare_words() {
        let v = Vocabulary::build([sent("a a b")], 2, 100).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id_or_unk("b"), UNK);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocabulary::build([sent("y x y x y x")], 1, 100).unwrap();
        assert_eq!(v.id("x"), Some(5));
        assert_eq!(v.id("y"), Some(6));
    }

    #[test]
    fn truncates_to_max_size() {
        let v = Vocabulary::build([sent("a a a b b c")], 1, 7).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("c"), None);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(
            Vocabulary::build(empty, 1, 10),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn number_token_is_not_duplicated() {
        let v = Vocabulary::build([sent("i have <NUMBER> cats")], 1, 100).unwrap();
        assert_eq!(v.id("<NUMBER>"), Some(NUMBER));
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let corpus = [sent("the cat sat on the mat"), sent("the dog sat")];
        let a = Vocabulary::build(corpus.clone(), 1, 100).unwrap();
        let b = Vocabulary::build(corpus, 1, 100).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_to(&mut fa).unwrap();
        b.write_to(&mut fb).unwrap();
        assert_eq!(fa, fb);
        let back = Vocabulary::read_from(&fa[..]).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.fingerprint(), a.fingerprint());
    }

    #[test]
    fn rejects_files_without_specials() {
        assert!(Vocabulary::read_from(&b"a\nb\n"[..]).is_err());
    }
}
