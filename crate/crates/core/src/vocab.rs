//! Word-level tokenizer and vocabulary.
//!
//! Text is lowercased and split on whitespace; each of `. , ! ? ; :` becomes
//! its own token. The five special tokens occupy ids 0..5 in the order
//! `[PAD] [UNK] [CLS] [SEP] [MASK]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;

const FILE_HEADER: &str = "# stt-lab vocab v1";
const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases and splits `text` into word and punctuation tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Vocab(format!("id {i} must be {s}")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of ordinary (non-special) words.
    pub fn word_ids(&self) -> std::ops::Range<usize> {
        SPECIALS.len()..self.tokens.len()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FILE_HEADER}").unwrap();
        for t in &self.tokens {
            writeln!(s, "{t}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == FILE_HEADER => {}
            Some(h) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unsupported vocab header `{h}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty vocab file".into(),
                })
            }
        }
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        if let Some(i) = tokens
            .iter()
            .position(|t| t.is_empty() || t.contains(char::is_whitespace))
        {
            return Err(Error::Parse {
                line: i + 2,
                message: "token must be non-empty without whitespace".into(),
            });
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Builds a vocabulary of the `max_size - 5` most frequent normalized tokens,
/// ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab> {
    if max_size < SPECIALS.len() + 1 {
        return Err(Error::Vocab(format!(
            "max_size must be at least {}, got {max_size}",
            SPECIALS.len() + 1
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for tok in normalize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Vocab("corpus has no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size - SPECIALS.len()).map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens)
}

/// Maps text to ids; unknown words become `[UNK]`.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<usize> {
    normalize(text)
        .iter()
        .map(|t| match vocab.id(t) {
            Some(id) if id >= SPECIALS.len() => id,
            _ => UNK_ID,
        })
        .collect()
}

pub fn decode(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        words.push(vocab.token(id).ok_or(Error::Index {
            what: "vocabulary",
            index: id,
            len: vocab.len(),
        })?);
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Vocab {
        build_vocab(&["a b", "a"], 8).unwrap()
    }

    #[test]
    fn frequency_order() {
        let v = small();
        assert_eq!(&v.tokens()[..5], &SPECIALS.map(String::from));
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), Some(6));
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = build_vocab(&["y x"], 8).unwrap();
        assert_eq!(v.id("x"), Some(5));
        assert_eq!(v.id("y"), Some(6));
    }

    #[test]
    fn bad_inputs() {
        let empty: [&str; 0] = [];
        assert!(build_vocab(&empty, 8).is_err());
        assert!(build_vocab(&["   "], 8).is_err());
        assert!(build_vocab(&["a"], 5).is_err());
    }

    #[test]
    fn retains_most_frequent_words() {
        // Word w{i} appears in a sentence iff (s * 7 + i) % (i + 2) == 0, so
        // frequencies are distinct-ish; the oracle counts them directly.
        let corpus: Vec<String> = (0..1000)
            .map(|s| {
                (0..80)
                    .filter(|i| (s * 7 + i) % (i + 2) == 0)
                    .map(|i| format!("w{i}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in &corpus {
            for w in line.split_whitespace() {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
        let mut oracle: Vec<_> = counts.into_iter().collect();
        oracle.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let expected: Vec<String> = oracle.into_iter().take(59).map(|(w, _)| w).collect();

        let v = build_vocab(&corpus, 64).unwrap();
        assert_eq!(v.len(), 64);
        assert_eq!(&v.tokens()[5..], &expected[..]);
    }

    #[test]
    fn encode_cases() {
        let v = small();
        assert!(encode("", &v).is_empty());
        assert_eq!(encode("a b", &v), vec![5, 6]);
        assert_eq!(encode("a zzz", &v), vec![5, UNK_ID]);
        assert_eq!(encode("A [MASK] [CLS]", &v), vec![5, UNK_ID, UNK_ID]);
    }

    #[test]
    fn normalization_splits_punctuation() {
        assert_eq!(
            normalize("The snacks, are DELICIOUS."),
            vec!["the", "snacks", ",", "are", "delicious", "."]
        );
        assert_eq!(normalize("what?!"), vec!["what", "?", "!"]);
    }

    #[test]
    fn decode_cases() {
        let v = small();
        assert_eq!(decode(&[5, 6], &v).unwrap(), "a b");
        assert_eq!(decode(&[], &v).unwrap(), "");
        assert!(matches!(decode(&[99], &v), Err(Error::Index { .. })));
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(&["the movie was great .", "it was terrible !"], 32).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("# stt-lab vocab v1\n[PAD]\n"));
        assert_eq!(Vocab::parse(&text).unwrap(), v);
        assert!(Vocab::parse("# stt-lab vocab v9\n[PAD]").is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = ["b c a", "c a", "a d d"];
        assert_eq!(build_vocab(&corpus, 10).unwrap(), build_vocab(&corpus, 10).unwrap());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(picks in proptest::collection::vec(0usize..40, 0..30)) {
            let corpus: Vec<String> = (0..40).map(|i| format!("w{i} , .")).collect();
            let v = build_vocab(&corpus, 64).unwrap();
            let ids: Vec<usize> = picks.iter().map(|p| SPECIALS.len() + p % (v.len() - SPECIALS.len())).collect();
            let text = decode(&ids, &v).unwrap();
            prop_assert_eq!(encode(&text, &v), ids);
        }
    }
}
