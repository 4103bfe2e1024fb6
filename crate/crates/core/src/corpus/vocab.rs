use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::{read_text, write_text};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
const SPECIALS: [&str; 4] = ["[pad]", "[unk]", "[cls]", "[sep]"];

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Word-level vocabulary with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(SPECIALS.len()) {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Corpus(format!("token {t:?} listed twice")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    /// One token per line, specials excluded.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in self.words() {
            writeln!(out, "{w}").expect("string write");
        }
        write_text(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect())
    }
}

/// Vocabulary over tokens with frequency at least `min_freq`, ordered by
/// descending frequency and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for w in words(t.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Corpus("no tokens in corpus".into()));
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(w, _)| w).collect())
}

/// `[cls, w1, ..]` truncated to `max_len` and padded; the mask marks
/// non-pad positions.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<(Vec<usize>, Vec<bool>)> {
    if max_len < 2 {
        return Err(Error::Parameter(format!("max_len {max_len} below 2")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(words(text).take(max_len - 1).map(|w| vocab.id(&w)));
    let valid = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < valid).collect();
    Ok((ids, mask))
}
