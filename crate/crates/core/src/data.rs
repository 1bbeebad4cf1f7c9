//! Alphabets, lexicon and vocabulary files, and the bundled sample data.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// 200 English words used for round-trip and decoding fixtures.
pub const ENGLISH_WORDS: &str = include_str!("../fixtures/words_en.txt");
/// Larger English word list used as a correction vocabulary.
pub const ENGLISH_VOCABULARY: &str = include_str!("../fixtures/vocab_en.txt");
/// Romanized Hindi to Devanagari sample lexicon.
pub const HINDI_LEXICON: &str = include_str!("../fixtures/hindi_lexicon.tsv");

/// Ordered set of code points. Indices are positions in this order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Alphabet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl TryFrom<Vec<char>> for Alphabet {
    type Error = CoreError;

    fn try_from(chars: Vec<char>) -> Result<Self> {
        Alphabet::new(chars)
    }
}

impl From<Alphabet> for Vec<char> {
    fn from(a: Alphabet) -> Self {
        a.chars
    }
}

impl Alphabet {
    pub fn new(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(CoreError::DuplicateChar(c));
            }
        }
        Ok(Self { chars, index })
    }

    /// Sorted distinct code points of `words`.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = words.into_iter().flat_map(|w| w.chars()).collect();
        Self::new(set.into_iter().collect()).expect("set has no duplicates")
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn get(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.get(c).ok_or(CoreError::UnknownChar(c))
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    pub fn encode(&self, word: &str) -> Result<Vec<usize>> {
        word.chars().map(|c| self.index_of(c)).collect()
    }

    /// Maps indices back to characters; out-of-range indices are dropped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.char_at(i)).collect()
    }
}

/// One entry of a transliteration lexicon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub source: String,
    pub target: String,
}

/// Parses `source<TAB>target` lines. Blank lines and `#` comments are
/// skipped.
pub fn parse_lexicon(text: &str) -> Result<Vec<LexiconEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(t), None) if !s.trim().is_empty() && !t.trim().is_empty() => {
                out.push(LexiconEntry {
                    source: s.trim().to_string(),
                    target: t.trim().to_string(),
                })
            }
            _ => {
                return Err(CoreError::invalid(
                    "lexicon",
                    format!("line {}: expected `source<TAB>target`", n + 1),
                ))
            }
        }
    }
    Ok(out)
}

/// One word per line, duplicates removed keeping the first occurrence.
pub fn parse_vocabulary(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

pub fn read_lexicon(path: impl AsRef<Path>) -> Result<Vec<LexiconEntry>> {
    parse_lexicon(&std::fs::read_to_string(path)?)
}

pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(parse_vocabulary(&std::fs::read_to_string(path)?))
}

pub fn english_words() -> Vec<String> {
    parse_vocabulary(ENGLISH_WORDS)
}

pub fn english_vocabulary() -> Vec<String> {
    parse_vocabulary(ENGLISH_VOCABULARY)
}

pub fn hindi_lexicon() -> Vec<LexiconEntry> {
    parse_lexicon(HINDI_LEXICON).expect("bundled lexicon parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bundled_layout;

    #[test]
    fn bundled_lists_have_expected_sizes() {
        assert_eq!(english_words().len(), 200);
        assert!(english_vocabulary().len() >= 500);
        assert!(hindi_lexicon().len() >= 150);
    }

    #[test]
    fn bundled_data_fits_the_bundled_layouts() {
        let q = bundled_layout("qwerty_en").unwrap();
        let d = bundled_layout("devanagari").unwrap();
        for w in english_vocabulary() {
            assert!(w.chars().all(|c| q.contains(c)), "{w}");
        }
        for e in hindi_lexicon() {
            assert!(e.source.chars().all(|c| q.contains(c)), "{}", e.source);
            assert!(e.target.chars().all(|c| d.contains(c)), "{}", e.target);
        }
    }

    #[test]
    fn alphabet_round_trips_words() {
        let a = Alphabet::from_words(["cab", "abc"]);
        assert_eq!(a.chars(), &['a', 'b', 'c']);
        assert_eq!(a.decode(&a.encode("cab").unwrap()), "cab");
        assert!(matches!(a.encode("cat"), Err(CoreError::UnknownChar('t'))));
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Alphabet>(&json).unwrap(), a);
        assert!(serde_json::from_str::<Alphabet>("[\"a\",\"a\"]").is_err());
    }

    #[test]
    fn lexicon_parsing() {
        let lex = parse_lexicon("# c\nghar\tघर\n\nnaam\tनाम\r\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex[1].target, "नाम");
        assert!(parse_lexicon("only-one-column\n").is_err());
        assert_eq!(parse_vocabulary("a\nb\na\n"), vec!["a", "b"]);
    }
}
