//! Corpus ingestion: tokenization, context/continuation splitting, and a
//! small synthetic English-like corpus for experiments.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Example;
use crate::vocab::{encode, encode_context, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Every Unicode scalar value is a token.
    #[default]
    Char,
    /// Whitespace-separated words.
    Word,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(TokenizerMode::Char),
            "word" => Ok(TokenizerMode::Word),
            other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TokenizerMode::Char => "char",
            TokenizerMode::Word => "word",
        })
    }
}

pub fn tokenize(line: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Char => line.chars().map(String::from).collect(),
        TokenizerMode::Word => line.split_whitespace().map(String::from).collect(),
    }
}

/// Tokenizes every non-blank line. Trailing newlines and carriage returns
/// are stripped; other whitespace is kept in char mode.
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S], mode: TokenizerMode) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.as_ref().trim_end_matches(['\r', '\n']))
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenize(l, mode))
        .collect()
}

pub fn read_corpus(path: &Path, mode: TokenizerMode) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let out = tokenize_lines(&lines, mode);
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

/// Contiguous split by fractions that must sum to 1. Each part gets
/// `round(fraction · n)` lines, with the last part taking the remainder.
pub fn split_by_fractions<T: Clone>(items: &[T], fractions: &[f64]) -> Result<Vec<Vec<T>>> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let n = items.len();
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        let end = if i + 1 == fractions.len() {
            n
        } else {
            (start + (f * n as f64).round() as usize).min(n)
        };
        parts.push(items[start..end].to_vec());
        start = end;
    }
    Ok(parts)
}

/// First `context_length` tokens become the context, the rest plus eos the
/// target. Lines with at most `context_length` tokens are dropped.
pub fn make_examples(vocab: &Vocabulary, lines: &[Vec<String>], context_length: usize) -> Result<Vec<Example>> {
    lines
        .iter()
        .filter(|l| l.len() > context_length)
        .map(|l| {
            Ok(Example {
                context: encode_context(vocab, &l[..context_length])?,
                target: encode(vocab, &l[context_length..], true)?,
            })
        })
        .collect()
}

const DETERMINERS: &[&str] = &["the", "a", "every", "some", "this"];
const NOUNS: &[&str] = &[
    "cat", "dog", "bird", "child", "farmer", "teacher", "river", "garden", "house", "tree", "book", "song",
];
const PRONOUNS: &[&str] = &["she", "he", "they"];
const TRANSITIVE: &[&str] = &["sees", "likes", "finds", "carries", "builds", "reads", "follows"];
const INTRANSITIVE: &[&str] = &["sleeps", "runs", "sings", "waits"];
const ADJECTIVES: &[&str] = &["small", "old", "green", "quiet", "bright", "happy"];
const ADVERBS: &[&str] = &["slowly", "quickly", "often"];
const PREPOSITIONS: &[&str] = &["near", "under", "behind", "with"];
const CONJUNCTIONS: &[&str] = &["and", "but"];

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("word lists are non-empty")
}

fn noun_phrase<R: Rng>(rng: &mut R, out: &mut Vec<&'static str>, depth: usize) {
    if depth == 0 && rng.random_bool(0.15) {
        out.push(pick(rng, PRONOUNS));
        return;
    }
    out.push(pick(rng, DETERMINERS));
    if rng.random_bool(0.35) {
        out.push(pick(rng, ADJECTIVES));
    }
    out.push(pick(rng, NOUNS));
    if depth < 1 && rng.random_bool(0.2) {
        out.push(pick(rng, PREPOSITIONS));
        noun_phrase(rng, out, depth + 1);
    }
}

fn clause<R: Rng>(rng: &mut R, out: &mut Vec<&'static str>) {
    noun_phrase(rng, out, 0);
    if rng.random_bool(0.65) {
        out.push(pick(rng, TRANSITIVE));
        noun_phrase(rng, out, 1);
    } else {
        out.push(pick(rng, INTRANSITIVE));
        if rng.random_bool(0.4) {
            out.push(pick(rng, ADVERBS));
        }
    }
}

/// Lines of one to three sentences from a small English-like grammar
/// (about 50 word types). Sentence count varies per line, so where a line
/// ends is not a fixed function of its length.
pub fn synthetic_grammar_corpus(lines: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..lines)
        .map(|_| {
            let sentences = match rng.random_range(0..10) {
                0..=4 => 1,
                5..=8 => 2,
                _ => 3,
            };
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..sentences {
                clause(&mut rng, &mut words);
                if rng.random_bool(0.25) {
                    words.push(",");
                    words.push(pick(&mut rng, CONJUNCTIONS));
                    clause(&mut rng, &mut words);
                }
                words.push(".");
            }
            words.join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocabulary;

    #[test]
    fn tokenizer_modes() {
        assert_eq!(tokenize("ab c", TokenizerMode::Char), vec!["a", "b", " ", "c"]);
        assert_eq!(tokenize("  ab  c ", TokenizerMode::Word), vec!["ab", "c"]);
        assert_eq!(tokenize("é€", TokenizerMode::Char).len(), 2);
        assert_eq!(tokenize_lines(&["x\r", "", "  ", "y"], TokenizerMode::Char), vec![vec!["x"], vec!["y"]]);
    }

    #[test]
    fn short_lines_are_dropped() {
        let lines = tokenize_lines(&["a b c", "a b", "c"], TokenizerMode::Word);
        let v = build_vocabulary(&lines, 1, false).unwrap();
        let ex = make_examples(&v, &lines, 2).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].context.len(), 2);
        assert_eq!(ex[0].target.len(), 2);
        assert!(ex[0].target.terminated());
    }

    #[test]
    fn fractions_split_contiguously() {
        let items: Vec<usize> = (0..10).collect();
        let parts = split_by_fractions(&items, &[0.8, 0.1, 0.1]).unwrap();
        assert_eq!(parts[0], (0..8).collect::<Vec<_>>());
        assert_eq!(parts[1], vec![8]);
        assert_eq!(parts[2], vec![9]);
        assert!(split_by_fractions(&items, &[0.5, 0.4]).is_err());
    }

    #[test]
    fn synthetic_corpus_has_about_fifty_types() {
        let text = synthetic_grammar_corpus(800, 1);
        assert_eq!(text, synthetic_grammar_corpus(800, 1));
        let lines = tokenize_lines(&text, TokenizerMode::Word);
        let v = build_vocabulary(&lines, 1, false).unwrap();
        assert!((45..=55).contains(&v.len()), "{}", v.len());
        let lens: Vec<usize> = lines.iter().map(Vec::len).collect();
        let usable = lens.iter().filter(|&&l| l > 5).count();
        assert!(usable > 650, "{usable}");
    }
}
