//! Token inventory, sequences and contexts.
//!
//! Every vocabulary carries exactly one end-of-sequence token. Sequences may
//! contain it only as their final element; contexts never contain it.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: TokenId,
    unk_id: Option<TokenId>,
    index: HashMap<String, TokenId>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.eos_id == other.eos_id && self.unk_id == other.unk_id
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_id: TokenId, unk_id: Option<TokenId>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "need at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        if eos_id >= tokens.len() {
            return Err(Error::InvalidVocabulary(format!("eos id {eos_id} out of range")));
        }
        if let Some(unk) = unk_id {
            if unk >= tokens.len() || unk == eos_id {
                return Err(Error::InvalidVocabulary(format!("bad unk id {unk}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            eos_id,
            unk_id,
            index,
        })
    }

    /// Vocabulary of `size` tokens named `<eos>`, `t1`, `t2`, ... with eos at id 0.
    pub fn synthetic(size: usize) -> Result<Self> {
        let tokens = std::iter::once(EOS_TOKEN.to_string())
            .chain((1..size).map(|i| format!("t{i}")))
            .collect();
        Self::new(tokens, 0, None)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a token string to its id, falling back to unk when available.
    pub fn lookup(&self, token: &str) -> Result<TokenId> {
        match self.id(token) {
            Some(id) if id != self.eos_id => Ok(id),
            Some(_) => Err(Error::InvalidSequence(
                "eos may not appear inside a token list".into(),
            )),
            None => self
                .unk_id
                .ok_or_else(|| Error::UnknownToken(token.to_string())),
        }
    }
}

/// Builds a vocabulary with canonical ordering: eos first, then unk (if
/// requested), then tokens by descending frequency and ascending lexical order.
///
/// Occurrences of the literal `<unk>` string in the corpus count toward the
/// unk entry rather than forming a regular token.
pub fn build_vocabulary(
    corpus_tokens: &[Vec<String>],
    min_freq: usize,
    add_unk: bool,
) -> Result<Vocabulary> {
    if corpus_tokens.is_empty() || corpus_tokens.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut saw_unk_literal = false;
    for tok in corpus_tokens.iter().flatten() {
        match tok.as_str() {
            EOS_TOKEN => {
                return Err(Error::InvalidVocabulary(format!(
                    "corpus contains the reserved token {EOS_TOKEN}"
                )))
            }
            UNK_TOKEN => saw_unk_literal = true,
            t => *counts.entry(t).or_default() += 1,
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec![EOS_TOKEN.to_string()];
    let unk_id = if add_unk || saw_unk_literal {
        tokens.push(UNK_TOKEN.to_string());
        Some(1)
    } else {
        None
    };
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    if tokens.len() < 2 {
        return Err(Error::EmptyCorpus);
    }
    Vocabulary::new(tokens, 0, unk_id)
}

/// A decoded or ground-truth sequence. `terminated` is true iff the final id is eos.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    token_ids: Vec<TokenId>,
    terminated: bool,
}

impl Sequence {
    pub fn new(token_ids: Vec<TokenId>, eos_id: TokenId) -> Result<Self> {
        if let Some(pos) = token_ids.iter().position(|&t| t == eos_id) {
            if pos + 1 != token_ids.len() {
                return Err(Error::InvalidSequence(format!(
                    "eos at position {pos} of {}",
                    token_ids.len()
                )));
            }
        }
        let terminated = token_ids.last() == Some(&eos_id);
        Ok(Self {
            token_ids,
            terminated,
        })
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Length including the terminal eos when present.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Tokens excluding the terminal eos.
    pub fn body(&self) -> &[TokenId] {
        if self.terminated {
            &self.token_ids[..self.token_ids.len() - 1]
        } else {
            &self.token_ids
        }
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.token_ids
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Context {
    token_ids: Vec<TokenId>,
}

impl Context {
    pub fn new(token_ids: Vec<TokenId>, eos_id: TokenId) -> Result<Self> {
        if token_ids.contains(&eos_id) {
            return Err(Error::InvalidSequence("context contains eos".into()));
        }
        Ok(Self { token_ids })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn encode<S: AsRef<str>>(v: &Vocabulary, tokens: &[S], append_eos: bool) -> Result<Sequence> {
    let mut ids = tokens
        .iter()
        .map(|t| v.lookup(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    if append_eos {
        ids.push(v.eos_id());
    }
    Sequence::new(ids, v.eos_id())
}

pub fn encode_context<S: AsRef<str>>(v: &Vocabulary, tokens: &[S]) -> Result<Context> {
    let ids = tokens
        .iter()
        .map(|t| v.lookup(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Context::new(ids, v.eos_id())
}

/// Token strings of the sequence body; the terminal eos is dropped.
pub fn decode(v: &Vocabulary, seq: &Sequence) -> Vec<String> {
    seq.body()
        .iter()
        .map(|&id| v.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}
