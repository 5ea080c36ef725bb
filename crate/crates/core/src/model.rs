//! The conditional-model interface consumed by heads, decoders and metrics,
//! plus a table-driven implementation for oracle tests.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distribution::ConditionalDistribution;
use crate::error::{Error, Result};
use crate::vocab::{Context, TokenId, Vocabulary};

/// An autoregressive model `p(y_t | y_<t, x)`.
///
/// A state encodes the context plus the generated prefix. Implementations
/// must be deterministic and must not mutate shared data during inference.
pub trait ConditionalModel {
    type State: Clone;

    fn vocab(&self) -> &Vocabulary;

    /// State after reading `context`, positioned to predict the first
    /// continuation token (step t = 1).
    fn initial_state(&self, context: &Context) -> Self::State;

    fn next_distribution(&self, state: &Self::State) -> ConditionalDistribution;

    /// State after appending the non-eos `token`.
    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;
}

/// Distribution at the end of `prefix` (teacher forced from the context).
pub fn prefix_distribution<M: ConditionalModel>(
    model: &M,
    context: &Context,
    prefix: &[TokenId],
) -> ConditionalDistribution {
    let mut state = model.initial_state(context);
    for &tok in prefix {
        state = model.advance(&state, tok);
    }
    model.next_distribution(&state)
}

/// `Σ_t log p(y_t | y_<t, x)` over the given tokens.
pub fn sequence_log_prob<M: ConditionalModel>(model: &M, context: &Context, tokens: &[TokenId]) -> f64 {
    let eos = model.vocab().eos_id();
    let mut state = model.initial_state(context);
    let mut total = 0.0;
    for (i, &tok) in tokens.iter().enumerate() {
        total += model.next_distribution(&state).log_prob(tok);
        if tok != eos && i + 1 < tokens.len() {
            state = model.advance(&state, tok);
        }
    }
    total
}

/// A model whose next-token distribution is looked up by generated prefix.
/// The context is ignored. Prefixes missing from the table use `fallback`.
#[derive(Clone, Debug)]
pub struct TableModel {
    vocab: Vocabulary,
    table: HashMap<Vec<TokenId>, ConditionalDistribution>,
    fallback: ConditionalDistribution,
}

impl TableModel {
    pub fn constant(vocab: Vocabulary, probs: Vec<f64>) -> Result<Self> {
        check_len(&vocab, &probs)?;
        Ok(Self {
            vocab,
            table: HashMap::new(),
            fallback: ConditionalDistribution::from_probs(probs),
        })
    }

    pub fn uniform(vocab: Vocabulary) -> Self {
        let n = vocab.len();
        Self {
            vocab,
            table: HashMap::new(),
            fallback: ConditionalDistribution::uniform(n),
        }
    }

    /// Fills the table for every eos-free prefix shorter than `depth` by
    /// calling `f(prefix)`.
    pub fn from_fn(
        vocab: Vocabulary,
        depth: usize,
        mut f: impl FnMut(&[TokenId]) -> Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::uniform(vocab);
        let non_eos: Vec<TokenId> = (0..model.vocab.len())
            .filter(|&t| t != model.vocab.eos_id())
            .collect();
        let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
        for _ in 0..depth {
            let mut next = Vec::new();
            for prefix in frontier {
                let probs = f(&prefix);
                check_len(&model.vocab, &probs)?;
                model
                    .table
                    .insert(prefix.clone(), ConditionalDistribution::from_probs(probs));
                for &t in &non_eos {
                    let mut p = prefix.clone();
                    p.push(t);
                    next.push(p);
                }
            }
            frontier = next;
        }
        Ok(model)
    }

    /// Random strictly positive distributions for every prefix shorter than
    /// `depth`. Some rows contain exact ties to exercise tie-breaking.
    pub fn random(vocab_size: usize, depth: usize, seed: u64) -> Result<Self> {
        let vocab = Vocabulary::synthetic(vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(vocab, depth, |_| {
            let scale = rng.random_range(0.2..3.0);
            let mut w: Vec<f64> = (0..vocab_size)
                .map(|_| (scale * rng.random_range(-1.0..1.0f64)).exp())
                .collect();
            if vocab_size > 2 && rng.random_bool(0.2) {
                let (a, b) = (rng.random_range(0..vocab_size), rng.random_range(0..vocab_size));
                w[a] = w[b];
            }
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
    }

    pub fn with_entry(mut self, prefix: Vec<TokenId>, probs: Vec<f64>) -> Result<Self> {
        check_len(&self.vocab, &probs)?;
        self.table
            .insert(prefix, ConditionalDistribution::from_probs(probs));
        Ok(self)
    }
}

fn check_len(vocab: &Vocabulary, probs: &[f64]) -> Result<()> {
    if probs.len() != vocab.len() {
        return Err(Error::Shape(format!(
            "distribution has {} entries for a vocabulary of {}",
            probs.len(),
            vocab.len()
        )));
    }
    Ok(())
}

impl ConditionalModel for TableModel {
    type State = Vec<TokenId>;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn initial_state(&self, _context: &Context) -> Vec<TokenId> {
        Vec::new()
    }

    fn next_distribution(&self, state: &Vec<TokenId>) -> ConditionalDistribution {
        self.table.get(state).unwrap_or(&self.fallback).clone()
    }

    fn advance(&self, state: &Vec<TokenId>, token: TokenId) -> Vec<TokenId> {
        let mut s = state.clone();
        s.push(token);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::validate_distribution;

    #[test]
    fn random_tables_are_normalized_and_deterministic() {
        let a = TableModel::random(5, 4, 11).unwrap();
        let b = TableModel::random(5, 4, 11).unwrap();
        assert_eq!(a.table.len(), 1 + 4 + 16 + 64);
        for (k, d) in &a.table {
            assert!(validate_distribution(d).passed);
            assert_eq!(d.log_probs(), b.table[k].log_probs());
        }
    }

    #[test]
    fn log_prob_accumulates_along_prefix() {
        let v = Vocabulary::synthetic(3).unwrap();
        let m = TableModel::uniform(v)
            .with_entry(vec![], vec![0.1, 0.6, 0.3])
            .unwrap()
            .with_entry(vec![1], vec![0.5, 0.25, 0.25])
            .unwrap();
        let lp = sequence_log_prob(&m, &Context::empty(), &[1, 0]);
        assert!((lp - (0.6f64 * 0.5).ln()).abs() < 1e-12);
    }
}
