//! Exhaustive oracles over small models: the exact decoding distribution
//! of an incomplete probable decoder, and the MAP sequence.

use std::collections::BTreeMap;

use super::spec::DecoderKind;
use super::support::step_support;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::vocab::{Context, Sequence, TokenId};

pub const MAX_ORACLE_VOCAB: usize = 8;
pub const MAX_ORACLE_LEN: usize = 8;

/// Exact `q(y | x)` for every terminated sequence of length ≤ `max_len`,
/// plus the mass of longer (or never-terminating) continuations.
#[derive(Clone, Debug, PartialEq)]
pub struct Enumeration {
    pub masses: BTreeMap<Vec<TokenId>, f64>,
    pub residual: f64,
}

impl Enumeration {
    pub fn total(&self) -> f64 {
        self.masses.values().sum::<f64>() + self.residual
    }

    pub fn mass(&self, seq: &[TokenId]) -> f64 {
        self.masses.get(seq).copied().unwrap_or(0.0)
    }
}

fn check_limits<M: ConditionalModel>(model: &M, max_len: usize) -> Result<()> {
    let v = model.vocab().len();
    if v > MAX_ORACLE_VOCAB || max_len > MAX_ORACLE_LEN || max_len == 0 {
        return Err(Error::LimitsExceeded(format!(
            "vocabulary {v} (max {MAX_ORACLE_VOCAB}) and length {max_len} (1..={MAX_ORACLE_LEN})"
        )));
    }
    Ok(())
}

pub fn enumerate_decoder_distribution<M: ConditionalModel>(
    model: &M,
    context: &Context,
    kind: DecoderKind,
    max_len: usize,
) -> Result<Enumeration> {
    check_limits(model, max_len)?;
    if let DecoderKind::Beam(_) = kind {
        return Err(Error::DecoderSpec {
            spec: kind.to_string(),
            reason: "beam search is deterministic; enumerate only sampling decoders".into(),
        });
    }
    let eos = model.vocab().eos_id();
    let mut out = Enumeration {
        masses: BTreeMap::new(),
        residual: 0.0,
    };
    let mut stack = vec![(Vec::<TokenId>::new(), 1.0f64, model.initial_state(context))];
    while let Some((prefix, mass, state)) = stack.pop() {
        let s = step_support(&model.next_distribution(&state), kind)?;
        for (&tok, &q) in s.kept_ids.iter().zip(&s.renormalized_probs) {
            if q <= 0.0 {
                continue;
            }
            let m = mass * q;
            let mut p = prefix.clone();
            p.push(tok);
            if tok == eos {
                out.masses.insert(p, m);
            } else if p.len() == max_len {
                out.residual += m;
            } else {
                let next = model.advance(&state, tok);
                stack.push((p, m, next));
            }
        }
    }
    Ok(out)
}

/// Most probable terminated sequence of length ≤ `max_len` and its log
/// probability; ties go to the lexicographically smaller sequence.
pub fn map_oracle<M: ConditionalModel>(model: &M, context: &Context, max_len: usize) -> Result<(Sequence, f64)> {
    check_limits(model, max_len)?;
    let eos = model.vocab().eos_id();
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64, model.initial_state(context))];
    while let Some((prefix, score, state)) = stack.pop() {
        let d = model.next_distribution(&state);
        for tok in 0..d.len() {
            let lp = d.log_prob(tok);
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let mut p = prefix.clone();
            p.push(tok);
            let s = score + lp;
            if tok == eos {
                let better = match &best {
                    None => true,
                    Some((bp, bs)) => s > *bs || (s == *bs && p < *bp),
                };
                if better {
                    best = Some((p, s));
                }
            } else if p.len() < max_len {
                let next = model.advance(&state, tok);
                stack.push((p, s, next));
            }
        }
    }
    let (ids, score) = best.ok_or_else(|| {
        Error::LimitsExceeded(format!("no terminated sequence of length ≤ {max_len} has positive probability"))
    })?;
    Ok((Sequence::new(ids, eos)?, score))
}
