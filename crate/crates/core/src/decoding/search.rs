//! Greedy and sampling decoders, and dispatch over all decoder kinds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::beam::{beam_search, BeamItem};
use super::spec::{DecoderKind, DecoderSpec};
use super::support::{step_support, StepSupport};
use crate::distribution::ConditionalDistribution;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::vocab::{Context, Sequence, TokenId};

/// One decoded continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub sequence: Sequence,
    /// `log p(ŷ | x)` under the model (not the decoder).
    pub log_prob: f64,
    /// `p(eos | ŷ_<t, x)` at every step t of the decoded sequence.
    pub eos_probs: Vec<f64>,
    /// Beam search only: the final set of finished prefixes.
    pub final_set: Option<Vec<BeamItem>>,
}

impl Generation {
    pub fn terminated(&self) -> bool {
        self.sequence.terminated()
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

/// Draws from `support` by inverse CDF over the kept ids in ascending id
/// order, using one uniform variate from `rng`.
pub fn sample_from_support<R: Rng + ?Sized>(support: &StepSupport, rng: &mut R) -> TokenId {
    let mut pairs: Vec<(TokenId, f64)> = support
        .kept_ids
        .iter()
        .copied()
        .zip(support.renormalized_probs.iter().copied())
        .collect();
    pairs.sort_by_key(|&(id, _)| id);
    let total: f64 = pairs.iter().map(|&(_, q)| q).sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for &(id, q) in &pairs {
        cum += q;
        if u < cum {
            return id;
        }
    }
    pairs
        .iter()
        .rev()
        .find(|&&(_, q)| q > 0.0)
        .map_or(pairs[0].0, |&(id, _)| id)
}

/// Runs the model forward, choosing each token with `choose`, until eos or
/// until the sequence reaches `cap` tokens.
fn unroll<M: ConditionalModel>(
    model: &M,
    context: &Context,
    cap: usize,
    mut choose: impl FnMut(&ConditionalDistribution) -> TokenId,
) -> Generation {
    let eos = model.vocab().eos_id();
    let mut state = model.initial_state(context);
    let mut ids = Vec::new();
    let mut eos_probs = Vec::new();
    let mut log_prob = 0.0;
    while ids.len() < cap {
        let d = model.next_distribution(&state);
        eos_probs.push(d.prob(eos));
        let tok = choose(&d);
        log_prob += d.log_prob(tok);
        ids.push(tok);
        if tok == eos {
            break;
        }
        if ids.len() < cap {
            state = model.advance(&state, tok);
        }
    }
    Generation {
        sequence: Sequence::new(ids, eos).expect("eos only ends the loop"),
        log_prob,
        eos_probs,
        final_set: None,
    }
}

pub fn decode_greedy<M: ConditionalModel>(model: &M, context: &Context, cap: usize) -> Generation {
    unroll(model, context, cap, |d| d.argmax())
}

/// Top-k or nucleus sampling (greedy is accepted too and ignores `rng`).
pub fn decode_sampling<M: ConditionalModel, R: Rng + ?Sized>(
    model: &M,
    context: &Context,
    kind: DecoderKind,
    cap: usize,
    rng: &mut R,
) -> Result<Generation> {
    if let DecoderKind::Beam(_) = kind {
        return Err(Error::DecoderSpec {
            spec: kind.to_string(),
            reason: "use beam_search for beam decoding".into(),
        });
    }
    Ok(unroll(model, context, cap, |d| {
        let s = step_support(d, kind).expect("kind checked above");
        if s.kept_ids.len() == 1 {
            s.kept_ids[0]
        } else {
            sample_from_support(&s, rng)
        }
    }))
}

/// Decodes one continuation. Sampling kinds draw from a generator seeded
/// with `spec.seed`.
pub fn decode<M: ConditionalModel>(model: &M, context: &Context, spec: &DecoderSpec) -> Result<Generation> {
    match spec.kind {
        DecoderKind::Greedy => Ok(decode_greedy(model, context, spec.cap)),
        DecoderKind::TopK(_) | DecoderKind::Nucleus(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            decode_sampling(model, context, spec.kind, spec.cap, &mut rng)
        }
        DecoderKind::Beam(k) => {
            let out = beam_search(model, context, k, spec.cap);
            let eos = model.vocab().eos_id();
            let sequence = Sequence::new(out.best.prefix.clone(), eos).expect("beam prefixes are well formed");
            Ok(Generation {
                eos_probs: teacher_forced_eos(model, context, sequence.token_ids()),
                log_prob: out.best.score,
                sequence,
                final_set: Some(out.final_set),
            })
        }
    }
}

/// `p(eos | y_<t, x)` along `tokens` under teacher forcing.
pub fn teacher_forced_eos<M: ConditionalModel>(model: &M, context: &Context, tokens: &[TokenId]) -> Vec<f64> {
    let eos = model.vocab().eos_id();
    let mut state = model.initial_state(context);
    let mut out = Vec::with_capacity(tokens.len());
    for (i, &tok) in tokens.iter().enumerate() {
        out.push(model.next_distribution(&state).prob(eos));
        if tok == eos {
            break;
        }
        if i + 1 < tokens.len() {
            state = model.advance(&state, tok);
        }
    }
    out
}
