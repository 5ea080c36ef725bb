//! Per-step candidate sets of the incomplete probable decoders.

use crate::distribution::ConditionalDistribution;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

use super::spec::DecoderKind;

/// The candidate set 𝒱_t and the renormalized distribution over it.
/// `kept_ids` are in probability-descending order (ties: ascending id);
/// `renormalized_probs[i]` belongs to `kept_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSupport {
    pub kept_ids: Vec<TokenId>,
    pub renormalized_probs: Vec<f64>,
}

impl StepSupport {
    pub fn q(&self, id: TokenId) -> f64 {
        self.kept_ids
            .iter()
            .position(|&k| k == id)
            .map_or(0.0, |i| self.renormalized_probs[i])
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.kept_ids.contains(&id)
    }
}

/// Token ids sorted by probability, highest first, ties by ascending id.
pub fn ranked_ids(d: &ConditionalDistribution) -> Vec<TokenId> {
    let p = d.probs();
    let mut ids: Vec<TokenId> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids
}

pub fn step_support(d: &ConditionalDistribution, kind: DecoderKind) -> Result<StepSupport> {
    let ranked = ranked_ids(d);
    let p = d.probs();
    let kept: Vec<TokenId> = match kind {
        DecoderKind::Greedy => vec![d.argmax()],
        DecoderKind::TopK(k) => ranked.into_iter().take(k.max(1)).collect(),
        DecoderKind::Nucleus(mu) => {
            let mut cum = 0.0;
            let mut n = None;
            for (i, &id) in ranked.iter().enumerate() {
                cum += p[id];
                if cum >= mu {
                    n = Some(i + 1);
                    break;
                }
            }
            // rounding can leave the full sum just under mu; then keep every
            // token with positive probability
            let n = n.unwrap_or_else(|| ranked.iter().take_while(|&&id| p[id] > 0.0).count().max(1));
            ranked.into_iter().take(n).collect()
        }
        DecoderKind::Beam(_) => {
            return Err(Error::DecoderSpec {
                spec: kind.to_string(),
                reason: "beam search has no per-step sampling support".into(),
            })
        }
    };
    // dividing by min(Z, 1) guarantees q ≥ p entrywise even when rounding
    // pushes Z above 1
    let z: f64 = kept.iter().map(|&id| p[id]).sum();
    let denom = z.min(1.0);
    let renormalized_probs = kept.iter().map(|&id| p[id] / denom).collect();
    Ok(StepSupport {
        kept_ids: kept,
        renormalized_probs,
    })
}
