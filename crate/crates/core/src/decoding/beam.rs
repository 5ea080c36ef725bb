//! Beam search with a final set of finished prefixes.
//!
//! Each round expands every active prefix by its k most probable tokens
//! (zero-probability tokens are never expanded), ranks all candidates by
//! score and then lexicographic token order, and moves finished candidates
//! among the top k into the final set. The next active set is the k best
//! unfinished candidates, so finished prefixes vacate their slots. The
//! search stops once the final set holds at least k prefixes or candidates
//! reach the length cap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::support::ranked_ids;
use crate::model::ConditionalModel;
use crate::vocab::{Context, TokenId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamItem {
    pub prefix: Vec<TokenId>,
    /// `Σ log p` over the prefix.
    pub score: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamOutput {
    /// Highest-scoring member of the final set, or the best unfinished
    /// prefix when the cap was hit and it outscores every finished one.
    pub best: BeamItem,
    pub final_set: Vec<BeamItem>,
    pub hit_cap: bool,
}

/// Higher score first, then lexicographically smaller token sequence.
pub fn beam_order(a: &BeamItem, b: &BeamItem) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.prefix.cmp(&b.prefix))
}

pub fn beam_search<M: ConditionalModel>(model: &M, context: &Context, k: usize, cap: usize) -> BeamOutput {
    assert!(k >= 1 && cap >= 1, "beam width and cap must be positive");
    let eos = model.vocab().eos_id();
    // prefixes live in a parent-pointer arena so that extending one costs O(1)
    let mut arena = Arena::default();
    let mut active: Vec<(Option<usize>, f64, M::State)> = vec![(None, 0.0, model.initial_state(context))];
    let mut final_set: Vec<BeamItem> = Vec::new();
    let mut len = 0;

    loop {
        len += 1;
        let mut candidates: Vec<Candidate> = Vec::new();
        for (parent, (node, score, state)) in active.iter().enumerate() {
            let d = model.next_distribution(state);
            for tok in ranked_ids(&d).into_iter().take(k) {
                if d.prob(tok) <= 0.0 {
                    break;
                }
                candidates.push(Candidate {
                    node: arena.push(*node, tok),
                    score: score + d.log_prob(tok),
                    finished: tok == eos,
                    parent,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| arena.cmp_same_length(a.node, b.node))
        });

        for c in candidates.iter().take(k) {
            if c.finished {
                final_set.push(arena.item(c));
            }
        }
        let unfinished: Vec<&Candidate> = candidates.iter().filter(|c| !c.finished).collect();

        if final_set.len() >= k || unfinished.is_empty() || len >= cap {
            let hit_cap = final_set.len() < k && !unfinished.is_empty();
            final_set.sort_by(beam_order);
            let mut pool = final_set.clone();
            if hit_cap {
                pool.push(arena.item(unfinished[0]));
            }
            pool.sort_by(beam_order);
            return BeamOutput {
                best: pool.into_iter().next().expect("at least one candidate exists"),
                final_set,
                hit_cap,
            };
        }

        active = unfinished
            .into_iter()
            .take(k)
            .map(|c| {
                let tok = arena.nodes[c.node].1;
                (Some(c.node), c.score, model.advance(&active[c.parent].2, tok))
            })
            .collect();
    }
}

struct Candidate {
    node: usize,
    score: f64,
    finished: bool,
    parent: usize,
}

#[derive(Default)]
struct Arena {
    nodes: Vec<(Option<usize>, TokenId)>,
}

impl Arena {
    fn push(&mut self, parent: Option<usize>, tok: TokenId) -> usize {
        self.nodes.push((parent, tok));
        self.nodes.len() - 1
    }

    fn prefix(&self, node: usize) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            out.push(self.nodes[i].1);
            cur = self.nodes[i].0;
        }
        out.reverse();
        out
    }

    fn item(&self, c: &Candidate) -> BeamItem {
        BeamItem {
            prefix: self.prefix(c.node),
            score: c.score,
            finished: c.finished,
        }
    }

    /// Lexicographic order of two prefixes of equal length, found by
    /// walking both back to their common ancestor.
    fn cmp_same_length(&self, a: usize, b: usize) -> Ordering {
        let (mut x, mut y) = (Some(a), Some(b));
        let mut ord = Ordering::Equal;
        while let (Some(i), Some(j)) = (x, y) {
            if i == j {
                break;
            }
            let o = self.nodes[i].1.cmp(&self.nodes[j].1);
            if o != Ordering::Equal {
                ord = o;
            }
            x = self.nodes[i].0;
            y = self.nodes[j].0;
        }
        ord
    }
}
