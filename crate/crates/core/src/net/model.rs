//! A recurrent backbone plus output head, usable both for inference (as a
//! [`ConditionalModel`]) and for recording training losses on a tape.
//!
//! Every sequence is read starting from the eos token, which doubles as the
//! begin-of-sequence input; context tokens follow, then the continuation.

use super::backbone::{Architecture, Backbone, RecurrentState};
use super::tape::{NodeId, Tape};
use crate::distribution::ConditionalDistribution;
use crate::error::{Error, Result};
use crate::heads::{dot, Head, HeadState};
use crate::model::ConditionalModel;
use crate::vocab::{Context, TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralModel {
    vocab: Vocabulary,
    backbone: Backbone,
    head: Head,
}

/// Inference state: recurrent state, head bookkeeping and the hidden
/// vector that predicts the next token.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralState {
    pub recurrent: RecurrentState,
    pub head: HeadState,
    pub hidden: Vec<f64>,
}

impl NeuralModel {
    pub fn new(vocab: Vocabulary, arch: Architecture, head: Head, seed: u64) -> Result<Self> {
        let backbone = Backbone::init(arch, vocab.len(), seed)?;
        Ok(Self {
            vocab,
            backbone,
            head,
        })
    }

    pub fn from_parts(vocab: Vocabulary, backbone: Backbone, head: Head) -> Result<Self> {
        if backbone.vocab_size() != vocab.len() {
            return Err(Error::Shape(format!(
                "backbone built for {} tokens, vocabulary has {}",
                backbone.vocab_size(),
                vocab.len()
            )));
        }
        Ok(Self {
            vocab,
            backbone,
            head,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Backbone {
        &mut self.backbone
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn architecture(&self) -> &Architecture {
        self.backbone.architecture()
    }

    pub fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        self.backbone
            .output_embeddings()
            .chunks_exact(self.architecture().hidden)
            .map(|row| dot(row, hidden))
            .collect()
    }

    fn eos_logit(&self, hidden: &[f64]) -> f64 {
        let m = self.architecture().hidden;
        let eos = self.vocab.eos_id();
        dot(&self.backbone.output_embeddings()[eos * m..(eos + 1) * m], hidden)
    }

    fn step(&self, token: TokenId, recurrent: &RecurrentState) -> (Vec<f64>, RecurrentState) {
        self.backbone
            .forward_step(token, recurrent)
            .expect("token ids come from this model's vocabulary")
    }

    /// Records `−Σ log p(y_t | y_<t, x)` over the scored positions of
    /// `target` on the tape and returns the loss node.
    ///
    /// `target` may be right-padded; positions at or beyond `scored` are run
    /// through the recurrence but contribute no loss. `masks(position)`
    /// supplies dropout masks per input position (one per layer).
    pub fn record_loss(
        &self,
        tape: &mut Tape<'_>,
        context: &Context,
        target: &[TokenId],
        scored: usize,
        mut masks: impl FnMut(usize) -> Option<Vec<Vec<f64>>>,
    ) -> NodeId {
        let eos = self.vocab.eos_id();
        let inputs: Vec<TokenId> = std::iter::once(eos)
            .chain(context.token_ids().iter().copied())
            .chain(target.iter().take(target.len().saturating_sub(1)).copied())
            .collect();
        let first_prediction = context.len();
        let log_keep = self.head.epsilon().map(|e| (-e).ln_1p());

        let mut state = self.backbone.zero_tape_state(tape);
        let mut terms = Vec::new();
        let mut st_survival: Option<NodeId> = None;
        for (pos, &tok) in inputs.iter().enumerate() {
            let mask = masks(pos);
            let (h, next) = self.backbone.forward_step_tape(tape, tok, &state, mask.as_deref());
            state = next;
            if pos < first_prediction {
                continue;
            }
            let t = pos - first_prediction + 1;
            let y = target[t - 1];
            let logits = tape.matvec(self.backbone.output_id(), h);
            let log_not_eos = match self.head {
                Head::Va => None,
                Head::Nmst { .. } => {
                    let z = tape.pick(logits, eos);
                    let neg = tape.scale(z, -1.0);
                    let ls = tape.log_sigmoid(neg);
                    Some(tape.offset(ls, t as f64 * log_keep.unwrap()))
                }
                Head::St { .. } => {
                    let z = tape.pick(logits, eos);
                    let ls = tape.log_sigmoid(z);
                    let factor = tape.offset(ls, log_keep.unwrap());
                    let s = match st_survival {
                        Some(prev) => tape.add(prev, factor),
                        None => factor,
                    };
                    st_survival = Some(s);
                    Some(s)
                }
            };
            if t > scored {
                continue;
            }
            let log_p = match log_not_eos {
                None => tape.log_softmax_pick(logits, y, None),
                Some(l) if y == eos => tape.log1mexp(l),
                Some(l) => {
                    let within = tape.log_softmax_pick(logits, y, Some(eos));
                    tape.add(l, within)
                }
            };
            terms.push(log_p);
        }
        let total = if terms.is_empty() {
            tape.input(vec![0.0])
        } else {
            tape.sum(terms)
        };
        tape.scale(total, -1.0)
    }
}

impl ConditionalModel for NeuralModel {
    type State = NeuralState;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn initial_state(&self, context: &Context) -> NeuralState {
        let (mut hidden, mut recurrent) = self.step(self.vocab.eos_id(), &self.backbone.zero_state());
        for &tok in context.token_ids() {
            (hidden, recurrent) = self.step(tok, &recurrent);
        }
        NeuralState {
            recurrent,
            head: HeadState::initial(),
            hidden,
        }
    }

    fn next_distribution(&self, state: &NeuralState) -> ConditionalDistribution {
        let logits = self.logits(&state.hidden);
        self.head
            .distribution(&logits, self.vocab.eos_id(), state.head)
            .0
    }

    fn advance(&self, state: &NeuralState, token: TokenId) -> NeuralState {
        let head = self
            .head
            .advance_state(self.eos_logit(&state.hidden), state.head);
        let (hidden, recurrent) = self.step(token, &state.recurrent);
        NeuralState {
            recurrent,
            head,
            hidden,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;
    use crate::model::sequence_log_prob;
    use crate::net::backbone::CellKind;
    use approx::assert_relative_eq;

    fn model(cell: CellKind, head: Head) -> NeuralModel {
        let arch = Architecture {
            cell,
            layers: 2,
            hidden: 4,
            tie_embeddings: cell == CellKind::Rnn,
        };
        NeuralModel::new(Vocabulary::synthetic(6).unwrap(), arch, head, 5).unwrap()
    }

    fn heads() -> Vec<Head> {
        vec![
            Head::Va,
            Head::new(HeadKind::St, Some(0.05)).unwrap(),
            Head::new(HeadKind::Nmst, Some(0.05)).unwrap(),
        ]
    }

    #[test]
    fn tape_loss_matches_inference_log_prob() {
        let ctx = Context::new(vec![2, 3], 0).unwrap();
        let target = [4, 1, 5, 0];
        for cell in [CellKind::Rnn, CellKind::Lstm] {
            for head in heads() {
                let m = model(cell, head);
                let mut tape = Tape::new(m.backbone().params());
                let loss = m.record_loss(&mut tape, &ctx, &target, target.len(), |_| None);
                let lp = sequence_log_prob(&m, &ctx, &target);
                assert_relative_eq!(tape.scalar(loss), -lp, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn padded_positions_are_not_scored() {
        let ctx = Context::new(vec![1], 0).unwrap();
        for head in heads() {
            let m = model(CellKind::Lstm, head);
            let mut a = Tape::new(m.backbone().params());
            let la = m.record_loss(&mut a, &ctx, &[3, 0], 2, |_| None);
            let mut b = Tape::new(m.backbone().params());
            let lb = m.record_loss(&mut b, &ctx, &[3, 0, 0, 0, 0], 2, |_| None);
            assert_eq!(a.scalar(la), b.scalar(lb));
            assert_eq!(a.backward(la), b.backward(lb));
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let m = model(CellKind::Lstm, heads()[2]);
        let ctx = Context::new(vec![1, 2], 0).unwrap();
        let s1 = m.advance(&m.initial_state(&ctx), 3);
        let s2 = m.advance(&m.initial_state(&ctx), 3);
        assert_eq!(
            m.next_distribution(&s1).log_probs(),
            m.next_distribution(&s2).log_probs()
        );
        assert_eq!(s1.head.step, 2);
    }
}
