//! A hand-built recurrent model whose vanilla head never terminates under
//! greedy, top-k, nucleus or beam decoding, while the same weights with a
//! self-terminating head stop well before the decoding cap.

use serde_json::json;

use super::result::{CheckResult, SuiteResult};
use crate::decoding::{decode, step_support, DecoderKind, DecoderSpec};
use crate::error::{Error, Result};
use crate::heads::{half_life, Head, HeadKind};
use crate::model::ConditionalModel;
use crate::net::{Architecture, CellKind, NeuralModel};
use crate::vocab::{Context, Vocabulary};

const HIDDEN: usize = 2;
const BIAS: f64 = 3.0;
const OUTPUT_SCALE: f64 = 5.0;

/// A constructed model and the property it is claimed to have.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessModel {
    pub model: NeuralModel,
    pub claim: String,
}

impl WitnessModel {
    /// Re-checks the claim: the hidden state is a fixed point and eos is
    /// strictly less probable than some other token there, so the same
    /// holds at every reachable state.
    pub fn holds(&self) -> bool {
        let m = &self.model;
        let s0 = m.initial_state(&Context::empty());
        let eos = m.vocab().eos_id();
        let d = m.next_distribution(&s0);
        let max_other = (0..m.vocab().len()).filter(|&i| i != eos).map(|i| d.prob(i)).fold(0.0, f64::max);
        let fixed = (0..m.vocab().len()).filter(|&i| i != eos).all(|i| m.advance(&s0, i).hidden == s0.hidden);
        fixed && d.prob(eos) < max_other
    }
}

pub fn build_vanilla_nontermination_witness(vocab_size: usize) -> Result<WitnessModel> {
    Ok(WitnessModel {
        model: witness_weights(vocab_size, Head::Va)?,
        claim: "p(eos) is below the most probable token at every reachable state, so no incomplete probable \
                decoder or beam search ever emits eos"
            .into(),
    })
}

/// Single-layer RNN with zero input and recurrent weights and a bias of 3,
/// so `h_t = tanh(3)·1` for every t. The eos output row points against `h`
/// and token 1 along it; all other rows are zero. The eos probability is
/// then about `exp(−4·5·tanh 3)` at every step, far below every other token.
fn witness_weights(vocab_size: usize, head: Head) -> Result<NeuralModel> {
    if vocab_size < 2 {
        return Err(Error::Config("the witness needs at least two tokens".into()));
    }
    let arch = Architecture {
        cell: CellKind::Rnn,
        layers: 1,
        hidden: HIDDEN,
        tie_embeddings: true,
    };
    let vocab = Vocabulary::synthetic(vocab_size)?;
    let eos = vocab.eos_id();
    let other = (0..vocab_size).find(|&i| i != eos).expect("vocab_size >= 2");
    let mut model = NeuralModel::new(vocab, arch, head, 0)?;
    let bb = model.backbone_mut();
    let emb = bb.embedding_id();
    let (w_x, w_h, b) = bb.cell_param_ids(0);
    let ps = bb.params_mut();
    ps.get_mut(w_x).data.fill(0.0);
    ps.get_mut(w_h).data.fill(0.0);
    ps.get_mut(b).data.fill(BIAS);
    let e = ps.get_mut(emb);
    e.data.fill(0.0);
    e.row_mut(eos).fill(-OUTPUT_SCALE);
    e.row_mut(other).fill(OUTPUT_SCALE);
    Ok(model)
}

fn witness_decoders(vocab_size: usize) -> Vec<DecoderKind> {
    vec![
        DecoderKind::Greedy,
        DecoderKind::TopK(vocab_size - 1),
        DecoderKind::Nucleus(0.9),
        DecoderKind::Beam(2),
    ]
}

/// Decodes the witness to `cap` under each decoder. Beam search copies
/// nothing per step, but each round still costs k forward passes, so
/// `beam_cap` may be set lower than `cap`.
pub fn check_vanilla_witness(vocab_size: usize, cap: usize, beam_cap: usize) -> Result<SuiteResult> {
    let witness = build_vanilla_nontermination_witness(vocab_size)?;
    let va = &witness.model;
    let ctx = Context::empty();
    let mut out = SuiteResult::new("vanilla-witness", 0, 1);

    // eos is outside every decoder's support at the first step, and the
    // state never changes, so the same holds at every step
    let d0 = va.next_distribution(&va.initial_state(&ctx));
    let p_eos = d0.prob(va.vocab().eos_id());
    out.push(CheckResult::new(
        "witness claim re-verified",
        witness.holds(),
        format!("{}; p(eos) = {p_eos:.3e} at every step", witness.claim),
    ));

    for kind in witness_decoders(vocab_size) {
        let c = if matches!(kind, DecoderKind::Beam(_)) { beam_cap } else { cap };
        if !matches!(kind, DecoderKind::Beam(_)) {
            let s = step_support(&d0, kind)?;
            out.push(CheckResult::new(
                format!("{kind}: eos outside support"),
                !s.contains(va.vocab().eos_id()),
                format!("support {:?}", s.kept_ids),
            ));
        }
        let g = decode(va, &ctx, &DecoderSpec::new(kind, c, 0)?)?;
        let finished = g.final_set.as_ref().map_or(0, Vec::len);
        out.push(
            CheckResult::new(
                format!("{kind}: vanilla head reaches cap {c}"),
                !g.terminated() && g.len() == c && finished == 0,
                format!("length {}, terminated {}", g.len(), g.terminated()),
            )
            .with_data(json!({ "decoder": kind.to_string(), "length": g.len(), "cap": c })),
        );
    }

    let eps = 1e-3;
    let nmst = witness_weights(vocab_size, Head::new(HeadKind::Nmst, Some(eps))?)?;
    let bound = half_life(eps);
    for kind in witness_decoders(vocab_size) {
        let c = if matches!(kind, DecoderKind::Beam(_)) { beam_cap } else { cap };
        let g = decode(&nmst, &ctx, &DecoderSpec::new(kind, c, 0)?)?;
        out.push(CheckResult::new(
            format!("{kind}: same weights with NMST head terminate"),
            g.terminated(),
            format!("length {} (half-life {bound})", g.len()),
        ));
    }
    Ok(out)
}
