//! Randomized length bounds for the self-terminating heads.
//!
//! Both heads keep `α_t ≥ 1 − (1 − ε)^t`, so once t reaches the half-life
//! t½ eos is the most probable token: greedy stops by t½, beam-k fills its
//! final set within k more rounds, and top-k or nucleus sampling keeps eos
//! with renormalized probability above 1/2, so surviving 64 further steps
//! has probability below 2⁻⁶⁴.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::result::{CheckResult, SuiteResult};
use crate::decoding::{decode, DecoderKind, DecoderSpec};
use crate::error::Result;
use crate::heads::{half_life, Head, HeadKind};
use crate::model::ConditionalModel;
use crate::net::{Architecture, CellKind, NeuralModel};
use crate::seed::derive_seed;
use crate::vocab::{Context, Vocabulary};

/// Extra steps granted to sampling decoders past t½.
pub const SAMPLING_SLACK: usize = 64;

/// ε values checked by default.
pub const DEFAULT_EPSILONS: [f64; 5] = [1e-5, 5e-5, 1e-4, 5e-4, 0.1];

pub fn consistency_decoders() -> Vec<DecoderKind> {
    vec![
        DecoderKind::Greedy,
        DecoderKind::TopK(2),
        DecoderKind::TopK(4),
        DecoderKind::Nucleus(0.2),
        DecoderKind::Nucleus(0.4),
        DecoderKind::Beam(2),
        DecoderKind::Beam(4),
    ]
}

/// Random recurrent model with the given head.
///
/// Ordinary draws: vocabulary 3–8, hidden 4–8, RNN or LSTM with one or two
/// layers, weights N(0, s²) with s ∈ {0.5, 1, 2, 4}, and a random context
/// of up to three tokens. About one draw in ten is adversarial instead: two
/// tokens, zero input and recurrent weights, a saturating bias and an eos
/// row of ±50, so the head's sigmoid factor is 1 to machine precision and
/// α_t sits on the lower-bound curve.
pub fn random_terminating_model(head: Head, seed: u64) -> Result<(NeuralModel, Context, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adversarial = rng.random_bool(0.1);
    if adversarial {
        let arch = Architecture {
            cell: CellKind::Rnn,
            layers: 1,
            hidden: 2,
            tie_embeddings: false,
        };
        let mut model = NeuralModel::new(Vocabulary::synthetic(2)?, arch, head, seed)?;
        let bb = model.backbone_mut();
        let out = bb.output_id();
        let (w_x, w_h, b) = bb.cell_param_ids(0);
        let ps = bb.params_mut();
        ps.get_mut(w_x).data.fill(0.0);
        ps.get_mut(w_h).data.fill(0.0);
        ps.get_mut(b).data.fill(5.0);
        let o = ps.get_mut(out);
        // the heads use opposite signs: NMST keeps 1 − α = σ(−z)(1 − ε)^t,
        // ST multiplies in σ(z)(1 − ε) per step
        let z = if head.kind() == HeadKind::St { 50.0 } else { -50.0 };
        o.row_mut(0).fill(z);
        o.row_mut(1).fill(1.0);
        return Ok((model, Context::empty(), true));
    }
    let vocab_size = rng.random_range(3..=8usize);
    let arch = Architecture {
        cell: if rng.random_bool(0.5) { CellKind::Rnn } else { CellKind::Lstm },
        layers: rng.random_range(1..=2),
        hidden: rng.random_range(4..=8),
        tie_embeddings: rng.random_bool(0.5),
    };
    let scale = [0.5, 1.0, 2.0, 4.0][rng.random_range(0..4)];
    let mut model = NeuralModel::new(Vocabulary::synthetic(vocab_size)?, arch, head, seed)?;
    for t in model.backbone_mut().params_mut().tensors_mut() {
        for x in &mut t.data {
            *x = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let ctx_len = rng.random_range(0..=3usize);
    let ctx = (0..ctx_len).map(|_| rng.random_range(1..vocab_size)).collect();
    let eos = model.vocab().eos_id();
    Ok((model, Context::new(ctx, eos)?, false))
}

#[derive(Clone, Debug, Default, Serialize)]
struct DecoderTally {
    decoder: String,
    runs: usize,
    unterminated: usize,
    over_bound: usize,
    max_length: usize,
    /// Beam only: runs that stopped at the cap with fewer than k finished.
    hit_cap: usize,
}

#[derive(Clone, Debug, Default)]
struct Trial {
    tallies: Vec<DecoderTally>,
    adversarial: bool,
    adversarial_greedy_exact: bool,
}

fn run_trial(head: Head, epsilon: f64, seed: u64) -> Result<Trial> {
    let (model, ctx, adversarial) = random_terminating_model(head, seed)?;
    let t_half = half_life(epsilon);
    let cap = t_half + SAMPLING_SLACK;
    let mut trial = Trial {
        adversarial,
        ..Default::default()
    };
    for (i, kind) in consistency_decoders().into_iter().enumerate() {
        let spec = DecoderSpec::new(kind, cap, derive_seed(&[seed, i as u64]))?;
        let g = decode(&model, &ctx, &spec)?;
        let mut t = DecoderTally {
            decoder: kind.to_string(),
            runs: 1,
            ..Default::default()
        };
        match kind {
            DecoderKind::Beam(k) => {
                let finals = g.final_set.as_deref().unwrap_or(&[]);
                let longest = finals.iter().map(|b| b.prefix.len()).max().unwrap_or(cap);
                t.max_length = longest;
                t.unterminated = usize::from(finals.is_empty() || !g.terminated());
                t.hit_cap = usize::from(finals.len() < k);
                t.over_bound = usize::from(longest > t_half + k);
            }
            DecoderKind::Greedy => {
                t.max_length = g.len();
                t.unterminated = usize::from(!g.terminated());
                t.over_bound = usize::from(g.len() > t_half);
                // at an exact tie α = 1/2 eos wins on the lower id, one step early
                trial.adversarial_greedy_exact =
                    adversarial && g.terminated() && (g.len() == t_half || g.len() + 1 == t_half);
            }
            _ => {
                t.max_length = g.len();
                t.unterminated = usize::from(!g.terminated());
                t.over_bound = usize::from(g.len() > t_half + SAMPLING_SLACK);
            }
        }
        trial.tallies.push(t);
    }
    Ok(trial)
}

fn merge(mut a: Vec<DecoderTally>, b: &[DecoderTally]) -> Vec<DecoderTally> {
    if a.is_empty() {
        return b.to_vec();
    }
    for (x, y) in a.iter_mut().zip(b) {
        x.runs += y.runs;
        x.unterminated += y.unterminated;
        x.over_bound += y.over_bound;
        x.max_length = x.max_length.max(y.max_length);
        x.hit_cap += y.hit_cap;
    }
    a
}

fn bound_text(kind: &str, t_half: usize) -> String {
    if let Some(k) = kind.strip_prefix("beam:") {
        format!("final lengths <= {}", t_half + k.parse::<usize>().unwrap_or(0))
    } else if kind == "greedy" {
        format!("length <= {t_half}")
    } else {
        format!("length <= {}", t_half + SAMPLING_SLACK)
    }
}

fn sweep(kind: HeadKind, eps_list: &[f64], trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut out = SuiteResult::new(format!("{kind}-consistency"), seed, trials);
    for &eps in eps_list {
        let head = Head::new(kind, Some(eps))?;
        let t_half = half_life(eps);
        let results = (0..trials)
            .into_par_iter()
            .map(|i| run_trial(head, eps, derive_seed(&[seed, eps.to_bits(), i as u64])))
            .collect::<Result<Vec<_>>>()?;
        let tallies = results.iter().fold(Vec::new(), |acc, t| merge(acc, &t.tallies));
        let adversarial = results.iter().filter(|t| t.adversarial).count();
        let exact = results.iter().filter(|t| t.adversarial_greedy_exact).count();
        for t in &tallies {
            let strict = kind == HeadKind::Nmst;
            // ST has no weight-free bound of its own; the t½ cap is sound for
            // it because its α_t also dominates the lower-bound curve, but
            // only termination is asserted
            let passed = t.unterminated == 0 && (!strict || t.over_bound == 0);
            let detail = format!(
                "{} runs, {} unterminated, {} over bound ({}), longest {}, cap {}",
                t.runs,
                t.unterminated,
                t.over_bound,
                bound_text(&t.decoder, t_half),
                t.max_length,
                t_half + SAMPLING_SLACK
            );
            out.push(
                CheckResult::new(format!("{kind} eps={eps:e} {}", t.decoder), passed, detail)
                    .with_data(json!({ "epsilon": eps, "half_life": t_half, "tally": t })),
            );
        }
        out.push(CheckResult::new(
            format!("{kind} eps={eps:e} lower-bound models stop at the half-life"),
            exact == adversarial,
            format!("{exact} of {adversarial} greedy runs had length {t_half} (or one less at an exact tie)"),
        ));
    }
    Ok(out)
}

pub fn check_nmst_consistency(eps_list: &[f64], trials: usize, seed: u64) -> Result<SuiteResult> {
    sweep(HeadKind::Nmst, eps_list, trials, seed)
}

pub fn check_st_consistency(eps_list: &[f64], trials: usize, seed: u64) -> Result<SuiteResult> {
    sweep(HeadKind::St, eps_list, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmst_bounds_hold_for_large_epsilon() {
        let r = check_nmst_consistency(&[0.1, 0.5], 60, 1).unwrap();
        assert!(r.passed(), "{:#?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn st_terminates_for_large_epsilon() {
        let r = check_st_consistency(&[0.1], 60, 2).unwrap();
        assert!(r.passed(), "{:#?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn adversarial_draws_exist_and_are_deterministic() {
        let head = Head::new(HeadKind::Nmst, Some(0.1)).unwrap();
        let adv = (0..100u64)
            .filter(|&s| random_terminating_model(head, s).unwrap().2)
            .count();
        assert!(adv > 0);
        assert_eq!(
            random_terminating_model(head, 7).unwrap().0,
            random_terminating_model(head, 7).unwrap().0
        );
    }
}
