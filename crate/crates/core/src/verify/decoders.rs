//! Fuzzing the candidate-set axioms of the incomplete probable decoders:
//! the renormalized q sums to one over 𝒱_t, every kept token is at least
//! as probable as every dropped one, and q never deflates a kept token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::result::{CheckResult, SuiteResult};
use crate::decoding::{step_support, DecoderKind, StepSupport};
use crate::distribution::{ConditionalDistribution, NORMALIZATION_TOL};
use crate::seed::{derive_seed, label_hash};

/// Decoders exercised by the default suite.
pub fn default_step_decoders() -> Vec<DecoderKind> {
    vec![
        DecoderKind::Greedy,
        DecoderKind::TopK(1),
        DecoderKind::TopK(2),
        DecoderKind::TopK(4),
        DecoderKind::Nucleus(0.2),
        DecoderKind::Nucleus(0.4),
        DecoderKind::Nucleus(1.0),
    ]
}

/// Random distributions over 2–12 tokens drawn from several families:
/// smooth softmaxes, sparse vectors with exact zeros, near-ties separated
/// by about 1e-15, exact ties and near point masses.
pub fn random_distribution<R: Rng>(rng: &mut R) -> ConditionalDistribution {
    let n = rng.random_range(2..=12usize);
    let mut w: Vec<f64> = match rng.random_range(0..5) {
        0 => {
            let s = [0.1, 1.0, 4.0, 12.0][rng.random_range(0..4)];
            (0..n).map(|_| (s * rng.random_range(-1.0..1.0f64)).exp()).collect()
        }
        1 => (0..n)
            .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() })
            .collect(),
        2 => {
            let base = rng.random_range(0.5..1.0);
            (0..n).map(|i| base + (i as f64) * 1e-15 * rng.random_range(0..3) as f64).collect()
        }
        3 => {
            let levels = [0.1, 0.3, 0.3, 0.7];
            (0..n).map(|_| levels[rng.random_range(0..levels.len())]).collect()
        }
        _ => {
            let mut w = vec![1e-9; n];
            w[rng.random_range(0..n)] = 1.0;
            w
        }
    };
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let z: f64 = w.iter().sum();
    ConditionalDistribution::from_probs(w.iter().map(|x| x / z).collect())
}

#[derive(Default, Clone, Copy, Debug)]
struct Violations {
    trials: usize,
    empty: usize,
    eq4: usize,
    eq5: usize,
    eq6: usize,
    nucleus_not_minimal: usize,
    eos_dominant_dropped: usize,
    complete_support: usize,
    max_eq4_error: f64,
}

impl Violations {
    fn merge(mut self, o: Violations) -> Violations {
        self.trials += o.trials;
        self.empty += o.empty;
        self.eq4 += o.eq4;
        self.eq5 += o.eq5;
        self.eq6 += o.eq6;
        self.nucleus_not_minimal += o.nucleus_not_minimal;
        self.eos_dominant_dropped += o.eos_dominant_dropped;
        self.complete_support += o.complete_support;
        self.max_eq4_error = self.max_eq4_error.max(o.max_eq4_error);
        self
    }
}

/// Checks one support against its source distribution. Token 0 plays eos.
fn inspect(d: &ConditionalDistribution, kind: DecoderKind, s: &StepSupport) -> Violations {
    let p = d.probs();
    let mut v = Violations {
        trials: 1,
        ..Default::default()
    };
    if s.kept_ids.is_empty() {
        v.empty = 1;
        return v;
    }
    let err = (s.renormalized_probs.iter().sum::<f64>() - 1.0).abs();
    v.max_eq4_error = err;
    v.eq4 = usize::from(err > NORMALIZATION_TOL);
    let min_kept = s.kept_ids.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
    let max_dropped = (0..p.len())
        .filter(|i| !s.kept_ids.contains(i))
        .map(|i| p[i])
        .fold(f64::NEG_INFINITY, f64::max);
    v.eq5 = usize::from(min_kept < max_dropped);
    v.eq6 = s
        .kept_ids
        .iter()
        .zip(&s.renormalized_probs)
        .filter(|&(&i, &q)| q < p[i])
        .count()
        .min(1);
    if let DecoderKind::Nucleus(mu) = kind {
        let without_last: f64 = s.kept_ids[..s.kept_ids.len() - 1].iter().map(|&i| p[i]).sum();
        v.nucleus_not_minimal = usize::from(without_last >= mu);
    }
    if p[0] > 0.5 && (!s.contains(0) || s.q(0) < p[0]) {
        v.eos_dominant_dropped = 1;
    }
    v.complete_support = usize::from(s.kept_ids.len() == p.len());
    v
}

pub fn check_incomplete_probable(kind: DecoderKind, trials: usize, seed: u64) -> SuiteResult {
    let label = kind.to_string();
    let base = derive_seed(&[seed, label_hash(&label)]);
    let v = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[base, i as u64]));
            let d = random_distribution(&mut rng);
            let s = step_support(&d, kind).expect("step decoders only");
            inspect(&d, kind, &s)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Violations::default(), Violations::merge);

    let mut out = SuiteResult::new(format!("decoder-axioms/{label}"), seed, trials);
    let c = |name: &str, n: usize, extra: String| {
        CheckResult::new(format!("{label}: {name}"), n == 0, format!("{n} of {} violated{extra}", v.trials))
    };
    out.push(c("non-empty support", v.empty, String::new()));
    out.push(c(
        "q sums to one",
        v.eq4,
        format!("; max |sum q - 1| = {:.3e}", v.max_eq4_error),
    ));
    out.push(c("kept tokens dominate dropped", v.eq5, String::new()));
    out.push(c("q >= p on kept tokens", v.eq6, String::new()));
    out.push(c("eos kept once p(eos) > 1/2", v.eos_dominant_dropped, String::new()));
    if let DecoderKind::Nucleus(_) = kind {
        out.push(c("nucleus minimality", v.nucleus_not_minimal, String::new()));
    }
    // informational: supports equal to the whole vocabulary are allowed but
    // are not proper subsets
    out.push(
        CheckResult::new(
            format!("{label}: complete supports (informational)"),
            true,
            format!("{} of {} supports kept every token", v.complete_support, v.trials),
        )
        .with_data(json!({ "complete_supports": v.complete_support })),
    );
    out
}

/// 𝒱(top-k) ⊆ 𝒱(top-k′) for k ≤ k′ and 𝒱(nucleus-μ) ⊆ 𝒱(nucleus-μ′) for μ ≤ μ′.
pub fn check_nesting(trials: usize, seed: u64) -> CheckResult {
    let bad: usize = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x4e57, i as u64]));
            let d = random_distribution(&mut rng);
            let (k1, k2) = {
                let a = rng.random_range(1..=12usize);
                let b = rng.random_range(1..=12usize);
                (a.min(b), a.max(b))
            };
            let (m1, m2) = {
                let a = rng.random_range(0.01..=1.0f64);
                let b = rng.random_range(0.01..=1.0f64);
                (a.min(b), a.max(b))
            };
            let subset = |a: DecoderKind, b: DecoderKind| {
                let sa = step_support(&d, a).unwrap();
                let sb = step_support(&d, b).unwrap();
                sa.kept_ids.iter().all(|x| sb.contains(*x))
            };
            usize::from(!subset(DecoderKind::TopK(k1), DecoderKind::TopK(k2)))
                + usize::from(!subset(DecoderKind::Nucleus(m1), DecoderKind::Nucleus(m2)))
        })
        .sum();
    CheckResult::new("support nesting", bad == 0, format!("{bad} nesting violations in {trials} trials"))
}

pub fn check_decoders(trials: usize, seed: u64) -> SuiteResult {
    let mut out = SuiteResult::new("decoders", seed, trials);
    for kind in default_step_decoders() {
        out.extend(check_incomplete_probable(kind, trials, seed));
    }
    out.push(check_nesting(trials, seed));
    out
}
