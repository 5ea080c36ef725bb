//! Randomized conformance checks for the three output heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::result::{CheckResult, SuiteResult};
use crate::distribution::{log_sum_exp, validate_distribution};
use crate::heads::{eos_lower_bound, nmst_from_logits, st_from_logits, va_from_logits, HeadState};
use crate::seed::derive_seed;

/// Slack allowed below the NMST lower-bound curve.
pub const LOWER_BOUND_SLACK: f64 = 1e-12;

#[derive(Default, Clone, Copy, Debug)]
struct Tally {
    draws: usize,
    not_normalized: usize,
    max_normalization_error: f64,
    below_lower_bound: usize,
    max_lower_bound_gap: f64,
    nmst_saturated: usize,
    st_decreasing: usize,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.draws += o.draws;
        self.not_normalized += o.not_normalized;
        self.max_normalization_error = self.max_normalization_error.max(o.max_normalization_error);
        self.below_lower_bound += o.below_lower_bound;
        self.max_lower_bound_gap = self.max_lower_bound_gap.max(o.max_lower_bound_gap);
        self.nmst_saturated += o.nmst_saturated;
        self.st_decreasing += o.st_decreasing;
        self
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// One random draw: vocabulary 2–10, embedding scale up to 10, ε
/// log-uniform in [1e-5, 0.5], and a logit trajectory of 1–100 steps.
fn run_trial(seed: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = rng.random_range(2..=10usize);
    let eos = rng.random_range(0..v);
    let scale = [0.1, 1.0, 3.0, 10.0][rng.random_range(0..4)];
    let eps = log_uniform(&mut rng, 1e-5, 0.5);
    let steps = rng.random_range(1..=100usize);
    let mut t = Tally::default();
    let mut st_state = HeadState::initial();
    let mut prev_st_alpha = 0.0;
    for step in 1..=steps {
        let logits: Vec<f64> = (0..v).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let va = va_from_logits(&logits);
        let (st, next) = st_from_logits(&logits, eos, eps, st_state);
        st_state = next;
        let nmst = nmst_from_logits(&logits, eos, eps, step);
        for d in [&va, &st, &nmst] {
            let diag = validate_distribution(d);
            t.draws += 1;
            t.max_normalization_error = t.max_normalization_error.max(diag.normalization_error);
            if !diag.passed {
                t.not_normalized += 1;
            }
        }
        let gap = eos_lower_bound(eps, step) - nmst.prob(eos);
        t.max_lower_bound_gap = t.max_lower_bound_gap.max(gap);
        if gap > LOWER_BOUND_SLACK {
            t.below_lower_bound += 1;
        }
        // α < 1 exactly when some mass is left for the non-eos tokens
        let log_rest = log_sum_exp((0..v).filter(|&i| i != eos).map(|i| nmst.log_prob(i)));
        if log_rest == f64::NEG_INFINITY {
            t.nmst_saturated += 1;
        }
        if st.prob(eos) < prev_st_alpha {
            t.st_decreasing += 1;
        }
        prev_st_alpha = st.prob(eos);
    }
    t
}

pub fn check_heads(trials: usize, seed: u64) -> SuiteResult {
    let mut out = SuiteResult::new("heads", seed, trials);
    let tally = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(derive_seed(&[seed, i as u64])))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    out.push(
        CheckResult::new(
            "normalization",
            tally.not_normalized == 0,
            format!(
                "{} of {} distributions failed validation; max |sum - 1| = {:.3e}",
                tally.not_normalized, tally.draws, tally.max_normalization_error
            ),
        )
        .with_data(json!({ "draws": tally.draws, "max_normalization_error": tally.max_normalization_error })),
    );
    out.push(CheckResult::new(
        "nmst_lower_bound",
        tally.below_lower_bound == 0,
        format!(
            "{} draws below 1-(1-eps)^t; largest shortfall {:.3e}",
            tally.below_lower_bound, tally.max_lower_bound_gap
        ),
    ));
    out.push(CheckResult::new(
        "nmst_below_one",
        tally.nmst_saturated == 0,
        format!("{} draws with no mass left for non-eos tokens", tally.nmst_saturated),
    ));
    out.push(CheckResult::new(
        "st_monotone",
        tally.st_decreasing == 0,
        format!("{} decreasing steps along ST trajectories", tally.st_decreasing),
    ));
    out.push(check_nmst_can_decrease());
    out.push(check_nmst_limit(seed));
    out
}

/// A large eos logit at t = 1 followed by a very negative one at t = 2.
fn check_nmst_can_decrease() -> CheckResult {
    let a1 = nmst_from_logits(&[4.0, 0.0], 0, 1e-3, 1).prob(0);
    let a2 = nmst_from_logits(&[-6.0, 0.0], 0, 1e-3, 2).prob(0);
    CheckResult::new(
        "nmst_non_monotone_witness",
        a2 < a1,
        format!("alpha_1 = {a1:.6}, alpha_2 = {a2:.6}"),
    )
}

/// Once `t ≥ ln(1e-6)/ln(1 − ε)`, α_t ≥ 1 − 1e-6 whatever the logits.
fn check_nmst_limit(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, u64::MAX]));
    let mut worst: f64 = 1.0;
    for &eps in &[0.5f64, 0.1, 1e-2, 1e-3] {
        let t0 = (1e-6f64.ln() / (-eps).ln_1p()).ceil() as usize;
        for _ in 0..200 {
            let t = t0 + rng.random_range(0..50);
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
            worst = worst.min(nmst_from_logits(&logits, 0, eps, t).prob(0));
        }
    }
    CheckResult::new(
        "nmst_limit",
        worst >= 1.0 - 1e-6,
        format!("smallest alpha past the 1e-6 horizon: {worst:.9}"),
    )
}
