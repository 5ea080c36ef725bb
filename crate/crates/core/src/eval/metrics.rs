//! Perplexity, non-termination ratios and teacher-forced eos traces.

use std::collections::BTreeMap;

use crate::decoding::teacher_forced_eos;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::net::{dataset_nll, Example};
use crate::vocab::{Context, Sequence};

/// Thresholds L used when none are given.
pub const DEFAULT_THRESHOLDS: [usize; 5] = [10, 100, 1_000, 10_000, 100_000];

/// `exp(Σ NLL / Σ |y|)` over continuation tokens.
pub fn perplexity<M>(model: &M, data: &[Example]) -> Result<f64>
where
    M: ConditionalModel + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (nll, tokens) = dataset_nll(model, data)?;
    Ok((nll / tokens as f64).exp())
}

/// Length of a decoded sequence for r_nt purposes: non-terminated runs are
/// infinitely long.
pub fn effective_length(len: usize, terminated: bool) -> Option<usize> {
    terminated.then_some(len)
}

/// Fraction of runs longer than each threshold. `runs` yields
/// `(length, terminated)` pairs decoded under `cap`.
pub fn non_termination_ratio(
    runs: &[(usize, bool)],
    thresholds: &[usize],
    cap: usize,
) -> Result<BTreeMap<usize, f64>> {
    if let Some(&t) = thresholds.iter().find(|&&t| t > cap) {
        return Err(Error::ThresholdAboveCap { threshold: t, cap });
    }
    let n = runs.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&l| {
            let longer = runs
                .iter()
                .filter(|&&(len, term)| effective_length(len, term).is_none_or(|x| x > l))
                .count();
            (l, longer as f64 / n)
        })
        .collect())
}

/// `α_t = p(eos | y_<t, x)` at every position of a terminated target.
pub fn eos_trace<M: ConditionalModel>(model: &M, context: &Context, target: &Sequence) -> Result<Vec<f64>> {
    if !target.terminated() {
        return Err(Error::InvalidSequence("eos trace needs a terminated target".into()));
    }
    Ok(teacher_forced_eos(model, context, target.token_ids()))
}
