//! Next-token probability vectors and the log-space numerics behind them.

use crate::vocab::TokenId;

/// Absolute tolerance on `Σ probs = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Relative tolerance between `exp(log_probs[i])` and `probs[i]`.
pub const LOG_CONSISTENCY_TOL: f64 = 1e-9;

/// A probability vector over the vocabulary, stored in linear and log space.
/// Log space is authoritative; linear values are `exp` of it.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ConditionalDistribution {
    pub fn from_log_probs(log_probs: Vec<f64>) -> Self {
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { probs, log_probs }
    }

    /// Takes probabilities as given; no renormalization.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self { probs, log_probs }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self::from_log_probs(log_softmax(logits, None))
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_log_probs(vec![-(n as f64).ln(); n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id]
    }

    pub fn log_prob(&self, id: TokenId) -> f64 {
        self.log_probs[id]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable id; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionDiagnostics {
    /// `|Σ probs − 1|`.
    pub normalization_error: f64,
    /// Largest relative gap between `exp(log_probs[i])` and `probs[i]`.
    pub log_mismatch: f64,
    pub negative_entries: usize,
    pub non_finite_entries: usize,
    pub passed: bool,
}

pub fn validate_distribution(d: &ConditionalDistribution) -> DistributionDiagnostics {
    let sum: f64 = d.probs.iter().sum();
    let normalization_error = (sum - 1.0).abs();
    let negative_entries = d.probs.iter().filter(|&&p| p < 0.0).count();
    let non_finite_entries = d.probs.iter().filter(|p| !p.is_finite()).count()
        + d.log_probs.iter().filter(|l| l.is_nan() || **l == f64::INFINITY).count();
    let mut log_mismatch: f64 = if d.probs.len() == d.log_probs.len() {
        0.0
    } else {
        f64::INFINITY
    };
    for (&p, &l) in d.probs.iter().zip(&d.log_probs) {
        let e = l.exp();
        let scale = p.abs().max(e.abs());
        if scale > 0.0 {
            log_mismatch = log_mismatch.max((e - p).abs() / scale);
        }
    }
    let passed = normalization_error <= NORMALIZATION_TOL
        && log_mismatch <= LOG_CONSISTENCY_TOL
        && negative_entries == 0
        && non_finite_entries == 0;
    DistributionDiagnostics {
        normalization_error,
        log_mismatch,
        negative_entries,
        non_finite_entries,
        passed,
    }
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-softmax over `logits`, optionally leaving one index out of the
/// normalizer. The excluded entry gets `-inf`.
pub fn log_softmax(logits: &[f64], exclude: Option<usize>) -> Vec<f64> {
    let lse = log_sum_exp(
        logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != exclude)
            .map(|(_, &z)| z),
    );
    logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if Some(i) == exclude {
                f64::NEG_INFINITY
            } else {
                z - lse
            }
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log(1 − exp(x))` for `x ≤ 0`.
pub fn log1mexp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn validate_examples() {
        assert!(validate_distribution(&ConditionalDistribution::from_probs(vec![0.5, 0.3, 0.2])).passed);
        let bad = validate_distribution(&ConditionalDistribution::from_probs(vec![0.5, 0.6]));
        assert!(!bad.passed);
        assert_relative_eq!(bad.normalization_error, 0.1, epsilon = 1e-12);
        assert!(validate_distribution(&ConditionalDistribution::from_probs(vec![1.0, 0.0, 0.0])).passed);
    }

    #[test]
    fn log_mismatch_detected() {
        let d = ConditionalDistribution {
            probs: vec![0.5, 0.5],
            log_probs: vec![0.6f64.ln(), 0.5f64.ln()],
        };
        assert!(!validate_distribution(&d).passed);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let d = ConditionalDistribution::from_probs(vec![0.4, 0.4, 0.2]);
        assert_eq!(d.argmax(), 0);
        let d = ConditionalDistribution::from_probs(vec![0.2, 0.4, 0.4]);
        assert_eq!(d.argmax(), 1);
    }

    #[test]
    fn stable_sigmoid_family() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_relative_eq!(log_sigmoid(-800.0), -800.0, max_relative = 1e-12);
        assert!(log_sigmoid(800.0) <= 0.0 && log_sigmoid(800.0) > -1e-300);
        assert_relative_eq!(log_sigmoid(1.3), sigmoid(1.3).ln(), max_relative = 1e-14);
        assert_relative_eq!(log1mexp(-1e-20), (1e-20f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(log1mexp(-30.0), -(-30.0f64).exp(), max_relative = 1e-12);
        assert_eq!(log1mexp(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn log_softmax_with_exclusion() {
        let l = log_softmax(&[0.0, 1.0, 1.0], Some(0));
        assert_eq!(l[0], f64::NEG_INFINITY);
        assert_relative_eq!(l[1], 0.5f64.ln(), max_relative = 1e-14);
    }
}
