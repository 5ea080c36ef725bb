//! Output-layer parametrizations mapping a hidden state to a next-token
//! distribution: vanilla softmax, self-terminating (ST) and non-monotonic
//! self-terminating (NMST).
//!
//! Both terminating heads are evaluated through `log(1 − α_t)`:
//!
//! ```text
//! ST:    log(1 − α_t) = Σ_{t'≤t} [ log(1 − ε) + log σ(u_eos·h_t') ]
//! NMST:  log(1 − α_t) = log σ(−u_eos·h_t) + t·log(1 − ε)
//! ```
//!
//! since `1 − α_t = (1 − σ_t)(1 − ε)^t` for NMST. `log α_t` follows from
//! `log1mexp`, and every non-eos token gets `(1 − α_t)` times a softmax over
//! the non-eos logits.

use serde::{Deserialize, Serialize};

use crate::distribution::{log1mexp, log_sigmoid, log_softmax, ConditionalDistribution};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Va,
    St,
    Nmst,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Va => "va",
            HeadKind::St => "st",
            HeadKind::Nmst => "nmst",
        })
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "va" | "vanilla" => Ok(HeadKind::Va),
            "st" => Ok(HeadKind::St),
            "nmst" => Ok(HeadKind::Nmst),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

/// A head kind together with its ε; ε exists only for the terminating heads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Va,
    St { epsilon: f64 },
    Nmst { epsilon: f64 },
}

impl Head {
    pub fn new(kind: HeadKind, epsilon: Option<f64>) -> Result<Self> {
        let check = |e: Option<f64>| match e {
            Some(e) if e > 0.0 && e < 1.0 => Ok(e),
            Some(e) => Err(Error::Config(format!("epsilon {e} outside (0, 1)"))),
            None => Err(Error::Config(format!("{kind} head requires epsilon"))),
        };
        match kind {
            HeadKind::Va if epsilon.is_some() => Err(Error::Config(
                "epsilon is meaningless for the va head".into(),
            )),
            HeadKind::Va => Ok(Head::Va),
            HeadKind::St => Ok(Head::St {
                epsilon: check(epsilon)?,
            }),
            HeadKind::Nmst => Ok(Head::Nmst {
                epsilon: check(epsilon)?,
            }),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Va => HeadKind::Va,
            Head::St { .. } => HeadKind::St,
            Head::Nmst { .. } => HeadKind::Nmst,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Head::Va => None,
            Head::St { epsilon } | Head::Nmst { epsilon } => Some(epsilon),
        }
    }

    /// Distribution for step `state.step` given output logits `u_v·h_t`,
    /// and the head state for the following step.
    pub fn distribution(
        &self,
        logits: &[f64],
        eos_id: TokenId,
        state: HeadState,
    ) -> (ConditionalDistribution, HeadState) {
        match *self {
            Head::Va => (va_from_logits(logits), state.next(state.st_log_survival)),
            Head::St { epsilon } => st_from_logits(logits, eos_id, epsilon, state),
            Head::Nmst { epsilon } => (
                nmst_from_logits(logits, eos_id, epsilon, state.step),
                state.next(state.st_log_survival),
            ),
        }
    }

    /// Head state after step `state.step`, needing only the eos logit.
    pub fn advance_state(&self, eos_logit: f64, state: HeadState) -> HeadState {
        match *self {
            Head::St { epsilon } => {
                state.next(state.st_log_survival + st_step_log_factor(eos_logit, epsilon))
            }
            _ => state.next(state.st_log_survival),
        }
    }
}

/// Per-sequence head bookkeeping. `step` is the index t of the next token to
/// be predicted (1 for the first continuation token); `st_log_survival` is
/// `Σ_{t'<t} log((1 − ε)·σ(u_eos·h_t'))` for ST and unused otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadState {
    pub step: usize,
    pub st_log_survival: f64,
}

impl HeadState {
    pub fn initial() -> Self {
        Self {
            step: 1,
            st_log_survival: 0.0,
        }
    }

    fn next(self, st_log_survival: f64) -> Self {
        Self {
            step: self.step + 1,
            st_log_survival,
        }
    }
}

impl Default for HeadState {
    fn default() -> Self {
        Self::initial()
    }
}

/// Borrowed view of the output layer: one `dim`-wide row per token.
#[derive(Clone, Copy, Debug)]
pub struct HeadParams<'a> {
    pub output_embeddings: &'a [f64],
    pub dim: usize,
    pub eos_id: TokenId,
    pub head: Head,
}

impl<'a> HeadParams<'a> {
    pub fn new(output_embeddings: &'a [f64], dim: usize, eos_id: TokenId, head: Head) -> Result<Self> {
        if dim == 0 || !output_embeddings.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} embedding values do not form rows of width {dim}",
                output_embeddings.len()
            )));
        }
        if eos_id >= output_embeddings.len() / dim {
            return Err(Error::Shape(format!("eos id {eos_id} has no embedding row")));
        }
        Ok(Self {
            output_embeddings,
            dim,
            eos_id,
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.output_embeddings.len() / self.dim
    }

    pub fn eos_row(&self) -> &'a [f64] {
        &self.output_embeddings[self.eos_id * self.dim..(self.eos_id + 1) * self.dim]
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim {
            return Err(Error::Shape(format!(
                "hidden size {} does not match embedding width {}",
                h.len(),
                self.dim
            )));
        }
        Ok(self
            .output_embeddings
            .chunks_exact(self.dim)
            .map(|row| dot(row, h))
            .collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn va_head(h: &[f64], p: &HeadParams<'_>) -> Result<ConditionalDistribution> {
    Ok(va_from_logits(&p.logits(h)?))
}

pub fn st_head(
    h: &[f64],
    p: &HeadParams<'_>,
    state: HeadState,
) -> Result<(ConditionalDistribution, HeadState)> {
    let Head::St { epsilon } = p.head else {
        return Err(Error::Config("st_head needs an ST head".into()));
    };
    Ok(st_from_logits(&p.logits(h)?, p.eos_id, epsilon, state))
}

pub fn nmst_head(h: &[f64], p: &HeadParams<'_>, t: usize) -> Result<ConditionalDistribution> {
    let Head::Nmst { epsilon } = p.head else {
        return Err(Error::Config("nmst_head needs an NMST head".into()));
    };
    if t == 0 {
        return Err(Error::Config("step index starts at 1".into()));
    }
    Ok(nmst_from_logits(&p.logits(h)?, p.eos_id, epsilon, t))
}

pub fn va_from_logits(logits: &[f64]) -> ConditionalDistribution {
    ConditionalDistribution::from_log_probs(log_softmax(logits, None))
}

fn st_step_log_factor(eos_logit: f64, epsilon: f64) -> f64 {
    (-epsilon).ln_1p() + log_sigmoid(eos_logit)
}

pub fn st_from_logits(
    logits: &[f64],
    eos_id: TokenId,
    epsilon: f64,
    state: HeadState,
) -> (ConditionalDistribution, HeadState) {
    let survival = state.st_log_survival + st_step_log_factor(logits[eos_id], epsilon);
    (
        terminating_distribution(logits, eos_id, survival),
        state.next(survival),
    )
}

pub fn nmst_from_logits(logits: &[f64], eos_id: TokenId, epsilon: f64, t: usize) -> ConditionalDistribution {
    let log_not_eos = log_sigmoid(-logits[eos_id]) + t as f64 * (-epsilon).ln_1p();
    terminating_distribution(logits, eos_id, log_not_eos)
}

/// Places `1 − exp(log_not_eos)` on eos and spreads the rest by a softmax
/// over the non-eos logits.
fn terminating_distribution(logits: &[f64], eos_id: TokenId, log_not_eos: f64) -> ConditionalDistribution {
    let mut lp = log_softmax(logits, Some(eos_id));
    for (i, l) in lp.iter_mut().enumerate() {
        if i == eos_id {
            *l = log1mexp(log_not_eos);
        } else {
            *l += log_not_eos;
        }
    }
    ConditionalDistribution::from_log_probs(lp)
}

/// `f_lb(t) = 1 − (1 − ε)^t`, the floor under the NMST eos probability.
pub fn eos_lower_bound(epsilon: f64, t: usize) -> f64 {
    -(t as f64 * (-epsilon).ln_1p()).exp_m1()
}

/// Smallest step t with `1 − (1 − ε)^t > 1/2`.
///
/// The comparison is made in log space with a 1e-12 relative margin, so
/// exact-boundary values of ε (where `(1 − ε)^t = 1/2` in exact arithmetic)
/// land on the next step instead of depending on rounding. Erring upward
/// keeps every bound stated in terms of this value sound.
pub fn half_life(epsilon: f64) -> usize {
    assert!(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
    let step = (-epsilon).ln_1p();
    let target = -std::f64::consts::LN_2 * (1.0 + 1e-12);
    let below = |t: usize| (t as f64) * step < target;
    let mut t = ((target / step).ceil() as usize).max(1);
    while !below(t) {
        t += 1;
    }
    while t > 1 && below(t - 1) {
        t -= 1;
    }
    t
}
