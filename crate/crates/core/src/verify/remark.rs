//! Two continuations that share a prefix: `p1 p2 p3 <eos>` and
//! `p1 p2 p3 q1 q2 q3 <eos>`, both after the context `x`. The likelihood is
//! maximized by α = 0 for t < 4, α_4 = 1/2, α_5 = α_6 = 0 and α_7 = 1, a
//! trace that rises and then falls. A monotone head cannot follow it: with
//! α_5, α_6 ≥ α_4 = a and α_7 = 1 the best it can do is maximize
//! `log a + 3·log(1 − a)`, reached at a = 1/4.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::result::{CheckResult, SuiteResult};
use crate::error::Result;
use crate::eval::eos_trace;
use crate::heads::{Head, HeadKind};
use crate::net::{dataset_nll, train, Architecture, CellKind, Example, NeuralModel, TrainConfig};
use crate::vocab::{encode, encode_context, Vocabulary, EOS_TOKEN};

/// Step at which the short continuation ends.
pub const BRANCH_STEP: usize = 4;

/// Summed NLL of the two sequences at the unconstrained optimum: 2·ln 2.
pub fn optimal_total_nll() -> f64 {
    2.0 * std::f64::consts::LN_2
}

/// Summed NLL at the best non-decreasing trace: −(ln ¼ + 3·ln ¾).
pub fn monotone_total_nll() -> f64 {
    -(0.25f64.ln() + 3.0 * 0.75f64.ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemarkConfig {
    pub epsilon: f64,
    pub architecture: Architecture,
    pub train: TrainConfig,
    /// Largest α allowed off the branch step.
    pub off_branch_max: f64,
    /// Allowed distance of α at the branch step from 1/2.
    pub branch_band: f64,
}

impl Default for RemarkConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            architecture: Architecture {
                cell: CellKind::Rnn,
                layers: 1,
                hidden: 16,
                tie_embeddings: false,
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                weight_decay: 0.0,
                batch_size: 2,
                max_epochs: 1500,
                patience: 100,
                lr_decay: 1.0,
                seed: 7,
                ..TrainConfig::default()
            },
            off_branch_max: 0.1,
            branch_band: 0.1,
        }
    }
}

pub fn two_branch_dataset() -> Result<(Vocabulary, Vec<Example>)> {
    let tokens = [EOS_TOKEN, "x", "p1", "p2", "p3", "q1", "q2", "q3"];
    let vocab = Vocabulary::new(tokens.iter().map(|s| s.to_string()).collect(), 0, None)?;
    let ctx = encode_context(&vocab, &["x"])?;
    let examples = [&["p1", "p2", "p3"][..], &["p1", "p2", "p3", "q1", "q2", "q3"][..]]
        .iter()
        .map(|y| {
            Ok(Example {
                context: ctx.clone(),
                target: encode(&vocab, y, true)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((vocab, examples))
}

/// Trains a model with the given head on the two sequences and checks the
/// learned eos trace along the long one.
pub fn remark21_experiment(head_kind: HeadKind, cfg: &RemarkConfig) -> Result<SuiteResult> {
    let (vocab, data) = two_branch_dataset()?;
    let head = match head_kind {
        HeadKind::Va => Head::Va,
        k => Head::new(k, Some(cfg.epsilon))?,
    };
    let mut out = SuiteResult::new(format!("remark21/{head_kind}"), cfg.train.seed, 1);
    let model = NeuralModel::new(vocab, cfg.architecture, head, cfg.train.seed)?;
    let outcome = match train(model, &data, &data, &cfg.train) {
        Ok(o) => o,
        Err(e) => {
            out.push(CheckResult::new(format!("{head_kind}: training"), false, e.to_string()));
            return Ok(out);
        }
    };
    let model = outcome.model;
    let (total_nll, _) = dataset_nll(&model, &data)?;
    let long = &data[1];
    let trace = eos_trace(&model, &long.context, &long.target)?;
    let t0 = BRANCH_STEP;
    let a = |t: usize| trace[t - 1];
    let data_json = json!({
        "head": head_kind.to_string(),
        "alpha_trace": trace,
        "total_nll": total_nll,
        "optimal_total_nll": optimal_total_nll(),
        "monotone_total_nll": monotone_total_nll(),
        "epochs": outcome.metrics.len(),
        "best_epoch": outcome.best_epoch,
    });
    let trace_text = trace.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    out.push(
        CheckResult::new(
            format!("{head_kind}: training"),
            true,
            format!("total NLL {total_nll:.4} after {} epochs; trace [{trace_text}]", outcome.metrics.len()),
        )
        .with_data(data_json),
    );

    match head_kind {
        HeadKind::Va | HeadKind::Nmst => {
            out.push(CheckResult::new(
                format!("{head_kind}: alpha at the branch step near 1/2"),
                (a(t0) - 0.5).abs() <= cfg.branch_band,
                format!("alpha_{t0} = {:.4}", a(t0)),
            ));
            out.push(CheckResult::new(
                format!("{head_kind}: alpha after the branch step small"),
                a(t0 + 1) <= cfg.off_branch_max,
                format!("alpha_{} = {:.4}", t0 + 1, a(t0 + 1)),
            ));
            let before = (1..t0).map(a).fold(0.0, f64::max);
            out.push(CheckResult::new(
                format!("{head_kind}: alpha before the branch step small"),
                before <= cfg.off_branch_max,
                format!("max alpha_t for t < {t0} = {before:.4}"),
            ));
            if head_kind == HeadKind::Nmst {
                out.push(CheckResult::new(
                    "nmst: trace decreases after the branch step",
                    a(t0) > a(t0 + 1),
                    format!("alpha_{t0} = {:.4} > alpha_{} = {:.4}", a(t0), t0 + 1, a(t0 + 1)),
                ));
            }
        }
        HeadKind::St => {
            let monotone = trace.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            out.push(CheckResult::new(
                "st: trace is non-decreasing",
                monotone,
                format!("trace [{trace_text}]"),
            ));
            out.push(CheckResult::new(
                "st: loss stays above the monotone optimum",
                total_nll >= monotone_total_nll() - 1e-3,
                format!("total NLL {total_nll:.4}, monotone optimum {:.4}", monotone_total_nll()),
            ));
        }
    }
    Ok(out)
}

fn total_nll(r: &SuiteResult) -> Option<f64> {
    r.checks
        .iter()
        .find_map(|c| c.data.as_ref()?.get("total_nll")?.as_f64())
}

/// Runs all three heads and compares the ST and NMST losses.
pub fn remark21_suite(cfg: &RemarkConfig) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("remark21", cfg.train.seed, 1);
    let va = remark21_experiment(HeadKind::Va, cfg)?;
    let nmst = remark21_experiment(HeadKind::Nmst, cfg)?;
    let st = remark21_experiment(HeadKind::St, cfg)?;
    let cmp = match (total_nll(&st), total_nll(&nmst)) {
        (Some(s), Some(n)) => CheckResult::new(
            "st loss exceeds nmst loss",
            s > n,
            format!("st {s:.4} vs nmst {n:.4} (difference {:.4})", s - n),
        ),
        _ => CheckResult::new("st loss exceeds nmst loss", false, "a training run failed"),
    };
    out.extend(va);
    out.extend(nmst);
    out.extend(st);
    out.push(cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_optima() {
        assert!((optimal_total_nll() - 1.386294).abs() < 1e-6);
        assert!((monotone_total_nll() - 2.249340).abs() < 1e-6);
        // a = 1/4 maximizes log a + 3 log(1 − a)
        let f = |a: f64| a.ln() + 3.0 * (1.0 - a).ln();
        assert!(f(0.25) > f(0.24) && f(0.25) > f(0.26));
    }

    #[test]
    fn dataset_shape() {
        let (v, d) = two_branch_dataset().unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(d[0].target.len(), BRANCH_STEP);
        assert_eq!(d[1].target.len(), BRANCH_STEP + 3);
    }
}
