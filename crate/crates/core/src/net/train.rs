//! Mini-batch maximum-likelihood training with right padding and a loss mask.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::NeuralModel;
use super::optim::{adamw_step, AdamWConfig, Moments};
use super::params::Gradients;
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::model::ConditionalModel;
use crate::seed::derive_seed;
use crate::vocab::{Context, Sequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Multiplier applied to the learning rate after an epoch without
    /// validation improvement.
    pub lr_decay: f64,
    pub dropout_prob: f64,
    pub seed: u64,
    pub context_length: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            batch_size: 32,
            max_epochs: 70,
            patience: 10,
            lr_decay: 0.5,
            dropout_prob: 0.0,
            seed: 0,
            context_length: 10,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad("dropout probability must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr decay must lie in (0, 1]");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }

    fn adamw(&self, learning_rate: f64) -> AdamWConfig {
        AdamWConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.adam_eps,
        }
    }
}

/// A context and its terminated continuation.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub context: Context,
    pub target: Sequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Token-weighted mean NLL over the epoch's batches.
    pub train_nll: f64,
    pub valid_nll: f64,
    pub valid_perplexity: f64,
    /// Mean pre-clip global gradient norm.
    pub grad_norm: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: NeuralModel,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_valid_perplexity: f64,
}

/// `(−Σ_t log p(y_t | y_<t, x), |y|)` over the continuation only.
pub fn sequence_nll<M: ConditionalModel>(model: &M, context: &Context, target: &Sequence) -> Result<(f64, usize)> {
    if !target.terminated() {
        return Err(Error::InvalidSequence("target must end with eos".into()));
    }
    let lp = crate::model::sequence_log_prob(model, context, target.token_ids());
    Ok((-lp, target.len()))
}

/// Total NLL and token count over a dataset, summed in dataset order.
pub fn dataset_nll<M>(model: &M, data: &[Example]) -> Result<(f64, usize)>
where
    M: ConditionalModel + Sync,
{
    let parts: Vec<(f64, usize)> = data
        .par_iter()
        .map(|ex| sequence_nll(model, &ex.context, &ex.target))
        .collect::<Result<_>>()?;
    Ok(parts
        .into_iter()
        .fold((0.0, 0), |(a, n), (b, m)| (a + b, n + m)))
}

/// Summed NLL, scored token count and summed gradients for one batch.
/// Targets are right-padded with eos to the batch maximum; the padding is
/// run through the recurrence but not scored.
pub fn batch_gradients(
    model: &NeuralModel,
    batch: &[&Example],
    dropout_prob: f64,
    seed: u64,
) -> (f64, usize, Gradients) {
    let eos = model.vocab().eos_id();
    let max_len = batch.iter().map(|e| e.target.len()).max().unwrap_or(0);
    let arch = *model.architecture();
    let params = model.backbone().params();
    let rows: Vec<(f64, Gradients)> = batch
        .par_iter()
        .enumerate()
        .map(|(r, ex)| {
            let mut padded = ex.target.token_ids().to_vec();
            padded.resize(max_len, eos);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, r as u64]));
            let masks = |_pos: usize| {
                (dropout_prob > 0.0).then(|| {
                    let keep = 1.0 - dropout_prob;
                    (0..arch.layers)
                        .map(|_| {
                            (0..arch.hidden)
                                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                        .collect()
                })
            };
            let mut tape = Tape::new(params);
            let loss = model.record_loss(&mut tape, &ex.context, &padded, ex.target.len(), masks);
            (tape.scalar(loss), tape.backward(loss))
        })
        .collect();
    let mut grads = Gradients::zeros_like(params);
    let mut nll = 0.0;
    for (l, g) in &rows {
        nll += l;
        grads.add_assign(g);
    }
    let tokens = batch.iter().map(|e| e.target.len()).sum();
    (nll, tokens, grads)
}

/// Trains `model` in place of a copy and returns the best-validation model.
///
/// The learning rate is multiplied by `lr_decay` after every epoch whose
/// validation perplexity does not improve on the best so far; training
/// stops after `patience` consecutive such epochs.
pub fn train(model: NeuralModel, train: &[Example], valid: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for ex in train.iter().chain(valid) {
        if !ex.target.terminated() {
            return Err(Error::InvalidSequence("training targets must end with eos".into()));
        }
    }
    let mut model = model;
    let mut moments = Moments::zeros_like(model.backbone().params());
    let mut lr = cfg.learning_rate;
    let mut step = 0usize;
    let mut best: Option<(NeuralModel, f64, usize)> = None;
    let mut stale = 0usize;
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let (mut epoch_nll, mut epoch_tokens, mut norm_sum) = (0.0, 0usize, 0.0);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let seed = derive_seed(&[cfg.seed, 1, epoch as u64, b as u64]);
            let (nll, tokens, mut grads) = batch_gradients(&model, &batch, cfg.dropout_prob, seed);
            if !nll.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("batch loss {nll}"),
                });
            }
            grads.scale(1.0 / tokens as f64);
            let norm = match cfg.grad_clip {
                Some(c) => grads.clip_global_norm(c),
                None => grads.global_norm(),
            };
            step += 1;
            adamw_step(model.backbone_mut().params_mut(), &grads, &mut moments, &cfg.adamw(lr), step);
            if !model.backbone().params().all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: "parameters became non-finite".into(),
                });
            }
            epoch_nll += nll;
            epoch_tokens += tokens;
            norm_sum += norm;
        }

        let (vnll, vtok) = dataset_nll(&model, valid)?;
        let valid_nll = vnll / vtok as f64;
        let valid_perplexity = valid_nll.exp();
        if !valid_perplexity.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.len(),
                detail: format!("validation NLL {valid_nll}"),
            });
        }
        let improved = best.as_ref().is_none_or(|(_, p, _)| valid_perplexity < *p);
        metrics.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            train_nll: epoch_nll / epoch_tokens as f64,
            valid_nll,
            valid_perplexity,
            grad_norm: norm_sum / batches.len() as f64,
            improved,
        });
        if improved {
            best = Some((model.clone(), valid_perplexity, epoch));
            stale = 0;
        } else {
            stale += 1;
            lr *= cfg.lr_decay;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_valid_perplexity, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
        best_valid_perplexity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{Head, HeadKind};
    use crate::model::TableModel;
    use crate::net::backbone::{Architecture, CellKind};
    use crate::vocab::Vocabulary;
    use approx::assert_relative_eq;

    fn seq(ids: &[usize]) -> Sequence {
        Sequence::new(ids.to_vec(), 0).unwrap()
    }

    #[test]
    fn nll_examples() {
        let uniform = TableModel::uniform(Vocabulary::synthetic(4).unwrap());
        let (nll, n) = sequence_nll(&uniform, &Context::empty(), &seq(&[1, 2, 0])).unwrap();
        assert_eq!(n, 3);
        assert_relative_eq!(nll, 3.0 * 4f64.ln(), max_relative = 1e-14);

        let v = Vocabulary::synthetic(2).unwrap();
        let point = TableModel::constant(v.clone(), vec![0.0, 1.0])
            .unwrap()
            .with_entry(vec![1], vec![1.0, 0.0])
            .unwrap();
        assert_eq!(sequence_nll(&point, &Context::empty(), &seq(&[1, 0])).unwrap().0, 0.0);

        let mixed = TableModel::constant(v, vec![0.3, 0.7])
            .unwrap()
            .with_entry(vec![1], vec![0.6, 0.4])
            .unwrap();
        let (nll, _) = sequence_nll(&mixed, &Context::empty(), &seq(&[1, 0])).unwrap();
        assert_relative_eq!(nll, -(0.7f64.ln() + 0.6f64.ln()), max_relative = 1e-14);

        assert!(sequence_nll(&mixed, &Context::empty(), &seq(&[1])).is_err());
    }

    fn tiny_model(head: Head, seed: u64) -> NeuralModel {
        let arch = Architecture {
            cell: CellKind::Rnn,
            layers: 1,
            hidden: 8,
            tie_embeddings: true,
        };
        NeuralModel::new(Vocabulary::synthetic(5).unwrap(), arch, head, seed).unwrap()
    }

    fn memorize_data() -> Vec<Example> {
        vec![Example {
            context: Context::new(vec![1], 0).unwrap(),
            target: seq(&[2, 3, 4, 0]),
        }]
    }

    #[test]
    fn memorization_drives_nll_down_monotonically() {
        let data = memorize_data();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            max_epochs: 300,
            patience: 300,
            ..Default::default()
        };
        let out = train(tiny_model(Head::Va, 3), &data, &data, &cfg).unwrap();
        for w in out.metrics.windows(2) {
            assert!(w[1].train_nll <= w[0].train_nll + 1e-12, "{} > {}", w[1].train_nll, w[0].train_nll);
        }
        assert!(out.metrics.last().unwrap().train_nll < 0.05);
    }

    #[test]
    fn seeded_runs_are_bitwise_reproducible() {
        let head = Head::new(HeadKind::Nmst, Some(0.01)).unwrap();
        let data = vec![
            Example {
                context: Context::new(vec![1, 2], 0).unwrap(),
                target: seq(&[3, 0]),
            },
            Example {
                context: Context::new(vec![2, 2], 0).unwrap(),
                target: seq(&[4, 4, 1, 0]),
            },
        ];
        let cfg = TrainConfig {
            max_epochs: 5,
            dropout_prob: 0.3,
            batch_size: 1,
            seed: 77,
            ..Default::default()
        };
        let a = train(tiny_model(head, 1), &data, &data, &cfg).unwrap();
        let b = train(tiny_model(head, 1), &data, &data, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn best_checkpoint_is_never_worse_than_any_epoch() {
        let head = Head::new(HeadKind::St, Some(0.05)).unwrap();
        let train_set = memorize_data();
        let valid = vec![Example {
            context: Context::new(vec![1], 0).unwrap(),
            target: seq(&[4, 3, 0]),
        }];
        let cfg = TrainConfig {
            learning_rate: 3e-2,
            max_epochs: 40,
            patience: 3,
            ..Default::default()
        };
        let out = train(tiny_model(head, 2), &train_set, &valid, &cfg).unwrap();
        let min = out
            .metrics
            .iter()
            .map(|m| m.valid_perplexity)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_valid_perplexity, min);
        let (nll, n) = dataset_nll(&out.model, &valid).unwrap();
        assert_relative_eq!((nll / n as f64).exp(), min, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_configs_and_data() {
        let data = memorize_data();
        let m = tiny_model(Head::Va, 0);
        let bad = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(matches!(train(m.clone(), &data, &data, &bad), Err(Error::Config(_))));
        assert!(matches!(train(m, &[], &data, &TrainConfig::default()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn exploding_learning_rate_is_reported_as_divergence() {
        let data = memorize_data();
        let cfg = TrainConfig {
            learning_rate: f64::MAX,
            grad_clip: None,
            max_epochs: 3,
            ..Default::default()
        };
        let r = train(tiny_model(Head::Va, 0), &data, &data, &cfg);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }
}
