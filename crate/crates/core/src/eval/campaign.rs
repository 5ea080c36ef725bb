//! Decoding every (context, decoder) pair and aggregating r_nt per decoder.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::non_termination_ratio;
use crate::decoding::{decode, DecoderKind, DecoderSpec, Generation};
use crate::error::Result;
use crate::model::ConditionalModel;
use crate::seed::{derive_seed, label_hash};
use crate::vocab::{Context, TokenId};

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub context_index: usize,
    pub decoder: DecoderKind,
    pub seed: u64,
    pub tokens: Vec<TokenId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<Vec<String>>,
    pub length: usize,
    pub terminated: bool,
    pub log_prob: f64,
    pub eos_probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_set_size: Option<usize>,
}

impl GenerationRecord {
    pub fn from_generation(context_index: usize, spec: &DecoderSpec, g: &Generation) -> Self {
        Self {
            context_index,
            decoder: spec.kind,
            seed: spec.seed,
            tokens: g.sequence.token_ids().to_vec(),
            text: None,
            length: g.len(),
            terminated: g.terminated(),
            log_prob: g.log_prob,
            eos_probs: g.eos_probs.clone(),
            final_set_size: g.final_set.as_ref().map(Vec::len),
        }
    }
}

/// All generations of one decoder over a set of contexts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub model_id: String,
    pub decoder: DecoderKind,
    pub cap: usize,
    pub records: Vec<GenerationRecord>,
}

impl GenerationReport {
    pub fn runs(&self) -> Vec<(usize, bool)> {
        self.records.iter().map(|r| (r.length, r.terminated)).collect()
    }

    pub fn r_nt(&self, thresholds: &[usize]) -> Result<BTreeMap<usize, f64>> {
        non_termination_ratio(&self.runs(), thresholds, self.cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSummary {
    pub decoder: DecoderKind,
    pub r_nt: BTreeMap<usize, f64>,
    pub terminated: usize,
    pub mean_length: f64,
    pub max_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perplexity: Option<f64>,
    pub contexts: usize,
    pub cap: usize,
    pub master_seed: u64,
    pub thresholds: Vec<usize>,
    pub decoders: Vec<DecoderSummary>,
}

#[derive(Clone, Debug)]
pub struct Campaign {
    pub reports: Vec<GenerationReport>,
    pub summary: MetricsRecord,
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub model_id: String,
    pub decoders: Vec<DecoderKind>,
    pub cap: usize,
    pub master_seed: u64,
    pub thresholds: Vec<usize>,
}

/// Seed for the run of `decoder` on context `index`.
pub fn run_seed(master_seed: u64, index: usize, decoder: DecoderKind) -> u64 {
    derive_seed(&[master_seed, index as u64, label_hash(&decoder.to_string())])
}

pub fn run_campaign<M>(model: &M, contexts: &[Context], cfg: &CampaignConfig) -> Result<Campaign>
where
    M: ConditionalModel + Sync,
{
    // validate thresholds before spending time decoding
    non_termination_ratio(&[], &cfg.thresholds, cfg.cap)?;
    let mut reports = Vec::with_capacity(cfg.decoders.len());
    let mut decoders = Vec::with_capacity(cfg.decoders.len());
    for &kind in &cfg.decoders {
        let records = contexts
            .par_iter()
            .enumerate()
            .map(|(i, ctx)| {
                let spec = DecoderSpec::new(kind, cfg.cap, run_seed(cfg.master_seed, i, kind))?;
                let g = decode(model, ctx, &spec)?;
                Ok(GenerationRecord::from_generation(i, &spec, &g))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = GenerationReport {
            model_id: cfg.model_id.clone(),
            decoder: kind,
            cap: cfg.cap,
            records,
        };
        let n = report.records.len();
        decoders.push(DecoderSummary {
            decoder: kind,
            r_nt: report.r_nt(&cfg.thresholds)?,
            terminated: report.records.iter().filter(|r| r.terminated).count(),
            mean_length: report.records.iter().map(|r| r.length as f64).sum::<f64>() / n.max(1) as f64,
            max_length: report.records.iter().map(|r| r.length).max().unwrap_or(0),
        });
        reports.push(report);
    }
    Ok(Campaign {
        reports,
        summary: MetricsRecord {
            model_id: cfg.model_id.clone(),
            perplexity: None,
            contexts: contexts.len(),
            cap: cfg.cap,
            master_seed: cfg.master_seed,
            thresholds: cfg.thresholds.clone(),
            decoders,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TableModel;
    use crate::vocab::Vocabulary;

    #[test]
    fn one_column_per_decoder_and_deterministic() {
        let m = TableModel::random(4, 6, 1).unwrap();
        let contexts = vec![Context::empty(); 100];
        let cfg = CampaignConfig {
            model_id: "table".into(),
            decoders: ["greedy", "top-k:2", "nucleus:0.4", "beam:2"]
                .iter()
                .map(|s| s.parse().unwrap())
                .collect(),
            cap: 20,
            master_seed: 9,
            thresholds: vec![1, 5, 20],
        };
        let a = run_campaign(&m, &contexts, &cfg).unwrap();
        assert_eq!(a.summary.decoders.len(), 4);
        assert_eq!(a.reports.len(), 4);
        for d in &a.summary.decoders {
            let v: Vec<f64> = d.r_nt.values().copied().collect();
            assert!(v.windows(2).all(|w| w[1] <= w[0]));
        }
        let b = run_campaign(&m, &contexts, &cfg).unwrap();
        assert_eq!(a.reports, b.reports);
        // sampling runs on identical contexts still get distinct seeds
        let seeds: std::collections::HashSet<u64> = a.reports[1].records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn never_ending_model_has_ratio_one() {
        let m = TableModel::constant(Vocabulary::synthetic(3).unwrap(), vec![0.0, 0.5, 0.5]).unwrap();
        let cfg = CampaignConfig {
            model_id: "loop".into(),
            decoders: vec![DecoderKind::Greedy],
            cap: 50,
            master_seed: 0,
            thresholds: vec![10, 50],
        };
        let c = run_campaign(&m, &vec![Context::empty(); 3], &cfg).unwrap();
        assert!(c.summary.decoders[0].r_nt.values().all(|&x| x == 1.0));
        let bad = CampaignConfig {
            thresholds: vec![51],
            ..cfg
        };
        assert!(run_campaign(&m, &[Context::empty()], &bad).is_err());
    }
}
