//! Perplexity, non-termination ratios, generation campaigns and reports.

pub mod campaign;
pub mod metrics;
pub mod report;

pub use campaign::{
    run_campaign, run_seed, Campaign, CampaignConfig, DecoderSummary, GenerationRecord, GenerationReport,
    MetricsRecord,
};
pub use metrics::{eos_trace, non_termination_ratio, perplexity, DEFAULT_THRESHOLDS};
