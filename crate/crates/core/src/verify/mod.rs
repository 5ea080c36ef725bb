//! Executable checks of the termination properties: decoder axioms, head
//! conformance, the vanilla non-termination witness, consistency bounds and
//! the two-branch eos experiment.

mod consistency;
mod decoders;
mod heads;
mod remark;
mod result;
mod witness;

pub use consistency::{
    check_nmst_consistency, check_st_consistency, consistency_decoders, random_terminating_model, DEFAULT_EPSILONS,
    SAMPLING_SLACK,
};
pub use decoders::{check_decoders, check_incomplete_probable, check_nesting, default_step_decoders, random_distribution};
pub use heads::{check_heads, LOWER_BOUND_SLACK};
pub use remark::{
    monotone_total_nll, optimal_total_nll, remark21_experiment, remark21_suite, two_branch_dataset, RemarkConfig,
    BRANCH_STEP,
};
pub use result::{CheckResult, SuiteResult};
pub use witness::{build_vanilla_nontermination_witness, check_vanilla_witness, WitnessModel};

use crate::error::{Error, Result};

pub const SUITES: [&str; 5] = ["heads", "decoders", "consistency", "remark21", "all"];

/// Cap used when the consistency suite decodes the vanilla witness.
pub const WITNESS_CAP: usize = 100_000;

/// Runs a named suite. `trials` scales the randomized suites; the
/// two-branch experiment ignores it.
pub fn run_suite(name: &str, seed: u64, trials: usize) -> Result<SuiteResult> {
    match name {
        "heads" => Ok(check_heads(trials, seed)),
        "decoders" => Ok(check_decoders(trials, seed)),
        "consistency" => {
            let mut out = SuiteResult::new("consistency", seed, trials);
            out.extend(check_nmst_consistency(&DEFAULT_EPSILONS, trials, seed)?);
            out.extend(check_st_consistency(&[1e-3, 0.1, 0.5], trials, seed)?);
            out.extend(check_vanilla_witness(3, WITNESS_CAP, WITNESS_CAP)?);
            Ok(out)
        }
        "remark21" => {
            let cfg = RemarkConfig {
                train: crate::net::TrainConfig {
                    seed,
                    ..RemarkConfig::default().train
                },
                ..RemarkConfig::default()
            };
            remark21_suite(&cfg)
        }
        "all" => {
            let mut out = SuiteResult::new("all", seed, trials);
            for s in &SUITES[..4] {
                out.extend(run_suite(s, seed, trials)?);
            }
            Ok(out)
        }
        other => Err(Error::Config(format!(
            "unknown suite {other:?}; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}
