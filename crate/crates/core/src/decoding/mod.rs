//! Greedy search, top-k and nucleus sampling, beam search, and exhaustive
//! oracles for small models.

pub mod beam;
pub mod oracle;
pub mod search;
pub mod spec;
pub mod support;

pub use beam::{beam_search, BeamItem, BeamOutput};
pub use oracle::{enumerate_decoder_distribution, map_oracle, Enumeration};
pub use search::{decode, decode_greedy, decode_sampling, sample_from_support, teacher_forced_eos, Generation};
pub use spec::{DecoderKind, DecoderSpec};
pub use support::{ranked_ids, step_support, StepSupport};
