//! Autoregressive sequence models with vanilla, self-terminating and
//! non-monotonic self-terminating output heads, the decoders that run them,
//! and tooling to measure and verify termination.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod heads;
pub mod model;
pub mod net;
pub mod seed;
pub mod verify;
pub mod vocab;

pub use distribution::{validate_distribution, ConditionalDistribution, DistributionDiagnostics};
pub use error::{Error, Result};
pub use heads::{eos_lower_bound, half_life, Head, HeadKind, HeadParams, HeadState};
pub use model::{ConditionalModel, TableModel};
pub use vocab::{build_vocabulary, decode, encode, Context, Sequence, TokenId, Vocabulary};
