//! Dynamically-allocated-interval linguistic steganography.
//!
//! Embeds a secret bitstream into text generated token-by-token from a
//! deterministic language-model provider, and losslessly extracts it given the
//! same provider, instruction, and configuration. Each generation step tiles an
//! alpha-bit code space with per-token intervals sized like a roulette wheel:
//! higher-probability tokens own more codepoints, so uniformly distributed
//! secret bits tend to select natural continuations. The bits embedded at a
//! step are the common prefix of the selected interval's endpoints.
//!
//! The crate ships the interval codec, FLC and Huffman baseline embedders, a
//! built-in add-k n-gram provider plus a remote-provider wire protocol, and
//! the statistical-concealment metrics used to compare stego against cover
//! text.

pub mod allocation;
pub mod baselines;
pub mod batch;
pub mod bitstream;
pub mod codec;
pub mod config;
pub mod fixedpoint;
pub mod metrics;
pub mod provider;

pub use allocation::{AllocationKind, AllocationSpec, CandidatePool, IntervalTable};
pub use bitstream::{BitCursor, FramedBitstream};
pub use codec::{embed, extract, measure_bpw, CodecConfig, CodecError, EosPolicy, StegoDocument};
pub use provider::{Context, DistributionProvider, NGramModel, TokenDistribution, Vocabulary};
