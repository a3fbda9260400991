//! Deterministic next-token probability providers.
//!
//! All probabilities live on a fixed integer grid of 10^-9 units. A distribution
//! is a length-v vector of units summing to exactly [`GRID`]; this is what makes
//! embedding and extraction see bit-identical numbers across processes.

mod ngram;
mod remote;

pub use ngram::NGramModel;
pub use remote::{serve_http, serve_ndjson, RemoteProvider};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One probability unit is 10^-9; a full distribution sums to `GRID` units.
pub const GRID: u64 = 1_000_000_000;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("all-zero probability vector")]
    AllZero,
    #[error("token id {0} is out of vocabulary range {1}")]
    TokenOutOfRange(TokenId, usize),
    #[error("remote provider unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote protocol error: {0}")]
    ProtocolError(String),
    #[error("model file is corrupt: {0}")]
    CorruptModel(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered token list with reserved `<EOS>` and `<UNK>` entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: TokenId,
    unk_id: TokenId,
}

pub const EOS_TOKEN: &str = "<EOS>";
pub const UNK_TOKEN: &str = "<UNK>";

impl Vocabulary {
    /// Builds a vocabulary with `<EOS>` at id 0, `<UNK>` at id 1 and the given
    /// unique tokens (already sorted) after them.
    pub fn with_reserved(sorted_tokens: Vec<String>) -> Self {
        let mut tokens = vec![EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(sorted_tokens);
        Self { tokens, eos_id: 0, unk_id: 1 }
    }

    pub fn from_parts(tokens: Vec<String>, eos_id: TokenId, unk_id: TokenId) -> Self {
        Self { tokens, eos_id, unk_id }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps a surface token to its id, or `<UNK>` when absent.
    pub fn id_of(&self, token: &str) -> TokenId {
        // binary search over the sorted region after the two reserved slots
        match self.tokens[2..].binary_search_by(|t| t.as_str().cmp(token)) {
            Ok(i) => (i + 2) as TokenId,
            Err(_) => self.unk_id,
        }
    }

    /// Whitespace-tokenizes a line into ids.
    pub fn encode_line(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.id_of(t)).collect()
    }
}

/// Token-id context: instruction plus any generated tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Context {
    pub token_ids: Vec<TokenId>,
}

impl Context {
    pub fn new(token_ids: Vec<TokenId>) -> Self {
        Self { token_ids }
    }

    pub fn push(&mut self, id: TokenId) {
        self.token_ids.push(id);
    }
}

/// Quantized next-token distribution: `units[t]` multiples of 10^-9, summing to `GRID`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDistribution {
    units: Vec<u64>,
}

impl TokenDistribution {
    /// Wraps a unit vector that already sums to `GRID` exactly.
    pub fn from_units(units: Vec<u64>) -> Self {
        debug_assert_eq!(units.iter().sum::<u64>(), GRID);
        Self { units }
    }

    pub fn units(&self) -> &[u64] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.units[id as usize] as f64 / GRID as f64
    }
}

/// Normalizes a nonnegative real vector onto the unit grid: divide by the sum,
/// round each entry down to the grid, then add the leftover units to the largest
/// entry (ties broken by lowest index).
pub fn quantize_renormalize(raw: &[f64]) -> Result<TokenDistribution, ProviderError> {
    debug_assert!(raw.iter().all(|&x| x >= 0.0));
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(ProviderError::AllZero);
    }
    let mut units: Vec<u64> = raw.iter().map(|&x| ((x / sum) * GRID as f64) as u64).collect();
    distribute_residue(&mut units);
    Ok(TokenDistribution { units })
}

/// Same normalization for exact integer weights; used by the n-gram model so no
/// float enters the path at all.
pub fn quantize_integer_weights(weights: &[u128]) -> Result<TokenDistribution, ProviderError> {
    let sum: u128 = weights.iter().sum();
    if sum == 0 {
        return Err(ProviderError::AllZero);
    }
    let mut units: Vec<u64> =
        weights.iter().map(|&w| (w * GRID as u128 / sum) as u64).collect();
    distribute_residue(&mut units);
    Ok(TokenDistribution { units })
}

fn distribute_residue(units: &mut [u64]) {
    let assigned: u64 = units.iter().sum();
    let residue = GRID - assigned;
    if residue > 0 {
        let largest = units
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        units[largest] += residue;
    }
}

/// A source of deterministic next-token distributions.
///
/// Repeatability contract: two calls with the same context must return
/// bit-identical unit vectors. Extraction depends on it.
pub trait DistributionProvider: Sync {
    /// Stable identity (model id + revision + quantization); bound into the
    /// codec config digest so both sides can detect a model mismatch.
    fn provider_id(&self) -> String;
    fn vocabulary(&self) -> &Vocabulary;
    fn next_distribution(&self, context: &Context) -> Result<TokenDistribution, ProviderError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_on_grid_is_identity() {
        let d = quantize_renormalize(&[0.5, 0.5]).unwrap();
        assert_eq!(d.units(), &[GRID / 2, GRID / 2]);
    }

    #[test]
    fn quantize_thirds_puts_residue_on_first() {
        let d = quantize_renormalize(&[1.0, 1.0, 1.0]).unwrap();
        let third = GRID / 3;
        assert_eq!(d.units().iter().sum::<u64>(), GRID);
        assert_eq!(d.units()[1], third);
        assert_eq!(d.units()[2], third);
        assert_eq!(d.units()[0], GRID - 2 * third);
    }

    #[test]
    fn quantize_degenerate_mass() {
        let d = quantize_renormalize(&[0.0, 0.0, 3.0]).unwrap();
        assert_eq!(d.units(), &[0, 0, GRID]);
    }

    #[test]
    fn quantize_all_zero_rejected() {
        assert!(matches!(quantize_renormalize(&[0.0, 0.0]), Err(ProviderError::AllZero)));
    }

    #[test]
    fn integer_weights_match_rational_oracle() {
        // weights 1,1,1 -> floor(1e9/3) each, residue to index 0
        let d = quantize_integer_weights(&[1, 1, 1]).unwrap();
        assert_eq!(d.units().iter().sum::<u64>(), GRID);
        assert_eq!(d.units()[0] - d.units()[1], GRID - 3 * (GRID / 3));
    }

    #[test]
    fn vocab_lookup_and_unk() {
        let v = Vocabulary::with_reserved(vec!["a".into(), "b".into(), "c".into()]);
        assert_eq!(v.id_of("b"), 3);
        assert_eq!(v.id_of("zzz"), v.unk_id());
        assert_eq!(v.token(v.eos_id()), EOS_TOKEN);
    }
}
