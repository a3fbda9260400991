//! The embedding state machine and its inverse extractor.
//!
//! Each step: query the provider, build the candidate pool, tile the code
//! space, read the next alpha-bit window, whiten it with a per-step mask,
//! locate its codepoint, emit that token. The bits actually embedded are the
//! common prefix of the located range's endpoints; the cursor advances by that
//! many bits. Extraction replays the identical construction and reads the
//! prefixes back (un-whitening them with the same mask).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allocation::{allocate, common_prefix, AllocationError, AllocationSpec, CandidatePool};
use crate::bitstream::{BitCursor, BitstreamError, FramedBitstream, HEADER_BITS};
use crate::provider::{Context, DistributionProvider, ProviderError, TokenId};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("max_tokens ({max_tokens}) reached with {remaining} bits still unembedded")]
    CapacityExhausted { max_tokens: usize, remaining: usize },
    #[error("config expects provider '{expected}' but got '{actual}'")]
    ProviderMismatch { expected: String, actual: String },
    #[error("document digest {document} does not match config digest {config}")]
    ConfigDigestMismatch { document: String, config: String },
    #[error("step {step}: stego token {token_id} is absent from the reconstructed pool")]
    TokenNotInPool { step: usize, token_id: TokenId },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
}

/// What to do with `<EOS>` while secret bits remain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EosPolicy {
    /// `<EOS>` stays in the pool; emitting it with bits left fails the embed.
    Stop,
    /// `<EOS>` is pruned from the pool (before renormalization) until the
    /// bitstream is fully embedded.
    SuppressUntilDone,
}

/// Everything sender and receiver must share. The digest of this struct is
/// carried in every document and checked before extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// model id + revision + quantization tag
    pub provider_id: String,
    pub top_k: usize,
    pub spec: AllocationSpec,
    pub max_tokens: usize,
    pub eos_policy: EosPolicy,
    pub instruction: String,
}

impl CodecConfig {
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// A generated stego text plus the metadata extraction needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StegoDocument {
    pub config_digest: String,
    pub embedder: String,
    pub token_ids: Vec<TokenId>,
    pub text: String,
    pub steps: usize,
    pub embedded_bits: usize,
}

pub(crate) fn check_provider(
    provider: &dyn DistributionProvider,
    config: &CodecConfig,
) -> Result<(), CodecError> {
    let actual = provider.provider_id();
    if config.provider_id != actual {
        return Err(CodecError::ProviderMismatch { expected: config.provider_id.clone(), actual });
    }
    Ok(())
}

pub(crate) fn instruction_context(
    provider: &dyn DistributionProvider,
    config: &CodecConfig,
) -> Context {
    Context::new(provider.vocabulary().encode_line(&config.instruction))
}

pub(crate) fn pool_exclusions(
    provider: &dyn DistributionProvider,
    config: &CodecConfig,
    bits_remain: bool,
) -> Vec<TokenId> {
    let vocab = provider.vocabulary();
    let mut exclude = vec![vocab.unk_id()];
    if bits_remain && config.eos_policy == EosPolicy::SuppressUntilDone {
        exclude.push(vocab.eos_id());
    }
    exclude
}

/// Per-step whitening mask over the alpha-bit code space.
///
/// The window is XORed with this mask before locating its range. XOR is a
/// bijection, so token-selection probabilities are untouched, and both sides
/// recompute the mask from the step index alone. Without it a low-entropy
/// deterministic provider can cycle through contexts whose midpoint-straddling
/// range keeps capturing the same window value, embedding zero bits forever;
/// the mask moves the code each step so such cycles cannot stall.
pub(crate) fn step_mask(step: usize, alpha: u32) -> u64 {
    let digest = Sha256::digest((step as u64).to_be_bytes());
    let word = u64::from_be_bytes(digest[..8].try_into().unwrap());
    word >> (64 - alpha)
}

/// Greedy argmax over the distribution, `<UNK>` excluded, ties to lowest id.
pub(crate) fn greedy_token(
    provider: &dyn DistributionProvider,
    context: &Context,
) -> Result<TokenId, CodecError> {
    let dist = provider.next_distribution(context)?;
    let unk = provider.vocabulary().unk_id();
    let best = dist
        .units()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i as TokenId != unk)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as TokenId)
        .expect("vocabulary has non-<UNK> tokens");
    Ok(best)
}

pub(crate) fn render_text(provider: &dyn DistributionProvider, token_ids: &[TokenId]) -> String {
    let vocab = provider.vocabulary();
    let words: Vec<&str> = token_ids
        .iter()
        .filter(|&&id| id != vocab.eos_id())
        .map(|&id| vocab.token(id))
        .collect();
    words.join(" ")
}

/// Runs the generation loop after the payload is fully embedded: greedy argmax
/// until `<EOS>` or the token cap.
pub(crate) fn greedy_tail(
    provider: &dyn DistributionProvider,
    context: &mut Context,
    token_ids: &mut Vec<TokenId>,
    steps: &mut usize,
    max_tokens: usize,
) -> Result<(), CodecError> {
    let eos = provider.vocabulary().eos_id();
    if token_ids.last() == Some(&eos) {
        return Ok(());
    }
    while *steps < max_tokens {
        let tok = greedy_token(provider, context)?;
        token_ids.push(tok);
        context.push(tok);
        *steps += 1;
        if tok == eos {
            break;
        }
    }
    Ok(())
}

/// Embeds the cursor's framed bitstream into generated text.
pub fn embed(
    provider: &dyn DistributionProvider,
    config: &CodecConfig,
    cursor: &mut BitCursor,
) -> Result<StegoDocument, CodecError> {
    check_provider(provider, config)?;
    let vocab = provider.vocabulary();
    let eos = vocab.eos_id();
    let alpha = config.spec.alpha;

    let mut context = instruction_context(provider, config);
    let mut token_ids: Vec<TokenId> = Vec::new();
    let mut steps = 0usize;
    let mut embedded_bits = 0usize;

    while !cursor.is_exhausted() {
        if steps >= config.max_tokens {
            return Err(CodecError::CapacityExhausted {
                max_tokens: config.max_tokens,
                remaining: cursor.remaining(),
            });
        }
        let dist = provider.next_distribution(&context)?;
        let exclude = pool_exclusions(provider, config, true);
        let pool = CandidatePool::build_allowing_single(&dist, config.top_k, &exclude)?;
        let table = allocate(&pool, &config.spec)?;
        let (window, _padded) = cursor.read_window(alpha);
        let code = window ^ step_mask(steps, alpha);
        let range = table.locate(code);
        let (_, prefix_len) = common_prefix(range.begin, range.end, alpha);
        let consumed = (prefix_len as usize).min(cursor.remaining());
        cursor.advance(consumed);
        embedded_bits += consumed;
        let tok = range.token_id;
        token_ids.push(tok);
        context.push(tok);
        steps += 1;
        if tok == eos {
            // only reachable under EosPolicy::Stop
            if !cursor.is_exhausted() {
                return Err(CodecError::CapacityExhausted {
                    max_tokens: config.max_tokens,
                    remaining: cursor.remaining(),
                });
            }
            break;
        }
    }

    greedy_tail(provider, &mut context, &mut token_ids, &mut steps, config.max_tokens)?;

    let text = render_text(provider, &token_ids);
    Ok(StegoDocument {
        config_digest: config.digest(),
        embedder: "dair".to_string(),
        token_ids,
        text,
        steps,
        embedded_bits,
    })
}

/// Grows a big-endian bit buffer; shared by the extractors.
#[derive(Default)]
pub(crate) struct BitSink {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitSink {
    pub fn push_bits(&mut self, value: u64, len: u32) {
        for i in (0..len).rev() {
            if self.bit_len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            let bit = (value >> i) & 1;
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (7 - (self.bit_len % 8));
            }
            self.bit_len += 1;
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Payload bit count from the header, once 48 bits have arrived.
    pub fn claimed_total(&self) -> Option<usize> {
        if self.bit_len < HEADER_BITS {
            return None;
        }
        let mut raw = [0u8; 4];
        raw.copy_from_slice(&self.bytes[2..6]);
        Some(HEADER_BITS + u32::from_be_bytes(raw) as usize)
    }

    pub fn into_stream(mut self, truncate_to: usize) -> FramedBitstream {
        let bit_len = self.bit_len.min(truncate_to);
        self.bytes.truncate(bit_len.div_ceil(8));
        FramedBitstream::from_raw_bits(self.bytes, bit_len)
    }
}

/// Replays the pool and interval construction per stego token and recovers the
/// payload. Read-only: needs nothing but the document and the shared config.
pub fn extract(
    provider: &dyn DistributionProvider,
    config: &CodecConfig,
    doc: &StegoDocument,
) -> Result<Vec<u8>, CodecError> {
    check_provider(provider, config)?;
    let expected = config.digest();
    if doc.config_digest != expected {
        return Err(CodecError::ConfigDigestMismatch {
            document: doc.config_digest.clone(),
            config: expected,
        });
    }

    let alpha = config.spec.alpha;
    let mut context = instruction_context(provider, config);
    let mut sink = BitSink::default();

    for (step, &tok) in doc.token_ids.iter().enumerate() {
        if let Some(total) = sink.claimed_total() {
            if sink.bit_len() >= total {
                break; // remaining tokens are greedy filler
            }
        }
        let dist = provider.next_distribution(&context)?;
        let exclude = pool_exclusions(provider, config, true);
        let pool = CandidatePool::build_allowing_single(&dist, config.top_k, &exclude)?;
        let table = allocate(&pool, &config.spec)?;
        let range = table
            .range_of(tok)
            .ok_or(CodecError::TokenNotInPool { step, token_id: tok })?;
        let (prefix, prefix_len) = common_prefix(range.begin, range.end, alpha);
        if prefix_len > 0 {
            // undo the whitening: window bits = code-prefix bits XOR mask bits
            let mask_bits = step_mask(step, alpha) >> (alpha - prefix_len);
            sink.push_bits(prefix ^ mask_bits, prefix_len);
        }
        context.push(tok);
    }

    let total = sink.claimed_total().unwrap_or(usize::MAX);
    let stream = sink.into_stream(total);
    Ok(stream.deframe()?)
}

/// Embedded bits per whitespace word of the rendered text.
pub fn measure_bpw(doc: &StegoDocument) -> f64 {
    let words = doc.text.split_whitespace().count();
    if words == 0 {
        return 0.0;
    }
    doc.embedded_bits as f64 / words as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::AllocationKind;
    use crate::provider::NGramModel;

    fn toy_model() -> NGramModel {
        let corpus = "\
the cat sat on the mat\n\
the dog sat on the rug\n\
the cat ran over the rug\n\
a dog ran over the mat\n\
the bird flew over the mat\n";
        NGramModel::train(corpus, 2, 0.1).unwrap()
    }

    fn config(model: &NGramModel, kind: AllocationKind, alpha: u32, beta: f64) -> CodecConfig {
        CodecConfig {
            provider_id: model.provider_id(),
            top_k: 16,
            spec: AllocationSpec::new(kind, alpha, beta, 2.0).unwrap(),
            max_tokens: 4000,
            eos_policy: EosPolicy::SuppressUntilDone,
            instruction: "the cat".to_string(),
        }
    }

    #[test]
    fn empty_payload_round_trip() {
        let m = toy_model();
        let cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(&[]).unwrap());
        let doc = embed(&m, &cfg, &mut cursor).unwrap();
        assert_eq!(doc.embedded_bits, 48);
        assert_eq!(extract(&m, &cfg, &doc).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn love_and_peace_round_trip() {
        let m = toy_model();
        let cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"Love and peace").unwrap());
        let doc = embed(&m, &cfg, &mut cursor).unwrap();
        assert_eq!(extract(&m, &cfg, &doc).unwrap(), b"Love and peace");
    }

    #[test]
    fn per_step_bits_bounded_by_alpha() {
        let m = toy_model();
        let cfg = config(&m, AllocationKind::Sqrt, 4, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"bounded").unwrap());
        let doc = embed(&m, &cfg, &mut cursor).unwrap();
        assert!(doc.embedded_bits <= doc.steps * 4);
    }

    #[test]
    fn alpha_mismatch_is_digest_mismatch() {
        let m = toy_model();
        let cfg8 = config(&m, AllocationKind::Condensed, 8, 1.0);
        let cfg32 = config(&m, AllocationKind::Condensed, 32, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"x").unwrap());
        let doc = embed(&m, &cfg8, &mut cursor).unwrap();
        assert!(matches!(
            extract(&m, &cfg32, &doc),
            Err(CodecError::ConfigDigestMismatch { .. })
        ));
    }

    #[test]
    fn provider_mismatch_detected() {
        let m = toy_model();
        let mut cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        cfg.provider_id = "some-other-model".to_string();
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"x").unwrap());
        assert!(matches!(
            embed(&m, &cfg, &mut cursor),
            Err(CodecError::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn tampered_token_detected() {
        let m = toy_model();
        let cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"tamper me").unwrap());
        let mut doc = embed(&m, &cfg, &mut cursor).unwrap();
        // <UNK> is never in any pool
        doc.token_ids[0] = m.vocabulary().unk_id();
        assert!(matches!(
            extract(&m, &cfg, &doc),
            Err(CodecError::TokenNotInPool { step: 0, .. })
        ));
    }

    #[test]
    fn capacity_exhausted_when_cap_too_small() {
        let m = toy_model();
        let mut cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        cfg.max_tokens = 2;
        let mut cursor =
            BitCursor::new(FramedBitstream::frame(&[0xAB; 64]).unwrap());
        assert!(matches!(
            embed(&m, &cfg, &mut cursor),
            Err(CodecError::CapacityExhausted { .. })
        ));
    }

    #[test]
    fn single_token_pool_progresses_with_zero_bits() {
        // a one-entry pool owns the whole code space: empty prefix, no bits
        use crate::allocation::{allocate, common_prefix, CandidatePool};
        use crate::provider::{TokenDistribution, GRID};
        let dist = TokenDistribution::from_units(vec![0, GRID, 0]);
        let pool = CandidatePool::build_allowing_single(&dist, 4, &[]).unwrap();
        let spec = AllocationSpec::new(AllocationKind::Condensed, 8, 1.0, 2.0).unwrap();
        let table = allocate(&pool, &spec).unwrap();
        assert_eq!(table.ranges().len(), 1);
        let r = table.ranges()[0];
        assert_eq!((r.begin, r.end), (0, 255));
        assert_eq!(common_prefix(r.begin, r.end, 8), (0, 0));
    }

    #[test]
    fn bpw_measurement() {
        let doc = StegoDocument {
            config_digest: String::new(),
            embedder: "dair".into(),
            token_ids: vec![],
            text: (0..100).map(|_| "w").collect::<Vec<_>>().join(" "),
            steps: 100,
            embedded_bits: 110,
        };
        assert!((measure_bpw(&doc) - 1.10).abs() < 1e-12);
        let empty = StegoDocument { embedded_bits: 0, text: String::new(), ..doc };
        assert_eq!(measure_bpw(&empty), 0.0);
    }

    #[test]
    fn document_json_shape() {
        let m = toy_model();
        let cfg = config(&m, AllocationKind::Condensed, 8, 1.0);
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"json").unwrap());
        let doc = embed(&m, &cfg, &mut cursor).unwrap();
        let json = serde_json::to_value(&doc).unwrap();
        for key in ["config_digest", "embedder", "token_ids", "text", "steps", "embedded_bits"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back: StegoDocument = serde_json::from_value(json).unwrap();
        assert_eq!(back, doc);
    }
}
