//! Fixed-length-coding and Huffman-coding baseline embedders.
//!
//! Both share the provider and candidate-pool machinery with the main codec
//! and produce the same document format, tagged `flc` / `hc`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{AllocationError, CandidatePool};
use crate::bitstream::BitCursor;
use crate::codec::{
    check_provider, greedy_tail, instruction_context, pool_exclusions, render_text, BitSink,
    CodecConfig, CodecError, StegoDocument,
};
use crate::provider::{DistributionProvider, TokenId};

/// Fixed-length coding: each step reads exactly `bits_per_step` bits and picks
/// that index from a pool of 2^bits_per_step tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlcConfig {
    pub base: CodecConfig,
    pub bits_per_step: u32,
}

impl FlcConfig {
    pub fn new(base: CodecConfig, bits_per_step: u32) -> Self {
        assert!((1..=8).contains(&bits_per_step), "bits_per_step must be in 1..=8");
        Self { base, bits_per_step }
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn pool_size(&self) -> usize {
        1usize << self.bits_per_step
    }
}

fn flc_pool(
    provider: &dyn DistributionProvider,
    config: &FlcConfig,
    context: &crate::provider::Context,
) -> Result<CandidatePool, CodecError> {
    let dist = provider.next_distribution(context)?;
    let exclude = pool_exclusions(provider, &config.base, true);
    let pool = CandidatePool::build(&dist, config.pool_size(), &exclude)?;
    if pool.effective_size() != config.pool_size() {
        return Err(CodecError::Allocation(AllocationError::DegenerateDistribution {
            needed: config.pool_size(),
        }));
    }
    Ok(pool)
}

pub fn embed_flc(
    provider: &dyn DistributionProvider,
    config: &FlcConfig,
    cursor: &mut BitCursor,
) -> Result<StegoDocument, CodecError> {
    check_provider(provider, &config.base)?;
    let b = config.bits_per_step;
    let mut context = instruction_context(provider, &config.base);
    let mut token_ids: Vec<TokenId> = Vec::new();
    let mut steps = 0usize;
    let mut embedded_bits = 0usize;

    while !cursor.is_exhausted() {
        if steps >= config.base.max_tokens {
            return Err(CodecError::CapacityExhausted {
                max_tokens: config.base.max_tokens,
                remaining: cursor.remaining(),
            });
        }
        let pool = flc_pool(provider, config, &context)?;
        let (index, _padded) = cursor.read_window(b);
        let consumed = (b as usize).min(cursor.remaining());
        cursor.advance(consumed);
        embedded_bits += consumed;
        let tok = pool.entries()[index as usize].0;
        token_ids.push(tok);
        context.push(tok);
        steps += 1;
    }

    greedy_tail(provider, &mut context, &mut token_ids, &mut steps, config.base.max_tokens)?;

    let text = render_text(provider, &token_ids);
    Ok(StegoDocument {
        config_digest: config.digest(),
        embedder: "flc".to_string(),
        token_ids,
        text,
        steps,
        embedded_bits,
    })
}

pub fn extract_flc(
    provider: &dyn DistributionProvider,
    config: &FlcConfig,
    doc: &StegoDocument,
) -> Result<Vec<u8>, CodecError> {
    check_provider(provider, &config.base)?;
    let expected = config.digest();
    if doc.config_digest != expected {
        return Err(CodecError::ConfigDigestMismatch {
            document: doc.config_digest.clone(),
            config: expected,
        });
    }
    let mut context = instruction_context(provider, &config.base);
    let mut sink = BitSink::default();
    for (step, &tok) in doc.token_ids.iter().enumerate() {
        if let Some(total) = sink.claimed_total() {
            if sink.bit_len() >= total {
                break;
            }
        }
        let pool = flc_pool(provider, config, &context)?;
        let index = pool
            .position_of(tok)
            .ok_or(CodecError::TokenNotInPool { step, token_id: tok })?;
        sink.push_bits(index as u64, config.bits_per_step);
        context.push(tok);
    }
    let total = sink.claimed_total().unwrap_or(usize::MAX);
    Ok(sink.into_stream(total).deframe()?)
}

/// Huffman coding over the candidate pool, rebuilt each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HcConfig {
    pub base: CodecConfig,
}

impl HcConfig {
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"hc:");
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(hasher.finalize())
    }
}

/// Prefix-free per-token codes. Deterministic: merge ties break toward the
/// lowest pool index (then earliest created internal node), the
/// lower-probability subtree becomes the left child, left edge is bit 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    /// (code value, code length) per pool position
    codes: Vec<(u64, u32)>,
}

impl HuffmanTable {
    pub fn build(pool: &CandidatePool) -> Self {
        let n = pool.effective_size();
        if n == 1 {
            return Self { codes: vec![(0, 0)] };
        }
        // nodes: 0..n are leaves; merged nodes get increasing ranks after that
        #[derive(Clone)]
        struct Node {
            prob: u64,
            rank: usize,
            children: Option<(usize, usize)>, // (left, right)
        }
        let mut nodes: Vec<Node> = pool
            .entries()
            .iter()
            .enumerate()
            .map(|(i, &(_, p))| Node { prob: p, rank: i, children: None })
            .collect();
        let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<(u64, usize, usize)>> =
            nodes
                .iter()
                .enumerate()
                .map(|(i, node)| std::cmp::Reverse((node.prob, node.rank, i)))
                .collect();
        while heap.len() > 1 {
            let std::cmp::Reverse((p1, _, left)) = heap.pop().unwrap();
            let std::cmp::Reverse((p2, _, right)) = heap.pop().unwrap();
            let rank = nodes.len();
            nodes.push(Node { prob: p1 + p2, rank, children: Some((left, right)) });
            heap.push(std::cmp::Reverse((p1 + p2, rank, rank)));
        }
        let std::cmp::Reverse((_, _, root)) = heap.pop().unwrap();
        let mut codes = vec![(0u64, 0u32); n];
        let mut stack = vec![(root, 0u64, 0u32)];
        while let Some((idx, code, len)) = stack.pop() {
            match nodes[idx].children {
                Some((l, r)) => {
                    stack.push((l, code << 1, len + 1));
                    stack.push((r, (code << 1) | 1, len + 1));
                }
                None => codes[idx] = (code, len),
            }
        }
        Self { codes }
    }

    pub fn code(&self, pool_position: usize) -> (u64, u32) {
        self.codes[pool_position]
    }

    pub fn code_lengths(&self) -> Vec<u32> {
        self.codes.iter().map(|c| c.1).collect()
    }

    /// Walks the code of each pool position against a bit source; returns the
    /// pool position whose code matches the first bits produced by `next_bit`.
    fn decode<F: FnMut(u32) -> bool>(&self, mut next_bit: F) -> (usize, u32) {
        // codes are prefix-free, so match incrementally by length
        let max_len = self.codes.iter().map(|c| c.1).max().unwrap_or(0);
        let mut acc = 0u64;
        for len in 1..=max_len {
            acc = (acc << 1) | next_bit(len - 1) as u64;
            if let Some(pos) =
                self.codes.iter().position(|&(code, l)| l == len && code == acc)
            {
                return (pos, len);
            }
        }
        debug_assert!(max_len == 0);
        (0, 0)
    }
}

fn hc_pool(
    provider: &dyn DistributionProvider,
    config: &HcConfig,
    context: &crate::provider::Context,
) -> Result<CandidatePool, CodecError> {
    let dist = provider.next_distribution(context)?;
    let exclude = pool_exclusions(provider, &config.base, true);
    Ok(CandidatePool::build_allowing_single(&dist, config.base.top_k, &exclude)?)
}

pub fn embed_hc(
    provider: &dyn DistributionProvider,
    config: &HcConfig,
    cursor: &mut BitCursor,
) -> Result<StegoDocument, CodecError> {
    check_provider(provider, &config.base)?;
    let mut context = instruction_context(provider, &config.base);
    let mut token_ids: Vec<TokenId> = Vec::new();
    let mut steps = 0usize;
    let mut embedded_bits = 0usize;

    while !cursor.is_exhausted() {
        if steps >= config.base.max_tokens {
            return Err(CodecError::CapacityExhausted {
                max_tokens: config.base.max_tokens,
                remaining: cursor.remaining(),
            });
        }
        let pool = hc_pool(provider, config, &context)?;
        let table = HuffmanTable::build(&pool);
        // walk the tree on the cursor's bits; past the end the walk reads zeros
        let (pos, code_len) =
            table.decode(|offset| cursor.peek_bit(offset as usize).unwrap_or(false));
        let consumed = (code_len as usize).min(cursor.remaining());
        cursor.advance(consumed);
        embedded_bits += consumed;
        let tok = pool.entries()[pos].0;
        token_ids.push(tok);
        context.push(tok);
        steps += 1;
    }

    greedy_tail(provider, &mut context, &mut token_ids, &mut steps, config.base.max_tokens)?;

    let text = render_text(provider, &token_ids);
    Ok(StegoDocument {
        config_digest: config.digest(),
        embedder: "hc".to_string(),
        token_ids,
        text,
        steps,
        embedded_bits,
    })
}

pub fn extract_hc(
    provider: &dyn DistributionProvider,
    config: &HcConfig,
    doc: &StegoDocument,
) -> Result<Vec<u8>, CodecError> {
    check_provider(provider, &config.base)?;
    let expected = config.digest();
    if doc.config_digest != expected {
        return Err(CodecError::ConfigDigestMismatch {
            document: doc.config_digest.clone(),
            config: expected,
        });
    }
    let mut context = instruction_context(provider, &config.base);
    let mut sink = BitSink::default();
    for (step, &tok) in doc.token_ids.iter().enumerate() {
        if let Some(total) = sink.claimed_total() {
            if sink.bit_len() >= total {
                break;
            }
        }
        let pool = hc_pool(provider, config, &context)?;
        let table = HuffmanTable::build(&pool);
        let pos = pool
            .position_of(tok)
            .ok_or(CodecError::TokenNotInPool { step, token_id: tok })?;
        let (code, len) = table.code(pos);
        sink.push_bits(code, len);
        context.push(tok);
    }
    let total = sink.claimed_total().unwrap_or(usize::MAX);
    Ok(sink.into_stream(total).deframe()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::AllocationSpec;
    use crate::bitstream::FramedBitstream;
    use crate::codec::EosPolicy;
    use crate::provider::{NGramModel, TokenDistribution, GRID};

    fn toy_model() -> NGramModel {
        let corpus = "\
one two three four five six seven eight\n\
one two three four nine ten eleven twelve\n\
one three five seven nine eleven\n\
two four six eight ten twelve\n";
        NGramModel::train(corpus, 2, 0.5).unwrap()
    }

    fn base(model: &NGramModel) -> CodecConfig {
        CodecConfig {
            provider_id: model.provider_id(),
            top_k: 8,
            spec: AllocationSpec::new(crate::allocation::AllocationKind::Condensed, 8, 1.0, 2.0)
                .unwrap(),
            max_tokens: 4000,
            eos_policy: EosPolicy::SuppressUntilDone,
            instruction: "one two".to_string(),
        }
    }

    #[test]
    fn flc_direct_indexing() {
        // b = 1, bits "10": second pool token, then first pool token
        let m = toy_model();
        let cfg = FlcConfig::new(base(&m), 1);
        let mut cursor = BitCursor::new(FramedBitstream::from_debug_dump("10"));
        let doc = embed_flc(&m, &cfg, &mut cursor).unwrap();

        let mut ctx = instruction_context(&m, &cfg.base);
        let pool0 = flc_pool(&m, &cfg, &ctx).unwrap();
        assert_eq!(doc.token_ids[0], pool0.entries()[1].0);
        ctx.push(doc.token_ids[0]);
        let pool1 = flc_pool(&m, &cfg, &ctx).unwrap();
        assert_eq!(doc.token_ids[1], pool1.entries()[0].0);
    }

    #[test]
    fn flc_round_trip() {
        let m = toy_model();
        for b in [1u32, 2, 3] {
            let cfg = FlcConfig::new(base(&m), b);
            let mut cursor = BitCursor::new(FramedBitstream::frame(b"fixed length").unwrap());
            let doc = embed_flc(&m, &cfg, &mut cursor).unwrap();
            assert_eq!(doc.embedder, "flc");
            assert_eq!(extract_flc(&m, &cfg, &doc).unwrap(), b"fixed length");
        }
    }

    #[test]
    fn flc_bpw_is_b_without_padding() {
        // payload bits divisible by b and no <EOS> in the text
        let m = toy_model();
        let cfg = FlcConfig::new(base(&m), 2);
        let mut cursor = BitCursor::new(FramedBitstream::frame(&[0b1011_0010]).unwrap());
        let doc = embed_flc(&m, &cfg, &mut cursor).unwrap();
        // 56 bits at 2 per step = 28 embedding steps; tail steps carry no bits
        assert_eq!(doc.embedded_bits, 56);
    }

    fn pool_of(units: &[u64]) -> CandidatePool {
        let d = TokenDistribution::from_units(units.to_vec());
        CandidatePool::build_allowing_single(&d, units.len(), &[]).unwrap()
    }

    #[test]
    fn huffman_uniform_four_is_balanced() {
        let p = pool_of(&[GRID / 4, GRID / 4, GRID / 4, GRID / 4]);
        let t = HuffmanTable::build(&p);
        assert_eq!(t.code_lengths(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn huffman_half_quarter_quarter() {
        let p = pool_of(&[GRID / 2, GRID / 4, GRID / 4]);
        let t = HuffmanTable::build(&p);
        assert_eq!(t.code_lengths(), vec![1, 2, 2]);
    }

    #[test]
    fn huffman_is_optimal_prefix_code() {
        // expected length must match an independent optimality bound:
        // compare against all prefix codes via the Kraft-tight enumeration of
        // code length multisets for 4 symbols
        let units = [500_000_000u64, 250_000_000, 150_000_000, 100_000_000];
        let p = pool_of(&units);
        let t = HuffmanTable::build(&p);
        let expected: f64 = units
            .iter()
            .zip(t.code_lengths())
            .map(|(&u, l)| u as f64 / GRID as f64 * l as f64)
            .sum();
        // candidate length profiles satisfying Kraft equality for 4 leaves
        let profiles: [[u32; 4]; 2] = [[1, 2, 3, 3], [2, 2, 2, 2]];
        let best: f64 = profiles
            .iter()
            .map(|prof| {
                prof.iter()
                    .zip(&units)
                    .map(|(&l, &u)| u as f64 / GRID as f64 * l as f64)
                    .sum()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((expected - best).abs() < 1e-9, "{expected} vs {best}");
    }

    #[test]
    fn huffman_deterministic() {
        let p = pool_of(&[400_000_000, 300_000_000, 200_000_000, 100_000_000]);
        let a = HuffmanTable::build(&p);
        let b = HuffmanTable::build(&p);
        assert_eq!(a, b);
    }

    #[test]
    fn hc_round_trip() {
        let m = toy_model();
        let cfg = HcConfig { base: base(&m) };
        let mut cursor = BitCursor::new(FramedBitstream::frame(b"huffman walk").unwrap());
        let doc = embed_hc(&m, &cfg, &mut cursor).unwrap();
        assert_eq!(doc.embedder, "hc");
        assert_eq!(extract_hc(&m, &cfg, &doc).unwrap(), b"huffman walk");
    }

    #[test]
    fn hc_digest_differs_from_dair() {
        let m = toy_model();
        let b = base(&m);
        let hc = HcConfig { base: b.clone() };
        assert_ne!(hc.digest(), b.digest());
    }
}
