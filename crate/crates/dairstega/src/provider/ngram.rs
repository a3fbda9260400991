//! Built-in add-k smoothed n-gram model over whitespace tokens.
//!
//! The smoothing constant is held in milli-units so every probability is an
//! exact rational and the quantized rows are reproducible byte-for-byte.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{
    quantize_integer_weights, Context, DistributionProvider, ProviderError, TokenDistribution,
    TokenId, Vocabulary,
};

const MODEL_MAGIC: &[u8; 8] = b"DAIRNGRM";
const MODEL_VERSION: u8 = 1;

/// Add-k smoothed n-gram model. Immutable after training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramModel {
    order: u8,
    /// add-k constant in units of 10^-3
    smoothing_milli: u32,
    vocabulary: Vocabulary,
    /// (n-1)-gram context -> per-successor counts; BTreeMap keeps serialization ordered
    counts: BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>,
    /// quantized rows precomputed for every observed context (the model is
    /// immutable, and the codec queries the same handful of contexts per step)
    rows: HashMap<Vec<TokenId>, TokenDistribution>,
    /// the shared row for unseen contexts: pure add-k smoothing; None when
    /// smoothing is zero (such a row has no distribution)
    fallback_row: Option<TokenDistribution>,
}

impl NGramModel {
    /// Trains on a corpus of one document per line. Each line contributes a
    /// final transition to `<EOS>`.
    pub fn train(corpus: &str, order: u8, smoothing: f64) -> Result<Self, ProviderError> {
        assert!((1..=5).contains(&order), "order must be in 1..=5");
        let lines: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(ProviderError::EmptyCorpus);
        }

        let mut uniq: Vec<String> = lines
            .iter()
            .flat_map(|l| l.split_whitespace())
            .map(str::to_string)
            .collect();
        uniq.sort();
        uniq.dedup();
        let vocabulary = Vocabulary::with_reserved(uniq);

        let ctx_len = (order - 1) as usize;
        let mut counts: BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = BTreeMap::new();
        for line in &lines {
            let mut ids = vocabulary.encode_line(line);
            ids.push(vocabulary.eos_id());
            for (pos, &next) in ids.iter().enumerate() {
                let start = pos.saturating_sub(ctx_len);
                let ctx: Vec<TokenId> = ids[start..pos].to_vec();
                *counts.entry(ctx).or_default().entry(next).or_insert(0) += 1;
            }
        }

        let smoothing_milli = (smoothing * 1000.0).round() as u32;
        Ok(Self::assemble(order, smoothing_milli, vocabulary, counts))
    }

    /// Finishes construction by precomputing the quantized row for every
    /// observed context plus the shared unseen-context row.
    fn assemble(
        order: u8,
        smoothing_milli: u32,
        vocabulary: Vocabulary,
        counts: BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>,
    ) -> Self {
        let mut model =
            Self { order, smoothing_milli, vocabulary, counts, rows: HashMap::new(), fallback_row: None };
        model.rows = model
            .counts
            .keys()
            .map(|k| {
                let row = model.row(k).expect("observed context has nonzero counts");
                (k.clone(), row)
            })
            .collect();
        let v = model.vocabulary.len();
        model.fallback_row =
            quantize_integer_weights(&vec![model.smoothing_milli as u128; v]).ok();
        model
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing_milli as f64 / 1000.0
    }

    fn context_key(&self, context: &Context) -> Vec<TokenId> {
        let ctx_len = (self.order - 1) as usize;
        let ids = &context.token_ids;
        let start = ids.len().saturating_sub(ctx_len);
        ids[start..].to_vec()
    }

    /// Exact smoothed row: weight(t) = count(t) * 1000 + k_milli, which is the
    /// numerator of (count + k) / (total + k v) over a common denominator.
    fn row(&self, key: &[TokenId]) -> Result<TokenDistribution, ProviderError> {
        let v = self.vocabulary.len();
        let empty = BTreeMap::new();
        let row = self.counts.get(key).unwrap_or(&empty);
        let mut weights = vec![self.smoothing_milli as u128; v];
        for (&t, &c) in row {
            weights[t as usize] += c as u128 * 1000;
        }
        quantize_integer_weights(&weights)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.push(self.order);
        out.extend_from_slice(&self.smoothing_milli.to_le_bytes());
        out.extend_from_slice(&(self.vocabulary.len() as u32).to_le_bytes());
        for t in self.vocabulary.tokens() {
            let b = t.as_bytes();
            out.extend_from_slice(&(b.len() as u16).to_le_bytes());
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.vocabulary.eos_id().to_le_bytes());
        out.extend_from_slice(&self.vocabulary.unk_id().to_le_bytes());
        out.extend_from_slice(&(self.counts.len() as u64).to_le_bytes());
        for (ctx, row) in &self.counts {
            out.push(ctx.len() as u8);
            for id in ctx {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&(row.len() as u32).to_le_bytes());
            for (&t, &c) in row {
                out.extend_from_slice(&t.to_le_bytes());
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let data = std::fs::read(path)?;
        let mut r = ByteReader { data: &data, pos: 0 };
        let magic = r.take(8)?;
        if magic != MODEL_MAGIC {
            return Err(ProviderError::CorruptModel("bad magic".into()));
        }
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(ProviderError::CorruptModel(format!("unknown version {version}")));
        }
        let order = r.u8()?;
        let smoothing_milli = r.u32()?;
        let vocab_len = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let s = std::str::from_utf8(raw)
                .map_err(|e| ProviderError::CorruptModel(e.to_string()))?;
            tokens.push(s.to_string());
        }
        let eos_id = r.u32()?;
        let unk_id = r.u32()?;
        let vocabulary = Vocabulary::from_parts(tokens, eos_id, unk_id);
        let n_ctx = r.u64()? as usize;
        let mut counts = BTreeMap::new();
        for _ in 0..n_ctx {
            let clen = r.u8()? as usize;
            let mut ctx = Vec::with_capacity(clen);
            for _ in 0..clen {
                ctx.push(r.u32()?);
            }
            let n_entries = r.u32()? as usize;
            let mut row = BTreeMap::new();
            for _ in 0..n_entries {
                let t = r.u32()?;
                let c = r.u64()?;
                row.insert(t, c);
            }
            counts.insert(ctx, row);
        }
        Ok(Self::assemble(order, smoothing_milli, vocabulary, counts))
    }

}

impl DistributionProvider for NGramModel {
    fn provider_id(&self) -> String {
        format!(
            "ngram-o{}-k{}m-v{}",
            self.order,
            self.smoothing_milli,
            self.vocabulary.len()
        )
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn next_distribution(&self, context: &Context) -> Result<TokenDistribution, ProviderError> {
        let v = self.vocabulary.len();
        for &id in &context.token_ids {
            if id as usize >= v {
                return Err(ProviderError::TokenOutOfRange(id, v));
            }
        }
        let key = self.context_key(context);
        if let Some(row) = self.rows.get(&key) {
            return Ok(row.clone());
        }
        match &self.fallback_row {
            Some(row) => Ok(row.clone()),
            None => self.row(&key),
        }
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProviderError> {
        if self.pos + n > self.data.len() {
            return Err(ProviderError::CorruptModel("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ProviderError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ProviderError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ProviderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProviderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::GRID;

    #[test]
    fn bigram_add_k_matches_hand_count() {
        // corpus "a b a b": contexts [a]->b twice, [b]->a once, [b]-><EOS> once
        let m = NGramModel::train("a b a b", 2, 1.0).unwrap();
        let v = m.vocabulary().len(); // <EOS>, <UNK>, a, b
        let a = m.vocabulary().id_of("a");
        let b = m.vocabulary().id_of("b");
        let d = m.next_distribution(&Context::new(vec![a])).unwrap();
        // hand counts after "a": two continuations "b", nothing else; add-1
        // smoothing in milli-units gives weight 3000 for b and 1000 elsewhere
        let weights: Vec<u128> =
            (0..v as TokenId).map(|id| if id == b { 3000 } else { 1000 }).collect();
        let sum: u128 = weights.iter().sum();
        let mut expected: Vec<u64> =
            weights.iter().map(|&w| (w * GRID as u128 / sum) as u64).collect();
        // the quantization residue lands on the largest entry, which is b
        let residue = GRID - expected.iter().sum::<u64>();
        expected[b as usize] += residue;
        assert_eq!(d.units(), expected.as_slice());
        assert_eq!(d.units().iter().sum::<u64>(), GRID);
    }

    #[test]
    fn single_token_unigram() {
        let m = NGramModel::train("x", 1, 1.0).unwrap();
        let x = m.vocabulary().id_of("x");
        let d = m.next_distribution(&Context::default()).unwrap();
        let max_id = (0..d.len() as TokenId).max_by_key(|&i| d.units()[i as usize]).unwrap();
        assert_eq!(max_id, x);
        assert_eq!(d.units().iter().sum::<u64>(), GRID);
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.bin");
        let p2 = dir.path().join("m2.bin");
        NGramModel::train("the cat sat\nthe dog sat", 2, 1.0).unwrap().save(&p1).unwrap();
        NGramModel::train("the cat sat\nthe dog sat", 2, 1.0).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = NGramModel::train("a b c a b d", 3, 0.5).unwrap();
        m.save(&path).unwrap();
        let back = NGramModel::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unseen_context_is_uniform_smoothing_row() {
        let m = NGramModel::train("a b a b", 2, 1.0).unwrap();
        let d = m.next_distribution(&Context::new(vec![m.vocabulary().eos_id()])).unwrap();
        // all weights equal -> near-uniform with residue on index 0
        let min = *d.units().iter().min().unwrap();
        let max = *d.units().iter().max().unwrap();
        assert!(max - min <= d.len() as u64);
    }

    #[test]
    fn repeated_queries_identical() {
        let m = NGramModel::train("a b c d e f g", 2, 1.0).unwrap();
        let ctx = Context::new(vec![m.vocabulary().id_of("c")]);
        let first = m.next_distribution(&ctx).unwrap();
        for _ in 0..100 {
            assert_eq!(m.next_distribution(&ctx).unwrap(), first);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(NGramModel::train("\n\n", 2, 1.0), Err(ProviderError::EmptyCorpus)));
    }

    #[test]
    fn ngram_probs_match_brute_force_oracle() {
        // brute force: recount from scratch with a different code path
        let corpus = "the quick brown fox jumps over the lazy dog\nthe quick red fox";
        let order = 2u8;
        let k = 1.0f64;
        let m = NGramModel::train(corpus, order, k).unwrap();
        let vocab = m.vocabulary().clone();
        let v = vocab.len();

        let oracle = |ctx: &[TokenId], next: TokenId| -> f64 {
            let mut count = 0u64;
            let mut total = 0u64;
            for line in corpus.lines() {
                let mut ids = vocab.encode_line(line);
                ids.push(vocab.eos_id());
                for pos in 0..ids.len() {
                    let start = pos.saturating_sub(order as usize - 1);
                    if &ids[start..pos] == ctx {
                        total += 1;
                        if ids[pos] == next {
                            count += 1;
                        }
                    }
                }
            }
            (count as f64 + k) / (total as f64 + k * v as f64)
        };

        let the = vocab.id_of("the");
        let d = m.next_distribution(&Context::new(vec![the])).unwrap();
        // each floor truncation loses < 1 grid unit and the sum lands on the
        // largest entry, so any single entry is within v units of the rational
        let tol = (v as f64 + 1.0) / GRID as f64;
        for t in 0..v as TokenId {
            let got = d.units()[t as usize] as f64 / GRID as f64;
            let want = oracle(&[the], t);
            assert!((got - want).abs() < tol, "token {t}: {got} vs {want}");
        }
    }
}
