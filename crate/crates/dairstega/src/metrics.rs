//! Statistical-concealment metrics between cover and stego corpora, and
//! perplexity under a provider.
//!
//! CS and the distances operate on per-token relative frequency vectors over a
//! shared vocabulary. JSD uses base-2 logs and is reported x100 so identical
//! corpora give 0 and disjoint one-hots give 100. The dot-product difference is
//! defined as 100 - CS, matching how the two columns always sum to 100.

use thiserror::Error;

use crate::provider::{Context, DistributionProvider, TokenId, Vocabulary};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
}

/// Per-token relative frequencies over a corpus, aligned to a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    freqs: Vec<f64>,
}

impl FrequencyVector {
    pub fn values(&self) -> &[f64] {
        &self.freqs
    }
}

/// Counts token occurrences across the corpus and normalizes to sum 1.
pub fn frequency_vector(
    corpus: &[Vec<TokenId>],
    vocab: &Vocabulary,
) -> Result<FrequencyVector, MetricsError> {
    let mut counts = vec![0u64; vocab.len()];
    let mut total = 0u64;
    for seq in corpus {
        for &t in seq {
            counts[t as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(FrequencyVector {
        freqs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
    })
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<(), MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::DimensionMismatch(u.len(), v.len()));
    }
    Ok(())
}

/// Cosine similarity as a percentage: 100 * (u.v) / (|u||v|).
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    check_dims(u, v)?;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok(100.0 * dot / (nu * nv))
}

/// Jensen-Shannon divergence x100, base-2 logs: the average of the two KL
/// divergences against the mixture M = (u + v) / 2.
pub fn jsd(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    check_dims(u, v)?;
    let kl_to_mix = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| {
                let m = (pi + qi) / 2.0;
                if pi == 0.0 {
                    0.0 // 0 log 0 = 0
                } else {
                    pi * (pi / m).log2()
                }
            })
            .sum()
    };
    Ok(100.0 * 0.5 * (kl_to_mix(u, v) + kl_to_mix(v, u)))
}

pub fn euclidean(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    check_dims(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub fn manhattan(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    check_dims(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum())
}

/// Dot-product difference: 100 - CS.
pub fn dot_product_diff(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    Ok(100.0 - cosine_similarity(u, v)?)
}

/// Perplexity of a token sequence under the provider, starting from `prefix`:
/// exp of the mean negative natural-log likelihood at each position.
pub fn perplexity(
    provider: &dyn DistributionProvider,
    prefix: &[TokenId],
    sequence: &[TokenId],
) -> Result<f64, crate::provider::ProviderError> {
    assert!(!sequence.is_empty(), "sequence must be non-empty");
    let mut context = Context::new(prefix.to_vec());
    let mut nll = 0.0f64;
    for &tok in sequence {
        let dist = provider.next_distribution(&context)?;
        let p = dist.prob(tok).max(f64::MIN_POSITIVE);
        nll -= p.ln();
        context.push(tok);
    }
    Ok((nll / sequence.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{NGramModel, Vocabulary};

    fn vocab_abc() -> Vocabulary {
        Vocabulary::with_reserved(vec!["a".into(), "b".into(), "c".into()])
    }

    #[test]
    fn frequency_vector_direct_count() {
        let v = vocab_abc();
        let a = v.id_of("a");
        let b = v.id_of("b");
        let f = frequency_vector(&[vec![a, a, b]], &v).unwrap();
        assert!((f.values()[a as usize] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.values()[b as usize] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.values()[v.id_of("c") as usize], 0.0);
    }

    #[test]
    fn frequency_vector_one_hot_and_empty() {
        let v = vocab_abc();
        let a = v.id_of("a");
        let f = frequency_vector(&[vec![a]], &v).unwrap();
        assert_eq!(f.values()[a as usize], 1.0);
        assert_eq!(frequency_vector(&[vec![]], &v).unwrap_err(), MetricsError::EmptyCorpus);
    }

    #[test]
    fn identical_vectors_are_indiscernible() {
        let u = [0.2, 0.3, 0.5];
        assert!((cosine_similarity(&u, &u).unwrap() - 100.0).abs() < 1e-9);
        assert!(jsd(&u, &u).unwrap().abs() < 1e-9);
        assert_eq!(euclidean(&u, &u).unwrap(), 0.0);
        assert_eq!(manhattan(&u, &u).unwrap(), 0.0);
        assert!(dot_product_diff(&u, &u).unwrap().abs() < 1e-9);
    }

    #[test]
    fn orthogonal_extremes() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        assert_eq!(cosine_similarity(&u, &v).unwrap(), 0.0);
        assert!((euclidean(&u, &v).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(manhattan(&u, &v).unwrap(), 2.0);
        assert!((jsd(&u, &v).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn jsd_two_routes_agree() {
        // definition via mixture entropy vs averaged KL
        let u = [0.5, 0.5];
        let v = [0.75, 0.25];
        let got = jsd(&u, &v).unwrap();
        let h = |p: &[f64]| -> f64 {
            p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
        };
        let m: Vec<f64> = u.iter().zip(&v).map(|(a, b)| (a + b) / 2.0).collect();
        let alt = 100.0 * (h(&m) - (h(&u) + h(&v)) / 2.0);
        assert!((got - alt).abs() < 1e-12, "{got} vs {alt}");
    }

    #[test]
    fn metrics_are_symmetric() {
        let u = [0.1, 0.6, 0.3];
        let v = [0.4, 0.4, 0.2];
        assert_eq!(jsd(&u, &v).unwrap(), jsd(&v, &u).unwrap());
        assert_eq!(euclidean(&u, &v).unwrap(), euclidean(&v, &u).unwrap());
        assert_eq!(manhattan(&u, &v).unwrap(), manhattan(&v, &u).unwrap());
        assert_eq!(
            cosine_similarity(&u, &v).unwrap(),
            cosine_similarity(&v, &u).unwrap()
        );
    }

    #[test]
    fn dimension_and_zero_errors() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 0.0]).unwrap_err(),
            MetricsError::DimensionMismatch(1, 2)
        );
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            MetricsError::ZeroVector
        );
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        // order-1 model with huge smoothing is effectively uniform
        let m = NGramModel::train("a b", 1, 1e6).unwrap();
        let v = m.vocabulary().len() as f64;
        let seq = vec![m.vocabulary().id_of("a"), m.vocabulary().id_of("b")];
        let ppl = perplexity(&m, &[], &seq).unwrap();
        assert!((ppl - v).abs() / v < 1e-5, "{ppl} vs {v}");
    }

    #[test]
    fn near_deterministic_model_perplexity_near_one() {
        // heavily repeated bigram, tiny smoothing
        let corpus = std::iter::repeat_n("x y", 200).collect::<Vec<_>>().join("\n");
        let m = NGramModel::train(&corpus, 2, 0.001).unwrap();
        let x = m.vocabulary().id_of("x");
        let y = m.vocabulary().id_of("y");
        let ppl = perplexity(&m, &[x], &[y]).unwrap();
        assert!(ppl < 1.01, "{ppl}");
    }

    #[test]
    fn perplexity_on_training_corpus_finite_and_at_least_one() {
        let m = NGramModel::train("a b c a b c", 2, 1.0).unwrap();
        let seq = m.vocabulary().encode_line("a b c");
        let ppl = perplexity(&m, &[], &seq).unwrap();
        assert!(ppl.is_finite() && ppl >= 1.0);
    }
}
