use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::{EmbedError, Embedder};

/// Deterministic stand-in for a language model.
///
/// Each text is broken into lower-cased character trigrams (padded with a
/// space on both ends) and whole words. Every feature is hashed with a
/// seeded xxh3 into one of `dimension` buckets; the bucket counts are then
/// L2-normalized. Texts sharing many n-grams end up close in cosine terms.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    model_id: String,
    dimension: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(model_id: impl Into<String>, dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "mock dimension must be positive");
        Self {
            model_id: model_id.into(),
            dimension,
            seed,
        }
    }

    fn vectorize(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        let lower = text.to_lowercase();
        let mut bump = |feature: &[u8], weight: f64| {
            let h = xxh3_64_with_seed(feature, self.seed);
            out[(h % self.dimension as u64) as usize] += weight;
        };

        let padded: Vec<char> = std::iter::once(' ')
            .chain(lower.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = String::new();
        for w in padded.windows(3) {
            buf.clear();
            buf.extend(w);
            bump(buf.as_bytes(), 1.0);
        }
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            buf.clear();
            buf.push('#');
            buf.push_str(word);
            bump(buf.as_bytes(), 2.0);
        }

        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }
}

impl Embedder for MockEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Err(EmbedError::EmptyText)
                } else {
                    Ok(self.vectorize(t))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::{distributions::Alphanumeric, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::embedding::cosine_similarity;

    #[test]
    fn same_text_same_vector() {
        let m = MockEmbedder::new("mock", 8, 7);
        let a = m.embed("abc").unwrap();
        let b = m.embed("abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dimension(), 8);
        assert!(a.values.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn seed_changes_the_projection() {
        let a = MockEmbedder::new("mock", 64, 1).embed("level crossing").unwrap();
        let b = MockEmbedder::new("mock", 64, 2).embed("level crossing").unwrap();
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn shared_ngrams_score_higher() {
        let m = MockEmbedder::new("mock", 256, 0);
        let q = m.embed("crossing mark at level crossing").unwrap();
        let near = m.embed("level crossing mark").unwrap();
        let far = m.embed("tunnel ventilation fan").unwrap();
        assert!(
            cosine_similarity(&q, &near).unwrap() > cosine_similarity(&q, &far).unwrap()
        );
    }

    #[test]
    fn self_similarity_is_one() {
        let m = MockEmbedder::new("mock", 32, 0);
        let v = m.embed("drainage pipe").unwrap();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn random_strings_do_not_collide() {
        let m = MockEmbedder::new("mock", 32, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut texts = HashSet::new();
        while texts.len() < 10_000 {
            let len = rng.gen_range(4..40);
            let s: String = (&mut rng)
                .sample_iter(&Alphanumeric)
                .take(len)
                .map(char::from)
                .collect();
            texts.insert(s.to_lowercase());
        }
        let mut seen = HashSet::new();
        for t in &texts {
            let v = m.embed(t).unwrap();
            let bits: Vec<u64> = v.values.iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(bits), "collision on {t:?}");
        }
    }
}
