use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbedInput, EmbeddingProvider, ProviderId};

/// Deterministic, network-free embedder.
///
/// Content is hashed together with the seed into a ChaCha stream that draws
/// a Gaussian vector, so distinct contents map to effectively independent
/// directions. In planted mode a fixed vocabulary of topic tokens is mapped
/// to orthonormal directions; any content containing a topic token is
/// placed at `sqrt(w) * topic + sqrt(1 - w) * noise` with the noise drawn
/// orthogonal to every topic direction. Two contents sharing a topic then
/// have cosine at least `2w - 1`, and contents with different topics have
/// cosine at most `1 - w` in absolute value.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    id: ProviderId,
    seed: u64,
    dims: usize,
    planted: Option<Planted>,
}

#[derive(Debug, Clone)]
struct Planted {
    topics: Vec<String>,
    basis: Vec<Vec<f64>>,
    weight: f64,
}

pub const DEFAULT_PLANTED_WEIGHT: f64 = 0.9;

impl OfflineEmbedder {
    pub fn new(seed: u64, dims: usize) -> Self {
        assert!(dims > 0, "dims must be positive");
        Self {
            id: ProviderId::new(format!("offline-v1/seed{seed}/d{dims}")),
            seed,
            dims,
            planted: None,
        }
    }

    /// Planted-topic mode. Needs `topics.len() < dims` so that some noise
    /// subspace remains.
    pub fn planted(seed: u64, dims: usize, topics: Vec<String>, weight: f64) -> Self {
        assert!(topics.len() < dims, "planted mode needs fewer topics than dims");
        assert!((0.0..=1.0).contains(&weight), "planted weight must lie in [0, 1]");
        let topics: Vec<String> = topics.into_iter().map(|t| t.to_lowercase()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x746f_7069_6373);
        let basis = random_orthonormal(&mut rng, dims, topics.len());
        let mut h = Sha256::new();
        for t in &topics {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.update(weight.to_le_bytes());
        let tag = &hex::encode(h.finalize())[..12];
        Self {
            id: ProviderId::new(format!("offline-v1/seed{seed}/d{dims}/planted-{tag}")),
            seed,
            dims,
            planted: Some(Planted { topics, basis, weight }),
        }
    }

    /// Index of the first vocabulary topic occurring as a token in `text`.
    pub fn topic_of(&self, text: &str) -> Option<usize> {
        let planted = self.planted.as_ref()?;
        let tokens: Vec<String> = text
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        planted.topics.iter().position(|topic| tokens.iter().any(|t| t == topic))
    }

    fn noise(&self, input: &EmbedInput<'_>) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        match input {
            EmbedInput::Text(t) => {
                h.update(b"text");
                h.update((t.len() as u64).to_le_bytes());
                h.update(t.as_bytes());
            }
            EmbedInput::Image { bytes, caption } => {
                h.update(b"image");
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(bytes);
                h.update((caption.len() as u64).to_le_bytes());
                h.update(caption.as_bytes());
            }
        }
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

impl EmbeddingProvider for OfflineEmbedder {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_raw(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, EmbedError> {
        let mut noise = self.noise(&input);
        let Some(planted) = &self.planted else {
            return Ok(normalize(noise).into_iter().map(|v| v as f32).collect());
        };
        for dir in &planted.basis {
            let proj = dot(&noise, dir);
            for (n, d) in noise.iter_mut().zip(dir) {
                *n -= proj * d;
            }
        }
        let noise = normalize(noise);
        let text = match input {
            EmbedInput::Text(t) => t,
            EmbedInput::Image { caption, .. } => caption,
        };
        let out = match self.topic_of(text) {
            Some(t) => {
                let a = planted.weight.sqrt();
                let b = (1.0 - planted.weight).sqrt();
                planted.basis[t].iter().zip(&noise).map(|(u, n)| a * u + b * n).collect()
            }
            None => noise,
        };
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// `count` orthonormal vectors in `dims` dimensions (modified Gram-Schmidt
/// over Gaussian draws).
pub(crate) fn random_orthonormal<R: Rng>(rng: &mut R, dims: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(count <= dims);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine_similarity, embed_text};

    #[test]
    fn deterministic_and_sized() {
        let p = OfflineEmbedder::new(7, 16);
        let a = embed_text(&p, "abc").unwrap();
        assert_eq!(a, embed_text(&p, "abc").unwrap());
        assert_eq!(a.dims(), 16);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let other_seed = OfflineEmbedder::new(8, 16);
        assert_ne!(a, embed_text(&other_seed, "abc").unwrap());
    }

    #[test]
    fn text_and_caption_differ() {
        let p = OfflineEmbedder::new(1, 32);
        let a = p.embed_raw(EmbedInput::Text("x")).unwrap();
        let b = p.embed_raw(EmbedInput::Image { bytes: b"", caption: "x" }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_orthonormal(&mut rng, 8, 8);
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&b[i], &b[j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn planted_topics_detected_as_tokens() {
        let p = OfflineEmbedder::planted(1, 16, vec!["alpha".into(), "beta".into()], 0.9);
        assert_eq!(p.topic_of("about ALPHA things"), Some(0));
        assert_eq!(p.topic_of("alphabet soup"), None);
        assert_eq!(p.topic_of("beta, then alpha"), Some(0));
        let a = embed_text(&p, "alpha one").unwrap();
        let b = embed_text(&p, "two alpha").unwrap();
        let c = embed_text(&p, "beta three").unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() >= 0.8);
        assert!(cosine_similarity(&a, &c).unwrap().abs() <= 0.2);
    }
}
