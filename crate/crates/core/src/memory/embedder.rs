use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::model::HttpConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("embedding failed: {0}")]
pub struct EmbedError(pub String);

/// Maps text to a vector. Must be deterministic for a given input.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for x in &mut v {
            *x /= norm;
        }
    } else if !v.is_empty() {
        // degenerate input still gets a unit vector
        v.fill(0.0);
        v[0] = 1.0;
    }
    v
}

/// Seeded bag-of-words hashing embedder.
///
/// Each lowercase word seeds a ChaCha stream that yields its vector; a text
/// embeds to the normalized sum of its word vectors, so texts sharing words
/// have positive cosine similarity.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for x in out.iter_mut() {
            *x += rng.random_range(-1.0..1.0);
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(64, 0)
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            self.token_vector(token, &mut v);
            any = true;
        }
        if !any {
            self.token_vector(&lower, &mut v);
        }
        Ok(normalize(v))
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    config: HttpConfig,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, model: impl Into<String>, dimension: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpEmbedder {
            config,
            model: model.into(),
            dimension,
            agent,
        }
    }

    pub fn parse_response(body: &Value) -> Result<Vec<f64>, EmbedError> {
        body.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| EmbedError("response has no data[0].embedding".into()))
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut request = self.agent.post(self.config.url("/embeddings"));
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(json!({"model": self.model, "input": text}))
            .map_err(|e| EmbedError(e.to_string()))?;
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError(e.to_string()))?;
        let v = Self::parse_response(&body)?;
        if v.len() != self.dimension {
            return Err(EmbedError(format!(
                "expected dimension {}, got {}",
                self.dimension,
                v.len()
            )));
        }
        Ok(normalize(v))
    }
}
