//! Image-text-matching scorers.
//!
//! A [`Scorer`] rates sentences against an image and returns one
//! nonnegative score per sentence. Two implementations:
//!
//! - [`MockScorer`]: a deterministic oracle for desk-scale training and
//!   tests. A sentence that string-equals the full-variant grounding of a
//!   ground-truth triplet scores `positive_level`, anything else
//!   `negative_level`, plus optional seeded Gaussian noise clipped at 0.
//! - [`RemoteScorer`]: an adapter for an external VLM ITM service speaking
//!   `POST /itm {"image_b64", "texts"} -> {"scores"}`. Transport is a
//!   trait so tests can run without a network; responses are cached by
//!   (image digest, sentence) and optionally persisted.
//!
//! Scores are constants with respect to model parameters: the VLM is
//! frozen, and the gradient path is built from the sentence selection
//! weights in the loss module.

use crate::grounding::{ground_triplet, PromptVariant};
use crate::types::ImageAnnotation;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

/// Nonnegative scores, one per input sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItmScoreVector {
    scores: Vec<f64>,
}

impl ItmScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self, ScorerError> {
        for &s in &scores {
            if !s.is_finite() || s < 0.0 {
                return Err(ScorerError::MalformedResponse(format!(
                    "score {s} is not a finite nonnegative number"
                )));
            }
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("server returned status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("unknown image `{0}` (mock scorer needs the annotation)")]
    UnknownImage(String),
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// Uniform scorer contract.
pub trait Scorer {
    /// One score per sentence, aligned with the input order.
    fn score(
        &self,
        image: &ImageAnnotation,
        sentences: &[String],
    ) -> Result<ItmScoreVector, ScorerError>;

    /// Digest of all scoring-relevant state. Training must leave it
    /// unchanged (the VLM is frozen); caches are excluded by design since
    /// cache transparency is guaranteed separately.
    fn state_digest(&self) -> String;
}

/// Mock oracle configuration. The default 2.0 / 0.1 levels mirror the
/// positive/negative score separation of BLIP-class ITM heads, which makes
/// the default margin 1 meaningful at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockScorerConfig {
    pub positive_level: f64,
    pub negative_level: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for MockScorerConfig {
    fn default() -> Self {
        Self {
            positive_level: 2.0,
            negative_level: 0.1,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl MockScorerConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if !(self.positive_level > self.negative_level && self.negative_level >= 0.0) {
            return Err(ScorerError::MalformedResponse(format!(
                "mock levels must satisfy positive > negative >= 0, got {} / {}",
                self.positive_level, self.negative_level
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(ScorerError::MalformedResponse(
                "noise sigma must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic stand-in for a frozen VLM.
#[derive(Debug, Clone)]
pub struct MockScorer {
    vocab: Vocabulary,
    cfg: MockScorerConfig,
}

impl MockScorer {
    pub fn new(vocab: Vocabulary, cfg: MockScorerConfig) -> Result<Self, ScorerError> {
        cfg.validate()?;
        Ok(Self { vocab, cfg })
    }

    pub fn config(&self) -> &MockScorerConfig {
        &self.cfg
    }

    /// Score one sentence against one annotation.
    pub fn oracle_score(&self, annotation: &ImageAnnotation, sentence: &str) -> f64 {
        let base = if self.matches_gt_grounding(annotation, sentence) {
            self.cfg.positive_level
        } else {
            self.cfg.negative_level
        };
        if self.cfg.noise_sigma == 0.0 {
            return base;
        }
        // Noise is a pure function of (seed, image, sentence) so scores do
        // not depend on call order or caching.
        let mut hasher = Sha256::new();
        hasher.update(self.cfg.seed.to_le_bytes());
        hasher.update(annotation.image_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(sentence.as_bytes());
        let digest = hasher.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().expect("digest length"));
        let bits2 = u64::from_le_bytes(digest[8..16].try_into().expect("digest length"));
        let noise = gaussian_from_bits(bits, bits2) * self.cfg.noise_sigma;
        (base + noise).max(0.0)
    }

    fn matches_gt_grounding(&self, annotation: &ImageAnnotation, sentence: &str) -> bool {
        annotation.gt_triplets.iter().any(|gt| {
            ground_triplet(gt, &self.vocab, PromptVariant::Full)
                .map(|s| s == sentence)
                .unwrap_or(false)
        })
    }
}

/// Box-Muller on two fixed uniform draws.
fn gaussian_from_bits(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((b >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Scorer for MockScorer {
    fn score(
        &self,
        image: &ImageAnnotation,
        sentences: &[String],
    ) -> Result<ItmScoreVector, ScorerError> {
        ItmScoreVector::new(
            sentences
                .iter()
                .map(|s| self.oracle_score(image, s))
                .collect(),
        )
    }

    fn state_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"mock-scorer-v1");
        hasher.update(serde_json::to_vec(&self.cfg).expect("config serializes"));
        hasher.update(serde_json::to_vec(&self.vocab).expect("vocab serializes"));
        hex::encode(hasher.finalize())
    }
}

/// Wire request for the remote ITM service.
#[derive(Debug, Serialize, Deserialize)]
pub struct ItmRequest {
    pub image_b64: String,
    pub texts: Vec<String>,
}

/// Wire response from the remote ITM service.
#[derive(Debug, Serialize, Deserialize)]
pub struct ItmResponse {
    pub scores: Vec<f64>,
}

/// Blocking transport used by [`RemoteScorer`]; implemented over HTTP in
/// the CLI and over in-memory fakes in tests.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        endpoint: &str,
        body: &str,
        timeout: Duration,
    ) -> Result<String, ScorerError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteScorerConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Directory for the persistent score cache; `None` keeps it in memory
    /// only. The `HOIKIT_CACHE_DIR` environment variable supplies this in
    /// the CLI.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8600/itm".into(),
            timeout_ms: 10_000,
            retries: 1,
            cache_dir: None,
        }
    }
}

/// Adapter for an external (frozen) VLM ITM service.
pub struct RemoteScorer<T: Transport> {
    cfg: RemoteScorerConfig,
    transport: T,
    cache: Mutex<HashMap<(String, String), f64>>,
    calls: AtomicUsize,
}

impl<T: Transport> RemoteScorer<T> {
    pub fn new(cfg: RemoteScorerConfig, transport: T) -> Result<Self, ScorerError> {
        let mut cache = HashMap::new();
        if let Some(dir) = &cfg.cache_dir {
            let path = Self::cache_file(dir);
            if path.exists() {
                let text = std::fs::read_to_string(&path)?;
                for line in text.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CacheEntry = serde_json::from_str(line)
                        .map_err(|e| ScorerError::MalformedResponse(format!("cache line: {e}")))?;
                    cache.insert((entry.image, entry.sentence), entry.score);
                }
            }
        }
        Ok(Self {
            cfg,
            transport,
            cache: Mutex::new(cache),
            calls: AtomicUsize::new(0),
        })
    }

    fn cache_file(dir: &Path) -> PathBuf {
        dir.join("itm_cache.jsonl")
    }

    /// Network round-trips performed so far (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// SHA-256 of the image bytes when the annotation points at a readable
    /// file, else the image id.
    fn image_key(&self, image: &ImageAnnotation) -> (String, Option<Vec<u8>>) {
        if let Some(path) = &image.image_ref {
            if let Ok(bytes) = std::fs::read(path) {
                let digest = hex::encode(Sha256::digest(&bytes));
                return (digest, Some(bytes));
            }
        }
        (format!("id:{}", image.image_id), None)
    }

    fn persist(&self, entries: &[CacheEntry]) -> Result<(), ScorerError> {
        if let Some(dir) = &self.cfg.cache_dir {
            std::fs::create_dir_all(dir)?;
            use std::io::Write;
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(Self::cache_file(dir))?;
            for e in entries {
                let line = serde_json::to_string(e)
                    .map_err(|err| ScorerError::MalformedResponse(err.to_string()))?;
                writeln!(file, "{line}")?;
            }
        }
        Ok(())
    }

    fn post_with_retries(&self, body: &str) -> Result<String, ScorerError> {
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let mut last_err = None;
        for _ in 0..=self.cfg.retries {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.post_json(&self.cfg.endpoint, body, timeout) {
                Ok(resp) => return Ok(resp),
                Err(e @ ScorerError::Timeout(_)) | Err(e @ ScorerError::Transport(_)) => {
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or_else(|| ScorerError::Transport("no attempts made".into())))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    image: String,
    sentence: String,
    score: f64,
}

impl<T: Transport> Scorer for RemoteScorer<T> {
    fn score(
        &self,
        image: &ImageAnnotation,
        sentences: &[String],
    ) -> Result<ItmScoreVector, ScorerError> {
        if sentences.is_empty() {
            return ItmScoreVector::new(Vec::new());
        }
        let (key, bytes) = self.image_key(image);

        let mut out: Vec<Option<f64>> = vec![None; sentences.len()];
        let mut missing: Vec<usize> = Vec::new();
        {
            let cache = self.cache.lock().expect("scorer cache poisoned");
            for (i, s) in sentences.iter().enumerate() {
                match cache.get(&(key.clone(), s.clone())) {
                    Some(&v) => out[i] = Some(v),
                    None => missing.push(i),
                }
            }
        }

        if !missing.is_empty() {
            let image_b64 = match &bytes {
                Some(b) => base64::Engine::encode(&base64::engine::general_purpose::STANDARD, b),
                None => base64::Engine::encode(
                    &base64::engine::general_purpose::STANDARD,
                    image.image_id.as_bytes(),
                ),
            };
            let texts: Vec<String> = missing.iter().map(|&i| sentences[i].clone()).collect();
            let req = ItmRequest { image_b64, texts };
            let body = serde_json::to_string(&req)
                .map_err(|e| ScorerError::MalformedResponse(e.to_string()))?;
            let resp_text = self.post_with_retries(&body)?;
            let resp: ItmResponse = serde_json::from_str(&resp_text)
                .map_err(|e| ScorerError::MalformedResponse(e.to_string()))?;
            if resp.scores.len() != missing.len() {
                return Err(ScorerError::MalformedResponse(format!(
                    "requested {} scores, server returned {}",
                    missing.len(),
                    resp.scores.len()
                )));
            }
            // validate before caching
            ItmScoreVector::new(resp.scores.clone())?;

            let mut entries = Vec::with_capacity(missing.len());
            {
                let mut cache = self.cache.lock().expect("scorer cache poisoned");
                for (&i, &score) in missing.iter().zip(resp.scores.iter()) {
                    out[i] = Some(score);
                    cache.insert((key.clone(), sentences[i].clone()), score);
                    entries.push(CacheEntry {
                        image: key.clone(),
                        sentence: sentences[i].clone(),
                        score,
                    });
                }
            }
            self.persist(&entries)?;
        }

        ItmScoreVector::new(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn state_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"remote-scorer-v1");
        hasher.update(self.cfg.endpoint.as_bytes());
        hasher.update(self.cfg.timeout_ms.to_le_bytes());
        hasher.update(self.cfg.retries.to_le_bytes());
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::types::HOITriplet;

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(&["bike", "cup"], &["ride", "eat"], &[]).unwrap()
    }

    fn annotation(vocab: &Vocabulary) -> ImageAnnotation {
        let mut ann = ImageAnnotation::new("img0", 100, 100);
        let b = BBox::new(0.5, 0.5, 0.2, 0.2);
        ann.gt_triplets.push(HOITriplet::gt(
            b,
            b,
            vocab.object_id("bike").unwrap(),
            vocab.verb_id("ride").unwrap(),
        ));
        ann
    }

    #[test]
    fn positive_sentence_scores_positive_level() {
        let v = vocab();
        let s = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        let ann = annotation(&v);
        assert_eq!(s.oracle_score(&ann, "A person ride a bike"), 2.0);
    }

    #[test]
    fn non_grounding_sentence_scores_negative_level() {
        let v = vocab();
        let s = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        let ann = annotation(&v);
        assert_eq!(s.oracle_score(&ann, "A person eat a bike"), 0.1);
    }

    #[test]
    fn empty_sentence_list_yields_empty_vector() {
        let v = vocab();
        let s = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        let ann = annotation(&v);
        assert!(s.score(&ann, &[]).unwrap().is_empty());
    }

    #[test]
    fn noisy_scores_are_reproducible() {
        let v = vocab();
        let cfg = MockScorerConfig {
            noise_sigma: 0.05,
            seed: 9,
            ..Default::default()
        };
        let s = MockScorer::new(v.clone(), cfg).unwrap();
        let ann = annotation(&v);
        let a = s.oracle_score(&ann, "A person ride a bike");
        let b = s.oracle_score(&ann, "A person ride a bike");
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a.to_bits(), 2.0f64.to_bits());
        assert!(a >= 0.0);
    }

    #[test]
    fn score_separation_is_exact_without_noise() {
        let v = vocab();
        let s = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        let ann = annotation(&v);
        let pos = s.oracle_score(&ann, "A person ride a bike");
        let neg = s.oracle_score(&ann, "A person ride a cup");
        assert_eq!(pos - neg, 2.0 - 0.1);
    }

    #[test]
    fn invalid_mock_levels_rejected() {
        let v = vocab();
        let cfg = MockScorerConfig {
            positive_level: 0.1,
            negative_level: 0.5,
            ..Default::default()
        };
        assert!(MockScorer::new(v, cfg).is_err());
    }

    #[test]
    fn digest_is_stable_and_config_sensitive() {
        let v = vocab();
        let a = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        let b = MockScorer::new(v.clone(), MockScorerConfig::default()).unwrap();
        assert_eq!(a.state_digest(), b.state_digest());
        let c = MockScorer::new(
            v,
            MockScorerConfig {
                positive_level: 3.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.state_digest(), c.state_digest());
    }

    /// Transport fake that returns canned responses and counts calls.
    struct FakeTransport {
        responses: Mutex<Vec<Result<String, ScorerError>>>,
    }

    impl FakeTransport {
        fn new(responses: Vec<Result<String, ScorerError>>) -> Self {
            Self {
                responses: Mutex::new(responses),
            }
        }
    }

    impl Transport for FakeTransport {
        fn post_json(
            &self,
            _endpoint: &str,
            body: &str,
            _timeout: Duration,
        ) -> Result<String, ScorerError> {
            let mut rs = self.responses.lock().unwrap();
            if rs.is_empty() {
                // echo protocol: every text scores 1.5
                let req: ItmRequest = serde_json::from_str(body).unwrap();
                return Ok(serde_json::to_string(&ItmResponse {
                    scores: vec![1.5; req.texts.len()],
                })
                .unwrap());
            }
            rs.remove(0)
        }
    }

    #[test]
    fn remote_scores_align_with_input_order() {
        let scorer = RemoteScorer::new(
            RemoteScorerConfig::default(),
            FakeTransport::new(vec![Ok(r#"{"scores": [0.4, 1.9]}"#.into())]),
        )
        .unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        let out = scorer
            .score(&ann, &["first".into(), "second".into()])
            .unwrap();
        assert_eq!(out.scores(), &[0.4, 1.9]);
        assert_eq!(scorer.network_calls(), 1);
    }

    #[test]
    fn repeated_request_served_from_cache() {
        let scorer =
            RemoteScorer::new(RemoteScorerConfig::default(), FakeTransport::new(vec![])).unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        let sents = vec!["alpha".to_string(), "beta".to_string()];
        let first = scorer.score(&ann, &sents).unwrap();
        assert_eq!(scorer.network_calls(), 1);
        let second = scorer.score(&ann, &sents).unwrap();
        assert_eq!(scorer.network_calls(), 1, "second call must hit the cache");
        assert_eq!(first, second);
    }

    #[test]
    fn length_mismatch_is_malformed_response() {
        let scorer = RemoteScorer::new(
            RemoteScorerConfig::default(),
            FakeTransport::new(vec![Ok(r#"{"scores": [1.0, 2.0, 3.0]}"#.into())]),
        )
        .unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        let err = scorer
            .score(&ann, &["one".into(), "two".into()])
            .unwrap_err();
        assert!(matches!(err, ScorerError::MalformedResponse(_)));
    }

    #[test]
    fn negative_score_is_malformed_response() {
        let scorer = RemoteScorer::new(
            RemoteScorerConfig::default(),
            FakeTransport::new(vec![Ok(r#"{"scores": [-0.2]}"#.into())]),
        )
        .unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        assert!(matches!(
            scorer.score(&ann, &["one".into()]).unwrap_err(),
            ScorerError::MalformedResponse(_)
        ));
    }

    #[test]
    fn transport_errors_are_retried_then_surfaced() {
        let scorer = RemoteScorer::new(
            RemoteScorerConfig {
                retries: 2,
                ..Default::default()
            },
            FakeTransport::new(vec![
                Err(ScorerError::Transport("boom".into())),
                Err(ScorerError::Timeout(Duration::from_millis(5))),
                Err(ScorerError::Transport("boom again".into())),
            ]),
        )
        .unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        let err = scorer.score(&ann, &["one".into()]).unwrap_err();
        assert_eq!(scorer.network_calls(), 3);
        assert!(matches!(err, ScorerError::Transport(_)));
    }

    #[test]
    fn status_errors_are_not_retried() {
        let scorer = RemoteScorer::new(
            RemoteScorerConfig {
                retries: 3,
                ..Default::default()
            },
            FakeTransport::new(vec![Err(ScorerError::Status(500))]),
        )
        .unwrap();
        let ann = ImageAnnotation::new("imgA", 10, 10);
        let err = scorer.score(&ann, &["one".into()]).unwrap_err();
        assert_eq!(scorer.network_calls(), 1);
        assert!(matches!(err, ScorerError::Status(500)));
    }

    #[test]
    fn cache_persists_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RemoteScorerConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let ann = ImageAnnotation::new("imgA", 10, 10);
        {
            let scorer = RemoteScorer::new(cfg.clone(), FakeTransport::new(vec![])).unwrap();
            scorer.score(&ann, &["alpha".into()]).unwrap();
            assert_eq!(scorer.network_calls(), 1);
        }
        let scorer = RemoteScorer::new(
            cfg,
            FakeTransport::new(vec![Err(ScorerError::Transport(
                "network must not be touched".into(),
            ))]),
        )
        .unwrap();
        let out = scorer.score(&ann, &["alpha".into()]).unwrap();
        assert_eq!(out.scores(), &[1.5]);
        assert_eq!(scorer.network_calls(), 0);
    }
}
