//! Similarity scoring of generated pairs and top-fraction filtering.
//!
//! The primary scorer is BERTScore-style greedy matching: each candidate
//! token is paired with its most similar reference token under cosine
//! similarity of a pluggable embedding, and vice versa. A second scorer
//! slot defaults to character-trigram Jaccard. Scores are combined with a
//! weighted mean and only the best fraction of pairs is kept.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::text_similarity;
use crate::augmentation::GeneratedPair;
use crate::error::{Error, Result};
use crate::rng;
use crate::text;

pub const BERTSCORE: &str = "bertscore";
pub const TRIGRAM: &str = "trigram";
pub const COMBINED: &str = "combined";

pub trait EmbeddingProvider {
    fn embed(&self, token: &str) -> Vec<f64>;

    fn cosine(&self, a: &str, b: &str) -> f64 {
        cosine(&self.embed(a), &self.embed(b))
    }
}

impl<E: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<E> {
    fn embed(&self, token: &str) -> Vec<f64> {
        (**self).embed(token)
    }

    fn cosine(&self, a: &str, b: &str) -> f64 {
        (**self).cosine(a, b)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exact-match embeddings: cosine is 1 for identical tokens and 0 otherwise.
/// `embed` places known tokens on their own axis and every unknown token on
/// one shared extra axis; similarity never goes through it.
#[derive(Debug, Clone, Default)]
pub struct OneHotEmbedder {
    index: HashMap<String, usize>,
}

impl OneHotEmbedder {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(vocab: I) -> Self {
        let mut index = HashMap::new();
        for token in vocab {
            let n = index.len();
            index.entry(token.into()).or_insert(n);
        }
        OneHotEmbedder { index }
    }
}

impl EmbeddingProvider for OneHotEmbedder {
    fn embed(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.index.len() + 1];
        v[self.index.get(token).copied().unwrap_or(self.index.len())] = 1.0;
        v
    }

    fn cosine(&self, a: &str, b: &str) -> f64 {
        if a == b {
            1.0
        } else {
            0.0
        }
    }
}

/// Pseudo-random unit-free vectors: each token seeds its own stream, so the
/// vector depends only on `(seed, token)`.
#[derive(Debug, Clone)]
pub struct HashedRandomEmbedder {
    seed: u64,
    dim: usize,
}

impl HashedRandomEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        HashedRandomEmbedder { seed, dim: dim.max(1) }
    }
}

impl EmbeddingProvider for HashedRandomEmbedder {
    fn embed(&self, token: &str) -> Vec<f64> {
        let mut stream = rng::stream(self.seed, "embedding", token);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| stream.gen_range(-1.0..1.0)).collect();
            if v.iter().any(|x| *x != 0.0) {
                return v;
            }
        }
    }
}

/// Vectors read from a whitespace-separated `token v1 v2 ...` file. Tokens
/// not in the file fall back to exact matching.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbedder {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in raw.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let v = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 1, e))?;
            if v.is_empty() || *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::parse(path, i + 1, "vector dimension differs from the first line"));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::parse(path, i + 1, "vector must have a finite, non-zero norm"));
            }
            vectors.insert(token.to_lowercase(), v);
        }
        if vectors.is_empty() {
            return Err(Error::Config(format!("embedding file {} is empty", path.display())));
        }
        Ok(FileEmbedder { vectors })
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn embed(&self, token: &str) -> Vec<f64> {
        self.vectors.get(token).cloned().unwrap_or_default()
    }

    fn cosine(&self, a: &str, b: &str) -> f64 {
        match (self.vectors.get(a), self.vectors.get(b)) {
            (Some(x), Some(y)) => cosine(x, y),
            _ => f64::from(u8::from(a == b)),
        }
    }
}

/// Resolves `onehot`, `hashed-random(<seed>)` or `file:<path>`.
pub fn embedder_by_name(name: &str) -> Result<Box<dyn EmbeddingProvider>> {
    if name == "onehot" {
        return Ok(Box::new(OneHotEmbedder::default()));
    }
    if let Some(path) = name.strip_prefix("file:") {
        return Ok(Box::new(FileEmbedder::load(path)?));
    }
    if let Some(seed) = name.strip_prefix("hashed-random(").and_then(|s| s.strip_suffix(')')) {
        let seed = seed
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Config(format!("embedder `{name}`: bad seed: {e}")))?;
        return Ok(Box::new(HashedRandomEmbedder::new(seed, 64)));
    }
    Err(Error::Config(format!(
        "unknown embedder `{name}`; expected onehot, hashed-random(<seed>) or file:<path>"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn weighted_max_mean<E: EmbeddingProvider + ?Sized>(
    from: &[String],
    to: &[String],
    embedder: &E,
    idf: Option<&HashMap<String, f64>>,
) -> f64 {
    let weight = |t: &String| idf.map_or(1.0, |m| m.get(t).copied().unwrap_or(1.0));
    let (mut num, mut den) = (0.0, 0.0);
    for a in from {
        let best = to.iter().map(|b| embedder.cosine(a, b)).fold(f64::NEG_INFINITY, f64::max);
        let w = weight(a);
        num += w * best;
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Greedy max-cosine matching. Precision averages over candidate tokens,
/// recall over reference tokens.
pub fn greedy_match_f1<E: EmbeddingProvider + ?Sized>(
    candidate: &[String],
    reference: &[String],
    embedder: &E,
) -> Result<MatchScore> {
    greedy_match_f1_weighted(candidate, reference, embedder, None)
}

/// As [`greedy_match_f1`], with optional per-token IDF weights (tokens
/// missing from the map weigh 1).
pub fn greedy_match_f1_weighted<E: EmbeddingProvider + ?Sized>(
    candidate: &[String],
    reference: &[String],
    embedder: &E,
    idf: Option<&HashMap<String, f64>>,
) -> Result<MatchScore> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Argument("greedy matching needs non-empty token lists".into()));
    }
    let precision = weighted_max_mean(candidate, reference, embedder, idf);
    let recall = weighted_max_mean(reference, candidate, embedder, idf);
    Ok(MatchScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// `ln((M + 1) / (df + 1))` over `documents`, each tokenized and lowercased.
pub fn idf_weights<S: AsRef<str>>(documents: &[S]) -> HashMap<String, f64> {
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in documents {
        let mut tokens = text::normalized_tokens(doc.as_ref());
        tokens.sort();
        tokens.dedup();
        for t in tokens {
            *df.entry(t).or_default() += 1;
        }
    }
    let m = documents.len() as f64;
    df.into_iter()
        .map(|(t, n)| (t, ((m + 1.0) / (n as f64 + 1.0)).ln()))
        .collect()
}

/// A named similarity between a source sentence and its generation.
pub trait PairScorer {
    fn name(&self) -> &str;
    fn score(&self, source: &str, generated: &str) -> Result<f64>;
}

pub struct BertScoreScorer<E> {
    pub embedder: E,
    pub idf: Option<HashMap<String, f64>>,
}

impl<E: EmbeddingProvider> PairScorer for BertScoreScorer<E> {
    fn name(&self) -> &str {
        BERTSCORE
    }

    fn score(&self, source: &str, generated: &str) -> Result<f64> {
        let cand = text::normalized_tokens(generated);
        let refs = text::normalized_tokens(source);
        Ok(greedy_match_f1_weighted(&cand, &refs, &self.embedder, self.idf.as_ref())?.f1)
    }
}

pub struct TrigramScorer;

impl PairScorer for TrigramScorer {
    fn name(&self) -> &str {
        TRIGRAM
    }

    fn score(&self, source: &str, generated: &str) -> Result<f64> {
        Ok(text_similarity(source, generated))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub keep_fraction: f64,
    pub weights: BTreeMap<String, f64>,
    pub embedder: String,
    pub idf: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            keep_fraction: 0.15,
            weights: BTreeMap::from([(BERTSCORE.to_string(), 0.5), (TRIGRAM.to_string(), 0.5)]),
            embedder: "onehot".to_string(),
            idf: false,
        }
    }
}

impl FilterConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            out.push(format!("keep_fraction: must lie in (0, 1], got {}", self.keep_fraction));
        }
        if let Err(e) = check_weights(&self.weights) {
            out.push(format!("weights: {e}"));
        }
        out
    }
}

fn check_weights(weights: &BTreeMap<String, f64>) -> std::result::Result<(), String> {
    if weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err("weights must be non-negative".into());
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("weights sum to {total}, expected 1"));
    }
    Ok(())
}

/// Weighted mean of the named scores. Scores without a weight are ignored;
/// a weight naming a missing score is a configuration error.
pub fn combined_score(scores: &BTreeMap<String, f64>, weights: &BTreeMap<String, f64>) -> Result<f64> {
    check_weights(weights).map_err(Error::Config)?;
    let mut total = 0.0;
    for (name, w) in weights {
        let s = scores
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown scorer `{name}` in weights")))?;
        total += w * s;
    }
    Ok(total)
}

/// Number of items kept out of `n`: `ceil(keep_fraction * n)`, guarded
/// against floating-point overshoot at exact products.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let exact = keep_fraction * n as f64;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    k.clamp(1, n)
}

/// Keeps the `ceil(keep_fraction * n)` highest-scoring items. Ties go to the
/// earlier item; the kept items stay in input order. NaN scores rank last.
pub fn filter_top_fraction<T>(scored: Vec<(T, f64)>, keep_fraction: f64) -> Vec<T> {
    let k = keep_count(scored.len(), keep_fraction);
    let mut order: Vec<usize> = (0..scored.len()).collect();
    let key = |i: usize| if scored[i].1.is_nan() { f64::NEG_INFINITY } else { scored[i].1 };
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut keep = vec![false; scored.len()];
    for &i in &order[..k] {
        keep[i] = true;
    }
    scored
        .into_iter()
        .zip(keep)
        .filter_map(|((item, _), kept)| kept.then_some(item))
        .collect()
}

/// Scores every pair with each scorer, records the weighted combination
/// under `"combined"`, and keeps the top fraction by that value.
pub fn score_and_filter(
    mut pairs: Vec<GeneratedPair>,
    scorers: &[&dyn PairScorer],
    cfg: &FilterConfig,
) -> Result<Vec<GeneratedPair>> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut scored = Vec::with_capacity(pairs.len());
    for mut pair in pairs.drain(..) {
        for scorer in scorers {
            let s = if pair.generated.trim().is_empty() || pair.source.trim().is_empty() {
                0.0
            } else {
                scorer.score(&pair.source, &pair.generated)?
            };
            pair.scores.insert(scorer.name().to_string(), s);
        }
        let combined = combined_score(&pair.scores, &cfg.weights)?;
        pair.scores.insert(COMBINED.to_string(), combined);
        scored.push((pair, combined));
    }
    Ok(filter_top_fraction(scored, cfg.keep_fraction))
}
