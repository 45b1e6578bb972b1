//! Paraphrase generation from instruction templates with self-debiased
//! decoding.
//!
//! For a source sentence the target instruction (e.g. "mean the same thing")
//! and each counter instruction are rendered into prompts. At every step the
//! model is queried on all prompts extended with the tokens emitted so far,
//! and the target distribution is pushed away from tokens the counter
//! prompts favour before a token is picked.

pub mod lm;
pub mod templates;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{segment_sentences, ProgressNote};
use crate::error::{Error, Result};
use crate::rng;
use crate::text;

pub use lm::{ConditionalBigramLm, LanguageModel, TokenId, Vocab};
pub use templates::{InstructionTemplate, LabelId, TemplateSet};

const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_output_tokens: usize,
    pub lambda: f64,
    /// `None` decodes greedily; `Some(k)` samples among the `k` most likely tokens.
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_output_tokens: 40,
            lambda: 1.0,
            top_k: None,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_output_tokens == 0 {
            out.push("max_output_tokens: must be at least 1".to_string());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            out.push(format!("lambda: must be a non-negative number, got {}", self.lambda));
        }
        if self.top_k == Some(0) {
            out.push("top_k: must be at least 1".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub doc_id: String,
    pub source: String,
    pub generated: String,
    pub label: LabelId,
    pub required_terms: Vec<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

/// Items of a problem list: split on newlines and `;`, with bullets and
/// numbering removed. Empty items are dropped.
pub fn problem_list_items(problem_list: &str) -> impl Iterator<Item = &str> {
    problem_list.split(['\n', ';']).map(|item| {
        let item = item.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | '*' | '•' | '#'));
        let digits = item.bytes().take_while(u8::is_ascii_digit).count();
        let item = if digits > 0 && matches!(item.as_bytes().get(digits), Some(b'.' | b')')) {
            &item[digits + 1..]
        } else {
            item
        };
        item.trim()
    })
    .filter(|item| !item.is_empty())
}

/// Problem-list items that also occur in `source` (case-insensitive, on
/// token boundaries), longest first, at most two. Returned in the source's
/// own spelling. An item whose occurrence overlaps a longer selected item is
/// skipped.
pub fn select_terms(source: &str, problem_list: &str) -> Vec<String> {
    let tokens = text::tokenize(source);
    let lowered: Vec<String> = tokens.iter().map(|t| t.text(source).to_lowercase()).collect();

    let mut found: Vec<(usize, usize, usize, String)> = Vec::new();
    for item in problem_list_items(problem_list) {
        let needle = text::normalized_tokens(item);
        if needle.is_empty() || needle.len() > lowered.len() {
            continue;
        }
        if let Some(start) = lowered.windows(needle.len()).position(|w| w == needle.as_slice()) {
            let end = start + needle.len();
            let surface = source[tokens[start].start..tokens[end - 1].end].to_string();
            if !found.iter().any(|f| f.3.eq_ignore_ascii_case(&surface)) {
                found.push((surface.chars().count(), start, end, surface));
            }
        }
    }
    found.sort_by(|a, b| b.0.cmp(&a.0));
    let mut kept: Vec<(usize, usize, usize, String)> = Vec::new();
    for f in found {
        if kept.len() == 2 {
            break;
        }
        if kept.iter().all(|k| f.2 <= k.1 || k.2 <= f.1) {
            kept.push(f);
        }
    }
    kept.into_iter().map(|f| f.3).collect()
}

/// True when every required term occurs in `generated`, ignoring case.
pub fn validate_terms<S: AsRef<str>>(generated: &str, required_terms: &[S]) -> bool {
    let haystack = generated.to_lowercase();
    required_terms
        .iter()
        .all(|t| haystack.contains(&t.as_ref().to_lowercase()))
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("probability {x} is not a finite non-negative number"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

/// `s(t) = max(0, p_target(t) − lambda · max_c p_c(t))`, renormalized. If
/// every score is zero the target distribution is returned unchanged.
pub fn self_debias_step(p_target: &[f64], p_counters: &[Vec<f64>], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Argument(format!("lambda must be non-negative, got {lambda}")));
    }
    check_distribution(p_target).map_err(|e| Error::Argument(format!("target distribution: {e}")))?;
    for (i, c) in p_counters.iter().enumerate() {
        if c.len() != p_target.len() {
            return Err(Error::Argument(format!(
                "counter distribution {i} has {} entries, target has {}",
                c.len(),
                p_target.len()
            )));
        }
        check_distribution(c).map_err(|e| Error::Argument(format!("counter distribution {i}: {e}")))?;
    }
    if lambda == 0.0 || p_counters.is_empty() {
        return Ok(p_target.to_vec());
    }
    let mut scores: Vec<f64> = p_target
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            let counter = p_counters.iter().map(|c| c[t]).fold(0.0, f64::max);
            (p - lambda * counter).max(0.0)
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Ok(p_target.to_vec());
    }
    scores.iter_mut().for_each(|s| *s /= total);
    Ok(scores)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let mass: f64 = order.iter().map(|&i| p[i]).sum();
    if mass <= 0.0 {
        return order[0];
    }
    let mut draw = rng.gen::<f64>() * mass;
    for &i in &order {
        draw -= p[i];
        if draw < 0.0 {
            return i;
        }
    }
    // rounding left a sliver of mass: fall back to the last token with any
    *order.iter().rev().find(|&&i| p[i] > 0.0).expect("mass > 0")
}

/// Decodes token ids for the target prompt. Stops after a sentence-final
/// token or `max_output_tokens` tokens.
pub fn generate_ids<M, R>(
    lm: &M,
    target_prompt: &str,
    counter_prompts: &[String],
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<Vec<TokenId>>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.max_output_tokens == 0 {
        return Err(Error::Argument("max_output_tokens must be at least 1".into()));
    }
    let vocab_size = lm.vocab_size();
    let mut target = lm.encode(target_prompt);
    let mut counters: Vec<Vec<TokenId>> = counter_prompts.iter().map(|p| lm.encode(p)).collect();
    let query = |prefix: &[TokenId]| -> Result<Vec<f64>> {
        let p = lm.next_token_distribution(prefix);
        if p.len() != vocab_size {
            return Err(Error::Backend(format!("distribution has {} entries for a vocabulary of {vocab_size}", p.len())));
        }
        check_distribution(&p).map_err(Error::Backend)?;
        Ok(p)
    };

    let mut emitted = Vec::new();
    for _ in 0..cfg.max_output_tokens {
        let p_target = query(&target)?;
        let p_counters = counters.iter().map(|c| query(c)).collect::<Result<Vec<_>>>()?;
        let adjusted = self_debias_step(&p_target, &p_counters, cfg.lambda)?;
        let next = match cfg.top_k {
            None => argmax(&adjusted),
            Some(k) => sample_top_k(&adjusted, k, rng),
        } as TokenId;
        emitted.push(next);
        target.push(next);
        counters.iter_mut().for_each(|c| c.push(next));
        if text::is_sentence_final(lm.token_text(next)) {
            break;
        }
    }
    Ok(emitted)
}

pub fn generate<M, R>(
    lm: &M,
    target_prompt: &str,
    counter_prompts: &[String],
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<String>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    let ids = generate_ids(lm, target_prompt, counter_prompts, cfg, rng)?;
    Ok(lm.decode(&ids))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub notes: u64,
    pub sources: u64,
    pub generated: u64,
    pub kept: u64,
    pub rejected_missing_terms: u64,
    pub rejected_empty: u64,
    pub skipped_notes: u64,
}

/// Generates one pair per (assessment sentence, label). Counter prompts are
/// every other label. Same-thing generations that lose a required term are
/// dropped.
pub fn augment_notes<M: LanguageModel + ?Sized>(
    notes: &[ProgressNote],
    templates: &TemplateSet,
    lm: &M,
    cfg: &GenerationConfig,
    labels: &[LabelId],
) -> Result<(Vec<GeneratedPair>, AugmentStats)> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut stats = AugmentStats::default();
    let mut pairs = Vec::new();
    for note in notes {
        let (Some(assessment), Some(summary)) = (&note.assessment, &note.summary) else {
            log::warn!("note {} lacks an assessment or summary; not augmented", note.doc_id);
            stats.skipped_notes += 1;
            continue;
        };
        stats.notes += 1;
        for (index, (start, end)) in segment_sentences(assessment).into_iter().enumerate() {
            let source = &assessment[start..end];
            let terms = select_terms(source, summary);
            stats.sources += 1;
            for &label in labels {
                let prompt = templates.select(label, terms.len()).instantiate(&terms, source)?;
                let counter_prompts = label
                    .counters()
                    .into_iter()
                    .map(|c| templates.select(c, terms.len()).instantiate(&terms, source))
                    .collect::<Result<Vec<_>>>()?;
                let mut stream = rng::stream(cfg.seed, "augment", &format!("{}#{index}#{label}", note.doc_id));
                let generated = generate(lm, &prompt, &counter_prompts, cfg, &mut stream)?;
                stats.generated += 1;
                if generated.trim().is_empty() {
                    stats.rejected_empty += 1;
                    continue;
                }
                let required_terms = if label == LabelId::SameThing { terms.clone() } else { Vec::new() };
                if !validate_terms(&generated, &required_terms) {
                    stats.rejected_missing_terms += 1;
                    continue;
                }
                stats.kept += 1;
                pairs.push(GeneratedPair {
                    doc_id: note.doc_id.clone(),
                    source: source.to_string(),
                    generated,
                    label,
                    required_terms,
                    scores: BTreeMap::new(),
                });
            }
        }
    }
    Ok((pairs, stats))
}

/// The built-in toy backend for a set of notes: the fallback table and the
/// same-thing table learn from assessment sentences, the somewhat-similar
/// table from assessment and subjective text, and the different-topics table
/// from subjective and objective text.
pub fn toy_model(notes: &[ProgressNote], smoothing: f64) -> ConditionalBigramLm {
    let sentences = |f: fn(&ProgressNote) -> &Option<String>| -> Vec<&str> {
        notes
            .iter()
            .filter_map(|n| f(n).as_deref())
            .flat_map(|t| segment_sentences(t).into_iter().map(move |(s, e)| &t[s..e]))
            .collect()
    };
    let assessment = sentences(|n| &n.assessment);
    let subjective = sentences(|n| &n.subjective);
    let objective = sentences(|n| &n.objective);
    let mut somewhat = assessment.clone();
    somewhat.extend(&subjective);
    let mut different = subjective.clone();
    different.extend(&objective);
    ConditionalBigramLm::train(
        &assessment,
        &[("same thing", assessment.clone()), ("somewhat similar", somewhat), ("different topics", different)],
        smoothing,
    )
}
