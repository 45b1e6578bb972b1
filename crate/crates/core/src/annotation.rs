//! Concept span detection on two channels.
//!
//! The UMLS channel is an approximate dictionary matcher: every token window
//! of a sentence is compared with the dictionary terms by Jaccard similarity
//! over character trigram multisets, and windows at or above the threshold
//! become candidate spans. The i2b2 channel is either a second dictionary or
//! a table of precomputed standoff annotations.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Umls,
    I2b2,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Umls => "UMLS",
            Channel::I2b2 => "i2b2",
        })
    }
}

/// A detected concept. `start..end` is a token range within its sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub channel: Channel,
    pub score: f64,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub threshold: f64,
    pub max_window: usize,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            threshold: 0.7,
            max_window: 6,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Argument(format!(
                "annotation threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.max_window == 0 {
            return Err(Error::Argument("max_window must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Character trigram profiles
// ---------------------------------------------------------------------------

/// Sorted multiset of padded character trigrams, stored as `(gram, count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TrigramProfile {
    grams: Vec<(u64, u32)>,
    total: u32,
}

fn pack(a: char, b: char, c: char) -> u64 {
    ((a as u64) << 42) | ((b as u64) << 21) | c as u64
}

impl TrigramProfile {
    /// The string is padded with one space on each side so that strings
    /// shorter than three characters still produce grams.
    fn of(normalized: &str) -> Self {
        let mut chars = Vec::with_capacity(normalized.len() + 2);
        chars.push(' ');
        chars.extend(normalized.chars());
        chars.push(' ');
        let mut raw: Vec<u64> = chars.windows(3).map(|w| pack(w[0], w[1], w[2])).collect();
        raw.sort_unstable();
        let total = raw.len() as u32;
        let mut grams: Vec<(u64, u32)> = Vec::new();
        for g in raw {
            match grams.last_mut() {
                Some((last, n)) if *last == g => *n += 1,
                _ => grams.push((g, 1)),
            }
        }
        TrigramProfile { grams, total }
    }

    fn jaccard(&self, other: &TrigramProfile) -> f64 {
        let (mut i, mut j, mut inter) = (0, 0, 0u32);
        while i < self.grams.len() && j < other.grams.len() {
            let (ga, na) = self.grams[i];
            let (gb, nb) = other.grams[j];
            match ga.cmp(&gb) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += na.min(nb);
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = self.total + other.total - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

fn join_normalized<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.as_ref().to_lowercase());
    }
    out
}

fn similarity_of_strings(a: &str, b: &str, pa: &TrigramProfile, pb: &TrigramProfile) -> f64 {
    let j = pa.jaccard(pb);
    // distinct strings can share a trigram multiset; only equal strings score 1
    if j >= 1.0 && a != b {
        1.0_f64.next_down()
    } else {
        j
    }
}

/// Jaccard similarity between the trigram multisets of the lowercased,
/// space-joined token sequences.
pub fn ngram_similarity<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("ngram_similarity needs non-empty token sequences".into()));
    }
    let (sa, sb) = (join_normalized(a), join_normalized(b));
    let (pa, pb) = (TrigramProfile::of(&sa), TrigramProfile::of(&sb));
    Ok(similarity_of_strings(&sa, &sb, &pa, &pb))
}

/// Trigram Jaccard over whole strings after tokenization and lowercasing.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (text::normalized_tokens(a), text::normalized_tokens(b));
    ngram_similarity(&ta, &tb).unwrap_or(0.0)
}

// ---------------------------------------------------------------------------
// Dictionary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DictEntry {
    tokens: Vec<String>,
    joined: String,
    profile: TrigramProfile,
}

/// Normalized term list with a trigram inverted index.
#[derive(Debug, Clone)]
pub struct TermDictionary {
    name: String,
    channel: Channel,
    entries: Vec<DictEntry>,
    /// gram -> (entry id, count of the gram in that entry)
    index: HashMap<u64, Vec<(u32, u32)>>,
    max_total: u32,
}

/// Per-thread overlap accumulator reused across queries.
#[derive(Default)]
struct Overlap {
    counts: Vec<u32>,
    touched: Vec<u32>,
}

thread_local! {
    static OVERLAP: RefCell<Overlap> = RefCell::new(Overlap::default());
}

impl TermDictionary {
    /// Builds a dictionary from raw term strings. Terms are lowercased and
    /// tokenized (which collapses whitespace); duplicates after
    /// normalization are dropped and blank lines ignored.
    pub fn from_terms<I, S>(name: impl Into<String>, channel: Channel, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for term in terms {
            let tokens = text::normalized_tokens(term.as_ref());
            if tokens.is_empty() {
                continue;
            }
            let joined = tokens.join(" ");
            if !seen.insert(joined.clone()) {
                continue;
            }
            let profile = TrigramProfile::of(&joined);
            entries.push(DictEntry {
                tokens,
                joined,
                profile,
            });
        }
        if entries.is_empty() {
            return Err(Error::Config(format!("dictionary `{name}` contains no terms")));
        }
        let mut index: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
        for (id, entry) in entries.iter().enumerate() {
            for &(gram, count) in &entry.profile.grams {
                index.entry(gram).or_default().push((id as u32, count));
            }
        }
        let max_total = entries.iter().map(|e| e.profile.total).max().unwrap_or(0);
        Ok(TermDictionary {
            name,
            channel,
            entries,
            index,
            max_total,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalized entries as token sequences, in load order.
    pub fn entries(&self) -> impl Iterator<Item = &[String]> {
        self.entries.iter().map(|e| e.tokens.as_slice())
    }

    /// True if no entry can reach `threshold` against a window with `total`
    /// trigrams, or any longer window.
    fn out_of_reach(&self, total: u32, threshold: f64) -> bool {
        // Jaccard <= min/max of the two sizes
        threshold * total as f64 > self.max_total as f64 + 1e-9
    }

    /// Best similarity of `window` (already normalized and joined) against
    /// any entry, if it reaches `threshold`.
    fn best_match(&self, window: &str, profile: &TrigramProfile, threshold: f64) -> Option<f64> {
        OVERLAP.with(|cell| {
            let mut overlap = cell.borrow_mut();
            let Overlap { counts, touched } = &mut *overlap;
            if counts.len() < self.entries.len() {
                counts.resize(self.entries.len(), 0);
            }
            for &(gram, n) in &profile.grams {
                if let Some(postings) = self.index.get(&gram) {
                    for &(id, m) in postings {
                        let c = &mut counts[id as usize];
                        if *c == 0 {
                            touched.push(id);
                        }
                        *c += n.min(m);
                    }
                }
            }
            let mut best: Option<f64> = None;
            for &id in touched.iter() {
                let inter = std::mem::take(&mut counts[id as usize]);
                let entry = &self.entries[id as usize];
                let union = profile.total + entry.profile.total - inter;
                let mut score = inter as f64 / union as f64;
                // distinct strings can share a trigram multiset; only equal strings score 1
                if inter == union && window != entry.joined {
                    score = 1.0_f64.next_down();
                }
                if score >= threshold && best.is_none_or(|b| score > b) {
                    best = Some(score);
                }
            }
            touched.clear();
            best
        })
    }
}

pub fn load_dictionary(path: impl AsRef<Path>, channel: Channel) -> Result<TermDictionary> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| channel.to_string());
    TermDictionary::from_terms(name, channel, raw.lines()).map_err(|err| match err {
        Error::Config(_) => Error::Config(format!("dictionary file {} is empty", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

/// Finds dictionary matches among all windows of 1..=`max_window` tokens and
/// resolves overlaps. Span surfaces are the window tokens joined by a space.
pub fn annotate<S: AsRef<str>>(
    words: &[S],
    dict: &TermDictionary,
    threshold: f64,
    max_window: usize,
) -> Vec<EntitySpan> {
    let lowered: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
    let mut candidates = Vec::new();
    let mut window = String::new();
    for start in 0..lowered.len() {
        window.clear();
        for end in start + 1..=(start + max_window).min(lowered.len()) {
            if end > start + 1 {
                window.push(' ');
            }
            window.push_str(&lowered[end - 1]);
            let profile = TrigramProfile::of(&window);
            if dict.out_of_reach(profile.total, threshold) {
                break;
            }
            if let Some(score) = dict.best_match(&window, &profile, threshold) {
                let surface = words[start..end]
                    .iter()
                    .map(|w| w.as_ref())
                    .collect::<Vec<_>>()
                    .join(" ");
                candidates.push(EntitySpan {
                    start,
                    end,
                    surface,
                    channel: dict.channel(),
                    score,
                });
            }
        }
    }
    resolve_overlaps(candidates)
}

/// Greedy non-overlapping selection by (higher score, longer span, smaller
/// start). The result is sorted by start.
pub fn resolve_overlaps(mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    spans.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.len().cmp(&a.len()))
            .then(a.start.cmp(&b.start))
    });
    let mut kept: Vec<EntitySpan> = Vec::new();
    for span in spans {
        if !kept.iter().any(|k| k.overlaps(&span)) {
            kept.push(span);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

// ---------------------------------------------------------------------------
// Standoff annotations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Precomputed annotations keyed by `(doc_id, sentence_index)`.
///
/// File format: one record per line, tab-separated
/// `doc_id  sentence_index  start_token  end_token  label`. Blank lines and
/// lines starting with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct StandoffIndex {
    spans: HashMap<(String, usize), Vec<StandoffSpan>>,
}

impl StandoffIndex {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut index = StandoffIndex::default();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(path, lineno + 1, format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            let num = |i: usize, what: &str| {
                fields[i]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::parse(path, lineno + 1, format!("bad {what} `{}`: {e}", fields[i])))
            };
            let (sentence, start, end) = (num(1, "sentence index")?, num(2, "start token")?, num(3, "end token")?);
            if start >= end {
                return Err(Error::parse(path, lineno + 1, format!("empty span {start}..{end}")));
            }
            index.insert(fields[0], sentence, start, end, fields[4]);
        }
        Ok(index)
    }

    pub fn insert(&mut self, doc_id: &str, sentence_index: usize, start: usize, end: usize, label: &str) {
        self.spans
            .entry((doc_id.to_string(), sentence_index))
            .or_default()
            .push(StandoffSpan {
                start,
                end,
                label: label.to_string(),
            });
    }

    pub fn lookup(&self, doc_id: &str, sentence_index: usize) -> &[StandoffSpan] {
        self.spans
            .get(&(doc_id.to_string(), sentence_index))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.spans.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Backend for the second annotation channel.
#[derive(Debug, Clone)]
pub enum I2b2Source {
    Dictionary(TermDictionary),
    Standoff(StandoffIndex),
}

impl I2b2Source {
    /// A `.tsv` file is read as standoff annotations, anything else as a
    /// term dictionary.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
            Ok(I2b2Source::Standoff(StandoffIndex::load(path)?))
        } else {
            Ok(I2b2Source::Dictionary(load_dictionary(path, Channel::I2b2)?))
        }
    }
}

/// The two annotators plus their matching parameters.
#[derive(Debug, Clone)]
pub struct Annotators {
    pub umls: TermDictionary,
    pub i2b2: I2b2Source,
    pub config: AnnotatorConfig,
}

/// A sentence located in its document, with per-channel spans over its
/// tokens. Token and sentence offsets are bytes into the document text.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
    pub umls_spans: Vec<EntitySpan>,
    pub i2b2_spans: Vec<EntitySpan>,
}

impl AnnotatedSentence {
    /// A sentence with no annotations yet.
    pub fn bare(doc_text: &str, start: usize, end: usize) -> Self {
        AnnotatedSentence {
            start,
            end,
            tokens: text::tokenize_at(&doc_text[start..end], start),
            umls_spans: Vec::new(),
            i2b2_spans: Vec::new(),
        }
    }

    pub fn text<'a>(&self, doc_text: &'a str) -> &'a str {
        &doc_text[self.start..self.end]
    }

    /// Byte range in the document covered by tokens `start..end`.
    pub fn span_bytes(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        self.tokens[start].start..self.tokens[end - 1].end
    }
}

fn with_original_surface(doc_text: &str, sentence: &AnnotatedSentence, mut spans: Vec<EntitySpan>) -> Vec<EntitySpan> {
    for span in &mut spans {
        span.surface = doc_text[sentence.span_bytes(span.start, span.end)].to_string();
    }
    spans
}

/// Annotates one sentence (`doc_text[start..end]`) on both channels.
///
/// Standoff spans that fall outside the sentence's tokens are dropped with a
/// warning; a missing standoff entry yields no i2b2 spans.
pub fn annotate_sentence(
    doc_text: &str,
    doc_id: &str,
    sentence_index: usize,
    start: usize,
    end: usize,
    annotators: &Annotators,
) -> AnnotatedSentence {
    let mut sentence = AnnotatedSentence::bare(doc_text, start, end);
    let words: Vec<&str> = sentence.tokens.iter().map(|t| t.text(doc_text)).collect();
    let cfg = &annotators.config;

    let umls = annotate(&words, &annotators.umls, cfg.threshold, cfg.max_window);
    sentence.umls_spans = with_original_surface(doc_text, &sentence, umls);

    let i2b2 = match &annotators.i2b2 {
        I2b2Source::Dictionary(dict) => annotate(&words, dict, cfg.threshold, cfg.max_window),
        I2b2Source::Standoff(index) => {
            let spans = index
                .lookup(doc_id, sentence_index)
                .iter()
                .filter_map(|s| {
                    if s.end > words.len() {
                        log::warn!(
                            "standoff span {}..{} exceeds {} tokens in {doc_id}#{sentence_index}; ignored",
                            s.start,
                            s.end,
                            words.len()
                        );
                        return None;
                    }
                    Some(EntitySpan {
                        start: s.start,
                        end: s.end,
                        surface: String::new(),
                        channel: Channel::I2b2,
                        score: 1.0,
                    })
                })
                .collect();
            resolve_overlaps(spans)
        }
    };
    sentence.i2b2_spans = with_original_surface(doc_text, &sentence, i2b2);
    sentence
}
