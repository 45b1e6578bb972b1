//! Next-token language model interface and a small conditional bigram model.

use std::collections::HashMap;

use crate::text;

pub type TokenId = u32;

/// Id 0 is reserved for unknown tokens in [`Vocab`].
pub const UNK: TokenId = 0;
pub const UNK_TEXT: &str = "<unk>";

/// Context token that precedes the first generated token; every prompt ends
/// with `Sentence 2:`.
pub const START_CONTEXT: &str = ":";

/// A model that maps a token prefix to a distribution over a fixed vocabulary.
///
/// Implementations must return `vocab_size()` non-negative probabilities that
/// sum to one; `generate` checks this on every step.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn token_text(&self, id: TokenId) -> &str;
    fn next_token_distribution(&self, prefix: &[TokenId]) -> Vec<f64>;

    fn decode(&self, ids: &[TokenId]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != UNK)
            .map(|&id| self.token_text(id))
            .collect();
        text::detokenize(&words)
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            tokens: vec![UNK_TEXT.to_string()],
            index: HashMap::from([(UNK_TEXT.to_string(), UNK)]),
        }
    }
}

impl Vocab {
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Adds every normalized token of `text`.
    pub fn extend_from(&mut self, text: &str) {
        for tok in text::normalized_tokens(text) {
            self.insert(&tok);
        }
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn text(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK_TEXT)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text::normalized_tokens(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Bigram counts with a unigram backoff for unseen contexts.
#[derive(Debug, Clone, Default)]
pub struct BigramTable {
    rows: HashMap<TokenId, HashMap<TokenId, f64>>,
    unigram: HashMap<TokenId, f64>,
}

impl BigramTable {
    pub fn add(&mut self, prev: TokenId, next: TokenId, count: f64) {
        *self.rows.entry(prev).or_default().entry(next).or_default() += count;
        *self.unigram.entry(next).or_default() += count;
    }

    /// Add-`smoothing` distribution for the context `prev`. The unknown
    /// token always gets zero mass.
    fn distribution(&self, prev: TokenId, vocab_size: usize, smoothing: f64) -> Vec<f64> {
        let mut p = vec![smoothing; vocab_size];
        p[UNK as usize] = 0.0;
        let counts = self.rows.get(&prev).unwrap_or(&self.unigram);
        for (&next, &count) in counts {
            if next != UNK && (next as usize) < vocab_size {
                p[next as usize] += count;
            }
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x /= total);
        } else if vocab_size > 1 {
            let uniform = 1.0 / (vocab_size - 1) as f64;
            p.iter_mut().skip(1).for_each(|x| *x = uniform);
        }
        p
    }
}

/// A bigram model whose table is chosen by an instruction cue found in the
/// prefix (for example `different topics`), falling back to a shared table.
///
/// Conditions are checked in insertion order; the first cue that occurs as a
/// contiguous token run in the prefix wins.
#[derive(Debug, Clone)]
pub struct ConditionalBigramLm {
    vocab: Vocab,
    smoothing: f64,
    fallback: BigramTable,
    conditions: Vec<(Vec<TokenId>, BigramTable)>,
}

/// Which table an observation goes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Fallback,
    Condition(usize),
}

impl ConditionalBigramLm {
    pub fn new(vocab: Vocab, smoothing: f64) -> Self {
        ConditionalBigramLm {
            vocab,
            smoothing: smoothing.max(0.0),
            fallback: BigramTable::default(),
            conditions: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Registers a cue; its tokens must already be in the vocabulary.
    pub fn add_condition(&mut self, cue: &str) -> Table {
        let ids = self.vocab.encode(cue);
        self.conditions.push((ids, BigramTable::default()));
        Table::Condition(self.conditions.len() - 1)
    }

    fn table_mut(&mut self, table: Table) -> &mut BigramTable {
        match table {
            Table::Fallback => &mut self.fallback,
            Table::Condition(i) => &mut self.conditions[i].1,
        }
    }

    pub fn add_count(&mut self, table: Table, prev: &str, next: &str, count: f64) {
        let (p, n) = (self.vocab.id(prev), self.vocab.id(next));
        self.table_mut(table).add(p, n, count);
    }

    /// Counts the bigrams of `text`, starting from [`START_CONTEXT`].
    pub fn observe(&mut self, table: Table, text: &str) {
        let start = self.vocab.id(START_CONTEXT);
        let ids = self.vocab.encode(text);
        let target = self.table_mut(table);
        let mut prev = start;
        for id in ids {
            target.add(prev, id, 1.0);
            prev = id;
        }
    }

    fn select(&self, prefix: &[TokenId]) -> &BigramTable {
        for (cue, table) in &self.conditions {
            if !cue.is_empty() && prefix.windows(cue.len()).any(|w| w == cue.as_slice()) {
                return table;
            }
        }
        &self.fallback
    }

    /// A model trained on `texts` for the fallback table and on each
    /// `(cue, texts)` pair for the conditioned tables.
    pub fn train(fallback: &[&str], conditions: &[(&str, Vec<&str>)], smoothing: f64) -> Self {
        let mut vocab = Vocab::default();
        vocab.insert(START_CONTEXT);
        for text in fallback {
            vocab.extend_from(text);
        }
        for (cue, texts) in conditions {
            vocab.extend_from(cue);
            texts.iter().for_each(|t| vocab.extend_from(t));
        }
        let mut lm = ConditionalBigramLm::new(vocab, smoothing);
        for text in fallback {
            lm.observe(Table::Fallback, text);
        }
        for (cue, texts) in conditions {
            let table = lm.add_condition(cue);
            for text in texts {
                lm.observe(table, text);
            }
        }
        lm
    }
}

impl LanguageModel for ConditionalBigramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode(text)
    }

    fn token_text(&self, id: TokenId) -> &str {
        self.vocab.text(id)
    }

    fn next_token_distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let prev = prefix.last().copied().unwrap_or_else(|| self.vocab.id(START_CONTEXT));
        self.select(prefix).distribution(prev, self.vocab.len(), self.smoothing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributions_are_valid_and_conditioned() {
        let lm = ConditionalBigramLm::train(
            &["the patient is stable ."],
            &[("different topics", vec!["the weather is nice ."]), ("same thing", vec!["the patient is better ."])],
            0.01,
        );
        let prompt = lm.encode("two sentences on different topics . sentence 2 : the");
        let p = lm.next_token_distribution(&prompt);
        assert_eq!(p.len(), lm.vocab_size());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[UNK as usize], 0.0);
        let weather = lm.vocab().id("weather");
        let patient = lm.vocab().id("patient");
        assert!(p[weather as usize] > p[patient as usize]);

        let same = lm.encode("mean the same thing . sentence 2 : the");
        let q = lm.next_token_distribution(&same);
        assert!(q[patient as usize] > q[weather as usize]);
    }

    #[test]
    fn decode_skips_unknown_and_attaches_punctuation() {
        let lm = ConditionalBigramLm::train(&["pt stable ."], &[], 0.0);
        let ids = lm.encode("pt zzz stable .");
        assert_eq!(ids[1], UNK);
        assert_eq!(lm.decode(&ids), "pt stable.");
    }
}
