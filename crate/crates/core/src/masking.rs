//! Entity-guided span corruption with numbered sentinel tokens.
//!
//! For each sentence one of four outcomes is chosen:
//!
//! * both channels found entities: one Bernoulli(`p_umls`) draw picks the
//!   UMLS channel, otherwise the i2b2 channel, and every span of the chosen
//!   channel is masked;
//! * exactly one channel found entities: its spans are masked and no draw is
//!   consumed;
//! * no entities: one Bernoulli(`p_sentence`) draw decides whether the whole
//!   sentence is masked.
//!
//! Masked regions are replaced in reading order by `<extra_id_0>`,
//! `<extra_id_1>`, ... and the target lists each sentinel followed by the
//! text it replaced, closed by one more sentinel:
//!
//! ```text
//! input : pt on <extra_id_0> overnight . noted <extra_id_1> twice .
//! target: <extra_id_0> CPAP <extra_id_1> sat drifts <extra_id_2>
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedSentence, EntitySpan};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_SENTINEL_FORMAT: &str = "<extra_id_{i}>";
const INDEX_PLACEHOLDER: &str = "{i}";

/// A parsed sentinel template such as `<extra_id_{i}>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentinelFormat {
    prefix: String,
    suffix: String,
}

impl SentinelFormat {
    pub fn parse(template: &str) -> Result<Self> {
        let count = template.matches(INDEX_PLACEHOLDER).count();
        if count != 1 {
            return Err(Error::Config(format!(
                "sentinel format `{template}` must contain exactly one `{INDEX_PLACEHOLDER}` placeholder, found {count}"
            )));
        }
        let (prefix, suffix) = template.split_once(INDEX_PLACEHOLDER).expect("placeholder present");
        if prefix.is_empty() {
            return Err(Error::Config(format!(
                "sentinel format `{template}` needs a non-empty prefix before `{INDEX_PLACEHOLDER}`"
            )));
        }
        if suffix.is_empty() || suffix.starts_with(|c: char| c.is_ascii_digit()) {
            return Err(Error::Config(format!(
                "sentinel format `{template}` needs a non-digit suffix after `{INDEX_PLACEHOLDER}`"
            )));
        }
        if prefix.chars().any(char::is_whitespace) || suffix.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("sentinel format `{template}` must not contain whitespace")));
        }
        Ok(SentinelFormat {
            prefix: prefix.to_string(),
            suffix: suffix.to_string(),
        })
    }

    pub fn render(&self, index: usize) -> String {
        format!("{}{index}{}", self.prefix, self.suffix)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Sentinels in `text` as `(byte range, index)` pairs, left to right.
    pub fn find_all(&self, text: &str) -> Result<Vec<(std::ops::Range<usize>, usize)>> {
        let mut found = Vec::new();
        let mut cursor = 0;
        while let Some(pos) = text[cursor..].find(&self.prefix) {
            let at = cursor + pos;
            let digits_start = at + self.prefix.len();
            let digits_len = text[digits_start..].bytes().take_while(u8::is_ascii_digit).count();
            let digits_end = digits_start + digits_len;
            if digits_len == 0 || !text[digits_end..].starts_with(&self.suffix) {
                return Err(Error::Format(format!("malformed sentinel at byte {at}")));
            }
            let index = text[digits_start..digits_end]
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("sentinel index at byte {at}: {e}")))?;
            let end = digits_end + self.suffix.len();
            found.push((at..end, index));
            cursor = end;
        }
        Ok(found)
    }
}

impl Default for SentinelFormat {
    fn default() -> Self {
        SentinelFormat::parse(DEFAULT_SENTINEL_FORMAT).expect("default format is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPolicyConfig {
    pub p_umls: f64,
    pub p_i2b2: f64,
    pub p_sentence: f64,
    pub seed: u64,
    pub sentinel_format: String,
}

impl Default for MaskPolicyConfig {
    fn default() -> Self {
        MaskPolicyConfig {
            p_umls: 0.7,
            p_i2b2: 0.3,
            p_sentence: 0.15,
            seed: 0,
            sentinel_format: DEFAULT_SENTINEL_FORMAT.to_string(),
        }
    }
}

impl MaskPolicyConfig {
    /// Every violated constraint, as `field: message`.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [("p_umls", self.p_umls), ("p_i2b2", self.p_i2b2), ("p_sentence", self.p_sentence)] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name}: probability must lie in [0, 1], got {p}"));
            }
        }
        if (self.p_umls + self.p_i2b2 - 1.0).abs() > 1e-9 {
            out.push(format!(
                "p_umls + p_i2b2: must sum to 1, got {} + {}",
                self.p_umls, self.p_i2b2
            ));
        }
        if let Err(e) = SentinelFormat::parse(&self.sentinel_format) {
            out.push(format!("sentinel_format: {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<SentinelFormat> {
        let problems = self.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        SentinelFormat::parse(&self.sentinel_format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskKind {
    MaskUmlsSpans,
    MaskI2b2Spans,
    MaskWholeSentence,
    NoMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDecision {
    pub sentence_index: usize,
    pub kind: MaskKind,
    pub spans: Vec<EntitySpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub doc_id: String,
    pub input_text: String,
    pub target_text: String,
    pub num_masks: usize,
}

pub fn choose_mask_source<R: Rng + ?Sized>(
    sentence: &AnnotatedSentence,
    sentence_index: usize,
    cfg: &MaskPolicyConfig,
    rng: &mut R,
) -> MaskDecision {
    let (kind, spans) = match (sentence.umls_spans.is_empty(), sentence.i2b2_spans.is_empty()) {
        (false, false) => {
            if rng.gen::<f64>() < cfg.p_umls {
                (MaskKind::MaskUmlsSpans, sentence.umls_spans.clone())
            } else {
                (MaskKind::MaskI2b2Spans, sentence.i2b2_spans.clone())
            }
        }
        (false, true) => (MaskKind::MaskUmlsSpans, sentence.umls_spans.clone()),
        (true, false) => (MaskKind::MaskI2b2Spans, sentence.i2b2_spans.clone()),
        (true, true) => {
            if rng.gen::<f64>() < cfg.p_sentence {
                (MaskKind::MaskWholeSentence, Vec::new())
            } else {
                (MaskKind::NoMask, Vec::new())
            }
        }
    };
    MaskDecision {
        sentence_index,
        kind,
        spans,
    }
}

/// Sorts spans, rejects overlaps, and merges spans separated by fewer than
/// two tokens. Returns token ranges.
fn merged_ranges(spans: &[EntitySpan]) -> Result<Vec<(usize, usize)>> {
    let mut ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    ranges.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
    for (start, end) in ranges {
        if start >= end {
            return Err(Error::Internal(format!("empty mask span {start}..{end}")));
        }
        match out.last_mut() {
            Some(last) if start < last.1 => {
                return Err(Error::Internal(format!(
                    "overlapping mask spans {}..{} and {start}..{end}",
                    last.0, last.1
                )));
            }
            Some(last) if start - last.1 < 2 => last.1 = end,
            _ => out.push((start, end)),
        }
    }
    Ok(out)
}

/// Rewrites `text` with sentinels according to `decisions` (one per sentence).
///
/// Documents that already contain the sentinel prefix are rejected with a
/// data error, since they could not be reconstructed unambiguously.
pub fn apply_mask(
    doc_id: &str,
    text: &str,
    sentences: &[AnnotatedSentence],
    decisions: &[MaskDecision],
    format: &SentinelFormat,
) -> Result<MaskedExample> {
    if text.contains(format.prefix()) {
        return Err(Error::Data(format!(
            "document {doc_id} already contains the sentinel prefix `{}`",
            format.prefix()
        )));
    }
    if decisions.len() != sentences.len() {
        return Err(Error::Internal(format!(
            "{} decisions for {} sentences in {doc_id}",
            decisions.len(),
            sentences.len()
        )));
    }
    let mut ordered: Vec<&MaskDecision> = decisions.iter().collect();
    ordered.sort_by_key(|d| d.sentence_index);

    let mut regions: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, decision) in ordered.iter().enumerate() {
        if decision.sentence_index != i {
            return Err(Error::Internal(format!(
                "decisions for {doc_id} do not cover each sentence exactly once"
            )));
        }
        let sentence = &sentences[i];
        match decision.kind {
            MaskKind::NoMask => {}
            MaskKind::MaskWholeSentence => {
                if sentence.start < sentence.end {
                    regions.push(sentence.start..sentence.end);
                }
            }
            MaskKind::MaskUmlsSpans | MaskKind::MaskI2b2Spans => {
                if decision.spans.is_empty() {
                    return Err(Error::Internal(format!("span decision without spans in {doc_id}#{i}")));
                }
                for (start, end) in merged_ranges(&decision.spans)? {
                    if end > sentence.tokens.len() {
                        return Err(Error::Internal(format!(
                            "span {start}..{end} exceeds {} tokens in {doc_id}#{i}",
                            sentence.tokens.len()
                        )));
                    }
                    regions.push(sentence.span_bytes(start, end));
                }
            }
        }
    }

    let mut input = String::with_capacity(text.len());
    let mut target = String::new();
    let mut cursor = 0;
    for (i, region) in regions.iter().enumerate() {
        if region.start < cursor {
            return Err(Error::Internal(format!("mask regions overlap in {doc_id}")));
        }
        let sentinel = format.render(i);
        input.push_str(&text[cursor..region.start]);
        input.push_str(&sentinel);
        target.push_str(&sentinel);
        target.push(' ');
        target.push_str(&text[region.clone()]);
        target.push(' ');
        cursor = region.end;
    }
    input.push_str(&text[cursor..]);
    target.push_str(&format.render(regions.len()));

    Ok(MaskedExample {
        doc_id: doc_id.to_string(),
        input_text: input,
        target_text: target,
        num_masks: regions.len(),
    })
}

/// Draws decisions for every sentence from the document's own stream and
/// applies them.
pub fn mask_document(
    doc_id: &str,
    text: &str,
    sentences: &[AnnotatedSentence],
    cfg: &MaskPolicyConfig,
    format: &SentinelFormat,
) -> Result<(MaskedExample, Vec<MaskDecision>)> {
    let mut stream = rng::stream(cfg.seed, "masking", doc_id);
    let decisions: Vec<MaskDecision> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| choose_mask_source(s, i, cfg, &mut stream))
        .collect();
    let example = apply_mask(doc_id, text, sentences, &decisions, format)?;
    Ok((example, decisions))
}

/// Splits a target into its masked texts, checking sentinel order and the
/// closing sentinel.
pub fn target_spans<'a>(target: &'a str, format: &SentinelFormat) -> Result<Vec<&'a str>> {
    let sentinels = format.find_all(target)?;
    if sentinels.is_empty() {
        return Err(Error::Format("target contains no sentinel".into()));
    }
    if sentinels[0].0.start != 0 {
        return Err(Error::Format("target must begin with a sentinel".into()));
    }
    for (expected, (_, index)) in sentinels.iter().enumerate() {
        if *index != expected {
            return Err(Error::Format(format!("target sentinel {index} found where {expected} was expected")));
        }
    }
    let last = sentinels.last().expect("non-empty");
    if last.0.end != target.len() {
        return Err(Error::Format("target must end with the closing sentinel".into()));
    }
    let mut spans = Vec::with_capacity(sentinels.len() - 1);
    for pair in sentinels.windows(2) {
        let between = &target[pair[0].0.end..pair[1].0.start];
        let inner = between
            .strip_prefix(' ')
            .and_then(|s| s.strip_suffix(' '))
            .ok_or_else(|| Error::Format(format!("span after sentinel {} is not space-delimited", pair[0].1)))?;
        spans.push(inner);
    }
    Ok(spans)
}

/// Splices each target span back into its sentinel in the input.
pub fn reconstruct(input: &str, target: &str, format: &SentinelFormat) -> Result<String> {
    let spans = target_spans(target, format)?;
    let sentinels = format.find_all(input)?;
    if sentinels.len() != spans.len() {
        return Err(Error::Format(format!(
            "input has {} sentinels but target has {} spans",
            sentinels.len(),
            spans.len()
        )));
    }
    let mut out = String::with_capacity(input.len() + target.len());
    let mut cursor = 0;
    for (expected, ((range, index), span)) in sentinels.into_iter().zip(spans).enumerate() {
        if index != expected {
            return Err(Error::Format(format!("input sentinel {index} found where {expected} was expected")));
        }
        out.push_str(&input[cursor..range.start]);
        out.push_str(span);
        cursor = range.end;
    }
    out.push_str(&input[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Channel;
    use crate::corpus::segment_sentences;
    use proptest::prelude::*;
    use rand::rngs::mock::StepRng;
    use rand::Rng;

    fn entity(start: usize, end: usize, channel: Channel) -> EntitySpan {
        EntitySpan {
            start,
            end,
            surface: String::new(),
            channel,
            score: 1.0,
        }
    }

    fn sentences(text: &str) -> Vec<AnnotatedSentence> {
        segment_sentences(text)
            .into_iter()
            .map(|(s, e)| AnnotatedSentence::bare(text, s, e))
            .collect()
    }

    fn low_draw() -> StepRng {
        StepRng::new(0, 0)
    }

    fn high_draw() -> StepRng {
        StepRng::new(u64::MAX, 0)
    }

    fn decision(i: usize, kind: MaskKind, spans: Vec<EntitySpan>) -> MaskDecision {
        MaskDecision {
            sentence_index: i,
            kind,
            spans,
        }
    }

    #[test]
    fn sentinel_format_parsing() {
        let f = SentinelFormat::default();
        assert_eq!(f.render(3), "<extra_id_3>");
        assert!(SentinelFormat::parse("<mask>").is_err());
        assert!(SentinelFormat::parse("<{i}{i}>").is_err());
        assert!(SentinelFormat::parse("{i}>").is_err());
        assert!(SentinelFormat::parse("<m{i}").is_err());
        assert_eq!(SentinelFormat::parse("[M{i}]").unwrap().render(0), "[M0]");
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = MaskPolicyConfig::default();
        assert_eq!((cfg.p_umls, cfg.p_i2b2, cfg.p_sentence), (0.7, 0.3, 0.15));
        assert!(cfg.validate().is_ok());
        let bad = MaskPolicyConfig {
            p_umls: 0.6,
            p_sentence: 1.5,
            ..Default::default()
        };
        let problems = bad.problems();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    #[test]
    fn channel_choice() {
        let cfg = MaskPolicyConfig::default();
        let mut s = AnnotatedSentence::bare("a b c", 0, 5);
        s.umls_spans = vec![entity(0, 1, Channel::Umls)];
        s.i2b2_spans = vec![entity(2, 3, Channel::I2b2)];
        let d = choose_mask_source(&s, 0, &cfg, &mut low_draw());
        assert_eq!(d.kind, MaskKind::MaskUmlsSpans);
        assert_eq!(d.spans, s.umls_spans);
        let d = choose_mask_source(&s, 0, &cfg, &mut high_draw());
        assert_eq!(d.kind, MaskKind::MaskI2b2Spans);

        s.umls_spans.clear();
        // one populated channel is selected without consuming a draw
        let mut rng = StepRng::new(0, 1);
        let d = choose_mask_source(&s, 0, &cfg, &mut rng);
        assert_eq!(d.kind, MaskKind::MaskI2b2Spans);
        assert_eq!(rng.gen::<u64>(), 0);

        s.i2b2_spans.clear();
        assert_eq!(choose_mask_source(&s, 0, &cfg, &mut high_draw()).kind, MaskKind::NoMask);
        assert_eq!(choose_mask_source(&s, 0, &cfg, &mut low_draw()).kind, MaskKind::MaskWholeSentence);
    }

    #[test]
    fn sentinel_rewrite_example() {
        let text = "pt on CPAP overnight. Noted sat drifts twice.";
        let sents = sentences(text);
        assert_eq!(sents.len(), 2);
        let decisions = vec![
            decision(0, MaskKind::MaskUmlsSpans, vec![entity(2, 3, Channel::Umls)]),
            decision(1, MaskKind::MaskI2b2Spans, vec![entity(1, 3, Channel::I2b2)]),
        ];
        let ex = apply_mask("d", text, &sents, &decisions, &SentinelFormat::default()).unwrap();
        assert_eq!(ex.input_text, "pt on <extra_id_0> overnight. Noted <extra_id_1> twice.");
        assert_eq!(ex.target_text, "<extra_id_0> CPAP <extra_id_1> sat drifts <extra_id_2>");
        assert_eq!(ex.num_masks, 2);
        assert_eq!(reconstruct(&ex.input_text, &ex.target_text, &SentinelFormat::default()).unwrap(), text);
    }

    #[test]
    fn single_sentence_spaced_example() {
        let text = "pt on CPAP overnight . noted sat drifts twice .";
        let sents = sentences(text);
        assert_eq!(sents.len(), 1);
        let decisions = vec![decision(
            0,
            MaskKind::MaskUmlsSpans,
            vec![entity(2, 3, Channel::Umls), entity(6, 8, Channel::Umls)],
        )];
        let ex = apply_mask("d", text, &sents, &decisions, &SentinelFormat::default()).unwrap();
        assert_eq!(ex.input_text, "pt on <extra_id_0> overnight . noted <extra_id_1> twice .");
        assert_eq!(ex.target_text, "<extra_id_0> CPAP <extra_id_1> sat drifts <extra_id_2>");
    }

    #[test]
    fn zero_mask_and_whole_sentence() {
        let f = SentinelFormat::default();
        let text = "Nothing here.";
        let sents = sentences(text);
        let ex = apply_mask("d", text, &sents, &[decision(0, MaskKind::NoMask, vec![])], &f).unwrap();
        assert_eq!((ex.input_text.as_str(), ex.target_text.as_str(), ex.num_masks), (text, "<extra_id_0>", 0));

        let ex = apply_mask("d", text, &sents, &[decision(0, MaskKind::MaskWholeSentence, vec![])], &f).unwrap();
        assert_eq!(ex.input_text, "<extra_id_0>");
        assert_eq!(ex.target_text, "<extra_id_0> Nothing here. <extra_id_1>");
    }

    #[test]
    fn close_spans_merge() {
        let text = "CPAP , BiPAP and O2 via the NC today";
        let sents = sentences(text);
        let spans = vec![
            entity(0, 1, Channel::Umls),
            entity(2, 3, Channel::Umls),
            entity(4, 5, Channel::Umls),
            entity(7, 8, Channel::Umls),
        ];
        let ex = apply_mask("d", text, &sents, &[decision(0, MaskKind::MaskUmlsSpans, spans)], &SentinelFormat::default()).unwrap();
        assert_eq!(ex.input_text, "<extra_id_0> via the <extra_id_1> today");
        assert_eq!(ex.target_text, "<extra_id_0> CPAP , BiPAP and O2 <extra_id_1> NC <extra_id_2>");
    }

    #[test]
    fn overlapping_spans_are_internal_errors() {
        let text = "a b c d";
        let sents = sentences(text);
        let spans = vec![entity(0, 2, Channel::Umls), entity(1, 3, Channel::Umls)];
        let err = apply_mask("d", text, &sents, &[decision(0, MaskKind::MaskUmlsSpans, spans)], &SentinelFormat::default());
        assert!(matches!(err, Err(Error::Internal(_))));
    }

    #[test]
    fn sentinel_collision_is_rejected() {
        let text = "see <extra_id_0> here";
        let sents = sentences(text);
        let err = apply_mask("d", text, &sents, &[decision(0, MaskKind::NoMask, vec![])], &SentinelFormat::default());
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn reconstruct_examples() {
        let f = SentinelFormat::default();
        assert_eq!(reconstruct("<extra_id_0>", "<extra_id_0> x <extra_id_1>", &f).unwrap(), "x");
        assert!(matches!(
            reconstruct("<extra_id_0> and <extra_id_1>", "<extra_id_0> x <extra_id_1>", &f),
            Err(Error::Format(_))
        ));
        assert!(reconstruct("<extra_id_1>", "<extra_id_0> x <extra_id_1>", &f).is_err());
        assert!(reconstruct("a", "<extra_id_0> x", &f).is_err());
        assert!(reconstruct("a", "", &f).is_err());
    }

    fn arb_document() -> impl Strategy<Value = String> {
        let word = prop_oneof!["[a-z]{1,6}", "[A-Z][a-z]{0,5}", "[0-9]{1,3}", Just(",".to_string()), Just("%".to_string())];
        let sentence = (proptest::collection::vec(word, 1..8), prop_oneof![Just("."), Just("?"), Just("")])
            .prop_map(|(w, end)| format!("{}{end}", w.join(" ")));
        let sep = prop_oneof![Just(" "), Just("  "), Just("\n"), Just("\n\n"), Just(" \t ")];
        (proptest::collection::vec((sentence, sep), 0..6), "[ \n]{0,2}")
            .prop_map(|(parts, lead)| {
                let mut doc = lead;
                for (s, sep) in parts {
                    doc.push_str(&s);
                    doc.push_str(sep);
                }
                doc
            })
    }

    proptest! {
        #[test]
        fn mask_round_trips(doc in arb_document(), seed in any::<u64>(), picks in proptest::collection::vec(any::<u8>(), 64)) {
            let f = SentinelFormat::default();
            let mut sents = sentences(&doc);
            // random non-overlapping spans on both channels
            let mut k = 0;
            for s in &mut sents {
                let n = s.tokens.len();
                let mut t = 0;
                while t < n {
                    let p = picks[k % picks.len()];
                    k += 1;
                    let len = 1 + (p as usize % 3).min(n - t - 1);
                    if p % 4 == 0 {
                        s.umls_spans.push(entity(t, t + len, Channel::Umls));
                    } else if p % 4 == 1 {
                        s.i2b2_spans.push(entity(t, t + len, Channel::I2b2));
                    }
                    t += len;
                }
            }
            let cfg = MaskPolicyConfig { seed, ..Default::default() };
            let (ex, _) = mask_document("doc", &doc, &sents, &cfg, &f).unwrap();
            prop_assert_eq!(reconstruct(&ex.input_text, &ex.target_text, &f).unwrap(), doc.clone());
            let indices: Vec<usize> = f.find_all(&ex.input_text).unwrap().into_iter().map(|(_, i)| i).collect();
            prop_assert_eq!(indices, (0..ex.num_masks).collect::<Vec<_>>());
            prop_assert_eq!(target_spans(&ex.target_text, &f).unwrap().len(), ex.num_masks);
            let (again, _) = mask_document("doc", &doc, &sents, &cfg, &f).unwrap();
            prop_assert_eq!(again, ex);
        }
    }
}
