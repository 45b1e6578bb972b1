//! Seeded synthetic notes and dictionaries for tests, demos and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::annotation::{AnnotatorConfig, Annotators, Channel, I2b2Source, TermDictionary};
use crate::corpus::ProgressNote;
use crate::rng;

pub const UMLS_TERMS: &[&str] = &[
    "heart failure",
    "atrial fibrillation",
    "pneumonia",
    "hypertension",
    "diabetes mellitus",
    "acute kidney injury",
    "sepsis",
    "anemia",
    "cellulitis",
    "hyponatremia",
];

pub const I2B2_TERMS: &[&str] = &[
    "metoprolol",
    "furosemide",
    "chest x-ray",
    "insulin drip",
    "cpap",
    "vancomycin",
    "blood cultures",
    "lisinopril",
];

const OPENERS: &[&str] = &["Patient", "Pt", "Family", "Team", "Nursing", "Overnight"];
const FILLER: &[&str] = &[
    "was", "noted", "resting", "comfortably", "with", "today", "and", "plan", "to", "continue", "monitor", "reports",
    "no", "new", "complaints", "at", "bedside", "since", "admission", "mild", "stable", "will", "recheck", "in", "the",
    "morning",
];

/// Which entity channels a generated sentence mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Both,
    UmlsOnly,
    I2b2Only,
    Neither,
}

impl Coverage {
    pub const ALL: [Coverage; 4] = [Coverage::Both, Coverage::UmlsOnly, Coverage::I2b2Only, Coverage::Neither];
}

/// Dictionary annotators over [`UMLS_TERMS`] and [`I2B2_TERMS`].
pub fn annotators() -> Annotators {
    Annotators {
        umls: TermDictionary::from_terms("synthetic-umls", Channel::Umls, UMLS_TERMS.iter().copied())
            .expect("non-empty term list"),
        i2b2: I2b2Source::Dictionary(
            TermDictionary::from_terms("synthetic-i2b2", Channel::I2b2, I2B2_TERMS.iter().copied())
                .expect("non-empty term list"),
        ),
        config: AnnotatorConfig::default(),
    }
}

fn filler<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<String>) {
    for _ in 0..rng.gen_range(1..=3) {
        out.push(FILLER.choose(rng).unwrap().to_string());
    }
}

/// One capitalised sentence ending in a period.
pub fn sentence<R: Rng + ?Sized>(rng: &mut R, coverage: Coverage) -> String {
    let mut words = vec![OPENERS.choose(rng).unwrap().to_string()];
    filler(rng, &mut words);
    let mut terms: Vec<&str> = Vec::new();
    if matches!(coverage, Coverage::Both | Coverage::UmlsOnly) {
        terms.push(UMLS_TERMS.choose(rng).unwrap());
    }
    if matches!(coverage, Coverage::Both | Coverage::I2b2Only) {
        terms.push(I2B2_TERMS.choose(rng).unwrap());
    }
    terms.shuffle(rng);
    for term in terms {
        words.push(term.to_string());
        filler(rng, &mut words);
    }
    format!("{}.", words.join(" "))
}

/// A note of `sentences` sentences with uniformly random coverage.
pub fn note<R: Rng + ?Sized>(rng: &mut R, doc_id: &str, sentences: usize) -> ProgressNote {
    let text: Vec<String> = (0..sentences)
        .map(|_| {
            let coverage = *Coverage::ALL.choose(rng).unwrap();
            sentence(rng, coverage)
        })
        .collect();
    ProgressNote::from_text(doc_id, text.join(" "))
}

/// `count` notes with ids `note-00000`, ... and 5 to 15 sentences each.
pub fn notes(seed: u64, count: usize) -> Vec<ProgressNote> {
    let mut rng = rng::stream(seed, "synthetic", "notes");
    (0..count)
        .map(|i| {
            let n = rng.gen_range(5..=15);
            note(&mut rng, &format!("note-{i:05}"), n)
        })
        .collect()
}

/// Notes with assessment, subjective, objective and a problem list drawn
/// from the terms the assessment mentions.
pub fn task_notes(seed: u64, count: usize) -> Vec<ProgressNote> {
    let mut rng = rng::stream(seed, "synthetic", "task-notes");
    (0..count)
        .map(|i| {
            let assessment: Vec<String> = (0..rng.gen_range(2..=4))
                .map(|_| {
                    let coverage = *[Coverage::Both, Coverage::UmlsOnly].choose(&mut rng).unwrap();
                    sentence(&mut rng, coverage)
                })
                .collect();
            let assessment = assessment.join(" ");
            let mut problems: Vec<&str> = UMLS_TERMS
                .iter()
                .chain(I2B2_TERMS)
                .copied()
                .filter(|t| assessment.contains(t))
                .collect();
            problems.truncate(4);
            ProgressNote {
                doc_id: format!("task-{i:04}"),
                text: None,
                subjective: Some(sentence(&mut rng, Coverage::Neither)),
                objective: Some(sentence(&mut rng, Coverage::I2b2Only)),
                summary: Some(problems.join("\n")),
                assessment: Some(assessment),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::annotate_sentence;
    use crate::corpus::segment_sentences;

    #[test]
    fn coverage_is_what_the_annotators_find() {
        let ann = annotators();
        let mut rng = rng::stream(1, "test", "coverage");
        for _ in 0..400 {
            let coverage = *Coverage::ALL.choose(&mut rng).unwrap();
            let s = sentence(&mut rng, coverage);
            let a = annotate_sentence(&s, "d", 0, 0, s.len(), &ann);
            let found = (!a.umls_spans.is_empty(), !a.i2b2_spans.is_empty());
            let expected = match coverage {
                Coverage::Both => (true, true),
                Coverage::UmlsOnly => (true, false),
                Coverage::I2b2Only => (false, true),
                Coverage::Neither => (false, false),
            };
            assert_eq!(found, expected, "{s}");
        }
    }

    #[test]
    fn notes_segment_into_their_sentences() {
        for n in notes(3, 50) {
            let text = n.text.unwrap();
            assert_eq!(segment_sentences(&text).len(), text.matches('.').count());
        }
        assert_eq!(notes(9, 5), notes(9, 5));
    }
}
