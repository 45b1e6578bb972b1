//! Fine-tuning instances: note sections in, problem list out.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augmentation::{problem_list_items, GeneratedPair};
use crate::corpus::ProgressNote;
use crate::error::{Error, Result};
use crate::similarity::COMBINED;

pub const DEFAULT_SEPARATOR: &str = "\n{section}: ";
pub const DEFAULT_TARGET_SIZE: usize = 1000;

/// Which sections make up the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    /// Assessment only.
    A,
    /// Assessment, subjective, objective.
    #[default]
    Aso,
}

impl FromStr for CompositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(CompositionMode::A),
            "aso" => Ok(CompositionMode::Aso),
            _ => Err(Error::Config(format!("unknown composition mode `{s}`; expected a or aso"))),
        }
    }
}

impl fmt::Display for CompositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompositionMode::A => "a",
            CompositionMode::Aso => "aso",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub doc_id: String,
    pub input_text: String,
    pub target_text: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub mode: CompositionMode,
    /// Placed before the subjective and objective sections; `{section}` is
    /// replaced by the section name.
    pub separator: String,
    /// Joins problem-list items in the target.
    pub target_delimiter: String,
    pub target_size: usize,
    pub max_input_tokens: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            mode: CompositionMode::Aso,
            separator: DEFAULT_SEPARATOR.to_string(),
            target_delimiter: "\n".to_string(),
            target_size: DEFAULT_TARGET_SIZE,
            max_input_tokens: None,
        }
    }
}

impl DatasetConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.target_size == 0 {
            out.push("target_size: must be at least 1".to_string());
        }
        if self.max_input_tokens == Some(0) {
            out.push("max_input_tokens: must be at least 1".to_string());
        }
        out
    }
}

fn section<'a>(note: &'a ProgressNote, name: &str, value: &'a Option<String>) -> Result<&'a str> {
    match value.as_deref() {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(Error::Data(format!("note {}: missing {name} section", note.doc_id))),
    }
}

/// The model input for `note`. Mode A is the assessment verbatim; mode ASO
/// appends the subjective and objective sections, each preceded by
/// `separator` with `{section}` filled in.
pub fn compose_input(note: &ProgressNote, mode: CompositionMode, separator: &str) -> Result<String> {
    let assessment = section(note, "assessment", &note.assessment)?;
    if mode == CompositionMode::A {
        return Ok(assessment.to_string());
    }
    let subjective = section(note, "subjective", &note.subjective)?;
    let objective = section(note, "objective", &note.objective)?;
    let mut out = String::with_capacity(assessment.len() + subjective.len() + objective.len() + 2 * separator.len());
    out.push_str(assessment);
    for (name, body) in [("Subjective", subjective), ("Objective", objective)] {
        out.push_str(&separator.replace("{section}", name));
        out.push_str(body);
    }
    Ok(out)
}

/// The training target: problem-list items joined by `delimiter`.
pub fn format_target(note: &ProgressNote, delimiter: &str) -> Result<String> {
    let summary = section(note, "summary", &note.summary)?;
    Ok(problem_list_items(summary).collect::<Vec<_>>().join(delimiter))
}

/// The first `max_tokens` whitespace tokens joined by single spaces. Text
/// within the cap is returned unchanged. A cap of 0 is treated as 1.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    let max_tokens = max_tokens.max(1);
    let mut tokens = text.split_whitespace();
    let head: Vec<&str> = tokens.by_ref().take(max_tokens).collect();
    if tokens.next().is_none() {
        return text.to_string();
    }
    head.join(" ")
}

fn instance(note: &ProgressNote, cfg: &DatasetConfig, provenance: Provenance) -> Result<TaskInstance> {
    let mut input_text = compose_input(note, cfg.mode, &cfg.separator)?;
    if let Some(cap) = cfg.max_input_tokens {
        input_text = truncate_tokens(&input_text, cap);
    }
    Ok(TaskInstance {
        doc_id: note.doc_id.clone(),
        input_text,
        target_text: format_target(note, &cfg.target_delimiter)?,
        provenance,
    })
}

/// Original instances first, then augmented ones by descending combined
/// score until `target_size` is reached.
///
/// An augmented pair is turned back into a note by replacing its source
/// sentence in the note's assessment; the other sections and the problem
/// list are inherited. Pairs whose doc id or source sentence cannot be found
/// are skipped with a warning. Duplicate `(doc_id, input_text)` instances
/// are dropped.
pub fn assemble_training_set(
    notes: &[ProgressNote],
    pairs: &[GeneratedPair],
    cfg: &DatasetConfig,
) -> Result<Vec<TaskInstance>> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::new();
    for note in notes {
        let inst = instance(note, cfg, Provenance::Original)?;
        if seen.insert((inst.doc_id.clone(), inst.input_text.clone())) {
            out.push(inst);
        }
    }
    if out.len() > cfg.target_size {
        return Err(Error::Data(format!(
            "target size {} is smaller than the {} original instances",
            cfg.target_size,
            out.len()
        )));
    }

    let by_id: HashMap<&str, &ProgressNote> = notes.iter().map(|n| (n.doc_id.as_str(), n)).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let score = |i: usize| pairs[i].scores.get(COMBINED).copied().filter(|s| !s.is_nan()).unwrap_or(f64::NEG_INFINITY);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));

    for i in order {
        if out.len() == cfg.target_size {
            break;
        }
        let pair = &pairs[i];
        let Some(note) = by_id.get(pair.doc_id.as_str()) else {
            log::warn!("augmented pair for unknown note {} skipped", pair.doc_id);
            continue;
        };
        let Some(assessment) = note.assessment.as_deref().filter(|a| a.contains(&pair.source)) else {
            log::warn!("source sentence not found in note {}; pair skipped", pair.doc_id);
            continue;
        };
        let mut augmented = (*note).clone();
        augmented.assessment = Some(assessment.replacen(&pair.source, &pair.generated, 1));
        let inst = instance(&augmented, cfg, Provenance::Augmented)?;
        if seen.insert((inst.doc_id.clone(), inst.input_text.clone())) {
            out.push(inst);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::LabelId;
    use std::collections::BTreeMap;

    fn note(id: &str, a: &str) -> ProgressNote {
        ProgressNote {
            doc_id: id.into(),
            assessment: Some(a.into()),
            subjective: Some("s".into()),
            objective: Some("o".into()),
            summary: Some("1. CHF\n2. AKI".into()),
            ..Default::default()
        }
    }

    fn pair(id: &str, source: &str, generated: &str, score: f64) -> GeneratedPair {
        GeneratedPair {
            doc_id: id.into(),
            source: source.into(),
            generated: generated.into(),
            label: LabelId::SameThing,
            required_terms: vec![],
            scores: BTreeMap::from([(COMBINED.to_string(), score)]),
        }
    }

    #[test]
    fn compose_examples() {
        let n = ProgressNote {
            doc_id: "d".into(),
            assessment: Some("a".into()),
            subjective: Some("s".into()),
            objective: Some("o".into()),
            ..Default::default()
        };
        assert_eq!(compose_input(&n, CompositionMode::A, "\n").unwrap(), "a");
        assert_eq!(compose_input(&n, CompositionMode::Aso, "\n").unwrap(), "a\ns\no");
        assert_eq!(
            compose_input(&n, CompositionMode::Aso, DEFAULT_SEPARATOR).unwrap(),
            "a\nSubjective: s\nObjective: o"
        );
        let mut missing = n.clone();
        missing.objective = None;
        let err = compose_input(&missing, CompositionMode::Aso, "\n").unwrap_err().to_string();
        assert!(err.contains("note d") && err.contains("objective"), "{err}");
        assert!(compose_input(&missing, CompositionMode::A, "\n").is_ok());
    }

    #[test]
    fn targets_are_newline_joined_items() {
        assert_eq!(format_target(&note("d", "x"), "\n").unwrap(), "CHF\nAKI");
        assert_eq!(format_target(&note("d", "x"), "; ").unwrap(), "CHF; AKI");
    }

    #[test]
    fn truncate_examples() {
        let long: Vec<String> = (0..600).map(|i| format!("t{i}")).collect();
        let cut = truncate_tokens(&long.join(" "), 512);
        assert_eq!(cut.split(' ').count(), 512);
        assert!(cut.ends_with("t511"));
        assert_eq!(truncate_tokens("a  b\nc", 5), "a  b\nc");
        assert_eq!(truncate_tokens("a  b\nc", 1), "a");
        assert_eq!(truncate_tokens("a  b\nc", 2), "a b");
    }

    #[test]
    fn assemble_fills_with_best_augmented() {
        let notes: Vec<ProgressNote> = (0..764).map(|i| note(&format!("n{i}"), &format!("Sentence {i}. Other."))).collect();
        let pairs: Vec<GeneratedPair> = (0..400)
            .map(|j| {
                let i = j % 764;
                pair(&format!("n{i}"), &format!("Sentence {i}."), &format!("Variant {j}."), (j * 37 % 400) as f64 / 400.0)
            })
            .collect();
        let cfg = DatasetConfig::default();
        let set = assemble_training_set(&notes, &pairs, &cfg).unwrap();
        assert_eq!(set.len(), 1000);
        assert!(set[..764].iter().all(|t| t.provenance == Provenance::Original));
        let mut scores: Vec<f64> = pairs.iter().map(|p| p.scores[COMBINED]).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let threshold = scores[235];
        for t in &set[764..] {
            assert_eq!(t.provenance, Provenance::Augmented);
            let j: usize = t.input_text["Variant ".len()..].split('.').next().unwrap().parse().unwrap();
            assert!(pairs[j].scores[COMBINED] >= threshold);
            assert!(t.input_text.contains("Other.\nSubjective: s"));
            assert_eq!(t.target_text, "CHF\nAKI");
        }
    }

    #[test]
    fn assemble_edge_cases() {
        let notes = vec![note("a", "X. Y."), note("b", "Z.")];
        let cfg = DatasetConfig {
            target_size: 10,
            ..Default::default()
        };
        assert_eq!(assemble_training_set(&notes, &[], &cfg).unwrap().len(), 2);

        let small = DatasetConfig {
            target_size: 1,
            ..Default::default()
        };
        assert!(matches!(assemble_training_set(&notes, &[], &small), Err(Error::Data(_))));

        let pairs = vec![
            pair("zzz", "X.", "W.", 0.9),
            pair("a", "X.", "W.", 0.8),
            pair("a", "X.", "W.", 0.7),
            pair("a", "X.", "X.", 0.6),
            pair("a", "missing.", "W.", 0.5),
        ];
        let set = assemble_training_set(&notes, &pairs, &cfg).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set[2].input_text.starts_with("W. Y."));
        let keys: HashSet<_> = set.iter().map(|t| (&t.doc_id, &t.input_text)).collect();
        assert_eq!(keys.len(), set.len());
    }

    #[test]
    fn aso_extends_a() {
        for sep in ["\n", DEFAULT_SEPARATOR, " | "] {
            let n = note("d", "Assessment text.");
            let a = compose_input(&n, CompositionMode::A, sep).unwrap();
            assert!(compose_input(&n, CompositionMode::Aso, sep).unwrap().starts_with(&a));
        }
    }
}
