//! Instruction templates with `[Term 1]`, `[Term 2]` and `[Source]` slots.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const TERM_1: &str = "[Term 1]";
pub const TERM_2: &str = "[Term 2]";
pub const SOURCE: &str = "[Source]";
pub const CONTINUATION: &str = "Sentence 2:";

/// Similarity label of a generation instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelId {
    /// 1: the two sentences mean the same thing.
    SameThing,
    /// 0.5: somewhat similar.
    SomewhatSimilar,
    /// 0: completely different topics.
    DifferentTopics,
}

impl LabelId {
    pub const ALL: [LabelId; 3] = [LabelId::SameThing, LabelId::SomewhatSimilar, LabelId::DifferentTopics];

    pub fn value(self) -> f64 {
        match self {
            LabelId::SameThing => 1.0,
            LabelId::SomewhatSimilar => 0.5,
            LabelId::DifferentTopics => 0.0,
        }
    }

    pub fn from_value(value: f64) -> Option<Self> {
        LabelId::ALL.into_iter().find(|l| l.value() == value)
    }

    /// The other two labels, used as counter instructions.
    pub fn counters(self) -> Vec<LabelId> {
        LabelId::ALL.into_iter().filter(|&l| l != self).collect()
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for LabelId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for LabelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        LabelId::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("unknown label {v}; expected 1, 0.5 or 0")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Term(usize),
    Source,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    label: LabelId,
    text: String,
    pieces: Vec<Piece>,
}

impl InstructionTemplate {
    pub fn new(label: LabelId, text: &str) -> Result<Self> {
        let text = text.trim_end().to_string();
        if !text.ends_with(CONTINUATION) {
            return Err(Error::Template(format!("template for label {label} must end with `{CONTINUATION}`")));
        }
        let mut pieces = Vec::new();
        let mut rest = text.as_str();
        let mut sources = 0;
        while !rest.is_empty() {
            let next = [(TERM_1, Piece::Term(0)), (TERM_2, Piece::Term(1)), (SOURCE, Piece::Source)]
                .into_iter()
                .filter_map(|(slot, piece)| rest.find(slot).map(|at| (at, slot, piece)))
                .min_by_key(|(at, _, _)| *at);
            match next {
                Some((at, slot, piece)) => {
                    if at > 0 {
                        pieces.push(Piece::Text(rest[..at].to_string()));
                    }
                    sources += usize::from(piece == Piece::Source);
                    pieces.push(piece);
                    rest = &rest[at + slot.len()..];
                }
                None => {
                    pieces.push(Piece::Text(rest.to_string()));
                    rest = "";
                }
            }
        }
        if sources != 1 {
            return Err(Error::Template(format!(
                "template for label {label} must contain `{SOURCE}` exactly once, found {sources}"
            )));
        }
        Ok(InstructionTemplate { label, text, pieces })
    }

    pub fn label(&self) -> LabelId {
        self.label
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Number of term slots the template needs.
    pub fn arity(&self) -> usize {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Term(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Fills the slots in one pass, so inserted text is never re-scanned.
    pub fn instantiate<S: AsRef<str>>(&self, terms: &[S], source: &str) -> Result<String> {
        let mut out = String::with_capacity(self.text.len() + source.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Source => out.push_str(source),
                Piece::Term(i) => {
                    let term = terms.get(*i).ok_or_else(|| {
                        Error::Template(format!(
                            "template for label {} needs {} terms, got {}",
                            self.label,
                            self.arity(),
                            terms.len()
                        ))
                    })?;
                    out.push_str(term.as_ref());
                }
            }
        }
        Ok(out)
    }
}

pub const SAME_TWO_TERMS: &str =
    "Write two sentences that mean the same thing but keep these two healthcare terms [Term 1],[Term 2]. Sentence 1: [Source] Sentence 2:";
pub const SAME_ONE_TERM: &str =
    "Write two sentences that mean the same thing but keep this healthcare term [Term 1]. Sentence 1: [Source] Sentence 2:";
pub const SAME_NO_TERMS: &str = "Write two sentences that mean the same thing. Sentence 1: [Source] Sentence 2:";
pub const SOMEWHAT_SIMILAR: &str = "Write two sentences that are somewhat similar. Sentence 1: [Source] Sentence 2:";
pub const DIFFERENT_TOPICS: &str =
    "Write two sentences that are on completely different topics. Sentence 1: [Source] Sentence 2:";

/// File names inside a template directory.
pub const TEMPLATE_FILES: [(&str, LabelId, usize); 5] = [
    ("same.txt", LabelId::SameThing, 2),
    ("same-one-term.txt", LabelId::SameThing, 1),
    ("same-no-terms.txt", LabelId::SameThing, 0),
    ("somewhat.txt", LabelId::SomewhatSimilar, 0),
    ("different.txt", LabelId::DifferentTopics, 0),
];

/// Templates for every label. The same-thing label has variants for two,
/// one and zero preserved terms.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    same: [InstructionTemplate; 3],
    somewhat: InstructionTemplate,
    different: InstructionTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let t = |label, text| InstructionTemplate::new(label, text).expect("built-in template");
        TemplateSet {
            same: [
                t(LabelId::SameThing, SAME_NO_TERMS),
                t(LabelId::SameThing, SAME_ONE_TERM),
                t(LabelId::SameThing, SAME_TWO_TERMS),
            ],
            somewhat: t(LabelId::SomewhatSimilar, SOMEWHAT_SIMILAR),
            different: t(LabelId::DifferentTopics, DIFFERENT_TOPICS),
        }
    }
}

impl TemplateSet {
    /// Loads the files named in [`TEMPLATE_FILES`]; missing files keep the
    /// built-in text.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Config(format!("template directory {} does not exist", dir.display())));
        }
        let mut set = TemplateSet::default();
        for (name, label, arity) in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let tmpl = InstructionTemplate::new(label, &raw)
                .map_err(|e| Error::Template(format!("{}: {e}", path.display())))?;
            if label == LabelId::SameThing && tmpl.arity() != arity {
                return Err(Error::Template(format!(
                    "{}: expected {arity} term slots, found {}",
                    path.display(),
                    tmpl.arity()
                )));
            }
            *set.slot_mut(label, arity) = tmpl;
        }
        Ok(set)
    }

    fn slot_mut(&mut self, label: LabelId, arity: usize) -> &mut InstructionTemplate {
        match label {
            LabelId::SameThing => &mut self.same[arity.min(2)],
            LabelId::SomewhatSimilar => &mut self.somewhat,
            LabelId::DifferentTopics => &mut self.different,
        }
    }

    /// The template to use for `label` given how many terms are available.
    pub fn select(&self, label: LabelId, available_terms: usize) -> &InstructionTemplate {
        match label {
            LabelId::SameThing => &self.same[available_terms.min(2)],
            LabelId::SomewhatSimilar => &self.somewhat,
            LabelId::DifferentTopics => &self.different,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_thing_prompt_substitution() {
        let set = TemplateSet::default();
        let prompt = set
            .select(LabelId::SameThing, 2)
            .instantiate(&["CPAP", "sat drifts"], "Pt on CPAP with sat drifts overnight.")
            .unwrap();
        assert_eq!(
            prompt,
            "Write two sentences that mean the same thing but keep these two healthcare terms CPAP,sat drifts. \
             Sentence 1: Pt on CPAP with sat drifts overnight. Sentence 2:"
        );
    }

    #[test]
    fn counter_prompt_mentions_different_topics() {
        let set = TemplateSet::default();
        let prompt = set.select(LabelId::DifferentTopics, 0).instantiate::<&str>(&[], "Pt stable.").unwrap();
        assert!(prompt.contains("different topics"));
        assert!(prompt.ends_with("Sentence 1: Pt stable. Sentence 2:"));
    }

    #[test]
    fn too_few_terms_is_an_error() {
        let set = TemplateSet::default();
        let err = set.select(LabelId::SameThing, 2).instantiate(&["CPAP"], "x");
        assert!(matches!(err, Err(Error::Template(_))));
    }

    #[test]
    fn slots_are_not_rescanned() {
        let t = InstructionTemplate::new(LabelId::SameThing, SAME_ONE_TERM).unwrap();
        let p = t.instantiate(&["[Source]"], "[Term 1]").unwrap();
        assert!(p.contains("term [Source]. Sentence 1: [Term 1] Sentence 2:"));
    }

    #[test]
    fn invalid_templates() {
        assert!(InstructionTemplate::new(LabelId::SameThing, "Say [Source].").is_err());
        assert!(InstructionTemplate::new(LabelId::SameThing, "No source. Sentence 2:").is_err());
        assert_eq!(InstructionTemplate::new(LabelId::SameThing, SAME_TWO_TERMS).unwrap().arity(), 2);
    }

    #[test]
    fn label_serde() {
        assert_eq!(serde_json::to_string(&LabelId::SomewhatSimilar).unwrap(), "0.5");
        assert_eq!(serde_json::from_str::<LabelId>("1").unwrap(), LabelId::SameThing);
        assert!(serde_json::from_str::<LabelId>("0.25").is_err());
        assert_eq!(LabelId::SameThing.counters(), [LabelId::SomewhatSimilar, LabelId::DifferentTopics]);
    }

    #[test]
    fn load_dir_overrides_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("different.txt"), "Write about something else. Sentence 1: [Source] Sentence 2:\n").unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        assert!(set.select(LabelId::DifferentTopics, 0).text().starts_with("Write about something else"));
        assert_eq!(set.select(LabelId::SameThing, 2).text(), SAME_TWO_TERMS);

        fs::write(dir.path().join("same.txt"), "Keep [Term 1]. Sentence 1: [Source] Sentence 2:").unwrap();
        assert!(TemplateSet::load_dir(dir.path()).is_err());
        assert!(TemplateSet::load_dir(dir.path().join("missing")).is_err());
    }
}
