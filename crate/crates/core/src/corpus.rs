//! Streaming construction of the masked pre-training corpus.
//!
//! Notes flow reader → worker pool (segment, annotate, mask) → ordered
//! writer. Work is cut into bounded chunks; inside a chunk each worker takes
//! a contiguous slice and results are emitted in input order, so the output
//! is the same for any worker count.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{annotate_sentence, AnnotatedSentence, Annotators};
use crate::error::{Error, Result};
use crate::masking::{mask_document, MaskKind, MaskPolicyConfig, MaskedExample, SentinelFormat};

/// Notes per worker in one chunk.
const CHUNK_PER_WORKER: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProgressNote {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subjective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl ProgressNote {
    pub fn from_text(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        ProgressNote {
            doc_id: doc_id.into(),
            text: Some(text.into()),
            ..Default::default()
        }
    }

    /// The note body: `text` if present, otherwise the available
    /// assessment, subjective and objective sections separated by blank lines.
    pub fn body(&self) -> String {
        if let Some(text) = &self.text {
            return text.clone();
        }
        [&self.assessment, &self.subjective, &self.objective]
            .into_iter()
            .flatten()
            .filter(|s| !s.trim().is_empty())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Sentence boundaries as byte ranges `[start, end)`.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace and then an
/// uppercase letter or the end of the text, or at a blank line. Sentences
/// carry no leading or trailing whitespace, so the gaps between consecutive
/// ranges (and before the first and after the last) are whitespace only.
pub fn segment_sentences(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let push = |from: usize, to: usize, out: &mut Vec<(usize, usize)>| {
        let piece = &text[from..to];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            out.push((from + lead, from + lead + trimmed.len()));
        }
    };

    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let end = i + c.len_utf8();
        let rest = &text[end..];
        let ws_len = rest.len() - rest.trim_start().len();
        if ws_len == 0 {
            continue;
        }
        let gap = &rest[..ws_len];
        let after = rest[ws_len..].chars().next();
        let terminal = matches!(c, '.' | '!' | '?') && after.is_none_or(char::is_uppercase);
        let paragraph = gap.matches('\n').count() >= 2;
        if terminal || paragraph {
            push(start, end, &mut out);
            start = end;
        }
    }
    push(start, text.len(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_rows: u64,
    pub rows_no_umls: u64,
    pub rows_no_i2b2: u64,
    pub rows_no_entities: u64,
    pub masks_total: u64,
    pub sentences_total: u64,
    pub sentences_umls_masked: u64,
    pub sentences_i2b2_masked: u64,
    pub sentences_whole_masked: u64,
    pub sentences_unmasked: u64,
    pub skipped_rows: u64,
}

/// Outcome of processing one note.
#[derive(Debug, Clone)]
pub struct NoteResult {
    pub example: MaskedExample,
    pub sentences: Vec<AnnotatedSentence>,
    pub kinds: Vec<MaskKind>,
}

impl CorpusStats {
    fn record(&mut self, note: &NoteResult) {
        let any_umls = note.sentences.iter().any(|s| !s.umls_spans.is_empty());
        let any_i2b2 = note.sentences.iter().any(|s| !s.i2b2_spans.is_empty());
        self.total_rows += 1;
        self.rows_no_umls += u64::from(!any_umls);
        self.rows_no_i2b2 += u64::from(!any_i2b2);
        self.rows_no_entities += u64::from(!any_umls && !any_i2b2);
        self.masks_total += note.example.num_masks as u64;
        self.sentences_total += note.sentences.len() as u64;
        for kind in &note.kinds {
            match kind {
                MaskKind::MaskUmlsSpans => self.sentences_umls_masked += 1,
                MaskKind::MaskI2b2Spans => self.sentences_i2b2_masked += 1,
                MaskKind::MaskWholeSentence => self.sentences_whole_masked += 1,
                MaskKind::NoMask => self.sentences_unmasked += 1,
            }
        }
    }
}

/// Segments, annotates and masks one note.
pub fn process_note(
    note: &ProgressNote,
    annotators: &Annotators,
    cfg: &MaskPolicyConfig,
    format: &SentinelFormat,
) -> Result<NoteResult> {
    let text = note.body();
    if note.doc_id.is_empty() {
        return Err(Error::Data("note without doc_id".into()));
    }
    if text.trim().is_empty() {
        return Err(Error::Data(format!("note {} has no text", note.doc_id)));
    }
    let sentences: Vec<AnnotatedSentence> = segment_sentences(&text)
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| annotate_sentence(&text, &note.doc_id, i, start, end, annotators))
        .collect();
    let (example, decisions) = mask_document(&note.doc_id, &text, &sentences, cfg, format)?;
    Ok(NoteResult {
        example,
        sentences,
        kinds: decisions.iter().map(|d| d.kind).collect(),
    })
}

fn process_chunk(
    chunk: &[ProgressNote],
    annotators: &Annotators,
    cfg: &MaskPolicyConfig,
    format: &SentinelFormat,
    workers: usize,
) -> Vec<Result<NoteResult>> {
    if workers <= 1 || chunk.len() < 2 {
        return chunk.iter().map(|n| process_note(n, annotators, cfg, format)).collect();
    }
    let per_worker = chunk.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunk
            .chunks(per_worker)
            .map(|slice| {
                scope.spawn(move || {
                    slice
                        .iter()
                        .map(|n| process_note(n, annotators, cfg, format))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("corpus worker panicked"))
            .collect()
    })
}

/// Builds one masked example per note and passes it to `sink` in input order.
///
/// Unreadable records, notes without text, duplicate doc ids and notes
/// that cannot be masked are skipped with a warning and counted in
/// `skipped_rows`; I/O errors and sink errors abort.
pub fn build_pretrain_corpus<I, F>(
    notes: I,
    annotators: &Annotators,
    cfg: &MaskPolicyConfig,
    workers: usize,
    mut sink: F,
) -> Result<CorpusStats>
where
    I: IntoIterator<Item = Result<ProgressNote>>,
    F: FnMut(&MaskedExample) -> Result<()>,
{
    let format = cfg.validate()?;
    annotators.config.validate()?;
    let workers = workers.max(1);
    let chunk_size = CHUNK_PER_WORKER * workers;

    let mut stats = CorpusStats::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut chunk: Vec<ProgressNote> = Vec::with_capacity(chunk_size);
    let mut notes = notes.into_iter().peekable();

    loop {
        chunk.clear();
        while chunk.len() < chunk_size {
            match notes.next() {
                None => break,
                Some(Ok(note)) => {
                    if !seen.insert(note.doc_id.clone()) {
                        log::warn!("duplicate doc_id {}; note skipped", note.doc_id);
                        stats.skipped_rows += 1;
                        continue;
                    }
                    chunk.push(note);
                }
                Some(Err(e)) if e.is_recoverable() => {
                    log::warn!("skipping note: {e}");
                    stats.skipped_rows += 1;
                }
                Some(Err(e)) => return Err(e),
            }
        }
        if chunk.is_empty() {
            break;
        }
        for result in process_chunk(&chunk, annotators, cfg, &format, workers) {
            match result {
                Ok(note) => {
                    stats.record(&note);
                    sink(&note.example)?;
                }
                Err(e) if e.is_recoverable() => {
                    log::warn!("skipping note: {e}");
                    stats.skipped_rows += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if notes.peek().is_none() {
            break;
        }
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Note input
// ---------------------------------------------------------------------------

/// Reads line-delimited JSON note records. Blank lines are ignored; a line
/// that does not parse yields a [`Error::Parse`] item and reading continues.
pub fn read_note_records(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<ProgressNote>>> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(&path, e))),
            Ok(line) if line.trim().is_empty() => None,
            Ok(line) => Some(serde_json::from_str::<ProgressNote>(&line).map_err(|e| Error::parse(&path, i + 1, e))),
        }))
}

fn is_record_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json" | "ndjson"))
}

/// Notes from a `.jsonl` record file, a plain-text file (one note whose
/// doc id is the file stem), or a directory of such files in name order.
pub fn read_notes(path: impl AsRef<Path>) -> Result<Box<dyn Iterator<Item = Result<ProgressNote>>>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(path, e)))
            .collect::<Result<_>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        let iter = files.into_iter().flat_map(|file| match read_notes(&file) {
            Ok(inner) => inner,
            Err(e) => Box::new(std::iter::once(Err(e))),
        });
        return Ok(Box::new(iter));
    }
    if is_record_file(path) {
        return Ok(Box::new(read_note_records(path.to_path_buf())?));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Box::new(std::iter::once(Ok(ProgressNote::from_text(doc_id, text)))))
}

// ---------------------------------------------------------------------------
// Corpus records
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord<'a> {
    doc_id: std::borrow::Cow<'a, str>,
    input: std::borrow::Cow<'a, str>,
    target: std::borrow::Cow<'a, str>,
}

/// Line-delimited writer for `{"doc_id", "input", "target"}` records.
pub struct CorpusWriter<W: Write> {
    out: W,
    path: PathBuf,
}

impl CorpusWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(CorpusWriter {
            out: BufWriter::new(file),
            path,
        })
    }
}

impl<W: Write> CorpusWriter<W> {
    pub fn new(out: W) -> Self {
        CorpusWriter {
            out,
            path: PathBuf::from("<stream>"),
        }
    }

    pub fn write(&mut self, example: &MaskedExample) -> Result<()> {
        let record = CorpusRecord {
            doc_id: example.doc_id.as_str().into(),
            input: example.input_text.as_str().into(),
            target: example.target_text.as_str().into(),
        };
        serde_json::to_writer(&mut self.out, &record).map_err(|e| Error::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.out)
    }
}

pub fn write_corpus<'a>(examples: impl IntoIterator<Item = &'a MaskedExample>, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = CorpusWriter::create(path)?;
    for example in examples {
        writer.write(example)?;
    }
    writer.finish().map(drop)
}

/// Streams corpus records back; `num_masks` is recovered from the target.
pub fn corpus_records(
    path: impl AsRef<Path>,
    format: SentinelFormat,
) -> Result<impl Iterator<Item = Result<MaskedExample>>> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(BufReader::new(file).lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Err(e) => return Some(Err(Error::io(&path, e))),
            Ok(line) if line.trim().is_empty() => return None,
            Ok(line) => line,
        };
        let parsed = serde_json::from_str::<CorpusRecord>(&line)
            .map_err(|e| Error::parse(&path, i + 1, e))
            .and_then(|r| {
                let num_masks = crate::masking::target_spans(&r.target, &format)
                    .map_err(|e| Error::parse(&path, i + 1, e))?
                    .len();
                Ok(MaskedExample {
                    doc_id: r.doc_id.into_owned(),
                    input_text: r.input.into_owned(),
                    target_text: r.target.into_owned(),
                    num_masks,
                })
            });
        Some(parsed)
    }))
}

pub fn read_corpus(path: impl AsRef<Path>, format: &SentinelFormat) -> Result<Vec<MaskedExample>> {
    corpus_records(path, format.clone())?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{AnnotatorConfig, Channel, I2b2Source, TermDictionary};
    use proptest::prelude::*;

    fn pieces(text: &str) -> Vec<&str> {
        segment_sentences(text).into_iter().map(|(s, e)| &text[s..e]).collect()
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(pieces("A b. C d."), ["A b.", "C d."]);
        assert_eq!(pieces("no terminal punct"), ["no terminal punct"]);
        assert!(pieces("").is_empty());
        assert!(pieces(" \n ").is_empty());
        assert_eq!(pieces("bp 120/80. hr 88"), ["bp 120/80. hr 88"]);
        assert_eq!(pieces("Stable!  Plan: diurese?\nContinue."), ["Stable!", "Plan: diurese?", "Continue."]);
        assert_eq!(pieces("heading\n\n- item one\n- item two"), ["heading", "- item one\n- item two"]);
        assert_eq!(pieces("Ends here.   "), ["Ends here."]);
    }

    proptest! {
        #[test]
        fn segmentation_preserves_text(text in "[A-Za-z .!?\n]{0,60}") {
            let ranges = segment_sentences(&text);
            let mut cursor = 0;
            for &(s, e) in &ranges {
                prop_assert!(s >= cursor && s < e);
                prop_assert!(text[cursor..s].chars().all(char::is_whitespace));
                let piece = &text[s..e];
                prop_assert_eq!(piece.trim(), piece);
                cursor = e;
            }
            prop_assert!(text[cursor..].chars().all(char::is_whitespace));
        }
    }

    fn annotators() -> Annotators {
        Annotators {
            umls: TermDictionary::from_terms("umls", Channel::Umls, ["cpap", "heart failure"]).unwrap(),
            i2b2: I2b2Source::Dictionary(TermDictionary::from_terms("i2b2", Channel::I2b2, ["sat drifts", "anemia"]).unwrap()),
            config: AnnotatorConfig::default(),
        }
    }

    fn build(notes: Vec<Result<ProgressNote>>, workers: usize) -> (Vec<MaskedExample>, CorpusStats) {
        let mut out = Vec::new();
        let stats = build_pretrain_corpus(notes, &annotators(), &MaskPolicyConfig::default(), workers, |ex| {
            out.push(ex.clone());
            Ok(())
        })
        .unwrap();
        (out, stats)
    }

    #[test]
    fn stats_for_three_notes() {
        let notes = vec![
            Ok(ProgressNote::from_text("n1", "Pt on CPAP overnight. Sat drifts noted.")),
            Ok(ProgressNote::from_text("n2", "Known heart failure. Stable.")),
            Ok(ProgressNote::from_text("n3", "Comfortable. Family at bedside.")),
        ];
        let (out, stats) = build(notes, 1);
        assert_eq!(out.len(), 3);
        assert_eq!(
            (stats.total_rows, stats.rows_no_umls, stats.rows_no_i2b2, stats.rows_no_entities),
            (3, 1, 2, 1)
        );
        assert_eq!(stats.sentences_total, 6);
        assert_eq!(
            stats.sentences_umls_masked + stats.sentences_i2b2_masked + stats.sentences_whole_masked + stats.sentences_unmasked,
            6
        );
    }

    #[test]
    fn empty_stream_and_skips() {
        let (out, stats) = build(vec![], 1);
        assert!(out.is_empty());
        assert_eq!(stats, CorpusStats::default());

        let notes = vec![
            Ok(ProgressNote::from_text("a", "Fine.")),
            Err(Error::parse("notes.jsonl", 2, "bad json")),
            Ok(ProgressNote::from_text("a", "Duplicate.")),
            Ok(ProgressNote::from_text("b", "   ")),
            Ok(ProgressNote::from_text("c", "Has <extra_id_0> inside.")),
        ];
        let (out, stats) = build(notes, 1);
        assert_eq!(out.len(), 1);
        assert_eq!((stats.total_rows, stats.skipped_rows), (1, 4));
    }

    #[test]
    fn io_errors_abort() {
        let notes = vec![Err(Error::io("x", std::io::Error::other("disk")))];
        let result = build_pretrain_corpus(notes, &annotators(), &MaskPolicyConfig::default(), 1, |_| Ok(()));
        assert!(matches!(result, Err(Error::Io { .. })));
    }

    #[test]
    fn output_independent_of_workers() {
        let notes = || {
            (0..1500)
                .map(|i| Ok(ProgressNote::from_text(format!("n{i}"), format!("Pt {i} on CPAP. Quiet night {i}. Anemia stable."))))
                .collect::<Vec<_>>()
        };
        let (one, s1) = build(notes(), 1);
        let (many, s4) = build(notes(), 4);
        assert_eq!(one, many);
        assert_eq!(s1, s4);
    }

    #[test]
    fn corpus_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let f = SentinelFormat::default();
        let examples: Vec<MaskedExample> = (0..100)
            .map(|i| MaskedExample {
                doc_id: format!("d{i}"),
                input_text: format!("x \"quoted\"\n<extra_id_0> {i}"),
                target_text: format!("<extra_id_0> span {i} <extra_id_1>"),
                num_masks: 1,
            })
            .collect();
        write_corpus(&examples, &path).unwrap();
        assert_eq!(read_corpus(&path, &f).unwrap(), examples);

        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(read_corpus(&empty, &f).unwrap().is_empty());

        let corrupt = dir.path().join("corrupt.jsonl");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        fs::write(&corrupt, text).unwrap();
        match read_corpus(&corrupt, &f) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 101),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reads_notes_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "Second note.").unwrap();
        fs::write(
            dir.path().join("a.jsonl"),
            "{\"doc_id\":\"r1\",\"text\":\"First.\"}\n\n{\"doc_id\":\"r2\",\"assessment\":\"A.\",\"objective\":\"O.\"}\nnope\n",
        )
        .unwrap();
        let notes: Vec<Result<ProgressNote>> = read_notes(dir.path()).unwrap().collect();
        assert_eq!(notes.len(), 4);
        assert_eq!(notes[0].as_ref().unwrap().doc_id, "r1");
        assert_eq!(notes[1].as_ref().unwrap().body(), "A.\n\nO.");
        assert!(matches!(notes[2], Err(Error::Parse { line: 4, .. })));
        assert_eq!(notes[3].as_ref().unwrap().doc_id, "b");
    }
}
