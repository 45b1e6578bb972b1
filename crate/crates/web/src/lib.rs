//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns JSON text (or a plain array) so the page needs no
//! generated TypeScript types.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use clinsum::annotation::{AnnotatorConfig, Annotators, Channel, I2b2Source, TermDictionary};
use clinsum::augmentation::self_debias_step;
use clinsum::corpus::{process_note, ProgressNote};
use clinsum::masking::{MaskKind, MaskPolicyConfig};
use clinsum::rouge::{score_pair, RougeOptions};

#[derive(Serialize)]
struct SentenceView {
    text: String,
    kind: MaskKind,
    umls: Vec<String>,
    i2b2: Vec<String>,
}

#[derive(Serialize)]
struct MaskView {
    input: String,
    target: String,
    num_masks: usize,
    sentences: Vec<SentenceView>,
}

fn terms(list: &str) -> Vec<&str> {
    list.split(['\n', ',', ';']).map(str::trim).filter(|t| !t.is_empty()).collect()
}

pub fn mask_note_json(
    text: &str,
    umls_terms: &str,
    i2b2_terms: &str,
    p_umls: f64,
    p_sentence: f64,
    seed: u64,
) -> Result<String, String> {
    let umls = TermDictionary::from_terms("umls", Channel::Umls, terms(umls_terms)).map_err(|e| e.to_string())?;
    let i2b2 = TermDictionary::from_terms("i2b2", Channel::I2b2, terms(i2b2_terms)).map_err(|e| e.to_string())?;
    let annotators = Annotators {
        umls,
        i2b2: I2b2Source::Dictionary(i2b2),
        config: AnnotatorConfig::default(),
    };
    let cfg = MaskPolicyConfig {
        p_umls,
        p_i2b2: 1.0 - p_umls,
        p_sentence,
        seed,
        ..Default::default()
    };
    let format = cfg.validate().map_err(|e| e.to_string())?;
    let note = ProgressNote::from_text("demo", text);
    let result = process_note(&note, &annotators, &cfg, &format).map_err(|e| e.to_string())?;
    let surfaces = |spans: &[clinsum::annotation::EntitySpan]| spans.iter().map(|s| s.surface.clone()).collect();
    let view = MaskView {
        input: result.example.input_text,
        target: result.example.target_text,
        num_masks: result.example.num_masks,
        sentences: result
            .sentences
            .iter()
            .zip(&result.kinds)
            .map(|(s, &kind)| SentenceView {
                text: s.text(text).to_string(),
                kind,
                umls: surfaces(&s.umls_spans),
                i2b2: surfaces(&s.i2b2_spans),
            })
            .collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

pub fn rouge_json(prediction: &str, reference: &str, stem: bool) -> String {
    let score = score_pair(prediction, reference, RougeOptions { stem });
    serde_json::to_string(&score).expect("scores serialize")
}

/// Splits the counter distributions, given back to back, into rows of
/// `target.len()`.
pub fn self_debias_rows(target: &[f64], counters: &[f64], lambda: f64) -> Result<Vec<f64>, String> {
    if target.is_empty() || counters.len() % target.len() != 0 {
        return Err(format!(
            "{} counter values do not split into rows of {}",
            counters.len(),
            target.len()
        ));
    }
    let rows: Vec<Vec<f64>> = counters.chunks(target.len()).map(<[f64]>::to_vec).collect();
    self_debias_step(target, &rows, lambda).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn mask_note(
    text: &str,
    umls_terms: &str,
    i2b2_terms: &str,
    p_umls: f64,
    p_sentence: f64,
    seed: u32,
) -> Result<String, JsValue> {
    mask_note_json(text, umls_terms, i2b2_terms, p_umls, p_sentence, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rouge(prediction: &str, reference: &str, stem: bool) -> String {
    rouge_json(prediction, reference, stem)
}

#[wasm_bindgen]
pub fn self_debias(target: Vec<f64>, counters: Vec<f64>, lambda: f64) -> Result<Vec<f64>, JsValue> {
    self_debias_rows(&target, &counters, lambda).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_note_reports_sentences() {
        let json = mask_note_json(
            "Pt on CPAP overnight. Known heart failure. Comfortable.",
            "heart failure",
            "cpap",
            0.7,
            0.0,
            1,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["sentences"].as_array().unwrap().len(), 3);
        assert_eq!(v["sentences"][0]["i2b2"][0], "CPAP");
        assert_eq!(v["sentences"][1]["kind"], "MASK_UMLS_SPANS");
        assert_eq!(v["sentences"][2]["kind"], "NO_MASK");
        assert_eq!(v["num_masks"], 2);
        assert!(mask_note_json("x", "", "cpap", 0.7, 0.1, 0).is_err());
        assert!(mask_note_json("x", "a", "b", 1.5, 0.1, 0).is_err());
    }

    #[test]
    fn rouge_and_debias() {
        let v: serde_json::Value = serde_json::from_str(&rouge_json("the cat sat", "the cat ate", false)).unwrap();
        assert_eq!(v["r2"]["f1"], 0.5);
        assert_eq!(self_debias_rows(&[0.6, 0.4], &[0.1, 0.9], 1.0).unwrap(), [1.0, 0.0]);
        assert!(self_debias_rows(&[0.6, 0.4], &[0.1, 0.2, 0.7], 1.0).is_err());
    }
}
