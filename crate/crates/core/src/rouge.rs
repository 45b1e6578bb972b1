//! ROUGE-1, ROUGE-2 and ROUGE-L (summary-level LCS over the whole token
//! sequence).

use std::collections::HashMap;
use std::fmt::Write as _;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }

    fn from_counts(hits: usize, cand: usize, refs: usize) -> Self {
        if cand == 0 || refs == 0 {
            return Prf::default();
        }
        Prf::new(hits as f64 / cand as f64, hits as f64 / refs as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RougeOptions {
    /// Porter-stem tokens (English Snowball) before matching.
    pub stem: bool,
}

/// Lowercased whitespace tokens, optionally stemmed.
pub fn rouge_tokens(text: &str, opts: RougeOptions) -> Vec<String> {
    let lower = text.to_lowercase();
    let tokens = lower.split_whitespace();
    if opts.stem {
        let stemmer = Stemmer::create(Algorithm::English);
        tokens.map(|t| stemmer.stem(t).into_owned()).collect()
    } else {
        tokens.map(str::to_string).collect()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap on pre-tokenized input.
pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> Prf {
    if n == 0 || candidate.len() < n || reference.len() < n {
        return Prf::default();
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let hits: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(hits, candidate.len() + 1 - n, reference.len() + 1 - n)
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    let opts = RougeOptions::default();
    rouge_n_tokens(&rouge_tokens(candidate, opts), &rouge_tokens(reference, opts), n)
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let opts = RougeOptions::default();
    rouge_l_tokens(&rouge_tokens(candidate, opts), &rouge_tokens(reference, opts))
}

pub fn score_pair(candidate: &str, reference: &str, opts: RougeOptions) -> RougeScore {
    let c = rouge_tokens(candidate, opts);
    let r = rouge_tokens(reference, opts);
    RougeScore {
        r1: rouge_n_tokens(&c, &r, 1),
        r2: rouge_n_tokens(&c, &r, 2),
        rl: rouge_l_tokens(&c, &r),
    }
}

/// Mean of the per-pair scores, component by component.
pub fn evaluate_corpus<P: AsRef<str>, R: AsRef<str>>(
    predictions: &[P],
    references: &[R],
    opts: RougeOptions,
) -> Result<RougeScore> {
    if predictions.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no prediction/reference pairs to evaluate".into()));
    }
    let mut sum = [[0.0f64; 3]; 3];
    for (p, r) in predictions.iter().zip(references) {
        let s = score_pair(p.as_ref(), r.as_ref(), opts);
        for (acc, prf) in sum.iter_mut().zip([s.r1, s.r2, s.rl]) {
            acc[0] += prf.precision;
            acc[1] += prf.recall;
            acc[2] += prf.f1;
        }
    }
    let n = predictions.len() as f64;
    let mean = |a: [f64; 3]| Prf {
        precision: a[0] / n,
        recall: a[1] / n,
        f1: a[2] / n,
    };
    Ok(RougeScore {
        r1: mean(sum[0]),
        r2: mean(sum[1]),
        rl: mean(sum[2]),
    })
}

/// Two tables scaled to percentages: F1 for R-1/R-2/R-L, then F1, precision
/// and recall of R-L.
pub fn format_table(score: &RougeScore) -> String {
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    let mut out = String::new();
    let _ = writeln!(out, "| {:>6} | {:>6} | {:>6} |", "R-1", "R-2", "R-L");
    let _ = writeln!(out, "|--------|--------|--------|");
    let _ = writeln!(out, "| {:>6} | {:>6} | {:>6} |", pct(score.r1.f1), pct(score.r2.f1), pct(score.rl.f1));
    out.push('\n');
    let _ = writeln!(out, "| {:>6} | {:>6} | {:>6} |", "R-F1", "R-P", "R-R");
    let _ = writeln!(out, "|--------|--------|--------|");
    let _ = writeln!(
        out,
        "| {:>6} | {:>6} | {:>6} |",
        pct(score.rl.f1),
        pct(score.rl.precision),
        pct(score.rl.recall)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(p: Prf, expect: (f64, f64, f64)) -> bool {
        (p.precision - expect.0).abs() < 1e-12 && (p.recall - expect.1).abs() < 1e-12 && (p.f1 - expect.2).abs() < 1e-12
    }

    /// Longest subsequence of `a` (enumerated by bitmask) that is also a
    /// subsequence of `b`.
    fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
        let is_subseq = |s: &[u8]| {
            let mut it = b.iter();
            s.iter().all(|x| it.any(|y| y == x))
        };
        (0u32..1 << a.len())
            .map(|mask| (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect::<Vec<_>>())
            .filter(|s| is_subseq(s))
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn examples() {
        let two_thirds = 2.0 / 3.0;
        assert!(close(rouge_n("the cat sat", "the cat ate", 1), (two_thirds, two_thirds, two_thirds)));
        assert!(close(rouge_n("the cat sat", "the cat ate", 2), (0.5, 0.5, 0.5)));
        assert!(close(rouge_l("the cat sat", "the cat ate"), (two_thirds, two_thirds, two_thirds)));
        assert!(close(rouge_l("c b a", "a b c"), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)));
        assert!(close(rouge_n("The Cat", "the cat", 2), (1.0, 1.0, 1.0)));
        assert!(close(rouge_n("cat", "the cat", 2), (0.0, 0.0, 0.0)));
        assert!(close(rouge_l("", "a"), (0.0, 0.0, 0.0)));
    }

    #[test]
    fn clipping() {
        // candidate repeats "the" 3 times, reference has it twice
        let p = rouge_n("the the the", "the cat the", 1);
        assert!(close(p, (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0)));
    }

    #[test]
    fn stemming_flag() {
        let plain = score_pair("patients improving", "patient improved", RougeOptions::default());
        let stemmed = score_pair("patients improving", "patient improved", RougeOptions { stem: true });
        assert_eq!(plain.r1.f1, 0.0);
        assert_eq!(stemmed.r1.f1, 1.0);
    }

    #[test]
    fn corpus_mean_and_errors() {
        // f1 = 0.5 (two of four tokens shared) and 1.0
        let s = evaluate_corpus(&["a b x y", "a"], &["a b c d", "a"], RougeOptions::default()).unwrap();
        assert!((s.r1.f1 - 0.75).abs() < 1e-12);
        let single = evaluate_corpus(&["the cat sat"], &["the cat ate"], RougeOptions::default()).unwrap();
        assert_eq!(single, score_pair("the cat sat", "the cat ate", RougeOptions::default()));
        assert!(matches!(
            evaluate_corpus(&["a"], &["a", "b"], RougeOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn table_layout() {
        let t = format_table(&score_pair("the cat sat", "the cat ate", RougeOptions::default()));
        assert!(t.contains("R-1") && t.contains("R-F1"));
        assert!(t.contains("66.67") && t.contains("50.00"));
    }

    proptest! {
        #[test]
        fn lcs_matches_oracle(a in proptest::collection::vec(0u8..4, 0..=12), b in proptest::collection::vec(0u8..4, 0..=12)) {
            prop_assert_eq!(lcs_len(&a, &b), lcs_oracle(&a, &b));
        }

        #[test]
        fn bounds_identity_and_swap(
            a in proptest::collection::vec("[a-d]", 0..10),
            b in proptest::collection::vec("[a-d]", 0..10),
        ) {
            let (a, b) = (a.join(" "), b.join(" "));
            for n in 1..=2 {
                let x = rouge_n(&a, &b, n);
                let y = rouge_n(&b, &a, n);
                prop_assert_eq!(x.precision, y.recall);
                prop_assert_eq!(x.recall, y.precision);
                for v in [x.precision, x.recall, x.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if a.split_whitespace().count() >= n {
                    prop_assert_eq!(rouge_n(&a, &a, n), Prf::new(1.0, 1.0));
                }
            }
            let x = rouge_l(&a, &b);
            let y = rouge_l(&b, &a);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert!((0.0..=1.0).contains(&x.f1));
        }
    }
}
