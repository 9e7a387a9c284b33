//! Per-case answer and retrieval metrics.

use std::collections::{BTreeSet, HashMap};

use crate::doc_model::ChunkId;

pub const ANLS_THRESHOLD: f64 = 0.5;

/// Lowercase, collapse whitespace, drop trailing punctuation.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    let keep = out
        .trim_end_matches(|c: char| !c.is_alphanumeric() && !c.is_whitespace())
        .trim_end()
        .len();
    out.truncate(keep);
    out
}

/// Alphanumeric runs of the normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unit-cost edit distance over Unicode scalar values, two-row DP.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn best<'a>(gts: impl IntoIterator<Item = &'a str>, score: impl Fn(&str) -> f64) -> f64 {
    gts.into_iter().map(score).fold(0.0, f64::max)
}

fn as_strs(gts: &[String]) -> impl Iterator<Item = &str> {
    gts.iter().map(String::as_str)
}

/// Normalized Levenshtein similarity with the 0.5 cut, maximized over references.
pub fn anls(prediction: &str, gt_answers: &[String]) -> f64 {
    let pred = normalize(prediction);
    let pred_len = pred.chars().count();
    best(as_strs(gt_answers), |gt| {
        let gt = normalize(gt);
        let gt_len = gt.chars().count();
        match (pred_len, gt_len) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            _ => {
                let s = 1.0 - levenshtein(&pred, &gt) as f64 / pred_len.max(gt_len) as f64;
                if s >= ANLS_THRESHOLD {
                    s
                } else {
                    0.0
                }
            }
        }
    })
}

fn f_measure(overlap: usize, pred_len: usize, gt_len: usize) -> f64 {
    if pred_len == 0 && gt_len == 0 {
        return 1.0;
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / gt_len as f64;
    2.0 * p * r / (p + r)
}

fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in b {
        *counts.entry(t).or_default() += 1;
    }
    a.iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Token-level F1 with multiset overlap, maximized over references.
pub fn token_f1(prediction: &str, gt_answers: &[String]) -> f64 {
    let pred = tokenize(prediction);
    best(as_strs(gt_answers), |gt| {
        let gt = tokenize(gt);
        f_measure(multiset_overlap(&pred, &gt), pred.len(), gt.len())
    })
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure over tokens with equal weight on precision and recall.
pub fn rouge_l(prediction: &str, gt_answers: &[String]) -> f64 {
    let pred = tokenize(prediction);
    best(as_strs(gt_answers), |gt| {
        let gt = tokenize(gt);
        f_measure(lcs_len(&pred, &gt), pred.len(), gt.len())
    })
}

/// Share of ground-truth chunks found in the first `k` sampled ids; `None`
/// when there is no ground truth.
pub fn retrieval_recall(sampled: &[ChunkId], gt_evidence: &[ChunkId], k: usize) -> Option<f64> {
    let gt: BTreeSet<&ChunkId> = gt_evidence.iter().collect();
    if gt.is_empty() {
        return None;
    }
    let top: BTreeSet<&ChunkId> = sampled.iter().take(k).collect();
    Some(gt.intersection(&top).count() as f64 / gt.len() as f64)
}
