//! Loaders for the committed fixture files.

use std::path::PathBuf;

use serde::Deserialize;
use sparsedoc_core::evaluation::EvalCase;

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Debug, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub prediction: String,
    pub gt_answers: Vec<String>,
    pub anls: String,
    pub token_f1: String,
    pub rouge_l: String,
    pub gt_evidence: Vec<String>,
    pub sampled_evidence: Vec<String>,
    pub prompt_tokens: usize,
    pub latency_ms: f64,
    pub recall_at_k: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct GoldenReport {
    pub case_count: usize,
    pub anls: String,
    pub token_f1: String,
    pub rouge_l: String,
    pub recall_at_k: String,
    pub recall_excluded: usize,
    pub mean_tokens: String,
    pub mean_latency_ms: String,
}

#[derive(Debug, Deserialize)]
pub struct GoldenTable {
    pub k: usize,
    pub cases: Vec<GoldenCase>,
    pub report: GoldenReport,
}

impl GoldenTable {
    pub fn load() -> Self {
        serde_json::from_str(&std::fs::read_to_string(path("metric_golden.json")).unwrap()).unwrap()
    }

    pub fn eval_cases(&self) -> Vec<EvalCase> {
        self.cases
            .iter()
            .map(|c| EvalCase {
                case_id: c.id.clone(),
                question: String::new(),
                gt_answers: c.gt_answers.clone(),
                gt_evidence: c.gt_evidence.iter().map(|s| s.as_str().into()).collect(),
                prediction: c.prediction.clone(),
                sampled_evidence: c.sampled_evidence.iter().map(|s| s.as_str().into()).collect(),
                prompt_tokens: c.prompt_tokens,
                latency_ms: c.latency_ms,
                doc_length: None,
                k: None,
            })
            .collect()
    }
}
