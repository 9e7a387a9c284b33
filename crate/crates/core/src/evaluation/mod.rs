//! Scoring of answered cases and aggregation into run reports.

mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_builder::CorpusRecord;
use crate::doc_model::ChunkId;
use crate::generation::{generate_answer, GenerateRequest, LlmBackend, PromptAssembly, RetryPolicy};

pub use metrics::{anls, lcs_len, levenshtein, normalize, retrieval_recall, rouge_l, token_f1, tokenize, ANLS_THRESHOLD};
pub use report::{render_bucket_table, render_k_table, render_report};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no cases to evaluate")]
    EmptyRun,
    #[error("case {0} has no reference answers")]
    NoReference(String),
    #[error("join: {0}")]
    Join(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub question: String,
    pub gt_answers: Vec<String>,
    pub gt_evidence: Vec<ChunkId>,
    pub prediction: String,
    /// Sampled chunk ids in rank order.
    pub sampled_evidence: Vec<ChunkId>,
    pub prompt_tokens: usize,
    pub latency_ms: f64,
    /// Chunk count of the source document, for length buckets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_length: Option<usize>,
    /// Sampling budget the case was answered with, when it differs per case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub case_id: String,
    pub anls: f64,
    pub token_f1: f64,
    pub rouge_l: f64,
    pub recall: Option<f64>,
    pub prompt_tokens: usize,
    pub latency_ms: f64,
}

pub fn score_case(case: &EvalCase, k: usize) -> Result<CaseScores, EvalError> {
    if case.gt_answers.is_empty() {
        return Err(EvalError::NoReference(case.case_id.clone()));
    }
    Ok(CaseScores {
        case_id: case.case_id.clone(),
        anls: anls(&case.prediction, &case.gt_answers),
        token_f1: token_f1(&case.prediction, &case.gt_answers),
        rouge_l: rouge_l(&case.prediction, &case.gt_answers),
        recall: retrieval_recall(&case.sampled_evidence, &case.gt_evidence, case.k.unwrap_or(k)),
        prompt_tokens: case.prompt_tokens,
        latency_ms: case.latency_ms,
    })
}

/// Means over one case set, as fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_count: usize,
    pub k: usize,
    pub anls: f64,
    pub token_f1: f64,
    pub rouge_l: f64,
    /// Mean over cases with ground-truth evidence; absent when none have it.
    pub recall_at_k: Option<f64>,
    /// Cases left out of the recall mean for lack of ground-truth evidence.
    pub recall_excluded: usize,
    pub mean_tokens: f64,
    pub mean_latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpt_acc: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl MetricReport {
    /// Sums in input order, so the result is reproducible bit for bit.
    pub fn from_scores(scores: &[CaseScores], k: usize) -> Result<Self, EvalError> {
        if scores.is_empty() {
            return Err(EvalError::EmptyRun);
        }
        let recalls: Vec<f64> = scores.iter().filter_map(|s| s.recall).collect();
        Ok(Self {
            case_count: scores.len(),
            k,
            anls: mean(scores.iter().map(|s| s.anls)),
            token_f1: mean(scores.iter().map(|s| s.token_f1)),
            rouge_l: mean(scores.iter().map(|s| s.rouge_l)),
            recall_at_k: (!recalls.is_empty()).then(|| mean(recalls.iter().copied())),
            recall_excluded: scores.len() - recalls.len(),
            mean_tokens: mean(scores.iter().map(|s| s.prompt_tokens as f64)),
            mean_latency_ms: mean(scores.iter().map(|s| s.latency_ms)),
            gpt_acc: None,
        })
    }
}

pub fn evaluate_run(cases: &[EvalCase], k: usize) -> Result<MetricReport, EvalError> {
    let scores = cases.iter().map(|c| score_case(c, k)).collect::<Result<Vec<_>, _>>()?;
    MetricReport::from_scores(&scores, k)
}

/// One report per distinct `k`; cases without their own `k` use `default_k`.
pub fn evaluate_by_k(cases: &[EvalCase], default_k: usize) -> Result<BTreeMap<usize, MetricReport>, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut groups: BTreeMap<usize, Vec<EvalCase>> = BTreeMap::new();
    for c in cases {
        groups.entry(c.k.unwrap_or(default_k)).or_default().push(c.clone());
    }
    groups.into_iter().map(|(k, cs)| Ok((k, evaluate_run(&cs, k)?))).collect()
}

/// Document-length bucket: `[lo, hi]` inclusive, `hi = None` for the open top bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthBucket {
    Range { lo: usize, hi: Option<usize> },
    Unknown,
}

impl std::fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LengthBucket::Range { lo, hi: Some(hi) } => write!(f, "{lo}-{hi}"),
            LengthBucket::Range { lo, hi: None } => write!(f, "{lo}+"),
            LengthBucket::Unknown => f.write_str("unknown"),
        }
    }
}

pub const DEFAULT_BUCKET_EDGES: [usize; 5] = [10, 25, 50, 100, 200];

/// `edges` are ascending upper bounds; lengths above the last edge share one bucket.
pub fn length_bucket(length: Option<usize>, edges: &[usize]) -> LengthBucket {
    let Some(n) = length else { return LengthBucket::Unknown };
    let mut lo = 0;
    for &hi in edges {
        if n <= hi {
            return LengthBucket::Range { lo, hi: Some(hi) };
        }
        lo = hi + 1;
    }
    LengthBucket::Range { lo, hi: None }
}

pub fn evaluate_by_length(
    cases: &[EvalCase],
    k: usize,
    edges: &[usize],
) -> Result<BTreeMap<LengthBucket, MetricReport>, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut groups: BTreeMap<LengthBucket, Vec<EvalCase>> = BTreeMap::new();
    for c in cases {
        groups.entry(length_bucket(c.doc_length, edges)).or_default().push(c.clone());
    }
    groups.into_iter().map(|(b, cs)| Ok((b, evaluate_run(&cs, k)?))).collect()
}

pub const JUDGE_TEMPLATE_ID: &str = "judge";

const JUDGE_INSTRUCTION: &str = "\
Decide whether the candidate answer is correct given the reference answers.
Reply with 1 if it is correct and 0 if it is not. Reply with the digit only.";

/// The fixed prompt a judge backend sees for one case.
pub fn judge_prompt(case: &EvalCase) -> PromptAssembly {
    let refs: Vec<String> = case.gt_answers.iter().map(|a| format!("- {a}")).collect();
    let query = format!(
        "Question: {}\nReference answers:\n{}\nCandidate answer: {}",
        case.question,
        refs.join("\n"),
        case.prediction
    );
    PromptAssembly::new(JUDGE_TEMPLATE_ID, JUDGE_INSTRUCTION.to_string(), query, Vec::new())
}

/// The verdict in a judge reply: its first `0` or `1` digit.
pub fn parse_verdict(reply: &str) -> Option<u8> {
    reply.chars().find_map(|c| match c {
        '0' => Some(0),
        '1' => Some(1),
        _ => None,
    })
}

/// A judge verdict, or `None` when the judge fails or answers off-format.
pub fn gpt_acc(judge: &dyn LlmBackend, case: &EvalCase, retry: &RetryPolicy) -> Option<u8> {
    let request = GenerateRequest::text_only(judge_prompt(case));
    match generate_answer(judge, &request, retry) {
        Ok(answer) => parse_verdict(&answer.answer_text),
        Err(e) => {
            log::warn!("judge failed on {}: {e}", case.case_id);
            None
        }
    }
}

/// Runs the text and retrieval metrics plus, when a judge is configured and
/// answers every case, the judged accuracy.
#[derive(Clone, Default)]
pub struct Evaluator {
    pub judge: Option<Arc<dyn LlmBackend>>,
    pub retry: RetryPolicy,
}

impl Evaluator {
    pub fn run(&self, cases: &[EvalCase], k: usize) -> Result<MetricReport, EvalError> {
        let mut report = evaluate_run(cases, k)?;
        if let Some(judge) = &self.judge {
            let verdicts: Option<Vec<u8>> = cases.iter().map(|c| gpt_acc(judge.as_ref(), c, &self.retry)).collect();
            report.gpt_acc = verdicts.map(|v| mean(v.into_iter().map(f64::from)));
        }
        Ok(report)
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
    #[serde(default)]
    pub sampled_evidence: Vec<ChunkId>,
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Format(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Pairs corpus records with predictions by id. Every prediction must name
/// a record; records without a prediction are left out.
pub fn join_cases(
    records: &[CorpusRecord],
    predictions: &[Prediction],
    doc_lengths: &BTreeMap<String, usize>,
) -> Result<Vec<EvalCase>, EvalError> {
    let by_id: BTreeMap<&str, &CorpusRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    predictions
        .iter()
        .map(|p| {
            let r = by_id
                .get(p.id.as_str())
                .ok_or_else(|| EvalError::Join(format!("prediction {} has no corpus record", p.id)))?;
            Ok(EvalCase {
                case_id: p.id.clone(),
                question: r.question.clone(),
                gt_answers: r.answers.clone(),
                gt_evidence: r.evidence.clone(),
                prediction: p.prediction.clone(),
                sampled_evidence: p.sampled_evidence.clone(),
                prompt_tokens: p.prompt_tokens,
                latency_ms: p.latency_ms,
                doc_length: doc_lengths.get(&r.doc_id).copied(),
                k: p.k,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{BackendFailure, BackendReply, ScriptedBackend};

    fn case(id: &str, pred: &str, gt: &str, hit: bool) -> EvalCase {
        EvalCase {
            case_id: id.into(),
            question: "q?".into(),
            gt_answers: vec![gt.into()],
            gt_evidence: vec!["t1".into()],
            prediction: pred.into(),
            sampled_evidence: if hit { vec!["t1".into()] } else { vec!["t9".into()] },
            prompt_tokens: 10,
            latency_ms: 5.0,
            doc_length: None,
            k: None,
        }
    }

    #[test]
    fn single_perfect_case() {
        let r = evaluate_run(&[case("a", "yes", "yes", true)], 5).unwrap();
        assert_eq!((r.anls, r.token_f1, r.rouge_l, r.recall_at_k), (1.0, 1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn two_cases_average() {
        let r = evaluate_run(&[case("a", "yes", "yes", true), case("b", "zzz", "yes", false)], 5).unwrap();
        assert_eq!((r.anls, r.token_f1, r.rouge_l, r.recall_at_k), (0.5, 0.5, 0.5, Some(0.5)));
    }

    #[test]
    fn empty_run_is_an_error() {
        assert!(matches!(evaluate_run(&[], 5), Err(EvalError::EmptyRun)));
    }

    #[test]
    fn cases_without_evidence_are_excluded_from_recall() {
        let mut c = case("b", "x", "x", false);
        c.gt_evidence.clear();
        let r = evaluate_run(&[case("a", "x", "x", true), c], 5).unwrap();
        assert_eq!(r.recall_at_k, Some(1.0));
        assert_eq!(r.recall_excluded, 1);
    }

    #[test]
    fn grouping() {
        let mut cs = vec![case("a", "x", "x", true), case("b", "x", "y", true), case("c", "x", "x", false)];
        cs[0].doc_length = Some(8);
        cs[1].doc_length = Some(300);
        cs[1].k = Some(10);
        let by_len = evaluate_by_length(&cs, 5, &DEFAULT_BUCKET_EDGES).unwrap();
        assert_eq!(by_len.len(), 3);
        assert_eq!(by_len[&LengthBucket::Range { lo: 0, hi: Some(10) }].case_count, 1);
        assert_eq!(by_len[&LengthBucket::Range { lo: 201, hi: None }].anls, 0.0);
        let by_k = evaluate_by_k(&cs, 5).unwrap();
        assert_eq!(by_k.keys().copied().collect::<Vec<_>>(), vec![5, 10]);
        assert_eq!(by_k[&5].case_count, 2);
    }

    struct PassThroughJudge;

    impl LlmBackend for PassThroughJudge {
        fn id(&self) -> &str {
            "pass-through"
        }

        fn generate(&self, request: &GenerateRequest) -> Result<BackendReply, BackendFailure> {
            let q = &request.prompt.query;
            let candidate = q.rsplit("Candidate answer: ").next().unwrap_or("");
            let refs = q.split("Reference answers:\n").nth(1).unwrap_or("");
            let hit = refs.lines().any(|l| l.strip_prefix("- ") == Some(candidate));
            Ok(BackendReply {
                answer: if hit { "1" } else { "0" }.into(),
                prompt_tokens: 0,
                cited: Vec::new(),
            })
        }
    }

    #[test]
    fn judged_accuracy() {
        let cs = [case("a", "Paris", "Paris", true), case("b", "Rome", "Paris", true)];
        let ev = Evaluator {
            judge: Some(Arc::new(PassThroughJudge)),
            retry: RetryPolicy::immediate(),
        };
        assert_eq!(ev.run(&cs, 5).unwrap().gpt_acc, Some(0.5));

        let mut script = ScriptedBackend::new();
        script.record(&judge_prompt(&cs[0]), "1");
        assert_eq!(gpt_acc(&script, &cs[0], &RetryPolicy::immediate()), Some(1));
        let partial = Evaluator {
            judge: Some(Arc::new(script)),
            retry: RetryPolicy::immediate(),
        };
        let r = partial.run(&cs, 5).unwrap();
        assert_eq!(r.gpt_acc, None);
        assert!(!serde_json::to_string(&r).unwrap().contains("gpt_acc"));
        assert_eq!(Evaluator::default().run(&cs, 5).unwrap().gpt_acc, None);
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict(" 1\n"), Some(1));
        assert_eq!(parse_verdict("Verdict: 0"), Some(0));
        assert_eq!(parse_verdict("yes"), None);
    }

    #[test]
    fn join_by_id() {
        use crate::dataset_builder::{Split, StrategyKind};
        let rec = CorpusRecord {
            id: "r1".into(),
            doc_id: "d".into(),
            strategy: StrategyKind::TextOnly,
            question: "q?".into(),
            answers: vec!["a".into()],
            evidence: vec!["t0".into()],
            split: Split::Test,
            generator: "g".into(),
        };
        let pred = Prediction {
            id: "r1".into(),
            prediction: "a".into(),
            sampled_evidence: vec!["t0".into()],
            prompt_tokens: 3,
            latency_ms: 1.0,
            k: None,
        };
        let lengths = BTreeMap::from([("d".to_string(), 40)]);
        let cases = join_cases(std::slice::from_ref(&rec), std::slice::from_ref(&pred), &lengths).unwrap();
        assert_eq!(cases[0].doc_length, Some(40));
        let stray = Prediction { id: "zz".into(), ..pred };
        assert!(matches!(join_cases(&[rec], &[stray], &lengths), Err(EvalError::Join(_))));
    }
}
