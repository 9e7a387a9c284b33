//! Command line verbs, each mapped onto one engine operation.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sparsedoc_core::dataset_builder::{FilterThresholds, Split, StrategyKind};
use sparsedoc_core::engine::{BuildRequest, Engine, EngineConfig, EngineError};
use sparsedoc_core::evaluation::{render_bucket_table, render_k_table, render_report};

use crate::ops::{self, AskBody, ErrorBody, EvalBody, IngestBody};

#[derive(Debug, Parser)]
#[command(name = "sparsedoc", version, about = "Question answering over long interleaved documents")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// TOML configuration file.
    #[arg(long, global = true, env = "SPARSEDOC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory (key `store_root`).
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// LLM backend name (key `llm.backend`).
    #[arg(long, global = true)]
    pub llm_backend: Option<String>,
    /// LLM endpoint URL (key `llm.endpoint`).
    #[arg(long, global = true)]
    pub llm_endpoint: Option<String>,
    /// Transcript file for the scripted backend (key `llm.transcript`).
    #[arg(long, global = true)]
    pub llm_transcript: Option<PathBuf>,
    /// Adapter applied to queries (key `adapter`).
    #[arg(long, global = true)]
    pub adapter: Option<String>,
    /// Any config key, e.g. `--set sampler.k=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_pair)]
    pub set: Vec<(String, String)>,
    /// Print one JSON document instead of human-readable text.
    #[arg(long, global = true)]
    pub json: bool,
}

fn parse_pair(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{raw}`"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, embed and store a document.
    Ingest {
        /// Interleaved document file.
        #[arg(required_unless_present = "pdf", conflicts_with = "pdf")]
        path: Option<PathBuf>,
        /// PDF converted by an external parser command.
        #[arg(long, requires = "parser")]
        pdf: Option<PathBuf>,
        /// Parser command and arguments; `{input}` is replaced by the PDF path.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        parser: Vec<String>,
        /// Parser output dialect.
        #[arg(long)]
        dialect: Option<String>,
    },
    /// List stored documents.
    List,
    /// Answer a question from sampled evidence.
    Ask {
        #[arg(long)]
        doc: String,
        #[arg(long)]
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Show the evidence that would be sampled for a question.
    Sample {
        #[arg(long)]
        doc: String,
        #[arg(long)]
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score predictions against a QA corpus.
    Eval {
        /// Corpus file.
        #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
        cases: Option<PathBuf>,
        /// Corpus stored in the store.
        #[arg(long)]
        corpus: Option<String>,
        /// Predictions file, one JSON object per line.
        #[arg(long)]
        preds: PathBuf,
        /// Backend name used as accuracy judge.
        #[arg(long)]
        judge: Option<String>,
    },
    /// Generate and filter a QA corpus from stored documents.
    BuildDataset {
        /// Corpus name to write.
        #[arg(long)]
        corpus: String,
        /// Documents to use; all stored documents when omitted.
        #[arg(long = "doc")]
        docs: Vec<String>,
        #[arg(long = "strategy", value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        #[arg(long = "split", value_delimiter = ',')]
        splits: Vec<Split>,
        #[arg(long, default_value_t = 1)]
        samples_per_doc: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a query adapter on a stored corpus.
    TrainAdapter {
        #[arg(long)]
        corpus: String,
        /// Adapter name to write.
        #[arg(long)]
        name: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Check the store for damaged or dangling files.
    Scan,
}

impl GlobalOpts {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        let mut add = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v));
            }
        };
        add("store_root", self.store.as_ref().map(|p| p.display().to_string()));
        add("llm.backend", self.llm_backend.clone());
        add("llm.endpoint", self.llm_endpoint.clone());
        add("llm.transcript", self.llm_transcript.as_ref().map(|p| p.display().to_string()));
        add("adapter", self.adapter.clone());
        pairs.extend(self.set.iter().cloned());
        pairs
    }

    pub fn resolve_config(&self) -> Result<EngineConfig, EngineError> {
        EngineConfig::resolve(self.config.as_deref(), |k| std::env::var(k).ok(), &self.overrides())
    }
}

/// What a verb prints: JSON in machine mode, `human` otherwise.
pub struct Output {
    pub json: String,
    pub human: String,
}

fn output<T: Serialize>(value: &T, human: String) -> Result<Output, EngineError> {
    let json = serde_json::to_string(value).map_err(|e| EngineError::Io(std::io::Error::other(e)))?;
    Ok(Output { json, human })
}

fn evidence_lines(evidence: &[sparsedoc_core::engine::EvidenceView]) -> String {
    evidence
        .iter()
        .map(|e| format!("  #{} {} [{:?}] {:.4}  {}", e.rank, e.chunk_id, e.modality, e.score, e.content_preview))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs every verb except `serve`.
pub fn execute(engine: &Engine, command: &Command) -> Result<Output, EngineError> {
    match command {
        Command::Ingest {
            path,
            pdf,
            parser,
            dialect,
        } => {
            let body = IngestBody {
                path: path.clone(),
                pdf: pdf.clone(),
                parser: parser.clone(),
                dialect: dialect.clone(),
                ..Default::default()
            };
            let r = ops::ingest(engine, &body)?;
            let human = format!(
                "ingested {} ({} chunks: {} text, {} image); {} embedded, {} from cache",
                r.document.doc_id,
                r.document.chunks,
                r.document.text_chunks,
                r.document.image_chunks,
                r.embedded,
                r.cache_hits
            );
            output(&r, human)
        }
        Command::List => {
            let docs = engine.list_documents();
            let human = docs
                .iter()
                .map(|d| format!("{}\t{} chunks\t{}", d.doc_id, d.chunks, d.source_name))
                .collect::<Vec<_>>()
                .join("\n");
            output(&docs, human)
        }
        Command::Ask { doc, question, k } => {
            let body = AskBody {
                question: question.clone(),
                k: *k,
            };
            let r = engine.ask(doc, &body.question, body.k)?;
            let human = format!(
                "{}\n\nevidence:\n{}\n\n{} prompt tokens, {} ms",
                r.answer,
                evidence_lines(&r.evidence),
                r.prompt_tokens,
                r.latency_ms
            );
            output(&r, human)
        }
        Command::Sample { doc, question, k } => {
            let r = engine.sample(doc, question, *k)?;
            let human = format!("{}\n\n{} similarity evaluations", evidence_lines(&r.evidence), r.evaluations);
            output(&r, human)
        }
        Command::Eval {
            cases,
            corpus,
            preds,
            judge,
        } => {
            let body = EvalBody {
                corpus: corpus.clone(),
                cases: cases.clone(),
                predictions: None,
                predictions_path: Some(preds.clone()),
                judge: judge.clone(),
            };
            let r = ops::eval(engine, &body)?;
            let buckets: BTreeMap<_, _> = r.by_length.iter().cloned().collect();
            let human = format!(
                "{}\nby k:\n{}\nby document length (chunks):\n{}",
                render_report(&r.report),
                render_k_table(&r.by_k),
                render_bucket_table(&buckets)
            );
            output(&r, human)
        }
        Command::BuildDataset {
            corpus,
            docs,
            strategies,
            splits,
            samples_per_doc,
            seed,
        } => {
            let request = BuildRequest {
                doc_ids: docs.clone(),
                strategies: if strategies.is_empty() {
                    StrategyKind::ALL.to_vec()
                } else {
                    strategies.clone()
                },
                splits: if splits.is_empty() {
                    vec![Split::Train, Split::Test]
                } else {
                    splits.clone()
                },
                samples_per_doc: *samples_per_doc,
                base_seed: *seed,
                corpus: corpus.clone(),
                thresholds: FilterThresholds::default(),
            };
            let r = engine.build_dataset(&request)?;
            let mut human = format!("corpus {}: {} pairs kept\n{}", r.corpus, r.kept, r.stats);
            for (rule, n) in &r.rejected {
                human.push_str(&format!("rejected by {rule}: {n}\n"));
            }
            for s in &r.skipped {
                human.push_str(&format!("skipped: {s}\n"));
            }
            output(&r, human.trim_end().to_string())
        }
        Command::TrainAdapter { corpus, name } => {
            let r = engine.train_adapter(corpus, name)?;
            let losses = r.trajectory.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(" ");
            let human = format!(
                "adapter {} written to {} from {} batches\nloss per epoch: {losses}",
                r.adapter,
                r.path.display(),
                r.batches
            );
            output(&r, human)
        }
        Command::Scan => {
            let r = engine.integrity_scan()?;
            let mut human = format!(
                "{} documents, {} cache records, {} corpus records",
                r.documents, r.cache_records, r.corpus_records
            );
            for p in &r.problems {
                human.push_str(&format!("\nproblem: {p}"));
            }
            output(&r, human)
        }
        Command::Serve { .. } => Err(EngineError::Invalid("serve is not a one-shot verb".into())),
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = cli.global.resolve_config().and_then(Engine::open).map(Arc::new);
    let engine = match result {
        Ok(e) => e,
        Err(e) => return report_error(&e, cli.global.json),
    };
    if let Command::Serve { addr } = &cli.command {
        let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
            Ok(r) => r,
            Err(e) => return report_error(&EngineError::Io(e), cli.global.json),
        };
        return match runtime.block_on(crate::server::serve(engine, addr)) {
            Ok(()) => 0,
            Err(e) => report_error(&EngineError::Io(e), cli.global.json),
        };
    }
    match execute(&engine, &cli.command) {
        Ok(out) => {
            println!("{}", if cli.global.json { out.json } else { out.human });
            0
        }
        Err(e) => report_error(&e, cli.global.json),
    }
}

fn report_error(e: &EngineError, json: bool) -> i32 {
    if json {
        let body = ErrorBody::from(e);
        println!("{}", serde_json::to_string(&body).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string())));
    } else {
        eprintln!("error: {e}");
        if let EngineError::Backend { evidence, .. } = e {
            if !evidence.is_empty() {
                eprintln!("sampled evidence:\n{}", evidence_lines(evidence));
            }
        }
    }
    e.class().exit_code()
}
