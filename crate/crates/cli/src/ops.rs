//! Request bodies and the operations shared by the command line and the
//! HTTP service, so both paths produce the same JSON.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sparsedoc_core::dataset_builder::{read_records, CorpusRecord};
use sparsedoc_core::doc_model::{parse_interleaved, ExternalParser, MemoryBlobs};
use sparsedoc_core::engine::{Engine, EngineError, EvalOutput, IngestReport, IngestSource};
use sparsedoc_core::evaluation::{read_predictions, Prediction};
use sparsedoc_core::generation::{BackendRegistry, LlmBackend};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestBody {
    /// Interleaved document file readable by the server.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Interleaved document content.
    #[serde(default)]
    pub document: Option<String>,
    /// Image blobs for `document`, base64 encoded, keyed by any label.
    #[serde(default)]
    pub blobs: BTreeMap<String, String>,
    /// PDF to convert with an external parser.
    #[serde(default)]
    pub pdf: Option<PathBuf>,
    #[serde(default)]
    pub parser: Vec<String>,
    #[serde(default)]
    pub dialect: Option<String>,
}

pub fn ingest(engine: &Engine, body: &IngestBody) -> Result<IngestReport, EngineError> {
    match (&body.path, &body.document, &body.pdf) {
        (Some(path), None, None) => engine.ingest(&IngestSource::Interleaved(path.clone())),
        (None, Some(xml), None) => {
            let mut blobs = MemoryBlobs::new();
            for (label, data) in &body.blobs {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| EngineError::Parse(format!("blob {label} is not base64: {e}")))?;
                blobs.insert(bytes);
            }
            let doc = parse_interleaved(xml.as_bytes(), &blobs)?;
            engine.ingest_document(doc, &blobs)
        }
        (None, None, Some(pdf)) => {
            if body.parser.is_empty() {
                return Err(EngineError::Invalid("pdf ingest needs a parser command".into()));
            }
            let parser = ExternalParser::new(body.parser.clone(), body.dialect.clone().unwrap_or_else(|| "tei".into()));
            engine.ingest(&IngestSource::Pdf {
                path: pdf.clone(),
                parser,
            })
        }
        _ => Err(EngineError::Invalid("give exactly one of path, document or pdf".into())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskBody {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBody {
    /// Corpus stored under the engine's store.
    #[serde(default)]
    pub corpus: Option<String>,
    /// Corpus file path.
    #[serde(default)]
    pub cases: Option<PathBuf>,
    #[serde(default)]
    pub predictions: Option<Vec<Prediction>>,
    #[serde(default)]
    pub predictions_path: Option<PathBuf>,
    /// Backend name used as the accuracy judge.
    #[serde(default)]
    pub judge: Option<String>,
}

fn parse_err(e: impl std::fmt::Display) -> EngineError {
    EngineError::Parse(e.to_string())
}

pub fn eval(engine: &Engine, body: &EvalBody) -> Result<EvalOutput, EngineError> {
    let records: Vec<CorpusRecord> = match (&body.corpus, &body.cases) {
        (Some(name), None) => engine.read_corpus(name)?,
        (None, Some(path)) => read_records(path).map_err(parse_err)?,
        _ => return Err(EngineError::Invalid("give exactly one of corpus or cases".into())),
    };
    let predictions = match (&body.predictions, &body.predictions_path) {
        (Some(p), None) => p.clone(),
        (None, Some(path)) => read_predictions(path).map_err(parse_err)?,
        _ => return Err(EngineError::Invalid("give exactly one of predictions or predictions_path".into())),
    };
    let judge: Option<Arc<dyn LlmBackend>> = match &body.judge {
        Some(name) => Some(
            BackendRegistry::with_builtins()
                .build(name, &engine.config().backend_options())
                .map_err(|e| EngineError::Config(e.to_string()))?,
        ),
        None => None,
    };
    engine.evaluate(&records, &predictions, judge)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub class: sparsedoc_core::engine::ErrorClass,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<sparsedoc_core::engine::EvidenceView>,
}

impl From<&EngineError> for ErrorBody {
    fn from(e: &EngineError) -> Self {
        Self {
            class: e.class(),
            message: e.to_string(),
            evidence: match e {
                EngineError::Backend { evidence, .. } => evidence.clone(),
                _ => Vec::new(),
            },
        }
    }
}
