//! Conversion of third-party PDF parser output into the canonical format.
//!
//! The parser is an external command. Its argument template may contain
//! `{pdf}` (input path) and `{out}` (an empty scratch directory); when no
//! `{out}` placeholder is present the output is read from stdout. Output is
//! interpreted by a named [`ParserDialect`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::Deserialize;

use super::blobs::MemoryBlobs;
use super::{Chunk, ChunkId, DocError, ImageChunk, ImageRef, ParsedDocument, TextChunk};

/// A converted document plus the blobs its images reference.
#[derive(Debug, Clone)]
pub struct Imported {
    pub document: ParsedDocument,
    pub blobs: MemoryBlobs,
}

/// One output dialect of an external parser.
pub trait ParserDialect: Send + Sync {
    fn name(&self) -> &'static str;

    /// `assets` is the directory against which relative image paths resolve.
    fn convert(&self, output: &[u8], assets: &Path, doc_id: &str, source: &str) -> Result<Imported, DocError>;
}

/// Registered dialects by name.
pub fn dialects() -> BTreeMap<&'static str, Arc<dyn ParserDialect>> {
    let all: [Arc<dyn ParserDialect>; 2] = [Arc::new(TeiDialect), Arc::new(BlocksJsonDialect)];
    all.into_iter().map(|d| (d.name(), d)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalParser {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub dialect: String,
}

impl ExternalParser {
    pub fn new(command: Vec<String>, dialect: impl Into<String>) -> Self {
        Self {
            command,
            dialect: dialect.into(),
        }
    }
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

fn scratch_dir() -> std::io::Result<PathBuf> {
    let n = SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("sparsedoc-parse-{}-{n}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Runs the configured parser on `pdf_path` and converts its output.
pub fn external_parse(pdf_path: &Path, parser: &ExternalParser) -> Result<Imported, DocError> {
    let dialect = dialects()
        .remove(parser.dialect.as_str())
        .ok_or_else(|| DocError::Conversion(format!("unknown parser dialect `{}`", parser.dialect)))?;
    let (program, args) = parser
        .command
        .split_first()
        .ok_or_else(|| DocError::ExternalTool {
            status: None,
            diagnostics: "no parser command configured".into(),
        })?;
    let out_dir = scratch_dir()?;
    let pdf = pdf_path.to_string_lossy();
    let out = out_dir.to_string_lossy();
    let uses_out_dir = args.iter().any(|a| a.contains("{out}"));
    let args: Vec<String> = args
        .iter()
        .map(|a| a.replace("{pdf}", &pdf).replace("{out}", &out))
        .collect();

    let result = (|| {
        let output = Command::new(program)
            .args(&args)
            .output()
            .map_err(|e| DocError::ExternalTool {
                status: None,
                diagnostics: format!("cannot run `{program}`: {e}"),
            })?;
        if !output.status.success() {
            return Err(DocError::ExternalTool {
                status: output.status.code(),
                diagnostics: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        let (payload, assets) = if uses_out_dir {
            let produced = single_output_file(&out_dir)?;
            (fs::read(&produced)?, out_dir.clone())
        } else {
            let assets = pdf_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            (output.stdout, assets)
        };
        let doc_id = pdf_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "document".into());
        let source = pdf_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        dialect.convert(&payload, &assets, &doc_id, &source)
    })();
    let _ = fs::remove_dir_all(&out_dir);
    result
}

fn single_output_file(dir: &Path) -> Result<PathBuf, DocError> {
    let mut candidates: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e == "xml" || e == "json")
        })
        .collect();
    candidates.sort();
    candidates
        .into_iter()
        .next()
        .ok_or_else(|| DocError::Conversion("parser produced no .xml or .json output".into()))
}

/// Accumulates chunks in reading order and assigns `t<n>` / `i<n>` ids.
#[derive(Default)]
struct Assembler {
    chunks: Vec<Chunk>,
    blobs: MemoryBlobs,
    texts: usize,
    images: usize,
}

impl Assembler {
    fn paragraph(&mut self, section_path: &[String], text: &str) {
        let text = collapse_ws(text);
        if text.is_empty() {
            return;
        }
        let order_index = self.chunks.len();
        self.chunks.push(Chunk::Text(TextChunk {
            chunk_id: ChunkId::new(format!("t{}", self.texts)),
            order_index,
            section_path: section_path.iter().filter(|h| !h.is_empty()).cloned().collect(),
            text,
        }));
        self.texts += 1;
    }

    fn image(&mut self, label: Option<String>, caption: &str, bytes: Vec<u8>) {
        let hash = self.blobs.insert(bytes);
        let order_index = self.chunks.len();
        self.chunks.push(Chunk::Image(ImageChunk {
            chunk_id: ChunkId::new(format!("i{}", self.images)),
            order_index,
            caption: collapse_ws(caption),
            figure_label: label.map(|l| collapse_ws(&l)).filter(|l| !l.is_empty()),
            image_ref: ImageRef { hash },
        }));
        self.images += 1;
    }

    fn finish(self, doc_id: &str, source: &str) -> Result<Imported, DocError> {
        if self.chunks.is_empty() {
            return Err(DocError::Conversion("parser output contains no paragraphs or figures".into()));
        }
        Ok(Imported {
            document: ParsedDocument::new(doc_id, source, self.chunks)?,
            blobs: self.blobs,
        })
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_asset(assets: &Path, rel: &str) -> Result<Vec<u8>, DocError> {
    let path = assets.join(rel);
    fs::read(&path).map_err(|e| DocError::Conversion(format!("image asset {}: {e}", path.display())))
}

/// TEI XML as produced by Grobid-style parsers: `<div>` with `<head>`,
/// `<p>` paragraphs and `<figure>` elements carrying `<head>`, `<figDesc>`
/// and `<graphic url=...>`. Figures without a graphic are skipped.
pub struct TeiDialect;

#[derive(Default)]
struct FigureState {
    head: String,
    desc: String,
    graphic: Option<String>,
}

impl ParserDialect for TeiDialect {
    fn name(&self) -> &'static str {
        "tei"
    }

    fn convert(&self, output: &[u8], assets: &Path, doc_id: &str, source: &str) -> Result<Imported, DocError> {
        let text = std::str::from_utf8(output).map_err(|e| DocError::Conversion(e.to_string()))?;
        let mut reader = Reader::from_str(text);
        reader.config_mut().expand_empty_elements = true;
        let conv = |e: &dyn std::fmt::Display| DocError::Conversion(format!("TEI: {e}"));

        let mut asm = Assembler::default();
        let mut stack: Vec<Vec<u8>> = Vec::new();
        let mut in_body = false;
        let mut saw_body = false;
        // Heading of each open <div>.
        let mut sections: Vec<String> = Vec::new();
        let mut para: Option<String> = None;
        let mut head: Option<String> = None;
        let mut figure: Option<FigureState> = None;

        loop {
            match reader.read_event().map_err(|e| conv(&e))? {
                Event::Eof => break,
                Event::Start(start) => {
                    let name = start.local_name().as_ref().to_vec();
                    match name.as_slice() {
                        b"body" => {
                            in_body = true;
                            saw_body = true;
                        }
                        b"div" if in_body => sections.push(String::new()),
                        b"figure" if in_body => figure = Some(FigureState::default()),
                        b"head" if in_body => head = Some(String::new()),
                        b"p" if in_body && figure.is_none() => para = Some(String::new()),
                        b"graphic" => {
                            if let Some(fig) = figure.as_mut() {
                                for attr in start.attributes().flatten() {
                                    if attr.key.local_name().as_ref() == b"url" {
                                        fig.graphic = Some(attr.unescape_value().map_err(|e| conv(&e))?.into_owned());
                                    }
                                }
                            }
                        }
                        _ => {}
                    }
                    stack.push(name);
                }
                Event::Text(t) => {
                    let s = t.unescape().map_err(|e| conv(&e))?;
                    let inside_desc = stack.last().is_some_and(|n| n == b"figDesc");
                    if let Some(h) = head.as_mut() {
                        h.push_str(&s);
                    } else if let Some(p) = para.as_mut() {
                        p.push_str(&s);
                    } else if let (Some(fig), true) = (figure.as_mut(), inside_desc || stack.iter().any(|n| n == b"figDesc")) {
                        fig.desc.push_str(&s);
                    }
                }
                Event::End(_) => {
                    let name = stack.pop().unwrap_or_default();
                    match name.as_slice() {
                        b"body" => in_body = false,
                        b"div" if in_body => {
                            sections.pop();
                        }
                        b"head" => {
                            if let Some(h) = head.take() {
                                if let Some(fig) = figure.as_mut() {
                                    fig.head = h;
                                } else if let Some(last) = sections.last_mut() {
                                    *last = collapse_ws(&h);
                                }
                            }
                        }
                        b"p" => {
                            if let Some(p) = para.take() {
                                asm.paragraph(&sections, &p);
                            }
                        }
                        b"figure" => {
                            if let Some(fig) = figure.take() {
                                match fig.graphic {
                                    Some(url) => {
                                        let bytes = read_asset(assets, &url)?;
                                        let label = Some(fig.head).filter(|h| !h.trim().is_empty());
                                        asm.image(label, &fig.desc, bytes);
                                    }
                                    None => log::warn!("skipping figure without graphic: {}", collapse_ws(&fig.head)),
                                }
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        if !saw_body {
            return Err(DocError::Conversion("TEI output has no <body>".into()));
        }
        asm.finish(doc_id, source)
    }
}

/// JSON block list: headings (with nesting level), paragraphs and figures.
///
/// ```json
/// {"blocks": [
///   {"kind": "heading", "level": 1, "text": "Intro"},
///   {"kind": "paragraph", "text": "..."},
///   {"kind": "figure", "label": "Figure 1", "caption": "...", "image": "fig1.png"}
/// ]}
/// ```
pub struct BlocksJsonDialect;

#[derive(Deserialize)]
struct BlocksFile {
    blocks: Vec<Block>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Block {
    Heading {
        #[serde(default = "one")]
        level: usize,
        text: String,
    },
    Paragraph {
        text: String,
    },
    Figure {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        caption: String,
        image: String,
    },
}

fn one() -> usize {
    1
}

impl ParserDialect for BlocksJsonDialect {
    fn name(&self) -> &'static str {
        "blocks-json"
    }

    fn convert(&self, output: &[u8], assets: &Path, doc_id: &str, source: &str) -> Result<Imported, DocError> {
        let file: BlocksFile =
            serde_json::from_slice(output).map_err(|e| DocError::Conversion(format!("blocks-json: {e}")))?;
        let mut asm = Assembler::default();
        let mut sections: Vec<String> = Vec::new();
        for block in file.blocks {
            match block {
                Block::Heading { level, text } => {
                    let level = level.max(1);
                    sections.truncate(level - 1);
                    while sections.len() < level - 1 {
                        sections.push(String::new());
                    }
                    sections.push(collapse_ws(&text));
                }
                Block::Paragraph { text } => asm.paragraph(&sections, &text),
                Block::Figure { label, caption, image } => {
                    let bytes = read_asset(assets, &image)?;
                    asm.image(label, &caption, bytes);
                }
            }
        }
        asm.finish(doc_id, source)
    }
}
