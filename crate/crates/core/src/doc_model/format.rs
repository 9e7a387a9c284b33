//! Canonical markup format for interleaved documents.
//!
//! ```text
//! <document id="..." source="...">
//!   <text id="t0" order="0" section="Intro">paragraph text</text>
//!   <image id="i0" order="1" label="Figure 1" hash="sha256:...">caption text</image>
//! </document>
//! ```
//!
//! Attribute order is fixed, optional attributes (`section`, `label`) are
//! omitted when empty, lines end with LF. Section paths are joined with `/`
//! after escaping `\` and `/` inside each heading with a backslash.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::blobs::{fetch_verified, BlobSource, DirBlobs};
use super::{Chunk, ChunkId, ContentHash, DocError, ImageChunk, ImageRef, ParsedDocument, TextChunk};

/// Parses the canonical format and checks every image blob against `blobs`.
pub fn parse_interleaved(bytes: &[u8], blobs: &dyn BlobSource) -> Result<ParsedDocument, DocError> {
    let doc = parse_markup(bytes)?;
    doc.verify_blobs(blobs)?;
    Ok(doc)
}

/// Reads a document file, resolving blobs in the `blobs/` directory beside it.
pub fn read_document(path: &Path) -> Result<ParsedDocument, DocError> {
    let bytes = fs::read(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_interleaved(&bytes, &DirBlobs::new(dir))
}

/// Writes `doc` to `path` and copies its blobs into `blobs/` beside it.
pub fn write_document(doc: &ParsedDocument, blobs: &dyn BlobSource, path: &Path) -> Result<(), DocError> {
    let bytes = serialize_document(doc)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let target = DirBlobs::new(dir);
    for image in doc.image_chunks() {
        let data = fetch_verified(blobs, &image.image_ref)?;
        target.put(&data)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn serialize_document(doc: &ParsedDocument) -> Result<Vec<u8>, DocError> {
    // Re-validate in case the value was deserialized from another source.
    let doc = ParsedDocument::new(doc.doc_id(), doc.source_name(), doc.chunks().to_vec())?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<document id=\"{}\" source=\"{}\">",
        escape_attr(doc.doc_id())?,
        escape_attr(doc.source_name())?
    );
    for chunk in doc.chunks() {
        match chunk {
            Chunk::Text(t) => {
                let _ = write!(out, "  <text id=\"{}\" order=\"{}\"", escape_attr(t.chunk_id.as_str())?, t.order_index);
                if !t.section_path.is_empty() {
                    let _ = write!(out, " section=\"{}\"", escape_attr(&encode_section_path(&t.section_path))?);
                }
                let _ = writeln!(out, ">{}</text>", escape_text(&t.text)?);
            }
            Chunk::Image(i) => {
                let _ = write!(out, "  <image id=\"{}\" order=\"{}\"", escape_attr(i.chunk_id.as_str())?, i.order_index);
                if let Some(label) = i.figure_label.as_deref().filter(|l| !l.is_empty()) {
                    let _ = write!(out, " label=\"{}\"", escape_attr(label)?);
                }
                let _ = writeln!(
                    out,
                    " hash=\"{}\">{}</image>",
                    i.image_ref.hash.as_str(),
                    escape_text(&i.caption)?
                );
            }
        }
    }
    out.push_str("</document>\n");
    Ok(out.into_bytes())
}

fn is_xml_char(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

fn check_chars(s: &str) -> Result<(), DocError> {
    match s.chars().find(|c| !is_xml_char(*c)) {
        Some(c) => Err(DocError::Integrity(format!("character U+{:04X} cannot be serialized", c as u32))),
        None => Ok(()),
    }
}

fn escape_text(s: &str) -> Result<String, DocError> {
    check_chars(s)?;
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            _ => out.push(c),
        }
    }
    Ok(out)
}

fn escape_attr(s: &str) -> Result<String, DocError> {
    check_chars(s)?;
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            _ => out.push(c),
        }
    }
    Ok(out)
}

pub(crate) fn encode_section_path(path: &[String]) -> String {
    path.iter()
        .map(|h| h.replace('\\', "\\\\").replace('/', "\\/"))
        .collect::<Vec<_>>()
        .join("/")
}

pub(crate) fn decode_section_path(s: &str) -> Option<Vec<String>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => cur.push(chars.next()?),
            '/' => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    Some(out)
}

/// Line and column (1-based, columns counted in characters) of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..src.floor_char_boundary(offset)];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

struct PendingChunk {
    start: BytesStart<'static>,
    body: String,
    offset: usize,
}

fn parse_markup(bytes: &[u8]) -> Result<ParsedDocument, DocError> {
    let raw = match std::str::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default();
            let (line, column) = line_col(valid, valid.len());
            return Err(DocError::Parse {
                line,
                column,
                message: "input is not valid UTF-8".into(),
            });
        }
    };
    // XML end-of-line handling: CRLF and lone CR become LF.
    let src: Cow<'_, str> = if raw.contains('\r') {
        Cow::Owned(raw.replace("\r\n", "\n").replace('\r', "\n"))
    } else {
        Cow::Borrowed(raw)
    };
    let src = src.as_ref();

    let mut reader = Reader::from_str(src);
    reader.config_mut().trim_text(false);
    reader.config_mut().expand_empty_elements = true;

    let err_at = |offset: usize, message: String| {
        let (line, column) = line_col(src, offset);
        DocError::Parse { line, column, message }
    };

    let mut header: Option<(String, String)> = None;
    let mut closed = false;
    let mut pending: Option<PendingChunk> = None;
    let mut chunks = Vec::new();

    loop {
        let offset = reader.buffer_position() as usize;
        let event = reader
            .read_event()
            .map_err(|e| err_at(reader.error_position() as usize, e.to_string()))?;
        match event {
            Event::Eof => break,
            Event::Comment(_) | Event::Decl(_) | Event::PI(_) if pending.is_none() => {}
            Event::Text(t) if pending.is_none() => {
                let text = t.unescape().map_err(|e| err_at(offset, e.to_string()))?;
                if !text.trim().is_empty() {
                    return Err(err_at(offset, "unexpected text outside of a chunk element".into()));
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| err_at(offset, e.to_string()))?;
                pending.as_mut().expect("inside chunk").body.push_str(&text);
            }
            Event::CData(c) if pending.is_some() => {
                let text = std::str::from_utf8(&c).map_err(|e| err_at(offset, e.to_string()))?;
                pending.as_mut().expect("inside chunk").body.push_str(text);
            }
            Event::Start(start) => {
                let name = start.name().as_ref().to_vec();
                match (name.as_slice(), header.is_some(), closed, pending.is_some()) {
                    (b"document", false, false, false) => {
                        let attrs = read_attrs(&start, &["id", "source"]).map_err(|m| err_at(offset, m))?;
                        let id = attrs[0].clone().ok_or_else(|| err_at(offset, "document without id".into()))?;
                        header = Some((id, attrs[1].clone().unwrap_or_default()));
                    }
                    (b"text" | b"image", true, false, false) => {
                        pending = Some(PendingChunk {
                            start: start.into_owned(),
                            body: String::new(),
                            offset,
                        });
                    }
                    _ => {
                        return Err(err_at(
                            offset,
                            format!("unexpected element <{}>", String::from_utf8_lossy(&name)),
                        ))
                    }
                }
            }
            Event::End(end) => {
                if let Some(p) = pending.take() {
                    chunks.push(finish_chunk(p).map_err(|(o, m)| err_at(o, m))?);
                } else if end.name().as_ref() == b"document" {
                    if chunks.is_empty() {
                        return Err(err_at(offset, "no chunks".into()));
                    }
                    closed = true;
                } else {
                    return Err(err_at(offset, "unexpected closing tag".into()));
                }
            }
            _ => return Err(err_at(offset, "unexpected markup".into())),
        }
    }

    let (doc_id, source) = header.ok_or_else(|| err_at(src.len(), "missing <document> element".into()))?;
    if !closed {
        return Err(err_at(src.len(), "unterminated <document> element".into()));
    }
    ParsedDocument::new(doc_id, source, chunks)
}

fn read_attrs(start: &BytesStart<'_>, allowed: &[&str]) -> Result<Vec<Option<String>>, String> {
    let mut values = vec![None; allowed.len()];
    for attr in start.attributes() {
        let attr = attr.map_err(|e| e.to_string())?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        let slot = allowed
            .iter()
            .position(|a| *a == key)
            .ok_or_else(|| format!("unknown attribute `{key}`"))?;
        values[slot] = Some(attr.unescape_value().map_err(|e| e.to_string())?.into_owned());
    }
    Ok(values)
}

fn finish_chunk(p: PendingChunk) -> Result<Chunk, (usize, String)> {
    let fail = |m: String| (p.offset, m);
    let parse_order = |v: Option<String>| -> Result<usize, (usize, String)> {
        let v = v.ok_or_else(|| fail("missing order attribute".into()))?;
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail(format!("invalid order `{v}`")));
        }
        v.parse().map_err(|_| fail(format!("invalid order `{v}`")))
    };
    match p.start.name().as_ref() {
        b"text" => {
            let mut a = read_attrs(&p.start, &["id", "order", "section"]).map_err(fail)?;
            let id = a[0].take().ok_or_else(|| fail("text without id".into()))?;
            let order_index = parse_order(a[1].take())?;
            let section_path = match a[2].take() {
                Some(s) => decode_section_path(&s).ok_or_else(|| fail(format!("bad section path `{s}`")))?,
                None => Vec::new(),
            };
            Ok(Chunk::Text(TextChunk {
                chunk_id: ChunkId::new(id),
                order_index,
                section_path,
                text: p.body,
            }))
        }
        _ => {
            let mut a = read_attrs(&p.start, &["id", "order", "label", "hash"]).map_err(fail)?;
            let id = a[0].take().ok_or_else(|| fail("image without id".into()))?;
            let order_index = parse_order(a[1].take())?;
            let figure_label = a[2].take().filter(|l| !l.is_empty());
            let hash_text = a[3].take().ok_or_else(|| fail("image without hash".into()))?;
            let hash = ContentHash::parse(&hash_text).ok_or_else(|| fail(format!("bad hash `{hash_text}`")))?;
            Ok(Chunk::Image(ImageChunk {
                chunk_id: ChunkId::new(id),
                order_index,
                caption: p.body,
                figure_label,
                image_ref: ImageRef { hash },
            }))
        }
    }
}
