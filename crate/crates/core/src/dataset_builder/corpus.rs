//! Line-delimited JSON corpus files and per-strategy statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, FilterStatus, QAPair, Split, StrategyKind};
use crate::doc_model::{ChunkId, ParsedDocument};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub doc_id: String,
    pub strategy: StrategyKind,
    pub question: String,
    pub answers: Vec<String>,
    pub evidence: Vec<ChunkId>,
    pub split: Split,
    pub generator: String,
}

impl From<&QAPair> for CorpusRecord {
    fn from(p: &QAPair) -> Self {
        Self {
            id: p.id.clone(),
            doc_id: p.evidence.doc_id.clone(),
            strategy: p.evidence.strategy,
            question: p.question.clone(),
            answers: p.answers.clone(),
            evidence: p.evidence.chunk_ids.clone(),
            split: p.split,
            generator: p.generator_id.clone(),
        }
    }
}

pub fn write_records(records: &[CorpusRecord], path: &Path) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        for r in records {
            serde_json::to_writer(&mut out, r).map_err(|e| DatasetError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<CorpusRecord>, DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Format(format!("line {}: {e}", n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: BTreeMap<StrategyKind, BTreeMap<Split, usize>>,
}

impl CorpusStats {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a CorpusRecord>) -> Self {
        let mut stats = Self::default();
        for r in records {
            *stats.counts.entry(r.strategy).or_default().entry(r.split).or_default() += 1;
        }
        stats
    }

    pub fn get(&self, strategy: StrategyKind, split: Split) -> usize {
        self.counts
            .get(&strategy)
            .and_then(|m| m.get(&split))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|m| m.values()).sum()
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>8} {:>8}", "strategy", "train", "test")?;
        for s in StrategyKind::ALL {
            writeln!(f, "{:<16} {:>8} {:>8}", s.to_string(), self.get(s, Split::Train), self.get(s, Split::Test))?;
        }
        let train: usize = StrategyKind::ALL.iter().map(|&s| self.get(s, Split::Train)).sum();
        let test: usize = StrategyKind::ALL.iter().map(|&s| self.get(s, Split::Test)).sum();
        writeln!(f, "{:<16} {:>8} {:>8}", "total", train, test)
    }
}

/// Writes the kept pairs after checking that every evidence id resolves in
/// its document.
pub fn export_corpus(
    pairs: &[QAPair],
    docs: &BTreeMap<String, &ParsedDocument>,
    path: &Path,
) -> Result<CorpusStats, DatasetError> {
    let mut records = Vec::new();
    for p in pairs.iter().filter(|p| p.filter_status == FilterStatus::Kept) {
        let doc = docs
            .get(&p.evidence.doc_id)
            .ok_or_else(|| DatasetError::Format(format!("pair {} names unknown document {}", p.id, p.evidence.doc_id)))?;
        if p.evidence.chunk_ids.is_empty() {
            return Err(DatasetError::Format(format!("pair {} has no evidence", p.id)));
        }
        if let Some(bad) = p.evidence.chunk_ids.iter().find(|id| doc.chunk(id).is_none()) {
            return Err(DatasetError::Format(format!("pair {} cites missing chunk {bad}", p.id)));
        }
        records.push(CorpusRecord::from(p));
    }
    write_records(&records, path)?;
    Ok(CorpusStats::of(&records))
}
