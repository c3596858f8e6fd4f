//! Corpus ingestion and best-fit bin packing of tokenized documents into
//! fixed-length training rows.
//!
//! Packing is a throughput trick: multiple document chunks share a row, the
//! remainder is PAD, and the per-head loss mask (not the attention pattern)
//! keeps targets from crossing segment boundaries.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::tokenize::{Tokenizer, PAD};

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
}

/// Reads documents from files and directories in deterministic order:
/// paths sorted lexicographically, lines in file order. A `.jsonl` file
/// contributes one document per line (from its `"text"` field); any other
/// file is a single document.
pub fn ingest(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
                let entry = entry.map_err(|e| {
                    Error::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")))
                })?;
                if entry.file_type().is_file() {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(path.clone());
        }
    }
    files.sort();
    files.dedup();

    let mut docs = Vec::new();
    for file in &files {
        let mut bytes = Vec::new();
        std::fs::File::open(file)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(file, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::format(file.display().to_string(), "not valid UTF-8"))?;
        if file.extension().is_some_and(|e| e == "jsonl") {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                    Error::format(format!("{}:{}", file.display(), i + 1), format!("bad JSON: {e}"))
                })?;
                let doc_text = value
                    .get("text")
                    .and_then(|t| t.as_str())
                    .ok_or_else(|| {
                        Error::format(format!("{}:{}", file.display(), i + 1), "missing \"text\" field")
                    })?;
                if doc_text.is_empty() {
                    return Err(Error::format(format!("{}:{}", file.display(), i + 1), "empty \"text\""));
                }
                docs.push(Document {
                    id: format!("{}:{}", file.display(), i + 1),
                    text: doc_text.to_string(),
                });
            }
        } else {
            if text.is_empty() {
                return Err(Error::format(file.display().to_string(), "empty document"));
            }
            docs.push(Document { id: file.display().to_string(), text });
        }
    }
    if docs.is_empty() {
        return Err(Error::invalid("no documents found in the given paths"));
    }
    Ok(docs)
}

/// Frames every document as BOS + content + EOS with the given tokenizer.
pub fn encode_documents(docs: &[Document], tok: &dyn Tokenizer) -> Result<Vec<(String, Vec<u32>)>> {
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let mut ids = Vec::new();
        ids.push(tok.bos_id());
        ids.extend(tok.encode(&d.text)?);
        ids.push(tok.eos_id());
        out.push((d.id.clone(), ids));
    }
    Ok(out)
}

/// Half-open token range `[start, end)` of one document chunk within a row.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub doc: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackedRow {
    /// Exactly the context length; tail is PAD.
    pub tokens: Vec<u32>,
    /// Disjoint, ordered, covering everything before the padding.
    pub segments: Vec<Segment>,
    pub pad: usize,
}

impl PackedRow {
    /// Loss mask for the head predicting `offset` tokens ahead: position `t`
    /// participates iff `t` and its target `t + offset` lie in the same
    /// segment. PAD positions and cross-segment targets drop out.
    pub fn loss_mask(&self, offset: usize) -> Vec<bool> {
        let mut mask = vec![false; self.tokens.len()];
        for seg in &self.segments {
            // Need t >= seg.start and t + offset <= seg.end - 1.
            for m in mask
                .iter_mut()
                .take((seg.end.max(offset) - offset).min(seg.end))
                .skip(seg.start)
            {
                *m = true;
            }
        }
        mask
    }
}

/// Best-fit-decreasing packing into rows of length `c`. Sequences longer
/// than `c` are first split into chunks of `c` (last chunk may be short);
/// chunks are then sorted by length descending (stable) and each goes into
/// the open bin with the smallest residual that still fits, lowest index on
/// ties, or a fresh bin.
pub fn pack_best_fit(seqs: &[(String, Vec<u32>)], c: usize) -> Result<Vec<PackedRow>> {
    if c < 2 {
        return Err(Error::invalid(format!("context length {c} must be at least 2")));
    }
    let mut chunks: Vec<(&str, &[u32])> = Vec::new();
    for (id, ids) in seqs {
        for chunk in ids.chunks(c) {
            chunks.push((id, chunk));
        }
    }
    chunks.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

    let mut bins: Vec<Vec<(&str, &[u32])>> = Vec::new();
    let mut residual: Vec<usize> = Vec::new();
    for (id, chunk) in chunks {
        let mut best: Option<usize> = None;
        for (i, &r) in residual.iter().enumerate() {
            if r >= chunk.len() && best.is_none_or(|b| r < residual[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                bins[i].push((id, chunk));
                residual[i] -= chunk.len();
            }
            None => {
                bins.push(vec![(id, chunk)]);
                residual.push(c - chunk.len());
            }
        }
    }

    Ok(bins
        .into_iter()
        .map(|bin| {
            let mut tokens = Vec::with_capacity(c);
            let mut segments = Vec::with_capacity(bin.len());
            for (id, chunk) in bin {
                let start = tokens.len();
                tokens.extend_from_slice(chunk);
                segments.push(Segment { start, end: tokens.len(), doc: id.to_string() });
            }
            let pad = c - tokens.len();
            tokens.resize(c, PAD);
            PackedRow { tokens, segments, pad }
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct PackStats {
    pub rows: usize,
    pub tokens: usize,
    pub pad_tokens: usize,
}

impl PackStats {
    pub fn pad_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.pad_tokens as f64 / (self.tokens + self.pad_tokens) as f64
        }
    }
}

pub fn pack_stats(rows: &[PackedRow]) -> PackStats {
    let pad_tokens = rows.iter().map(|r| r.pad).sum();
    let total: usize = rows.iter().map(|r| r.tokens.len()).sum();
    PackStats { rows: rows.len(), tokens: total - pad_tokens, pad_tokens }
}

/// One epoch of batches: a fresh seeded shuffle of all rows, chunked into
/// batches of `b` with the final short batch kept.
pub fn make_batches<'a>(rows: &'a [PackedRow], b: usize, rng: &mut Rng) -> Result<Vec<Vec<&'a PackedRow>>> {
    if rows.is_empty() {
        return Err(Error::invalid("no rows to batch"));
    }
    if b == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(b).map(|ix| ix.iter().map(|&i| &rows[i]).collect()).collect())
}

// ---------------------------------------------------------------------------
// Packed-row cache file: magic "MTPPACK1", little-endian fixed-width fields.
// ---------------------------------------------------------------------------

const PACK_MAGIC: &[u8; 8] = b"MTPPACK1";

pub fn save_pack(path: &Path, rows: &[PackedRow], c: usize) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for row in rows {
        out.extend_from_slice(&(row.segments.len() as u32).to_le_bytes());
        for seg in &row.segments {
            out.extend_from_slice(&(seg.start as u32).to_le_bytes());
            out.extend_from_slice(&(seg.end as u32).to_le_bytes());
            out.extend_from_slice(&(seg.doc.len() as u32).to_le_bytes());
            out.extend_from_slice(seg.doc.as_bytes());
        }
        for &t in &row.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_pack(path: &Path) -> Result<(Vec<PackedRow>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = || format!("pack file {}", path.display());
    let mut r = Cursor { bytes: &bytes, pos: 0 };
    if r.take(8).ok().map(|m| m != PACK_MAGIC).unwrap_or(true) {
        return Err(Error::format(what(), "bad magic"));
    }
    let err = |msg: &str| Error::format(what(), msg);
    let n_rows = r.u32().map_err(|_| err("truncated row count"))? as usize;
    let c = r.u32().map_err(|_| err("truncated context length"))? as usize;
    if c < 2 {
        return Err(err("context length below 2"));
    }
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let n_segs = r.u32().map_err(|_| err("truncated segment count"))? as usize;
        let mut segments = Vec::with_capacity(n_segs);
        for _ in 0..n_segs {
            let start = r.u32().map_err(|_| err("truncated segment"))? as usize;
            let end = r.u32().map_err(|_| err("truncated segment"))? as usize;
            let id_len = r.u32().map_err(|_| err("truncated segment"))? as usize;
            let doc = String::from_utf8(r.take(id_len).map_err(|_| err("truncated doc id"))?.to_vec())
                .map_err(|_| err("doc id is not UTF-8"))?;
            if start >= end || end > c {
                return Err(err("segment out of bounds"));
            }
            segments.push(Segment { start, end, doc });
        }
        let mut tokens = Vec::with_capacity(c);
        for _ in 0..c {
            tokens.push(r.u32().map_err(|_| err("truncated tokens"))?);
        }
        let used = segments.last().map_or(0, |s| s.end);
        rows.push(PackedRow { tokens, segments, pad: c - used });
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes after last row"));
    }
    Ok((rows, c))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        if self.pos + n > self.bytes.len() {
            return Err(());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
