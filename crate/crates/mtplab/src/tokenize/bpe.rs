//! Byte-pair encoding over a raw-byte alphabet with word-boundary
//! pre-tokenization.
//!
//! Training greedily merges the most frequent adjacent token pair inside
//! pre-token pieces (word tokens plus the whitespace runs between them).
//! Ties break on the lexicographically smallest merged byte string, so a
//! given corpus always yields the same merge list. Encoding replays merges
//! lowest-rank-first, which reproduces the training-time segmentation.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::words::word_spans;
use super::{Tokenizer, BOS, EOS, PAD};

/// First id assigned to a learned merge (after bytes and specials).
pub const FIRST_MERGE_ID: u32 = 259;

#[derive(Clone, Debug)]
pub struct BpeTokenizer {
    /// Padded table size; ids past the learned merges are reserved.
    target_vocab: usize,
    /// Learned merges in order; merge `i` produces id `FIRST_MERGE_ID + i`.
    merges: Vec<(u32, u32)>,
    /// Byte string of each merged token, parallel to `merges`.
    merged_bytes: Vec<Vec<u8>>,
    /// Pair -> merge rank for encoding.
    rank: HashMap<(u32, u32), u32>,
}

impl BpeTokenizer {
    /// Learns merges from `corpus` until the vocabulary reaches
    /// `target_vocab` ids or no pair occurs twice.
    pub fn train<I, S>(corpus: I, target_vocab: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if target_vocab <= FIRST_MERGE_ID as usize {
            return Err(Error::Tokenize(format!(
                "target vocab {target_vocab} leaves no room for merges (needs > {FIRST_MERGE_ID})"
            )));
        }
        // Piece frequency table; BPE statistics never cross piece boundaries.
        let mut piece_counts: HashMap<Vec<u8>, u64> = HashMap::new();
        for doc in corpus {
            for piece in pieces(doc.as_ref()) {
                *piece_counts.entry(piece.as_bytes().to_vec()).or_insert(0) += 1;
            }
        }
        if piece_counts.is_empty() {
            return Err(Error::Tokenize("empty corpus".into()));
        }
        let mut words: Vec<(Vec<u32>, u64)> = piece_counts
            .into_iter()
            .map(|(bytes, c)| (bytes.iter().map(|&b| u32::from(b)).collect(), c))
            .collect();

        let mut tok = BpeTokenizer {
            target_vocab,
            merges: Vec::new(),
            merged_bytes: Vec::new(),
            rank: HashMap::new(),
        };
        while FIRST_MERGE_ID as usize + tok.merges.len() < target_vocab {
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (ids, c) in &words {
                for w in ids.windows(2) {
                    *pair_counts.entry((w[0], w[1])).or_insert(0) += c;
                }
            }
            // Highest count wins; ties prefer the lexicographically smallest
            // merged byte string, then the smallest left constituent.
            let best = pair_counts.into_iter().max_by_key(|&((l, r), c)| {
                let mut bytes = tok.bytes_of(l).to_vec();
                bytes.extend_from_slice(tok.bytes_of(r));
                (c, Reverse(bytes), Reverse(tok.bytes_of(l).to_vec()))
            });
            let Some(((l, r), count)) = best else { break };
            if count < 2 {
                break;
            }
            let new_id = FIRST_MERGE_ID + tok.merges.len() as u32;
            let mut bytes = tok.bytes_of(l).to_vec();
            bytes.extend_from_slice(tok.bytes_of(r));
            tok.rank.insert((l, r), tok.merges.len() as u32);
            tok.merges.push((l, r));
            tok.merged_bytes.push(bytes);
            for (ids, _) in &mut words {
                merge_pair(ids, l, r, new_id);
            }
        }
        Ok(tok)
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Byte string of a content id. Panics on specials/reserved; internal.
    fn bytes_of(&self, id: u32) -> &[u8] {
        const SINGLE: [u8; 256] = {
            let mut t = [0u8; 256];
            let mut i = 0;
            while i < 256 {
                t[i] = i as u8;
                i += 1;
            }
            t
        };
        if id < 256 {
            std::slice::from_ref(&SINGLE[id as usize])
        } else {
            &self.merged_bytes[(id - FIRST_MERGE_ID) as usize]
        }
    }

    fn encode_piece(&self, piece: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = piece.iter().map(|&b| u32::from(b)).collect();
        loop {
            // Lowest-rank applicable pair anywhere in the piece.
            let best = ids
                .windows(2)
                .filter_map(|w| self.rank.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let (l, r) = self.merges[rank as usize];
            merge_pair(&mut ids, l, r, FIRST_MERGE_ID + rank);
        }
        ids
    }

    /// Writes the vocabulary file: a header line, then one merge per line as
    /// two space-separated escaped byte strings.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("bpe-vocab v1 {}\n", self.target_vocab);
        for &(l, r) in &self.merges {
            let _ = writeln!(out, "{} {}", escape_bytes(self.bytes_of(l)), escape_bytes(self.bytes_of(r)));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let what = || format!("vocab file {}", path.display());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(what(), "empty file"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 3 || fields[0] != "bpe-vocab" || fields[1] != "v1" {
            return Err(Error::format(what(), format!("bad header {header:?}")));
        }
        let target_vocab: usize = fields[2]
            .parse()
            .map_err(|_| Error::format(what(), format!("bad vocab size {:?}", fields[2])))?;
        if target_vocab <= FIRST_MERGE_ID as usize {
            return Err(Error::format(what(), format!("vocab size {target_vocab} too small")));
        }

        let mut tok = BpeTokenizer {
            target_vocab,
            merges: Vec::new(),
            merged_bytes: Vec::new(),
            rank: HashMap::new(),
        };
        // Bytes -> id for everything learned so far, to resolve merge lines.
        let mut id_of: HashMap<Vec<u8>, u32> = (0u32..256).map(|b| (vec![b as u8], b)).collect();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let detail = |msg: String| Error::format(what(), format!("line {}: {msg}", lineno + 2));
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| detail("expected two space-separated fields".into()))?;
            let left = unescape_bytes(a).map_err(|m| detail(m))?;
            let right = unescape_bytes(b).map_err(|m| detail(m))?;
            let &l = id_of.get(&left).ok_or_else(|| detail(format!("unknown left token {a:?}")))?;
            let &r = id_of.get(&right).ok_or_else(|| detail(format!("unknown right token {b:?}")))?;
            if FIRST_MERGE_ID as usize + tok.merges.len() >= target_vocab {
                return Err(detail("more merges than the declared vocab size allows".into()));
            }
            let new_id = FIRST_MERGE_ID + tok.merges.len() as u32;
            let mut bytes = left;
            bytes.extend_from_slice(&right);
            id_of.insert(bytes.clone(), new_id);
            tok.rank.insert((l, r), tok.merges.len() as u32);
            tok.merges.push((l, r));
            tok.merged_bytes.push(bytes);
        }
        Ok(tok)
    }
}

impl Tokenizer for BpeTokenizer {
    fn vocab_size(&self) -> usize {
        self.target_vocab
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        // Repeated pieces are common (whitespace runs, stop words); cache
        // their encoding for the duration of this call.
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        for piece in pieces(text) {
            let ids = cache.entry(piece).or_insert_with(|| self.encode_piece(piece.as_bytes()));
            out.extend_from_slice(ids);
        }
        Ok(out)
    }

    fn id_bytes(&self, id: u32) -> Result<Option<Vec<u8>>> {
        match id {
            0..=255 => Ok(Some(vec![id as u8])),
            BOS | EOS | PAD => Ok(None),
            _ if ((id - FIRST_MERGE_ID) as usize) < self.merges.len() => {
                Ok(Some(self.merged_bytes[(id - FIRST_MERGE_ID) as usize].clone()))
            }
            _ if (id as usize) < self.target_vocab => {
                Err(Error::Tokenize(format!("reserved id {id} has no byte value")))
            }
            _ => Err(Error::Tokenize(format!("id {id} out of range for vocab {}", self.target_vocab))),
        }
    }
}

/// Word tokens plus the whitespace runs between them: covers every byte of
/// the input, in order.
fn pieces(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut prev = 0;
    for (a, b) in word_spans(text) {
        if a > prev {
            out.push(&text[prev..a]);
        }
        out.push(&text[a..b]);
        prev = b;
    }
    if prev < text.len() {
        out.push(&text[prev..]);
    }
    out
}

/// Replaces non-overlapping occurrences of `(l, r)` left to right.
fn merge_pair(ids: &mut Vec<u32>, l: u32, r: u32, new_id: u32) {
    let mut w = 0;
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            ids[w] = new_id;
            i += 2;
        } else {
            ids[w] = ids[i];
            i += 1;
        }
        w += 1;
    }
    ids.truncate(w);
}

/// Printable ASCII stays literal; space, backslash, and everything else is
/// `\xNN`, so fields never contain the separator.
fn escape_bytes(bytes: &[u8]) -> String {
    let mut s = String::new();
    for &b in bytes {
        if (0x21..=0x7e).contains(&b) && b != b'\\' {
            s.push(b as char);
        } else {
            let _ = write!(s, "\\x{b:02x}");
        }
    }
    s
}

fn unescape_bytes(s: &str) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = s.as_bytes().iter().copied();
    while let Some(c) = chars.next() {
        if c == b'\\' {
            let (x, h, l) = (chars.next(), chars.next(), chars.next());
            let (Some(b'x'), Some(h), Some(l)) = (x, h, l) else {
                return Err(format!("malformed escape in {s:?}"));
            };
            let hex = [h, l];
            let hex = std::str::from_utf8(&hex).map_err(|_| format!("malformed escape in {s:?}"))?;
            let v = u8::from_str_radix(hex, 16).map_err(|_| format!("malformed escape in {s:?}"))?;
            out.push(v);
        } else {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err("empty token".into());
    }
    Ok(out)
}
