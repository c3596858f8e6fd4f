//! Scripted mock predictors and synthetic corpora.
//!
//! The mocks satisfy the decode module's predictor contract with known
//! acceptance behavior, so pass-count mechanics and the exactness property
//! can be tested (and benchmarked via the CLI) without training anything.
//! They ship in the library rather than test code for exactly that reason.

use crate::decode::HeadPredictor;
use crate::error::{Error, Result};
use crate::evaluate::Scorer;
use crate::numerics::Rng;

enum Script {
    /// Deterministic token chain x → (3x + 2) mod V; heads 2..k either
    /// predict the chain's future exactly or deliberately miss it.
    Chain { agree: bool },
    /// Per-position per-head token table, cycled for long sequences.
    Table(Vec<Vec<u32>>),
}

pub struct MockModel {
    vocab: usize,
    k_max: usize,
    script: Script,
}

impl MockModel {
    /// Heads 2..k always predict what head 1 will later choose, so every
    /// draft is accepted and speculative decoding hits its pass-count floor.
    pub fn all_accept(k_max: usize, vocab: usize) -> Result<MockModel> {
        Self::chain(k_max, vocab, true)
    }

    /// Heads 2..k always disagree with head 1's future choice, so no draft
    /// is ever accepted and pass counts match plain greedy decoding.
    pub fn never_accept(k_max: usize, vocab: usize) -> Result<MockModel> {
        Self::chain(k_max, vocab, false)
    }

    fn chain(k_max: usize, vocab: usize, agree: bool) -> Result<MockModel> {
        if vocab < 2 || k_max == 0 {
            return Err(Error::invalid("mock model needs vocab ≥ 2 and k_max ≥ 1"));
        }
        Ok(MockModel { vocab, k_max, script: Script::Chain { agree } })
    }

    /// Table-driven mock: one line per position (cycled), whitespace
    /// separated token ids, one column per head. The column count sets
    /// k_max.
    pub fn from_table_str(text: &str, vocab: usize) -> Result<MockModel> {
        if vocab < 2 {
            return Err(Error::invalid("mock model needs vocab ≥ 2"));
        }
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for cell in line.split_whitespace() {
                let id: u32 = cell
                    .parse()
                    .map_err(|_| Error::invalid(format!("mock table line {}: bad token id {cell:?}", lineno + 1)))?;
                if id as usize >= vocab {
                    return Err(Error::invalid(format!(
                        "mock table line {}: id {id} outside vocab {vocab}",
                        lineno + 1
                    )));
                }
                row.push(id);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::invalid(format!(
                        "mock table line {}: {} columns, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        let k_max = rows.first().map(Vec::len).unwrap_or(0);
        if k_max == 0 {
            return Err(Error::invalid("mock table has no rows"));
        }
        Ok(MockModel { vocab, k_max, script: Script::Table(rows) })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    fn next(&self, x: u32) -> u32 {
        ((3 * x as u64 + 2) % self.vocab as u64) as u32
    }
}

impl HeadPredictor for MockModel {
    fn k_max(&self) -> usize {
        self.k_max
    }

    fn context(&self) -> usize {
        usize::MAX
    }

    fn argmax_heads(&self, ids: &[u32], k_used: usize) -> Result<Vec<Vec<u32>>> {
        if k_used == 0 || k_used > self.k_max {
            return Err(Error::invalid(format!("mock: k_used {k_used} outside 1..={}", self.k_max)));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.vocab) {
            return Err(Error::invalid(format!("mock: id {bad} outside vocab {}", self.vocab)));
        }
        let mut grid = vec![Vec::with_capacity(ids.len()); k_used];
        for (p, &tok) in ids.iter().enumerate() {
            match &self.script {
                Script::Chain { agree } => {
                    let mut ahead = tok;
                    for (h, head_grid) in grid.iter_mut().enumerate() {
                        ahead = self.next(ahead);
                        let val = if h == 0 || *agree {
                            ahead
                        } else {
                            (ahead + 1) % self.vocab as u32
                        };
                        head_grid.push(val);
                    }
                }
                Script::Table(rows) => {
                    let row = &rows[p % rows.len()];
                    for (h, head_grid) in grid.iter_mut().enumerate() {
                        head_grid.push(row[h]);
                    }
                }
            }
        }
        Ok(grid)
    }
}

/// Scorer that assigns probability 1 to whatever token comes next: every
/// position costs 0 nats, so any corpus scores 0 bits per byte under any
/// tokenizer. Pins the zero end of the scoring scale.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectScorer;

impl Scorer for PerfectScorer {
    fn context(&self) -> usize {
        usize::MAX
    }

    fn next_token_nll(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::invalid("score: empty id sequence"));
        }
        Ok(vec![0.0; ids.len() - 1])
    }
}

/// Scorer with a uniform distribution over `vocab` ids: every position costs
/// exactly ln(vocab) nats. A uniform 256-way byte model prices ASCII text at
/// 8 bits per byte — the closed-form anchor for the scoring stack.
#[derive(Clone, Copy, Debug)]
pub struct UniformScorer {
    vocab: usize,
}

impl UniformScorer {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::invalid("uniform scorer needs a non-empty vocab"));
        }
        Ok(UniformScorer { vocab })
    }
}

impl Scorer for UniformScorer {
    fn context(&self) -> usize {
        usize::MAX
    }

    fn next_token_nll(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::invalid("score: empty id sequence"));
        }
        Ok(vec![(self.vocab as f64).ln(); ids.len() - 1])
    }
}

/// Deterministic plain-ASCII text with heavy lexical repetition: short
/// subject–verb–object sentences drawn from small word pools, with a fixed
/// refrain every few sentences. Regular enough for a tiny byte-level model
/// to compress well within a few hundred steps. Output length lands on a
/// sentence boundary at or just past `target_bytes`.
pub fn synthetic_corpus(seed: u64, target_bytes: usize) -> String {
    const SUBJECTS: [&str; 8] = [
        "the red fox", "a small bird", "the old man", "a young girl", "the grey cat",
        "one tall tree", "the night wind", "a slow river",
    ];
    const VERBS: [&str; 8] = [
        "walks past", "looks at", "sits near", "runs from", "sings to", "waits by",
        "turns toward", "drifts over",
    ];
    const OBJECTS: [&str; 8] = [
        "the river", "a stone wall", "the garden", "an open door", "the market",
        "a wooden bridge", "the far hill", "an empty field",
    ];
    const REFRAIN: &str = "so it goes, day after day.";
    let mut rng = Rng::new(seed).derive("synthetic-corpus");
    let mut out = String::with_capacity(target_bytes + 128);
    let mut sentences = 0usize;
    while out.len() < target_bytes {
        if sentences % 7 == 6 {
            out.push_str(REFRAIN);
        } else {
            out.push_str(SUBJECTS[rng.gen_range(0..SUBJECTS.len())]);
            out.push(' ');
            out.push_str(VERBS[rng.gen_range(0..VERBS.len())]);
            out.push(' ');
            out.push_str(OBJECTS[rng.gen_range(0..OBJECTS.len())]);
            out.push('.');
        }
        sentences += 1;
        out.push(if sentences % 6 == 0 { '\n' } else { ' ' });
    }
    out
}
