//! Greedy generation and greedy blockwise self-speculative decoding.
//!
//! Speculative decoding drafts tokens with heads 2..k and verifies them with
//! head 1 on the next forward pass: a draft survives only if it equals the
//! argmax head 1 produces at its predecessor position, so the committed
//! sequence is token-for-token what plain greedy decoding would emit — the
//! only thing that changes is how many forward passes it takes. Each pass
//! commits the accepted drafts plus head 1's argmax at the new frontier
//! (always valid), then drafts afresh from that same pass's extra heads.
//! The very first pass has no drafts and commits exactly one token.
//!
//! A "pass" is one model invocation, however many positions it processes.
//! Pass counts are the unit of the speedup reports.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Scalar;

/// Anything that can propose per-head greedy tokens. Implemented by the
/// trained [`Model`] and by the scripted mocks in [`crate::fixtures`].
pub trait HeadPredictor {
    /// Number of prediction heads available.
    fn k_max(&self) -> usize;

    /// Maximum input length accepted by [`argmax_heads`](Self::argmax_heads).
    fn context(&self) -> usize;

    /// Greedy token grid for heads 1..=k_used: `out[h][p]` is head h+1's
    /// argmax at position `p` (predicting the token h+1 places after `p`).
    /// Ties break toward the lowest token id.
    fn argmax_heads(&self, ids: &[u32], k_used: usize) -> Result<Vec<Vec<u32>>>;
}

impl<T: Scalar> HeadPredictor for Model<T> {
    fn k_max(&self) -> usize {
        self.config().k_max
    }

    fn context(&self) -> usize {
        self.config().context
    }

    fn argmax_heads(&self, ids: &[u32], k_used: usize) -> Result<Vec<Vec<u32>>> {
        let mut g = crate::numerics::Graph::new();
        let fwd = self.forward_graph(&mut g, ids, 1, ids.len(), k_used)?;
        let v = self.config().vocab;
        Ok(fwd
            .head_logits
            .iter()
            .map(|&node| {
                g.value(node)
                    .data()
                    .chunks_exact(v)
                    .map(|row| {
                        let mut best = 0usize;
                        for (i, &x) in row.iter().enumerate() {
                            if x > row[best] {
                                best = i;
                            }
                        }
                        best as u32
                    })
                    .collect()
            })
            .collect())
    }
}

/// One generation run's accounting. `head_tally[0]` counts tokens emitted
/// directly by head 1 (greedy tokens and pass-frontier tokens);
/// `head_tally[j]` for j ≥ 1 counts accepted drafts from head j+1.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub prompt: Vec<u32>,
    pub generated: Vec<u32>,
    pub k_used: usize,
    pub forward_passes: usize,
    pub head_tally: Vec<usize>,
    /// Accepted-draft count for each pass (0 ≤ m ≤ k_used−1).
    pub accept_lengths: Vec<usize>,
}

impl GenerationTrace {
    /// Fraction of generated tokens credited to each head.
    pub fn accept_shares(&self) -> Vec<f64> {
        let total = self.generated.len().max(1) as f64;
        self.head_tally.iter().map(|&c| c as f64 / total).collect()
    }
}

fn check_prompt(model: &(impl HeadPredictor + ?Sized), prompt: &[u32], budget: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::invalid("generation needs a non-empty prompt"));
    }
    if budget > model.context() {
        return Err(Error::invalid(format!(
            "generation needs {budget} positions but the context is {}",
            model.context()
        )));
    }
    Ok(())
}

/// Plain greedy decoding from head 1: one forward pass per generated token.
pub fn greedy_generate<P: HeadPredictor + ?Sized>(
    model: &P,
    prompt: &[u32],
    n_tokens: usize,
) -> Result<GenerationTrace> {
    check_prompt(model, prompt, prompt.len() + n_tokens)?;
    let mut ids = prompt.to_vec();
    for _ in 0..n_tokens {
        let grid = model.argmax_heads(&ids, 1)?;
        ids.push(grid[0][ids.len() - 1]);
    }
    Ok(GenerationTrace {
        prompt: prompt.to_vec(),
        generated: ids[prompt.len()..].to_vec(),
        k_used: 1,
        forward_passes: n_tokens,
        head_tally: vec![n_tokens],
        accept_lengths: vec![0; n_tokens],
    })
}

/// Greedy blockwise self-speculative decoding with k_used heads. Output is
/// identical to [`greedy_generate`]; only the pass count changes.
pub fn speculative_generate<P: HeadPredictor + ?Sized>(
    model: &P,
    prompt: &[u32],
    n_tokens: usize,
    k_used: usize,
) -> Result<GenerationTrace> {
    if k_used == 0 || k_used > model.k_max() {
        return Err(Error::invalid(format!(
            "k_used {k_used} outside 1..={} available heads",
            model.k_max()
        )));
    }
    check_prompt(model, prompt, (prompt.len() + n_tokens).saturating_add(k_used))?;

    let mut ids = prompt.to_vec();
    // Credited head index (0-based) for each committed token, so an
    // overshooting final pass can be truncated tally-consistently.
    let mut credits: Vec<usize> = Vec::new();
    let mut drafts: Vec<u32> = Vec::new();
    let mut passes = 0usize;
    let mut accept_lengths = Vec::new();

    while credits.len() < n_tokens {
        let input: Vec<u32> = ids.iter().chain(drafts.iter()).copied().collect();
        let grid = model.argmax_heads(&input, k_used)?;
        passes += 1;
        let l = ids.len();

        // (a) Longest draft prefix that matches head 1's choices.
        let mut m = 0;
        while m < drafts.len() && drafts[m] == grid[0][l + m - 1] {
            m += 1;
        }
        accept_lengths.push(m);

        // (b) Commit the accepted drafts plus head 1's frontier token.
        for (j, &d) in drafts.iter().take(m).enumerate() {
            ids.push(d);
            credits.push(j + 1);
        }
        let frontier = l + m - 1;
        ids.push(grid[0][frontier]);
        credits.push(0);

        // (c) Draft the next block from this pass's extra heads.
        drafts = (1..k_used).map(|h| grid[h][frontier]).collect();
    }

    ids.truncate(prompt.len() + n_tokens);
    credits.truncate(n_tokens);
    let mut head_tally = vec![0usize; k_used];
    for &c in &credits {
        head_tally[c] += 1;
    }
    Ok(GenerationTrace {
        prompt: prompt.to_vec(),
        generated: ids[prompt.len()..].to_vec(),
        k_used,
        forward_passes: passes,
        head_tally,
        accept_lengths,
    })
}

/// Pass-count comparison of a baseline (k_used=1) trace set against a
/// speculative trace set over the same prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupReport {
    pub k_used: usize,
    pub tokens: usize,
    pub baseline_passes: usize,
    pub speculative_passes: usize,
    /// baseline passes / speculative passes.
    pub speedup: f64,
    /// Aggregate fraction of tokens credited to each head (sums to 1).
    pub accept_shares: Vec<f64>,
}

pub fn speedup_report(
    baseline: &[GenerationTrace],
    speculative: &[GenerationTrace],
) -> Result<SpeedupReport> {
    if baseline.len() != speculative.len() || baseline.is_empty() {
        return Err(Error::invalid(format!(
            "speedup_report: {} baseline vs {} speculative traces",
            baseline.len(),
            speculative.len()
        )));
    }
    let k_used = speculative[0].k_used;
    let mut tokens = 0usize;
    let mut tally = vec![0usize; k_used];
    let (mut base_passes, mut spec_passes) = (0usize, 0usize);
    for (b, s) in baseline.iter().zip(speculative) {
        if b.prompt != s.prompt || b.generated.len() != s.generated.len() {
            return Err(Error::invalid("speedup_report: trace sets cover different prompts"));
        }
        if s.k_used != k_used {
            return Err(Error::invalid("speedup_report: mixed k_used in speculative traces"));
        }
        tokens += s.generated.len();
        base_passes += b.forward_passes;
        spec_passes += s.forward_passes;
        for (t, &c) in tally.iter_mut().zip(&s.head_tally) {
            *t += c;
        }
    }
    if spec_passes == 0 {
        return Err(Error::invalid("speedup_report: no forward passes recorded"));
    }
    let accept_shares = tally.iter().map(|&c| c as f64 / tokens.max(1) as f64).collect();
    Ok(SpeedupReport {
        k_used,
        tokens,
        baseline_passes: base_passes,
        speculative_passes: spec_passes,
        speedup: base_passes as f64 / spec_passes as f64,
        accept_shares,
    })
}

/// CSV rows for generation traces: one line per (prompt, method) with
/// per-head acceptance shares. Traces with fewer heads than the widest one
/// leave the extra cells empty.
pub fn traces_to_csv(entries: &[(String, String, &GenerationTrace)]) -> String {
    let k_cols = entries.iter().map(|(_, _, t)| t.k_used).max().unwrap_or(1);
    let mut out = String::from("prompt_id,method,k_used,tokens,forward_passes");
    for i in 1..=k_cols {
        out.push_str(&format!(",accept_share_head_{i}"));
    }
    out.push('\n');
    for (id, method, t) in entries {
        out.push_str(&format!(
            "{id},{method},{},{},{}",
            t.k_used,
            t.generated.len(),
            t.forward_passes
        ));
        let shares = t.accept_shares();
        for i in 0..k_cols {
            match shares.get(i) {
                Some(s) => out.push_str(&format!(",{s}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
