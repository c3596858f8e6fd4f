//! Text-metric stack: head-1 log-likelihood scoring, bits-per-byte, BLEU,
//! ROUGE-L, type-token ratio, and CSV emission. The optional HTTP LLM-judge
//! lives in [`judge`].
//!
//! Bits-per-byte divides total nats by the UTF-8 byte count of the raw text,
//! so byte-level and subword models are directly comparable. Scoring frames
//! each text as BOS + content with no EOS: every content token is scored,
//! the BOS is context only. Texts longer than the scorer's context are split
//! into windows that overlap by exactly one token, so every content token is
//! scored exactly once (the first token of a continuation window is context
//! for the rest and was scored by the previous window).

pub mod judge;

use std::collections::{HashMap, HashSet};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, Scalar};
use crate::tokenize::{word_tokenize, Tokenizer};

/// Anything that can assign next-token negative log-likelihoods. Implemented
/// by [`Model`] (head 1) and by the closed-form mocks in [`crate::fixtures`].
pub trait Scorer {
    /// Longest id sequence [`next_token_nll`](Self::next_token_nll) accepts.
    fn context(&self) -> usize;

    /// `out[t]` = −ln p(ids[t+1] | ids[..=t]) for t in 0..len−1, so the
    /// output is one shorter than the input. Errors on an empty input or one
    /// longer than [`context`](Self::context).
    fn next_token_nll(&self, ids: &[u32]) -> Result<Vec<f64>>;
}

impl<T: Scalar> Scorer for Model<T> {
    fn context(&self) -> usize {
        self.config().context
    }

    fn next_token_nll(&self, ids: &[u32]) -> Result<Vec<f64>> {
        check_scored_ids(ids, self.config().context)?;
        let mut g = Graph::new();
        let fwd = self.forward_graph(&mut g, ids, 1, ids.len(), 1)?;
        let logits = g.value(fwd.head_logits[0]);
        let v = self.config().vocab;
        ids.windows(2)
            .zip(logits.data().chunks_exact(v))
            .map(|(pair, row)| {
                let target = pair[1] as usize;
                if target >= v {
                    return Err(Error::invalid(format!(
                        "score: token id {target} outside vocab {v}"
                    )));
                }
                // Log-sum-exp in f64 regardless of the model dtype: the sum
                // over the vocabulary is where f32 accumulation would bite.
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.as_f64()));
                let lse = max + row.iter().map(|&x| (x.as_f64() - max).exp()).sum::<f64>().ln();
                Ok(lse - row[target].as_f64())
            })
            .collect()
    }
}

fn check_scored_ids(ids: &[u32], context: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::invalid("score: empty id sequence"));
    }
    if ids.len() > context {
        return Err(Error::invalid(format!(
            "score: sequence length {} exceeds context {context}",
            ids.len()
        )));
    }
    Ok(())
}

/// Total negative log-likelihood of `ids` in nats: the sum of −ln p(x_t|x_<t)
/// over positions t ≥ 1. Position 0 is never scored. A one-token sequence
/// scores 0.
pub fn score_sequence<S: Scorer + ?Sized>(scorer: &S, ids: &[u32]) -> Result<f64> {
    check_scored_ids(ids, scorer.context())?;
    Ok(scorer.next_token_nll(ids)?.iter().sum())
}

/// Bits-per-byte of `texts` under `scorer`: (Σ nats) / (ln 2 · Σ UTF-8 bytes
/// of the raw texts). Each text is framed as BOS + content, chunked to the
/// scorer's context as described in the module docs.
pub fn bits_per_byte<S, I>(scorer: &S, texts: &[I], tokenizer: &dyn Tokenizer) -> Result<f64>
where
    S: Scorer + ?Sized,
    I: AsRef<str>,
{
    if texts.is_empty() {
        return Err(Error::invalid("bits_per_byte: empty corpus"));
    }
    let context = scorer.context();
    if context < 2 {
        return Err(Error::invalid(format!(
            "bits_per_byte: scorer context {context} cannot score anything"
        )));
    }
    let mut nats = 0.0f64;
    let mut bytes = 0usize;
    for text in texts {
        let text = text.as_ref();
        bytes += text.len();
        let mut ids = Vec::with_capacity(text.len() / 2 + 1);
        ids.push(tokenizer.bos_id());
        ids.extend(tokenizer.encode(text)?);
        let mut start = 0;
        while start + 1 < ids.len() {
            let window = &ids[start..(start + context).min(ids.len())];
            nats += scorer.next_token_nll(window)?.iter().sum::<f64>();
            start += context - 1;
        }
    }
    if bytes == 0 {
        return Err(Error::invalid("bits_per_byte: corpus has zero bytes"));
    }
    Ok(nats / (LN_2 * bytes as f64))
}

/// Sentence BLEU in [0, 100]: uniform-weight modified n-gram precisions for
/// n = 1..4 under a geometric mean, times the brevity penalty. No smoothing:
/// any zero precision (including a candidate shorter than four tokens)
/// zeroes the score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bleu {
    pub score: f64,
    /// The candidate had no tokens; the score was forced to 0.
    pub empty_candidate: bool,
}

pub fn bleu(candidate: &str, reference: &str) -> Bleu {
    let cand = word_tokenize(candidate);
    let refr = word_tokenize(reference);
    if cand.is_empty() {
        return Bleu { score: 0.0, empty_candidate: true };
    }
    let mut log_precision_sum = 0.0f64;
    for n in 1..=4 {
        if cand.len() < n {
            return Bleu { score: 0.0, empty_candidate: false };
        }
        let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
        for gram in refr.windows(n) {
            *ref_counts.entry(gram).or_insert(0) += 1;
        }
        let mut cand_counts: HashMap<&[&str], usize> = HashMap::new();
        for gram in cand.windows(n) {
            *cand_counts.entry(gram).or_insert(0) += 1;
        }
        let clipped: usize = cand_counts
            .iter()
            .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Bleu { score: 0.0, empty_candidate: false };
        }
        let total = cand.len() + 1 - n;
        log_precision_sum += 0.25 * (clipped as f64 / total as f64).ln();
    }
    let brevity = if cand.len() > refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    Bleu { score: 100.0 * brevity * log_precision_sum.exp(), empty_candidate: false }
}

/// ROUGE-L scores from the longest common subsequence of the word-tokenized
/// pair: precision L/|cand|, recall L/|ref|, and their harmonic mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Both inputs had no tokens; all scores were forced to 0.
    pub empty_inputs: bool,
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeL {
    let cand = word_tokenize(candidate);
    let refr = word_tokenize(reference);
    if cand.is_empty() && refr.is_empty() {
        return RougeL { precision: 0.0, recall: 0.0, f1: 0.0, empty_inputs: true };
    }
    let lcs = lcs_len(&cand, &refr) as f64;
    let precision = if cand.is_empty() { 0.0 } else { lcs / cand.len() as f64 };
    let recall = if refr.is_empty() { 0.0 } else { lcs / refr.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeL { precision, recall, f1, empty_inputs: false }
}

/// Longest-common-subsequence length via the classic DP with a rolling row.
fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { curr[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Type-token ratio: unique word tokens over total word tokens, compared as
/// exact strings (case-sensitive). Errors when the text has no tokens.
pub fn ttr(text: &str) -> Result<f64> {
    let tokens = word_tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid("ttr: text has no word tokens"));
    }
    let unique: HashSet<&str> = tokens.iter().copied().collect();
    Ok(unique.len() as f64 / tokens.len() as f64)
}

/// One aggregated metric row: a named value over `samples` inputs, tagged
/// with a fingerprint of the run configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    pub fingerprint: String,
}

impl MetricReport {
    pub fn new(
        metric: impl Into<String>,
        value: f64,
        samples: usize,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("metric report: non-finite value {value}")));
        }
        if samples == 0 {
            return Err(Error::invalid("metric report: zero samples"));
        }
        Ok(MetricReport {
            metric: metric.into(),
            value,
            samples,
            fingerprint: fingerprint.into(),
        })
    }

    /// Mean of per-sample values.
    pub fn mean_of(
        metric: impl Into<String>,
        values: &[f64],
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("metric report: no values to aggregate"));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Self::new(metric, mean, values.len(), fingerprint)
    }
}

/// Per-sample metric rows as CSV: `sample_id,metric,value`, floats in
/// shortest round-trip form.
pub fn metrics_to_csv(rows: &[(String, String, f64)]) -> String {
    let mut out = String::from("sample_id,metric,value\n");
    for (sample_id, metric, value) in rows {
        out.push_str(&format!("{sample_id},{metric},{value}\n"));
    }
    out
}
