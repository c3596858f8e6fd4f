//! The declarative run configuration: one TOML document describes data,
//! model, training, evaluation, and output for a whole experiment. The
//! document is schema-checked (unknown keys rejected) and cross-validated
//! before any subcommand touches the filesystem, and a byte-identical copy
//! is archived into the run directory so every artifact can be traced back
//! to the exact configuration that produced it.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::judge::JudgeConfig;
use crate::model::{HeadKind, ModelConfig};
use crate::tokenize::{BpeTokenizer, ByteTokenizer, Tokenizer, BYTE_VOCAB_SIZE, FIRST_MERGE_ID};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Byte,
    Bpe,
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerKind::Byte => "byte",
            TokenizerKind::Bpe => "bpe",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training corpus: text files, directories of text files, or `.jsonl`.
    pub corpus: Vec<PathBuf>,
    /// Held-out texts for bits-per-byte and as the prompt/reference source
    /// for generation and the text metrics.
    #[serde(default)]
    pub heldout: Vec<PathBuf>,
    pub tokenizer: TokenizerKind,
    /// Target id-table size for `tokenizer-train`; BPE only.
    #[serde(default)]
    pub bpe_vocab: usize,
    /// Row length C for packing, training, and the model context.
    pub context: usize,
}

/// The `[model]` section. Vocabulary size and context are not repeated here:
/// the vocabulary comes from the tokenizer (the full padded id table) and
/// the context from `[data]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub k_max: usize,
    #[serde(default = "default_head_kind")]
    pub head_kind: HeadKind,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_rms_eps")]
    pub rms_eps: f64,
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
}

fn default_head_kind() -> HeadKind {
    HeadKind::Linear
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_rms_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bleu: bool,
    pub rouge: bool,
    pub ttr: bool,
    /// How many held-out prompt windows generation and the text metrics use.
    pub n_prompts: usize,
    /// Content tokens per prompt (a BOS is prepended on top).
    pub prompt_tokens: usize,
    /// Continuation length in tokens.
    pub gen_tokens: usize,
    /// Draft heads for speculative decoding; defaults to the model's k_max.
    pub spec_k: Option<usize>,
    /// LLM-judge scoring; absent = disabled.
    pub judge: Option<JudgeConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bleu: true,
            rouge: true,
            ttr: true,
            n_prompts: 16,
            prompt_tokens: 32,
            gen_tokens: 32,
            spec_k: None,
            judge: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; all artifacts live under it.
    pub dir: PathBuf,
}

impl RunConfig {
    /// The assembled model configuration: `[model]` plus the tokenizer's
    /// padded vocabulary and the `[data]` context.
    pub fn model_config(&self) -> ModelConfig {
        let vocab = match self.data.tokenizer {
            TokenizerKind::Byte => BYTE_VOCAB_SIZE,
            TokenizerKind::Bpe => self.data.bpe_vocab,
        };
        ModelConfig {
            vocab,
            hidden: self.model.hidden,
            layers: self.model.layers,
            heads: self.model.heads,
            context: self.data.context,
            k_max: self.model.k_max,
            head_kind: self.model.head_kind,
            rope_base: self.model.rope_base,
            rms_eps: self.model.rms_eps,
            mlp_hidden: self.model.mlp_hidden,
        }
    }

    /// Draft heads speculative decoding uses: `eval.spec_k` or all of them.
    pub fn spec_k(&self) -> usize {
        self.eval.spec_k.unwrap_or(self.model.k_max)
    }

    /// Cross-field validation; everything here is checkable without touching
    /// the filesystem.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.data.corpus.is_empty() {
            return err("data.corpus lists no inputs".into());
        }
        match self.data.tokenizer {
            TokenizerKind::Bpe => {
                if self.data.bpe_vocab <= FIRST_MERGE_ID as usize {
                    return err(format!(
                        "data.bpe_vocab {} leaves no room for merges (needs > {FIRST_MERGE_ID})",
                        self.data.bpe_vocab
                    ));
                }
            }
            TokenizerKind::Byte => {
                if self.data.bpe_vocab != 0 {
                    return err("data.bpe_vocab is set but data.tokenizer is \"byte\"".into());
                }
            }
        }
        self.model_config().validate()?;
        self.train.validate()?;
        crate::curriculum::CurriculumSpec::new(
            self.train.curriculum,
            self.model.k_max,
            self.train.total_steps,
        )?;
        let e = &self.eval;
        if e.n_prompts == 0 || e.prompt_tokens == 0 || e.gen_tokens == 0 {
            return err("eval.n_prompts, eval.prompt_tokens, eval.gen_tokens must be positive".into());
        }
        let spec_k = self.spec_k();
        if spec_k == 0 || spec_k > self.model.k_max {
            return err(format!("eval.spec_k {spec_k} outside 1..={}", self.model.k_max));
        }
        // +1 for the BOS framing the prompt; speculative decoding additionally
        // needs spec_k positions of draft headroom.
        let needed = 1 + e.prompt_tokens + e.gen_tokens + spec_k;
        if needed > self.data.context {
            return err(format!(
                "eval window needs {needed} positions (BOS + prompt {} + continuation {} + {spec_k} drafts) \
                 but data.context is {}",
                e.prompt_tokens, e.gen_tokens, self.data.context
            ));
        }
        if let Some(judge) = &e.judge {
            judge.validate()?;
        }
        Ok(())
    }

    /// Short run descriptor used to tag metric reports: tokenizer, model
    /// shape, head kind/count, curriculum, seed.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}-d{}-l{}-k{}{}-{}-seed{}",
            self.data.tokenizer,
            self.model.hidden,
            self.model.layers,
            self.model.k_max,
            self.model.head_kind,
            self.train.curriculum,
            self.train.seed,
        )
    }

    /// The tokenizer this run uses. BPE loads the vocabulary produced by
    /// `tokenizer-train` from `vocab_path`.
    pub fn tokenizer(&self, vocab_path: &Path) -> Result<Box<dyn Tokenizer>> {
        match self.data.tokenizer {
            TokenizerKind::Byte => Ok(Box::new(ByteTokenizer::new())),
            TokenizerKind::Bpe => {
                let tok = BpeTokenizer::load(vocab_path).map_err(|e| {
                    Error::Config(format!(
                        "loading BPE vocabulary {} failed ({e}); run tokenizer-train first",
                        vocab_path.display()
                    ))
                })?;
                if tok.vocab_size() != self.data.bpe_vocab {
                    return Err(Error::Config(format!(
                        "BPE vocabulary {} has {} ids but data.bpe_vocab is {}",
                        vocab_path.display(),
                        tok.vocab_size(),
                        self.data.bpe_vocab
                    )));
                }
                Ok(Box::new(tok))
            }
        }
    }
}

/// Parses and validates a run configuration document.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
