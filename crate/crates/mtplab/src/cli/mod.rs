//! Operator surface: `mtplab <subcommand> --config run.toml`.
//!
//! One TOML document (see [`config`]) drives the whole pipeline; every
//! artifact lands in the configured run directory:
//!
//! ```text
//! <dir>/config.toml          archived copy of the input config
//! <dir>/tokenizer.vocab      BPE vocabulary        (tokenizer-train)
//! <dir>/cache.pack           packed training rows  (pack)
//! <dir>/checkpoints/         step{N}.ckpt          (train)
//! <dir>/logs/train.csv       per-step loss trace   (train)
//! <dir>/logs/run.log         timestamped sidecar; the only file with clock data
//! <dir>/reports/*.csv        run_meta, completions, specbench, speedup, bpb, text_metrics
//! ```
//!
//! Exit codes: 0 success; 2 when the invocation or the config document is
//! invalid (nothing has been written yet); 1 for any failure after
//! validation (missing inputs, IO, non-finite loss, ...). Given the same
//! config and seed, every subcommand rewrites its outputs byte-identically;
//! wall-clock timestamps appear only in `logs/run.log`.

pub mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::datapack::{encode_documents, ingest, load_pack, pack_best_fit, pack_stats, save_pack};
use crate::decode::{
    greedy_generate, speculative_generate, speedup_report, traces_to_csv, GenerationTrace,
    HeadPredictor,
};
use crate::error::{Error, Result};
use crate::evaluate::{bits_per_byte, bleu, metrics_to_csv, rouge_l, ttr, MetricReport};
use crate::fixtures::MockModel;
use crate::model::Model;
use crate::tokenize::Tokenizer;
use crate::train::{load_checkpoint, loss_csv_header, loss_csv_row, save_checkpoint, Trainer};
use config::{load_run_config, RunConfig, TokenizerKind};

#[derive(Parser)]
#[command(name = "mtplab", version, about = "Desk-scale multi-token-prediction lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn a BPE vocabulary from the corpus (BPE runs only).
    TokenizerTrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tokenize the corpus and pack it into fixed-length training rows.
    Pack {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the model; writes checkpoints and the per-step loss CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the latest checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
        /// Stop early once this many total steps are complete (for staged runs).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Greedy and speculative continuations for held-out prompts.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to load (default: latest in the run directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forward-pass counts: speculative decoding vs the greedy baseline.
    SpecBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Run against a scripted mock instead of a trained checkpoint.
        #[arg(long, value_enum)]
        mock: Option<MockKind>,
    },
    /// Bits-per-byte of the held-out texts.
    EvalBpb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Text-quality metrics of greedy continuations against references.
    EvalText {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge per-run CSVs into one comparison table (markdown + CSV).
    Report {
        /// Run directories to compare; the first is the baseline.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where report.md and report.csv are written.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MockKind {
    AllAccept,
    NeverAccept,
}

/// Parses `argv` and runs one subcommand, returning the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match cli.cmd {
        Cmd::TokenizerTrain { config } => staged(
            &config,
            |cfg| match cfg.data.tokenizer {
                TokenizerKind::Bpe => Ok(()),
                TokenizerKind::Byte => Err(Error::Config(
                    "tokenizer-train needs data.tokenizer = \"bpe\"; the byte tokenizer has no vocabulary to learn"
                        .into(),
                )),
            },
            cmd_tokenizer_train,
        ),
        Cmd::Pack { config } => staged(&config, |_| Ok(()), cmd_pack),
        Cmd::Train { config, resume, steps } => {
            staged(&config, |_| Ok(()), |cfg, src| cmd_train(cfg, src, resume, steps))
        }
        Cmd::Generate { config, checkpoint } => {
            staged(&config, |_| Ok(()), |cfg, src| cmd_generate(cfg, src, checkpoint.as_deref()))
        }
        Cmd::SpecBench { config, checkpoint, mock } => staged(&config, |_| Ok(()), |cfg, src| {
            cmd_spec_bench(cfg, src, checkpoint.as_deref(), mock)
        }),
        Cmd::EvalBpb { config, checkpoint } => {
            staged(&config, |_| Ok(()), |cfg, src| cmd_eval_bpb(cfg, src, checkpoint.as_deref()))
        }
        Cmd::EvalText { config, checkpoint } => {
            staged(&config, |_| Ok(()), |cfg, src| cmd_eval_text(cfg, src, checkpoint.as_deref()))
        }
        Cmd::Report { runs, out } => match cmd_report(&runs, &out) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

/// Two-stage execution: config load + validation errors exit 2 before any
/// file is written; everything after that is a runtime failure, exit 1.
fn staged(
    config_path: &Path,
    extra_validation: impl FnOnce(&RunConfig) -> Result<()>,
    run: impl FnOnce(&RunConfig, &Path) -> Result<()>,
) -> i32 {
    let cfg = match load_run_config(config_path).and_then(|cfg| {
        extra_validation(&cfg)?;
        Ok(cfg)
    }) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match run(&cfg, config_path) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Paths inside one run directory.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn new(cfg: &RunConfig) -> Self {
        RunDir { root: cfg.output.dir.clone() }
    }

    fn vocab(&self) -> PathBuf {
        self.root.join("tokenizer.vocab")
    }

    fn pack(&self) -> PathBuf {
        self.root.join("cache.pack")
    }

    fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn train_csv(&self) -> PathBuf {
        self.root.join("logs").join("train.csv")
    }

    fn run_log(&self) -> PathBuf {
        self.root.join("logs").join("run.log")
    }

    fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

/// Creates the run directory skeleton, archives the config byte-for-byte,
/// refreshes the machine-readable run metadata, and appends the only
/// timestamped line this tool ever writes.
fn prepare_run_dir(cfg: &RunConfig, config_src: &Path, command: &str) -> Result<RunDir> {
    let dir = RunDir::new(cfg);
    for sub in ["checkpoints", "logs", "reports"] {
        let p = dir.root.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let archived = dir.root.join("config.toml");
    fs::copy(config_src, &archived).map_err(|e| Error::io(&archived, e))?;
    write_file(&dir.report("run_meta.csv"), &run_meta_csv(cfg))?;

    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let log = dir.run_log();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .map_err(|e| Error::io(&log, e))?;
    writeln!(f, "unix={unix} cmd={command}").map_err(|e| Error::io(&log, e))?;
    Ok(dir)
}

/// Key/value description of the run consumed by `report`, so comparisons
/// need only CSVs.
fn run_meta_csv(cfg: &RunConfig) -> String {
    let mut out = String::from("key,value\n");
    let mc = cfg.model_config();
    for (k, v) in [
        ("tokenizer", cfg.data.tokenizer.to_string()),
        ("vocab", mc.vocab.to_string()),
        ("context", mc.context.to_string()),
        ("hidden", mc.hidden.to_string()),
        ("layers", mc.layers.to_string()),
        ("heads", mc.heads.to_string()),
        ("k_max", mc.k_max.to_string()),
        ("head_kind", mc.head_kind.to_string()),
        ("curriculum", cfg.train.curriculum.to_string()),
        ("seed", cfg.train.seed.to_string()),
        ("total_steps", cfg.train.total_steps.to_string()),
        ("batch_size", cfg.train.batch_size.to_string()),
        ("fingerprint", cfg.fingerprint()),
    ] {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Quotes a CSV field when it contains separators or quotes.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV sample ids come from document ids (paths); keep them cell-safe.
fn sanitize_id(s: &str) -> String {
    s.replace([',', '"', '\n', '\r'], "_")
}

// ---------------------------------------------------------------------------
// tokenizer-train / pack
// ---------------------------------------------------------------------------

fn cmd_tokenizer_train(cfg: &RunConfig, src: &Path) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "tokenizer-train")?;
    let docs = ingest(&cfg.data.corpus)?;
    let tok = crate::tokenize::BpeTokenizer::train(
        docs.iter().map(|d| d.text.as_str()),
        cfg.data.bpe_vocab,
    )?;
    tok.save(&dir.vocab())?;
    println!("wrote {} ({} merges)", dir.vocab().display(), tok.merge_count());
    Ok(())
}

fn cmd_pack(cfg: &RunConfig, src: &Path) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "pack")?;
    let tok = cfg.tokenizer(&dir.vocab())?;
    let docs = ingest(&cfg.data.corpus)?;
    let seqs = encode_documents(&docs, tok.as_ref())?;
    let rows = pack_best_fit(&seqs, cfg.data.context)?;
    let stats = pack_stats(&rows);
    save_pack(&dir.pack(), &rows, cfg.data.context)?;
    println!(
        "wrote {}: {} rows of {} tokens, {:.2}% padding",
        dir.pack().display(),
        rows.len(),
        cfg.data.context,
        100.0 * stats.pad_fraction()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// `step{N}.ckpt` files under `dir`, highest step first. Emergency
/// checkpoints are excluded on purpose: resuming one silently would hide the
/// failure that produced it.
fn find_latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(_) => return Ok(None),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("step")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, entry.path()));
            }
        }
    }
    Ok(best)
}

fn cmd_train(cfg: &RunConfig, src: &Path, resume: bool, steps: Option<usize>) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "train")?;
    let (rows, packed_c) = load_pack(&dir.pack())?;
    if packed_c != cfg.data.context {
        return Err(Error::invalid(format!(
            "{} was packed with context {packed_c} but the config says {}; re-run pack",
            dir.pack().display(),
            cfg.data.context
        )));
    }
    let model_cfg = cfg.model_config();
    let k_max = model_cfg.k_max;

    let mut trainer: Trainer<f32> = if resume {
        let (step, path) = find_latest_checkpoint(&dir.checkpoints())?
            .ok_or_else(|| Error::invalid("no checkpoint to resume from"))?;
        let ckpt = load_checkpoint(&path)?;
        if ckpt.model_config != model_cfg {
            return Err(Error::invalid(format!(
                "{}: checkpoint model config differs from the run config",
                path.display()
            )));
        }
        if ckpt.train_config != cfg.train {
            return Err(Error::invalid(format!(
                "{}: checkpoint train config differs from the run config",
                path.display()
            )));
        }
        println!("resuming from {} (step {step})", path.display());
        ckpt.into_trainer()?
    } else {
        Trainer::new(Model::init(model_cfg, cfg.train.seed)?, cfg.train.clone())?
    };

    let target = steps.unwrap_or(cfg.train.total_steps).min(cfg.train.total_steps);

    // The loss CSV is streamed row by row; on resume the existing file is
    // truncated to exactly the rows the checkpoint covers, so an interrupted
    // run plus a resumed run reproduces the uninterrupted file byte-for-byte.
    let csv_path = dir.train_csv();
    let header = loss_csv_header(k_max);
    if resume {
        let existing = read_file(&csv_path).map_err(|_| {
            Error::invalid(format!("{} is missing; cannot resume its loss trace", csv_path.display()))
        })?;
        let mut lines = existing.lines();
        if lines.next() != Some(header.trim_end()) {
            return Err(Error::invalid(format!("{}: unexpected header", csv_path.display())));
        }
        let kept: Vec<&str> = lines.take(trainer.completed_steps()).collect();
        if kept.len() < trainer.completed_steps() {
            return Err(Error::invalid(format!(
                "{} has {} rows but the checkpoint is at step {}",
                csv_path.display(),
                kept.len(),
                trainer.completed_steps()
            )));
        }
        let mut rebuilt = header.clone();
        for line in kept {
            rebuilt.push_str(line);
            rebuilt.push('\n');
        }
        write_file(&csv_path, &rebuilt)?;
    } else {
        write_file(&csv_path, &header)?;
    }
    let mut csv = fs::OpenOptions::new()
        .append(true)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;

    while trainer.completed_steps() < target {
        let record = match trainer.step_once(&rows) {
            Ok(r) => r,
            Err(e) => {
                // The trainer keeps its last good state on a failed step;
                // preserve it for post-mortems, then fail the run.
                let done = trainer.completed_steps();
                let path = dir.checkpoints().join(format!("emergency-step{done}.ckpt"));
                save_checkpoint(&path, trainer.model(), trainer.optimizer(), trainer.config(), done)?;
                return Err(Error::invalid(format!(
                    "step {done} failed ({e}); last good state saved to {}",
                    path.display()
                )));
            }
        };
        csv.write_all(loss_csv_row(&record, k_max).as_bytes())
            .map_err(|e| Error::io(&csv_path, e))?;
        let done = trainer.completed_steps();
        if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 {
            let path = dir.checkpoints().join(format!("step{done}.ckpt"));
            save_checkpoint(&path, trainer.model(), trainer.optimizer(), trainer.config(), done)?;
        }
    }

    let done = trainer.completed_steps();
    let ckpt_path = dir.checkpoints().join(format!("step{done}.ckpt"));
    save_checkpoint(&ckpt_path, trainer.model(), trainer.optimizer(), trainer.config(), done)?;
    println!("trained to step {done}; checkpoint {}", ckpt_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// generation + evaluation
// ---------------------------------------------------------------------------

/// Loads the model (not the optimizer) from a checkpoint, latest by default.
fn load_model(cfg: &RunConfig, dir: &RunDir, requested: Option<&Path>) -> Result<Model<f32>> {
    let path = match requested {
        Some(p) => p.to_path_buf(),
        None => {
            find_latest_checkpoint(&dir.checkpoints())?
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "no checkpoint under {}; train first or pass --checkpoint",
                        dir.checkpoints().display()
                    ))
                })?
                .1
        }
    };
    let ckpt = load_checkpoint(&path)?;
    if ckpt.model_config != cfg.model_config() {
        return Err(Error::invalid(format!(
            "{}: checkpoint model config differs from the run config",
            path.display()
        )));
    }
    Model::from_parts(ckpt.model_config, ckpt.params)
}

/// One held-out evaluation case: a BOS-framed prompt and its true
/// continuation as the reference.
struct PromptCase {
    id: String,
    prompt_ids: Vec<u32>,
    prompt_text: String,
    reference_text: String,
}

/// Deterministic prompt/reference windows from the held-out texts:
/// consecutive non-overlapping spans of prompt_tokens + gen_tokens content
/// tokens, document by document, up to n_prompts.
fn heldout_cases(cfg: &RunConfig, tok: &dyn Tokenizer) -> Result<Vec<PromptCase>> {
    if cfg.data.heldout.is_empty() {
        return Err(Error::invalid("data.heldout lists no inputs; this subcommand needs held-out text"));
    }
    let docs = ingest(&cfg.data.heldout)?;
    let (p, g, n) = (cfg.eval.prompt_tokens, cfg.eval.gen_tokens, cfg.eval.n_prompts);
    let mut cases = Vec::new();
    'outer: for doc in &docs {
        let ids = tok.encode(&doc.text)?;
        for window in ids.chunks_exact(p + g) {
            if cases.len() == n {
                break 'outer;
            }
            let mut prompt_ids = Vec::with_capacity(p + 1);
            prompt_ids.push(tok.bos_id());
            prompt_ids.extend_from_slice(&window[..p]);
            cases.push(PromptCase {
                id: format!("p{:03}", cases.len()),
                prompt_ids,
                prompt_text: tok.decode_lossy(&window[..p]),
                reference_text: tok.decode_lossy(&window[p..]),
            });
        }
    }
    if cases.is_empty() {
        return Err(Error::invalid(format!(
            "held-out texts yield no prompt windows of {} tokens",
            p + g
        )));
    }
    Ok(cases)
}

/// Greedy and speculative traces for every case, in case order.
fn paired_traces<P: HeadPredictor + ?Sized>(
    predictor: &P,
    cases: &[PromptCase],
    gen_tokens: usize,
    k_used: usize,
) -> Result<(Vec<GenerationTrace>, Vec<GenerationTrace>)> {
    let mut greedy = Vec::with_capacity(cases.len());
    let mut speculative = Vec::with_capacity(cases.len());
    for case in cases {
        greedy.push(greedy_generate(predictor, &case.prompt_ids, gen_tokens)?);
        speculative.push(speculative_generate(predictor, &case.prompt_ids, gen_tokens, k_used)?);
    }
    Ok((greedy, speculative))
}

fn cmd_generate(cfg: &RunConfig, src: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "generate")?;
    let tok = cfg.tokenizer(&dir.vocab())?;
    let model = load_model(cfg, &dir, checkpoint)?;
    let cases = heldout_cases(cfg, tok.as_ref())?;
    let (greedy, speculative) = paired_traces(&model, &cases, cfg.eval.gen_tokens, cfg.spec_k())?;

    let mut out = String::from("prompt_id,method,k_used,prompt,continuation\n");
    for ((case, g), s) in cases.iter().zip(&greedy).zip(&speculative) {
        for (method, trace) in [("greedy", g), ("speculative", s)] {
            out.push_str(&format!(
                "{},{method},{},{},{}\n",
                case.id,
                trace.k_used,
                csv_field(&case.prompt_text),
                csv_field(&tok.decode_lossy(&trace.generated)),
            ));
        }
    }
    let path = dir.report("completions.csv");
    write_file(&path, &out)?;
    println!("wrote {} ({} prompts)", path.display(), cases.len());
    Ok(())
}

fn cmd_spec_bench(
    cfg: &RunConfig,
    src: &Path,
    checkpoint: Option<&Path>,
    mock: Option<MockKind>,
) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "spec-bench")?;
    let tok = cfg.tokenizer(&dir.vocab())?;
    let predictor: Box<dyn HeadPredictor> = match mock {
        Some(MockKind::AllAccept) => {
            Box::new(MockModel::all_accept(cfg.model.k_max, cfg.model_config().vocab)?)
        }
        Some(MockKind::NeverAccept) => {
            Box::new(MockModel::never_accept(cfg.model.k_max, cfg.model_config().vocab)?)
        }
        None => Box::new(load_model(cfg, &dir, checkpoint)?),
    };
    let cases = heldout_cases(cfg, tok.as_ref())?;
    let (greedy, speculative) =
        paired_traces(predictor.as_ref(), &cases, cfg.eval.gen_tokens, cfg.spec_k())?;

    let mut entries: Vec<(String, String, &GenerationTrace)> = Vec::new();
    for ((case, g), s) in cases.iter().zip(&greedy).zip(&speculative) {
        entries.push((case.id.clone(), "greedy".into(), g));
        entries.push((case.id.clone(), "speculative".into(), s));
    }
    write_file(&dir.report("specbench.csv"), &traces_to_csv(&entries))?;

    let report = speedup_report(&greedy, &speculative)?;
    let mut out = String::from("k_used,tokens,baseline_passes,speculative_passes,speedup");
    for i in 1..=report.k_used {
        out.push_str(&format!(",accept_share_head_{i}"));
    }
    out.push('\n');
    out.push_str(&format!(
        "{},{},{},{},{}",
        report.k_used, report.tokens, report.baseline_passes, report.speculative_passes, report.speedup
    ));
    for share in &report.accept_shares {
        out.push_str(&format!(",{share}"));
    }
    out.push('\n');
    write_file(&dir.report("speedup.csv"), &out)?;
    println!(
        "speedup {:.3} ({} baseline passes / {} speculative, k_used {})",
        report.speedup, report.baseline_passes, report.speculative_passes, report.k_used
    );
    Ok(())
}

fn cmd_eval_bpb(cfg: &RunConfig, src: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "eval-bpb")?;
    let tok = cfg.tokenizer(&dir.vocab())?;
    let model = load_model(cfg, &dir, checkpoint)?;
    if cfg.data.heldout.is_empty() {
        return Err(Error::invalid("data.heldout lists no inputs; eval-bpb needs held-out text"));
    }
    let docs = ingest(&cfg.data.heldout)?;
    let mut rows = Vec::with_capacity(docs.len() + 1);
    for doc in &docs {
        let value = bits_per_byte(&model, &[doc.text.as_str()], tok.as_ref())?;
        rows.push((sanitize_id(&doc.id), "bpb".to_string(), value));
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let overall = bits_per_byte(&model, &texts, tok.as_ref())?;
    rows.push(("ALL".to_string(), "bpb".to_string(), overall));
    write_file(&dir.report("bpb.csv"), &metrics_to_csv(&rows))?;
    println!("bits per byte {overall:.4} over {} documents", docs.len());
    Ok(())
}

fn cmd_eval_text(cfg: &RunConfig, src: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let dir = prepare_run_dir(cfg, src, "eval-text")?;
    let tok = cfg.tokenizer(&dir.vocab())?;
    let model = load_model(cfg, &dir, checkpoint)?;
    let cases = heldout_cases(cfg, tok.as_ref())?;

    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for case in &cases {
        let trace = greedy_generate(&model, &case.prompt_ids, cfg.eval.gen_tokens)?;
        let generated = tok.decode_lossy(&trace.generated);
        if cfg.eval.bleu {
            rows.push((case.id.clone(), "bleu".into(), bleu(&generated, &case.reference_text).score));
        }
        if cfg.eval.rouge {
            let r = rouge_l(&generated, &case.reference_text);
            rows.push((case.id.clone(), "rouge_l_precision".into(), r.precision));
            rows.push((case.id.clone(), "rouge_l_recall".into(), r.recall));
            rows.push((case.id.clone(), "rouge_l_f1".into(), r.f1));
        }
        if cfg.eval.ttr {
            match ttr(&generated) {
                Ok(v) => rows.push((case.id.clone(), "ttr".into(), v)),
                Err(_) => eprintln!("note: {} produced no word tokens; ttr skipped", case.id),
            }
        }
        if let Some(judge_cfg) = &cfg.eval.judge {
            #[cfg(feature = "judge")]
            {
                let verdict = crate::evaluate::judge::g_eval(
                    judge_cfg,
                    &case.prompt_text,
                    &generated,
                    &case.reference_text,
                )?;
                rows.push((case.id.clone(), "judge".into(), verdict.score));
                rows.push((
                    case.id.clone(),
                    "judge_weighted".into(),
                    if verdict.weighted { 1.0 } else { 0.0 },
                ));
            }
            #[cfg(not(feature = "judge"))]
            {
                let _ = judge_cfg;
                return Err(Error::invalid(
                    "eval.judge is configured but this binary was built without the `judge` feature",
                ));
            }
        }
    }
    write_file(&dir.report("text_metrics.csv"), &metrics_to_csv(&rows))?;

    let fingerprint = cfg.fingerprint();
    for metric in ["bleu", "rouge_l_f1", "ttr", "judge"] {
        let values: Vec<f64> =
            rows.iter().filter(|(_, m, _)| m == metric).map(|&(_, _, v)| v).collect();
        if let Ok(report) = MetricReport::mean_of(metric, &values, fingerprint.as_str()) {
            println!("{}: mean {:.4} over {} samples", report.metric, report.value, report.samples);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Split an unquoted CSV document into header and rows. Only used on the
/// numeric/key-value CSVs this tool writes itself.
fn parse_csv(text: &str) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next()?.split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Some((header, rows))
}

fn csv_column(header: &[String], rows: &[Vec<String>], name: &str) -> Option<Vec<String>> {
    let idx = header.iter().position(|h| h == name)?;
    Some(rows.iter().filter_map(|r| r.get(idx).cloned()).collect())
}

/// Everything `report` extracts from one run directory.
struct RunSummary {
    name: String,
    meta: HashMap<String, String>,
    final_loss: Option<f64>,
    bpb: Option<f64>,
    speedup: Option<f64>,
    text_means: HashMap<String, f64>,
}

fn summarize_run(dir: &Path) -> Result<RunSummary> {
    let meta_path = dir.join("reports").join("run_meta.csv");
    let meta_text = read_file(&meta_path).map_err(|_| {
        Error::invalid(format!("{} is not a run directory (missing reports/run_meta.csv)", dir.display()))
    })?;
    let mut meta = HashMap::new();
    if let Some((_, rows)) = parse_csv(&meta_text) {
        for row in rows {
            if row.len() == 2 {
                meta.insert(row[0].clone(), row[1].clone());
            }
        }
    }

    let final_loss = read_file(&dir.join("logs").join("train.csv")).ok().and_then(|text| {
        let (header, rows) = parse_csv(&text)?;
        csv_column(&header, &rows, "loss")?.last()?.parse().ok()
    });

    let bpb = read_file(&dir.join("reports").join("bpb.csv")).ok().and_then(|text| {
        let (header, rows) = parse_csv(&text)?;
        let ids = csv_column(&header, &rows, "sample_id")?;
        let values = csv_column(&header, &rows, "value")?;
        let idx = ids.iter().position(|id| id == "ALL")?;
        values.get(idx)?.parse().ok()
    });

    let speedup = read_file(&dir.join("reports").join("speedup.csv")).ok().and_then(|text| {
        let (header, rows) = parse_csv(&text)?;
        csv_column(&header, &rows, "speedup")?.first()?.parse().ok()
    });

    let mut text_means = HashMap::new();
    if let Ok(text) = read_file(&dir.join("reports").join("text_metrics.csv")) {
        if let Some((header, rows)) = parse_csv(&text) {
            if let (Some(metrics), Some(values)) =
                (csv_column(&header, &rows, "metric"), csv_column(&header, &rows, "value"))
            {
                let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
                for (m, v) in metrics.iter().zip(&values) {
                    if let Ok(v) = v.parse::<f64>() {
                        let e = sums.entry(m.clone()).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                }
                for (m, (sum, n)) in sums {
                    text_means.insert(m, sum / n as f64);
                }
            }
        }
    }

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunSummary { name, meta, final_loss, bpb, speedup, text_means })
}

/// Columns of the comparison table; `relative` marks values that also get a
/// percent-vs-baseline column.
const REPORT_COLUMNS: [(&str, bool); 6] = [
    ("final_loss", true),
    ("bpb", true),
    ("speedup", false),
    ("bleu", false),
    ("rouge_l_f1", false),
    ("ttr", false),
];

fn report_value(summary: &RunSummary, column: &str) -> Option<f64> {
    match column {
        "final_loss" => summary.final_loss,
        "bpb" => summary.bpb,
        "speedup" => summary.speedup,
        other => summary.text_means.get(other).copied(),
    }
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let summaries: Vec<RunSummary> = runs.iter().map(|d| summarize_run(d)).collect::<Result<_>>()?;
    let baseline = &summaries[0];

    let meta_cols = ["tokenizer", "k_max", "head_kind", "curriculum", "seed"];
    let mut header: Vec<String> = Vec::new();
    header.push("run".into());
    header.extend(meta_cols.iter().map(|s| s.to_string()));
    for (col, relative) in REPORT_COLUMNS {
        header.push(col.to_string());
        if relative {
            header.push(format!("{col}_vs_base"));
        }
    }

    let mut table: Vec<Vec<String>> = Vec::new();
    for summary in &summaries {
        let mut row = vec![summary.name.clone()];
        for key in meta_cols {
            row.push(summary.meta.get(key).cloned().unwrap_or_default());
        }
        for (col, relative) in REPORT_COLUMNS {
            let value = report_value(summary, col);
            row.push(value.map(|v| format!("{v:.4}")).unwrap_or_default());
            if relative {
                let cell = match (value, report_value(baseline, col)) {
                    (Some(v), Some(b)) if b != 0.0 => format!("{:+.2}%", 100.0 * (v - b) / b),
                    _ => String::new(),
                };
                row.push(cell);
            }
        }
        table.push(row);
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut csv = header.join(",");
    csv.push('\n');
    for row in &table {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&out.join("report.csv"), &csv)?;

    let mut md = String::from("# Run comparison\n\n");
    md.push_str(&format!(
        "Relative columns are percentages against the baseline run `{}`.\n\n",
        baseline.name
    ));
    md.push_str(&format!("| {} |\n", header.join(" | ")));
    md.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for row in &table {
        let cells: Vec<String> =
            row.iter().map(|c| if c.is_empty() { "—".to_string() } else { c.clone() }).collect();
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    write_file(&out.join("report.md"), &md)?;
    println!("wrote {} and report.csv ({} runs)", out.join("report.md").display(), summaries.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::ByteTokenizer;

    #[test]
    fn csv_field_quotes_only_when_needed() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("line\nbreak"), "\"line\nbreak\"");
    }

    #[test]
    fn latest_checkpoint_picks_highest_step() {
        let dir = tempfile::tempdir().unwrap();
        assert!(find_latest_checkpoint(dir.path()).unwrap().is_none());
        for name in ["step5.ckpt", "step40.ckpt", "step9.ckpt", "emergency-step50.ckpt", "junk"] {
            fs::write(dir.path().join(name), b"x").unwrap();
        }
        let (step, path) = find_latest_checkpoint(dir.path()).unwrap().unwrap();
        assert_eq!(step, 40);
        assert!(path.ends_with("step40.ckpt"));
    }

    #[test]
    fn heldout_windows_are_deterministic_and_bos_framed() {
        let dir = tempfile::tempdir().unwrap();
        let heldout = dir.path().join("held.txt");
        fs::write(&heldout, "abcdefghijklmnopqrstuvwxyz").unwrap();
        let doc = r#"
            [data]
            corpus = ["unused.txt"]
            heldout = ["HELD"]
            tokenizer = "byte"
            context = 64

            [model]
            hidden = 32
            layers = 2
            heads = 2
            k_max = 2

            [train]
            batch_size = 4
            total_steps = 12
            seed = 7

            [eval]
            n_prompts = 3
            prompt_tokens = 4
            gen_tokens = 3

            [output]
            dir = "unused"
        "#
        .replace("HELD", heldout.to_str().unwrap());
        let cfg: RunConfig = toml::from_str(&doc).unwrap();
        cfg.validate().unwrap();
        let cases = heldout_cases(&cfg, &ByteTokenizer::new()).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[0].id, "p000");
        assert_eq!(cases[0].prompt_text, "abcd");
        assert_eq!(cases[0].reference_text, "efg");
        assert_eq!(cases[1].prompt_text, "hijk");
        let bos = ByteTokenizer::new().bos_id();
        assert_eq!(cases[0].prompt_ids[0], bos);
        assert_eq!(cases[0].prompt_ids.len(), 5);
    }

    #[test]
    fn run_meta_lists_the_grouping_keys() {
        let doc = r#"
            [data]
            corpus = ["c.txt"]
            tokenizer = "byte"
            context = 64

            [model]
            hidden = 32
            layers = 2
            heads = 2
            k_max = 4

            [train]
            batch_size = 4
            total_steps = 12
            seed = 9
            curriculum = "forward"

            [output]
            dir = "x"
        "#;
        let cfg: RunConfig = toml::from_str(doc).unwrap();
        let meta = run_meta_csv(&cfg);
        for line in ["tokenizer,byte", "k_max,4", "head_kind,LL", "curriculum,forward", "seed,9"] {
            assert!(meta.contains(line), "missing {line} in:\n{meta}");
        }
    }
}
