//! Multi-token training: curriculum-masked loss, AdamW with warmup + cosine
//! decay, gradient clipping, and a deterministic step loop.
//!
//! The total loss is the sum over active heads of each head's mean
//! cross-entropy over its unmasked positions; per-head losses are logged so
//! other normalizations can be reconstructed from the run log. Heads beyond
//! the active count are fully frozen: no gradient, no moment update, and no
//! weight decay, so a later curriculum phase (or post-hoc analysis) sees
//! them exactly as the previous phase left them.
//!
//! Determinism: batch order for epoch `e` comes from a stream derived from
//! the run seed and the literal epoch number, so resuming from a checkpoint
//! needs no replay of consumed random state — the same step always sees the
//! same batch.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CKPT_MAGIC, CKPT_VERSION};

use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumMode, CurriculumSpec};
use crate::datapack::{make_batches, PackedRow};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Graph, NodeId, Rng, Scalar, Tensor};

fn default_peak_lr() -> f64 {
    2e-4
}
fn default_warmup_frac() -> f64 {
    0.1
}
fn default_final_lr_frac() -> f64 {
    0.1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_weight_decay() -> f64 {
    0.1
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    #[serde(default = "default_final_lr_frac")]
    pub final_lr_frac: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub curriculum: CurriculumMode,
    /// Checkpoint every N steps (0 = only on demand / at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(format!("train config: {msg}")));
        if !(self.peak_lr > 0.0) {
            return err("peak_lr must be positive".into());
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return err(format!("warmup_frac {} must lie in (0, 1)", self.warmup_frac));
        }
        if !(self.final_lr_frac > 0.0 && self.final_lr_frac <= 1.0) {
            return err(format!("final_lr_frac {} must lie in (0, 1]", self.final_lr_frac));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= 0.0 && b < 1.0) {
                return err(format!("{name} {b} must lie in [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return err("weight_decay must be non-negative".into());
        }
        if !(self.clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return err("clip_norm and adam_eps must be positive".into());
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return err("batch_size and total_steps must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate at step `s` of `cfg.total_steps`: linear warmup over
/// `round(warmup_frac·S)` steps from zero to the peak, then cosine decay to
/// `final_lr_frac` of the peak at step S.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    let s = step as f64;
    let total = cfg.total_steps as f64;
    let w = (cfg.warmup_frac * total).round();
    if s < w {
        return cfg.peak_lr * s / w;
    }
    let progress = if total > w { (s - w) / (total - w) } else { 1.0 };
    let floor = cfg.final_lr_frac;
    cfg.peak_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Rescales all gradients in place so their global L2 norm does not exceed
/// `max_norm`; returns the observed (pre-clip) norm. `None` entries belong
/// to frozen parameters and are skipped.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        g.check_finite("clip_grad_norm")?;
        sq += g.sq_norm_f64();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for x in g.make_mut() {
                *x *= scale;
            }
        }
    }
    Ok(norm)
}

/// First/second Adam moments per model parameter, plus per-parameter update
/// counts so a head activated mid-run gets correct bias correction from its
/// own first step.
pub struct OptimizerState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub counts: Vec<u64>,
    /// Number of optimizer steps taken (counts every call, frozen or not).
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros: Vec<Tensor<T>> =
            (0..model.n_params_tensors()).map(|i| Tensor::zeros(model.param_at(i).shape())).collect();
        OptimizerState { m: zeros.clone(), v: zeros, counts: vec![0; model.n_params_tensors()], step: 0 }
    }
}

/// One AdamW update for a single tensor: bias-corrected moment estimates,
/// epsilon outside the square root, and decoupled weight decay.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grad.shape() != param.shape() {
        return Err(Error::Shape {
            op: "adamw",
            detail: format!("grad shape {:?} vs param {:?}", grad.shape(), param.shape()),
        });
    }
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.adam_eps);
    let wd = T::from_f64(cfg.weight_decay);
    let (pm, mm, vm) = (param.make_mut(), m.make_mut(), v.make_mut());
    for ((p, g), (mi, vi)) in pm.iter_mut().zip(grad.data()).zip(mm.iter_mut().zip(vm.iter_mut())) {
        *mi = b1 * *mi + (one - b1) * *g;
        *vi = b2 * *vi + (one - b2) * *g * *g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p = *p - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

/// Applies AdamW across the whole model. Parameters whose gradient slot is
/// `None` are left completely untouched — value, moments, and count.
pub fn adamw_step<T: Scalar>(
    model: &mut Model<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != model.n_params_tensors() {
        return Err(Error::invalid(format!(
            "adamw: {} gradient slots for {} parameters",
            grads.len(),
            model.n_params_tensors()
        )));
    }
    state.step += 1;
    for (i, grad) in grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        state.counts[i] += 1;
        adamw_update(
            model.param_at_mut(i),
            grad,
            &mut state.m[i],
            &mut state.v[i],
            state.counts[i],
            lr,
            cfg,
        )?;
    }
    Ok(())
}

/// Loss nodes for one batch: `total` is the scalar to backprop, `per_head`
/// holds each active head's mean cross-entropy (index 0 = head 1).
#[derive(Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub per_head: Vec<NodeId>,
}

/// Builds the multi-token loss over a batch of packed rows. Head i scores
/// the token i positions ahead; positions whose target falls outside the
/// row, inside padding, or across a segment boundary are masked out.
pub fn mtp_loss<T: Scalar>(
    g: &mut Graph<T>,
    head_logits: &[NodeId],
    rows: &[&PackedRow],
    active_k: usize,
) -> Result<LossNodes> {
    if head_logits.len() != active_k || active_k == 0 {
        return Err(Error::invalid(format!(
            "mtp_loss: got {} head logit nodes for active_k {active_k}",
            head_logits.len()
        )));
    }
    let Some(first) = rows.first() else {
        return Err(Error::invalid("mtp_loss: empty batch"));
    };
    let c = first.tokens.len();
    if rows.iter().any(|r| r.tokens.len() != c) {
        return Err(Error::invalid("mtp_loss: rows of unequal length"));
    }
    let mut per_head = Vec::with_capacity(active_k);
    for head in 1..=active_k {
        let mut targets = Vec::with_capacity(rows.len() * c);
        let mut mask = Vec::with_capacity(rows.len() * c);
        for row in rows {
            let row_mask = row.loss_mask(head);
            for t in 0..c {
                targets.push(if t + head < c { row.tokens[t + head] } else { 0 });
                mask.push(row_mask[t]);
            }
        }
        let ce = g
            .cross_entropy(head_logits[head - 1], &targets, Some(&mask))
            .map_err(|e| Error::invalid(format!("mtp_loss head {head}: {e}")))?;
        per_head.push(ce);
    }
    let mut total = per_head[0];
    for &h in &per_head[1..] {
        total = g.add(total, h)?;
    }
    Ok(LossNodes { total, per_head })
}

/// One training step's log line. `head_losses` has one slot per head up to
/// k_max; inactive heads are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub active_k: usize,
    pub loss: f64,
    pub head_losses: Vec<Option<f64>>,
}

/// Header line (with trailing newline) of the loss CSV: one `loss_head_i`
/// column per head up to k_max.
pub fn loss_csv_header(k_max: usize) -> String {
    let mut out = String::from("step,lr,active_k,loss");
    for i in 1..=k_max {
        out.push_str(&format!(",loss_head_{i}"));
    }
    out.push('\n');
    out
}

/// One record as a loss-CSV line (with trailing newline); inactive heads
/// leave their cell empty. Floats use shortest round-trip formatting, so
/// logs from identical runs compare byte-for-byte.
pub fn loss_csv_row(r: &StepRecord, k_max: usize) -> String {
    let mut out = format!("{},{},{},{}", r.step, r.lr, r.active_k, r.loss);
    for h in 0..k_max {
        match r.head_losses.get(h).copied().flatten() {
            Some(v) => out.push_str(&format!(",{v}")),
            None => out.push(','),
        }
    }
    out.push('\n');
    out
}

/// Renders step records as one CSV document; see [`loss_csv_row`].
pub fn records_to_csv(records: &[StepRecord], k_max: usize) -> String {
    let mut out = loss_csv_header(k_max);
    for r in records {
        out.push_str(&loss_csv_row(r, k_max));
    }
    out
}

/// Owns the model and optimizer through a training run; one instance is one
/// logical training thread.
pub struct Trainer<T: Scalar> {
    model: Model<T>,
    opt: OptimizerState<T>,
    cfg: TrainConfig,
    curriculum: CurriculumSpec,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        let opt = OptimizerState::new(&model);
        Self::with_state(model, cfg, opt, 0)
    }

    /// Resumes from explicit state (checkpoint loading goes through here).
    pub fn with_state(
        model: Model<T>,
        cfg: TrainConfig,
        opt: OptimizerState<T>,
        step: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let curriculum = CurriculumSpec::new(cfg.curriculum, model.config().k_max, cfg.total_steps)?;
        let n = model.n_params_tensors();
        if opt.m.len() != n || opt.v.len() != n || opt.counts.len() != n {
            return Err(Error::invalid("optimizer state does not match model parameters"));
        }
        for i in 0..n {
            if opt.m[i].shape() != model.param_at(i).shape()
                || opt.v[i].shape() != model.param_at(i).shape()
            {
                return Err(Error::invalid(format!(
                    "optimizer moment shape mismatch for {}",
                    model.param_names()[i]
                )));
            }
        }
        if step > cfg.total_steps {
            return Err(Error::invalid(format!(
                "resume step {step} beyond total_steps {}",
                cfg.total_steps
            )));
        }
        Ok(Trainer { model, opt, cfg, curriculum, step })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    /// Consumes the trainer, returning the trained model.
    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<T> {
        &mut self.model
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.opt
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn completed_steps(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Runs one optimization step on the deterministic batch for the current
    /// step index. On error the model and optimizer are untouched, so the
    /// caller can still checkpoint the last good state.
    pub fn step_once(&mut self, rows: &[PackedRow]) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::invalid("training already complete"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("no training rows"));
        }
        let n_batches = rows.len().div_ceil(self.cfg.batch_size);
        let epoch = self.step / n_batches;
        let mut epoch_rng = Rng::new(self.cfg.seed).derive(&format!("data.epoch.{epoch}"));
        let batches = make_batches(rows, self.cfg.batch_size, &mut epoch_rng)?;
        let batch = &batches[self.step % n_batches];

        let seq = batch[0].tokens.len();
        let ids: Vec<u32> = batch.iter().flat_map(|r| r.tokens.iter().copied()).collect();
        let active_k = self.curriculum.active_heads(self.step)?;

        let mut g = Graph::new();
        let fwd = self.model.forward_graph(&mut g, &ids, batch.len(), seq, active_k)?;
        let loss = mtp_loss(&mut g, &fwd.head_logits, batch, active_k)?;
        let mut grads = g.backward(loss.total)?;

        let mut slots: Vec<Option<Tensor<T>>> = vec![None; self.model.n_params_tensors()];
        for &(idx, node) in &fwd.param_nodes {
            slots[idx] = grads.take(node);
        }
        clip_grad_norm(&mut slots, self.cfg.clip_norm)?;
        let lr = lr_at(&self.cfg, self.step);
        adamw_step(&mut self.model, &slots, &mut self.opt, lr, &self.cfg)?;

        let mut head_losses = vec![None; self.model.config().k_max];
        for (i, &node) in loss.per_head.iter().enumerate() {
            head_losses[i] = Some(g.value(node).item()?.as_f64());
        }
        let record = StepRecord {
            step: self.step,
            lr,
            active_k,
            loss: g.value(loss.total).item()?.as_f64(),
            head_losses,
        };
        self.step += 1;
        Ok(record)
    }

    /// Steps until `total_steps`, invoking `on_step` after each step.
    pub fn run(
        &mut self,
        rows: &[PackedRow],
        mut on_step: impl FnMut(&StepRecord, &Trainer<T>) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(self.cfg.total_steps - self.step);
        while !self.is_done() {
            let record = self.step_once(rows)?;
            records.push(record);
            on_step(records.last().unwrap(), self)?;
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapack::Segment;
    use crate::model::{HeadKind, ModelConfig};

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            peak_lr: 2e-4,
            warmup_frac: 0.1,
            final_lr_frac: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            clip_norm: 1.0,
            adam_eps: 1e-8,
            batch_size: 2,
            total_steps: steps,
            seed: 9,
            curriculum: CurriculumMode::None,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = cfg(100);
        assert_eq!(lr_at(&c, 0), 0.0);
        assert!((lr_at(&c, 10) - 2e-4).abs() < 1e-18, "peak at end of warmup");
        assert!((lr_at(&c, 100) - 2e-5).abs() < 1e-12, "decays to a tenth of peak");
    }

    #[test]
    fn lr_schedule_shape() {
        let c = cfg(100);
        for s in 0..10 {
            assert!(lr_at(&c, s) < lr_at(&c, s + 1), "warmup rises at {s}");
        }
        for s in 10..100 {
            assert!(lr_at(&c, s) > lr_at(&c, s + 1), "decay falls at {s}");
        }
        // Continuity at the warmup boundary: the last warmup increment is
        // about peak/w, the first decay decrement about peak/(S-w)².
        assert!((lr_at(&c, 10) - lr_at(&c, 9)).abs() < 2.1e-5);
    }

    #[test]
    fn clip_halves_oversized_gradients() {
        let mut grads = vec![
            Some(Tensor::from_vec(&[2], vec![2.0f64, 0.0]).unwrap()),
            None,
            Some(Tensor::from_vec(&[1], vec![0.0f64]).unwrap()),
        ];
        let norm = clip_grad_norm(&mut grads, 1.0).unwrap();
        assert_eq!(norm, 2.0);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn clip_leaves_small_and_zero_gradients_alone() {
        let mut grads = vec![Some(Tensor::from_vec(&[2], vec![0.3f64, 0.4]).unwrap())];
        let norm = clip_grad_norm(&mut grads, 1.0).unwrap();
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[0.3, 0.4]);

        let mut zeros = vec![Some(Tensor::<f64>::zeros(&[3]))];
        assert_eq!(clip_grad_norm(&mut zeros, 1.0).unwrap(), 0.0);
        assert_eq!(zeros[0].as_ref().unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn clip_rejects_non_finite() {
        let mut grads = vec![Some(Tensor::from_vec(&[1], vec![f64::NAN]).unwrap())];
        assert!(clip_grad_norm(&mut grads, 1.0).is_err());
    }

    #[test]
    fn adamw_first_step_hand_computed() {
        let c = TrainConfig { weight_decay: 0.0, ..cfg(10) };
        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let mut m = Tensor::zeros(&[1]);
        let mut v = Tensor::zeros(&[1]);
        adamw_update(&mut p, &g, &mut m, &mut v, 1, 0.1, &c).unwrap();
        // mhat = vhat = 1 after bias correction, so p = 1 - 0.1/(1 + eps).
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((m.data()[0] - 0.1).abs() < 1e-15);
        assert!((v.data()[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn adamw_identical_inputs_identical_updates() {
        let c = cfg(10);
        let mk = || Tensor::from_vec(&[2], vec![0.5f32, -1.5]).unwrap();
        let (mut p1, mut p2) = (mk(), mk());
        let g = Tensor::from_vec(&[2], vec![0.1f32, 0.2]).unwrap();
        let (mut m1, mut v1) = (Tensor::zeros(&[2]), Tensor::zeros(&[2]));
        let (mut m2, mut v2) = (Tensor::zeros(&[2]), Tensor::zeros(&[2]));
        adamw_update(&mut p1, &g, &mut m1, &mut v1, 1, 1e-3, &c).unwrap();
        adamw_update(&mut p2, &g, &mut m2, &mut v2, 1, 1e-3, &c).unwrap();
        assert!(p1.bitwise_eq(&p2));
    }

    #[test]
    fn adamw_shape_mismatch_is_an_error() {
        let c = cfg(10);
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::<f64>::zeros(&[3]);
        let (mut m, mut v) = (Tensor::zeros(&[2]), Tensor::zeros(&[2]));
        assert!(adamw_update(&mut p, &g, &mut m, &mut v, 1, 0.1, &c).is_err());
    }

    fn model(k_max: usize, seed: u64) -> Model<f32> {
        let mc = ModelConfig {
            vocab: 40,
            hidden: 16,
            layers: 1,
            heads: 2,
            context: 8,
            k_max,
            head_kind: HeadKind::Linear,
            rope_base: 10_000.0,
            rms_eps: 1e-5,
            mlp_hidden: None,
        };
        Model::init(mc, seed).unwrap()
    }

    fn rows(n: usize, c: usize) -> Vec<PackedRow> {
        (0..n)
            .map(|i| PackedRow {
                tokens: (0..c).map(|t| ((i * 13 + t * 5 + 2) % 40) as u32).collect(),
                segments: vec![Segment { start: 0, end: c, doc: format!("doc{i}") }],
                pad: 0,
            })
            .collect()
    }

    #[test]
    fn mtp_loss_single_head_is_plain_cross_entropy() {
        let rs = rows(2, 8);
        let refs: Vec<&PackedRow> = rs.iter().collect();
        let m = model(1, 1);
        let mut g = Graph::new();
        let ids: Vec<u32> = refs.iter().flat_map(|r| r.tokens.clone()).collect();
        let fwd = m.forward_graph(&mut g, &ids, 2, 8, 1).unwrap();
        let loss = mtp_loss(&mut g, &fwd.head_logits, &refs, 1).unwrap();
        assert_eq!(loss.per_head.len(), 1);
        assert_eq!(g.value(loss.total).item().unwrap(), g.value(loss.per_head[0]).item().unwrap());
    }

    #[test]
    fn mtp_loss_uniform_logits_hit_ln_v() {
        let v = 40usize;
        let rs = rows(1, 8);
        let refs: Vec<&PackedRow> = rs.iter().collect();
        let mut g = Graph::<f64>::new();
        let logits: Vec<NodeId> =
            (0..3).map(|_| g.leaf(Tensor::zeros(&[8, v]), false)).collect();
        let loss = mtp_loss(&mut g, &logits, &refs, 3).unwrap();
        let ln_v = (v as f64).ln();
        for &h in &loss.per_head {
            assert!((g.value(h).item().unwrap() - ln_v).abs() < 1e-12);
        }
        assert!((g.value(loss.total).item().unwrap() - 3.0 * ln_v).abs() < 1e-12);
    }

    #[test]
    fn mask_matches_brute_force_per_head() {
        // Two segments and a padded tail; position t is live for head i
        // exactly when t and t+i sit inside the same segment.
        let row = PackedRow {
            tokens: (0..10).map(|t| t as u32 % 40).collect(),
            segments: vec![
                Segment { start: 0, end: 5, doc: "a".into() },
                Segment { start: 5, end: 8, doc: "b".into() },
            ],
            pad: 2,
        };
        for head in 1..=4usize {
            let mask = row.loss_mask(head);
            for t in 0..10 {
                let expect = row
                    .segments
                    .iter()
                    .any(|s| t >= s.start && t < s.end && t + head >= s.start && t + head < s.end);
                assert_eq!(mask[t], expect, "head {head} position {t}");
            }
        }
    }

    #[test]
    fn mtp_loss_errors_when_a_head_has_no_targets() {
        // A 4-token segment gives head 3 exactly one target; a 3-token
        // segment gives it none, which must be reported, not averaged away.
        let row = PackedRow {
            tokens: vec![1, 2, 3, 0],
            segments: vec![Segment { start: 0, end: 3, doc: "a".into() }],
            pad: 1,
        };
        let refs = [&row];
        let mut g = Graph::<f64>::new();
        let logits: Vec<NodeId> =
            (0..3).map(|_| g.leaf(Tensor::zeros(&[4, 40]), false)).collect();
        let err = mtp_loss(&mut g, &logits, &refs, 3).unwrap_err();
        assert!(err.to_string().contains("head 3"), "unexpected error: {err}");
    }

    #[test]
    fn same_seed_runs_are_bitwise_identical() {
        let data = rows(5, 8);
        let run = || {
            let mut t = Trainer::new(model(2, 3), cfg(6)).unwrap();
            let records = t.run(&data, |_, _| Ok(())).unwrap();
            (records, t)
        };
        let (ra, ta) = run();
        let (rb, tb) = run();
        assert_eq!(ra.len(), 6);
        for (a, b) in ra.iter().zip(&rb) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "loss at step {}", a.step);
            assert_eq!(a.lr.to_bits(), b.lr.to_bits());
            assert_eq!(a.head_losses, b.head_losses);
        }
        for ((n, pa), (_, pb)) in ta.model().params().zip(tb.model().params()) {
            assert!(pa.bitwise_eq(pb), "{n} differs between same-seed runs");
        }
    }

    #[test]
    fn inactive_heads_stay_frozen_through_phases() {
        // Forward curriculum, k_max=3, S=9: heads 2 and 3 sleep until steps
        // 3 and 6. Their parameters and moments must not move before that.
        let data = rows(4, 8);
        let c = TrainConfig { curriculum: CurriculumMode::Forward, ..cfg(9) };
        let mut t = Trainer::new(model(3, 5), c).unwrap();
        let h2_init = t.model().param("head.2.weight").unwrap().clone();
        let h3_init = t.model().param("head.3.weight").unwrap().clone();
        for step in 0..9 {
            let rec = t.step_once(&data).unwrap();
            let h2 = t.model().param("head.2.weight").unwrap();
            let h3 = t.model().param("head.3.weight").unwrap();
            if step < 3 {
                assert_eq!(rec.active_k, 1);
                assert!(h2.bitwise_eq(&h2_init), "head 2 moved in phase 1");
            } else if step == 3 {
                assert_eq!(rec.active_k, 2);
                assert!(!h2.bitwise_eq(&h2_init), "head 2 should train in phase 2");
            }
            if step < 6 {
                assert!(h3.bitwise_eq(&h3_init), "head 3 moved before phase 3");
            } else if step == 6 {
                assert_eq!(rec.active_k, 3);
                assert!(!h3.bitwise_eq(&h3_init));
            }
        }
        let idx =
            t.model().param_names().iter().position(|n| n == "head.3.weight").unwrap();
        assert!(t.optimizer().counts[idx] < 9, "head 3 must have skipped steps");
    }

    #[test]
    fn forward_phase_one_matches_ntp_run() {
        // While only head 1 is active, a forward-curriculum MTP run is the
        // same computation as a plain NTP run with the same seed.
        let data = rows(4, 8);
        let c3 = TrainConfig { curriculum: CurriculumMode::Forward, ..cfg(9) };
        let c1 = TrainConfig { curriculum: CurriculumMode::None, ..cfg(9) };
        let mut mtp = Trainer::new(model(3, 5), c3).unwrap();
        let mut ntp = Trainer::new(model(1, 5), c1).unwrap();
        for step in 0..3 {
            let a = mtp.step_once(&data).unwrap();
            let b = ntp.step_once(&data).unwrap();
            assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "phase-1 loss differs at {step}");
        }
        let a = mtp.step_once(&data).unwrap();
        let b = ntp.step_once(&data).unwrap();
        assert_ne!(a.loss.to_bits(), b.loss.to_bits(), "phase 2 adds head 2");
    }

    #[test]
    fn loss_decreases_on_repetitive_data() {
        let data = rows(4, 8);
        let mut t = Trainer::new(model(2, 7), TrainConfig { peak_lr: 3e-3, ..cfg(30) }).unwrap();
        let records = t.run(&data, |_, _| Ok(())).unwrap();
        let first = records.first().unwrap().loss;
        let last = records.last().unwrap().loss;
        assert!(last < first, "loss should fall on tiny repetitive data: {first} -> {last}");
    }

    #[test]
    fn non_finite_forward_keeps_state_intact() {
        let data = rows(4, 8);
        let mut t = Trainer::new(model(2, 3), cfg(6)).unwrap();
        t.step_once(&data).unwrap();
        let before: Vec<Tensor<f32>> =
            (0..t.model().n_params_tensors()).map(|i| t.model().param_at(i).clone()).collect();
        // Poison a weight every forward pass reads.
        let poisoned =
            t.model().param_names().iter().position(|n| n == "final_norm.weight").unwrap();
        t.model_mut().param_at_mut(poisoned).make_mut()[0] = f32::INFINITY;
        let err = t.step_once(&data).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "got {err}");
        assert_eq!(t.completed_steps(), 1, "failed step must not count");
        for (i, b) in before.iter().enumerate() {
            if i != poisoned {
                assert!(t.model().param_at(i).bitwise_eq(b), "param {i} changed on failed step");
            }
        }
    }

    #[test]
    fn csv_layout_and_empty_cells() {
        let records = vec![
            StepRecord {
                step: 0,
                lr: 0.0,
                active_k: 1,
                loss: 3.5,
                head_losses: vec![Some(3.5), None, None],
            },
            StepRecord {
                step: 1,
                lr: 2e-4,
                active_k: 3,
                loss: 9.0,
                head_losses: vec![Some(3.0), Some(3.0), Some(3.0)],
            },
        ];
        let csv = records_to_csv(&records, 3);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,lr,active_k,loss,loss_head_1,loss_head_2,loss_head_3");
        assert_eq!(lines[1], "0,0,1,3.5,3.5,,");
        assert_eq!(lines[2], "1,0.0002,3,9,3,3,3");
    }

    #[test]
    fn config_validation_rejects_bad_rates() {
        assert!(cfg(10).validate().is_ok());
        assert!(TrainConfig { warmup_frac: 0.0, ..cfg(10) }.validate().is_err());
        assert!(TrainConfig { warmup_frac: 1.0, ..cfg(10) }.validate().is_err());
        assert!(TrainConfig { peak_lr: 0.0, ..cfg(10) }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..cfg(10) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg(10) }.validate().is_err());
        assert!(TrainConfig { total_steps: 0, ..cfg(10) }.validate().is_err());
    }
}
