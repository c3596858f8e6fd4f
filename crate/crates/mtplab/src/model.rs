//! Decoder-only transformer with k_max prediction heads.
//!
//! The trunk is a standard pre-norm block stack (RMS-norm, RoPE, causal
//! attention, SwiGLU, no biases, untied unembedding). Heads come in two
//! forms: `LL` adds k_max−1 extra d×V projections beside the standard
//! unembedding; `TL` dedicates the last k_max of the configured layers as
//! parallel per-head blocks behind a shorter shared trunk, all feeding one
//! shared final norm and unembedding. Head i at position t scores the token
//! i positions ahead.
//!
//! Initialization draws each parameter from its own seeded stream keyed by
//! parameter name, so shared parameters are bitwise identical across model
//! variants that differ only in head count.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Extra linear output layers beside the standard unembedding.
    #[serde(rename = "LL")]
    Linear,
    /// Parallel single transformer blocks, one per head, after the trunk.
    #[serde(rename = "TL")]
    TransformerLayer,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Linear => "LL",
            HeadKind::TransformerLayer => "TL",
        })
    }
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_rms_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output vocabulary size (padded tokenizer table).
    pub vocab: usize,
    /// Residual width d.
    pub hidden: usize,
    /// Total layer budget l. For TL, k_max of these become head blocks.
    pub layers: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Context window C.
    pub context: usize,
    /// Number of prediction heads.
    pub k_max: usize,
    pub head_kind: HeadKind,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_rms_eps")]
    pub rms_eps: f64,
    /// SwiGLU inner width; defaults to 8d/3 rounded up to a multiple of 8.
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Invalid(format!("model config: {msg}")));
        if self.vocab < 2 {
            return err(format!("vocab {} too small", self.vocab));
        }
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return err("hidden, layers, and heads must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return err(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if (self.hidden / self.heads) % 2 != 0 {
            return err(format!(
                "head dim {} must be even for rotary embeddings",
                self.hidden / self.heads
            ));
        }
        if self.k_max < 1 {
            return err("k_max must be at least 1".into());
        }
        if self.context < 2 {
            return err(format!("context {} must be at least 2", self.context));
        }
        if self.head_kind == HeadKind::TransformerLayer && self.layers <= self.k_max {
            return err(format!(
                "TL heads need layers > k_max, got layers {} with k_max {}",
                self.layers, self.k_max
            ));
        }
        if self.mlp_hidden == Some(0) {
            return err("mlp_hidden must be positive".into());
        }
        if !(self.rope_base > 1.0) || !(self.rms_eps > 0.0) {
            return err("rope_base must exceed 1 and rms_eps must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or_else(|| (8 * self.hidden).div_ceil(3).div_ceil(8) * 8)
    }

    /// Blocks in the shared trunk (TL reserves k_max layers for heads).
    pub fn trunk_layers(&self) -> usize {
        match self.head_kind {
            HeadKind::Linear => self.layers,
            HeadKind::TransformerLayer => self.layers - self.k_max,
        }
    }
}

/// Parameter names and shapes fully determine the model structure; this is
/// the single source of truth used by init, checkpoint loading, and counts.
fn expected_params(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, d, f) = (config.vocab, config.hidden, config.mlp_hidden());
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let block = |prefix: &str, out: &mut Vec<(String, Vec<usize>)>| {
        out.push((format!("{prefix}attn_norm.weight"), vec![d]));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}attn.{w}"), vec![d, d]));
        }
        out.push((format!("{prefix}mlp_norm.weight"), vec![d]));
        out.push((format!("{prefix}mlp.w_gate"), vec![d, f]));
        out.push((format!("{prefix}mlp.w_up"), vec![d, f]));
        out.push((format!("{prefix}mlp.w_down"), vec![f, d]));
    };
    out.push(("embed.weight".into(), vec![v, d]));
    for i in 0..config.trunk_layers() {
        block(&format!("trunk.{i}."), &mut out);
    }
    if config.head_kind == HeadKind::TransformerLayer {
        for i in 1..=config.k_max {
            block(&format!("head.{i}.block."), &mut out);
        }
    }
    out.push(("final_norm.weight".into(), vec![d]));
    out.push(("unembed.weight".into(), vec![d, v]));
    if config.head_kind == HeadKind::Linear {
        for i in 2..=config.k_max {
            out.push((format!("head.{i}.weight"), vec![d, v]));
        }
    }
    out
}

#[derive(Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with Normal(0, 0.02²) weights; residual output
    /// projections are scaled down by 1/sqrt(2·layers), norm gains start at
    /// one. Each parameter draws from a stream keyed by its name.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(seed);
        let scaled_std = 0.02 / (2.0 * config.layers as f64).sqrt();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in expected_params(&config) {
            let numel: usize = shape.iter().product();
            let tensor = if name.ends_with("norm.weight") {
                Tensor::ones(&shape)
            } else {
                let std = if name.ends_with("attn.wo") || name.ends_with("mlp.w_down") {
                    scaled_std
                } else {
                    0.02
                };
                let data = root.derive(&format!("init.{name}")).normal_vec(numel, 0.0, std);
                Tensor::from_vec(&shape, data)?
            };
            names.push(name);
            tensors.push(tensor);
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Model { config, names, tensors, index })
    }

    /// Rebuilds a model from checkpointed tensors, validating that names and
    /// shapes exactly match the structure implied by `config`.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = expected_params(&config);
        let mut by_name: HashMap<String, Tensor<T>> = HashMap::new();
        for (name, tensor) in params {
            if by_name.insert(name.clone(), tensor).is_some() {
                return Err(Error::invalid(format!("duplicate parameter {name}")));
            }
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in &expected {
            let tensor = by_name
                .remove(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
            if tensor.shape() != &shape[..] {
                return Err(Error::invalid(format!(
                    "parameter {name}: shape {:?} does not match expected {:?}",
                    tensor.shape(),
                    shape
                )));
            }
            names.push(name.clone());
            tensors.push(tensor);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::invalid(format!("unexpected parameter {extra}")));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Model { config, names, tensors, index })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn param_at(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn param_at_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.tensors[idx]
    }

    pub fn n_params_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    fn p(&self, name: &str) -> usize {
        self.index[name]
    }

    /// Builds the forward computation for heads 1..=active_k into `g`.
    ///
    /// `ids` is row-major (batch, seq). Returns one logits node of shape
    /// (batch*seq, vocab) per active head plus the parameter leaves that
    /// were actually used (inactive heads contribute none).
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        ids: &[u32],
        batch: usize,
        seq: usize,
        active_k: usize,
    ) -> Result<ModelGraph> {
        let mut used: HashMap<usize, NodeId> = HashMap::new();
        let head_logits = self.forward_core(g, ids, batch, seq, active_k, &mut |g, idx| {
            *used.entry(idx).or_insert_with(|| g.leaf(self.tensors[idx].clone(), true))
        })?;
        let mut param_nodes: Vec<(usize, NodeId)> = used.into_iter().collect();
        param_nodes.sort_by_key(|&(idx, _)| idx);
        Ok(ModelGraph { head_logits, param_nodes })
    }

    /// Like [`forward_graph`](Self::forward_graph) but reads parameters from
    /// caller-provided graph nodes (one per parameter, in registry order)
    /// instead of the model's own tensors. This is what lets a gradient
    /// checker own the leaves it perturbs.
    pub fn forward_from_nodes(
        &self,
        g: &mut Graph<T>,
        ids: &[u32],
        batch: usize,
        seq: usize,
        active_k: usize,
        nodes: &[NodeId],
    ) -> Result<ModelGraph> {
        if nodes.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "forward: expected {} parameter nodes, got {}",
                self.tensors.len(),
                nodes.len()
            )));
        }
        let mut used: HashMap<usize, NodeId> = HashMap::new();
        let head_logits = self.forward_core(g, ids, batch, seq, active_k, &mut |_, idx| {
            used.insert(idx, nodes[idx]);
            nodes[idx]
        })?;
        let mut param_nodes: Vec<(usize, NodeId)> = used.into_iter().collect();
        param_nodes.sort_by_key(|&(idx, _)| idx);
        Ok(ModelGraph { head_logits, param_nodes })
    }

    fn forward_core(
        &self,
        g: &mut Graph<T>,
        ids: &[u32],
        batch: usize,
        seq: usize,
        active_k: usize,
        resolve: &mut dyn FnMut(&mut Graph<T>, usize) -> NodeId,
    ) -> Result<Vec<NodeId>> {
        let c = &self.config;
        if batch == 0 || seq == 0 || ids.len() != batch * seq {
            return Err(Error::invalid(format!(
                "forward: ids length {} does not match batch {batch} x seq {seq}",
                ids.len()
            )));
        }
        if seq > c.context {
            return Err(Error::invalid(format!("forward: seq {} exceeds context {}", seq, c.context)));
        }
        if active_k == 0 || active_k > c.k_max {
            return Err(Error::invalid(format!(
                "forward: active_k {active_k} outside 1..={}",
                c.k_max
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| (t as usize) >= c.vocab) {
            return Err(Error::invalid(format!("forward: token id {bad} >= vocab {}", c.vocab)));
        }

        let embed = resolve(g, self.p("embed.weight"));
        let e = g.embedding(embed, ids)?;
        let mut x = g.reshape(e, &[batch, seq, c.hidden])?;

        for i in 0..c.trunk_layers() {
            x = self.block(g, resolve, x, &format!("trunk.{i}."), batch, seq)?;
        }

        let bt = batch * seq;
        let mut head_logits = Vec::with_capacity(active_k);
        match c.head_kind {
            HeadKind::Linear => {
                let fw = resolve(g, self.p("final_norm.weight"));
                let f = g.rms_norm(x, fw, c.rms_eps)?;
                let ff = g.reshape(f, &[bt, c.hidden])?;
                for i in 1..=active_k {
                    let w = if i == 1 {
                        resolve(g, self.p("unembed.weight"))
                    } else {
                        resolve(g, self.p(&format!("head.{i}.weight")))
                    };
                    head_logits.push(g.matmul(ff, w)?);
                }
            }
            HeadKind::TransformerLayer => {
                for i in 1..=active_k {
                    let hx = self.block(g, resolve, x, &format!("head.{i}.block."), batch, seq)?;
                    let fw = resolve(g, self.p("final_norm.weight"));
                    let f = g.rms_norm(hx, fw, c.rms_eps)?;
                    let ff = g.reshape(f, &[bt, c.hidden])?;
                    let un = resolve(g, self.p("unembed.weight"));
                    head_logits.push(g.matmul(ff, un)?);
                }
            }
        }
        Ok(head_logits)
    }

    /// One pre-norm transformer block: attention then SwiGLU, each behind an
    /// RMS-norm and wrapped in a residual connection.
    fn block(
        &self,
        g: &mut Graph<T>,
        resolve: &mut dyn FnMut(&mut Graph<T>, usize) -> NodeId,
        x: NodeId,
        prefix: &str,
        batch: usize,
        seq: usize,
    ) -> Result<NodeId> {
        let c = &self.config;
        let bt = batch * seq;
        // Attention sublayer.
        let norm_w = resolve(g, self.p(&format!("{prefix}attn_norm.weight")));
        let h = g.rms_norm(x, norm_w, c.rms_eps)?;
        let hf = g.reshape(h, &[bt, c.hidden])?;
        let wq = resolve(g, self.p(&format!("{prefix}attn.wq")));
        let wk = resolve(g, self.p(&format!("{prefix}attn.wk")));
        let wv = resolve(g, self.p(&format!("{prefix}attn.wv")));
        let wo = resolve(g, self.p(&format!("{prefix}attn.wo")));
        let q = g.matmul(hf, wq)?;
        let k = g.matmul(hf, wk)?;
        let v = g.matmul(hf, wv)?;
        let q3 = g.reshape(q, &[batch, seq, c.hidden])?;
        let k3 = g.reshape(k, &[batch, seq, c.hidden])?;
        let v3 = g.reshape(v, &[batch, seq, c.hidden])?;
        let qr = g.rope(q3, c.heads, c.rope_base)?;
        let kr = g.rope(k3, c.heads, c.rope_base)?;
        let a = g.attention(qr, kr, v3, c.heads)?;
        let af = g.reshape(a, &[bt, c.hidden])?;
        let ao = g.matmul(af, wo)?;
        let ao3 = g.reshape(ao, &[batch, seq, c.hidden])?;
        let x = g.add(x, ao3)?;
        // SwiGLU sublayer.
        let norm_w = resolve(g, self.p(&format!("{prefix}mlp_norm.weight")));
        let m = g.rms_norm(x, norm_w, c.rms_eps)?;
        let mf = g.reshape(m, &[bt, c.hidden])?;
        let wg = resolve(g, self.p(&format!("{prefix}mlp.w_gate")));
        let wu = resolve(g, self.p(&format!("{prefix}mlp.w_up")));
        let wd = resolve(g, self.p(&format!("{prefix}mlp.w_down")));
        let gate = g.matmul(mf, wg)?;
        let up = g.matmul(mf, wu)?;
        let sg = g.silu(gate)?;
        let prod = g.mul(sg, up)?;
        let down = g.matmul(prod, wd)?;
        let d3 = g.reshape(down, &[batch, seq, c.hidden])?;
        g.add(x, d3)
    }

    /// Inference forward for all k_max heads; returns concrete logits.
    pub fn forward_mtp(&self, ids: &[u32], batch: usize, seq: usize) -> Result<HeadLogits<T>> {
        let mut g = Graph::new();
        let fwd = self.forward_graph(&mut g, ids, batch, seq, self.config.k_max)?;
        let heads = fwd
            .head_logits
            .iter()
            .map(|&n| g.value(n).reshape(&[batch, seq, self.config.vocab]))
            .collect::<Result<Vec<_>>>()?;
        Ok(HeadLogits { batch, seq, vocab: self.config.vocab, heads })
    }

    pub fn param_count(&self) -> ParamCount {
        let size = |name: &str| self.param(name).map_or(0, Tensor::numel);
        let sum_prefix = |prefix: &str| {
            self.params()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(_, t)| t.numel())
                .sum::<usize>()
        };
        let embedding = size("embed.weight");
        let unembedding = size("unembed.weight");
        let trunk = (0..self.config.trunk_layers())
            .map(|i| sum_prefix(&format!("trunk.{i}.")))
            .sum::<usize>()
            + size("final_norm.weight");
        let heads = (1..=self.config.k_max)
            .map(|i| match self.config.head_kind {
                // Head 1 is the standard unembedding, counted separately.
                HeadKind::Linear => sum_prefix(&format!("head.{i}.weight")),
                HeadKind::TransformerLayer => sum_prefix(&format!("head.{i}.block.")),
            })
            .collect();
        ParamCount { embedding, trunk, unembedding, heads }
    }
}

/// Forward-pass handles: one logits node per active head, plus the parameter
/// leaves the pass actually used, keyed by model parameter index.
pub struct ModelGraph {
    pub head_logits: Vec<NodeId>,
    pub param_nodes: Vec<(usize, NodeId)>,
}

/// Concrete multi-head logits; head index 0 predicts offset 1.
pub struct HeadLogits<T: Scalar> {
    pub batch: usize,
    pub seq: usize,
    pub vocab: usize,
    pub heads: Vec<Tensor<T>>,
}

impl<T: Scalar> HeadLogits<T> {
    /// Logits row for head `head` (0-based) at batch `b`, position `t`.
    pub fn at(&self, head: usize, b: usize, t: usize) -> &[T] {
        let v = self.vocab;
        &self.heads[head].data()[(b * self.seq + t) * v..(b * self.seq + t + 1) * v]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub embedding: usize,
    pub trunk: usize,
    pub unembedding: usize,
    /// Per head 1..=k_max. For LL, head 1 reports 0 because it shares the
    /// unembedding.
    pub heads: Vec<usize>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.embedding + self.trunk + self.unembedding + self.heads.iter().sum::<usize>()
    }
}
