//! Binary checkpoints that resume training bit-exactly.
//!
//! Layout (all integers little-endian):
//! magic "MTPCKPT1" | version u32 | model-config JSON (u32 length + bytes) |
//! train-config JSON | completed step u64 | parameter count u32 | per
//! parameter: name (u32 + UTF-8), rank u32, extents u32 each, f32 data |
//! optimizer step u64 | per parameter: update count u64, first-moment f32
//! data, second-moment f32 data. Parameters appear in model registry order;
//! trailing bytes are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::Tensor;

use super::{OptimizerState, TrainConfig, Trainer};

pub const CKPT_MAGIC: &[u8; 8] = b"MTPCKPT1";
pub const CKPT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Completed optimization steps; training resumes at this step index.
    pub step: usize,
    pub params: Vec<(String, Tensor<f32>)>,
    pub opt_m: Vec<Tensor<f32>>,
    pub opt_v: Vec<Tensor<f32>>,
    pub opt_counts: Vec<u64>,
    pub opt_step: u64,
}

impl Checkpoint {
    /// Rebuilds a trainer positioned exactly where the checkpointed run
    /// stopped.
    pub fn into_trainer(self) -> Result<Trainer<f32>> {
        // Moments are stored positionally, so the saved parameter order must
        // match the registry order the model will use.
        let saved_names: Vec<String> = self.params.iter().map(|(n, _)| n.clone()).collect();
        let model = Model::from_parts(self.model_config, self.params)?;
        if saved_names != model.param_names() {
            return Err(Error::invalid("checkpoint parameters out of registry order"));
        }
        let opt = OptimizerState {
            m: self.opt_m,
            v: self.opt_v,
            counts: self.opt_counts,
            step: self.opt_step,
        };
        Trainer::with_state(model, self.train_config, opt, self.step)
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    opt: &OptimizerState<f32>,
    cfg: &TrainConfig,
    step: usize,
) -> Result<()> {
    let mjson = serde_json::to_vec(model.config())
        .map_err(|e| Error::invalid(format!("serialize model config: {e}")))?;
    let tjson = serde_json::to_vec(cfg)
        .map_err(|e| Error::invalid(format!("serialize train config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    push_u32(&mut out, CKPT_VERSION);
    push_u32(&mut out, mjson.len() as u32);
    out.extend_from_slice(&mjson);
    push_u32(&mut out, tjson.len() as u32);
    out.extend_from_slice(&tjson);
    push_u64(&mut out, step as u64);
    push_u32(&mut out, model.n_params_tensors() as u32);
    for (name, tensor) in model.params() {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, tensor.ndim() as u32);
        for &d in tensor.shape() {
            push_u32(&mut out, d as u32);
        }
        push_f32s(&mut out, tensor.data());
    }
    push_u64(&mut out, opt.step);
    for i in 0..model.n_params_tensors() {
        push_u64(&mut out, opt.counts[i]);
        push_f32s(&mut out, opt.m[i].data());
        push_f32s(&mut out, opt.v[i].data());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = || format!("checkpoint {}", path.display());
    let err = |msg: &str| Error::format(what(), msg);
    let mut r = Cursor { bytes: &bytes, pos: 0 };
    if r.take(8).ok().map(|m| m != CKPT_MAGIC).unwrap_or(true) {
        return Err(err("bad magic"));
    }
    let version = r.u32().map_err(|_| err("truncated version"))?;
    if version != CKPT_VERSION {
        return Err(Error::format(what(), format!("unsupported version {version}")));
    }
    let mjson = r.len_bytes().map_err(|_| err("truncated model config"))?;
    let model_config: ModelConfig = serde_json::from_slice(mjson)
        .map_err(|e| Error::format(what(), format!("model config: {e}")))?;
    let tjson = r.len_bytes().map_err(|_| err("truncated train config"))?;
    let train_config: TrainConfig = serde_json::from_slice(tjson)
        .map_err(|e| Error::format(what(), format!("train config: {e}")))?;
    let step = r.u64().map_err(|_| err("truncated step"))? as usize;
    let n = r.u32().map_err(|_| err("truncated parameter count"))? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32().map_err(|_| err("truncated name"))? as usize;
        let name = String::from_utf8(r.take(name_len).map_err(|_| err("truncated name"))?.to_vec())
            .map_err(|_| err("parameter name is not UTF-8"))?;
        let ndim = r.u32().map_err(|_| err("truncated shape"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32().map_err(|_| err("truncated shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32s(numel).map_err(|_| err("truncated tensor data"))?;
        params.push((name, Tensor::from_vec(&shape, data)?));
    }
    let opt_step = r.u64().map_err(|_| err("truncated optimizer step"))?;
    let mut opt_m = Vec::with_capacity(n);
    let mut opt_v = Vec::with_capacity(n);
    let mut opt_counts = Vec::with_capacity(n);
    for (_, tensor) in &params {
        opt_counts.push(r.u64().map_err(|_| err("truncated update count"))?);
        let m = r.f32s(tensor.numel()).map_err(|_| err("truncated first moment"))?;
        let v = r.f32s(tensor.numel()).map_err(|_| err("truncated second moment"))?;
        opt_m.push(Tensor::from_vec(tensor.shape(), m)?);
        opt_v.push(Tensor::from_vec(tensor.shape(), v)?);
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(Checkpoint { model_config, train_config, step, params, opt_m, opt_v, opt_counts, opt_step })
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

    fn u64(&mut self) -> std::result::Result<u64, ()> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn len_bytes(&mut self) -> std::result::Result<&'a [u8], ()> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, ()> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::CurriculumMode;
    use crate::datapack::{PackedRow, Segment};
    use crate::model::{HeadKind, ModelConfig};
    use tempfile::tempdir;

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
            seed: 4,
            curriculum: CurriculumMode::Forward,
            checkpoint_every: 0,
        }
    }

    fn model(seed: u64) -> Model<f32> {
        Model::init(
            ModelConfig {
                vocab: 40,
                hidden: 16,
                layers: 1,
                heads: 2,
                context: 8,
                k_max: 2,
                head_kind: HeadKind::Linear,
                rope_base: 10_000.0,
                rms_eps: 1e-5,
                mlp_hidden: None,
            },
            seed,
        )
        .unwrap()
    }

    fn rows(n: usize) -> Vec<PackedRow> {
        (0..n)
            .map(|i| PackedRow {
                tokens: (0..8).map(|t| ((i * 11 + t * 3 + 1) % 40) as u32).collect(),
                segments: vec![Segment { start: 0, end: 8, doc: format!("d{i}") }],
                pad: 0,
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let data = rows(4);
        let mut t = Trainer::new(model(1), cfg(8)).unwrap();
        for _ in 0..3 {
            t.step_once(&data).unwrap();
        }
        save_checkpoint(&path, t.model(), t.optimizer(), t.config(), t.completed_steps()).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.step, 3);
        assert_eq!(&ck.train_config, t.config());
        assert_eq!(&ck.model_config, t.model().config());
        for ((name, orig), (lname, loaded)) in t.model().params().zip(&ck.params) {
            assert_eq!(name, lname);
            assert!(orig.bitwise_eq(loaded), "{name} not preserved");
        }
        for i in 0..ck.opt_m.len() {
            assert!(ck.opt_m[i].bitwise_eq(&t.optimizer().m[i]));
            assert!(ck.opt_v[i].bitwise_eq(&t.optimizer().v[i]));
        }
        assert_eq!(ck.opt_counts, t.optimizer().counts);
        assert_eq!(ck.opt_step, t.optimizer().step);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let data = rows(4);

        let mut straight = Trainer::new(model(2), cfg(8)).unwrap();
        let full = straight.run(&data, |_, _| Ok(())).unwrap();

        let mut first_half = Trainer::new(model(2), cfg(8)).unwrap();
        let mut records = Vec::new();
        for _ in 0..4 {
            records.push(first_half.step_once(&data).unwrap());
        }
        save_checkpoint(
            &path,
            first_half.model(),
            first_half.optimizer(),
            first_half.config(),
            first_half.completed_steps(),
        )
        .unwrap();
        drop(first_half);

        let mut resumed = load_checkpoint(&path).unwrap().into_trainer().unwrap();
        assert_eq!(resumed.completed_steps(), 4);
        records.extend(resumed.run(&data, |_, _| Ok(())).unwrap());

        assert_eq!(full.len(), records.len());
        for (a, b) in full.iter().zip(&records) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "loss diverged at step {}", a.step);
            assert_eq!(a.active_k, b.active_k);
        }
        for ((name, pa), (_, pb)) in straight.model().params().zip(resumed.model().params()) {
            assert!(pa.bitwise_eq(pb), "{name} diverged after resume");
        }
    }

    #[test]
    fn corrupt_and_truncated_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let data = rows(4);
        let mut t = Trainer::new(model(3), cfg(8)).unwrap();
        t.step_once(&data).unwrap();
        save_checkpoint(&path, t.model(), t.optimizer(), t.config(), 1).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xff;
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(load_checkpoint(&path).is_err(), "bad magic accepted");

        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err(), "truncation accepted");

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(load_checkpoint(&path).is_err(), "trailing bytes accepted");

        std::fs::write(&path, &good).unwrap();
        assert!(load_checkpoint(&path).is_ok(), "pristine file must load");
    }
}
