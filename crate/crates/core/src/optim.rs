//! Adam, learning-rate schedules, frame-capped batching, the training loop
//! and checkpoints that keep optimizer state for fine-tuning.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Manifest;
use crate::error::{Error, Result};
use crate::exec;
use crate::nnet::model::{example_loss, example_loss_and_grads, Descriptor, Example, ModelParams};
use crate::nnet::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    InverseSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Fixed,
            base_lr: 1e-3,
            warmup_steps: 4000,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.kind == ScheduleKind::InverseSqrt && self.warmup_steps == 0 {
            return Err(Error::InvalidConfig(
                "inverse_sqrt needs warmup_steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based step.
pub fn schedule_lr(cfg: &ScheduleConfig, step: u64) -> f64 {
    match cfg.kind {
        ScheduleKind::Fixed => cfg.base_lr,
        ScheduleKind::InverseSqrt => {
            let (s, w) = (step.max(1) as f64, cfg.warmup_steps as f64);
            cfg.base_lr * (s / w).min((w / s).sqrt())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(5.0),
        }
    }
}

/// Position in the shuffled epoch: the epoch's shuffle seed and the next batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataCursor {
    pub epoch_seed: u64,
    pub position: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub params: ModelParams,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub rng: ChaCha8Rng,
    pub cursor: Option<DataCursor>,
}

impl TrainerState {
    pub fn new(params: ModelParams, schedule: ScheduleConfig, adam: AdamConfig, seed: u64) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        TrainerState {
            params,
            m,
            v,
            step: 0,
            schedule,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: None,
        }
    }

    /// Starts a new pass over (different) data, keeping moments and step.
    pub fn reset_cursor(&mut self) {
        self.cursor = None;
    }

    pub fn lr(&self) -> f64 {
        schedule_lr(&self.schedule, self.step + 1)
    }

    /// True when any moment entry is nonzero.
    pub fn has_moments(&self) -> bool {
        self.m
            .iter()
            .chain(&self.v)
            .any(|t| t.data().iter().any(|&x| x != 0.0))
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut TrainerState, grads: &[Tensor]) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::ShapeMismatch {
            tensor: "gradients".into(),
            expected: vec![state.params.len()],
            found: vec![grads.len()],
        });
    }
    let mut sq = 0.0;
    for ((name, p), g) in state.params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                tensor: name.to_string(),
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient in `{name}`"
            )));
        }
        sq += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    let clip = match state.adam.max_grad_norm {
        Some(max) if sq.sqrt() > max => max / sq.sqrt(),
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let lr = schedule_lr(&state.schedule, state.step);
    let AdamConfig {
        beta1, beta2, eps, ..
    } = state.adam;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for (((p, g), m), v) in state
        .params
        .tensors_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            let gi = gi * clip;
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    /// Frames (or source tokens for text input) per update.
    pub max_frames_per_batch: u64,
    pub bucket_by_length: bool,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            max_frames_per_batch: 20_000,
            bucket_by_length: true,
        }
    }
}

/// Groups item indices into batches whose lengths sum to at most the cap.
/// Bucketing packs first-fit-decreasing and then shuffles the batch order;
/// otherwise items are shuffled and packed greedily in that order.
pub fn make_batches(lengths: &[u64], spec: &BatchSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let cap = spec.max_frames_per_batch;
    if let Some((i, &l)) = lengths.iter().enumerate().find(|(_, &l)| l > cap) {
        return Err(Error::UtteranceExceedsBatch {
            id: format!("#{i}"),
            frames: l,
            cap,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches: Vec<(u64, Vec<usize>)> = Vec::new();
    if spec.bucket_by_length {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]).then(a.cmp(&b)));
        for i in order {
            match batches.iter_mut().find(|(sum, _)| sum + lengths[i] <= cap) {
                Some((sum, items)) => {
                    *sum += lengths[i];
                    items.push(i);
                }
                None => batches.push((lengths[i], vec![i])),
            }
        }
        batches.shuffle(&mut rng);
    } else {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            match batches.last_mut() {
                Some((sum, items)) if *sum + lengths[i] <= cap => {
                    *sum += lengths[i];
                    items.push(i);
                }
                _ => batches.push((lengths[i], vec![i])),
            }
        }
    }
    Ok(batches.into_iter().map(|(_, b)| b).collect())
}

/// [`make_batches`] over a manifest's frame counts, naming offenders by id.
pub fn make_manifest_batches(m: &Manifest, spec: &BatchSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let lengths: Vec<u64> = m.records().iter().map(|r| r.n_frames).collect();
    make_batches(&lengths, spec, seed).map_err(|e| match e {
        Error::UtteranceExceedsBatch { id, frames, cap } => {
            let i: usize = id[1..].parse().unwrap_or(0);
            Error::UtteranceExceedsBatch {
                id: m.records()[i].id.clone(),
                frames,
                cap,
            }
        }
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopSpec {
    /// Updates to run in this call (on top of `state.step`).
    pub max_updates: u64,
    pub eval_every: u64,
    /// Stop after this many evaluations without dev-loss improvement.
    pub patience: usize,
    pub label_smoothing: f64,
    /// Also score the starting parameters on dev, so they can win selection.
    pub eval_at_start: bool,
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec {
            max_updates: 20_000,
            eval_every: 50,
            patience: 5,
            label_smoothing: 0.1,
            eval_at_start: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub lr: f64,
}

pub const CURVE_HEADER: &str = "step,split,loss,lr";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.8}\n",
            r.step, r.split, r.loss, r.lr
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    /// Parameters with the lowest dev loss seen (the final ones without dev data).
    pub best: ModelParams,
    /// Full trainer state at the `best` point.
    pub best_state: TrainerState,
    pub best_dev_loss: Option<f64>,
    pub updates: u64,
    pub early_stopped: bool,
}

/// Length used for batching: frames for speech input, tokens for text.
pub fn example_length(ex: &Example) -> u64 {
    ex.input.len() as u64
}

/// Mean loss over examples, reduced in order.
pub fn mean_loss(
    params: &ModelParams,
    data: &[Example],
    label_smoothing: f64,
    jobs: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("no examples to evaluate".into()));
    }
    let losses = exec::map_ordered(data, jobs, |ex| example_loss(params, ex, label_smoothing));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

/// Loss and averaged gradients for one batch; per-example work may run in
/// parallel but the reduction order is fixed.
pub fn batch_gradients(
    params: &ModelParams,
    data: &[Example],
    batch: &[usize],
    label_smoothing: f64,
    jobs: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let results = exec::map_ordered(batch, jobs, |&i| {
        example_loss_and_grads(params, &data[i], label_smoothing)
    });
    let mut acc = params.zeros_like();
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        if !l.is_finite() {
            return Err(Error::Divergence(format!("non-finite training loss {l}")));
        }
        loss += l;
        for (a, g) in acc.iter_mut().zip(&g) {
            a.add_assign(g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for a in &mut acc {
        a.scale(scale);
    }
    Ok((loss * scale, acc))
}

fn next_batch(state: &mut TrainerState, lengths: &[u64], spec: &BatchSpec) -> Result<Vec<usize>> {
    loop {
        let cursor = match state.cursor {
            Some(c) => c,
            None => {
                let c = DataCursor {
                    epoch_seed: state.rng.next_u64(),
                    position: 0,
                };
                state.cursor = Some(c);
                c
            }
        };
        let batches = make_batches(lengths, spec, cursor.epoch_seed)?;
        if let Some(b) = batches.get(cursor.position as usize) {
            state.cursor = Some(DataCursor {
                position: cursor.position + 1,
                ..cursor
            });
            return Ok(b.clone());
        }
        state.cursor = None;
    }
}

/// Runs up to `stop.max_updates` updates, evaluating on `dev` every
/// `eval_every` updates and stopping early after `patience` evaluations
/// without improvement.
pub fn train(
    state: &mut TrainerState,
    data: &[Example],
    dev: &[Example],
    batch: &BatchSpec,
    stop: &StopSpec,
    jobs: usize,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    state.schedule.validate()?;
    let lengths: Vec<u64> = data.iter().map(example_length).collect();
    let mut curve = Vec::new();
    let mut best_state = state.clone();
    let mut best_dev: Option<f64> = None;
    let mut bad_evals = 0;
    if stop.eval_at_start && !dev.is_empty() {
        let d = mean_loss(&state.params, dev, stop.label_smoothing, jobs)?;
        curve.push(CurveRow {
            step: state.step,
            split: "dev",
            loss: d,
            lr: state.lr(),
        });
        best_dev = Some(d);
    }
    let mut early_stopped = false;
    let (mut window_loss, mut window_n) = (0.0, 0u64);
    let mut done = 0;
    while done < stop.max_updates {
        let b = next_batch(state, &lengths, batch)?;
        let lr = state.lr();
        let (loss, grads) = batch_gradients(&state.params, data, &b, stop.label_smoothing, jobs)?;
        adam_step(state, &grads)?;
        done += 1;
        window_loss += loss;
        window_n += 1;
        let last = done == stop.max_updates;
        if stop.eval_every > 0 && (done % stop.eval_every == 0 || last) {
            curve.push(CurveRow {
                step: state.step,
                split: "train",
                loss: window_loss / window_n as f64,
                lr,
            });
            window_loss = 0.0;
            window_n = 0;
            if !dev.is_empty() {
                let d = mean_loss(&state.params, dev, stop.label_smoothing, jobs)?;
                if !d.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite dev loss at step {}",
                        state.step
                    )));
                }
                curve.push(CurveRow {
                    step: state.step,
                    split: "dev",
                    loss: d,
                    lr,
                });
                if best_dev.is_none_or(|b| d < b) {
                    best_dev = Some(d);
                    best_state = state.clone();
                    bad_evals = 0;
                } else {
                    bad_evals += 1;
                    if bad_evals >= stop.patience.max(1) {
                        early_stopped = true;
                        break;
                    }
                }
            }
        }
    }
    if dev.is_empty() {
        best_state = state.clone();
    }
    Ok(TrainOutcome {
        curve,
        best: best_state.params.clone(),
        best_state,
        best_dev_loss: best_dev,
        updates: done,
        early_stopped,
    })
}

const CKPT_MAGIC: &[u8; 4] = b"STSL";
const CKPT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    descriptor: Descriptor,
    init_seed: u64,
    schedule: ScheduleConfig,
    adam: AdamConfig,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        self.u8(DTYPE_F64);
        for &x in t.data() {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.data.len() {
            return Err("truncated file".into());
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> std::result::Result<&'a [u8], String> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn tensor(&mut self) -> std::result::Result<(String, Tensor), String> {
        let name =
            String::from_utf8(self.bytes()?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if self.u8()? != DTYPE_F64 {
            return Err(format!("tensor `{name}` has an unsupported dtype"));
        }
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(rows, cols, data)))
    }
}

/// Serializes the full trainer state.
///
/// Layout (little-endian): `STSL`, u32 version, length-prefixed JSON header
/// (descriptor, init seed, schedule, Adam settings), u32 block count, then
/// blocks `{name, rows, cols, dtype, f64 data}` named `param/…`, `adam_m/…`,
/// `adam_v/…`, then u64 step, the RNG (32-byte seed, u64 stream, u128 word
/// position) and the data cursor (u8 flag, u64 epoch seed, u64 position).
pub fn checkpoint_bytes(state: &TrainerState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CKPT_MAGIC);
    w.u32(CKPT_VERSION);
    let header = CheckpointHeader {
        descriptor: state.params.descriptor.clone(),
        init_seed: state.params.seed,
        schedule: state.schedule.clone(),
        adam: state.adam.clone(),
    };
    w.bytes(&serde_json::to_vec(&header).expect("header serializes"));
    w.u32(3 * state.params.len() as u32);
    for (name, t) in state.params.iter() {
        w.tensor(&format!("param/{name}"), t);
    }
    for (prefix, moments) in [("adam_m", &state.m), ("adam_v", &state.v)] {
        for (name, t) in state.params.names().zip(moments) {
            w.tensor(&format!("{prefix}/{name}"), t);
        }
    }
    w.u64(state.step);
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    match state.cursor {
        Some(c) => {
            w.u8(1);
            w.u64(c.epoch_seed);
            w.u64(c.position);
        }
        None => {
            w.u8(0);
            w.u64(0);
            w.u64(0);
        }
    }
    w.0
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> std::result::Result<TrainerState, String> {
    let mut r = Reader {
        data: bytes,
        pos: 0,
    };
    if r.take(4).map_err(|_| "not a checkpoint")? != CKPT_MAGIC {
        return Err("bad magic; not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(r.bytes()?).map_err(|e| format!("bad header: {e}"))?;
    let n = r.u32()? as usize;
    if !n.is_multiple_of(3) {
        return Err("block count is not a multiple of three".into());
    }
    let k = n / 3;
    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        blocks.push(r.tensor()?);
    }
    let strip =
        |block: &(String, Tensor), prefix: &str| -> std::result::Result<(String, Tensor), String> {
            block
                .0
                .strip_prefix(prefix)
                .map(|s| (s.to_string(), block.1.clone()))
                .ok_or_else(|| format!("expected a `{prefix}` block, found `{}`", block.0))
        };
    let params = blocks[..k]
        .iter()
        .map(|b| strip(b, "param/"))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let moments =
        |range: std::ops::Range<usize>, prefix: &str| -> std::result::Result<Vec<Tensor>, String> {
            blocks[range]
                .iter()
                .zip(&params)
                .map(|(b, (name, p))| {
                    let (mname, t) = strip(b, prefix)?;
                    if &mname != name || t.shape() != p.shape() {
                        return Err(format!("moment block `{}` does not match `{name}`", b.0));
                    }
                    Ok(t)
                })
                .collect()
        };
    let m = moments(k..2 * k, "adam_m/")?;
    let v = moments(2 * k..3 * k, "adam_v/")?;
    let params = ModelParams::from_tensors(header.descriptor, header.init_seed, params)
        .map_err(|e| e.to_string())?;
    let step = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let has_cursor = r.u8()?;
    let epoch_seed = r.u64()?;
    let position = r.u64()?;
    if r.pos != bytes.len() {
        return Err("trailing bytes after checkpoint".into());
    }
    Ok(TrainerState {
        params,
        m,
        v,
        step,
        schedule: header.schedule,
        adam: header.adam,
        rng,
        cursor: (has_cursor == 1).then_some(DataCursor {
            epoch_seed,
            position,
        }),
    })
}

pub fn save_checkpoint(state: &TrainerState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainerState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes).map_err(|m| Error::checkpoint(path, m))
}

/// Elementwise mean of the parameters of several checkpoints.
pub fn average_params(states: &[ModelParams]) -> Result<ModelParams> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidConfig("no checkpoints to average".into()))?;
    let mut acc: Vec<Tensor> = first.tensors().cloned().collect();
    for p in &states[1..] {
        if p.descriptor != first.descriptor {
            return Err(Error::InvalidConfig(
                "cannot average checkpoints with different descriptors".into(),
            ));
        }
        for (a, t) in acc.iter_mut().zip(p.tensors()) {
            a.add_assign(t);
        }
    }
    let k = states.len() as f64;
    let tensors = first
        .names()
        .map(str::to_string)
        .zip(acc.into_iter().map(|t| t.map(|x| x / k)))
        .collect();
    ModelParams::from_tensors(first.descriptor.clone(), first.seed, tensors)
}

pub fn average_checkpoints(paths: &[impl AsRef<Path>]) -> Result<ModelParams> {
    let params = paths
        .iter()
        .map(|p| load_checkpoint(p).map(|s| s.params))
        .collect::<Result<Vec<_>>>()?;
    average_params(&params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::model::{init, Head, ModelRole, OwnedInput};

    fn tiny_mt() -> Descriptor {
        Descriptor {
            role: ModelRole::Mt,
            head: Head::Seq2Seq,
            input_dim: 8,
            output_vocab: 8,
            frontend_dim: 8,
            conv_channels: 8,
            conv_kernel: 3,
            conv_strides: vec![],
            enc_hidden: 8,
            enc_layers: 1,
            dec_embed: 8,
            dec_hidden: 16,
        }
    }

    fn scalar_state(x: f64) -> TrainerState {
        let mut desc = tiny_mt();
        desc.input_dim = 1;
        let p = init(&desc, 0).unwrap();
        let mut st = TrainerState::new(p, ScheduleConfig::default(), AdamConfig::default(), 0);
        for t in st.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = x);
        }
        st
    }

    fn filled_grads(st: &TrainerState, g: f64) -> Vec<Tensor> {
        st.params
            .tensors()
            .map(|t| Tensor::filled(t.rows(), t.cols(), g))
            .collect()
    }

    #[test]
    fn schedules() {
        let fixed = ScheduleConfig::default();
        assert_eq!(schedule_lr(&fixed, 1), 1e-3);
        assert_eq!(schedule_lr(&fixed, 99_999), 1e-3);
        let inv = ScheduleConfig {
            kind: ScheduleKind::InverseSqrt,
            base_lr: 1e-4,
            warmup_steps: 100,
        };
        assert!((schedule_lr(&inv, 100) - 1e-4).abs() < 1e-18);
        assert!((schedule_lr(&inv, 400) - 0.5e-4).abs() < 1e-18);
        assert!((schedule_lr(&inv, 50) - 0.5e-4).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut st = scalar_state(0.3);
        let before = st.params.clone();
        let z = filled_grads(&st, 0.0);
        adam_step(&mut st, &z).unwrap();
        assert_eq!(st.params, before);
        assert_eq!(st.step, 1);

        let mut st = scalar_state(0.3);
        st.adam.max_grad_norm = None;
        let g = filled_grads(&st, 0.5);
        adam_step(&mut st, &g).unwrap();
        let want = 0.3 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!(st
            .params
            .tensors()
            .all(|t| t.data().iter().all(|&x| (x - want).abs() < 1e-15)));
    }

    #[test]
    fn adam_two_step_unroll() {
        let mut st = scalar_state(0.0);
        st.adam.max_grad_norm = None;
        let g = filled_grads(&st, 0.5);
        adam_step(&mut st, &g).unwrap();
        adam_step(&mut st, &g).unwrap();
        let (b1, b2, e, lr, g) = (0.9f64, 0.999f64, 1e-8, 1e-3, 0.5);
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + e);
        }
        assert!(st
            .params
            .tensors()
            .all(|t| t.data().iter().all(|&y| (y - x).abs() < 1e-12)));
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let mut st = scalar_state(0.0);
        let mut g = filled_grads(&st, 0.0);
        g[2].data_mut()[0] = f64::NAN;
        let name = st.params.names().nth(2).unwrap().to_string();
        match adam_step(&mut st, &g) {
            Err(Error::Divergence(m)) => assert!(m.contains(&name)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tiny_learning_rate_leaves_params() {
        let mut st = scalar_state(0.2);
        st.schedule.base_lr = 1e-300;
        let before = st.params.clone();
        let g = filled_grads(&st, 0.7);
        adam_step(&mut st, &g).unwrap();
        assert_eq!(st.params, before);
    }

    #[test]
    fn batching() {
        let spec = BatchSpec {
            max_frames_per_batch: 1000,
            bucket_by_length: true,
        };
        let mut b = make_batches(&[600, 500, 400], &spec, 3).unwrap();
        b.iter_mut().for_each(|x| x.sort());
        b.sort();
        assert_eq!(b, vec![vec![0, 2], vec![1]]);
        let one = make_batches(&[10, 20, 30], &spec, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(
            make_batches(&[5; 40], &spec, 9).unwrap(),
            make_batches(&[5; 40], &spec, 9).unwrap()
        );
        assert!(matches!(
            make_batches(&[1001], &spec, 0),
            Err(Error::UtteranceExceedsBatch { .. })
        ));
        let flat = BatchSpec {
            bucket_by_length: false,
            ..spec
        };
        let lens: Vec<u64> = (1..50).map(|i| i * 37 % 600).collect();
        let batches = make_batches(&lens, &flat, 4).unwrap();
        assert!(batches
            .iter()
            .all(|b| b.iter().map(|&i| lens[i]).sum::<u64>() <= 1000));
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..lens.len()).collect::<Vec<_>>());
    }

    fn copy_task(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let src: Vec<usize> = (0..3).map(|j| (i * 3 + j * 5) % 6 + 2).collect();
                Example {
                    target: src.iter().rev().copied().collect(),
                    input: OwnedInput::Tokens(src),
                }
            })
            .collect()
    }

    fn state(seed: u64) -> TrainerState {
        let p = init(&tiny_mt(), seed).unwrap();
        let sched = ScheduleConfig {
            base_lr: 1e-2,
            ..Default::default()
        };
        TrainerState::new(p, sched, AdamConfig::default(), seed)
    }

    fn stop(updates: u64) -> StopSpec {
        StopSpec {
            max_updates: updates,
            eval_every: 10,
            patience: 1000,
            label_smoothing: 0.0,
            eval_at_start: false,
        }
    }

    const BATCH: BatchSpec = BatchSpec {
        max_frames_per_batch: 9,
        bucket_by_length: false,
    };

    #[test]
    fn zero_updates_is_a_no_op() {
        let mut st = state(1);
        let before = st.clone();
        let out = train(&mut st, &copy_task(4), &[], &BATCH, &stop(0), 1).unwrap();
        assert_eq!(out.updates, 0);
        assert_eq!(st.params, before.params);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn memorizes_ten_examples() {
        let data = copy_task(10);
        let mut st = state(2);
        train(&mut st, &data, &[], &BATCH, &stop(400), 2).unwrap();
        let loss = mean_loss(&st.params, &data, 0.0, 1).unwrap();
        assert!(loss < 0.05, "loss {loss}");
    }

    #[test]
    fn resume_is_bitwise_identical() {
        let data = copy_task(10);
        let dir = tempfile::tempdir().unwrap();
        let mut full = state(3);
        train(&mut full, &data, &data[..3], &BATCH, &stop(23), 1).unwrap();

        let mut part = state(3);
        train(&mut part, &data, &data[..3], &BATCH, &stop(11), 1).unwrap();
        let path = dir.path().join("mid.ckpt");
        save_checkpoint(&part, &path).unwrap();
        let mut resumed = load_checkpoint(&path).unwrap();
        assert_eq!(resumed, part);
        assert!(resumed.has_moments());
        train(&mut resumed, &data, &data[..3], &BATCH, &stop(12), 2).unwrap();
        assert_eq!(checkpoint_bytes(&resumed), checkpoint_bytes(&full));
    }

    #[test]
    fn checkpoint_errors() {
        let st = state(0);
        let bytes = checkpoint_bytes(&st);
        assert_eq!(checkpoint_from_bytes(&bytes).unwrap(), st);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad).unwrap_err().contains("magic"));
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v2 = bytes;
        v2[4] = 9;
        assert!(checkpoint_from_bytes(&v2).unwrap_err().contains("version"));
    }

    #[test]
    fn averaging() {
        let a = state(0).params;
        let zero = ModelParams::from_tensors(
            a.descriptor.clone(),
            0,
            a.iter()
                .map(|(n, t)| (n.to_string(), t.map(|_| 0.0)))
                .collect(),
        )
        .unwrap();
        let two = ModelParams::from_tensors(
            a.descriptor.clone(),
            0,
            a.iter()
                .map(|(n, t)| (n.to_string(), t.map(|_| 2.0)))
                .collect(),
        )
        .unwrap();
        let avg = average_params(&[zero, two]).unwrap();
        assert!(avg.tensors().all(|t| t.data().iter().all(|&x| x == 1.0)));
        assert_eq!(average_params(std::slice::from_ref(&a)).unwrap(), a);

        let many: Vec<ModelParams> = (0..5).map(|s| state(s).params).collect();
        let avg = average_params(&many).unwrap();
        for (k, t) in avg.tensors().enumerate() {
            for i in 0..t.len() {
                let mut sum = 0.0;
                for p in &many {
                    sum += p.tensors().nth(k).unwrap().data()[i];
                }
                assert!((t.data()[i] - sum / 5.0).abs() < 1e-12);
            }
        }
        let mut other = tiny_mt();
        other.enc_hidden = 4;
        let b = init(&other, 0).unwrap();
        assert!(average_params(&[a, b]).is_err());
    }
}
