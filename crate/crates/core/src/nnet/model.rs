//! Toy encoder-decoder models for the three roles and their parameter sets.
//!
//! Speech encoder: tanh feed-forward layer, strided conv1d stack, bi-LSTM.
//! Text encoder: embedding, bi-LSTM. Decoder: LSTM with global dot-product
//! attention (query projection), or a linear CTC head for speech recognition.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// End-of-sentence id in every seq2seq target vocabulary.
pub const EOS: usize = 0;
/// Begin-of-sentence id fed as the first decoder input.
pub const BOS: usize = 1;
/// Number of reserved ids before the subword pieces.
pub const N_SPECIAL: usize = 2;

pub const INIT_RANGE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelRole {
    /// Features to target text.
    St,
    /// Features to source text.
    Asr,
    /// Source text to target text.
    Mt,
}

impl ModelRole {
    pub fn speech_input(self) -> bool {
        !matches!(self, ModelRole::Mt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Seq2Seq,
    Ctc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeVariant {
    Base,
    Large,
}

impl SizeVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeVariant::Base => "base",
            SizeVariant::Large => "large",
        }
    }
}

/// Architecture descriptor; it fully determines parameter names and shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub role: ModelRole,
    pub head: Head,
    /// Feature dimension (speech) or source vocabulary size (text).
    pub input_dim: usize,
    /// Seq2seq: target vocabulary including the specials. CTC: labels including blank.
    pub output_vocab: usize,
    /// Width of the speech tanh layer, or of the source embedding.
    pub frontend_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_strides: Vec<usize>,
    /// Per-direction encoder LSTM width.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_embed: usize,
    pub dec_hidden: usize,
}

impl Descriptor {
    /// Desk-scale default for a role. `Large` doubles widths and encoder depth.
    pub fn toy(
        role: ModelRole,
        head: Head,
        input_dim: usize,
        output_vocab: usize,
        size: SizeVariant,
    ) -> Self {
        let m = match size {
            SizeVariant::Base => 1,
            SizeVariant::Large => 2,
        };
        let conv_strides = match (role, head) {
            (ModelRole::Mt, _) => vec![],
            // CTC needs at least two frames per label to separate repeats.
            (_, Head::Ctc) => vec![2, 1],
            _ => vec![2, 2],
        };
        Descriptor {
            role,
            head,
            input_dim,
            output_vocab,
            frontend_dim: 32 * m,
            conv_channels: 32 * m,
            conv_kernel: 3,
            conv_strides,
            enc_hidden: 32 * m,
            enc_layers: m,
            dec_embed: 32 * m,
            dec_hidden: 64 * m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let dims = [
            ("input_dim", self.input_dim),
            ("output_vocab", self.output_vocab),
            ("frontend_dim", self.frontend_dim),
            ("enc_hidden", self.enc_hidden),
            ("enc_layers", self.enc_layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return bad(format!("descriptor field `{name}` is zero"));
            }
        }
        if self.role.speech_input() {
            if self.conv_channels == 0 || self.conv_kernel == 0 {
                return bad("speech encoder needs nonzero conv channels and kernel".into());
            }
            if self.conv_strides.contains(&0) {
                return bad("conv stride of zero".into());
            }
        }
        match self.head {
            Head::Seq2Seq => {
                if self.dec_embed == 0 || self.dec_hidden == 0 {
                    return bad("decoder widths must be nonzero".into());
                }
                if self.output_vocab <= N_SPECIAL {
                    return bad("target vocabulary has no pieces".into());
                }
            }
            Head::Ctc => {
                if self.role != ModelRole::Asr {
                    return bad("CTC head is only defined for ASR".into());
                }
                if self.output_vocab < 2 {
                    return bad("CTC needs a blank and at least one label".into());
                }
            }
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        if self.role.speech_input() {
            self.conv_strides.iter().product()
        } else {
            1
        }
    }

    /// Encoder output length for an input of `len` frames or tokens.
    pub fn encoder_len(&self, len: usize) -> usize {
        if !self.role.speech_input() {
            return len;
        }
        self.conv_strides.iter().fold(len, |t, &s| t.div_ceil(s))
    }

    /// Parameter names and shapes in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, [usize; 2])> {
        let mut out = Vec::new();
        let mut push = |name: String, r: usize, c: usize| out.push((name, [r, c]));
        let lstm_in;
        if self.role.speech_input() {
            push(
                "encoder.frontend.w".into(),
                self.input_dim,
                self.frontend_dim,
            );
            push("encoder.frontend.b".into(), 1, self.frontend_dim);
            let mut cin = self.frontend_dim;
            for i in 0..self.conv_strides.len() {
                push(
                    format!("encoder.conv{i}.w"),
                    self.conv_kernel * cin,
                    self.conv_channels,
                );
                push(format!("encoder.conv{i}.b"), 1, self.conv_channels);
                cin = self.conv_channels;
            }
            lstm_in = cin;
        } else {
            push("encoder.embed".into(), self.input_dim, self.frontend_dim);
            lstm_in = self.frontend_dim;
        }
        let h = self.enc_hidden;
        for l in 0..self.enc_layers {
            let input = if l == 0 { lstm_in } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                push(format!("encoder.lstm{l}.{dir}.wx"), input, 4 * h);
                push(format!("encoder.lstm{l}.{dir}.wh"), h, 4 * h);
                push(format!("encoder.lstm{l}.{dir}.b"), 1, 4 * h);
            }
        }
        match self.head {
            Head::Seq2Seq => {
                let (de, hd, v) = (self.dec_embed, self.dec_hidden, self.output_vocab);
                push("decoder.embed".into(), v, de);
                push("decoder.lstm.wx".into(), de + 2 * h, 4 * hd);
                push("decoder.lstm.wh".into(), hd, 4 * hd);
                push("decoder.lstm.b".into(), 1, 4 * hd);
                push("decoder.attn.wq".into(), hd, 2 * h);
                push("decoder.combine.w".into(), hd + 2 * h, hd);
                push("decoder.combine.b".into(), 1, hd);
                push("decoder.proj.w".into(), hd, v);
                push("decoder.proj.b".into(), 1, v);
            }
            Head::Ctc => {
                push("decoder.ctc.w".into(), 2 * h, self.output_vocab);
                push("decoder.ctc.b".into(), 1, self.output_vocab);
            }
        }
        out
    }
}

/// Named parameter tensors plus the descriptor that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub descriptor: Descriptor,
    pub seed: u64,
    tensors: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Assembles parameters, checking names and shapes against the descriptor.
    pub fn from_tensors(
        descriptor: Descriptor,
        seed: u64,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        descriptor.validate()?;
        let shapes = descriptor.parameter_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::InvalidConfig(format!(
                "descriptor expects {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (tname, t)) in shapes.iter().zip(&tensors) {
            if name != tname || *shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    tensor: tname.clone(),
                    expected: shape.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Ok(ModelParams {
            descriptor,
            seed,
            tensors,
            index,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    /// Leaf nodes for every parameter in a fresh graph.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let ids = self
            .tensors
            .iter()
            .map(|(_, t)| g.leaf(t.clone()))
            .collect();
        Bound { params: self, ids }
    }
}

/// Uniform `[-INIT_RANGE, INIT_RANGE]` initialization, deterministic under `seed`.
pub fn init(descriptor: &Descriptor, seed: u64) -> Result<ModelParams> {
    descriptor.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = descriptor
        .parameter_shapes()
        .into_iter()
        .map(|(name, [r, c])| {
            let data = (0..r * c)
                .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
                .collect();
            (name, Tensor::from_vec(r, c, data))
        })
        .collect();
    ModelParams::from_tensors(descriptor.clone(), seed, tensors)
}

/// Copies every `encoder.*` tensor of `src` into `dst`.
pub fn transfer_encoder(src: &ModelParams, dst: &ModelParams) -> Result<ModelParams> {
    let mut out = dst.clone();
    for (name, t) in out.tensors.iter_mut() {
        if !name.starts_with("encoder.") {
            continue;
        }
        let s = src.get(name).ok_or_else(|| Error::ShapeMismatch {
            tensor: name.clone(),
            expected: t.shape().to_vec(),
            found: vec![],
        })?;
        if s.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                tensor: name.clone(),
                expected: t.shape().to_vec(),
                found: s.shape().to_vec(),
            });
        }
        *t = s.clone();
    }
    if let Some(extra) = src
        .names()
        .find(|n| n.starts_with("encoder.") && dst.get(n).is_none())
    {
        return Err(Error::ShapeMismatch {
            tensor: extra.to_string(),
            expected: vec![],
            found: src.get(extra).unwrap().shape().to_vec(),
        });
    }
    Ok(out)
}

/// Parameters bound into a graph.
pub struct Bound<'p> {
    params: &'p ModelParams,
    ids: Vec<NodeId>,
}

impl Bound<'_> {
    pub fn node(&self, name: &str) -> NodeId {
        let i = *self
            .params
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"));
        self.ids[i]
    }

    /// Node ids in parameter order.
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.params.descriptor
    }
}

/// Model input: a feature matrix or a token sequence.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Features(&'a Tensor),
    Tokens(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum OwnedInput {
    Features(Arc<Tensor>),
    Tokens(Vec<usize>),
}

impl Input<'_> {
    /// Frames for speech, tokens for text.
    pub fn len(&self) -> usize {
        match self {
            Input::Features(f) => f.rows(),
            Input::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl OwnedInput {
    pub fn as_input(&self) -> Input<'_> {
        match self {
            OwnedInput::Features(f) => Input::Features(f),
            OwnedInput::Tokens(t) => Input::Tokens(t),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OwnedInput::Features(f) => f.rows(),
            OwnedInput::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn linear(g: &mut Graph, b: &Bound, x: NodeId, w: &str, bias: &str) -> NodeId {
    let wx = g.matmul(x, b.node(w));
    g.add_row(wx, b.node(bias))
}

/// One direction of an LSTM over the rows of `x`; returns `T × H`.
pub fn lstm_sequence(g: &mut Graph, b: &Bound, prefix: &str, x: NodeId, reverse: bool) -> NodeId {
    let wx = b.node(&format!("{prefix}.wx"));
    let wh = b.node(&format!("{prefix}.wh"));
    let bias = b.node(&format!("{prefix}.b"));
    let hidden = g.shape(wh)[0];
    let steps = g.shape(x)[0];
    let xw = g.matmul(x, wx);
    let xw = g.add_row(xw, bias);
    let mut h = g.leaf(Tensor::zeros(1, hidden));
    let mut c = g.leaf(Tensor::zeros(1, hidden));
    let mut outs = vec![h; steps];
    for i in 0..steps {
        let t = if reverse { steps - 1 - i } else { i };
        let zx = g.slice_rows(xw, t, 1);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let hc = g.lstm_cell(z, c);
        h = g.slice_cols(hc, 0, hidden);
        c = g.slice_cols(hc, hidden, hidden);
        outs[t] = h;
    }
    g.concat_rows(&outs)
}

fn bilstm(g: &mut Graph, b: &Bound, layer: usize, x: NodeId) -> NodeId {
    let f = lstm_sequence(g, b, &format!("encoder.lstm{layer}.fwd"), x, false);
    let r = lstm_sequence(g, b, &format!("encoder.lstm{layer}.bwd"), x, true);
    g.concat_cols(&[f, r])
}

fn check_input(desc: &Descriptor, input: Input) -> Result<()> {
    match (desc.role.speech_input(), input) {
        (true, Input::Features(f)) => {
            if f.cols() != desc.input_dim || f.rows() == 0 {
                return Err(Error::ShapeMismatch {
                    tensor: "input features".into(),
                    expected: vec![f.rows().max(1), desc.input_dim],
                    found: f.shape().to_vec(),
                });
            }
        }
        (false, Input::Tokens(t)) => {
            if t.is_empty() {
                return Err(Error::ShapeMismatch {
                    tensor: "input tokens".into(),
                    expected: vec![1],
                    found: vec![0],
                });
            }
            if let Some(&bad) = t.iter().find(|&&x| x >= desc.input_dim) {
                return Err(Error::TokenOutOfRange {
                    id: bad,
                    vocab: desc.input_dim,
                });
            }
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "input kind does not match model role {:?}",
                desc.role
            )))
        }
    }
    Ok(())
}

/// Encoder output, `encoder_len(input) × 2·enc_hidden`.
pub fn encode(g: &mut Graph, b: &Bound, input: Input) -> Result<NodeId> {
    let desc = b.descriptor().clone();
    check_input(&desc, input)?;
    let mut x = match input {
        Input::Features(f) => {
            let x = g.leaf(f.clone());
            let h = linear(g, b, x, "encoder.frontend.w", "encoder.frontend.b");
            let mut h = g.tanh(h);
            for (i, &stride) in desc.conv_strides.iter().enumerate() {
                let u = g.unfold(h, desc.conv_kernel, stride, (desc.conv_kernel - 1) / 2);
                let y = linear(
                    g,
                    b,
                    u,
                    &format!("encoder.conv{i}.w"),
                    &format!("encoder.conv{i}.b"),
                );
                h = g.tanh(y);
            }
            h
        }
        Input::Tokens(t) => g.gather(b.node("encoder.embed"), t),
    };
    for l in 0..desc.enc_layers {
        x = bilstm(g, b, l, x);
    }
    Ok(x)
}

/// Decoder recurrent state for a batch of rows (one row per hypothesis). The
/// previous attention context is fed back into the LSTM input.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
    pub ctx: NodeId,
}

impl DecoderState {
    pub fn zeros(g: &mut Graph, desc: &Descriptor, rows: usize) -> Self {
        DecoderState {
            h: g.leaf(Tensor::zeros(rows, desc.dec_hidden)),
            c: g.leaf(Tensor::zeros(rows, desc.dec_hidden)),
            ctx: g.leaf(Tensor::zeros(rows, 2 * desc.enc_hidden)),
        }
    }

    /// Reorders/duplicates rows, e.g. after beam pruning.
    pub fn select(&self, g: &mut Graph, rows: &[usize]) -> Self {
        DecoderState {
            h: g.gather(self.h, rows),
            c: g.gather(self.c, rows),
            ctx: g.gather(self.ctx, rows),
        }
    }
}

/// Dot-product attention context for decoder hidden rows `h` (`n × Hd`) over `enc`.
pub fn attend(g: &mut Graph, b: &Bound, enc: NodeId, h: NodeId) -> NodeId {
    let q = g.matmul(h, b.node("decoder.attn.wq"));
    let scores = g.matmul_t(q, enc);
    let weights = g.softmax(scores);
    g.matmul(weights, enc)
}

fn readout(g: &mut Graph, b: &Bound, h: NodeId, ctx: NodeId) -> NodeId {
    let hc = g.concat_cols(&[h, ctx]);
    let comb = linear(g, b, hc, "decoder.combine.w", "decoder.combine.b");
    let comb = g.tanh(comb);
    linear(g, b, comb, "decoder.proj.w", "decoder.proj.b")
}

fn decoder_cell(
    g: &mut Graph,
    b: &Bound,
    enc: NodeId,
    state: DecoderState,
    emb: NodeId,
) -> DecoderState {
    let hd = b.descriptor().dec_hidden;
    let x = g.concat_cols(&[emb, state.ctx]);
    let zx = linear(g, b, x, "decoder.lstm.wx", "decoder.lstm.b");
    let zh = g.matmul(state.h, b.node("decoder.lstm.wh"));
    let z = g.add(zx, zh);
    let hc = g.lstm_cell(z, state.c);
    let h = g.slice_cols(hc, 0, hd);
    let c = g.slice_cols(hc, hd, hd);
    let ctx = attend(g, b, enc, h);
    DecoderState { h, c, ctx }
}

/// Advances every row by one input token; returns logits (`rows × V`).
pub fn decoder_step(
    g: &mut Graph,
    b: &Bound,
    enc: NodeId,
    state: DecoderState,
    tokens: &[usize],
) -> (NodeId, DecoderState) {
    let emb = g.gather(b.node("decoder.embed"), tokens);
    let next = decoder_cell(g, b, enc, state, emb);
    (readout(g, b, next.h, next.ctx), next)
}

/// Teacher-forced decoder pass; row `t` of the result scores the token after `prefix[..=t]`.
pub fn decoder_teacher_forced(
    g: &mut Graph,
    b: &Bound,
    enc: NodeId,
    prefix: &[usize],
) -> Result<NodeId> {
    let desc = b.descriptor();
    if let Some(&bad) = prefix.iter().find(|&&t| t >= desc.output_vocab) {
        return Err(Error::TokenOutOfRange {
            id: bad,
            vocab: desc.output_vocab,
        });
    }
    let emb = g.gather(b.node("decoder.embed"), prefix);
    let mut state = DecoderState::zeros(g, desc, 1);
    let mut hs = Vec::with_capacity(prefix.len());
    let mut ctxs = Vec::with_capacity(prefix.len());
    for t in 0..prefix.len() {
        let e = g.slice_rows(emb, t, 1);
        state = decoder_cell(g, b, enc, state, e);
        hs.push(state.h);
        ctxs.push(state.ctx);
    }
    let hs = g.concat_rows(&hs);
    let ctxs = g.concat_rows(&ctxs);
    Ok(readout(g, b, hs, ctxs))
}

/// CTC log posteriors (`encoder_len × labels`) as a graph node.
pub fn ctc_head(g: &mut Graph, b: &Bound, enc: NodeId) -> NodeId {
    let logits = linear(g, b, enc, "decoder.ctc.w", "decoder.ctc.b");
    g.log_softmax(logits)
}

/// Teacher-forced logits for a seq2seq model.
pub fn forward(params: &ModelParams, input: Input, prefix: &[usize]) -> Result<Tensor> {
    if params.descriptor.head != Head::Seq2Seq {
        return Err(Error::InvalidConfig(
            "forward() needs a seq2seq model".into(),
        ));
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let enc = encode(&mut g, &b, input)?;
    let logits = decoder_teacher_forced(&mut g, &b, enc, prefix)?;
    Ok(g.value(logits).clone())
}

/// CTC log posteriors for a CTC model.
pub fn ctc_log_posteriors(params: &ModelParams, input: Input) -> Result<Tensor> {
    if params.descriptor.head != Head::Ctc {
        return Err(Error::InvalidConfig(
            "ctc_log_posteriors() needs a CTC model".into(),
        ));
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let enc = encode(&mut g, &b, input)?;
    let lp = ctc_head(&mut g, &b, enc);
    Ok(g.value(lp).clone())
}

/// One supervised example. Seq2seq targets exclude BOS/EOS; CTC targets are labels ≥ 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: OwnedInput,
    pub target: Vec<usize>,
}

/// Builds the training loss of one example on a bound graph.
pub fn example_graph(
    g: &mut Graph,
    b: &Bound,
    ex: &Example,
    label_smoothing: f64,
) -> Result<NodeId> {
    let enc = encode(g, b, ex.input.as_input())?;
    match b.descriptor().head {
        Head::Seq2Seq => {
            let mut prefix = Vec::with_capacity(ex.target.len() + 1);
            prefix.push(BOS);
            prefix.extend_from_slice(&ex.target);
            let mut gold = ex.target.clone();
            gold.push(EOS);
            let logits = decoder_teacher_forced(g, b, enc, &prefix)?;
            g.xent_smoothed(logits, &gold, label_smoothing)
        }
        Head::Ctc => {
            let lp = ctc_head(g, b, enc);
            g.ctc(lp, &ex.target)
        }
    }
}

/// Loss and parameter gradients (in parameter order) for one example.
pub fn example_loss_and_grads(
    params: &ModelParams,
    ex: &Example,
    label_smoothing: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let loss = example_graph(&mut g, &b, ex, label_smoothing)?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    let out = b
        .ids()
        .iter()
        .zip(params.tensors())
        .map(|(&id, t)| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();
    Ok((value, out))
}

/// Loss only (no backward pass), e.g. for dev evaluation.
pub fn example_loss(params: &ModelParams, ex: &Example, label_smoothing: f64) -> Result<f64> {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let enc = encode(&mut g, &b, ex.input.as_input())?;
    match params.descriptor.head {
        Head::Seq2Seq => {
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(&ex.target);
            let mut gold = ex.target.clone();
            gold.push(EOS);
            let logits = decoder_teacher_forced(&mut g, &b, enc, &prefix)?;
            super::loss::loss_xent_smoothed(g.value(logits), &gold, label_smoothing)
        }
        Head::Ctc => {
            let lp = ctc_head(&mut g, &b, enc);
            super::loss::loss_ctc(g.value(lp), &ex.target)
        }
    }
}
