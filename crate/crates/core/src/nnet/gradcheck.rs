//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::model::{self, Descriptor, Example, Head, ModelParams, ModelRole, OwnedInput};
use super::tensor::Tensor;
use crate::error::Result;
use std::sync::Arc;

type Builder = Box<dyn Fn(&[Tensor]) -> Result<(Graph, NodeId, Vec<NodeId>)>>;

/// A scalar function of some input tensors, built as a graph.
pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    build: Builder,
}

impl Case {
    /// Wraps a graph-building closure; every input becomes a leaf.
    pub fn new<F>(name: impl Into<String>, inputs: Vec<Tensor>, f: F) -> Self
    where
        F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'static,
    {
        let build: Builder = Box::new(move |xs: &[Tensor]| {
            let mut g = Graph::new();
            let leaves: Vec<NodeId> = xs.iter().map(|x| g.leaf(x.clone())).collect();
            let out = f(&mut g, &leaves)?;
            Ok((g, out, leaves))
        });
        Case {
            name: name.into(),
            inputs,
            build,
        }
    }

    fn value(&self, xs: &[Tensor]) -> Result<f64> {
        let (g, out, _) = (self.build)(xs)?;
        Ok(g.value(out).item())
    }

    /// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
    /// gradients over (up to `max_coords` sampled) coordinates of every input.
    pub fn relative_error(&self, step: f64, max_coords: usize, seed: u64) -> Result<f64> {
        let (g, out, leaves) = (self.build)(&self.inputs)?;
        let grads = g.backward(out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        let mut xs = self.inputs.clone();
        for (k, leaf) in leaves.iter().enumerate() {
            let len = xs[k].len();
            let coords: Vec<usize> = if len <= max_coords {
                (0..len).collect()
            } else {
                (0..max_coords).map(|_| rng.random_range(0..len)).collect()
            };
            for i in coords {
                let analytic = grads.get(*leaf).map_or(0.0, |t| t.data()[i]);
                let orig = xs[k].data()[i];
                xs[k].data_mut()[i] = orig + step;
                let up = self.value(&xs)?;
                xs[k].data_mut()[i] = orig - step;
                let down = self.value(&xs)?;
                xs[k].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                diff += (analytic - numeric).powi(2);
                na += analytic * analytic;
                nn += numeric * numeric;
            }
        }
        let denom = na.sqrt().max(nn.sqrt());
        Ok(if denom < 1e-12 {
            diff.sqrt()
        } else {
            diff.sqrt() / denom
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
}

/// Reduces a matrix node to the scalar `Σ out ∘ weights`.
fn project(g: &mut Graph, out: NodeId, weights: &Tensor) -> NodeId {
    let [r, c] = g.shape(out);
    let w = g.leaf(weights.clone());
    let y = g.mul(out, w);
    let left = g.leaf(Tensor::filled(1, r, 1.0));
    let right = g.leaf(Tensor::filled(c, 1, 1.0));
    let s = g.matmul(left, y);
    g.matmul(s, right)
}

/// A single-op case: `op` maps the leaves to a matrix, reduced by random weights.
fn op_case<F>(
    name: &str,
    inputs: Vec<Tensor>,
    out_shape: [usize; 2],
    rng: &mut ChaCha8Rng,
    op: F,
) -> Case
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId + 'static,
{
    let weights = uniform(rng, out_shape[0], out_shape[1], 1.0);
    Case::new(name, inputs, move |g, x| {
        let out = op(g, x);
        Ok(project(g, out, &weights))
    })
}

/// One case per differentiable graph operation.
pub fn layer_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let (n, k, m) = (3, 4, 5);
    let mut cases = Vec::new();
    let a = uniform(r, n, k, 1.0);
    let b = uniform(r, k, m, 1.0);
    cases.push(op_case("matmul", vec![a.clone(), b], [n, m], r, |g, x| {
        g.matmul(x[0], x[1])
    }));
    let bt = uniform(r, m, k, 1.0);
    cases.push(op_case(
        "matmul_t",
        vec![a.clone(), bt],
        [n, m],
        r,
        |g, x| g.matmul_t(x[0], x[1]),
    ));
    let a2 = uniform(r, n, k, 1.0);
    cases.push(op_case(
        "add",
        vec![a.clone(), a2.clone()],
        [n, k],
        r,
        |g, x| g.add(x[0], x[1]),
    ));
    let row = uniform(r, 1, k, 1.0);
    cases.push(op_case(
        "add_row",
        vec![a.clone(), row],
        [n, k],
        r,
        |g, x| g.add_row(x[0], x[1]),
    ));
    cases.push(op_case(
        "mul",
        vec![a.clone(), a2.clone()],
        [n, k],
        r,
        |g, x| g.mul(x[0], x[1]),
    ));
    let big = uniform(r, n, k, 2.0);
    cases.push(op_case("tanh", vec![big.clone()], [n, k], r, |g, x| {
        g.tanh(x[0])
    }));
    cases.push(op_case("sigmoid", vec![big.clone()], [n, k], r, |g, x| {
        g.sigmoid(x[0])
    }));
    cases.push(op_case("slice_cols", vec![a.clone()], [n, 2], r, |g, x| {
        g.slice_cols(x[0], 1, 2)
    }));
    cases.push(op_case(
        "concat_cols",
        vec![a.clone(), a2.clone()],
        [n, 2 * k],
        r,
        |g, x| g.concat_cols(&[x[0], x[1]]),
    ));
    cases.push(op_case("slice_rows", vec![a.clone()], [2, k], r, |g, x| {
        g.slice_rows(x[0], 1, 2)
    }));
    cases.push(op_case(
        "concat_rows",
        vec![a.clone(), a2],
        [2 * n, k],
        r,
        |g, x| g.concat_rows(&[x[0], x[1]]),
    ));
    let ids: Vec<usize> = (0..6).map(|_| r.random_range(0..n)).collect();
    cases.push(op_case(
        "gather",
        vec![a.clone()],
        [6, k],
        r,
        move |g, x| g.gather(x[0], &ids),
    ));
    let seq = uniform(r, 7, 2, 1.0);
    cases.push(op_case("unfold", vec![seq], [4, 6], r, |g, x| {
        g.unfold(x[0], 3, 2, 1)
    }));
    cases.push(op_case("softmax", vec![big.clone()], [n, k], r, |g, x| {
        g.softmax(x[0])
    }));
    cases.push(op_case("log_softmax", vec![big], [n, k], r, |g, x| {
        g.log_softmax(x[0])
    }));
    let h = 3;
    let z = uniform(r, 2, 4 * h, 2.0);
    let c = uniform(r, 2, h, 1.0);
    cases.push(op_case("lstm_cell", vec![z, c], [2, 2 * h], r, |g, x| {
        g.lstm_cell(x[0], x[1])
    }));
    cases
}

/// Both training losses, on raw inputs and behind a log-softmax.
pub fn loss_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let (n, v) = (4, 5);
    let logits = uniform(r, n, v, 2.0);
    let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..v)).collect();
    let eps = r.random_range(0.0..0.3);
    let mut cases = vec![Case::new("xent_smoothed", vec![logits], move |g, x| {
        g.xent_smoothed(x[0], &targets, eps)
    })];
    let t = 6;
    let len = r.random_range(1..=3);
    let target: Vec<usize> = (0..len).map(|_| r.random_range(1..v)).collect();
    let scores = uniform(r, t, v, 2.0);
    let lp = scores.log_softmax_rows();
    let tgt = target.clone();
    cases.push(Case::new("ctc", vec![lp], move |g, x| g.ctc(x[0], &tgt)));
    cases.push(Case::new(
        "ctc_after_log_softmax",
        vec![scores],
        move |g, x| {
            let lp = g.log_softmax(x[0]);
            g.ctc(lp, &target)
        },
    ));
    cases
}

fn tiny(role: ModelRole, head: Head, input_dim: usize, vocab: usize) -> Descriptor {
    Descriptor {
        role,
        head,
        input_dim,
        output_vocab: vocab,
        frontend_dim: 4,
        conv_channels: 4,
        conv_kernel: 3,
        conv_strides: if role == ModelRole::Mt {
            vec![]
        } else {
            vec![2]
        },
        enc_hidden: 3,
        enc_layers: 1,
        dec_embed: 3,
        dec_hidden: 4,
    }
}

fn model_case(name: &str, desc: Descriptor, ex: Example, seed: u64) -> Result<Case> {
    let params = model::init(&desc, seed)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let inputs: Vec<Tensor> = params.tensors().map(|t| t.map(|x| x * 5.0)).collect();
    let build: Builder = Box::new(move |xs: &[Tensor]| {
        let p = ModelParams::from_tensors(
            desc.clone(),
            0,
            names.iter().cloned().zip(xs.iter().cloned()).collect(),
        )?;
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let loss = model::example_graph(&mut g, &b, &ex, 0.1)?;
        let ids = b.ids().to_vec();
        Ok((g, loss, ids))
    });
    Ok(Case {
        name: name.into(),
        inputs,
        build,
    })
}

/// End-to-end models: speech seq2seq, speech CTC and text seq2seq.
pub fn model_cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = Arc::new(uniform(&mut rng, 8, 3, 1.0));
    let st = Example {
        input: OwnedInput::Features(feats.clone()),
        target: vec![2, 4, 3],
    };
    let asr = Example {
        input: OwnedInput::Features(feats),
        target: vec![1, 3],
    };
    let mt = Example {
        input: OwnedInput::Tokens(vec![0, 3, 2, 2]),
        target: vec![3, 2],
    };
    Ok(vec![
        model_case(
            "st_seq2seq",
            tiny(ModelRole::St, Head::Seq2Seq, 3, 5),
            st,
            seed,
        )?,
        model_case("asr_ctc", tiny(ModelRole::Asr, Head::Ctc, 3, 4), asr, seed)?,
        model_case(
            "mt_seq2seq",
            tiny(ModelRole::Mt, Head::Seq2Seq, 4, 5),
            mt,
            seed,
        )?,
    ])
}
