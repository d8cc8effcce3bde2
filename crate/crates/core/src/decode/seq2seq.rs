use std::cmp::Ordering;

use super::{BeamConfig, Hypothesis};
use crate::error::{Error, Result};
use crate::exec;
use crate::nnet::model::{
    decoder_step, encode, DecoderState, Head, Input, ModelParams, OwnedInput, BOS, EOS,
};
use crate::nnet::{Graph, Tensor};

/// Output cap: `ratio × encoder input length`, at least 8 tokens.
pub fn max_output_len(input_len: usize, ratio: f64) -> usize {
    ((input_len as f64 * ratio).ceil() as usize).max(8)
}

fn check_seq2seq(params: &ModelParams) -> Result<()> {
    if params.descriptor.head != Head::Seq2Seq {
        return Err(Error::InvalidConfig(
            "beam search needs a seq2seq model".into(),
        ));
    }
    Ok(())
}

fn normalized(logp: f64, len: usize, penalty: f64) -> f64 {
    logp / (len as f64).powf(penalty)
}

/// Higher score first, then higher model log-prob, then lexicographic tokens.
fn rank(a: (f64, f64, &[usize]), b: (f64, f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(b.1.total_cmp(&a.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Argmax decoding, one token at a time.
pub fn greedy(params: &ModelParams, input: Input, max_len: usize) -> Result<Hypothesis> {
    check_seq2seq(params)?;
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let enc = encode(&mut g, &b, input)?;
    let mut state = DecoderState::zeros(&mut g, &params.descriptor, 1);
    let mut last = BOS;
    let mut tokens = Vec::new();
    let mut logp = 0.0;
    for _ in 0..max_len {
        let (logits, next) = decoder_step(&mut g, &b, enc, state, &[last]);
        state = next;
        let lp = g.value(logits).log_softmax_rows();
        let row = lp.row(0);
        let mut best = usize::MAX;
        for (v, &x) in row.iter().enumerate() {
            if v != BOS && (best == usize::MAX || x > row[best]) {
                best = v;
            }
        }
        logp += row[best];
        if best == EOS {
            let len = tokens.len() + 1;
            return Ok(Hypothesis {
                score: logp / len as f64,
                tokens,
                model_logp: logp,
                finished: true,
                words: Vec::new(),
            });
        }
        tokens.push(best);
        last = best;
    }
    Ok(Hypothesis {
        score: logp / tokens.len().max(1) as f64,
        tokens,
        model_logp: logp,
        finished: false,
        words: Vec::new(),
    })
}

struct Live {
    tokens: Vec<usize>,
    logp: f64,
}

/// Length-normalized beam search. Each step keeps the best `beam_size`
/// expansions of all live hypotheses; expansions ending in EOS leave the beam
/// as finished. The result list is sorted best first (at most `nbest`); when
/// nothing finished, it holds the best unfinished hypothesis.
pub fn beam_search(
    params: &ModelParams,
    input: Input,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    check_seq2seq(params)?;
    cfg.validate()?;
    let max_len = cfg.output_cap(input.len());
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let enc = encode(&mut g, &b, input)?;
    let mut state = DecoderState::zeros(&mut g, &params.descriptor, 1);
    let mut live = vec![Live {
        tokens: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=max_len {
        let last: Vec<usize> = live
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(BOS))
            .collect();
        let (logits, next) = decoder_step(&mut g, &b, enc, state, &last);
        let lp: Tensor = g.value(logits).log_softmax_rows();
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * lp.cols());
        for (i, h) in live.iter().enumerate() {
            for (v, &x) in lp.row(i).iter().enumerate() {
                if v != BOS {
                    cands.push((h.logp + x, i, v));
                }
            }
        }
        // All candidates have the same length, so raw log-prob ranks them.
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.1].tokens.cmp(&live[b.1].tokens))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam_size);
        let mut new_live = Vec::new();
        let mut rows = Vec::new();
        for (logp, i, v) in cands {
            if v == EOS {
                finished.push(Hypothesis {
                    tokens: live[i].tokens.clone(),
                    model_logp: logp,
                    score: normalized(logp, step, cfg.length_penalty),
                    finished: true,
                    words: Vec::new(),
                });
            } else {
                let mut tokens = live[i].tokens.clone();
                tokens.push(v);
                new_live.push(Live { tokens, logp });
                rows.push(i);
            }
        }
        if new_live.is_empty() {
            live = new_live;
            break;
        }
        state = next.select(&mut g, &rows);
        live = new_live;
    }
    if finished.is_empty() {
        let mut unfinished: Vec<Hypothesis> = live
            .into_iter()
            .map(|h| Hypothesis {
                score: normalized(h.logp, h.tokens.len().max(1), cfg.length_penalty),
                tokens: h.tokens,
                model_logp: h.logp,
                finished: false,
                words: Vec::new(),
            })
            .collect();
        unfinished.sort_by(|a, b| {
            rank(
                (a.score, a.model_logp, &a.tokens),
                (b.score, b.model_logp, &b.tokens),
            )
        });
        unfinished.truncate(1);
        return Ok(unfinished);
    }
    finished.sort_by(|a, b| {
        rank(
            (a.score, a.model_logp, &a.tokens),
            (b.score, b.model_logp, &b.tokens),
        )
    });
    finished.truncate(cfg.nbest.max(1));
    Ok(finished)
}

/// Decodes many inputs, in parallel when `jobs > 1`, preserving order.
pub fn decode_batch(
    params: &ModelParams,
    inputs: &[OwnedInput],
    cfg: &BeamConfig,
    jobs: usize,
) -> Result<Vec<Vec<Hypothesis>>> {
    exec::map_ordered(inputs, jobs, |x| beam_search(params, x.as_input(), cfg))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::model::{forward, init, Descriptor, ModelRole};

    fn model(seed: u64, vocab: usize) -> ModelParams {
        let desc = Descriptor {
            role: ModelRole::Mt,
            head: Head::Seq2Seq,
            input_dim: 5,
            output_vocab: vocab,
            frontend_dim: 4,
            conv_channels: 4,
            conv_kernel: 3,
            conv_strides: vec![],
            enc_hidden: 4,
            enc_layers: 1,
            dec_embed: 4,
            dec_hidden: 6,
        };
        let mut p = init(&desc, seed).unwrap();
        // Sharper distributions than the default init gives.
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= 15.0);
        }
        p
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..20 {
            let p = model(seed, 6);
            let src = [1, 3, 4];
            let cfg = BeamConfig::with_beam(1);
            let b = beam_search(&p, Input::Tokens(&src), &cfg).unwrap();
            let g = greedy(&p, Input::Tokens(&src), max_output_len(3, 1.0)).unwrap();
            assert_eq!(b[0].tokens, g.tokens, "seed {seed}");
            assert_eq!(b[0].finished, g.finished);
        }
    }

    /// Log-prob of emitting `tokens` then EOS, by teacher forcing.
    fn sequence_logp(p: &ModelParams, src: &[usize], tokens: &[usize]) -> f64 {
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(tokens);
        let lp = forward(p, Input::Tokens(src), &prefix)
            .unwrap()
            .log_softmax_rows();
        let mut gold = tokens.to_vec();
        gold.push(EOS);
        gold.iter().enumerate().map(|(t, &v)| lp.get(t, v)).sum()
    }

    #[test]
    fn exhaustive_beam_matches_enumeration() {
        let vocab = 4;
        for seed in 0..10 {
            let p = model(seed, vocab);
            let src = [2, 0, 1];
            let max_len = 4;
            let cfg = BeamConfig {
                beam_size: vocab.pow(max_len as u32),
                max_len: Some(max_len),
                ..Default::default()
            };
            let best = beam_search(&p, Input::Tokens(&src), &cfg).unwrap();
            // Enumerate outputs over the non-special tokens {2, 3}, EOS included in the length.
            let mut best_oracle = (f64::NEG_INFINITY, Vec::new());
            let mut stack: Vec<Vec<usize>> = vec![vec![]];
            while let Some(seq) = stack.pop() {
                let s = sequence_logp(&p, &src, &seq) / (seq.len() + 1) as f64;
                if s > best_oracle.0 {
                    best_oracle = (s, seq.clone());
                }
                if seq.len() + 1 < max_len {
                    for v in 2..vocab {
                        let mut n = seq.clone();
                        n.push(v);
                        stack.push(n);
                    }
                }
            }
            assert!(best[0].finished);
            assert!((best[0].score - best_oracle.0).abs() < 1e-9, "seed {seed}");
            assert_eq!(best[0].tokens, best_oracle.1, "seed {seed}");
        }
    }

    #[test]
    fn wider_beams_rarely_score_worse() {
        // Pruning can drop the prefix of the best finished hypothesis, so a
        // wider beam is not always better; it should be almost always.
        let (mut worse, mut total) = (0, 0);
        for (seed, vocab) in (0..150).map(|s| (s, 4 + (s as usize % 9))) {
            let p = model(seed, vocab);
            let src = [(seed % 5) as usize, 2, 4];
            let mut prev = f64::NEG_INFINITY;
            for beam in 1..=8 {
                let h = beam_search(&p, Input::Tokens(&src), &BeamConfig::with_beam(beam)).unwrap();
                let s = if h[0].finished {
                    h[0].score
                } else {
                    f64::NEG_INFINITY
                };
                total += 1;
                if s < prev - 1e-12 {
                    worse += 1;
                }
                prev = s;
            }
        }
        assert!(worse * 50 < total, "{worse} of {total}");
    }

    #[test]
    fn deterministic_and_parallel_safe() {
        let p = model(3, 7);
        let inputs: Vec<OwnedInput> = (0..6)
            .map(|i| OwnedInput::Tokens(vec![i % 5, 1, 2]))
            .collect();
        let cfg = BeamConfig::with_beam(3);
        let a = decode_batch(&p, &inputs, &cfg, 1).unwrap();
        let b = decode_batch(&p, &inputs, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }
}
