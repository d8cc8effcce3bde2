//! Acceptance criteria 1-12.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits nonzero if any fails.
//! `ACCEPTANCE_ONLY=1,5,9` runs a subset.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::LN_10;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selftrain::corpus::{
    filter, AudioRef, FilterSpec, Manifest, Provenance, QualityTier, UtteranceRecord,
};
use selftrain::decode::{beam_search, ctc_prefix_beam, greedy, BeamConfig, Lexicon};
use selftrain::eval::{bleu, wer};
use selftrain::ngram::{self, NgramModel};
use selftrain::nnet::gradcheck::{layer_cases, loss_cases, model_cases};
use selftrain::nnet::loss::ctc_with_grad;
use selftrain::nnet::model::{
    forward, init, Descriptor, Head, Input, ModelParams, ModelRole, BOS, EOS,
};
use selftrain::nnet::tensor::log_add;
use selftrain::nnet::{loss_ctc, Example, Tensor};
use selftrain::optim::{self, checkpoint_bytes, load_checkpoint, save_checkpoint, TrainerState};
use selftrain::pipeline::config::ExperimentConfig;
use selftrain::pipeline::desk::{self, DeskConfig};
use selftrain::pipeline::{
    finetune_start, st_examples, train_fresh, ExperimentRow, SweepResult, TrainSetup, ROW_HEADER,
};
use selftrain::subword::{self, SubwordModel, TrainerConfig, MARKER};
use selftrain::synthtask::{generate, ChannelSpec, SplitSizes};

type Res = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_lp(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..v).map(|_| rng.random_range(-2.5..2.5)).collect())
        .collect();
    Tensor::from_rows(&rows).log_softmax_rows()
}

// 1 ------------------------------------------------------------------------

fn gradients() -> Res {
    let start = Instant::now();
    let (mut n, mut worst, mut worst_name) = (0, 0.0f64, String::new());
    for seed in 0..50 {
        let mut cases: Vec<(_, usize)> = layer_cases(seed)
            .into_iter()
            .map(|c| (c, usize::MAX))
            .collect();
        cases.extend(loss_cases(seed).into_iter().map(|c| (c, usize::MAX)));
        cases.extend(model_cases(seed).map_err(err)?.into_iter().map(|c| (c, 60)));
        for (case, coords) in cases {
            let e = case.relative_error(1e-5, coords, seed).map_err(err)?;
            n += 1;
            if e > worst {
                worst = e;
                worst_name = format!("{} seed {seed}", case.name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || {
        format!("worst relative error {worst:.2e} ({worst_name})")
    })?;
    ensure(secs < 120.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "{n} cases over 50 seeds, worst {worst:.1e} ({worst_name}), {secs:.1}s"
    ))
}

// 2 ------------------------------------------------------------------------

/// Collapses a frame path: merge repeats, then drop blanks.
fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &k) in path.iter().enumerate() {
        if k != 0 && (i == 0 || path[i - 1] != k) {
            out.push(k);
        }
    }
    out
}

/// `ln p(labeling)` for every labeling reachable in `lp.rows()` frames.
fn labeling_probs(lp: &Tensor) -> BTreeMap<Vec<usize>, f64> {
    let (t, v) = (lp.rows(), lp.cols());
    let mut out = BTreeMap::new();
    let mut path = vec![0usize; t];
    loop {
        let logp: f64 = path.iter().enumerate().map(|(i, &k)| lp.get(i, k)).sum();
        let e = out.entry(collapse(&path)).or_insert(f64::NEG_INFINITY);
        *e = log_add(*e, logp);
        let mut i = 0;
        while i < t {
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t {
            return out;
        }
    }
}

fn all_targets(labels: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for l in 1..labels {
                let mut s: Vec<usize> = s.clone();
                s.push(l);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn ctc_oracle() -> Res {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cases, mut infeasible, mut worst_loss, mut worst_grad) = (0, 0, 0.0f64, 0.0f64);
    for v in 2..=4 {
        for t in 1..=6 {
            let lp = random_lp(&mut rng, t, v);
            let sums = labeling_probs(&lp);
            for target in all_targets(v, 3) {
                let Some(&logp) = sums.get(&target) else {
                    ensure(loss_ctc(&lp, &target).is_err(), || {
                        format!("unalignable {target:?} in {t} frames accepted")
                    })?;
                    infeasible += 1;
                    continue;
                };
                let (loss, grad) = ctc_with_grad(&lp, &target).map_err(err)?;
                worst_loss = worst_loss.max((loss + logp).abs());
                let h = 1e-5;
                for i in 0..lp.len() {
                    let mut x = lp.clone();
                    x.data_mut()[i] += h;
                    let up = loss_ctc(&x, &target).map_err(err)?;
                    x.data_mut()[i] -= 2.0 * h;
                    let down = loss_ctc(&x, &target).map_err(err)?;
                    worst_grad = worst_grad.max(((up - down) / (2.0 * h) - grad.data()[i]).abs());
                }
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_loss < 1e-10, || {
        format!("loss off by {worst_loss:.2e}")
    })?;
    ensure(worst_grad < 1e-6, || {
        format!("gradient off by {worst_grad:.2e}")
    })?;
    ensure(secs < 60.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "{cases} alignable cases (+{infeasible} unalignable rejected), loss err {worst_loss:.1e}, grad err {worst_grad:.1e}, {secs:.1}s"
    ))
}

// 3 ------------------------------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng, role: ModelRole, vocab: usize) -> ModelParams {
    let desc = Descriptor {
        role,
        head: Head::Seq2Seq,
        input_dim: 5,
        output_vocab: vocab,
        frontend_dim: 4,
        conv_channels: 4,
        conv_kernel: 3,
        conv_strides: if role == ModelRole::Mt {
            vec![]
        } else {
            vec![2]
        },
        enc_hidden: 4,
        enc_layers: 1,
        dec_embed: 4,
        dec_hidden: 6,
    };
    let mut p = init(&desc, rng.random()).unwrap();
    let sharpen = rng.random_range(1.0..15.0);
    for t in p.tensors_mut() {
        t.scale(sharpen);
    }
    p
}

enum Src {
    Tokens(Vec<usize>),
    Speech(Tensor),
}

impl Src {
    fn random(rng: &mut ChaCha8Rng, role: ModelRole) -> Src {
        if role == ModelRole::Mt {
            Src::Tokens(
                (0..rng.random_range(1..6))
                    .map(|_| rng.random_range(0..5))
                    .collect(),
            )
        } else {
            let t = rng.random_range(2..10);
            Src::Speech(Tensor::from_vec(
                t,
                5,
                (0..t * 5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            ))
        }
    }

    fn input(&self) -> Input<'_> {
        match self {
            Src::Tokens(t) => Input::Tokens(t),
            Src::Speech(x) => Input::Features(x),
        }
    }
}

/// `ln p(tokens, EOS | src)` by teacher forcing.
fn sequence_logp(p: &ModelParams, src: Input, tokens: &[usize]) -> f64 {
    let mut prefix = vec![BOS];
    prefix.extend_from_slice(tokens);
    let lp = forward(p, src, &prefix).unwrap().log_softmax_rows();
    tokens
        .iter()
        .chain([&EOS])
        .enumerate()
        .map(|(t, &v)| lp.get(t, v))
        .sum()
}

fn decoders() -> Res {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let role = if i % 2 == 0 {
            ModelRole::Mt
        } else {
            ModelRole::St
        };
        let vocab = rng.random_range(4..12);
        let p = random_model(&mut rng, role, vocab);
        let src = Src::random(&mut rng, role);
        let cfg = BeamConfig::with_beam(1);
        let b = beam_search(&p, src.input(), &cfg).map_err(err)?;
        let g = greedy(&p, src.input(), cfg.output_cap(src.input().len())).map_err(err)?;
        ensure(
            b[0].tokens == g.tokens && b[0].finished == g.finished,
            || {
                format!(
                    "model {i}: beam 1 {:?} vs greedy {:?}",
                    b[0].tokens, g.tokens
                )
            },
        )?;
        ensure((b[0].model_logp - g.model_logp).abs() < 1e-9, || {
            format!("model {i}: log-prob differs")
        })?;
    }

    let (real, max_tokens) = (4, 4);
    for i in 0..40 {
        let role = if i % 2 == 0 {
            ModelRole::Mt
        } else {
            ModelRole::St
        };
        let p = random_model(&mut rng, role, real + 2);
        let src = Src::random(&mut rng, role);
        let cfg = BeamConfig {
            beam_size: 4096,
            max_len: Some(max_tokens + 1),
            ..Default::default()
        };
        let got = beam_search(&p, src.input(), &cfg).map_err(err)?;
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut stack: Vec<Vec<usize>> = vec![vec![]];
        while let Some(seq) = stack.pop() {
            let s = sequence_logp(&p, src.input(), &seq) / (seq.len() + 1) as f64;
            if s > best.0 {
                best = (s, seq.clone());
            }
            if seq.len() < max_tokens {
                for v in 2..real + 2 {
                    let mut n = seq.clone();
                    n.push(v);
                    stack.push(n);
                }
            }
        }
        ensure(
            got[0].finished && got[0].tokens == best.1 && (got[0].score - best.0).abs() < 1e-9,
            || {
                format!(
                    "exhaustive instance {i}: beam {:?} {:.6} vs brute force {:?} {:.6}",
                    got[0].tokens, got[0].score, best.1, best.0
                )
            },
        )?;
    }

    let lex = Lexicon::new(
        [
            ("x", vec![1]),
            ("xz", vec![1, 3]),
            ("y", vec![2]),
            ("yzz", vec![2, 3, 3]),
        ]
        .into_iter()
        .map(|(w, l)| (w.to_string(), l)),
    )
    .map_err(err)?;
    let lm_lines = ["x y", "y xz x", "yzz", "x x y", "xz"];
    let lm = ngram::train(&ngram::tokenize_lines(&lm_lines), 2).map_err(err)?;
    let mut ctc_cases = 0;
    for i in 0..120 {
        let t = rng.random_range(1..=5);
        let lp = random_lp(&mut rng, t, 4);
        let (lm_ref, weight, bonus) = if i % 2 == 0 {
            (None, 0.0, 0.0)
        } else {
            (
                Some(&lm),
                rng.random_range(0.0..2.0),
                rng.random_range(-1.0..1.0),
            )
        };
        let cfg = BeamConfig {
            beam_size: 100_000,
            lm_weight: weight,
            word_bonus: bonus,
            ..Default::default()
        };
        let got = ctc_prefix_beam(&lp, &lex, lm_ref, &cfg).map_err(err)?;
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for (lab, logp) in labeling_probs(&lp) {
            let Some(words) = lex.parse(&lab) else {
                continue;
            };
            let words: Vec<&str> = words.iter().map(|&w| lex.words()[w].as_str()).collect();
            let fused = lm_ref.map_or(0.0, |m| weight * LN_10 * m.score_sequence(&words))
                + bonus * words.len() as f64;
            if logp + fused > best.0 {
                best = (logp + fused, lab);
            }
        }
        ensure(
            got.tokens == best.1 && (got.score - best.0).abs() < 1e-9,
            || {
                format!(
                    "ctc instance {i}: {:?} {:.6} vs brute force {:?} {:.6}",
                    got.tokens, got.score, best.1, best.0
                )
            },
        )?;
        ctc_cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "100 greedy, 40 exhaustive beam, {ctc_cases} CTC prefix instances, {secs:.1}s"
    ))
}

// 4 ------------------------------------------------------------------------

fn best_segmentation(syms: &[char], table: &HashMap<String, f64>) -> f64 {
    fn go(syms: &[char], i: usize, table: &HashMap<String, f64>) -> f64 {
        if i == syms.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in i + 1..=syms.len() {
            let piece: String = syms[i..j].iter().collect();
            if let Some(&lp) = table.get(&piece) {
                best = best.max(lp + go(syms, j, table));
            }
        }
        best
    }
    go(syms, 0, table)
}

fn random_line(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    const ODD: [&str; 10] = ["é", "ß", "日本", "42", ",", "!", "▁", "  ", "\t", "naïve"];
    let n = rng.random_range(0..12);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 || rng.random_bool(0.05) {
            s.push(' ');
        }
        if rng.random_bool(0.1) {
            s.push_str(ODD[rng.random_range(0..ODD.len())]);
        } else {
            s.push_str(words[rng.random_range(0..words.len())]);
        }
    }
    if rng.random_bool(0.05) {
        s.push(' ');
    }
    s
}

fn tokenizer() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alphabet = ['a', 'b', 'c', MARKER];
    for case in 0..500 {
        let mut table: HashMap<String, f64> = alphabet
            .iter()
            .map(|c| (c.to_string(), rng.random_range(-8.0..-1.0)))
            .collect();
        let target = rng.random_range(4..=20);
        while table.len() < target {
            let len = rng.random_range(2..=4);
            let piece: String = (0..len).map(|_| alphabet[rng.random_range(0..4)]).collect();
            table
                .entry(piece)
                .or_insert_with(|| rng.random_range(-8.0..-1.0));
        }
        let model = SubwordModel::from_pieces(table.iter().map(|(p, &l)| (p.clone(), l)).collect())
            .map_err(err)?;
        let len = rng.random_range(1..=10);
        let text: String = (0..len)
            .map(|_| ['a', 'b', 'c', ' '][rng.random_range(0..4)])
            .collect();
        let syms: Vec<char> = std::iter::once(MARKER)
            .chain(text.chars().map(|c| if c == ' ' { MARKER } else { c }))
            .collect();
        let oracle = best_segmentation(&syms, &table);
        let (ids, score) = model.encode_scored(&text);
        let pieces: Vec<String> = ids.iter().map(|&i| model.piece(i).unwrap()).collect();
        let rescored: f64 = pieces.iter().map(|p| table[p]).sum();
        ensure(
            (score - oracle).abs() < 1e-9
                && (rescored - oracle).abs() < 1e-9
                && pieces.concat() == syms.iter().collect::<String>(),
            || format!("case {case}: `{text}` -> {pieces:?} ({score}) vs best {oracle}"),
        )?;
    }

    let words = [
        "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far", "away", "under", "trees",
    ];
    let train_lines: Vec<String> = (0..2000).map(|_| random_line(&mut rng, &words)).collect();
    let model = subword::train(&train_lines, &TrainerConfig::with_target(40)).map_err(err)?;
    let lines: Vec<String> = (0..10_000).map(|_| random_line(&mut rng, &words)).collect();
    for line in &lines {
        let back = model.decode_ids(&model.encode_ids(line));
        ensure(&back == line, || {
            format!("round trip changed {line:?} into {back:?}")
        })?;
    }
    Ok(format!(
        "500 exhaustive segmentations, 10000 round trips ({} pieces)",
        model.num_pieces()
    ))
}

// 5 ------------------------------------------------------------------------

const HAND_ARPA: &str = "\\data\\
ngram 1=4
ngram 2=1

\\1-grams:
-0.5\ta\t-0.3
-0.7\tb
-1.0\t</s>
-1.5\t<unk>

\\2-grams:
-0.2\ta </s>

\\end\\
";

fn language_model() -> Res {
    let c = generate(
        &ChannelSpec::default(),
        &SplitSizes {
            gold: 400,
            pool: 0,
            dev: 0,
            test: 0,
            mt_text: 0,
        },
        5,
    )
    .map_err(err)?;
    let lines: Vec<String> = c
        .gold
        .records()
        .iter()
        .map(|r| r.transcript.clone().unwrap())
        .collect();
    let m = ngram::train(&ngram::tokenize_lines(&lines), 4).map_err(err)?;
    let vocab = m.vocab().to_vec();
    let histories = m.histories();
    let mut worst = 0.0f64;
    for h in &histories {
        let hist: Vec<&str> = h.iter().map(|&w| vocab[w as usize].as_str()).collect();
        let mass: f64 = vocab
            .iter()
            .filter(|w| w.as_str() != ngram::SENT_BEGIN)
            .map(|w| 10f64.powf(m.score_word(&hist, w)))
            .sum();
        worst = worst.max((mass - 1.0).abs());
    }
    ensure(worst < 1e-6, || {
        format!("distribution mass off by {worst:.2e}")
    })?;

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("lm.arpa");
    m.write_arpa(&path).map_err(err)?;
    let back = NgramModel::read_arpa(&path).map_err(err)?;
    ensure(back.to_arpa() == m.to_arpa(), || {
        "ARPA text changed on reload".into()
    })?;
    for h in &histories {
        let hist: Vec<&str> = h.iter().map(|&w| vocab[w as usize].as_str()).collect();
        for w in &vocab {
            ensure(back.score_word(&hist, w) == m.score_word(&hist, w), || {
                format!("score of {w} after {hist:?} changed")
            })?;
        }
    }

    let hand = NgramModel::from_arpa(HAND_ARPA).map_err(err)?;
    let s = hand.score_word(&["a"], "b");
    ensure((s - -1.0).abs() < 1e-6, || {
        format!("hand back-off gives {s}")
    })?;
    Ok(format!(
        "{} histories of a 4-gram sum to 1 (worst {worst:.1e}), ARPA round trip identical, hand back-off {s:.6}",
        histories.len()
    ))
}

// 6 ------------------------------------------------------------------------

fn oracle_bleu(hyps: &[Vec<&str>], refs: &[Vec<&str>]) -> Option<f64> {
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let grams = |s: &[&str]| {
                let mut m: HashMap<Vec<String>, usize> = HashMap::new();
                for g in s.windows(n) {
                    *m.entry(g.iter().map(|x| x.to_string()).collect())
                        .or_default() += 1;
                }
                m
            };
            let (hg, rg) = (grams(h), grams(rf));
            correct[n - 1] += hg
                .iter()
                .map(|(g, k)| (*k).min(*rg.get(g).unwrap_or(&0)))
                .sum::<usize>();
            total[n - 1] += h.len() + 1 - n;
        }
    }
    if correct.contains(&0) {
        return None;
    }
    let log_mean = (0..4)
        .map(|n| (correct[n] as f64 / total[n] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Some(100.0 * bp * log_mean.exp())
}

fn brute_edits(a: &[&str], b: &[&str]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edits(ra, rb) + usize::from(x != y);
            sub.min(brute_edits(ra, b) + 1).min(brute_edits(a, rb) + 1)
        }
    }
}

fn metrics() -> Res {
    let manual = bleu(&["a b c d e f"], &["a b c d x f"]).map_err(err)?.score;
    ensure((manual - 53.73).abs() < 0.01, || {
        format!("manual example gives {manual}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["a", "b", "c", "d", "e", "f", "g"];
    let (mut corpora, mut worst) = (0, 0.0f64);
    while corpora < 100 {
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..20 {
            let r: Vec<&str> = (0..rng.random_range(1..14))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect();
            let mut h = r.clone();
            for _ in 0..rng.random_range(0..4) {
                match rng.random_range(0..3) {
                    0 if !h.is_empty() => {
                        let i = rng.random_range(0..h.len());
                        h.remove(i);
                    }
                    1 => {
                        let i = rng.random_range(0..=h.len());
                        h.insert(i, words[rng.random_range(0..words.len())]);
                    }
                    _ if !h.is_empty() => {
                        let i = rng.random_range(0..h.len());
                        h[i] = words[rng.random_range(0..words.len())];
                    }
                    _ => {}
                }
            }
            hyps.push(h);
            refs.push(r);
        }
        let Some(want) = oracle_bleu(&hyps, &refs) else {
            continue;
        };
        let got = bleu(
            &hyps.iter().map(|h| h.join(" ")).collect::<Vec<_>>(),
            &refs.iter().map(|r| r.join(" ")).collect::<Vec<_>>(),
        )
        .map_err(err)?
        .score;
        worst = worst.max((got - want).abs());
        corpora += 1;
    }
    ensure(worst < 0.01, || {
        format!("BLEU differs from the counting oracle by {worst}")
    })?;

    let mut pairs = 0;
    for _ in 0..400 {
        let h: Vec<&str> = (0..rng.random_range(0..=6))
            .map(|_| words[rng.random_range(0..3)])
            .collect();
        let r: Vec<&str> = (1..=rng.random_range(1..=6))
            .map(|_| words[rng.random_range(0..3)])
            .collect();
        let got = wer(&[h.join(" ")], &[r.join(" ")]).map_err(err)?;
        let want = brute_edits(&h, &r);
        ensure(
            got.errors == want && (got.rate - want as f64 / r.len() as f64).abs() < 1e-12,
            || {
                format!(
                    "WER of {h:?} vs {r:?}: {} errors, brute force {want}",
                    got.errors
                )
            },
        )?;
        pairs += 1;
    }
    Ok(format!(
        "manual example {manual:.2}, 100 corpora within {worst:.1e}, {pairs} WER pairs"
    ))
}

// 7 ------------------------------------------------------------------------

fn tiny_st() -> Result<(Vec<Example>, Vec<Example>, Descriptor), String> {
    let c = generate(
        &ChannelSpec::default(),
        &SplitSizes {
            gold: 30,
            pool: 0,
            dev: 6,
            test: 0,
            mt_text: 0,
        },
        7,
    )
    .map_err(err)?;
    let texts: Vec<String> = c
        .gold
        .records()
        .iter()
        .map(|r| r.translation.clone().unwrap())
        .collect();
    let tok = subword::train(&texts, &TrainerConfig::with_target(60)).map_err(err)?;
    let f = Default::default();
    let train = st_examples(&c.gold, &tok, &f).map_err(err)?;
    let dev = st_examples(&c.dev, &tok, &f).map_err(err)?;
    let mut desc =
        selftrain::pipeline::st_descriptor(8, &tok, selftrain::nnet::model::SizeVariant::Base);
    desc.frontend_dim = 8;
    desc.conv_channels = 8;
    desc.enc_hidden = 8;
    desc.dec_embed = 8;
    desc.dec_hidden = 12;
    Ok((train, dev, desc))
}

fn setup(updates: u64) -> TrainSetup {
    let mut s = TrainSetup::default();
    s.schedule.base_lr = 5e-3;
    s.batch.max_frames_per_batch = 250;
    s.stop.max_updates = updates;
    s.stop.eval_every = 5;
    s.stop.patience = 1000;
    s
}

fn finetuning() -> Res {
    let (train, dev, desc) = tiny_st()?;
    let dir = tempfile::tempdir().map_err(err)?;
    let fresh = |seed| {
        let s = setup(0);
        TrainerState::new(init(&desc, seed).unwrap(), s.schedule, s.adam, seed)
    };
    let run = |state: &mut TrainerState, updates: u64, jobs: usize| -> Result<(), String> {
        let s = setup(updates);
        optim::train(state, &train, &dev, &s.batch, &s.stop, jobs)
            .map(|_| ())
            .map_err(err)
    };

    let mut full = fresh(11);
    run(&mut full, 40, 1)?;
    let path = dir.path().join("full.ckpt");
    save_checkpoint(&full, &path).map_err(err)?;
    let loaded = load_checkpoint(&path).map_err(err)?;
    ensure(
        checkpoint_bytes(&loaded) == checkpoint_bytes(&full) && loaded == full,
        || "checkpoint round trip changed the state".into(),
    )?;
    let file = std::fs::read(&path).map_err(err)?;
    ensure(file == checkpoint_bytes(&full), || {
        "checkpoint file differs from the state bytes".into()
    })?;

    for (cut, jobs) in [(13, 1), (20, 2), (37, 1)] {
        let mut part = fresh(11);
        run(&mut part, cut, 1)?;
        let p = dir.path().join(format!("cut{cut}.ckpt"));
        save_checkpoint(&part, &p).map_err(err)?;
        let mut resumed = load_checkpoint(&p).map_err(err)?;
        run(&mut resumed, 40 - cut, jobs)?;
        ensure(
            checkpoint_bytes(&resumed) == checkpoint_bytes(&full),
            || {
                format!("interrupted at {cut} (resumed with {jobs} jobs) differs from the uninterrupted run")
            },
        )?;
    }

    let (_, mixed) = train_fresh(&desc, 12, &train, &dev, &setup(30), 1).map_err(err)?;
    let start = finetune_start(&mixed.best_state).map_err(err)?;
    ensure(start.has_moments(), || {
        "fine-tuning starts with zero Adam moments".into()
    })?;
    ensure(
        start.step == mixed.best_state.step && start.step > 0,
        || "fine-tuning lost the step count".into(),
    )?;
    ensure(start.params == mixed.best && start.cursor.is_none(), || {
        "fine-tuning start is not the best checkpoint".into()
    })?;
    let mut kept = start.clone();
    let mut reset = start.clone();
    reset.m = reset.params.zeros_like();
    reset.v = reset.params.zeros_like();
    reset.step = 0;
    run(&mut kept, 1, 1)?;
    run(&mut reset, 1, 1)?;
    ensure(kept.step == start.step + 1, || {
        "first fine-tune step did not continue the step count".into()
    })?;
    ensure(kept.params != reset.params, || {
        "first fine-tune update ignores the carried moments".into()
    })?;
    Ok(format!(
        "checkpoint bitwise, 3 interruption points bitwise, fine-tune starts at step {} with moments",
        start.step
    ))
}

// 8 ------------------------------------------------------------------------

fn filtering() -> Res {
    let tok = SubwordModel::from_pieces(vec![
        (format!("{MARKER}w"), -1.0),
        ("w".into(), -2.0),
        (MARKER.to_string(), -3.0),
    ])
    .map_err(err)?;
    let words = |n: usize| vec!["w"; n].join(" ");
    let rec = |id: &str, frames: u64, tokens: usize| UtteranceRecord {
        id: id.into(),
        audio: AudioRef::None,
        n_frames: frames,
        transcript: Some("w".into()),
        translation: Some(words(tokens)),
        provenance: Provenance::Gold,
        quality_tier: QualityTier::NotApplicable,
    };
    ensure(tok.token_count(&words(256)) == 256, || {
        "token count helper is off".into()
    })?;
    let m = Manifest::new(
        "boundaries",
        "syn-tgt",
        vec![
            rec("f19", 19, 5),
            rec("f20", 20, 5),
            rec("f4000", 4000, 5),
            rec("f4001", 4001, 5),
            rec("t256", 500, 256),
            rec("t257", 500, 257),
        ],
    )
    .map_err(err)?;
    let out = filter(&m, &FilterSpec::OPEN_DATA, Some(&tok));
    let kept: Vec<&str> = out.manifest.ids().collect();
    ensure(kept == ["f20", "f4000", "t256"] && out.removed == 3, || {
        format!("kept {kept:?}")
    })?;
    Ok(format!("kept {kept:?}"))
}

// 9-12 ---------------------------------------------------------------------

struct SeedRun {
    seed: u64,
    sweep: SweepResult,
    quality: SweepResult,
    elapsed: Duration,
}

struct DeskRuns {
    seeds: Vec<SeedRun>,
    ablation: Result<(SweepResult, Vec<String>), String>,
}

const DESK_SEEDS: [u64; 3] = [1, 2, 3];

fn values(rows: &[ExperimentRow], condition: &str, finetuned: bool, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.condition == condition && r.finetuned == finetuned && r.metric == metric)
        .map(|r| r.value)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn desk_runs() -> &'static Result<DeskRuns, String> {
    static RUNS: OnceLock<Result<DeskRuns, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut seeds = Vec::new();
        let mut ablation = Err("not run".to_string());
        for seed in DESK_SEEDS {
            let start = Instant::now();
            let cfg = DeskConfig::default().with_seeds(vec![seed]);
            let world = desk::build(&cfg, seed).map_err(err)?;
            let sweep = world.experiment.sweep().map_err(err)?;
            let quality = world.experiment.ablate_label_quality().map_err(err)?;
            let elapsed = start.elapsed();
            eprintln!("desk seed {seed}: {:.0}s", elapsed.as_secs_f64());
            if seed == DESK_SEEDS[0] {
                ablation = (|| {
                    let dir = tempfile::tempdir().map_err(err)?;
                    world.write_to(dir.path(), &cfg).map_err(err)?;
                    let path = dir.path().join(desk::CONFIG_FILE);
                    let exp_cfg = ExperimentConfig::load(&path).map_err(err)?;
                    exp_cfg.validate(dir.path()).map_err(err)?;
                    let exp = exp_cfg.resolve(dir.path()).map_err(err)?;
                    let names = exp.labelers.iter().map(|l| l.name.clone()).collect();
                    Ok((exp.ablate().map_err(err)?, names))
                })();
            }
            seeds.push(SeedRun {
                seed,
                sweep,
                quality,
                elapsed,
            });
        }
        Ok(DeskRuns { seeds, ablation })
    })
}

fn no_failures(r: &SweepResult, what: &str) -> Result<(), String> {
    ensure(r.failures.is_empty(), || {
        format!("{what} failures: {:?}", r.failures)
    })
}

fn self_training_gain() -> Res {
    let runs = desk_runs().as_ref()?;
    let mut parts = Vec::new();
    let mut gains = Vec::new();
    for s in &runs.seeds {
        no_failures(&s.sweep, "sweep")?;
        let base = values(&s.sweep.rows, "baseline", false, "dev_bleu");
        let pseudo = values(&s.sweep.rows, "pseudo:cascade", false, "dev_bleu");
        ensure(base.len() == 1 && !pseudo.is_empty(), || {
            format!("seed {}: missing sweep rows", s.seed)
        })?;
        let best = pseudo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        parts.push(format!(
            "seed {} {:.1}->{:.1} ({:.0}s)",
            s.seed,
            base[0],
            best,
            s.elapsed.as_secs_f64()
        ));
        gains.push(best - base[0]);
        ensure(s.elapsed < Duration::from_secs(30 * 60), || {
            format!("seed {} took {:.0}s", s.seed, s.elapsed.as_secs_f64())
        })?;
    }
    let summary = format!("{}; mean gain {:.2}", parts.join(", "), mean(&gains));
    ensure(gains.iter().all(|&g| g > 0.0), || {
        format!("no gain for some seed: {summary}")
    })?;
    Ok(summary)
}

fn label_quality() -> Res {
    let runs = desk_runs().as_ref()?;
    let (mut high, mut low, mut gaps) = (Vec::new(), Vec::new(), Vec::new());
    for s in &runs.seeds {
        no_failures(&s.quality, "quality ablation")?;
        let wer_of = |tier: &str| {
            s.quality
                .rows
                .iter()
                .find(|r| {
                    r.condition.starts_with("labeler:")
                        && r.condition.ends_with(&format!(":{tier}"))
                        && r.metric == "label_dev_wer"
                })
                .map(|r| r.value)
        };
        let (Some(wh), Some(wl)) = (wer_of("high"), wer_of("low")) else {
            return Err(format!("seed {}: labeler WER rows missing", s.seed));
        };
        gaps.push(wl - wh);
        let h = values(&s.quality.rows, "quality:high", false, "dev_bleu");
        let l = values(&s.quality.rows, "quality:low", false, "dev_bleu");
        ensure(!h.is_empty() && h.len() == l.len(), || {
            format!("seed {}: unmatched quality arms", s.seed)
        })?;
        high.extend(h);
        low.extend(l);
    }
    let summary = format!(
        "WER gaps {:?}, mean dev BLEU high {:.1} vs low {:.1} over {} matched arms",
        gaps.iter()
            .map(|g| (g * 10.0).round() / 10.0)
            .collect::<Vec<_>>(),
        mean(&high),
        mean(&low),
        high.len()
    );
    ensure(gaps.iter().all(|&g| g >= 10.0), || {
        format!("WER gap below 10: {summary}")
    })?;
    ensure(mean(&high) >= mean(&low), || {
        format!("low-quality labels won: {summary}")
    })?;
    Ok(summary)
}

fn finetuned_mixture() -> Res {
    let runs = desk_runs().as_ref()?;
    let (mut tuned, mut plain) = (Vec::new(), Vec::new());
    for s in &runs.seeds {
        let t = values(&s.sweep.rows, "pseudo:cascade", true, "dev_bleu");
        let p = values(&s.sweep.rows, "pseudo:cascade", false, "dev_bleu");
        ensure(!t.is_empty() && t.len() == p.len(), || {
            format!("seed {}: sweep lacks both fine-tune arms", s.seed)
        })?;
        tuned.extend(t);
        plain.extend(p);
    }
    let summary = format!(
        "mean dev BLEU fine-tuned {:.1} vs not {:.1} ({} pairs)",
        mean(&tuned),
        mean(&plain),
        tuned.len()
    );
    ensure(mean(&tuned) >= mean(&plain), || summary.clone())?;
    Ok(summary)
}

fn ablation_harness() -> Res {
    let runs = desk_runs().as_ref()?;
    let (result, labelers) = runs.ablation.as_ref()?;
    no_failures(result, "ablation")?;
    let csv = result.csv();
    let mut lines = csv.lines();
    ensure(lines.next() == Some(ROW_HEADER), || {
        "CSV header mismatch".into()
    })?;
    for l in lines {
        ensure(l.split(',').count() == 7, || format!("malformed row `{l}`"))?;
    }
    let rows = &result.rows;
    let has = |cond: &str, metric: &str, seed: u64| {
        rows.iter()
            .any(|r| r.condition == cond && r.metric == metric && r.seed == seed)
    };
    let seed = DESK_SEEDS[0];
    for m in ["asr_wer", "dev_bleu", "test_bleu"] {
        ensure(has("encoder_pretrain", m, seed), || {
            format!("encoder_pretrain lacks {m}")
        })?;
    }
    for m in ["dev_bleu", "test_bleu"] {
        ensure(has("pseudo_label", m, seed), || {
            format!("pseudo_label lacks {m}")
        })?;
        for l in labelers {
            ensure(has(&format!("labeler:{l}"), m, seed), || {
                format!("labeler:{l} lacks {m}")
            })?;
        }
    }
    for l in labelers {
        let q = rows.iter().any(|r| {
            r.condition.starts_with(&format!("labeler:{l}:")) && r.metric == "label_dev_bleu"
        });
        ensure(q, || format!("no quality row for labeler {l}"))?;
    }
    for tier in ["high", "low"] {
        ensure(has(&format!("quality:{tier}"), "dev_bleu", seed), || {
            format!("quality:{tier} missing")
        })?;
    }
    let one = |cond: &str| {
        values(rows, cond, false, "dev_bleu")
            .first()
            .copied()
            .unwrap_or(f64::NAN)
    };
    let mut report = format!(
        "{} rows; pretrain {:.1} vs pseudo {:.1}",
        rows.len(),
        one("encoder_pretrain"),
        one("pseudo_label")
    );
    for l in labelers {
        report.push_str(&format!(", {l} {:.1}", one(&format!("labeler:{l}"))));
    }
    Ok(report)
}

type Criterion = (&'static str, fn() -> Res);

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 12] = [
        ("gradient oracle", gradients),
        ("CTC oracle", ctc_oracle),
        ("decoder oracles", decoders),
        ("tokenizer oracle", tokenizer),
        ("LM oracles", language_model),
        ("metric oracles", metrics),
        ("fine-tuning contract", finetuning),
        ("filter boundaries", filtering),
        ("self-training gain", self_training_gain),
        ("label quality", label_quality),
        ("fine-tuned mixture", finetuned_mixture),
        ("ablation harness", ablation_harness),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match result {
            Ok(detail) => format!("PASS {n:>2} {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                format!("FAIL {n:>2} {name} [{secs:.1}s]: {detail}")
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
