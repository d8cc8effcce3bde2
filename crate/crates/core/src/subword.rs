//! Unigram-LM subword tokenizer.
//!
//! Text is normalized by turning every space into the visible marker `▁` and
//! prefixing one more marker, so decoding needs no external detokenizer.
//! Characters without a piece (and literal `▁` characters in the input) are
//! emitted as UTF-8 byte pieces `<0xNN>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnet::tensor::log_add;
use crate::textio::{escape_field, unescape_field};

pub const MARKER: char = '\u{2581}';
const N_BYTES: usize = 256;
const FORMAT_VERSION: u32 = 1;
const HEADER_TAG: &str = "#selftrain-unigram";

#[derive(Clone, Debug, PartialEq)]
pub struct SubwordModel {
    /// Normal pieces, highest log-probability first.
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    byte_logp: f64,
    max_piece_chars: usize,
}

/// Trainer settings.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Final number of normal pieces (byte pieces are extra).
    pub target_size: usize,
    /// Seed vocabulary holds `seed_multiplier × target_size` substrings.
    pub seed_multiplier: usize,
    pub max_piece_chars: usize,
    pub em_iters_per_round: usize,
    pub prune_fraction: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            target_size: 10_000,
            seed_multiplier: 10,
            max_piece_chars: 16,
            em_iters_per_round: 2,
            prune_fraction: 0.2,
        }
    }
}

impl TrainerConfig {
    pub fn with_target(target_size: usize) -> Self {
        TrainerConfig {
            target_size,
            ..Default::default()
        }
    }
}

/// Normalized symbols: the marker, a normal character, or a character forced
/// to byte fallback (a literal `▁` in the input).
#[derive(Clone, Copy, Debug, PartialEq)]
enum Sym {
    Marker,
    Char(char),
    Literal(char),
}

impl Sym {
    fn as_char(self) -> char {
        match self {
            Sym::Marker => MARKER,
            Sym::Char(c) | Sym::Literal(c) => c,
        }
    }
}

fn normalize(text: &str) -> Vec<Sym> {
    if text.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(text.len() + 1);
    out.push(Sym::Marker);
    for c in text.chars() {
        out.push(match c {
            ' ' => Sym::Marker,
            MARKER => Sym::Literal(c),
            c => Sym::Char(c),
        });
    }
    out
}

fn byte_piece(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_piece(p: &str) -> Option<u8> {
    let hex = p.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl SubwordModel {
    /// Builds a model from explicit pieces; pieces are reordered by
    /// descending log-probability. Byte pieces get `min(logp) - 10`.
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self> {
        let min = pieces.iter().map(|p| p.1).fold(0.0f64, f64::min);
        Self::assemble(pieces, min - 10.0)
    }

    fn assemble(mut pieces: Vec<(String, f64)>, byte_logp: f64) -> Result<Self> {
        pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, (p, lp)) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::InvalidConfig("empty piece".into()));
            }
            if !lp.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "piece `{p}` has non-finite log-probability"
                )));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate piece `{p}`")));
            }
        }
        let max_piece_chars = pieces
            .iter()
            .map(|p| p.0.chars().count())
            .max()
            .unwrap_or(1);
        Ok(SubwordModel {
            pieces,
            index,
            byte_logp,
            max_piece_chars,
        })
    }

    /// Number of ids: normal pieces plus the 256 byte pieces.
    pub fn vocab_size(&self) -> usize {
        self.pieces.len() + N_BYTES
    }

    /// Number of normal (non-byte) pieces.
    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pieces.iter().map(|(p, l)| (p.as_str(), *l))
    }

    pub fn logp(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    pub fn byte_logp(&self) -> f64 {
        self.byte_logp
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(piece) {
            return Some(i);
        }
        parse_byte_piece(piece).map(|b| self.pieces.len() + b as usize)
    }

    pub fn piece(&self, id: usize) -> Option<String> {
        if id < self.pieces.len() {
            Some(self.pieces[id].0.clone())
        } else if id < self.vocab_size() {
            Some(byte_piece((id - self.pieces.len()) as u8))
        } else {
            None
        }
    }

    /// Whether `id` starts a new word (its piece begins with the marker).
    pub fn is_word_start(&self, id: usize) -> bool {
        id < self.pieces.len() && self.pieces[id].0.starts_with(MARKER)
    }

    fn has_char(&self, c: char) -> bool {
        let mut buf = [0u8; 4];
        self.index.contains_key(c.encode_utf8(&mut buf) as &str)
    }

    /// Viterbi segmentation, returned as piece ids, with its total score.
    pub fn encode_scored(&self, text: &str) -> (Vec<usize>, f64) {
        let syms = normalize(text);
        let n = syms.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        // back[j] = (start, Some(piece id)) or (start, None) for byte fallback.
        let mut back: Vec<(usize, Option<usize>)> = vec![(0, None); n + 1];
        best[0] = 0.0;
        let mut buf = String::new();
        for i in 0..n {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            buf.clear();
            for len in 1..=self.max_piece_chars.min(n - i) {
                let s = syms[i + len - 1];
                if matches!(s, Sym::Literal(_)) {
                    break;
                }
                buf.push(s.as_char());
                if let Some(&id) = self.index.get(buf.as_str()) {
                    let score = best[i] + self.pieces[id].1;
                    if score > best[i + len] {
                        best[i + len] = score;
                        back[i + len] = (i, Some(id));
                    }
                }
            }
            let fallback = match syms[i] {
                Sym::Literal(_) => true,
                Sym::Char(c) => !self.has_char(c),
                Sym::Marker => !self.has_char(MARKER),
            };
            if fallback {
                let nbytes = syms[i].as_char().len_utf8();
                let score = best[i] + nbytes as f64 * self.byte_logp;
                if score > best[i + 1] {
                    best[i + 1] = score;
                    back[i + 1] = (i, None);
                }
            }
        }
        let mut ids = Vec::new();
        let mut j = n;
        while j > 0 {
            let (i, piece) = back[j];
            match piece {
                Some(id) => ids.push(id),
                None => {
                    let mut b = [0u8; 4];
                    let bytes = syms[i].as_char().encode_utf8(&mut b).as_bytes();
                    for &byte in bytes.iter().rev() {
                        ids.push(self.pieces.len() + byte as usize);
                    }
                }
            }
            j = i;
        }
        ids.reverse();
        (ids, best[n])
    }

    pub fn encode_ids(&self, text: &str) -> Vec<usize> {
        self.encode_scored(text).0
    }

    pub fn encode(&self, text: &str) -> Vec<String> {
        self.encode_ids(text)
            .into_iter()
            .map(|id| self.piece(id).expect("encoder produced an unknown id"))
            .collect()
    }

    pub fn token_count(&self, text: &str) -> usize {
        self.encode_ids(text).len()
    }

    pub fn decode(&self, pieces: &[impl AsRef<str>]) -> String {
        let mut out = Vec::new();
        for p in pieces {
            let p = p.as_ref();
            match self.id(p) {
                Some(id) if id >= self.pieces.len() => out.push((id - self.pieces.len()) as u8),
                _ => {
                    for c in p.chars() {
                        let c = if c == MARKER { ' ' } else { c };
                        let mut b = [0u8; 4];
                        out.extend_from_slice(c.encode_utf8(&mut b).as_bytes());
                    }
                }
            }
        }
        let s = String::from_utf8_lossy(&out).into_owned();
        match s.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => s,
        }
    }

    pub fn decode_ids(&self, ids: &[usize]) -> String {
        let pieces: Vec<String> = ids.iter().filter_map(|&id| self.piece(id)).collect();
        self.decode(&pieces)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{HEADER_TAG}\tversion={FORMAT_VERSION}\tmarker={MARKER}\tbyte_fallback={N_BYTES}\tpieces={}\n",
            self.pieces.len()
        );
        for (p, lp) in &self.pieces {
            out.push_str(&format!("{}\t{lp}\n", escape_field(p)));
        }
        for b in 0..N_BYTES {
            out.push_str(&format!("{}\t{}\n", byte_piece(b as u8), self.byte_logp));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "subword model";
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(ctx, 1, "empty file"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER_TAG) {
            return Err(Error::parse(ctx, 1, "missing model header"));
        }
        let mut n_pieces = None;
        for f in fields {
            match f.split_once('=') {
                Some(("version", v)) if v != FORMAT_VERSION.to_string() => {
                    return Err(Error::parse(ctx, 1, format!("unsupported version {v}")))
                }
                Some(("pieces", v)) => {
                    n_pieces = Some(
                        v.parse::<usize>()
                            .map_err(|e| Error::parse(ctx, 1, e.to_string()))?,
                    )
                }
                _ => {}
            }
        }
        let n_pieces = n_pieces.ok_or_else(|| Error::parse(ctx, 1, "header lacks piece count"))?;
        let mut pieces = Vec::with_capacity(n_pieces);
        let mut byte_logp = None;
        for (i, line) in lines {
            let (p, lp) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(ctx, i + 1, "expected piece<TAB>logprob"))?;
            let lp: f64 = lp
                .parse()
                .map_err(|e| Error::parse(ctx, i + 1, format!("{e}")))?;
            if pieces.len() < n_pieces {
                pieces.push((
                    unescape_field(p).map_err(|m| Error::parse(ctx, i + 1, m))?,
                    lp,
                ));
            } else {
                byte_logp = Some(lp);
            }
        }
        if pieces.len() != n_pieces {
            return Err(Error::parse(ctx, 0, "truncated model file"));
        }
        Self::assemble(pieces, byte_logp.unwrap_or(-30.0))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Sizes observed during training, for inspecting the pruning schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub size_per_round: Vec<usize>,
}

pub fn train(corpus: &[impl AsRef<str>], cfg: &TrainerConfig) -> Result<SubwordModel> {
    train_traced(corpus, cfg).map(|(m, _)| m)
}

/// Word-level view of the corpus: each word is its marker-prefixed character
/// sequence with a count.
fn word_counts(corpus: &[impl AsRef<str>]) -> BTreeMap<Vec<char>, u64> {
    let mut words: BTreeMap<Vec<char>, u64> = BTreeMap::new();
    for line in corpus {
        let syms = normalize(line.as_ref());
        let mut cur: Vec<char> = Vec::new();
        let mut literal = false;
        let mut flush = |w: &mut Vec<char>, literal: &mut bool| {
            if !w.is_empty() && !*literal {
                *words.entry(std::mem::take(w)).or_default() += 1;
            }
            w.clear();
            *literal = false;
        };
        for s in syms {
            match s {
                Sym::Marker => {
                    flush(&mut cur, &mut literal);
                    cur.push(MARKER);
                }
                Sym::Char(c) => cur.push(c),
                Sym::Literal(_) => literal = true,
            }
        }
        flush(&mut cur, &mut literal);
    }
    words
}

struct Vocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_len: usize,
}

impl Vocab {
    fn new(pieces: Vec<(String, f64)>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i))
            .collect();
        let max_len = pieces
            .iter()
            .map(|p| p.0.chars().count())
            .max()
            .unwrap_or(1);
        Vocab {
            pieces,
            index,
            max_len,
        }
    }

    /// Candidate edges `(start, end, piece id)` over `word`.
    fn edges(&self, word: &[char], exclude: Option<usize>) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut buf = String::new();
        for i in 0..word.len() {
            buf.clear();
            for len in 1..=self.max_len.min(word.len() - i) {
                buf.push(word[i + len - 1]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if Some(id) != exclude {
                        out.push((i, i + len, id));
                    }
                }
            }
        }
        out
    }

    /// Expected piece counts for one word (forward-backward over the lattice).
    fn expected_counts(&self, word: &[char], weight: f64, counts: &mut [f64]) -> f64 {
        let n = word.len();
        let edges = self.edges(word, None);
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for &(s, e, id) in &edges {
            // edges are sorted by start
            alpha[e] = log_add(alpha[e], alpha[s] + self.pieces[id].1);
        }
        beta[n] = 0.0;
        for &(s, e, id) in edges.iter().rev() {
            beta[s] = log_add(beta[s], beta[e] + self.pieces[id].1);
        }
        let z = alpha[n];
        if !z.is_finite() {
            return 0.0;
        }
        for &(s, e, id) in &edges {
            let post = (alpha[s] + self.pieces[id].1 + beta[e] - z).exp();
            counts[id] += weight * post;
        }
        z * weight
    }

    /// Best segmentation score and pieces, optionally forbidding one piece.
    fn viterbi(&self, word: &[char], exclude: Option<usize>) -> (f64, Vec<usize>) {
        let n = word.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back = vec![(0usize, usize::MAX); n + 1];
        best[0] = 0.0;
        for (s, e, id) in self.edges(word, exclude) {
            let sc = best[s] + self.pieces[id].1;
            if sc > best[e] {
                best[e] = sc;
                back[e] = (s, id);
            }
        }
        let mut ids = Vec::new();
        if best[n].is_finite() {
            let mut j = n;
            while j > 0 {
                ids.push(back[j].1);
                j = back[j].0;
            }
            ids.reverse();
        }
        (best[n], ids)
    }
}

const SMOOTHING: f64 = 1e-3;

fn em_step(vocab: &mut Vocab, words: &BTreeMap<Vec<char>, u64>) {
    let mut counts = vec![0.0; vocab.pieces.len()];
    for (w, &c) in words {
        vocab.expected_counts(w, c as f64, &mut counts);
    }
    let total: f64 = counts.iter().sum::<f64>() + SMOOTHING * counts.len() as f64;
    for (p, c) in vocab.pieces.iter_mut().zip(&counts) {
        p.1 = ((c + SMOOTHING) / total).ln();
    }
}

/// Trains a unigram model: seed with frequent substrings, then alternate EM
/// re-estimation with pruning of the pieces whose removal costs the least
/// likelihood. Single characters are never pruned.
pub fn train_traced(
    corpus: &[impl AsRef<str>],
    cfg: &TrainerConfig,
) -> Result<(SubwordModel, TrainingTrace)> {
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("empty tokenizer corpus".into()));
    }
    let words = word_counts(corpus);
    let mut char_freq: BTreeMap<char, u64> = BTreeMap::new();
    char_freq.insert(MARKER, 0);
    for (w, &c) in &words {
        for &ch in w {
            *char_freq.entry(ch).or_default() += c;
        }
    }
    if cfg.target_size < char_freq.len() {
        return Err(Error::VocabularyTooSmall {
            target: cfg.target_size,
            chars: char_freq.len(),
        });
    }

    // Seed substrings scored by frequency × length.
    let mut sub_freq: BTreeMap<String, u64> = BTreeMap::new();
    for (w, &c) in &words {
        for i in 0..w.len() {
            for len in 2..=cfg.max_piece_chars.min(w.len() - i) {
                let s: String = w[i..i + len].iter().collect();
                *sub_freq.entry(s).or_default() += c;
            }
        }
    }
    let mut seeds: Vec<(String, u64)> = sub_freq
        .into_iter()
        .map(|(s, f)| {
            let score = f * s.chars().count() as u64;
            (s, score)
        })
        .collect();
    seeds.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    seeds.truncate(cfg.seed_multiplier.max(1) * cfg.target_size);

    let single: BTreeSet<String> = char_freq.keys().map(|c| c.to_string()).collect();
    let mut init: Vec<(String, f64)> = char_freq
        .iter()
        .map(|(c, &f)| (c.to_string(), f as f64 + 1.0))
        .collect();
    init.extend(seeds.into_iter().map(|(s, f)| (s, f as f64)));
    let total: f64 = init.iter().map(|p| p.1).sum();
    let mut vocab = Vocab::new(
        init.into_iter()
            .map(|(p, f)| (p, (f / total).ln()))
            .collect(),
    );

    let mut trace = TrainingTrace::default();
    loop {
        for _ in 0..cfg.em_iters_per_round.max(1) {
            em_step(&mut vocab, &words);
        }
        trace.size_per_round.push(vocab.pieces.len());
        if vocab.pieces.len() <= cfg.target_size {
            break;
        }
        // Likelihood loss of dropping each multi-character piece.
        let mut viterbi_freq = vec![0.0; vocab.pieces.len()];
        for (w, &c) in &words {
            for id in vocab.viterbi(w, None).1 {
                viterbi_freq[id] += c as f64;
            }
        }
        let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
        for (id, (p, lp)) in vocab.pieces.iter().enumerate() {
            if single.contains(p) {
                continue;
            }
            let loss = if viterbi_freq[id] > 0.0 {
                let chars: Vec<char> = p.chars().collect();
                let (alt, _) = vocab.viterbi(&chars, Some(id));
                viterbi_freq[id] * (lp - alt)
            } else {
                0.0
            };
            candidates.push((loss, *lp, id));
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then_with(|| vocab.pieces[a.2].0.cmp(&vocab.pieces[b.2].0))
        });
        let excess = vocab.pieces.len() - cfg.target_size;
        let n_remove = ((candidates.len() as f64 * cfg.prune_fraction) as usize).clamp(1, excess);
        let removed: BTreeSet<usize> = candidates.iter().take(n_remove).map(|c| c.2).collect();
        let kept = vocab
            .pieces
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, p)| p.clone())
            .collect();
        vocab = Vocab::new(kept);
    }
    let min = vocab.pieces.iter().map(|p| p.1).fold(0.0f64, f64::min);
    let model = SubwordModel::assemble(vocab.pieces, min - 10.0)?;
    Ok((model, trace))
}
