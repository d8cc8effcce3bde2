//! Synthetic speech-translation task with known ground truth.
//!
//! A seed fixes the whole universe: source and target word forms, one
//! prototype vector per (word, frame) slot, a Markov source grammar and the
//! translation rule. Each utterance is a source sentence rendered as `k`
//! noisy frames per word; its translation is the word-by-word lexical map
//! with deterministic local swaps after a fixed subset of source words.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_manifest, AudioRef, Manifest, Provenance, QualityTier, UtteranceRecord, FRAME_SHIFT_S,
};
use crate::error::{Error, Result};
use crate::eval::{bleu, wer, BleuReport, WerReport};
use crate::frontend::write_features;
use crate::nnet::Tensor;
use crate::textio::{escape_field, unescape_field};

pub const LANGUAGE_PAIR: &str = "syn-tgt";

const SRC_ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const SRC_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const TGT_ONSETS: &[&str] = &[
    "ch", "sh", "th", "w", "y", "h", "j", "qu", "x", "br", "kl", "tr",
];
const TGT_VOWELS: &[&str] = &["a", "ee", "o", "ai", "ou", "y"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSpec {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub frames_per_token: usize,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian emission noise.
    pub noise_sigma: f64,
    /// Fraction of source word types whose translation swaps with the next word's.
    pub swap_fraction: f64,
    /// Per-word probability of substituting a random word in gold transcripts.
    pub corruption_rate: f64,
    /// Probability mass on each word's preferred successors.
    pub grammar_strength: f64,
    pub successors: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            src_vocab: 50,
            tgt_vocab: 50,
            frames_per_token: 4,
            feature_dim: 8,
            noise_sigma: 0.5,
            swap_fraction: 0.2,
            corruption_rate: 0.0,
            grammar_strength: 0.8,
            successors: 4,
            min_words: 5,
            max_words: 10,
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("channel spec: {m}")));
        if self.src_vocab < 2 || self.tgt_vocab < self.src_vocab {
            return bad("need src_vocab >= 2 and tgt_vocab >= src_vocab");
        }
        if self.frames_per_token == 0 || self.feature_dim == 0 {
            return bad("frames_per_token and feature_dim must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        for (name, r) in [
            ("swap_fraction", self.swap_fraction),
            ("corruption_rate", self.corruption_rate),
            ("grammar_strength", self.grammar_strength),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "channel spec: {name} = {r} is outside [0, 1]"
                )));
            }
        }
        if self.min_words == 0 || self.max_words < self.min_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.successors == 0 || self.successors > self.src_vocab {
            return bad("successors must be in 1..=src_vocab");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub gold: usize,
    pub pool: usize,
    pub dev: usize,
    pub test: usize,
    /// Text-only parallel sentences for the MT stand-in.
    pub mt_text: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            gold: 1000,
            pool: 1000,
            dev: 200,
            test: 200,
            mt_text: 3000,
        }
    }
}

/// The sampled universe: vocabularies, prototypes, grammar, translation rule.
#[derive(Clone, Debug)]
pub struct Universe {
    pub spec: ChannelSpec,
    pub src_words: Vec<String>,
    pub tgt_words: Vec<String>,
    /// `prototypes[w]` has one row per frame slot.
    pub prototypes: Vec<Tensor>,
    /// Source word index -> target word index.
    pub lexical_map: Vec<usize>,
    pub swaps: Vec<bool>,
    successors: Vec<Vec<usize>>,
}

fn make_words(rng: &mut ChaCha8Rng, n: usize, onsets: &[&str], vowels: &[&str]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(onsets[rng.random_range(0..onsets.len())]);
            w.push_str(vowels[rng.random_range(0..vowels.len())]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Universe {
    pub fn sample(spec: &ChannelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src_words = make_words(&mut rng, spec.src_vocab, SRC_ONSETS, SRC_VOWELS);
        let tgt_words = make_words(&mut rng, spec.tgt_vocab, TGT_ONSETS, TGT_VOWELS);
        let (k, d) = (spec.frames_per_token, spec.feature_dim);
        let prototypes = (0..spec.src_vocab)
            .map(|_| {
                let data = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::from_vec(k, d, data)
            })
            .collect();
        let mut targets: Vec<usize> = (0..spec.tgt_vocab).collect();
        targets.shuffle(&mut rng);
        let lexical_map = targets[..spec.src_vocab].to_vec();
        let n_swap = (spec.swap_fraction * spec.src_vocab as f64).round() as usize;
        let mut order: Vec<usize> = (0..spec.src_vocab).collect();
        order.shuffle(&mut rng);
        let mut swaps = vec![false; spec.src_vocab];
        for &w in &order[..n_swap] {
            swaps[w] = true;
        }
        let successors = (0..spec.src_vocab)
            .map(|_| {
                let mut s: Vec<usize> = (0..spec.src_vocab).collect();
                s.shuffle(&mut rng);
                s.truncate(spec.successors);
                s
            })
            .collect();
        Ok(Universe {
            spec: spec.clone(),
            src_words,
            tgt_words,
            prototypes,
            lexical_map,
            swaps,
            successors,
        })
    }

    pub fn sample_sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let s = &self.spec;
        let n = rng.random_range(s.min_words..=s.max_words);
        let mut out = Vec::with_capacity(n);
        let mut w = rng.random_range(0..s.src_vocab);
        out.push(w);
        while out.len() < n {
            w = if rng.random_bool(s.grammar_strength) {
                let next = &self.successors[w];
                next[rng.random_range(0..next.len())]
            } else {
                rng.random_range(0..s.src_vocab)
            };
            out.push(w);
        }
        out
    }

    /// Target word indices. A swap-marked word trades places with its right
    /// neighbour; pairs do not overlap.
    pub fn translate(&self, src: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(src.len());
        let mut i = 0;
        while i < src.len() {
            if self.swaps[src[i]] && i + 1 < src.len() {
                out.push(self.lexical_map[src[i + 1]]);
                out.push(self.lexical_map[src[i]]);
                i += 2;
            } else {
                out.push(self.lexical_map[src[i]]);
                i += 1;
            }
        }
        out
    }

    pub fn render(&self, src: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let (k, d) = (self.spec.frames_per_token, self.spec.feature_dim);
        let sigma = self.spec.noise_sigma;
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let mut data = Vec::with_capacity(src.len() * k * d);
        for &w in src {
            for &p in self.prototypes[w].data() {
                let e = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(p + e);
            }
        }
        Tensor::from_vec(src.len() * k, d, data)
    }

    pub fn src_text(&self, ids: &[usize]) -> String {
        join(ids.iter().map(|&i| self.src_words[i].as_str()))
    }

    pub fn tgt_text(&self, ids: &[usize]) -> String {
        join(ids.iter().map(|&i| self.tgt_words[i].as_str()))
    }

    /// Nearest-prototype transcription of a rendered feature matrix.
    pub fn nearest_prototype(&self, features: &Tensor) -> Vec<usize> {
        let (k, d) = (self.spec.frames_per_token, self.spec.feature_dim);
        (0..features.rows() / k)
            .map(|t| {
                let block = &features.data()[t * k * d..(t + 1) * k * d];
                let mut best = (f64::INFINITY, 0);
                for (w, p) in self.prototypes.iter().enumerate() {
                    let d: f64 = block
                        .iter()
                        .zip(p.data())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.0 {
                        best = (d, w);
                    }
                }
                best.1
            })
            .collect()
    }
}

fn join<'a>(words: impl Iterator<Item = &'a str>) -> String {
    words.collect::<Vec<_>>().join(" ")
}

/// Ground-truth transcript and translation per utterance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenTruth {
    entries: BTreeMap<String, (String, String)>,
}

const TRUTH_HEADER: &str = "#selftrain-truth\tversion=1";

impl HiddenTruth {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn transcript(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(|e| e.0.as_str())
    }

    pub fn translation(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(|e| e.1.as_str())
    }

    pub fn insert(&mut self, id: String, transcript: String, translation: String) {
        self.entries.insert(id, (transcript, translation));
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{TRUTH_HEADER}\n");
        for (id, (src, tgt)) in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                escape_field(id),
                escape_field(src),
                escape_field(tgt)
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == TRUTH_HEADER => {}
            _ => {
                return Err(Error::UnsupportedFormat(
                    "missing hidden-truth header".into(),
                ))
            }
        }
        let mut truth = HiddenTruth::default();
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(
                    "hidden truth",
                    i + 1,
                    format!("expected 3 fields, found {}", f.len()),
                ));
            }
            let field =
                |s: &str| unescape_field(s).map_err(|m| Error::parse("hidden truth", i + 1, m));
            truth.insert(field(f[0])?, field(f[1])?, field(f[2])?);
        }
        Ok(truth)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub universe: Universe,
    /// Labeled training utterances (transcript and translation).
    pub gold: Manifest,
    /// Unlabeled audio; its labels live only in `truth`.
    pub pool: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
    /// Text-only parallel sentences (no audio).
    pub mt_text: Manifest,
    pub truth: HiddenTruth,
}

/// Feature cache files go under this subdirectory of an output directory.
pub const FEATURE_DIR: &str = "features";

impl SynthCorpus {
    /// The audio splits, in file order.
    pub fn splits(&self) -> [&Manifest; 5] {
        [&self.gold, &self.pool, &self.dev, &self.test, &self.mt_text]
    }

    /// Writes `<split>.tsv` manifests, one feature cache per utterance and the
    /// sealed `truth.tsv`. Manifests refer to features by relative path.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for m in self.splits() {
            write_manifest(
                &cache_features(m, dir)?,
                dir.join(format!("{}.tsv", m.name)),
            )?;
        }
        self.truth.save(dir.join(TRUTH_FILE))
    }
}

/// Moves inline features of `m` into `dir/features/<id>.feat` and returns the
/// manifest pointing at them relative to `dir`.
pub fn cache_features(m: &Manifest, dir: &Path) -> Result<Manifest> {
    let feat_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut records = Vec::with_capacity(m.len());
    for r in m.records() {
        let mut r = r.clone();
        if let AudioRef::Inline(t) = &r.audio {
            let rel = Path::new(FEATURE_DIR).join(format!("{}.feat", r.id));
            write_features(dir.join(&rel), t)?;
            r.audio = AudioRef::Path(rel);
        }
        records.push(r);
    }
    Manifest::new(m.name.clone(), m.language_pair.clone(), records)
}

pub const TRUTH_FILE: &str = "truth.tsv";

/// Samples every split from one seed. Splits use disjoint id prefixes; the
/// universe is drawn first, so the same seed always yields the same task.
pub fn generate(spec: &ChannelSpec, sizes: &SplitSizes, seed: u64) -> Result<SynthCorpus> {
    let universe = Universe::sample(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut truth = HiddenTruth::default();
    let mut split =
        |name: &str, n: usize, labeled: bool, rng: &mut ChaCha8Rng| -> Result<Manifest> {
            let mut records = Vec::with_capacity(n);
            for i in 0..n {
                let src = universe.sample_sentence(rng);
                let feats = universe.render(&src, rng);
                let id = format!("{name}-{i:05}");
                let transcript = universe.src_text(&src);
                let translation = universe.tgt_text(&universe.translate(&src));
                truth.insert(id.clone(), transcript.clone(), translation.clone());
                let shown = if labeled && name == "gold" && spec.corruption_rate > 0.0 {
                    let corrupted: Vec<usize> = src
                        .iter()
                        .map(|&w| {
                            if rng.random_bool(spec.corruption_rate) {
                                rng.random_range(0..spec.src_vocab)
                            } else {
                                w
                            }
                        })
                        .collect();
                    universe.src_text(&corrupted)
                } else {
                    transcript
                };
                records.push(UtteranceRecord {
                    id,
                    n_frames: feats.rows() as u64,
                    audio: AudioRef::Inline(Arc::new(feats)),
                    transcript: labeled.then_some(shown),
                    translation: labeled.then_some(translation),
                    provenance: if labeled {
                        Provenance::Gold
                    } else {
                        Provenance::Unlabeled
                    },
                    quality_tier: QualityTier::NotApplicable,
                });
            }
            Manifest::new(name, LANGUAGE_PAIR, records)
        };
    let gold = split("gold", sizes.gold, true, &mut rng)?;
    let pool = split("pool", sizes.pool, false, &mut rng)?;
    let dev = split("dev", sizes.dev, true, &mut rng)?;
    let test = split("test", sizes.test, true, &mut rng)?;
    let mt_records = (0..sizes.mt_text)
        .map(|i| {
            let src = universe.sample_sentence(&mut rng);
            UtteranceRecord {
                id: format!("mt-{i:05}"),
                audio: AudioRef::None,
                n_frames: 0,
                transcript: Some(universe.src_text(&src)),
                translation: Some(universe.tgt_text(&universe.translate(&src))),
                provenance: Provenance::Gold,
                quality_tier: QualityTier::NotApplicable,
            }
        })
        .collect();
    let mt_text = Manifest::new("mt", LANGUAGE_PAIR, mt_records)?;
    Ok(SynthCorpus {
        universe,
        gold,
        pool,
        dev,
        test,
        mt_text,
        truth,
    })
}

/// Hours implied by a word count under the channel's frame rate.
pub fn expected_hours(total_words: usize, spec: &ChannelSpec) -> f64 {
    (total_words * spec.frames_per_token) as f64 * FRAME_SHIFT_S / 3600.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleScore {
    pub bleu: BleuReport,
    /// Word error rate of the translation labels.
    pub wer: WerReport,
    /// Word error rate of the transcripts, when every record carries one.
    pub transcript_wer: Option<WerReport>,
}

/// Scores the labels in a manifest against the hidden truth. Records without a
/// translation count as empty labels.
pub fn oracle_score(m: &Manifest, truth: &HiddenTruth) -> Result<OracleScore> {
    let mut hyps = Vec::with_capacity(m.len());
    let mut refs = Vec::with_capacity(m.len());
    let mut src_hyps = Vec::new();
    let mut src_refs = Vec::new();
    let mut all_transcripts = true;
    for r in m.records() {
        let (src, tgt) = truth
            .entries
            .get(&r.id)
            .ok_or_else(|| Error::UnknownId(r.id.clone()))?;
        hyps.push(r.translation.clone().unwrap_or_default());
        refs.push(tgt.clone());
        match &r.transcript {
            Some(t) => {
                src_hyps.push(t.clone());
                src_refs.push(src.clone());
            }
            None => all_transcripts = false,
        }
    }
    let transcript_wer = if all_transcripts && !src_refs.is_empty() {
        Some(wer(&src_hyps, &src_refs)?)
    } else {
        None
    };
    Ok(OracleScore {
        bleu: bleu(&hyps, &refs)?,
        wer: wer(&hyps, &refs)?,
        transcript_wer,
    })
}
