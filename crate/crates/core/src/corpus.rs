//! Utterance manifests: loading, length filtering, pool sampling and mixing.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nnet::Tensor;
use crate::subword::SubwordModel;
use crate::textio::{escape_field, read_optional, unescape_field, write_optional};

/// Feature frame shift in seconds.
pub const FRAME_SHIFT_S: f64 = 0.01;
const FRAMES_PER_HOUR: f64 = 3600.0 / FRAME_SHIFT_S;

pub fn frames_to_hours(frames: u64) -> f64 {
    frames as f64 / FRAMES_PER_HOUR
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Gold,
    PseudoCascade,
    PseudoE2e,
    Unlabeled,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Gold => "gold",
            Provenance::PseudoCascade => "pseudo_cascade",
            Provenance::PseudoE2e => "pseudo_e2e",
            Provenance::Unlabeled => "unlabeled",
        }
    }

    pub fn is_pseudo(self) -> bool {
        matches!(self, Provenance::PseudoCascade | Provenance::PseudoE2e)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "gold" => Provenance::Gold,
            "pseudo_cascade" => Provenance::PseudoCascade,
            "pseudo_e2e" => Provenance::PseudoE2e,
            "unlabeled" => Provenance::Unlabeled,
            other => return Err(format!("unknown provenance `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityTier {
    High,
    Low,
    NotApplicable,
}

impl QualityTier {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityTier::High => "high",
            QualityTier::Low => "low",
            QualityTier::NotApplicable => "n/a",
        }
    }
}

impl fmt::Display for QualityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityTier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "high" => QualityTier::High,
            "low" => QualityTier::Low,
            "n/a" => QualityTier::NotApplicable,
            other => return Err(format!("unknown quality tier `{other}`")),
        })
    }
}

/// Where an utterance's acoustic features come from.
#[derive(Clone, Debug, PartialEq)]
pub enum AudioRef {
    /// Text-only record (MT data).
    None,
    /// A WAV file or a cached feature matrix on disk.
    Path(PathBuf),
    /// Features held in memory.
    Inline(Arc<Tensor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio: AudioRef,
    /// Number of 10 ms frames.
    pub n_frames: u64,
    pub transcript: Option<String>,
    pub translation: Option<String>,
    pub provenance: Provenance,
    pub quality_tier: QualityTier,
}

impl UtteranceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match self.provenance {
            Provenance::Unlabeled if self.translation.is_some() => Err(format!(
                "`{}`: unlabeled record carries a translation",
                self.id
            )),
            p if p.is_pseudo() && self.translation.is_none() => Err(format!(
                "`{}`: pseudo-labeled record lacks a translation",
                self.id
            )),
            _ => Ok(()),
        }
    }

    pub fn hours(&self) -> f64 {
        frames_to_hours(self.n_frames)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub language_pair: String,
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    /// Builds a manifest, checking record invariants and id uniqueness.
    pub fn new(
        name: impl Into<String>,
        language_pair: impl Into<String>,
        records: Vec<UtteranceRecord>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate().map_err(Error::InvalidConfig)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Manifest {
            name: name.into(),
            language_pair: language_pair.into(),
            records,
        })
    }

    pub fn empty(name: impl Into<String>, language_pair: impl Into<String>) -> Self {
        Manifest {
            name: name.into(),
            language_pair: language_pair.into(),
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<UtteranceRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_frames(&self) -> u64 {
        self.records.iter().map(|r| r.n_frames).sum()
    }

    pub fn hours(&self) -> f64 {
        frames_to_hours(self.total_frames())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Same records under a new name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Keeps the records accepted by `keep`, in order.
    pub fn retain(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Manifest {
        Manifest {
            name: self.name.clone(),
            language_pair: self.language_pair.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// The first `n` records.
    pub fn head(&self, n: usize) -> Manifest {
        Manifest {
            name: self.name.clone(),
            language_pair: self.language_pair.clone(),
            records: self.records.iter().take(n).cloned().collect(),
        }
    }
}

// Manifest line format: id, audio_ref, n_frames, transcript, translation, provenance, quality_tier.
const N_FIELDS: usize = 7;

pub fn parse_manifest(text: &str, name: &str, language_pair: &str) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let record = parse_line(line).map_err(|m| Error::parse(name, lineno, m))?;
        record
            .validate()
            .map_err(|m| Error::parse(name, lineno, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::parse(
                name,
                lineno,
                format!("duplicate id `{}`", record.id),
            ));
        }
        records.push(record);
    }
    Ok(Manifest {
        name: name.to_string(),
        language_pair: language_pair.to_string(),
        records,
    })
}

fn parse_line(line: &str) -> std::result::Result<UtteranceRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != N_FIELDS {
        return Err(format!(
            "expected {N_FIELDS} tab-separated fields, found {}",
            fields.len()
        ));
    }
    let id = unescape_field(fields[0])?;
    if id.is_empty() || id == "-" {
        return Err("missing id field".into());
    }
    let audio = match read_optional(fields[1])? {
        None => AudioRef::None,
        Some(p) => AudioRef::Path(PathBuf::from(p)),
    };
    let n_frames = fields[2]
        .parse::<u64>()
        .map_err(|e| format!("bad n_frames `{}`: {e}", fields[2]))?;
    Ok(UtteranceRecord {
        id,
        audio,
        n_frames,
        transcript: read_optional(fields[3])?,
        translation: read_optional(fields[4])?,
        provenance: fields[5].parse()?,
        quality_tier: fields[6].parse()?,
    })
}

/// Reads a manifest file; the manifest name is the file stem and the
/// language pair comes from an optional `# language_pair: xx-yy` header.
/// Relative audio paths are taken relative to the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let pair = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# language_pair:"))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "en-xx".into());
    let dir = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, &path.display().to_string(), &pair).map(|mut m| {
        m.name = name;
        for r in &mut m.records {
            if let AudioRef::Path(p) = &mut r.audio {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        m
    })
}

pub fn format_manifest(m: &Manifest) -> Result<String> {
    let mut out = format!("# language_pair: {}\n", m.language_pair);
    for r in &m.records {
        let audio = match &r.audio {
            AudioRef::None => "-".to_string(),
            AudioRef::Path(p) => write_optional(Some(&p.to_string_lossy())),
            AudioRef::Inline(_) => {
                return Err(Error::InvalidConfig(format!(
                    "`{}` holds inline features; cache them to disk before writing the manifest",
                    r.id
                )))
            }
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            escape_field(&r.id),
            audio,
            r.n_frames,
            write_optional(r.transcript.as_deref()),
            write_optional(r.translation.as_deref()),
            r.provenance,
            r.quality_tier
        ));
    }
    Ok(out)
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_manifest(m)?).map_err(|e| Error::io(path, e))
}

/// Length limits applied before training.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterSpec {
    pub max_frames: u64,
    pub min_frames: u64,
    pub max_target_tokens: usize,
}

impl FilterSpec {
    /// The open-data limits: 4000 / 20 frames, 256 target tokens.
    pub const OPEN_DATA: FilterSpec = FilterSpec {
        max_frames: 4000,
        min_frames: 20,
        max_target_tokens: 256,
    };

    pub fn validate(&self) -> Result<()> {
        if self.min_frames > self.max_frames {
            return Err(Error::InvalidConfig(format!(
                "min_frames {} exceeds max_frames {}",
                self.min_frames, self.max_frames
            )));
        }
        Ok(())
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec::OPEN_DATA
    }
}

#[derive(Clone, Debug)]
pub struct Filtered {
    pub manifest: Manifest,
    pub removed: usize,
}

/// Drops records outside the frame bounds and, when a tokenizer is given,
/// records whose translation exceeds the target-token limit.
pub fn filter(m: &Manifest, spec: &FilterSpec, tokenizer: Option<&SubwordModel>) -> Filtered {
    let manifest = m.retain(|r| {
        if r.n_frames < spec.min_frames || r.n_frames > spec.max_frames {
            return false;
        }
        match (tokenizer, r.translation.as_deref()) {
            (Some(tok), Some(t)) => tok.token_count(t) <= spec.max_target_tokens,
            _ => true,
        }
    });
    Filtered {
        removed: m.len() - manifest.len(),
        manifest,
    }
}

/// Seeded sample of whole utterances from an unlabeled pool.
///
/// Records are visited in one seed-determined permutation and taken until the
/// cumulative duration first reaches `target_hours`, so a smaller request under
/// the same seed always yields a prefix of a larger one.
pub fn sample_pool(m: &Manifest, target_hours: f64, seed: u64) -> Result<Manifest> {
    if let Some(r) = m
        .records
        .iter()
        .find(|r| r.provenance != Provenance::Unlabeled)
    {
        return Err(Error::InvalidConfig(format!(
            "pool record `{}` is not unlabeled ({})",
            r.id, r.provenance
        )));
    }
    let available = m.hours();
    if target_hours > available + 1e-9 {
        return Err(Error::PoolTooSmall {
            requested: target_hours,
            available,
        });
    }
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut records = Vec::new();
    let mut frames = 0u64;
    for i in order {
        if frames_to_hours(frames) >= target_hours - 1e-12 {
            break;
        }
        frames += m.records[i].n_frames;
        records.push(m.records[i].clone());
    }
    Ok(Manifest {
        name: format!("{}@{target_hours}h", m.name),
        language_pair: m.language_pair.clone(),
        records,
    })
}

/// Concatenates two manifests; ids get a `name/` prefix from their source.
pub fn mix(a: &Manifest, b: &Manifest) -> Result<Manifest> {
    if a.language_pair != b.language_pair {
        return Err(Error::LanguagePairMismatch(
            a.language_pair.clone(),
            b.language_pair.clone(),
        ));
    }
    let prefixed = |m: &Manifest| {
        m.records
            .iter()
            .map(|r| UtteranceRecord {
                id: format!("{}/{}", m.name, r.id),
                ..r.clone()
            })
            .collect::<Vec<_>>()
    };
    let mut records = prefixed(a);
    records.extend(prefixed(b));
    Manifest::new(
        format!("{}+{}", a.name, b.name),
        a.language_pair.clone(),
        records,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestStats {
    pub n_utterances: usize,
    pub hours: f64,
    /// (utterances, hours) per provenance.
    pub by_provenance: BTreeMap<Provenance, (usize, f64)>,
}

pub fn stats(m: &Manifest) -> ManifestStats {
    let mut frames: BTreeMap<Provenance, (usize, u64)> = BTreeMap::new();
    for r in &m.records {
        let e = frames.entry(r.provenance).or_default();
        e.0 += 1;
        e.1 += r.n_frames;
    }
    ManifestStats {
        n_utterances: m.len(),
        hours: m.hours(),
        by_provenance: frames
            .into_iter()
            .map(|(p, (n, f))| (p, (n, frames_to_hours(f))))
            .collect(),
    }
}

impl ManifestStats {
    /// Two-column `key,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        out.push_str(&format!("n_utterances,{}\n", self.n_utterances));
        out.push_str(&format!("hours,{:.6}\n", self.hours));
        for (p, (n, h)) in &self.by_provenance {
            out.push_str(&format!("{p}.n_utterances,{n}\n{p}.hours,{h:.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, frames: u64, prov: Provenance) -> UtteranceRecord {
        UtteranceRecord {
            id: id.into(),
            audio: AudioRef::None,
            n_frames: frames,
            transcript: Some("hello".into()),
            translation: (prov != Provenance::Unlabeled).then(|| "hallo".into()),
            provenance: prov,
            quality_tier: QualityTier::NotApplicable,
        }
    }

    fn manifest(name: &str, frames: &[u64], prov: Provenance) -> Manifest {
        let records = frames
            .iter()
            .enumerate()
            .map(|(i, &f)| rec(&format!("u{i}"), f, prov))
            .collect();
        Manifest::new(name, "en-de", records).unwrap()
    }

    #[test]
    fn parses_two_lines() {
        let text = "a\t/x/a.feat\t100\thello\thallo\tgold\tn/a\n\
                    b\t-\t200\t-\t-\tunlabeled\tn/a\n";
        let m = parse_manifest(text, "t", "en-de").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records()[1].transcript, None);
        assert_eq!(m.records()[0].audio, AudioRef::Path("/x/a.feat".into()));
    }

    #[test]
    fn missing_id_names_line_one() {
        let err = parse_manifest("\t-\t100\t-\t-\tgold\tn/a\n", "t", "en-de").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "a\t-\t1\t-\t-\tgold\tn/a\na\t-\t1\t-\t-\tgold\tn/a\n";
        assert!(matches!(
            parse_manifest(text, "t", "en-de"),
            Err(Error::Parse { line: 2, .. })
        ));
        let r = rec("x", 1, Provenance::Gold);
        assert!(matches!(
            Manifest::new("m", "en-de", vec![r.clone(), r]),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn pseudo_without_translation_is_invalid() {
        let text = "a\t-\t1\t-\t-\tpseudo_e2e\tn/a\n";
        assert!(parse_manifest(text, "t", "en-de").is_err());
    }

    #[test]
    fn hours_from_frames() {
        let m = manifest("m", &[360_000], Provenance::Gold);
        assert!((m.hours() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest("train", &[10, 20, 30], Provenance::Gold);
        m.records[1].transcript = Some("tab\there -".into());
        m.records[2].translation = Some("-".into());
        let path = dir.path().join("train.tsv");
        write_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn relative_audio_paths_follow_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let text = "a\tfeat/a.feat\t10\t-\t-\tgold\tn/a\nb\t/abs/b.feat\t10\t-\t-\tgold\tn/a\n";
        let path = dir.path().join("m.tsv");
        fs::write(&path, text).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(
            m.records[0].audio,
            AudioRef::Path(dir.path().join("feat/a.feat"))
        );
        assert_eq!(m.records[1].audio, AudioRef::Path("/abs/b.feat".into()));
    }

    #[test]
    fn open_data_filter_bounds() {
        let m = manifest("m", &[4500, 19, 100], Provenance::Gold);
        let out = filter(&m, &FilterSpec::OPEN_DATA, None);
        assert_eq!(out.removed, 2);
        assert_eq!(out.manifest.ids().collect::<Vec<_>>(), vec!["u2"]);
    }

    #[test]
    fn sample_full_pool_and_determinism() {
        let m = manifest("pool", &[100, 200, 300, 400, 500], Provenance::Unlabeled);
        let a = sample_pool(&m, m.hours(), 3).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, sample_pool(&m, m.hours(), 3).unwrap());
        assert!(matches!(
            sample_pool(&m, m.hours() * 2.0, 3),
            Err(Error::PoolTooSmall { .. })
        ));
        assert!(sample_pool(&manifest("g", &[1], Provenance::Gold), 0.0, 1).is_err());
    }

    #[test]
    fn mix_prefixes_and_checks_pair() {
        let a = manifest("a", &[1, 2, 3], Provenance::Gold);
        let b = manifest("b", &[4, 5], Provenance::Unlabeled);
        let m = mix(&a, &b).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.records()[3].id, "b/u0");
        let empty = Manifest::empty("e", "en-de");
        let ae = mix(&a, &empty).unwrap();
        assert_eq!(ae.len(), 3);
        assert_eq!(ae.records()[0].id, "a/u0");
        let mut fr = b.clone();
        fr.language_pair = "en-fr".into();
        assert!(matches!(mix(&a, &fr), Err(Error::LanguagePairMismatch(..))));
    }

    #[test]
    fn stats_breakdown() {
        let e = stats(&Manifest::empty("e", "en-de"));
        assert_eq!((e.n_utterances, e.hours), (0, 0.0));
        let mut pseudo = manifest("p", &[500; 2], Provenance::Gold);
        for r in &mut pseudo.records {
            r.provenance = Provenance::PseudoCascade;
        }
        let m = mix(&manifest("g", &[500; 3], Provenance::Gold), &pseudo).unwrap();
        let s = stats(&m);
        assert_eq!(s.by_provenance[&Provenance::Gold].0, 3);
        assert_eq!(s.by_provenance[&Provenance::PseudoCascade].0, 2);
        assert!(s.to_csv().contains("pseudo_cascade.n_utterances,2"));
    }

    #[test]
    fn stats_arithmetic() {
        let m = manifest("m", &[500; 100], Provenance::Gold);
        assert!((stats(&m).hours - 100.0 * 5.0 / 3600.0).abs() < 1e-12);
        // 230k utterances of 6.18 s each.
        let big = manifest("mustc", &vec![618; 230_000], Provenance::Gold);
        assert!((stats(&big).hours - 395.0).abs() < 0.5);
    }

    proptest! {
        #[test]
        fn filter_idempotent_and_order_preserving(frames in proptest::collection::vec(0u64..5000, 0..40)) {
            let m = manifest("m", &frames, Provenance::Gold);
            let once = filter(&m, &FilterSpec::OPEN_DATA, None).manifest;
            let twice = filter(&once, &FilterSpec::OPEN_DATA, None).manifest;
            prop_assert_eq!(&once, &twice);
            let pos: Vec<usize> = once.ids().map(|id| m.records().iter().position(|r| r.id == id).unwrap()).collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn sample_pool_nests(frames in proptest::collection::vec(1u64..1000, 1..50), seed in 0u64..1000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let m = manifest("pool", &frames, Provenance::Unlabeled);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = sample_pool(&m, lo * m.hours(), seed).unwrap();
            let large = sample_pool(&m, hi * m.hours(), seed).unwrap();
            let large_ids: HashSet<&str> = large.ids().collect();
            prop_assert!(small.ids().all(|id| large_ids.contains(id)));
            // Overshoot by at most one utterance.
            let max_utt = frames.iter().copied().max().unwrap();
            prop_assert!(large.hours() >= hi * m.hours() - 1e-9);
            prop_assert!(large.hours() <= hi * m.hours() + frames_to_hours(max_utt) + 1e-9);
        }

        #[test]
        fn mix_cardinality(n in 0usize..20, k in 0usize..20) {
            let a = manifest("a", &vec![10; n], Provenance::Gold);
            let b = manifest("b", &vec![10; k], Provenance::Gold);
            prop_assert_eq!(stats(&mix(&a, &b).unwrap()).n_utterances, n + k);
        }
    }
}
