//! TOML experiment configuration.
//!
//! ```toml
//! [data]
//! baseline = "baseline.tsv"   # low-resource gold ST manifest
//! pool = "pool.tsv"           # unlabeled audio
//! dev = "dev.tsv"
//! test = "test.tsv"
//! tokenizer = "tgt.model"     # ST target tokenizer
//! asr_train = "gold.tsv"      # optional, for encoder pretraining
//! src_tokenizer = "src.model" # optional, ditto
//!
//! [model]
//! variants = ["base"]
//!
//! [[labeler]]
//! name = "cascade"
//! kind = "cascade"
//! quality = "high"
//! asr_checkpoint = "asr.ckpt"
//! asr_tokenizer = "src.model"
//! lm = "lm.arpa"
//! mt_checkpoint = "mt.ckpt"
//! mt_src_tokenizer = "src.model"
//! mt_tgt_tokenizer = "tgt.model"
//!
//! [[labeler]]
//! name = "e2e"
//! kind = "e2e"
//! st_checkpoint = "st.ckpt"
//! tokenizer = "tgt.model"
//!
//! [sweep]
//! hours = [0.0, 0.5]
//! finetune = [false, true]
//!
//! [seeds]
//! values = [1, 2, 3]
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_manifest, FilterSpec, QualityTier};
use crate::decode::{BeamConfig, Lexicon};
use crate::error::{Error, Result};
use crate::frontend::FeatureConfig;
use crate::ngram::{self, NgramModel};
use crate::nnet::model::SizeVariant;
use crate::optim::load_checkpoint;
use crate::subword::SubwordModel;

use super::{Cascade, EndToEnd, Experiment, Labeler, NamedLabeler, SweepSettings, TrainSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub baseline: PathBuf,
    pub pool: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub tokenizer: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_tokenizer: Option<PathBuf>,
    #[serde(default)]
    pub features: FeatureConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variants: Vec<SizeVariant>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variants: vec![SizeVariant::Base],
        }
    }
}

fn ctc_beam() -> usize {
    50
}
fn lm_weight() -> f64 {
    0.5
}
fn mt_beam() -> usize {
    2
}
fn st_beam() -> usize {
    20
}
fn high() -> String {
    "high".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelerKind {
    Cascade {
        asr_checkpoint: PathBuf,
        asr_tokenizer: PathBuf,
        lm: PathBuf,
        mt_checkpoint: PathBuf,
        mt_src_tokenizer: PathBuf,
        mt_tgt_tokenizer: PathBuf,
        #[serde(default = "ctc_beam")]
        ctc_beam: usize,
        #[serde(default = "lm_weight")]
        lm_weight: f64,
        #[serde(default)]
        word_bonus: f64,
        #[serde(default = "mt_beam")]
        mt_beam: usize,
    },
    E2e {
        st_checkpoint: PathBuf,
        tokenizer: PathBuf,
        #[serde(default = "st_beam")]
        beam: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerSection {
    pub name: String,
    /// `high`, `low` or `n/a`.
    #[serde(default = "high")]
    pub quality: String,
    #[serde(flatten)]
    pub kind: LabelerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub hours: Vec<f64>,
    pub finetune: Vec<bool>,
    pub labeler: Option<String>,
    pub sample_seed: u64,
    pub ablation_hours: f64,
    pub eval_beam: usize,
    pub jobs: usize,
    pub train: TrainSetup,
    pub finetune_train: TrainSetup,
    pub filter: FilterSpec,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSettings::default();
        SweepSection {
            hours: s.hours,
            finetune: s.finetune,
            labeler: s.labeler,
            sample_seed: s.sample_seed,
            ablation_hours: s.ablation_hours,
            eval_beam: s.eval_beam,
            jobs: s.jobs,
            train: s.train,
            finetune_train: s.finetune_train,
            filter: s.filter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub values: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub labeler: Vec<LabelerSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    pub seeds: SeedsSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("{origin}: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn settings(&self) -> SweepSettings {
        let s = &self.sweep;
        SweepSettings {
            hours: s.hours.clone(),
            variants: self.model.variants.clone(),
            finetune: s.finetune.clone(),
            seeds: self.seeds.values.clone(),
            labeler: s.labeler.clone(),
            sample_seed: s.sample_seed,
            ablation_hours: s.ablation_hours,
            train: s.train.clone(),
            finetune_train: s.finetune_train.clone(),
            eval_beam: s.eval_beam,
            filter: s.filter,
            jobs: s.jobs.max(1),
        }
    }

    fn referenced(&self) -> Vec<&Path> {
        let d = &self.data;
        let mut out: Vec<&Path> = vec![&d.baseline, &d.pool, &d.dev, &d.test, &d.tokenizer];
        out.extend(d.asr_train.as_deref());
        out.extend(d.src_tokenizer.as_deref());
        for l in &self.labeler {
            match &l.kind {
                LabelerKind::Cascade {
                    asr_checkpoint,
                    asr_tokenizer,
                    lm,
                    mt_checkpoint,
                    mt_src_tokenizer,
                    mt_tgt_tokenizer,
                    ..
                } => out.extend([
                    asr_checkpoint.as_path(),
                    asr_tokenizer,
                    lm,
                    mt_checkpoint,
                    mt_src_tokenizer,
                    mt_tgt_tokenizer,
                ]),
                LabelerKind::E2e {
                    st_checkpoint,
                    tokenizer,
                    ..
                } => out.extend([st_checkpoint.as_path(), tokenizer]),
            }
        }
        out
    }

    /// Checks settings and that every referenced file exists.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.settings().validate()?;
        for l in &self.labeler {
            l.quality
                .parse::<QualityTier>()
                .map_err(Error::InvalidConfig)?;
        }
        for p in self.referenced() {
            let full = base.join(p);
            if !full.exists() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "referenced file does not exist",
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Loads every manifest, tokenizer, LM and checkpoint.
    pub fn resolve(&self, base: &Path) -> Result<Experiment> {
        self.validate(base)?;
        let p = |x: &Path| base.join(x);
        let d = &self.data;
        let mut labelers = Vec::with_capacity(self.labeler.len());
        for l in &self.labeler {
            let labeler = match &l.kind {
                LabelerKind::Cascade {
                    asr_checkpoint,
                    asr_tokenizer,
                    lm,
                    mt_checkpoint,
                    mt_src_tokenizer,
                    mt_tgt_tokenizer,
                    ctc_beam,
                    lm_weight,
                    word_bonus,
                    mt_beam,
                } => {
                    let asr_tok = SubwordModel::load(p(asr_tokenizer))?;
                    let lm = NgramModel::read_arpa(p(lm))?;
                    let lexicon = lexicon_from_lm(&lm, &asr_tok)?;
                    let mut c = Cascade::new(
                        load_checkpoint(p(asr_checkpoint))?.params,
                        asr_tok,
                        lexicon,
                        Some(lm),
                        load_checkpoint(p(mt_checkpoint))?.params,
                        SubwordModel::load(p(mt_src_tokenizer))?,
                        SubwordModel::load(p(mt_tgt_tokenizer))?,
                    );
                    c.ctc_beam = BeamConfig {
                        lm_weight: *lm_weight,
                        word_bonus: *word_bonus,
                        ..BeamConfig::with_beam(*ctc_beam)
                    };
                    c.mt_beam = BeamConfig::with_beam(*mt_beam);
                    Labeler::Cascade(Box::new(c))
                }
                LabelerKind::E2e {
                    st_checkpoint,
                    tokenizer,
                    beam,
                } => {
                    let mut e = EndToEnd::new(
                        load_checkpoint(p(st_checkpoint))?.params,
                        SubwordModel::load(p(tokenizer))?,
                    );
                    e.beam = BeamConfig::with_beam(*beam);
                    Labeler::EndToEnd(Box::new(e))
                }
            };
            labelers.push(NamedLabeler {
                name: l.name.clone(),
                tier: l.quality.parse().map_err(Error::InvalidConfig)?,
                labeler,
            });
        }
        let mut exp = Experiment::new(
            load_manifest(p(&d.baseline))?,
            load_manifest(p(&d.pool))?,
            load_manifest(p(&d.dev))?,
            load_manifest(p(&d.test))?,
            SubwordModel::load(p(&d.tokenizer))?,
            labelers,
            d.features.clone(),
            self.settings(),
        )?;
        if let (Some(a), Some(t)) = (&d.asr_train, &d.src_tokenizer) {
            exp = exp.with_asr_data(load_manifest(p(a))?, SubwordModel::load(p(t))?);
        }
        Ok(exp)
    }
}

/// The lexicon of a cascade: every LM word except the sentence markers.
pub fn lexicon_from_lm(lm: &NgramModel, tok: &SubwordModel) -> Result<Lexicon> {
    let words = lm
        .vocab()
        .iter()
        .filter(|w| ![ngram::SENT_BEGIN, ngram::SENT_END, ngram::UNKNOWN].contains(&w.as_str()));
    Lexicon::from_tokenizer(words, tok)
}
