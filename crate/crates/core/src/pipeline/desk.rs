//! A complete desk-scale experiment on the synthetic task: tokenizers, LM,
//! cascade labelers of two quality tiers, end-to-end labelers, and the
//! low-resource baseline split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{
    lexicon_from_lm, DataSection, ExperimentConfig, LabelerKind, LabelerSection, ModelSection,
    SeedsSection, SweepSection,
};
use crate::corpus::{write_manifest, Manifest, QualityTier};
use crate::decode::{BeamConfig, Lexicon};
use crate::error::{Error, Result};
use crate::frontend::FeatureConfig;
use crate::ngram::{self, NgramModel};
use crate::nnet::model::{Head, ModelParams, SizeVariant};
use crate::optim::{save_checkpoint, AdamConfig, CurveRow, ScheduleConfig, StopSpec, TrainerState};
use crate::subword::{self, SubwordModel, TrainerConfig};
use crate::synthtask::{cache_features, generate, ChannelSpec, SplitSizes, SynthCorpus};

use super::{
    asr_descriptor, asr_examples, feature_dim, mt_descriptor, mt_examples, st_descriptor,
    st_examples, train_fresh, Cascade, EndToEnd, Experiment, Labeler, NamedLabeler, SweepSettings,
    TrainSetup,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub channel: ChannelSpec,
    pub sizes: SplitSizes,
    /// Gold utterances (with translations) in the low-resource ST baseline.
    pub baseline_utts: usize,
    pub src_pieces: usize,
    pub tgt_pieces: usize,
    pub lm_order: usize,
    /// Share of gold transcripts seen by the low-quality ASR.
    pub low_quality_fraction: f64,
    pub lm_weight: f64,
    pub word_bonus: f64,
    pub ctc_beam: usize,
    pub asr: TrainSetup,
    pub mt: TrainSetup,
    /// Also train a large-variant end-to-end labeler.
    pub e2e_large: bool,
    pub settings: SweepSettings,
}

/// Adam at a fixed rate, small batches and frequent dev checks.
pub fn desk_setup(base_lr: f64, frames: u64, max_updates: u64) -> TrainSetup {
    let mut s = TrainSetup::default();
    s.schedule.base_lr = base_lr;
    s.batch.max_frames_per_batch = frames;
    s.stop.max_updates = max_updates;
    s.stop.eval_every = 50;
    s.stop.patience = 5;
    s
}

impl Default for DeskConfig {
    fn default() -> Self {
        let mut settings = SweepSettings {
            hours: vec![0.0, 0.05],
            finetune: vec![false, true],
            ablation_hours: 0.05,
            train: desk_setup(5e-3, 300, 1500),
            eval_beam: 5,
            ..SweepSettings::default()
        };
        settings.finetune_train = TrainSetup {
            stop: StopSpec {
                eval_at_start: true,
                ..settings.train.stop.clone()
            },
            ..settings.train.clone()
        };
        DeskConfig {
            channel: ChannelSpec::default(),
            sizes: SplitSizes::default(),
            baseline_utts: 600,
            src_pieces: 120,
            tgt_pieces: 120,
            lm_order: 4,
            low_quality_fraction: 0.1,
            lm_weight: 0.5,
            word_bonus: 0.0,
            ctc_beam: 16,
            asr: desk_setup(5e-3, 300, 1500),
            mt: desk_setup(5e-3, 75, 1500),
            e2e_large: false,
            settings,
        }
    }
}

impl DeskConfig {
    /// A few dozen utterances and a handful of updates per model; for
    /// exercising the plumbing, not for meaningful scores.
    pub fn smoke() -> Self {
        let quick = |frames| {
            let mut s = desk_setup(5e-3, frames, 20);
            s.stop.eval_every = 10;
            s
        };
        let mut settings = SweepSettings {
            hours: vec![0.0, 0.001],
            finetune: vec![false, true],
            ablation_hours: 0.001,
            train: quick(300),
            eval_beam: 2,
            ..SweepSettings::default()
        };
        settings.finetune_train = quick(300);
        settings.finetune_train.stop.eval_at_start = true;
        DeskConfig {
            sizes: SplitSizes {
                gold: 40,
                pool: 30,
                dev: 10,
                test: 10,
                mt_text: 60,
            },
            baseline_utts: 20,
            ctc_beam: 4,
            asr: quick(300),
            mt: quick(75),
            settings,
            ..DeskConfig::default()
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.settings.seeds = seeds;
        self
    }
}

#[derive(Clone, Debug)]
pub struct DeskModels {
    pub src_tokenizer: SubwordModel,
    pub tgt_tokenizer: SubwordModel,
    pub lm: NgramModel,
    pub lexicon: Lexicon,
    pub asr_high: ModelParams,
    pub asr_low: ModelParams,
    pub mt: ModelParams,
    pub st_base: ModelParams,
    pub st_large: Option<ModelParams>,
}

#[derive(Debug)]
pub struct DeskWorld {
    pub corpus: SynthCorpus,
    pub models: DeskModels,
    pub experiment: Experiment,
    /// Learning curves of the auxiliary models, by name.
    pub curves: Vec<(String, Vec<CurveRow>)>,
}

fn texts(m: &Manifest, transcript: bool) -> Vec<String> {
    m.records()
        .iter()
        .filter_map(|r| {
            if transcript {
                r.transcript.clone()
            } else {
                r.translation.clone()
            }
        })
        .collect()
}

/// Generates the task from `seed` and trains every labeler; the training
/// seed of each auxiliary model is derived from `seed` too.
pub fn build(cfg: &DeskConfig, seed: u64) -> Result<DeskWorld> {
    let jobs = cfg.settings.jobs;
    let features = FeatureConfig::default();
    let corpus = generate(&cfg.channel, &cfg.sizes, seed)?;
    let mut src_text = texts(&corpus.gold, true);
    src_text.extend(texts(&corpus.mt_text, true));
    let mut tgt_text = texts(&corpus.gold, false);
    tgt_text.extend(texts(&corpus.mt_text, false));
    let src_tok = subword::train(&src_text, &TrainerConfig::with_target(cfg.src_pieces))?;
    let tgt_tok = subword::train(&tgt_text, &TrainerConfig::with_target(cfg.tgt_pieces))?;

    let lm = ngram::train(&ngram::tokenize_lines(&src_text), cfg.lm_order)?;
    let lexicon = lexicon_from_lm(&lm, &src_tok)?;

    let dim = feature_dim(&corpus.gold, &features)?;
    let asr_desc = asr_descriptor(dim, &src_tok, Head::Ctc, SizeVariant::Base);
    let asr_dev = asr_examples(&corpus.dev, &src_tok, &asr_desc, &features)?;
    let asr_all = asr_examples(&corpus.gold, &src_tok, &asr_desc, &features)?;
    let n_low = ((cfg.low_quality_fraction * corpus.gold.len() as f64).round() as usize).max(1);
    let asr_few = asr_examples(&corpus.gold.head(n_low), &src_tok, &asr_desc, &features)?;
    let (_, high) = train_fresh(&asr_desc, seed ^ 0xa5, &asr_all, &asr_dev, &cfg.asr, jobs)?;
    let (_, low) = train_fresh(&asr_desc, seed ^ 0xa6, &asr_few, &asr_dev, &cfg.asr, jobs)?;

    let mt_desc = mt_descriptor(&src_tok, &tgt_tok, SizeVariant::Base);
    let mt_train = mt_examples(&corpus.mt_text, &src_tok, &tgt_tok)?;
    let mt_dev = mt_examples(&corpus.dev, &src_tok, &tgt_tok)?;
    let (_, mt) = train_fresh(&mt_desc, seed ^ 0x37, &mt_train, &mt_dev, &cfg.mt, jobs)?;

    let baseline = corpus.gold.head(cfg.baseline_utts).renamed("baseline");
    let st_train = st_examples(&baseline, &tgt_tok, &features)?;
    let st_dev = st_examples(&corpus.dev, &tgt_tok, &features)?;
    let st_setup = &cfg.settings.train;
    let st_desc = st_descriptor(dim, &tgt_tok, SizeVariant::Base);
    let (_, st_base) = train_fresh(&st_desc, seed ^ 0x57, &st_train, &st_dev, st_setup, jobs)?;
    let st_large = if cfg.e2e_large {
        let d = st_descriptor(dim, &tgt_tok, SizeVariant::Large);
        Some(train_fresh(&d, seed ^ 0x58, &st_train, &st_dev, st_setup, jobs)?.1)
    } else {
        None
    };

    let mut curves = vec![
        ("asr_high".to_string(), high.curve.clone()),
        ("asr_low".to_string(), low.curve.clone()),
        ("mt".to_string(), mt.curve.clone()),
        ("st_base".to_string(), st_base.curve.clone()),
    ];
    let st_large = st_large.map(|o| {
        curves.push(("st_large".to_string(), o.curve.clone()));
        o.best
    });
    let cascade = |asr: &ModelParams| {
        let mut c = Cascade::new(
            asr.clone(),
            src_tok.clone(),
            lexicon.clone(),
            Some(lm.clone()),
            mt.best.clone(),
            src_tok.clone(),
            tgt_tok.clone(),
        );
        c.ctc_beam = BeamConfig {
            lm_weight: cfg.lm_weight,
            word_bonus: cfg.word_bonus,
            ..BeamConfig::with_beam(cfg.ctc_beam)
        };
        Labeler::Cascade(Box::new(c))
    };
    let mut e2e = EndToEnd::new(st_base.best.clone(), tgt_tok.clone());
    e2e.beam = BeamConfig::with_beam(cfg.settings.eval_beam.max(1));
    let mut labelers = vec![
        NamedLabeler {
            name: "cascade".into(),
            tier: QualityTier::High,
            labeler: cascade(&high.best),
        },
        NamedLabeler {
            name: "cascade_low".into(),
            tier: QualityTier::Low,
            labeler: cascade(&low.best),
        },
        NamedLabeler {
            name: "e2e".into(),
            tier: QualityTier::NotApplicable,
            labeler: Labeler::EndToEnd(Box::new(e2e.clone())),
        },
    ];
    if let Some(p) = &st_large {
        labelers.push(NamedLabeler {
            name: "e2e_large".into(),
            tier: QualityTier::NotApplicable,
            labeler: Labeler::EndToEnd(Box::new(EndToEnd {
                st: p.clone(),
                ..e2e.clone()
            })),
        });
    }

    let experiment = Experiment::new(
        baseline,
        corpus.pool.clone(),
        corpus.dev.clone(),
        corpus.test.clone(),
        tgt_tok.clone(),
        labelers,
        features,
        cfg.settings.clone(),
    )?
    .with_asr_data(corpus.gold.clone(), src_tok.clone());
    Ok(DeskWorld {
        models: DeskModels {
            src_tokenizer: src_tok,
            tgt_tokenizer: tgt_tok,
            lm,
            lexicon,
            asr_high: high.best,
            asr_low: low.best,
            mt: mt.best,
            st_base: st_base.best,
            st_large,
        },
        corpus,
        experiment,
        curves,
    })
}

/// File names used by [`DeskWorld::write_to`].
pub const CONFIG_FILE: &str = "exp.toml";

impl DeskWorld {
    /// Writes the corpus, tokenizers, LM and every labeler checkpoint to `dir`
    /// together with an `exp.toml` that reproduces this experiment.
    pub fn write_to(&self, dir: &Path, cfg: &DeskConfig) -> Result<ExperimentConfig> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.write_to(dir)?;
        let e = &self.experiment;
        write_manifest(&cache_features(&e.baseline, dir)?, dir.join("baseline.tsv"))?;
        let m = &self.models;
        m.src_tokenizer.save(dir.join("src.model"))?;
        m.tgt_tokenizer.save(dir.join("tgt.model"))?;
        m.lm.write_arpa(dir.join("lm.arpa"))?;
        let save = |p: &ModelParams, name: &str| -> Result<PathBuf> {
            let state = TrainerState::new(
                p.clone(),
                ScheduleConfig::default(),
                AdamConfig::default(),
                p.seed,
            );
            save_checkpoint(&state, dir.join(name))?;
            Ok(PathBuf::from(name))
        };
        let cascade =
            |name: &str, quality: QualityTier, asr: &ModelParams| -> Result<LabelerSection> {
                Ok(LabelerSection {
                    name: name.into(),
                    quality: quality.as_str().into(),
                    kind: LabelerKind::Cascade {
                        asr_checkpoint: save(asr, &format!("{name}.asr.ckpt"))?,
                        asr_tokenizer: "src.model".into(),
                        lm: "lm.arpa".into(),
                        mt_checkpoint: "mt.ckpt".into(),
                        mt_src_tokenizer: "src.model".into(),
                        mt_tgt_tokenizer: "tgt.model".into(),
                        ctc_beam: cfg.ctc_beam,
                        lm_weight: cfg.lm_weight,
                        word_bonus: cfg.word_bonus,
                        mt_beam: 2,
                    },
                })
            };
        save(&m.mt, "mt.ckpt")?;
        let e2e = |name: &str, p: &ModelParams| -> Result<LabelerSection> {
            Ok(LabelerSection {
                name: name.into(),
                quality: QualityTier::NotApplicable.as_str().into(),
                kind: LabelerKind::E2e {
                    st_checkpoint: save(p, &format!("{name}.ckpt"))?,
                    tokenizer: "tgt.model".into(),
                    beam: cfg.settings.eval_beam.max(1),
                },
            })
        };
        let mut labeler = vec![
            cascade("cascade", QualityTier::High, &m.asr_high)?,
            cascade("cascade_low", QualityTier::Low, &m.asr_low)?,
            e2e("e2e", &m.st_base)?,
        ];
        if let Some(p) = &m.st_large {
            labeler.push(e2e("e2e_large", p)?);
        }
        let s = &cfg.settings;
        let out = ExperimentConfig {
            data: DataSection {
                baseline: "baseline.tsv".into(),
                pool: "pool.tsv".into(),
                dev: "dev.tsv".into(),
                test: "test.tsv".into(),
                tokenizer: "tgt.model".into(),
                asr_train: Some("gold.tsv".into()),
                src_tokenizer: Some("src.model".into()),
                features: e.features.clone(),
            },
            model: ModelSection {
                variants: s.variants.clone(),
            },
            labeler,
            sweep: SweepSection {
                hours: s.hours.clone(),
                finetune: s.finetune.clone(),
                labeler: s.labeler.clone(),
                sample_seed: s.sample_seed,
                ablation_hours: s.ablation_hours,
                eval_beam: s.eval_beam,
                jobs: s.jobs,
                train: s.train.clone(),
                finetune_train: s.finetune_train.clone(),
                filter: s.filter,
            },
            seeds: SeedsSection {
                values: s.seeds.clone(),
            },
        };
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, out.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(out)
    }
}
