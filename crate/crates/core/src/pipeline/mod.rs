//! Experiment orchestration: baseline and mixture training, fine-tuning on
//! clean data, sweeps over pseudo-label hours, and the ablations.

pub mod config;
pub mod desk;
pub mod label;

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    mix, sample_pool, AudioRef, FilterSpec, Manifest, QualityTier, UtteranceRecord,
};
use crate::decode::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::eval::{bleu, wer};
use crate::exec;
use crate::frontend::{load_features, FeatureConfig};
use crate::nnet::model::{
    init, transfer_encoder, Descriptor, Example, Head, Input, ModelParams, ModelRole, OwnedInput,
    SizeVariant, N_SPECIAL,
};
use crate::nnet::Tensor;
use crate::optim::{
    self, checkpoint_bytes, checkpoint_from_bytes, AdamConfig, BatchSpec, ScheduleConfig, StopSpec,
    TrainOutcome, TrainerState,
};
use crate::subword::SubwordModel;

use label::required;
pub use label::{
    labeler_quality, pseudo_label, pseudo_label_cascade, pseudo_label_e2e, Cascade, EndToEnd,
    LabelOutcome, Labeler, LabelerQuality, NamedLabeler,
};

/// Optimizer, batching and stopping settings for one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSetup {
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub batch: BatchSpec,
    pub stop: StopSpec,
}

pub fn record_features(r: &UtteranceRecord, cfg: &FeatureConfig) -> Result<Arc<Tensor>> {
    match &r.audio {
        AudioRef::Inline(t) => Ok(t.clone()),
        AudioRef::Path(p) => Ok(Arc::new(load_features(p, cfg)?)),
        AudioRef::None => Err(Error::InvalidConfig(format!(
            "record `{}` has no audio",
            r.id
        ))),
    }
}

/// Seq2seq target ids: tokenizer ids shifted past EOS/BOS.
pub fn to_target(tok: &SubwordModel, text: &str) -> Vec<usize> {
    tok.encode_ids(text)
        .into_iter()
        .map(|i| i + N_SPECIAL)
        .collect()
}

pub fn from_target(tok: &SubwordModel, ids: &[usize]) -> String {
    let ids: Vec<usize> = ids
        .iter()
        .filter(|&&i| i >= N_SPECIAL)
        .map(|&i| i - N_SPECIAL)
        .collect();
    tok.decode_ids(&ids)
}

/// Speech-to-translation examples; every record needs a translation.
pub fn st_examples(
    m: &Manifest,
    tok: &SubwordModel,
    features: &FeatureConfig,
) -> Result<Vec<Example>> {
    m.records()
        .iter()
        .map(|r| {
            Ok(Example {
                input: OwnedInput::Features(record_features(r, features)?),
                target: to_target(tok, required(&r.translation, &r.id, "translation")?),
            })
        })
        .collect()
}

/// Speech-to-transcript examples. CTC labels are tokenizer ids plus one;
/// utterances too short to align their labels are skipped.
pub fn asr_examples(
    m: &Manifest,
    tok: &SubwordModel,
    desc: &Descriptor,
    features: &FeatureConfig,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(m.len());
    for r in m.records() {
        let text = required(&r.transcript, &r.id, "transcript")?;
        let input = record_features(r, features)?;
        let target = match desc.head {
            Head::Seq2Seq => to_target(tok, text),
            Head::Ctc => {
                let t: Vec<usize> = tok.encode_ids(text).into_iter().map(|i| i + 1).collect();
                if crate::nnet::ctc_min_frames(&t) > desc.encoder_len(input.rows()) {
                    continue;
                }
                t
            }
        };
        out.push(Example {
            input: OwnedInput::Features(input),
            target,
        });
    }
    Ok(out)
}

/// Transcript-to-translation examples from text-only records.
pub fn mt_examples(m: &Manifest, src: &SubwordModel, tgt: &SubwordModel) -> Result<Vec<Example>> {
    m.records()
        .iter()
        .map(|r| {
            let s = src.encode_ids(required(&r.transcript, &r.id, "transcript")?);
            Ok(Example {
                input: OwnedInput::Tokens(s),
                target: to_target(tgt, required(&r.translation, &r.id, "translation")?),
            })
        })
        .filter(|e: &Result<Example>| e.as_ref().map_or(true, |e| !e.input.is_empty()))
        .collect()
}

pub fn feature_dim(m: &Manifest, features: &FeatureConfig) -> Result<usize> {
    let r = m
        .records()
        .first()
        .ok_or_else(|| Error::InvalidConfig(format!("manifest `{}` is empty", m.name)))?;
    Ok(record_features(r, features)?.cols())
}

pub fn st_descriptor(input_dim: usize, tok: &SubwordModel, size: SizeVariant) -> Descriptor {
    Descriptor::toy(
        ModelRole::St,
        Head::Seq2Seq,
        input_dim,
        tok.vocab_size() + N_SPECIAL,
        size,
    )
}

pub fn asr_descriptor(
    input_dim: usize,
    tok: &SubwordModel,
    head: Head,
    size: SizeVariant,
) -> Descriptor {
    let out = match head {
        Head::Ctc => tok.vocab_size() + 1,
        Head::Seq2Seq => tok.vocab_size() + N_SPECIAL,
    };
    Descriptor::toy(ModelRole::Asr, head, input_dim, out, size)
}

pub fn mt_descriptor(src: &SubwordModel, tgt: &SubwordModel, size: SizeVariant) -> Descriptor {
    Descriptor::toy(
        ModelRole::Mt,
        Head::Seq2Seq,
        src.vocab_size(),
        tgt.vocab_size() + N_SPECIAL,
        size,
    )
}

/// Trains from `params` with a fresh optimizer seeded by `seed`.
pub fn train_from(
    params: ModelParams,
    seed: u64,
    data: &[Example],
    dev: &[Example],
    setup: &TrainSetup,
    jobs: usize,
) -> Result<(TrainerState, TrainOutcome)> {
    let mut state = TrainerState::new(params, setup.schedule.clone(), setup.adam.clone(), seed);
    let out = optim::train(&mut state, data, dev, &setup.batch, &setup.stop, jobs)?;
    Ok((state, out))
}

pub fn train_fresh(
    desc: &Descriptor,
    seed: u64,
    data: &[Example],
    dev: &[Example],
    setup: &TrainSetup,
    jobs: usize,
) -> Result<(TrainerState, TrainOutcome)> {
    train_from(init(desc, seed)?, seed, data, dev, setup, jobs)
}

/// State a fine-tuning run starts from: `best` reloaded from checkpoint
/// bytes, moments and step kept, data cursor reset.
pub fn finetune_start(best: &TrainerState) -> Result<TrainerState> {
    let mut state = checkpoint_from_bytes(&checkpoint_bytes(best)).map_err(Error::InvalidConfig)?;
    state.reset_cursor();
    Ok(state)
}

/// Beam-decodes every record of a speech manifest with a seq2seq model.
pub fn decode_manifest(
    params: &ModelParams,
    tok: &SubwordModel,
    m: &Manifest,
    beam: &BeamConfig,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<Vec<String>> {
    exec::map_ordered(m.records(), jobs, |r| {
        let f = record_features(r, features)?;
        let hyps = beam_search(params, Input::Features(&f), beam)?;
        Ok(from_target(tok, &hyps[0].tokens))
    })
    .into_iter()
    .collect()
}

pub fn evaluate_bleu(
    params: &ModelParams,
    tok: &SubwordModel,
    m: &Manifest,
    beam: &BeamConfig,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<f64> {
    let hyps = decode_manifest(params, tok, m, beam, features, jobs)?;
    let refs = m
        .records()
        .iter()
        .map(|r| required(&r.translation, &r.id, "translation").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    Ok(bleu(&hyps, &refs)?.score)
}

/// WER in percent of a seq2seq ASR model on a manifest with transcripts.
pub fn evaluate_asr_wer(
    params: &ModelParams,
    tok: &SubwordModel,
    m: &Manifest,
    beam: &BeamConfig,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<f64> {
    let hyps = decode_manifest(params, tok, m, beam, features, jobs)?;
    let refs = m
        .records()
        .iter()
        .map(|r| required(&r.transcript, &r.id, "transcript").map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    Ok(wer(&hyps, &refs)?.percent())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub condition: String,
    pub hours: f64,
    pub variant: SizeVariant,
    pub finetuned: bool,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub const ROW_HEADER: &str = "condition,hours,variant,finetuned,seed,metric,value";

/// Metrics emitted for every trained ST condition.
pub const ST_METRICS: [&str; 2] = ["dev_bleu", "test_bleu"];

impl ExperimentRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4}",
            self.condition,
            self.hours,
            self.variant.as_str(),
            self.finetuned,
            self.seed,
            self.metric,
            self.value
        )
    }
}

pub fn rows_csv(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{ROW_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    /// Pseudo-label hours per condition, ascending; 0 is the baseline.
    pub hours: Vec<f64>,
    pub variants: Vec<SizeVariant>,
    pub finetune: Vec<bool>,
    pub seeds: Vec<u64>,
    /// Labeler used by `sweep`; the first one when unset.
    pub labeler: Option<String>,
    /// Seed of the pool subsample, shared by every condition.
    pub sample_seed: u64,
    /// Pseudo-label hours used by the ablations.
    pub ablation_hours: f64,
    pub train: TrainSetup,
    pub finetune_train: TrainSetup,
    pub eval_beam: usize,
    pub filter: FilterSpec,
    pub jobs: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let finetune_train = TrainSetup {
            stop: StopSpec {
                eval_at_start: true,
                ..StopSpec::default()
            },
            ..TrainSetup::default()
        };
        SweepSettings {
            hours: vec![0.0],
            variants: vec![SizeVariant::Base],
            finetune: vec![false],
            seeds: vec![1],
            labeler: None,
            sample_seed: 0,
            ablation_hours: 0.0,
            train: TrainSetup::default(),
            finetune_train,
            eval_beam: 20,
            filter: FilterSpec::default(),
            jobs: 1,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.hours.is_empty() {
            return bad("sweep hours list is empty");
        }
        if self.hours.windows(2).any(|w| w[0] >= w[1]) || self.hours.iter().any(|h| !(*h >= 0.0)) {
            return bad("sweep hours must be non-negative and strictly ascending");
        }
        if self.variants.is_empty() || self.finetune.is_empty() || self.seeds.is_empty() {
            return bad("variants, finetune and seeds lists must be nonempty");
        }
        if self.eval_beam == 0 {
            return bad("eval_beam must be at least 1");
        }
        self.filter.validate()
    }
}

/// Everything a sweep or ablation needs, fully loaded.
#[derive(Debug)]
pub struct Experiment {
    /// Low-resource gold ST data.
    pub baseline: Manifest,
    pub pool: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
    /// Target-side tokenizer of the ST models.
    pub tokenizer: SubwordModel,
    /// ASR data and source tokenizer for encoder pretraining.
    pub asr_train: Option<Manifest>,
    pub src_tokenizer: Option<SubwordModel>,
    pub labelers: Vec<NamedLabeler>,
    pub features: FeatureConfig,
    pub settings: SweepSettings,
    pseudo: Mutex<BTreeMap<String, Arc<LabelOutcome>>>,
    runs: Mutex<BTreeMap<String, Vec<ExperimentRow>>>,
}

/// One trained point: mixture of baseline plus `hours` of one labeler's output.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub label: String,
    pub labeler: Option<String>,
    pub hours: f64,
    pub variant: SizeVariant,
    pub finetune: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub condition: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<ExperimentRow>,
    pub failures: Vec<Failure>,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        rows_csv(&self.rows)
    }

    fn extend(&mut self, other: SweepResult) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
    }
}

impl Experiment {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        baseline: Manifest,
        pool: Manifest,
        dev: Manifest,
        test: Manifest,
        tokenizer: SubwordModel,
        labelers: Vec<NamedLabeler>,
        features: FeatureConfig,
        settings: SweepSettings,
    ) -> Result<Self> {
        settings.validate()?;
        let mut names = HashSet::new();
        for l in &labelers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate labeler name `{}`",
                    l.name
                )));
            }
        }
        Ok(Experiment {
            baseline,
            pool,
            dev,
            test,
            tokenizer,
            asr_train: None,
            src_tokenizer: None,
            labelers,
            features,
            settings,
            pseudo: Mutex::new(BTreeMap::new()),
            runs: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn with_asr_data(mut self, asr_train: Manifest, src_tokenizer: SubwordModel) -> Self {
        self.asr_train = Some(asr_train);
        self.src_tokenizer = Some(src_tokenizer);
        self
    }

    pub fn labeler(&self, name: &str) -> Result<&NamedLabeler> {
        self.labelers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown labeler `{name}`")))
    }

    fn sweep_labeler(&self) -> Result<Option<&NamedLabeler>> {
        match &self.settings.labeler {
            Some(n) => self.labeler(n).map(Some),
            None => Ok(self.labelers.first()),
        }
    }

    /// Labels the whole pool once per labeler; later calls reuse the result.
    pub fn pseudo_labels(&self, name: &str) -> Result<Arc<LabelOutcome>> {
        if let Some(p) = self.pseudo.lock().unwrap().get(name) {
            return Ok(p.clone());
        }
        let l = self.labeler(name)?;
        let out = Arc::new(pseudo_label(
            &self.pool,
            l,
            &self.settings.filter,
            Some(&self.tokenizer),
            &self.features,
            self.settings.jobs,
        )?);
        self.pseudo
            .lock()
            .unwrap()
            .insert(name.to_string(), out.clone());
        Ok(out)
    }

    /// Baseline plus the pseudo-labeled part of a seeded `hours` pool sample.
    pub fn mixture(&self, labeler: Option<&str>, hours: f64) -> Result<Manifest> {
        let name = match labeler {
            Some(n) if hours > 0.0 => n,
            _ => return Ok(self.baseline.clone()),
        };
        let ids: HashSet<String> = sample_pool(&self.pool, hours, self.settings.sample_seed)?
            .ids()
            .map(str::to_string)
            .collect();
        let labeled = self.pseudo_labels(name)?;
        let part = labeled.manifest.retain(|r| ids.contains(&r.id));
        mix(&self.baseline, &part)
    }

    fn eval_rows(
        &self,
        params: &ModelParams,
        c: &Condition,
        finetuned: bool,
    ) -> Result<Vec<ExperimentRow>> {
        let beam = BeamConfig::with_beam(self.settings.eval_beam);
        let jobs = self.settings.jobs;
        let mut rows = Vec::with_capacity(ST_METRICS.len());
        for (metric, m) in ST_METRICS.iter().zip([&self.dev, &self.test]) {
            rows.push(ExperimentRow {
                condition: c.label.clone(),
                hours: c.hours,
                variant: c.variant,
                finetuned,
                seed: c.seed,
                metric: metric.to_string(),
                value: evaluate_bleu(params, &self.tokenizer, m, &beam, &self.features, jobs)?,
            });
        }
        Ok(rows)
    }

    /// Runs are shared across condition labels: the same labeler, hours,
    /// variant and seed always train the same model.
    fn run_key(c: &Condition, finetuned: bool) -> String {
        format!(
            "{:?}|{}|{:?}|{}|{}",
            c.labeler, c.hours, c.variant, c.seed, finetuned
        )
    }

    /// Trains on the mixture, then optionally fine-tunes on the baseline data
    /// from a reloaded checkpoint with the optimizer state kept. Returns rows
    /// for each requested `finetuned` flag; the mixture model is shared.
    fn run_group(&self, c: &Condition, flags: &[bool]) -> Result<Vec<ExperimentRow>> {
        let cached: Vec<Option<Vec<ExperimentRow>>> = {
            let runs = self.runs.lock().unwrap();
            flags
                .iter()
                .map(|&f| runs.get(&Self::run_key(c, f)).cloned())
                .collect()
        };
        if cached.iter().all(Option::is_some) {
            let relabel = |r: ExperimentRow| ExperimentRow {
                condition: c.label.clone(),
                ..r
            };
            return Ok(cached
                .into_iter()
                .flatten()
                .flatten()
                .map(relabel)
                .collect());
        }
        let s = &self.settings;
        let jobs = s.jobs;
        let data = self.mixture(c.labeler.as_deref(), c.hours)?;
        let train_ex = st_examples(&data, &self.tokenizer, &self.features)?;
        let dev_ex = st_examples(&self.dev, &self.tokenizer, &self.features)?;
        let desc = st_descriptor(
            feature_dim(&data, &self.features)?,
            &self.tokenizer,
            c.variant,
        );
        let (_, mixed) = train_fresh(&desc, c.seed, &train_ex, &dev_ex, &s.train, jobs)?;
        let mut rows = Vec::new();
        if flags.contains(&false) {
            rows.extend(self.eval_rows(&mixed.best, c, false)?);
        }
        if flags.contains(&true) {
            let mut state = finetune_start(&mixed.best_state)?;
            let base_ex = st_examples(&self.baseline, &self.tokenizer, &self.features)?;
            let tuned = optim::train(
                &mut state,
                &base_ex,
                &dev_ex,
                &s.finetune_train.batch,
                &s.finetune_train.stop,
                jobs,
            )?;
            debug_assert_eq!(tuned.best.descriptor, desc);
            rows.extend(self.eval_rows(&tuned.best, c, true)?);
        }
        let mut runs = self.runs.lock().unwrap();
        for f in [false, true] {
            let part: Vec<ExperimentRow> =
                rows.iter().filter(|r| r.finetuned == f).cloned().collect();
            if !part.is_empty() {
                runs.insert(Self::run_key(c, f), part);
            }
        }
        Ok(rows)
    }

    pub fn run_condition(&self, c: &Condition) -> Result<Vec<ExperimentRow>> {
        self.run_group(c, &[c.finetune])
            .map_err(|e| e.in_condition(c.label.clone()))
    }

    fn condition(
        &self,
        labeler: Option<&str>,
        label: String,
        hours: f64,
        variant: SizeVariant,
        seed: u64,
    ) -> Condition {
        Condition {
            label,
            labeler: if hours > 0.0 {
                labeler.map(str::to_string)
            } else {
                None
            },
            hours,
            variant,
            finetune: false,
            seed,
        }
    }

    /// Runs groups (one mixture training each), in parallel when `jobs > 1`,
    /// collecting rows in group order and failures alongside.
    fn run_all(&self, groups: Vec<(Condition, Vec<bool>)>) -> SweepResult {
        let outer = if self.settings.jobs > 1 {
            self.settings.jobs
        } else {
            1
        };
        let results = exec::map_ordered(&groups, outer, |(c, flags)| self.run_group(c, flags));
        let mut out = SweepResult::default();
        for ((c, _), r) in groups.iter().zip(results) {
            match r {
                Ok(rows) => out.rows.extend(rows),
                Err(e) => out.failures.push(Failure {
                    condition: c.label.clone(),
                    seed: c.seed,
                    message: e.to_string(),
                }),
            }
        }
        out
    }

    /// One run per (hours, variant, finetune, seed) with the sweep labeler.
    pub fn sweep(&self) -> Result<SweepResult> {
        let s = &self.settings;
        let labeler = self.sweep_labeler()?.map(|l| l.name.clone());
        if labeler.is_none() && s.hours.iter().any(|&h| h > 0.0) {
            return Err(Error::InvalidConfig(
                "pseudo-label hours requested without a labeler".into(),
            ));
        }
        let mut groups = Vec::new();
        for &hours in &s.hours {
            for &variant in &s.variants {
                for &seed in &s.seeds {
                    let label = match (&labeler, hours > 0.0) {
                        (Some(l), true) => format!("pseudo:{l}"),
                        _ => "baseline".to_string(),
                    };
                    let c = self.condition(labeler.as_deref(), label, hours, variant, seed);
                    groups.push((c, s.finetune.clone()));
                }
            }
        }
        Ok(self.run_all(groups))
    }

    fn quality_rows(&self, l: &NamedLabeler) -> Result<Vec<ExperimentRow>> {
        let q = labeler_quality(&l.labeler, &self.dev, &self.features, self.settings.jobs)?;
        let row = |metric: &str, value: f64| ExperimentRow {
            condition: format!("labeler:{}:{}", l.name, l.tier),
            hours: 0.0,
            variant: self.settings.variants[0],
            finetuned: false,
            seed: self.settings.sample_seed,
            metric: metric.to_string(),
            value,
        };
        let mut rows = vec![row("label_dev_bleu", q.bleu)];
        if let Some(w) = q.wer {
            rows.push(row("label_dev_wer", w));
        }
        Ok(rows)
    }

    /// Encoder pretraining on ASR versus pseudo-labels, paired by seed.
    pub fn ablate_encoder_pretrain(&self) -> Result<SweepResult> {
        let s = &self.settings;
        let (asr_data, src_tok) = match (&self.asr_train, &self.src_tokenizer) {
            (Some(a), Some(t)) => (a, t),
            _ => {
                return Err(Error::InvalidConfig(
                    "encoder pretraining needs ASR data and a source tokenizer".into(),
                ))
            }
        };
        let labeler = self
            .sweep_labeler()?
            .ok_or_else(|| Error::InvalidConfig("pseudo-label arm needs a labeler".into()))?
            .name
            .clone();
        let variant = s.variants[0];
        let mut out = SweepResult::default();
        for &seed in &s.seeds {
            let arm = |seed: u64| -> Result<Vec<ExperimentRow>> {
                let jobs = s.jobs;
                let dim = feature_dim(&self.baseline, &self.features)?;
                let asr_desc = asr_descriptor(dim, src_tok, Head::Seq2Seq, variant);
                let asr_ex = asr_examples(asr_data, src_tok, &asr_desc, &self.features)?;
                let asr_dev = asr_examples(&self.dev, src_tok, &asr_desc, &self.features)?;
                let (_, asr) = train_fresh(&asr_desc, seed, &asr_ex, &asr_dev, &s.train, jobs)?;
                let beam = BeamConfig::with_beam(s.eval_beam);
                let w =
                    evaluate_asr_wer(&asr.best, src_tok, &self.dev, &beam, &self.features, jobs)?;
                let st_desc = st_descriptor(dim, &self.tokenizer, variant);
                let st0 = transfer_encoder(&asr.best, &init(&st_desc, seed)?)?;
                let train_ex = st_examples(&self.baseline, &self.tokenizer, &self.features)?;
                let dev_ex = st_examples(&self.dev, &self.tokenizer, &self.features)?;
                let (_, st) = train_from(st0, seed, &train_ex, &dev_ex, &s.train, jobs)?;
                let c = self.condition(None, "encoder_pretrain".into(), 0.0, variant, seed);
                let mut rows = vec![ExperimentRow {
                    condition: c.label.clone(),
                    hours: 0.0,
                    variant,
                    finetuned: false,
                    seed,
                    metric: "asr_wer".into(),
                    value: w,
                }];
                rows.extend(self.eval_rows(&st.best, &c, false)?);
                Ok(rows)
            };
            match arm(seed) {
                Ok(rows) => out.rows.extend(rows),
                Err(e) => out.failures.push(Failure {
                    condition: "encoder_pretrain".into(),
                    seed,
                    message: e.to_string(),
                }),
            }
            let c = self.condition(
                Some(&labeler),
                "pseudo_label".into(),
                s.ablation_hours,
                variant,
                seed,
            );
            out.extend(self.run_all(vec![(c, vec![false])]));
        }
        Ok(out)
    }

    /// Every configured labeler at the ablation hours, plus its measured quality.
    pub fn ablate_labelers(&self) -> Result<SweepResult> {
        let s = &self.settings;
        let mut out = SweepResult::default();
        let mut groups = Vec::new();
        for l in &self.labelers {
            out.rows.extend(self.quality_rows(l)?);
            for &seed in &s.seeds {
                let c = self.condition(
                    Some(&l.name),
                    format!("labeler:{}", l.name),
                    s.ablation_hours,
                    s.variants[0],
                    seed,
                );
                groups.push((c, vec![false]));
            }
        }
        out.extend(self.run_all(groups));
        Ok(out)
    }

    /// The sweep's nonzero hours with the first high- and low-tier labelers.
    pub fn ablate_label_quality(&self) -> Result<SweepResult> {
        let s = &self.settings;
        let pick = |tier: QualityTier| {
            self.labelers
                .iter()
                .find(|l| l.tier == tier)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("no labeler with quality tier `{tier}`"))
                })
        };
        let (high, low) = (pick(QualityTier::High)?, pick(QualityTier::Low)?);
        let mut out = SweepResult::default();
        let mut groups = Vec::new();
        for l in [high, low] {
            out.rows.extend(self.quality_rows(l)?);
            for &hours in s.hours.iter().filter(|&&h| h > 0.0) {
                for &seed in &s.seeds {
                    let c = self.condition(
                        Some(&l.name),
                        format!("quality:{}", l.tier),
                        hours,
                        s.variants[0],
                        seed,
                    );
                    groups.push((c, vec![false]));
                }
            }
        }
        out.extend(self.run_all(groups));
        Ok(out)
    }

    /// All three ablations.
    pub fn ablate(&self) -> Result<SweepResult> {
        let mut out = self.ablate_encoder_pretrain()?;
        out.extend(self.ablate_labelers()?);
        out.extend(self.ablate_label_quality()?);
        Ok(out)
    }
}
