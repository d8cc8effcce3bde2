//! Pseudo-labelers: an ASR+MT cascade or a single end-to-end ST model.

use std::sync::Arc;

use crate::corpus::{filter, FilterSpec, Manifest, Provenance, QualityTier, UtteranceRecord};
use crate::decode::{beam_search, ctc_prefix_beam, BeamConfig, Lexicon};
use crate::error::{Error, Result};
use crate::eval::{bleu, wer};
use crate::exec;
use crate::frontend::FeatureConfig;
use crate::ngram::NgramModel;
use crate::nnet::model::{ctc_log_posteriors, Input, ModelParams};
use crate::nnet::Tensor;
use crate::subword::SubwordModel;

use super::{from_target, record_features};

#[derive(Clone, Debug)]
pub struct Cascade {
    /// CTC acoustic model; labels are `asr_tokenizer` ids plus one.
    pub asr: ModelParams,
    pub asr_tokenizer: SubwordModel,
    pub lexicon: Lexicon,
    pub lm: Option<NgramModel>,
    pub ctc_beam: BeamConfig,
    pub mt: ModelParams,
    pub mt_src_tokenizer: SubwordModel,
    pub mt_tgt_tokenizer: SubwordModel,
    pub mt_beam: BeamConfig,
}

impl Cascade {
    /// Beam 2 for MT, the CTC beam defaults otherwise.
    pub fn new(
        asr: ModelParams,
        asr_tokenizer: SubwordModel,
        lexicon: Lexicon,
        lm: Option<NgramModel>,
        mt: ModelParams,
        mt_src_tokenizer: SubwordModel,
        mt_tgt_tokenizer: SubwordModel,
    ) -> Self {
        Cascade {
            asr,
            asr_tokenizer,
            lexicon,
            lm,
            ctc_beam: BeamConfig::ctc(),
            mt,
            mt_src_tokenizer,
            mt_tgt_tokenizer,
            mt_beam: BeamConfig::with_beam(2),
        }
    }

    pub fn transcribe(&self, features: &Tensor) -> Result<String> {
        let lp = ctc_log_posteriors(&self.asr, Input::Features(features))?;
        let hyp = ctc_prefix_beam(&lp, &self.lexicon, self.lm.as_ref(), &self.ctc_beam)?;
        Ok(hyp.words.join(" "))
    }

    pub fn translate_text(&self, text: &str) -> Result<String> {
        let ids = self.mt_src_tokenizer.encode_ids(text);
        if ids.is_empty() {
            return Err(Error::InvalidConfig("empty MT input".into()));
        }
        let hyps = beam_search(&self.mt, Input::Tokens(&ids), &self.mt_beam)?;
        Ok(from_target(&self.mt_tgt_tokenizer, &hyps[0].tokens))
    }
}

#[derive(Clone, Debug)]
pub struct EndToEnd {
    pub st: ModelParams,
    pub tokenizer: SubwordModel,
    pub beam: BeamConfig,
}

impl EndToEnd {
    /// Beam 20, the width used for every seq2seq decode including labeling.
    pub fn new(st: ModelParams, tokenizer: SubwordModel) -> Self {
        EndToEnd {
            st,
            tokenizer,
            beam: BeamConfig::with_beam(20),
        }
    }

    pub fn translate(&self, features: &Tensor) -> Result<String> {
        let hyps = beam_search(&self.st, Input::Features(features), &self.beam)?;
        Ok(from_target(&self.tokenizer, &hyps[0].tokens))
    }
}

#[derive(Clone, Debug)]
pub enum Labeler {
    Cascade(Box<Cascade>),
    EndToEnd(Box<EndToEnd>),
}

/// (transcript, translation) for one utterance.
type Label = (Option<String>, String);

impl Labeler {
    pub fn provenance(&self) -> Provenance {
        match self {
            Labeler::Cascade(_) => Provenance::PseudoCascade,
            Labeler::EndToEnd(_) => Provenance::PseudoE2e,
        }
    }

    pub fn label(&self, features: &Tensor) -> Result<Label> {
        let (transcript, translation) = match self {
            Labeler::Cascade(c) => {
                let t = c.transcribe(features)?;
                if t.is_empty() {
                    return Err(Error::InvalidConfig("empty transcript".into()));
                }
                let tr = c.translate_text(&t)?;
                (Some(t), tr)
            }
            Labeler::EndToEnd(e) => (None, e.translate(features)?),
        };
        if translation.trim().is_empty() {
            return Err(Error::InvalidConfig("empty translation".into()));
        }
        Ok((transcript, translation))
    }
}

#[derive(Clone, Debug)]
pub struct NamedLabeler {
    pub name: String,
    pub tier: QualityTier,
    pub labeler: Labeler,
}

#[derive(Clone, Debug)]
pub struct LabelOutcome {
    pub manifest: Manifest,
    /// Utterances whose decode failed or came out empty.
    pub dropped: usize,
    /// Utterances removed by the post-labeling filter.
    pub filtered: usize,
}

/// Labels every record of an unlabeled pool, drops decode failures, then
/// applies the length filter (target tokens counted with `filter_tokenizer`).
pub fn pseudo_label(
    pool: &Manifest,
    labeler: &NamedLabeler,
    spec: &FilterSpec,
    filter_tokenizer: Option<&SubwordModel>,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<LabelOutcome> {
    if let Some(r) = pool
        .records()
        .iter()
        .find(|r| r.provenance != Provenance::Unlabeled)
    {
        return Err(Error::InvalidConfig(format!(
            "labeling input `{}` contains non-unlabeled record `{}`",
            pool.name, r.id
        )));
    }
    let provenance = labeler.labeler.provenance();
    let labeled = exec::map_ordered(
        pool.records(),
        jobs,
        |r| -> Result<Option<UtteranceRecord>> {
            let feats: Arc<Tensor> = record_features(r, features)?;
            Ok(labeler
                .labeler
                .label(&feats)
                .ok()
                .map(|(transcript, translation)| UtteranceRecord {
                    transcript,
                    translation: Some(translation),
                    provenance,
                    quality_tier: labeler.tier,
                    ..r.clone()
                }))
        },
    );
    let mut records = Vec::with_capacity(pool.len());
    let mut dropped = 0;
    for r in labeled {
        match r? {
            Some(r) => records.push(r),
            None => dropped += 1,
        }
    }
    let name = format!("{}.{}", pool.name, labeler.name);
    let m = Manifest::new(name, pool.language_pair.clone(), records)?;
    let f = filter(&m, spec, filter_tokenizer);
    Ok(LabelOutcome {
        manifest: f.manifest,
        dropped,
        filtered: f.removed,
    })
}

pub fn pseudo_label_cascade(
    pool: &Manifest,
    cascade: Cascade,
    tier: QualityTier,
    spec: &FilterSpec,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<LabelOutcome> {
    let tok = cascade.mt_tgt_tokenizer.clone();
    let l = NamedLabeler {
        name: "cascade".into(),
        tier,
        labeler: Labeler::Cascade(Box::new(cascade)),
    };
    pseudo_label(pool, &l, spec, Some(&tok), features, jobs)
}

pub fn pseudo_label_e2e(
    pool: &Manifest,
    e2e: EndToEnd,
    tier: QualityTier,
    spec: &FilterSpec,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<LabelOutcome> {
    let tok = e2e.tokenizer.clone();
    let l = NamedLabeler {
        name: "e2e".into(),
        tier,
        labeler: Labeler::EndToEnd(Box::new(e2e)),
    };
    pseudo_label(pool, &l, spec, Some(&tok), features, jobs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelerQuality {
    /// BLEU of the labeler's translations against references.
    pub bleu: f64,
    /// WER of the cascade's transcripts, in percent.
    pub wer: Option<f64>,
}

/// Measures a labeler on a labeled held-out set; failed decodes count as empty.
pub fn labeler_quality(
    labeler: &Labeler,
    m: &Manifest,
    features: &FeatureConfig,
    jobs: usize,
) -> Result<LabelerQuality> {
    let out = exec::map_ordered(m.records(), jobs, |r| -> Result<Label> {
        let feats = record_features(r, features)?;
        Ok(labeler
            .label(&feats)
            .unwrap_or((Some(String::new()), String::new())))
    });
    let mut hyps = Vec::with_capacity(m.len());
    let mut refs = Vec::with_capacity(m.len());
    let mut src_hyps = Vec::new();
    let mut src_refs = Vec::new();
    for (r, o) in m.records().iter().zip(out) {
        let (transcript, translation) = o?;
        hyps.push(translation);
        refs.push(required(&r.translation, &r.id, "translation")?.to_string());
        if let (Some(h), Some(gold)) = (transcript, &r.transcript) {
            src_hyps.push(h);
            src_refs.push(gold.clone());
        }
    }
    let wer = match labeler {
        Labeler::Cascade(_) => Some(wer(&src_hyps, &src_refs)?.percent()),
        Labeler::EndToEnd(_) => None,
    };
    Ok(LabelerQuality {
        bleu: bleu(&hyps, &refs)?.score,
        wer,
    })
}

pub(crate) fn required<'a>(field: &'a Option<String>, id: &str, what: &str) -> Result<&'a str> {
    field
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("record `{id}` has no {what}")))
}
