use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use selftrain::corpus::{
    self, filter, load_manifest, mix, sample_pool, write_manifest, AudioRef, FilterSpec, Manifest,
};
use selftrain::decode::{ctc_prefix_beam, tune_decoder, BeamConfig, Objective};
use selftrain::eval::{bleu, wer};
use selftrain::exec;
use selftrain::frontend::{load_features, write_features, FeatureConfig};
use selftrain::ngram::{self, NgramModel};
use selftrain::nnet::model::{
    ctc_log_posteriors, init, transfer_encoder, Head, Input, ModelRole, SizeVariant,
};
use selftrain::nnet::Example;
use selftrain::optim::{self, curve_csv, load_checkpoint, save_checkpoint, CurveRow, TrainerState};
use selftrain::pipeline::config::{lexicon_from_lm, ExperimentConfig};
use selftrain::pipeline::desk::{self, DeskConfig};
use selftrain::pipeline::{
    asr_descriptor, asr_examples, decode_manifest, feature_dim, mt_descriptor, mt_examples,
    pseudo_label, st_descriptor, st_examples, Experiment, TrainSetup,
};
use selftrain::subword::{self, SubwordModel, TrainerConfig};
use selftrain::synthtask::{generate, oracle_score, HiddenTruth};

use crate::{
    Cli, Command, EvaluateArgs, Failure, FinetuneArgs, HeadArg, LabelArgs, Metric, MixArgs,
    PrepareArgs, SetupArgs, SweepArgs, SynthArgs, Task, TextField, TokenizeCmd, TrainArgs,
    TuneArgs, VariantArg,
};

type Res<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> Res {
    let jobs = cli.jobs.unwrap_or(1).max(1);
    match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a, cli.seed, jobs),
        Command::Tokenize(c) => tokenize(c),
        Command::Train(a) => train(a, cli.seed, jobs),
        Command::Label(a) => label(a, cli.jobs),
        Command::Mix(a) => mix_cmd(a, cli.seed),
        Command::Finetune(a) => finetune(a, jobs),
        Command::TuneDecoder(a) => tune(a, jobs),
        Command::Evaluate(a) => evaluate(a, jobs),
        Command::Sweep(a) => sweep(a, cli.jobs, false),
        Command::Ablate(a) => sweep(a, cli.jobs, true),
    }
}

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Res {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn input_text(path: Option<&Path>) -> Res<String> {
    match path {
        Some(p) => read_text(p),
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Failure::Data(format!("stdin: {e}")))?;
            Ok(s)
        }
    }
}

fn toml_file<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Loads an experiment config; any failure here is a usage error.
fn load_config(path: &Path) -> Res<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(path).map_err(|e| usage(e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate(&base).map_err(|e| usage(e.to_string()))?;
    Ok((cfg, base))
}

fn resolve(path: &Path, jobs: Option<usize>) -> Res<Experiment> {
    let (mut cfg, base) = load_config(path)?;
    if let Some(j) = jobs {
        cfg.sweep.jobs = j.max(1);
    }
    Ok(cfg.resolve(&base)?)
}

fn tokenizer(path: Option<&PathBuf>, what: &str) -> Res<SubwordModel> {
    let p = path.ok_or_else(|| usage(format!("--{what} is required for this task")))?;
    Ok(SubwordModel::load(p)?)
}

fn prepare(a: &PrepareArgs) -> Res {
    let features: FeatureConfig = match &a.feature_config {
        Some(p) => toml_file(p)?,
        None => FeatureConfig::default(),
    };
    features.validate()?;
    let m = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.features_dir).map_err(|e| io_err(&a.features_dir, e))?;
    let dir = fs::canonicalize(&a.features_dir).map_err(|e| io_err(&a.features_dir, e))?;
    let mut records = Vec::with_capacity(m.len());
    for r in m.records() {
        let mut r = r.clone();
        if let AudioRef::Path(p) = &r.audio {
            let f = load_features(p, &features)?;
            r.n_frames = f.rows() as u64;
            if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                let out = dir.join(format!("{}.feat", r.id));
                write_features(&out, &f)?;
                r.audio = AudioRef::Path(out);
            }
        }
        records.push(r);
    }
    let prepared = Manifest::new(m.name.clone(), m.language_pair.clone(), records)?;
    let tok = a.tokenizer.as_ref().map(SubwordModel::load).transpose()?;
    let out = if a.no_filter {
        prepared
    } else {
        let f = filter(&prepared, &FilterSpec::OPEN_DATA, tok.as_ref());
        eprintln!("filtered out {} of {} records", f.removed, m.len());
        f.manifest
    };
    write_manifest(&out, &a.out)?;
    print!("{}", corpus::stats(&out).to_csv());
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64, jobs: usize) -> Res {
    let mut cfg: DeskConfig = match &a.config {
        Some(p) => toml_file(p)?,
        None if a.smoke => DeskConfig::smoke(),
        None => DeskConfig::default(),
    };
    if let Some(s) = a.sigma {
        cfg.channel.noise_sigma = s;
    }
    if let Some(n) = a.baseline_utts {
        cfg.baseline_utts = n;
    }
    if cfg.settings.seeds == [1] {
        cfg.settings.seeds = vec![seed];
    }
    cfg.settings.jobs = jobs;
    if a.show_config {
        print!(
            "{}",
            toml::to_string(&cfg).map_err(|e| Failure::Data(e.to_string()))?
        );
        return Ok(());
    }
    cfg.channel.validate().map_err(|e| usage(e.to_string()))?;
    if a.corpus_only {
        let c = generate(&cfg.channel, &cfg.sizes, seed)?;
        c.write_to(&a.out)?;
        eprintln!(
            "wrote {} utterances to {}",
            c.splits().iter().map(|m| m.len()).sum::<usize>(),
            a.out.display()
        );
        return Ok(());
    }
    let world = desk::build(&cfg, seed)?;
    world.write_to(&a.out, &cfg)?;
    for (name, curve) in &world.curves {
        write_text(&a.out.join(format!("{name}.curve.csv")), &curve_csv(curve))?;
    }
    println!("{}", a.out.join(desk::CONFIG_FILE).display());
    Ok(())
}

fn texts(path: &Path, field: TextField) -> Res<Vec<String>> {
    if field == TextField::Lines {
        return Ok(read_text(path)?.lines().map(str::to_string).collect());
    }
    let m = load_manifest(path)?;
    Ok(m.records()
        .iter()
        .filter_map(|r| match field {
            TextField::Transcript => r.transcript.clone(),
            _ => r.translation.clone(),
        })
        .collect())
}

fn tokenize(c: &TokenizeCmd) -> Res {
    match c {
        TokenizeCmd::Train {
            input,
            field,
            pieces,
            out,
        } => {
            let mut lines = Vec::new();
            for p in input {
                lines.extend(texts(p, *field)?);
            }
            let model = subword::train(&lines, &TrainerConfig::with_target(*pieces))?;
            model.save(out)?;
            eprintln!("{} pieces", model.num_pieces());
        }
        TokenizeCmd::Encode { model, input } => {
            let model = SubwordModel::load(model)?;
            for line in input_text(input.as_deref())?.lines() {
                println!("{}", model.encode(line).join(" "));
            }
        }
        TokenizeCmd::Decode { model, input } => {
            let model = SubwordModel::load(model)?;
            for line in input_text(input.as_deref())?.lines() {
                let pieces: Vec<&str> = line.split_whitespace().collect();
                println!("{}", model.decode(&pieces));
            }
        }
    }
    Ok(())
}

fn setup(a: &SetupArgs) -> Res<TrainSetup> {
    let mut s: TrainSetup = match &a.setup {
        Some(p) => toml_file(p)?,
        None => TrainSetup::default(),
    };
    if let Some(v) = a.lr {
        s.schedule.base_lr = v;
    }
    if let Some(v) = a.max_updates {
        s.stop.max_updates = v;
    }
    if let Some(v) = a.batch_frames {
        s.batch.max_frames_per_batch = v;
    }
    if let Some(v) = a.eval_every {
        s.stop.eval_every = v;
    }
    s.schedule.validate().map_err(|e| usage(e.to_string()))?;
    Ok(s)
}

fn examples(
    role: ModelRole,
    desc: &selftrain::nnet::model::Descriptor,
    m: &Manifest,
    tok: &SubwordModel,
    src: Option<&SubwordModel>,
    features: &FeatureConfig,
) -> Res<Vec<Example>> {
    Ok(match role {
        ModelRole::St => st_examples(m, tok, features)?,
        ModelRole::Asr => asr_examples(m, tok, desc, features)?,
        ModelRole::Mt => mt_examples(
            m,
            src.ok_or_else(|| usage("--src-tokenizer is required for MT"))?,
            tok,
        )?,
    })
}

fn write_outcome(
    state: &TrainerState,
    out: &Path,
    curve_path: Option<&PathBuf>,
    curve: &[CurveRow],
) -> Res {
    save_checkpoint(state, out)?;
    if let Some(p) = curve_path {
        write_text(p, &curve_csv(curve))?;
    }
    let best = curve
        .iter()
        .filter(|r| r.split == "dev")
        .map(|r| r.loss)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        eprintln!("best dev loss {best:.4} after {} updates", state.step);
    }
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, jobs: usize) -> Res {
    let features = FeatureConfig::default();
    let data = load_manifest(&a.train)?;
    if a.task == Task::Lm {
        let lines: Vec<String> = data
            .records()
            .iter()
            .filter_map(|r| r.transcript.clone())
            .collect();
        let lm = ngram::train(&ngram::tokenize_lines(&lines), a.order)?;
        lm.write_arpa(&a.out)?;
        return Ok(());
    }
    let s = setup(&a.setup)?;
    let dev = a.dev.as_ref().map(load_manifest).transpose()?;
    let tok = tokenizer(a.tokenizer.as_ref(), "tokenizer")?;
    let src = a
        .src_tokenizer
        .as_ref()
        .map(SubwordModel::load)
        .transpose()?;
    let size = match a.variant {
        VariantArg::Base => SizeVariant::Base,
        VariantArg::Large => SizeVariant::Large,
    };
    let (role, desc) = match a.task {
        Task::St => (
            ModelRole::St,
            st_descriptor(feature_dim(&data, &features)?, &tok, size),
        ),
        Task::Asr => {
            let head = match a.head {
                HeadArg::Seq2seq => Head::Seq2Seq,
                HeadArg::Ctc => Head::Ctc,
            };
            (
                ModelRole::Asr,
                asr_descriptor(feature_dim(&data, &features)?, &tok, head, size),
            )
        }
        Task::Mt => {
            let src = src
                .as_ref()
                .ok_or_else(|| usage("--src-tokenizer is required for MT"))?;
            (ModelRole::Mt, mt_descriptor(src, &tok, size))
        }
        Task::Lm => unreachable!(),
    };
    let train_ex = examples(role, &desc, &data, &tok, src.as_ref(), &features)?;
    let dev_ex = match &dev {
        Some(d) => examples(role, &desc, d, &tok, src.as_ref(), &features)?,
        None => Vec::new(),
    };
    let mut params = init(&desc, seed)?;
    if let Some(p) = &a.init_encoder {
        params = transfer_encoder(&load_checkpoint(p)?.params, &params)?;
    }
    let mut state = TrainerState::new(params, s.schedule.clone(), s.adam.clone(), seed);
    let out = optim::train(&mut state, &train_ex, &dev_ex, &s.batch, &s.stop, jobs)?;
    write_outcome(&out.best_state, &a.out, a.curve.as_ref(), &out.curve)
}

fn finetune(a: &FinetuneArgs, jobs: usize) -> Res {
    let features = FeatureConfig::default();
    let mut s = setup(&a.setup)?;
    s.stop.eval_at_start = true;
    let mut state = load_checkpoint(&a.checkpoint)?;
    state.reset_cursor();
    if a.setup.setup.is_some() || a.setup.lr.is_some() {
        state.schedule = s.schedule.clone();
    }
    let tok = SubwordModel::load(&a.tokenizer)?;
    let src = a
        .src_tokenizer
        .as_ref()
        .map(SubwordModel::load)
        .transpose()?;
    let desc = state.params.descriptor.clone();
    let data = load_manifest(&a.train)?;
    let train_ex = examples(desc.role, &desc, &data, &tok, src.as_ref(), &features)?;
    let dev_ex = match &a.dev {
        Some(d) => examples(
            desc.role,
            &desc,
            &load_manifest(d)?,
            &tok,
            src.as_ref(),
            &features,
        )?,
        None => Vec::new(),
    };
    let out = optim::train(&mut state, &train_ex, &dev_ex, &s.batch, &s.stop, jobs)?;
    write_outcome(&out.best_state, &a.out, a.curve.as_ref(), &out.curve)
}

fn label(a: &LabelArgs, jobs: Option<usize>) -> Res {
    let exp = resolve(&a.config, jobs)?;
    let labeler = exp.labeler(&a.labeler).map_err(|e| usage(e.to_string()))?;
    let pool = match &a.pool {
        Some(p) => load_manifest(p)?,
        None => exp.pool.clone(),
    };
    let s = &exp.settings;
    let out = pseudo_label(
        &pool,
        labeler,
        &s.filter,
        Some(&exp.tokenizer),
        &exp.features,
        s.jobs,
    )?;
    write_manifest(&out.manifest, &a.out)?;
    eprintln!(
        "labeled {} of {} ({} failed, {} filtered)",
        out.manifest.len(),
        pool.len(),
        out.dropped,
        out.filtered
    );
    if let Some(t) = a.truth.as_ref().filter(|_| !out.manifest.is_empty()) {
        let score = oracle_score(&out.manifest, &HiddenTruth::load(t)?)?;
        println!("label_bleu,{:.4}", score.bleu.score);
        if let Some(w) = score.transcript_wer {
            println!("label_wer,{:.4}", w.percent());
        }
    }
    Ok(())
}

fn mix_cmd(a: &MixArgs, seed: u64) -> Res {
    let baseline = load_manifest(&a.baseline)?;
    let mut pseudo = load_manifest(&a.pseudo)?;
    if let (Some(h), Some(p)) = (a.hours, &a.pool) {
        let sample = sample_pool(&load_manifest(p)?, h, seed)?;
        let keep: std::collections::HashSet<&str> = sample.ids().collect();
        pseudo = pseudo.retain(|r| keep.contains(r.id.as_str()));
    }
    let m = mix(&baseline, &pseudo)?;
    write_manifest(&m, &a.out)?;
    print!("{}", corpus::stats(&m).to_csv());
    Ok(())
}

fn tune(a: &TuneArgs, jobs: usize) -> Res {
    let features = FeatureConfig::default();
    let asr = load_checkpoint(&a.checkpoint)?.params;
    if asr.descriptor.head != Head::Ctc {
        return Err(usage("tune-decoder needs a CTC checkpoint"));
    }
    let tok = SubwordModel::load(&a.tokenizer)?;
    let lm = NgramModel::read_arpa(&a.lm)?;
    let lexicon = lexicon_from_lm(&lm, &tok)?;
    let dev = load_manifest(&a.dev)?;
    let posteriors = exec::map_ordered(dev.records(), jobs, |r| {
        let f = selftrain::pipeline::record_features(r, &features)?;
        ctc_log_posteriors(&asr, Input::Features(&f))
    })
    .into_iter()
    .collect::<selftrain::Result<Vec<_>>>()?;
    let refs: Vec<String> = dev
        .records()
        .iter()
        .map(|r| r.transcript.clone().unwrap_or_default())
        .collect();
    let result = tune_decoder(
        &a.lm_weights,
        &a.word_bonuses,
        Objective::Minimize,
        |w, b| {
            let cfg = BeamConfig {
                lm_weight: w,
                word_bonus: b,
                ..BeamConfig::with_beam(a.beam)
            };
            let hyps = exec::map_ordered(&posteriors, jobs, |lp| {
                ctc_prefix_beam(lp, &lexicon, Some(&lm), &cfg).map(|h| h.words.join(" "))
            })
            .into_iter()
            .collect::<selftrain::Result<Vec<_>>>()?;
            Ok(wer(&hyps, &refs)?.percent())
        },
    )?;
    if let Some(p) = &a.grid {
        write_text(p, &result.grid_csv())?;
    }
    println!(
        "lm_weight={} word_bonus={} wer={:.2}",
        result.lm_weight, result.word_bonus, result.metric
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs, jobs: usize) -> Res {
    let (hyps, refs) = if let Some(ckpt) = &a.checkpoint {
        let features = FeatureConfig::default();
        let params = load_checkpoint(ckpt)?.params;
        let m = load_manifest(a.manifest.as_ref().expect("clap requires --manifest"))?;
        let tok = SubwordModel::load(a.tokenizer.as_ref().expect("clap requires --tokenizer"))?;
        let hyps = if params.descriptor.head == Head::Ctc {
            let lm_path =
                a.lm.as_ref()
                    .ok_or_else(|| usage("--lm is required for CTC checkpoints"))?;
            let lm = NgramModel::read_arpa(lm_path)?;
            let lexicon = lexicon_from_lm(&lm, &tok)?;
            let cfg = BeamConfig {
                lm_weight: a.lm_weight,
                ..BeamConfig::with_beam(a.beam)
            };
            exec::map_ordered(m.records(), jobs, |r| {
                let f = selftrain::pipeline::record_features(r, &features)?;
                let lp = ctc_log_posteriors(&params, Input::Features(&f))?;
                ctc_prefix_beam(&lp, &lexicon, Some(&lm), &cfg).map(|h| h.words.join(" "))
            })
            .into_iter()
            .collect::<selftrain::Result<Vec<_>>>()?
        } else {
            decode_manifest(
                &params,
                &tok,
                &m,
                &BeamConfig::with_beam(a.beam),
                &features,
                jobs,
            )?
        };
        let refs = m
            .records()
            .iter()
            .map(|r| {
                let field = match a.metric {
                    Metric::Bleu => &r.translation,
                    Metric::Wer => &r.transcript,
                };
                field
                    .clone()
                    .ok_or_else(|| Failure::Data(format!("record `{}` has no reference", r.id)))
            })
            .collect::<Res<Vec<_>>>()?;
        if let Some(p) = &a.out {
            write_text(p, &(hyps.join("\n") + "\n"))?;
        }
        (hyps, refs)
    } else {
        let hyp = a
            .hyp
            .as_ref()
            .ok_or_else(|| usage("give --hyp and --ref, or --checkpoint"))?;
        let reference = a
            .reference
            .as_ref()
            .or(a.ref_file.as_ref())
            .ok_or_else(|| usage("--ref is required with --hyp"))?;
        let lines = |p: &Path| -> Res<Vec<String>> {
            Ok(read_text(p)?.lines().map(str::to_string).collect())
        };
        (lines(hyp)?, lines(reference)?)
    };
    match a.metric {
        Metric::Bleu => {
            let r = bleu(&hyps, &refs)?;
            println!("{:.1}", r.score);
            if a.detail {
                println!("{}", r.csv_row());
            }
        }
        Metric::Wer => {
            let r = wer(&hyps, &refs)?;
            println!("{:.1}", r.percent());
            if a.detail {
                println!("{}", r.csv_row());
            }
        }
    }
    Ok(())
}

fn sweep(a: &SweepArgs, jobs: Option<usize>, ablate: bool) -> Res {
    let exp = resolve(&a.config, jobs)?;
    let result = if ablate { exp.ablate()? } else { exp.sweep()? };
    write_text(&a.out, &result.csv())?;
    eprintln!("{} rows written to {}", result.rows.len(), a.out.display());
    if result.failures.is_empty() {
        return Ok(());
    }
    for f in &result.failures {
        eprintln!("failed: {} (seed {}): {}", f.condition, f.seed, f.message);
    }
    Err(Failure::Data(format!(
        "{} condition(s) failed",
        result.failures.len()
    )))
}
