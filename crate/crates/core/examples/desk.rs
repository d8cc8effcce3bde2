//! Builds one synthetic world, runs a small sweep and prints timings.
//!
//! `cargo run --release --example desk -- <seed> [baseline_utts] [sigma] [hours]`

use std::time::Instant;

use selftrain::corpus::QualityTier;
use selftrain::pipeline::desk::{build, DeskConfig};
use selftrain::pipeline::labeler_quality;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(1), |s| s.parse())?;
    let mut cfg = DeskConfig::default().with_seeds(vec![seed]);
    if let Some(n) = args.get(1) {
        cfg.baseline_utts = n.parse()?;
    }
    if let Some(s) = args.get(2) {
        cfg.channel.noise_sigma = s.parse()?;
    }
    let hours: f64 = args.get(3).map_or(Ok(0.05), |s| s.parse())?;
    apply_env(&mut cfg);
    cfg.settings.hours = vec![0.0, hours];
    cfg.settings.finetune = vec![false, true];
    cfg.settings.ablation_hours = hours;
    let t = Instant::now();
    let world = build(&cfg, seed)?;
    eprintln!(
        "build: {:.1}s (pool {:.3} h, baseline {:.3} h)",
        t.elapsed().as_secs_f64(),
        world.corpus.pool.hours(),
        world.experiment.baseline.hours()
    );
    let e = &world.experiment;
    {
        let m = &world.models;
        let (mut ns, mut nt, mut nw) = (0, 0, 0);
        for r in e.dev.records() {
            ns += m
                .src_tokenizer
                .token_count(r.transcript.as_deref().unwrap());
            nt += m
                .tgt_tokenizer
                .token_count(r.translation.as_deref().unwrap());
            nw += r.transcript.as_deref().unwrap().split(' ').count();
        }
        eprintln!(
            "dev words {nw}, src pieces {ns}, tgt pieces {nt}, src vocab {}, tgt vocab {}",
            m.src_tokenizer.num_pieces(),
            m.tgt_tokenizer.num_pieces()
        );
        eprintln!(
            "example: {:?}",
            m.src_tokenizer
                .encode(e.dev.records()[0].transcript.as_deref().unwrap())
        );
    }
    if std::env::var("DESK_CURVES").is_ok() {
        for (name, c) in &world.curves {
            for r in c {
                eprintln!("{name} {} {} {:.4}", r.step, r.split, r.loss);
            }
        }
    }
    for l in &e.labelers {
        let t = Instant::now();
        let q = labeler_quality(&l.labeler, &e.dev, &e.features, 1)?;
        eprintln!(
            "labeler {} ({}): bleu {:.2} wer {:?} [{:.1}s]",
            l.name,
            l.tier,
            q.bleu,
            q.wer,
            t.elapsed().as_secs_f64()
        );
    }
    let t = Instant::now();
    let r = e.sweep()?;
    eprintln!("sweep: {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", r.csv());
    for f in &r.failures {
        eprintln!("failure: {f:?}");
    }
    if std::env::var("DESK_QUALITY").is_ok() {
        let t = Instant::now();
        let q = e.ablate_label_quality()?;
        eprintln!("quality: {:.1}s", t.elapsed().as_secs_f64());
        print!("{}", q.csv());
        let _ = QualityTier::High;
    }
    Ok(())
}

fn apply_env(cfg: &mut DeskConfig) {
    let get = |k: &str| std::env::var(k).ok();
    if let Some(v) = get("DESK_UPDATES") {
        cfg.settings.train.stop.max_updates = v.parse().unwrap();
        cfg.settings.finetune_train.stop.max_updates = v.parse().unwrap();
    }
    if let Some(v) = get("DESK_ASR_UPDATES") {
        cfg.asr.stop.max_updates = v.parse().unwrap();
        cfg.mt.stop.max_updates = v.parse().unwrap();
    }
    if let Some(v) = get("DESK_LR") {
        cfg.settings.train.schedule.base_lr = v.parse().unwrap();
        cfg.asr.schedule.base_lr = v.parse().unwrap();
        cfg.mt.schedule.base_lr = v.parse().unwrap();
    }
    if let Some(v) = get("DESK_FRAMES") {
        cfg.settings.train.batch.max_frames_per_batch = v.parse().unwrap();
        cfg.settings.finetune_train.batch.max_frames_per_batch = v.parse().unwrap();
        cfg.asr.batch.max_frames_per_batch = v.parse().unwrap();
        cfg.mt.batch.max_frames_per_batch = v.parse::<u64>().unwrap() / 4;
    }
    if let Some(v) = get("DESK_BEAM") {
        cfg.settings.eval_beam = v.parse().unwrap();
    }
    if let Some(v) = get("DESK_GOLD") {
        cfg.sizes.gold = v.parse().unwrap();
    }
    if let Some(v) = get("DESK_POOL") {
        cfg.sizes.pool = v.parse().unwrap();
    }
}
