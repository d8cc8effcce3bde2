use selftrain::corpus::{FilterSpec, Manifest, Provenance};
use selftrain::decode::BeamConfig;
use selftrain::frontend::FeatureConfig;
use selftrain::nnet::model::SizeVariant;
use selftrain::pipeline::config::ExperimentConfig;
use selftrain::pipeline::desk::{self, DeskConfig};
use selftrain::pipeline::{
    evaluate_bleu, pseudo_label, st_descriptor, st_examples, train_fresh, TrainSetup,
};
use selftrain::subword::{self, TrainerConfig};
use selftrain::synthtask::{generate, oracle_score, ChannelSpec, SplitSizes};

#[test]
fn noiseless_gold_is_learnable() {
    let spec = ChannelSpec {
        noise_sigma: 0.0,
        ..ChannelSpec::default()
    };
    let sizes = SplitSizes {
        pool: 0,
        test: 0,
        mt_text: 0,
        ..SplitSizes::default()
    };
    let c = generate(&spec, &sizes, 1).unwrap();
    let texts: Vec<String> = c
        .gold
        .records()
        .iter()
        .map(|r| r.translation.clone().unwrap())
        .collect();
    let tok = subword::train(&texts, &TrainerConfig::with_target(120)).unwrap();
    let f = FeatureConfig::default();
    let train = st_examples(&c.gold, &tok, &f).unwrap();
    let dev = st_examples(&c.dev, &tok, &f).unwrap();
    let mut setup = TrainSetup::default();
    setup.schedule.base_lr = 3e-3;
    setup.batch.max_frames_per_batch = 300;
    setup.stop.max_updates = 3000;
    setup.stop.patience = 100;
    let desc = st_descriptor(8, &tok, SizeVariant::Base);
    let (_, out) = train_fresh(&desc, 1, &train, &dev, &setup, 1).unwrap();
    let b = evaluate_bleu(&out.best, &tok, &c.dev, &BeamConfig::with_beam(5), &f, 1).unwrap();
    assert!(b >= 90.0, "dev BLEU {b:.2}");
}

#[test]
fn truth_labels_score_perfectly() {
    let c = generate(&ChannelSpec::default(), &SplitSizes::default(), 4).unwrap();
    let labeled: Vec<_> = c
        .pool
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.transcript = c.truth.transcript(&r.id).map(str::to_string);
            r.translation = c.truth.translation(&r.id).map(str::to_string);
            r.provenance = Provenance::PseudoCascade;
            r
        })
        .collect();
    let m = Manifest::new("truth", c.pool.language_pair.clone(), labeled).unwrap();
    let s = oracle_score(&m, &c.truth).unwrap();
    assert!((s.bleu.score - 100.0).abs() < 1e-9);
    assert_eq!(s.wer.errors, 0);
    assert_eq!(s.transcript_wer.unwrap().errors, 0);
}

#[test]
fn smoke_world_round_trips_through_disk() {
    let cfg = DeskConfig::smoke();
    let world = desk::build(&cfg, 2).unwrap();
    let in_memory = world.experiment.sweep().unwrap();
    assert!(in_memory.failures.is_empty(), "{:?}", in_memory.failures);
    // Baseline and pseudo arms, each with and without fine-tuning, dev and test.
    assert_eq!(in_memory.rows.len(), 8);

    let dir = tempfile::tempdir().unwrap();
    world.write_to(dir.path(), &cfg).unwrap();
    let exp = ExperimentConfig::load(dir.path().join(desk::CONFIG_FILE))
        .unwrap()
        .resolve(dir.path())
        .unwrap();
    let from_disk = exp.sweep().unwrap();
    assert_eq!(from_disk.csv(), in_memory.csv());
}

#[test]
fn labeling_ignores_job_count() {
    let world = desk::build(&DeskConfig::smoke(), 3).unwrap();
    let e = &world.experiment;
    for l in &e.labelers {
        let one = pseudo_label(
            &e.pool,
            l,
            &FilterSpec::OPEN_DATA,
            Some(&e.tokenizer),
            &e.features,
            1,
        )
        .unwrap();
        let four = pseudo_label(
            &e.pool,
            l,
            &FilterSpec::OPEN_DATA,
            Some(&e.tokenizer),
            &e.features,
            4,
        )
        .unwrap();
        assert_eq!(one.manifest, four.manifest, "{}", l.name);
        assert_eq!((one.dropped, one.filtered), (four.dropped, four.filtered));
        assert!(one
            .manifest
            .records()
            .iter()
            .all(|r| r.provenance.is_pseudo()));
    }
}
