//! Trains one ST model on a synthetic gold split and prints its dev curve.

use std::sync::Arc;
use std::time::Instant;

use selftrain::corpus::AudioRef;
use selftrain::decode::BeamConfig;
use selftrain::frontend::FeatureConfig;
use selftrain::nnet::model::SizeVariant;
use selftrain::pipeline::{evaluate_bleu, st_descriptor, st_examples, train_fresh, TrainSetup};
use selftrain::subword::{self, TrainerConfig};
use selftrain::synthtask::{generate, ChannelSpec, SplitSizes};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(d)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ChannelSpec {
        noise_sigma: env("SIGMA", 0.0),
        ..ChannelSpec::default()
    };
    let sizes = SplitSizes {
        gold: env("GOLD", 1000),
        pool: 0,
        dev: 200,
        test: 0,
        mt_text: 0,
    };
    let c = generate(&spec, &sizes, env("SEED", 1))?;
    let scale: f64 = env("SCALE", 1.0);
    let rescale = |m: &selftrain::corpus::Manifest| {
        let recs = m
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let AudioRef::Inline(t) = &r.audio {
                    let mut t = (**t).clone();
                    t.scale(scale);
                    r.audio = AudioRef::Inline(Arc::new(t));
                }
                r
            })
            .collect();
        selftrain::corpus::Manifest::new(m.name.clone(), m.language_pair.clone(), recs).unwrap()
    };
    let gold = rescale(&c.gold);
    let dev = rescale(&c.dev);
    let src_target = env("TARGET", String::new()) == "src";
    let onehot = env("ONEHOT", 0) == 1;
    let swap = |m: &selftrain::corpus::Manifest| {
        let recs = m
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if onehot {
                    if let AudioRef::Inline(t) = &r.audio {
                        let ids = c.universe.nearest_prototype(t);
                        let v = c.universe.spec.src_vocab;
                        let rep: usize = env("REPEAT", 1);
                        let mut x = selftrain::nnet::Tensor::zeros(ids.len() * rep, v);
                        for (i, &w) in ids.iter().enumerate() {
                            for j in 0..rep {
                                x.row_mut(i * rep + j)[w] = 1.0;
                            }
                        }
                        r.audio = AudioRef::Inline(Arc::new(x));
                    }
                }
                if src_target {
                    r.translation = r.transcript.clone();
                }
                r
            })
            .collect();
        selftrain::corpus::Manifest::new(m.name.clone(), m.language_pair.clone(), recs).unwrap()
    };
    let gold = swap(&gold);
    let dev = swap(&dev);
    let texts: Vec<String> = gold
        .records()
        .iter()
        .map(|r| r.translation.clone().unwrap())
        .collect();
    let tok = subword::train(&texts, &TrainerConfig::with_target(120))?;
    let f = FeatureConfig::default();
    let train = st_examples(&gold, &tok, &f)?;
    let dev_ex = st_examples(&dev, &tok, &f)?;
    let mut setup = TrainSetup::default();
    setup.schedule.base_lr = env("LR", 3e-3);
    setup.batch.max_frames_per_batch = env("FRAMES", 300);
    setup.stop.max_updates = env("UPDATES", 1000);
    setup.stop.patience = 100;
    let size = if env("LARGE", 0) == 1 {
        SizeVariant::Large
    } else {
        SizeVariant::Base
    };
    let mut desc = st_descriptor(
        if onehot { c.universe.spec.src_vocab } else { 8 },
        &tok,
        size,
    );
    desc.frontend_dim = env("FRONT", desc.frontend_dim);
    desc.conv_channels = env("CONV", desc.conv_channels);
    if let Ok(v) = std::env::var("STRIDES") {
        desc.conv_strides = v
            .split(',')
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().unwrap())
            .collect();
    }
    let t = Instant::now();
    if env("MT", 0) == 1 {
        let st: Vec<String> = gold
            .records()
            .iter()
            .map(|r| r.transcript.clone().unwrap())
            .collect();
        let stok = subword::train(&st, &TrainerConfig::with_target(120))?;
        let tr = selftrain::pipeline::mt_examples(&gold, &stok, &tok)?;
        let dv = selftrain::pipeline::mt_examples(&dev, &stok, &tok)?;
        let d = selftrain::pipeline::mt_descriptor(&stok, &tok, size);
        setup.batch.max_frames_per_batch /= 4;
        let (_, out) = train_fresh(&d, env("SEED", 1), &tr, &dv, &setup, 1)?;
        for r in out.curve.iter() {
            eprint!("{}{}:{:.2} ", &r.split[..1], r.step, r.loss);
        }
        eprintln!("mt {:.1}s", t.elapsed().as_secs_f64());
        return Ok(());
    }
    let mut params = selftrain::nnet::model::init(&desc, env("SEED", 1))?;
    let names: Vec<String> = params.names().map(String::from).collect();
    let zerob = env("ZEROB", 0) == 1;
    let gain: f64 = env("GAIN", 1.0);
    for (n, t) in names.iter().zip(params.tensors_mut()) {
        if n.ends_with(".b") {
            if zerob {
                t.scale(0.0);
            }
        } else {
            t.scale(gain);
        }
    }
    let (_, out) =
        selftrain::pipeline::train_from(params, env("SEED", 1), &train, &dev_ex, &setup, 1)?;
    for r in out.curve.iter() {
        eprint!("{}{}:{:.2} ", &r.split[..1], r.step, r.loss);
    }
    eprintln!();
    let b = evaluate_bleu(&out.best, &tok, &dev, &BeamConfig::with_beam(5), &f, 1)?;
    eprintln!("train {:.1}s, dev bleu {b:.2}", t.elapsed().as_secs_f64());
    Ok(())
}
