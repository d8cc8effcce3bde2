use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn selftrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selftrain"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// One smoke-sized synthetic experiment shared by the tests below.
fn world() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = selftrain(&["synth", "--smoke", "--seed", "5", "--out", p(dir.path())]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert_eq!(stdout(&out).trim(), p(&dir.path().join("exp.toml")));
        dir
    })
    .path()
}

#[test]
fn identical_files_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("h.txt");
    fs::write(&f, "the cat sat on the mat\nand then it ran away\n").unwrap();
    let bleu = selftrain(&[
        "evaluate",
        "--hyp",
        p(&f),
        "--ref",
        p(&f),
        "--metric",
        "bleu",
    ]);
    assert_eq!(bleu.status.code(), Some(0));
    assert_eq!(stdout(&bleu).trim(), "100.0");
    let wer = selftrain(&[
        "evaluate",
        "--hyp",
        p(&f),
        "--reference",
        p(&f),
        "--metric",
        "wer",
    ]);
    assert_eq!(stdout(&wer).trim(), "0.0");
}

#[test]
fn missing_config_is_a_usage_error() {
    let missing = PathBuf::from("/nonexistent/exp.toml");
    let out = selftrain(&["sweep", "--config", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("/nonexistent/exp.toml"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(selftrain(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(selftrain(&["frobnicate"]).status.code(), Some(1));
    let help = selftrain(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for cmd in [
        "prepare",
        "synth",
        "tokenize",
        "train",
        "label",
        "mix",
        "finetune",
        "tune-decoder",
        "evaluate",
        "sweep",
        "ablate",
    ] {
        assert!(stdout(&help).contains(cmd), "{cmd} missing from help");
    }
    let sweep = stdout(&selftrain(&["sweep", "--help"]));
    assert!(sweep.contains("--config") && sweep.contains("--out") && sweep.contains("--jobs"));
}

#[test]
fn unreadable_hypotheses_are_a_data_error() {
    let out = selftrain(&[
        "evaluate",
        "--hyp",
        "/nonexistent/h",
        "--ref",
        "/nonexistent/r",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_condition() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    let out = selftrain(&[
        "sweep",
        "--config",
        p(&world().join("exp.toml")),
        "--out",
        p(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("condition,hours,variant,finetuned,seed,metric,value")
    );
    // 2 hours x 2 fine-tune flags x 1 seed x {dev, test}.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.split(',').count() == 7));
    assert!(rows
        .iter()
        .any(|r| r.starts_with("pseudo:cascade,") && r.contains(",true,")));
}

#[test]
fn ablate_pairs_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ablate.csv");
    let out = selftrain(&[
        "ablate",
        "--config",
        p(&world().join("exp.toml")),
        "--out",
        p(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    for cond in [
        "encoder_pretrain,",
        "pseudo_label,",
        "labeler:cascade,",
        "labeler:e2e,",
        "quality:high,",
        "quality:low,",
    ] {
        assert!(text.lines().any(|l| l.starts_with(cond)), "no {cond} rows");
    }
    assert!(text.contains(",asr_wer,"));
}

#[test]
fn label_then_mix() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("pseudo.tsv");
    let out = selftrain(&[
        "label",
        "--config",
        p(&w.join("exp.toml")),
        "--labeler",
        "cascade",
        "--out",
        p(&labels),
        "--truth",
        p(&w.join("truth.tsv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pseudo = fs::read_to_string(&labels).unwrap();
    assert!(pseudo
        .lines()
        .filter(|l| !l.starts_with('#'))
        .all(|l| l.contains("\tpseudo_cascade\t")));

    let mixed = dir.path().join("mixed.tsv");
    let out = selftrain(&[
        "mix",
        "--baseline",
        p(&w.join("baseline.tsv")),
        "--pseudo",
        p(&labels),
        "--out",
        p(&mixed),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let n = |path: &Path| {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count()
    };
    assert_eq!(n(&mixed), n(&labels) + n(&w.join("baseline.tsv")));
}

#[test]
fn decodes_and_scores_a_checkpoint() {
    let w = world();
    let out = selftrain(&[
        "evaluate",
        "--checkpoint",
        p(&w.join("e2e.ckpt")),
        "--manifest",
        p(&w.join("dev.tsv")),
        "--tokenizer",
        p(&w.join("tgt.model")),
        "--beam",
        "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let score: f64 = stdout(&out).trim().parse().unwrap();
    assert!((0.0..=100.0).contains(&score));
}

#[test]
fn tokenizer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("text.txt");
    fs::write(
        &text,
        "low lower lowest\nnew newer newest\nwide wider widest\n",
    )
    .unwrap();
    let model = dir.path().join("sp.model");
    let out = selftrain(&[
        "tokenize",
        "train",
        "--input",
        p(&text),
        "--pieces",
        "20",
        "--out",
        p(&model),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let enc = selftrain(&[
        "tokenize",
        "encode",
        "--model",
        p(&model),
        "--input",
        p(&text),
    ]);
    let pieces = dir.path().join("pieces.txt");
    fs::write(&pieces, enc.stdout).unwrap();
    let dec = selftrain(&[
        "tokenize",
        "decode",
        "--model",
        p(&model),
        "--input",
        p(&pieces),
    ]);
    assert_eq!(stdout(&dec), fs::read_to_string(&text).unwrap());
}
