use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rawinst_core::audio::{write_wav, AudioClip, SampleFormat};
use rawinst_core::eval::load_predictions;

fn rawinst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawinst"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RAWINST_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rawinst(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ten 1-second training tracks and six 2-second test tracks.
fn tiny_datasets(root: &Path) -> (String, String) {
    let train = root.join("train");
    let test = root.join("test");
    ok(&[
        "synth",
        "--out",
        s(&train),
        "--tracks",
        "10",
        "--seconds",
        "1",
        "--seed",
        "1",
    ]);
    ok(&[
        "synth",
        "--out",
        s(&test),
        "--tracks",
        "6",
        "--seconds",
        "2",
        "--kind",
        "test",
        "--seed",
        "2",
    ]);
    (s(&train).to_string(), s(&test).to_string())
}

#[test]
fn params_prints_exact_counts() {
    assert_eq!(ok(&["params", "fcn"]).lines().next(), Some("81787"));
    assert_eq!(ok(&["params", "bigru2"]).lines().next(), Some("225675"));
    assert!(ok(&["params", "dcnn"]).contains("rounded\t1.14M"));
}

#[test]
fn unknown_model_is_a_usage_error_before_touching_data() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = rawinst(&[
        "train",
        "--model",
        "crnn7",
        "--data",
        "/does/not/exist",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("crnn7"));
    assert!(!out_dir.exists());

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model = lstm\n").unwrap();
    let out = rawinst(&["train", "--config", s(&cfg), "--data", "/does/not/exist"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_data_root_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rawinst(&[
        "train",
        "--model",
        "fcn",
        "--data",
        "/does/not/exist",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_and_the_echo_reruns_it() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = tiny_datasets(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--model".into(),
            "fcn".into(),
            "--data".into(),
            train.clone(),
            "--out".into(),
            s(out).into(),
            "--fold".into(),
            "0".into(),
            "--seed".into(),
            "7".into(),
            "--max-epochs".into(),
            "2".into(),
            "--batch-size".into(),
            "4".into(),
        ]
    };
    let a_args = args(&a);
    ok(&a_args.iter().map(String::as_str).collect::<Vec<_>>());
    let b_args = args(&b);
    ok(&b_args.iter().map(String::as_str).collect::<Vec<_>>());
    let ckpt_a = fs::read(a.join("fold0/model.ckpt")).unwrap();
    assert!(ckpt_a == fs::read(b.join("fold0/model.ckpt")).unwrap());

    let listed = fs::read_to_string(a.join("outputs.txt")).unwrap();
    for f in ["run.cfg", "fold0/model.ckpt", "fold0/history.tsv", "summary.tsv"] {
        assert!(listed.lines().any(|l| l == f), "{f} missing from {listed}");
    }
    let history = fs::read_to_string(a.join("fold0/history.tsv")).unwrap();
    assert_eq!(history.lines().filter(|l| !l.starts_with('#')).count(), 2);

    // The echo alone (with a different output directory) reproduces the run.
    let c = dir.path().join("c");
    ok(&["train", "--config", s(&a.join("run.cfg")), "--out", s(&c)]);
    assert!(ckpt_a == fs::read(c.join("fold0/model.ckpt")).unwrap());
    let echo = fs::read_to_string(a.join("run.cfg")).unwrap();
    assert!(echo.contains("batch_size = 4") && echo.contains("seed = 7") && echo.contains("model = fcn"));
}

#[test]
fn all_folds_write_five_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = tiny_datasets(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "train",
        "--model",
        "fcn",
        "--data",
        &train,
        "--out",
        s(&out),
        "--folds",
        "all",
        "--max-epochs",
        "1",
    ]);
    for k in 0..5 {
        assert!(out.join(format!("fold{k}/model.ckpt")).is_file());
        assert!(out.join(format!("fold{k}/history.tsv")).is_file());
    }
    let summary = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 6);
}

#[test]
fn eval_reports_rescoring_and_checkpoint_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = tiny_datasets(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--model",
        "fcn",
        "--data",
        &train,
        "--out",
        s(&run),
        "--max-epochs",
        "1",
    ]);
    let ckpt = run.join("fold0/model.ckpt");

    let live = dir.path().join("live");
    let table = ok(&[
        "eval",
        "--model",
        "fcn",
        "--checkpoint",
        s(&ckpt),
        "--data",
        &test,
        "--out",
        s(&live),
        "--sweep",
    ]);
    assert!(table.contains("lrap"));
    let preds = load_predictions(&live.join("predictions.tsv")).unwrap();
    assert_eq!(preds.len(), 6);
    assert!(preds.iter().all(|p| p.scores.iter().all(|&v| v > 0.0 && v < 1.0)));
    let report = fs::read_to_string(live.join("report.tsv")).unwrap();
    for line in report.lines().skip(1) {
        let v: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        if !line.starts_with("#n_tracks") && !line.starts_with("#threshold") {
            assert!((0.0..=1.0).contains(&v), "{line}");
        }
    }
    assert_eq!(
        fs::read_to_string(live.join("sweep.tsv"))
            .unwrap()
            .lines()
            .count(),
        20
    );

    let rescored = dir.path().join("rescored");
    ok(&[
        "eval",
        "--predictions",
        s(&live.join("predictions.tsv")),
        "--out",
        s(&rescored),
    ]);
    assert_eq!(fs::read(rescored.join("report.tsv")).unwrap(), report.as_bytes());

    let lower = dir.path().join("lower");
    ok(&[
        "eval",
        "--predictions",
        s(&live.join("predictions.tsv")),
        "--out",
        s(&lower),
        "--threshold",
        "0.3",
    ]);
    let lrap = |p: &Path| {
        fs::read_to_string(p.join("report.tsv"))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("#lrap"))
            .unwrap()
            .to_string()
    };
    assert_eq!(lrap(&lower), lrap(&live));

    let wrong = dir.path().join("wrong");
    let out = rawinst(&[
        "eval",
        "--model",
        "rfcn",
        "--checkpoint",
        s(&ckpt),
        "--data",
        &test,
        "--out",
        s(&wrong),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape error"));
    assert!(!wrong.join("predictions.tsv").exists());
}

#[test]
fn predict_scores_a_sine_with_an_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a440.wav");
    let samples: Vec<f32> = (0..44_100 * 2)
        .map(|i| 0.5 * (std::f32::consts::TAU * 440.0 * i as f32 / 44_100.0).sin())
        .collect();
    fs::write(
        &wav,
        write_wav(&AudioClip::mono(samples, 44_100), SampleFormat::Pcm16),
    )
    .unwrap();
    let text = ok(&["predict", "--model", "fcn", "--seed", "0", s(&wav)]);
    let scores: Vec<f64> = text
        .lines()
        .map(|l| l.split_once(':').unwrap().1.parse().unwrap())
        .collect();
    assert_eq!(scores.len(), 11);
    assert!(scores.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn gradcheck_passes_on_the_op_suite() {
    let text = ok(&["gradcheck", "--seeds", "3", "--ops-only"]);
    assert!(text.lines().all(|l| !l.starts_with("FAIL")));
}

#[test]
fn data_root_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = tiny_datasets(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_rawinst"))
        .args([
            "train",
            "--model",
            "fcn",
            "--out",
            s(&dir.path().join("o")),
            "--max-epochs",
            "1",
        ])
        .env("RAWINST_DATA", &train)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = fs::read_to_string(dir.path().join("o/run.cfg")).unwrap();
    assert!(echo.contains(&format!("data_root = {train}")));
}
