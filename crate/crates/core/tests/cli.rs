use std::path::Path;
use std::process::{Command, Output};

use ssr_core::trainer::{ExperimentConfig, Mode, RunDir};

fn ssr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssr"))
        .args(args)
        .env_remove("SSR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(path: &Path) {
    let cfg = ExperimentConfig {
        train_size: 80,
        val_size: 20,
        test_size: 20,
        mono_size: 200,
        embed_dim: 16,
        hidden_dim: 16,
        lm_embed_dim: 16,
        lm_hidden_dim: 16,
        vse_embed_dim: 16,
        vse_hidden_dim: 16,
        sentence_joint_dim: 16,
        concept_joint_dim: 8,
        epochs_lm: 2,
        epochs_vse: 2,
        epochs_captioner: 2,
        epochs_rl: 1,
        batch_pretrain: 32,
        batch_rl: 32,
        beam_size: 3,
        modes: vec![Mode::Baseline, Mode::Ssr],
        ..ExperimentConfig::desk()
    };
    cfg.save(path).unwrap();
}

#[test]
fn full_run_then_every_later_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    tiny_config(&cfg);
    let out = dir.path().join("run");
    let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    let o = ssr(&["run", "--config", cfg, "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("baseline") || l.starts_with("ssr")).collect();
    assert_eq!(rows.len(), 2, "{table}");

    let run = RunDir::new(out);
    let corpus = run.load_corpus().unwrap();
    let id = corpus.dataset.test[0].image.image_id.to_string();
    let o = ssr(&["generate", "--out", out, "--image-id", &id]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(!text.trim().is_empty());
    let o = ssr(&["generate", "--out", out, "--image-id", &id, "--mode", "baseline", "--beam", "1"]);
    assert!(o.status.success());

    let o = ssr(&["evaluate", "--out", out, "--mode", "baseline"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("cider"), "{}", stdout(&o));

    let o = ssr(&["report", "--out", out]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("baseline") || l.starts_with("ssr")).count(), 2);

    // Phases one at a time reuse the saved config.
    for phase in ["train-lm", "train-vse", "pretrain"] {
        let o = ssr(&[phase, "--out", out]);
        assert!(o.status.success(), "{phase}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = ssr(&["train-ssr", "--out", out, "--mode", "flc"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l.starts_with("flc")));

    let o = ssr(&["generate", "--out", out, "--image-id", "999999999"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn make_dataset_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    tiny_config(&cfg);
    let out = dir.path().join("run");
    let o = ssr(&["make-dataset", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("80 train, 20 val, 20 test"), "{}", stdout(&o));
    let saved = RunDir::new(&out).load_config().unwrap().unwrap();
    assert_eq!(saved.seed, 4);
}

#[test]
fn gradcheck_exits_zero() {
    let o = ssr(&["gradcheck", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("all passed"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("matmul ")));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = ssr(&["make-dataset", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    assert_eq!(ssr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ssr(&["make-dataset", "--preset", "huge"]).status.code(), Some(1));
    assert_eq!(ssr(&["make-dataset", "--disfluency", "1.5"]).status.code(), Some(1));
    assert_eq!(ssr(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = ssr(&["evaluate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
