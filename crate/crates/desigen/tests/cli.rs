//! End-to-end CLI exercises at miniature scale: every pinned subcommand,
//! config precedence and the exit-code contract.

use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_desigen")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn desigen");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// 32x32 config with miniature training budgets.
fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(
        &p,
        r#"
[corpus]
n = 16
canvas_h = 32
canvas_w = 32

[diffusion.unet]
res = 32
channels = [8, 12, 16]
attn = [false, true, true]
t_dim = 32
txt_dim = 16
heads = 2
text_layers = 1

[diffusion.train]
steps = 6
batch_size = 4
schedule_t = 60
warmup_steps = 2
quiet = true

[saliency.detector]
res = 32
base = 4

[saliency.train]
epochs = 1
batch_size = 8

[layout.model]
res = 32
d_model = 16
layers = 1
heads = 2
enc_base = 4

[layout.model.vocab]
bins = 32
max_elements = 8

[layout.train]
epochs = 1
batch_size = 8
quiet = true

[generation]
sample_steps = 6

[features]
res = 32
dim = 16
base = 4

[refine]
invert_steps = 6
"#,
    )
    .unwrap();
    p
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["corpus", "--help"],
        vec!["corpus", "build", "--help"],
        vec!["train", "--help"],
        vec!["train", "diffusion", "--help"],
        vec!["generate", "--help"],
        vec!["layout", "generate", "--help"],
        vec!["run", "refine", "--help"],
        vec!["eval", "background", "--help"],
        vec!["analyze", "attention", "--help"],
    ] {
        let (code, stdout, stderr) = run(&args);
        assert_eq!(code, 0, "{args:?}: {stderr}");
        assert!(stdout.contains("Usage") || stderr.contains("Usage"), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    // unknown subcommand
    let (code, _, stderr) = run(&["frobnicate"]);
    assert_eq!(code, 1, "{stderr}");
    // unknown flag is named
    let (code, _, stderr) = run(&["corpus", "stats", "--nonsense", "x"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("nonsense"), "{stderr}");
    // missing required flag
    let (code, _, _) = run(&["corpus", "build"]);
    assert_eq!(code, 1);
}

#[test]
fn runtime_failures_exit_two() {
    // nonexistent corpus directory is a runtime failure
    let (code, _, stderr) = run(&["corpus", "stats", "--dir", "/nonexistent-dir-xyz"]);
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[generation]\nnot_a_key = 1\n").unwrap();
    let out = dir.path().join("c");
    let (code, _, stderr) = run(&[
        "corpus",
        "build",
        "--n",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("not_a_key"), "{stderr}");
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let corpus = corpus_dir.to_str().unwrap();

    // corpus build + stats
    let (code, stdout, stderr) = run(&[
        "corpus", "build", "--n", "16", "--out", corpus, "--seed", "3", "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("built corpus"));
    assert!(corpus_dir.join("manifest.json").exists());
    let (code, stdout, _) = run(&["corpus", "stats", "--dir", corpus]);
    assert_eq!(code, 0);
    assert!(stdout.contains("records: 16"));

    // determinism: rebuilding with the same seed reproduces the checksum
    let corpus2 = dir.path().join("corpus2");
    run(&["corpus", "build", "--n", "16", "--out", corpus2.to_str().unwrap(), "--seed", "3", "--config", cfg]);
    let m1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(corpus_dir.join("manifest.json")).unwrap()).unwrap();
    let m2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(corpus2.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m1["corpus_checksum"], m2["corpus_checksum"]);

    // train all models at miniature scale
    let det = dir.path().join("det.ckpt");
    let (code, _, stderr) = run(&[
        "train", "saliency", "--corpus", corpus, "--out", det.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    let diff = dir.path().join("diff.ckpt");
    let (code, _, stderr) = run(&[
        "train", "diffusion", "--corpus", corpus, "--gamma", "0.5", "--out",
        diff.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    let lay = dir.path().join("lay.ckpt");
    let (code, _, stderr) = run(&[
        "train", "layout", "--corpus", corpus, "--out", lay.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");

    // background generation with and without a mask
    let png = dir.path().join("bg.png");
    let (code, _, stderr) = run(&[
        "generate", "--ckpt", diff.to_str().unwrap(), "--prompt", "red circle on the left",
        "--seed", "7", "--out", png.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(png.exists());
    // out-of-vocabulary prompt is a validation error (exit 1)
    let (code, _, _) = run(&[
        "generate", "--ckpt", diff.to_str().unwrap(), "--prompt", "purple unicorn",
        "--seed", "7", "--out", png.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 1);

    // layout generation on the generated background
    let lj = dir.path().join("layout.json");
    let (code, _, stderr) = run(&[
        "layout", "generate", "--ckpt", lay.to_str().unwrap(), "--image", png.to_str().unwrap(),
        "--spec", "text,button", "--seed", "5", "--out", lj.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&lj).unwrap()).unwrap();
    assert_eq!(parsed["elements"].as_array().unwrap().len(), 2);

    // full template run + refine + deck
    let run_dir = dir.path().join("run");
    let (code, _, stderr) = run(&[
        "run", "generate", "--diffusion-ckpt", diff.to_str().unwrap(), "--layout-ckpt",
        lay.to_str().unwrap(), "--prompt", "blue triangle on the top", "--spec", "text,button",
        "--seed", "2", "--out", run_dir.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(run_dir.join("template.png").exists());
    assert!(run_dir.join("template.layout.json").exists());
    assert!(run_dir.join("template.provenance.json").exists());
    assert!(run_dir.join("template.preview.png").exists());

    let refine_dir = dir.path().join("refine");
    let (code, _, stderr) = run(&[
        "run", "refine", "--k", "2", "--diffusion-ckpt", diff.to_str().unwrap(), "--layout-ckpt",
        lay.to_str().unwrap(), "--detector-ckpt", det.to_str().unwrap(), "--prompt",
        "green blob on the right", "--spec", "text", "--seed", "4", "--out",
        refine_dir.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(refine_dir.join("iter0.png").exists());
    assert!(refine_dir.join("iter2.png").exists());
    assert!(refine_dir.join("iterations.txt").exists());

    let presets = dir.path().join("presets.json");
    std::fs::write(
        &presets,
        r#"[
  {"name": "title", "mask_rects": [[0.0, 0.5, 1.0, 0.5]], "element_spec": ["text"]},
  {"name": "content", "mask_rects": [[0.5, 0.0, 0.5, 1.0]], "element_spec": ["text", "button"]}
]"#,
    )
    .unwrap();
    let deck_dir = dir.path().join("deck");
    let (code, _, stderr) = run(&[
        "run", "deck", "--diffusion-ckpt", diff.to_str().unwrap(), "--layout-ckpt",
        lay.to_str().unwrap(), "--presets", presets.to_str().unwrap(), "--prompt",
        "teal circle on the center", "--seed", "8", "--out", deck_dir.to_str().unwrap(),
        "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(deck_dir.join("slide-title.png").exists());
    assert!(deck_dir.join("slide-content.png").exists());

    // eval + analyze reports
    let rep1 = dir.path().join("rep-bg");
    let (code, _, stderr) = run(&[
        "eval", "background", "--ckpt", diff.to_str().unwrap(), "--detector-ckpt",
        det.to_str().unwrap(), "--corpus", corpus, "--n", "4", "--report", rep1.to_str().unwrap(),
        "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(rep1.join("report.json").exists());

    let rep2 = dir.path().join("rep-layout");
    let (code, _, stderr) = run(&[
        "eval", "layout", "--ckpt", lay.to_str().unwrap(), "--corpus", corpus, "--report",
        rep2.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(rep2.join("report.json").exists());

    let rep3 = dir.path().join("rep-attn");
    let (code, _, stderr) = run(&[
        "analyze", "attention", "--ckpt", diff.to_str().unwrap(), "--detector-ckpt",
        det.to_str().unwrap(), "--corpus", corpus, "--n", "3", "--invert-steps", "4", "--report",
        rep3.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(rep3.join("report.json").exists());
    assert!(rep3.join("cosine_hist.svg").exists());

    // reports are byte-deterministic on rerun
    let rep2b = dir.path().join("rep-layout-b");
    run(&[
        "eval", "layout", "--ckpt", lay.to_str().unwrap(), "--corpus", corpus, "--report",
        rep2b.to_str().unwrap(), "--config", cfg,
    ]);
    assert_eq!(
        std::fs::read(rep2.join("report.json")).unwrap(),
        std::fs::read(rep2b.join("report.json")).unwrap()
    );
}
