use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_subflow");

/// Small enough for a debug-profile run in a few seconds.
const TINY: &str = "\
scene.n=50
embed_dim=8
ring.width=32
ring.height=32
ring.focal=64
distill.steps=30
distill.hidden=16
corpus.textures=24
corpus.size=16
eval.textures=12
eval.size=16
mapping.steps=30
mapping.batch=16
flow.train_steps=30
flow.batch=16
flow.hidden=16
generator.textures=4
generator.size=16
generator.steps=20
style.steps=4
";

fn run(out: &Path, args: &[&str]) -> Output {
    let cfg = out.join("tiny.cfg");
    if !cfg.exists() {
        std::fs::create_dir_all(out).unwrap();
        std::fs::write(&cfg, TINY).unwrap();
    }
    Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SUBFLOW_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let plain = Command::new(BIN).arg("dump-config").output().unwrap();
    assert!(plain.status.success());
    let path = dir.path().join("defaults.cfg");
    std::fs::write(&path, &plain.stdout).unwrap();
    let again = Command::new(BIN)
        .arg("--config")
        .arg(&path)
        .arg("dump-config")
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(again.stdout, plain.stdout);
    let text = String::from_utf8(plain.stdout).unwrap();
    assert!(
        text.contains("flow.rounds=3\n") && text.contains("loss.lambda_style=10\n"),
        "{text}"
    );
}

#[test]
fn validation_errors_exit_2_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "flow.rounds=3\nflow.round=4\n").unwrap();
    let o = Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("dump-config")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("flow.round"), "{}", stderr(&o));

    let o = Command::new(BIN)
        .args(["--set", "embed_dim=3", "dump-config"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("embed_dim"));

    let out = dir.path().join("run");
    let o = run(&out, &["stylize", "--image", "a.ppm", "--text", "stone"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&out, &["stylize"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&out, &["embed"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene.gscn"), "{}", stderr(&o));

    let o = Command::new(BIN)
        .args(["dump-config"])
        .env("SUBFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SUBFLOW_THREADS"));
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--set", "mapping.learning_rate=1e38", "train-flow"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["gen-scene"]);
    ok(
        out,
        &[
            "gen-texture",
            "--size",
            "32",
            "--path",
            out.join("style.ppm").to_str().unwrap(),
        ],
    );
    ok(out, &["embed"]);
    ok(out, &["train-flow", "--rounds", "2"]);
    ok(out, &["eval-align"]);
    ok(out, &["train-style", "--text", "rough red stone"]);
    ok(out, &["stylize", "--image", out.join("style.ppm").to_str().unwrap()]);
    ok(out, &["render"]);
    ok(out, &["eval-consistency"]);
    for f in [
        "scene.gscn",
        "distilled.gscn",
        "decoder.prms",
        "distill.csv",
        "clip.feat",
        "vgg.feat",
        "pipeline/manifest.txt",
        "rounds.csv",
        "align.csv",
        "generator.prms",
        "style_decoder.prms",
        "discriminator.prms",
        "train_style.csv",
        "stylized.gscn",
        "renders/view_00.ppm",
        "renders/view_07.ppm",
        "consistency.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let rounds = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    let train = std::fs::read_to_string(out.join("train_style.csv")).unwrap();
    assert!(train.starts_with("step,content,style,obs,flow,sup_disc,sup_gen,total\n"));
    assert_eq!(train.lines().count(), 5);
    let cons = std::fs::read_to_string(out.join("consistency.csv")).unwrap();
    assert!(
        cons.starts_with("metric,range_or_round,value\nmasked_rmse,short,"),
        "{cons}"
    );

    // Text and imported-feature styles produce different scenes from the same decoder.
    let image_scene = std::fs::read(out.join("stylized.gscn")).unwrap();
    ok(out, &["stylize", "--text", "blue water"]);
    let text_scene = std::fs::read(out.join("stylized.gscn")).unwrap();
    ok(out, &["stylize", "--feat", out.join("vgg.feat").to_str().unwrap()]);
    let feat_scene = std::fs::read(out.join("stylized.gscn")).unwrap();
    assert_ne!(image_scene, text_scene);
    assert_ne!(text_scene, feat_scene);
    ok(out, &["stylize", "--feat", out.join("clip.feat").to_str().unwrap()]);
}

#[test]
fn ablated_weights_skip_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["gen-scene"]);
    ok(out, &["embed"]);
    ok(out, &["train-flow", "--rounds", "1", "--steps", "10"]);
    ok(
        out,
        &[
            "--set",
            "loss.lambda_obs=0",
            "--set",
            "loss.suppression=0",
            "train-style",
            "--text",
            "stone",
        ],
    );
    assert!(out.join("style_decoder.prms").exists());
    assert!(!out.join("generator.prms").exists());
    assert!(!out.join("discriminator.prms").exists());
}
