use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[synth]
classes = 3
train_per_class = 3
val_per_class = 1
test_per_class = 2
train_streams = 6
test_streams = 2
frame_dim = 4
signs_per_stream_max = 2

[model]
feature_dim = 8
corr_dim = 4
attn_dim = 2

[train_base]
epochs = 2

[train_joint]
epochs = 2

[train_full]
epochs = 2

[memory]
fallback = true

[eval]
attention_clips = 2
"#;

fn signbridge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signbridge"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn eval_without_checkpoint_exits_2_and_names_it() {
    let dir = tiny_dir();
    assert_eq!(signbridge(dir.path(), &["gen", "-c", "tiny.toml"]).status.code(), Some(0));
    let out = signbridge(dir.path(), &["eval", "-c", "tiny.toml", "--model", "base"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("out/base/model.ckpt"), "{}", stderr(&out));

    let out = signbridge(dir.path(), &["eval", "-c", "tiny.toml", "--checkpoint", "nowhere.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.ckpt"));
}

#[test]
fn stage_without_dataset_exits_2() {
    let dir = tiny_dir();
    let out = signbridge(dir.path(), &["train-base", "-c", "tiny.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data/index.tsv"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tiny_dir();
    std::fs::write(dir.path().join("bad.toml"), "[extraction]\nepsilonn = 0.3\n").unwrap();
    assert_eq!(signbridge(dir.path(), &["gen", "-c", "bad.toml"]).status.code(), Some(1));
    assert_eq!(signbridge(dir.path(), &["gen", "-c", "missing.toml"]).status.code(), Some(1));
    assert_eq!(signbridge(dir.path(), &["gen", "--set", "synth.classes=1"]).status.code(), Some(1));
    assert_eq!(signbridge(dir.path(), &["gen", "--bogus-flag"]).status.code(), Some(1));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tiny_dir();
    assert_eq!(signbridge(dir.path(), &["gen", "-c", "tiny.toml"]).status.code(), Some(0));
    let out = signbridge(dir.path(), &["train-base", "-c", "tiny.toml", "--learning-rate", "1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite loss"));
}

#[test]
fn help_lists_defaults() {
    let dir = tiny_dir();
    let help = |sub: &str| {
        let out = signbridge(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        String::from_utf8(out.stdout).unwrap()
    };
    let extract = help("extract");
    for s in ["--epsilon <EPSILON>", "[default: 0.3]", "[default: 9]", "[default: 16]"] {
        assert!(extract.contains(s), "extract help lacks {s}:\n{extract}");
    }
    for sub in ["train-base", "align", "train-full"] {
        let text = help(sub);
        for s in ["[default: 64]", "[default: 1e-3]", "[default: 1e-7]", "[default: 40]"] {
            assert!(text.contains(s), "{sub} help lacks {s}:\n{text}");
        }
    }
    let localize = help("localize");
    for s in ["[default: 0.2]", "[default: 9]", "[default: 16]"] {
        assert!(localize.contains(s), "localize help lacks {s}");
    }
    assert!(help("build-memory").contains("[default: news-aligned]"));
    for sub in ["gen", "eval", "dump-attention", "dump-embeddings", "pipeline"] {
        let text = help(sub);
        assert!(text.contains("--config") && text.contains("--set"), "{sub}");
    }
}

#[test]
fn stages_run_one_by_one_and_rerun_identically() {
    let dir = tiny_dir();
    let steps: [&[&str]; 11] = [
        &["gen"],
        &["train-base"],
        &["extract"],
        &["train-base", "--news-windows"],
        &["align"],
        &["build-memory"],
        &["train-full"],
        &["eval", "--model", "full"],
        &["localize", "--model", "base"],
        &["dump-attention"],
        &["dump-embeddings"],
    ];
    let run_all = || {
        for step in steps {
            let mut args = step.to_vec();
            args.extend(["-c", "tiny.toml"]);
            let out = signbridge(dir.path(), &args);
            assert_eq!(out.status.code(), Some(0), "{step:?}: {}", stderr(&out));
        }
    };
    run_all();
    let out = dir.path().join("out");
    for f in [
        "base/model.ckpt",
        "news_added/model.ckpt",
        "aligned/model.ckpt",
        "candidates/candidates.tsv",
        "memory/memory.txt",
        "full/model.ckpt",
        "full/train.tsv",
        "eval/full.tsv",
        "localize/base.tsv",
        "embeddings/base.tsv",
        "embeddings/aligned.tsv",
        "manifests/train-full.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(std::fs::read_dir(out.join("attention")).unwrap().count(), 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifests/train-full.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "train-full");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("memory/memory.txt")));

    let before = std::fs::read(out.join("manifests/eval-full.json")).unwrap();
    let ckpt = std::fs::read(out.join("full/model.ckpt")).unwrap();
    run_all();
    assert_eq!(before, std::fs::read(out.join("manifests/eval-full.json")).unwrap());
    assert_eq!(ckpt, std::fs::read(out.join("full/model.ckpt")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tiny_dir();
    assert_eq!(signbridge(dir.path(), &["gen", "-c", "tiny.toml"]).status.code(), Some(0));
    let out = signbridge(dir.path(), &["train-base", "-c", "tiny.toml", "--epochs", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("out/base/train.tsv")).unwrap();
    assert!(report.contains("epochs=3"));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let out = signbridge(
        dir.path(),
        &["train-base", "-c", "tiny.toml", "--epochs", "3", "--set", "train_base.epochs=1"],
    );
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("out/base/train.tsv")).unwrap();
    assert!(report.contains("epochs=1"));
}
