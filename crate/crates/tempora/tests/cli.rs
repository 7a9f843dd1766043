use std::path::{Path, PathBuf};
use std::process::Command;

struct Sandbox {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

/// A copy of the sample project with `extra` appended to its config.
fn sandbox(extra: &str) -> Sandbox {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../sample");
    for name in ["documents.jsonl", "questions.jsonl", "attributes.csv"] {
        std::fs::copy(sample.join(name), dir.join(name)).unwrap();
    }
    std::fs::create_dir(dir.join("fixtures")).unwrap();
    for e in std::fs::read_dir(sample.join("fixtures")).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, dir.join("fixtures").join(p.file_name().unwrap())).unwrap();
    }
    let config = std::fs::read_to_string(sample.join("tempora.toml")).unwrap() + extra;
    std::fs::write(dir.join("tempora.toml"), config).unwrap();
    Sandbox { _tmp: tmp, dir }
}

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tempora"))
        .arg("--config")
        .arg(dir.join("tempora.toml"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("TEMPORA_OFFLINE")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn usage_errors_exit_1() {
    let sb = sandbox("");
    assert_eq!(run(&sb.dir, &["frobnicate"]).0, 1);
    assert_eq!(run(&sb.dir, &["--interval-months", "0", "score"]).0, 1);
    assert_eq!(run(&sb.dir, &["--template", "v9", "predict"]).0, 1);
    let (code, text) = run(&sb.dir.join("nowhere"), &["score"]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("not found"));
    assert_eq!(run(&sb.dir, &["--help"]).0, 0);
}

#[test]
fn http_model_offline_is_a_config_error() {
    let sb = sandbox(
        "\n[[models]]\nname = \"remote\"\nrelease_date = 2023-01-01\nbackend = \"logprob_http\"\nendpoint = \"https://llm.example.org/v1/completions\"\n",
    );
    let (code, text) = run(&sb.dir, &["--offline", "score"]);
    assert_eq!(code, 1, "{text}");
}

#[test]
fn missing_inputs_exit_2() {
    let sb = sandbox("");
    std::fs::remove_file(sb.dir.join("documents.jsonl")).unwrap();
    let (code, text) = run(&sb.dir, &["--offline", "score"]);
    assert_eq!(code, 2, "{text}");
    let (code, _) = run(&sb.dir, &["--offline", "report"]);
    assert_eq!(code, 2);
}

#[test]
fn malformed_documents_exit_2() {
    let sb = sandbox("");
    std::fs::write(sb.dir.join("documents.jsonl"), "{not json}\n").unwrap();
    let (code, text) = run(&sb.dir, &["--offline", "score"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("documents.jsonl"), "{text}");
}

#[test]
fn offline_collect_is_deterministic() {
    let sb = sandbox("");
    let (code, first) = run(&sb.dir, &["--offline", "collect"]);
    assert_eq!(code, 0, "{first}");
    let (code, second) = run(&sb.dir, &["--offline", "collect"]);
    assert_eq!(code, 0, "{second}");
    let snaps: Vec<_> = std::fs::read_dir(sb.dir.join("store/snapshots")).unwrap().flatten().collect();
    assert_eq!(snaps.len(), 1);
    let docs = std::fs::read_to_string(snaps[0].path().join("documents.jsonl")).unwrap();
    assert_eq!(docs.lines().count(), 3);
}

#[test]
fn unreachable_source_exits_3() {
    let sb = sandbox(
        "\n[[sources]]\nsource_id = \"down\"\nkind = \"rss\"\nendpoint = \"https://down.example.org/feed.xml\"\n",
    );
    let (code, text) = run(&sb.dir, &["--offline", "collect"]);
    assert_eq!(code, 3, "{text}");
    // Whatever was fetched is still kept.
    assert!(sb.dir.join("store/snapshots").exists());
}

#[test]
fn malformed_feed_exits_2() {
    let sb = sandbox(
        "\n[[sources]]\nsource_id = \"broken\"\nkind = \"rss\"\nendpoint = \"https://broken.example.org/feed.xml\"\n",
    );
    let (code, text) = run(&sb.dir, &["--offline", "collect"]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn stages_chain_and_rerun_cleanly() {
    let sb = sandbox("");
    for stage in ["score", "predict", "analyze", "report", "correlate"] {
        let (code, text) = run(&sb.dir, &["--offline", stage]);
        assert_eq!(code, 0, "{stage}: {text}");
    }
    let (code, text) = run(&sb.dir, &["--offline", "report"]);
    assert_eq!(code, 0);
    assert!(text.lines().all(|l| !l.starts_with("wrote")), "{text}");
    let runs: Vec<_> = std::fs::read_dir(sb.dir.join("store/runs")).unwrap().flatten().collect();
    assert_eq!(runs.len(), 1);
    let id = runs[0].file_name().into_string().unwrap();
    let (code, _) = run(&sb.dir, &["--offline", "--run-id", &id, "report"]);
    assert_eq!(code, 0);
    let (code, _) = run(&sb.dir, &["--offline", "--run-id", "0000000000000000", "score"]);
    assert_eq!(code, 1);
    for table in ["tbi", "bias", "accuracy", "decline", "correlation"] {
        assert!(runs[0].path().join(format!("reports/{table}.md")).exists(), "{table}");
        assert!(runs[0].path().join(format!("reports/{table}.csv")).exists(), "{table}");
    }
}
