//! End-to-end checks of the command-line binary: exit codes, artifact
//! outputs, and run manifests.

use std::path::Path;
use std::process::{Command, Output};

fn toolrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_items(dir: &Path) -> std::path::PathBuf {
    let item = serde_json::json!([{
        "id": "cli-item",
        "question": "What city is shown?",
        "images": [{"width": 2, "height": 2, "pixels_hex": "000000000000000000000000"}],
        "ground_truth": "Paris",
        "candidates": [],
        "domain_tag": "test"
    }]);
    let path = dir.join("items.json");
    std::fs::write(&path, serde_json::to_vec(&item).unwrap()).unwrap();
    path
}

fn write_script(dir: &Path) -> std::path::PathBuf {
    let script = serde_json::json!({
        "turns": ["<think>done</think><answer>Paris</answer>"],
        "tokens_per_turn": 4
    });
    let path = dir.join("policy.json");
    std::fs::write(&path, serde_json::to_vec(&script).unwrap()).unwrap();
    path
}

#[test]
fn validate_config_accepts_defaults_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "[optimizer]\nbeta = 0.0\n").unwrap();
    let out = toolrl(&["validate-config", "--config", good.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[optimizer]\neps_low = 3.0\n").unwrap();
    let out = toolrl(&["validate-config", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rollout_then_histogram_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path());
    let policy = write_script(dir.path());
    let log = dir.path().join("trajectories.jsonl");

    let out = toolrl(&[
        "rollout",
        "--items",
        items.to_str().unwrap(),
        "--policy",
        &format!("script:{}", policy.display()),
        "--out",
        log.to_str().unwrap(),
        "--group-size",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(dir.path().join("trajectories.jsonl.manifest.json").exists());

    let out = toolrl(&["histogram", "--trajectories", log.to_str().unwrap()]);
    assert!(out.status.success());
    let counts: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(counts, serde_json::json!({}));
}

#[test]
fn eval_writes_report_and_respects_force() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path());
    let policy = write_script(dir.path());
    let report = dir.path().join("report.json");
    let args = [
        "eval",
        "--items",
        items.to_str().unwrap(),
        "--policy",
        &format!("script:{}", policy.display()),
        "--metric",
        "avg@2",
        "--out",
        report.to_str().unwrap(),
    ];
    let out = toolrl(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["value"], serde_json::json!(1.0));
    assert_eq!(parsed["metric"], serde_json::json!("avg@2"));

    // Existing outputs are protected unless --force is passed.
    let out = toolrl(&args);
    assert_eq!(out.status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    let out = toolrl(&forced);
    assert!(out.status.success());
}

#[test]
fn objective_computes_from_serialized_minibatch() {
    let dir = tempfile::tempdir().unwrap();
    let batch = serde_json::json!({
        "groups": [{
            "rewards": [1.5, 0.5],
            "sequences": [
                {"new_lp": [-1.0], "old_lp": [-1.0], "mask": [true]},
                {"new_lp": [-2.0], "old_lp": [-2.0], "mask": [true]}
            ]
        }]
    });
    let path = dir.path().join("batch.json");
    std::fs::write(&path, serde_json::to_vec(&batch).unwrap()).unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "[optimizer]\nbeta = 0.0\n").unwrap();

    let out = toolrl(&[
        "objective",
        "--config",
        config.to_str().unwrap(),
        "--batch",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["value"].as_f64().unwrap(), 0.0);
    assert_eq!(parsed["diagnostics"]["clip_fraction"].as_f64().unwrap(), 0.0);
}

#[test]
fn classify_and_filter_agree_on_an_unsolvable_item() {
    let dir = tempfile::tempdir().unwrap();
    let items = write_items(dir.path());
    let wrong = dir.path().join("wrong.json");
    std::fs::write(
        &wrong,
        serde_json::to_vec(&serde_json::json!({
            "turns": ["<think>hm</think><answer>London</answer>"],
            "tokens_per_turn": 4
        }))
        .unwrap(),
    )
    .unwrap();
    let policy = format!("script:{}", wrong.display());

    let out = toolrl(&["classify", "--items", items.to_str().unwrap(), "--policy", &policy]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["items"][0]["difficulty"], serde_json::json!("Hard"));

    let out = toolrl(&["filter", "--items", items.to_str().unwrap(), "--policy", &policy]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["retained"], serde_json::json!(["cli-item"]));
}

#[test]
fn cache_prefetch_seeds_offline_rollouts() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let text = dir.path().join("text.json");
    std::fs::write(
        &text,
        serde_json::to_vec(&serde_json::json!([{
            "query": "city landmark",
            "docs": [{"title": "Guide", "url": "https://example.org", "body": "Paris."}]
        }]))
        .unwrap(),
    )
    .unwrap();
    let out = toolrl(&[
        "cache-prefetch",
        "--cache-dir",
        cache.to_str().unwrap(),
        "--text",
        text.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);

    // A cached rollout that searches an unprefetched query is an
    // infrastructure failure, not a scored trajectory.
    let items = write_items(dir.path());
    let search = dir.path().join("search.json");
    std::fs::write(
        &search,
        serde_json::to_vec(&serde_json::json!({
            "turns": ["<think>look</think><tool_call>{\"name\":\"web_search\",\"arguments\":{\"query\":\"unprefetched\"}}</tool_call>"],
            "tokens_per_turn": 4
        }))
        .unwrap(),
    )
    .unwrap();
    let out = toolrl(&[
        "rollout",
        "--items",
        items.to_str().unwrap(),
        "--policy",
        &format!("script:{}", search.display()),
        "--out",
        dir.path().join("log.jsonl").to_str().unwrap(),
        "--cache-dir",
        cache.to_str().unwrap(),
        "--group-size",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
