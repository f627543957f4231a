use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn blockworld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockworld")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SCENE: &str = r#"{
  "blocks": [{"pose": {"position": [0, 0, 0.0325], "orientation": [0, 0, 0, 1]}, "size": [0.065, 0.065, 0.065]}],
  "goal": [{"pose": {"position": [0, 0, 0.0325], "orientation": [0, 0, 0, 1]}, "size": [0.065, 0.065, 0.065]}]
}"#;

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(code(&blockworld(&["no-such-command"])), 1);
    assert_eq!(code(&blockworld(&["demo", "--family", "juggling"])), 1);
    assert_eq!(code(&blockworld(&["evaluate", "--protocols", "P99", "--episodes", "1"])), 1);
    assert_eq!(code(&blockworld(&["serve"])), 1);
    assert_eq!(code(&blockworld(&["--help"])), 0);
}

#[test]
fn overlap_scores_a_scene_file() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    std::fs::write(&scene, SCENE).unwrap();
    let o = blockworld(&["overlap", scene.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 1.0);
    assert_eq!(code(&blockworld(&["overlap", scene.to_str().unwrap(), "--voxel", "0"])), 1);
}

#[test]
fn runtime_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&blockworld(&["overlap", missing.to_str().unwrap()])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"blocks\": 3}").unwrap();
    assert_eq!(code(&blockworld(&["overlap", bad.to_str().unwrap()])), 2);
}

#[test]
fn task_prints_a_sampled_configuration() {
    let o = blockworld(&["--seed", "3", "task", "--family", "towers", "--space", "b"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["family"], "towers");
    assert!(doc["config"]["tower_dims"].is_array());
}

fn record(dir: &Path) -> std::path::PathBuf {
    let log = dir.join("episode.jsonl");
    let o = blockworld(&["--seed", "5", "record", "--family", "pushing", "--curriculum", "2", "--out", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    log
}

#[test]
fn recorded_episode_replays_and_tampering_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let log = record(dir.path());
    let o = blockworld(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("pass"));

    // Change one reward in the middle of the log.
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut step: serde_json::Value = serde_json::from_str(&lines[100]).unwrap();
    step["reward"] = serde_json::json!(step["reward"].as_f64().unwrap() + 0.5);
    lines[100] = step.to_string();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n")).unwrap();
    let o = blockworld(&["replay", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 99"));

    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, text.replacen("\"reward\"", "\"rew", 1)).unwrap();
    assert_eq!(code(&blockworld(&["replay", garbled.to_str().unwrap()])), 2);
}

#[test]
fn evaluate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = blockworld(&[
        "evaluate", "--protocols", "p0,P4", "--episodes", "2", "--policy", "noop", "--json", json.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows[1].starts_with("pushing,P0,") && rows[2].starts_with("pushing,P4,"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn stdio_server_answers_line_by_line() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_blockworld"))
        .args(["serve", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(stdin, "{{\"type\":\"reset\",\"task\":\"picking\",\"seed\":1}}").unwrap();
    writeln!(stdin, "{{\"type\":\"close\"}}").unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["type"], "observation");
    assert_eq!(lines[0]["observation"].as_array().unwrap().len(), 55);
    assert_eq!(lines[1]["type"], "closed");
}
