use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sitewalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sitewalk")).args(args).output().expect("spawn sitewalk")
}

fn utf8(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn demo_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = sitewalk(&["demo", "--out", d, "--tasks", "4"]);
    assert!(out.status.success(), "{}", utf8(&out.stderr));

    let sandbox = format!("python3 {d}/sandbox_stub.py");
    let run_dir = format!("{d}/out");
    let out = sitewalk(&[
        "run", "--tasks", &format!("{d}/tasks.json"), "--fixture", &format!("{d}/fixture.json"),
        "--llm", &format!("{d}/llm.json"), "--out", &run_dir, "--jobs", "2", "--sandbox", &sandbox,
    ]);
    let stdout = utf8(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", utf8(&out.stderr));
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(stdout.contains("overall"));
    for file in ["trajectory.jsonl", "stages.json", "metrics.json"] {
        assert!(Path::new(&run_dir).join("forum-post").join(file).exists(), "{file}");
    }

    let out = sitewalk(&["report", "--in", &run_dir]);
    assert!(out.status.success());
    let table = utf8(&out.stdout);
    assert!(table.lines().any(|l| l.starts_with("overall") && l.contains("100.0")), "{table}");
}

#[test]
fn task_failures_are_data_not_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(sitewalk(&["demo", "--out", d, "--tasks", "2"]).status.success());
    // An empty script makes every task miss in strict mode.
    fs::write(dir.path().join("script.json"), "[]").unwrap();
    let out = sitewalk(&[
        "run", "--tasks", &format!("{d}/tasks.json"), "--fixture", &format!("{d}/fixture.json"),
        "--llm", &format!("{d}/llm.json"), "--out", &format!("{d}/out"),
        "--sandbox", &format!("python3 {d}/sandbox_stub.py"),
    ]);
    assert!(out.status.success(), "{}", utf8(&out.stderr));
    assert!(utf8(&out.stdout).contains("FAIL"));
}

#[test]
fn harness_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = sitewalk(&["run", "--tasks", "/nonexistent/tasks.json", "--fixture", "x", "--llm", "y", "--out", d]);
    assert!(!out.status.success());
    assert!(!sitewalk(&["report", "--in", d]).status.success());
    assert!(sitewalk(&["demo", "--out", d]).status.success());
    let out = sitewalk(&[
        "run", "--tasks", &format!("{d}/tasks.json"), "--fixture", &format!("{d}/fixture.json"),
        "--llm", &format!("{d}/llm.json"), "--out", &format!("{d}/out"), "--max-steps", "0",
    ]);
    assert!(!out.status.success(), "max-steps 0 must be rejected");
}
